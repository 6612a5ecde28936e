import logging

import numpy as np
import scipy.linalg

from exceptions import NumericError

log = logging.getLogger(__name__)

JITTER_SCALE = 1e-9


def symmetrize(P: np.ndarray) -> np.ndarray:
    """强制协方差对称"""
    return 0.5 * (P + P.T)


def cholesky_with_jitter(P: np.ndarray) -> np.ndarray:
    """下三角 Cholesky 分解；失败时加 1e-9·trace(P)·I 重试一次"""
    P = np.asarray(P, dtype=float)
    if not np.any(P):
        return np.zeros_like(P)
    try:
        return scipy.linalg.cholesky(P, lower=True)
    except np.linalg.LinAlgError:
        jitter = JITTER_SCALE * max(float(np.trace(P)), 0.0)
        log.warning("Cholesky failed, retrying with jitter %.3g", jitter)
        try:
            return scipy.linalg.cholesky(P + jitter * np.eye(P.shape[0]), lower=True)
        except np.linalg.LinAlgError as exc:
            raise NumericError(f"covariance is not positive semidefinite: {exc}") from exc


def psd_sqrt(P: np.ndarray) -> np.ndarray:
    """S 满足 S·Sᵀ = P，用于高斯采样；半正定矩阵走特征分解"""
    P = symmetrize(np.asarray(P, dtype=float))
    if not np.any(P):
        return np.zeros_like(P)
    try:
        return scipy.linalg.cholesky(P, lower=True)
    except np.linalg.LinAlgError:
        vals, vecs = scipy.linalg.eigh(P)
        if vals.min() < -1e-9 * max(abs(float(np.trace(P))), 1.0):
            raise NumericError("covariance has a negative eigenvalue")
        return vecs * np.sqrt(np.clip(vals, 0.0, None))


def min_eigenvalue(P: np.ndarray) -> float:
    return float(scipy.linalg.eigvalsh(symmetrize(P)).min())


def is_psd(P: np.ndarray, rel_tol: float = 1e-9) -> bool:
    P = np.asarray(P, dtype=float)
    return min_eigenvalue(P) >= -rel_tol * max(abs(float(np.trace(P))), np.finfo(float).tiny)


def solve_spd(S: np.ndarray, B: np.ndarray) -> np.ndarray:
    """求解 S·X = B，S 为新息协方差"""
    try:
        if np.linalg.cond(S) > 1e14:
            raise NumericError("innovation covariance is singular")
        return scipy.linalg.solve(S, B, assume_a="sym")
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise NumericError(f"innovation covariance is not invertible: {exc}") from exc
