"""可复现的随机数种子派生

每个重复实验的种子只由 master_seed 和重复序号决定，与并行 worker 数、
运行的滤波器子集无关。
"""
import numpy as np

# 规范顺序，决定各滤波器的随机流编号
FILTER_ORDER = ("EKF", "UKF", "PF", "MPF")

TRUTH_STREAM = 0


def replicate_seed(master_seed: int, replicate: int) -> int:
    """由主种子派生第 replicate 次实验的种子"""
    ss = np.random.SeedSequence(int(master_seed), spawn_key=(int(replicate),))
    return int(ss.generate_state(1, dtype=np.uint32)[0])


def truth_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), TRUTH_STREAM])


def filter_rng(seed: int, filter_name: str) -> np.random.Generator:
    return np.random.default_rng([int(seed), 1 + FILTER_ORDER.index(filter_name)])
