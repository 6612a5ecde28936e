"""定位滤波器：EKF、UKF、PF、MPF"""
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from bathy import BathymetryGrid
from filters.gaussian import EkfLocalizer, UkfLocalizer, UkfParams
from filters.mpf import MpfLocalizer
from filters.particle import ParticleFilterConfig, PfLocalizer
from models import NoiseConfig, State
from utils.seeding import FILTER_ORDER


@dataclass(frozen=True)
class FilterSettings:
    """各滤波器的可调参数"""
    n_pf: int = 5000
    n_mpf: int = 300
    inject_fraction: float = 0.05
    ess_threshold: Optional[float] = None
    pf_estimate_after_resample: bool = True
    mpf_estimate_after_resample: bool = False
    ukf: UkfParams = field(default_factory=UkfParams)
    flip_depth_jacobian: bool = False

    def pf_config(self) -> ParticleFilterConfig:
        return ParticleFilterConfig(self.n_pf, self.inject_fraction, self.ess_threshold,
                                    self.pf_estimate_after_resample)

    def mpf_config(self) -> ParticleFilterConfig:
        return ParticleFilterConfig(self.n_mpf, self.inject_fraction, self.ess_threshold,
                                    self.mpf_estimate_after_resample)


def make_localizer(name: str, grid: BathymetryGrid, motion, noise: NoiseConfig, dt: float,
                   init: State, settings: FilterSettings, rng: np.random.Generator):
    """按名称构造滤波器；Gaussian 滤波器不使用 rng"""
    if name == "EKF":
        return EkfLocalizer(grid, motion, noise, dt, init, flip_depth_sign=settings.flip_depth_jacobian)
    if name == "UKF":
        return UkfLocalizer(grid, motion, noise, dt, init, params=settings.ukf)
    if name == "PF":
        return PfLocalizer(grid, motion, noise, dt, init, settings.pf_config(), rng)
    if name == "MPF":
        return MpfLocalizer(grid, motion, noise, dt, init, settings.mpf_config(), rng)
    raise ValueError(f"unknown filter {name!r}, expected one of {', '.join(FILTER_ORDER)}")
