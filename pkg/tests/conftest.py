import json

import numpy as np
import pytest

from bathy import LakeProfile, SyntheticLakeSpec, generate_synthetic_lake, make_grid
from filters import FilterSettings
from models import NoiseConfig

PLANE_BASE = 20.0
PLANE_GX = 0.02
PLANE_GY = 0.01


def plane_heights(nrows: int, ncols: int, cell: float = 1.0) -> np.ndarray:
    xs = (np.arange(ncols) + 0.5) * cell
    ys = (np.arange(nrows) + 0.5) * cell
    X, Y = np.meshgrid(xs, ys)
    return PLANE_BASE + PLANE_GX * X + PLANE_GY * Y


@pytest.fixture
def flat_grid():
    """60 m × 60 m, 到处 10 m"""
    return make_grid(np.full((60, 60), 10.0))


@pytest.fixture
def plane_grid():
    """仿射平面 L = 20 + 0.02x + 0.01y，双线性插值精确复现"""
    return make_grid(plane_heights(200, 200))


@pytest.fixture
def bowl_grid():
    spec = SyntheticLakeSpec(ncols=80, nrows=80, cell_size=2.0, profile=LakeProfile.BOWL,
                             max_height=20.0, asymmetry=0.3, noise_amplitude=0.5, seed=3)
    return generate_synthetic_lake(spec)


@pytest.fixture
def default_noise():
    return NoiseConfig.from_velocity(1.0, -3.0, -0.1524)


@pytest.fixture
def small_settings():
    return FilterSettings(n_pf=300, n_mpf=60)


@pytest.fixture
def small_config_dict():
    """小规模基准配置，tilted-plane 湖泊，线性运动"""
    return {
        "lake": {
            "name": "tilted",
            "synthetic": {"ncols": 60, "nrows": 60, "profile": "tilted-plane", "max_height": 10.0,
                          "asymmetry": 0.3, "seed": 5},
        },
        "motion": {"kind": "linear", "linear": {"vx": 0.5, "vy": 0.3, "vz": 0.0}},
        "init_pose": {"px": 20.0, "py": 20.0, "pz": 2.0},
        "dt": 1.0,
        "steps": 20,
        "runs": 2,
        "filters": ["EKF", "PF"],
        "particles": {"n_pf": 200, "n_mpf": 50},
        "master_seed": 42,
        "record_runtime": False,
    }


@pytest.fixture
def config_file(tmp_path, small_config_dict):
    path = tmp_path / "bench.json"
    path.write_text(json.dumps(small_config_dict), encoding="utf-8")
    return path


@pytest.fixture
def twin_basin_grid():
    spec = SyntheticLakeSpec(ncols=90, nrows=70, cell_size=2.0, profile=LakeProfile.TWIN_BASIN,
                             max_height=25.0, asymmetry=0.2, noise_amplitude=0.3, seed=8)
    return generate_synthetic_lake(spec)


def interior_states(grid, n, seed, margin=3.0):
    """可插值区域内的随机状态，避开格网线（双线性面片在格网线上导数不连续）"""
    rng = np.random.default_rng(seed)
    xmin, xmax, ymin, ymax = grid.interpolable_bounds()
    out = []
    while len(out) < n:
        x = rng.uniform(xmin + margin, xmax - margin)
        y = rng.uniform(ymin + margin, ymax - margin)
        fx = (x - grid.origin_x) / grid.cell_size - 0.5
        fy = (y - grid.origin_y) / grid.cell_size - 0.5
        if min(fx % 1.0, 1.0 - fx % 1.0, fy % 1.0, 1.0 - fy % 1.0) < 1e-3:
            continue
        out.append((x, y, rng.uniform(0.0, 5.0)))
    return out
