"""湖泊水深栅格

BathymetryGrid 保存每个格网的水柱高度 L（水面到湖底的距离，单位米）。
存储为自下而上：heights[row, col] 中 row 0 是最南一行，世界坐标 y 随 row 增大。
格网值位于格网中心，格网之间双线性插值。
"""
import enum
import io
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, TextIO, Tuple, Union

import numpy as np
import scipy.ndimage
from pydantic import BaseModel, ConfigDict, Field, field_validator

from exceptions import (
    DimensionMismatchError,
    GridParseError,
    GridValueError,
    NoDataError,
    OutOfBoundsError,
)

log = logging.getLogger(__name__)

FEET_TO_METERS = 0.3048
DEFAULT_NODATA = -9999.0

# 坐标落在边界上时的容差（格网索引单位）
_EDGE_TOL = 1e-9

_HEADER_KEYS = {"ncols", "nrows", "xllcorner", "yllcorner", "xllcenter", "yllcenter",
                "cellsize", "nodata_value", "units"}


@dataclass(frozen=True, eq=False)
class BathymetryGrid:
    ncols: int
    nrows: int
    cell_size: float
    origin_x: float
    origin_y: float
    heights: np.ndarray
    nodata_sentinel: float = DEFAULT_NODATA
    valid: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.ncols < 1 or self.nrows < 1:
            raise GridValueError("ncols and nrows must be positive")
        if not self.cell_size > 0:
            raise GridValueError("cell_size must be > 0")
        h = np.array(self.heights, dtype=float)
        if h.size != self.nrows * self.ncols:
            raise DimensionMismatchError(
                f"expected {self.nrows}x{self.ncols}={self.nrows * self.ncols} heights, got {h.size}"
            )
        h = h.reshape(self.nrows, self.ncols)
        valid = np.isfinite(h) & (h != self.nodata_sentinel)
        if np.any(h[valid] < 0):
            raise GridValueError(f"negative height {h[valid].min():.6g} m")
        h.setflags(write=False)
        valid.setflags(write=False)
        object.__setattr__(self, "heights", h)
        object.__setattr__(self, "valid", valid)
        object.__setattr__(self, "_filled", np.where(valid, h, 0.0))

    def interpolable_bounds(self) -> Tuple[float, float, float, float]:
        """格网中心的凸包 (xmin, xmax, ymin, ymax)"""
        half = 0.5 * self.cell_size
        return (
            self.origin_x + half,
            self.origin_x + (self.ncols - 0.5) * self.cell_size,
            self.origin_y + half,
            self.origin_y + (self.nrows - 0.5) * self.cell_size,
        )

    def cell_center(self, row: int, col: int) -> Tuple[float, float]:
        return (
            self.origin_x + (col + 0.5) * self.cell_size,
            self.origin_y + (row + 0.5) * self.cell_size,
        )

    def summary(self) -> dict:
        """栅格概要：高度范围与坐标范围"""
        values = self.heights[self.valid]
        xmin, xmax, ymin, ymax = self.interpolable_bounds()
        return {
            "ncols": self.ncols,
            "nrows": self.nrows,
            "cell_size": self.cell_size,
            "min_height": float(values.min()) if values.size else None,
            "max_height": float(values.max()) if values.size else None,
            "world_bounds": [self.origin_x, self.origin_x + self.ncols * self.cell_size,
                             self.origin_y, self.origin_y + self.nrows * self.cell_size],
            "interpolable_bounds": [xmin, xmax, ymin, ymax],
            "valid_fraction": float(self.valid.mean()),
        }


# ---------------------------------------------------------------------------
# 插值

def _locate(grid: BathymetryGrid, xs: np.ndarray, ys: np.ndarray):
    fx = (xs - grid.origin_x) / grid.cell_size - 0.5
    fy = (ys - grid.origin_y) / grid.cell_size - 0.5
    with np.errstate(invalid="ignore"):
        in_box = (
            (fx >= -_EDGE_TOL) & (fx <= grid.ncols - 1 + _EDGE_TOL)
            & (fy >= -_EDGE_TOL) & (fy <= grid.nrows - 1 + _EDGE_TOL)
        )
    fx = np.where(in_box, fx, 0.0)
    fy = np.where(in_box, fy, 0.0)
    i0 = np.clip(np.floor(fx), 0, max(grid.ncols - 2, 0)).astype(np.intp)
    j0 = np.clip(np.floor(fy), 0, max(grid.nrows - 2, 0)).astype(np.intp)
    i1 = np.minimum(i0 + 1, grid.ncols - 1)
    j1 = np.minimum(j0 + 1, grid.nrows - 1)
    tx = np.clip(fx - i0, 0.0, 1.0)
    ty = np.clip(fy - j0, 0.0, 1.0)
    v = grid.valid
    corners_ok = v[j0, i0] & v[j0, i1] & v[j1, i0] & v[j1, i1]
    return in_box, corners_ok, i0, i1, j0, j1, tx, ty


def heights_at(grid: BathymetryGrid, xs, ys) -> Tuple[np.ndarray, np.ndarray]:
    """向量化双线性插值，返回 (heights, inside)；越界或触及 nodata 处为 NaN"""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    in_box, corners_ok, i0, i1, j0, j1, tx, ty = _locate(grid, xs, ys)
    h = grid._filled
    values = (
        (1.0 - tx) * (1.0 - ty) * h[j0, i0]
        + tx * (1.0 - ty) * h[j0, i1]
        + (1.0 - tx) * ty * h[j1, i0]
        + tx * ty * h[j1, i1]
    )
    inside = in_box & corners_ok
    return np.where(inside, values, np.nan), inside


def in_bounds_many(grid: BathymetryGrid, xs, ys) -> np.ndarray:
    in_box, corners_ok, *_ = _locate(grid, np.asarray(xs, dtype=float), np.asarray(ys, dtype=float))
    return in_box & corners_ok


def in_bounds(grid: BathymetryGrid, x: float, y: float) -> bool:
    return bool(in_bounds_many(grid, np.array([x]), np.array([y]))[0])


def height_at(grid: BathymetryGrid, x: float, y: float) -> float:
    """位置 (x, y) 处的水柱高度 L"""
    in_box, corners_ok, *_ = _locate(grid, np.array([x], dtype=float), np.array([y], dtype=float))
    if not in_box[0]:
        raise OutOfBoundsError(x, y)
    if not corners_ok[0]:
        raise NoDataError(x, y)
    values, _ = heights_at(grid, np.array([x]), np.array([y]))
    return float(values[0])


def _central_gradient(grid: BathymetryGrid, x: float, y: float) -> Tuple[float, float]:
    h0 = height_at(grid, x, y)
    step = grid.cell_size

    def partial(dx: float, dy: float) -> float:
        fwd = in_bounds(grid, x + dx, y + dy)
        back = in_bounds(grid, x - dx, y - dy)
        if fwd and back:
            return (height_at(grid, x + dx, y + dy) - height_at(grid, x - dx, y - dy)) / (2.0 * step)
        if fwd:
            return (height_at(grid, x + dx, y + dy) - h0) / step
        if back:
            return (h0 - height_at(grid, x - dx, y - dy)) / step
        return 0.0

    return partial(step, 0.0), partial(0.0, step)


def gradient_at(grid: BathymetryGrid, x: float, y: float, method: str = "bilinear") -> Tuple[float, float]:
    """(∂L/∂x, ∂L/∂y)

    method="bilinear"：所在双线性面片的解析导数，与 height_at 的有限差分一致（格网线上取右/上侧面片）。
    method="central"：步长为 cell_size 的中心差分，边界一格内退化为单侧差分。
    """
    if method == "central":
        return _central_gradient(grid, x, y)
    if method != "bilinear":
        raise ValueError(f"unknown gradient method {method!r}")
    in_box, corners_ok, i0, i1, j0, j1, tx, ty = _locate(grid, np.array([x], dtype=float), np.array([y], dtype=float))
    if not in_box[0]:
        raise OutOfBoundsError(x, y)
    if not corners_ok[0]:
        raise NoDataError(x, y)
    h = grid._filled
    i0, i1, j0, j1, tx, ty = i0[0], i1[0], j0[0], j1[0], tx[0], ty[0]
    h00, h01, h10, h11 = h[j0, i0], h[j0, i1], h[j1, i0], h[j1, i1]
    gx = ((1.0 - ty) * (h01 - h00) + ty * (h11 - h10)) / grid.cell_size if i1 != i0 else 0.0
    gy = ((1.0 - tx) * (h10 - h00) + tx * (h11 - h01)) / grid.cell_size if j1 != j0 else 0.0
    return float(gx), float(gy)


# ---------------------------------------------------------------------------
# ESRI ASCII grid

def _parse_number(key: str, value: str, kind=float):
    try:
        result = kind(value)
    except ValueError as exc:
        raise GridParseError(key, f"cannot parse {value!r}") from exc
    if kind is float and not math.isfinite(result):
        raise GridParseError(key, f"non-finite value {value!r}")
    return result


def _looks_numeric(token: str) -> bool:
    try:
        float(token)
    except ValueError:
        return False
    return True


def load_esri_ascii(text: Union[str, TextIO]) -> BathymetryGrid:
    """解析 ESRI ASCII grid；文件自上而下，存储自下而上"""
    if not isinstance(text, str):
        text = text.read()
    lines = text.splitlines()
    header = {}
    data_start = len(lines)
    for idx, line in enumerate(lines):
        tokens = line.split()
        if not tokens:
            continue
        if _looks_numeric(tokens[0]):
            data_start = idx
            break
        key = tokens[0].lower()
        if key not in _HEADER_KEYS:
            raise GridParseError(key, "unknown header key")
        if len(tokens) != 2:
            raise GridParseError(key, "expected '<key> <value>'")
        header[key] = tokens[1]

    for key in ("ncols", "nrows", "cellsize"):
        if key not in header:
            raise GridParseError(key, "missing")
    ncols = _parse_number("ncols", header["ncols"], int)
    nrows = _parse_number("nrows", header["nrows"], int)
    if ncols < 1:
        raise GridParseError("ncols", "must be positive")
    if nrows < 1:
        raise GridParseError("nrows", "must be positive")
    cell_size = _parse_number("cellsize", header["cellsize"])
    if cell_size <= 0:
        raise GridParseError("cellsize", "must be > 0")

    origin = []
    for axis in ("x", "y"):
        corner, center = f"{axis}llcorner", f"{axis}llcenter"
        if corner in header:
            origin.append(_parse_number(corner, header[corner]))
        elif center in header:
            origin.append(_parse_number(center, header[center]) - 0.5 * cell_size)
        else:
            raise GridParseError(corner, "missing")

    nodata = _parse_number("nodata_value", header["nodata_value"]) if "nodata_value" in header else DEFAULT_NODATA
    units = header.get("units", "meters").lower()
    if units not in ("feet", "meters"):
        raise GridParseError("units", f"expected feet or meters, got {units!r}")

    rows = [line.split() for line in lines[data_start:] if line.strip()]
    if len(rows) != nrows:
        raise DimensionMismatchError(f"header says nrows={nrows}, found {len(rows)} data rows")
    for i, row in enumerate(rows):
        if len(row) != ncols:
            raise DimensionMismatchError(f"data row {i} has {len(row)} values, header says ncols={ncols}")
    try:
        values = np.array(rows, dtype=float)
    except ValueError as exc:
        raise GridValueError(f"non-numeric height value: {exc}") from exc

    if units == "feet":
        values = np.where(values == nodata, nodata, values * FEET_TO_METERS)

    return BathymetryGrid(
        ncols=ncols,
        nrows=nrows,
        cell_size=cell_size,
        origin_x=origin[0],
        origin_y=origin[1],
        heights=np.flipud(values),
        nodata_sentinel=nodata,
    )


def save_esri_ascii(grid: BathymetryGrid, stream: TextIO) -> None:
    """写出 ESRI ASCII grid，高度保留 6 位有效数字"""
    stream.write(f"ncols {grid.ncols}\n")
    stream.write(f"nrows {grid.nrows}\n")
    stream.write(f"xllcorner {float(grid.origin_x)!r}\n")
    stream.write(f"yllcorner {float(grid.origin_y)!r}\n")
    stream.write(f"cellsize {float(grid.cell_size)!r}\n")
    sentinel = f"{float(grid.nodata_sentinel):.6g}"
    stream.write(f"NODATA_value {sentinel}\n")
    for row in range(grid.nrows - 1, -1, -1):
        cells = [
            f"{value:.6g}" if ok else sentinel
            for value, ok in zip(grid.heights[row], grid.valid[row])
        ]
        stream.write(" ".join(cells) + "\n")


def dump_esri_ascii(grid: BathymetryGrid) -> str:
    buf = io.StringIO()
    save_esri_ascii(grid, buf)
    return buf.getvalue()


def read_grid(path: Union[str, Path]) -> BathymetryGrid:
    with open(path, "r", encoding="utf-8") as fh:
        grid = load_esri_ascii(fh)
    log.info("已加载水深栅格 %s (%dx%d, cell %.3g m)", path, grid.ncols, grid.nrows, grid.cell_size)
    return grid


def write_grid(grid: BathymetryGrid, path: Union[str, Path]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        save_esri_ascii(grid, fh)


# ---------------------------------------------------------------------------
# 合成湖泊

class LakeProfile(str, enum.Enum):
    BOWL = "bowl"
    TILTED_PLANE = "tilted-plane"
    RIDGE = "ridge"
    TWIN_BASIN = "twin-basin"


class SyntheticLakeSpec(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True, use_enum_values=False)

    ncols: int = Field(gt=0)
    nrows: int = Field(gt=0)
    cell_size: float = Field(1.0, gt=0)
    profile: LakeProfile = LakeProfile.BOWL
    max_height: float
    asymmetry: float = Field(0.0, ge=0.0, le=1.0)
    noise_amplitude: float = 0.0
    seed: int = Field(0, ge=0)
    origin_x: float = 0.0
    origin_y: float = 0.0

    @field_validator("max_height")
    @classmethod
    def validate_max_height(cls, v):
        if not v > 0:
            raise ValueError("max_height must be > 0")
        return v

    @field_validator("noise_amplitude")
    @classmethod
    def validate_noise(cls, v):
        if v < 0:
            raise ValueError("noise_amplitude must be >= 0")
        return v


def _skewed_radius2(u: np.ndarray, v: np.ndarray, cx: float, cy: float) -> np.ndarray:
    # 中心两侧分别归一化，边缘处 r = 1
    du = np.where(u < cx, (u - cx) / cx, (u - cx) / (1.0 - cx))
    dv = np.where(v < cy, (v - cy) / cy, (v - cy) / (1.0 - cy))
    return du ** 2 + dv ** 2


def _profile(spec: SyntheticLakeSpec, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    a = spec.asymmetry
    if spec.profile == LakeProfile.TILTED_PLANE:
        return spec.max_height * (0.1 + 0.9 * ((1.0 - a) * u + a * v))

    if spec.profile == LakeProfile.BOWL:
        r2 = _skewed_radius2(u, v, 0.5 + 0.25 * a, 0.5 - 0.15 * a)
        return spec.max_height * np.clip(1.0 - r2, 0.0, None)

    if spec.profile == LakeProfile.RIDGE:
        envelope = np.clip(1.0 - _skewed_radius2(u, v, 0.5 + 0.2 * a, 0.5), 0.0, None)
        ridges = 0.65 + 0.35 * np.cos(2.0 * np.pi * 2.5 * (u + 0.3 * a * v))
        raw = envelope * ridges
    else:
        envelope = np.clip(1.0 - _skewed_radius2(u, v, 0.5, 0.5) ** 2, 0.0, None)
        g1 = np.exp(-((u - 0.3) ** 2 + (v - 0.35) ** 2) / (2 * 0.15 ** 2))
        g2 = (0.9 - 0.4 * a) * np.exp(-((u - 0.7) ** 2 + (v - 0.65) ** 2) / (2 * 0.12 ** 2))
        raw = envelope * (g1 + g2 + 0.15 + 0.1 * (u + v))

    peak = raw.max()
    return spec.max_height * raw / peak if peak > 0 else raw


def generate_synthetic_lake(spec: SyntheticLakeSpec) -> BathymetryGrid:
    """按剖面生成合成湖泊；相同 spec 与 seed 产生完全一致的栅格"""
    cols = (np.arange(spec.ncols) + 0.5) / spec.ncols
    rows = (np.arange(spec.nrows) + 0.5) / spec.nrows
    u, v = np.meshgrid(cols, rows)
    heights = _profile(spec, u, v)

    if spec.noise_amplitude > 0:
        rng = np.random.default_rng(spec.seed)
        white = rng.standard_normal((spec.nrows, spec.ncols))
        sigma = max(1.0, min(spec.nrows, spec.ncols) / 20.0)
        smooth = scipy.ndimage.gaussian_filter(white, sigma=sigma, mode="reflect")
        scale = np.abs(smooth).max()
        if scale > 0:
            heights = heights + spec.noise_amplitude * smooth / scale
    heights = np.clip(heights, 0.0, None)

    if spec.profile != LakeProfile.TILTED_PLANE:
        heights[0, :] = 0.0
        heights[-1, :] = 0.0
        heights[:, 0] = 0.0
        heights[:, -1] = 0.0

    return BathymetryGrid(
        ncols=spec.ncols,
        nrows=spec.nrows,
        cell_size=spec.cell_size,
        origin_x=spec.origin_x,
        origin_y=spec.origin_y,
        heights=heights,
    )


def make_grid(heights, cell_size: float = 1.0, origin_x: float = 0.0, origin_y: float = 0.0,
              nodata: Optional[float] = None) -> BathymetryGrid:
    """由自下而上的二维数组直接构造栅格"""
    h = np.asarray(heights, dtype=float)
    return BathymetryGrid(
        ncols=h.shape[1],
        nrows=h.shape[0],
        cell_size=cell_size,
        origin_x=origin_x,
        origin_y=origin_y,
        heights=h,
        nodata_sentinel=DEFAULT_NODATA if nodata is None else nodata,
    )
