"""Voxel-level comparison measures between dimension-identical volumes.

All three measures are pure functions over immutable inputs, deterministic,
and symmetric in their arguments.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import backends
from .errors import DimensionError, WindowError
from .volio import Volume3D

__all__ = ["SsimParams", "mae", "rmse", "mean_ssim", "gaussian_kernel"]


@dataclass(frozen=True)
class SsimParams:
    """Parameters of the windowed structural-similarity computation.

    ``data_range`` of None means "use max - min over the two volumes jointly
    for each pair"; set it explicitly to pin the dynamic range per corpus.
    """

    k1: float = 0.01
    k2: float = 0.03
    sigma: float = 1.5
    data_range: float | None = None

    def __post_init__(self):
        if self.k1 <= 0 or self.k2 <= 0 or self.sigma <= 0:
            raise ValueError("k1, k2, sigma must be positive")
        if self.data_range is not None and self.data_range <= 0:
            raise ValueError("data_range must be positive")

    @property
    def window_radius(self) -> int:
        # 3.5 sigma horizon, rounded half-up; 11-tap window at sigma=1.5
        return int(3.5 * self.sigma + 0.5)

    @property
    def window_size(self) -> int:
        return 2 * self.window_radius + 1


def gaussian_kernel(sigma: float, radius: int) -> np.ndarray:
    """Truncated 1D Gaussian, renormalized to sum 1."""
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def _check_dims(a: Volume3D, b: Volume3D) -> None:
    if a.dims != b.dims:
        raise DimensionError(
            f"volumes {a.id!r} and {b.id!r} differ in dims: {a.dims} vs {b.dims}"
        )


def mae(a: Volume3D, b: Volume3D) -> float:
    """Mean absolute voxel difference."""
    _check_dims(a, b)
    return backends.sum_abs_diff(a.voxels, b.voxels) / a.voxels.size


def rmse(a: Volume3D, b: Volume3D) -> float:
    """Root mean squared voxel difference."""
    _check_dims(a, b)
    return float(np.sqrt(backends.sum_sq_diff(a.voxels, b.voxels) / a.voxels.size))


def _filter3(arr: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    out = arr
    for axis in range(3):
        out = backends.correlate1d_valid(out, kernel, axis)
    return out


def mean_ssim(a: Volume3D, b: Volume3D, params: SsimParams | None = None) -> float:
    """Mean structural similarity over all fully-covered 3D windows.

    Local means, variances, and covariance are Gaussian-weighted; the SSIM
    map is evaluated only where the full window fits inside the volume (no
    padding), and its mean is returned.
    """
    params = params or SsimParams()
    _check_dims(a, b)
    size = params.window_size
    if min(a.dims) < size:
        raise WindowError(
            f"dims {a.dims} are smaller than the {size}-voxel SSIM window"
        )
    x = a.voxels
    y = b.voxels
    if params.data_range is not None:
        data_range = params.data_range
    else:
        lo = min(x.min(), y.min())
        hi = max(x.max(), y.max())
        data_range = float(hi - lo)
        if data_range == 0.0:
            # both volumes constant and equal: identical by definition
            return 1.0

    kernel = gaussian_kernel(params.sigma, params.window_radius)
    ux = _filter3(x, kernel)
    uy = _filter3(y, kernel)
    uxx = _filter3(x * x, kernel)
    uyy = _filter3(y * y, kernel)
    uxy = _filter3(x * y, kernel)
    vx = uxx - ux * ux
    vy = uyy - uy * uy
    vxy = uxy - ux * uy

    c1 = (params.k1 * data_range) ** 2
    c2 = (params.k2 * data_range) ** 2
    ssim_map = ((2.0 * ux * uy + c1) * (2.0 * vxy + c2)) / (
        (ux * ux + uy * uy + c1) * (vx + vy + c2)
    )
    return float(ssim_map.mean())
