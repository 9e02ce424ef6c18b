"""Numeric kernels with a numba fast path and a pure-numpy fallback.

The hot loops of the toolkit (voxelwise error sums, separable window
filtering, brute-force surface distances) live here. The active backend is
picked once at import time from the ``RELICT_BACKEND`` environment variable:

* ``numba`` — compile the loops with ``@njit`` (default when numba imports)
* ``numpy`` — vectorized numpy implementations, no compilation

Both backends are deterministic run-to-run. They may disagree in the last
few ulps because summation order differs; ``benchmarks/bench_backends.py``
compares speed and agreement.
"""

from __future__ import annotations

import os

import numpy as np

__all__ = [
    "ACTIVE_BACKEND",
    "sum_abs_diff",
    "sum_sq_diff",
    "correlate1d_valid",
    "directed_min_distances",
    "implementations",
]


def _numba_available() -> bool:
    try:
        import numba  # noqa: F401
    except ImportError:
        return False
    return True


def _numpy_impls():
    def sum_abs_diff(a, b):
        return float(np.sum(np.abs(a - b)))

    def sum_sq_diff(a, b):
        d = a - b
        return float(np.dot(d, d))

    def correlate_last(a2, kernel):
        n = a2.shape[-1]
        m = kernel.shape[0]
        out = np.zeros((a2.shape[0], n - m + 1))
        for t in range(m):
            out += kernel[t] * a2[:, t : t + n - m + 1]
        return out

    def directed_min_sqdist(pa, pb):
        out = np.empty(pa.shape[0])
        # chunk the (na, nb) pairwise block to bound temporary memory
        chunk = max(1, int(2e7) // max(pb.shape[0], 1))
        for s in range(0, pa.shape[0], chunk):
            block = pa[s : s + chunk]
            d2 = ((block[:, None, :] - pb[None, :, :]) ** 2).sum(axis=2)
            out[s : s + chunk] = d2.min(axis=1)
        return out

    return {
        "sum_abs_diff": sum_abs_diff,
        "sum_sq_diff": sum_sq_diff,
        "correlate_last": correlate_last,
        "directed_min_sqdist": directed_min_sqdist,
    }


def _numba_impls():
    from numba import njit

    @njit(cache=True, nogil=True)
    def sum_abs_diff(a, b):
        acc = 0.0
        for i in range(a.shape[0]):
            acc += abs(a[i] - b[i])
        return acc

    @njit(cache=True, nogil=True)
    def sum_sq_diff(a, b):
        acc = 0.0
        for i in range(a.shape[0]):
            d = a[i] - b[i]
            acc += d * d
        return acc

    @njit(cache=True, nogil=True)
    def correlate_last(a2, kernel):
        rows, n = a2.shape
        m = kernel.shape[0]
        out = np.empty((rows, n - m + 1))
        for r in range(rows):
            for j in range(n - m + 1):
                acc = 0.0
                for t in range(m):
                    acc += kernel[t] * a2[r, j + t]
                out[r, j] = acc
        return out

    @njit(cache=True, nogil=True)
    def directed_min_sqdist(pa, pb):
        out = np.empty(pa.shape[0])
        for i in range(pa.shape[0]):
            best = np.inf
            for j in range(pb.shape[0]):
                dx = pa[i, 0] - pb[j, 0]
                dy = pa[i, 1] - pb[j, 1]
                dz = pa[i, 2] - pb[j, 2]
                d2 = dx * dx + dy * dy + dz * dz
                if d2 < best:
                    best = d2
            out[i] = best
        return out

    return {
        "sum_abs_diff": sum_abs_diff,
        "sum_sq_diff": sum_sq_diff,
        "correlate_last": correlate_last,
        "directed_min_sqdist": directed_min_sqdist,
    }


def _select_backend() -> str:
    requested = os.environ.get("RELICT_BACKEND", "").strip().lower()
    if requested not in ("", "numba", "numpy"):
        raise ValueError(
            f"RELICT_BACKEND must be 'numba' or 'numpy', got {requested!r}"
        )
    if requested == "numba" and not _numba_available():
        raise ImportError("RELICT_BACKEND=numba but numba is not importable")
    if requested:
        return requested
    return "numba" if _numba_available() else "numpy"


ACTIVE_BACKEND = _select_backend()
_IMPL = _numba_impls() if ACTIVE_BACKEND == "numba" else _numpy_impls()


def implementations() -> dict[str, dict]:
    """All available backend implementations, keyed by backend name.

    Used by the benchmark and by cross-backend agreement tests; normal code
    goes through the module-level functions, which dispatch to the backend
    selected at import.
    """
    impls = {"numpy": _numpy_impls()}
    if _numba_available():
        impls["numba"] = _numba_impls()
    return impls


def _as_flat64(a) -> np.ndarray:
    return np.ascontiguousarray(a, dtype=np.float64).reshape(-1)


def sum_abs_diff(a, b) -> float:
    """Sum of |a - b| over all elements; shapes must already match."""
    return float(_IMPL["sum_abs_diff"](_as_flat64(a), _as_flat64(b)))


def sum_sq_diff(a, b) -> float:
    """Sum of (a - b)^2 over all elements; shapes must already match."""
    return float(_IMPL["sum_sq_diff"](_as_flat64(a), _as_flat64(b)))


def correlate1d_valid(arr, kernel, axis: int) -> np.ndarray:
    """Correlate ``arr`` with a 1D ``kernel`` along ``axis``, valid mode.

    Only positions where the kernel lies fully inside the array are kept,
    so the output shrinks by ``len(kernel) - 1`` along ``axis``.
    """
    kernel = np.ascontiguousarray(kernel, dtype=np.float64)
    a = np.moveaxis(np.asarray(arr, dtype=np.float64), axis, -1)
    shape = a.shape
    if kernel.shape[0] > shape[-1]:
        raise ValueError(
            f"kernel of size {kernel.shape[0]} exceeds axis extent {shape[-1]}"
        )
    a2 = np.ascontiguousarray(a).reshape(-1, shape[-1])
    out2 = _IMPL["correlate_last"](a2, kernel)
    out = out2.reshape(shape[:-1] + (out2.shape[-1],))
    return np.moveaxis(out, -1, axis)


def directed_min_distances(points_a, points_b) -> np.ndarray:
    """Distance from each point in ``points_a`` to its nearest ``points_b``.

    Brute force over all pairs; both inputs are (n, 3) coordinate arrays.
    """
    pa = np.ascontiguousarray(points_a, dtype=np.float64)
    pb = np.ascontiguousarray(points_b, dtype=np.float64)
    if pa.shape[0] == 0:
        return np.empty(0)
    if pb.shape[0] == 0:
        raise ValueError("target point set is empty")
    return np.sqrt(_IMPL["directed_min_sqdist"](pa, pb))
