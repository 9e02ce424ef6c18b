"""Feature-map reduction and embedding comparison measures."""

from __future__ import annotations

import numpy as np

from . import backends
from .errors import DegenerateInputError, DimensionError
from .volio import EmbeddingVector, FeatureMap4D

__all__ = ["adaptive_avg_pool", "flatten", "embedding_rmse", "cosine_similarity"]


def _pool_bounds(in_size: int, out_size: int, i: int) -> tuple[int, int]:
    # region [floor(i*n/m), ceil((i+1)*n/m)) — adjacent regions overlap by at
    # most one slab when out_size does not divide in_size
    start = (i * in_size) // out_size
    end = ((i + 1) * in_size + out_size - 1) // out_size
    return start, end


def adaptive_avg_pool(fmap: FeatureMap4D, out: tuple[int, int, int]) -> FeatureMap4D:
    """Average-pool each channel down to the requested spatial shape."""
    od, oh, ow = (int(v) for v in out)
    channels, d, h, w = fmap.values.shape
    if min(od, oh, ow) < 1:
        raise DimensionError(f"output shape must be positive, got {(od, oh, ow)}")
    if od > d or oh > h or ow > w:
        raise DimensionError(
            f"output shape {(od, oh, ow)} exceeds input {(d, h, w)} in some axis"
        )
    pooled = np.empty((channels, od, oh, ow))
    for i in range(od):
        s0, e0 = _pool_bounds(d, od, i)
        for j in range(oh):
            s1, e1 = _pool_bounds(h, oh, j)
            for k in range(ow):
                s2, e2 = _pool_bounds(w, ow, k)
                pooled[:, i, j, k] = fmap.values[:, s0:e0, s1:e1, s2:e2].mean(
                    axis=(1, 2, 3)
                )
    return FeatureMap4D(id=fmap.id, values=pooled)


def flatten(fmap: FeatureMap4D) -> EmbeddingVector:
    """Flatten to a vector of length channels*d*h*w, channel-major order."""
    return EmbeddingVector(id=fmap.id, values=fmap.values.reshape(-1))


def _check_dims(u: EmbeddingVector, v: EmbeddingVector) -> None:
    if u.dim != v.dim:
        raise DimensionError(
            f"embeddings {u.id!r} and {v.id!r} differ in dim: {u.dim} vs {v.dim}"
        )


def embedding_rmse(u: EmbeddingVector, v: EmbeddingVector) -> float:
    """Root mean squared difference between two embeddings."""
    _check_dims(u, v)
    return float(np.sqrt(backends.sum_sq_diff(u.values, v.values) / u.dim))


def cosine_similarity(u: EmbeddingVector, v: EmbeddingVector) -> float:
    """Cosine of the angle between two embeddings, in [-1, 1].

    A zero-norm embedding indicates an upstream failure and raises
    DegenerateInputError rather than silently mapping to 0.
    """
    _check_dims(u, v)
    norm_u = float(np.sqrt(np.dot(u.values, u.values)))
    norm_v = float(np.sqrt(np.dot(v.values, v.values)))
    if norm_u == 0.0 or norm_v == 0.0:
        raise DegenerateInputError(
            f"cosine similarity undefined for zero-norm embedding "
            f"({u.id!r} norm {norm_u}, {v.id!r} norm {norm_v})"
        )
    return float(np.dot(u.values, v.values) / (norm_u * norm_v))
