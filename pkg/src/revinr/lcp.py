"""Level-crossing probability for per-vertex Gaussian fields.

Vertices are treated as independent, so a cell misses the isovalue only if all
eight corners fall on the same side of it.
"""
from __future__ import annotations

import numpy as np
from scipy.special import ndtr

from .exceptions import DomainError, InvariantError, UsageError
from .volume import VolumeGrid

CORNERS = [(a, b, c) for c in (0, 1) for b in (0, 1) for a in (0, 1)]


def normal_cdf(x):
    return ndtr(x)


def below_probability(mean, var, c):
    """P(X < c) for X ~ N(mean, var); zero-variance vertices resolve by comparison, 0.5 on ties."""
    mean = np.asarray(mean, dtype=np.float64)
    var = np.asarray(var, dtype=np.float64)
    if np.any(var < 0):
        raise InvariantError("variance must be non-negative")
    sd = np.sqrt(var)
    with np.errstate(divide="ignore", invalid="ignore"):
        p = ndtr((c - mean) / sd)
    exact = np.where(c > mean, 1.0, np.where(c < mean, 0.0, 0.5))
    return np.where(sd > 0, p, exact)


def cell_lcp(means, variances, c) -> float:
    """Crossing probability for one cell given its 8 vertex means and variances."""
    means = np.asarray(means, dtype=np.float64)
    variances = np.asarray(variances, dtype=np.float64)
    if means.shape != (8,) or variances.shape != (8,):
        raise UsageError("a cell has exactly 8 vertices")
    p = below_probability(means, variances, c)
    return float(1.0 - np.prod(p) - np.prod(1.0 - p))


def _corner_stack(data):
    nx, ny, nz = data.shape
    return np.stack([data[a : nx - 1 + a, b : ny - 1 + b, c : nz - 1 + c] for a, b, c in CORNERS])


def lcp_field(mean: VolumeGrid, var: VolumeGrid, c) -> VolumeGrid:
    """Cell-centred crossing probabilities, dims ``(nx-1, ny-1, nz-1)``."""
    if mean.dims != var.dims:
        raise UsageError(f"mean dims {mean.dims} != variance dims {var.dims}")
    if min(mean.dims) < 2:
        raise DomainError("LCP needs at least 2 samples per axis")
    p = below_probability(_corner_stack(mean.data), _corner_stack(var.data), c)
    out = 1.0 - np.prod(p, axis=0) - np.prod(1.0 - p, axis=0)
    out = np.clip(out, 0.0, 1.0)
    return mean.with_data(out, norm=None, field_kind="lcp", meta={"isovalue": float(c)})


def mean_crossing_mask(mean: VolumeGrid, c) -> VolumeGrid:
    """1 where the cell's corner values straddle or touch ``c``.

    Matches :func:`lcp_field` with zero variance except on cells where a
    corner equals ``c`` exactly, which the 0.5 tie rule makes fractional there.
    """
    if min(mean.dims) < 2:
        raise DomainError("crossing mask needs at least 2 samples per axis")
    corners = _corner_stack(mean.data)
    lo, hi = corners.min(axis=0), corners.max(axis=0)
    all_below = hi < c
    all_above = lo > c
    mask = ~(all_below | all_above)
    return mean.with_data(mask.astype(np.float64), norm=None, field_kind="crossing_mask", meta={"isovalue": float(c)})
