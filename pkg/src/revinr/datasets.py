"""Synthetic analytic volumes for tests, demos and the desk-scale gates."""
from __future__ import annotations

import numpy as np

from .volume import VolumeGrid, grid_coordinates


def gaussian_blobs(dims=(64, 64, 64), n_blobs=8, width=(0.15, 0.35), seed=0) -> VolumeGrid:
    """Sum of isotropic Gaussian bumps with random centres, widths and signed amplitudes."""
    rng = np.random.default_rng(seed)
    x = grid_coordinates(dims)
    values = np.zeros(len(x))
    for _ in range(n_blobs):
        centre = rng.uniform(-0.7, 0.7, size=3)
        sigma = rng.uniform(*width)
        amp = rng.uniform(0.5, 1.0) * rng.choice([-1.0, 1.0])
        values += amp * np.exp(-np.sum((x - centre) ** 2, axis=1) / (2 * sigma**2))
    return VolumeGrid.from_values(values, dims)


def sphere_field(dims=(16, 16, 16)) -> VolumeGrid:
    """Distance from the domain centre, in normalized coordinates."""
    x = grid_coordinates(dims)
    return VolumeGrid.from_values(np.linalg.norm(x, axis=1), dims)
