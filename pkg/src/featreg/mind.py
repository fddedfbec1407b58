"""Self-similarity context descriptors (12-channel MIND-SSC).

For each voxel, squared patch distances are computed between the 12 adjacent
pairs of the six dilation-offset neighbors, normalized by the clamped local
mean patch distance, mapped through a negative exponential and per-voxel
max-normalized to [0, 1]. Invariant under global affine intensity maps
v -> a*v + b with a > 0.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .types import FeatureVolume, GridInfo, Provenance, Volume3D


@dataclass
class MindConfig:
    patch_radius: int = 1
    dilation: int = 2
    variance_floor: float | None = None  # None: 1e-6 * mean patch distance

    def __post_init__(self):
        if self.patch_radius < 0:
            raise ValueError("patch_radius must be >= 0")
        if self.dilation < 1:
            raise ValueError("dilation must be >= 1")
        if self.variance_floor is not None and self.variance_floor <= 0:
            raise ValueError("variance_floor must be positive")


def _six_neighbors(d: int) -> list[tuple[int, int, int]]:
    return [(-d, 0, 0), (d, 0, 0), (0, -d, 0), (0, d, 0), (0, 0, -d), (0, 0, d)]


def ssc_pairs(dilation: int) -> list[tuple[tuple[int, int, int], tuple[int, int, int]]]:
    """The 12 unique non-opposite pairs of the 6 dilation-offset neighbors."""
    nb = _six_neighbors(dilation)
    pairs = []
    for i in range(6):
        for j in range(i + 1, 6):
            if all(a + b == 0 for a, b in zip(nb[i], nb[j])):
                continue  # opposite neighbors
            pairs.append((nb[i], nb[j]))
    assert len(pairs) == 12
    return pairs


def encode_mind_ssc(v: Volume3D, cfg: MindConfig | None = None) -> FeatureVolume:
    """Compute the 12-channel SSC descriptor on the image grid."""
    cfg = cfg or MindConfig()
    reach = 2 * (cfg.patch_radius + cfg.dilation) + 1
    if any(n < reach for n in v.data.shape):
        raise ValueError(f"volume {v.data.shape} too small for patch reach {reach}")
    if not np.all(np.isfinite(v.data)):
        raise ValueError("volume contains non-finite intensities")
    img = v.data.astype(np.float64)
    shape = img.shape

    # edge padding realizes one border clamp per final sample position
    pad = cfg.patch_radius + cfg.dilation
    vp = np.pad(img, pad, mode="edge")

    def shifted(offset):
        return vp[pad + offset[0]:pad + offset[0] + shape[0],
                  pad + offset[1]:pad + offset[1] + shape[1],
                  pad + offset[2]:pad + offset[2] + shape[2]]

    r = cfg.patch_radius
    dists = np.zeros((12, *shape), dtype=np.float64)
    for c, (n1, n2) in enumerate(ssc_pairs(cfg.dilation)):
        for dz in range(-r, r + 1):
            for dy in range(-r, r + 1):
                for dx in range(-r, r + 1):
                    a = shifted((n1[0] + dz, n1[1] + dy, n1[2] + dx))
                    b = shifted((n2[0] + dz, n2[1] + dy, n2[2] + dx))
                    diff = a - b
                    dists[c] += diff * diff

    local_mean = dists.mean(axis=0)
    floor = cfg.variance_floor
    if floor is None:
        floor = max(1e-6 * float(dists.mean()), 1e-12)
    variance = np.maximum(local_mean, floor)
    desc = np.exp(-dists / variance)
    desc /= desc.max(axis=0)  # per-voxel max-normalize; max of exp(-x) > 0
    return FeatureVolume(desc.astype(np.float32), GridInfo(), Provenance.MIND_SSC)
