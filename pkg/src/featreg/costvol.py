"""Discrete displacement search: SSD cost volume and coupled convex smoothing.

The cost volume scores every integer candidate displacement at every coarse
cell. Coupled convex optimization then alternates per-cell argmin of
cost + theta * ||d - d_smooth||^2 with Gaussian smoothing of the field,
under an increasing coupling schedule.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter

from .types import DisplacementField, FeatureVolume, GridInfo
from .warp import resample_field


@dataclass
class ConvexConfig:
    search_radius: int = 8  # feature-grid voxels
    quantization: int = 2
    coarse_stride: int = 2
    coupling_schedule: tuple[float, ...] = (1.0, 2.0, 4.0, 8.0)
    smoothing_sigma: float = 1.0  # in coarse cells

    def __post_init__(self):
        r, q = self.search_radius, self.quantization
        if not (r >= q >= 1):
            raise ValueError(f"need search_radius >= quantization >= 1, got R={r}, q={q}")
        if r % q != 0:
            raise ValueError(f"search_radius {r} not divisible by quantization {q}")
        if self.coarse_stride < 1:
            raise ValueError("coarse_stride must be >= 1")
        sched = tuple(float(t) for t in self.coupling_schedule)
        if not sched:
            raise ValueError("coupling schedule must be non-empty")
        if any(t <= 0 for t in sched) or any(b <= a for a, b in zip(sched, sched[1:])):
            raise ValueError("coupling schedule must be positive and strictly increasing")
        self.coupling_schedule = sched

    def candidates(self) -> np.ndarray:
        """(K, 3) integer displacements, lexicographic (dz, dy, dx) order."""
        steps = np.arange(-self.search_radius, self.search_radius + 1, self.quantization)
        dz, dy, dx = np.meshgrid(steps, steps, steps, indexing="ij")
        return np.stack([dz.ravel(), dy.ravel(), dx.ravel()], axis=1).astype(np.int64)


@dataclass
class CostVolume:
    costs: np.ndarray  # (K, Dc, Hc, Wc)
    candidates: np.ndarray  # (K, 3) in feature-grid voxels
    coarse_stride: int
    feature_grid: GridInfo = field(default_factory=GridInfo)
    feature_shape: tuple[int, int, int] = (1, 1, 1)

    def __post_init__(self):
        self.costs = np.asarray(self.costs, dtype=np.float32)
        self.candidates = np.asarray(self.candidates, dtype=np.int64)
        if self.costs.ndim != 4 or len(self.candidates) != self.costs.shape[0]:
            raise ValueError("costs must be (K, Dc, Hc, Wc) matching the candidate set")
        if not np.all(np.isfinite(self.costs)) or self.costs.min() < 0:
            raise ValueError("costs must be finite and non-negative")

    @property
    def coarse_shape(self) -> tuple[int, int, int]:
        return self.costs.shape[1:]  # type: ignore[return-value]

    def coarse_grid(self) -> GridInfo:
        s = self.coarse_stride
        fs = self.feature_grid.spacing
        return GridInfo(tuple(f * s for f in fs), self.feature_grid.origin)


def _coarse_centers(shape, stride: int) -> tuple[np.ndarray, ...]:
    # one center per full stride block, at the block's leading voxel
    return tuple(np.arange(0, n, stride) for n in shape)


def build_cost_volume(f: FeatureVolume, m: FeatureVolume, cfg: ConvexConfig | None = None) -> CostVolume:
    """Per-coarse-cell SSD between f at the cell center and m at center + d.

    Candidate displacements are integral; m is sampled nearest-neighbor and
    clamped at the borders.
    """
    cfg = cfg or ConvexConfig()
    if f.channels != m.channels:
        raise ValueError(f"channel mismatch: {f.channels} vs {m.channels}")
    if f.grid_shape != m.grid_shape:
        raise ValueError(f"grid mismatch: {f.grid_shape} vs {m.grid_shape}")
    shape = f.grid_shape
    if any(n < cfg.coarse_stride for n in shape):
        raise ValueError(f"grid {shape} smaller than one coarse cell (stride {cfg.coarse_stride})")

    candidates = cfg.candidates()
    stride, r = cfg.coarse_stride, cfg.search_radius
    coarse_shape = tuple(len(c) for c in _coarse_centers(shape, stride))

    fdat = f.data.astype(np.float32)
    f_center = fdat[:, ::stride, ::stride, ::stride]  # centers at i*stride

    # edge padding realizes the border clamp; candidates become strided views
    mpad = np.pad(m.data.astype(np.float32), ((0, 0), (r, r), (r, r), (r, r)), mode="edge")
    costs = np.empty((len(candidates), *coarse_shape), dtype=np.float32)
    d0, h0, w0 = shape
    for k, (dz, dy, dx) in enumerate(candidates):
        m_shift = mpad[:, r + dz:r + dz + d0:stride,
                       r + dy:r + dy + h0:stride,
                       r + dx:r + dx + w0:stride]
        diff = f_center - m_shift
        costs[k] = np.einsum("czyx,czyx->zyx", diff, diff)
    costs = np.maximum(costs, 0.0)
    return CostVolume(costs, candidates, stride, f.grid, shape)


def coupled_convex_coarse(cv: CostVolume, cfg: ConvexConfig | None = None,
                          objective_trace: list | None = None) -> DisplacementField:
    """Run the argmin/smooth alternation; field on the coarse grid, own units."""
    cfg = cfg or ConvexConfig()
    cands = cv.candidates.astype(np.float32)  # feature-grid voxels
    k, nc = cv.costs.shape[0], int(np.prod(cv.coarse_shape))
    flat_costs = cv.costs.reshape(k, nc)

    # initial argmin; exact ties (e.g. clamped border cells on identical
    # inputs) resolve to the smallest displacement rather than scan order
    norm_order = np.argsort(np.einsum("kc,kc->k", cands, cands), kind="stable")
    best = norm_order[np.argmin(flat_costs[norm_order], axis=0)]
    disp = cands[best].T.reshape(3, *cv.coarse_shape)  # feature-grid voxel units

    for theta in cfg.coupling_schedule:
        smooth = np.stack([gaussian_filter(disp[c], cfg.smoothing_sigma, mode="nearest")
                           for c in range(3)])
        flat_smooth = smooth.reshape(3, nc)
        objective = flat_costs.copy()
        for axis in range(3):
            objective += theta * (cands[:, axis, None] - flat_smooth[axis][None, :]) ** 2
        prev = objective[best, np.arange(nc)]
        best = np.argmin(objective, axis=0)
        if objective_trace is not None:
            objective_trace.append((prev, objective[best, np.arange(nc)]))
        disp = cands[best].T.reshape(3, *cv.coarse_shape)

    coarse = disp / cv.coarse_stride  # convert to coarse-grid voxel units
    return DisplacementField(coarse.astype(np.float32), cv.coarse_grid())


def coupled_convex(cv: CostVolume, cfg: ConvexConfig | None = None) -> DisplacementField:
    """Coupled convex optimization, upsampled back to the feature grid."""
    cfg = cfg or ConvexConfig()
    coarse = coupled_convex_coarse(cv, cfg)
    return resample_field(coarse, cv.feature_shape, cv.feature_grid)
