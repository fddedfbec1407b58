"""Registration quality metrics: TRE, TRE30, Dice, sdLogJ.

TRE convention: each fixed landmark is pushed through the field (fixed ->
moving displacement, fixed-image voxels) and compared to its paired moving
landmark; the per-axis differences are converted to mm with the
moving-image spacing. The opposite convention changes the numbers.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .types import DisplacementField, LandmarkSet, Volume3D
from .warp import NEAREST, trilinear_sample, warp


@dataclass
class TreResult:
    mean_mm: float
    per_landmark_mm: np.ndarray


def _landmark_errors_mm(lm: LandmarkSet, field: DisplacementField | None) -> np.ndarray:
    warped = lm.fixed_points.copy()
    if field is not None:
        u = trilinear_sample(field.data.astype(np.float64), lm.fixed_points.T)
        warped = warped + u.T
    diff = (warped - lm.moving_points) * np.array(lm.spacing_moving)
    return np.linalg.norm(diff, axis=1)


def tre(lm: LandmarkSet, field: DisplacementField) -> TreResult:
    """Mean target registration error in mm (field on the fixed image grid)."""
    errs = _landmark_errors_mm(lm, field)
    return TreResult(float(errs.mean()), errs)


def tre30_subset(lm: LandmarkSet) -> np.ndarray:
    """Indices of the ceil(0.3*N) landmarks with largest zero-field error.

    Selection depends only on the initial errors; ties break by landmark
    index (lower index first).
    """
    initial = _landmark_errors_mm(lm, None)
    n_sel = math.ceil(0.3 * len(lm))
    order = np.lexsort((np.arange(len(lm)), -initial))
    return np.sort(order[:n_sel])


def tre30(lm: LandmarkSet, field: DisplacementField) -> float:
    """Mean post-registration TRE over the worst-30%-initial-error subset."""
    idx = tre30_subset(lm)
    errs = _landmark_errors_mm(lm, field)
    return float(errs[idx].mean())


@dataclass
class DiceResult:
    per_label: dict[int, float]
    mean: float


def dice(seg_fixed: Volume3D, seg_moving: Volume3D, field: DisplacementField) -> DiceResult:
    """Per-label Dice between the fixed labels and the NEAREST-warped moving labels."""
    warped = warp(seg_moving, field, NEAREST)
    a, b = seg_fixed.data, warped.data
    labels = sorted(set(np.unique(a)) | set(np.unique(b)))
    labels = [int(l) for l in labels if l != 0]
    if not labels:
        raise ValueError("no nonzero labels in either segmentation")
    per = {}
    for lab in labels:
        ma, mb = a == lab, b == lab
        denom = int(ma.sum()) + int(mb.sum())
        per[lab] = 2.0 * int(np.logical_and(ma, mb).sum()) / denom if denom else 0.0
    return DiceResult(per, float(np.mean(list(per.values()))))


@dataclass
class JacobianResult:
    sd_log_jacobian: float
    folded_voxel_count: int


def sd_log_jacobian(field: DisplacementField, det_floor: float = 1e-6) -> JacobianResult:
    """Standard deviation of log det(I + grad u), central differences.

    Borders use one-sided differences. Determinants below `det_floor` are
    clamped (and counted) so the metric stays computable on folded fields.
    """
    if any(n < 2 for n in field.grid_shape):
        raise ValueError(f"field grid {field.grid_shape} too small for gradients")
    u = field.data.astype(np.float64)
    # grad[i][j] = d u_i / d x_j
    grad = [np.gradient(u[i], axis=(0, 1, 2)) for i in range(3)]
    j = np.empty((3, 3, *field.grid_shape))
    for i in range(3):
        for k in range(3):
            j[i, k] = grad[i][k] + (1.0 if i == k else 0.0)
    det = (
        j[0, 0] * (j[1, 1] * j[2, 2] - j[1, 2] * j[2, 1])
        - j[0, 1] * (j[1, 0] * j[2, 2] - j[1, 2] * j[2, 0])
        + j[0, 2] * (j[1, 0] * j[2, 1] - j[1, 1] * j[2, 0])
    )
    folded = int(np.count_nonzero(det < det_floor))
    logj = np.log(np.maximum(det, det_floor))
    return JacobianResult(float(logj.std()), folded)
