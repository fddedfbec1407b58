"""Combining displacement fields: mean-field averaging and composition."""
from __future__ import annotations

import numpy as np

from .types import DisplacementField
from .warp import trilinear_sample, _identity_coords


def _check_same_grid(a: DisplacementField, b: DisplacementField) -> None:
    if a.grid_shape != b.grid_shape or a.grid != b.grid:
        raise ValueError(
            f"fields on different grids: {a.grid_shape}/{a.grid} vs {b.grid_shape}/{b.grid}; "
            "resample with upsample_field first"
        )


def mean_fields(a: DisplacementField, b: DisplacementField) -> DisplacementField:
    """Component-wise arithmetic mean of two fields on the same grid."""
    _check_same_grid(a, b)
    return DisplacementField((a.data + b.data) / 2.0, a.grid)


def compose_fields(first: DisplacementField, second: DisplacementField) -> DisplacementField:
    """Sequential application: u(x) = u1(x) + u2(x + u1(x)).

    u2 is sampled trilinearly with border clamping, so warping with the
    composed field matches the two-pass warp up to one interpolation.
    """
    _check_same_grid(first, second)
    shape = first.grid_shape
    coords = _identity_coords(shape) + first.data.reshape(3, -1).astype(np.float64)
    u2 = trilinear_sample(second.data.astype(np.float64), coords)
    out = first.data + u2.reshape(3, *shape).astype(np.float32)
    return DisplacementField(out, first.grid)
