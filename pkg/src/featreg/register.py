"""Two-stage registration: discrete convex initialization + Adam refinement."""
from __future__ import annotations

from .adam import AdamConfig, adam_refine
from .costvol import ConvexConfig, build_cost_volume, coupled_convex_coarse
from .types import DisplacementField, FeatureVolume


def register(f: FeatureVolume, m: FeatureVolume,
             cc: ConvexConfig | None = None,
             ac: AdamConfig | None = None) -> DisplacementField:
    """Align m to f; returns the displacement field on the feature grid.

    Deterministic given configs: repeated runs on the same inputs agree to
    1e-6 (torch parallel reductions; see adam module docs).
    """
    cc = cc or ConvexConfig()
    ac = ac or AdamConfig()
    cv = build_cost_volume(f, m, cc)
    init = coupled_convex_coarse(cv, cc)
    return adam_refine(f, m, init, ac)
