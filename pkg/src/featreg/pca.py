"""Joint channel reduction of a feature-volume pair by shared PCA.

Tokens (feature vectors of every voxel of both volumes) are pooled, centered,
and projected onto the top-k principal directions. FULL mode uses the exact
eigendecomposition of the C x C covariance; LOW_RANK replaces the
eigendecomposition with seeded randomized subspace iteration, trading a
little accuracy for speed on wide feature spaces. Component signs are fixed
so the largest-magnitude loading is positive, making both modes
reproducible.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .types import FeatureVolume, Provenance

FULL = "FULL"
LOW_RANK = "LOW_RANK"


@dataclass
class PcaConfig:
    k: int = 24
    mode: str = FULL
    oversampling: int = 10
    power_iterations: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.mode not in (FULL, LOW_RANK):
            raise ValueError(f"unknown PCA mode {self.mode!r}")
        if self.oversampling < 0 or self.power_iterations < 0:
            raise ValueError("oversampling and power_iterations must be >= 0")


@dataclass
class PcaBasis:
    """Shared projection: components (k, C) rows, token mean (C,)."""

    components: np.ndarray
    mean: np.ndarray
    explained_variance_ratio: np.ndarray

    def project(self, tokens: np.ndarray) -> np.ndarray:
        return (tokens - self.mean) @ self.components.T


def _fix_signs(components: np.ndarray) -> np.ndarray:
    idx = np.argmax(np.abs(components), axis=1)
    signs = np.sign(components[np.arange(len(components)), idx])
    signs[signs == 0] = 1.0
    return components * signs[:, None]


def _full_basis(x: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    cov = (x.T @ x) / len(x)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1]
    evals = np.maximum(evals[order], 0.0)
    components = evecs[:, order[:k]].T
    return components, evals


def _low_rank_basis(x: np.ndarray, cfg: PcaConfig) -> tuple[np.ndarray, np.ndarray]:
    # randomized range finding on the C x C covariance: one Gram product,
    # then cheap subspace iterations in place of the full eigendecomposition
    n, c = x.shape
    l = min(cfg.k + cfg.oversampling, c)
    rng = np.random.default_rng(cfg.seed)
    cov = (x.T @ x) / n
    q = np.linalg.qr(cov @ rng.standard_normal((c, l)))[0]
    for _ in range(cfg.power_iterations):
        q = np.linalg.qr(cov @ q)[0]
    evals, w = np.linalg.eigh(q.T @ cov @ q)  # Rayleigh-Ritz on the subspace
    order = np.argsort(evals)[::-1][: cfg.k]
    components = (q @ w[:, order]).T
    return components, np.maximum(evals[order], 0.0)


def fit_joint_basis(tokens: np.ndarray, cfg: PcaConfig) -> PcaBasis:
    """Fit the shared basis on a pooled (N, C) token matrix."""
    mean = tokens.mean(axis=0)
    x = tokens - mean
    total_var = float(np.sum(x * x) / len(x))
    if total_var <= 0.0:
        raise ValueError("degenerate tokens: zero covariance (all tokens identical)")
    if cfg.mode == FULL:
        components, evals = _full_basis(x, cfg.k)
    else:
        components, evals = _low_rank_basis(x, cfg)
    components = _fix_signs(np.ascontiguousarray(components))
    ratios = evals[: cfg.k] / total_var
    return PcaBasis(components, mean, ratios)


def joint_pca(f_ref: FeatureVolume, f_mov: FeatureVolume,
              cfg: PcaConfig | None = None) -> tuple[FeatureVolume, FeatureVolume]:
    """Reduce both volumes onto one k-dimensional basis fit on pooled tokens."""
    cfg = cfg or PcaConfig()
    if f_ref.channels != f_mov.channels:
        raise ValueError(f"channel mismatch: {f_ref.channels} vs {f_mov.channels}")
    c = f_ref.channels
    if cfg.k > c:
        raise ValueError(f"k={cfg.k} exceeds channel count {c}")

    t_ref = f_ref.data.reshape(c, -1).T.astype(np.float64)
    t_mov = f_mov.data.reshape(c, -1).T.astype(np.float64)
    basis = fit_joint_basis(np.concatenate([t_ref, t_mov]), cfg)

    outs = []
    for fv, tokens in ((f_ref, t_ref), (f_mov, t_mov)):
        proj = basis.project(tokens).T.reshape(cfg.k, *fv.grid_shape)
        extra = dict(fv.extra)
        extra["explained_variance_ratio"] = basis.explained_variance_ratio.tolist()
        extra["pca_mode"] = cfg.mode
        outs.append(FeatureVolume(proj.astype(np.float32), fv.grid,
                                  Provenance.PCA_REDUCED, extra))
        outs[-1].extra["basis"] = basis  # shared object, not serialized
    return outs[0], outs[1]
