"""Adam refinement of a coarse displacement field under feature-wise LCC.

The similarity is the squared local correlation coefficient, averaged over
positions and channels; windows are clipped at the volume border and the
variance product is clamped below by 1e-5, so constant windows contribute
zero correlation. The loss adds a diffusion regularizer (mean squared
forward difference of the upsampled field, replicated boundary).

A numpy implementation provides the scalar similarity; the torch mirror of
the same arithmetic provides gradients for the optimization loop. Gradient
accumulation follows torch's deterministic CPU kernels; across different
thread counts results agree to 1e-6.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .types import DisplacementField, FeatureVolume
from .warp import resample_field

VARIANCE_EPS = 1e-5
GRAD_NOISE_FLOOR = 1e-12

LCC = "LCC"
SSD = "SSD"


@dataclass
class AdamConfig:
    epochs: int = 50
    learning_rate: float = 1.0  # control-grid voxel units
    reg_weight: float = 2.0
    lcc_window: int = 1  # half-width; 1 -> 3^3 window
    loss: str = LCC

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.reg_weight < 0:
            raise ValueError("reg_weight must be >= 0")
        if self.lcc_window < 1:
            raise ValueError("lcc_window must be >= 1")
        if self.loss not in (LCC, SSD):
            raise ValueError(f"unknown loss {self.loss!r}")


# ---------------------------------------------------------------------------
# windowed sums (truncated at borders) via prefix sums, numpy and torch
# ---------------------------------------------------------------------------

def _box_sum_np(a: np.ndarray, w: int) -> np.ndarray:
    out = a
    for axis in range(1, 4):
        n = out.shape[axis]
        cs = np.cumsum(out, axis=axis)
        cs = np.concatenate([np.zeros_like(np.take(cs, [0], axis=axis)), cs], axis=axis)
        hi = np.minimum(np.arange(n) + w, n - 1) + 1
        lo = np.maximum(np.arange(n) - w, 0)
        out = np.take(cs, hi, axis=axis) - np.take(cs, lo, axis=axis)
    return out


def _box_sum_t(a: torch.Tensor, w: int) -> torch.Tensor:
    # zero padding yields sums over the window clipped at the border
    k = 2 * w + 1
    return torch.nn.functional.avg_pool3d(
        a[None], k, stride=1, padding=w, count_include_pad=True)[0] * float(k ** 3)


def _window_counts(shape, w: int) -> np.ndarray:
    axes = []
    for n in shape:
        i = np.arange(n)
        axes.append(np.minimum(i + w, n - 1) - np.maximum(i - w, 0) + 1)
    return (axes[0][:, None, None] * axes[1][None, :, None] * axes[2][None, None, :]).astype(np.float64)


def _lcc_map_np(f: np.ndarray, m: np.ndarray, w: int) -> np.ndarray:
    n = _window_counts(f.shape[1:], w)[None]
    sf, sm = _box_sum_np(f, w), _box_sum_np(m, w)
    sff, smm = _box_sum_np(f * f, w), _box_sum_np(m * m, w)
    sfm = _box_sum_np(f * m, w)
    cov = sfm - sf * sm / n
    var_f = sff - sf * sf / n
    var_m = smm - sm * sm / n
    den = var_f * var_m
    # windows with variance product below eps contribute zero correlation
    r2 = np.where(den >= VARIANCE_EPS, cov * cov / np.maximum(den, VARIANCE_EPS), 0.0)
    return np.clip(r2, 0.0, 1.0)


def lcc_similarity(f: FeatureVolume | np.ndarray, m_warped: FeatureVolume | np.ndarray,
                   window: int = 1) -> float:
    """Mean squared local correlation coefficient over positions and channels."""
    fa = (f.data if isinstance(f, FeatureVolume) else np.asarray(f)).astype(np.float64)
    ma = (m_warped.data if isinstance(m_warped, FeatureVolume) else np.asarray(m_warped)).astype(np.float64)
    if fa.shape != ma.shape:
        raise ValueError(f"shape mismatch: {fa.shape} vs {ma.shape}")
    if window < 1:
        raise ValueError("window must be >= 1")
    return float(_lcc_map_np(fa, ma, window).mean())


class _FixedSideStats:
    """Precomputed window statistics of the (non-optimized) fixed features."""

    def __init__(self, f: torch.Tensor, window: int):
        self.window = window
        self.n = torch.as_tensor(_window_counts(f.shape[1:], window), dtype=f.dtype)[None]
        self.f = f
        self.sf = _box_sum_t(f, window)
        self.var_f = _box_sum_t(f * f, window) - self.sf * self.sf / self.n

    def lcc(self, m: torch.Tensor) -> torch.Tensor:
        w, n = self.window, self.n
        sm = _box_sum_t(m, w)
        smm = _box_sum_t(m * m, w)
        sfm = _box_sum_t(self.f * m, w)
        cov = sfm - self.sf * sm / n
        var_m = smm - sm * sm / n
        den = self.var_f * var_m
        r2 = cov * cov / torch.clamp(den, min=VARIANCE_EPS)
        r2 = torch.where(den >= VARIANCE_EPS, r2, torch.zeros_like(r2))
        return torch.clamp(r2, max=1.0).mean()


def lcc_similarity_t(f: torch.Tensor, m: torch.Tensor, window: int) -> torch.Tensor:
    """Torch mirror of lcc_similarity, differentiable in m (and f)."""
    return _FixedSideStats(f, window).lcc(m)


def lcc_gradient(f: np.ndarray, m: np.ndarray, window: int = 1) -> np.ndarray:
    """Analytic gradient of lcc_similarity with respect to m (autodiff)."""
    ft = torch.as_tensor(np.asarray(f, dtype=np.float64))
    mt = torch.as_tensor(np.asarray(m, dtype=np.float64)).requires_grad_(True)
    lcc_similarity_t(ft, mt, window).backward()
    return mt.grad.numpy()


# ---------------------------------------------------------------------------
# torch-side trilinear sampling (same mapping as warp.trilinear_sample;
# gather-based so integer positions reproduce the input bitwise)
# ---------------------------------------------------------------------------

def _grid_sample(data: torch.Tensor, pos: torch.Tensor) -> torch.Tensor:
    """Trilinear sample (C, D, H, W) at (3, D', H', W') voxel coords, clamped."""
    norm = []
    for axis in range(3):
        n = data.shape[1 + axis]
        norm.append(2.0 * pos[axis] / max(n - 1, 1) - 1.0)
    grid = torch.stack([norm[2], norm[1], norm[0]], dim=-1)[None]
    return torch.nn.functional.grid_sample(
        data[None], grid, mode="bilinear", padding_mode="border",
        align_corners=True)[0]


def _warp_features(m: torch.Tensor, phi: torch.Tensor, identity: torch.Tensor) -> torch.Tensor:
    return _grid_sample(m, identity + phi)


def _diffusion(phi: torch.Tensor) -> torch.Tensor:
    """Mean squared forward difference, replicated boundary (last diff 0)."""
    total = phi.new_zeros(())
    count = 0
    for axis in range(1, 4):
        d = phi.narrow(axis, 1, phi.shape[axis] - 1) - phi.narrow(axis, 0, phi.shape[axis] - 1)
        total = total + (d * d).sum()
        count += phi.numel()  # replicated boundary contributes zeros
    return total / count


def adam_refine(f: FeatureVolume, m: FeatureVolume, init: DisplacementField,
                cfg: AdamConfig | None = None) -> DisplacementField:
    """Refine a control-point field by Adam; returns it on the feature grid."""
    cfg = cfg or AdamConfig()
    if f.grid_shape != m.grid_shape or f.channels != m.channels:
        raise ValueError(f"feature volumes incompatible: {f.data.shape} vs {m.data.shape}")
    shape = f.grid_shape

    if cfg.epochs == 0:
        return resample_field(init, shape, f.grid)

    # source control-grid coordinates of every feature-grid cell (constants)
    tgt = np.stack(np.meshgrid(*(np.arange(n, dtype=np.float64) for n in shape),
                               indexing="ij"))
    img = f.grid.cell_to_image(tgt.reshape(3, -1).T).T
    src = torch.as_tensor(init.grid.image_to_cell(img.T).T.reshape(3, *shape))
    scale = torch.as_tensor(np.array(init.grid.spacing) / np.array(f.grid.spacing))
    identity = torch.as_tensor(tgt)

    ft = torch.as_tensor(f.data.astype(np.float64))
    mt = torch.as_tensor(m.data.astype(np.float64))
    theta = torch.as_tensor(init.data.astype(np.float64)).clone().requires_grad_(True)
    opt = torch.optim.Adam([theta], lr=cfg.learning_rate, betas=(0.9, 0.999), eps=1e-8)
    stats = _FixedSideStats(ft, cfg.lcc_window) if cfg.loss == LCC else None

    for _ in range(cfg.epochs):
        opt.zero_grad()
        phi = _grid_sample(theta, src) * scale.view(3, 1, 1, 1)
        warped = _warp_features(mt, phi, identity)
        if stats is not None:
            sim_loss = -stats.lcc(warped)
        else:
            sim_loss = ((ft - warped) ** 2).mean()
        loss = sim_loss + cfg.reg_weight * _diffusion(phi)
        loss.backward()
        # cancellation noise at a stationary point would be amplified by
        # Adam's normalization; below the noise floor there is no signal
        if theta.grad.abs().max().item() > GRAD_NOISE_FLOOR:
            opt.step()

    final = DisplacementField(theta.detach().numpy().astype(np.float32), init.grid)
    return resample_field(final, shape, f.grid)
