"""Slice-wise feature export: window, resize, crop to patch grid, encode.

The slice axis stays sparse (every ``gap``-th slice is encoded); the
registration engine densifies it. Grid metadata records the mapping from
token cells back to voxels of the input volume: along the slice axis one
cell per encoded slice (spacing = gap voxels), in-plane one cell per
14-pixel patch of the resized image (spacing = 14 / factor voxels, origin
at the first patch center).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from PIL import Image

from .encoders import PATCH
from .ftv import write_ftv
from .nifti import read_nifti

VIEWS = ("axial", "coronal", "sagittal")
_VIEW_AXIS = {"axial": 0, "coronal": 1, "sagittal": 2}


@dataclass
class ExportConfig:
    view: str = "axial"
    gap: int = 3
    factor: int = 3
    window: tuple[float, float] = (-1000.0, 1000.0)

    def __post_init__(self):
        if self.view not in VIEWS:
            raise ValueError(f"view must be one of {VIEWS}, got {self.view!r}")
        if self.gap < 1:
            raise ValueError("gap must be >= 1")
        if self.factor < 1:
            raise ValueError("factor must be >= 1")
        lo, hi = self.window
        if not hi > lo:
            raise ValueError(f"window must satisfy low < high, got {self.window}")


def window_slice(sl: np.ndarray, window: tuple[float, float]) -> np.ndarray:
    lo, hi = window
    return ((np.clip(sl, lo, hi) - lo) / (hi - lo)).astype(np.float32)


def resize_and_crop(sl: np.ndarray, factor: int) -> np.ndarray:
    """Upsample by `factor` (bilinear), crop to the largest 14-multiples."""
    h, w = sl.shape
    rh, rw = h * factor, w * factor
    if factor > 1:
        img = Image.fromarray(sl, mode="F").resize((rw, rh), Image.BILINEAR)
        sl = np.asarray(img, dtype=np.float32)
    ch, cw = (rh // PATCH) * PATCH, (rw // PATCH) * PATCH
    if ch < PATCH or cw < PATCH:
        raise ValueError(
            f"slice {h}x{w} at factor {factor} has no room for one "
            f"{PATCH}x{PATCH} patch")
    return sl[:ch, :cw]


def extract_slices(data: np.ndarray, view: str, gap: int) -> tuple[np.ndarray, list[int]]:
    axis = _VIEW_AXIS[view]
    idx = list(range(0, data.shape[axis], gap))
    return np.moveaxis(data, axis, 0)[idx], idx


def export_features(volume_path, out_path, cfg: ExportConfig,
                    encoder) -> dict:
    """Encode every gap-th slice of a NIfTI volume into a sparse FTV tensor."""
    vol = read_nifti(volume_path)
    slices, indices = extract_slices(vol.data, cfg.view, cfg.gap)

    prepared = np.stack([resize_and_crop(window_slice(sl, cfg.window), cfg.factor)
                         for sl in slices])
    batch = np.repeat(prepared[:, None], 3, axis=1)  # grayscale -> 3 channels
    tokens = encoder.encode(batch)  # (n_slices, Hp, Wp, C)
    feats = np.ascontiguousarray(tokens.transpose(3, 0, 1, 2))

    axis = _VIEW_AXIS[cfg.view]
    inplane = [a for a in range(3) if a != axis]
    token_spacing = PATCH / cfg.factor  # voxels of the input plane per token
    spacing = [0.0, 0.0, 0.0]
    origin = [0.0, 0.0, 0.0]
    spacing[0] = float(cfg.gap) * vol.spacing[axis]
    origin[0] = 0.0
    for out_ax, vol_ax in zip((1, 2), inplane):
        spacing[out_ax] = token_spacing * vol.spacing[vol_ax]
        # center of the first 14-pixel patch, mapped back to voxel units
        origin[out_ax] = ((PATCH - 1) / 2.0 / cfg.factor) * vol.spacing[vol_ax]

    meta = {
        "kind": "features",
        "grid_spacing": spacing,
        "grid_origin": origin,
        "provenance": "EXTERNAL",
        "extra": {
            "view": cfg.view,
            "gap": cfg.gap,
            "upsample_factor": cfg.factor,
            "window": list(cfg.window),
            "slice_indices": indices,
            "patch_size": PATCH,
            "encoder": type(encoder).__name__,
        },
    }
    write_ftv(feats, meta, out_path)
    return meta
