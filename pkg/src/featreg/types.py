"""Core value types shared across the registration pipeline.

All arrays are C-ordered numpy arrays with axis order (z, y, x); 4D tensors
are channel-first. Displacement components are expressed in voxels of the
grid the field is defined on, in (dz, dy, dx) order.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from enum import Enum
from typing import Any

import numpy as np

Triple = tuple[float, float, float]


class Provenance(str, Enum):
    MIND_SSC = "MIND_SSC"
    EXTERNAL = "EXTERNAL"
    PCA_REDUCED = "PCA_REDUCED"


def _as_triple(v) -> Triple:
    t = tuple(float(x) for x in v)
    if len(t) != 3:
        raise ValueError(f"expected 3 components, got {len(t)}")
    return t  # type: ignore[return-value]


@dataclass
class Volume3D:
    """Scalar intensity or integer label grid with physical spacing."""

    data: np.ndarray
    spacing: Triple = (1.0, 1.0, 1.0)  # (sz, sy, sx) mm per voxel
    origin: Triple = (0.0, 0.0, 0.0)  # (z, y, x) mm
    is_labels: bool = False

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if self.data.ndim != 3:
            raise ValueError(f"Volume3D data must be 3D, got shape {self.data.shape}")
        self.spacing = _as_triple(self.spacing)
        self.origin = _as_triple(self.origin)
        if not all(np.isfinite(s) and s > 0 for s in self.spacing):
            raise ValueError(f"spacing must be strictly positive and finite, got {self.spacing}")
        if self.is_labels:
            if not np.issubdtype(self.data.dtype, np.integer):
                raise ValueError("label volumes must have an integer dtype")
            if self.data.size and self.data.min() < 0:
                raise ValueError("label volumes must be non-negative")
        else:
            if not np.issubdtype(self.data.dtype, np.floating):
                self.data = self.data.astype(np.float32)

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.data.shape  # type: ignore[return-value]


@dataclass
class GridInfo:
    """Mapping from a (possibly coarser) tensor grid to image voxel space."""

    spacing: Triple = (1.0, 1.0, 1.0)  # image voxels per grid cell, per axis
    origin: Triple = (0.0, 0.0, 0.0)  # image-voxel coordinate of cell (0,0,0)

    def __post_init__(self):
        self.spacing = _as_triple(self.spacing)
        self.origin = _as_triple(self.origin)
        if not all(np.isfinite(s) and s > 0 for s in self.spacing):
            raise ValueError(f"grid spacing must be positive, got {self.spacing}")

    def cell_to_image(self, idx: np.ndarray) -> np.ndarray:
        """Grid-cell coordinates (..., 3) to image-voxel coordinates."""
        return np.asarray(idx, dtype=np.float64) * np.array(self.spacing) + np.array(self.origin)

    def image_to_cell(self, pos: np.ndarray) -> np.ndarray:
        return (np.asarray(pos, dtype=np.float64) - np.array(self.origin)) / np.array(self.spacing)


def _check_4d(data: np.ndarray, what: str) -> np.ndarray:
    data = np.asarray(data, dtype=np.float32)
    if data.ndim != 4:
        raise ValueError(f"{what} data must be 4D (C, D, H, W), got shape {data.shape}")
    if any(e < 1 for e in data.shape):
        raise ValueError(f"{what} has a zero-extent dimension: {data.shape}")
    if not np.all(np.isfinite(data)):
        raise ValueError(f"{what} contains non-finite values")
    return data


@dataclass
class FeatureVolume:
    """Channel-first 4D feature tensor on its own grid."""

    data: np.ndarray
    grid: GridInfo = field(default_factory=GridInfo)
    provenance: Provenance = Provenance.EXTERNAL
    extra: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        self.data = _check_4d(self.data, "FeatureVolume")
        if isinstance(self.grid, (tuple, list)):
            self.grid = GridInfo(*self.grid)
        if any(s < 1 for s in self.grid.spacing):
            raise ValueError(
                f"feature grid may not be finer than the image grid: spacing {self.grid.spacing}"
            )
        self.provenance = Provenance(self.provenance)

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def grid_shape(self) -> tuple[int, int, int]:
        return self.data.shape[1:]  # type: ignore[return-value]


@dataclass
class DisplacementField:
    """Dense 3-channel displacement field, (dz, dy, dx) in own-grid voxels."""

    data: np.ndarray
    grid: GridInfo = field(default_factory=GridInfo)
    extra: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        self.data = _check_4d(self.data, "DisplacementField")
        if self.data.shape[0] != 3:
            raise ValueError(f"DisplacementField needs exactly 3 channels, got {self.data.shape[0]}")
        if isinstance(self.grid, (tuple, list)):
            self.grid = GridInfo(*self.grid)

    @property
    def grid_shape(self) -> tuple[int, int, int]:
        return self.data.shape[1:]  # type: ignore[return-value]

    @classmethod
    def zeros(cls, shape: tuple[int, int, int], grid: GridInfo | None = None) -> "DisplacementField":
        return cls(np.zeros((3, *shape), dtype=np.float32), grid or GridInfo())


@dataclass
class LandmarkSet:
    """Paired fixed/moving points in voxel coordinates, (z, y, x)."""

    fixed_points: np.ndarray
    moving_points: np.ndarray
    spacing_fixed: Triple = (1.0, 1.0, 1.0)
    spacing_moving: Triple = (1.0, 1.0, 1.0)

    def __post_init__(self):
        self.fixed_points = np.asarray(self.fixed_points, dtype=np.float64).reshape(-1, 3)
        self.moving_points = np.asarray(self.moving_points, dtype=np.float64).reshape(-1, 3)
        if len(self.fixed_points) != len(self.moving_points):
            raise ValueError(
                f"landmark counts differ: {len(self.fixed_points)} fixed vs "
                f"{len(self.moving_points)} moving"
            )
        if len(self.fixed_points) < 1:
            raise ValueError("landmark set is empty")
        if not (np.all(np.isfinite(self.fixed_points)) and np.all(np.isfinite(self.moving_points))):
            raise ValueError("landmark coordinates must be finite")
        self.spacing_fixed = _as_triple(self.spacing_fixed)
        self.spacing_moving = _as_triple(self.spacing_moving)

    def __len__(self) -> int:
        return len(self.fixed_points)

    def warn_out_of_bounds(self, dims_fixed, dims_moving) -> None:
        """CBCT fields of view crop anatomy; out-of-bounds points warn only."""
        for name, pts, dims in (
            ("fixed", self.fixed_points, dims_fixed),
            ("moving", self.moving_points, dims_moving),
        ):
            hi = np.array(dims, dtype=np.float64) - 1
            bad = np.any((pts < 0) | (pts > hi), axis=1)
            if bad.any():
                warnings.warn(
                    f"{int(bad.sum())} {name} landmark(s) outside volume bounds {dims}",
                    stacklevel=2,
                )
