"""Scikit-learn style wrappers around the functional pipeline.

These make the descriptor extraction, channel reduction, and registration
stages composable with sklearn tooling (get_params/set_params, cloning).
The functional API in the sibling modules remains the primary surface.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from .adam import AdamConfig
from .costvol import ConvexConfig
from .mind import MindConfig, encode_mind_ssc
from .pca import PcaConfig, fit_joint_basis
from .register import register
from .types import FeatureVolume, Provenance, Volume3D
from .warp import NEAREST, TRILINEAR, upsample_field, warp


class MindDescriptorExtractor(BaseEstimator, TransformerMixin):
    """Stateless transformer: intensity volume -> 12-channel SSC features."""

    def __init__(self, patch_radius=1, dilation=2, variance_floor=None):
        self.patch_radius = patch_radius
        self.dilation = dilation
        self.variance_floor = variance_floor

    def fit(self, X, y=None):
        return self

    def transform(self, X: Volume3D | np.ndarray) -> FeatureVolume:
        if not isinstance(X, Volume3D):
            X = Volume3D(np.asarray(X))
        cfg = MindConfig(self.patch_radius, self.dilation, self.variance_floor)
        return encode_mind_ssc(X, cfg)


class JointPcaReducer(BaseEstimator, TransformerMixin):
    """Fit a shared PCA basis on pooled tokens; project volumes onto it."""

    def __init__(self, k=24, mode="FULL", oversampling=10, power_iterations=2, seed=0):
        self.k = k
        self.mode = mode
        self.oversampling = oversampling
        self.power_iterations = power_iterations
        self.seed = seed

    def _config(self) -> PcaConfig:
        return PcaConfig(self.k, self.mode, self.oversampling, self.power_iterations, self.seed)

    @staticmethod
    def _tokens(fvs) -> np.ndarray:
        mats = [fv.data.reshape(fv.channels, -1).T.astype(np.float64) for fv in fvs]
        return np.concatenate(mats)

    def fit(self, X, y=None):
        """X: sequence of FeatureVolumes whose tokens are pooled."""
        fvs = list(X)
        if not fvs:
            raise ValueError("need at least one feature volume")
        if len({fv.channels for fv in fvs}) != 1:
            raise ValueError("feature volumes must share a channel count")
        self.basis_ = fit_joint_basis(self._tokens(fvs), self._config())
        return self

    def transform(self, X: FeatureVolume) -> FeatureVolume:
        if not hasattr(self, "basis_"):
            raise NotFittedError("JointPcaReducer is not fitted")
        tokens = X.data.reshape(X.channels, -1).T.astype(np.float64)
        proj = self.basis_.project(tokens).T.reshape(self.k, *X.grid_shape)
        extra = dict(X.extra)
        extra["explained_variance_ratio"] = self.basis_.explained_variance_ratio.tolist()
        return FeatureVolume(proj.astype(np.float32), X.grid, Provenance.PCA_REDUCED, extra)


class ConvexAdamRegistrar(BaseEstimator):
    """fit(fixed_features, moving_features) estimates `field_`; transform warps."""

    def __init__(self, search_radius=8, quantization=2, coarse_stride=2,
                 coupling_schedule=(1.0, 2.0, 4.0, 8.0), smoothing_sigma=1.0,
                 epochs=50, learning_rate=1.0, reg_weight=2.0, lcc_window=1,
                 loss="LCC"):
        self.search_radius = search_radius
        self.quantization = quantization
        self.coarse_stride = coarse_stride
        self.coupling_schedule = coupling_schedule
        self.smoothing_sigma = smoothing_sigma
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.reg_weight = reg_weight
        self.lcc_window = lcc_window
        self.loss = loss

    def fit(self, fixed: FeatureVolume, moving: FeatureVolume):
        cc = ConvexConfig(self.search_radius, self.quantization, self.coarse_stride,
                          tuple(self.coupling_schedule), self.smoothing_sigma)
        ac = AdamConfig(self.epochs, self.learning_rate, self.reg_weight,
                        self.lcc_window, self.loss)
        self.field_ = register(fixed, moving, cc, ac)
        return self

    def transform(self, X: Volume3D | FeatureVolume, interpolation: str | None = None):
        """Warp a moving-space volume onto the fixed grid with the fitted field."""
        if not hasattr(self, "field_"):
            raise NotFittedError("ConvexAdamRegistrar is not fitted")
        if interpolation is None:
            is_labels = isinstance(X, Volume3D) and X.is_labels
            interpolation = NEAREST if is_labels else TRILINEAR
        shape = X.data.shape if isinstance(X, Volume3D) else X.grid_shape
        grid = X.grid if isinstance(X, FeatureVolume) else None
        field = self.field_
        if field.grid_shape != tuple(shape):
            from .types import GridInfo
            field = upsample_field(field, (shape, grid or GridInfo()))
        return warp(X, field, interpolation)
