"""featreg: training-free deformable 3D registration on dense feature volumes."""

from .adam import AdamConfig, adam_refine, lcc_gradient, lcc_similarity
from .costvol import ConvexConfig, CostVolume, build_cost_volume, coupled_convex
from .ensemble import compose_fields, mean_fields
from .estimators import ConvexAdamRegistrar, JointPcaReducer, MindDescriptorExtractor
from .io import (
    read_feature_tensor,
    read_landmarks,
    read_volume,
    write_feature_tensor,
    write_volume,
)
from .metrics import dice, sd_log_jacobian, tre, tre30
from .mind import MindConfig, encode_mind_ssc
from .pca import PcaConfig, joint_pca
from .register import register
from .slices import interpolate_slice_gap
from .types import (
    DisplacementField,
    FeatureVolume,
    GridInfo,
    LandmarkSet,
    Provenance,
    Volume3D,
)
from .warp import NEAREST, TRILINEAR, upsample_field, warp

__version__ = "0.1.0"

__all__ = [
    "AdamConfig", "ConvexConfig", "CostVolume", "DisplacementField", "FeatureVolume",
    "GridInfo", "LandmarkSet", "MindConfig", "PcaConfig", "Provenance", "Volume3D",
    "ConvexAdamRegistrar", "JointPcaReducer", "MindDescriptorExtractor",
    "adam_refine", "build_cost_volume", "compose_fields", "coupled_convex", "dice",
    "encode_mind_ssc", "interpolate_slice_gap", "joint_pca", "lcc_gradient",
    "lcc_similarity", "mean_fields", "read_feature_tensor", "read_landmarks",
    "read_volume", "register", "sd_log_jacobian", "tre", "tre30", "upsample_field",
    "warp", "write_feature_tensor", "write_volume", "NEAREST", "TRILINEAR",
]
