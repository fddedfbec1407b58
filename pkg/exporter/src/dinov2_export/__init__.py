"""Slice-wise ViT feature export for 3D volumes, written as FTV tensors."""
from .encoders import EMBED_DIM, PATCH, Dinov2Encoder, LinearPatchEncoder, make_encoder
from .export import VIEWS, ExportConfig, export_features, resize_and_crop, window_slice
from .ftv import write_ftv
from .nifti import NiftiVolume, read_nifti

__all__ = [
    "EMBED_DIM", "PATCH", "Dinov2Encoder", "LinearPatchEncoder", "make_encoder",
    "VIEWS", "ExportConfig", "export_features", "resize_and_crop", "window_slice",
    "write_ftv", "NiftiVolume", "read_nifti",
]
