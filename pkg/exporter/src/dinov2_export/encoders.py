"""Patch encoders: a pretrained ViT backend and a deterministic stand-in.

Both consume float32 image batches of shape (N, 3, H, W) in [0, 1] with H
and W multiples of the 14-pixel patch size, and return per-patch token
grids of shape (N, H // 14, W // 14, embed_dim), class and register tokens
dropped.
"""
from __future__ import annotations

import numpy as np

PATCH = 14
EMBED_DIM = 1024


class LinearPatchEncoder:
    """Seeded random linear map from flattened 14x14x3 patches to tokens.

    A lightweight, fully deterministic stand-in for offline use and tests:
    it has the same patch geometry and output contract as the transformer
    backend but needs no weights file.
    """

    def __init__(self, seed: int = 0, embed_dim: int = EMBED_DIM):
        rng = np.random.default_rng(seed)
        self.embed_dim = embed_dim
        scale = 1.0 / np.sqrt(3 * PATCH * PATCH)
        self.weight = (rng.standard_normal((3 * PATCH * PATCH, embed_dim)) * scale
                       ).astype(np.float32)

    def encode(self, batch: np.ndarray) -> np.ndarray:
        n, c, h, w = batch.shape
        if c != 3 or h % PATCH or w % PATCH:
            raise ValueError(f"batch {batch.shape} must be (N, 3, 14a, 14b)")
        hp, wp = h // PATCH, w // PATCH
        patches = batch.reshape(n, c, hp, PATCH, wp, PATCH)
        patches = patches.transpose(0, 2, 4, 1, 3, 5).reshape(n, hp, wp, -1)
        return patches.astype(np.float32) @ self.weight


class Dinov2Encoder:
    """Pretrained ViT-L/14 backend via transformers, loaded from local weights.

    ``weights`` is a local directory (or a hub identifier when downloads
    are allowed). Inference runs in eval mode without gradients on CPU,
    which keeps repeated runs byte-deterministic.
    """

    def __init__(self, weights: str, allow_download: bool = False, batch_size: int = 4):
        import torch
        from transformers import AutoModel

        self._torch = torch
        torch.use_deterministic_algorithms(True)
        self.batch_size = batch_size
        self.model = AutoModel.from_pretrained(
            weights, local_files_only=not allow_download)
        self.model.eval()
        self.embed_dim = int(self.model.config.hidden_size)
        self.num_prefix = 1 + int(getattr(self.model.config, "num_register_tokens", 0))

    def encode(self, batch: np.ndarray) -> np.ndarray:
        torch = self._torch
        n, c, h, w = batch.shape
        if c != 3 or h % PATCH or w % PATCH:
            raise ValueError(f"batch {batch.shape} must be (N, 3, 14a, 14b)")
        hp, wp = h // PATCH, w // PATCH
        outs = []
        with torch.no_grad():
            for i in range(0, n, self.batch_size):
                x = torch.as_tensor(batch[i:i + self.batch_size])
                hidden = self.model(pixel_values=x).last_hidden_state
                tokens = hidden[:, self.num_prefix:]  # drop class/register tokens
                outs.append(tokens.reshape(-1, hp, wp, self.embed_dim).numpy())
        return np.concatenate(outs)


def make_encoder(name: str, weights: str | None, allow_download: bool, seed: int = 0):
    if name == "linear":
        return LinearPatchEncoder(seed=seed)
    if name == "dinov2":
        if weights is None:
            raise ValueError(
                "dinov2 encoder needs --weights (local pinned checkpoint), or "
                "--allow-download with a hub identifier")
        return Dinov2Encoder(weights, allow_download)
    raise ValueError(f"unknown encoder {name!r}")
