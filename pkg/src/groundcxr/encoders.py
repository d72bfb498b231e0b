"""Image and report encoders with contrastive projection heads.

The image encoder is a small vision transformer over non-overlapping
patches with a learned class token; the report encoder is a bidirectional
transformer over token embeddings.  Both project their class states onto a
shared L2-normalized space for contrastive alignment.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, embedding, l2_normalize
from .modules import EncoderLayer, LayerNorm, Linear, Module, prepend_rows, uniform_init
from .tokenizer import CLS


@dataclass
class EncoderConfig:
    """Shared dimensions for every encoder/decoder in the model."""

    patch_size: int = 8
    image_size: int = 64
    hidden_dim: int = 128       # image and report token states
    projection_dim: int = 64    # contrastive space
    region_dim: int = 128       # pooled anatomical region features
    prompt_dim: int = 128       # prompt token states consumed by fusion
    num_layers: int = 2
    num_heads: int = 4
    ffn_mult: int = 4
    max_text_len: int = 64
    vocab_size: int = 0         # filled in once the tokenizer is built

    def __post_init__(self):
        for name in ("patch_size", "image_size", "hidden_dim", "projection_dim",
                     "region_dim", "prompt_dim", "num_layers", "num_heads", "max_text_len"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.hidden_dim % self.num_heads != 0:
            raise ValueError("hidden_dim must be divisible by num_heads")
        if self.image_size % self.patch_size != 0:
            raise ValueError("image_size must be divisible by patch_size")

    @property
    def patches_per_side(self) -> int:
        return self.image_size // self.patch_size

    @property
    def num_patches(self) -> int:
        return self.patches_per_side ** 2


def patchify(images: np.ndarray, patch_size: int) -> np.ndarray:
    """(B, H, W) -> (B, num_patches, patch_size**2), row-major patch order."""
    b, h, w = images.shape
    if h % patch_size or w % patch_size:
        raise ValueError(f"image {h}x{w} not divisible by patch size {patch_size}")
    nh, nw = h // patch_size, w // patch_size
    x = images.reshape(b, nh, patch_size, nw, patch_size)
    return x.transpose(0, 1, 3, 2, 4).reshape(b, nh * nw, patch_size * patch_size)


def patch_centers(config: EncoderConfig) -> np.ndarray:
    """(num_patches, 2) array of (x, y) pixel centers in patch order."""
    p, n = config.patch_size, config.patches_per_side
    coords = (np.arange(n) + 0.5) * p
    xs, ys = np.meshgrid(coords, coords)  # row-major: y varies over rows
    return np.stack([xs.reshape(-1), ys.reshape(-1)], axis=1)


class ImageEncoder(Module):
    def __init__(self, rng: np.random.Generator, config: EncoderConfig):
        dim = config.hidden_dim
        patch_dim = config.patch_size ** 2
        self.config = config
        self.patch_embed = Linear(rng, patch_dim, dim)
        self.cls_token = Tensor(uniform_init(rng, dim, (1, 1, dim)), requires_grad=True)
        self.pos_embed = Tensor(
            uniform_init(rng, dim, (1, 1 + config.num_patches, dim)), requires_grad=True
        )
        self.layers = [EncoderLayer(rng, dim, config.num_heads) for _ in range(config.num_layers)]
        self.final_norm = LayerNorm(dim)
        self.proj = Linear(rng, dim, config.projection_dim)

    def __call__(self, images: np.ndarray) -> tuple[Tensor, Tensor]:
        """(B, H, W) grayscale in [0, 1] -> (token states (B, 1+P, D), unit projection (B, Np))."""
        images = np.asarray(images, dtype=np.float64)
        if images.ndim == 2:
            images = images[None]
        patches = patchify(images, self.config.patch_size)
        if patches.shape[1] != self.config.num_patches:
            raise ValueError(
                f"expected {self.config.num_patches} patches, got {patches.shape[1]}"
            )
        x = self.patch_embed(Tensor(patches))
        x = prepend_rows(self.cls_token, x)
        x = x + self.pos_embed
        for layer in self.layers:
            x = layer(x)
        x = self.final_norm(x)
        projected = l2_normalize(self.proj(x[:, 0, :]))
        return x, projected


class ReportEncoder(Module):
    def __init__(self, rng: np.random.Generator, config: EncoderConfig):
        dim = config.hidden_dim
        if config.vocab_size <= 0:
            raise ValueError("vocab_size must be set before building the report encoder")
        self.config = config
        self.token_embed = Tensor(
            uniform_init(rng, dim, (config.vocab_size, dim)), requires_grad=True
        )
        self.pos_embed = Tensor(
            uniform_init(rng, dim, (1, config.max_text_len, dim)), requires_grad=True
        )
        self.layers = [EncoderLayer(rng, dim, config.num_heads) for _ in range(config.num_layers)]
        self.final_norm = LayerNorm(dim)
        self.proj = Linear(rng, dim, config.projection_dim)

    def __call__(self, ids: np.ndarray, mask: np.ndarray) -> tuple[Tensor, Tensor]:
        """(B, L) ids and mask -> (token states (B, L, D), unit projection (B, Np))."""
        ids = np.asarray(ids)
        if ids.ndim == 1:
            ids, mask = ids[None], np.asarray(mask)[None]
        if ids.shape[1] > self.config.max_text_len:
            raise ValueError(
                f"sequence length {ids.shape[1]} exceeds max_text_len {self.config.max_text_len}"
            )
        if (ids[:, 0] != CLS).any():
            raise ValueError("report sequences must start with [CLS]")
        x = embedding(self.token_embed, ids) + self.pos_embed[:, : ids.shape[1], :]
        for layer in self.layers:
            x = layer(x, key_mask=mask)
        x = self.final_norm(x)
        projected = l2_normalize(self.proj(x[:, 0, :]))
        return x, projected
