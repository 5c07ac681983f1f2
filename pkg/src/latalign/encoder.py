"""Vision-language encoder adapters (image branch and text branch).

Both branches embed into one shared d_clip-dimensional space. The toy encoder
is frozen and seeded: the image branch is a random linear map over pooled
pixels followed by tanh (differentiable, so the toy encoder-generator composite
is well defined); the text branch hashes whitespace tokens into a fixed bucket
table and averages the bucket embeddings. The two toy branches deliberately
share no structure — text-path tests validate mechanics, not semantics, which
only exist in real pretrained weights.
"""

from __future__ import annotations

import abc
import hashlib
import math
from dataclasses import dataclass

import torch
from torch import nn

from .spaces import Embedding, Image, ShapeMismatchError

__all__ = ["EncoderConfig", "EncoderAdapter", "ToyEncoder", "build_encoder"]


@dataclass(frozen=True)
class EncoderConfig:
    d_clip: int = 64
    input_resolution: tuple[int, int] = (32, 32)
    pool: int = 4
    vocab_buckets: int = 4096
    seed: int = 0
    normalize: bool = False  # unit-normalize embeddings; off: norms carry information

    def __post_init__(self) -> None:
        object.__setattr__(self, "input_resolution", tuple(self.input_resolution))
        if self.d_clip < 1 or self.vocab_buckets < 1 or self.pool < 1:
            raise ValueError("d_clip, vocab_buckets and pool must be >= 1")
        if any(r % self.pool for r in self.input_resolution):
            raise ValueError(
                f"pool {self.pool} must divide resolution {self.input_resolution}"
            )


class EncoderAdapter(abc.ABC):
    """Frozen encoder pair; image and text land in the same d_clip space."""

    config: EncoderConfig

    @property
    def d_clip(self) -> int:
        return self.config.d_clip

    @abc.abstractmethod
    def encode_image(self, image: Image) -> Embedding:
        ...

    @abc.abstractmethod
    def encode_text(self, text: str) -> Embedding:
        ...


class ToyEncoder(nn.Module, EncoderAdapter):
    """Seeded frozen toy encoder for weight-free testing."""

    def __init__(self, config: EncoderConfig | None = None):
        super().__init__()
        self.config = config or EncoderConfig()
        cfg = self.config
        g = torch.Generator().manual_seed(cfg.seed)
        h, w = (r // cfg.pool for r in cfg.input_resolution)
        d_in = h * w * 3
        self.register_buffer(
            "img_weight", torch.randn(cfg.d_clip, d_in, generator=g) / math.sqrt(d_in)
        )
        self.register_buffer("img_bias", 0.5 * torch.randn(cfg.d_clip, generator=g))
        self.register_buffer(
            "bucket_table", torch.randn(cfg.vocab_buckets, cfg.d_clip, generator=g)
        )
        for p in self.buffers():
            p.requires_grad_(False)

    def encode_image(self, image: Image) -> Embedding:
        cfg = self.config
        px = image.pixels
        if (px.shape[0], px.shape[1]) != cfg.input_resolution:
            raise ShapeMismatchError(
                f"image is {tuple(px.shape[:2])}, encoder expects {cfg.input_resolution}"
            )
        if not torch.isfinite(px).all():
            raise ValueError("image contains non-finite pixels")
        px = px.to(self.img_weight.dtype)
        # (H, W, 3) -> (3, H, W) -> pooled -> flat
        pooled = torch.nn.functional.avg_pool2d(
            px.permute(2, 0, 1).unsqueeze(0), cfg.pool
        ).flatten()
        emb = torch.tanh(pooled @ self.img_weight.T + self.img_bias)
        if cfg.normalize:
            emb = emb / emb.norm().clamp_min(1e-12)
        return Embedding(emb)

    def _bucket(self, token: str) -> int:
        digest = hashlib.blake2s(
            token.encode("utf-8"), digest_size=8, key=str(self.config.seed).encode()
        ).digest()
        return int.from_bytes(digest, "little") % self.config.vocab_buckets

    def encode_text(self, text: str) -> Embedding:
        tokens = text.lower().split()
        if not tokens:
            raise ValueError("text must contain at least one token")
        idx = torch.tensor([self._bucket(t) for t in tokens], dtype=torch.long)
        emb = self.bucket_table[idx].mean(dim=0)
        if self.config.normalize:
            emb = emb / emb.norm().clamp_min(1e-12)
        return Embedding(emb)


_ENCODERS = {"toy": ToyEncoder}


def build_encoder(kind: str, config: EncoderConfig) -> EncoderAdapter:
    """Adapter registry; real pretrained towers register here as extras."""
    if kind not in _ENCODERS:
        raise KeyError(f"unknown encoder adapter {kind!r}; known: {sorted(_ENCODERS)}")
    return _ENCODERS[kind](config)
