"""Style-based generator adapters.

The training and inference code only ever talks to :class:`GeneratorAdapter`:
``sample`` draws a latent triple, ``styles_of`` derives the per-layer style
vectors from w via frozen affine maps, ``synthesize_from_s`` decodes a style
bundle into pixels, ``average_w`` estimates the w-space manipulation center.

:class:`ToyGenerator` is a frozen, seeded, fully differentiable stand-in that
makes the whole pipeline runnable in minutes on one CPU core with no pretrained
weights. Real backbones plug in behind the same interface as optional extras;
no test depends on them.
"""

from __future__ import annotations

import abc
import math
from dataclasses import dataclass

import torch
from torch import nn

from .spaces import Image, SBundle, ShapeMismatchError, WLatent

__all__ = ["GeneratorConfig", "GeneratorAdapter", "ToyGenerator", "build_generator"]


@dataclass(frozen=True)
class GeneratorConfig:
    d_z: int = 16
    d_w: int = 32
    n_layers: int = 4
    dim_s: tuple[int, ...] = (32, 32, 16, 16)
    resolution: tuple[int, int] = (32, 32)
    seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "dim_s", tuple(self.dim_s))
        object.__setattr__(self, "resolution", tuple(self.resolution))
        if self.n_layers < 1:
            raise ValueError(f"n_layers must be >= 1, got {self.n_layers}")
        if len(self.dim_s) != self.n_layers:
            raise ValueError(
                f"dim_s has {len(self.dim_s)} entries but n_layers is {self.n_layers}"
            )
        if min((self.d_z, self.d_w) + self.dim_s) < 1:
            raise ValueError("all latent dimensions must be >= 1")
        if min(self.resolution) < 1:
            raise ValueError(f"resolution must be positive, got {self.resolution}")


class GeneratorAdapter(abc.ABC):
    """Frozen generator; all operations deterministic in their inputs."""

    config: GeneratorConfig

    @abc.abstractmethod
    def sample(self, z: torch.Tensor) -> tuple[WLatent, SBundle, Image]:
        """Map a d_z noise vector to its (w, s, image) triple."""

    @abc.abstractmethod
    def styles_of(self, w: WLatent) -> SBundle:
        """Per-layer affine projection of w into style space."""

    @abc.abstractmethod
    def synthesize_from_s(self, s: SBundle) -> Image:
        """Decode a style bundle into pixels in [-1, 1]."""

    @abc.abstractmethod
    def average_w(self, num_samples: int) -> WLatent:
        """Mean w over seeded standard-normal z draws."""


class ToyGenerator(nn.Module, GeneratorAdapter):
    """Seeded, frozen, differentiable toy generator.

    w = A z + b; s_i = A_i w + b_i; pixels = tanh(sum_i tanh(U_i s_i + c_i)).
    Parameters are drawn once from a standard normal scaled by 1/sqrt(fan_in)
    and registered as buffers, so they are frozen and follow dtype casts.
    """

    def __init__(self, config: GeneratorConfig | None = None):
        super().__init__()
        self.config = config or GeneratorConfig()
        cfg = self.config
        g = torch.Generator().manual_seed(cfg.seed)

        def draw(*shape: int, fan_in: int) -> torch.Tensor:
            return torch.randn(*shape, generator=g) / math.sqrt(fan_in)

        self.register_buffer("w_weight", draw(cfg.d_w, cfg.d_z, fan_in=cfg.d_z))
        self.register_buffer("w_bias", torch.randn(cfg.d_w, generator=g))
        n_pixels = cfg.resolution[0] * cfg.resolution[1] * 3
        for i, dim in enumerate(cfg.dim_s):
            self.register_buffer(f"s_weight_{i}", draw(dim, cfg.d_w, fan_in=cfg.d_w))
            self.register_buffer(f"s_bias_{i}", 0.5 * torch.randn(dim, generator=g))
            self.register_buffer(f"up_weight_{i}", draw(n_pixels, dim, fan_in=dim))
            self.register_buffer(f"up_bias_{i}", 0.1 * torch.randn(n_pixels, generator=g))
        for p in self.buffers():
            p.requires_grad_(False)

    def _check_z(self, z: torch.Tensor) -> torch.Tensor:
        if z.dim() != 1 or z.shape[0] != self.config.d_z:
            raise ShapeMismatchError(
                f"z must have shape ({self.config.d_z},), got {tuple(z.shape)}"
            )
        if not torch.isfinite(z).all():
            raise ValueError("z contains non-finite entries")
        return z.to(self.w_weight.dtype)

    def _map_z(self, z: torch.Tensor) -> torch.Tensor:
        return z @ self.w_weight.T + self.w_bias

    def sample(self, z: torch.Tensor) -> tuple[WLatent, SBundle, Image]:
        z = self._check_z(z)
        w = WLatent(self._map_z(z))
        s = self.styles_of(w)
        return w, s, self.synthesize_from_s(s)

    def styles_of(self, w: WLatent) -> SBundle:
        wv = w.values
        if wv.shape[0] != self.config.d_w:
            raise ShapeMismatchError(
                f"w must have shape ({self.config.d_w},), got {tuple(wv.shape)}"
            )
        layers = tuple(
            wv @ getattr(self, f"s_weight_{i}").T + getattr(self, f"s_bias_{i}")
            for i in range(self.config.n_layers)
        )
        return SBundle(layers)

    def synthesize_from_s(self, s: SBundle) -> Image:
        if s.dims != self.config.dim_s:
            raise ShapeMismatchError(
                f"style dims {s.dims} do not match generator dims {self.config.dim_s}"
            )
        total = None
        for i, layer in enumerate(s.layers):
            proj = torch.tanh(
                layer @ getattr(self, f"up_weight_{i}").T + getattr(self, f"up_bias_{i}")
            )
            total = proj if total is None else total + proj
        h, wdt = self.config.resolution
        return Image(torch.tanh(total).reshape(h, wdt, 3))

    def average_w(self, num_samples: int) -> WLatent:
        if num_samples < 1:
            raise ValueError(f"num_samples must be >= 1, got {num_samples}")
        g = torch.Generator().manual_seed(self.config.seed)
        z = torch.randn(num_samples, self.config.d_z, generator=g).to(self.w_weight.dtype)
        w = z @ self.w_weight.T + self.w_bias
        return WLatent(w.mean(dim=0))


_GENERATORS = {"toy": ToyGenerator}


def build_generator(kind: str, config: GeneratorConfig) -> GeneratorAdapter:
    """Adapter registry; real pretrained backbones register here as extras."""
    if kind not in _GENERATORS:
        raise KeyError(f"unknown generator adapter {kind!r}; known: {sorted(_GENERATORS)}")
    return _GENERATORS[kind](config)
