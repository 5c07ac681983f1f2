"""Domain types for the latent spaces and the residual arithmetic shared by all modules.

Three spaces appear throughout: the shared vision-language embedding space
(``Embedding``), the generator's intermediate latent space (``WLatent``) and the
per-layer style space (``SBundle``, an ordered list of style vectors whose layer
identity is semantic and must never be flattened implicitly).

All latent arithmetic is 32-bit floating point by convention; tensors of other
dtypes are accepted for test tooling (float64 gradient checks) but the
production paths construct float32 values.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

__all__ = [
    "ShapeMismatchError",
    "Embedding",
    "WLatent",
    "SBundle",
    "Image",
    "Direction",
    "residual",
    "add_scaled",
]


class ShapeMismatchError(ValueError):
    """Raised when two latents that must share a shape do not."""


def _check_vector(values: torch.Tensor, kind: str) -> None:
    if values.dim() != 1:
        raise ShapeMismatchError(f"{kind} must be 1-D, got shape {tuple(values.shape)}")
    if not torch.isfinite(values).all():
        raise ValueError(f"{kind} contains non-finite entries")


@dataclass(frozen=True)
class Embedding:
    """A point in the shared vision-language embedding space."""

    values: torch.Tensor

    def __post_init__(self) -> None:
        _check_vector(self.values, "Embedding")

    def __len__(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class WLatent:
    """A generator latent in w space."""

    values: torch.Tensor

    def __post_init__(self) -> None:
        _check_vector(self.values, "WLatent")

    def __len__(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class SBundle:
    """Per-layer style vectors; layer i has its own dimension.

    Stored as an ordered tuple of 1-D tensors. Layer identity is meaningful
    (losses average per layer), so no operation flattens the bundle implicitly.
    """

    layers: tuple[torch.Tensor, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "layers", tuple(self.layers))
        for i, layer in enumerate(self.layers):
            _check_vector(layer, f"SBundle layer {i}")

    def __len__(self) -> int:
        return len(self.layers)

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(layer.shape[0] for layer in self.layers)


@dataclass(frozen=True)
class Image:
    """An H x W x 3 pixel grid in the generator's [-1, 1] convention."""

    pixels: torch.Tensor

    def __post_init__(self) -> None:
        if self.pixels.dim() != 3 or self.pixels.shape[2] != 3:
            raise ShapeMismatchError(
                f"Image must be HxWx3, got shape {tuple(self.pixels.shape)}"
            )
        if not torch.isfinite(self.pixels).all():
            raise ValueError("Image contains non-finite pixels")

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


@dataclass(frozen=True)
class Direction:
    """An edit: paired residuals in w space and s space.

    Strength and layer mask are applied when the direction is decoded, not here.
    """

    delta_w: WLatent
    delta_s: SBundle


def _tensor_residual(x: torch.Tensor, base: torch.Tensor) -> torch.Tensor:
    if x.shape != base.shape:
        raise ShapeMismatchError(
            f"residual shapes differ: {tuple(x.shape)} vs {tuple(base.shape)}"
        )
    return x - base


def _tensor_add_scaled(base: torch.Tensor, delta: torch.Tensor, strength: float) -> torch.Tensor:
    if base.shape != delta.shape:
        raise ShapeMismatchError(
            f"add_scaled shapes differ: {tuple(base.shape)} vs {tuple(delta.shape)}"
        )
    return base + strength * delta


def residual(x, base):
    """Element-wise ``x - base``; the residual against a manipulation center.

    Accepts matching pairs of Embedding, WLatent, SBundle or raw tensors.
    Inputs are never modified.
    """
    if isinstance(x, Embedding) and isinstance(base, Embedding):
        return Embedding(_tensor_residual(x.values, base.values))
    if isinstance(x, WLatent) and isinstance(base, WLatent):
        return WLatent(_tensor_residual(x.values, base.values))
    if isinstance(x, SBundle) and isinstance(base, SBundle):
        if len(x) != len(base):
            raise ShapeMismatchError(
                f"residual layer counts differ: {len(x)} vs {len(base)}"
            )
        return SBundle(tuple(_tensor_residual(a, b) for a, b in zip(x.layers, base.layers)))
    if isinstance(x, torch.Tensor) and isinstance(base, torch.Tensor):
        return _tensor_residual(x, base)
    raise TypeError(f"residual cannot pair {type(x).__name__} with {type(base).__name__}")


def add_scaled(base, delta, strength: float):
    """``base + strength * delta``; applies a direction at decode time."""
    if not (isinstance(strength, (int, float)) and torch.isfinite(torch.tensor(float(strength)))):
        raise ValueError(f"strength must be finite, got {strength!r}")
    strength = float(strength)
    if isinstance(base, Embedding) and isinstance(delta, Embedding):
        return Embedding(_tensor_add_scaled(base.values, delta.values, strength))
    if isinstance(base, WLatent) and isinstance(delta, WLatent):
        return WLatent(_tensor_add_scaled(base.values, delta.values, strength))
    if isinstance(base, SBundle) and isinstance(delta, SBundle):
        if len(base) != len(delta):
            raise ShapeMismatchError(
                f"add_scaled layer counts differ: {len(base)} vs {len(delta)}"
            )
        return SBundle(
            tuple(_tensor_add_scaled(a, b, strength) for a, b in zip(base.layers, delta.layers))
        )
    if isinstance(base, torch.Tensor) and isinstance(delta, torch.Tensor):
        return _tensor_add_scaled(base, delta, strength)
    raise TypeError(
        f"add_scaled cannot pair {type(base).__name__} with {type(delta).__name__}"
    )
