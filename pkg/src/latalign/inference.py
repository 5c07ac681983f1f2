"""Deployment modes of a trained alignment model.

Everything runs from major-center residuals: inversion encodes an image and
maps its embedding residual into w and s; generation swaps the image encoder
for the text encoder; a manipulation direction is the difference between the
mapped residuals of two prompts. Directions decode additively, so strength and
 a layer mask are free knobs at decode time (defaults reproduce plain
unit-strength, all-layer application).

All operations are read-only over the frozen model and reentrant.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import torch

from .centers import CenterSet
from .encoder import EncoderAdapter
from .generator import GeneratorAdapter
from .mappers import MapperStack
from .spaces import Direction, Image, SBundle, WLatent
from .trainer import Checkpoint, build_adapters, centers_from_arrays

__all__ = ["EditRequest", "AlignedModel"]


@dataclass(frozen=True)
class EditRequest:
    src_text: str
    trg_text: str
    strength: float = 1.0
    layer_mask: frozenset[int] | None = None  # None: all layers
    space: str = "s"

    def __post_init__(self) -> None:
        if self.space not in ("w", "s"):
            raise ValueError(f"space must be 'w' or 's', got {self.space!r}")
        if not (self.strength == self.strength and abs(self.strength) != float("inf")):
            raise ValueError(f"strength must be finite, got {self.strength}")
        if self.layer_mask is not None:
            object.__setattr__(self, "layer_mask", frozenset(self.layer_mask))


class AlignedModel:
    """Frozen (generator, encoder, mapper stack, centers) bundle for serving."""

    def __init__(
        self,
        gen: GeneratorAdapter,
        enc: EncoderAdapter,
        stack: MapperStack,
        centers: CenterSet,
        apply_asm_in_directions: bool = True,
    ):
        self.gen = gen
        self.enc = enc
        self.stack = stack
        self.centers = centers
        # whether direction branches run the modulated s path or the raw heads
        self.apply_asm_in_directions = apply_asm_in_directions
        self.stack.eval()
        for p in self.stack.parameters():
            p.requires_grad_(False)

    @classmethod
    def from_checkpoint(cls, checkpoint: Checkpoint | str) -> "AlignedModel":
        if not isinstance(checkpoint, Checkpoint):
            checkpoint = Checkpoint.load(checkpoint)
        cfg = checkpoint.config
        gen, enc = build_adapters(cfg)
        mapper_cfg = dataclasses.replace(
            cfg.mapper, learnable_center=(cfg.center_mode == "learnable")
        )
        stack = MapperStack(
            d_clip=enc.d_clip,
            d_w=gen.config.d_w,
            dim_s=gen.config.dim_s,
            config=mapper_cfg,
            seed=cfg.seed + 2,
        )
        stack.load_param_arrays(checkpoint.arrays)
        centers = centers_from_arrays(checkpoint.arrays)
        return cls(gen, enc, stack, centers)

    @property
    def n_layers(self) -> int:
        return self.gen.config.n_layers

    def _full_mask(self) -> frozenset[int]:
        return frozenset(range(self.n_layers))

    def invert(self, image: Image) -> tuple[WLatent, SBundle]:
        """Recover (w, s) whose decode approximates the image (by-product inversion)."""
        with torch.no_grad():
            delta_f = self.enc.encode_image(image).values - self.centers.f_base.values
            delta_w = self.stack.map_w(delta_f)
            w = self.centers.w_base.values + delta_w
            delta_s = self.stack.map_s(delta_w)
            s = tuple(
                base + d for base, d in zip(self.centers.s_base.layers, delta_s)
            )
        return WLatent(w), SBundle(s)

    def reconstruct(self, image: Image) -> Image:
        """Decode of the inversion; the 'after' baseline for edits."""
        _, s = self.invert(image)
        with torch.no_grad():
            return self.gen.synthesize_from_s(s)

    def generate(self, text: str) -> Image:
        """Text-to-image: the text embedding plays the image embedding's role."""
        with torch.no_grad():
            delta_f = self.enc.encode_text(text).values - self.centers.f_base.values
            delta_s = self.stack.map_s(self.stack.map_w(delta_f))
            s = SBundle(
                tuple(base + d for base, d in zip(self.centers.s_base.layers, delta_s))
            )
            return self.gen.synthesize_from_s(s)

    def _branch_s(self, delta_w: torch.Tensor) -> list[torch.Tensor]:
        if self.apply_asm_in_directions:
            return self.stack.map_s(delta_w)
        return self.stack.map_s_raw(delta_w)

    def direction_from_texts(self, src_text: str, trg_text: str) -> Direction:
        """Manipulation direction between two prompts, in both w and s space."""
        with torch.no_grad():
            f_base = self.centers.f_base.values
            delta_f_src = self.enc.encode_text(src_text).values - f_base
            delta_f_trg = self.enc.encode_text(trg_text).values - f_base
            delta_w_src = self.stack.map_w(delta_f_src)
            delta_w_trg = self.stack.map_w(delta_f_trg)
            delta_w = delta_w_trg - delta_w_src
            s_src = self._branch_s(delta_w_src)
            s_trg = self._branch_s(delta_w_trg)
            delta_s = tuple(t - s for s, t in zip(s_src, s_trg))
        return Direction(delta_w=WLatent(delta_w), delta_s=SBundle(delta_s))

    def apply_direction(
        self,
        w: WLatent,
        s: SBundle,
        direction: Direction,
        strength: float = 1.0,
        layer_mask: frozenset[int] | None = None,
        space: str = "s",
    ) -> Image:
        """Decode an already-inverted latent with a direction applied."""
        mask = self._full_mask() if layer_mask is None else frozenset(layer_mask)
        bad = [i for i in mask if not 0 <= i < self.n_layers]
        if bad:
            raise ValueError(f"layer_mask indices {bad} outside 0..{self.n_layers - 1}")
        with torch.no_grad():
            if space == "w":
                w_edit = WLatent(w.values + strength * direction.delta_w.values)
                return self.gen.synthesize_from_s(self.gen.styles_of(w_edit))
            if space != "s":
                raise ValueError(f"space must be 'w' or 's', got {space!r}")
            layers = tuple(
                layer + strength * d if i in mask else layer
                for i, (layer, d) in enumerate(zip(s.layers, direction.delta_s.layers))
            )
            return self.gen.synthesize_from_s(SBundle(layers))

    def apply_edit(self, source: Image, request: EditRequest) -> Image:
        """Invert, mine the direction from the request's prompts, decode the edit."""
        w, s = self.invert(source)
        direction = self.direction_from_texts(request.src_text, request.trg_text)
        return self.apply_direction(
            w,
            s,
            direction,
            strength=request.strength,
            layer_mask=request.layer_mask,
            space=request.space,
        )
