"""Manipulation centers and the temporal-relative-consistency queue bank.

Residuals are always computed against a center triple (f_base, w_base, s_base).
The w/s centers come from the generator's average latent; for the embedding
space four strategies exist: the encoded average image (default and best),
a text template, an exponential moving average maintained during training, and
a learnable bias (which lives inside the mapper stack, gated by config).

The TRC bank keeps two paired FIFO queues of recently sampled (f, w); training
can draw multi-center reference pairs from it instead of the single average
center, which acts as latent-level batch expansion and augmentation.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import torch

from .encoder import EncoderAdapter
from .generator import GeneratorAdapter
from .spaces import Embedding, SBundle, ShapeMismatchError, WLatent

__all__ = [
    "CenterSet",
    "CenterBank",
    "compute_average_center",
    "compute_text_center",
    "ema_update",
]

DEFAULT_QUEUE_CAPACITY = 4096
DEFAULT_AVERAGE_SAMPLES = 100_000


@dataclass(frozen=True)
class CenterSet:
    f_base: Embedding
    w_base: WLatent
    s_base: SBundle


class CenterBank:
    """Paired FIFO ring buffers of recent (f, w) samples.

    Entry k of both queues always comes from the same pushed sample; a single
    deque of pairs makes the pairing structural. Single-writer: only the
    training loop mutates; sampling never does.
    """

    def __init__(self, capacity: int = DEFAULT_QUEUE_CAPACITY):
        if capacity < 1:
            raise ValueError(f"capacity must be >= 1, got {capacity}")
        self.capacity = capacity
        self._pairs: deque[tuple[torch.Tensor, torch.Tensor]] = deque(maxlen=capacity)

    def __len__(self) -> int:
        return len(self._pairs)

    def push(self, f: Embedding, w: WLatent) -> None:
        fv, wv = f.values.detach(), w.values.detach()
        if self._pairs:
            f0, w0 = self._pairs[0]
            if fv.shape != f0.shape or wv.shape != w0.shape:
                raise ShapeMismatchError(
                    f"push shapes {tuple(fv.shape)}/{tuple(wv.shape)} do not match "
                    f"bank shapes {tuple(f0.shape)}/{tuple(w0.shape)}"
                )
        self._pairs.append((fv, wv))

    def sample_pairs(
        self, k: int | None, generator: torch.Generator
    ) -> tuple[torch.Tensor, torch.Tensor]:
        """Draw k paired entries uniformly with replacement (default k: bank fill).

        Returns stacked (k, d_clip) and (k, d_w) tensors in draw order.
        """
        if not self._pairs:
            raise ValueError("cannot sample from an empty CenterBank")
        if k is None:
            k = len(self._pairs)
        if k < 1:
            raise ValueError(f"k must be >= 1, got {k}")
        idx = torch.randint(len(self._pairs), (k,), generator=generator)
        fs = torch.stack([self._pairs[i][0] for i in idx.tolist()])
        ws = torch.stack([self._pairs[i][1] for i in idx.tolist()])
        return fs, ws

    def sample_center_pairs(
        self, k: int | None, generator: torch.Generator
    ) -> list[tuple[Embedding, WLatent]]:
        """Typed view of :meth:`sample_pairs`."""
        fs, ws = self.sample_pairs(k, generator)
        return [(Embedding(f), WLatent(w)) for f, w in zip(fs, ws)]

    def snapshot(self) -> tuple[torch.Tensor, torch.Tensor]:
        """Copy the buffers in FIFO order as (L, d_clip) and (L, d_w) arrays."""
        if not self._pairs:
            return torch.empty(0, 0), torch.empty(0, 0)
        fs = torch.stack([p[0] for p in self._pairs]).clone()
        ws = torch.stack([p[1] for p in self._pairs]).clone()
        return fs, ws

    @classmethod
    def from_snapshot(
        cls, fs: torch.Tensor, ws: torch.Tensor, capacity: int
    ) -> "CenterBank":
        bank = cls(capacity)
        for f, w in zip(fs, ws):
            bank._pairs.append((f.clone(), w.clone()))
        return bank


def compute_average_center(
    gen: GeneratorAdapter,
    enc: EncoderAdapter,
    num_samples: int = DEFAULT_AVERAGE_SAMPLES,
) -> CenterSet:
    """The default center: average w, its styles, and the encoded average image."""
    if num_samples < 1:
        raise ValueError(f"num_samples must be >= 1, got {num_samples}")
    with torch.no_grad():
        w_base = gen.average_w(num_samples)
        s_base = gen.styles_of(w_base)
        f_base = enc.encode_image(gen.synthesize_from_s(s_base))
    return CenterSet(f_base=f_base, w_base=w_base, s_base=s_base)


def compute_text_center(enc: EncoderAdapter, class_name: str) -> Embedding:
    """Embedding of the fixed template around the generator's specialty class.

    Only replaces f_base; w_base and s_base stay on the average center.
    """
    if not class_name.strip():
        raise ValueError("class_name must be non-empty")
    with torch.no_grad():
        return enc.encode_text("a picture of " + class_name)


def ema_update(center: Embedding, new_f: Embedding, decay: float) -> Embedding:
    """decay * center + (1 - decay) * new_f; decay must lie in (0, 1]."""
    if not 0.0 < decay <= 1.0:
        raise ValueError(f"decay must be in (0, 1], got {decay}")
    if center.values.shape != new_f.values.shape:
        raise ShapeMismatchError(
            f"ema shapes differ: {tuple(center.values.shape)} vs {tuple(new_f.values.shape)}"
        )
    return Embedding(decay * center.values + (1.0 - decay) * new_f.values)
