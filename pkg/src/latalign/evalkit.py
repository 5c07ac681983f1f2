"""Quantitative evaluation: identity preservation and text-pair accuracy.

The identity score is the mean cosine similarity between identity embeddings of
source and edited images. Text-pair accuracy is zero-shot classification of the
edited images against a positive/negative prompt pair; ties count as incorrect.
Both metrics take pluggable embedders — at desk scale a frozen random
projection stands in for a pretrained face-identity model, so scores here
exercise the mechanics, not paper-scale numbers.
"""

from __future__ import annotations

import abc
import json
import logging
import math
from dataclasses import dataclass
from importlib import resources

import torch

from .centers import CenterSet
from .encoder import EncoderAdapter
from .generator import GeneratorAdapter
from .inference import AlignedModel, EditRequest
from .mappers import MapperStack
from .spaces import Image

__all__ = [
    "IdentityEmbedder",
    "ToyIdentityEmbedder",
    "TextPair",
    "id_score",
    "text_pair_accuracy",
    "load_text_pairs",
    "bundled_text_pairs",
    "alignment_scores",
    "run_eval",
]

log = logging.getLogger(__name__)


class IdentityEmbedder(abc.ABC):
    """Deterministic, fixed-length embedding of an image's identity."""

    @abc.abstractmethod
    def embed(self, image: Image) -> torch.Tensor:
        ...


class ToyIdentityEmbedder(IdentityEmbedder):
    """Frozen random projection over pooled pixels; desk-scale stand-in."""

    def __init__(self, resolution: tuple[int, int] = (32, 32), dim: int = 32, pool: int = 4, seed: int = 7):
        g = torch.Generator().manual_seed(seed)
        h, w = (r // pool for r in resolution)
        d_in = h * w * 3
        self.pool = pool
        self.weight = torch.randn(dim, d_in, generator=g) / math.sqrt(d_in)

    def embed(self, image: Image) -> torch.Tensor:
        pooled = torch.nn.functional.avg_pool2d(
            image.pixels.permute(2, 0, 1).unsqueeze(0), self.pool
        ).flatten()
        return pooled @ self.weight.T


@dataclass(frozen=True)
class TextPair:
    mode: str
    positive: str
    negative: str

    def __post_init__(self) -> None:
        if not self.positive.strip() or not self.negative.strip():
            raise ValueError("text pair prompts must be non-empty")
        if self.positive == self.negative:
            raise ValueError("positive and negative prompts must differ")


def _cos(a: torch.Tensor, b: torch.Tensor) -> float:
    return float(torch.dot(a, b) / (a.norm() * b.norm()))


def id_score(
    sources: list[Image], edits: list[Image], embedder: IdentityEmbedder
) -> float:
    """Mean cosine similarity of identity embeddings over (source, edit) pairs."""
    if not sources or len(sources) != len(edits):
        raise ValueError(
            f"need equal-length non-empty lists, got {len(sources)} and {len(edits)}"
        )
    scores, skipped = [], 0
    for src, edit in zip(sources, edits):
        a = embedder.embed(src)
        b = embedder.embed(edit)
        if float(a.norm()) == 0.0 or float(b.norm()) == 0.0:
            skipped += 1
            continue
        scores.append(_cos(a, b))
    if skipped:
        log.warning("id_score skipped %d pairs with zero-norm embeddings", skipped)
    if not scores:
        raise ValueError("all pairs had zero-norm embeddings")
    return sum(scores) / len(scores)


def text_pair_accuracy(
    edits: list[Image], pair: TextPair, enc: EncoderAdapter
) -> float:
    """Fraction of images closer to the positive prompt; ties are incorrect."""
    if not edits:
        raise ValueError("need at least one edited image")
    with torch.no_grad():
        pos = enc.encode_text(pair.positive).values
        neg = enc.encode_text(pair.negative).values
        correct = 0
        for img in edits:
            emb = enc.encode_image(img).values
            if _cos(emb, pos) > _cos(emb, neg):
                correct += 1
    return correct / len(edits)


def load_text_pairs(path) -> list[TextPair]:
    """Parse a JSONL file of {mode, positive, negative} records."""
    pairs = []
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                doc = json.loads(line)
                pairs.append(
                    TextPair(
                        mode=doc["mode"],
                        positive=doc["positive"],
                        negative=doc["negative"],
                    )
                )
            except (json.JSONDecodeError, KeyError, TypeError) as e:
                raise ValueError(f"{path}:{lineno}: malformed text-pair record: {e}") from e
    if not pairs:
        raise ValueError(f"{path}: no text pairs found")
    return pairs


def bundled_text_pairs() -> list[TextPair]:
    """The four packaged evaluation pairs (glass/smile/age/gender)."""
    ref = resources.files("latalign").joinpath("data/text_pairs.jsonl")
    with resources.as_file(ref) as path:
        return load_text_pairs(path)


def alignment_scores(
    gen: GeneratorAdapter,
    enc: EncoderAdapter,
    stack: MapperStack,
    centers: CenterSet,
    num_samples: int = 256,
    seed: int = 20_000_001,
) -> dict:
    """Held-out alignment quality: mean cosine between mapped and target residuals.

    Draws fresh z (seeded independently of training), maps the major-center
    embedding residuals, and compares against the true latent residuals.
    """
    g = torch.Generator().manual_seed(seed)
    w_cos, s_cos = [], []
    with torch.no_grad():
        for _ in range(num_samples):
            z = torch.randn(gen.config.d_z, generator=g)
            w, s, img = gen.sample(z)
            f = enc.encode_image(img).values
            delta_f = f - centers.f_base.values
            delta_w_pred = stack.map_w(delta_f)
            delta_w_trg = w.values - centers.w_base.values
            w_cos.append(_cos(delta_w_pred, delta_w_trg))
            delta_s_pred = stack.map_s(delta_w_pred)
            for pred, s_i, base_i in zip(delta_s_pred, s.layers, centers.s_base.layers):
                s_cos.append(_cos(pred, s_i - base_i))
    return {
        "w_cos_mean": sum(w_cos) / len(w_cos),
        "s_cos_mean": sum(s_cos) / len(s_cos),
        "num_samples": num_samples,
        "seed": seed,
    }


def run_eval(
    model: AlignedModel,
    pairs: list[TextPair],
    n: int = 100,
    strength: float = 1.0,
    seed: int = 12345,
    embedder: IdentityEmbedder | None = None,
) -> dict:
    """Edit n seeded samples per pair and score identity + text-pair accuracy.

    The report records its own sampling seed and strength since both change the
    numbers.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    gen = model.gen
    if embedder is None:
        embedder = ToyIdentityEmbedder(resolution=gen.config.resolution)
    g = torch.Generator().manual_seed(seed)
    sources = []
    inverted = []
    with torch.no_grad():
        for _ in range(n):
            z = torch.randn(gen.config.d_z, generator=g)
            _, _, img = gen.sample(z)
            sources.append(img)
            inverted.append(model.invert(img))
    rows = []
    for pair in pairs:
        direction = model.direction_from_texts(pair.negative, pair.positive)
        edits = [
            model.apply_direction(w, s, direction, strength=strength)
            for (w, s) in inverted
        ]
        rows.append(
            {
                "mode": pair.mode,
                "face_id": id_score(sources, edits, embedder),
                "accuracy": text_pair_accuracy(edits, pair, model.enc),
            }
        )
    return {"rows": rows, "n": n, "strength": strength, "seed": seed}
