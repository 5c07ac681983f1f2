"""Training objective: absolute and directional consistency on latent residuals.

Each space contributes a mean-absolute-error term (|.| read as the mean over
vector components, which keeps magnitudes dimension-independent so the fixed
lambda weights transfer across scales) plus a cosine-direction term. The s-space
loss averages its per-layer terms over the n style layers, and the total is
l_w + lambda_s * l_s.

Degenerate norms: when either vector of a direction term has norm below
``NORM_EPS`` the term contributes an exact, gradient-free zero and the event is
counted — residual targets are exactly zero whenever a sampled latent coincides
with the center, and the absolute term still supervises those cases.

All functions are pure, differentiable and accept single vectors ``(d,)`` or
row batches ``(B, d)`` (batch entries are averaged).
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .spaces import SBundle, ShapeMismatchError

__all__ = [
    "NORM_EPS",
    "LossWeights",
    "LossReport",
    "direction_loss",
    "loss_w",
    "loss_s",
    "total_loss",
    "loss_w_components",
    "loss_s_components",
]

NORM_EPS = 1e-8


@dataclass(frozen=True)
class LossWeights:
    lambda_s: float = 10.0
    lambda_w_dir: float = 10.0
    lambda_s_dir: float = 1.0


@dataclass(frozen=True)
class LossReport:
    """Per-step diagnostics; total is reproducible from the components."""

    total: float
    l_w: float
    l_s: float
    l_w_dir: float
    l_s_dir: float
    l_w_abs: float
    l_s_abs: float
    degenerate_norms: int = 0

    def as_dict(self) -> dict:
        return {
            "total": self.total,
            "l_w": self.l_w,
            "l_s": self.l_s,
            "l_w_dir": self.l_w_dir,
            "l_s_dir": self.l_s_dir,
            "l_w_abs": self.l_w_abs,
            "l_s_abs": self.l_s_abs,
            "degenerate_norms": self.degenerate_norms,
        }


def _as_rows(x: torch.Tensor, y: torch.Tensor, name: str) -> tuple[torch.Tensor, torch.Tensor]:
    if x.shape != y.shape:
        raise ShapeMismatchError(
            f"{name} shapes differ: {tuple(x.shape)} vs {tuple(y.shape)}"
        )
    if x.dim() == 1:
        return x.unsqueeze(0), y.unsqueeze(0)
    if x.dim() == 2:
        return x, y
    raise ShapeMismatchError(f"{name} must be (d,) or (B, d), got {tuple(x.shape)}")


def _direction_rows(x: torch.Tensor, y: torch.Tensor) -> tuple[torch.Tensor, int]:
    """Per-row 1 - cos(x, y); degenerate rows yield an exact 0. Returns (rows, n_degenerate)."""
    with torch.no_grad():
        ok = (x.norm(dim=-1) >= NORM_EPS) & (y.norm(dim=-1) >= NORM_EPS)
    # degenerate rows are swapped for a safe constant before any differentiable
    # op so the zero mask cannot pick up NaN gradients from norm-at-zero
    mask = ok.unsqueeze(-1)
    xs = torch.where(mask, x, torch.ones_like(x))
    ys = torch.where(mask, y, torch.ones_like(y))
    cos = (xs * ys).sum(dim=-1) / (xs.norm(dim=-1) * ys.norm(dim=-1))
    rows = torch.where(ok, 1.0 - cos, torch.zeros_like(cos))
    return rows, int((~ok).sum())


def direction_loss(x: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
    """1 - cosine similarity, in [0, 2]; 0 when either norm is below NORM_EPS."""
    xr, yr = _as_rows(x, y, "direction_loss")
    rows, _ = _direction_rows(xr, yr)
    return rows.mean()


def loss_w_components(
    delta_w: torch.Tensor, delta_w_trg: torch.Tensor
) -> tuple[torch.Tensor, torch.Tensor, int]:
    """(mean-abs term, direction term, degenerate count) for the w residuals."""
    x, y = _as_rows(delta_w, delta_w_trg, "loss_w")
    abs_term = (x - y).abs().mean(dim=-1).mean()
    dir_rows, degenerate = _direction_rows(x, y)
    return abs_term, dir_rows.mean(), degenerate


def loss_w(
    delta_w: torch.Tensor, delta_w_trg: torch.Tensor, weights: LossWeights | None = None
) -> torch.Tensor:
    weights = weights or LossWeights()
    abs_term, dir_term, _ = loss_w_components(delta_w, delta_w_trg)
    return abs_term + weights.lambda_w_dir * dir_term


def _bundle_layers(x) -> list[torch.Tensor]:
    return list(x.layers) if isinstance(x, SBundle) else list(x)


def loss_s_components(
    delta_s, delta_s_trg
) -> tuple[torch.Tensor, torch.Tensor, int]:
    """(per-layer-averaged abs term, direction term, degenerate count) for s residuals."""
    xs, ys = _bundle_layers(delta_s), _bundle_layers(delta_s_trg)
    if len(xs) != len(ys):
        raise ShapeMismatchError(f"layer counts differ: {len(xs)} vs {len(ys)}")
    if not xs:
        raise ShapeMismatchError("loss_s needs at least one layer")
    abs_terms, dir_terms, degenerate = [], [], 0
    for x, y in zip(xs, ys):
        xr, yr = _as_rows(x, y, "loss_s layer")
        abs_terms.append((xr - yr).abs().mean(dim=-1).mean())
        rows, d = _direction_rows(xr, yr)
        dir_terms.append(rows.mean())
        degenerate += d
    n = len(xs)
    return sum(abs_terms) / n, sum(dir_terms) / n, degenerate


def loss_s(delta_s, delta_s_trg, weights: LossWeights | None = None) -> torch.Tensor:
    weights = weights or LossWeights()
    abs_term, dir_term, _ = loss_s_components(delta_s, delta_s_trg)
    return abs_term + weights.lambda_s_dir * dir_term


def total_loss(l_w: torch.Tensor, l_s: torch.Tensor, weights: LossWeights | None = None):
    weights = weights or LossWeights()
    return l_w + weights.lambda_s * l_s
