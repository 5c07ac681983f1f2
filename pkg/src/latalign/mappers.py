"""The trainable alignment stack.

Three pieces, all plain MLPs over latent vectors:

* ``fc_w`` maps embedding-space residuals to w-space residuals. It clones the
  style-based generator's mapping-network template (stacked FC + leaky ReLU),
  minus pixel normalization, which would destroy the latent-norm information
  the residuals carry.
* one small ``fc_s`` head per style layer maps the w residual to that layer's
  style residual.
* ``asm`` is a tiny two-layer net that reads the w residual and emits per-layer
  scalar (alpha, beta) signals which rescale and shift each mapped style
  residual — learnable style mixing.

Methods accept a single vector ``(d,)`` or a batch ``(B, d)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import nn

from .spaces import SBundle, ShapeMismatchError

__all__ = ["MapperConfig", "AsmSignals", "MapperStack", "apply_asm"]


@dataclass(frozen=True)
class MapperConfig:
    fc_w_layers: int = 8
    fc_w_hidden: int | None = None  # None: use d_w
    fc_s_layers: int = 2
    asm_hidden: int | None = None  # None: use d_w
    lrelu_slope: float = 0.2
    pixel_norm: bool = False  # must stay False: latent norms carry information
    asm_enabled: bool = True
    asm_per_channel: bool = False  # experimental: per-channel signals instead of scalars
    asm_squash: str = "sigmoid"  # "tanh" is experimental, allows sign flips
    learnable_center: bool = False
    final_s_init_scale: float = 0.01

    def __post_init__(self) -> None:
        if self.pixel_norm:
            raise ValueError("pixel_norm must be False")
        if self.fc_w_layers < 1 or self.fc_s_layers < 1:
            raise ValueError("mapper depths must be >= 1")
        if self.asm_squash not in ("sigmoid", "tanh"):
            raise ValueError(f"unknown asm_squash {self.asm_squash!r}")


@dataclass(frozen=True)
class AsmSignals:
    """Per-layer modulation signals.

    With the default sigmoid squash both tensors lie strictly in (0, 1); the
    experimental tanh squash yields (-1, 1). Shape is (n,) or (B, n) in scalar
    mode, with n replaced by the total channel count in per-channel mode.
    """

    alpha: torch.Tensor
    beta: torch.Tensor

    def __post_init__(self) -> None:
        if self.alpha.shape != self.beta.shape:
            raise ShapeMismatchError(
                f"alpha/beta shapes differ: {tuple(self.alpha.shape)} vs {tuple(self.beta.shape)}"
            )
        if not (torch.isfinite(self.alpha).all() and torch.isfinite(self.beta).all()):
            raise ValueError("ASM signals contain non-finite entries")


def _seeded_linear(
    d_in: int, d_out: int, g: torch.Generator, scale: float = 1.0
) -> nn.Linear:
    lin = nn.Linear(d_in, d_out)
    with torch.no_grad():
        lin.weight.copy_(scale * torch.randn(d_out, d_in, generator=g) / math.sqrt(d_in))
        lin.bias.zero_()
    return lin


class MapperStack(nn.Module):
    def __init__(
        self,
        d_clip: int,
        d_w: int,
        dim_s: tuple[int, ...],
        config: MapperConfig | None = None,
        seed: int = 0,
    ):
        super().__init__()
        self.config = config or MapperConfig()
        cfg = self.config
        self.d_clip = d_clip
        self.d_w = d_w
        self.dim_s = tuple(dim_s)
        self.asm_enabled = cfg.asm_enabled
        n = len(self.dim_s)
        g = torch.Generator().manual_seed(seed)

        hidden = cfg.fc_w_hidden or d_w
        dims = [d_clip] + [hidden] * (cfg.fc_w_layers - 1) + [d_w]
        self.fc_w = nn.ModuleList(
            _seeded_linear(dims[j], dims[j + 1], g) for j in range(cfg.fc_w_layers)
        )

        self.fc_s = nn.ModuleList()
        for dim in self.dim_s:
            layers = []
            for j in range(cfg.fc_s_layers):
                d_in = d_w
                d_out = d_w if j < cfg.fc_s_layers - 1 else dim
                scale = cfg.final_s_init_scale if j == cfg.fc_s_layers - 1 else 1.0
                layers.append(_seeded_linear(d_in, d_out, g, scale=scale))
            self.fc_s.append(nn.ModuleList(layers))

        asm_hidden = cfg.asm_hidden or d_w
        n_signals = sum(self.dim_s) if cfg.asm_per_channel else n
        self.asm = nn.ModuleList(
            [
                _seeded_linear(d_w, asm_hidden, g),
                _seeded_linear(asm_hidden, 2 * n_signals, g),
            ]
        )

        if cfg.learnable_center:
            self.center_bias = nn.Parameter(torch.zeros(d_clip))
        else:
            self.center_bias = None

    @property
    def n_layers(self) -> int:
        return len(self.dim_s)

    def _act(self, x: torch.Tensor) -> torch.Tensor:
        return torch.nn.functional.leaky_relu(x, self.config.lrelu_slope)

    def _check_in(self, x: torch.Tensor, d: int, name: str) -> None:
        if x.shape[-1] != d or x.dim() not in (1, 2):
            raise ShapeMismatchError(
                f"{name} must have shape ({d},) or (B, {d}), got {tuple(x.shape)}"
            )

    def map_w(self, delta_f: torch.Tensor) -> torch.Tensor:
        """Embedding residual -> w residual. Mapping-network template: FC + lrelu stack."""
        self._check_in(delta_f, self.d_clip, "delta_f")
        x = delta_f
        if self.center_bias is not None:
            x = x + self.center_bias
        for lin in self.fc_w:
            x = self._act(lin(x))
        return x

    def map_s_raw(self, delta_w: torch.Tensor) -> list[torch.Tensor]:
        self._check_in(delta_w, self.d_w, "delta_w")
        out = []
        for head in self.fc_s:
            x = delta_w
            for j, lin in enumerate(head):
                x = lin(x)
                if j < len(head) - 1:
                    x = self._act(x)
            out.append(x)
        return out

    def asm_signals(self, delta_w: torch.Tensor) -> AsmSignals:
        """Modulation signals from the w residual; two FC layers then a squash."""
        self._check_in(delta_w, self.d_w, "delta_w")
        x = self.asm[1](self._act(self.asm[0](delta_w)))
        x = torch.sigmoid(x) if self.config.asm_squash == "sigmoid" else torch.tanh(x)
        half = x.shape[-1] // 2
        return AsmSignals(alpha=x[..., :half], beta=x[..., half:])

    def map_s(
        self, delta_w: torch.Tensor, signals: AsmSignals | None = None
    ) -> list[torch.Tensor]:
        """w residual -> per-layer style residuals, modulated when ASM is enabled.

        ``signals`` overrides the stack's own ASM output (used by equivalence
        tests and ablations); passing it applies modulation even when
        ``asm_enabled`` is False.
        """
        raw = self.map_s_raw(delta_w)
        if signals is None:
            if not self.asm_enabled:
                return raw
            signals = self.asm_signals(delta_w)
        return apply_asm(raw, signals, per_channel=self.config.asm_per_channel)

    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.parameters())

    def named_param_arrays(self) -> dict[str, torch.Tensor]:
        """Checkpoint-facing parameter map with stable names."""
        out: dict[str, torch.Tensor] = {}
        for j, lin in enumerate(self.fc_w):
            out[f"fc_w.layer{j}.weight"] = lin.weight
            out[f"fc_w.layer{j}.bias"] = lin.bias
        for i, head in enumerate(self.fc_s):
            for j, lin in enumerate(head):
                out[f"fc_s.{i}.layer{j}.weight"] = lin.weight
                out[f"fc_s.{i}.layer{j}.bias"] = lin.bias
        for j, lin in enumerate(self.asm):
            out[f"asm.layer{j}.weight"] = lin.weight
            out[f"asm.layer{j}.bias"] = lin.bias
        if self.center_bias is not None:
            out["center_bias"] = self.center_bias
        return out

    def load_param_arrays(self, arrays: dict[str, torch.Tensor]) -> None:
        own = self.named_param_arrays()
        missing = set(own) - set(arrays)
        if missing:
            raise KeyError(f"checkpoint is missing parameter arrays: {sorted(missing)}")
        with torch.no_grad():
            for name, param in own.items():
                src = arrays[name]
                if tuple(src.shape) != tuple(param.shape):
                    raise ShapeMismatchError(
                        f"array {name} has shape {tuple(src.shape)}, expected {tuple(param.shape)}"
                    )
                param.copy_(src.to(param.dtype))


def apply_asm(
    delta_s, signals: AsmSignals, per_channel: bool = False
):
    """Scale and shift each style-residual layer: ds_i * alpha_i + beta_i.

    In scalar mode alpha_i/beta_i broadcast over layer i; in per-channel mode
    the signal vector is split along the concatenated layer channels. Accepts a
    list of layer tensors or an SBundle and returns the same kind.
    """
    layers = delta_s.layers if isinstance(delta_s, SBundle) else list(delta_s)
    n = len(layers)
    if per_channel:
        total = sum(layer.shape[-1] for layer in layers)
        if signals.alpha.shape[-1] != total:
            raise ShapeMismatchError(
                f"per-channel signals have {signals.alpha.shape[-1]} channels, layers have {total}"
            )
        out, ofs = [], 0
        for layer in layers:
            d = layer.shape[-1]
            out.append(layer * signals.alpha[..., ofs : ofs + d] + signals.beta[..., ofs : ofs + d])
            ofs += d
    else:
        if signals.alpha.shape[-1] != n:
            raise ShapeMismatchError(
                f"signals cover {signals.alpha.shape[-1]} layers, bundle has {n}"
            )
        out = [
            layer * signals.alpha[..., i : i + 1] + signals.beta[..., i : i + 1]
            for i, layer in enumerate(layers)
        ]
    return SBundle(tuple(out)) if isinstance(delta_s, SBundle) else out
