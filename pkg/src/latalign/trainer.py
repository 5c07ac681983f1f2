"""Data-free latent-distillation training loop.

Each iteration the frozen generator is forward-propagated exactly once: a noise
vector yields (w, s, image), the frozen image encoder embeds the image, and the
mappers are trained to reproduce the latent residuals against the manipulation
centers. No image dataset and no pixel-space loss are involved, so the per-step
cost beyond that single forward pass is latent-level only.

Reference-center selection per step:

* single-center mode (or a TRC bank still below its warm-up fill): one
  reference row, the major center (f_base, w_base);
* TRC mode with a warm bank: k paired rows sampled with replacement from the
  queues, k = min(bank fill, trc_sample_cap).

The w-space loss is averaged over the reference rows; the s path always runs
from the major center (the queues hold f and w only, and inference only ever
sees major-center residuals). Both modes execute the identical op sequence so
that a degenerate bank reproduces single-center training bitwise.

Determinism contract: single-threaded, all randomness through explicit seeded
generators (one for data, one for TRC draws, one for parameter init), float32
state. Two runs with equal configs match bitwise, and a run interrupted at a
checkpoint and resumed matches the uninterrupted run bitwise.
"""

from __future__ import annotations

import base64
import dataclasses
import json
import os
import time
from dataclasses import dataclass

import torch

from . import centers as centers_mod
from .archive import read_archive, write_archive
from .centers import CenterBank, CenterSet, compute_average_center, compute_text_center, ema_update
from .encoder import EncoderAdapter, EncoderConfig, build_encoder
from .generator import GeneratorAdapter, GeneratorConfig, build_generator
from .mappers import MapperConfig, MapperStack
from .objective import LossReport, LossWeights, loss_s_components, loss_w_components
from .spaces import Embedding, SBundle, WLatent

__all__ = [
    "TrainConfig",
    "Checkpoint",
    "Trainer",
    "TrainingDiverged",
    "lr_at",
    "run",
    "resume",
    "config_to_dict",
    "config_from_dict",
]

CHECKPOINT_FORMAT_VERSION = 1
CENTER_MODES = ("average", "text", "ema", "learnable")


class TrainingDiverged(RuntimeError):
    """Non-finite loss; carries a diagnostic checkpoint of the failing state."""

    def __init__(self, message: str, checkpoint: "Checkpoint"):
        super().__init__(message)
        self.checkpoint = checkpoint


@dataclass(frozen=True)
class TrainConfig:
    generator: GeneratorConfig = GeneratorConfig()
    encoder: EncoderConfig = EncoderConfig()
    generator_kind: str = "toy"
    encoder_kind: str = "toy"
    mapper: MapperConfig = MapperConfig()
    weights: LossWeights = LossWeights()
    iterations: int = 20_000
    lr_init: float = 1e-2
    poly_power: float = 0.9
    adam_betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    batch_size: int = 1
    trc_enabled: bool = True
    queue_capacity: int = centers_mod.DEFAULT_QUEUE_CAPACITY
    trc_sample_cap: int = 256
    trc_min_fill: int = 64
    center_mode: str = "average"
    center_text_class: str = "person"
    center_num_samples: int = centers_mod.DEFAULT_AVERAGE_SAMPLES
    ema_decay: float = 0.99
    seed: int = 0
    log_every: int = 100
    checkpoint_every: int = 0  # 0: final checkpoint only

    def __post_init__(self) -> None:
        object.__setattr__(self, "adam_betas", tuple(self.adam_betas))
        if self.iterations < 1:
            raise ValueError(f"iterations must be >= 1, got {self.iterations}")
        if self.lr_init <= 0:
            raise ValueError(f"lr_init must be positive, got {self.lr_init}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.center_mode not in CENTER_MODES:
            raise ValueError(
                f"center_mode must be one of {CENTER_MODES}, got {self.center_mode!r}"
            )
        if self.log_every < 1:
            raise ValueError("log_every must be >= 1")
        if self.trc_min_fill < 1 or self.trc_sample_cap < 1:
            raise ValueError("trc_min_fill and trc_sample_cap must be >= 1")
        if not 0.0 < self.ema_decay <= 1.0:
            raise ValueError(f"ema_decay must be in (0, 1], got {self.ema_decay}")


def lr_at(iteration: int, config: TrainConfig) -> float:
    """Poly schedule: lr_init * (1 - iteration/iterations)**p."""
    if not 0 <= iteration <= config.iterations:
        raise ValueError(
            f"iteration {iteration} outside [0, {config.iterations}]"
        )
    return config.lr_init * (1.0 - iteration / config.iterations) ** config.poly_power


def config_to_dict(config: TrainConfig) -> dict:
    return dataclasses.asdict(config)


def config_from_dict(doc: dict) -> TrainConfig:
    doc = dict(doc)
    doc["generator"] = GeneratorConfig(**doc["generator"])
    doc["encoder"] = EncoderConfig(**doc["encoder"])
    doc["mapper"] = MapperConfig(**doc["mapper"])
    doc["weights"] = LossWeights(**doc["weights"])
    doc["adam_betas"] = tuple(doc["adam_betas"])
    return TrainConfig(**doc)


@dataclass
class Checkpoint:
    """Manifest (configs, iteration, rng states, counters) plus named float32 arrays."""

    manifest: dict
    arrays: dict[str, torch.Tensor]

    def save(self, path: str | os.PathLike) -> None:
        write_archive(path, self.manifest, self.arrays)

    @classmethod
    def load(cls, path: str | os.PathLike) -> "Checkpoint":
        manifest, arrays = read_archive(path)
        if manifest.get("kind") != "latalign-checkpoint":
            raise ValueError(f"{path} is not a latalign checkpoint")
        return cls(manifest=manifest, arrays=arrays)

    @property
    def config(self) -> TrainConfig:
        return config_from_dict(self.manifest["config"])

    @property
    def iteration(self) -> int:
        return int(self.manifest["iteration"])


def _rng_to_b64(g: torch.Generator) -> str:
    return base64.b64encode(bytes(g.get_state().numpy().tobytes())).decode("ascii")


def _rng_from_b64(text: str) -> torch.Tensor:
    return torch.tensor(list(base64.b64decode(text)), dtype=torch.uint8)


def build_adapters(config: TrainConfig) -> tuple[GeneratorAdapter, EncoderAdapter]:
    gen = build_generator(config.generator_kind, config.generator)
    enc = build_encoder(config.encoder_kind, config.encoder)
    return gen, enc


class Trainer:
    def __init__(
        self,
        config: TrainConfig,
        gen: GeneratorAdapter | None = None,
        enc: EncoderAdapter | None = None,
    ):
        torch.set_num_threads(1)  # single-threaded deterministic mode is the contract
        self.config = config
        if gen is None or enc is None:
            auto_gen, auto_enc = build_adapters(config)
            gen = gen or auto_gen
            enc = enc or auto_enc
        self.gen = gen
        self.enc = enc

        mapper_cfg = dataclasses.replace(
            config.mapper, learnable_center=(config.center_mode == "learnable")
        )
        self.stack = MapperStack(
            d_clip=enc.d_clip,
            d_w=gen.config.d_w,
            dim_s=gen.config.dim_s,
            config=mapper_cfg,
            seed=config.seed + 2,
        )
        self.optimizer = torch.optim.Adam(
            self.stack.parameters(),
            lr=config.lr_init,
            betas=config.adam_betas,
            eps=config.adam_eps,
            foreach=False,
        )
        self.g_data = torch.Generator().manual_seed(config.seed)
        self.g_trc = torch.Generator().manual_seed(config.seed + 1)

        self.centers = compute_average_center(gen, enc, config.center_num_samples)
        if config.center_mode == "text":
            self.centers = dataclasses.replace(
                self.centers, f_base=compute_text_center(enc, config.center_text_class)
            )
        self.bank = CenterBank(config.queue_capacity)
        self.iteration = 0
        self.degenerate_total = 0

    def _reference_rows(self) -> tuple[torch.Tensor, torch.Tensor]:
        """(k, d_clip) and (k, d_w) reference centers for the w path."""
        cfg = self.config
        if cfg.trc_enabled and len(self.bank) >= cfg.trc_min_fill:
            k = min(len(self.bank), cfg.trc_sample_cap)
            return self.bank.sample_pairs(k, self.g_trc)
        return (
            self.centers.f_base.values.unsqueeze(0),
            self.centers.w_base.values.unsqueeze(0),
        )

    def _sample_loss(self) -> tuple[torch.Tensor, dict, int]:
        cfg = self.config
        z = torch.randn(self.gen.config.d_z, generator=self.g_data)
        with torch.no_grad():
            w_t, s_t, img = self.gen.sample(z)
            f = self.enc.encode_image(img).values
        w = w_t.values

        f_refs, w_refs = self._reference_rows()
        delta_f_rows = f.unsqueeze(0) - f_refs
        delta_w_trg_rows = w.unsqueeze(0) - w_refs
        delta_w_rows = self.stack.map_w(delta_f_rows)
        l_w_abs, l_w_dir, deg_w = loss_w_components(delta_w_rows, delta_w_trg_rows)

        delta_f0 = f - self.centers.f_base.values
        delta_w0 = self.stack.map_w(delta_f0)
        delta_s = self.stack.map_s(delta_w0)
        delta_s_trg = [
            s_i - b_i for s_i, b_i in zip(s_t.layers, self.centers.s_base.layers)
        ]
        l_s_abs, l_s_dir, deg_s = loss_s_components(delta_s, delta_s_trg)

        wts = cfg.weights
        l_w = l_w_abs + wts.lambda_w_dir * l_w_dir
        l_s = l_s_abs + wts.lambda_s_dir * l_s_dir
        total = l_w + wts.lambda_s * l_s

        if cfg.center_mode == "ema":
            self.centers = dataclasses.replace(
                self.centers,
                f_base=ema_update(self.centers.f_base, Embedding(f), cfg.ema_decay),
            )
        self.bank.push(Embedding(f), WLatent(w))

        parts = {
            "l_w": l_w,
            "l_s": l_s,
            "l_w_abs": l_w_abs,
            "l_w_dir": l_w_dir,
            "l_s_abs": l_s_abs,
            "l_s_dir": l_s_dir,
        }
        return total, parts, deg_w + deg_s

    def train_step(self) -> LossReport:
        cfg = self.config
        totals, parts_acc, degenerate = [], None, 0
        for _ in range(cfg.batch_size):
            total, parts, deg = self._sample_loss()
            totals.append(total)
            degenerate += deg
            if parts_acc is None:
                parts_acc = parts
            else:
                parts_acc = {k: parts_acc[k] + v for k, v in parts.items()}
        loss = totals[0] if len(totals) == 1 else torch.stack(totals).mean()
        b = float(cfg.batch_size)

        if not torch.isfinite(loss):
            raise TrainingDiverged(
                f"non-finite loss at iteration {self.iteration}", self.checkpoint()
            )

        lr = lr_at(self.iteration, cfg)
        for group in self.optimizer.param_groups:
            group["lr"] = lr
        self.optimizer.zero_grad(set_to_none=True)
        loss.backward()
        self.optimizer.step()

        self.iteration += 1
        self.degenerate_total += degenerate
        return LossReport(
            total=float(loss),
            l_w=float(parts_acc["l_w"]) / b,
            l_s=float(parts_acc["l_s"]) / b,
            l_w_dir=float(parts_acc["l_w_dir"]) / b,
            l_s_dir=float(parts_acc["l_s_dir"]) / b,
            l_w_abs=float(parts_acc["l_w_abs"]) / b,
            l_s_abs=float(parts_acc["l_s_abs"]) / b,
            degenerate_norms=degenerate,
        )

    def run(self, out_dir: str | os.PathLike | None = None) -> Checkpoint:
        cfg = self.config
        log_path = None
        if out_dir is not None:
            os.makedirs(out_dir, exist_ok=True)
            log_path = os.path.join(os.fspath(out_dir), "train_log.jsonl")
        started = time.time()
        log_f = open(log_path, "a") if log_path else None
        try:
            while self.iteration < cfg.iterations:
                lr = lr_at(self.iteration, cfg)
                try:
                    report = self.train_step()
                except TrainingDiverged as err:
                    if out_dir is not None:
                        err.checkpoint.save(
                            os.path.join(os.fspath(out_dir), "diverged_checkpoint.zip")
                        )
                    raise
                if log_f and self.iteration % cfg.log_every == 0:
                    record = {
                        "iteration": self.iteration,
                        "lr": lr,
                        **report.as_dict(),
                        "degenerate_norms_total": self.degenerate_total,
                        "wall_clock": time.time() - started,
                    }
                    log_f.write(json.dumps(record) + "\n")
                    log_f.flush()
                if (
                    out_dir is not None
                    and cfg.checkpoint_every > 0
                    and self.iteration % cfg.checkpoint_every == 0
                    and self.iteration < cfg.iterations
                ):
                    self.checkpoint().save(
                        os.path.join(
                            os.fspath(out_dir), f"checkpoint_{self.iteration:07d}.zip"
                        )
                    )
        finally:
            if log_f:
                log_f.close()
        ckpt = self.checkpoint()
        if out_dir is not None:
            ckpt.save(os.path.join(os.fspath(out_dir), "checkpoint_final.zip"))
        return ckpt

    def checkpoint(self) -> Checkpoint:
        arrays: dict[str, torch.Tensor] = {}
        params = self.stack.named_param_arrays()
        for name, p in params.items():
            arrays[name] = p.detach().clone()

        opt_steps: dict[str, int] = {}
        param_to_name = {id(p): name for name, p in params.items()}
        for p, state in self.optimizer.state.items():
            name = param_to_name[id(p)]
            arrays[f"opt.{name}.exp_avg"] = state["exp_avg"].detach().clone()
            arrays[f"opt.{name}.exp_avg_sq"] = state["exp_avg_sq"].detach().clone()
            step = state["step"]
            opt_steps[name] = int(step.item() if isinstance(step, torch.Tensor) else step)

        arrays["centers.f_base"] = self.centers.f_base.values.clone()
        arrays["centers.w_base"] = self.centers.w_base.values.clone()
        for i, layer in enumerate(self.centers.s_base.layers):
            arrays[f"centers.s_base.{i}"] = layer.clone()

        bank_f, bank_w = self.bank.snapshot()
        if bank_f.numel():
            arrays["bank.f"] = bank_f
            arrays["bank.w"] = bank_w

        manifest = {
            "kind": "latalign-checkpoint",
            "format_version": CHECKPOINT_FORMAT_VERSION,
            "config": config_to_dict(self.config),
            "iteration": self.iteration,
            "bank_size": len(self.bank),
            "rng": {"data": _rng_to_b64(self.g_data), "trc": _rng_to_b64(self.g_trc)},
            "counters": {"degenerate_norms": self.degenerate_total},
            "optimizer_steps": opt_steps,
        }
        return Checkpoint(manifest=manifest, arrays=arrays)

    @classmethod
    def from_checkpoint(
        cls,
        ckpt: Checkpoint,
        gen: GeneratorAdapter | None = None,
        enc: EncoderAdapter | None = None,
    ) -> "Trainer":
        config = ckpt.config
        trainer = cls(config, gen=gen, enc=enc)
        trainer.stack.load_param_arrays(ckpt.arrays)

        params = trainer.stack.named_param_arrays()
        state: dict[int, dict] = {}
        steps = ckpt.manifest.get("optimizer_steps", {})
        for idx, (name, p) in enumerate(params.items()):
            key = f"opt.{name}.exp_avg"
            if key in ckpt.arrays:
                state[idx] = {
                    "step": torch.tensor(float(steps[name])),
                    "exp_avg": ckpt.arrays[key].clone(),
                    "exp_avg_sq": ckpt.arrays[f"opt.{name}.exp_avg_sq"].clone(),
                }
        sd = trainer.optimizer.state_dict()
        sd["state"] = state
        trainer.optimizer.load_state_dict(sd)

        trainer.centers = centers_from_arrays(ckpt.arrays)
        bank = CenterBank(config.queue_capacity)
        if "bank.f" in ckpt.arrays:
            bank = CenterBank.from_snapshot(
                ckpt.arrays["bank.f"], ckpt.arrays["bank.w"], config.queue_capacity
            )
        trainer.bank = bank
        trainer.g_data.set_state(_rng_from_b64(ckpt.manifest["rng"]["data"]))
        trainer.g_trc.set_state(_rng_from_b64(ckpt.manifest["rng"]["trc"]))
        trainer.iteration = ckpt.iteration
        trainer.degenerate_total = int(ckpt.manifest["counters"]["degenerate_norms"])
        return trainer


def centers_from_arrays(arrays: dict[str, torch.Tensor]) -> CenterSet:
    s_layers = []
    for i in range(len(arrays)):
        key = f"centers.s_base.{i}"
        if key not in arrays:
            break
        s_layers.append(arrays[key].clone())
    return CenterSet(
        f_base=Embedding(arrays["centers.f_base"].clone()),
        w_base=WLatent(arrays["centers.w_base"].clone()),
        s_base=SBundle(tuple(s_layers)),
    )


def run(
    config: TrainConfig,
    gen: GeneratorAdapter | None = None,
    enc: EncoderAdapter | None = None,
    out_dir: str | os.PathLike | None = None,
) -> Checkpoint:
    """Train from scratch; returns (and optionally writes) the final checkpoint."""
    return Trainer(config, gen=gen, enc=enc).run(out_dir)


def resume(
    checkpoint: Checkpoint | str | os.PathLike,
    gen: GeneratorAdapter | None = None,
    enc: EncoderAdapter | None = None,
    out_dir: str | os.PathLike | None = None,
) -> Checkpoint:
    """Continue a saved run to its configured iteration count."""
    if not isinstance(checkpoint, Checkpoint):
        checkpoint = Checkpoint.load(checkpoint)
    return Trainer.from_checkpoint(checkpoint, gen=gen, enc=enc).run(out_dir)
