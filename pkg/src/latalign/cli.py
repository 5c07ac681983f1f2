"""Command-line tool: train, invert, generate, edit, eval, center export, serve."""

from __future__ import annotations

import argparse
import json
import sys

from . import evalkit, trainer
from .archive import write_archive
from .inference import AlignedModel, EditRequest
from .pngio import load_image, save_image

__all__ = ["main", "cli_dispatch"]


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="latalign",
        description="Latent alignment between a vision-language embedding space "
        "and a style-based generator: training, inversion, generation, editing, evaluation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run the alignment training loop")
    p.add_argument("--config", required=True, help="JSON file of training settings")
    p.add_argument("--out-dir", default=None, help="directory for logs and checkpoints")

    p = sub.add_parser("invert", help="invert an image and write its reconstruction")
    p.add_argument("--model", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("generate", help="text-to-image")
    p.add_argument("--model", required=True)
    p.add_argument("--text", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("edit", help="text-driven manipulation of an image")
    p.add_argument("--model", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--src", required=True, help="source prompt")
    p.add_argument("--trg", required=True, help="target prompt")
    p.add_argument("--strength", type=float, default=1.0)
    p.add_argument("--layers", default=None, help="comma-separated layer indices")
    p.add_argument("--space", choices=("w", "s"), default="s")
    p.add_argument("--out", required=True)

    p = sub.add_parser("eval", help="identity + text-pair accuracy over edited samples")
    p.add_argument("--model", required=True)
    p.add_argument("--pairs", default=None, help="JSONL text-pair file (default: bundled)")
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--strength", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=12345)

    p = sub.add_parser("center", help="export the manipulation centers")
    p.add_argument("--model", required=True)
    p.add_argument("--export", required=True)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--model", default=None, help="checkpoint (or $LATALIGN_CHECKPOINT)")
    p.add_argument("--bind", default=None, help="host:port (or $LATALIGN_BIND)")

    return parser


def _parse_layers(text: str | None) -> frozenset[int] | None:
    if text is None:
        return None
    text = text.strip()
    if not text:
        return frozenset()
    return frozenset(int(tok) for tok in text.split(","))


def _cmd_train(args) -> int:
    with open(args.config) as f:
        doc = json.load(f)
    config = trainer.config_from_dict(doc)
    trainer.run(config, out_dir=args.out_dir)
    if args.out_dir:
        print(f"{args.out_dir}/checkpoint_final.zip")
    print(f"trained {config.iterations} iterations")
    return 0


def _cmd_invert(args) -> int:
    model = AlignedModel.from_checkpoint(args.model)
    save_image(model.reconstruct(load_image(args.image)), args.out)
    print(args.out)
    return 0


def _cmd_generate(args) -> int:
    model = AlignedModel.from_checkpoint(args.model)
    save_image(model.generate(args.text), args.out)
    print(args.out)
    return 0


def _cmd_edit(args) -> int:
    model = AlignedModel.from_checkpoint(args.model)
    request = EditRequest(
        src_text=args.src,
        trg_text=args.trg,
        strength=args.strength,
        layer_mask=_parse_layers(args.layers),
        space=args.space,
    )
    save_image(model.apply_edit(load_image(args.image), request), args.out)
    print(args.out)
    return 0


def _cmd_eval(args) -> int:
    model = AlignedModel.from_checkpoint(args.model)
    pairs = (
        evalkit.load_text_pairs(args.pairs)
        if args.pairs
        else evalkit.bundled_text_pairs()
    )
    report = evalkit.run_eval(
        model, pairs, n=args.n, strength=args.strength, seed=args.seed
    )
    print(f"# n={report['n']} strength={report['strength']} seed={report['seed']}")
    print(f"{'mode':<10} {'faceID':>8} {'Acc':>8}")
    for row in report["rows"]:
        print(f"{row['mode']:<10} {row['face_id']:>8.4f} {row['accuracy']:>8.4f}")
    return 0


def _cmd_center(args) -> int:
    ckpt = trainer.Checkpoint.load(args.model)
    arrays = {
        name: arr for name, arr in ckpt.arrays.items() if name.startswith("centers.")
    }
    write_archive(
        args.export,
        {"kind": "latalign-centers", "source_iteration": ckpt.iteration},
        arrays,
    )
    print(args.export)
    return 0


def _cmd_serve(args) -> int:
    from .service import ServiceConfig, http_serve

    http_serve(ServiceConfig.from_env(checkpoint_path=args.model, bind=args.bind))
    return 0


_COMMANDS = {
    "train": _cmd_train,
    "invert": _cmd_invert,
    "generate": _cmd_generate,
    "edit": _cmd_edit,
    "eval": _cmd_eval,
    "center": _cmd_center,
    "serve": _cmd_serve,
}


def cli_dispatch(argv: list[str] | None = None) -> int:
    """Parse argv and run a subcommand; returns the process exit code.

    Usage errors exit 2 (argparse), runtime failures return 1 with a one-line
    machine-parsable error on stderr.
    """
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except Exception as e:  # noqa: BLE001 - CLI boundary
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


def main(argv: list[str] | None = None) -> int:
    return cli_dispatch(argv)


if __name__ == "__main__":
    sys.exit(main())
