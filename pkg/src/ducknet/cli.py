"""``ducknet`` command line: split, train, eval, predict, ablation, verify, synth.

Every subcommand accepts ``--config FILE`` holding flat ``key=value`` lines
(keys are the long flag names, with ``-`` or ``_``); flags given on the command
line win.  Exit codes: 0 success, 1 failed verification, 2 usage/config/data
error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import verify
from .datapipe.dataset import DatasetError, load_dataset, scan_dataset
from .datapipe.imageio import ImageReadError
from .datapipe.split import SplitError, read_manifest, split_dataset, write_manifest
from .metrics import format_csv, format_table
from .network import CheckpointError, build_network, load_checkpoint
from .synthetic import write_dataset
from .tensorcore import NumericalError, ShapeError, configure_threads
from .training import (
    TrainConfig,
    evaluate,
    predict,
    prepare,
    restore,
    train,
    write_training_outputs,
)
from .util import atomic_write

EXIT_OK, EXIT_VERIFY, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


def _size(text: str) -> tuple[int, int]:
    parts = text.lower().replace(",", "x").split("x")
    try:
        vals = [int(p) for p in parts]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad size {text!r}; use N or HxW") from None
    if len(vals) == 1:
        vals *= 2
    if len(vals) != 2 or min(vals) < 1:
        raise argparse.ArgumentTypeError(f"bad size {text!r}; use N or HxW")
    return vals[0], vals[1]


def _bool(text: str) -> bool:
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def read_config(path) -> dict[str, str]:
    """Parse a flat ``key=value`` file; blank lines and ``#`` comments are skipped."""
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from None
    out = {}
    for n, line in enumerate(lines, start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{n}: expected key=value, got {line!r}")
        k, v = (s.strip() for s in line.split("=", 1))
        out[k.replace("-", "_")] = v
    return out


def _train_flags(p: argparse.ArgumentParser) -> None:
    d = TrainConfig()
    p.add_argument("--data", required=True, help="dataset root with images/ and masks/")
    p.add_argument("--split", required=True, help="split manifest file")
    p.add_argument("--filters", type=int, default=d.filters)
    p.add_argument("--block", choices=["duck", "simple"], default=d.block)
    p.add_argument("--epochs", type=int, default=d.epochs)
    p.add_argument("--seed", type=int, default=d.seed)
    p.add_argument("--lr", type=float, default=d.lr)
    p.add_argument("--batch-size", type=int, default=d.batch_size)
    p.add_argument("--input-size", type=_size, default=d.input_size, help="N or HxW")
    p.add_argument("--depth", type=int, default=d.depth)
    p.add_argument("--augment", type=_bool, default=d.augment)
    p.add_argument("--smooth", type=float, default=d.smooth)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ducknet", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("split", help="write a seeded 80:10:10 split manifest")
    p.add_argument("--data", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="train a network and write checkpoint + loss history")
    _train_flags(p)
    p.add_argument("--out", required=True, help="best-validation checkpoint path")
    p.add_argument("--history", help="loss history path (default: <out>.history)")
    p.add_argument("--final", help="final-epoch checkpoint with optimizer state (default: <out>.final)")

    p = sub.add_parser("eval", help="evaluate a checkpoint on one split section")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", required=True)
    p.add_argument("--section", choices=["train", "val", "test"], default="test")
    p.add_argument("--report", required=True, help="plain-text table")
    p.add_argument("--csv", help="optional per-image comma-separated report")
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--pooled", type=_bool, default=False,
                   help="add a row computed from pooled pixel counts")

    p = sub.add_parser("predict", help="predict one binary mask")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--panel", help="image | ground truth | prediction side-by-side file")
    p.add_argument("--gt", help="ground-truth mask for the panel")
    p.add_argument("--threshold", type=float, default=0.5)

    p = sub.add_parser("ablation", help="train duck and simple blocks, report both")
    _train_flags(p)
    p.add_argument("--section", choices=["val", "test"], default="test")
    p.add_argument("--out-dir", required=True, help="directory for both checkpoints")
    p.add_argument("--report", required=True)
    p.add_argument("--csv", help="optional comma-separated copy of the report")

    p = sub.add_parser("verify", help="run a built-in verification suite")
    p.add_argument("--suite", choices=list(verify.SUITES) + ["all"], required=True)

    p = sub.add_parser("synth", help="write a seeded synthetic blob dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--size", type=_size, default=(64, 64))

    for action in sub.choices.values():
        action.add_argument("--config", help="key=value file; command-line flags take precedence")
    return parser


def _flag_given(argv: list[str], key: str) -> bool:
    flags = {f"--{key}", f"--{key.replace('_', '-')}"}
    return any(a in flags or a.split("=", 1)[0] in flags for a in argv)


def parse_args(argv=None) -> argparse.Namespace:
    """Parse ``argv``; values from ``--config`` are appended as flags unless already given."""
    argv = list(sys.argv[1:] if argv is None else argv)
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if known.config:
        for key, value in read_config(known.config).items():
            if key != "config" and not _flag_given(argv, key):
                argv += [f"--{key.replace('_', '-')}", value]
    return build_parser().parse_args(argv)


def _train_config(args, block: str | None = None) -> TrainConfig:
    return TrainConfig(lr=args.lr, batch_size=args.batch_size, epochs=args.epochs,
                       input_size=args.input_size, seed=args.seed, filters=args.filters,
                       block=block or args.block, depth=args.depth, augment=args.augment,
                       smooth=args.smooth)


def _load_section(data, manifest, section):
    ids = manifest.section(section)
    return load_dataset(data, ids) if ids else []


def _fit(args, cfg: TrainConfig):
    manifest = read_manifest(args.split)
    train_set = prepare(_load_section(args.data, manifest, "train"), cfg.input_size)
    val_set = prepare(_load_section(args.data, manifest, "val"), cfg.input_size)
    if not train_set:
        raise UsageError(f"{args.split}: training section is empty")
    net = build_network(cfg.net_spec(), seed=cfg.seed)
    label = f"[{cfg.block}] " if args.command == "ablation" else ""
    result = train(net, train_set, val_set, cfg,
                   on_epoch=lambda r: print(f"{label}epoch {r.epoch} loss {r.train_loss:.6f} "
                                            f"val_dice {r.val_dice:.6f}", flush=True))
    return net, result


def cmd_split(args) -> int:
    ids = list(scan_dataset(args.data))
    manifest = split_dataset(ids, args.seed)
    write_manifest(args.out, manifest)
    print(f"train {len(manifest.train)}  val {len(manifest.val)}  test {len(manifest.test)}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _train_config(args)
    net, result = _fit(args, cfg)
    history = args.history or f"{args.out}.history"
    final = args.final or f"{args.out}.final"
    write_training_outputs(net, result, args.out, history, final)
    print(f"best epoch {result.best_epoch} val_dice {result.best_val_dice:.6f}; wrote {args.out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    net = load_checkpoint(args.ckpt)
    manifest = read_manifest(args.split)
    samples = _load_section(args.data, manifest, args.section)
    if not samples:
        raise UsageError(f"{args.split}: section '{args.section}' is empty")
    report = evaluate(net, samples, args.threshold)
    rows = [(f"{args.section} mean (n={report.n})", report.mean), ("SD", report.sd)]
    if args.pooled:
        rows.append(("pooled", report.pooled))
    text = format_table(rows)
    atomic_write(args.report, text)
    if args.csv:
        atomic_write(args.csv, report.to_csv())
    print(text, end="")
    return EXIT_OK


def cmd_predict(args) -> int:
    net = load_checkpoint(args.ckpt)
    mask = predict(net, args.image, args.out, args.threshold, args.panel, args.gt)
    print(f"wrote {args.out} ({mask.shape[0]}x{mask.shape[1]}, {int(mask.sum())} foreground pixels)")
    return EXIT_OK


ABLATION_LABELS = {"duck": "DUCK-Net (F={f})", "simple": "DUCK-Net + simple blocks (F={f})"}


def cmd_ablation(args) -> int:
    out_dir = Path(args.out_dir)
    manifest = read_manifest(args.split)
    held_out = _load_section(args.data, manifest, args.section)
    if not held_out:
        raise UsageError(f"{args.split}: section '{args.section}' is empty")
    rows = []
    for block in ("duck", "simple"):
        cfg = _train_config(args, block)
        net, result = _fit(args, cfg)
        ckpt = out_dir / f"{block}.ckpt"
        write_training_outputs(net, result, ckpt, out_dir / f"{block}.history")
        restore(net, result.best_state)
        report = evaluate(net, held_out)
        rows.append((ABLATION_LABELS[block].format(f=cfg.filters), report.mean))
    text = format_table(rows)
    atomic_write(args.report, text)
    if args.csv:
        atomic_write(args.csv, format_csv(rows))
    print(text, end="")
    return EXIT_OK


def cmd_verify(args) -> int:
    names = list(verify.SUITES) if args.suite == "all" else [args.suite]
    ok = True
    for name in names:
        for check in verify.run_suite(name):
            print(check.line(), flush=True)
            ok &= check.passed
    return EXIT_OK if ok else EXIT_VERIFY


def cmd_synth(args) -> int:
    ids = write_dataset(args.out, args.n, args.seed, args.size)
    print(f"wrote {len(ids)} samples to {args.out}")
    return EXIT_OK


COMMANDS = {
    "split": cmd_split, "train": cmd_train, "eval": cmd_eval, "predict": cmd_predict,
    "ablation": cmd_ablation, "verify": cmd_verify, "synth": cmd_synth,
}


def main(argv=None) -> int:
    try:
        args = parse_args(argv)
    except UsageError as exc:
        print(f"ducknet: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:
        return int(exc.code or 0)
    configure_threads()
    try:
        return COMMANDS[args.command](args)
    except NumericalError as exc:
        print(f"ducknet: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except DatasetError as exc:
        print("ducknet: dataset problems:", file=sys.stderr)
        for p in exc.problems:
            print(f"  {p}", file=sys.stderr)
        return EXIT_USAGE
    except (UsageError, SplitError, CheckpointError, ImageReadError, ShapeError,
            ValueError, FileNotFoundError) as exc:
        print(f"ducknet: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
