"""Duck vs simple-block ablation on a generated 40-image set (32 train / 8 test).

    python scripts/ablation_demo.py --work /tmp/ablation --epochs 2
"""
import argparse
import sys
from pathlib import Path

from ducknet.cli import main as cli
from ducknet.datapipe.split import SplitManifest, write_manifest
from ducknet.synthetic import write_dataset


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--work", type=Path, required=True)
    p.add_argument("--epochs", type=int, default=2)
    p.add_argument("--filters", type=int, default=8)
    p.add_argument("--seed", type=int, default=3)
    args = p.parse_args()
    data = args.work / "data"
    ids = write_dataset(data, 40, seed=7, size=(64, 64))
    split = args.work / "split.txt"
    write_manifest(split, SplitManifest(7, tuple(ids[:32]), (), tuple(ids[32:])))
    return cli(["ablation", "--data", str(data), "--split", str(split),
                "--filters", str(args.filters), "--epochs", str(args.epochs),
                "--input-size", "64", "--seed", str(args.seed),
                "--out-dir", str(args.work / "models"), "--report", str(args.work / "report.txt")])


if __name__ == "__main__":
    sys.exit(main())
