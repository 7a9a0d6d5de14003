"""Desk-scale overfit run: fit 8 synthetic 64x64 samples, one line per seed.

    python scripts/overfit.py --seeds 0-9 --epochs 200
"""
import argparse
import time

from ducknet.synthetic import make_samples
from ducknet.tensorcore import configure_threads
from ducknet.training import overfit_trial


def seed_range(text):
    if "-" in text:
        lo, hi = (int(v) for v in text.split("-"))
        return list(range(lo, hi + 1))
    return [int(v) for v in text.split(",")]


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--seeds", type=seed_range, default=list(range(10)))
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--filters", type=int, default=8)
    p.add_argument("--data-seed", type=int, default=0)
    p.add_argument("--every", type=int, default=0, help="print the loss every N epochs")
    args = p.parse_args()
    configure_threads()
    samples = make_samples(8, seed=args.data_seed, size=(64, 64))

    def progress(rec):
        if args.every and rec.epoch % args.every == 0:
            print(f"  epoch {rec.epoch} loss {rec.train_loss:.4f}", flush=True)

    passed = 0
    for seed in args.seeds:
        t0 = time.perf_counter()
        out = overfit_trial(samples, seed, args.epochs, args.filters, on_epoch=progress)
        passed += out.passed()
        print(f"{out.line()}  [{'pass' if out.passed() else 'fail'}, "
              f"{time.perf_counter() - t0:.0f} s]", flush=True)
    print(f"{passed}/{len(args.seeds)} seeds reached dice >= 0.95 and soft loss <= 0.05")


if __name__ == "__main__":
    main()
