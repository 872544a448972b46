"""Write the data behind every figure as tab-separated files."""
import argparse
from pathlib import Path

from eprlab.figures import FIGURES, make_figure


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("out", type=Path)
    ap.add_argument("--only", nargs="*", choices=FIGURES)
    ap.add_argument("--duration", type=float, default=None, help="override per-point durations")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args()

    args.out.mkdir(parents=True, exist_ok=True)
    for name in args.only or FIGURES:
        fig = make_figure(name, duration=args.duration, seed=args.seed, workers=args.workers)
        print(fig.write(args.out / f"{name}.tsv"))


if __name__ == "__main__":
    main()
