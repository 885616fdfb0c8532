"""Reduced-scale training run: 4096 n=20 cities, batch 64, 100 iterations.

Writes checkpoints, curve.csv and report.json under the output directory
(default runs/reduced), which the acceptance suite reads.
"""
import argparse
import logging
from pathlib import Path

from tndp.citygen import GenConfig, generate_dataset
from tndp.train import TrainConfig, train


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="runs/reduced")
    ap.add_argument("--cities", type=int, default=4096)
    ap.add_argument("--batch", type=int, default=64)
    ap.add_argument("--iterations", type=int, default=100)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    cities = [c for c, _ in generate_dataset(args.cities, GenConfig(n=20, seed=args.seed))]
    cfg = TrainConfig(iterations=args.iterations, batch_size=args.batch, seed=args.seed)
    _, _, report = train(cities, cfg, out_dir=Path(args.out))
    first = report.validation[0][1]
    print(f"iteration-0 C_v {first:.4f}  best C_v {report.best_cost:.4f} at iteration {report.best_iteration}"
          f"  ({100 * (1 - report.best_cost / first):.1f}% lower)")


if __name__ == "__main__":
    main()
