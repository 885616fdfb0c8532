"""Benchmark comparison: construction and metaheuristic methods over the alpha grid.

Needs the benchmark text files (``--data-dir`` or TNDP_BENCHMARK_DIR) and a
trained checkpoint for the learned methods. Results are appended to a CSV, so
an interrupted sweep resumes where it stopped; an aggregate table is written
next to it.
"""
import argparse
import logging
from pathlib import Path

from tndp import bench


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--cities", nargs="+", default=["mandl", "mumford0"])
    ap.add_argument("--methods", nargs="+", default=["lc100", "rc100", "nikolic", "ea", "nea"])
    ap.add_argument("--checkpoint", default="runs/reduced/best.pt")
    ap.add_argument("--data-dir")
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    ap.add_argument("--alphas", type=float, nargs="+", default=list(bench.ALPHA_GRID))
    ap.add_argument("--ea-iterations", type=int, default=400)
    ap.add_argument("--out", default="runs/sweep.csv")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    cases = [bench.load_benchmark(c, args.data_dir) for c in args.cities]
    methods = {m: bench.make_method(m, args.checkpoint, ea_iterations=args.ea_iterations) for m in args.methods}
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    rows = bench.run_sweep(cases, methods, args.alphas, args.seeds, out)
    bench.export_aggregate(bench.aggregate(rows), out.with_name(out.stem + "_aggregate.csv"))


if __name__ == "__main__":
    main()
