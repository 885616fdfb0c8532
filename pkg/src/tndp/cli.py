"""Command-line entry point: ``tndp <subcommand> ...``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import bench
from .cityio import city_from_dict, city_to_dict, load_city, save_network


def _add_common(p: argparse.ArgumentParser, city: bool = True) -> None:
    if city:
        p.add_argument("--city", required=True, help="benchmark name (mandl, mumford0..3) or city JSON file")
        p.add_argument("--data-dir", help="directory with benchmark text files")
        p.add_argument("--routes", type=int, default=10, help="route count for JSON cities")
        p.add_argument("--min-stops", type=int, default=2)
        p.add_argument("--max-stops", type=int, default=12)
    p.add_argument("--alpha", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--checkpoint", help="policy checkpoint; may contain {seed}")
    p.add_argument("--out", help="output path")
    p.add_argument("--config", help="JSON file of extra options")


def _case(args, name: str | None = None) -> bench.BenchmarkCase:
    name = name or args.city
    if name.lower() in bench.BENCHMARKS:
        return bench.load_benchmark(name, args.data_dir, args.alpha)
    city = load_city(name)
    return bench.city_case(Path(name).stem, city, args.routes, args.min_stops, args.max_stops, args.alpha)


def _config(args) -> dict:
    return json.loads(Path(args.config).read_text()) if getattr(args, "config", None) else {}


def _emit(case: bench.BenchmarkCase, method: str, seed: int, network, out: str | None) -> None:
    row = bench.row_for(case, method, seed, network, 0.0)
    print(json.dumps({"cp_minutes": row.cp, "co_minutes": row.co, "total": row.total, "cc": row.cc,
                      "valid": row.valid, "d0": row.d0, "d1": row.d1, "d2": row.d2, "d_un": row.d_un}))
    if out:
        save_network(network, out)


def cmd_gen_cities(args) -> int:
    from .citygen import GenConfig, generate_dataset
    cfg = GenConfig(n=args.n, seed=args.seed, **_config(args))
    with open(args.out, "w") as f:
        for city, proc in generate_dataset(args.count, cfg):
            f.write(json.dumps({"process": proc, **city_to_dict(city)}) + "\n")
    return 0


def read_cities(path: str | Path):
    with open(path) as f:
        return [city_from_dict(json.loads(line)) for line in f if line.strip()]


def cmd_train(args) -> int:
    from .train import TrainConfig, train
    cfg = TrainConfig.from_dict({"seed": args.seed, **_config(args)})
    _, _, report = train(read_cities(args.cities), cfg, out_dir=args.out)
    print(json.dumps({"best_iteration": report.best_iteration, "best_cost": report.best_cost,
                      "validation": report.validation}))
    return 0


def cmd_construct(args) -> int:
    case = _case(args)
    net = bench.make_method(args.method, args.checkpoint)(case, args.seed)
    _emit(case, args.method, args.seed, net, args.out)
    return 0


def cmd_evolve(args) -> int:
    case = _case(args)
    opts = _config(args)
    method = bench.make_method(args.variant, args.checkpoint, ea_iterations=args.iterations, **opts)
    _emit(case, args.variant, args.seed, method(case, args.seed), args.out)
    return 0


def cmd_hh(args) -> int:
    case = _case(args)
    method = bench.make_method("hh", hh_limit=args.limit)
    _emit(case, "hh", args.seed, method(case, args.seed), args.out)
    return 0


def cmd_sweep(args) -> int:
    cases = [_case(args, c) for c in args.cities]
    methods = {m: bench.make_method(m, args.checkpoint, ea_iterations=args.iterations) for m in args.methods}
    rows = bench.run_sweep(cases, methods, args.alphas, args.seeds, args.out)
    failed = [r for r in rows if r.status != "ok"]
    print(f"{len(rows)} rows, {len(failed)} failed")
    return 1 if failed and args.strict else 0


def cmd_hypervolume(args) -> int:
    from .hypervolume import hypervolume, reference_point
    agg = bench.aggregate(bench.read_report(args.report), exclude_invalid=not args.include_invalid)
    sets: dict[tuple, list] = {}
    for a in agg:
        if a.count:
            sets.setdefault((a.city, a.method), []).append((a.cp_mean, a.co_mean))
    out = {}
    for city in sorted({c for c, _ in sets}):
        mine = {m: pts for (c, m), pts in sets.items() if c == city}
        ref = reference_point(mine.values())
        out[city] = {m: hypervolume(pts, ref) for m, pts in mine.items()}
    print(json.dumps(out, indent=2))
    return 0


def cmd_report(args) -> int:
    rows = bench.read_report(args.report)
    agg = bench.aggregate(rows, exclude_invalid=not args.include_invalid)
    bench.export_aggregate(agg, args.out)
    for a in agg:
        print(f"{a.city:10s} {a.method:9s} a={a.alpha:.1f} n={a.count:3d} C_p={a.cp_mean:8.3f}±{a.cp_std:.3f} "
              f"C_o={a.co_mean:9.2f}±{a.co_std:.2f} C={a.total_mean:.4f} invalid={a.invalid}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="tndp")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-cities", help="write synthetic cities as JSON lines")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--n", type=int, default=20)
    _add_common(p, city=False)
    p.set_defaults(func=cmd_gen_cities)

    p = sub.add_parser("train", help="train a construction policy")
    p.add_argument("--cities", required=True, help="JSON-lines file from gen-cities")
    _add_common(p, city=False)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("construct", help="build one network by sampling or a classic initializer")
    _add_common(p)
    p.add_argument("--method", default="lc100", choices=["lc100", "lc40k", "lcgreedy", "rc100",
                                                        "nikolic", "john", "ahmed"])
    p.set_defaults(func=cmd_construct)

    p = sub.add_parser("evolve", help="run an evolutionary algorithm variant")
    _add_common(p)
    p.add_argument("--variant", default="nea", choices=["ea", "nea", "rcea", "all1"])
    p.add_argument("--iterations", type=int, default=400)
    p.set_defaults(func=cmd_evolve)

    p = sub.add_parser("hh", help="run the hyper-heuristic from an Ahmed initial network")
    _add_common(p)
    p.add_argument("--limit", type=int, default=500_000)
    p.set_defaults(func=cmd_hh)

    p = sub.add_parser("sweep", help="run methods over cities, alphas and seeds into a resumable CSV")
    _add_common(p, city=False)
    p.add_argument("--cities", nargs="+", required=True)
    p.add_argument("--data-dir")
    p.add_argument("--routes", type=int, default=10)
    p.add_argument("--min-stops", type=int, default=2)
    p.add_argument("--max-stops", type=int, default=12)
    p.add_argument("--methods", nargs="+", required=True, choices=list(bench.METHODS))
    p.add_argument("--alphas", nargs="+", type=float, default=list(bench.ALPHA_GRID))
    p.add_argument("--seeds", nargs="+", type=int, default=list(range(10)))
    p.add_argument("--iterations", type=int, default=400)
    p.add_argument("--strict", action="store_true", help="exit non-zero if any row failed")
    p.set_defaults(func=cmd_sweep)

    for name, fn, hlp in (("hypervolume", cmd_hypervolume, "hypervolume per city and method"),
                          ("report", cmd_report, "per-alpha aggregate table")):
        p = sub.add_parser(name, help=hlp)
        p.add_argument("--report", required=True, help="sweep CSV")
        p.add_argument("--out", default="aggregate.csv")
        p.add_argument("--include-invalid", action="store_true")
        p.set_defaults(func=fn)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
