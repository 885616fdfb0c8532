"""Benchmark cities, construction protocols, sweeps and reports."""
from __future__ import annotations

import csv
import logging
import math
import os
import time
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .cityio import parse_mumford_city
from .graph import CityGraph, CostWeights, Network, ShortestPathData, all_pairs_shortest_paths, evaluate_cost
from .mdp import MdpContext, MdpOptions, Policy, UniformRandomPolicy, rollout_batch

log = logging.getLogger(__name__)

# name -> (n, street edges, S, m_min, m_max)
BENCHMARKS: dict[str, tuple[int, int, int, int, int]] = {
    "mandl": (15, 20, 6, 2, 8),
    "mumford0": (30, 90, 12, 2, 15),
    "mumford1": (70, 210, 15, 10, 30),
    "mumford2": (110, 385, 56, 10, 22),
    "mumford3": (127, 425, 60, 12, 25),
}
ALPHA_GRID = tuple(round(0.1 * k, 1) for k in range(11))
DATA_ENV = "TNDP_BENCHMARK_DIR"


class BenchmarkMissing(FileNotFoundError):
    pass


@dataclass(frozen=True, eq=False)
class BenchmarkCase:
    name: str
    city: CityGraph
    weights: CostWeights
    sp: ShortestPathData

    def with_alpha(self, alpha: float) -> "BenchmarkCase":
        return BenchmarkCase(self.name, self.city, self.weights.with_alpha(alpha), self.sp)

    def context(self, enforce_connectedness: bool = False) -> MdpContext:
        return MdpContext(self.city, self.weights, MdpOptions(enforce_connectedness), self.sp)


def benchmark_dir(data_dir: str | Path | None = None) -> Path:
    if data_dir is not None:
        return Path(data_dir)
    return Path(os.environ.get(DATA_ENV, "data"))


def _find(folder: Path, name: str, kind: str) -> Path:
    for cand in folder.iterdir() if folder.is_dir() else ():
        stem = cand.name.lower()
        if stem.startswith(name) and kind in stem:
            return cand
    raise BenchmarkMissing(f"no {kind} file for {name} in {folder}; set {DATA_ENV} to the directory holding "
                           f"e.g. {name.capitalize()}Coords.txt, {name.capitalize()}TravelTimes.txt, "
                           f"{name.capitalize()}Demand.txt")


def case_weights(name: str, sp: ShortestPathData, alpha: float = 0.5, beta: float = 5.0) -> CostWeights:
    _, _, S, lo, hi = BENCHMARKS[name]
    return CostWeights.for_city(sp, n_routes=S, min_stops=lo, max_stops=hi, alpha=alpha, beta=beta)


def load_benchmark(name: str, data_dir: str | Path | None = None, alpha: float = 0.5) -> BenchmarkCase:
    name = name.lower()
    if name not in BENCHMARKS:
        raise ValueError(f"unknown benchmark {name!r}; choose from {sorted(BENCHMARKS)}")
    folder = benchmark_dir(data_dir)
    city = parse_mumford_city(_find(folder, name, "coords"), _find(folder, name, "traveltimes"),
                              _find(folder, name, "demand"))
    n, n_edges = BENCHMARKS[name][:2]
    if city.n != n:
        raise ValueError(f"{name} should have {n} nodes but the files describe {city.n}")
    if len(city.edges) != n_edges:
        log.warning("%s has %d street edges; the reference table lists %d", name, len(city.edges), n_edges)
    sp = all_pairs_shortest_paths(city)
    return BenchmarkCase(name, city, case_weights(name, sp, alpha), sp)


def city_case(name: str, city: CityGraph, n_routes: int, min_stops: int, max_stops: int,
              alpha: float = 0.5) -> BenchmarkCase:
    sp = all_pairs_shortest_paths(city)
    w = CostWeights.for_city(sp, n_routes=n_routes, min_stops=min_stops, max_stops=max_stops, alpha=alpha)
    return BenchmarkCase(name, city, w, sp)


CONSTRUCTION_MODES = {"lc100": (100, False), "lc40k": (40_000, False), "lcgreedy": (1, True), "rc100": (100, False)}


def sample_networks(ctx: MdpContext, policy: Policy, samples: int, greedy: bool = False,
                    rng: np.random.Generator | int | None = None, batch: int = 100) -> list[Network]:
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    out: list[Network] = []
    while len(out) < samples:
        k = min(batch, samples - len(out))
        nets, _ = rollout_batch([ctx] * k, policy, greedy=greedy, rng=rng)
        out.extend(nets)
    return out


def sample_best_construction(case: BenchmarkCase, policy: Policy | None, mode: str = "lc100",
                             rng: np.random.Generator | int | None = None,
                             samples: int | None = None) -> tuple[Network, list[float]]:
    """Best (lowest total cost) of several constructed networks, plus every sample's cost."""
    mode = mode.lower()
    if mode not in CONSTRUCTION_MODES:
        raise ValueError(f"unknown construction mode {mode!r}")
    k, greedy = CONSTRUCTION_MODES[mode]
    k = samples if samples is not None else k
    if k < 1:
        raise ValueError("need at least one sample")
    if mode == "rc100":
        policy = UniformRandomPolicy()
    elif policy is None:
        raise ValueError(f"{mode} needs a policy")
    nets = sample_networks(case.context(), policy, k, greedy, rng)
    costs = [evaluate_cost(case.city, n, case.weights).total for n in nets]
    return nets[int(np.argmin(costs))], costs


@dataclass
class RunRow:
    city: str
    method: str
    alpha: float
    seed: int
    cp: float = math.nan
    co: float = math.nan
    d0: float = math.nan
    d1: float = math.nan
    d2: float = math.nan
    d_un: float = math.nan
    cc: float = math.nan
    total: float = math.nan
    valid: bool = False
    seconds: float = 0.0
    status: str = "ok"
    error: str = ""

    def key(self) -> tuple:
        return (self.city, self.method, round(float(self.alpha), 6), int(self.seed))


COLUMNS = [f.name for f in fields(RunRow)]
Method = Callable[[BenchmarkCase, int], Network]


def row_for(case: BenchmarkCase, method: str, seed: int, network: Network, seconds: float) -> RunRow:
    c = evaluate_cost(case.city, network, case.weights)
    return RunRow(case.name, method, case.weights.alpha, seed, c.cp, c.co, c.d0, c.d1, c.d2, c.d_un, c.cc, c.total,
                  c.cc == 0 and len(network) == case.weights.n_routes, seconds)


def read_report(path: str | Path) -> list[RunRow]:
    rows = []
    with open(path, newline="") as f:
        for rec in csv.DictReader(f):
            kw = {}
            for fld in fields(RunRow):
                v = rec[fld.name]
                if fld.name in ("city", "method", "status", "error"):
                    kw[fld.name] = v
                elif fld.name == "seed":
                    kw[fld.name] = int(v)
                elif fld.name == "valid":
                    kw[fld.name] = v == "True"
                else:
                    kw[fld.name] = float(v)
            rows.append(RunRow(**kw))
    return rows


def export_report(rows: Sequence[RunRow], path: str | Path) -> None:
    if not rows:
        raise ValueError("report is empty")
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, COLUMNS)
        w.writeheader()
        for r in rows:
            w.writerow(asdict(r))


def run_sweep(cases: Sequence[BenchmarkCase], methods: dict[str, Method], alphas: Iterable[float],
              seeds: Iterable[int], out: str | Path) -> list[RunRow]:
    """Run every (case, method, alpha, seed), appending rows to ``out`` as they finish.

    Rows already in ``out`` are skipped, so an interrupted sweep can be resumed.
    A failing run is recorded with status ``failed`` and the sweep carries on.
    """
    out = Path(out)
    rows = read_report(out) if out.exists() and out.stat().st_size else []
    done = {r.key() for r in rows}
    new_file = not rows
    alphas, seeds = list(alphas), list(seeds)
    with open(out, "a" if rows else "w", newline="") as f:
        w = csv.DictWriter(f, COLUMNS)
        if new_file:
            w.writeheader()
        for case in cases:
            for name, method in methods.items():
                for a in alphas:
                    c = case.with_alpha(a)
                    for seed in seeds:
                        key = (case.name, name, round(float(a), 6), int(seed))
                        if key in done:
                            continue
                        t0 = time.time()
                        try:
                            row = row_for(c, name, seed, method(c, seed), time.time() - t0)
                        except Exception as e:  # noqa: BLE001 - a failed run must not end the sweep
                            log.warning("%s failed: %s", key, e)
                            row = RunRow(case.name, name, float(a), int(seed), status="failed", error=str(e),
                                         seconds=time.time() - t0)
                        w.writerow(asdict(row))
                        f.flush()
                        rows.append(row)
                        done.add(key)
    return rows


@dataclass
class AggregateRow:
    city: str
    method: str
    alpha: float
    count: int
    cp_mean: float
    cp_std: float
    co_mean: float
    co_std: float
    total_mean: float
    total_std: float
    invalid: int


def aggregate(rows: Sequence[RunRow], exclude_invalid: bool = True) -> list[AggregateRow]:
    """Per (city, method, alpha) means and population standard deviations."""
    groups: dict[tuple, list[RunRow]] = {}
    for r in rows:
        if r.status != "ok":
            continue
        groups.setdefault((r.city, r.method, round(r.alpha, 6)), []).append(r)
    out = []
    for (city, method, alpha), rs in sorted(groups.items()):
        invalid = sum(not r.valid for r in rs)
        use = [r for r in rs if r.valid] if exclude_invalid else rs
        if use:
            cp = np.array([r.cp for r in use])
            co = np.array([r.co for r in use])
            tot = np.array([r.total for r in use])
            stats = (cp.mean(), cp.std(), co.mean(), co.std(), tot.mean(), tot.std())
        else:
            stats = (math.nan,) * 6
        out.append(AggregateRow(city, method, alpha, len(use), *map(float, stats), invalid))
    return out


def export_aggregate(rows: Sequence[AggregateRow], path: str | Path) -> None:
    if not rows:
        raise ValueError("nothing to aggregate")
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, [fl.name for fl in fields(AggregateRow)])
        w.writeheader()
        for r in rows:
            w.writerow(asdict(r))


METHODS = ("lc100", "lc40k", "lcgreedy", "rc100", "nikolic", "john", "ahmed", "ea", "nea", "rcea", "all1", "hh")


def _policy_loader(checkpoint: str | Path | None):
    cache: dict[str, Policy] = {}

    def get(seed: int) -> Policy | None:
        if checkpoint is None:
            return None
        path = str(checkpoint).format(seed=seed)
        if path not in cache:
            from .policy import NeuralPolicy, load_policy
            if not Path(path).exists():
                raise FileNotFoundError(f"checkpoint {path} not found")
            cache[path] = NeuralPolicy(load_policy(path)[0])
        return cache[path]

    return get


def make_method(name: str, checkpoint: str | Path | None = None, ea_iterations: int = 400,
                hh_limit: int = 500_000, population: int = 10, mutations: int = 10) -> Method:
    """Build a sweep method. ``checkpoint`` may contain ``{seed}`` to pick a per-seed policy."""
    from .metaheuristics import (
        DelugeConfig, EaConfig, JohnConfig, hh_run, init_ahmed, init_john, init_nikolic, make_mutators, run_ea,
    )

    name = name.lower()
    if name not in METHODS:
        raise ValueError(f"unknown method {name!r}; choose from {METHODS}")
    policy_for = _policy_loader(checkpoint)

    def method(case: BenchmarkCase, seed: int) -> Network:
        rng = np.random.default_rng(seed)
        if name in CONSTRUCTION_MODES:
            return sample_best_construction(case, policy_for(seed), name, rng)[0]
        if name == "nikolic":
            return init_nikolic(case.city, case.sp, case.weights)
        if name == "john":
            return init_john(case.city, case.weights, JohnConfig(), rng)
        if name == "ahmed":
            return init_ahmed(case.city, case.sp, case.weights, rng=rng)
        if name == "hh":
            r0 = init_ahmed(case.city, case.sp, case.weights, rng=rng)
            return hh_run(case.city, case.weights, r0, DelugeConfig(limit=hh_limit), rng, case.sp)[0]
        policy = policy_for(seed)
        if name in ("nea", "all1") and policy is None:
            raise ValueError(f"{name} needs a checkpoint")
        if policy is not None:
            r0 = sample_best_construction(case, policy, "lc100", rng)[0]
        else:
            r0 = init_nikolic(case.city, case.sp, case.weights)
        variant = {"ea": "ea", "nea": "nea", "rcea": "rc-ea", "all1": "all1"}[name]
        muts = make_mutators(variant, case.city, case.weights, case.sp, policy=policy)
        cfg = EaConfig(population=population, iterations=ea_iterations, mutations_per_stage=mutations, seed=seed)
        return run_ea(case.city, case.weights, cfg, muts, r0, rng=rng)[0]

    return method
