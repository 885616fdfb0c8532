"""Population-based evolutionary improvement of a transit network."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from ..graph import CityGraph, CostWeights, Network, ShortestPathData, evaluate_cost
from ..mdp import MdpContext, Policy, UniformRandomPolicy
from .mutators import NeuralMutator, Type1Mutator, Type2Mutator

Mutator = Callable[[list[Network], np.random.Generator], list[Network]]


@dataclass(frozen=True)
class EaConfig:
    population: int = 10
    iterations: int = 400
    mutations_per_stage: int = 10
    p_delete: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if self.population < 2 or self.population % 2:
            raise ValueError("population must be an even number >= 2")
        if self.iterations < 0 or self.mutations_per_stage < 1:
            raise ValueError("need iterations >= 0 and mutations_per_stage >= 1")
        if not 0.0 <= self.p_delete <= 1.0:
            raise ValueError("p_delete must lie in [0, 1]")


@dataclass
class EaHistory:
    best_cost: list[float] = field(default_factory=list)
    mean_cost: list[float] = field(default_factory=list)
    evaluations: int = 0

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["iteration", "best_cost", "mean_cost"])
            for i, (b, m) in enumerate(zip(self.best_cost, self.mean_cost)):
                w.writerow([i, b, m])


def selection_stage(population: list[Network], costs: Sequence[float],
                    rng: np.random.Generator) -> tuple[list[Network], list[float]]:
    """Kill members at random (worse ones more likely) and refill from survivors."""
    if len(population) < 2:
        raise ValueError("selection needs at least two members")
    c = np.asarray(costs, dtype=float)
    spread = c.max() - c.min()
    fitness = (c.max() - c) / spread if spread > 0 else np.zeros_like(c)
    alive = rng.random(len(c)) < 1.0 - np.exp(-fitness)
    if not alive.any():
        return list(population), list(c)
    w = fitness * alive
    p = w / w.sum()
    pop, out_c = list(population), list(c)
    for b in np.flatnonzero(~alive):
        k = int(rng.choice(len(p), p=p))
        pop[b], out_c[b] = population[k], float(c[k])
    return pop, out_c


def run_ea(city: CityGraph, weights: CostWeights, cfg: EaConfig, mutators: tuple[Mutator, Mutator],
           initial: Network, cost_fn: Callable[[Network], float] | None = None,
           rng: np.random.Generator | None = None) -> tuple[Network, EaHistory]:
    """Evolve ``cfg.population`` copies of ``initial``; returns the best network seen.

    In each of ``cfg.mutations_per_stage`` passes, a random half of the
    population gets the first mutator and the rest the second; a mutant
    replaces its parent only if strictly cheaper.
    """
    if len(initial) != weights.n_routes:
        raise ValueError(f"initial network has {len(initial)} routes, expected {weights.n_routes}")
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    cost = cost_fn or (lambda net: evaluate_cost(city, net, weights).total)
    B = cfg.population
    c0 = cost(initial)
    pop, costs = [initial] * B, [c0] * B
    best, best_cost = initial, c0
    hist = EaHistory([c0], [c0])
    order = np.arange(B)
    for _ in range(cfg.iterations):
        for _ in range(cfg.mutations_per_stage):
            halves = (order[: B // 2], order[B // 2:])
            for mutate, idx in zip(mutators, halves):
                mutants = mutate([pop[b] for b in idx], rng)
                for b, m in zip(idx, mutants):
                    cm = cost(m)
                    hist.evaluations += 1
                    if cm < costs[b]:
                        pop[b], costs[b] = m, cm
                        if cm < best_cost:
                            best, best_cost = m, cm
            order = rng.permutation(B)
        pop, costs = selection_stage(pop, costs, rng)
        hist.best_cost.append(best_cost)
        hist.mean_cost.append(float(np.mean(costs)))
    return best, hist


def make_mutators(variant: str, city: CityGraph, weights: CostWeights, sp: ShortestPathData,
                  p_delete: float = 0.2, policy: Policy | None = None) -> tuple[Mutator, Mutator]:
    """Mutator pair for ``ea``, ``nea``, ``all1`` (neural only) or ``rc-ea``."""
    variant = variant.lower()
    if variant == "ea":
        return Type1Mutator(city, sp), Type2Mutator(city, p_delete)
    ctx = MdpContext(city, weights, sp=sp)
    if variant == "rc-ea":
        return NeuralMutator(ctx, UniformRandomPolicy()), Type2Mutator(city, p_delete)
    if policy is None:
        raise ValueError(f"variant {variant!r} needs a policy")
    neural = NeuralMutator(ctx, policy)
    if variant == "nea":
        return neural, Type2Mutator(city, p_delete)
    if variant == "all1":
        return neural, neural
    raise ValueError(f"unknown EA variant {variant!r}")
