"""Sequence-based selection hyper-heuristic with a Great Deluge acceptance rule."""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from ..graph import CityGraph, CostWeights, Network, ShortestPathData, all_pairs_shortest_paths, evaluate_cost
from .init import constraint_cost

Heuristic = Callable[[Network, CityGraph, ShortestPathData, np.random.Generator], Network]


def _two_routes(net: Network, rng) -> tuple[int, int] | None:
    if len(net) < 2:
        return None
    a, b = rng.choice(len(net), size=2, replace=False)
    return int(a), int(b)


def _set(net: Network, changes: dict) -> Network:
    out = list(net)
    for k, r in changes.items():
        out[k] = tuple(int(v) for v in r)
    return tuple(out)


def h_delete(net, city, sp, rng):
    k = int(rng.integers(len(net)))
    r = net[k]
    if len(r) < 2:
        return net
    i = int(rng.integers(len(r)))
    return _set(net, {k: r[:i] + r[i + 1:]})


def h_insert(net, city, sp, rng):
    k = int(rng.integers(len(net)))
    r = net[k]
    v = int(rng.integers(city.n))
    i = int(rng.integers(len(r) + 1))
    return _set(net, {k: r[:i] + (v,) + r[i:]})


def h_swap_between(net, city, sp, rng):
    pair = _two_routes(net, rng)
    if pair is None:
        return net
    a, b = pair
    ra, rb = list(net[a]), list(net[b])
    i, j = int(rng.integers(len(ra))), int(rng.integers(len(rb)))
    ra[i], rb[j] = rb[j], ra[i]
    return _set(net, {a: ra, b: rb})


def h_move(net, city, sp, rng):
    pair = _two_routes(net, rng)
    if pair is None:
        return net
    a, b = pair
    ra, rb = list(net[a]), list(net[b])
    if len(ra) < 2:
        return net
    v = ra.pop(int(rng.integers(len(ra))))
    rb.insert(int(rng.integers(len(rb) + 1)), v)
    return _set(net, {a: ra, b: rb})


def h_replace_terminal(net, city, sp, rng):
    k = int(rng.integers(len(net)))
    r = list(net[k])
    r[0 if rng.random() < 0.5 else -1] = int(rng.integers(city.n))
    return _set(net, {k: r})


def h_reverse_section(net, city, sp, rng):
    k = int(rng.integers(len(net)))
    r = list(net[k])
    if len(r) < 2:
        return net
    i, j = sorted(int(x) for x in rng.choice(len(r), size=2, replace=False))
    r[i:j + 1] = r[i:j + 1][::-1]
    return _set(net, {k: r})


def h_replace_route(net, city, sp, rng):
    k = int(rng.integers(len(net)))
    i, j = (int(x) for x in rng.choice(city.n, size=2, replace=False))
    return _set(net, {k: sp.path(i, j)})


HEURISTICS: tuple[Heuristic, ...] = (h_delete, h_insert, h_swap_between, h_move,
                                     h_replace_terminal, h_reverse_section, h_replace_route)


@dataclass(frozen=True)
class DelugeConfig:
    f0: float = 0.0
    delta_f: float | None = None  # None: cost of the initial network
    limit: int = 500_000

    def __post_init__(self):
        if self.delta_f is not None and self.delta_f < 0:
            raise ValueError("delta_f must be non-negative")
        if self.limit < 0:
            raise ValueError("limit must be non-negative")


def deluge_threshold(i: int, cfg: DelugeConfig) -> float:
    if cfg.delta_f is None:
        raise ValueError("delta_f is unset")
    frac = i / cfg.limit if cfg.limit > 0 else 1.0
    return cfg.f0 + cfg.delta_f * (1.0 - frac)


def deluge_accept(candidate: float, current: float, i: int, cfg: DelugeConfig) -> bool:
    return candidate < current or candidate <= deluge_threshold(i, cfg)


@dataclass
class HhState:
    tran: np.ndarray
    seq: np.ndarray
    current: Network
    current_cost: float
    best: Network
    best_cost: float
    iteration: int = 0
    accepted: int = 0


def hh_cost(city: CityGraph, net: Network, weights: CostWeights) -> float:
    """Network cost, or ``inf`` if any constraint (including path validity) is broken."""
    if constraint_cost(city, net, weights) > 0:
        return math.inf
    return evaluate_cost(city, net, weights).total


def hh_run(city: CityGraph, weights: CostWeights, initial: Network, deluge: DelugeConfig = DelugeConfig(),
           rng: np.random.Generator | int | None = None, sp: ShortestPathData | None = None,
           heuristics: tuple[Heuristic, ...] = HEURISTICS) -> tuple[Network, HhState]:
    """Improve ``initial`` by applying learned sequences of low-level heuristics."""
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    sp = all_pairs_shortest_paths(city) if sp is None else sp
    c0 = hh_cost(city, initial, weights)
    if not math.isfinite(c0):
        raise ValueError("initial network violates the network constraints")
    if deluge.delta_f is None:
        deluge = dataclasses.replace(deluge, delta_f=c0)
    H = len(heuristics)
    st = HhState(np.ones((H, H)), np.ones((H, 2)), initial, c0, initial, c0)
    while st.iteration < deluge.limit:
        seq = [int(rng.integers(H))]
        st.iteration += 1
        while st.iteration < deluge.limit:
            h = seq[-1]
            if rng.random() < st.seq[h, 0] / st.seq[h].sum():
                break
            row = st.tran[h]
            seq.append(int(rng.choice(H, p=row / row.sum())))
            st.iteration += 1
        cand = st.current
        for h in seq:
            cand = heuristics[h](cand, city, sp, rng)
        cost = hh_cost(city, cand, weights)
        if math.isfinite(cost) and deluge_accept(cost, st.current_cost, st.iteration, deluge):
            for a, b in zip(seq, seq[1:]):
                st.tran[a, b] += 1
                st.seq[a, 1] += 1
            st.seq[seq[-1], 0] += 1
            st.accepted += 1
            st.current, st.current_cost = cand, cost
            if cost < st.best_cost:
                st.best, st.best_cost = cand, cost
    return st.best, st
