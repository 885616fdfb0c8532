"""Initial-network procedures: greedy direct demand, weighted route assembly, and repair."""
from __future__ import annotations

import heapq
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..graph import CityGraph, CostWeights, Network, Route, ShortestPathData, assign, route_time


class InitError(RuntimeError):
    pass


def _candidate_paths(sp: ShortestPathData, n: int, min_stops: int, max_stops: int) -> list[Route]:
    return [sp.path(i, j) for i in range(n) for j in range(i + 1, n)
            if min_stops <= len(sp.path(i, j)) <= max_stops]


def init_nikolic(city: CityGraph, sp: ShortestPathData, weights: CostWeights) -> Network:
    """Greedily take the shortest path serving the most not-yet-served direct demand."""
    n = city.n
    paths = _candidate_paths(sp, n, 2, weights.max_stops)
    if not paths:
        raise InitError("no shortest path fits within max_stops")
    member = np.zeros((len(paths), n))
    for k, p in enumerate(paths):
        member[k, list(p)] = 1.0
    D = city.demand.astype(float).copy()
    np.fill_diagonal(D, 0.0)
    out = []
    for _ in range(weights.n_routes):
        served = ((member @ D) * member).sum(axis=1) / 2.0
        k = int(np.argmax(served))
        p = list(paths[k])
        out.append(paths[k])
        D[np.ix_(p, p)] = 0.0
    return tuple(out)


def _dijkstra(W: np.ndarray, src: int, dst: int, banned_nodes: set, banned_edges: set) -> tuple[float, Route] | None:
    heap = [(0.0, (src,))]
    seen = set()
    while heap:
        d, path = heapq.heappop(heap)
        u = path[-1]
        if u == dst:
            return d, path
        if u in seen:
            continue
        seen.add(u)
        for v in np.flatnonzero(np.isfinite(W[u])):
            v = int(v)
            if v == u or v in seen or v in banned_nodes or (u, v) in banned_edges:
                continue
            heapq.heappush(heap, (d + float(W[u, v]), path + (v,)))
    return None


def _path_weight(W: np.ndarray, path: Sequence[int]) -> float:
    return float(sum(W[a, b] for a, b in zip(path, path[1:])))


def yen_k_shortest(W: np.ndarray, i: int, j: int, k: int) -> list[Route]:
    """Up to ``k`` loopless paths from i to j in increasing weight order.

    ``W`` holds edge weights with ``inf`` marking absent edges. Equal-weight
    paths are ordered lexicographically by node sequence.
    """
    if i == j:
        raise ValueError("source and target must differ")
    first = _dijkstra(W, i, j, set(), set())
    if first is None:
        return []
    found = [first[1]]
    pool: list[tuple[float, Route]] = []
    in_pool = set()
    while len(found) < k:
        prev = found[-1]
        for s in range(len(prev) - 1):
            spur, root = prev[s], prev[: s + 1]
            banned_e = {(p[s], p[s + 1]) for p in found if p[: s + 1] == root}
            tail = _dijkstra(W, spur, j, set(root[:-1]), banned_e)
            if tail is None:
                continue
            cand = root[:-1] + tail[1]
            if cand not in in_pool and cand not in found:
                in_pool.add(cand)
                heapq.heappush(pool, (_path_weight(W, cand), cand))
        if not pool:
            break
        _, best = heapq.heappop(pool)
        in_pool.discard(best)
        found.append(best)
    return found


@dataclass(frozen=True)
class JohnConfig:
    lambda1: float = 1.0
    lambda2: float = 0.0
    k: int = 10
    max_resets: int = 50

    def __post_init__(self):
        if not (0 <= self.lambda1 <= 1 and 0 <= self.lambda2 <= 1):
            raise ValueError("lambda weights must lie in [0, 1]")


def john_edge_weights(city: CityGraph, lambda1: float, lambda2: float) -> np.ndarray:
    tau = city.edge_times
    adj = city.adjacency
    tmax = tau[adj].max()
    dmax = city.demand.max() if city.demand.max() > 0 else 1.0
    W = lambda1 * tau / tmax + lambda2 * (1.0 - city.demand / dmax)
    return np.where(adj, W, np.inf)


def _min_weight_edge(cands: list[tuple[int, int]], W: np.ndarray, rng: np.random.Generator) -> tuple[int, int]:
    w = np.array([W[a, b] for a, b in cands])
    best = np.flatnonzero(w == w.min())
    return cands[int(best[rng.integers(len(best))])]


def _john_stage1(city: CityGraph, W: np.ndarray, weights: CostWeights, cfg: JohnConfig,
                 rng: np.random.Generator) -> list[Route]:
    n = city.n
    edges = [(i, j) for i, j, _ in city.edges] + [(j, i) for i, j, _ in city.edges]
    served: set[int] = set()
    routes: list[Route] = []
    while len(served) < n:
        resets = 0
        r: list[int] = []
        while True:
            if not r:
                cands = edges if not routes else [(a, b) for a, b in edges if a in served and b not in served]
                if not cands:
                    raise InitError("no edge reaches an unserved node")
                a, b = _min_weight_edge(cands, W, rng)
                r = [a, b]
            else:
                on = set(r)
                cands = [(end, v) for end in (r[0], r[-1]) for v in city.neighbors(end) if v not in on]
                fresh = [(e, v) for e, v in cands if v not in served]
                if fresh:
                    cands = fresh
                if cands:
                    e, v = _min_weight_edge(cands, W, rng)
                    if e == r[-1]:
                        r.append(v)
                    else:
                        r.insert(0, v)
                elif len(r) < weights.min_stops:
                    resets += 1
                    if resets > cfg.max_resets:
                        raise InitError(f"route construction stuck below {weights.min_stops} stops")
                    r = []
                    continue
                else:
                    break
            if len(r) >= weights.max_stops:
                break
        routes.append(tuple(r))
        served |= set(r)
    return routes


def init_john(city: CityGraph, weights: CostWeights, cfg: JohnConfig = JohnConfig(),
              rng: np.random.Generator | int | None = None) -> Network:
    """Cover every node with min-weight routes, then add k-shortest paths for unlinked high-demand pairs."""
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    W = john_edge_weights(city, cfg.lambda1, cfg.lambda2)
    routes = _john_stage1(city, W, weights, cfg, rng)
    S = weights.n_routes
    if len(routes) > S:
        raise InitError(f"covering all nodes took {len(routes)} routes, more than the {S} allowed")
    if len(routes) == S:
        return tuple(routes)
    n = city.n
    linked = np.zeros((n, n), bool)
    for r in routes:
        linked[np.ix_(r, r)] = True
    pairs = [(i, j) for i in range(n) for j in range(i + 1, n) if not linked[i, j]]
    pairs.sort(key=lambda p: -city.demand[p])
    for i, j in pairs:
        if len(routes) == S:
            break
        current = assign(city, routes, weights.transfer_penalty).transit_time[i, j]
        for path in yen_k_shortest(W, i, j, cfg.k):
            if weights.min_stops <= len(path) <= weights.max_stops and route_time(city, path) < current:
                routes.append(path)
                break
    if len(routes) < S:
        raise InitError(f"second stage ran out of node pairs with {len(routes)} of {S} routes")
    return tuple(routes)


def _labels(n: int, network: Sequence[Route]) -> np.ndarray:
    """Transit component label per node; nodes off the network are singletons."""
    parent = list(range(n))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for r in network:
        for a in r[1:]:
            ra, rb = find(r[0]), find(a)
            if ra != rb:
                parent[ra] = rb
    return np.array([find(i) for i in range(n)])


def constraint_cost(city: CityGraph, network: Sequence[Route], weights: CostWeights) -> float:
    """Constraint term with stop-count, simple-path and street-adjacency breaches all counted."""
    from ..graph import route_is_valid_path, stops_violation, unconnected_fraction

    bad_path = any(not route_is_valid_path(city, r) for r in network)
    lab = _labels(city.n, network)
    on = np.zeros(city.n, bool)
    for r in network:
        on[list(r)] = True
    linked = (lab[:, None] == lab[None, :]) & on[:, None] & on[None, :]
    f_un = unconnected_fraction(city, linked)
    f_s = stops_violation(network, weights)
    viol = f_un > 0 or f_s > 0 or bad_path or len(network) != weights.n_routes
    return f_un + f_s + 0.1 * viol + (1.0 if bad_path else 0.0)


def init_ahmed(city: CityGraph, sp: ShortestPathData, weights: CostWeights, heuristics=None,
               rng: np.random.Generator | int | None = None, max_repairs: int = 1_000_000) -> Network:
    """Add shortest paths that minimise constraint violations, then repair by random heuristics."""
    from .hh import HEURISTICS

    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    heuristics = HEURISTICS if heuristics is None else heuristics
    n = city.n
    pool = _candidate_paths(sp, n, weights.min_stops, weights.max_stops)
    if not pool:
        raise InitError("no shortest path satisfies the stop bounds")
    member = np.zeros((len(pool), n), bool)
    for k, p in enumerate(pool):
        member[k, list(p)] = True
    iu, ju = np.triu_indices(n, 1)
    want = city.demand[iu, ju] > 0
    n_want = max(int(want.sum()), 1)
    routes: list[Route] = []
    on = np.zeros(n, bool)
    for _ in range(weights.n_routes):
        # unconnected demand pairs after adding each candidate, via component merging
        lab = np.where(on, _labels(n, routes), n + np.arange(n))
        uniq, comp = np.unique(lab, return_inverse=True)
        onehot = np.zeros((n, len(uniq)), bool)
        onehot[np.arange(n), comp] = True
        touch = member @ onehot  # (P, K) components each path touches
        merged = touch[:, comp]  # (P, n) node lies in a touched component
        same = comp[iu] == comp[ju]
        linked = (same[None, :] & on[iu][None, :] & on[ju][None, :]) | (merged[:, iu] & merged[:, ju])
        f_un = (want[None, :] & ~linked).sum(axis=1) / n_want
        cc = f_un + 0.1 * (f_un > 0)
        best = np.flatnonzero(cc == cc.min())
        k = int(best[rng.integers(len(best))])
        routes.append(pool[k])
        on[list(pool[k])] = True
    net = tuple(routes)
    cur = constraint_cost(city, net, weights)
    for _ in range(max_repairs):
        if cur == 0:
            return net
        h = heuristics[int(rng.integers(len(heuristics)))]
        cand = h(net, city, sp, rng)
        cc = constraint_cost(city, cand, weights)
        if cc <= cur:
            net, cur = cand, cc
    if cur == 0:
        return net
    raise InitError(f"repair did not remove all constraint violations in {max_repairs} steps")


__all__ = ["InitError", "JohnConfig", "init_nikolic", "init_john", "init_ahmed", "yen_k_shortest",
           "john_edge_weights", "constraint_cost"]
