"""City graphs, shortest paths, route graphs and network cost functions.

Routes are tuples of node indices and a transit network is a tuple of routes.
All times are stored in seconds; reported passenger and operator costs are
converted to minutes.
"""
from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

Route = tuple[int, ...]
Network = tuple[Route, ...]

DEFAULT_TRANSFER_PENALTY = 300.0


class CityGraphError(ValueError):
    """Raised when a city graph breaks one of its structural invariants."""


class RouteError(ValueError):
    """Raised when a route is not a simple path over street edges."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class CityGraph:
    """A city: node positions (m), street edge drive times (s) and demand.

    ``edge_times[i, j]`` is the drive time of the street edge between i and j,
    ``inf`` when there is none, and 0 on the diagonal.
    """

    positions: np.ndarray
    edge_times: np.ndarray
    demand: np.ndarray

    def __post_init__(self):
        pos = _frozen(self.positions).reshape(-1, 2)
        times = _frozen(self.edge_times)
        demand = _frozen(self.demand)
        n = pos.shape[0]
        if times.shape != (n, n) or demand.shape != (n, n):
            raise CityGraphError(
                f"shape mismatch: {n} positions, edge_times {times.shape}, demand {demand.shape}")
        if not np.array_equal(times, times.T):
            raise CityGraphError("street edge times are not symmetric")
        if np.any(np.diag(times) != 0):
            raise CityGraphError("edge_times diagonal must be 0")
        off = ~np.eye(n, dtype=bool)
        if np.any(times[off] <= 0) or np.any(np.isnan(times)):
            raise CityGraphError("street edge times must be positive (inf for no edge)")
        if not np.array_equal(demand, demand.T):
            raise CityGraphError("demand matrix is not symmetric")
        if np.any(np.diag(demand) != 0):
            raise CityGraphError("demand diagonal must be 0")
        if np.any(demand < 0) or not np.all(np.isfinite(demand)):
            raise CityGraphError("demand must be finite and non-negative")
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "edge_times", times)
        object.__setattr__(self, "demand", demand)

    @classmethod
    def from_edges(cls, positions, edges: Sequence[tuple[int, int, float]], demand) -> "CityGraph":
        pos = np.asarray(positions, dtype=float).reshape(-1, 2)
        n = pos.shape[0]
        times = np.full((n, n), np.inf)
        np.fill_diagonal(times, 0.0)
        for i, j, tau in edges:
            i, j = int(i), int(j)
            if i == j:
                raise CityGraphError(f"self-loop edge at node {i}")
            if np.isfinite(times[i, j]) and times[i, j] != tau:
                raise CityGraphError(f"conflicting times for edge ({i}, {j})")
            times[i, j] = times[j, i] = float(tau)
        return cls(pos, times, demand)

    @property
    def n(self) -> int:
        return self.positions.shape[0]

    @property
    def adjacency(self) -> np.ndarray:
        adj = np.isfinite(self.edge_times)
        np.fill_diagonal(adj, False)
        return adj

    @property
    def edges(self) -> list[tuple[int, int, float]]:
        """Undirected street edges as (i, j, tau) with i < j."""
        ii, jj = np.nonzero(np.triu(self.adjacency))
        return [(int(i), int(j), float(self.edge_times[i, j])) for i, j in zip(ii, jj)]

    def neighbors(self, i: int) -> list[int]:
        return [int(j) for j in np.flatnonzero(self.adjacency[i])]

    def is_connected(self) -> bool:
        if self.n == 0:
            return True
        adj = self.adjacency
        seen = np.zeros(self.n, dtype=bool)
        seen[0] = True
        stack = [0]
        while stack:
            i = stack.pop()
            for j in np.flatnonzero(adj[i] & ~seen):
                seen[j] = True
                stack.append(int(j))
        return bool(seen.all())


@dataclass(frozen=True, eq=False)
class ShortestPathData:
    """All-pairs street shortest-path times and node sequences."""

    times: np.ndarray
    paths: tuple[tuple[Route, ...], ...]

    @property
    def max_time(self) -> float:
        return float(self.times.max())

    def path(self, i: int, j: int) -> Route:
        return self.paths[i][j]


def _dijkstra_paths(times: np.ndarray, source: int) -> list[tuple[float, Route] | None]:
    n = times.shape[0]
    nbrs = [np.flatnonzero(np.isfinite(times[i]) & (np.arange(n) != i)) for i in range(n)]
    best: list[tuple[float, int, Route] | None] = [None] * n
    heap = [(0.0, 1, (source,))]
    done = np.zeros(n, dtype=bool)
    while heap:
        t, hops, seq = heapq.heappop(heap)
        v = seq[-1]
        if done[v]:
            continue
        done[v] = True
        best[v] = (t, hops, seq)
        for w in nbrs[v]:
            if not done[w]:
                heapq.heappush(heap, (t + times[v, w], hops + 1, seq + (int(w),)))
    return [None if b is None else (b[0], b[2]) for b in best]


def all_pairs_shortest_paths(city: CityGraph) -> ShortestPathData:
    """Shortest street paths between all ordered node pairs.

    Ties are broken by fewer nodes, then the lexicographically smallest node
    sequence. The path for (j, i), j > i, is the reverse of the (i, j) path.

    Raises:
        CityGraphError: if some pair of nodes is not connected by streets.
    """
    n = city.n
    T = np.zeros((n, n))
    paths: list[list[Route]] = [[(i,)] * n for i in range(n)]
    for i in range(n):
        found = _dijkstra_paths(city.edge_times, i)
        for j in range(i + 1, n):
            if found[j] is None:
                raise CityGraphError(f"street graph is disconnected: no path from {i} to {j}")
            seq = found[j][1]
            # recompute along the path so T is independent of heap summation order
            t = float(sum(city.edge_times[a, b] for a, b in zip(seq[:-1], seq[1:])))
            T[i, j] = T[j, i] = t
            paths[i][j] = seq
            paths[j][i] = seq[::-1]
    T.setflags(write=False)
    return ShortestPathData(T, tuple(tuple(row) for row in paths))


def check_route(city: CityGraph, route: Sequence[int]) -> None:
    """Raise RouteError unless ``route`` is a simple path over street edges."""
    if len(set(route)) != len(route):
        raise RouteError(f"route {tuple(route)} revisits a node")
    for a, b in zip(route[:-1], route[1:]):
        if not (0 <= a < city.n and 0 <= b < city.n) or not np.isfinite(city.edge_times[a, b]) or a == b:
            raise RouteError(f"route {tuple(route)} uses missing street edge ({a}, {b})")
    if len(route) == 1 and not 0 <= route[0] < city.n:
        raise RouteError(f"route {tuple(route)} has an invalid node")


def route_is_valid_path(city: CityGraph, route: Sequence[int]) -> bool:
    try:
        check_route(city, route)
    except RouteError:
        return False
    return True


def route_time(city: CityGraph, route: Sequence[int]) -> float:
    """Drive time of a route in one direction (s)."""
    if len(route) < 2:
        return 0.0
    r = np.asarray(route)
    return float(city.edge_times[r[:-1], r[1:]].sum())


@dataclass(frozen=True, eq=False)
class RouteGraph:
    """Best direct (no-transfer) trip time between each node pair.

    ``direct_time`` is ``inf`` where no single route links a pair and 0 on the
    diagonal; ``providing_route`` is -1 where absent.
    """

    direct_time: np.ndarray
    providing_route: np.ndarray

    @property
    def present(self) -> np.ndarray:
        p = np.isfinite(self.direct_time)
        np.fill_diagonal(p, False)
        return p


def build_route_graph(city: CityGraph, network: Sequence[Sequence[int]]) -> RouteGraph:
    n = city.n
    direct = np.full((n, n), np.inf)
    provider = np.full((n, n), -1, dtype=int)
    for k, route in enumerate(network):
        check_route(city, route)
        if len(route) < 2:
            continue
        r = np.asarray(route)
        cum = np.concatenate([[0.0], np.cumsum(city.edge_times[r[:-1], r[1:]])])
        t = np.abs(cum[:, None] - cum[None, :])
        block = direct[np.ix_(r, r)]
        better = t < block
        np.fill_diagonal(better, False)
        if better.any():
            rows, cols = np.nonzero(better)
            direct[r[rows], r[cols]] = t[rows, cols]
            provider[r[rows], r[cols]] = k
    np.fill_diagonal(direct, 0.0)
    return RouteGraph(direct, provider)


@dataclass(frozen=True, eq=False)
class TransitAssignment:
    """Passenger routing over a network.

    ``transit_time`` excludes transfer penalties. Entries of ``transit_time``
    and ``transfers`` are meaningless where ``connected`` is False; they are
    stored as ``inf`` and -1. The diagonal is never marked connected.
    """

    transit_time: np.ndarray
    transfers: np.ndarray
    connected: np.ndarray


def transit_assignment(route_graph: RouteGraph, transfer_penalty: float = DEFAULT_TRANSFER_PENALTY) -> TransitAssignment:
    """Minimum (ride time + penalty x transfers) trips over the route graph.

    Solved as an all-pairs search over the leg graph whose edge weights are
    direct times plus one penalty, ordered lexicographically by
    (penalised cost, number of legs) so ties favour fewer transfers.
    """
    direct = route_graph.direct_time
    n = direct.shape[0]
    present = route_graph.present
    cost = np.where(present, direct + transfer_penalty, np.inf)
    legs = np.where(present, 1, 0)
    np.fill_diagonal(cost, 0.0)
    for k in range(n):
        cand = cost[:, k, None] + cost[None, k, :]
        cand_legs = legs[:, k, None] + legs[None, k, :]
        better = (cand < cost) | ((cand == cost) & (cand_legs < legs))
        if better.any():
            cost = np.where(better, cand, cost)
            legs = np.where(better, cand_legs, legs)
    connected = np.isfinite(cost)
    np.fill_diagonal(connected, False)
    transfers = np.where(connected, legs - 1, -1)
    with np.errstate(invalid="ignore"):
        ride = np.where(connected, cost - transfer_penalty * legs, np.inf)
    np.fill_diagonal(ride, 0.0)
    return TransitAssignment(ride, transfers, connected)


def assign(city: CityGraph, network: Sequence[Sequence[int]], transfer_penalty: float = DEFAULT_TRANSFER_PENALTY) -> TransitAssignment:
    return transit_assignment(build_route_graph(city, network), transfer_penalty)


@dataclass(frozen=True)
class CostWeights:
    """Cost-function weights and network constraints.

    ``w_p`` and ``w_o`` rescale passenger and operator costs; use
    :meth:`for_city` to derive them from a city's street diameter.
    """

    alpha: float = 0.5
    beta: float = 5.0
    transfer_penalty: float = DEFAULT_TRANSFER_PENALTY
    n_routes: int = 10
    min_stops: int = 2
    max_stops: int = 12
    w_p: float = 1.0
    w_o: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.beta < 0:
            raise ValueError("beta must be non-negative")
        if self.min_stops < 2 or self.max_stops < self.min_stops:
            raise ValueError(f"need 2 <= min_stops <= max_stops, got {self.min_stops}, {self.max_stops}")
        if self.n_routes < 1:
            raise ValueError("n_routes must be >= 1")

    @classmethod
    def for_city(cls, sp: ShortestPathData, *, n_routes: int, min_stops: int, max_stops: int,
                 alpha: float = 0.5, beta: float = 5.0,
                 transfer_penalty: float = DEFAULT_TRANSFER_PENALTY) -> "CostWeights":
        max_t = sp.max_time
        if max_t <= 0:
            max_t = 1.0
        return cls(alpha=alpha, beta=beta, transfer_penalty=transfer_penalty, n_routes=n_routes,
                   min_stops=min_stops, max_stops=max_stops,
                   w_p=1.0 / max_t, w_o=1.0 / (n_routes * max_t))

    def with_alpha(self, alpha: float) -> "CostWeights":
        return CostWeights(alpha, self.beta, self.transfer_penalty, self.n_routes,
                           self.min_stops, self.max_stops, self.w_p, self.w_o)


@dataclass(frozen=True)
class CostBreakdown:
    """Terms of the network cost. ``cp`` and ``co`` are in minutes."""

    cp: float
    co: float
    f_un: float
    f_s: float
    delta_v: int
    cc: float
    total: float
    d0: float
    d1: float
    d2: float
    d_un: float

    @property
    def valid_constraints(self) -> bool:
        return self.delta_v == 0


def unconnected_fraction(city: CityGraph, connected: np.ndarray) -> float:
    """Fraction of demand-positive unordered pairs with no transit path."""
    iu = np.triu_indices(city.n, 1)
    wanted = city.demand[iu] > 0
    total = int(wanted.sum())
    if total == 0:
        return 0.0
    return float((wanted & ~connected[iu]).sum()) / total


def stops_violation(network: Sequence[Sequence[int]], weights: CostWeights) -> float:
    over = sum(max(0, weights.min_stops - len(r), len(r) - weights.max_stops) for r in network)
    return over / (weights.n_routes * weights.max_stops)


def operator_time(city: CityGraph, network: Sequence[Sequence[int]]) -> float:
    return sum(route_time(city, r) for r in network)


def _passenger_time(city: CityGraph, ta: TransitAssignment, penalty: float) -> float:
    D = city.demand
    mask = ta.connected & (D > 0)
    denom = D[mask].sum()
    if denom == 0:
        return 0.0
    trip = ta.transit_time[mask] + penalty * ta.transfers[mask]
    return float((D[mask] * trip).sum() / denom)


def evaluate_cost(city: CityGraph, network: Sequence[Sequence[int]], weights: CostWeights,
                  assignment: TransitAssignment | None = None) -> CostBreakdown:
    """Full network cost and its components.

    Passenger cost averages only over connected demand pairs; disconnection
    is charged through the constraint term.
    """
    ta = assignment if assignment is not None else assign(city, network, weights.transfer_penalty)
    cp = _passenger_time(city, ta, weights.transfer_penalty)
    co = operator_time(city, network)
    f_un = unconnected_fraction(city, ta.connected)
    f_s = stops_violation(network, weights)
    delta_v = int(f_un > 0 or f_s > 0)
    cc = f_un + f_s + 0.1 * delta_v
    total = weights.alpha * weights.w_p * cp + (1 - weights.alpha) * weights.w_o * co + weights.beta * cc

    D = city.demand
    total_demand = D.sum()
    if total_demand > 0:
        d = []
        for k in range(3):
            d.append(100.0 * D[ta.connected & (ta.transfers == k)].sum() / total_demand)
        d_un = max(0.0, 100.0 - sum(d))  # clamp float residue
    else:
        d, d_un = [100.0, 0.0, 0.0], 0.0
    return CostBreakdown(cp / 60.0, co / 60.0, f_un, f_s, delta_v, cc, float(total),
                         float(d[0]), float(d[1]), float(d[2]), float(d_un))


def evaluate_reward_cost(city: CityGraph, network: Sequence[Sequence[int]], weights: CostWeights,
                         sp: ShortestPathData, assignment: TransitAssignment | None = None) -> float:
    """Cost used to shape construction rewards.

    Unserved trips are charged twice the street diameter and the constraint
    term ignores stop counts.
    """
    ta = assignment if assignment is not None else assign(city, network, weights.transfer_penalty)
    D = city.demand
    total_demand = D.sum()
    if total_demand > 0:
        served = ta.connected & (D > 0)
        unserved = ~ta.connected & (D > 0)
        np.fill_diagonal(unserved, False)
        trip = ta.transit_time[served] + weights.transfer_penalty * ta.transfers[served]
        cp = ((D[served] * trip).sum() + D[unserved].sum() * 2.0 * sp.max_time) / total_demand
    else:
        cp = 0.0
    f_un = unconnected_fraction(city, ta.connected)
    cc = f_un + 0.1 * (f_un > 0)
    co = operator_time(city, network)
    return float(weights.alpha * weights.w_p * cp + (1 - weights.alpha) * weights.w_o * co + weights.beta * cc)


@dataclass(frozen=True)
class Violation:
    kind: str
    detail: str
    route: int | None = None
    pairs: tuple[tuple[int, int], ...] = field(default=())


def validate_network(city: CityGraph, network: Sequence[Sequence[int]], weights: CostWeights) -> list[Violation]:
    """List every broken network constraint (connectedness, count, stops, simple path)."""
    out: list[Violation] = []
    if len(network) != weights.n_routes:
        out.append(Violation("route_count", f"network has {len(network)} routes, {weights.n_routes} required"))
    well_formed = []
    for k, r in enumerate(network):
        if not weights.min_stops <= len(r) <= weights.max_stops:
            out.append(Violation("stop_count", f"route {k} has {len(r)} stops, allowed "
                                 f"[{weights.min_stops}, {weights.max_stops}]", route=k))
        try:
            check_route(city, r)
            well_formed.append(r)
        except RouteError as e:
            out.append(Violation("simple_path", str(e), route=k))
    ta = assign(city, well_formed, weights.transfer_penalty)
    iu, ju = np.triu_indices(city.n, 1)
    missing = (city.demand[iu, ju] > 0) & ~ta.connected[iu, ju]
    if missing.any():
        pairs = tuple((int(i), int(j)) for i, j in zip(iu[missing], ju[missing]))
        out.append(Violation("connectedness", f"{len(pairs)} demand pairs have no transit path", pairs=pairs))
    return out
