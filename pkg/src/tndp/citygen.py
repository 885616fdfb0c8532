"""Procedural synthetic cities and training-time augmentation."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from scipy.sparse.csgraph import connected_components, minimum_spanning_tree
from scipy.spatial import Voronoi, cKDTree

from .graph import CityGraph


class GenProcess(str, enum.Enum):
    GRID4 = "grid4"
    GRID8 = "grid8"
    NN4 = "nn4"
    MST_PLUS = "mst"
    VORONOI = "voronoi"


class CityGenError(RuntimeError):
    pass


@dataclass(frozen=True)
class GenConfig:
    n: int = 20
    rho: float = 0.1
    area_side: float = 30_000.0
    vehicle_speed: float = 15.0
    demand_range: tuple[float, float] = (60.0, 800.0)
    mst_edge_slope: float = 2.5
    mst_edge_intercept: float = 0.0
    max_regenerations: int = 100
    voronoi_attempts: int = 200
    seed: int = 0

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("need at least 2 nodes")
        if not 0.0 <= self.rho < 1.0:
            raise ValueError(f"rho must lie in [0, 1), got {self.rho}")
        lo, hi = self.demand_range
        if lo > hi:
            raise ValueError("demand_range low exceeds high")

    def mst_edge_budget(self, n: int | None = None) -> int:
        n = self.n if n is None else n
        return int(round(self.mst_edge_slope * n + self.mst_edge_intercept))


@dataclass(frozen=True)
class AugmentConfig:
    pos_scale_halfwidth: float = 0.4
    demand_scale_halfwidth: float = 0.4
    mirror_prob: float = 0.5
    rotate: bool = True

    def __post_init__(self):
        for v in (self.pos_scale_halfwidth, self.demand_scale_halfwidth):
            if not 0.0 <= v < 1.0:
                raise ValueError("scale half-widths must lie in [0, 1)")


def grid_shape(n: int) -> tuple[int, int]:
    """Factor n as rows*cols with the two as close as possible."""
    rows = int(math.isqrt(n))
    while n % rows:
        rows -= 1
    return rows, n // rows


def _grid(n: int, side: float, diagonals: bool) -> tuple[np.ndarray, set[tuple[int, int]]]:
    rows, cols = grid_shape(n)
    step = side / max(rows, cols, 2)
    pos = np.array([(c * step, r * step) for r in range(rows) for c in range(cols)], dtype=float)
    edges = set()
    idx = lambda r, c: r * cols + c  # noqa: E731
    for r in range(rows):
        for c in range(cols):
            nbrs = [(r, c + 1), (r + 1, c)]
            if diagonals:
                nbrs += [(r + 1, c + 1), (r + 1, c - 1)]
            for rr, cc in nbrs:
                if 0 <= rr < rows and 0 <= cc < cols:
                    a, b = idx(r, c), idx(rr, cc)
                    edges.add((min(a, b), max(a, b)))
    return pos, edges


def _nn4(pos: np.ndarray) -> set[tuple[int, int]]:
    k = min(4, len(pos) - 1)
    _, nbr = cKDTree(pos).query(pos, k=k + 1)
    edges = set()
    for i, row in enumerate(nbr):
        for j in row[1:]:
            edges.add((min(i, int(j)), max(i, int(j))))
    return edges


def _mst_plus(pos: np.ndarray, budget: int) -> set[tuple[int, int]]:
    n = len(pos)
    dist = np.linalg.norm(pos[:, None] - pos[None, :], axis=-1)
    tree = minimum_spanning_tree(dist).tocoo()
    edges = {(min(int(a), int(b)), max(int(a), int(b))) for a, b in zip(tree.row, tree.col)}
    iu, ju = np.triu_indices(n, 1)
    order = np.argsort(dist[iu, ju], kind="stable")
    budget = min(budget, n * (n - 1) // 2)
    for k in order:
        if len(edges) >= budget:
            break
        edges.add((int(iu[k]), int(ju[k])))
    return edges


def _voronoi_graph(points: np.ndarray, side: float) -> tuple[np.ndarray, set[tuple[int, int]]]:
    vor = Voronoi(points)
    verts = vor.vertices
    inside = np.all((verts >= 0) & (verts <= side), axis=1)
    keep = np.flatnonzero(inside)
    remap = {int(v): k for k, v in enumerate(keep)}
    edges = set()
    for a, b in vor.ridge_vertices:
        if a >= 0 and b >= 0 and a in remap and b in remap and remap[a] != remap[b]:
            x, y = remap[a], remap[b]
            edges.add((min(x, y), max(x, y)))
    pos = verts[keep]
    # keep only the largest connected piece
    if len(pos):
        n = len(pos)
        adj = np.zeros((n, n), dtype=bool)
        for x, y in edges:
            adj[x, y] = adj[y, x] = True
        _, labels = connected_components(adj, directed=False)
        big = np.argmax(np.bincount(labels))
        sel = np.flatnonzero(labels == big)
        re2 = {int(v): k for k, v in enumerate(sel)}
        edges = {(re2[x], re2[y]) for x, y in edges if x in re2 and y in re2}
        pos = pos[sel]
    return pos, edges


def _trim_to(pos: np.ndarray, edges: set[tuple[int, int]], n: int, rng: np.random.Generator):
    """Delete random non-cut vertices until n remain."""
    alive = list(range(len(pos)))
    eset = set(edges)
    while len(alive) > n:
        for v in rng.permutation(alive):
            rest = [u for u in alive if u != v]
            sub = {e for e in eset if v not in e}
            if _is_connected(rest, sub):
                alive, eset = rest, sub
                break
        else:
            raise CityGenError("could not trim Voronoi graph while keeping it connected")
    re = {v: k for k, v in enumerate(alive)}
    return pos[alive], {(min(re[a], re[b]), max(re[a], re[b])) for a, b in eset}


def _is_connected(nodes, edges) -> bool:
    if not nodes:
        return True
    nbr = {v: [] for v in nodes}
    for a, b in edges:
        nbr[a].append(b)
        nbr[b].append(a)
    seen = {nodes[0]}
    stack = [nodes[0]]
    while stack:
        for w in nbr[stack.pop()]:
            if w not in seen:
                seen.add(w)
                stack.append(w)
    return len(seen) == len(nodes)


def _voronoi(n: int, cfg: GenConfig, rng: np.random.Generator):
    side = cfg.area_side
    m = max(3, n // 2)
    best = None
    for _ in range(cfg.voronoi_attempts):
        pts = rng.uniform(0, side, size=(m, 2))
        pos, edges = _voronoi_graph(pts, side)
        count = len(pos)
        if count == n:
            return pos, edges
        if count > n and (best is None or count < len(best[0])):
            best = (pos, edges)
        m = m + 1 if count < n else max(3, m - 1)
    if best is None:
        raise CityGenError(f"no Voronoi diagram reached {n} vertices")
    return _trim_to(best[0], best[1], n, rng)


def _demand(n: int, lo: float, hi: float, rng: np.random.Generator) -> np.ndarray:
    iu = np.triu_indices(n, 1)
    D = np.zeros((n, n))
    D[iu] = rng.uniform(lo, hi, size=len(iu[0]))
    return D + D.T


def generate_city(process: GenProcess | str, cfg: GenConfig, rng: np.random.Generator | None = None) -> CityGraph:
    """Sample one synthetic city.

    Non-Voronoi street edges are each dropped with probability ``cfg.rho``;
    disconnected results are regenerated from scratch.
    """
    process = GenProcess(process)
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    n, side = cfg.n, cfg.area_side
    for _ in range(cfg.max_regenerations):
        if process in (GenProcess.GRID4, GenProcess.GRID8):
            pos, edges = _grid(n, side, process is GenProcess.GRID8)
        elif process is GenProcess.NN4:
            pos = rng.uniform(0, side, size=(n, 2))
            edges = _nn4(pos)
        elif process is GenProcess.MST_PLUS:
            pos = rng.uniform(0, side, size=(n, 2))
            edges = _mst_plus(pos, cfg.mst_edge_budget(n))
        else:
            pos, edges = _voronoi(n, cfg, rng)
        edges = sorted(edges)
        if process is not GenProcess.VORONOI and cfg.rho > 0:
            drop = rng.random(len(edges)) < cfg.rho
            edges = [e for e, d in zip(edges, drop) if not d]
        if not _is_connected(list(range(n)), edges):
            continue
        tri = [(i, j, float(np.linalg.norm(pos[i] - pos[j]) / cfg.vehicle_speed)) for i, j in edges]
        return CityGraph.from_edges(pos, tri, _demand(n, *cfg.demand_range, rng))
    raise CityGenError(f"{process.value} city stayed disconnected after {cfg.max_regenerations} attempts")


def generate_dataset(count: int, cfg: GenConfig, processes=tuple(GenProcess)) -> list[tuple[CityGraph, str]]:
    """Cities with processes chosen uniformly at random; fully determined by ``cfg.seed``."""
    rng = np.random.default_rng(cfg.seed)
    out = []
    for _ in range(count):
        proc = GenProcess(processes[rng.integers(len(processes))])
        out.append((generate_city(proc, cfg, rng), proc.value))
    return out


def augment_city(city: CityGraph, cfg: AugmentConfig, rng: np.random.Generator | int) -> CityGraph:
    """Randomly rescale, mirror and rotate a city; street topology is unchanged."""
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    a, b = cfg.pos_scale_halfwidth, cfg.demand_scale_halfwidth
    u_pos = rng.uniform(1 - a, 1 + a)
    u_dem = rng.uniform(1 - b, 1 + b)
    mirror = rng.random() < cfg.mirror_prob
    theta = rng.uniform(0, 2 * math.pi) if cfg.rotate else 0.0
    pos = city.positions * u_pos
    if mirror:
        pos = pos * np.array([-1.0, 1.0])
    if theta != 0.0:
        centre = pos.mean(axis=0)
        c, s = math.cos(theta), math.sin(theta)
        rot = np.array([[c, -s], [s, c]])
        pos = (pos - centre) @ rot.T + centre
    return CityGraph(pos, city.edge_times * u_pos, city.demand * u_dem)
