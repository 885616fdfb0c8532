"""Reading and writing cities and networks.

The canonical city file is JSON with keys ``n``, ``positions`` (meters),
``edges`` (``[i, j, tau_seconds]`` triples) and ``demand`` (row-major
n*n list). The Mumford/Mandl text format is supported read-only.
"""
from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Sequence

import numpy as np

from .graph import CityGraph, Network

FORMAT_VERSION = 1
VEHICLE_SPEED = 15.0


class CityParseError(ValueError):
    pass


def city_to_dict(city: CityGraph) -> dict:
    return {
        "format": FORMAT_VERSION,
        "n": city.n,
        "positions": city.positions.tolist(),
        "edges": [[i, j, tau] for i, j, tau in city.edges],
        "demand": city.demand.reshape(-1).tolist(),
    }


def city_from_dict(data: dict) -> CityGraph:
    n = int(data["n"])
    demand = np.asarray(data["demand"], dtype=float)
    if demand.size != n * n:
        raise CityParseError(f"demand has {demand.size} entries, expected {n * n}")
    pos = np.asarray(data["positions"], dtype=float)
    if pos.shape != (n, 2):
        raise CityParseError(f"positions have shape {pos.shape}, expected ({n}, 2)")
    edges = [(int(i), int(j), float(t)) for i, j, t in data["edges"]]
    return CityGraph.from_edges(pos, edges, demand.reshape(n, n))


def save_city(city: CityGraph, path: str | Path) -> None:
    Path(path).write_text(json.dumps(city_to_dict(city)))


def load_city(path: str | Path) -> CityGraph:
    return city_from_dict(json.loads(Path(path).read_text()))


def save_network(network: Sequence[Sequence[int]], path: str | Path) -> None:
    Path(path).write_text(json.dumps({"routes": [list(map(int, r)) for r in network]}))


def load_network(path: str | Path) -> Network:
    data = json.loads(Path(path).read_text())
    return tuple(tuple(int(v) for v in r) for r in data["routes"])


def _read_table(source) -> list[list[float]]:
    text = Path(source).read_text() if isinstance(source, (str, Path)) and Path(source).exists() else str(source)
    rows = []
    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        row = []
        for tok in line.replace(",", " ").split():
            tl = tok.lower()
            row.append(math.inf if tl in {"inf", "infinity", "-", "x"} else float(tok))
        rows.append(row)
    return rows


def parse_mumford_city(coords, travel_times, demand, time_scale: float = 60.0,
                       speed: float = VEHICLE_SPEED, asym_tol: float = 1e-6) -> CityGraph:
    """Build a city from Mumford-style whitespace tables.

    Args:
        coords: node coordinate table (one ``x y`` row per node, optionally
            preceded by a single node-count line). Path or raw text.
        travel_times: n*n table of street travel times; non-edges are
            ``inf`` (or any negative number / ``Inf`` token), diagonal 0.
        demand: n*n trip table; symmetrized by elementwise max.
        time_scale: multiplier turning file times into seconds (the
            published files use minutes).
        speed: vehicle speed (m/s) used to rescale positions so that
            straight-line distance / speed matches edge times on average.
    """
    c = _read_table(coords)
    if c and len(c[0]) == 1:
        c = c[1:]
    pos = np.asarray(c, dtype=float)
    if pos.ndim != 2 or pos.shape[1] != 2:
        raise CityParseError("coordinate table must have two columns")
    n = pos.shape[0]
    tt = np.asarray(_read_table(travel_times), dtype=float)
    dd = np.asarray(_read_table(demand), dtype=float)
    if tt.shape != (n, n) or dd.shape != (n, n):
        raise CityParseError(f"{n} coordinates but travel times {tt.shape} and demand {dd.shape}")
    tt = np.where(tt < 0, np.inf, tt)
    off = ~np.eye(n, dtype=bool)
    tt[off & (tt == 0)] = np.inf
    fin = np.isfinite(tt)
    if not np.array_equal(fin, fin.T):
        raise CityParseError("travel-time table lists an edge in one direction only")
    both = fin & fin.T
    if np.any(np.abs(tt[both] - tt.T[both]) > asym_tol):
        raise CityParseError("travel-time table is asymmetric")
    tt = tt * time_scale
    np.fill_diagonal(tt, 0.0)
    edges = [(i, j, float(tt[i, j])) for i in range(n) for j in range(i + 1, n) if np.isfinite(tt[i, j])]
    ratios = []
    for i, j, tau in edges:
        dist = float(np.linalg.norm(pos[i] - pos[j]))
        if dist <= 0:
            raise CityParseError(f"nodes {i} and {j} share a position but are joined by an edge")
        ratios.append(tau * speed / dist)
    f = float(np.mean(ratios)) if ratios else 1.0
    dd = np.maximum(dd, dd.T)
    np.fill_diagonal(dd, 0.0)
    return CityGraph.from_edges(pos * f, edges, dd)


def position_scale_factor(pos: np.ndarray, edges, speed: float = VEHICLE_SPEED) -> float:
    return float(np.mean([tau * speed / np.linalg.norm(pos[i] - pos[j]) for i, j, tau in edges]))
