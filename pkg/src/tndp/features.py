"""Numeric inputs of the policy and value networks."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph import operator_time, unconnected_fraction
from .mdp import MdpContext, MdpState

EDGE_CHANNELS = (
    "demand", "street", "street_time", "linked", "direct", "one_transfer", "two_transfers", "self",
    "transit_time", "direct_time", "sp_time", "alpha", "one_minus_alpha",
)
NODE_CHANNELS = ("x", "y", "in_degree", "out_degree")
STATE_CHANNELS = ("passenger_time", "operator_time", "routes_done", "routes_left", "unconnected", "alpha",
                  "one_minus_alpha")
EDGE_BOOLEAN = np.array([c in {"street", "linked", "direct", "one_transfer", "two_transfers", "self"}
                         for c in EDGE_CHANNELS])
SP_TIME = EDGE_CHANNELS.index("sp_time")
VALUE_INPUT_DIM = 18


@dataclass(frozen=True)
class FeatureBundle:
    X: np.ndarray  # (n, 4)
    E: np.ndarray  # (n, n, 13)
    s: np.ndarray  # (7,)


def _static(ctx: MdpContext) -> dict:
    c = ctx.cache.get("features")
    if c is not None:
        return c
    city, w = ctx.city, ctx.weights
    n = city.n
    adj = city.adjacency
    deg = adj.sum(1).astype(float)
    X = np.column_stack([city.positions, deg, deg])
    E = np.zeros((n, n, len(EDGE_CHANNELS)))
    E[..., 0] = city.demand
    E[..., 1] = adj
    E[..., 2] = np.where(adj, city.edge_times, 0.0)
    E[..., 7] = np.eye(n)
    E[..., 10] = ctx.sp.times
    E[..., 11] = w.alpha
    E[..., 12] = 1.0 - w.alpha
    D, T = city.demand, ctx.sp.times
    value_static = np.concatenate([X.mean(0), [D.sum(), D.mean(), D.std(), T.mean(), T.std(), w.alpha, 1 - w.alpha]])
    c = {"X": X, "E": E, "value": value_static}
    ctx.cache["features"] = c
    return c


def state_vector(state: MdpState) -> np.ndarray:
    ctx = state.ctx
    city, w = ctx.city, ctx.weights
    ta = state.assignment
    D = city.demand
    mask = ta.connected & (D > 0)
    den = D[mask].sum()
    cp = float((D[mask] * (ta.transit_time[mask] + w.transfer_penalty * ta.transfers[mask])).sum() / den) if den else 0.0
    co = operator_time(city, state.network)
    done = len(state.routes)
    return np.array([cp, co, done, w.n_routes - done, unconnected_fraction(city, ta.connected), w.alpha, 1 - w.alpha])


def compute_features(state: MdpState) -> FeatureBundle:
    """Node, pair and global features of the partial network routes + current route."""
    st = _static(state.ctx)
    ta = state.assignment
    E = st["E"].copy()
    linked = ta.connected
    direct = linked & (ta.transfers == 0)
    E[..., 3] = linked
    E[..., 4] = direct
    E[..., 5] = linked & (ta.transfers == 1)
    E[..., 6] = linked & (ta.transfers == 2)
    E[..., 8] = np.where(linked, ta.transit_time, 0.0)
    E[..., 9] = np.where(direct, ta.transit_time, 0.0)
    return FeatureBundle(st["X"], E, state_vector(state))


def value_inputs(state: MdpState, s: np.ndarray | None = None) -> np.ndarray:
    st = _static(state.ctx)
    s = state_vector(state) if s is None else s
    return np.concatenate([st["value"], s])
