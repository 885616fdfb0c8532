"""Shared fixtures for policy and training tests."""
from __future__ import annotations

import numpy as np
import torch

from tndp.graph import CostWeights, all_pairs_shortest_paths
from tndp.mdp import MdpContext, MdpOptions, UniformRandomPolicy, action_space, apply, reset
from tndp.policy import PolicyConfig, PolicyNet, fit_normalization
from oracles import random_city


def make_ctx(seed: int, n: int = 7, n_routes: int = 3, max_stops: int = 5, alpha: float | None = None,
             enforce: bool = False) -> MdpContext:
    rng = np.random.default_rng(seed)
    city = random_city(rng, n, integer_times=False)
    sp = all_pairs_shortest_paths(city)
    a = float(rng.uniform()) if alpha is None else alpha
    w = CostWeights.for_city(sp, n_routes=n_routes, min_stops=2, max_stops=max_stops, alpha=a)
    return MdpContext(city, w, MdpOptions(enforce), sp)


def random_state(ctx: MdpContext, rng: np.random.Generator, want_extension: bool | None = None,
                 want_nonempty: bool = False):
    """Walk a uniform-random episode and stop at a random live state of the requested kind."""
    for _ in range(200):
        s = reset(ctx)
        pool = []
        pol = UniformRandomPolicy()
        while not s.done:
            sp = action_space(s)
            ok = want_extension is None or sp.is_extension == want_extension
            if ok and (not want_nonempty or s.route):
                pool.append((s, sp))
            s = apply(s, sp, pol.choose([s], [sp], rng)[0]).state
        if pool:
            return pool[rng.integers(len(pool))]
    raise RuntimeError("no state of the requested kind")


def small_net(seed: int = 0, dtype=torch.float64, ctxs=None, cfg: PolicyConfig | None = None) -> PolicyNet:
    torch.manual_seed(seed)
    net = PolicyNet(cfg or PolicyConfig()).to(dtype)
    if ctxs:
        fit_normalization(net, ctxs, rng=seed)
    return net
