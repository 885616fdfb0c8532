"""Network mutation operators.

Each mutator maps a list of networks to a list of mutants so that the
neural one can batch its policy calls across population members.
"""
from __future__ import annotations

from typing import Sequence

import numpy as np

from ..graph import CityGraph, Network, ShortestPathData
from ..mdp import MdpContext, MdpState, Policy, rollout_batch


def direct_demand_table(city: CityGraph, sp: ShortestPathData) -> np.ndarray:
    """``out[i, j]``: demand between stops of SP_ij that SP_ij alone satisfies."""
    n = city.n
    D = city.demand.copy()
    np.fill_diagonal(D, 0.0)
    out = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            p = list(sp.path(i, j))
            out[i, j] = out[j, i] = D[np.ix_(p, p)].sum() / 2.0
    return out


def _pick_terminal(network: Network, rng: np.random.Generator) -> tuple[int, bool]:
    k = int(rng.integers(len(network)))
    at_head = bool(rng.integers(2)) if len(network[k]) > 1 else False
    return k, at_head


def type1_mutate(network: Network, city: CityGraph, sp: ShortestPathData, rng: np.random.Generator,
                 direct: np.ndarray | None = None) -> Network:
    """Replace a random route by SP_ij from one of its terminals i.

    j is drawn with probability proportional to the demand SP_ij serves
    directly (uniformly if all such demand is zero).
    """
    if not network:
        raise ValueError("network has no routes")
    direct = direct_demand_table(city, sp) if direct is None else direct
    k, at_head = _pick_terminal(network, rng)
    r = network[k]
    i = r[0] if at_head else r[-1]
    w = direct[i].copy()
    w[i] = 0.0
    if w.sum() <= 0:
        w = np.ones(city.n)
        w[i] = 0.0
    j = int(rng.choice(city.n, p=w / w.sum()))
    return network[:k] + (sp.path(i, j),) + network[k + 1:]


def type2_mutate(network: Network, city: CityGraph, p_d: float, rng: np.random.Generator) -> Network:
    """Delete or extend at a random terminal of a random route.

    Deletion (probability ``p_d``) needs at least two stops and extension
    needs a street neighbour not already on the route; if the chosen move is
    impossible the other one is made, and if neither is, nothing changes.
    """
    if not network:
        raise ValueError("network has no routes")
    k, at_head = _pick_terminal(network, rng)
    r = network[k]
    end = r[0] if at_head else r[-1]
    on = set(r)
    options = [j for j in city.neighbors(end) if j not in on]
    delete = rng.random() < p_d
    can_delete = len(r) > 1
    if delete and not can_delete:
        delete = False
    if not delete and not options:
        if not can_delete:
            return network
        delete = True
    if delete:
        new = r[1:] if at_head else r[:-1]
    else:
        j = int(options[rng.integers(len(options))])
        new = (j,) + r if at_head else r + (j,)
    return network[:k] + (new,) + network[k + 1:]


def neural_mutate_batch(networks: Sequence[Network], ctx: MdpContext, policy: Policy,
                        rng: np.random.Generator) -> list[Network]:
    """Drop one random route per network and let the policy build a replacement."""
    starts, slots = [], []
    for net in networks:
        k = int(rng.integers(len(net)))
        slots.append(k)
        starts.append(MdpState(ctx, net[:k] + net[k + 1:], (), 1))
    done, _ = rollout_batch([ctx] * len(starts), policy, greedy=False, rng=rng, starts=starts)
    out = []
    for net, k, routes in zip(networks, slots, done):
        new = routes[-1]
        out.append(net[:k] + (new,) + net[k + 1:])
    return out


def neural_mutate(network: Network, ctx: MdpContext, policy: Policy, rng: np.random.Generator) -> Network:
    return neural_mutate_batch([network], ctx, policy, rng)[0]


class Type1Mutator:
    def __init__(self, city: CityGraph, sp: ShortestPathData):
        self.city, self.sp = city, sp
        self.direct = direct_demand_table(city, sp)

    def __call__(self, networks, rng):
        return [type1_mutate(n, self.city, self.sp, rng, self.direct) for n in networks]


class Type2Mutator:
    def __init__(self, city: CityGraph, p_d: float = 0.2):
        self.city, self.p_d = city, p_d

    def __call__(self, networks, rng):
        return [type2_mutate(n, self.city, self.p_d, rng) for n in networks]


class NeuralMutator:
    def __init__(self, ctx: MdpContext, policy: Policy):
        self.ctx, self.policy = ctx, policy

    def __call__(self, networks, rng):
        return neural_mutate_batch(networks, self.ctx, self.policy, rng) if networks else []
