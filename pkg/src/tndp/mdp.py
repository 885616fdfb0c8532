"""Route-by-route network construction as a Markov decision process.

Odd timesteps extend the route under construction with a shortest path;
even timesteps decide whether to halt that route or keep extending it.
The episode ends once the required number of routes is finished.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from functools import cached_property
from typing import Protocol, Sequence

import numpy as np

from .graph import (
    CityGraph, CostWeights, Network, Route, ShortestPathData, TransitAssignment, all_pairs_shortest_paths, assign,
    evaluate_reward_cost, route_time,
)


class MdpError(RuntimeError):
    pass


class ActionKind(str, enum.Enum):
    EXTEND = "extend"
    HALT = "halt"
    CONTINUE = "continue"


@dataclass(frozen=True)
class MdpAction:
    kind: ActionKind
    path: Route = ()
    at_head: bool = False


@dataclass(frozen=True)
class MdpOptions:
    enforce_connectedness: bool = False


class PathTable:
    """All shortest paths indexed by ``i * n + j`` with vectorised attributes."""

    def __init__(self, city: CityGraph, sp: ShortestPathData):
        n = city.n
        self.n = n
        self.paths: list[Route] = [sp.paths[i][j] for i in range(n) for j in range(n)]
        self.length = np.array([len(p) for p in self.paths])
        self.first = np.repeat(np.arange(n), n)
        self.last = np.tile(np.arange(n), n)
        self.time = np.asarray(sp.times).reshape(-1)
        member = np.zeros((n * n, n), dtype=bool)
        for k, p in enumerate(self.paths):
            member[k, list(p)] = True
        self.member = member

    def fresh_ids(self, max_stops: int) -> np.ndarray:
        """Unordered-pair path ids (i < j) with 2 <= stops <= max_stops."""
        ok = (self.first < self.last) & (self.length >= 2) & (self.length <= max_stops)
        return np.flatnonzero(ok)


@dataclass(eq=False)
class MdpContext:
    """Per-city data shared by every state of every episode on that city."""

    city: CityGraph
    weights: CostWeights
    options: MdpOptions = field(default_factory=MdpOptions)
    sp: ShortestPathData | None = None

    def __post_init__(self):
        if self.sp is None:
            self.sp = all_pairs_shortest_paths(self.city)
        self.adjacency = self.city.adjacency
        self.cache: dict = {}

    @cached_property
    def table(self) -> PathTable:
        return PathTable(self.city, self.sp)

    @cached_property
    def fresh_ids(self) -> np.ndarray:
        return self.table.fresh_ids(self.weights.max_stops)

    @cached_property
    def demand_pairs(self) -> np.ndarray:
        return self.city.demand > 0

    def reward_cost(self, network: Sequence[Route], assignment: TransitAssignment | None = None) -> float:
        return evaluate_reward_cost(self.city, network, self.weights, self.sp, assignment)

    def with_weights(self, weights: CostWeights) -> "MdpContext":
        ctx = MdpContext(self.city, weights, self.options, self.sp)
        if "table" in self.__dict__:
            ctx.__dict__["table"] = self.table
        return ctx


@dataclass(frozen=True, eq=False)
class MdpState:
    ctx: MdpContext
    routes: Network
    route: Route
    t: int

    @property
    def extend_step(self) -> bool:
        return self.t % 2 == 1

    @property
    def done(self) -> bool:
        return len(self.routes) >= self.ctx.weights.n_routes

    @property
    def network(self) -> Network:
        """Finished routes plus the in-progress one (when non-empty)."""
        return self.routes + ((self.route,) if self.route else ())

    @cached_property
    def assignment(self) -> TransitAssignment:
        return assign(self.ctx.city, self.network, self.ctx.weights.transfer_penalty)

    @cached_property
    def reward_cost(self) -> float:
        return self.ctx.reward_cost(self.network, self.assignment)

    @cached_property
    def route_time(self) -> float:
        return route_time(self.ctx.city, self.route)

    def key(self):
        return (self.routes, self.route, self.t)


@dataclass(frozen=True, eq=False)
class ActionSpace:
    """Legal actions at a state.

    Extension spaces list shortest-path ids (``path_ids``) and whether each
    attaches at the route's first stop (``at_head``); halting spaces list
    the allowed subset of halt/continue in ``choices``.
    """

    state: MdpState
    path_ids: np.ndarray | None = None
    at_head: np.ndarray | None = None
    choices: tuple[ActionKind, ...] = ()

    @property
    def is_extension(self) -> bool:
        return self.path_ids is not None

    def __len__(self) -> int:
        return len(self.path_ids) if self.is_extension else len(self.choices)

    def action(self, k: int) -> MdpAction:
        if self.is_extension:
            path = self.state.ctx.table.paths[int(self.path_ids[k])]
            return MdpAction(ActionKind.EXTEND, path, bool(self.at_head[k]))
        return MdpAction(self.choices[k])

    def actions(self) -> list[MdpAction]:
        return [self.action(k) for k in range(len(self))]

    def index(self, action: MdpAction) -> int:
        for k, a in enumerate(self.actions()):
            if a == action:
                return k
        raise MdpError(f"action {action} is not legal here: {_explain_illegal(self.state, action)}")


def reset(city_or_ctx: CityGraph | MdpContext, weights: CostWeights | None = None,
          options: MdpOptions | None = None) -> MdpState:
    if isinstance(city_or_ctx, MdpContext):
        ctx = city_or_ctx
    else:
        if weights is None:
            raise ValueError("weights required when passing a city")
        ctx = MdpContext(city_or_ctx, weights, options or MdpOptions())
    if ctx.weights.n_routes < 1:
        raise MdpError("need at least one route")
    return MdpState(ctx, (), (), 1)


def _extension_masks(state: MdpState) -> tuple[np.ndarray, np.ndarray]:
    ctx, r = state.ctx, state.route
    tab = ctx.table
    room = ctx.weights.max_stops - len(r)
    if room <= 0:
        empty = np.zeros(0, dtype=int)
        return empty, empty
    ok = (tab.length <= room) & ~tab.member[:, list(r)].any(axis=1)
    tail = np.flatnonzero(ok & ctx.adjacency[tab.first, r[-1]])
    head = np.flatnonzero(ok & ctx.adjacency[tab.last, r[0]])
    return tail, head


def extension_ids(state: MdpState) -> tuple[np.ndarray, np.ndarray]:
    """Path ids and head flags of the extension set of the current route."""
    tail, head = _extension_masks(state)
    ids = np.concatenate([tail, head])
    flags = np.concatenate([np.zeros(len(tail), bool), np.ones(len(head), bool)])
    return ids, flags


def _components(n: int, network: Sequence[Route]) -> np.ndarray:
    parent = list(range(n))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for r in network:
        for a, b in zip(r, r[1:]):
            ra, rb = find(a), find(b)
            if ra != rb:
                parent[ra] = rb
    return np.array([find(i) for i in range(n)])


def unsatisfied_pairs(city: CityGraph, network: Sequence[Route]) -> int:
    """Number of demand-positive unordered pairs not joined by the network."""
    lab = _components(city.n, network)
    iu, ju = np.triu_indices(city.n, 1)
    want = city.demand[iu, ju] > 0
    on = np.zeros(city.n, bool)
    for r in network:
        on[list(r)] = True
    linked = (lab[iu] == lab[ju]) & on[iu] & on[ju]
    return int((want & ~linked).sum())


def _connecting_mask(state: MdpState, ids: np.ndarray) -> np.ndarray:
    """Which candidate paths would reduce the count of unsatisfied pairs."""
    ctx = state.ctx
    n = ctx.city.n
    lab = _components(n, state.network)
    on = np.zeros(n, bool)
    for r in state.network:
        on[list(r)] = True
    # off-network nodes are singletons even if isolated in the union-find
    lab = np.where(on, lab, n + np.arange(n))
    uniq, comp = np.unique(lab, return_inverse=True)
    K = len(uniq)
    onehot = np.zeros((n, K))
    onehot[np.arange(n), comp] = 1.0
    between = onehot.T @ ctx.demand_pairs.astype(float) @ onehot
    np.fill_diagonal(between, 0.0)
    inc = ctx.table.member[ids].astype(float) @ onehot > 0
    if state.route:
        inc[:, comp[state.route[0]]] = True
    return np.einsum("pk,kl,pl->p", inc.astype(float), between, inc.astype(float)) > 0


def action_space(state: MdpState) -> ActionSpace:
    if state.done:
        raise MdpError("episode is finished; no actions available")
    ctx = state.ctx
    enforce = ctx.options.enforce_connectedness
    if state.extend_step:
        if not state.route:
            ids = ctx.fresh_ids
            flags = np.zeros(len(ids), bool)
        else:
            ids, flags = extension_ids(state)
        if enforce and len(ids) and unsatisfied_pairs(ctx.city, state.network) > 0:
            keep = _connecting_mask(state, ids)
            if keep.any():
                ids, flags = ids[keep], flags[keep]
        if len(ids) == 0:
            raise MdpError("no extension available on an odd timestep")
        return ActionSpace(state, ids, flags)

    n_ext = len(extension_ids(state)[0])
    m = len(state.route)
    w = ctx.weights
    if m >= w.max_stops or n_ext == 0:
        choices = (ActionKind.HALT,)
    elif m < w.min_stops:
        choices = (ActionKind.CONTINUE,)
    elif enforce and unsatisfied_pairs(ctx.city, state.network) > 0:
        choices = (ActionKind.CONTINUE,)
    else:
        choices = (ActionKind.HALT, ActionKind.CONTINUE)
    return ActionSpace(state, choices=choices)


@dataclass(frozen=True)
class StepOutcome:
    state: MdpState
    reward: float
    done: bool


def _explain_illegal(state: MdpState, action: MdpAction) -> str:
    w = state.ctx.weights
    if state.done:
        return "episode finished"
    if state.extend_step and action.kind is not ActionKind.EXTEND:
        return "odd timesteps only accept extensions"
    if not state.extend_step and action.kind is ActionKind.EXTEND:
        return "even timesteps only accept halt or continue"
    if action.kind is ActionKind.EXTEND:
        p = action.path
        if len(p) > w.max_stops - len(state.route):
            return f"path of {len(p)} stops exceeds remaining room {w.max_stops - len(state.route)}"
        if set(p) & set(state.route):
            return "path shares nodes with the route"
        if state.route:
            end = state.route[0] if action.at_head else state.route[-1]
            touch = p[-1] if action.at_head else p[0]
            if not state.ctx.adjacency[touch, end]:
                return f"path end {touch} is not street-adjacent to route terminal {end}"
        elif not 2 <= len(p) <= w.max_stops:
            return "new routes need between 2 and max_stops stops"
        return "path is not an allowed shortest path here"
    if action.kind is ActionKind.HALT:
        return "halt is not allowed: route too short with extensions left, or connectedness enforced"
    return "continue is not allowed: route full or no extensions left"


def apply(state: MdpState, space: ActionSpace, k: int) -> StepOutcome:
    """Take the k-th action of ``space`` (which must belong to ``state``)."""
    ctx = state.ctx
    if space.is_extension:
        path = ctx.table.paths[int(space.path_ids[k])]
        route = path + state.route if space.at_head[k] else state.route + path
        nxt = MdpState(ctx, state.routes, route, state.t + 1)
        return StepOutcome(nxt, state.reward_cost - nxt.reward_cost, False)
    kind = space.choices[k]
    if kind is ActionKind.HALT:
        nxt = MdpState(ctx, state.routes + (state.route,), (), state.t + 1)
        # the union of finished and in-progress routes is unchanged
        nxt.__dict__["assignment"] = state.assignment
        nxt.__dict__["reward_cost"] = state.reward_cost
    else:
        nxt = MdpState(ctx, state.routes, state.route, state.t + 1)
        nxt.__dict__["assignment"] = state.assignment
        nxt.__dict__["reward_cost"] = state.reward_cost
    return StepOutcome(nxt, 0.0, nxt.done)


def step(state: MdpState, action: MdpAction) -> StepOutcome:
    space = action_space(state)
    return apply(state, space, space.index(action))


class Policy(Protocol):
    def choose(self, states: Sequence[MdpState], spaces: Sequence[ActionSpace], rng: np.random.Generator,
               greedy: bool = False) -> list[int]: ...


class UniformRandomPolicy:
    """Every legal action equally likely."""

    def probabilities(self, space: ActionSpace) -> np.ndarray:
        if len(space) == 0:
            raise MdpError("empty action space")
        return np.full(len(space), 1.0 / len(space))

    def choose(self, states, spaces, rng, greedy=False):
        out = []
        for sp in spaces:
            if len(sp) == 0:
                raise MdpError("empty action space")
            out.append(0 if greedy else int(rng.integers(len(sp))))
        return out


@dataclass(frozen=True)
class TraceRecord:
    t: int
    kind: str
    path: Route
    at_head: bool
    reward: float
    n_actions: int

    def to_dict(self) -> dict:
        return {"t": self.t, "kind": self.kind, "path": list(self.path), "at_head": self.at_head,
                "reward": self.reward, "n_actions": self.n_actions}


def rollout(ctx: MdpContext, policy: Policy, greedy: bool = False, rng: np.random.Generator | int | None = None,
            start: MdpState | None = None, max_steps: int = 1_000_000) -> tuple[Network, list[TraceRecord]]:
    """Run one episode to completion and return the network and its trace."""
    nets, traces = rollout_batch([ctx], policy, greedy, rng, [start] if start is not None else None, max_steps)
    return nets[0], traces[0]


def rollout_batch(contexts: Sequence[MdpContext], policy: Policy, greedy: bool = False,
                  rng: np.random.Generator | int | None = None, starts: Sequence[MdpState] | None = None,
                  max_steps: int = 1_000_000) -> tuple[list[Network], list[list[TraceRecord]]]:
    """Episodes on several cities advanced in lockstep so the policy can batch."""
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    states = list(starts) if starts is not None else [reset(c) for c in contexts]
    traces: list[list[TraceRecord]] = [[] for _ in states]
    for _ in range(max_steps):
        live = [k for k, s in enumerate(states) if not s.done]
        if not live:
            break
        spaces = [action_space(states[k]) for k in live]
        picks = policy.choose([states[k] for k in live], spaces, rng, greedy)
        for k, space, a in zip(live, spaces, picks):
            s = states[k]
            out = apply(s, space, a)
            act = space.action(a)
            traces[k].append(TraceRecord(s.t, act.kind.value, act.path, act.at_head, out.reward, len(space)))
            states[k] = out.state
    else:
        raise MdpError("episode did not finish within max_steps")
    return [s.routes for s in states], traces
