"""Graph-attention construction policy and the value network.

The backbone embeds nodes from node and pair features; a halting head
scores halt-vs-continue and an extension head scores candidate shortest
paths by summing learned node-pair scores over the pairs each candidate
would link.
"""
from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
from torch import nn

from .features import EDGE_BOOLEAN, EDGE_CHANNELS, SP_TIME, VALUE_INPUT_DIM, compute_features, value_inputs
from .mdp import ActionKind, ActionSpace, MdpError, MdpState, action_space, apply, reset

CHECKPOINT_VERSION = 1
SIGMA_FLOOR = 1e-6
N_NODE, N_EDGE, N_STATE = 4, len(EDGE_CHANNELS), 7


@dataclass(frozen=True)
class PolicyConfig:
    n_layers: int = 5
    heads: int = 4
    embed: int = 64
    ext2_hidden: int = 16
    value_hidden: int = 36


class GATv2Layer(nn.Module):
    """Multi-head attention over a fully connected graph with pair features."""

    def __init__(self, d_in: int, d_edge: int, heads: int, d_out: int):
        super().__init__()
        if d_out % heads:
            raise ValueError("embedding width must divide evenly among heads")
        self.heads, self.d_head = heads, d_out // heads
        self.src = nn.Linear(d_in, d_out)
        self.dst = nn.Linear(d_in, d_out, bias=False)
        self.edge = nn.Linear(d_edge, d_out, bias=False)
        self.att = nn.Parameter(torch.empty(heads, self.d_head))
        self.mix = nn.Linear(d_out, d_out)
        nn.init.xavier_uniform_(self.att)

    def forward(self, H: torch.Tensor, E: torch.Tensor) -> torch.Tensor:
        B, n, _ = H.shape
        h, dh = self.heads, self.d_head
        hs = self.src(H).view(B, n, h, dh)
        hd = self.dst(H).view(B, n, h, dh)
        g = torch.relu(hd[:, :, None] + hs[:, None, :] + self.edge(E).view(B, n, n, h, dh))
        att = torch.softmax((g * self.att).sum(-1), dim=2)
        out = torch.einsum("bijh,bjhd->bihd", att, hs).reshape(B, n, h * dh)
        return self.mix(out)


def mlp(d_in: int, d_hidden: int, d_out: int = 1) -> nn.Sequential:
    return nn.Sequential(nn.Linear(d_in, d_hidden), nn.ReLU(), nn.Linear(d_hidden, d_hidden), nn.ReLU(),
                         nn.Linear(d_hidden, d_out))


@dataclass
class NormStats:
    """Per-channel shift and scale for every numeric input."""

    node_mean: np.ndarray = field(default_factory=lambda: np.zeros(N_NODE))
    node_std: np.ndarray = field(default_factory=lambda: np.ones(N_NODE))
    edge_mean: np.ndarray = field(default_factory=lambda: np.zeros(N_EDGE))
    edge_std: np.ndarray = field(default_factory=lambda: np.ones(N_EDGE))
    state_mean: np.ndarray = field(default_factory=lambda: np.zeros(N_STATE))
    state_std: np.ndarray = field(default_factory=lambda: np.ones(N_STATE))
    value_mean: np.ndarray = field(default_factory=lambda: np.zeros(VALUE_INPUT_DIM))
    value_std: np.ndarray = field(default_factory=lambda: np.ones(VALUE_INPUT_DIM))
    floored: tuple[str, ...] = ()

    @property
    def time_mean(self) -> float:
        return float(self.edge_mean[SP_TIME])

    @property
    def time_std(self) -> float:
        return float(self.edge_std[SP_TIME])

    def to_dict(self) -> dict:
        d = {k: np.asarray(v).tolist() for k, v in asdict(self).items() if k != "floored"}
        d["floored"] = list(self.floored)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "NormStats":
        kw = {k: np.asarray(v, dtype=float) for k, v in d.items() if k != "floored"}
        return cls(**kw, floored=tuple(d.get("floored", ())))


class _Moments:
    def __init__(self, dim: int):
        self.n = 0
        self.s = np.zeros(dim)
        self.ss = np.zeros(dim)

    def add(self, rows: np.ndarray) -> None:
        rows = rows.reshape(-1, self.s.shape[0])
        self.n += rows.shape[0]
        self.s += rows.sum(0)
        self.ss += (rows * rows).sum(0)

    def finish(self, names: Sequence[str], boolean: np.ndarray | None = None):
        mean = self.s / max(self.n, 1)
        var = np.maximum(self.ss / max(self.n, 1) - mean**2, 0.0)
        std = np.sqrt(var)
        floored = [nm for nm, sd in zip(names, std) if sd < SIGMA_FLOOR]
        std = np.maximum(std, SIGMA_FLOOR)
        if boolean is not None:
            mean = np.where(boolean, 0.0, mean)
            std = np.where(boolean, 1.0, std)
            floored = [nm for nm, b in zip(names, boolean) if nm in floored and not b]
        return mean, std, floored


class StatsCollector:
    """Accumulates raw feature moments from a stream of states."""

    def __init__(self):
        self.node, self.edge = _Moments(N_NODE), _Moments(N_EDGE)
        self.state, self.value = _Moments(N_STATE), _Moments(VALUE_INPUT_DIM)

    def add(self, state: MdpState) -> None:
        f = compute_features(state)
        self.node.add(f.X)
        self.edge.add(f.E)
        self.state.add(f.s)
        self.value.add(value_inputs(state, f.s))

    def finish(self) -> NormStats:
        nm, ns, f1 = self.node.finish([f"node:{i}" for i in range(N_NODE)])
        em, es, f2 = self.edge.finish([f"edge:{c}" for c in EDGE_CHANNELS], EDGE_BOOLEAN)
        sm, ss, f3 = self.state.finish([f"state:{i}" for i in range(N_STATE)])
        vm, vs, f4 = self.value.finish([f"value:{i}" for i in range(VALUE_INPUT_DIM)])
        floored = tuple(f1 + f2 + f3 + f4)
        if floored:
            warnings.warn(f"zero-variance input channels floored: {', '.join(floored)}", stacklevel=2)
        return NormStats(nm, ns, em, es, sm, ss, vm, vs, floored)


@dataclass
class PreparedBatch:
    """Tensors for a batch of states sharing the same node count."""

    X: torch.Tensor
    E: torch.Tensor
    s: torch.Tensor
    value_x: torch.Tensor
    n_actions: list[int]
    ext_rows: torch.Tensor  # batch indices of extension states
    halt_rows: torch.Tensor
    # extension candidates
    cand_state: torch.Tensor  # index into ext_rows order
    cand_member: torch.Tensor
    cand_time: torch.Tensor
    cand_grow: torch.Tensor
    # route-to-path pair triples
    tri_row: torch.Tensor
    tri_i: torch.Tensor
    tri_j: torch.Tensor
    tri_state: torch.Tensor
    tri_time: torch.Tensor
    n_grows: int
    # halting
    halt_first: torch.Tensor
    halt_last: torch.Tensor
    halt_time: torch.Tensor
    halt_both: torch.Tensor
    halt_choices: list[tuple[ActionKind, ...]]


def _route_offsets(ctx, route) -> np.ndarray:
    r = np.asarray(route)
    steps = ctx.city.edge_times[r[:-1], r[1:]] if len(r) > 1 else np.zeros(0)
    return np.concatenate([[0.0], np.cumsum(steps)])


def prepare_batch(states: Sequence[MdpState], spaces: Sequence[ActionSpace], norm: NormStats,
                  dtype=torch.float32) -> PreparedBatch:
    if not states:
        raise ValueError("empty batch")
    n = states[0].ctx.city.n
    if any(s.ctx.city.n != n for s in states):
        raise ValueError("all states in a batch must have the same node count")
    feats = [compute_features(s) for s in states]
    X = np.stack([f.X for f in feats])
    E = np.stack([f.E for f in feats])
    S = np.stack([f.s for f in feats])
    V = np.stack([value_inputs(st, f.s) for st, f in zip(states, feats)])
    X = (X - norm.node_mean) / norm.node_std
    E = (E - norm.edge_mean) / norm.edge_std
    S_n = (S - norm.state_mean) / norm.state_std
    V = (V - norm.value_mean) / norm.value_std
    tm, ts = norm.time_mean, norm.time_std

    ext_rows, halt_rows = [], []
    cand_state, cand_member, cand_time, cand_grow = [], [], [], []
    tri_row, tri_i, tri_j, tri_state, tri_time = [], [], [], [], []
    halt_first, halt_last, halt_time, halt_both, halt_choices = [], [], [], [], []
    n_grows = 0
    for b, (st, sp) in enumerate(zip(states, spaces)):
        if sp.state is not st:
            raise ValueError("action space does not belong to the paired state")
        if len(sp) == 0:
            raise MdpError("empty action space")
        ctx, r = st.ctx, st.route
        if sp.is_extension:
            e = len(ext_rows)
            ext_rows.append(b)
            tab = ctx.table
            ids = sp.path_ids
            cand_state.append(np.full(len(ids), e))
            cand_member.append(tab.member[ids])
            cand_time.append((tab.time[ids] - tm) / ts)
            grow = np.full(len(ids), -1)
            if r:
                T = ctx.sp.times
                off = _route_offsets(ctx, r)
                on = np.zeros(n, bool)
                on[list(r)] = True
                free = np.flatnonzero(~on)
                for head in (False, True):
                    sel = np.flatnonzero(sp.at_head == head)
                    if not len(sel):
                        continue
                    attach = tab.last[ids[sel]] if head else tab.first[ids[sel]]
                    ks, inv = np.unique(attach, return_inverse=True)
                    grow[sel] = n_grows + inv
                    term = r[0] if head else r[-1]
                    d_r = off if head else off[-1] - off  # time from each route stop to the junction
                    link = ctx.city.edge_times[term, ks]
                    # (k, j, i) grid of route-stop -> junction -> path-node times
                    tt = d_r[None, None, :] + link[:, None, None] + T[np.ix_(ks, free)][:, :, None]
                    kk, jj, ii = np.meshgrid(np.arange(len(ks)), np.arange(len(free)), np.arange(len(r)),
                                             indexing="ij")
                    tri_row.append((n_grows + kk).ravel())
                    tri_j.append(free[jj].ravel())
                    tri_i.append(np.asarray(r)[ii].ravel())
                    tri_state.append(np.full(kk.size, e))
                    tri_time.append(((tt - tm) / ts).ravel())
                    n_grows += len(ks)
            cand_grow.append(grow)
        else:
            halt_rows.append(b)
            halt_choices.append(sp.choices)
            halt_both.append(len(sp.choices) == 2)
            halt_first.append(r[0] if r else -1)
            halt_last.append(r[-1] if r else -1)
            halt_time.append((st.route_time - tm) / ts)

    def t(x, kind=dtype):
        return torch.as_tensor(np.asarray(x), dtype=kind)

    def cat(parts, kind, width=None):
        if parts:
            return t(np.concatenate(parts), kind)
        return torch.zeros((0,) if width is None else (0, width), dtype=kind)

    return PreparedBatch(
        X=t(X), E=t(E), s=t(S_n), value_x=t(V), n_actions=[len(sp) for sp in spaces],
        ext_rows=t(ext_rows, torch.long), halt_rows=t(halt_rows, torch.long),
        cand_state=cat(cand_state, torch.long), cand_member=cat(cand_member, dtype, n),
        cand_time=cat(cand_time, dtype), cand_grow=cat(cand_grow, torch.long),
        tri_row=cat(tri_row, torch.long), tri_i=cat(tri_i, torch.long), tri_j=cat(tri_j, torch.long),
        tri_state=cat(tri_state, torch.long), tri_time=cat(tri_time, dtype), n_grows=n_grows,
        halt_first=t(halt_first, torch.long), halt_last=t(halt_last, torch.long), halt_time=t(halt_time),
        halt_both=t(halt_both, torch.bool), halt_choices=halt_choices,
    )


def segment_log_softmax(logits: torch.Tensor, seg: torch.Tensor, n_seg: int) -> torch.Tensor:
    big = torch.full((n_seg,), -torch.inf, dtype=logits.dtype)
    big = big.scatter_reduce(0, seg, logits.detach(), reduce="amax", include_self=True)
    shifted = logits - big[seg]
    tot = torch.zeros(n_seg, dtype=logits.dtype).index_add(0, seg, shifted.exp())
    return shifted - tot.log()[seg]


class PolicyNet(nn.Module):
    def __init__(self, cfg: PolicyConfig = PolicyConfig()):
        super().__init__()
        self.cfg = cfg
        d = cfg.embed
        dims = [N_NODE] + [d] * cfg.n_layers
        self.backbone = nn.ModuleList(GATv2Layer(a, N_EDGE, cfg.heads, d) for a in dims[:-1])
        self.ext1 = mlp(1 + 2 * d + N_STATE, d)
        self.ext2 = mlp(N_STATE + 2, cfg.ext2_hidden)
        self.halt = mlp(2 * d + d + N_STATE + 1, d)
        self.placeholder = nn.Parameter(torch.randn(2 * d) * 0.1)
        self.norm = NormStats()

    # -- pieces -----------------------------------------------------------
    def embed(self, X: torch.Tensor, E: torch.Tensor) -> torch.Tensor:
        if not (torch.isfinite(X).all() and torch.isfinite(E).all()):
            raise ValueError("non-finite policy input")
        H = X
        for layer in self.backbone:
            H = torch.relu(layer(H, E))
        return H

    def _ext1_first(self):
        W, b = self.ext1[0].weight, self.ext1[0].bias
        d = self.cfg.embed
        return W[:, 0], W[:, 1:1 + d], W[:, 1 + d:1 + 2 * d], W[:, 1 + 2 * d:], b

    def _ext1_rest(self, h1: torch.Tensor) -> torch.Tensor:
        return self.ext1[2:](torch.relu(h1)).squeeze(-1)

    def pair_scores(self, Y: torch.Tensor, T: torch.Tensor, s: torch.Tensor) -> torch.Tensor:
        """o_ij for all node pairs given times T (B, n, n); diagonal is zero."""
        w_t, A, Bm, C, b = self._ext1_first()
        P, Q = Y @ A.T, Y @ Bm.T
        h1 = T[..., None] * w_t + P[:, :, None] + Q[:, None, :] + (s @ C.T + b)[:, None, None]
        o = self._ext1_rest(h1)
        n = Y.shape[1]
        return o * (1 - torch.eye(n, dtype=o.dtype))

    def halt_logit(self, Y: torch.Tensor, s: torch.Tensor, first: torch.Tensor, last: torch.Tensor,
                   tau_r: torch.Tensor) -> torch.Tensor:
        rows = torch.arange(Y.shape[0])
        ends = torch.cat([Y[rows, first.clamp(min=0)], Y[rows, last.clamp(min=0)]], dim=-1)
        empty = (first < 0)[:, None]
        ends = torch.where(empty, self.placeholder.expand_as(ends), ends)
        x = torch.cat([ends, Y.mean(1), s, tau_r[:, None]], dim=-1)
        return self.halt(x).squeeze(-1)

    # -- full forward -----------------------------------------------------
    def extension_scores(self, batch: PreparedBatch, Y: torch.Tensor | None = None):
        """Pair-sum prior scores and final logits for every extension candidate."""
        Y = self.embed(batch.X, batch.E) if Y is None else Y
        er = batch.ext_rows
        Ye, se = Y[er], batch.s[er]
        O = self.pair_scores(Ye, batch.E[er][..., SP_TIME], se)
        m = batch.cand_member
        cs = batch.cand_state
        prior = torch.einsum("cn,cnm,cm->c", m, O[cs], m)
        if batch.n_grows:
            w_t, A, Bm, C, b = self._ext1_first()
            st = batch.tri_state
            h1 = (batch.tri_time[:, None] * w_t + Ye[st, batch.tri_i] @ A.T + Ye[st, batch.tri_j] @ Bm.T
                  + se[st] @ C.T + b)
            score = self._ext1_rest(h1)
            n = Y.shape[1]
            G = torch.zeros(batch.n_grows * n, dtype=Y.dtype).index_add(0, batch.tri_row * n + batch.tri_j, score)
            G = G.view(batch.n_grows, n)
            extra = (m * G[batch.cand_grow.clamp(min=0)]).sum(-1)
            prior = prior + torch.where(batch.cand_grow >= 0, extra, torch.zeros_like(extra))
        x2 = torch.cat([se[cs], batch.cand_time[:, None], prior[:, None]], dim=-1)
        return prior, self.ext2(x2).squeeze(-1)

    def action_log_probs(self, batch: PreparedBatch) -> list[torch.Tensor]:
        """Per-state log-probabilities over each state's action space, in order."""
        Y = self.embed(batch.X, batch.E)
        out: list[torch.Tensor | None] = [None] * len(batch.n_actions)
        if len(batch.ext_rows):
            er, cs = batch.ext_rows, batch.cand_state
            _, logits = self.extension_scores(batch, Y)
            logp = segment_log_softmax(logits, cs, len(er))
            counts = torch.bincount(cs, minlength=len(er)).tolist()
            for row, piece in zip(er.tolist(), torch.split(logp, counts)):
                out[row] = piece
        if len(batch.halt_rows):
            hr = batch.halt_rows
            z = self.halt_logit(Y[hr], batch.s[hr], batch.halt_first, batch.halt_last, batch.halt_time)
            lp_halt = nn.functional.logsigmoid(z)
            lp_cont = nn.functional.logsigmoid(-z)
            for k, row in enumerate(hr.tolist()):
                ch = batch.halt_choices[k]
                if len(ch) == 1:
                    out[row] = torch.zeros(1, dtype=Y.dtype)
                else:
                    out[row] = torch.stack([lp_halt[k] if c is ActionKind.HALT else lp_cont[k] for c in ch])
        return out  # type: ignore[return-value]

    def halt_probability(self, batch: PreparedBatch) -> torch.Tensor:
        """Halting probability for every halting-step state in the batch."""
        Y = self.embed(batch.X, batch.E)
        hr = batch.halt_rows
        return torch.sigmoid(self.halt_logit(Y[hr], batch.s[hr], batch.halt_first, batch.halt_last, batch.halt_time))

    def chosen_log_probs(self, batch: PreparedBatch, chosen: Sequence[int]) -> torch.Tensor:
        lps = self.action_log_probs(batch)
        return torch.stack([lp[int(k)] for lp, k in zip(lps, chosen)])

    def check_finite(self) -> None:
        for name, p in self.named_parameters():
            if not torch.isfinite(p).all():
                raise ValueError(f"non-finite parameter {name}")


class ValueNet(nn.Module):
    def __init__(self, hidden: int = 36):
        super().__init__()
        self.net = mlp(VALUE_INPUT_DIM, hidden)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.net(x).squeeze(-1)


class NeuralPolicy:
    """Adapter making a ``PolicyNet`` usable as a rollout policy."""

    def __init__(self, net: PolicyNet):
        self.net = net

    def distributions(self, states, spaces) -> list[np.ndarray]:
        with torch.no_grad():
            return [lp.exp().double().numpy() for lp in self._logps(states, spaces)]

    def _logps(self, states, spaces):
        groups: dict[int, list[int]] = {}
        for k, s in enumerate(states):
            groups.setdefault(s.ctx.city.n, []).append(k)
        out = [None] * len(states)
        dtype = next(self.net.parameters()).dtype
        for idx in groups.values():
            batch = prepare_batch([states[k] for k in idx], [spaces[k] for k in idx], self.net.norm, dtype)
            for k, lp in zip(idx, self.net.action_log_probs(batch)):
                out[k] = lp
        return out

    def choose_with_logp(self, states, spaces, rng: np.random.Generator, greedy: bool = False):
        with torch.no_grad():
            lps = [lp.double().numpy() for lp in self._logps(states, spaces)]
        picks, logps = [], []
        for lp in lps:
            k = int(np.argmax(lp)) if greedy else sample_index(np.exp(lp), rng)
            picks.append(k)
            logps.append(float(lp[k]))
        return picks, logps

    def choose(self, states, spaces, rng, greedy=False):
        return self.choose_with_logp(states, spaces, rng, greedy)[0]


def sample_index(p: np.ndarray, rng: np.random.Generator) -> int:
    c = np.cumsum(p)
    k = int(np.searchsorted(c, rng.random() * c[-1], side="right"))
    return min(k, len(p) - 1)


def save_policy(net: PolicyNet, path: str | Path, value: ValueNet | None = None, meta: dict | None = None) -> None:
    torch.save({
        "version": CHECKPOINT_VERSION,
        "config": asdict(net.cfg),
        "state_dict": net.state_dict(),
        "norm": net.norm.to_dict(),
        "value_state_dict": value.state_dict() if value is not None else None,
        "meta": meta or {},
    }, path)


def load_policy(path: str | Path) -> tuple[PolicyNet, ValueNet | None, dict]:
    ck = torch.load(path, map_location="cpu", weights_only=False)
    if ck.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {ck.get('version')}")
    net = PolicyNet(PolicyConfig(**ck["config"]))
    net.load_state_dict(ck["state_dict"])
    net.norm = NormStats.from_dict(ck["norm"])
    value = None
    if ck.get("value_state_dict") is not None:
        value = ValueNet(ck["config"]["value_hidden"])
        value.load_state_dict(ck["value_state_dict"])
    return net, value, ck.get("meta", {})


def fit_normalization(net: PolicyNet, contexts, rng: np.random.Generator | int = 0, episodes_per_city: int = 1) -> NormStats:
    """Roll the un-normalised policy over ``contexts`` and store input moments in ``net.norm``."""
    if not contexts:
        raise ValueError("need at least one context")
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    saved = net.norm
    net.norm = NormStats()
    collector = StatsCollector()
    policy = NeuralPolicy(net)
    try:
        for _ in range(episodes_per_city):
            states = [reset(c) for c in contexts]
            while True:
                live = [k for k, s in enumerate(states) if not s.done]
                if not live:
                    break
                for k in live:
                    collector.add(states[k])
                spaces = [action_space(states[k]) for k in live]
                picks = policy.choose([states[k] for k in live], spaces, rng)
                for k, sp, a in zip(live, spaces, picks):
                    states[k] = apply(states[k], sp, a).state
    except Exception:
        net.norm = saved
        raise
    net.norm = collector.finish()
    return net.norm
