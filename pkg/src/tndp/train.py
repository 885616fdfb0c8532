"""PPO training of the construction policy on synthetic cities."""
from __future__ import annotations

import copy
import csv
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch

from .citygen import AugmentConfig, augment_city
from .graph import CityGraph, CostWeights, all_pairs_shortest_paths, evaluate_cost
from .mdp import MdpContext, MdpOptions, MdpState, action_space, apply, reset
from .policy import NeuralPolicy, PolicyConfig, PolicyNet, ValueNet, fit_normalization, prepare_batch, save_policy

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 200
    batch_size: int = 256
    horizon: int = 120
    epochs_per_batch: int = 1
    gamma: float = 0.95
    clip_eps: float = 0.2
    policy_lr: float = 0.0016
    policy_weight_decay: float = 8.4e-4
    value_lr: float = 5e-4
    value_weight_decay: float = 0.01
    beta: float = 5.0
    n_routes: int = 10
    min_stops: int = 2
    max_stops: int = 12
    adam_betas: tuple[float, float] = (0.9, 0.999)
    minibatch_size: int = 1024
    chunk_size: int = 256
    fixed_alpha: float | None = None
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    val_fraction: float = 0.1
    eval_every: int = 10
    normalize_advantages: bool = False
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    seed: int = 0

    def __post_init__(self):
        for name in ("batch_size", "horizon", "epochs_per_batch", "minibatch_size", "chunk_size", "eval_every"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.iterations < 0:
            raise ValueError("iterations must be non-negative")
        if not 0 < self.gamma <= 1 or self.clip_eps <= 0:
            raise ValueError("need 0 < gamma <= 1 and clip_eps > 0")

    def weights_for(self, sp, alpha: float) -> CostWeights:
        return CostWeights.for_city(sp, n_routes=self.n_routes, min_stops=self.min_stops, max_stops=self.max_stops,
                                    alpha=alpha, beta=self.beta)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if "augment" in d and isinstance(d["augment"], dict):
            d["augment"] = AugmentConfig(**d["augment"])
        if "policy" in d and isinstance(d["policy"], dict):
            d["policy"] = PolicyConfig(**d["policy"])
        if "adam_betas" in d:
            d["adam_betas"] = tuple(d["adam_betas"])
        return cls(**d)


@dataclass
class TrainReport:
    mean_reward: list[float] = field(default_factory=list)
    mean_return: list[float] = field(default_factory=list)
    validation: list[tuple[int, float]] = field(default_factory=list)
    best_iteration: int | None = None
    best_cost: float | None = None
    seconds: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)


def sample_alpha(rng: np.random.Generator, fixed: float | None = None) -> float:
    """0, 1 or uniform(0, 1), each with probability one third (unless fixed)."""
    if fixed is not None:
        return float(fixed)
    k = rng.integers(3)
    if k == 0:
        return 0.0
    if k == 1:
        return 1.0
    while True:
        a = float(rng.random())
        if a > 0.0:
            return a


def compute_returns_and_advantages(rewards: Sequence[float], values: Sequence[float], dones: Sequence[bool],
                                   bootstrap: float, gamma: float) -> tuple[np.ndarray, np.ndarray]:
    """Discounted returns to the end of a recorded segment, bootstrapped by value.

    ``dones[t]`` marks that the episode ended with step t (no bootstrap
    across it); ``bootstrap`` is V of the state following the last step.
    """
    r = np.asarray(rewards, dtype=float)
    v = np.asarray(values, dtype=float)
    G = np.zeros_like(r)
    nxt = float(bootstrap)
    for t in range(len(r) - 1, -1, -1):
        if dones[t]:
            nxt = 0.0
        nxt = r[t] + gamma * nxt
        G[t] = nxt
    return G, G - v


def ppo_clip_objective(logp_new: torch.Tensor, logp_old: torch.Tensor, adv: torch.Tensor, eps: float) -> torch.Tensor:
    """Mean clipped surrogate (to be maximised)."""
    ratio = torch.exp(logp_new - logp_old)
    if not torch.isfinite(ratio).all():
        raise TrainingError("non-finite probability ratio")
    return torch.minimum(ratio * adv, torch.clamp(ratio, 1 - eps, 1 + eps) * adv).mean()


def value_loss(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    return ((target - pred) ** 2).mean()


@dataclass
class Transition:
    state: MdpState
    space: object
    action: int
    logp: float
    ret: float = 0.0
    adv: float = 0.0


def make_context(city: CityGraph, cfg: TrainConfig, alpha: float, options: MdpOptions | None = None) -> MdpContext:
    sp = all_pairs_shortest_paths(city)
    return MdpContext(city, cfg.weights_for(sp, alpha), options or MdpOptions(), sp)


def collect_batch(net: PolicyNet, value: ValueNet, contexts: Sequence[MdpContext], cfg: TrainConfig,
                  rng: np.random.Generator) -> tuple[list[Transition], dict]:
    """Roll ``cfg.horizon`` steps on every context, restarting finished episodes."""
    policy = NeuralPolicy(net)
    states = [reset(c) for c in contexts]
    per_city: list[list[tuple[Transition, float, bool]]] = [[] for _ in contexts]
    returns, running = [], [0.0] * len(contexts)
    for _ in range(cfg.horizon):
        spaces = [action_space(s) for s in states]
        picks, logps = policy.choose_with_logp(states, spaces, rng)
        for k, (s, sp, a, lp) in enumerate(zip(states, spaces, picks, logps)):
            out = apply(s, sp, a)
            per_city[k].append((Transition(s, sp, a, lp), out.reward, out.done))
            running[k] += out.reward
            if out.done:
                returns.append(running[k])
                running[k] = 0.0
                states[k] = reset(contexts[k])
            else:
                states[k] = out.state
    # value estimates for every recorded state plus the bootstrap states
    flat = [tr for seq in per_city for tr, _, _ in seq]
    with torch.no_grad():
        v_all = _values(net, value, [t.state for t in flat] + states)
    v_rec, v_boot = v_all[: len(flat)], v_all[len(flat):]
    out: list[Transition] = []
    pos = 0
    rewards = []
    for k, seq in enumerate(per_city):
        r = [x[1] for x in seq]
        d = [x[2] for x in seq]
        G, A = compute_returns_and_advantages(r, v_rec[pos:pos + len(seq)], d, v_boot[k], cfg.gamma)
        for (tr, _, _), g, a in zip(seq, G, A):
            tr.ret, tr.adv = float(g), float(a)
            out.append(tr)
        pos += len(seq)
        rewards.extend(r)
    stats = {"mean_reward": float(np.mean(rewards)), "mean_return": float(np.mean(returns)) if returns else math.nan}
    return out, stats


def _values(net: PolicyNet, value: ValueNet, states: Sequence[MdpState]) -> np.ndarray:
    from .features import value_inputs
    norm = net.norm
    x = np.stack([value_inputs(s) for s in states])
    x = (x - norm.value_mean) / norm.value_std
    dtype = next(value.parameters()).dtype
    return value(torch.as_tensor(x, dtype=dtype)).double().numpy()


def ppo_update(net: PolicyNet, value: ValueNet, transitions: list[Transition], cfg: TrainConfig,
               popt: torch.optim.Optimizer, vopt: torch.optim.Optimizer, rng: np.random.Generator) -> dict:
    dtype = next(net.parameters()).dtype
    losses = []
    for _ in range(cfg.epochs_per_batch):
        order = rng.permutation(len(transitions))
        for lo in range(0, len(order), cfg.minibatch_size):
            mb = [transitions[i] for i in order[lo:lo + cfg.minibatch_size]]
            adv_all = np.array([t.adv for t in mb])
            if cfg.normalize_advantages and len(mb) > 1:
                adv_all = (adv_all - adv_all.mean()) / (adv_all.std() + 1e-8)
            popt.zero_grad()
            vopt.zero_grad()
            p_tot, v_tot = 0.0, 0.0
            for c0 in range(0, len(mb), cfg.chunk_size):
                chunk = mb[c0:c0 + cfg.chunk_size]
                frac = len(chunk) / len(mb)
                batch = prepare_batch([t.state for t in chunk], [t.space for t in chunk], net.norm, dtype)
                new = net.chosen_log_probs(batch, [t.action for t in chunk])
                old = torch.tensor([t.logp for t in chunk], dtype=dtype)
                adv = torch.tensor(adv_all[c0:c0 + cfg.chunk_size], dtype=dtype)
                ploss = -ppo_clip_objective(new, old, adv, cfg.clip_eps) * frac
                vpred = value(batch.value_x)
                vloss = value_loss(vpred, torch.tensor([t.ret for t in chunk], dtype=dtype)) * frac
                if not (torch.isfinite(ploss) and torch.isfinite(vloss)):
                    raise TrainingError(f"non-finite loss (policy {ploss.item()}, value {vloss.item()})")
                (ploss + vloss).backward()
                p_tot += ploss.item()
                v_tot += vloss.item()
            popt.step()
            vopt.step()
            losses.append((p_tot, v_tot))
    net.check_finite()
    return {"policy_loss": float(np.mean([a for a, _ in losses])), "value_loss": float(np.mean([b for _, b in losses]))}


def validation_cost(net: PolicyNet, contexts: Sequence[MdpContext], seed: int, chunk: int = 128) -> float:
    """Mean total cost of one seeded stochastic rollout per validation context."""
    from .mdp import rollout_batch

    policy = NeuralPolicy(net)
    rng = np.random.default_rng(seed)
    costs = []
    for lo in range(0, len(contexts), chunk):
        part = contexts[lo:lo + chunk]
        nets, _ = rollout_batch(part, policy, greedy=False, rng=rng)
        costs += [evaluate_cost(c.city, n, c.weights).total for c, n in zip(part, nets)]
    return float(np.mean(costs))


def split_dataset(cities: Sequence[CityGraph], frac: float, rng: np.random.Generator):
    idx = rng.permutation(len(cities))
    n_val = max(1, int(round(frac * len(cities))))
    if n_val >= len(cities):
        raise ValueError("dataset too small to split into train and validation")
    return [cities[i] for i in idx[n_val:]], [cities[i] for i in idx[:n_val]]


def train(cities: Sequence[CityGraph], cfg: TrainConfig, out_dir: str | Path | None = None,
          progress: Callable[[int, dict], None] | None = None) -> tuple[PolicyNet, ValueNet, TrainReport]:
    """Train a policy; returns the parameters with the lowest validation cost."""
    t0 = time.time()
    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    train_set, val_set = split_dataset(cities, cfg.val_fraction, rng)
    val_ctx = [make_context(c, cfg, sample_alpha(rng, cfg.fixed_alpha)) for c in val_set]

    net = PolicyNet(cfg.policy)
    value = ValueNet(cfg.policy.value_hidden)
    fit_normalization(net, val_ctx, rng)
    report = TrainReport()
    if cfg.iterations == 0:
        return net, value, report

    popt = torch.optim.AdamW(net.parameters(), lr=cfg.policy_lr, betas=cfg.adam_betas,
                             weight_decay=cfg.policy_weight_decay)
    vopt = torch.optim.AdamW(value.parameters(), lr=cfg.value_lr, betas=cfg.adam_betas,
                             weight_decay=cfg.value_weight_decay)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.json").write_text(json.dumps(_jsonable(asdict(cfg)), indent=2))
    best_state = None
    val_seed = int(rng.integers(2**31))

    def evaluate(it: int):
        nonlocal best_state
        cv = validation_cost(net, val_ctx, val_seed)
        report.validation.append((it, cv))
        if report.best_cost is None or cv < report.best_cost:
            report.best_cost, report.best_iteration = cv, it
            best_state = (copy.deepcopy(net.state_dict()), copy.deepcopy(value.state_dict()))
        if out is not None:
            save_policy(net, out / f"ckpt_{it:04d}.pt", value, {"iteration": it, "validation_cost": cv})
        log.info("iteration %d validation cost %.4f", it, cv)

    for it in range(cfg.iterations):
        if it % cfg.eval_every == 0:
            evaluate(it)
        pick = rng.choice(len(train_set), size=min(cfg.batch_size, len(train_set)), replace=False)
        contexts = [make_context(augment_city(train_set[i], cfg.augment, rng), cfg, sample_alpha(rng, cfg.fixed_alpha))
                    for i in pick]
        transitions, stats = collect_batch(net, value, contexts, cfg, rng)
        try:
            stats.update(ppo_update(net, value, transitions, cfg, popt, vopt, rng))
        except (TrainingError, ValueError) as e:
            if out is not None:
                save_policy(net, out / "diagnostic.pt", value, {"iteration": it, "error": str(e), **stats})
            raise TrainingError(f"iteration {it}: {e}") from e
        report.mean_reward.append(stats["mean_reward"])
        report.mean_return.append(stats["mean_return"])
        if progress is not None:
            progress(it, stats)
        log.info("iteration %d %s", it, stats)
    evaluate(cfg.iterations)

    net.load_state_dict(best_state[0])
    value.load_state_dict(best_state[1])
    report.seconds = time.time() - t0
    if out is not None:
        save_policy(net, out / "best.pt", value, {"iteration": report.best_iteration,
                                                 "validation_cost": report.best_cost})
        write_curve(report, out / "curve.csv")
        (out / "report.json").write_text(json.dumps(report.to_dict(), indent=2))
    return net, value, report


def write_curve(report: TrainReport, path: str | Path) -> None:
    cv = dict(report.validation)
    n = max(len(report.mean_reward), max(cv, default=-1) + 1)
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["iteration", "mean_reward", "mean_return", "validation_cost"])
        for i in range(n):
            w.writerow([i, report.mean_reward[i] if i < len(report.mean_reward) else "",
                        report.mean_return[i] if i < len(report.mean_return) else "", cv.get(i, "")])


def _jsonable(x):
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    return x
