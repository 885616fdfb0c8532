import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from tndp.citygen import GenConfig, generate_dataset
from tndp.train import (
    TrainConfig, TrainingError, compute_returns_and_advantages, ppo_clip_objective, sample_alpha, split_dataset,
    train, value_loss, write_curve,
)
from gradcheck import check_module, policy_instance, value_instance


def test_defaults_match_table():
    c = TrainConfig()
    assert (c.iterations, c.batch_size, c.horizon, c.epochs_per_batch) == (200, 256, 120, 1)
    assert (c.gamma, c.clip_eps, c.beta) == (0.95, 0.2, 5.0)
    assert (c.policy_lr, c.policy_weight_decay, c.value_lr, c.value_weight_decay) == (0.0016, 8.4e-4, 5e-4, 0.01)
    assert (c.n_routes, c.min_stops, c.max_stops) == (10, 2, 12)
    assert c.adam_betas == (0.9, 0.999) and c.minibatch_size == 1024


@pytest.mark.parametrize("bad", [dict(batch_size=0), dict(horizon=0), dict(gamma=0.0), dict(clip_eps=0.0),
                                 dict(iterations=-1)])
def test_config_rejects_bad_values(bad):
    with pytest.raises(ValueError):
        TrainConfig(**bad)


def test_config_from_dict_round_trip():
    from dataclasses import asdict
    c = TrainConfig(iterations=3, fixed_alpha=1.0)
    assert TrainConfig.from_dict(asdict(c)) == c


def test_alpha_sampler_masses():
    rng = np.random.default_rng(0)
    a = np.array([sample_alpha(rng) for _ in range(30_000)])
    assert abs((a == 0).mean() - 1 / 3) < 0.01
    assert abs((a == 1).mean() - 1 / 3) < 0.01
    inner = a[(a != 0) & (a != 1)]
    assert np.all((inner > 0) & (inner < 1))
    assert abs(len(inner) / len(a) - 1 / 3) < 0.01


def test_alpha_override():
    rng = np.random.default_rng(1)
    assert {sample_alpha(rng, 1.0) for _ in range(50)} == {1.0}


def test_returns_trivial_cases():
    G, A = compute_returns_and_advantages([0, 0, 0], [0, 0, 0], [False] * 3, 0.0, 0.95)
    assert np.all(A == 0)
    G, A = compute_returns_and_advantages([1.0], [0.0], [True], 0.0, 0.95)
    assert A[0] == 1.0


def _direct_returns(r, v, d, boot, g):
    out = []
    for t in range(len(r)):
        total, disc, k = 0.0, 1.0, t
        while True:
            total += disc * r[k]
            disc *= g
            if d[k]:
                break
            k += 1
            if k == len(r):
                total += disc * boot
                break
        out.append(total)
    return np.array(out)


@given(st.integers(0, 10_000))
@settings(max_examples=50, deadline=None)
def test_returns_match_direct_summation(seed):
    rng = np.random.default_rng(seed)
    T = int(rng.integers(1, 30))
    r, v = rng.normal(size=T), rng.normal(size=T)
    d = rng.random(T) < 0.2
    boot, g = float(rng.normal()), float(rng.uniform(0.5, 1.0))
    G, A = compute_returns_and_advantages(r, v, d, boot, g)
    ref = _direct_returns(r, v, d, boot, g)
    np.testing.assert_allclose(G, ref, atol=1e-10)
    np.testing.assert_allclose(A, ref - v, atol=1e-10)


@given(st.integers(0, 10_000))
@settings(max_examples=30, deadline=None)
def test_segmentation_invariance_with_exact_values(seed):
    # deterministic chain of length L ending in a terminal; V is the true return
    rng = np.random.default_rng(seed)
    L, g = int(rng.integers(2, 25)), 0.95
    r = rng.normal(size=L)
    V = np.zeros(L + 1)
    for t in range(L - 1, -1, -1):
        V[t] = r[t] + g * V[t + 1]
    done = np.zeros(L, bool)
    done[-1] = True
    whole, _ = compute_returns_and_advantages(r, V[:L], done, 0.0, g)
    cut = int(rng.integers(1, L))
    a, _ = compute_returns_and_advantages(r[:cut], V[:cut], done[:cut], V[cut], g)
    b, _ = compute_returns_and_advantages(r[cut:], V[cut:L], done[cut:], 0.0, g)
    np.testing.assert_allclose(np.concatenate([a, b]), whole, atol=1e-10)
    np.testing.assert_allclose(whole, V[:L], atol=1e-10)


@pytest.mark.parametrize("ratio, adv, eps, want", [(1.0, 1.0, 0.2, 1.0), (2.0, 1.0, 0.2, 1.2), (0.5, -1.0, 0.2, -0.8)])
def test_clip_objective_cases(ratio, adv, eps, want):
    lp_old = torch.tensor([0.3], dtype=torch.float64)
    lp_new = lp_old + math.log(ratio)
    got = ppo_clip_objective(lp_new, lp_old, torch.tensor([adv], dtype=torch.float64), eps)
    assert got.item() == pytest.approx(want, abs=1e-12)


def test_clip_objective_rejects_non_finite():
    with pytest.raises(TrainingError):
        ppo_clip_objective(torch.tensor([1000.0]), torch.tensor([0.0]), torch.tensor([1.0]), 0.2)


def test_clip_gradient_equals_vanilla_pg_for_huge_eps():
    torch.manual_seed(0)
    theta = torch.randn(5, dtype=torch.float64, requires_grad=True)
    adv = torch.randn(5, dtype=torch.float64)
    logp_new = torch.log_softmax(theta, 0)
    obj = ppo_clip_objective(logp_new, logp_new.detach(), adv, 1e9)
    (g_clip,) = torch.autograd.grad(obj, theta)
    (g_pg,) = torch.autograd.grad((torch.log_softmax(theta, 0) * adv).mean(), theta)
    torch.testing.assert_close(g_clip, g_pg, rtol=1e-12, atol=1e-14)


def test_value_loss_cases():
    t = torch.tensor([0.0, 2.0])
    assert value_loss(t, t).item() == 0.0
    assert value_loss(torch.tensor([1.0, 1.0]), t).item() == 1.0


@pytest.mark.parametrize("seed", range(3))
@pytest.mark.parametrize("extension", [True, False])
def test_policy_gradients_match_finite_differences(seed, extension):
    net, fn, rng = policy_instance(seed, extension)
    assert check_module(net, fn, rng) <= 1e-3


@pytest.mark.parametrize("seed", range(3))
def test_value_gradients_match_finite_differences(seed):
    value, fn, rng = value_instance(seed)
    assert check_module(value, fn, rng) <= 1e-3


def test_split_is_disjoint_and_complete():
    items = list(range(50))
    tr, va = split_dataset(items, 0.1, np.random.default_rng(0))
    assert len(va) == 5 and sorted(tr + va) == items


@pytest.fixture(scope="module")
def tiny_cities():
    return [c for c, _ in generate_dataset(12, GenConfig(n=8, seed=5))]


def _tiny_cfg(**kw):
    base = dict(iterations=2, batch_size=4, horizon=8, n_routes=2, max_stops=4, minibatch_size=16, chunk_size=8,
                val_fraction=0.25, eval_every=1, seed=3)
    base.update(kw)
    return TrainConfig(**base)


def test_zero_iterations_returns_initial_params(tiny_cities):
    net, value, report = train(tiny_cities, _tiny_cfg(iterations=0))
    assert report.validation == [] and report.mean_reward == [] and report.best_iteration is None


def test_training_is_bit_reproducible(tiny_cities, tmp_path):
    a, va, ra = train(tiny_cities, _tiny_cfg(), out_dir=tmp_path / "a")
    b, vb, rb = train(tiny_cities, _tiny_cfg(), out_dir=tmp_path / "b")
    assert ra.validation == rb.validation and ra.mean_reward == rb.mean_reward
    for (k, x), (_, y) in zip(a.state_dict().items(), b.state_dict().items()):
        assert torch.equal(x, y), k
    for x in a.parameters():
        assert torch.isfinite(x).all()
    files = {p.name for p in (tmp_path / "a").iterdir()}
    assert {"best.pt", "curve.csv", "report.json", "config.json", "ckpt_0000.pt"} <= files


def test_returned_params_are_best_checkpoint(tiny_cities, tmp_path):
    from tndp.policy import load_policy
    net, _, report = train(tiny_cities, _tiny_cfg(iterations=3), out_dir=tmp_path)
    assert report.best_cost == min(c for _, c in report.validation)
    saved, _, meta = load_policy(tmp_path / f"ckpt_{report.best_iteration:04d}.pt")
    for x, y in zip(net.state_dict().values(), saved.state_dict().values()):
        assert torch.equal(x, y)


def test_optimizer_state_round_trips(tmp_path):
    p = torch.nn.Parameter(torch.randn(3))
    opt = torch.optim.AdamW([p], lr=0.01, weight_decay=0.01)
    p.sum().backward()
    opt.step()
    torch.save(opt.state_dict(), tmp_path / "o.pt")
    opt2 = torch.optim.AdamW([p], lr=0.01, weight_decay=0.01)
    opt2.load_state_dict(torch.load(tmp_path / "o.pt"))
    assert torch.equal(opt2.state_dict()["state"][0]["exp_avg"], opt.state_dict()["state"][0]["exp_avg"])


def test_curve_csv_columns(tmp_path):
    from tndp.train import TrainReport
    rep = TrainReport([0.1, 0.2], [1.0, 2.0], [(0, 3.0), (2, 1.0)], 2, 1.0)
    write_curve(rep, tmp_path / "c.csv")
    lines = (tmp_path / "c.csv").read_text().splitlines()
    assert lines[0] == "iteration,mean_reward,mean_return,validation_cost"
    assert len(lines) == 4 and lines[3].endswith(",1.0")


@pytest.mark.slow
def test_tiny_run_improves_validation_cost():
    cities = [c for c, _ in generate_dataset(32, GenConfig(n=20, seed=11))]
    cfg = TrainConfig(iterations=20, batch_size=16, horizon=60, eval_every=10, seed=0, minibatch_size=256)
    _, _, report = train(cities, cfg)
    assert report.best_cost < report.validation[0][1]
