"""Acceptance criteria, each at its stated tolerance and time budget.

Run with ``pytest tests/test_acceptance.py -v``; the terminal summary prints
one PASS/FAIL line per criterion with the measured numbers.
"""
import time

import numpy as np
import pytest

from uavfed import cli, game_oracle as go, presets
from uavfed.env import ChannelParams, avg_rate_bps, los_probability, path_loss_db
from uavfed.estimator import EstimatorConfig, trajectory_advantages, trajectory_gradient
from uavfed.fedtrain import sample_inner_steps, train
from uavfed.policy import Trajectory, forward, grad_log_prob, init_params, policy_log_prob, \
    sample_action

SEEDS = range(5)


def sig(x, digits=6):
    return float(f"{x:.{digits}g}")


def central_fd(f, flat, step=1e-5):
    out = np.empty_like(flat)
    for i in range(flat.size):
        e = np.zeros_like(flat)
        e[i] = step
        out[i] = (f(flat + e) - f(flat - e)) / (2 * step)
    return out


def rel_err(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)


def last10_vs_first10(records, attr="mean_total_reward", magnitude=False):
    x = np.array([getattr(r, attr) for r in records])
    if magnitude:
        x = np.abs(x)
    return x[:10].mean(), x[-10:].mean()


def test_c01_authenticity(criterion):
    t0 = time.perf_counter()
    game = go.random_game(2, 1, 1, 10, np.random.default_rng(0), coupled=False)
    rep = go.check_authenticity(game)
    dt = time.perf_counter() - t0
    d = rep.details
    criterion(f"grid={game.sizes} checked={rep.checked} profitable={d['profitable_false_bids']} "
              f"violations={d['case1_violations']}/{d['case2_violations']}/{d['case3_violations']} "
              f"{dt:.1f}s")
    assert game.sizes == (100, 100) and len(go.INFLATION_FACTORS) == 10
    assert d["profitable_false_bids"] == 0
    assert rep.passed, rep.counterexample
    assert dt < 10


def test_c02_potential_identity(criterion):
    t0 = time.perf_counter()
    game = go.random_game(3, 2, 2, 3, np.random.default_rng(1))
    rep = go.check_potential_identity(game, 10_000, np.random.default_rng(2), tol=1e-9)
    dt = time.perf_counter() - t0
    d = rep.details
    criterion(f"samples={rep.checked} max_rel={d['max_rel_residual']:.3g} "
              f"(non-displacing {d['max_rel_residual_non_displacing']:.3g}, "
              f"displacing n={d['displacing']}) {dt:.1f}s")
    assert rep.checked >= 10_000
    assert d["max_rel_residual"] <= 1e-9
    assert dt < 30


def test_c03_order_and_stagewise(criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    single = go.random_game(2, 1, 1, 10, rng, coupled=False)
    stages = [go.random_game(2, 1, 1, 5, rng) for _ in range(3)]
    order = go.check_order_equivalence(single)
    stage = go.check_stagewise_optimality(stages)
    C = float(np.max(single.utility.unit_cost_w))
    order_neg = go.check_order_equivalence(single, bonus_per_delay=2 * C)
    ne = [go.best_response_dynamics(g, [0, 0]).profile for g in stages]
    for n in range(2):  # the first SP with a strictly worse action in stage 2
        try:
            ne[1] = go.dominated_replacement(stages[1], ne[1], n)
            break
        except go.PreconditionError:
            continue
    stage_neg = go.check_stagewise_optimality(stages, ne)
    dt = time.perf_counter() - t0
    criterion(f"order={order.passed} stagewise={stage.passed} controls failed="
              f"{not order_neg.passed}/{not stage_neg.passed} {dt:.1f}s")
    assert order.passed and stage.passed
    assert not order_neg.passed and not stage_neg.passed
    assert dt < 60


def test_c04_best_response(criterion):
    rng = np.random.default_rng(4)
    single = [go.random_game(2, 1, 1, 10, rng, coupled=False) for _ in range(5)]
    multi = [go.random_game(3, 2, 2, 3, rng) for _ in range(5)]
    r1 = go.brd_report(single, 100, rng)
    r2 = go.brd_report(multi, 100, rng)
    criterion(f"single-cell runs={r1.checked} {r1.details}; "
              f"multi-cell runs={r2.checked} {r2.details}")
    assert r1.passed
    assert r2.passed, r2.counterexample


def test_c05_gradients(criterion):
    rng = np.random.default_rng(5)
    cfg = EstimatorConfig()
    worst_lp = worst_traj = 0.0
    for _ in range(100):
        p = init_params(9, 4, rng, 6)
        p = p.with_flat(p.flat * rng.uniform(0.5, 3.0))
        obs = rng.normal(size=9)
        x = sample_action(forward(p, obs), rng, 2)
        fd = central_fd(lambda f: policy_log_prob(p.with_flat(f), obs, x), p.flat)
        worst_lp = max(worst_lp, rel_err(grad_log_prob(p, obs, x), fd))

        obs_t = rng.normal(size=(4, 9))
        tr = Trajectory(obs_t, sample_action(forward(p, obs_t), rng, 2),
                        rng.normal(scale=100.0, size=4))
        A = trajectory_advantages(tr, cfg)
        fd = central_fd(lambda f: float(A @ policy_log_prob(p.with_flat(f), tr.observations,
                                                            tr.fractions)), p.flat)
        worst_traj = max(worst_traj, rel_err(trajectory_gradient(tr, p, cfg), fd))
    criterion(f"max rel err grad_log_prob={worst_lp:.2e} trajectory_gradient={worst_traj:.2e}")
    assert worst_lp < 1e-4 and worst_traj < 1e-4


@pytest.fixture(scope="module")
def byzantine_runs():
    """desk-5sp-2byz with and without the filter, five seeds each."""
    runs = {}
    for mode in ("dtbf", "none"):
        t0 = time.perf_counter()
        runs[mode] = [train(*presets.build(presets.resolve(
            "desk-5sp-2byz", overrides={"seed": s, "filter_mode": mode}))) for s in SEEDS]
        runs[mode + "_seconds"] = time.perf_counter() - t0
    return runs


def test_c06_dtbf_identification(byzantine_runs, criterion):
    scenario, cfg = presets.build(presets.resolve("desk-5sp-2byz"))
    honest = tuple(n for n in range(scenario.n_sps) if n not in cfg.byz_node_ids)
    exact = [sum(r.good_set == honest for r in res.records) for res in byzantine_runs["dtbf"]]
    epochs = [len(res.records) for res in byzantine_runs["dtbf"]]
    dt = byzantine_runs["dtbf_seconds"] / len(exact)
    criterion(f"noise={cfg.byz_noise_scale} exact good set {sum(exact)}/{sum(epochs)} epochs "
              f"(per seed {exact}) {dt:.0f}s per run")
    assert cfg.byz_noise_scale >= 10 and len(cfg.byz_node_ids) == 2
    # rate over all epochs of all seeds
    assert sum(exact) >= 0.99 * sum(epochs)
    assert dt < 300


def test_c07_training_improvement(criterion):
    t0 = time.perf_counter()
    better = shrink = 0
    for s in SEEDS:
        scenario, cfg = presets.build(presets.resolve("desk", overrides={"seed": s}))
        assert (scenario.n_sps, scenario.n_hotspots, scenario.n_services, scenario.horizon,
                cfg.batch_range, cfg.mini_batch, cfg.epochs) == (3, 2, 2, 10, (16, 16), 8, 100)
        res = train(scenario, cfg)
        first, last = last10_vs_first10(res.records)
        better += last > first
        # mean per-epoch |loss|; the signed loss hovers around zero
        l0, l1 = last10_vs_first10(res.records, "loss", magnitude=True)
        shrink += l1 < l0
    dt = time.perf_counter() - t0
    criterion(f"reward improved in {better}/5 seeds, |loss| decreased in {shrink}/5 {dt:.0f}s")
    assert better >= 4 and shrink >= 4
    assert dt < 900


def test_c08_robustness_ordering(byzantine_runs, criterion):
    wins = 0
    pairs = []
    for a, b in zip(byzantine_runs["dtbf"], byzantine_runs["none"]):
        ra = last10_vs_first10(a.records)[1]
        rb = last10_vs_first10(b.records)[1]
        wins += ra > rb
        pairs.append(f"{ra:.3g}>{rb:.3g}" if ra > rb else f"{ra:.3g}<={rb:.3g}")
    criterion(f"dtbf beats none in {wins}/5 seeds: {' '.join(pairs)}")
    assert wins >= 4


def test_c09_channel_scalars(criterion):
    ch = ChannelParams()
    got = (los_probability(90.0, ch), path_loss_db(100.0, 1.0, ch) - ch.eta_los_db,
           avg_rate_bps(1e6, 80.51, ch))
    oracle = (0.9999999999999993797783626, 80.40636488363746, 11457842.975596378)
    criterion(" ".join(f"{g:.6g}" for g in got))
    assert [sig(g) for g in got] == [sig(o) for o in oracle]


def test_c10_geometric_inner_loop(criterion):
    rng = np.random.default_rng(10)
    mean = float(np.mean([sample_inner_steps(128, 64, rng) for _ in range(10 ** 5)]))
    criterion(f"mean={mean:.4f}")
    assert abs(mean - 1.5) <= 0.05 * 1.5


def test_c11_determinism(tmp_path, criterion):
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        assert cli.main(["train", "--preset", "desk", "--epochs", "10", "--out", str(d)]) == 0
    same = (a / "metrics.csv").read_bytes() == (b / "metrics.csv").read_bytes()
    criterion(f"metrics.csv byte-identical={same}")
    assert same
