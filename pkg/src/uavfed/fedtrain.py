"""Federated policy-gradient training with Byzantine filtering and virtual auctions.

One epoch: every local node plays the real auction with the broadcast policy,
sends its batch gradient to the master (Byzantine nodes send a corrupted
copy), the master filters and averages the messages into an anchor gradient,
then runs a geometric number of variance-reduced steps on minibatches drawn
from virtual auctions against frozen copies of the previous policy.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .auction import AuctionResult, run_auction, sp_utilities, total_delay
from .config import ScenarioConfig
from .env import sample_demand_batch
from .estimator import EstimatorConfig, batch_gradient, surrogate_loss, weighted_batch_gradient
from .filtering import FilterConfig, FilterReport, dtbf, pairwise_distances
from .policy import (HIDDEN_DIM, ObsScales, PolicyParams, Trajectory, encode_demand,
                     forward, init_params, policy_log_prob, sample_action)

log = logging.getLogger(__name__)

FILTER_MODES = ("dtbf", "static", "none", "no-fed")
RATIO_DIRECTIONS = ("unbiased", "paper-literal")
METRICS_SCHEMA_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_range: tuple[int, int] = (120, 130)
    mini_batch: int = 64
    learning_rate: float = 9e-5
    optimizer_mode: str = "adam"
    byz_node_ids: tuple[int, ...] = ()
    byz_noise_scale: float = 10.0
    filter_mode: str = "dtbf"
    estimator: EstimatorConfig = field(default_factory=EstimatorConfig)
    filter: FilterConfig = field(default_factory=FilterConfig)
    ratio_direction: str = "unbiased"
    weight_clip: float = 10.0
    static_epsilon: float | None = None
    hidden_dim: int = HIDDEN_DIM
    seed: int = 0

    def __post_init__(self) -> None:
        lo, hi = self.batch_range
        if not 1 <= lo <= hi:
            raise ValueError("batch_range must satisfy 1 <= lo <= hi")
        if not 1 <= self.mini_batch <= lo:
            raise ValueError("mini_batch must lie in [1, batch_lo]")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.optimizer_mode not in ("adam", "plain"):
            raise ValueError(f"unknown optimizer_mode {self.optimizer_mode!r}")
        if self.filter_mode not in FILTER_MODES:
            raise ValueError(f"filter_mode must be one of {FILTER_MODES}")
        if self.ratio_direction not in RATIO_DIRECTIONS:
            raise ValueError(f"ratio_direction must be one of {RATIO_DIRECTIONS}")
        if self.byz_noise_scale < 0 or self.weight_clip <= 0:
            raise ValueError("byz_noise_scale must be >= 0 and weight_clip > 0")

    @property
    def discount(self) -> float:
        return self.estimator.discount


@dataclass
class NodeState:
    node_id: int
    kind: str  # "honest" | "byzantine"
    params: PolicyParams
    rng: np.random.Generator


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    loss: float
    total_reward_per_sp: tuple[float, ...]
    mean_pairwise_grad_distance: float
    threshold: float
    good_count: int
    inner_steps: int
    batch_size: int = 0
    epsilon: float = 0.0
    stage: int = 0
    good_set: tuple[int, ...] = ()

    @property
    def mean_total_reward(self) -> float:
        return float(np.mean(self.total_reward_per_sp))


@dataclass
class TrainResult:
    records: list[EpochRecord]
    params: PolicyParams
    messages: int = 0
    local_params: list[PolicyParams] = field(default_factory=list)


# ------------------------------------------------------------------ rollouts


@dataclass
class RolloutBatch:
    observations: np.ndarray  # (N, B, T, D)
    fractions: np.ndarray  # (N, B, T, K, 2, H)
    rewards: np.ndarray  # (N, B, T)
    results: list[AuctionResult] | None = None  # one per time step, batched over episodes

    def trajectories(self, n: int) -> list[Trajectory]:
        return [Trajectory(self.observations[n, i], self.fractions[n, i], self.rewards[n, i])
                for i in range(self.rewards.shape[1])]


def play_auctions(policies: Sequence[PolicyParams], scenario: ScenarioConfig, episodes: int,
                  env_rng: np.random.Generator, action_rngs: Sequence[np.random.Generator],
                  scales: ObsScales | None = None, log_results: bool = False) -> RolloutBatch:
    """Run ``episodes`` joint auctions over the horizon, all episodes in lockstep.

    Node ``n`` acts with ``policies[n]`` and samples from ``action_rngs[n]``;
    it observes the shared task demand plus only its own previous wins.
    """
    N, H, K, T = scenario.n_sps, scenario.n_hotspots, scenario.n_services, scenario.horizon
    if len(policies) != N or len(action_rngs) != N:
        raise ValueError(f"need {N} policies and rngs")
    scales = scales or ObsScales.from_config(scenario)
    se = scenario.channel.spectral_efficiency()
    E = episodes
    obs = np.empty((N, E, T, scenario.obs_dim))
    frac = np.empty((N, E, T, K, 2, H))
    rew = np.empty((N, E, T))
    prev = np.zeros((N, E, H, K))
    fmax = scenario.budgets_compute_hz
    bmax = scenario.budgets_bandwidth_hz
    results = [] if log_results else None
    for t in range(T):
        demand = sample_demand_batch(scenario, env_rng, E)
        F = np.empty((E, N, H, K))
        Bw = np.empty((E, N, H, K))
        for n in range(N):
            o = encode_demand(demand, prev[n], t, scales)
            x = sample_action(forward(policies[n], o), action_rngs[n], H)
            obs[n, :, t] = o
            frac[n, :, t] = x
            F[:, n] = np.swapaxes(x[:, :, 0, :], 1, 2) * fmax[n]
            Bw[:, n] = np.swapaxes(x[:, :, 1, :], 1, 2) * bmax[n]
        delay = total_delay(F, Bw, demand.required_cycles[:, None], demand.total_bits[:, None],
                            spectral_eff=se)
        result = run_auction(delay, contested=demand.required_cycles > 0)
        rew[:, :, t] = sp_utilities(result, scenario.utility).T
        prev = np.swapaxes(result.win, 0, 1).astype(float)
        if log_results:
            results.append(result)
    return RolloutBatch(obs, frac, rew, results)


def local_rollout(nodes: Sequence[NodeState], scenario: ScenarioConfig, batch_size: int,
                  env_rng: np.random.Generator, **kw) -> RolloutBatch:
    return play_auctions([nd.params for nd in nodes], scenario, batch_size, env_rng,
                         [nd.rng for nd in nodes], **kw)


def virtual_rollout(master: PolicyParams, frozen: PolicyParams, scenario: ScenarioConfig,
                    mini_batch: int, env_rng: np.random.Generator,
                    rngs: Sequence[np.random.Generator], **kw) -> list[Trajectory]:
    """Master (node 0) against ``N-1`` frozen copies; only the master's trajectories are kept."""
    N = scenario.n_sps
    if N < 2:
        raise ValueError("virtual auctions need N >= 2")
    policies = [master] + [frozen] * (N - 1)
    batch = play_auctions(policies, scenario, mini_batch, env_rng, rngs, **kw)
    return batch.trajectories(0)


# ------------------------------------------------------------ master pieces


def local_gradient(node: NodeState, trajs: Sequence[Trajectory], cfg: TrainConfig,
                   noise_rng: np.random.Generator | None = None) -> np.ndarray:
    """The message a node sends: its batch gradient, corrupted if Byzantine."""
    g = batch_gradient(trajs, node.params, cfg.estimator)
    if node.kind == "byzantine":
        if noise_rng is None:
            raise ValueError("byzantine node needs a noise rng")
        return byz_corrupt(g, cfg.byz_noise_scale, noise_rng)
    return g


def byz_corrupt(grad: np.ndarray, scale: float, rng: np.random.Generator) -> np.ndarray:
    """Add isotropic Gaussian noise with expected norm about ``scale * |grad|``."""
    if scale < 0:
        raise ValueError("scale must be >= 0")
    g = np.asarray(grad, dtype=float)
    if scale == 0:
        return g.copy()
    std = scale * np.linalg.norm(g) / np.sqrt(g.size)
    return g + rng.normal(0.0, std, size=g.shape)


def aggregate(good_grads: Sequence[np.ndarray]) -> np.ndarray:
    if len(good_grads) == 0:
        raise ValueError("no gradients to aggregate")
    return np.mean(np.asarray(good_grads, dtype=float), axis=0)


def sample_inner_steps(batch_size: int, mini_batch: int, rng: np.random.Generator) -> int:
    """Geometric on {1, 2, ...} with success probability ``B / (B + b)``."""
    if batch_size < 1 or mini_batch < 0:
        raise ValueError("batch sizes must be positive")
    return int(rng.geometric(batch_size / (batch_size + mini_batch)))


def log_importance_ratio(traj: Trajectory, num: PolicyParams, den: PolicyParams) -> float:
    # transition probabilities cancel; only the action likelihoods remain
    lp_num = policy_log_prob(num, traj.observations, traj.fractions)
    lp_den = policy_log_prob(den, traj.observations, traj.fractions)
    return float(np.sum(lp_num - lp_den))


def importance_weight(traj: Trajectory, theta_m: PolicyParams, theta_re: PolicyParams,
                      direction: str = "unbiased", w_max: float = 10.0,
                      log_ratio: float | None = None) -> float:
    """Trajectory likelihood ratio, clipped to ``[0, w_max]``.

    ``unbiased`` returns p(tau | snapshot) / p(tau | current), which makes the
    minibatch correction an unbiased estimate of the snapshot gradient when
    tau is drawn from the current policy; ``paper-literal`` returns the
    inverse. NaN ratios clip to ``w_max``.
    """
    if log_ratio is None:
        if direction == "unbiased":
            log_ratio = log_importance_ratio(traj, theta_re, theta_m)
        elif direction == "paper-literal":
            log_ratio = log_importance_ratio(traj, theta_m, theta_re)
        else:
            raise ValueError(f"unknown ratio direction {direction!r}")
    if np.isnan(log_ratio) or log_ratio >= np.log(w_max):
        return float(w_max)
    return float(np.exp(log_ratio))


def svrpg_step(theta_m: PolicyParams, theta_re: PolicyParams, mu: np.ndarray,
               trajs: Sequence[Trajectory], cfg: TrainConfig) -> np.ndarray:
    """Variance-reduced master gradient: minibatch correction around the anchor ``mu``."""
    b = len(trajs)
    if b == 0:
        raise ValueError("empty minibatch")
    w = np.array([importance_weight(tr, theta_m, theta_re, cfg.ratio_direction, cfg.weight_clip)
                  for tr in trajs])
    g_cur = weighted_batch_gradient(trajs, theta_m, cfg.estimator, np.full(b, 1.0 / b))
    g_old = weighted_batch_gradient(trajs, theta_re, cfg.estimator, w / b)
    return g_cur - g_old + np.asarray(mu, dtype=float)


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, dim: int) -> "AdamState":
        return cls(np.zeros(dim), np.zeros(dim), 0)


ADAM_BETA1, ADAM_BETA2, ADAM_EPS = 0.9, 0.999, 1e-8


def update(theta: PolicyParams, v: np.ndarray, cfg: TrainConfig,
           state: AdamState | None = None) -> tuple[PolicyParams, AdamState | None]:
    """Ascent step along ``v``: plain ``theta + lr*v`` or Adam-scaled."""
    v = np.asarray(v, dtype=float)
    if v.shape != theta.flat.shape:
        raise ValueError("update direction does not match parameter size")
    if cfg.optimizer_mode == "plain":
        new = theta.flat + cfg.learning_rate * v
    else:
        state = state or AdamState.zeros(v.size)
        t = state.t + 1
        m = ADAM_BETA1 * state.m + (1 - ADAM_BETA1) * v
        s = ADAM_BETA2 * state.v + (1 - ADAM_BETA2) * v * v
        m_hat = m / (1 - ADAM_BETA1 ** t)
        s_hat = s / (1 - ADAM_BETA2 ** t)
        new = theta.flat + cfg.learning_rate * m_hat / (np.sqrt(s_hat) + ADAM_EPS)
        state = AdamState(m, s, t)
    if not np.all(np.isfinite(new)):
        raise FloatingPointError("parameter update produced non-finite values")
    return theta.with_flat(new), state


# ------------------------------------------------------------------ training


@dataclass
class _Learner:
    """Parameters plus optimiser state of one SVRPG learner (the master, or a node in no-fed mode)."""

    params: PolicyParams
    adam: AdamState | None = None
    mu_prev: np.ndarray | None = None


class _Streams:
    def __init__(self, seed: int, n_sps: int):
        ss = np.random.SeedSequence(seed)
        kids = ss.spawn(8)
        self.init = np.random.default_rng(kids[0])
        self.env = np.random.default_rng(kids[1])
        self.nodes = [np.random.default_rng(s) for s in kids[2].spawn(n_sps)]
        self.batch = np.random.default_rng(kids[3])
        self.inner = np.random.default_rng(kids[4])
        self.noise = np.random.default_rng(kids[5])
        self.virtual_env = np.random.default_rng(kids[6])
        self.virtual = [np.random.default_rng(s) for s in kids[7].spawn(n_sps)]


def _inner_loop(learner: _Learner, snapshot: PolicyParams, mu: np.ndarray, B: int,
                scenario: ScenarioConfig, cfg: TrainConfig, streams: _Streams,
                scales: ObsScales) -> int:
    M = sample_inner_steps(B, cfg.mini_batch, streams.inner)
    theta = learner.params
    for _ in range(M):
        trajs = virtual_rollout(theta, snapshot, scenario, cfg.mini_batch, streams.virtual_env,
                                streams.virtual, scales=scales)
        v = svrpg_step(theta, snapshot, mu, trajs, cfg)
        theta, learner.adam = update(theta, v, cfg, learner.adam)
    learner.params = theta
    return M


def train(scenario: ScenarioConfig, cfg: TrainConfig, on_epoch=None, on_params=None) -> TrainResult:
    """Run every epoch; ``on_epoch(record)`` and ``on_params(epoch, params)`` observe progress."""
    N = scenario.n_sps
    if any(not 0 <= i < N for i in cfg.byz_node_ids):
        raise ValueError(f"byzantine ids must lie in [0, {N})")
    streams = _Streams(cfg.seed, N)
    scales = ObsScales.from_config(scenario)
    theta0 = init_params(scenario.obs_dim, scenario.action_dim, streams.init, cfg.hidden_dim)
    nodes = [NodeState(n, "byzantine" if n in cfg.byz_node_ids else "honest", theta0,
                       streams.nodes[n]) for n in range(N)]
    nofed = cfg.filter_mode == "no-fed"
    learners = [_Learner(theta0) for _ in range(N if nofed else 1)]
    records: list[EpochRecord] = []
    messages = 0
    static_eps = cfg.static_epsilon

    for c in range(1, cfg.epochs + 1):
        try:
            # broadcast: every local starts the epoch from its learner's parameters
            snapshots = [lr.params for lr in learners]
            for nd in nodes:
                nd.params = snapshots[nd.node_id if nofed else 0]
            B = int(streams.batch.integers(cfg.batch_range[0], cfg.batch_range[1] + 1))
            batch = local_rollout(nodes, scenario, B, streams.env, scales=scales)
            trajs = [batch.trajectories(n) for n in range(N)]
            loss = float(np.mean([surrogate_loss(trajs[n], nodes[n].params, cfg.estimator)
                                  for n in range(N)]))
            totals = tuple(float(x) for x in batch.rewards.sum(axis=2).mean(axis=1))

            if nofed:
                grads = [batch_gradient(trajs[n], nodes[n].params, cfg.estimator)
                         for n in range(N)]
                steps = [_inner_loop(learners[n], snapshots[n], grads[n], B, scenario, cfg,
                                     streams, scales) for n in range(N)]
                record = EpochRecord(c, loss, totals, float(pairwise_distances(grads).mean()),
                                     0.0, N, int(np.mean(steps)), B, 0.0, 0,
                                     tuple(range(N)))
            else:
                grads = [local_gradient(nodes[n], trajs[n], cfg, streams.noise)
                         for n in range(N)]
                messages += N
                report = _select(grads, B, cfg, static_eps)
                if cfg.filter_mode == "static" and static_eps is None:
                    static_eps = report.epsilon
                learner = learners[0]
                if report.good_set:
                    mu = aggregate([grads[i] for i in report.good_set])
                else:
                    mu = learner.mu_prev if learner.mu_prev is not None else np.zeros_like(grads[0])
                    log.warning("epoch %d: empty good set, reusing previous anchor", c)
                learner.mu_prev = mu
                M = _inner_loop(learner, snapshots[0], mu, B, scenario, cfg, streams, scales)
                record = EpochRecord(c, loss, totals, float(pairwise_distances(grads).mean()),
                                     report.threshold_used, len(report.good_set), M, B,
                                     report.epsilon, report.stage, report.good_set)
        except Exception as exc:
            raise RuntimeError(f"training failed at epoch {c}: {exc}") from exc
        records.append(record)
        if on_epoch is not None:
            on_epoch(record)
        if on_params is not None:
            on_params(c, learners[0].params)

    final = [lr.params for lr in learners]
    return TrainResult(records, final[0], messages, final)


def _select(grads, B: int, cfg: TrainConfig, static_eps: float | None) -> FilterReport:
    N = len(grads)
    if cfg.filter_mode == "none":
        return FilterReport(tuple(range(N)), 0.0, 0.0, None, 0, tuple(range(N)))
    if cfg.filter_mode == "static":
        return dtbf(grads, B, cfg.filter, epsilon=static_eps)
    return dtbf(grads, B, cfg.filter)


# --------------------------------------------------------------- validation


def evaluate_policy(params: PolicyParams, scenario: ScenarioConfig, episodes: int,
                    seed: int = 0, log_results: bool = False) -> tuple[np.ndarray, RolloutBatch | None]:
    """Every SP bids with the frozen policy; returns per-episode negative utilities ``(E, N)``."""
    N = scenario.n_sps
    if episodes == 0:
        return np.zeros((0, N)), None
    ss = np.random.SeedSequence(seed)
    env_seed, act_seed = ss.spawn(2)
    batch = play_auctions([params] * N, scenario, episodes, np.random.default_rng(env_seed),
                          [np.random.default_rng(s) for s in act_seed.spawn(N)],
                          log_results=log_results)
    return -batch.rewards.sum(axis=2).T, batch


# ------------------------------------------------------------------- output


def metrics_header(n_sps: int) -> list[str]:
    return (["epoch", "batch_size", "inner_steps", "loss", "mean_total_reward"]
            + [f"reward_sp{n}" for n in range(n_sps)]
            + ["mean_pairwise_grad_distance", "epsilon", "threshold", "good_count", "stage",
               "good_set"])


def metrics_row(rec: EpochRecord) -> list:
    return ([rec.epoch, rec.batch_size, rec.inner_steps, repr(rec.loss),
             repr(rec.mean_total_reward)]
            + [repr(x) for x in rec.total_reward_per_sp]
            + [repr(rec.mean_pairwise_grad_distance), repr(rec.epsilon), repr(rec.threshold),
               rec.good_count, rec.stage, ";".join(map(str, rec.good_set))])


def write_metrics(path, records: Sequence[EpochRecord], n_sps: int) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(metrics_header(n_sps))
        for rec in records:
            w.writerow(metrics_row(rec))


def with_seed(cfg: TrainConfig, seed: int) -> TrainConfig:
    return replace(cfg, seed=seed)
