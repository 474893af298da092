"""GPOMDP gradient estimates with per-trajectory advantage normalisation.

Gradients returned here point uphill on expected return (ascent
convention). The loss metric is the opposite-signed surrogate, so it is the
quantity a minimiser would see.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .policy import PolicyParams, Trajectory, policy_log_prob, weighted_score


@dataclass(frozen=True)
class EstimatorConfig:
    discount: float = 0.9
    advantage_eps: float = 1e-8

    def __post_init__(self) -> None:
        if not 0.0 < self.discount <= 1.0:
            raise ValueError("discount must lie in (0, 1]")
        if self.advantage_eps <= 0:
            raise ValueError("advantage_eps must be > 0")


def returns(rewards, gamma: float) -> np.ndarray:
    """Discounted reward-to-go, inclusive of the final step."""
    r = np.asarray(rewards, dtype=float)
    out = np.empty_like(r)
    acc = 0.0
    for t in range(len(r) - 1, -1, -1):
        acc = r[t] + gamma * acc
        out[t] = acc
    return out


def advantages(rets, eps: float = 1e-8) -> np.ndarray:
    """Standardise returns over the trajectory (population std, floored at ``eps``)."""
    r = np.asarray(rets, dtype=float)
    centred = r - r.mean()
    std = r.std()
    if std <= eps:
        return np.zeros_like(r)
    return centred / std


def trajectory_advantages(traj: Trajectory, cfg: EstimatorConfig) -> np.ndarray:
    return advantages(returns(traj.rewards, cfg.discount), cfg.advantage_eps)


def _stack(trajs: Sequence[Trajectory], cfg: EstimatorConfig, weights=None):
    obs = np.concatenate([t.observations for t in trajs])
    fr = np.concatenate([t.fractions for t in trajs])
    w = np.ones(len(trajs)) if weights is None else np.asarray(weights, dtype=float)
    adv = np.concatenate([wi * trajectory_advantages(t, cfg) for wi, t in zip(w, trajs)])
    return obs, fr, adv


def trajectory_gradient(traj: Trajectory, params: PolicyParams, cfg: EstimatorConfig) -> np.ndarray:
    """``sum_t A(t) * grad log pi(a_t | o_t)``."""
    return weighted_score(params, traj.observations, traj.fractions,
                          trajectory_advantages(traj, cfg))


def weighted_batch_gradient(trajs: Sequence[Trajectory], params: PolicyParams,
                            cfg: EstimatorConfig, weights) -> np.ndarray:
    """``sum_i weights[i] * g(tau_i)`` in a single backward pass."""
    if not trajs:
        raise ValueError("empty trajectory batch")
    obs, fr, adv = _stack(trajs, cfg, weights)
    return weighted_score(params, obs, fr, adv)


def batch_gradient(trajs: Sequence[Trajectory], params: PolicyParams,
                   cfg: EstimatorConfig) -> np.ndarray:
    if not trajs:
        raise ValueError("empty trajectory batch")
    return weighted_batch_gradient(trajs, params, cfg, np.full(len(trajs), 1.0 / len(trajs)))


def surrogate_loss(trajs: Sequence[Trajectory], params: PolicyParams, cfg: EstimatorConfig) -> float:
    """``-(1/B) sum_tau sum_t A(t) log pi(a_t | o_t)``, the reported training loss."""
    if not trajs:
        raise ValueError("empty trajectory batch")
    obs, fr, adv = _stack(trajs, cfg)
    lp = policy_log_prob(params, obs, fr)
    return float(-(adv * lp).sum() / len(trajs))
