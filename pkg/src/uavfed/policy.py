"""Dirichlet bidding policy: a three-layer MLP with hand-written backprop.

The network maps an observation to ``2*K*H`` Dirichlet concentrations, laid
out as ``K`` services x (compute, bandwidth) x ``H`` hotspots. Each length-H
block is a distribution over hotspots of that service's budget.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import digamma, expit, gammaln

from .auction import BidMatrix
from .env import DemandSummary, HotspotState

CONC_FLOOR = 1e-3
FRACTION_FLOOR = 1e-8
HIDDEN_DIM = 64

SNAPSHOT_MAGIC = b"UAVFPOL1"
SNAPSHOT_VERSION = 1


class NonFiniteError(ArithmeticError):
    pass


def _check_finite(x, what: str):
    if not np.all(np.isfinite(x)):
        raise NonFiniteError(f"non-finite values in {what}")
    return x


# ------------------------------------------------------------- observations


@dataclass(frozen=True)
class ObsScales:
    cycles: float
    bits: float
    users: float
    horizon: int

    @classmethod
    def from_config(cls, config) -> "ObsScales":
        cyc, bits = config.max_cell_demand()
        K = config.n_services
        return cls(cyc / K, bits / K, float(max(config.user_count_choices)), config.horizon)


def encode_demand(demand: DemandSummary, prev_wins, t: int, scales: ObsScales) -> np.ndarray:
    """Fixed-size features from (possibly batched) demand arrays.

    ``demand`` arrays carry shapes ``(..., H, K)`` / ``(..., H)``; the result
    has shape ``(..., 3HK + H + 1)``.
    """
    cyc = np.asarray(demand.required_cycles, dtype=float)
    bits = np.asarray(demand.total_bits, dtype=float)
    wins = np.asarray(prev_wins, dtype=float)
    if wins.shape != cyc.shape or bits.shape != cyc.shape:
        raise ValueError(f"prev_wins {wins.shape} does not match demand {cyc.shape}")
    lead = cyc.shape[:-2]
    users = np.asarray(demand.user_counts, dtype=float)
    time = np.full(lead + (1,), t / scales.horizon)
    return np.concatenate([
        (cyc / scales.cycles).reshape(lead + (-1,)),
        (bits / scales.bits).reshape(lead + (-1,)),
        wins.reshape(lead + (-1,)),
        users / scales.users,
        time,
    ], axis=-1)


def encode_observation(hotspots: list[HotspotState], prev_wins, t: int,
                       scales: ObsScales) -> np.ndarray:
    prev_wins = np.asarray(prev_wins)
    if prev_wins.ndim != 2 or prev_wins.shape[0] != len(hotspots):
        raise ValueError("prev_wins must be an H x K matrix matching the hotspot list")
    demand = DemandSummary.from_hotspots(hotspots, prev_wins.shape[1])
    return encode_demand(demand, prev_wins, t, scales)


# ------------------------------------------------------------- parameters


@dataclass(frozen=True)
class PolicyParams:
    """All weights in one flat float64 vector; layer views are slices of it."""

    flat: np.ndarray
    input_dim: int
    hidden_dim: int
    output_dim: int

    def __post_init__(self) -> None:
        if self.flat.shape != (param_count(self.input_dim, self.hidden_dim, self.output_dim),):
            raise ValueError("flat vector length does not match layer sizes")

    @property
    def layers(self):
        i, h, o = self.input_dim, self.hidden_dim, self.output_dim
        shapes = [(i, h), (h,), (h, h), (h,), (h, o), (o,)]
        out, pos = [], 0
        for s in shapes:
            size = int(np.prod(s))
            out.append(self.flat[pos:pos + size].reshape(s))
            pos += size
        return out

    def with_flat(self, flat: np.ndarray) -> "PolicyParams":
        return PolicyParams(np.asarray(flat, dtype=float), self.input_dim,
                            self.hidden_dim, self.output_dim)

    @property
    def size(self) -> int:
        return self.flat.size


def param_count(input_dim: int, hidden_dim: int, output_dim: int) -> int:
    return (input_dim * hidden_dim + hidden_dim + hidden_dim * hidden_dim + hidden_dim
            + hidden_dim * output_dim + output_dim)


def init_params(input_dim: int, output_dim: int, rng: np.random.Generator,
                hidden_dim: int = HIDDEN_DIM) -> PolicyParams:
    """Uniform(+-1/sqrt(fan_in)) for every weight and bias."""
    parts = []
    for fan_in, shape in [(input_dim, (input_dim, hidden_dim)), (input_dim, (hidden_dim,)),
                          (hidden_dim, (hidden_dim, hidden_dim)), (hidden_dim, (hidden_dim,)),
                          (hidden_dim, (hidden_dim, output_dim)), (hidden_dim, (output_dim,))]:
        bound = 1.0 / np.sqrt(fan_in)
        parts.append(rng.uniform(-bound, bound, size=shape).ravel())
    return PolicyParams(np.concatenate(parts), input_dim, hidden_dim, output_dim)


def save_params(path: str | Path, params: PolicyParams, seed: int | None = None) -> None:
    """Snapshot layout: magic, uint32 header length, JSON header, raw little-endian float64."""
    header = json.dumps({
        "version": SNAPSHOT_VERSION,
        "input_dim": params.input_dim,
        "hidden_dim": params.hidden_dim,
        "output_dim": params.output_dim,
        "count": params.size,
        "dtype": "<f8",
        "seed": seed,
    }, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(SNAPSHOT_MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        fh.write(params.flat.astype("<f8").tobytes())


def load_params(path: str | Path) -> tuple[PolicyParams, dict]:
    data = Path(path).read_bytes()
    if data[:8] != SNAPSHOT_MAGIC:
        raise ValueError(f"{path} is not a policy snapshot")
    (hlen,) = struct.unpack("<I", data[8:12])
    header = json.loads(data[12:12 + hlen])
    if header.get("version") != SNAPSHOT_VERSION:
        raise ValueError(f"snapshot version {header.get('version')} != {SNAPSHOT_VERSION}")
    flat = np.frombuffer(data[12 + hlen:], dtype="<f8").astype(float)
    if flat.size != header["count"]:
        raise ValueError("snapshot is truncated")
    return PolicyParams(flat, header["input_dim"], header["hidden_dim"],
                        header["output_dim"]), header


# ------------------------------------------------------------- forward pass


def _forward_cache(params: PolicyParams, obs):
    W1, b1, W2, b2, W3, b3 = params.layers
    x = np.asarray(obs, dtype=float)
    if x.shape[-1] != params.input_dim:
        raise ValueError(f"observation has {x.shape[-1]} features, policy expects {params.input_dim}")
    h1 = np.tanh(x @ W1 + b1)
    h2 = np.tanh(h1 @ W2 + b2)
    z3 = h2 @ W3 + b3
    conc = np.logaddexp(0.0, z3) + CONC_FLOOR
    _check_finite(conc, "policy output")
    return x, h1, h2, z3, conc


def forward(params: PolicyParams, obs) -> np.ndarray:
    """Dirichlet concentrations, strictly positive, shape ``(..., 2KH)``."""
    return _forward_cache(params, obs)[-1]


def _blocks(conc, n_hotspots: int) -> np.ndarray:
    c = np.asarray(conc, dtype=float)
    return c.reshape(c.shape[:-1] + (-1, 2, n_hotspots))


def sample_action(concentrations, rng: np.random.Generator, n_hotspots: int) -> np.ndarray:
    """Dirichlet draw per (service, resource) block via normalised gammas.

    Returns fractions of shape ``(..., K, 2, H)``, each block on the simplex.
    """
    alpha = _blocks(concentrations, n_hotspots)
    g = np.maximum(rng.standard_gamma(alpha), 1e-300)
    x = g / g.sum(axis=-1, keepdims=True)
    x = np.maximum(x, FRACTION_FLOOR)
    return x / x.sum(axis=-1, keepdims=True)


def to_bid(fractions, compute_max, bandwidth_max) -> BidMatrix:
    """Scale (K, 2, H) fractions by per-service budgets into an H x K bid."""
    fr = np.asarray(fractions, dtype=float)
    F = fr[:, 0, :].T * np.asarray(compute_max, dtype=float)
    B = fr[:, 1, :].T * np.asarray(bandwidth_max, dtype=float)
    return BidMatrix(F, B)


def log_prob(concentrations, fractions) -> np.ndarray | float:
    """Sum of Dirichlet log-densities over all (service, resource) blocks."""
    x = np.asarray(fractions, dtype=float)
    alpha = _blocks(concentrations, x.shape[-1])
    per_block = (gammaln(alpha.sum(axis=-1)) - gammaln(alpha).sum(axis=-1)
                 + ((alpha - 1.0) * np.log(x)).sum(axis=-1))
    lp = per_block.reshape(per_block.shape[:-2] + (-1,)).sum(axis=-1)
    _check_finite(lp, "log-density")
    return float(lp) if np.ndim(lp) == 0 else lp


def policy_log_prob(params: PolicyParams, obs, fractions):
    return log_prob(forward(params, obs), fractions)


def weighted_score(params: PolicyParams, obs, fractions, weights) -> np.ndarray:
    """``sum_i weights[i] * grad_theta log pi(fractions[i] | obs[i])`` as a flat vector.

    ``obs`` is ``(M, D)``, ``fractions`` ``(M, K, 2, H)`` and ``weights`` ``(M,)``.
    """
    x, h1, h2, z3, conc = _forward_cache(params, obs)
    fr = np.asarray(fractions, dtype=float)
    H = fr.shape[-1]
    alpha = _blocks(conc, H)
    dalpha = digamma(alpha.sum(axis=-1, keepdims=True)) - digamma(alpha) + np.log(fr)
    w = np.asarray(weights, dtype=float)
    g3 = dalpha.reshape(conc.shape) * expit(z3) * w[:, None]
    W1, b1, W2, b2, W3, b3 = params.layers
    g2 = (g3 @ W3.T) * (1.0 - h2 ** 2)
    g1 = (g2 @ W2.T) * (1.0 - h1 ** 2)
    grad = np.concatenate([
        (x.T @ g1).ravel(), g1.sum(axis=0),
        (h1.T @ g2).ravel(), g2.sum(axis=0),
        (h2.T @ g3).ravel(), g3.sum(axis=0),
    ])
    return _check_finite(grad, "policy gradient")


def grad_log_prob(params: PolicyParams, obs, fractions) -> np.ndarray:
    obs = np.asarray(obs, dtype=float)[None, :]
    fractions = np.asarray(fractions, dtype=float)[None]
    return weighted_score(params, obs, fractions, np.ones(1))


@dataclass(frozen=True)
class Trajectory:
    """One SP's episode: observations ``(T, D)``, fractions ``(T, K, 2, H)``, rewards ``(T,)``."""

    observations: np.ndarray
    fractions: np.ndarray
    rewards: np.ndarray

    def __post_init__(self) -> None:
        T = len(self.rewards)
        if len(self.observations) != T or len(self.fractions) != T:
            raise ValueError("trajectory arrays disagree on length")

    def __len__(self) -> int:
        return len(self.rewards)

    @property
    def steps(self):
        return list(zip(self.observations, self.fractions, self.rewards))
