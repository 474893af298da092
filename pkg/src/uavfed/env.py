"""Channel, computing and task-generation models for the hotspot environment.

Every UAV hovers directly above its hotspot, so the link distance equals the
flight altitude and the elevation angle is 90 degrees.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

LIGHT_SPEED_MPS = 2.998e8
BITS_PER_MB = 8e6


class AllocationError(ValueError):
    """Positive demand was paired with a zero resource allocation."""


def dbm_to_watts(dbm: float) -> float:
    return 10.0 ** (dbm / 10.0) / 1000.0


@dataclass(frozen=True)
class ChannelParams:
    carrier_freq_hz: float = 2.5e9
    altitude_m: float = 100.0
    eta_los_db: float = 0.1
    eta_nlos_db: float = 21.0
    env_a: float = 4.88
    env_b: float = 0.43
    noise_power_w: float = 10.0 ** -12.5
    avg_tx_power_w: float = 0.1
    light_speed_mps: float = LIGHT_SPEED_MPS

    def __post_init__(self) -> None:
        positive = ("carrier_freq_hz", "altitude_m", "eta_nlos_db", "env_a", "env_b",
                    "noise_power_w", "avg_tx_power_w", "light_speed_mps")
        for name in positive:
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0, got {getattr(self, name)!r}")
        if self.eta_los_db < 0:
            raise ValueError("eta_los_db must be >= 0")

    @property
    def elevation_deg(self) -> float:
        return 90.0

    def link_loss_db(self) -> float:
        """Mean path loss of the UAV-hotspot link for this geometry."""
        p_los = los_probability(self.elevation_deg, self)
        return path_loss_db(self.altitude_m, p_los, self)

    def spectral_efficiency(self) -> float:
        """Average rate per Hz of bandwidth (bits/s/Hz) at the link loss."""
        return avg_rate_bps(1.0, self.link_loss_db(), self)


ENV_PROFILES = {
    # (alpha, beta, eta_los_db, eta_nlos_db)
    "suburban": (4.88, 0.43, 0.1, 21.0),
}


def channel_for_profile(profile: str, **overrides) -> ChannelParams:
    try:
        a, b, los, nlos = ENV_PROFILES[profile]
    except KeyError:
        raise ValueError(f"unknown environment profile {profile!r}") from None
    kwargs = dict(env_a=a, env_b=b, eta_los_db=los, eta_nlos_db=nlos)
    kwargs.update(overrides)
    return ChannelParams(**kwargs)


def los_probability(elevation_deg: float, params: ChannelParams) -> float:
    if not 0.0 <= elevation_deg <= 90.0:
        raise ValueError(f"elevation must lie in [0, 90] degrees, got {elevation_deg}")
    a, b = params.env_a, params.env_b
    return 1.0 / (1.0 + a * math.exp(-b * (elevation_deg - a)))


def path_loss_db(distance_m: float, p_los: float, params: ChannelParams) -> float:
    if not distance_m > 0:
        raise ValueError(f"distance must be > 0, got {distance_m}")
    if not 0.0 <= p_los <= 1.0:
        raise ValueError(f"p_los must lie in [0, 1], got {p_los}")
    fspl = 20.0 * math.log10(4.0 * math.pi * params.carrier_freq_hz * distance_m
                             / params.light_speed_mps)
    return fspl + p_los * params.eta_los_db + (1.0 - p_los) * params.eta_nlos_db


def avg_rate_bps(bandwidth_hz, loss_db: float, params: ChannelParams):
    """Shannon rate under large-scale fading only. Vectorises over bandwidth."""
    bw = np.asarray(bandwidth_hz, dtype=float)
    if np.any(bw <= 0):
        raise ValueError("bandwidth must be > 0")
    snr = params.avg_tx_power_w * 10.0 ** (-loss_db / 10.0) / params.noise_power_w
    rate = bw * math.log2(1.0 + snr)
    return float(rate) if rate.ndim == 0 else rate


def _safe_ratio(demand, supply, what: str):
    d = np.asarray(demand, dtype=float)
    s = np.asarray(supply, dtype=float)
    if np.any((d > 0) & (s <= 0)):
        raise AllocationError(f"positive {what} with zero allocation")
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(d > 0, d / np.where(s > 0, s, 1.0), 0.0)
    return float(out) if out.ndim == 0 else out


def comp_delay_s(required_cycles, alloc_compute_hz):
    """Processing time Lambda / F; zero demand costs nothing even at F = 0."""
    return _safe_ratio(required_cycles, alloc_compute_hz, "cycle demand")


def comm_delay_s(total_bits, rate_bps):
    return _safe_ratio(total_bits, rate_bps, "bit demand")


# ---------------------------------------------------------------- tasks


@dataclass(frozen=True)
class TaskSpec:
    data_bits: float
    cycles_per_bit: float
    service_type: int

    def __post_init__(self) -> None:
        if self.data_bits <= 0 or self.cycles_per_bit <= 0:
            raise ValueError("task size and cycles/bit must be > 0")
        if self.service_type < 0:
            raise ValueError("service_type must be >= 0")


@dataclass(frozen=True)
class HotspotState:
    """Tasks of one hotspot at one time step, stored column-wise."""

    hotspot_id: int
    time_index: int
    data_bits: np.ndarray = field(repr=False)
    cycles_per_bit: np.ndarray = field(repr=False)
    service_type: np.ndarray = field(repr=False)

    @classmethod
    def from_tasks(cls, hotspot_id: int, time_index: int, tasks: Sequence[TaskSpec]):
        return cls(
            hotspot_id,
            time_index,
            np.array([t.data_bits for t in tasks], dtype=float),
            np.array([t.cycles_per_bit for t in tasks], dtype=float),
            np.array([t.service_type for t in tasks], dtype=int),
        )

    @property
    def n_users(self) -> int:
        return len(self.data_bits)

    @property
    def tasks(self) -> list[TaskSpec]:
        return [TaskSpec(float(d), float(c), int(k))
                for d, c, k in zip(self.data_bits, self.cycles_per_bit, self.service_type)]


@dataclass(frozen=True)
class DemandSummary:
    required_cycles: np.ndarray  # (H, K)
    total_bits: np.ndarray  # (H, K)
    user_counts: np.ndarray  # (H,)

    @classmethod
    def from_hotspots(cls, hotspots: Sequence[HotspotState], n_services: int):
        rows = [aggregate_demand(s, n_services) for s in hotspots]
        return cls(
            np.array([r[0] for r in rows]).reshape(len(rows), n_services),
            np.array([r[1] for r in rows]).reshape(len(rows), n_services),
            np.array([s.n_users for s in hotspots], dtype=float),
        )


def aggregate_demand(state: HotspotState, n_services: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-service cycle and bit totals of one hotspot, each of length K."""
    k = state.service_type
    if k.size and (k.min() < 0 or k.max() >= n_services):
        raise ValueError(f"service index out of range [0, {n_services})")
    cycles = np.bincount(k, weights=state.data_bits * state.cycles_per_bit,
                         minlength=n_services).astype(float)
    bits = np.bincount(k, weights=state.data_bits, minlength=n_services).astype(float)
    return cycles, bits


def sample_hotspots(config, rng: np.random.Generator, time_index: int = 0) -> list[HotspotState]:
    """Draw one time step of hotspot tasks uniformly from the configured choice sets."""
    users = np.asarray(config.user_count_choices)
    sizes = np.asarray(config.data_size_choices_bits, dtype=float)
    cpb = np.asarray(config.cycles_per_bit_choices, dtype=float)
    counts = rng.choice(users, size=config.n_hotspots)
    out = []
    for h, m in enumerate(counts):
        out.append(HotspotState(
            h,
            time_index,
            rng.choice(sizes, size=m),
            rng.choice(cpb, size=m),
            rng.integers(0, config.n_services, size=m),
        ))
    return out


def sample_demand_batch(config, rng: np.random.Generator, batch: int) -> DemandSummary:
    """Vectorised demand draw for ``batch`` independent hotspot sets.

    Same distribution as aggregating :func:`sample_hotspots`, but returns
    arrays with a leading batch axis: cycles/bits ``(batch, H, K)`` and user
    counts ``(batch, H)``.
    """
    H, K = config.n_hotspots, config.n_services
    users = np.asarray(config.user_count_choices)
    sizes = np.asarray(config.data_size_choices_bits, dtype=float)
    cpb = np.asarray(config.cycles_per_bit_choices, dtype=float)
    counts = rng.choice(users, size=(batch, H))
    total = int(counts.sum())
    d = rng.choice(sizes, size=total)
    c = rng.choice(cpb, size=total)
    k = rng.integers(0, K, size=total)
    cell = np.repeat(np.arange(batch * H), counts.ravel()) * K + k
    cycles = np.bincount(cell, weights=d * c, minlength=batch * H * K)
    bits = np.bincount(cell, weights=d, minlength=batch * H * K)
    return DemandSummary(cycles.reshape(batch, H, K), bits.reshape(batch, H, K),
                         counts.astype(float))
