"""Sealed-bid winner determination, overbid verification and SP utilities.

Arrays follow the layout ``(..., N, H, K)``: any leading batch axes, then
service providers, hotspots and services.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .env import ChannelParams

NO_WINNER = -1


@dataclass(frozen=True)
class BidMatrix:
    compute_hz: np.ndarray  # (H, K)
    bandwidth_hz: np.ndarray  # (H, K)

    def __post_init__(self) -> None:
        if self.compute_hz.shape != self.bandwidth_hz.shape:
            raise ValueError("compute and bandwidth matrices differ in shape")
        if np.any(self.compute_hz < 0) or np.any(self.bandwidth_hz < 0):
            raise ValueError("allocations must be non-negative")

    def within_budget(self, compute_max, bandwidth_max, rtol: float = 1e-12) -> bool:
        """Per-service column sums respect the deployment budgets."""
        fmax = np.asarray(compute_max, dtype=float)
        bmax = np.asarray(bandwidth_max, dtype=float)
        return bool(np.all(self.compute_hz.sum(axis=0) <= fmax * (1 + rtol))
                    and np.all(self.bandwidth_hz.sum(axis=0) <= bmax * (1 + rtol)))


@dataclass(frozen=True)
class UtilityParams:
    """Energy-interpretation utility constants.

    ``unit_cost_w`` and ``winner_bonus_j`` have shape ``(N, K)``.
    ``delay_cap_s`` is the largest delay the scenario is expected to produce;
    the penalty must exceed it.
    """

    unit_cost_w: np.ndarray
    winner_bonus_j: np.ndarray
    penalty_delay_s: float
    delay_cap_s: float = 0.0

    def __post_init__(self) -> None:
        if np.shape(self.unit_cost_w) != np.shape(self.winner_bonus_j):
            raise ValueError("cost and bonus tables differ in shape")
        if not self.penalty_delay_s > self.delay_cap_s:
            raise ValueError(
                f"penalty delay {self.penalty_delay_s} must exceed delay cap {self.delay_cap_s}")


@dataclass(frozen=True)
class AuctionResult:
    committed_delay_s: np.ndarray  # (..., N, H, K)
    actual_delay_s: np.ndarray
    win: np.ndarray
    verified: np.ndarray
    winner_index: np.ndarray  # (..., H, K), NO_WINNER where nobody won


def total_delay(compute_hz, bandwidth_hz, required_cycles, total_bits,
                channel: ChannelParams | None = None, *, spectral_eff: float | None = None):
    """Communication plus computation delay of serving a cell.

    Broadcasts over arrays. A zero allocation against positive demand is a
    "no bid" and yields ``inf``; zero demand yields 0.
    """
    if spectral_eff is None:
        if channel is None:
            raise TypeError("need a channel or a precomputed spectral efficiency")
        spectral_eff = channel.spectral_efficiency()
    F = np.asarray(compute_hz, dtype=float)
    B = np.asarray(bandwidth_hz, dtype=float)
    lam = np.asarray(required_cycles, dtype=float)
    bits = np.asarray(total_bits, dtype=float)
    rate = B * spectral_eff
    with np.errstate(divide="ignore", invalid="ignore"):
        comp = np.where(lam > 0, lam / F, 0.0)
        comm = np.where(bits > 0, bits / rate, 0.0)
    out = comp + comm
    return float(out) if out.ndim == 0 else out


def resolve(committed) -> tuple[int | None, np.ndarray]:
    """Winner of one cell: lowest committed delay, ties to the lowest index."""
    d = np.asarray(committed, dtype=float)
    flags = np.zeros(d.shape, dtype=np.int8)
    if d.size == 0 or not np.any(np.isfinite(d)):
        return None, flags
    n = int(np.argmin(d))
    flags[n] = 1
    return n, flags


def verify(committed, actual):
    """1 when the realised delay does not exceed the committed one."""
    return (np.asarray(actual) <= np.asarray(committed)).astype(np.int8)


def run_auction(committed, actual=None, contested=None) -> AuctionResult:
    """Resolve every cell at once.

    ``committed``/``actual`` have shape ``(..., N, H, K)``. ``contested`` is an
    optional boolean mask ``(..., H, K)``; cells outside it (no demand) hold no
    auction and have no winner.
    """
    committed = np.asarray(committed, dtype=float)
    actual = committed if actual is None else np.asarray(actual, dtype=float)
    n_axis = committed.ndim - 3
    winner = np.argmin(committed, axis=n_axis)
    any_bid = np.any(np.isfinite(committed), axis=n_axis)
    if contested is not None:
        any_bid &= np.asarray(contested, dtype=bool)
    winner = np.where(any_bid, winner, NO_WINNER)
    n_idx = np.arange(committed.shape[n_axis]).reshape((-1, 1, 1))
    win = (np.expand_dims(winner, n_axis) == n_idx).astype(np.int8)
    return AuctionResult(committed, actual, win, verify(committed, actual), winner)


def _cell_sum(x):
    # contiguous flatten over (H, K) so batched and single-SP sums reduce identically
    x = np.ascontiguousarray(x)
    return x.reshape(x.shape[:-2] + (-1,)).sum(axis=-1)


def sp_utilities(result: AuctionResult, params: UtilityParams, *,
                 verify_bonus: bool = True):
    """Original utility of every SP, shape ``(..., N)``.

    Cost uses the actual delay; the bonus is paid only to verified winners.
    ``verify_bonus=False`` pays winners regardless (an unsafe mechanism kept
    for negative-control checks).
    """
    C = np.asarray(params.unit_cost_w, dtype=float)[:, None, :]
    V = np.asarray(params.winner_bonus_j, dtype=float)[:, None, :]
    paid = result.win * result.verified if verify_bonus else result.win
    return -_cell_sum(C * result.actual_delay_s - V * paid)


def sp_utility(result: AuctionResult, n: int, params: UtilityParams, **kw) -> float:
    return sp_utilities(result, params, **kw)[..., n]


def modified_utilities(result: AuctionResult, params: UtilityParams):
    """Penalty-reformulated utility: losers pay ``C * T_pen`` instead of forgoing a bonus."""
    C = np.asarray(params.unit_cost_w, dtype=float)[:, None, :]
    delay = np.where(result.win == 1, result.actual_delay_s, params.penalty_delay_s)
    return -_cell_sum(C * delay)


def modified_utility(result: AuctionResult, n: int, params: UtilityParams) -> float:
    return modified_utilities(result, params)[..., n]


def potential_value(result: AuctionResult, params: UtilityParams):
    """Weighted potential: minus the winners' delays plus every loser's penalty."""
    t = np.where(result.win == 1, result.actual_delay_s, params.penalty_delay_s)
    per_sp = _cell_sum(t)
    return -per_sp.sum(axis=-1)
