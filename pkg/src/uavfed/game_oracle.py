"""Brute-force checks of the auction game's properties on small discrete games.

A discrete game gives every SP a finite list of allocations (a grid built from
integer compositions of its per-service budgets). Everything is enumerated
exactly, so the checks are verification oracles rather than estimates.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .auction import (AuctionResult, UtilityParams, modified_utilities, potential_value,
                      run_auction, sp_utilities, total_delay)
from .env import ChannelParams, DemandSummary

ENUMERATION_CAP = 10 ** 6
INFLATION_FACTORS = tuple(round(1.0 + 0.1 * i, 1) for i in range(1, 11))


class EnumerationError(RuntimeError):
    pass


class PreconditionError(ValueError):
    pass


# ------------------------------------------------------------------ games


def composition_grid(n_hotspots: int, levels: int, exact: bool) -> list[tuple[int, ...]]:
    """Integer splits of ``levels`` budget units over the hotspots.

    ``exact`` keeps only splits that spend every unit; otherwise any total in
    ``1..levels`` is allowed (with one hotspot that is the grid 1/L, ..., L/L).
    """
    out = []
    for c in itertools.product(range(levels + 1), repeat=n_hotspots):
        s = sum(c)
        if (s == levels) if exact else (1 <= s <= levels):
            out.append(c)
    return out


@dataclass(frozen=True)
class DiscreteGame:
    """``actions[n]`` is an ``(A_n, 2, H, K)`` array of (compute, bandwidth) allocations."""

    actions: tuple[np.ndarray, ...]
    demand: DemandSummary
    channel: ChannelParams
    utility: UtilityParams
    contested: np.ndarray = field(init=False)
    delays: tuple[np.ndarray, ...] = field(init=False)  # per SP, (A_n, H, K)

    def __post_init__(self) -> None:
        cyc = np.asarray(self.demand.required_cycles, dtype=float)
        bits = np.asarray(self.demand.total_bits, dtype=float)
        se = self.channel.spectral_efficiency()
        delays = tuple(total_delay(a[:, 0], a[:, 1], cyc, bits, spectral_eff=se)
                       for a in self.actions)
        object.__setattr__(self, "delays", delays)
        object.__setattr__(self, "contested", (cyc > 0) | (bits > 0))

    @property
    def n_sps(self) -> int:
        return len(self.actions)

    @property
    def sizes(self) -> tuple[int, ...]:
        return tuple(len(a) for a in self.actions)

    def n_profiles(self) -> int:
        return math.prod(self.sizes)

    def require_enumerable(self, cap: int = ENUMERATION_CAP) -> None:
        if self.n_profiles() > cap:
            raise EnumerationError(
                f"{self.n_profiles()} joint profiles exceed the enumeration cap {cap}")

    def outcome(self, profiles, committed_override=None) -> AuctionResult:
        """Auction results for joint profiles of shape ``(..., N)``."""
        p = np.asarray(profiles, dtype=int)
        actual = np.stack([self.delays[n][p[..., n]] for n in range(self.n_sps)], axis=-3)
        committed = actual if committed_override is None else committed_override
        return run_auction(committed, actual, self.contested)

    def utilities(self, profiles) -> np.ndarray:
        return sp_utilities(self.outcome(profiles), self.utility)

    def modified(self, profiles) -> np.ndarray:
        return modified_utilities(self.outcome(profiles), self.utility)

    def potential(self, profiles) -> np.ndarray:
        return potential_value(self.outcome(profiles), self.utility)

    def deviations(self, profile, n: int) -> np.ndarray:
        """Every profile that differs from ``profile`` at most in SP ``n``'s action."""
        p = np.tile(np.asarray(profile, dtype=int), (self.sizes[n], 1))
        p[:, n] = np.arange(self.sizes[n])
        return p

    def all_profiles(self) -> np.ndarray:
        self.require_enumerable()
        grids = np.meshgrid(*[np.arange(s) for s in self.sizes], indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=-1)


def build_actions(budget_compute, budget_bandwidth, n_hotspots: int, levels: int,
                  coupled: bool = True, exact: bool | None = None) -> np.ndarray:
    """Allocation grid for one SP with per-service budgets of length K.

    ``coupled`` uses the same split for compute and bandwidth; otherwise the
    two splits are chosen independently.
    """
    fmax = np.asarray(budget_compute, dtype=float)
    bmax = np.asarray(budget_bandwidth, dtype=float)
    K = fmax.size
    exact = n_hotspots > 1 if exact is None else exact
    splits = np.asarray(composition_grid(n_hotspots, levels, exact), dtype=float) / levels
    per_service = [(i, i) for i in range(len(splits))] if coupled else \
        list(itertools.product(range(len(splits)), repeat=2))
    acts = []
    for choice in itertools.product(per_service, repeat=K):
        a = np.empty((2, n_hotspots, K))
        for k, (fi, bi) in enumerate(choice):
            a[0, :, k] = splits[fi] * fmax[k]
            a[1, :, k] = splits[bi] * bmax[k]
        acts.append(a)
    return np.asarray(acts)


def random_game(n_sps: int, n_hotspots: int, n_services: int, levels: int,
                rng: np.random.Generator, *, coupled: bool = True, exact: bool | None = None,
                cost_w=381.0, bonus_j: float = 3000.0, penalty_factor: float = 100.0,
                channel: ChannelParams | None = None) -> DiscreteGame:
    """Reference-like game: demand drawn per cell, budgets scaled per SP by U(0.5, 1.5).

    ``cost_w`` is a scalar or one constant per SP (constant across services).
    """
    channel = channel or ChannelParams()
    H, K = n_hotspots, n_services
    users = rng.choice([20, 30, 40, 50], size=(H, K))
    size_bits = rng.choice([2.5, 3.0, 3.5, 4.0, 4.5, 5.0], size=(H, K)) * 8e6
    cpb = rng.choice([1000, 1200, 1400, 1600], size=(H, K))
    bits = users * size_bits
    demand = DemandSummary(bits * cpb, bits, users.sum(axis=1))
    scale = rng.uniform(0.5, 1.5, size=(n_sps, 2))
    actions = tuple(build_actions(np.full(K, 800e9 * scale[n, 0]),
                                  np.full(K, 800e6 * scale[n, 1]), H, levels, coupled, exact)
                    for n in range(n_sps))
    cost = np.broadcast_to(np.asarray(cost_w, dtype=float), (n_sps,))
    probe = DiscreteGame(actions, demand, channel,
                         UtilityParams(np.ones((n_sps, K)), np.ones((n_sps, K)), np.inf))
    finite = np.concatenate([d[np.isfinite(d)] for d in probe.delays])
    cap = float(finite.max())
    utility = UtilityParams(np.repeat(cost[:, None], K, axis=1),
                            np.full((n_sps, K), bonus_j), penalty_factor * cap, cap)
    return DiscreteGame(actions, demand, channel, utility)


def with_utility(game: DiscreteGame, utility: UtilityParams) -> DiscreteGame:
    return DiscreteGame(game.actions, game.demand, game.channel, utility)


# ----------------------------------------------------------------- reports


@dataclass
class CheckReport:
    name: str
    passed: bool
    checked: int
    counterexample: dict | None = None
    details: dict = field(default_factory=dict)

    def summary(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        extra = " ".join(f"{k}={v}" for k, v in self.details.items())
        return f"{status} {self.name}: checked={self.checked} {extra}".rstrip()


@dataclass(frozen=True)
class NeCertificate:
    profile: tuple[int, ...]
    improvement_path_len: int
    max_unilateral_gain: float
    potential_path: tuple[float, ...]
    converged: bool
    cycled: bool = False

    @property
    def potential_monotone(self) -> bool:
        return all(b >= a for a, b in zip(self.potential_path, self.potential_path[1:]))


# ------------------------------------------------------------ authenticity


def check_authenticity(game: DiscreteGame, factors: Sequence[float] = INFLATION_FACTORS, *,
                       verify_bonus: bool = True) -> CheckReport:
    """No SP gains by declaring more resources than it deploys.

    For every SP, actual allocation, opponents' (truthful) profile and
    inflation factor, the declared allocation is ``factor * actual``. Outcomes
    are classified as case 1 (still loses), case 2 (wins only through the
    false bid) and case 3 (wins either way); the expected pattern is equality
    in cases 1-2 and a strict loss in case 3.

    ``verify_bonus=False`` pays winners without checking the delivered delay,
    the unsafe mechanism used as a negative control. Profiles where the SP
    leaves a contested cell unserved (infinite delay, so infinite cost either
    way) are skipped and counted.
    """
    game.require_enumerable()
    se = game.channel.spectral_efficiency()
    cyc, bits = game.demand.required_cycles, game.demand.total_bits
    profiles = game.all_profiles()
    honest = game.outcome(profiles)
    u_true = sp_utilities(honest, game.utility, verify_bonus=verify_bonus)
    cases = {1: 0, 2: 0, 3: 0}
    violations = {1: 0, 2: 0, 3: 0}
    profitable = 0
    checked = skipped = 0
    first = None
    for n in range(game.n_sps):
        acts = game.actions[n][profiles[:, n]]
        finite = np.all(np.isfinite(honest.actual_delay_s[:, n]) | ~game.contested,
                        axis=(-2, -1))
        for f in factors:
            declared = total_delay(f * acts[:, 0], f * acts[:, 1], cyc, bits, spectral_eff=se)
            committed = honest.actual_delay_s.copy()
            committed[:, n] = declared
            false = run_auction(committed, honest.actual_delay_s, game.contested)
            u_false = sp_utilities(false, game.utility, verify_bonus=verify_bonus)[:, n]
            won_true = honest.win[:, n].reshape(len(profiles), -1).any(axis=1)
            won_false = false.win[:, n].reshape(len(profiles), -1).any(axis=1)
            case = np.where(won_true, 3, np.where(won_false, 2, 1))
            with np.errstate(invalid="ignore"):
                gain = np.where(finite, u_false - u_true[:, n], 0.0)
            ok = np.where(case == 3, gain < 0, gain == 0) | ~finite
            case = np.where(finite, case, 0)
            checked += int(finite.sum())
            skipped += int((~finite).sum())
            profitable += int(np.sum(gain > 0))
            for c in (1, 2, 3):
                cases[c] += int(np.sum(case == c))
                violations[c] += int(np.sum(~ok & (case == c)))
            if not ok.all() and first is None:
                i = int(np.flatnonzero(~ok)[0])
                first = {"sp": n, "profile": profiles[i].tolist(), "factor": f,
                         "case": int(case[i]), "gain": float(gain[i])}
    details = {f"case{c}": cases[c] for c in cases}
    details.update({f"case{c}_violations": violations[c] for c in violations})
    details["profitable_false_bids"] = profitable
    details["skipped_unserved"] = skipped
    return CheckReport("authenticity", first is None, checked, first, details)


# --------------------------------------------------------- order equivalence


def check_order_equivalence(game: DiscreteGame, *, bonus_per_delay: float = 0.0) -> CheckReport:
    """Lower delay in every cell never lowers either utility.

    For each SP and opponents' profile, every pair of own actions where the
    second has no larger delay in any cell must not decrease the original or
    the penalty-reformulated utility. ``bonus_per_delay`` adds a winner bonus
    that grows with delay (negative control).
    """
    game.require_enumerable()
    profiles = game.all_profiles()
    checked = 0
    first = None
    for n in range(game.n_sps):
        T = game.delays[n].reshape(game.sizes[n], -1)
        better = np.all(T[None, :, :] <= T[:, None, :], axis=-1)  # better[a, a'] : a' dominates a
        others = np.unique(np.delete(profiles, n, axis=1), axis=0)
        for opp in others:
            prof = np.insert(np.tile(opp, (game.sizes[n], 1)), n, np.arange(game.sizes[n]), axis=1)
            res = game.outcome(prof)
            u = sp_utilities(res, game.utility)[:, n]
            if bonus_per_delay:
                paid = (res.win * res.verified)[:, n]
                u = u + bonus_per_delay * np.where(paid == 1, res.actual_delay_s[:, n], 0.0).sum(
                    axis=(-2, -1))
            ub = modified_utilities(res, game.utility)[:, n]
            bad = better & ((u[:, None] > u[None, :]) | (ub[:, None] > ub[None, :]))
            checked += int(better.sum())
            if bad.any() and first is None:
                a, b = (int(x) for x in np.argwhere(bad)[0])
                first = {"sp": n, "opponents": opp.tolist(), "action": a, "better_action": b,
                         "utility": (float(u[a]), float(u[b])),
                         "modified": (float(ub[a]), float(ub[b]))}
    return CheckReport("order_equivalence", first is None, checked, first)


# --------------------------------------------------------- potential identity


def _require_constant_cost(game: DiscreteGame) -> np.ndarray:
    C = np.asarray(game.utility.unit_cost_w, dtype=float)
    if not np.allclose(C, C[:, :1], rtol=0, atol=0):
        raise PreconditionError("unit cost must be constant across services for each SP")
    return C[:, 0]


def check_potential_identity(game: DiscreteGame, n_samples: int | None = None,
                             rng: np.random.Generator | None = None, tol: float = 1e-9
                             ) -> CheckReport:
    """Residual of ``delta modified_utility_n = C_n * delta potential`` over deviations.

    Enumerates every unilateral deviation when ``n_samples`` is None, otherwise
    samples that many (profile, SP, new action) triples. The residual is
    relative to ``max(|dU|, |C dPhi|)``. Deviations are split by whether they
    move a cell between the deviator and another SP (``displacing``).
    """
    C = _require_constant_cost(game)
    N = game.n_sps
    if n_samples is None:
        base = game.all_profiles()
        rows = [(p, n, a) for p in base for n in range(N) for a in range(game.sizes[n])]
        start = np.array([r[0] for r in rows])
        who = np.array([r[1] for r in rows])
        new = np.array([r[2] for r in rows])
    else:
        rng = rng or np.random.default_rng(0)
        start = np.stack([rng.integers(0, s, n_samples) for s in game.sizes], axis=-1)
        who = rng.integers(0, N, n_samples)
        new = np.array([rng.integers(0, game.sizes[n]) for n in who])
    moved = start.copy()
    moved[np.arange(len(who)), who] = new
    r0, r1 = game.outcome(start), game.outcome(moved)
    idx = np.arange(len(who))
    du = modified_utilities(r1, game.utility)[idx, who] - modified_utilities(r0, game.utility)[idx, who]
    dphi = potential_value(r1, game.utility) - potential_value(r0, game.utility)
    rhs = C[who] * dphi
    denom = np.maximum(np.maximum(np.abs(du), np.abs(rhs)), np.finfo(float).tiny)
    rel = np.abs(du - rhs) / denom
    w0, w1 = r0.winner_index, r1.winner_index
    me = who[:, None, None]
    displacing = (((w0 == me) & (w1 != me) & (w1 >= 0)) |
                  ((w1 == me) & (w0 != me) & (w0 >= 0))).reshape(len(who), -1).any(axis=1)
    worst = int(np.argmax(rel))
    details = {
        "max_rel_residual": float(rel.max()),
        "displacing": int(displacing.sum()),
        "max_rel_residual_non_displacing": float(rel[~displacing].max()) if (~displacing).any() else 0.0,
        "max_rel_residual_displacing": float(rel[displacing].max()) if displacing.any() else 0.0,
    }
    cx = None
    if rel[worst] > tol:
        cx = {"start": start[worst].tolist(), "sp": int(who[worst]), "new_action": int(new[worst]),
              "delta_utility": float(du[worst]), "c_delta_potential": float(rhs[worst])}
    return CheckReport("potential_identity", rel.max() <= tol, len(who), cx, details)


# --------------------------------------------------------- best responses


def best_response_dynamics(game: DiscreteGame, start, max_iters: int = 1_000) -> NeCertificate:
    """Round-robin best responses on the penalty-reformulated utility.

    An SP moves only on strict improvement (the lowest index among equal best
    responses). Stops after a full round with no move, after ``max_iters``
    moves, or when a (profile, mover) pair repeats, which proves a cycle.
    """
    profile = np.asarray(start, dtype=int).copy()
    N = game.n_sps
    path = [float(game.potential(profile))]
    seen = set()
    steps = idle = n = 0
    cycled = False
    while idle < N and steps < max_iters:
        key = (tuple(profile.tolist()), n)
        if key in seen:
            cycled = True
            break
        seen.add(key)
        u = game.modified(game.deviations(profile, n))[:, n]
        best = int(np.argmax(u))
        if u[best] > u[profile[n]]:
            profile[n] = best
            steps += 1
            idle = 0
            path.append(float(game.potential(profile)))
        else:
            idle += 1
        n = (n + 1) % N
    return NeCertificate(tuple(int(x) for x in profile), steps, max_unilateral_gain(game, profile),
                         tuple(path), idle >= N, cycled)


def max_unilateral_gain(game: DiscreteGame, profile) -> float:
    """Largest improvement any SP can get by deviating alone (<= 0 at an NE)."""
    profile = np.asarray(profile, dtype=int)
    gains = []
    for n in range(game.n_sps):
        u = game.modified(game.deviations(profile, n))[:, n]
        gains.append(float(u.max() - u[profile[n]]))
    return max(gains)


def pure_equilibria(game: DiscreteGame) -> np.ndarray:
    """All pure NE by exhaustive enumeration."""
    profiles = game.all_profiles()
    u = game.modified(profiles)
    is_ne = np.ones(len(profiles), dtype=bool)
    for n in range(game.n_sps):
        others = np.delete(profiles, n, axis=1)
        _, group = np.unique(others, axis=0, return_inverse=True)
        best = np.full(group.max() + 1, -np.inf)
        np.maximum.at(best, group, u[:, n])
        is_ne &= u[:, n] >= best[group]
    return profiles[is_ne]


# ------------------------------------------------------ stagewise optimality


def check_stagewise_optimality(games: Sequence[DiscreteGame], profiles=None) -> CheckReport:
    """Per-stage equilibria maximise every SP's total utility over the horizon.

    ``profiles`` defaults to a best-response equilibrium of each stage. For
    every SP, every sequence of unilateral per-stage alternatives is compared
    against the given profiles' total modified utility.
    """
    if profiles is None:
        profiles = [best_response_dynamics(g, np.zeros(g.n_sps, dtype=int)).profile for g in games]
    profiles = [np.asarray(p, dtype=int) for p in profiles]
    N = games[0].n_sps
    total = math.prod(g.sizes[0] for g in games)
    if total * N > ENUMERATION_CAP:
        raise EnumerationError(f"{total * N} stage sequences exceed the enumeration cap")
    checked = 0
    first = None
    for n in range(N):
        per_stage = [g.modified(g.deviations(p, n))[:, n] for g, p in zip(games, profiles)]
        ref = sum(u[p[n]] for u, p in zip(per_stage, profiles))
        for seq in itertools.product(*[range(len(u)) for u in per_stage]):
            checked += 1
            alt = sum(u[a] for u, a in zip(per_stage, seq))
            if alt > ref and first is None:
                first = {"sp": n, "sequence": list(seq), "total": float(alt), "reference": float(ref)}
    return CheckReport("stagewise_optimality", first is None, checked, first)


def dominated_replacement(game: DiscreteGame, profile, n: int = 0) -> tuple[int, ...]:
    """``profile`` with SP ``n`` switched to its worst response (strictly worse if one exists)."""
    profile = np.asarray(profile, dtype=int).copy()
    u = game.modified(game.deviations(profile, n))[:, n]
    worst = int(np.argmin(u))
    if not u[worst] < u[profile[n]]:
        raise PreconditionError("no strictly dominated action for this SP")
    profile[n] = worst
    return tuple(int(x) for x in profile)


# ------------------------------------------------------------------ suite


@dataclass(frozen=True)
class OracleSizes:
    auction_levels: int = 10
    identity_levels: int = 3
    identity_samples: int = 10_000
    brd_starts: int = 100
    brd_games: int = 5
    stage_levels: int = 5
    stages: int = 2
    seed: int = 0


def run_suite(sizes: OracleSizes = OracleSizes(), negative_controls: bool = False
              ) -> list[tuple[CheckReport, bool]]:
    """Every check with its expected outcome; ``(report, expect_pass)`` pairs."""
    rng = np.random.default_rng(sizes.seed)
    out: list[tuple[CheckReport, bool]] = []
    single = random_game(2, 1, 1, sizes.auction_levels, rng, coupled=False)
    out.append((check_authenticity(single), True))
    out.append((check_order_equivalence(single), True))
    multi = random_game(3, 2, 2, sizes.identity_levels, rng)
    out.append((check_potential_identity(multi, sizes.identity_samples, rng), True))
    r = brd_report([random_game(2, 1, 1, sizes.auction_levels, rng, coupled=False)
                    for _ in range(sizes.brd_games)], sizes.brd_starts, rng)
    r.name = "best_response_dynamics[single cell]"
    out.append((r, True))
    r = brd_report([random_game(3, 2, 2, sizes.identity_levels, rng)
                    for _ in range(sizes.brd_games)], sizes.brd_starts, rng)
    r.name = "best_response_dynamics[multi cell]"
    out.append((r, True))
    stage_games = [random_game(2, 1, 1, sizes.stage_levels, rng) for _ in range(sizes.stages)]
    out.append((check_stagewise_optimality(stage_games), True))
    if negative_controls:
        r = check_authenticity(single, verify_bonus=False)
        r.name = "authenticity[unverified bonus]"
        out.append((r, False))
        C = float(np.max(single.utility.unit_cost_w))
        r = check_order_equivalence(single, bonus_per_delay=2.0 * C)
        r.name = "order_equivalence[delay-paid bonus]"
        out.append((r, False))
        ne = [best_response_dynamics(g, np.zeros(g.n_sps, dtype=int)).profile for g in stage_games]
        ne[0] = dominated_replacement(stage_games[0], ne[0])
        r = check_stagewise_optimality(stage_games, ne)
        r.name = "stagewise_optimality[dominated stage]"
        out.append((r, False))
    return out


def brd_report(games: Sequence[DiscreteGame], starts: int, rng: np.random.Generator) -> CheckReport:
    """Best-response dynamics from random starts: NE reached and potential never drops."""
    runs = unconverged = non_monotone = cycles = 0
    first = None
    for gi, g in enumerate(games):
        for _ in range(starts):
            s = [int(rng.integers(0, k)) for k in g.sizes]
            cert = best_response_dynamics(g, s)
            runs += 1
            bad_ne = not cert.converged or cert.max_unilateral_gain > 0
            bad_phi = not cert.potential_monotone
            unconverged += bad_ne
            non_monotone += bad_phi
            cycles += cert.cycled
            if (bad_ne or bad_phi) and first is None:
                first = {"game": gi, "start": s, "end": list(cert.profile),
                         "gain": cert.max_unilateral_gain, "potential_path": list(cert.potential_path)}
    return CheckReport("best_response_dynamics", first is None, runs, first,
                       {"not_ne": unconverged, "cycles": cycles, "potential_drops": non_monotone})
