"""Scenario configuration, flat key-value config files and reference constants."""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np

from .auction import UtilityParams, total_delay
from .env import BITS_PER_MB, ChannelParams, dbm_to_watts


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ScenarioConfig:
    n_sps: int
    n_hotspots: int
    n_services: int
    horizon: int
    channel: ChannelParams
    user_count_choices: tuple[int, ...]
    data_size_choices_bits: tuple[float, ...]
    cycles_per_bit_choices: tuple[float, ...]
    budgets_compute_hz: np.ndarray  # (N, K)
    budgets_bandwidth_hz: np.ndarray  # (N, K)
    utility: UtilityParams
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_sps < 2:
            raise ConfigError("need at least two SPs")
        if min(self.n_hotspots, self.n_services, self.horizon) < 1:
            raise ConfigError("hotspots, services and horizon must be >= 1")
        shape = (self.n_sps, self.n_services)
        for name in ("budgets_compute_hz", "budgets_bandwidth_hz"):
            arr = getattr(self, name)
            if np.shape(arr) != shape:
                raise ConfigError(f"{name} must have shape {shape}, got {np.shape(arr)}")
            if np.any(np.asarray(arr) <= 0):
                raise ConfigError(f"{name} must be > 0")
        if np.shape(self.utility.unit_cost_w) != shape:
            raise ConfigError(f"utility tables must have shape {shape}")
        if not self.user_count_choices or min(self.user_count_choices) < 0:
            raise ConfigError("user_count_choices must be non-empty and non-negative")
        if min(self.data_size_choices_bits) <= 0 or min(self.cycles_per_bit_choices) <= 0:
            raise ConfigError("task sizes and cycles/bit must be > 0")

    @property
    def action_dim(self) -> int:
        return 2 * self.n_services * self.n_hotspots

    @property
    def obs_dim(self) -> int:
        H, K = self.n_hotspots, self.n_services
        return 3 * H * K + H + 1

    def max_cell_demand(self) -> tuple[float, float]:
        """Cycles and bits of the heaviest possible cell: every user, largest task, one service."""
        m = max(self.user_count_choices)
        d = max(self.data_size_choices_bits)
        lam = max(self.cycles_per_bit_choices)
        return m * d * lam, m * d


def reference_delay(n_hotspots: int, channel: ChannelParams, compute_max, bandwidth_max,
                    cycles: float, bits: float) -> float:
    """Delay of ``(cycles, bits)`` served with the smallest even budget split."""
    F = float(np.min(compute_max)) / n_hotspots
    B = float(np.min(bandwidth_max)) / n_hotspots
    return total_delay(F, B, cycles, bits, channel)


# Every scenario key with its default (the reference suburban scenario).
DEFAULTS: dict[str, Any] = {
    "n_sps": 5,
    "n_hotspots": 6,
    "n_services": 4,
    "horizon": 30,
    "carrier_freq_hz": 2.5e9,
    "altitude_m": 100.0,
    "eta_los_db": 0.1,
    "eta_nlos_db": 21.0,
    "env_a": 4.88,
    "env_b": 0.43,
    "noise_dbm": -95.0,
    "avg_tx_power_w": 0.1,
    "user_count_choices": [20, 30, 40, 50],
    "data_size_choices_mb": [2.5, 3.0, 3.5, 4.0, 4.5, 5.0],
    "cycles_per_bit_choices": [1000, 1200, 1400, 1600],
    "budget_compute_hz": 800e9,
    "budget_bandwidth_hz": 800e6,
    "unit_cost_w": 381.0,
    "winner_bonus_j": 3000.0,
    "penalty_factor": 100.0,
    "penalty_delay_s": None,
    "seed": 0,
}


def _table(value, shape) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        return np.full(shape, float(arr))
    if arr.ndim == 1 and arr.shape[0] == shape[1]:
        return np.tile(arr, (shape[0], 1))
    if arr.shape != shape:
        raise ConfigError(f"expected a scalar, a length-{shape[1]} list or shape {shape}")
    return arr


def scenario_from_dict(values: dict[str, Any]) -> ScenarioConfig:
    v = dict(DEFAULTS)
    unknown = set(values) - set(DEFAULTS)
    if unknown:
        raise ConfigError(f"unknown scenario keys: {sorted(unknown)}")
    v.update(values)
    try:
        channel = ChannelParams(
            carrier_freq_hz=float(v["carrier_freq_hz"]),
            altitude_m=float(v["altitude_m"]),
            eta_los_db=float(v["eta_los_db"]),
            eta_nlos_db=float(v["eta_nlos_db"]),
            env_a=float(v["env_a"]),
            env_b=float(v["env_b"]),
            noise_power_w=dbm_to_watts(float(v["noise_dbm"])),
            avg_tx_power_w=float(v["avg_tx_power_w"]),
        )
        N, H, K = int(v["n_sps"]), int(v["n_hotspots"]), int(v["n_services"])
        fmax = _table(v["budget_compute_hz"], (N, K))
        bmax = _table(v["budget_bandwidth_hz"], (N, K))
        sizes = tuple(float(x) * BITS_PER_MB for x in v["data_size_choices_mb"])
        cpb = tuple(float(x) for x in v["cycles_per_bit_choices"])
        users = tuple(int(x) for x in v["user_count_choices"])
        cap = reference_delay(H, channel, fmax, bmax,
                              max(users) * max(sizes) * max(cpb), max(users) * max(sizes))
        t_pen = v["penalty_delay_s"]
        t_pen = float(v["penalty_factor"]) * cap if t_pen is None else float(t_pen)
        utility = UtilityParams(_table(v["unit_cost_w"], (N, K)),
                                _table(v["winner_bonus_j"], (N, K)), t_pen, cap)
        return ScenarioConfig(N, H, K, int(v["horizon"]), channel, users, sizes, cpb,
                              fmax, bmax, utility, int(v["seed"]))
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


# ------------------------------------------------------- flat key-value files


def parse_value(text: str) -> Any:
    """JSON literal if it parses, bare string otherwise."""
    text = text.strip()
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        if text.lower() in ("none", "null"):
            return None
        if text.lower() in ("true", "false"):
            return text.lower() == "true"
        return text.strip("'\"")


def parse_assignment(line: str) -> tuple[str, Any]:
    if "=" not in line:
        raise ConfigError(f"expected key = value, got {line!r}")
    key, _, raw = line.partition("=")
    key = key.strip()
    if not key:
        raise ConfigError(f"empty key in {line!r}")
    return key, parse_value(raw)


def load_flat(path: str | Path) -> dict[str, Any]:
    """Read ``key = value`` lines; ``#`` starts a comment, values are JSON literals."""
    out: dict[str, Any] = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            key, value = parse_assignment(line)
        except ConfigError as exc:
            raise ConfigError(f"{path}:{lineno}: {exc}") from None
        out[key] = value
    return out


def dump_flat(values: dict[str, Any]) -> str:
    return "".join(f"{k} = {json.dumps(values[k])}\n" for k in sorted(values))


def config_hash(values: dict[str, Any]) -> str:
    canon = json.dumps(values, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()
