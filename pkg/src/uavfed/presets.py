"""Named experiment presets and the flat-config to (scenario, training) mapping."""
from __future__ import annotations

from typing import Any

from .config import DEFAULTS, ConfigError, ScenarioConfig, scenario_from_dict
from .estimator import EstimatorConfig
from .fedtrain import TrainConfig
from .filtering import FilterConfig

TRAIN_DEFAULTS: dict[str, Any] = {
    "epochs": 120,
    "batch_lo": 120,
    "batch_hi": 130,
    "mini_batch": 64,
    "learning_rate": 9e-5,
    "optimizer": "adam",
    "discount": 0.9,
    "advantage_eps": 1e-8,
    "n_byzantine": 2,
    "byz_noise_scale": 10.0,
    "filter_mode": "dtbf",
    "delta": 0.5,
    "omega_eps": 0.0,
    "byz_fraction_bound": 0.4,
    "ratio_direction": "unbiased",
    "weight_clip": 10.0,
    "static_epsilon": None,
    "hidden_dim": 64,
    "snapshot_every": 0,
}

# Base: 5 SPs, 2 Byzantine, 6 hotspots, 4 services, horizon 30.
_BASE = {"n_sps": 5, "n_hotspots": 6, "n_services": 4, "horizon": 30,
         "n_byzantine": 2, "byz_fraction_bound": 0.4}

# Desk scale: small enough to train in seconds per run.
_DESK = {"n_hotspots": 2, "n_services": 2, "horizon": 10, "batch_lo": 16, "batch_hi": 16,
         "mini_batch": 8, "epochs": 100, "learning_rate": 3e-3}

PRESETS: dict[str, dict[str, Any]] = {
    "table1-suburban": dict(_BASE),
    "5sp-2byz": dict(_BASE),
    "5sp-1byz": dict(_BASE, n_byzantine=1, byz_fraction_bound=0.2),
    "5sp-0byz": dict(_BASE, n_byzantine=0, byz_fraction_bound=0.0),
    "6sp-2byz": dict(_BASE, n_sps=6, byz_fraction_bound=0.333),
    "7sp-2byz": dict(_BASE, n_sps=7, byz_fraction_bound=0.286),
    "5sp-6svc": dict(_BASE, n_services=6),
    "5sp-8svc": dict(_BASE, n_services=8),
    "5sp-8hot": dict(_BASE, n_hotspots=8),
    "5sp-10hot": dict(_BASE, n_hotspots=10),
    "desk": dict(_DESK, n_sps=3, n_byzantine=0, byz_fraction_bound=0.0),
    "desk-5sp-2byz": dict(_DESK, n_sps=5, n_byzantine=2, byz_fraction_bound=0.4,
                          batch_lo=128, batch_hi=128, learning_rate=1e-3),
}

ALL_KEYS = set(DEFAULTS) | set(TRAIN_DEFAULTS)


def resolve(preset: str | None = None, file_values: dict | None = None,
            overrides: dict | None = None) -> dict[str, Any]:
    """Merge defaults, preset, config file and ``--set`` overrides (later wins)."""
    values: dict[str, Any] = {**DEFAULTS, **TRAIN_DEFAULTS}
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
        values.update(PRESETS[preset])
    for extra in (file_values or {}), (overrides or {}):
        unknown = set(extra) - ALL_KEYS - {"preset"}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        values.update({k: v for k, v in extra.items() if k != "preset"})
    return values


def build(values: dict[str, Any]) -> tuple[ScenarioConfig, TrainConfig]:
    scenario = scenario_from_dict({k: values[k] for k in DEFAULTS})
    n_byz = int(values["n_byzantine"])
    N = scenario.n_sps
    if not 0 <= n_byz < N:
        raise ConfigError(f"n_byzantine must lie in [0, {N})")
    try:
        cfg = TrainConfig(
            epochs=int(values["epochs"]),
            batch_range=(int(values["batch_lo"]), int(values["batch_hi"])),
            mini_batch=int(values["mini_batch"]),
            learning_rate=float(values["learning_rate"]),
            optimizer_mode=str(values["optimizer"]),
            byz_node_ids=tuple(range(N - n_byz, N)),
            byz_noise_scale=float(values["byz_noise_scale"]),
            filter_mode=str(values["filter_mode"]),
            estimator=EstimatorConfig(float(values["discount"]), float(values["advantage_eps"])),
            filter=FilterConfig(float(values["delta"]), float(values["omega_eps"]),
                                float(values["byz_fraction_bound"])),
            ratio_direction=str(values["ratio_direction"]),
            weight_clip=float(values["weight_clip"]),
            static_epsilon=(None if values["static_epsilon"] is None
                            else float(values["static_epsilon"])),
            hidden_dim=int(values["hidden_dim"]),
            seed=int(values["seed"]),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    return scenario, cfg


def action_dim_delta(preset: str, base: str = "table1-suburban") -> int:
    """Growth of the action dimension ``2KH`` relative to the base preset."""
    def dim(name):
        v = resolve(name)
        return 2 * int(v["n_hotspots"]) * int(v["n_services"])
    return dim(preset) - dim(base)
