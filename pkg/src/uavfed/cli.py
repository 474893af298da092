"""Command-line front end: train, oracle, validate, sweep.

Exit codes: 0 success, 1 configuration error, 2 check failure, 3 runtime error.
Output lands under ``--out`` or, by default, under ``$UAVFED_OUT`` (``./runs``
when unset).
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, game_oracle, presets
from .auction import sp_utilities
from .config import ConfigError, config_hash, dump_flat, load_flat, parse_assignment
from .fedtrain import METRICS_SCHEMA_VERSION, evaluate_policy, train, write_metrics
from .policy import load_params, save_params

log = logging.getLogger("uavfed")

EXIT_OK, EXIT_CONFIG, EXIT_CHECK, EXIT_RUNTIME = 0, 1, 2, 3
OUT_ENV = "UAVFED_OUT"
VALIDATION_SCHEMA_VERSION = 1
SUMMARY_FIELDS = ["preset", "seed", "status", "epochs", "final_mean_total_reward",
                  "last10_mean_total_reward", "final_loss", "final_good_count", "run_dir"]


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _now() -> str:
    return time.strftime("%Y-%m-%dT%H:%M:%S%z")


def _out_root(args) -> Path:
    return Path(args.out) if args.out else Path(os.environ.get(OUT_ENV, "runs"))


def resolve_values(args) -> dict:
    file_values = load_flat(args.config) if args.config else {}
    preset = args.preset or file_values.get("preset")
    overrides = dict(parse_assignment(s) for s in args.set or [])
    for key in ("epochs", "seed"):
        if getattr(args, key, None) is not None:
            overrides[key] = getattr(args, key)
    return presets.resolve(preset, file_values, overrides)


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


# -------------------------------------------------------------------- train


def run_train(values: dict, run_dir: Path, argv: list[str]) -> dict:
    """Train one configuration into ``run_dir``; returns the manifest."""
    scenario, cfg = presets.build(values)
    run_dir.mkdir(parents=True, exist_ok=True)
    paths = {"metrics": "metrics.csv", "params": "params.bin", "config": "config.txt",
             "manifest": "manifest.json"}
    manifest = {
        "command": argv,
        "config_hash": config_hash(values),
        "config": values,
        "seeds": {"train": cfg.seed, "scenario": scenario.seed},
        "version": __version__,
        "metrics_schema_version": METRICS_SCHEMA_VERSION,
        "started": _now(),
        "outputs": paths,
        "status": "running",
    }
    (run_dir / paths["config"]).write_text(dump_flat(values))
    _write_json(run_dir / paths["manifest"], manifest)
    log.info("training %s into %s", manifest["config_hash"][:12], run_dir)

    def progress(rec):
        log.debug("epoch %d reward %.4g good %d", rec.epoch, rec.mean_total_reward, rec.good_count)

    every = int(values.get("snapshot_every", 0))

    def snapshot(epoch, params):
        if every > 0 and epoch % every == 0:
            save_params(run_dir / f"params_e{epoch:05d}.bin", params, seed=cfg.seed)

    result = train(scenario, cfg, on_epoch=progress, on_params=snapshot)
    write_metrics(run_dir / paths["metrics"], result.records, scenario.n_sps)
    save_params(run_dir / paths["params"], result.params, seed=cfg.seed)
    manifest.update(finished=_now(), status="complete", messages=result.messages)
    _write_json(run_dir / paths["manifest"], manifest)
    return manifest


def cmd_train(args) -> int:
    values = resolve_values(args)
    scenario, cfg = presets.build(values)
    if args.dry_run:
        print(dump_flat(values), end="")
        print(f"# config_hash = {config_hash(values)}")
        print(f"# alpha_B = {cfg.filter.byz_fraction_bound}")
        print(f"# action_dim = {scenario.action_dim}  obs_dim = {scenario.obs_dim}")
        print(f"# penalty_delay_s = {scenario.utility.penalty_delay_s!r}")
        return EXIT_OK
    if args.out:
        run_dir = Path(args.out)
    else:
        name = args.preset or "custom"
        run_dir = _out_root(args) / f"{name}-seed{cfg.seed}-{config_hash(values)[:8]}"
    run_train(values, run_dir, list(args.argv))
    print(run_dir)
    return EXIT_OK


# ------------------------------------------------------------------- oracle


def cmd_oracle(args) -> int:
    sizes = game_oracle.OracleSizes(
        auction_levels=args.auction_levels, identity_levels=args.identity_levels,
        identity_samples=args.identity_samples, brd_starts=args.brd_starts,
        brd_games=args.brd_games, stage_levels=args.stage_levels, stages=args.stages,
        seed=args.seed)
    results = game_oracle.run_suite(sizes, negative_controls=args.negative_controls)
    lines = []
    ok = True
    for report, expect in results:
        as_expected = report.passed == expect
        ok &= as_expected
        tag = "ok" if as_expected else "UNEXPECTED"
        lines.append(f"[{tag}] {report.summary()}")
        if report.counterexample is not None:
            lines.append(f"    counterexample: {json.dumps(report.counterexample)}")
    text = "\n".join(lines) + "\n"
    print(text, end="")
    if args.report:
        Path(args.report).write_text(text)
    return EXIT_OK if ok else EXIT_CHECK


# ----------------------------------------------------------------- validate


def offline_utilities(batch, scenario) -> np.ndarray:
    """Per-episode negative utilities recomputed from the logged auction results."""
    per_step = [sp_utilities(res, scenario.utility) for res in batch.results]  # each (E, N)
    return -np.sum(per_step, axis=0)


def cmd_validate(args) -> int:
    values = resolve_values(args)
    scenario, _ = presets.build(values)
    try:
        params, header = load_params(args.params)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot load snapshot: {exc}") from exc
    if (params.input_dim, params.output_dim) != (scenario.obs_dim, scenario.action_dim):
        raise ConfigError(f"snapshot dims {(params.input_dim, params.output_dim)} do not match "
                          f"scenario {(scenario.obs_dim, scenario.action_dim)}")
    neg, _ = evaluate_policy(params, scenario, args.episodes, seed=args.seed)
    out = Path(args.out) if args.out else _out_root(args) / "validate"
    out.mkdir(parents=True, exist_ok=True)
    N = scenario.n_sps
    with open(out / "validation.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["episode"] + [f"neg_utility_sp{n}" for n in range(N)] + ["mean"])
        for e, row in enumerate(neg):
            w.writerow([e] + [repr(float(x)) for x in row] + [repr(float(row.mean()))])
    summary = {"episodes": args.episodes, "seed": args.seed,
               "schema_version": VALIDATION_SCHEMA_VERSION, "snapshot": str(args.params),
               "snapshot_seed": header.get("seed"), "config_hash": config_hash(values)}
    if len(neg):
        per_episode = neg.mean(axis=1)
        summary.update(mean=float(per_episode.mean()), std=float(per_episode.std()),
                       min=float(per_episode.min()), max=float(per_episode.max()),
                       per_sp_mean=[float(x) for x in neg.mean(axis=0)],
                       per_sp_min=[float(x) for x in neg.min(axis=0)],
                       per_sp_max=[float(x) for x in neg.max(axis=0)])
    _write_json(out / "summary.json", summary)
    print(json.dumps({k: summary.get(k) for k in ("episodes", "mean", "min", "max")}))
    return EXIT_OK


# -------------------------------------------------------------------- sweep


def _summary_row(preset: str, seed: int, run_dir: Path, status: str) -> dict:
    row = dict.fromkeys(SUMMARY_FIELDS, "")
    row.update(preset=preset, seed=seed, status=status, run_dir=str(run_dir))
    metrics = run_dir / "metrics.csv"
    if status == "complete" and metrics.exists():
        with open(metrics) as fh:
            rows = list(csv.DictReader(fh))
        if rows:
            rewards = [float(r["mean_total_reward"]) for r in rows]
            row.update(epochs=len(rows), final_mean_total_reward=rewards[-1],
                       last10_mean_total_reward=float(np.mean(rewards[-10:])),
                       final_loss=float(rows[-1]["loss"]),
                       final_good_count=int(rows[-1]["good_count"]))
    return row


def cmd_sweep(args) -> int:
    root = _out_root(args)
    root.mkdir(parents=True, exist_ok=True)
    names = [p for p in args.presets.split(",") if p]
    seeds = [int(s) for s in args.seeds.split(",") if s]
    rows = []
    failed = 0
    for name in names:
        for seed in seeds:
            run_dir = root / name / f"seed{seed}"
            manifest = run_dir / "manifest.json"
            if manifest.exists() and json.loads(manifest.read_text()).get("status") == "complete":
                log.info("skipping completed run %s", run_dir)
                rows.append(_summary_row(name, seed, run_dir, "complete"))
                continue
            overrides = dict(parse_assignment(s) for s in args.set or [])
            overrides.update(seed=seed)
            if args.epochs is not None:
                overrides["epochs"] = args.epochs
            try:
                values = presets.resolve(name, None, overrides)
                run_train(values, run_dir, list(args.argv) + [f"[{name} seed={seed}]"])
                rows.append(_summary_row(name, seed, run_dir, "complete"))
            except Exception as exc:  # a failed run is recorded and the sweep continues
                log.error("run %s seed %d failed: %s", name, seed, exc)
                failed += 1
                rows.append(_summary_row(name, seed, run_dir, f"failed: {exc}"))
    with open(root / "summary.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, SUMMARY_FIELDS, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    print(root / "summary.csv")
    return EXIT_RUNTIME if failed else EXIT_OK


# ------------------------------------------------------------------- parser


def _config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--preset", choices=sorted(presets.PRESETS))
    p.add_argument("--config", help="flat key = value file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one key")
    p.add_argument("--seed", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="uavfed", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="federated training run")
    _config_args(p)
    p.add_argument("--epochs", type=int)
    p.add_argument("--out", help="run directory (default: $UAVFED_OUT/<preset>-seed<s>-<hash>)")
    p.add_argument("--dry-run", action="store_true", help="print the resolved config and exit")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("oracle", help="brute-force game property checks")
    d = game_oracle.OracleSizes()
    p.add_argument("--auction-levels", type=int, default=d.auction_levels)
    p.add_argument("--identity-levels", type=int, default=d.identity_levels)
    p.add_argument("--identity-samples", type=int, default=d.identity_samples)
    p.add_argument("--brd-starts", type=int, default=d.brd_starts)
    p.add_argument("--brd-games", type=int, default=d.brd_games)
    p.add_argument("--stage-levels", type=int, default=d.stage_levels)
    p.add_argument("--stages", type=int, default=d.stages)
    p.add_argument("--seed", type=int, default=d.seed)
    p.add_argument("--negative-controls", action="store_true")
    p.add_argument("--report", help="also write the report to this file")
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("validate", help="evaluate a frozen policy snapshot")
    p.add_argument("params", help="params.bin from a training run")
    p.add_argument("--preset", choices=sorted(presets.PRESETS))
    p.add_argument("--config")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.add_argument("--episodes", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("sweep", help="train every (preset, seed) pair")
    p.add_argument("--presets", required=True, help="comma-separated preset names")
    p.add_argument("--seeds", default="0", help="comma-separated seeds")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.add_argument("--epochs", type=int)
    p.add_argument("--out", help="sweep root (default: $UAVFED_OUT)")
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    args.argv = ["uavfed"] + argv
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except game_oracle.EnumerationError as exc:
        print(f"check error: {exc}", file=sys.stderr)
        return EXIT_CHECK
    except Exception as exc:
        log.debug("runtime failure", exc_info=True)
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
