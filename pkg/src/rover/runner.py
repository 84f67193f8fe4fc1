"""Seeded experiment suites, artifact persistence and the command-line entry point."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from rover import countdown as cd
from rover.learners import (
    METRICS_COLUMNS,
    METRICS_SCHEMA,
    TRAINERS,
    MetricsLog,
    TrainConfig,
    TrainingDiverged,
    final_policy,
)
from rover.metrics import distinct_solutions, mode_coverage, policy_entropy
from rover.policies import epsilon_greedy_from_q, sample_trajectory
from rover.theorems import run_suite
from rover.tree import RandomTreeParams, TreeMdp, build_didactic_mdp, build_random_tree

log = logging.getLogger(__name__)

SUMMARY_SCHEMA = "rover-summary/1"
PLOT_SCHEMA = "rover-plot/1"
KINDS = ("didactic", "random-trees", "countdown", "theorem-checks")
OUT_ENV = "ROVER_OUT"
EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2


class ConfigError(ValueError):
    pass


# Per-kind environment parameters and their defaults.
ENV_DEFAULTS: dict[str, dict[str, Any]] = {
    "didactic": {"eval_samples": 1000},
    "random-trees": {
        "eval_samples": 1000,
        "max_depth": 4,
        "branching": [2, 4],
        "reward_leaf_fraction": 0.2,
        "tree_seed": 0,
    },
    "countdown": {
        "eval_samples": 500,
        "n_instances": 50,
        "n_nums": 3,
        "low": 1,
        "high": 20,
        "instance_seed": 0,
    },
    "theorem-checks": {"n_trees": 500, "rhos": [1.0, 0.1, 0.01, 0.001]},
}


@dataclass
class ExperimentConfig:
    kind: str
    train: TrainConfig = field(default_factory=TrainConfig)
    methods: list[str] = field(default_factory=lambda: ["rover", "q-learning", "pg"])
    seeds: list[int] = field(default_factory=lambda: [0])
    env: dict[str, Any] = field(default_factory=dict)
    out: str = ""

    def resolved(self) -> dict:
        return {
            "schema": SUMMARY_SCHEMA,
            "kind": self.kind,
            "methods": list(self.methods),
            "seeds": list(self.seeds),
            "env": dict(self.env),
            "train": asdict(self.train),
        }


def _coerce(value: str) -> Any:
    try:
        return json.loads(value)
    except json.JSONDecodeError:
        return value


def build_config(raw: dict, overrides: dict | None = None) -> ExperimentConfig:
    """Validate a raw mapping (file contents merged with CLI overrides).

    Dotted override keys address nested sections: ``train.rho=0.1``,
    ``env.n_trees=100``.
    """
    raw = json.loads(json.dumps(raw))
    for key, value in (overrides or {}).items():
        node = raw
        *parents, leaf = key.split(".")
        for p in parents:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError(f"cannot override {key!r}")
        node[leaf] = value

    kind = raw.pop("kind", None)
    if kind not in KINDS:
        raise ConfigError(f"kind must be one of {KINDS}, got {kind!r}")
    train_raw = raw.pop("train", {}) or {}
    known = {f.name for f in fields(TrainConfig)}
    unknown = set(train_raw) - known
    if unknown:
        raise ConfigError(f"unknown train keys: {sorted(unknown)}")
    try:
        train = TrainConfig(**train_raw)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"invalid train section: {e}") from None

    methods = raw.pop("methods", ["rover", "q-learning", "pg"])
    if isinstance(methods, str):
        methods = [methods]
    bad = [m for m in methods if m not in TRAINERS]
    if kind != "theorem-checks" and (not methods or bad):
        raise ConfigError(f"unknown methods {bad}; choose from {sorted(TRAINERS)}")

    seeds = raw.pop("seeds", [train.seed])
    if isinstance(seeds, int):
        seeds = [seeds]
    if not seeds or not all(isinstance(s, int) for s in seeds):
        raise ConfigError("seeds must be a non-empty list of integers")

    env = dict(ENV_DEFAULTS[kind])
    env_raw = raw.pop("env", {}) or {}
    unknown = set(env_raw) - set(env)
    if unknown:
        raise ConfigError(f"unknown env keys for {kind}: {sorted(unknown)}")
    env.update(env_raw)
    out = raw.pop("out", "") or ""
    if raw:
        raise ConfigError(f"unknown config keys: {sorted(raw)}")
    cfg = ExperimentConfig(kind, train, list(methods), list(seeds), env, out)
    _validate_env(cfg)
    return cfg


def _validate_env(cfg: ExperimentConfig) -> None:
    env = cfg.env
    try:
        if cfg.kind == "random-trees":
            _random_tree_params(env)
        elif cfg.kind == "countdown":
            cd.CountdownParams(env["n_nums"], env["low"], env["high"])
            if not 2 <= env["n_nums"] <= cd.MAX_NUMS or env["n_instances"] < 1:
                raise ValueError("n_nums must be 2..4 and n_instances >= 1")
        elif cfg.kind == "theorem-checks":
            if env["n_trees"] < 1 or not env["rhos"] or min(env["rhos"]) <= 0:
                raise ValueError("n_trees >= 1 and positive rhos required")
        if cfg.kind != "theorem-checks" and env["eval_samples"] < 1:
            raise ValueError("eval_samples must be >= 1")
    except (ValueError, TypeError, KeyError) as e:
        raise ConfigError(f"invalid env for {cfg.kind}: {e}") from None


def _random_tree_params(env: dict) -> RandomTreeParams:
    return RandomTreeParams(
        max_depth=int(env["max_depth"]),
        branching=tuple(env["branching"]),
        reward_leaf_fraction=float(env["reward_leaf_fraction"]),
        seed=int(env["tree_seed"]),
    )


def load_config(path: str | Path, overrides: dict | None = None) -> ExperimentConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read config {path}: {e}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config file must hold a JSON object")
    return build_config(raw, overrides)


# -- number formatting -----------------------------------------------------


def round12(x: Any) -> Any:
    """Recursively fix floats to 12 significant digits for stable JSON."""
    if isinstance(x, dict):
        return {k: round12(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [round12(v) for v in x]
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if not math.isfinite(x) else float(format(x, ".12g"))
    return x


def write_json(obj: Any, path: Path) -> None:
    path.write_text(json.dumps(round12(obj), indent=2, sort_keys=True) + "\n")


def _stats(values: Sequence[float]) -> dict:
    a = np.asarray(values, dtype=np.float64)
    return {"mean": float(a.mean()), "std": float(a.std()), "values": [float(v) for v in a]}


# -- experiment kinds ------------------------------------------------------


def evaluate_method(
    mdp: TreeMdp, method: str, result, cfg: TrainConfig, n_samples: int, seed: int
) -> dict:
    pol = final_policy(mdp, method, result, cfg)
    rep = mode_coverage(mdp, pol, n_samples, np.random.default_rng([seed, 7919]))
    # Entropy of the policy each method actually acts with: Q-learning keeps
    # its final epsilon-greedy exploration.
    acting = pol
    if method == "q-learning":
        acting = epsilon_greedy_from_q(mdp, result, cfg.eps_end)
    ent = policy_entropy(mdp, acting)
    return {
        "success_rate": rep.success_rate,
        "mode_coverage": rep.coverage,
        "modes_found": len(rep.modes_found),
        "root_entropy": ent.root,
        "mean_traj_entropy": ent.mean,
    }


def _train_and_log(
    mdp: TreeMdp, method: str, cfg: TrainConfig, log_path: Path, meta: dict
):
    try:
        result, mlog = TRAINERS[method](mdp, cfg)
    except TrainingDiverged as e:
        e.log.meta.update(meta)
        e.log.to_csv(log_path)
        raise
    mlog.meta.update(meta)
    mlog.to_csv(log_path)
    return result


def _run_tree_kind(cfg: ExperimentConfig, mdp: TreeMdp, out: Path) -> dict:
    per_method = {}
    for method in cfg.methods:
        rows = []
        for seed in cfg.seeds:
            tc = cfg.train.replace(seed=seed)
            path = out / "logs" / f"{method}_seed{seed}.csv"
            result = _train_and_log(
                mdp, method, tc, path, {"kind": cfg.kind, "config": cfg.resolved()}
            )
            rows.append(evaluate_method(mdp, method, result, tc, cfg.env["eval_samples"], seed))
        per_method[method] = {k: _stats([r[k] for r in rows]) for k in rows[0]}
    return {
        "n_rewarded_leaves": len(mdp.rewarded_leaves()),
        "n_nodes": len(mdp),
        "methods": per_method,
    }


def run_didactic(cfg: ExperimentConfig, out: Path) -> dict:
    return _run_tree_kind(cfg, build_didactic_mdp(), out)


def run_random_trees(cfg: ExperimentConfig, out: Path) -> dict:
    return _run_tree_kind(cfg, build_random_tree(_random_tree_params(cfg.env)), out)


def run_countdown(cfg: ExperimentConfig, out: Path) -> dict:
    env = cfg.env
    params = cd.CountdownParams(n_nums=env["n_nums"], low=env["low"], high=env["high"])
    instances = [
        cd.generate_instance(params, env["instance_seed"] + k) for k in range(env["n_instances"])
    ]
    cd.save_instances(instances, out / "instances.txt")
    recall: dict[str, list[float]] = {m: [] for m in cfg.methods}
    success: dict[str, list[float]] = {m: [] for m in cfg.methods}
    n_solutions = []
    for k, inst in enumerate(instances):
        mdp = cd.countdown_to_tree(inst)
        oracle = cd.enumerate_solutions(inst)
        n_solutions.append(len(oracle))
        for method in cfg.methods:
            for seed in cfg.seeds:
                tc = cfg.train.replace(seed=seed + 1000 * k)
                path = out / "logs" / f"{method}_inst{k}_seed{seed}.csv"
                meta = {"kind": cfg.kind, "instance": str(inst), "config": cfg.resolved()}
                result = _train_and_log(mdp, method, tc, path, meta)
                pol = final_policy(mdp, method, result, tc)
                rng = np.random.default_rng([seed, k, 7919])
                samples = [sample_trajectory(mdp, pol, rng) for _ in range(env["eval_samples"])]
                found = [cd.decode_leaf(t.leaf) for t in samples if t.reward > 0]
                ds = distinct_solutions(found, oracle)
                recall[method].append(ds.recall)
                success[method].append(sum(t.reward > 0 for t in samples) / len(samples))
    return {
        "n_instances": len(instances),
        "mean_solutions_per_instance": float(np.mean(n_solutions)),
        "methods": {
            m: {"distinct_recall": _stats(recall[m]), "success_rate": _stats(success[m])}
            for m in cfg.methods
        },
    }


def run_theorem_checks(cfg: ExperimentConfig, out: Path) -> dict:
    report, checks = run_suite(cfg.env["n_trees"], tuple(cfg.env["rhos"]))
    with open(out / "theorem_checks.csv", "w", newline="") as f:
        w = csv.writer(f)
        rhos = list(cfg.env["rhos"])
        w.writerow(
            ["tree", "greedy_optimal", "zero_characterization", "enumeration"]
            + [f"bound_rho={r:g}" for r in rhos]
            + [f"value_rho={r:g}" for r in rhos]
        )
        for c in checks:
            w.writerow(
                [c.index, int(c.greedy_optimal), int(c.zero_characterization), "" if c.enumeration is None else int(c.enumeration)]
                + [format(c.bounds[r], ".12g") for r in rhos]
                + [format(c.values[r], ".12g") for r in rhos]
            )
    return report.as_dict()


RUNNERS = {
    "didactic": run_didactic,
    "random-trees": run_random_trees,
    "countdown": run_countdown,
    "theorem-checks": run_theorem_checks,
}


def run_experiment(cfg: ExperimentConfig) -> int:
    """Run every seed, persist logs, the resolved config and a JSON summary.

    Returns a process exit status.
    """
    out = Path(cfg.out) if cfg.out else Path(os.environ.get(OUT_ENV, "runs")) / cfg.kind
    (out / "logs").mkdir(parents=True, exist_ok=True)
    write_json(cfg.resolved(), out / "config.json")
    try:
        results = RUNNERS[cfg.kind](cfg, out)
    except TrainingDiverged as e:
        log.error("training diverged: %s", e)
        write_json({"schema": SUMMARY_SCHEMA, "config": cfg.resolved(), "error": str(e)}, out / "summary.json")
        return EXIT_RUNTIME
    write_json(
        {"schema": SUMMARY_SCHEMA, "config": cfg.resolved(), "results": results},
        out / "summary.json",
    )
    return EXIT_OK


# -- plot data -------------------------------------------------------------


def emit_plot_data(log_paths: Sequence[str | Path], out_path: str | Path) -> tuple[Path, Path]:
    """Merge metric logs into a long-format CSV plus a per-step mean/std table.

    Writes ``out_path`` with columns (method, seed, step, metric, value) and a
    sibling ``*_agg.csv`` with (method, step, metric, mean, std, n).
    """
    if not log_paths:
        raise ValueError("no metric logs given")
    long_rows = []
    for p in log_paths:
        mlog = MetricsLog.from_csv(p)
        if mlog.meta.get("schema") != METRICS_SCHEMA:
            raise ValueError(f"{p}: schema {mlog.meta.get('schema')!r} != {METRICS_SCHEMA!r}")
        method = mlog.meta.get("method", Path(p).stem)
        seed = mlog.meta.get("seed", "")
        for r in mlog.rows:
            for metric in METRICS_COLUMNS[2:]:
                long_rows.append((method, seed, r["step"], metric, r[metric]))

    out_path = Path(out_path)
    with open(out_path, "w", newline="") as f:
        f.write(f"# schema: {PLOT_SCHEMA}\n")
        w = csv.writer(f)
        w.writerow(["method", "seed", "step", "metric", "value"])
        for m, s, st, metric, v in long_rows:
            w.writerow([m, s, st, metric, format(v, ".12g")])

    groups: dict[tuple, list[float]] = {}
    for m, _, st, metric, v in long_rows:
        groups.setdefault((m, st, metric), []).append(v)
    agg_path = out_path.with_name(out_path.stem + "_agg.csv")
    with open(agg_path, "w", newline="") as f:
        f.write(f"# schema: {PLOT_SCHEMA}\n")
        w = csv.writer(f)
        w.writerow(["method", "step", "metric", "mean", "std", "n"])
        for (m, st, metric), vals in sorted(groups.items()):
            a = np.asarray(vals)
            w.writerow([m, st, metric, format(a.mean(), ".12g"), format(a.std(), ".12g"), len(a)])
    return out_path, agg_path


# -- CLI -------------------------------------------------------------------


def _parse_set(items: Sequence[str]) -> dict:
    out = {}
    for item in items:
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        out[key] = _coerce(value)
    return out


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rover", description="Uniform-policy valuation lab")
    sub = parser.add_subparsers(dest="command", required=True)
    for kind in KINDS:
        p = sub.add_parser(kind, help=f"run the {kind} experiment")
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--seed", type=int, action="append", help="seed (repeatable)")
        p.add_argument("--out", help=f"output directory (default: ${OUT_ENV}/<kind> or runs/<kind>)")
        p.add_argument("--method", action="append", choices=sorted(TRAINERS), help="method (repeatable)")
        p.add_argument(
            "--set", action="append", default=[], metavar="KEY=VALUE",
            help="override a config value, e.g. train.rho=0.1 or env.n_trees=100",
        )
    p = sub.add_parser("plot-data", help="merge metric logs into long-format CSV")
    p.add_argument("logs", nargs="*")
    p.add_argument("--out", required=True)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    args = make_parser().parse_args(argv)
    if args.command == "plot-data":
        try:
            long_path, agg_path = emit_plot_data(args.logs, args.out)
        except (ValueError, OSError) as e:
            log.error("%s", e)
            return EXIT_CONFIG
        log.info("wrote %s and %s", long_path, agg_path)
        return EXIT_OK

    try:
        overrides = _parse_set(args.set)
        if args.seed:
            overrides["seeds"] = args.seed
        if args.method:
            overrides["methods"] = args.method
        if args.out:
            overrides["out"] = args.out
        raw = {"kind": args.command}
        if args.config:
            cfg = load_config(args.config, {**overrides, "kind": args.command})
        else:
            cfg = build_config(raw, overrides)
    except ConfigError as e:
        log.error("config error: %s", e)
        return EXIT_CONFIG
    status = run_experiment(cfg)
    if status == EXIT_OK:
        log.info("done: %s", cfg.out or cfg.kind)
    return status


if __name__ == "__main__":
    sys.exit(main())
