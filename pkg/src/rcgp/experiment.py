"""
Experiment orchestration: config files, run records, and the baseline / tune /
evaluate / report phases.

Records are stored one JSON file per run::

    <out>/records/<dataset>/<operator>/<label>/seed-0007.json
    <out>/tuning/<dataset>/<operator>/tuning-seed-0003.json
    <out>/report/table.csv, table.json, medians.csv
"""
from __future__ import annotations

import csv
import io
import json
import logging
import os
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Iterable, Sequence

import yaml

from . import __version__
from .cgp import CgpConfig, DEFAULT_FUNCTION_NAMES, evaluate_batch, function_set
from .evolution import CROSSOVER_KINDS, DEFAULT_BUDGET, HyperparameterConfiguration, evolve
from .hpo import STRATEGIES, HyperparameterSpace, TuningResult, tune
from .regression import (
    Dataset, DatasetError, design_matrix, fitness_on, kfold, load_dataset, mse,
    serialise_fitness, split,
)
from .stats import QUARTILE_METHOD, TEST_CONVENTION, compare_groups, summarise

logger = logging.getLogger(__name__)

TIMESTAMP_FIELDS = ("started_at", "finished_at")
BASELINE_HP = HyperparameterConfiguration()


class ConfigError(ValueError):
    pass


def parse_seeds(spec: Any) -> list[int]:
    """Accept ``"1..30"``, ``"1,2,5"``, an int, or a list of those."""
    if isinstance(spec, bool):
        raise ConfigError(f"invalid seed specification {spec!r}")
    if isinstance(spec, int):
        return [spec]
    if isinstance(spec, str):
        out = []
        for part in spec.split(","):
            part = part.strip()
            if ".." in part:
                a, b = part.split("..", 1)
                try:
                    lo, hi = int(a), int(b)
                except ValueError:
                    raise ConfigError(f"invalid seed range {part!r}") from None
                if lo > hi:
                    raise ConfigError(f"empty seed range {part!r}")
                out.extend(range(lo, hi + 1))
            elif part:
                try:
                    out.append(int(part))
                except ValueError:
                    raise ConfigError(f"invalid seed {part!r}") from None
        return out
    if isinstance(spec, (list, tuple)):
        return [s for item in spec for s in parse_seeds(item)]
    raise ConfigError(f"invalid seed specification {spec!r}")


@dataclass
class ExperimentConfig:
    dataset: Path
    operators: tuple[str, ...] = ("subgraph", "discrete", "none")
    functions: tuple[str, ...] = DEFAULT_FUNCTION_NAMES
    max_arity: int = 2
    constants: tuple[float, ...] = ()
    restricted_reconnect: bool = False
    baselines: dict[str, HyperparameterConfiguration] = field(
        default_factory=lambda: {"baseline-100": BASELINE_HP}
    )
    budget: int = DEFAULT_BUDGET
    train_fraction: float = 0.75
    folds: int = 5
    split_seed: int = 42
    fold_seed: int = 42
    cgp_seed: int = 42
    evaluation_seeds: tuple[int, ...] = tuple(range(1, 31))
    tuning_seeds: tuple[int, ...] = tuple(range(1, 11))
    strategy: str = "random"
    trials: int = 200
    tuning_budget: int | None = None
    space: HyperparameterSpace = field(default_factory=HyperparameterSpace)
    best_incumbent_only: bool = False
    out: Path = Path("runs")
    workers: int = 1

    def validate(self) -> None:
        if not self.dataset.is_file():
            raise ConfigError(f"dataset file not found: {self.dataset}")
        bad = [op for op in self.operators if op not in CROSSOVER_KINDS]
        if bad or not self.operators:
            raise ConfigError(f"operators must be a non-empty subset of {CROSSOVER_KINDS}, got {list(self.operators)}")
        if not self.evaluation_seeds:
            raise ConfigError("seeds.evaluation is empty")
        if not self.tuning_seeds:
            raise ConfigError("seeds.tuning is empty")
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"tuning.strategy must be one of {STRATEGIES}")
        if self.trials < 1:
            raise ConfigError("tuning.trials must be >= 1")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if not 0 < self.train_fraction < 1:
            raise ConfigError("train_fraction must lie in (0, 1)")
        if self.folds < 2:
            raise ConfigError("folds must be >= 2")
        for label, hp in self.baselines.items():
            if self.budget < hp.population_size:
                raise ConfigError(f"budget {self.budget} < population_size of baseline {label!r}")
        try:
            function_set(self.functions)
        except ValueError as e:
            raise ConfigError(str(e)) from None

    @property
    def effective_tuning_budget(self) -> int:
        return self.tuning_budget if self.tuning_budget is not None else self.budget


def _hp(d: Any, where: str) -> HyperparameterConfiguration:
    if not isinstance(d, dict):
        raise ConfigError(f"{where}: expected a mapping of hyperparameters")
    merged = {**BASELINE_HP.to_dict(), **d}
    if "num_function_nodes" in d and "levels_back" not in d:
        merged["levels_back"] = min(merged["levels_back"], merged["num_function_nodes"])
    try:
        return HyperparameterConfiguration.from_dict(merged)
    except (ValueError, TypeError) as e:
        raise ConfigError(f"{where}: {e}") from None


def load_config(path: str | Path | None = None, overrides: dict | None = None) -> ExperimentConfig:
    """Build an :class:`ExperimentConfig` from a YAML file plus command-line overrides."""
    raw: dict = {}
    base_dir = Path(".")
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            raw = yaml.safe_load(path.read_text()) or {}
        except yaml.YAMLError as e:
            raise ConfigError(f"{path}: {e}") from None
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        base_dir = path.parent
    overrides = {k: v for k, v in (overrides or {}).items() if v is not None}

    known = {"dataset", "operators", "restricted_reconnect", "cgp", "baselines", "budget",
             "train_fraction", "folds", "seeds", "tuning", "evaluate", "out", "workers"}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown config key(s): {sorted(unknown)}")

    def resolve(p) -> Path:
        p = Path(p)
        return p if p.is_absolute() else base_dir / p

    kw: dict[str, Any] = {}
    if "dataset" in overrides:
        kw["dataset"] = Path(overrides["dataset"])
    elif "dataset" in raw:
        kw["dataset"] = resolve(raw["dataset"])
    else:
        raise ConfigError("no dataset given (config key 'dataset' or --dataset)")

    ops = overrides.get("operators", raw.get("operators"))
    if ops is not None:
        kw["operators"] = tuple([ops] if isinstance(ops, str) else ops)
    cgp = raw.get("cgp", {}) or {}
    if "functions" in cgp:
        kw["functions"] = tuple(cgp["functions"])
    if "max_arity" in cgp:
        kw["max_arity"] = int(cgp["max_arity"])
    if "constants" in cgp:
        kw["constants"] = tuple(float(c) for c in cgp["constants"])
    if "restricted_reconnect" in raw:
        kw["restricted_reconnect"] = bool(raw["restricted_reconnect"])
    if "baselines" in raw:
        if not isinstance(raw["baselines"], dict) or not raw["baselines"]:
            raise ConfigError("baselines must be a non-empty mapping label -> hyperparameters")
        kw["baselines"] = {str(k): _hp(v, f"baselines.{k}") for k, v in raw["baselines"].items()}
    for key, cast in (("budget", int), ("train_fraction", float), ("folds", int), ("workers", int)):
        if key in raw:
            kw[key] = cast(raw[key])
    if "budget" in overrides:
        kw["budget"] = int(overrides["budget"])
    if "workers" in overrides:
        kw["workers"] = int(overrides["workers"])

    seeds = raw.get("seeds", {}) or {}
    for key in ("split", "folds", "cgp"):
        if key in seeds:
            kw[{"split": "split_seed", "folds": "fold_seed", "cgp": "cgp_seed"}[key]] = int(seeds[key])
    if "evaluation" in seeds:
        kw["evaluation_seeds"] = tuple(parse_seeds(seeds["evaluation"]))
    if "tuning" in seeds:
        kw["tuning_seeds"] = tuple(parse_seeds(seeds["tuning"]))
    if "evaluation_seeds" in overrides:
        kw["evaluation_seeds"] = tuple(parse_seeds(overrides["evaluation_seeds"]))
    if "tuning_seeds" in overrides:
        kw["tuning_seeds"] = tuple(parse_seeds(overrides["tuning_seeds"]))

    tuning = raw.get("tuning", {}) or {}
    if "strategy" in tuning:
        kw["strategy"] = str(tuning["strategy"])
    if "trials" in tuning:
        kw["trials"] = int(tuning["trials"])
    if "trials" in overrides:
        kw["trials"] = int(overrides["trials"])
    if tuning.get("budget") is not None:
        kw["tuning_budget"] = int(tuning["budget"])
    if "space" in tuning:
        try:
            kw["space"] = HyperparameterSpace.from_dict(tuning["space"])
        except (ValueError, TypeError) as e:
            raise ConfigError(f"tuning.space: {e}") from None
    evaluate_section = raw.get("evaluate", {}) or {}
    if "best_incumbent_only" in evaluate_section:
        kw["best_incumbent_only"] = bool(evaluate_section["best_incumbent_only"])

    if "out" in overrides:
        kw["out"] = Path(overrides["out"])
    elif "out" in raw:
        kw["out"] = resolve(raw["out"])

    try:
        config = ExperimentConfig(**kw)
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e)) from None
    config.validate()
    return config


# ---------------------------------------------------------------- persistence


def write_json_atomic(path: Path, payload: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-", suffix=".json")
    with os.fdopen(fd, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def record_path(out: Path, dataset: str, operator: str, label: str, seed: int) -> Path:
    return out / "records" / dataset / operator / label / f"seed-{seed:04d}.json"


def tuning_path(out: Path, dataset: str, operator: str, tuning_seed: int) -> Path:
    return out / "tuning" / dataset / operator / f"tuning-seed-{tuning_seed:04d}.json"


def cgp_base_for(config: ExperimentConfig, dataset: Dataset, hp: HyperparameterConfiguration) -> CgpConfig:
    return CgpConfig.from_names(
        config.functions,
        num_inputs=dataset.n_features + len(config.constants),
        num_outputs=1,
        num_function_nodes=hp.num_function_nodes,
        max_arity=config.max_arity,
        levels_back=hp.levels_back,
        constants=config.constants,
    )


@dataclass
class RunTask:
    dataset: Dataset
    operator: str
    label: str
    hp: HyperparameterConfiguration
    seed: int
    budget: int
    split_seed: int
    train_fraction: float
    functions: tuple[str, ...]
    max_arity: int
    constants: tuple[float, ...]
    restricted_reconnect: bool
    path: Path
    tuning_seed: int | None = None


def execute_run(task: RunTask) -> dict:
    """One evolution on the training rows plus test-set scoring of its best genome."""
    started = _now()
    ds = task.dataset
    sp = split(ds, task.train_fraction, task.split_seed)
    cgp = CgpConfig.from_names(
        task.functions, num_inputs=ds.n_features + len(task.constants), num_outputs=1,
        num_function_nodes=task.hp.num_function_nodes, max_arity=task.max_arity,
        levels_back=task.hp.levels_back, constants=task.constants,
    )
    result = evolve(
        fitness_on(sp.train_indices, ds, cgp), task.hp, cgp, task.budget,
        task.operator, task.seed, task.restricted_reconnect,
    )
    X_test = design_matrix(ds, sp.test_indices, cgp)
    test = mse(evaluate_batch(result.best.genome, cgp, X_test)[:, 0], ds.targets[list(sp.test_indices)])
    return {
        "dataset": ds.name,
        "crossover_kind": task.operator,
        "label": task.label,
        "configuration": task.hp.to_dict(),
        "seed": task.seed,
        "tuning_seed": task.tuning_seed,
        "split_seed": task.split_seed,
        "budget": task.budget,
        "train_mse": serialise_fitness(result.best.fitness),
        "test_mse": serialise_fitness(test),
        "evaluations_used": result.evaluations_used,
        "generations": result.generations,
        "best_genome": [int(g) for g in result.best.genome],
        "function_set": list(task.functions),
        "restricted_reconnect": task.restricted_reconnect,
        "engine_version": __version__,
        "started_at": started,
        "finished_at": _now(),
    }


def _run_and_store(task: RunTask) -> dict:
    try:
        record = execute_run(task)
    except Exception as e:  # recorded as a named failure, never silently dropped
        failure = {
            "dataset": task.dataset.name, "crossover_kind": task.operator, "label": task.label,
            "seed": task.seed, "error": f"{type(e).__name__}: {e}", "failed": True,
            "finished_at": _now(),
        }
        write_json_atomic(task.path.with_name(task.path.stem + ".failed.json"), failure)
        return failure
    write_json_atomic(task.path, record)
    return record


def run_tasks(tasks: Sequence[RunTask], workers: int = 1, force: bool = False) -> list[dict]:
    """Execute tasks, skipping those whose record already exists unless ``force``."""
    results: list[dict | None] = [None] * len(tasks)
    pending = []
    for i, t in enumerate(tasks):
        if t.path.is_file() and not force:
            results[i] = json.loads(t.path.read_text())
        else:
            pending.append(i)
    logger.info("%d runs to execute, %d already recorded", len(pending), len(tasks) - len(pending))
    if workers > 1 and len(pending) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for i, rec in zip(pending, pool.map(_run_and_store, [tasks[i] for i in pending])):
                results[i] = rec
    else:
        for i in pending:
            results[i] = _run_and_store(tasks[i])
    return results  # type: ignore[return-value]


def _task(config, ds, operator, label, hp, seed, tuning_seed=None) -> RunTask:
    return RunTask(
        dataset=ds, operator=operator, label=label, hp=hp, seed=seed, budget=config.budget,
        split_seed=config.split_seed, train_fraction=config.train_fraction,
        functions=tuple(config.functions), max_arity=config.max_arity,
        constants=tuple(config.constants), restricted_reconnect=config.restricted_reconnect,
        path=record_path(config.out, ds.name, operator, label, seed), tuning_seed=tuning_seed,
    )


def _load(config: ExperimentConfig) -> Dataset:
    try:
        return load_dataset(config.dataset)
    except DatasetError as e:
        raise ConfigError(str(e)) from None


def cmd_baseline(config: ExperimentConfig, force: bool = False) -> list[dict]:
    """Runs of every baseline configuration, for every operator and evaluation seed."""
    ds = _load(config)
    cgp_base_for(config, ds, BASELINE_HP)  # structural check before any run
    tasks = [
        _task(config, ds, op, label, hp, seed)
        for op in config.operators
        for label, hp in config.baselines.items()
        for seed in config.evaluation_seeds
    ]
    return run_tasks(tasks, config.workers, force)


def tuning_to_dict(result: TuningResult, config: ExperimentConfig, dataset: str, operator: str, tuning_seed: int) -> dict:
    return {
        "dataset": dataset,
        "crossover_kind": operator,
        "tuning_seed": tuning_seed,
        "strategy": result.strategy,
        "incumbent": result.incumbent.to_dict(),
        "incumbent_trial": result.incumbent_trial,
        "incumbent_objective": serialise_fitness(result.incumbent_objective),
        "trials": [t.to_dict() for t in result.trials],
        "space": config.space.to_dict(),
        "space_note": "bounds are configurable stand-ins, not a published tuning scenario",
        "budget": config.effective_tuning_budget,
        "folds": config.folds,
        "split_seed": config.split_seed,
        "fold_seed": config.fold_seed,
        "cgp_seed": config.cgp_seed,
        "engine_version": __version__,
    }


def _tune_one(args) -> dict:
    config, ds, op, tuning_seed = args
    sp = split(ds, config.train_fraction, config.split_seed)
    folds = kfold(sp.train_indices, config.folds, config.fold_seed)
    base = cgp_base_for(config, ds, BASELINE_HP)
    result = tune(
        config.space, ds, sp, folds, config.strategy, config.trials, op,
        config.effective_tuning_budget, tuning_seed, base, config.cgp_seed,
        config.restricted_reconnect,
    )
    payload = tuning_to_dict(result, config, ds.name, op, tuning_seed)
    write_json_atomic(tuning_path(config.out, ds.name, op, tuning_seed), payload)
    return payload


def cmd_tune(config: ExperimentConfig) -> list[dict]:
    """One tuning campaign per operator and tuning seed, sharing split and fold seeds."""
    ds = _load(config)
    if config.effective_tuning_budget < config.space.population_size[1]:
        raise ConfigError("tuning budget is smaller than the largest population size in the space")
    jobs = [(config, ds, op, s) for op in config.operators for s in config.tuning_seeds]
    if config.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            return list(pool.map(_tune_one, jobs))
    return [_tune_one(j) for j in jobs]


def load_incumbents(config: ExperimentConfig, dataset: str, operator: str) -> list[tuple[int, HyperparameterConfiguration, float]]:
    """(tuning seed, incumbent, objective) for every configured tuning seed."""
    out = []
    for s in config.tuning_seeds:
        path = tuning_path(config.out, dataset, operator, s)
        if not path.is_file():
            raise ConfigError(f"missing incumbent file {path}")
        data = json.loads(path.read_text())
        try:
            hp = HyperparameterConfiguration.from_dict(data["incumbent"])
        except (KeyError, ValueError, TypeError) as e:
            raise ConfigError(f"{path}: invalid incumbent: {e}") from None
        outside = config.space.contains(hp)
        if outside:
            raise ConfigError(f"{path}: incumbent field(s) outside the tuning space: {', '.join(outside)}")
        out.append((s, hp, float(data.get("incumbent_objective", float("inf")))))
    return out


def cmd_evaluate(config: ExperimentConfig, force: bool = False) -> list[dict]:
    """Full-training-set runs of each incumbent for every evaluation seed."""
    ds = _load(config)
    tasks = []
    for op in config.operators:
        incumbents = load_incumbents(config, ds.name, op)
        if config.best_incumbent_only:
            incumbents = [min(incumbents, key=lambda t: (t[2], t[0]))]
        for tuning_seed, hp, _ in incumbents:
            if config.budget < hp.population_size:
                raise ConfigError(f"budget {config.budget} < population_size of incumbent {tuning_seed}")
            for seed in config.evaluation_seeds:
                tasks.append(_task(config, ds, op, f"tuned-{tuning_seed:04d}", hp, seed, tuning_seed))
    return run_tasks(tasks, config.workers, force)


# ---------------------------------------------------------------- reporting


def collect_records(dirs: Iterable[str | Path]) -> list[dict]:
    records = []
    for d in dirs:
        d = Path(d)
        if not d.exists():
            raise ConfigError(f"record directory not found: {d}")
        for p in sorted(d.rglob("seed-*.json")):
            if p.name.endswith(".failed.json"):
                continue
            records.append(json.loads(p.read_text()))
    return records


def mask_timestamps(record: dict) -> dict:
    return {k: v for k, v in record.items() if k not in TIMESTAMP_FIELDS}


def _fmt(v: float) -> str:
    return repr(float(v))


def build_report(records: Sequence[dict], metric: str = "test_mse", alpha: float = 0.05,
                 group_by: str = "operator") -> dict:
    """Table-shaped summary: one row per dataset, one cell per group.

    ``group_by="operator"`` keeps, per dataset and operator, the configuration
    label with the lowest median; ``"config"`` makes every operator/label its own group.
    """
    if group_by not in ("operator", "config"):
        raise ValueError("group_by must be 'operator' or 'config'")
    cells: dict[tuple[str, str, str], list[float]] = {}
    for r in records:
        cells.setdefault((r["dataset"], r["crossover_kind"], r["label"]), []).append(float(r[metric]))

    medians = []
    for (ds, op, label), vals in sorted(cells.items()):
        s = summarise(vals)
        medians.append({"dataset": ds, "crossover_kind": op, "label": label,
                        "median": s.median, "q1": s.q1, "q3": s.q3, "n": s.n})

    datasets = sorted({k[0] for k in cells})
    table_groups: dict[str, dict[str, tuple[str, list[float]]]] = {}
    for ds in datasets:
        table_groups[ds] = {}
        if group_by == "config":
            for (d, op, label), vals in cells.items():
                if d == ds:
                    table_groups[ds][f"{op}/{label}"] = (label, vals)
        else:
            for op in sorted({k[1] for k in cells if k[0] == ds}):
                options = [(label, vals) for (d, o, label), vals in cells.items() if d == ds and o == op]
                label, vals = min(options, key=lambda lv: (summarise(lv[1]).median, lv[0]))
                table_groups[ds][op] = (label, vals)
    group_names = sorted({g for row in table_groups.values() for g in row})

    rows = []
    for ds in datasets:
        present = table_groups[ds]
        row = {"dataset": ds, "cells": {}}
        if len(present) >= 2:
            verdict = compare_groups({g: v for g, (_, v) in present.items()}, alpha)
            best, tied, pv = verdict.best_group, verdict.tied_with_best, verdict.p_values
        else:
            best = next(iter(present))
            tied, pv = {best}, {}
        for g in group_names:
            if g not in present:
                row["cells"][g] = None
                continue
            label, vals = present[g]
            s = summarise(vals)
            row["cells"][g] = {
                "label": label, "median": s.median, "q1": s.q1, "q3": s.q3, "n": s.n,
                "best": g == best, "tied": g in tied,
                "p_vs_best": None if g == best or not pv else pv[(g, best)],
            }
        rows.append(row)
    return {
        "metadata": {
            "metric": metric, "alpha": alpha, "group_by": group_by,
            "quartiles": QUARTILE_METHOD, "test": TEST_CONVENTION,
            "multiple_comparisons": "none (one-vs-best)", "engine_version": __version__,
        },
        "groups": group_names,
        "rows": rows,
        "medians": medians,
    }


def report_table_csv(report: dict) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    header = ["dataset"]
    for g in report["groups"]:
        header += [f"{g}_median", f"{g}_q1", f"{g}_q3", f"{g}_best", f"{g}_tied"]
    w.writerow(header)
    for row in report["rows"]:
        line = [row["dataset"]]
        for g in report["groups"]:
            c = row["cells"][g]
            if c is None:
                line += ["", "", "", "", ""]
            else:
                line += [_fmt(c["median"]), _fmt(c["q1"]), _fmt(c["q3"]), int(c["best"]), int(c["tied"])]
        w.writerow(line)
    return buf.getvalue()


def report_medians_csv(report: dict) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["dataset", "crossover_kind", "label", "median", "q1", "q3", "n"])
    for m in report["medians"]:
        w.writerow([m["dataset"], m["crossover_kind"], m["label"], _fmt(m["median"]), _fmt(m["q1"]), _fmt(m["q3"]), m["n"]])
    return buf.getvalue()


def cmd_report(dirs: Sequence[str | Path], out: str | Path, metric: str = "test_mse",
               alpha: float = 0.05, group_by: str = "operator") -> dict[str, Path]:
    records = collect_records(dirs)
    if not records:
        raise ConfigError("no run records found")
    report = build_report(records, metric, alpha, group_by)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"table_csv": out / "table.csv", "table_json": out / "table.json", "medians_csv": out / "medians.csv"}
    for key, text in (
        ("table_csv", report_table_csv(report)),
        ("table_json", json.dumps(report, indent=2, sort_keys=True) + "\n"),
        ("medians_csv", report_medians_csv(report)),
    ):
        tmp = paths[key].with_suffix(".tmp")
        tmp.write_text(text)
        os.replace(tmp, paths[key])
    return paths
