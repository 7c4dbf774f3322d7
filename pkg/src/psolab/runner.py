"""Experiment protocol: enumerate the design space, run every cell, emit datasets.

A cell is one (configuration, problem, dimension) triple; it runs
`runs_per_cell` independent seeds at a budget of `budget_multiplier * D`
evaluations, takes the lower median of the final errors, and records
log10(max(median, 1e-9)) as the target. Cell seeds derive from the master
seed and the cell key, so any cell reproduces in isolation and the dataset
files are byte-identical at any worker count.
"""
from __future__ import annotations

import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from itertools import product

import numpy as np

from . import benchmark, swarm
from .swarm import MODULES, OPTIONS, ModuleConfiguration

__all__ = [
    "ERROR_FLOOR",
    "TARGET_FLOOR",
    "ExperimentPlan",
    "PerformanceDataset",
    "PlanError",
    "DatasetFormatError",
    "enumerate_configs",
    "lower_median",
    "cell_seed",
    "cell_key",
    "run_cell",
    "execute",
    "write_dataset",
    "read_dataset",
    "load_plan",
    "default_workers",
]

ERROR_FLOOR = 1e-9
TARGET_FLOOR = math.log10(ERROR_FLOOR)  # -9.0

WORKERS_ENV = "PSOLAB_WORKERS"


class PlanError(ValueError):
    """Invalid experiment plan."""


class DatasetFormatError(ValueError):
    """Malformed dataset file."""


@dataclass(frozen=True)
class ExperimentPlan:
    space: dict[str, tuple[str, ...]]
    problems: tuple[benchmark.ProblemSpec, ...]
    runs_per_cell: int = 10
    budget_multiplier: int = 5000
    master_seed: int = 1

    def __post_init__(self):
        if self.runs_per_cell < 1:
            raise PlanError("runs_per_cell must be >= 1")
        if self.budget_multiplier < 1:
            raise PlanError("budget_multiplier must be >= 1")
        if not self.problems:
            raise PlanError("plan selects no problems")
        if not enumerate_configs(self.space):
            raise PlanError("plan space yields no valid configurations")


@dataclass
class PerformanceDataset:
    """Rows = configurations, features = categorical module settings, target = capped log error."""

    meta: dict[str, str]
    feature_names: tuple[str, ...]
    levels: dict[str, tuple[str, ...]]
    codes: np.ndarray  # (n, q) int codes into levels
    targets: np.ndarray  # (n,) float

    @property
    def n_rows(self) -> int:
        return self.codes.shape[0]

    def row_tokens(self, r: int) -> tuple[str, ...]:
        return tuple(
            self.levels[name][self.codes[r, q]] for q, name in enumerate(self.feature_names)
        )

    @classmethod
    def from_rows(cls, feature_names, levels, rows, targets, meta=None):
        """Build from token rows; levels fixes each feature's full level order."""
        levels = {name: tuple(levels[name]) for name in feature_names}
        index = {
            name: {token: k for k, token in enumerate(levels[name])} for name in feature_names
        }
        codes = np.empty((len(rows), len(feature_names)), dtype=np.int64)
        for r, row in enumerate(rows):
            for q, name in enumerate(feature_names):
                try:
                    codes[r, q] = index[name][row[q]]
                except KeyError:
                    raise DatasetFormatError(
                        f"unknown level {row[q]!r} for feature {name!r}"
                    ) from None
        return cls(
            meta=dict(meta or {}),
            feature_names=tuple(feature_names),
            levels=levels,
            codes=codes,
            targets=np.asarray(targets, dtype=float),
        )


# ---------------------------------------------------------------------------
# configuration space
# ---------------------------------------------------------------------------

def enumerate_configs(space) -> list[ModuleConfiguration]:
    """Cartesian product of the selected options, minus invalid combinations.

    Ordering is lexicographic over the fixed module order with each module's
    canonical option order.
    """
    subsets = []
    for module in MODULES:
        chosen = tuple(space.get(module, OPTIONS[module]))
        if not chosen:
            raise PlanError(f"empty option subset for module {module!r}")
        unknown = [o for o in chosen if o not in OPTIONS[module]]
        if unknown:
            raise PlanError(f"unknown {module} options {unknown}")
        # canonical order regardless of the order given
        subsets.append(tuple(o for o in OPTIONS[module] if o in chosen))
    configs = []
    for combo in product(*subsets):
        kwargs = dict(zip(MODULES, combo))
        if kwargs["dnpp"] == "add" and kwargs["mtx"] != "none":
            continue
        configs.append(ModuleConfiguration(**kwargs))
    return configs


# ---------------------------------------------------------------------------
# protocol pieces
# ---------------------------------------------------------------------------

def lower_median(values) -> float:
    """Order statistic ceil(n/2): always an observed value."""
    ordered = sorted(values)
    if not ordered:
        raise ValueError("no values")
    return ordered[(len(ordered) + 1) // 2 - 1]


def cell_key(config_token: str, function_id: str, dimension: int) -> str:
    return f"{config_token}|{function_id}|{dimension}"


def cell_seed(master_seed: int, config_token: str, function_id: str, dimension: int, run_index: int) -> int:
    return swarm.stable_seed("cell", master_seed, config_token, function_id, dimension, run_index)


def run_cell(config_token: str, spec: benchmark.ProblemSpec, runs_per_cell: int,
             budget_multiplier: int, master_seed: int) -> float:
    """Target value for one cell: capped log10 of the lower-median error."""
    config = ModuleConfiguration.from_token(config_token)
    problem = benchmark.make_problem(spec)
    budget = budget_multiplier * spec.dimension
    errors = []
    for r in range(runs_per_cell):
        seed = cell_seed(master_seed, config_token, spec.function_id, spec.dimension, r)
        errors.append(swarm.run(config, problem, budget, seed).final_error)
    return math.log10(max(lower_median(errors), ERROR_FLOOR))


def default_workers() -> int:
    value = os.environ.get(WORKERS_ENV, "")
    if value.strip():
        return max(1, int(value))
    return os.cpu_count() or 1


def _journal_read(path) -> dict[str, float]:
    done = {}
    if path is not None and os.path.exists(path):
        with open(path) as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                key, _, value = line.rpartition("\t")
                done[key] = float(value)
    return done


def _run_cell_star(args):
    return args[0], run_cell(*args[1:])


def execute(plan: ExperimentPlan, workers: int | None = None, journal_path=None,
            progress=None) -> list[PerformanceDataset]:
    """Run the full plan and return one dataset per problem spec.

    Cells are independent work items; results are merged in canonical order,
    so datasets do not depend on worker count or completion order. The
    journal (one completed-cell key plus its target per line) makes an
    interrupted sweep resumable without recomputation.
    """
    configs = enumerate_configs(plan.space)
    tokens = [c.token() for c in configs]
    done = _journal_read(journal_path)

    jobs = []
    for spec in plan.problems:
        for token in tokens:
            key = cell_key(token, spec.function_id, spec.dimension)
            if key not in done:
                jobs.append((key, token, spec, plan.runs_per_cell,
                             plan.budget_multiplier, plan.master_seed))

    total = len(tokens) * len(plan.problems)
    completed = total - len(jobs)
    journal = open(journal_path, "a") if journal_path is not None else None
    try:
        if workers is None:
            workers = default_workers()
        if workers > 1 and len(jobs) > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                for key, target in pool.map(_run_cell_star, jobs, chunksize=4):
                    done[key] = target
                    completed += 1
                    if journal is not None:
                        journal.write(f"{key}\t{target!r}\n")
                        journal.flush()
                    if progress is not None:
                        progress(completed, total)
        else:
            for job in jobs:
                key, target = _run_cell_star(job)
                done[key] = target
                completed += 1
                if journal is not None:
                    journal.write(f"{key}\t{target!r}\n")
                    journal.flush()
                if progress is not None:
                    progress(completed, total)
    finally:
        if journal is not None:
            journal.close()

    datasets = []
    levels = {m: plan.space.get(m, OPTIONS[m]) for m in MODULES}
    levels = {m: tuple(o for o in OPTIONS[m] if o in levels[m]) for m in MODULES}
    for spec in plan.problems:
        rows = [tuple(getattr(c, m) for m in MODULES) for c in configs]
        targets = [done[cell_key(t, spec.function_id, spec.dimension)] for t in tokens]
        meta = {
            "function": spec.function_id,
            "dimension": str(spec.dimension),
            "transform_seed": str(spec.transform_seed),
            "runs_per_cell": str(plan.runs_per_cell),
            "budget_multiplier": str(plan.budget_multiplier),
            "master_seed": str(plan.master_seed),
        }
        datasets.append(
            PerformanceDataset.from_rows(MODULES, levels, rows, targets, meta)
        )
    return datasets


# ---------------------------------------------------------------------------
# dataset files
# ---------------------------------------------------------------------------

def write_dataset(dataset: PerformanceDataset, path) -> None:
    lines = []
    for key in sorted(dataset.meta):
        lines.append(f"# {key} {dataset.meta[key]}")
    for name in dataset.feature_names:
        lines.append(f"# levels.{name} {'|'.join(dataset.levels[name])}")
    lines.append(",".join(dataset.feature_names) + ",target")
    for r in range(dataset.n_rows):
        tokens = dataset.row_tokens(r)
        lines.append(",".join(tokens) + f",{float(dataset.targets[r])!r}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_dataset(path) -> PerformanceDataset:
    meta: dict[str, str] = {}
    level_meta: dict[str, tuple[str, ...]] = {}
    header = None
    rows = []
    targets = []
    with open(path) as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            if line.startswith("#"):
                key, _, value = line[1:].strip().partition(" ")
                if key.startswith("levels."):
                    level_meta[key[len("levels."):]] = tuple(value.split("|"))
                else:
                    meta[key] = value
                continue
            if header is None:
                header = line.split(",")
                if len(header) < 2 or header[-1] != "target":
                    raise DatasetFormatError(f"malformed header {line!r} in {path}")
                continue
            parts = line.split(",")
            if len(parts) != len(header):
                raise DatasetFormatError(f"row width mismatch in {path}: {line!r}")
            value = float(parts[-1])
            if not math.isfinite(value):
                raise DatasetFormatError(f"non-finite target in {path}: {line!r}")
            rows.append(tuple(parts[:-1]))
            targets.append(value)
    if header is None:
        raise DatasetFormatError(f"{path} has no header row")
    feature_names = tuple(header[:-1])
    levels = {}
    for q, name in enumerate(feature_names):
        if name in level_meta:
            levels[name] = level_meta[name]
        elif name in OPTIONS:
            seen = {row[q] for row in rows}
            levels[name] = tuple(o for o in OPTIONS[name] if o in seen)
        else:
            levels[name] = tuple(sorted({row[q] for row in rows}))
    return PerformanceDataset.from_rows(feature_names, levels, rows, targets, meta)


# ---------------------------------------------------------------------------
# plan files
# ---------------------------------------------------------------------------

def load_plan(path, overrides=None) -> ExperimentPlan:
    """Plan JSON: module option subsets, functions, dims, runs, budget, seed."""
    with open(path) as fh:
        doc = json.load(fh)
    overrides = overrides or {}
    space = {m: tuple(v) for m, v in doc.get("space", {}).items()}
    unknown = set(space) - set(MODULES)
    if unknown:
        raise PlanError(f"unknown modules in plan space: {sorted(unknown)}")
    functions = overrides.get("functions", doc.get("functions", list(benchmark.FUNCTION_IDS)))
    dims = overrides.get("dims", doc.get("dims", [10]))
    master_seed = int(overrides.get("master_seed", doc.get("master_seed", 1)))
    transform_seed = int(doc.get("transform_seed", master_seed))
    problems = tuple(
        benchmark.ProblemSpec(function_id=fid, dimension=int(d), transform_seed=transform_seed)
        for fid in functions
        for d in dims
    )
    return ExperimentPlan(
        space=space,
        problems=problems,
        runs_per_cell=int(overrides.get("runs_per_cell", doc.get("runs_per_cell", 10))),
        budget_multiplier=int(
            overrides.get("budget_multiplier", doc.get("budget_multiplier", 5000))
        ),
        master_seed=master_seed,
    )
