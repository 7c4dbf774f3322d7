import math
import os

import numpy as np
import pytest

from psolab import benchmark as bm
from psolab import runner
from psolab.runner import ExperimentPlan, PerformanceDataset
from psolab.swarm import MODULES, OPTIONS


def small_plan(**kwargs):
    defaults = dict(
        space={
            "dnpp": ("rect",),
            "ac": ("const",),
            "top": ("ring",),
            "moi": ("bon",),
            "mtx": ("id", "diag"),
            "iw": ("c0.0", "c0.75"),
            "p1": ("none",),
            "p2": ("none",),
        },
        problems=(bm.ProblemSpec("f1", 2, transform_seed=3),),
        runs_per_cell=2,
        budget_multiplier=30,
        master_seed=11,
    )
    defaults.update(kwargs)
    return ExperimentPlan(**defaults)


# ---------------------------------------------------------------------------
# enumeration
# ---------------------------------------------------------------------------

def test_full_space_count_under_constraint():
    configs = runner.enumerate_configs({})
    assert len(configs) == 1760
    # canonical ordering is lexicographic over the fixed module order
    tokens = [c.token() for c in configs]
    assert tokens == sorted(
        tokens,
        key=lambda t: [
            OPTIONS[m].index(part.split("=")[1])
            for m, part in zip(MODULES, t.split(";"))
        ],
    )
    assert len(set(tokens)) == 1760


def test_singleton_space():
    space = {m: (OPTIONS[m][0],) for m in MODULES}
    configs = runner.enumerate_configs(space)
    assert len(configs) == 1


def test_additive_space_forces_matrix_none():
    configs = runner.enumerate_configs({"dnpp": ("add",), "mtx": ("id", "none")})
    assert len(configs) == 160
    assert all(c.mtx == "none" for c in configs)


def test_empty_subset_rejected():
    with pytest.raises(runner.PlanError):
        runner.enumerate_configs({"dnpp": ()})
    with pytest.raises(runner.PlanError):
        runner.enumerate_configs({"dnpp": ("cube",)})


# ---------------------------------------------------------------------------
# protocol statistics
# ---------------------------------------------------------------------------

def test_lower_median_is_order_statistic():
    # hand-listed 10-run cell: the lower median is the 5th smallest value
    values = [7.0, 1.0, 9.0, 3.0, 5.0, 8.0, 2.0, 6.0, 4.0, 10.0]
    assert runner.lower_median(values) == 5.0
    assert runner.lower_median([4.0]) == 4.0
    assert runner.lower_median([3.0, 1.0, 2.0]) == 2.0
    assert runner.lower_median([4.0, 1.0]) == 1.0


def test_target_caps_at_floor():
    assert math.log10(max(1e-12, runner.ERROR_FLOOR)) == runner.TARGET_FLOOR == -9.0
    assert math.log10(max(100.0, runner.ERROR_FLOOR)) == 2.0


def test_cell_seed_stable_and_distinct():
    a = runner.cell_seed(1, "tok", "f1", 10, 0)
    assert a == runner.cell_seed(1, "tok", "f1", 10, 0)
    assert a != runner.cell_seed(1, "tok", "f1", 10, 1)
    assert a != runner.cell_seed(2, "tok", "f1", 10, 0)
    assert a != runner.cell_seed(1, "tok", "f1", 30, 0)


def test_run_cell_single_run_equals_capped_log():
    from psolab import swarm

    spec = bm.ProblemSpec("f1", 2, transform_seed=3)
    token = "dnpp=rect;ac=const;top=ring;moi=bon;mtx=id;iw=c0.75;p1=none;p2=none"
    target = runner.run_cell(token, spec, 1, 30, master_seed=11)
    problem = bm.make_problem(spec)
    config = swarm.ModuleConfiguration.from_token(token)
    seed = runner.cell_seed(11, token, "f1", 2, 0)
    error = swarm.run(config, problem, 60, seed).final_error
    assert target == math.log10(max(error, runner.ERROR_FLOOR))


# ---------------------------------------------------------------------------
# execution
# ---------------------------------------------------------------------------

def test_execute_serial_and_parallel_identical(tmp_path):
    plan = small_plan()
    serial = runner.execute(plan, workers=1)
    parallel = runner.execute(plan, workers=2)
    assert len(serial) == len(parallel) == 1
    p1 = tmp_path / "serial.csv"
    p2 = tmp_path / "parallel.csv"
    runner.write_dataset(serial[0], p1)
    runner.write_dataset(parallel[0], p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_execute_row_order_and_targets(tmp_path):
    plan = small_plan()
    (dataset,) = runner.execute(plan, workers=1)
    assert dataset.n_rows == 4
    assert dataset.feature_names == MODULES
    assert np.all(dataset.targets >= runner.TARGET_FLOOR)
    tokens = [";".join(f"{m}={v}" for m, v in zip(MODULES, dataset.row_tokens(r)))
              for r in range(dataset.n_rows)]
    expected = [c.token() for c in runner.enumerate_configs(plan.space)]
    assert tokens == expected


def test_journal_resume(tmp_path):
    plan = small_plan()
    journal = tmp_path / "journal.txt"
    first = runner.execute(plan, workers=1, journal_path=journal)
    lines = journal.read_text().strip().split("\n")
    assert len(lines) == 4

    # truncated journal: only the surviving cells are recomputed
    journal.write_text("\n".join(lines[:2]) + "\n")
    second = runner.execute(plan, workers=1, journal_path=journal)
    assert np.array_equal(first[0].targets, second[0].targets)

    # complete journal: nothing recomputed, bit-identical dataset
    third = runner.execute(plan, workers=1, journal_path=journal)
    assert np.array_equal(first[0].targets, third[0].targets)


def test_execute_multiple_problems():
    plan = small_plan(
        problems=(
            bm.ProblemSpec("f1", 2, transform_seed=3),
            bm.ProblemSpec("f9", 2, transform_seed=3),
        )
    )
    datasets = runner.execute(plan, workers=1)
    assert [d.meta["function"] for d in datasets] == ["f1", "f9"]


# ---------------------------------------------------------------------------
# dataset files
# ---------------------------------------------------------------------------

def test_dataset_round_trip(tmp_path):
    plan = small_plan()
    (dataset,) = runner.execute(plan, workers=1)
    path = tmp_path / "data.csv"
    runner.write_dataset(dataset, path)
    back = runner.read_dataset(path)
    assert back.meta == dataset.meta
    assert back.feature_names == dataset.feature_names
    assert back.levels == dataset.levels
    assert np.array_equal(back.codes, dataset.codes)
    assert np.array_equal(back.targets, dataset.targets)


def test_dataset_rejects_nan_and_bad_header(tmp_path):
    good = tmp_path / "good.csv"
    good.write_text("a,b,target\nx,y,NaN\n")
    with pytest.raises(runner.DatasetFormatError):
        runner.read_dataset(good)

    bad = tmp_path / "bad.csv"
    bad.write_text("a,b,result\nx,y,1.0\n")
    with pytest.raises(runner.DatasetFormatError):
        runner.read_dataset(bad)

    unknown = tmp_path / "unknown.csv"
    unknown.write_text("# levels.a x|y\na,target\nz,1.0\n")
    with pytest.raises(runner.DatasetFormatError):
        runner.read_dataset(unknown)


def test_full_space_file_has_canonical_levels(tmp_path):
    configs = runner.enumerate_configs({})
    rows = [tuple(getattr(c, m) for m in MODULES) for c in configs]
    targets = np.linspace(-9.0, 2.0, len(rows))
    dataset = PerformanceDataset.from_rows(
        MODULES, {m: OPTIONS[m] for m in MODULES}, rows, targets, {"function": "f1"}
    )
    path = tmp_path / "full.csv"
    runner.write_dataset(dataset, path)
    back = runner.read_dataset(path)
    assert back.n_rows == 1760
    assert len(back.feature_names) == 8
    assert back.levels == {m: OPTIONS[m] for m in MODULES}


# ---------------------------------------------------------------------------
# plan files
# ---------------------------------------------------------------------------

def test_load_plan_with_overrides(tmp_path):
    path = tmp_path / "plan.json"
    path.write_text(
        '{"space": {"mtx": ["id", "diag"]}, "functions": ["f1", "f9"],'
        ' "dims": [2, 3], "runs_per_cell": 2, "budget_multiplier": 40,'
        ' "master_seed": 5}'
    )
    plan = runner.load_plan(path)
    assert len(plan.problems) == 4
    assert plan.budget_multiplier == 40
    plan2 = runner.load_plan(path, {"dims": [2], "functions": ["f9"], "master_seed": 9})
    assert len(plan2.problems) == 1
    assert plan2.problems[0].function_id == "f9"
    assert plan2.master_seed == 9

    bad = tmp_path / "bad.json"
    bad.write_text('{"space": {"nope": ["x"]}}')
    with pytest.raises(runner.PlanError):
        runner.load_plan(bad)
