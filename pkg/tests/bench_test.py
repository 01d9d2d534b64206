import json
import math
import os

import numpy as np
import pandas as pd
import pytest
from pydantic import ValidationError

from grouped_bart.logic.bench import (
    RESULT_COLUMNS,
    BenchmarkPlan,
    DatasetSpec,
    Method,
    ResultRow,
    ResultTable,
    evaluate_method,
    run_benchmark,
)
from grouped_bart.logic.data import SLUMP_OUTPUTS, Dataset, generate_synthetic, kfold_split
from grouped_bart.logic.errors import BenchmarkError, ConfigError
from grouped_bart.logic.grouping import GroupSearchConfig
from grouped_bart.logic.sampler import McmcConfig

FAST_MCMC = McmcConfig(num_trees=10, ndpost=20, burn_in=10)
FAST_SEARCH = GroupSearchConfig(stage1_trees=6, stage2_trees=10, max_rounds=1)


def test_summary_arithmetic():
    row = ResultRow.from_replications("d", "BART", [1.0, 2.0, 3.0], 0.0)
    assert row.mean_mse == 2.0
    assert row.std_err == pytest.approx(1.0 / math.sqrt(3), abs=1e-12)
    assert row.std_err == pytest.approx(0.5774, abs=1e-4)
    assert row.replications == 3


def test_single_replication_has_zero_standard_error(caplog):
    row = ResultRow.from_replications("d", "GBART", [0.7], 1.5)
    assert row.std_err == 0.0
    assert "one replication" in caplog.text


@pytest.mark.parametrize("text, expected_id", [
    ("case:2", "case2_n500"),
    ("case:12:300", "case12_n300"),
    ("csv:data/x.csv:y", "x:y"),
])
def test_dataset_entries(text, expected_id):
    assert DatasetSpec.parse(text).id == expected_id


def test_dataset_entry_with_dropped_columns():
    spec = DatasetSpec.parse("csv:a.csv:y:id|other")
    assert spec.drop == ("id", "other")


@pytest.mark.parametrize("text", ["case", "case:x", "case:13", "csv:only_path", "http://x"])
def test_bad_dataset_entries(text):
    with pytest.raises(ConfigError):
        DatasetSpec.parse(text)


def test_plan_invariants():
    spec = DatasetSpec.parse("case:2:40")
    with pytest.raises(ValidationError):
        BenchmarkPlan(datasets=[])
    with pytest.raises(ValidationError):
        BenchmarkPlan(datasets=[spec], methods=[])
    with pytest.raises(ValidationError):
        BenchmarkPlan(datasets=[spec], folds=1)
    with pytest.raises(ValidationError):
        BenchmarkPlan(datasets=[spec], replications=0)
    plan = BenchmarkPlan(datasets=[spec])
    assert plan.methods == [Method.GBART, Method.BART]
    assert (plan.folds, plan.replications) == (5, 5)


def test_constant_target_has_no_error():
    data = Dataset(np.random.default_rng(0).uniform(size=(40, 3)), np.full(40, 2.5))
    assert evaluate_method(data, Method.BART, 5, FAST_MCMC, FAST_SEARCH, seed=1) < 1e-3


def test_disabled_search_makes_methods_identical():
    data = generate_synthetic(3, n=60, seed=2)
    disabled = FAST_SEARCH.model_copy(update={"enabled": False})
    gbart = evaluate_method(data, Method.GBART, 3, FAST_MCMC, disabled, seed=8)
    bart = evaluate_method(data, Method.BART, 3, FAST_MCMC, disabled, seed=8)
    assert gbart == bart


def test_bart_beats_the_mean_predictor():
    data = generate_synthetic(2, n=500, seed=9)
    mcmc = McmcConfig(num_trees=30, ndpost=60, burn_in=30)
    search = GroupSearchConfig(stage2_trees=30)
    fold_seed = 17
    mse = evaluate_method(data, Method.BART, 5, mcmc, search, seed=3, fold_seed=fold_seed)
    folds = kfold_split(data.n, 5, fold_seed)
    baseline = np.empty(data.n)
    for f in range(5):
        baseline[folds.indices(f)] = (data.y[folds.train_indices(f)].mean() - data.y[folds.indices(f)]) ** 2
    assert mse < baseline.mean()


def tiny_plan(**changes) -> BenchmarkPlan:
    base = dict(
        datasets=[DatasetSpec.parse("case:2:40"), DatasetSpec.parse("case:3:40")],
        methods=[Method.GBART, Method.BART],
        folds=2,
        replications=2,
        master_seed=5,
        mcmc=FAST_MCMC,
        search=FAST_SEARCH,
        record_wall_time=False,
    )
    return BenchmarkPlan(**{**base, **changes})


def test_benchmark_table_shape_and_files(tmp_path):
    table = run_benchmark(tiny_plan())
    assert [(r.dataset, r.method) for r in table.rows] == [
        ("case2_n40", "GBART"), ("case2_n40", "BART"), ("case3_n40", "GBART"), ("case3_n40", "BART"),
    ]
    for row in table.rows:
        assert row.replications == 2
        assert row.mean_mse == pytest.approx(np.mean(row.replication_mses))
        assert row.wall_time_s == 0.0

    table.write(tmp_path / "r.csv", tmp_path / "r.json")
    frame = pd.read_csv(tmp_path / "r.csv")
    assert list(frame.columns) == RESULT_COLUMNS
    payload = json.loads((tmp_path / "r.json").read_text())
    assert payload["rows"][0]["replication_mses"] == table.rows[0].replication_mses
    assert 0 <= table.paired_wins("case2_n40", Method.GBART, Method.BART) <= 2


def test_single_cell_plan():
    table = run_benchmark(tiny_plan(datasets=[DatasetSpec.parse("case:2:40")], methods=[Method.BART],
                                    replications=1))
    assert len(table.rows) == 1
    assert table.rows[0].std_err == 0.0


def test_cells_do_not_depend_on_plan_order():
    forward = run_benchmark(tiny_plan())
    reverse = run_benchmark(tiny_plan(datasets=list(reversed(tiny_plan().datasets))))
    for row in forward.rows:
        assert reverse.row(row.dataset, row.method).replication_mses == row.replication_mses


@pytest.mark.parametrize("workers", [2, 8])
def test_results_are_byte_identical_across_runs_and_workers(tmp_path, workers):
    run_benchmark(tiny_plan()).write(tmp_path / "a.csv", tmp_path / "a.json")
    run_benchmark(tiny_plan(workers=workers)).write(tmp_path / "b.csv", tmp_path / "b.json")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()


def test_failed_replication_names_the_cell():
    plan = tiny_plan(datasets=[DatasetSpec.parse("case:2:3")], folds=4)
    with pytest.raises(BenchmarkError, match="case2_n3"):
        run_benchmark(plan)


def test_unexpected_failure_keeps_the_cell_context(monkeypatch):
    def broken(*args, **kwargs):
        raise FloatingPointError("overflow in leaf draw")

    monkeypatch.setattr("grouped_bart.logic.bench.evaluate_method", broken)
    with pytest.raises(BenchmarkError, match="case2_n40, method GBART, replication 0") as info:
        run_benchmark(tiny_plan())
    assert isinstance(info.value.__cause__, FloatingPointError)


def test_csv_datasets_resample_folds(tmp_path):
    data = generate_synthetic(3, n=40, seed=1)
    path = tmp_path / "three.csv"
    data.to_frame().to_csv(path, index=False)
    table = run_benchmark(tiny_plan(datasets=[DatasetSpec.parse(f"csv:{path}:y")], methods=[Method.BART]))
    mses = table.row("three:y", Method.BART).replication_mses
    assert len(mses) == 2 and mses[0] != mses[1]


@pytest.mark.slow
@pytest.mark.parametrize("case", [2, 3, 12])
def test_grouping_wins_at_desk_scale(case):
    plan = BenchmarkPlan(
        datasets=[DatasetSpec(kind="synthetic", case=case, n=500)],
        mcmc=McmcConfig(ndpost=300, burn_in=100),
        search=GroupSearchConfig(),
        master_seed=2024,
        workers=4,
    )
    table = run_benchmark(plan)
    dataset = plan.datasets[0].id
    assert table.row(dataset, Method.GBART).mean_mse < table.row(dataset, Method.BART).mean_mse
    assert table.paired_wins(dataset, Method.GBART, Method.BART) >= 4
    if case == 12:
        assert 1.5 <= table.row(dataset, Method.BART).mean_mse <= 6.0


@pytest.mark.slow
@pytest.mark.parametrize("target", SLUMP_OUTPUTS)
def test_grouping_does_no_harm_on_slump(target):
    path = os.environ.get("GBART_SLUMP_PATH")
    if not path:
        pytest.skip("set GBART_SLUMP_PATH to the slump_test.data file")
    plan = BenchmarkPlan(
        datasets=[DatasetSpec(kind="slump", path=path, target=target)],
        mcmc=McmcConfig(ndpost=300, burn_in=100),
        search=GroupSearchConfig(),
        folds=5,
        replications=5,
        master_seed=2024,
        workers=4,
    )
    table = run_benchmark(plan)
    dataset = plan.datasets[0].id
    assert table.row(dataset, Method.GBART).mean_mse <= 1.1 * table.row(dataset, Method.BART).mean_mse
