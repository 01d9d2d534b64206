import numpy as np
import pytest

from grouped_bart.logic.data import Dataset, generate_synthetic, kfold_split
from grouped_bart.logic.errors import InsufficientDataError, InvalidPartitionError
from grouped_bart.logic.grouping import (
    GroupSearchConfig,
    RoundRecord,
    SearchTrace,
    fit_bart,
    fit_grouped,
    gbart_fit,
    isg_search,
    stage_seeds,
)
from grouped_bart.logic.partition import Partition
from grouped_bart.logic.sampler import McmcConfig, predict, run_chain
from grouped_bart.logic.seeding import derive_seed
from grouped_bart.logic.treecore import RegressionTree

FAST_MCMC = McmcConfig(num_trees=10, ndpost=20, burn_in=10)
FAST_SEARCH = GroupSearchConfig(stage1_trees=8, stage2_trees=10, max_rounds=2)


def same_fit(a, b) -> bool:
    return (
        a.partition == b.partition
        and [e.sigma for e in a.snapshots] == [e.sigma for e in b.snapshots]
        and all(t1 == t2 for e1, e2 in zip(a.snapshots, b.snapshots) for t1, t2 in zip(e1.trees, e2.trees))
    )


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_one_group_matches_the_ungrouped_engine(seed):
    rng = np.random.default_rng(seed)
    data = Dataset(rng.uniform(size=(80, 4)), rng.normal(size=80))
    grouped = fit_grouped(data, Partition.trivial(4), 10, FAST_MCMC, seed)
    ungrouped = run_chain(data, [RegressionTree.stump(range(4))] * 10, FAST_MCMC, seed)
    assert same_fit(grouped, ungrouped)
    np.testing.assert_array_equal(predict(grouped, data.X), predict(ungrouped, data.X))
    assert same_fit(fit_bart(data, 10, FAST_MCMC, seed), ungrouped)


def test_grouped_trees_split_only_inside_their_group():
    data = generate_synthetic(2, n=150, seed=3)
    partition = Partition.from_groups([[0, 1], [2, 3], [4, 5]])
    fit = fit_grouped(data, partition, 12, FAST_MCMC, 5)
    for ensemble in fit.snapshots:
        for tree in ensemble.trees:
            assert tree.group in partition.groups
            assert tree.split_variables() <= tree.group


def test_partition_must_match_the_data():
    data = generate_synthetic(2, n=50, seed=0)
    with pytest.raises(InvalidPartitionError):
        fit_grouped(data, Partition.trivial(4), 5, FAST_MCMC, 0)


def test_nearly_constant_response_predicts_the_constant():
    rng = np.random.default_rng(4)
    data = Dataset(rng.uniform(size=(60, 2)), 3.0 + 1e-6 * rng.normal(size=60))
    fit = fit_bart(data, 10, FAST_MCMC, 1)
    np.testing.assert_allclose(predict(fit, data.X), 3.0, atol=0.1)


def test_constant_response_uses_the_mean_predictor(caplog):
    data = Dataset(np.random.default_rng(0).uniform(size=(30, 2)), np.full(30, 7.0))
    fit = fit_bart(data, 5, FAST_MCMC, 0)
    np.testing.assert_array_equal(predict(fit, data.X), np.full(30, 7.0))
    assert "constant" in caplog.text


def test_grouped_fit_beats_the_mean_predictor():
    data = generate_synthetic(2, n=500, seed=6)
    partition = Partition.from_groups([[0, 1], [2, 3], [4, 5]])
    mcmc = McmcConfig(num_trees=30, ndpost=80, burn_in=40)
    folds = kfold_split(data.n, 5, seed=1)
    squared, baseline = np.empty(data.n), np.empty(data.n)
    for f in range(5):
        train, test = data.subset(folds.train_indices(f)), data.subset(folds.indices(f))
        fit = fit_grouped(train, partition, 30, mcmc, f)
        squared[folds.indices(f)] = (predict(fit, test.X) - test.y) ** 2
        baseline[folds.indices(f)] = (train.y.mean() - test.y) ** 2
    assert squared.mean() < baseline.mean()


def test_disabled_search_returns_the_trivial_partition():
    data = generate_synthetic(2, n=100, seed=0)
    partition, trace = isg_search(data, FAST_SEARCH.model_copy(update={"enabled": False}), 0, FAST_MCMC)
    assert partition == Partition.trivial(6)
    assert trace.rounds == []


def test_search_needs_two_predictors_and_enough_rows():
    rng = np.random.default_rng(0)
    with pytest.raises(InsufficientDataError):
        isg_search(Dataset(rng.uniform(size=(50, 1)), rng.normal(size=50)), FAST_SEARCH, 0, FAST_MCMC)
    with pytest.raises(InsufficientDataError):
        isg_search(Dataset(rng.uniform(size=(10, 3)), rng.normal(size=10)), FAST_SEARCH, 0, FAST_MCMC)


def test_two_predictors_always_give_one_group():
    rng = np.random.default_rng(2)
    X = rng.uniform(size=(80, 2))
    data = Dataset(X, X[:, 0] * X[:, 1] + 0.1 * rng.normal(size=80))
    partition, trace = isg_search(data, FAST_SEARCH, 3, FAST_MCMC)
    assert partition == Partition.trivial(2)
    assert len(trace.rounds) == 1
    record = trace.rounds[0]
    assert {record.i_star, record.k_star} == {0, 1}
    assert set(record.ei) == {0, 1}


def test_search_trace_is_consistent():
    data = generate_synthetic(4, n=120, seed=1)
    partition, trace = isg_search(data, FAST_SEARCH, 7, FAST_MCMC)
    assert 1 <= len(trace.rounds) <= FAST_SEARCH.max_rounds
    for pair in trace.accepted_pairs():
        assert partition.contains_group(pair)
    for record in trace.rounds:
        assert record.i_star == max(record.ei, key=lambda i: (record.ei[i], -i))
        assert record.k_star == min(record.ek, key=lambda k: (record.ek[k], k))
        assert record.accepted == (record.ek[record.k_star] < record.e0)
    # only the last round may be a rejection
    assert all(r.accepted for r in trace.rounds[:-1])
    covered = sorted(v for g in partition.groups for v in g)
    assert covered == list(range(6))


def test_search_is_deterministic_across_worker_counts():
    data = generate_synthetic(2, n=100, seed=2)
    one = isg_search(data, FAST_SEARCH, 11, FAST_MCMC)
    two = isg_search(data, FAST_SEARCH.model_copy(update={"workers": 2}), 11, FAST_MCMC)
    assert one[0] == two[0]
    assert one[1].to_json_lines() == two[1].to_json_lines()


def test_trace_json_lines():
    trace = SearchTrace([RoundRecord(1, 0.5, {0: 0.6, 1: 0.55}, 0, {1: 0.4}, 1, True)])
    text = trace.to_json_lines()
    assert text.count("\n") == 1
    assert '"ei": {"0": 0.6, "1": 0.55}' in text
    assert SearchTrace.from_json_lines(text) == trace


def test_search_without_grouping_equals_plain_bart():
    data = generate_synthetic(3, n=100, seed=3)
    disabled = FAST_SEARCH.model_copy(update={"enabled": False})
    fit, partition, trace = gbart_fit(data, disabled, FAST_MCMC, 21)
    assert partition.is_trivial() and not trace.rounds
    plain = fit_bart(data, FAST_SEARCH.stage2_trees, FAST_MCMC, stage_seeds(21)[1])
    assert same_fit(fit, plain)


def test_two_stage_fit_is_deterministic():
    data = generate_synthetic(2, n=100, seed=4)
    a = gbart_fit(data, FAST_SEARCH, FAST_MCMC, 5)
    b = gbart_fit(data, FAST_SEARCH, FAST_MCMC, 5)
    assert a[1] == b[1]
    assert a[2].to_json_lines() == b[2].to_json_lines()
    assert same_fit(a[0], b[0])
    assert len(a[0].snapshots[0].trees) == FAST_SEARCH.stage2_trees


def test_stage1_settings_layer_on_the_base_chain():
    cfg = GroupSearchConfig(stage1_trees=30, stage1_mcmc={"ndpost": 40})
    stage1 = cfg.stage1_config(McmcConfig(ndpost=300, burn_in=7))
    assert (stage1.num_trees, stage1.ndpost, stage1.burn_in) == (30, 40, 7)


def test_derived_seeds_are_stable():
    assert derive_seed(5, "folds") == derive_seed(5, "folds")
    assert derive_seed(5, "folds") != derive_seed(5, "fit")
    assert stage_seeds(3)[0] != stage_seeds(3)[1]


@pytest.mark.slow
def test_search_recovers_the_interacting_pairs():
    search = GroupSearchConfig(workers=4)
    mcmc = McmcConfig(ndpost=300, burn_in=100)
    found = 0
    for run in range(10):
        data = generate_synthetic(2, n=500, seed=derive_seed(100, run))
        partition, _ = isg_search(data, search, derive_seed(200, run), mcmc)
        found += all(partition.contains_group(g) for g in ({0, 1}, {2, 3}, {4, 5}))
    assert found >= 6


@pytest.mark.slow
def test_search_finds_the_single_pair_first():
    search = GroupSearchConfig(workers=4)
    mcmc = McmcConfig(ndpost=300, burn_in=100)
    first = []
    for run in range(10):
        data = generate_synthetic(3, n=500, seed=derive_seed(300, run))
        _, trace = isg_search(data, search, derive_seed(400, run), mcmc)
        pairs = trace.accepted_pairs()
        first.append(bool(pairs) and pairs[0] == frozenset({0, 1}))
    assert sum(first) > 5


def test_sigma_draws_on_the_response_scale():
    data = generate_synthetic(2, n=80, seed=1)
    fit = fit_bart(data, 10, FAST_MCMC, 4)
    span = data.y.max() - data.y.min()
    np.testing.assert_allclose(fit.sigmas_original_scale(), [e.sigma * span for e in fit.snapshots])
    assert all(s > 0 for s in fit.sigmas_original_scale())
