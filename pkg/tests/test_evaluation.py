from __future__ import annotations

import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adspeech import classifiers
from adspeech.classifiers import ModelSpec
from adspeech.evaluation import (
    LOSO, MEAN_OF_FOLDS, METRIC_NAMES, POOLED, EvalMetrics, FoldPlan, FoldPlanError, PipelineSpec, baseline_delta,
    compute_metrics, gap_report, gap_table, make_loso_folds, make_stratified_kfold, mean_of_folds, rank_models,
    run_cv,
)
from adspeech.representation import LabeledDataset, apply_selector, select_top_k
from adspeech.synthetic import make_two_cluster_dataset, nearest_mean_loso_accuracy

from reference_tables import BASELINE_ACCURACY, CV_GAPS, TEST_GAPS, TEST_RESULTS, TRAIN_CV

METRICS4 = ("accuracy", "precision", "recall", "f1")


def labeled(labels, subjects=None, d=2, seed=0):
    labels = np.asarray(labels)
    n = labels.size
    X = np.random.default_rng(seed).standard_normal((n, d)) + labels[:, None]
    subjects = subjects or [f"s{i:03d}" for i in range(n)]
    return LabeledDataset(X, labels, subjects, [f"c{j}" for j in range(d)])


def assert_partition(plan, n):
    covered = np.sort(np.concatenate([t for _, t in plan.folds]))
    assert covered.tolist() == list(range(n))
    for train, test in plan.folds:
        assert np.intersect1d(train, test).size == 0
        assert np.union1d(train, test).tolist() == list(range(n))


# ------------------------------------------------------------------- metrics

def test_metric_identities_exhaustive():
    # precision depends on (tp, fp) only and recall on (tp, fn) only, so
    # sweeping every (tp, x) with tp + x <= 1000 and fp = fn = x covers both
    # marginals exhaustively
    for tp in range(1001):
        for x in range(1001 - tp):
            if tp + x == 0:
                continue
            m = compute_metrics(tp, x, x, 0)
            assert abs(m.precision * (tp + x) - tp) <= 1e-12 * max(tp, 1)
            assert abs(m.recall * (tp + x) - tp) <= 1e-12 * max(tp, 1)


@settings(max_examples=200)
@given(st.integers(0, 300), st.integers(0, 300), st.integers(0, 300), st.integers(0, 300))
def test_metric_definitions(tp, fp, fn, tn):
    if tp + fp + fn + tn == 0:
        with pytest.raises(ValueError):
            compute_metrics(tp, fp, fn, tn)
        return
    m = compute_metrics(tp, fp, fn, tn)
    assert m.accuracy == pytest.approx((tp + tn) / (tp + fp + fn + tn))
    assert m.specificity == (tn / (tn + fp) if tn + fp else 0.0)
    p, r = m.precision, m.recall
    assert m.f1 == pytest.approx(2 * p * r / (p + r) if p + r else 0.0)
    for name in METRIC_NAMES:
        assert 0.0 <= m.metric(name) <= 1.0


def test_zero_denominators_are_flagged():
    m = compute_metrics(0, 0, 3, 5)
    assert m.precision == 0.0 and m.f1 == 0.0
    assert "precision_undefined" in m.flags and "f1_undefined" in m.flags
    with pytest.raises(ValueError):
        compute_metrics(-1, 0, 0, 1)


@pytest.mark.parametrize("counts,expected", [
    ((11, 1, 24, 35), (0.6479, 0.9167, 0.3143, 0.4681)),
    ((28, 16, 7, 20), (0.6761, 0.6364, 0.8000, 0.7089)),
    ((5, 0, 0, 5), (1.0, 1.0, 1.0, 1.0)),
])
def test_confusion_matrix_examples(counts, expected):
    m = compute_metrics(*counts)
    for name, value in zip(METRICS4, expected):
        assert round(m.metric(name), 4) == value


@pytest.mark.parametrize("model", sorted(TEST_RESULTS))
def test_test_rows_have_a_unique_confusion_matrix(model):
    # brute force every 71-subject confusion matrix that reproduces the four
    # four-decimal reference figures
    target = TEST_RESULTS[model]
    hits = []
    for tp, fp, fn in itertools.product(range(72), repeat=3):
        tn = 71 - tp - fp - fn
        if tn < 0:
            continue
        m = compute_metrics(tp, fp, fn, tn)
        if all(abs(round(m.metric(k), 4) - v) < 1e-9 for k, v in zip(METRICS4, target)):
            hits.append((tp, fp, fn, tn))
    assert len(hits) >= 1
    if model == "SVM-feat":
        assert hits == [(11, 1, 24, 35)]
    if model == "SVM-combo":
        assert hits == [(28, 16, 7, 20)]


def test_mean_of_folds_aggregation():
    folds = [compute_metrics(1, 0, 0, 1), compute_metrics(0, 0, 1, 1)]
    agg = mean_of_folds(folds)
    assert agg.aggregation == MEAN_OF_FOLDS
    assert agg.accuracy == 0.75
    assert agg.precision == 0.5
    assert (agg.tp, agg.fp, agg.fn, agg.tn) == (1, 0, 1, 2)
    assert "fold1:precision_undefined" in agg.flags


def test_metrics_round_trip_dict():
    m = compute_metrics(3, 1, 2, 4)
    assert EvalMetrics.from_dict(m.to_dict()) == m


# ---------------------------------------------------------------- fold plans

def test_loso_one_fold_per_subject():
    data = labeled([0, 1] * 83)
    plan = make_loso_folds(data)
    assert plan.n_folds == 166
    assert all(train.size == 165 and test.size == 1 for train, test in plan.folds)
    assert_partition(plan, 166)


def test_loso_groups_shared_subjects():
    data = labeled([0, 1, 0, 1, 1], subjects=["a", "b", "a", "c", "d"])
    plan = make_loso_folds(data)
    assert plan.n_folds == 4
    assert plan.folds[0][1].tolist() == [0, 2]
    with pytest.raises(FoldPlanError):
        make_loso_folds(labeled([0]))


def test_stratified_83_83_ten_folds():
    plan = make_stratified_kfold(labeled([0, 1] * 83), 10, seed=0)
    labels = np.array([0, 1] * 83)
    sizes = sorted(t.size for _, t in plan.folds)
    assert set(sizes) <= {16, 17}
    assert {int(labels[t].sum()) for _, t in plan.folds} <= {8, 9}
    assert_partition(plan, 166)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31), st.integers(2, 8), st.integers(8, 30), st.integers(8, 30))
def test_stratified_invariants(seed, k, n_pos, n_neg):
    labels = [1] * n_pos + [0] * n_neg
    plan = make_stratified_kfold(labeled(labels), k, seed)
    assert plan.n_folds == k
    assert_partition(plan, len(labels))
    sizes = [t.size for _, t in plan.folds]
    assert max(sizes) - min(sizes) <= 1
    y = np.array(labels)
    for _, t in plan.folds:
        for cls, total in ((1, n_pos), (0, n_neg)):
            assert abs(int(np.sum(y[t] == cls)) - total / k) <= 1


def test_stratified_determinism_and_seed_dependence():
    data = labeled([0, 1] * 30)
    a = make_stratified_kfold(data, 10, seed=3)
    b = make_stratified_kfold(data, 10, seed=3)
    c = make_stratified_kfold(data, 10, seed=4)
    assert a.to_dict() == b.to_dict()
    assert a.to_dict() != c.to_dict()
    assert_partition(c, 60)


def test_k_equal_n_is_leave_one_out():
    data = labeled([0, 1] * 6)
    plan = make_stratified_kfold(data, 12, seed=1, allow_small_classes=True)
    loso = make_loso_folds(data)
    as_sets = lambda p: sorted(tuple(t.tolist()) for _, t in p.folds)
    assert as_sets(plan) == as_sets(loso)


def test_stratified_errors():
    with pytest.raises(FoldPlanError):
        make_stratified_kfold(labeled([0] * 5 + [1] * 20), 10)
    with pytest.raises(FoldPlanError):
        make_stratified_kfold(labeled([0, 1] * 3), 7, allow_small_classes=True)


def test_fold_plan_rejects_overlap_and_gaps():
    with pytest.raises(FoldPlanError):
        FoldPlan(((np.array([0, 1]), np.array([1])),), LOSO, None, 2)
    with pytest.raises(FoldPlanError):
        FoldPlan(((np.array([1]), np.array([0])),), LOSO, None, 2)


# ---------------------------------------------------------------- CV runner

LR_PIPE = PipelineSpec(ModelSpec("lr"))


@pytest.mark.parametrize("scheme", ["loso", "stratified"])
def test_constant_positive_classifier(monkeypatch, scheme):
    def always_positive(model, rows):
        n = np.atleast_2d(rows).shape[0]
        return classifiers.Prediction(np.ones(n, dtype=np.int64), np.ones(n))

    monkeypatch.setattr(classifiers, "predict", always_positive)
    data = labeled([0, 1] * 10)
    plan = make_loso_folds(data) if scheme == "loso" else make_stratified_kfold(data, 5, seed=0)
    result = run_cv(data, LR_PIPE, plan)
    assert result.pooled.accuracy == 0.5
    assert result.pooled.recall == 1.0
    assert result.pooled.precision == 0.5


def test_tree_tie_rule_gives_constant_positive_folds():
    data = LabeledDataset(np.zeros((20, 1)), [0, 1] * 10, [f"s{i}" for i in range(20)], ["c"])
    result = run_cv(data, PipelineSpec(ModelSpec("dt")), make_stratified_kfold(data, 10, seed=0))
    assert (result.pooled.accuracy, result.pooled.recall, result.pooled.precision) == (0.5, 1.0, 0.5)


def test_loso_aggregates_agree_and_cover_every_row():
    data = labeled([0, 1] * 15, seed=2)
    result = run_cv(data, LR_PIPE, make_loso_folds(data))
    p = result.pooled
    assert p.tp + p.fp + p.fn + p.tn == data.n_rows
    assert result.aggregate.aggregation == POOLED
    assert mean_of_folds([f.metrics for f in result.folds]).accuracy == pytest.approx(p.accuracy, abs=1e-15)


def test_kfold_aggregate_is_mean_of_folds():
    data = labeled([0, 1] * 15, seed=3)
    result = run_cv(data, LR_PIPE, make_stratified_kfold(data, 5, seed=0))
    assert result.aggregate.aggregation == MEAN_OF_FOLDS
    assert result.aggregate.accuracy == pytest.approx(np.mean([f.metrics.accuracy for f in result.folds]))


def test_two_cluster_corpus_is_easy():
    data = make_two_cluster_dataset(83, 10, 6.0, seed=0)
    assert nearest_mean_loso_accuracy(data.matrix, data.labels) >= 0.99
    result = run_cv(data, LR_PIPE, make_loso_folds(data))
    assert result.aggregate.accuracy >= 0.95


def test_selection_is_fold_local():
    rng = np.random.default_rng(5)
    labels = np.arange(30) % 2
    X = rng.standard_normal((30, 20)) + 0.4 * labels[:, None] * (np.arange(20) < 6)
    data = LabeledDataset(X, labels, [f"s{i}" for i in range(30)], [f"c{j}" for j in range(20)])
    spec = PipelineSpec(ModelSpec("lr"), select_k=3, standardize=True)
    plan = make_loso_folds(data)
    result = run_cv(data, spec, plan)
    for fold, (train, _) in zip(result.folds, plan.folds):
        assert fold.selected == select_top_k(data.take_rows(train), 3).chosen_indices
    assert len({f.selected for f in result.folds}) > 1
    full = select_top_k(data, 3).chosen_indices
    assert apply_selector(select_top_k(data, 3), data).n_cols == len(full)


def test_parallel_folds_match_serial():
    data = labeled([0, 1] * 10, seed=6)
    spec = PipelineSpec(ModelSpec("nn", {"hidden_units": 8, "max_epochs": 20}, seed=4))
    plan = make_stratified_kfold(data, 5, seed=2)
    serial = run_cv(data, spec, plan, workers=1).to_dict()
    parallel = run_cv(data, spec, plan, workers=2).to_dict()
    assert serial == parallel


def test_cv_is_deterministic_and_checks_plan():
    data = labeled([0, 1] * 10, seed=7)
    plan = make_stratified_kfold(data, 5, seed=1)
    assert run_cv(data, LR_PIPE, plan).to_dict() == run_cv(data, LR_PIPE, plan).to_dict()
    with pytest.raises(FoldPlanError):
        run_cv(data.take_rows(range(10)), LR_PIPE, plan)


# ------------------------------------------------------------------ ranking

def loso_accuracies():
    return [(name, row[1]) for name, row in TRAIN_CV.items()]


def test_rank_models_on_published_loso_accuracies():
    top = rank_models(loso_accuracies(), 5)
    assert top[0] == ("NN-combo", 0.6928)
    assert [name for name, _ in top] == ["NN-combo", "DT-combo", "DT-embed", "SVM-combo", "LR-embed"]


def test_rank_ties_are_alphabetical():
    assert rank_models([("b", 0.5), ("c", 0.5), ("a", 0.5)], 3) == [("a", 0.5), ("b", 0.5), ("c", 0.5)]


@settings(max_examples=50)
@given(st.lists(st.tuples(st.text("abcdef", min_size=1, max_size=4), st.floats(0, 1)), min_size=12, max_size=12,
                unique_by=lambda r: r[0]))
def test_rank_models_matches_brute_force_sort(results):
    brute = sorted(results, key=lambda r: (-r[1], r[0]))[:5]
    assert rank_models(results, 5) == [(n, float(a)) for n, a in brute]


def test_rank_errors():
    with pytest.raises(ValueError):
        rank_models(loso_accuracies(), 0)
    with pytest.raises(ValueError):
        rank_models(loso_accuracies(), 13)


# --------------------------------------------------------------------- gaps

def as_suite(values):
    return dict(zip(METRICS4, values))


@pytest.mark.parametrize("model", sorted(CV_GAPS))
def test_loso_minus_kfold_table(model):
    row = TRAIN_CV[model]
    report = gap_report(as_suite(row[1::2]), as_suite(row[0::2]), "loso", "10-fold")
    assert tuple(report.rounded().values()) == pytest.approx(CV_GAPS[model], abs=1e-9)


@pytest.mark.parametrize("model", sorted(TEST_GAPS))
def test_test_minus_cv_table(model):
    row = TRAIN_CV[model]
    sources = {"test": as_suite(TEST_RESULTS[model]), "10-fold": as_suite(row[0::2]), "loso": as_suite(row[1::2])}
    table = gap_table({model: sources}, "test", ["10-fold", "loso"])
    entry = table["rows"][0]
    got = tuple(entry[m][c] for m in METRICS4 for c in ("10-fold", "loso"))
    assert got == pytest.approx(TEST_GAPS[model], abs=1e-9)
    assert table["units"] == "percentage points"


def test_gap_examples_and_antisymmetry():
    assert gap_report({"accuracy": 0.6479}, {"accuracy": 0.6265}).rounded()["accuracy"] == 2.14
    assert gap_report({"accuracy": 0.6386}, {"accuracy": 0.6084}).rounded()["accuracy"] == 3.02
    a, b = compute_metrics(10, 3, 4, 9), compute_metrics(7, 5, 2, 12)
    assert all(v == 0 for v in gap_report(a, a).gaps.values())
    forward, backward = gap_report(a, b), gap_report(b, a)
    for k in METRIC_NAMES:
        assert forward.gaps[k] == -backward.gaps[k]
    assert (-forward).gaps == backward.gaps
    with pytest.raises(ValueError):
        gap_report({"accuracy": 0.5}, {"recall": 0.5})


def test_baseline_delta():
    assert round(baseline_delta(0.6761), 2) == 2.82
    assert round(baseline_delta(0.6056), 2) == -4.23
    assert baseline_delta(BASELINE_ACCURACY) == 0.0
    with pytest.raises(ValueError):
        baseline_delta(1.2)
