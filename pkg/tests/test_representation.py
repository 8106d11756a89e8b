from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adspeech.embedder import EMBED_DIM, EmbeddingVector
from adspeech.features import N_FEATURES, FeatureVector
from adspeech.representation import (
    F_SENTINEL, FUSED_COLUMNS, FUSED_DIM, ColumnSelector, LabeledDataset, SingleClassError, anova_f,
    apply_selector, fuse, select_top_k, standardize,
)


def dataset(matrix, labels):
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim == 1:
        matrix = matrix[:, None]
    n, d = matrix.shape
    return LabeledDataset(matrix, labels, [f"s{i}" for i in range(n)], [f"c{j}" for j in range(d)])


def random_dataset(seed, n=30, d=12):
    rng = np.random.default_rng(seed)
    labels = np.arange(n) % 2
    shift = rng.uniform(0, 2, d)
    X = rng.standard_normal((n, d)) + labels[:, None] * shift
    return dataset(X, labels)


def brute_f(column, labels):
    column = [float(v) for v in column]
    labels = [int(v) for v in labels]
    n = len(column)
    grand = sum(column) / n
    msb = msw = 0.0
    for g in (0, 1):
        members = [v for v, lab in zip(column, labels) if lab == g]
        mu = sum(members) / len(members)
        msb += len(members) * (mu - grand) ** 2
        msw += sum((v - mu) ** 2 for v in members)
    msw /= n - 2
    if msb == 0:
        return 0.0
    if msw == 0:
        return F_SENTINEL
    return msb / msw


# ------------------------------------------------------------------ fusion

def test_fuse_layout():
    rng = np.random.default_rng(0)
    feats = FeatureVector(rng.standard_normal(N_FEATURES), clip_id="a")
    emb = EmbeddingVector(rng.standard_normal(EMBED_DIM), clip_id="a")
    out = fuse(feats, emb)
    assert out.shape == (936,) == (FUSED_DIM,)
    for j in rng.integers(0, EMBED_DIM, 20):
        assert out[168 + j] == emb.values[j]
    assert FUSED_COLUMNS[0] == "f000" and FUSED_COLUMNS[168] == "e000" and FUSED_COLUMNS[-1] == "e767"


def test_zero_embedding_keeps_feature_prefix():
    feats = FeatureVector(np.arange(N_FEATURES, dtype=float))
    out = fuse(feats, EmbeddingVector(np.zeros(EMBED_DIM)))
    assert out[:N_FEATURES].tobytes() == feats.values.tobytes()
    assert np.all(out[N_FEATURES:] == 0)


def test_fuse_rejects_id_mismatch():
    with pytest.raises(ValueError, match="mismatch"):
        fuse(FeatureVector(np.zeros(N_FEATURES), clip_id="a"), EmbeddingVector(np.zeros(EMBED_DIM), clip_id="b"))


# ------------------------------------------------------------------- ANOVA

def test_constant_column_scores_zero():
    assert anova_f(dataset([3.0, 3.0, 3.0, 3.0], [0, 0, 1, 1]))[0] == 0.0


def test_hand_computed_f_value():
    assert anova_f(dataset([0.0, 1.0, 2.0, 3.0], [0, 0, 1, 1]))[0] == pytest.approx(8.0, rel=1e-12)


def test_zero_within_variance_gives_sentinel():
    f = anova_f(dataset([1.0, 1.0, 5.0, 5.0], [0, 0, 1, 1]))
    assert f[0] == F_SENTINEL
    assert np.isfinite(f[0])


def test_anova_errors():
    with pytest.raises(SingleClassError):
        anova_f(dataset([1.0, 2.0, 3.0], [1, 1, 1]))
    with pytest.raises(ValueError):
        anova_f(dataset([1.0, 2.0], [0, 1]))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_anova_matches_hand_loop(seed):
    data = random_dataset(seed, n=14, d=4)
    expected = [brute_f(data.matrix[:, j], data.labels) for j in range(data.n_cols)]
    np.testing.assert_allclose(anova_f(data), expected, rtol=1e-10)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(-100, 100), st.floats(0.01, 100), st.booleans())
def test_anova_translation_and_scale_invariance(seed, shift, scale, flip):
    data = random_dataset(seed, d=3)
    c = -scale if flip else scale
    moved = data.with_matrix(data.matrix * c + shift)
    np.testing.assert_allclose(anova_f(moved), anova_f(data), rtol=1e-9)


# --------------------------------------------------------------- selection

def test_top_ten_of_168():
    data = random_dataset(1, n=40, d=168)
    sel = select_top_k(data, 10)
    assert len(sel.chosen_indices) == 10
    assert list(sel.chosen_indices) == sorted(set(sel.chosen_indices))


def test_k_at_least_width_is_identity():
    data = random_dataset(2, d=5)
    assert select_top_k(data, 5).chosen_indices == (0, 1, 2, 3, 4)
    assert select_top_k(data, 50).chosen_indices == (0, 1, 2, 3, 4)
    with pytest.raises(ValueError):
        select_top_k(data, 0)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 12))
def test_selection_matches_brute_force_sort(seed, k):
    data = random_dataset(seed, n=16, d=12)
    scores = [brute_f(data.matrix[:, j], data.labels) for j in range(12)]
    ranked = sorted(range(12), key=lambda j: (-scores[j], j))
    assert set(select_top_k(data, k).chosen_indices) == set(ranked[:k])


def test_ties_go_to_lower_index():
    col = np.array([0.0, 1.0, 2.0, 3.0])
    data = dataset(np.column_stack([col * 0, col, col, col]), [0, 0, 1, 1])
    assert select_top_k(data, 2).chosen_indices == (1, 2)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.permutations(list(range(10))))
def test_selection_is_permutation_equivariant(seed, perm):
    data = random_dataset(seed, n=20, d=10)
    perm = np.array(perm)
    permuted = data.with_matrix(data.matrix[:, perm], tuple(data.column_names[p] for p in perm))
    chosen = {data.column_names[i] for i in select_top_k(data, 4).chosen_indices}
    chosen_perm = {permuted.column_names[i] for i in select_top_k(permuted, 4).chosen_indices}
    scores = anova_f(data)
    if len(set(np.round(scores, 12))) == scores.size:
        assert chosen == chosen_perm


def test_apply_selector_projection():
    data = random_dataset(3, d=2)
    sel0 = ColumnSelector((0,), (1.0, 0.5), 1)
    out = apply_selector(sel0, data)
    assert out.matrix.shape == (data.n_rows, 1)
    np.testing.assert_array_equal(out.matrix[:, 0], data.matrix[:, 0])
    assert out.labels.tolist() == data.labels.tolist() and out.subject_ids == data.subject_ids
    identity = apply_selector(ColumnSelector((0, 1), (1.0, 0.5), 2), data)
    assert identity.matrix.tobytes() == data.matrix.tobytes()
    with pytest.raises(IndexError):
        apply_selector(ColumnSelector((0, 2), (1.0, 1.0, 1.0), 2), data)


def test_rescoring_kept_columns_reproduces_scores():
    data = random_dataset(4, d=20)
    sel = select_top_k(data, 6)
    kept = apply_selector(sel, data)
    np.testing.assert_allclose(anova_f(kept), np.array(sel.scores)[list(sel.chosen_indices)], rtol=1e-12)


def test_selector_invariants_and_json():
    with pytest.raises(ValueError):
        ColumnSelector((2, 1), (0.0, 0.0, 0.0), 2)
    with pytest.raises(ValueError):
        ColumnSelector((0, 3), (0.0, 0.0, 0.0), 2)
    sel = select_top_k(random_dataset(5), 3)
    assert ColumnSelector.from_json(sel.to_json()) == sel


# ---------------------------------------------------------- standardization

def test_standardized_columns_have_unit_moments():
    data = random_dataset(6, d=5)
    _, out = standardize(data)
    np.testing.assert_allclose(out.matrix.mean(axis=0), 0.0, atol=1e-10)
    np.testing.assert_allclose(out.matrix.std(axis=0), 1.0, atol=1e-10)


def test_constant_column_passes_through():
    X = np.column_stack([np.full(6, 7.0), np.arange(6.0)])
    transform, out = standardize(dataset(X, [0, 1] * 3))
    np.testing.assert_array_equal(out.matrix[:, 0], 7.0)
    assert transform.passthrough.tolist() == [True, False]


def test_transform_reapplies_verbatim():
    data = random_dataset(7, d=4)
    transform, out = standardize(data)
    copy = dataset(data.matrix.copy(), data.labels)
    assert transform.transform(copy).matrix.tobytes() == out.matrix.tobytes()
    with pytest.raises(ValueError):
        transform.transform_matrix(np.zeros((2, 3)))


def test_dataset_validation():
    with pytest.raises(ValueError):
        dataset([[np.inf]], [0])
    with pytest.raises(ValueError):
        dataset([1.0, 2.0], [0, 2])
    with pytest.raises(ValueError):
        LabeledDataset(np.zeros((2, 2)), [0, 1], ["a"], ["x", "y"])
