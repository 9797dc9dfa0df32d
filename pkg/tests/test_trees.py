"""Tests for the randomized tree ensembles and cumulative feature selection."""

import numpy as np
import pytest

from mammopatch import (
    BoundsError,
    DomainError,
    EnsembleConfig,
    FeatureMatrix,
    SelectionError,
    ShapeError,
    fit_ensemble,
    gini,
    project,
    read_selection,
    select_cumulative,
    write_selection,
)


def make_blobs(n_per_class, n_features, seed, gap=2.0):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((n_per_class, n_features))
    b = rng.standard_normal((n_per_class, n_features))
    a[:, 0] -= gap
    b[:, 0] += gap
    X = np.vstack([a, b])
    y = np.concatenate([np.zeros(n_per_class), np.ones(n_per_class)])
    return X, y


class TestGini:
    def test_reference_values(self):
        assert gini([10, 0]) == 0.0
        assert gini([5, 5]) == 0.5
        assert gini([3, 1]) == 0.375

    def test_rejects_degenerate_counts(self):
        with pytest.raises(DomainError):
            gini([0, 0])
        with pytest.raises(DomainError):
            gini([3, -1])
        with pytest.raises(DomainError):
            gini([])


class TestEnsembleConfig:
    def test_max_features_rules(self):
        cfg = EnsembleConfig()
        assert cfg.resolve_max_features(4096) == 64
        assert cfg.resolve_max_features(10) == 4  # ceil(sqrt(10))
        assert EnsembleConfig(max_features="log2").resolve_max_features(8) == 3
        assert EnsembleConfig(max_features="all").resolve_max_features(17) == 17
        assert EnsembleConfig(max_features=5).resolve_max_features(3) == 3

    def test_validation(self):
        with pytest.raises(DomainError):
            EnsembleConfig(n_trees=0)
        with pytest.raises(DomainError):
            EnsembleConfig(min_samples_split=1)
        with pytest.raises(DomainError):
            EnsembleConfig(splitter="median")


class TestFitEnsemble:
    def test_separable_feature_dominates(self):
        X, y = make_blobs(60, 6, seed=21)
        ens = fit_ensemble(X, y, EnsembleConfig(n_trees=40, seed=1))
        assert int(np.argmax(ens.importances)) == 0
        assert ens.importances[0] > 0.5

    def test_importances_normalized(self):
        X, y = make_blobs(40, 5, seed=22)
        ens = fit_ensemble(X, y, EnsembleConfig(n_trees=25, seed=2))
        assert (ens.importances >= 0).all()
        assert abs(ens.importances.sum() - 1.0) < 1e-9

    def test_deterministic_given_seed(self):
        X, y = make_blobs(30, 4, seed=23)
        a = fit_ensemble(X, y, EnsembleConfig(n_trees=15, seed=3)).importances
        b = fit_ensemble(X, y, EnsembleConfig(n_trees=15, seed=3)).importances
        c = fit_ensemble(X, y, EnsembleConfig(n_trees=15, seed=4)).importances
        assert np.array_equal(a, b)
        assert not np.array_equal(a, c)

    def test_no_possible_split_gives_zero_importances(self):
        X = np.ones((10, 3))
        y = np.array([0.0, 1.0] * 5)
        ens = fit_ensemble(X, y, EnsembleConfig(n_trees=5, seed=0))
        assert not ens.importances.any()

    def test_min_samples_split_blocks_growth(self):
        X, y = make_blobs(10, 3, seed=24)
        ens = fit_ensemble(X, y, EnsembleConfig(n_trees=5, min_samples_split=99, seed=0))
        assert not ens.importances.any()
        # leaf-only trees predict the class-1 prior everywhere
        np.testing.assert_allclose(ens.predict_proba(X), 0.5, atol=1e-12)

    def test_constant_feature_gets_zero_importance(self):
        X, y = make_blobs(40, 4, seed=25)
        X[:, 2] = 7.0
        ens = fit_ensemble(X, y, EnsembleConfig(n_trees=30, seed=5))
        assert ens.importances[2] == 0.0

    def test_column_permutation_equivariance(self):
        X, y = make_blobs(35, 6, seed=26, gap=1.0)
        perm = np.array([4, 0, 5, 2, 1, 3])
        cfg = EnsembleConfig(n_trees=20, max_features="all", seed=6)
        base = fit_ensemble(X, y, cfg).importances
        shuffled = fit_ensemble(X[:, perm], y, cfg).importances
        np.testing.assert_allclose(shuffled, base[perm], rtol=1e-12, atol=1e-15)

    def test_argmax_stable_across_seeds(self):
        X, y = make_blobs(40, 6, seed=32)
        for seed in range(10):
            ens = fit_ensemble(X, y, EnsembleConfig(n_trees=15, seed=seed))
            assert int(np.argmax(ens.importances)) == 0

    def test_predict_accuracy_on_separable_data(self):
        X, y = make_blobs(50, 5, seed=27)
        ens = fit_ensemble(X, y, EnsembleConfig(n_trees=30, seed=7))
        assert (ens.predict(X) == y).mean() >= 0.95

    def test_random_thresholds_strictly_inside_range(self):
        X, y = make_blobs(40, 4, seed=28, gap=0.5)
        ens = fit_ensemble(X, y, EnsembleConfig(n_trees=10, seed=8))
        for tree in ens.trees:
            stack = [(0, np.arange(X.shape[0]))]
            while stack:
                node, idx = stack.pop()
                f = tree.feature[node]
                if f < 0:
                    continue
                vals = X[idx, f]
                thr = tree.threshold[node]
                assert vals.min() < thr < vals.max()
                go_left = vals <= thr
                assert go_left.any() and (~go_left).any()
                stack.append((tree.left[node], idx[go_left]))
                stack.append((tree.right[node], idx[~go_left]))

    def test_best_splitter_finds_midpoint(self):
        X = np.array([[1.0], [2.0], [3.0], [4.0]])
        y = np.array([0.0, 0.0, 1.0, 1.0])
        ens = fit_ensemble(X, y, EnsembleConfig(n_trees=1, splitter="best", seed=0))
        tree = ens.trees[0]
        assert tree.feature[0] == 0
        assert tree.threshold[0] == 2.5
        assert abs(ens.importances[0] - 1.0) < 1e-12
        np.testing.assert_allclose(ens.predict_proba(X), y, atol=1e-12)

    def test_bootstrap_mode_runs(self):
        X, y = make_blobs(30, 4, seed=29)
        ens = fit_ensemble(X, y, EnsembleConfig(n_trees=10, bootstrap=True, seed=9))
        assert (ens.predict(X) == y).mean() >= 0.9

    def test_input_validation(self):
        with pytest.raises(ShapeError):
            fit_ensemble(np.zeros((0, 3)), np.zeros(0))
        with pytest.raises(ShapeError):
            fit_ensemble(np.zeros((4, 3)), np.zeros(5))
        with pytest.raises(DomainError):
            fit_ensemble(np.zeros((4, 3)), np.array([0.0, 1.0, 2.0, 0.0]))
        with pytest.raises(DomainError):
            fit_ensemble(np.zeros((4, 3)), np.ones(4))


class TestSelectCumulative:
    def test_reference_prefix(self):
        sel = select_cumulative(np.array([0.5, 0.3, 0.15, 0.05]), 0.95)
        assert list(sel.indices) == [0, 1, 2]
        assert abs(sel.captured - 0.95) < 1e-12
        assert sel.n_total == 4

    def test_single_dominant_feature(self):
        sel = select_cumulative(np.array([1.0, 0.0, 0.0]), 0.95)
        assert list(sel.indices) == [0]

    def test_uniform_hundred_keeps_ninety_five(self):
        sel = select_cumulative(np.full(100, 0.01), 0.95)
        assert len(sel) == 95
        assert list(sel.indices) == list(range(95))

    def test_ties_rank_by_ascending_index(self):
        sel = select_cumulative(np.array([0.2, 0.4, 0.4]), 0.5)
        assert list(sel.indices) == [1, 2]

    def test_minimality_on_random_vectors(self):
        rng = np.random.default_rng(30)
        for _ in range(100):
            size = int(rng.integers(1, 40))
            v = rng.exponential(size=size)
            v[rng.random(size) < 0.2] = 0.0
            if v.sum() == 0:
                v[0] = 1.0
            sel = select_cumulative(v, 0.95)
            total = v.sum()
            kept = v[sel.indices].sum()
            assert kept >= 0.95 * total - 1e-9 * total
            if len(sel) > 1:
                assert v[sel.indices[:-1]].sum() < 0.95 * total

    def test_unscaled_vectors_accepted(self):
        sel = select_cumulative(np.array([50.0, 30.0, 15.0, 5.0]), 0.95)
        assert list(sel.indices) == [0, 1, 2]

    def test_all_zero_rejected(self):
        with pytest.raises(SelectionError):
            select_cumulative(np.zeros(5))

    def test_bad_threshold_rejected(self):
        with pytest.raises(DomainError):
            select_cumulative(np.array([1.0]), 0.0)
        with pytest.raises(DomainError):
            select_cumulative(np.array([1.0]), 1.5)


class TestProject:
    def _selection(self):
        return select_cumulative(np.array([0.1, 0.6, 0.3]), 0.95)

    def test_matrix_columns_in_rank_order(self):
        sel = self._selection()
        assert list(sel.indices) == [1, 2, 0]
        X = np.arange(12.0).reshape(4, 3)
        got = project(X, sel)
        assert np.array_equal(got, X[:, [1, 2, 0]])

    def test_feature_matrix_keeps_provenance(self):
        sel = self._selection()
        fm = FeatureMatrix(
            np.arange(6, dtype=np.float32).reshape(2, 3),
            ["mass", "non-mass"],
            ["a", "b"],
            [1, 1],
            [1, 301],
            ["original", "original"],
        )
        out = project(fm, sel)
        assert out.features.shape == (2, 3)
        assert np.array_equal(out.features, fm.features[:, [1, 2, 0]])
        assert out.labels == fm.labels
        assert out.key(1) == fm.key(1)

    def test_out_of_range_selection_rejected(self):
        sel = self._selection()
        with pytest.raises(BoundsError):
            project(np.zeros((2, 2)), sel)


class TestSelectionFile:
    def test_roundtrip(self, tmp_path):
        rng = np.random.default_rng(31)
        v = rng.exponential(size=20)
        sel = select_cumulative(v / v.sum(), 0.9)
        path = tmp_path / "selection.csv"
        write_selection(sel, path)
        text = path.read_text()
        assert text.startswith("# threshold=0.9 ")
        assert "feature_index,importance,cumulative_importance" in text
        back = read_selection(path)
        assert np.array_equal(back.indices, sel.indices)
        np.testing.assert_allclose(back.importances, sel.importances, rtol=1e-9)
        assert back.threshold == sel.threshold
        assert abs(back.captured - sel.captured) < 1e-9
        assert back.n_total == sel.n_total

    def test_missing_header_rejected(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("feature_index,importance,cumulative_importance\n0,1.0,1.0\n")
        with pytest.raises(SelectionError):
            read_selection(path)
