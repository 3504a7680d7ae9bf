import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lmcar.classifier import (EvalReport, config_grid, cross_validate, cross_validate_baseline,
                              evaluate, fit_baseline, grid_scores, knn_predict, pca_project,
                              predict, select_best)
from lmcar.optimizer import TrainConfig, TrainedModel, train


def _model(X, y, L=None, k=3):
    X = np.asarray(X, dtype=float)
    L = np.eye(X.shape[1]) if L is None else L
    return TrainedModel(transform=L, train_features=X, train_labels=np.asarray(y, dtype=np.int8),
                        config=TrainConfig(k=k, d=L.shape[0]), loss_trace=[])


def brute_knn(Z_train, y, z, k):
    d = [(float(np.sum((z - t) ** 2)), i) for i, t in enumerate(Z_train)]
    near = [i for _, i in sorted(d)[:k]]
    pos = sum(y[i] for i in near)
    if 2 * pos == k:
        return int(y[near[0]])
    return int(2 * pos > k)


class TestKnnPredict:
    def test_k1_training_point(self):
        X = np.array([[0.0, 0.0], [1.0, 0.0], [5.0, 5.0]])
        m = _model(X, [0, 1, 0], k=1)
        for x, label in zip(X, [0, 1, 0]):
            assert knn_predict(m, x) == label

    def test_majority(self):
        X = np.array([[0.0], [0.1], [0.2], [9.0]])
        m = _model(X, [1, 1, 0, 0], k=3)
        assert knn_predict(m, np.array([0.05])) == 1

    def test_even_k_tie_goes_to_nearest(self):
        X = np.array([[0.0], [1.0], [3.0], [4.0]])
        m = _model(X, [1, 0, 1, 0], k=2)
        assert knn_predict(m, np.array([0.9])) == 0
        assert knn_predict(m, np.array([0.1])) == 1

    def test_distance_tie_goes_to_lower_index(self):
        X = np.array([[-1.0], [1.0]])
        assert knn_predict(_model(X, [1, 0], k=1), np.array([0.0])) == 1
        assert knn_predict(_model(X, [0, 1], k=1), np.array([0.0])) == 0

    def test_dimension_mismatch(self):
        m = _model(np.eye(3), [0, 1, 0])
        with pytest.raises(ValueError, match="dims"):
            knn_predict(m, np.zeros(2))

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 10**6), st.sampled_from([1, 2, 3, 4, 5]))
    def test_matches_brute_force(self, seed, k):
        rng = np.random.default_rng(seed)
        X = rng.normal(size=(25, 6))
        y = rng.integers(0, 2, 25)
        L = rng.normal(size=(2, 6))
        Q = rng.normal(size=(10, 6))
        m = _model(X, y, L, k=k)
        got = predict(m, Q)
        expect = [brute_knn(X @ L.T, y, q @ L.T, k) for q in Q]
        assert got.tolist() == expect

    @pytest.mark.parametrize("seed", range(5))
    def test_orthogonal_invariance(self, seed):
        rng = np.random.default_rng(seed)
        X = rng.normal(size=(40, 8))
        y = rng.integers(0, 2, 40)
        L = rng.normal(size=(3, 8))
        q, r = np.linalg.qr(rng.normal(size=(3, 3)))
        Q = rng.normal(size=(30, 8))
        a = predict(_model(X, y, L), Q)
        b = predict(_model(X, y, q @ L), Q)
        np.testing.assert_array_equal(a, b)


class TestEvalReport:
    def test_perfect(self):
        r = EvalReport.from_predictions([1, 0, 1], [1, 0, 1])
        assert r.f1 == 1.0 and r.accuracy == 1.0

    def test_all_negative(self):
        assert EvalReport.from_predictions([1, 0, 1], [0, 0, 0]).f1 == 0.0

    def test_formula_arithmetic(self):
        r = EvalReport.from_counts(1, 1, 7, 1)
        assert r.f1 == pytest.approx(0.5) and r.accuracy == pytest.approx(0.8)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            EvalReport.from_predictions([], [])

    @given(st.lists(st.tuples(st.booleans(), st.booleans()), min_size=1, max_size=50))
    def test_counts_consistent(self, pairs):
        truth, pred = zip(*pairs)
        r = EvalReport.from_predictions(truth, pred)
        assert r.n == len(pairs)
        denom = 2 * r.tp + r.fp + r.fn
        assert r.f1 == (2 * r.tp / denom if denom else 0.0)
        assert r.accuracy == (r.tp + r.tn) / r.n
        assert 0.0 <= r.f1 <= 1.0

    def test_evaluate_fills_kept_fraction(self):
        X = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
        L = np.array([[1.0, 0.0]])
        r = evaluate(_model(X, [0, 1, 0, 1], L, k=1), X, [0, 1, 0, 1])
        assert r.kept_fraction == 0.5 and r.f1 == 1.0
        assert evaluate(_model(X, [0, 1, 0, 1], L, k=1), X, [0, 1, 0, 1], kept=1.0).kept_fraction == 1.0


class TestPCA:
    def test_line_reconstruction(self, rng):
        direction = np.array([1.0, 2.0, -2.0]) / 3.0
        X = rng.normal(size=(50, 1)) * direction + np.array([1.0, -1.0, 0.5])
        B = pca_project(X, 1)
        Xc = X - X.mean(0)
        assert np.abs(Xc - Xc @ B.T @ B).max() < 1e-10

    def test_zero_is_identity(self, rng):
        np.testing.assert_array_equal(pca_project(rng.normal(size=(10, 4)), 0), np.eye(4))

    def test_too_many_dims(self, rng):
        with pytest.raises(ValueError):
            pca_project(rng.normal(size=(10, 4)), 5)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10**6), st.integers(1, 6))
    def test_projected_covariance_diagonal_and_sorted(self, seed, d):
        rng = np.random.default_rng(seed)
        X = rng.normal(size=(40, 6)) @ rng.normal(size=(6, 6))
        B = pca_project(X, d)
        C = np.cov((X @ B.T).T, bias=True).reshape(d, d)
        off = C - np.diag(np.diag(C))
        assert np.abs(off).max() <= 1e-9 * max(1.0, np.abs(C).max())
        assert (np.diff(np.diag(C)) <= 1e-9 * np.abs(C).max()).all()
        np.testing.assert_allclose(B @ B.T, np.eye(d), atol=1e-10)
        for row in B:
            first = row[np.abs(row) > 1e-12][0]
            assert first > 0

    def test_full_pca_matches_plain_knn(self, synthetic_split):
        _, train_std, test_std, _ = synthetic_split
        plain = fit_baseline(train_std, 0, 0)
        full = fit_baseline(train_std, 0, train_std.n_dims)
        np.testing.assert_array_equal(predict(plain, test_std.features),
                                      predict(full, test_std.features))


class TestCrossValidate:
    def test_single_point(self, synthetic_split):
        train_raw = synthetic_split[0]
        cfg = TrainConfig(c=5.0, lam=0.01)
        assert cross_validate(train_raw, 0, [cfg]) is cfg

    def test_tie_prefers_larger_lambda(self):
        grid = [TrainConfig(lam=0.1), TrainConfig(lam=1.0)]
        assert select_best(grid, [0.9, 0.9]).lam == 1.0

    def test_tie_then_larger_c_then_order(self):
        grid = [TrainConfig(c=1.0, lam=1.0), TrainConfig(c=5.0, lam=1.0), TrainConfig(c=5.0, lam=1.0, k=2)]
        assert select_best(grid, [0.8, 0.8, 0.8]) is grid[1]
        assert select_best([3, 1, 2], [0.5, 0.5, 0.4]) == 3

    def test_best_score_wins(self):
        grid = [TrainConfig(lam=10.0), TrainConfig(lam=0.0)]
        assert select_best(grid, [0.7, 0.71]).lam == 0.0

    def test_empty_grid(self, synthetic_split):
        with pytest.raises(ValueError):
            grid_scores(synthetic_split[0], 0, [])

    def test_config_grid_order(self):
        g = config_grid(TrainConfig(), [1, 5], [0, 0.1])
        assert [(p.c, p.lam) for p in g] == [(1, 0), (1, 0.1), (5, 0), (5, 0.1)]

    def test_baseline_selection(self, synthetic_split):
        d = cross_validate_baseline(synthetic_split[0], 0, [0, 1, 3], folds=3, seed=0)
        assert d in (0, 1, 3)

    def test_cv_choice_close_to_best_on_test(self, synthetic_split):
        train_raw, train_std, test_std, _ = synthetic_split
        grid = config_grid(TrainConfig(max_epochs=300), [1.0], [0.0, 0.1, 1.0, 10.0])
        chosen = cross_validate(train_raw, 0, grid, folds=3, seed=0)
        y = test_std.labels[:, 0]
        test_f1 = {p.lam: evaluate(train(train_std, 0, p), test_std.features, y).f1 for p in grid}
        assert test_f1[chosen.lam] >= max(test_f1.values()) - 0.05
