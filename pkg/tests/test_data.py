import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lmcar.data import (Dataset, DatasetError, FeatureGroupSpec, SyntheticSpec,
                        apply_standardization, kfold, kfold_indices, load_dataset,
                        make_synthetic, make_synthetic_suite, save_dataset, split,
                        split_indices, standardize, stratified_train_count)


def _write(tmp_path, features, labels, groups, aff=("a", "b")):
    fp, lp, gp = tmp_path / "f.csv", tmp_path / "l.csv", tmp_path / "g.json"
    D = len(features[0])
    lines = ["instance_id," + ",".join(f"d{j}" for j in range(D))]
    lines += [f"i{r}," + ",".join(str(v) for v in row) for r, row in enumerate(features)]
    fp.write_text("\n".join(lines) + "\n")
    lines = ["instance_id," + ",".join(aff)]
    lines += [f"i{r}," + ",".join(str(v) for v in row) for r, row in enumerate(labels)]
    lp.write_text("\n".join(lines) + "\n")
    gp.write_text(json.dumps(groups))
    return fp, lp, gp


FEATS = [[1.0, 2.0, 3.0], [4.0, 5.0, 6.0], [7.0, 8.0, 9.5], [0.5, -1.0, 2.0]]
LABELS = [[1, 0], [0, 1], [1, 1], [0, 0]]
ONE_GROUP = [{"name": "all", "offset": 0, "length": 3, "point_mapped": False}]


class TestLoad:
    def test_direct_construction(self, tmp_path):
        ds = load_dataset(*_write(tmp_path, FEATS, LABELS, ONE_GROUP))
        assert (ds.n_instances, ds.n_dims, ds.n_affordances) == (4, 3, 2)
        assert not ds.standardized
        assert ds.affordance_names == ("a", "b")
        np.testing.assert_array_equal(ds.features, np.array(FEATS))

    def test_degenerate_column(self, tmp_path):
        labels = [[0, 0], [0, 1], [0, 1], [0, 0]]
        with pytest.raises(DatasetError, match="degenerate affordance column 'a'"):
            load_dataset(*_write(tmp_path, FEATS, labels, ONE_GROUP))

    def test_group_coverage(self, tmp_path):
        groups = [{"name": "g", "offset": 0, "length": 2}]
        with pytest.raises(DatasetError, match=r"cover only \[0, 2\) of D=3"):
            load_dataset(*_write(tmp_path, FEATS, LABELS, groups))

    def test_group_overlap(self, tmp_path):
        groups = [{"name": "g", "offset": 0, "length": 2},
                  {"name": "h", "offset": 1, "length": 2}]
        with pytest.raises(DatasetError, match="overlaps"):
            load_dataset(*_write(tmp_path, FEATS, LABELS, groups))

    def test_group_gap(self, tmp_path):
        groups = [{"name": "g", "offset": 0, "length": 1},
                  {"name": "h", "offset": 2, "length": 1}]
        with pytest.raises(DatasetError, match="gap"):
            load_dataset(*_write(tmp_path, FEATS, LABELS, groups))

    def test_row_count_mismatch(self, tmp_path):
        with pytest.raises(DatasetError, match="4 rows.*3 rows"):
            load_dataset(*_write(tmp_path, FEATS, LABELS[:3], ONE_GROUP))

    def test_non_finite(self, tmp_path):
        feats = [row[:] for row in FEATS]
        feats[2][1] = float("nan")
        with pytest.raises(DatasetError, match="non-finite"):
            load_dataset(*_write(tmp_path, feats, LABELS, ONE_GROUP))

    def test_problems_are_enumerated(self, tmp_path):
        labels = [[0, 0], [0, 0], [0, 0], [0, 0]]
        with pytest.raises(DatasetError) as err:
            load_dataset(*_write(tmp_path, FEATS, labels, [{"name": "g", "offset": 0, "length": 2}]))
        assert len(err.value.problems) == 3

    def test_roundtrip_bit_exact(self, tmp_path, rng):
        X = rng.normal(size=(6, 4)) * 10 ** rng.uniform(-8, 8, size=(6, 4))
        ds = Dataset(X, np.array([[0], [1], [0], [1], [1], [0]]), ("a",),
                     (FeatureGroupSpec("g", 0, 4),), tuple(f"x{i}" for i in range(6)))
        paths = [tmp_path / n for n in ("f.csv", "l.csv", "g.json")]
        save_dataset(ds, *paths)
        first = [p.read_bytes() for p in paths]
        back = load_dataset(*paths)
        np.testing.assert_array_equal(back.features, X)
        save_dataset(back, *paths)
        assert [p.read_bytes() for p in paths] == first


class TestStandardize:
    def _ds(self, cols):
        X = np.array(cols, dtype=float).T
        n = len(X)
        y = np.array([[i % 2] for i in range(n)])
        return Dataset(X, y, ("a",), (FeatureGroupSpec("g", 0, X.shape[1]),),
                       tuple(str(i) for i in range(n)))

    def test_two_point_column(self):
        ds, params = standardize(self._ds([[1.0, 3.0]]))
        np.testing.assert_allclose(ds.features[:, 0], [-1.0, 1.0])
        assert params.mean[0] == 2.0 and params.std[0] == 1.0
        assert params.convention == "population"

    def test_constant_and_zero_columns(self):
        ds, params = standardize(self._ds([[5.0, 5.0, 5.0], [0.0, 0.0, 0.0], [1.0, 2.0, 4.0]]))
        np.testing.assert_array_equal(ds.features[:, 0], 0.0)
        np.testing.assert_array_equal(ds.features[:, 1], 0.0)
        assert params.std[0] == 1.0 and params.std[1] == 1.0

    def test_moments(self, rng):
        ds, _ = standardize(self._ds(rng.normal(3, 7, size=(5, 40))))
        np.testing.assert_allclose(ds.features.mean(0), 0.0, atol=1e-10)
        np.testing.assert_allclose(ds.features.std(0), 1.0, atol=1e-10)

    def test_double_standardization_rejected(self):
        ds, params = standardize(self._ds([[1.0, 3.0]]))
        with pytest.raises(ValueError, match="already standardized"):
            standardize(ds)
        with pytest.raises(ValueError, match="already standardized"):
            apply_standardization(ds, params)

    def test_test_side_uses_train_params(self):
        train, params = standardize(self._ds([[1.0, 3.0]]))
        test = apply_standardization(self._ds([[5.0, 7.0]]), params)
        np.testing.assert_allclose(test.features[:, 0], [3.0, 5.0])


def _labels(n_pos, n_neg):
    return np.array([1] * n_pos + [0] * n_neg)


class TestSplit:
    def test_ratio_arithmetic(self):
        y = _labels(10, 90)
        tr, te = split_indices(y, 0.7, seed=3)
        assert y[tr].sum() == 7 and (y[tr] == 0).sum() == 63

    def test_deterministic(self):
        y = _labels(10, 90)
        a = split_indices(y, 0.7, seed=3)
        b = split_indices(y, 0.7, seed=3)
        np.testing.assert_array_equal(a[0], b[0])
        np.testing.assert_array_equal(a[1], b[1])

    def test_single_positive_rejected(self):
        with pytest.raises(ValueError, match="2 positives"):
            split_indices(_labels(1, 20), 0.7, 0)

    def test_dataset_split(self, synthetic):
        ds, _ = synthetic
        tr, te = split(ds, 0, 0.7, seed=0)
        assert set(tr.instance_ids).isdisjoint(te.instance_ids)
        assert tr.n_instances + te.n_instances == ds.n_instances

    @settings(max_examples=200, deadline=None)
    @given(st.integers(2, 60), st.integers(2, 60), st.floats(0.05, 0.95), st.integers(0, 2**32))
    def test_partition_and_rounding_rule(self, n_pos, n_neg, ratio, seed):
        y = _labels(n_pos, n_neg)
        tr, te = split_indices(y, ratio, seed)
        assert sorted(np.concatenate([tr, te]).tolist()) == list(range(len(y)))
        for cls, n in ((1, n_pos), (0, n_neg)):
            expect = min(max(int(np.floor(ratio * n + 0.5)), 1), n - 1)
            assert (y[tr] == cls).sum() == expect == stratified_train_count(n, ratio)
            assert (y[te] == cls).sum() >= 1


class TestKFold:
    def test_fold_sizes(self):
        folds = kfold_indices(_labels(5, 5), 5, seed=0)
        assert [len(v) for _, v in folds] == [2] * 5

    def test_union_is_full_index_set(self):
        folds = kfold_indices(_labels(7, 23), 5, seed=1)
        val = np.concatenate([v for _, v in folds])
        assert sorted(val.tolist()) == list(range(30))
        for tr, va in folds:
            assert set(tr).isdisjoint(va) and len(tr) + len(va) == 30

    def test_insufficient_positives(self):
        with pytest.raises(ValueError, match="5 positives"):
            kfold_indices(_labels(3, 20), 5, seed=0)

    @settings(max_examples=100, deadline=None)
    @given(st.integers(2, 8), st.integers(0, 30), st.integers(0, 30), st.integers(0, 2**32))
    def test_stratified_partition(self, k, extra_pos, extra_neg, seed):
        y = _labels(k + extra_pos, k + extra_neg)
        folds = kfold_indices(y, k, seed)
        val = np.concatenate([v for _, v in folds])
        assert sorted(val.tolist()) == list(range(len(y)))
        for _, va in folds:
            assert y[va].sum() >= 1 and (y[va] == 0).sum() >= 1

    def test_dataset_kfold(self, synthetic):
        ds, _ = synthetic
        pairs = kfold(ds, 0, 5, seed=0)
        assert len(pairs) == 5
        assert sum(v.n_instances for _, v in pairs) == ds.n_instances


class TestSynthetic:
    def test_class_mean_difference(self):
        ds, informative = make_synthetic(SyntheticSpec((100, 100), 50, (0, 1, 2), 4.0, 1.0, seed=7))
        y = ds.labels[:, 0]
        diff = ds.features[y == 1].mean(0) - ds.features[y == 0].mean(0)
        assert informative == [0, 1, 2]
        np.testing.assert_allclose(diff[:3], 4.0, atol=0.5)
        assert np.abs(diff[3:]).max() < 0.5

    def test_deterministic(self):
        spec = SyntheticSpec((30, 20), 10, (4,), 2.0, 1.0, seed=11)
        a, _ = make_synthetic(spec)
        b, _ = make_synthetic(spec)
        assert a.features.tobytes() == b.features.tobytes()
        assert a.labels.tobytes() == b.labels.tobytes()

    def test_empty_informative_rejected(self):
        with pytest.raises(ValueError, match="informative_dims is empty"):
            SyntheticSpec((10, 10), 5, (), 4.0)

    def test_invalid_spec(self):
        with pytest.raises(ValueError):
            SyntheticSpec((10, 10), 5, (7,), 4.0)
        with pytest.raises(ValueError):
            SyntheticSpec((10, 10), 5, (1,), 0.0)

    def test_suite_layout(self):
        ds = make_synthetic_suite(40, 12, {"p": [0, 1], "q": [0, 1], "r": [5]}, 4.0,
                                  seed=0, group_size=5)
        assert ds.affordance_names == ("p", "q", "r")
        assert [g.length for g in ds.groups] == [5, 5, 2]
        assert (ds.labels.sum(0) == 20).all()
