import numpy as np
import pytest

from oobcurves.cart import Tree, TreeParams, predict_rows, predict_tree, train_tree
from oobcurves.datasets import Column, Dataset, TaskKind, synthesize
from oobcurves.seeding import rng_for

from oracles import OracleTree, oracle_best_gain


def tiny_binary(x, y):
    return Dataset(np.asarray(x, float).reshape(-1, 1), np.asarray(y, np.int64),
                   TaskKind.BINARY, 2, (Column("x1", "numeric"),),
                   Column("y", "categorical", ("0", "1")))


def tiny_regression(x, y):
    return Dataset(np.asarray(x, float).reshape(-1, 1), np.asarray(y, float),
                   TaskKind.REGRESSION, 0, (Column("x1", "numeric"),),
                   Column("y", "numeric"))


class TestSingleTree:
    def test_separable_1d(self):
        ds = tiny_binary([1, 2, 3, 4], [0, 0, 1, 1])
        tree = train_tree(ds, np.arange(4), TreeParams(1, 1), seed=5)
        assert tree.n_nodes == 3
        assert 2.0 < tree.threshold[0] < 3.0
        preds = predict_rows(tree, ds.X, np.arange(4)).astype(int)
        assert np.array_equal(preds, ds.y)

    def test_constant_response_single_leaf(self):
        ds = tiny_regression([1, 2, 3, 4], [5.0, 5.0, 5.0, 5.0])
        tree = train_tree(ds, np.arange(4), TreeParams(1, 1), seed=1)
        assert tree.n_nodes == 1
        assert predict_tree(tree, [42.0]) == 5.0

    def test_boundary_row_matches_oracle(self):
        ds = tiny_binary([1, 2, 3, 4], [0, 0, 1, 1])
        tree = train_tree(ds, np.arange(4), TreeParams(1, 1), seed=5)
        oracle = OracleTree(classification=True).fit(ds.X, ds.y)
        for x in (1.5, 2.5, 3.5, 2.0, 3.0):
            assert predict_tree(tree, [x]) == oracle.predict_one([x])

    def test_empty_indices_rejected(self):
        ds = tiny_binary([1, 2, 3, 4], [0, 0, 1, 1])
        with pytest.raises(ValueError, match="empty"):
            train_tree(ds, [], TreeParams(1, 1), seed=0)

    def test_mtry_bounds(self):
        ds = tiny_binary([1, 2, 3, 4], [0, 0, 1, 1])
        with pytest.raises(ValueError, match="mtry"):
            train_tree(ds, np.arange(4), TreeParams(2, 1), seed=0)

    def test_determinism(self, gauss200):
        rows = rng_for(0, "rows").integers(0, gauss200.n, gauss200.n)
        a = train_tree(gauss200, rows, TreeParams(2, 1), seed=17)
        b = train_tree(gauss200, rows, TreeParams(2, 1), seed=17)
        assert np.array_equal(a.feature, b.feature)
        assert np.array_equal(a.threshold, b.threshold)
        assert np.array_equal(a.leaf_value, b.leaf_value)
        c = train_tree(gauss200, rows, TreeParams(2, 1), seed=18)
        assert not (np.array_equal(a.feature, c.feature)
                    and np.array_equal(a.threshold, c.threshold))

    def test_training_set_purity(self, gauss200):
        tree = train_tree(gauss200, np.arange(gauss200.n),
                          TreeParams(gauss200.p, 1), seed=3)
        preds = predict_rows(tree, gauss200.X, np.arange(gauss200.n)).astype(int)
        assert np.array_equal(preds, gauss200.y)

    def test_holdout_error_small(self):
        # threshold established with the exhaustive-split oracle first
        errs_oracle = []
        for seed in range(20):
            train = synthesize("two-gaussians(n=200,p=5,sep=3.0)", seed=seed)
            test = synthesize("two-gaussians(n=200,p=5,sep=3.0)", seed=10_000 + seed)
            oracle = OracleTree(classification=True).fit(train.X, train.y)
            errs_oracle.append(float(np.mean(oracle.predict(test.X) != test.y)))
        assert np.mean(errs_oracle) < 0.15

        errs = []
        for seed in range(100):
            train = synthesize("two-gaussians(n=200,p=5,sep=3.0)", seed=seed)
            test = synthesize("two-gaussians(n=200,p=5,sep=3.0)", seed=10_000 + seed)
            tree = train_tree(train, np.arange(train.n), seed=seed)
            preds = predict_rows(tree, test.X, np.arange(test.n)).astype(int)
            errs.append(float(np.mean(preds != test.y)))
        assert np.mean(errs) < 0.15


class TestSplitOptimality:
    def test_matches_bruteforce_classification(self):
        rng = rng_for(0, "opt-clf")
        for trial in range(30):
            n = int(rng.integers(5, 50))
            p = int(rng.integers(1, 5))
            X = np.round(rng.standard_normal((n, p)), 2)
            y = rng.integers(0, 2, n)
            if np.unique(y).size < 2:
                y[0] = 1 - y[0]
            ds = Dataset(X, y.astype(np.int64), TaskKind.BINARY, 2,
                         tuple(Column(f"x{j}", "numeric") for j in range(p)),
                         Column("y", "categorical", ("0", "1")))
            tree = train_tree(ds, np.arange(n), TreeParams(p, 1), seed=trial)
            best = oracle_best_gain(X, y, classification=True)
            if tree.n_nodes == 1:
                assert best is None or best < 1e-9
                continue
            f, thr = int(tree.feature[0]), float(tree.threshold[0])
            mask = X[:, f] <= thr
            gini = lambda v: 1 - np.sum((np.bincount(v, minlength=2) / max(len(v), 1)) ** 2) if len(v) else 0.0
            got = gini(y) - (mask.sum() * gini(y[mask]) + (~mask).sum() * gini(y[~mask])) / n
            assert best == pytest.approx(got, abs=1e-9)

    def test_matches_bruteforce_regression(self):
        rng = rng_for(0, "opt-reg")
        for trial in range(30):
            n = int(rng.integers(5, 50))
            p = int(rng.integers(1, 5))
            X = np.round(rng.standard_normal((n, p)), 2)
            y = np.round(rng.standard_normal(n) * 3, 3)
            ds = Dataset(X, y, TaskKind.REGRESSION, 0,
                         tuple(Column(f"x{j}", "numeric") for j in range(p)),
                         Column("y", "numeric"))
            tree = train_tree(ds, np.arange(n), TreeParams(p, 1), seed=trial)
            best = oracle_best_gain(X, y, classification=False)
            if tree.n_nodes == 1:
                assert best is None or best < 1e-9
                continue
            f, thr = int(tree.feature[0]), float(tree.threshold[0])
            mask = X[:, f] <= thr
            rss = lambda v: float(np.sum((v - v.mean()) ** 2)) if len(v) else 0.0
            got = rss(y) - rss(y[mask]) - rss(y[~mask])
            assert best == pytest.approx(got, rel=1e-9, abs=1e-9)


class TestCategorical:
    def categorical_ds(self):
        # level 'b' and 'd' carry class 1
        levels = ("a", "b", "c", "d")
        codes = np.array([0, 1, 2, 3] * 6, dtype=float).reshape(-1, 1)
        y = np.array([0, 1, 0, 1] * 6, dtype=np.int64)
        return Dataset(codes, y, TaskKind.BINARY, 2,
                       (Column("c", "categorical", levels),),
                       Column("y", "categorical", ("0", "1")))

    def test_level_set_split(self):
        ds = self.categorical_ds()
        tree = train_tree(ds, np.arange(ds.n), TreeParams(1, 1), seed=0)
        assert tree.n_nodes == 3
        assert tree.has_routes
        preds = predict_rows(tree, ds.X, np.arange(ds.n)).astype(int)
        assert np.array_equal(preds, ds.y)
        sides = tree.routes[0, :4]
        assert sides[0] == sides[2] and sides[1] == sides[3] and sides[0] != sides[1]

    def test_unseen_level_goes_to_heavier_child(self):
        levels = ("a", "b", "c")
        codes = np.array([0.0] * 5 + [1.0] * 2).reshape(-1, 1)
        y = np.array([0] * 5 + [1] * 2, dtype=np.int64)
        ds = Dataset(codes, y, TaskKind.BINARY, 2,
                     (Column("c", "categorical", levels),),
                     Column("y", "categorical", ("0", "1")))
        tree = train_tree(ds, np.arange(7), TreeParams(1, 1), seed=0)
        # level 'c' never seen while training: routed with the 5-row child
        assert predict_tree(tree, [2.0]) == 0

    def test_out_of_range_level_rejected(self):
        ds = self.categorical_ds()
        tree = train_tree(ds, np.arange(ds.n), TreeParams(1, 1), seed=0)
        with pytest.raises(ValueError, match="cardinality"):
            predict_tree(tree, [9.0])

    def test_multiclass_one_vs_rest(self):
        levels = ("a", "b", "c")
        codes = np.array([0, 1, 2] * 8, dtype=float).reshape(-1, 1)
        y = np.array([0, 1, 2] * 8, dtype=np.int64)
        ds = Dataset(codes, y, TaskKind.MULTICLASS, 3,
                     (Column("c", "categorical", levels),),
                     Column("y", "categorical", levels))
        tree = train_tree(ds, np.arange(ds.n), TreeParams(1, 1), seed=0)
        preds = predict_rows(tree, ds.X, np.arange(ds.n)).astype(int)
        assert np.array_equal(preds, ds.y)


def test_row_length_validation(gauss200):
    tree = train_tree(gauss200, np.arange(gauss200.n), seed=0)
    with pytest.raises(ValueError, match="features"):
        predict_tree(tree, [1.0, 2.0])
