import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oobcurves.datasets import (Dataset, DroppedRowsWarning, TaskKind, load_csv,
                                parse_generator_spec, save_csv, synthesize)


def write(tmp_path, text, name="data.csv"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


CSV_10 = "a,b,y\n" + "\n".join(
    f"{i},{i * 0.5},{'a' if i % 2 else 'b'}" for i in range(10)) + "\n"


class TestLoadCsv:
    def test_basic_binary(self, tmp_path):
        ds = load_csv(write(tmp_path, CSV_10), target="y")
        assert (ds.n, ds.p) == (10, 2)
        assert ds.task is TaskKind.BINARY
        assert ds.n_classes == 2
        # first-appearance encoding: row 0 has y='b'
        assert ds.target.levels == ("b", "a")
        assert ds.y[0] == 0 and ds.y[1] == 1

    def test_forced_regression_on_labels_fails(self, tmp_path):
        with pytest.raises(ValueError, match="regression"):
            load_csv(write(tmp_path, CSV_10), target="y", task="regression")

    def test_missing_cell_drops_row(self, tmp_path):
        text = CSV_10.replace("3,1.5,a", "3,,a", 1)
        with pytest.warns(DroppedRowsWarning, match="1 row"):
            ds = load_csv(write(tmp_path, text), target="y")
        assert ds.n == 9

    def test_missing_target_column(self, tmp_path):
        with pytest.raises(ValueError, match="target column"):
            load_csv(write(tmp_path, CSV_10), target="zzz")

    def test_ragged_row_reports_line(self, tmp_path):
        text = CSV_10 + "1,2\n"
        with pytest.raises(ValueError, match="line"):
            load_csv(write(tmp_path, text), target="y")

    def test_single_class_target(self, tmp_path):
        text = "x,y\n1,a\n2,a\n3,a\n"
        with pytest.raises(ValueError, match="single class"):
            load_csv(write(tmp_path, text), target="y")

    def test_integer_target_low_cardinality_is_classification(self, tmp_path):
        text = "x,y\n" + "\n".join(f"{i},{i % 3}" for i in range(12))
        ds = load_csv(write(tmp_path, text), target="y")
        assert ds.task is TaskKind.MULTICLASS
        assert ds.n_classes == 3

    def test_continuous_target_is_regression(self, tmp_path):
        text = "x,y\n" + "\n".join(f"{i},{i * 0.37}" for i in range(12))
        ds = load_csv(write(tmp_path, text), target="y")
        assert ds.task is TaskKind.REGRESSION

    def test_task_override_to_classification(self, tmp_path):
        text = "x,y\n" + "\n".join(f"{i},{i % 2}" for i in range(30))
        ds = load_csv(write(tmp_path, text), target="y", task="binary")
        assert ds.task is TaskKind.BINARY

    def test_categorical_feature_encoding_first_appearance(self, tmp_path):
        text = "c,y\nred,0\nblue,1\nred,0\ngreen,1\n"
        ds = load_csv(write(tmp_path, text), target="y")
        assert ds.columns[0].levels == ("red", "blue", "green")
        assert ds.X[:, 0].tolist() == [0.0, 1.0, 0.0, 2.0]

    def test_roundtrip(self, tmp_path):
        text = "c,x,y\nred,1.5,0\nblue,2.25,1\nred,-3.125,0\ngreen,0.0,1\n"
        ds = load_csv(write(tmp_path, text), target="y")
        out = tmp_path / "out.csv"
        save_csv(ds, out)
        ds2 = load_csv(out, target="y")
        assert np.array_equal(ds.X, ds2.X)
        assert np.array_equal(ds.y, ds2.y)
        assert ds.columns == ds2.columns
        assert ds2.task is ds.task


class TestDatasetInvariants:
    def test_rejects_single_row(self):
        with pytest.raises(ValueError):
            synthesize("two-gaussians(n=1,p=2,sep=1.0)", seed=0)

    def test_rejects_sparse_class_indices(self):
        from oobcurves.datasets import Column
        X = np.zeros((4, 1))
        with pytest.raises(ValueError, match="dense"):
            Dataset(X, np.array([0, 0, 2, 2]), TaskKind.MULTICLASS, 3,
                    (Column("x", "numeric"),), Column("y", "categorical", ("a", "b", "c")))


class TestSynthesize:
    def test_two_gaussians_balanced(self):
        ds = synthesize("two-gaussians(n=200,p=5,sep=3.0)", seed=1)
        assert ds.task is TaskKind.BINARY
        assert int(np.sum(ds.y == 0)) == 100 and int(np.sum(ds.y == 1)) == 100

    def test_label_noise_flip_count(self):
        ds = synthesize("label-noise(n=100,p=4,flip=0.3)", seed=7)
        clean = (ds.X[:, 0] > 0).astype(np.int64)
        assert int(np.sum(clean != ds.y)) == 30

    def test_deterministic(self):
        a = synthesize("two-gaussians(n=50,p=3,sep=2.0)", seed=9)
        b = synthesize("two-gaussians(n=50,p=3,sep=2.0)", seed=9)
        assert np.array_equal(a.X, b.X) and np.array_equal(a.y, b.y)
        c = synthesize("two-gaussians(n=50,p=3,sep=2.0)", seed=10)
        assert not np.array_equal(a.X, c.X)

    def test_unknown_generator(self):
        with pytest.raises(ValueError, match="unknown generator"):
            synthesize("mystery(n=10,p=2)", seed=0)

    def test_bad_sizes(self):
        with pytest.raises(ValueError):
            synthesize("linear-regression(n=0,p=3,noise_sd=1.0)", seed=0)

    def test_margin_traps_shape(self):
        ds = synthesize("margin-traps(n=100,p=4,trap_frac=0.1,trap_shift=0.4)", seed=2)
        assert ds.n == 100 and ds.task is TaskKind.BINARY

    def test_spec_parser(self):
        spec = parse_generator_spec("two-gaussians(n=200, p=5, sep=3.0)")
        assert spec.name == "two-gaussians"
        assert spec.params == {"n": 200, "p": 5, "sep": 3.0}
        with pytest.raises(ValueError, match="malformed"):
            parse_generator_spec("nope")


@settings(max_examples=25, deadline=None)
@given(n=st.integers(5, 40), p=st.integers(1, 6), seed=st.integers(0, 10_000),
       regression=st.booleans())
def test_roundtrip_property(tmp_path_factory, n, p, seed, regression):
    gen = (f"linear-regression(n={n},p={p},noise_sd=1.0)" if regression
           else f"two-gaussians(n={n},p={p},sep=2.0)")
    ds = synthesize(gen, seed=seed)
    path = tmp_path_factory.mktemp("rt") / "d.csv"
    save_csv(ds, path)
    back = load_csv(path, target="y")
    assert np.array_equal(ds.X, back.X)
    assert np.array_equal(ds.y, back.y)
    assert back.task is ds.task
