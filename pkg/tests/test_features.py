import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from tabattack.constraints import check, parse_constraints
from tabattack.features import (
    Dataset,
    DatasetError,
    FeatureSpec,
    Scaler,
    SyntheticConfig,
    fit_scaler,
    generate_synthetic,
    load_dataset,
    load_spec,
    save_dataset,
    save_spec,
    scale,
    split,
    unscale,
)


def write_spec(path, specs, critical=1):
    path.write_text(json.dumps({"features": [s.to_json() for s in specs], "critical_class": critical}))


@pytest.fixture
def two_specs():
    return [FeatureSpec("a", "continuous", True, 0.0, 1.0), FeatureSpec("b", "discrete", False, 0.0, 5.0)]


def test_load_small_csv(tmp_path, two_specs):
    write_spec(tmp_path / "s.json", two_specs)
    (tmp_path / "d.csv").write_text("a,b,label\n0.1,1,0\n0.5,2,1\n0.9,3,1\n")
    ds = load_dataset(tmp_path / "d.csv", tmp_path / "s.json")
    assert (len(ds), ds.n_features) == (3, 2)
    assert ds.labels.tolist() == [0, 1, 1]
    assert ds.critical_class == 1


def test_label_column_may_sit_anywhere(tmp_path, two_specs):
    write_spec(tmp_path / "s.json", two_specs)
    (tmp_path / "d.csv").write_text("label,b,a\n1,2,0.25\n")
    ds = load_dataset(tmp_path / "d.csv", tmp_path / "s.json")
    assert ds.rows.tolist() == [[0.25, 2.0]]


def test_non_numeric_cell(tmp_path, two_specs):
    write_spec(tmp_path / "s.json", two_specs)
    (tmp_path / "d.csv").write_text("a,b,label\nabc,1,0\n")
    with pytest.raises(DatasetError, match="non-numeric at row 1"):
        load_dataset(tmp_path / "d.csv", tmp_path / "s.json")


def test_bound_violation_names_row(tmp_path, two_specs):
    write_spec(tmp_path / "s.json", two_specs)
    (tmp_path / "d.csv").write_text("a,b,label\n0.5,1,0\n5.0,1,1\n")
    with pytest.raises(DatasetError, match="row 2"):
        load_dataset(tmp_path / "d.csv", tmp_path / "s.json")


def test_missing_column(tmp_path, two_specs):
    write_spec(tmp_path / "s.json", two_specs)
    (tmp_path / "d.csv").write_text("a,label\n0.5,0\n")
    with pytest.raises(DatasetError, match="missing column.*b"):
        load_dataset(tmp_path / "d.csv", tmp_path / "s.json")


def test_spec_accepts_bare_array(tmp_path, two_specs):
    (tmp_path / "s.json").write_text(json.dumps([s.to_json() for s in two_specs]))
    specs, critical = load_spec(tmp_path / "s.json")
    assert specs == two_specs and critical == 1


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(name="x", ftype="continuous", mutable=True, lower=2.0, upper=1.0),
        dict(name="x", ftype="discrete", mutable=True, lower=0.5, upper=3.0),
        dict(name="x", ftype="categorical", mutable=True, lower=0.0, upper=1.0, categories=()),
        dict(name="x", ftype="categorical", mutable=True, lower=0.0, upper=1.0, categories=(0.0, 2.0)),
        dict(name="x", ftype="ordinal", mutable=True, lower=0.0, upper=1.0),
    ],
)
def test_feature_spec_invariants(kwargs):
    with pytest.raises(DatasetError):
        FeatureSpec(**kwargs)


def test_fit_scaler_examples():
    specs = [FeatureSpec("p", "continuous", True, 0, 10), FeatureSpec("q", "continuous", True, 0, 10)]
    ds = Dataset(specs, np.array([[0, 3], [2, 3], [4, 3]], float), np.zeros(3, int))
    sc = fit_scaler(ds)
    assert sc.min.tolist() == [0, 3] and sc.max.tolist() == [4, 4]
    assert scale(np.array([2.0, 3.0]), sc).tolist() == [0.5, 0.0]


def test_fit_scaler_empty():
    specs = [FeatureSpec("p", "continuous", True, 0, 1)]
    with pytest.raises(DatasetError):
        fit_scaler(Dataset(specs, np.zeros((0, 1)), np.zeros(0, int)))


def test_scale_dimension_mismatch():
    sc = Scaler(np.zeros(2), np.ones(2))
    with pytest.raises(ValueError, match="dimension mismatch"):
        scale(np.zeros(3), sc)
    with pytest.raises(ValueError, match="dimension mismatch"):
        unscale(np.zeros(1), sc)


@settings(max_examples=200, deadline=None)
@given(
    lo=arrays(np.float64, 3, elements=st.floats(-1e3, 1e3)),
    width=arrays(np.float64, 3, elements=st.floats(1e-2, 1e3)),
    u=arrays(np.float64, (5, 3), elements=st.floats(0, 1)),
)
def test_scale_roundtrip(lo, width, u):
    sc = Scaler(lo, lo + width)
    x = lo + u * width
    assert np.allclose(unscale(scale(x, sc), sc), x, atol=1e-9, rtol=0)
    assert np.allclose(scale(unscale(u, sc), sc), u, atol=1e-9, rtol=0)


def _imbalanced(n=100, pos=20):
    specs = [FeatureSpec("v", "continuous", True, 0, 1000)]
    return Dataset(specs, np.arange(n, dtype=float)[:, None], np.r_[np.ones(pos, int), np.zeros(n - pos, int)])


def test_split_stratified_and_deterministic():
    ds = _imbalanced()
    tr, te = split(ds, 0.25, 3)
    assert (len(tr), len(te)) == (75, 25)
    assert abs(te.labels.sum() - 5) <= 1
    tr2, te2 = split(ds, 0.25, 3)
    assert np.array_equal(te.rows, te2.rows) and np.array_equal(tr.rows, tr2.rows)
    # a partition: nothing lost, nothing duplicated
    assert sorted(np.r_[tr.rows[:, 0], te.rows[:, 0]].tolist()) == list(range(100))


@pytest.mark.parametrize("frac", [0.0, 1.0, -0.1])
def test_split_rejects_fraction(frac):
    with pytest.raises(ValueError):
        split(_imbalanced(), frac, 0)


def test_split_rejects_singleton_class():
    with pytest.raises(DatasetError, match="fewer than 2"):
        split(_imbalanced(pos=1), 0.25, 0)


def test_synthetic_satisfies_constraints_and_bounds():
    ds, text = generate_synthetic(SyntheticConfig(), 0)
    assert (len(ds), ds.n_features) == (1000, 6)
    omega = parse_constraints(text, ds.specs)
    assert len(omega) == 3
    assert check(omega, ds.rows).all()
    lo = np.array([s.lower for s in ds.specs])
    hi = np.array([s.upper for s in ds.specs])
    assert ((ds.rows >= lo) & (ds.rows <= hi)).all()
    assert not all(s.mutable for s in ds.specs)


def test_synthetic_is_deterministic(tmp_path):
    a, ta = generate_synthetic(SyntheticConfig(), 5)
    b, tb = generate_synthetic(SyntheticConfig(), 5)
    save_dataset(tmp_path / "a.csv", a)
    save_dataset(tmp_path / "b.csv", b)
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes() and ta == tb


def test_synthetic_extra_constraints():
    ds, text = generate_synthetic(SyntheticConfig(n_features=8, n_constraints=5), 1)
    omega = parse_constraints(text, ds.specs)
    assert len(omega) == 5 and check(omega, ds.rows).all()


def test_synthetic_unsatisfiable():
    with pytest.raises(DatasetError, match="unsatisfiable"):
        generate_synthetic(SyntheticConfig(n_features=6, n_constraints=4), 0)


def test_dataset_roundtrip_through_files(tmp_path):
    ds, _ = generate_synthetic(SyntheticConfig(n_rows=120), 2)
    save_dataset(tmp_path / "d.csv", ds)
    save_spec(tmp_path / "s.json", ds.specs, ds.critical_class)
    back = load_dataset(tmp_path / "d.csv", tmp_path / "s.json")
    assert np.array_equal(back.rows, ds.rows) and np.array_equal(back.labels, ds.labels)
    assert back.specs == ds.specs
