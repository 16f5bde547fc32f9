import datetime as dt
import math
import statistics

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from latentconf.dataset import (
    DatasetError,
    Scaler,
    apply_scaler,
    fit_scaler,
    load_csv,
    split_by_date,
    write_csv,
)

from conftest import make_dataset

GOOD = """id,lat,lon,date,ndvi,lst,target
t1,45.1,11.2,2019-06-01,0.5,21.0,10
t2,45.2,11.3,2020-07-15,0.4,1e1,0
t3,45.3,11.4,2021-08-20,-0.1,22.5,3.5
"""


def write(tmp_path, text, name="d.csv"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


def test_load_well_formed(tmp_path):
    d = load_csv(write(tmp_path, GOOD))
    assert len(d) == 3
    assert d.feature_names == ("ndvi", "lst")
    assert d.ids == ("t1", "t2", "t3")
    assert d.dates[1] == dt.date(2020, 7, 15)
    np.testing.assert_array_equal(d.features[1], [0.4, 10.0])
    np.testing.assert_array_equal(d.target, [10, 0, 3.5])


def test_nan_cell_cites_row(tmp_path):
    text = GOOD.replace("2020-07-15,0.4", "2020-07-15,nan")
    with pytest.raises(DatasetError, match="row 2"):
        load_csv(write(tmp_path, text))


def test_empty_cell_cites_row(tmp_path):
    text = GOOD.replace("2021-08-20,-0.1", "2021-08-20,")
    with pytest.raises(DatasetError, match="row 3.*empty"):
        load_csv(write(tmp_path, text))


def test_duplicate_id(tmp_path):
    with pytest.raises(DatasetError, match="duplicate id 't1'"):
        load_csv(write(tmp_path, GOOD.replace("t2,", "t1,")))


@pytest.mark.parametrize("column", ["id", "lat", "lon", "date", "target"])
def test_missing_column_named(tmp_path, column):
    lines = GOOD.splitlines()
    header = lines[0].split(",")
    k = header.index(column)
    text = "\n".join(",".join(c for j, c in enumerate(l.split(",")) if j != k) for l in lines)
    with pytest.raises(DatasetError, match=f"'{column}'"):
        load_csv(write(tmp_path, text))


def test_unlabeled_load(tmp_path):
    text = "\n".join(",".join(l.split(",")[:-1]) for l in GOOD.splitlines())
    d = load_csv(write(tmp_path, text), require_target=False)
    assert d.target is None and len(d) == 3


@pytest.mark.parametrize(
    "old,new,msg",
    [("45.1,11.2", "95.0,11.2", "lat"), ("45.1,11.2", "45.1,181", "lon"),
     (",10\n", ",-1\n", "target"), ("2019-06-01", "2019/06/01", "date")],
)
def test_row_validation(tmp_path, old, new, msg):
    with pytest.raises(DatasetError, match=msg):
        load_csv(write(tmp_path, GOOD.replace(old, new)))


def test_split_by_year():
    d = make_dataset([1.0, 2.0, 3.0],
                     dates=[dt.date(2019, 6, 1), dt.date(2020, 6, 1), dt.date(2021, 6, 1)])
    train, test = split_by_date(d, dt.date(2020, 12, 31))
    assert len(train) == 2 and len(test) == 1
    assert test.ids == ("r2",)


def test_split_boundary_goes_to_train():
    d = make_dataset([1.0, 2.0], dates=[dt.date(2020, 12, 31), dt.date(2021, 1, 1)])
    train, test = split_by_date(d, dt.date(2020, 12, 31))
    assert train.ids == ("r0",) and test.ids == ("r1",)


def test_split_empty_sides():
    d = make_dataset([1.0, 2.0], dates=[dt.date(2019, 1, 1), dt.date(2020, 1, 1)])
    with pytest.raises(DatasetError, match="test split is empty"):
        split_by_date(d, dt.date(2020, 12, 31))
    with pytest.raises(DatasetError, match="train split is empty"):
        split_by_date(d, dt.date(2000, 1, 1))
    train, test = split_by_date(d, dt.date(2020, 12, 31), require_test=False)
    assert len(train) == 2 and len(test) == 0


def test_fit_scaler_population_std():
    s = fit_scaler(make_dataset([1.0, 2.0, 3.0]))
    assert s.means[0] == pytest.approx(2.0, abs=1e-12)
    assert s.stds[0] == pytest.approx(statistics.pstdev([1.0, 2.0, 3.0]), rel=1e-12)
    assert s.stds[0] == pytest.approx(0.8165, abs=1e-4)


def test_fit_scaler_degenerate():
    s = fit_scaler(make_dataset([5.0, 5.0, 5.0]))
    assert s.means[0] == 5.0 and s.stds[0] == 1e-8
    single = fit_scaler(make_dataset([[1.0, -3.0, 7.0]]))
    np.testing.assert_array_equal(single.stds, [1e-8] * 3)
    with pytest.raises(DatasetError):
        fit_scaler(make_dataset(np.zeros((0, 2))))


def test_apply_scaler_values():
    d = make_dataset([1.0, 2.0, 3.0])
    out = apply_scaler(fit_scaler(d), d)
    # (x - 2) / sqrt(2/3), evaluated by hand
    expected = [-1 / math.sqrt(2 / 3), 0.0, 1 / math.sqrt(2 / 3)]
    np.testing.assert_allclose(out.features[:, 0], expected, atol=1e-12)
    np.testing.assert_allclose(out.features[:, 0], [-1.2247, 0.0, 1.2247], atol=1e-4)


def test_apply_scaler_standardizes_and_keeps_columns():
    rng = np.random.default_rng(0)
    x = rng.normal(3.0, 7.0, size=(50, 4))
    d = make_dataset(x, target=rng.uniform(0, 9, 50), coords=rng.uniform(0, 1, (50, 2)))
    out = apply_scaler(fit_scaler(d), d)
    np.testing.assert_allclose(out.features.mean(axis=0), 0.0, atol=1e-9)
    np.testing.assert_allclose(out.features.std(axis=0), 1.0, atol=1e-6)
    assert out.ids == d.ids and out.dates == d.dates
    np.testing.assert_array_equal(out.target, d.target)
    np.testing.assert_array_equal(out.coordinates, d.coordinates)


def test_identity_scaler_and_arity():
    d = make_dataset([[1.0, 2.0], [3.0, 4.0]])
    assert apply_scaler(Scaler.identity(2), d).equals(d)
    with pytest.raises(DatasetError):
        apply_scaler(Scaler.identity(3), d)
    with pytest.raises(DatasetError):
        Scaler([0.0], [0.0])


def test_dataset_is_read_only():
    d = make_dataset([1.0, 2.0])
    with pytest.raises(ValueError):
        d.features[0, 0] = 9.0


@settings(max_examples=50, deadline=None)
@given(hnp.arrays(np.float64, st.tuples(st.integers(1, 20), st.integers(1, 5)),
                  elements=st.floats(-1e6, 1e6)))
def test_scaler_round_trip(x):
    d = make_dataset(x)
    s = fit_scaler(d)
    back = s.inverse_transform(apply_scaler(s, d).features)
    np.testing.assert_allclose(back, x, rtol=1e-9, atol=1e-9 * (1 + np.abs(x).max()))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(0, 3000), min_size=1, max_size=30), st.integers(0, 3000))
def test_split_is_partition(offsets, cut):
    base = dt.date(2015, 1, 1)
    d = make_dataset(np.arange(len(offsets), dtype=float),
                     dates=[base + dt.timedelta(days=o) for o in offsets])
    cutoff = base + dt.timedelta(days=cut)
    try:
        train, test = split_by_date(d, cutoff, require_test=False)
    except DatasetError:
        assert all(base + dt.timedelta(days=o) > cutoff for o in offsets)
        return
    assert len(train) + len(test) == len(d)
    assert not set(train.ids) & set(test.ids)
    assert all(x <= cutoff for x in train.dates) and all(x > cutoff for x in test.dates)


@settings(max_examples=30, deadline=None)
@given(hnp.arrays(np.float64, st.tuples(st.integers(1, 8), st.integers(1, 4)),
                  elements=st.floats(-1e300, 1e300, allow_subnormal=True)),
       st.booleans())
def test_csv_round_trip(tmp_path_factory, x, labeled):
    n = len(x)
    rng = np.random.default_rng(n)
    d = make_dataset(x, target=rng.uniform(0, 100, n) if labeled else None,
                     coords=np.column_stack([rng.uniform(-90, 90, n), rng.uniform(-180, 180, n)]))
    path = tmp_path_factory.mktemp("rt") / "d.csv"
    write_csv(d, path)
    again = load_csv(path, require_target=labeled)
    assert again.equals(d)
    write_csv(again, path.with_name("e.csv"))
    assert path.read_bytes() == path.with_name("e.csv").read_bytes()
