import numpy as np
import pytest

from classes.Dataset import (Dataset, Normalizer, domain_bounds, fit_normalizer, gen_syn_linear, gen_syn_nonlinear,
                             load_csv, rebalance, split, syn_linear_label, syn_nonlinear_label)
from tools.errors import InputError


def test_syn_linear_labels_and_determinism():
    assert syn_linear_label([[0.0, 0.0], [6.0, 6.0]]).tolist() == [0, 1]
    a = gen_syn_linear(50, 3)
    b = gen_syn_linear(50, 3)
    assert np.array_equal(a.features, b.features)
    assert np.array_equal(a.labels, b.labels)
    assert a.provenance == "synthetic-linear"


def test_syn_linear_coordinates_are_uniform():
    data = gen_syn_linear(10000, 1)
    assert np.all(np.abs(data.features.mean(axis=0) - 3.0) < 0.1)
    assert data.features.min() >= 0.0 and data.features.max() <= 6.0


def test_syn_nonlinear_labels_and_balance():
    assert syn_nonlinear_label([[0.0, 6.0], [0.0, 0.0]]).tolist() == [1, 0]
    data = gen_syn_nonlinear(10000, 2)
    fraction = data.labels.mean()
    assert 0.4 <= fraction <= 0.6
    x1 = np.linspace(0, 6, 1000)
    curve = 3.0 + 1.5 * np.sin(np.pi * x1 / 3.0)
    assert curve.min() >= 1.5 - 1e-12 and curve.max() <= 4.5 + 1e-12


def test_generators_need_four_points():
    with pytest.raises(InputError):
        gen_syn_linear(3, 0)
    with pytest.raises(InputError):
        gen_syn_nonlinear(2, 0)


def test_load_csv_maps_positive_label(tmp_path):
    path = tmp_path / "data.csv"
    path.write_text("age,income,outcome\n30,1.5,good\n40,2.5,bad\n50,3.5,good\n", encoding="utf-8")
    data = load_csv(str(path), "outcome", "good")
    assert data.labels.tolist() == [1, 0, 1]
    assert data.feature_names == ("age", "income")
    assert data.features[1].tolist() == [40.0, 2.5]
    assert data.provenance == f"csv:{path}"


def test_load_csv_reports_bad_cell(tmp_path):
    path = tmp_path / "data.csv"
    path.write_text("a,b,y\n1,2,1\n3,NaN,0\n", encoding="utf-8")
    with pytest.raises(InputError, match=r"row 2, column 'b'"):
        load_csv(str(path), "y", "1")


def test_load_csv_rejects_header_only_and_empty(tmp_path):
    header_only = tmp_path / "header.csv"
    header_only.write_text("a,b,y\n", encoding="utf-8")
    with pytest.raises(InputError, match="no rows"):
        load_csv(str(header_only), "y", "1")
    empty = tmp_path / "empty.csv"
    empty.write_text("", encoding="utf-8")
    with pytest.raises(InputError):
        load_csv(str(empty), "y", "1")


def test_load_csv_missing_column_and_file(tmp_path):
    path = tmp_path / "data.csv"
    path.write_text("a,b\n1,2\n", encoding="utf-8")
    with pytest.raises(InputError, match="no column"):
        load_csv(str(path), "y", "1")
    with pytest.raises(InputError, match="not found"):
        load_csv(str(tmp_path / "missing.csv"), "y", "1")


def test_dataset_csv_cache_round_trip(tmp_path):
    data = gen_syn_linear(20, 0)
    path = tmp_path / "cache.csv"
    data.to_csv(str(path))
    loaded = load_csv(str(path), "label", "1")
    assert np.array_equal(loaded.features, data.features)
    assert np.array_equal(loaded.labels, data.labels)


@pytest.mark.parametrize("n, sizes", [(100, (50, 25, 25)), (101, (51, 25, 25)), (8, (4, 2, 2))])
def test_split_sizes(n, sizes):
    assert split(gen_syn_linear(n, 0), 0).sizes() == sizes


def test_split_is_an_exact_partition():
    data = gen_syn_linear(97, 4)
    parts = split(data, 5)
    joined = np.vstack([parts.train.features, parts.query.features, parts.eval.features])
    assert sorted(map(tuple, joined)) == sorted(map(tuple, data.features))
    again = split(data, 5)
    assert np.array_equal(again.query.features, parts.query.features)


def test_split_needs_eight_rows():
    with pytest.raises(InputError):
        split(gen_syn_linear(7, 0), 0)


def test_normalizer_standardizes_reference():
    data = gen_syn_linear(500, 0)
    normalizer = fit_normalizer(data)
    scaled = normalizer.apply(data.features)
    assert np.allclose(scaled.mean(axis=0), 0.0, atol=1e-9)
    assert np.allclose(scaled.std(axis=0), 1.0, atol=1e-9)
    assert np.allclose(normalizer.inverse(scaled), data.features, atol=1e-9)


def test_normalizer_population_std_and_floor():
    normalizer = fit_normalizer(np.array([[1.0, 5.0], [2.0, 5.0], [3.0, 5.0]]))
    assert normalizer.mean.tolist() == [2.0, 5.0]
    assert normalizer.std[0] == pytest.approx(np.sqrt(2.0 / 3.0))
    assert normalizer.std[1] == 1e-6
    assert normalizer.apply([[2.0, 5.0]])[0, 1] == 0.0
    with pytest.raises(InputError):
        normalizer.apply([[1.0, 2.0, 3.0]])


def test_normalizer_json_round_trip(tmp_path):
    normalizer = Normalizer([1.0, -2.0], [0.5, 3.0])
    path = tmp_path / "norm.json"
    normalizer.save(str(path))
    loaded = Normalizer.load(str(path))
    assert np.array_equal(loaded.mean, normalizer.mean)
    assert np.array_equal(loaded.std, normalizer.std)


def test_rebalance_reaches_ratio_and_keeps_order():
    labels = np.array([0] * 60 + [1] * 40)
    data = Dataset(np.arange(200, dtype=float).reshape(100, 2), labels, ("a", "b"), "synthetic-linear")
    skewed = rebalance(data, 5.0, seed=0)
    n_neg, n_pos = skewed.class_counts()
    assert (n_neg, n_pos) == (60, 12)
    assert np.all(np.diff(skewed.features[:, 0]) > 0)
    assert rebalance(skewed, 5.0, seed=1) is skewed


def test_domain_bounds_of_synthetic_data():
    low, high = domain_bounds(gen_syn_linear(10, 0))
    assert low.tolist() == [0.0, 0.0] and high.tolist() == [6.0, 6.0]
