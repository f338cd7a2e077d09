import gzip

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rcgp.cgp import CgpConfig
from rcgp.regression import (
    WORST_FITNESS,
    Dataset,
    DatasetError,
    fitness_on,
    kfold,
    load_dataset,
    mse,
    serialise_fitness,
    split,
)


def write_table(path, n_rows, n_features, sep="\t", rng=None):
    rng = rng or np.random.default_rng(0)
    header = [f"x{i}" for i in range(n_features)] + ["target"]
    lines = [sep.join(header)]
    for row in rng.normal(size=(n_rows, n_features + 1)):
        lines.append(sep.join(repr(float(v)) for v in row))
    path.write_text("\n".join(lines) + "\n")
    return path


def test_load_vineyard_shape(tmp_path):
    ds = load_dataset(write_table(tmp_path / "192_vineyard.tsv", 52, 3))
    assert (ds.n_observations, ds.n_features) == (52, 3)
    assert ds.name == "192_vineyard"


def test_load_visualizing_environmental_shape(tmp_path):
    ds = load_dataset(write_table(tmp_path / "678_visualizing_environmental.csv", 11, 4, sep=","))
    assert (ds.n_observations, ds.n_features) == (11, 4)


def test_load_gzip_and_column_order(tmp_path):
    text = "b\ttarget\ta\n1\t2\t3\n4\t5\t6\n"
    p = tmp_path / "t.tsv.gz"
    p.write_bytes(gzip.compress(text.encode()))
    ds = load_dataset(p)
    assert ds.feature_names == ("b", "a")
    assert ds.features.tolist() == [[1, 3], [4, 6]]
    assert ds.targets.tolist() == [2, 5]
    assert ds.name == "t"


@pytest.mark.parametrize(
    "text, match",
    [
        ("x\ty\n1\t2\n", "target"),
        ("x\ttarget\n1\tNaN\n", r"row 1, column 'target'"),
        ("x\ttarget\n1\t2\nabc\t3\n", r"row 2, column 'x'"),
        ("x\ttarget\n1\tinf\n", "non-finite"),
        ("", "empty"),
        ("x\ttarget\n", "no data"),
        ("x\ttarget\n1\t2\t3\n", "cells"),
    ],
)
def test_load_errors(tmp_path, text, match):
    p = tmp_path / "bad.tsv"
    p.write_text(text)
    with pytest.raises(DatasetError, match=match):
        load_dataset(p)


def test_load_missing_file(tmp_path):
    with pytest.raises(DatasetError):
        load_dataset(tmp_path / "nope.tsv")


def _ds(n, d=1):
    return Dataset(np.arange(n * d, dtype=float).reshape(n, d), np.zeros(n), tuple(f"x{i}" for i in range(d)))


def test_split_sizes():
    s = split(_ds(100), 0.75, 42)
    assert (len(s.train_indices), len(s.test_indices)) == (75, 25)
    s = split(_ds(11), 0.75, 42)
    assert (len(s.train_indices), len(s.test_indices)) == (8, 3)  # round(8.25) = 8


def test_split_rounds_half_to_even():
    assert len(split(_ds(10), 0.25, 0).train_indices) == 2  # 2.5 -> 2
    assert len(split(_ds(14), 0.25, 0).train_indices) == 4  # 3.5 -> 4


def test_split_determinism_and_partition():
    ds = _ds(52)
    a, b = split(ds, 0.75, 42), split(ds, 0.75, 42)
    assert a == b
    assert sorted(a.train_indices + a.test_indices) == list(range(52))
    assert split(ds, 0.75, 43) != a


def test_split_rejects_empty_side():
    with pytest.raises(ValueError):
        split(_ds(2), 0.1, 0)
    with pytest.raises(ValueError):
        split(_ds(5), 1.0, 0)


def test_kfold_sizes():
    assert kfold(list(range(10)), 5, 1).sizes() == [2, 2, 2, 2, 2]
    assert sorted(kfold(list(range(8)), 5, 1).sizes(), reverse=True) == [2, 2, 2, 1, 1]


def test_kfold_determinism_and_errors():
    rows = [3, 9, 4, 1, 7, 0, 2]
    assert kfold(rows, 3, 5) == kfold(rows, 3, 5)
    with pytest.raises(ValueError):
        kfold(rows, 8, 0)
    with pytest.raises(ValueError):
        kfold(rows, 1, 0)


@settings(max_examples=100, deadline=None)
@given(n=st.integers(2, 80), k=st.integers(2, 10), seed=st.integers(0, 10**6))
def test_kfold_partitions_training_rows(n, k, seed):
    if k > n:
        return
    rows = list(range(100, 100 + n))
    folds = kfold(rows, k, seed)
    sizes = folds.sizes()
    assert max(sizes) - min(sizes) <= 1
    seen = []
    for f in range(k):
        train, val = folds.fold_rows(f)
        assert not set(train) & set(val)
        assert sorted(train + val) == rows
        seen += val
    assert sorted(seen) == rows


def test_mse_examples():
    assert mse([1.0, 2.0], [1.0, 2.0]) == 0.0
    assert mse([0.0, 0.0], [1.0, 3.0]) == 5.0
    assert mse([np.nan, 0.0], [1.0, 3.0]) == WORST_FITNESS
    assert mse([1e200, 0.0], [-1e200, 0.0]) == WORST_FITNESS
    with pytest.raises(ValueError):
        mse([1.0], [1.0, 2.0])


@settings(max_examples=100)
@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=20), st.data())
def test_mse_non_negative_and_zero_iff_equal(targets, data):
    preds = data.draw(st.lists(st.floats(-1e6, 1e6), min_size=len(targets), max_size=len(targets)))
    value = mse(preds, targets)
    assert value >= 0
    if preds == targets:
        assert value == 0
    if value == 0:  # zero only for equal inputs, up to underflow of the squares
        assert np.max(np.abs(np.subtract(preds, targets))) < 1e-150


def test_serialised_worst():
    assert serialise_fitness(WORST_FITNESS) == 1e300
    assert serialise_fitness(0.5) == 0.5


@pytest.fixture
def quad():
    x = np.linspace(-1, 1, 9)
    return Dataset.from_function(lambda v: v * v + v, x)


def test_fitness_exact_model_is_zero(quad):
    config = CgpConfig.from_names(["add", "mul"], num_inputs=1, num_outputs=1, num_function_nodes=2)
    g = np.array([1, 0, 0, 0, 1, 0, 2])  # node 1 = x*x, node 2 = node1 + x
    assert fitness_on(range(9), quad, config)(g) == 0.0


def test_fitness_constant_output(quad):
    # the constant terminal 1.0 as an extra input; output wired straight to it
    config = CgpConfig.from_names(["add"], num_inputs=2, num_outputs=1, num_function_nodes=1, constants=(1.0,))
    g = np.array([0, 1, 1, 1])
    t = quad.targets
    assert fitness_on(range(9), quad, config)(g) == pytest.approx(np.mean((1.0 - t) ** 2), rel=1e-15)
    # 2.0 = 1 + 1 via the add node; mean squared error minimised at c = mean(t)
    g2 = np.array([0, 1, 1, 2])
    cs = np.linspace(-1, 3, 401)
    errs = [np.mean((c - t) ** 2) for c in cs]
    assert abs(cs[int(np.argmin(errs))] - t.mean()) < 0.01
    assert fitness_on(range(9), quad, config)(g2) == pytest.approx(np.mean((2.0 - t) ** 2))


def test_fitness_input_passthrough(quad):
    config = CgpConfig.from_names(["add"], num_inputs=1, num_outputs=1, num_function_nodes=1)
    g = np.array([0, 0, 0, 0])
    rows = [0, 3, 8]
    x, t = quad.features[rows, 0], quad.targets[rows]
    assert fitness_on(rows, quad, config)(g) == pytest.approx(np.mean((x - t) ** 2), rel=1e-15)


def test_fitness_rejects_multi_output_and_empty(quad):
    with pytest.raises(ValueError):
        fitness_on(range(9), quad, CgpConfig(num_inputs=1, num_outputs=2, num_function_nodes=3))
    with pytest.raises(ValueError):
        fitness_on([], quad, CgpConfig(num_inputs=1, num_outputs=1, num_function_nodes=3))


def test_dataset_rejects_non_finite():
    with pytest.raises(DatasetError):
        Dataset(np.array([[1.0], [np.inf]]), np.zeros(2), ("x",))
