import numpy as np
import pytest

from mindep.core import ColumnType, Dataset, pairwise_products
from mindep.rank import (NATURAL, OBSERVATIONAL, decompose, h_star, permutation_one_based,
                         recompose)
from mindep.statlang import compile_statistic

LETTERS = ColumnType.categorical(["a", "b", "c"], quantify=True)


def _letters_data():
    return Dataset.from_columns(["x1", "x2"], [LETTERS, ColumnType.count()],
                                [["c", "c", "b", "a"], [2, 1, 2, 1]])


def test_worked_example_natural_order():
    data = _letters_data()
    seen = []
    for seed in range(200):
        dec = decompose(data, NATURAL, rng=seed)
        assert [data.types[0].levels[int(v)] for v in dec.M[0]] == ["a", "b", "c", "c"]
        assert dec.M[1].tolist() == [1, 1, 2, 2]
        seen.append(tuple(permutation_one_based(dec.pi)[0]))
        assert recompose(dec) == data
    assert set(seen) == {(3, 4, 2, 1), (4, 3, 2, 1)}
    assert 0.4 < seen.count((3, 4, 2, 1)) / len(seen) < 0.6


def test_worked_example_recomposition():
    data = _letters_data()
    dec = decompose(data, NATURAL, rng=0)
    pi = np.array([[2, 3, 1, 0], [2, 0, 3, 1]])
    rows = Dataset(dec.values(pi), data.types, data.names).rows()
    assert rows == [("c", 2), ("c", 1), ("b", 2), ("a", 1)]


def test_singleton():
    dec = decompose(Dataset.from_array([[1.0, 2.0, 3.0]]), NATURAL)
    assert dec.pi.tolist() == [[0], [0], [0]]


def test_distinct_data_has_deterministic_ranks():
    X = np.random.default_rng(0).normal(size=(20, 3))
    a = decompose(Dataset.from_array(X), NATURAL, rng=1)
    b = decompose(Dataset.from_array(X), NATURAL, rng=2)
    assert np.array_equal(a.pi, b.pi)


def test_identity_permutations_zip_sorted_marginals():
    X = np.random.default_rng(1).normal(size=(6, 2))
    dec = decompose(Dataset.from_array(X), NATURAL)
    ident = np.tile(np.arange(6), (2, 1))
    assert np.array_equal(dec.values(ident), np.sort(X, axis=0))


@pytest.mark.parametrize("policy", [NATURAL, OBSERVATIONAL])
def test_round_trip(policy):
    X = np.random.default_rng(2).integers(0, 3, size=(15, 3)).astype(float)
    data = Dataset.from_array(X, [ColumnType.count()] * 3)
    assert recompose(decompose(data, policy, rng=0)) == data


def test_h_star_examples():
    dec = decompose(Dataset.from_array([[1.0, 2.0], [3.0, 4.0]]))
    assert h_star(dec, pairwise_products(2)).tolist() == [14.0]
    data = _letters_data()
    h = compile_statistic(["ind(x2 == 2)*x1"], data.types)
    assert h_star(decompose(data), h).tolist() == [3.0]
