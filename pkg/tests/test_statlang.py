import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mindep.core import ColumnType
from mindep.exceptions import StatisticDomainError
from mindep.statlang import (BinOp, StatlangSyntaxError, compile_statistic, parse, statistic,
                             to_source)


@pytest.mark.parametrize("src,row,want", [
    ("x1*x2", (2, 3), 6.0),
    ("x1/(1+x2)", (0.5, 3), 0.125),
    ("cos(x1 - x2)", (math.pi, math.pi), 1.0),
    ("-x1^2", (3, 0), -9.0),
    ("2^3", (0, 0), 8.0),
    ("x1 - x2 - 1", (5, 1), 3.0),
])
def test_evaluation_examples(src, row, want):
    h = statistic(src, d=2)
    assert h(row)[0] == pytest.approx(want)


def test_product_ast():
    assert isinstance(parse("x1*x2"), BinOp)


def test_indicator_on_count_column():
    h = compile_statistic(["ind(x2 == 1)"], [ColumnType.continuous(), ColumnType.count()])
    assert h((0.3, 1))[0] == 1.0 and h((0.3, 0))[0] == 0.0


def test_categorical_columns():
    types = [ColumnType.continuous()] * 4 + [ColumnType.categorical(["no", "yes"], quantify=True)]
    h = compile_statistic(["x1*x4", "x1*x5"], types)
    assert h.dim == 2
    assert h((2, 0, 0, 3, 1)).tolist() == [6.0, 2.0]
    plain = [ColumnType.continuous(), ColumnType.categorical(["a", "b"])]
    with pytest.raises(StatlangSyntaxError):
        compile_statistic(["x1*x2"], plain)
    h = compile_statistic(["x1*ind(x2 == 'b')"], plain)
    assert h((3, 1))[0] == 3.0
    with pytest.raises(StatlangSyntaxError):
        compile_statistic(["ind(x2 == 'z')"], plain)


def test_three_way_interaction():
    assert statistic("x1*x2*x3")((2, 3, 4))[0] == 24.0


@pytest.mark.parametrize("src,offset", [("x1 * * x2", 5), ("x1 + ", 5), ("(x1", 3), ("x1 $ x2", 3)])
def test_syntax_error_offsets(src, offset):
    with pytest.raises(StatlangSyntaxError) as err:
        parse(src)
    assert err.value.offset == offset


def test_type_errors():
    with pytest.raises(StatlangSyntaxError):
        compile_statistic(["x3"], [ColumnType.continuous()] * 2)
    with pytest.raises(StatlangSyntaxError):
        compile_statistic(["cos(x1)"], [ColumnType.count()])
    with pytest.raises(StatlangSyntaxError):
        compile_statistic(["ind(x1 == 1)"], [ColumnType.continuous()])


def test_log_of_non_positive():
    h = statistic("log(x1)")
    with pytest.raises(StatisticDomainError):
        h.interpret([[0.0]])
    with pytest.raises(StatisticDomainError):
        h.evaluate([[-1.0]])


def test_compiled_matches_interpreter_bitwise():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(10_000, 3))
    X[:, 2] = np.abs(X[:, 2]) + 0.1
    h = statistic(["x1*x2", "x1/(1+x2^2)", "cos(x1 - x2)", "sqrt(x3)*exp(-x1^2)",
                   "log(x3) - abs(x2)", "x1*x2*x3 + 2"])
    compiled = h.evaluate(X)
    reference = h.interpret(X)
    assert np.array_equal(compiled, reference)
    # the row kernel links LLVM's libm, which may differ from numpy in the last ulp
    out = np.empty(h.dim)
    for t in range(0, 10_000, 97):
        h.kernel(X[t], out)
        assert np.allclose(out, reference[t], rtol=4 * np.finfo(float).eps, atol=0)


_leaf = st.one_of(st.integers(1, 3).map(lambda k: f"x{k}"),
                  st.integers(0, 9).map(str),
                  st.floats(0.5, 9.5).map(lambda v: repr(round(v, 2))))


def _combine(children):
    return st.one_of(
        st.tuples(children, st.sampled_from("+-*/"), children).map(lambda t: f"({t[0]} {t[1]} {t[2]})"),
        st.tuples(children, st.integers(0, 3)).map(lambda t: f"({t[0]})^{t[1]}"),
        children.map(lambda c: f"-({c})"),
        st.tuples(st.sampled_from(["cos", "sin", "abs"]), children).map(lambda t: f"{t[0]}({t[1]})"))


@settings(max_examples=200, deadline=None)
@given(st.recursive(_leaf, _combine, max_leaves=8))
def test_print_parse_fixed_point(src):
    tree = parse(src)
    printed = to_source(tree)
    assert parse(printed) == tree
    assert to_source(parse(printed)) == printed
