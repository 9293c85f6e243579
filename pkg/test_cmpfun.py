#!/usr/bin/env python3
"""
Tests for comparison functions: class validation on grids, L-majorants,
bisection inverses, tables, power-law fits and KL candidates.
"""

import math
import os
import sys

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

# Add repository root to path
script_dir = os.path.dirname(os.path.abspath(__file__))
sys.path.append(script_dir)

from core.cmpfun import (
    ClassTag,
    ExprFn,
    KLFn,
    TabulatedFn,
    as_scalar_fn,
    check_grid,
    compose,
    default_grid,
    fit_power,
    inverse_on_grid,
    invert,
    majorize_by_L,
    pointwise_max,
    require_class,
    validate_class,
    validate_kl,
)
from core.errors import ClassValidationError


def fn(source, cls=None, **params):
    return ExprFn.from_source(source, "r", cls, params)


def test_default_grid():
    g = default_grid()
    assert len(g) == 64
    assert g[0] == pytest.approx(1e-4)
    assert g[-1] == pytest.approx(1e4)


@pytest.mark.parametrize("grid", [np.geomspace(1e-2, 1e1, 64), np.geomspace(1e-4, 1e4, 8), np.linspace(-1, 1e4, 64)])
def test_check_grid_rejects_bad_grids(grid):
    with pytest.raises(ClassValidationError):
        check_grid(grid)


@pytest.mark.parametrize(
    "source, cls, params",
    [
        ("r^2", ClassTag.KINF, {}),
        ("(r/a)^(1/3)", ClassTag.KINF, {"a": 0.5}),
        ("r/(1+r)", ClassTag.K, {}),
        ("(1-a)*r^3", ClassTag.PD, {"a": 0.5}),
        ("-r^2", ClassTag.NPD, {}),
        ("exp(1 - r)", ClassTag.L, {}),
        ("r - 1", ClassTag.NONE, {}),
    ],
)
def test_validate_class_accepts(source, cls, params):
    check = validate_class(fn(source, **params), cls)
    assert check.ok, check.reason
    assert check.counterexample is None


def test_exp_decay_is_not_class_k():
    check = validate_class(fn("exp(-r)"), ClassTag.K)
    assert not check.ok
    assert check.counterexample == 0.0


def test_counterexample_is_first_failing_grid_point():
    grid = default_grid()
    check = validate_class(fn("min(r, 1)"), ClassTag.K, grid)
    assert not check.ok
    # the first grid point above 1 still rises from its predecessor
    assert check.counterexample == grid[np.flatnonzero(grid > 1)[1]]


def test_saturated_function_is_not_kinf():
    assert not validate_class(fn("min(r, 5)"), ClassTag.KINF).ok


def test_unconstrained_rejects_zero_crossing():
    grid = np.logspace(-4, 4, 17)
    check = validate_class(fn("r*(r - 1)"), ClassTag.UNCONSTRAINED, grid)
    assert not check.ok
    assert check.counterexample == 1.0


def test_require_class_names_grid_point():
    with pytest.raises(ClassValidationError) as info:
        require_class(fn("1 - r"), ClassTag.PD, what="phi")
    assert info.value.counterexample is not None
    assert "phi" in str(info.value)


@settings(max_examples=50, deadline=None)
@given(st.floats(min_value=1e-12, max_value=1e-3), st.floats(min_value=1.0, max_value=1e3))
def test_larger_tolerance_never_rejects_more(offset, factor):
    f = fn("r + e", e=offset)
    tight = validate_class(f, ClassTag.K, tol=offset / factor / 10)
    loose = validate_class(f, ClassTag.K, tol=offset * factor)
    assert not tight.ok
    assert loose.ok


@pytest.mark.parametrize("source", ["exp(1 - r)", "(r + 1)*exp(1 - r)", "exp(1 - 0.5*r)"])
def test_majorize_decaying(source):
    h = fn(source)
    env = majorize_by_L(h)
    assert env is not None
    xs = np.concatenate([[0.0], default_grid()])
    assert np.all(env(xs) >= h(xs))
    assert np.all(np.diff(env(xs)) < 0)
    assert env(xs[-1]) < 1e-6


def test_majorize_growing_fails():
    assert majorize_by_L(fn("1 + r")) is None


@pytest.mark.parametrize(
    "source, params, y, expected",
    [("r^2", {}, 4.0, 2.0), ("(r/a)^(1/3)", {"a": 0.5}, 2.0, 4.0), ("r", {}, 7.0, 7.0)],
)
def test_inverse_examples(source, params, y, expected):
    x = inverse_on_grid(fn(source, **params), y, (0.0, 100.0))
    assert x == pytest.approx(expected, rel=1e-9)


def test_inverse_out_of_range():
    with pytest.raises(ValueError):
        inverse_on_grid(fn("r^2"), 1e6, (0.0, 10.0))


@settings(max_examples=100, deadline=None)
@given(
    st.floats(min_value=0.1, max_value=10.0),
    st.floats(min_value=0.25, max_value=4.0),
    st.floats(min_value=1e-3, max_value=1e3),
)
def test_invert_accuracy(k, p, y):
    f = fn("k*r^p", k=k, p=p)
    x = invert(f, y)
    assert abs(float(f(x)) - y) <= 1e-10 * max(1.0, y)


def test_table_inverse_is_exact_on_nodes():
    xs = np.geomspace(1e-3, 1e3, 20)
    table = TabulatedFn(xs, xs**3, ClassTag.KINF)
    inv = table.inverse()
    np.testing.assert_allclose(inv(xs**3), xs, rtol=1e-12)
    # power-law tails
    assert float(table(1e4)) == pytest.approx(1e12, rel=1e-9)
    assert float(table(0.0)) == 0.0


def test_table_rejects_unsorted():
    with pytest.raises(ClassValidationError):
        TabulatedFn([1.0, 0.5], [1.0, 2.0])


def test_compose_and_max():
    sq = fn("r^2", ClassTag.KINF)
    root = fn("sqrt(r)", ClassTag.KINF)
    both = compose(sq, root)
    np.testing.assert_allclose(both(np.array([0.5, 2.0, 9.0])), [0.5, 2.0, 9.0])
    top = pointwise_max([sq, root])
    assert float(top(0.25)) == pytest.approx(0.5)
    assert float(top(4.0)) == pytest.approx(16.0)


def test_as_scalar_fn_accepts_strings_numbers_and_tables():
    assert float(as_scalar_fn("r^2")(3.0)) == 9.0
    assert float(as_scalar_fn({"expr": "k*r", "class": "Kinf"}, params={"k": 2.0})(3.0)) == 6.0
    table = as_scalar_fn({"table": {"x": [1.0, 2.0], "y": [1.0, 4.0]}})
    assert float(table(2.0)) == pytest.approx(4.0)


def test_fit_power():
    fit = fit_power(fn("3*r^2"))
    assert fit.is_power()
    assert fit.a == pytest.approx(3.0)
    assert fit.b == pytest.approx(2.0)
    assert not fit_power(fn("r + r^2")).is_power(1e-3)


def test_validate_kl():
    assert validate_kl(KLFn.from_source("r*exp(-t)")).ok
    assert not validate_kl(KLFn.from_source("r*(1 + t)")).ok
    assert not validate_kl(KLFn.from_source("exp(-t)")).ok


@pytest.mark.parametrize(
    "alias, tag",
    [("K∞", ClassTag.KINF), ("kinf", ClassTag.KINF), ("sign-definite-negative", ClassTag.NPD), ("PD", ClassTag.PD), (None, ClassTag.NONE)],
)
def test_class_tag_aliases(alias, tag):
    assert ClassTag.parse(alias) is tag


def test_unknown_class_tag():
    with pytest.raises(ClassValidationError):
        ClassTag.parse("KL-ish")


def test_exponential_jump_rate_binds_params():
    f = fn("exp(-d)*r", ClassTag.KINF, d=-1.0)
    assert float(f(1.0)) == pytest.approx(math.e)


def test_class_l_decay_is_measured_from_the_grid():
    # a spike at 0 must not hide the slow 1/(1+r) tail on the grid
    grid = np.geomspace(1e-4, 1e4, 64)
    check = validate_class(fn("max(1e12*(1 - 1e4*r), 0) + 1/(1 + r)"), ClassTag.L, grid)
    assert not check.ok
    assert check.counterexample == pytest.approx(1e4)


def test_zero_function_is_not_class_l():
    check = validate_class(fn("0*r"), ClassTag.L)
    assert not check.ok
    assert check.counterexample == 0.0
