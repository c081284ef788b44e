import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lipstab.interval import Box, Interval, IntervalError, bound_range, eval_interval


def _grid_range(fn, bounds, points=101):
    axes = [np.linspace(lo, hi, points) for lo, hi in bounds]
    mesh = np.meshgrid(*axes, indexing="ij")
    values = fn(*mesh)
    return float(np.min(values)), float(np.max(values))


def test_constant_expression():
    box = Box.from_bounds([-1.0, 2.0], [1.0, 5.0])
    iv = eval_interval(lambda v: 3.0, box)
    assert (iv.lo, iv.hi) == (3.0, 3.0)


def test_product_enclosure_contains_grid_range():
    box = Box.from_bounds([0.0, -1.0], [1.0, 1.0])
    iv = eval_interval(lambda v: v[0] * v[1], box)
    lo, hi = _grid_range(lambda a, b: a * b, [(0, 1), (-1, 1)])
    assert iv.lo <= lo and iv.hi >= hi
    assert (lo, hi) == (-1.0, 1.0)


def test_example_jacobian_entry_enclosure():
    box = Box.from_bounds([-0.3375, -0.1], [0.3, 0.1])
    expr = lambda v: (1 + v[1]) * (v[0] ** 2 - 1) + 1
    iv = eval_interval(expr, box)
    lo, hi = _grid_range(lambda x, w: (1 + w) * (x ** 2 - 1) + 1, [(-0.3375, 0.3), (-0.1, 0.1)])
    assert iv.lo <= lo and iv.hi >= hi
    assert lo == pytest.approx(-0.1, abs=1e-3) and hi == pytest.approx(0.2025, abs=1e-3)


def test_division_by_zero_interval():
    with pytest.raises(IntervalError):
        Interval(1.0) / Interval(-1.0, 1.0)


def test_empty_interval_rejected():
    with pytest.raises(ValueError):
        Interval(1.0, 0.0)


def test_even_power_straddling_zero():
    iv = Interval(-2.0, 1.0) ** 2
    assert -1e-11 <= iv.lo <= 0.0 and iv.hi >= 4.0


def test_bound_range_square():
    res = bound_range(lambda v: v[0] ** 2, Box.from_bounds([-1.0], [1.0]), tol=1e-3)
    assert -1e-3 <= res.lo <= 0.0
    assert 1.0 <= res.hi <= 1.0 + 1e-3
    assert res.tight


def test_bound_range_monotone():
    res = bound_range(lambda v: -v[0], Box.from_bounds([-0.05], [0.05]), tol=1e-3)
    assert -0.051 <= res.lo <= -0.05
    assert 0.05 <= res.hi <= 0.051


def test_bound_range_example_cross_term():
    bounds = [(-0.3375, 0.3), (-0.8523, 0.8077), (-0.1, 0.1)]
    box = Box.from_bounds(*zip(*bounds))
    res = bound_range(lambda v: 2 * (1 + v[2]) * v[0] * v[1], box, tol=1e-3)
    lo, hi = _grid_range(lambda a, b, w: 2 * (1 + w) * a * b, bounds, points=61)
    # the grid includes every vertex, where this multilinear term attains its extremes
    assert lo - 1e-3 <= res.lo <= lo
    assert hi <= res.hi <= hi + 1e-3


def test_budget_exhaustion_is_flagged_but_sound():
    box = Box.from_bounds([-1.0, -1.0], [1.0, 1.0])
    expr = lambda v: v[0] * v[1] - v[0] ** 2 * v[1]
    res = bound_range(expr, box, tol=1e-9, max_boxes=20)
    assert not res.tight
    lo, hi = _grid_range(lambda a, b: a * b - a ** 2 * b, [(-1, 1), (-1, 1)])
    assert res.lo <= lo and res.hi >= hi


def test_tolerance_must_be_positive():
    with pytest.raises(ValueError):
        bound_range(lambda v: v[0], Box.from_bounds([0.0], [1.0]), tol=0.0)


EXPRESSIONS = [
    lambda v: v[0] * v[1] + v[2],
    lambda v: (1 + v[2]) * (v[0] ** 2 - 1) * v[1],
    lambda v: v[0] ** 3 - 2 * v[1] * v[2] ** 2,
]
NUMERIC = [
    lambda z: z[0] * z[1] + z[2],
    lambda z: (1 + z[2]) * (z[0] ** 2 - 1) * z[1],
    lambda z: z[0] ** 3 - 2 * z[1] * z[2] ** 2,
]


@pytest.mark.parametrize("index", range(len(EXPRESSIONS)))
def test_containment_on_random_samples(index, rng):
    box = Box.from_bounds([-0.5, -1.0, -0.2], [0.7, 0.4, 0.3])
    res = bound_range(EXPRESSIONS[index], box, tol=1e-3)
    values = np.array([NUMERIC[index](z) for z in box.sample(rng, 10_000)])
    assert res.lo <= values.min() and values.max() <= res.hi


def test_tighter_tolerance_shrinks_gap():
    bounds = [(-1.0, 1.0), (-1.0, 1.0)]
    box = Box.from_bounds(*zip(*bounds))
    expr = lambda v: v[0] * v[1] - 0.5 * v[0] ** 2 + 0.3 * v[1]
    lo, hi = _grid_range(lambda a, b: a * b - 0.5 * a ** 2 + 0.3 * b, bounds, points=2001)
    coarse = bound_range(expr, box, tol=1e-2)
    fine = bound_range(expr, box, tol=1e-3)
    assert (lo - fine.lo) + (fine.hi - hi) <= (lo - coarse.lo) + (coarse.hi - hi) + 1e-12
    assert lo - fine.lo <= 1e-3 + 1e-6 and fine.hi - hi <= 1e-3 + 1e-6


bounded = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


@st.composite
def intervals(draw):
    a, b = draw(bounded), draw(bounded)
    return Interval(min(a, b), max(a, b))


@settings(max_examples=200, deadline=None)
@given(intervals(), intervals(), st.floats(0, 1), st.floats(0, 1))
def test_arithmetic_contains_pointwise_results(x, y, s, t):
    # clamp: interpolation can round just outside a tiny interval
    a = min(max(x.lo + s * (x.hi - x.lo), x.lo), x.hi)
    b = min(max(y.lo + t * (y.hi - y.lo), y.lo), y.hi)
    assert (x + y).contains(a + b)
    assert (x - y).contains(a - b)
    assert (x * y).contains(a * b)
    assert (x ** 2).contains(a * a)
    assert (x ** 3).contains(a ** 3)
    assert abs(x).contains(abs(a))
    if not y.contains(0.0):
        assert (x / y).contains(a / b)


@settings(max_examples=100, deadline=None)
@given(intervals(), st.floats(0, 1))
def test_elementary_functions_contain_pointwise(x, s):
    from lipstab import interval as ia

    a = min(max(x.lo + s * (x.hi - x.lo), x.lo), x.hi)
    assert ia.tanh(x).contains(math.tanh(a))
    assert ia.exp(x).contains(math.exp(a))


@settings(max_examples=30, deadline=None)
@given(st.floats(0, 1), st.floats(0, 1))
def test_sub_box_bound_is_nested(s, t):
    expr = lambda v: v[0] * v[1] - v[0] ** 2
    parent = Box.from_bounds([-1.0, -1.0], [1.0, 1.0])
    c0, c1 = -1 + 2 * s, -1 + 2 * t
    child = Box.from_bounds([min(c0, 0.0), min(c1, 0.0)], [max(c0, 0.0), max(c1, 0.0)])
    big = eval_interval(expr, parent)
    small = eval_interval(expr, child)
    assert small.subset_of(big)
