import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import brentq

from saflab.errors import DimensionError, InputError
from saflab.numerics import Rng
from saflab.saf import (ALL_KINDS, ARCTAN, NONE, SOFTSIGN, TANH, TANH05, SafKind, Variant,
                        saf_backward, saf_forward)

BOUNDED = [k for k in ALL_KINDS if k is not NONE]


def f32(*v):
    return np.array(v, dtype=np.float32)


def tanh_series(x, terms=60):
    # tanh via exp series, independent of the math library's tanh
    def exp(y):
        s, t = 1.0, 1.0
        for n in range(1, terms):
            t *= y / n
            s += t
        return s
    e = exp(2 * x)
    return (e - 1) / (e + 1)


@pytest.mark.parametrize("kind,x,want", [
    (TANH, 0.0, 0.0),
    (SOFTSIGN, 1.0, 0.5),
    (ARCTAN, 1.0, 0.78539816),
    (TANH, math.inf, 1.0),
    (TANH05, 2.0, 0.76159416),
])
def test_forward_examples(kind, x, want):
    assert saf_forward(kind, f32(x))[0] == pytest.approx(want, abs=1e-7)


def test_tanhc_against_series():
    assert saf_forward(TANH05, f32(2.0))[0] == pytest.approx(tanh_series(1.0), abs=1e-7)


@pytest.mark.parametrize("kind", BOUNDED)
def test_infinities_saturate_and_nan_propagates(kind):
    out = saf_forward(kind, f32(math.inf, -math.inf, math.nan))
    assert out[0] == pytest.approx(kind.bound, rel=1e-7)
    assert out[1] == pytest.approx(-kind.bound, rel=1e-7)
    assert math.isnan(out[2])


def test_none_is_identity():
    w = f32(1.5, -3.0, math.inf)
    assert saf_forward(NONE, w) is w or np.array_equal(saf_forward(NONE, w), w)


def test_backward_examples():
    assert saf_backward(TANH, f32(0.0), f32(1.0))[0] == 1.0
    assert saf_backward(SOFTSIGN, f32(1.0), f32(2.0))[0] == 0.5


@pytest.mark.parametrize("kind", ALL_KINDS, ids=str)
@pytest.mark.oracle
def test_backward_at_3_matches_central_difference(kind):
    h = 1e-3
    x = np.array([3.0])
    fd = (saf_forward(kind, x + h) - saf_forward(kind, x - h)) / (2 * h)
    assert saf_backward(kind, x, np.ones(1))[0] == pytest.approx(fd[0], abs=1e-4)


@pytest.mark.parametrize("kind", ALL_KINDS, ids=str)
@pytest.mark.oracle
def test_backward_matches_finite_difference_on_grid(kind):
    x = np.linspace(-5, 5, 400)  # skips 0, where softsign has a kink in |x|
    h = 1e-3
    fd = (saf_forward(kind, x + h) - saf_forward(kind, x - h)) / (2 * h)
    np.testing.assert_allclose(saf_backward(kind, x, np.ones_like(x)), fd, atol=1e-4)


def test_backward_shape_mismatch():
    with pytest.raises(DimensionError):
        saf_backward(TANH, f32(1, 2), f32(1))


@pytest.mark.parametrize("kind", BOUNDED, ids=str)
def test_bounded_on_wide_inputs(kind):
    x = (Rng(3).uniform(10**5).astype(np.float64) * 2e6 - 1e6).astype(np.float32)
    y = np.abs(saf_forward(kind, x)).astype(np.float64)
    # tanh rounds to exactly 1.0 in FP32 beyond |x|~9, so the bound is reached, never exceeded
    assert y.max() <= np.float32(kind.bound)
    assert np.all(np.abs(saf_forward(kind, np.float64(x[:1000]))) <= kind.bound)


@pytest.mark.parametrize("kind", [SOFTSIGN, ARCTAN], ids=str)
def test_strictly_bounded_where_representable(kind):
    x = (Rng(4).uniform(10**5) * 2e6 - 1e6).astype(np.float32)
    assert np.all(np.abs(saf_forward(kind, x)) < np.float32(kind.bound))


@settings(max_examples=200, deadline=None)
@given(st.floats(-1e6, 1e6, width=32), st.floats(-1e6, 1e6, width=32), st.sampled_from(ALL_KINDS))
def test_monotone(a, b, kind):
    lo, hi = sorted((a, b))
    y = saf_forward(kind, f32(lo, hi))
    assert y[0] <= y[1]


@settings(max_examples=200, deadline=None)
@given(st.floats(-1e6, 1e6, width=32), st.sampled_from(ALL_KINDS))
def test_odd_symmetry_within_one_ulp(x, kind):
    pos = saf_forward(kind, f32(x))[0]
    neg = saf_forward(kind, f32(-x))[0]
    assert abs(pos + neg) <= np.spacing(np.float32(abs(pos)))


def test_tanh_saturates_fastest():
    def reach(kind):
        target = 0.99 * kind.bound
        return brentq(lambda x: float(saf_forward(kind, np.float64(x))) - target, 0.0, 1e4)

    t = reach(TANH)
    assert t == pytest.approx(math.atanh(0.99), rel=1e-6)
    for other in (TANH05, SOFTSIGN, ARCTAN):
        assert t < reach(other)


@pytest.mark.parametrize("text,kind", [
    ("none", NONE), ("Tanh", TANH), ("tanh0.5", TANH05), ("SOFTSIGN", SOFTSIGN),
    ("arctan", ARCTAN), ("tanhC:2", SafKind(Variant.TANHC, 2.0)),
])
def test_parse(text, kind):
    assert SafKind.parse(text) == kind


@pytest.mark.parametrize("bad", ["relu", "tanhC:-1", "tanhC:0", "tanhc:abc", "tanhnan"])
def test_parse_rejects(bad):
    with pytest.raises(InputError):
        SafKind.parse(bad)


def test_names_round_trip():
    for k in ALL_KINDS:
        assert SafKind.parse(k.name) == k
