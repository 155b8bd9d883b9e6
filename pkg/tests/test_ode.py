import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from driftband.hamiltonian import FiniteMenu, IntervalMenu, QuadraticCost
from driftband.ode import (AfterPeakWBelow, CapExceededError, LinearHolding, PowerHolding, ProblemSpec, ReachX,
                           Shape, SpecError, TableHolding, WAbove, WBelow, find_crossings, integrate)

from conftest import canonical_spec
from oracles import singleton_linear

SPEC = canonical_spec()


def singleton_spec(mu=1.0, c=0.0, sigma=math.sqrt(2.0)):
    return ProblemSpec(sigma, 1.0, 0.5, 1.0, 0.5, LinearHolding(1.0), FiniteMenu.from_pairs([(mu, c)]))


def test_singleton_closed_form():
    curve = integrate(singleton_spec(), 0.0, 1.0, ReachX(6.0), tol=1e-12)
    xs = np.linspace(0.0, 6.0, 301)
    exact = -2.0 * np.exp(-xs) - xs + 2.0
    assert np.max(np.abs(curve(xs) - exact)) < 1e-8


@pytest.mark.parametrize("mu,c,sigma,w0,gamma", [(0.5, 0.2, 1.0, -0.3, 0.7), (-0.8, 0.1, 0.7, 1.0, 2.0),
                                                 (2.0, 1.0, 1.5, 0.0, -1.0)])
def test_singleton_against_oracle(mu, c, sigma, w0, gamma):
    curve = integrate(singleton_spec(mu, c, sigma), w0, gamma, ReachX(3.0), tol=1e-12)
    w, integral = singleton_linear(mu, c, sigma, w0, gamma)
    xs = np.linspace(0.0, 3.0, 61)
    assert np.max(np.abs(curve(xs) - w(xs))) < 1e-8 * (1 + np.max(np.abs(w(xs))))
    assert curve.integral(0.5, 2.5) == pytest.approx(integral(0.5, 2.5), abs=1e-8)


def test_flat_start():
    w0 = 0.2
    curve = integrate(SPEC, w0, SPEC.pi(w0), ReachX(1.0))
    assert curve.w_prime[0] == 0.0
    assert curve.shape is Shape.DECREASING


def test_shapes():
    assert integrate(SPEC, 0.0, -1.0, WBelow(-5.0)).shape is Shape.DECREASING
    up = integrate(SPEC, 0.0, 1.0, [WBelow(-5.0), AfterPeakWBelow(-5.0)])
    assert up.shape is Shape.UNIMODAL
    assert 0.0 < up.x_star < up.x_end
    assert abs(up.slope(up.x_star)) < 1e-8
    assert up.peak >= np.max(up.w) - 1e-12


def test_increasing_when_gamma_is_large_relative_to_growth():
    # no holding cost beyond x=1e9 in range, so w climbs until the divergence guard
    spec = ProblemSpec(1.0, 1.0, 0.5, 1.0, 0.5, LinearHolding(1e-3), FiniteMenu.from_pairs([(-1.0, 0.0)]))
    curve = integrate(spec, 0.0, 1.0, ReachX(50.0))
    assert curve.shape is Shape.INCREASING


def test_node_residuals_small():
    curve = integrate(SPEC, 0.0, 1.0, [WBelow(-3.0), AfterPeakWBelow(-3.0)], tol=1e-11)
    assert curve.shape is Shape.UNIMODAL
    assert np.max(np.abs(curve.node_residuals())) < 1e-12


def test_crossings_match_levels():
    curve = integrate(SPEC, -0.8, 1.3, [WBelow(-3.0), AfterPeakWBelow(-3.0)])
    cr = find_crossings(curve, 0.5)
    assert [d for _, d in cr] == [1, -1]
    for x, _ in cr:
        assert curve(x) == pytest.approx(0.5, abs=1e-12)
    levels = [e[0] for e in curve.events]
    assert "w'=0" in levels


def test_stopping_rules():
    c = integrate(SPEC, 0.0, 0.0, WAbove(0.5))
    assert c.stop_reason in ("w_above", "reach_x", "cap")
    c = integrate(SPEC, 0.0, 3.0, WAbove(0.5))
    assert c.stop_reason == "w_above" and c.w[-1] >= 0.5


def test_strict_cap():
    with pytest.raises(CapExceededError):
        integrate(SPEC, 0.0, 1.0, [WAbove(1e9)], x_cap=0.5, strict=True)


def test_spec_validation():
    menu = FiniteMenu.from_pairs([(0.0, 0.0)])
    with pytest.raises(SpecError):
        ProblemSpec(0.0, 1.0, 0.5, 1.0, 0.5, LinearHolding(1.0), menu)
    with pytest.raises(SpecError):
        ProblemSpec(1.0, -1.0, 0.5, 1.0, 0.5, LinearHolding(1.0), menu)
    with pytest.raises(SpecError):
        ProblemSpec(1.0, 1.0, 0.5, 1.0, 0.5, lambda x: 1.0 + x, menu)
    with pytest.raises(SpecError):
        ProblemSpec(1.0, 1.0, 0.5, 1.0, 0.5, lambda x: -x, menu)


def test_holding_families():
    p = PowerHolding(2.0, 1.5)
    assert p.inverse(p(1.7)) == pytest.approx(1.7)
    t = TableHolding((0.0, 1.0, 3.0), (0.0, 2.0, 3.0))
    assert t(2.0) == pytest.approx(2.5)
    assert t.inverse(2.5) == pytest.approx(2.0)


ws = st.floats(-2.0, 2.0)
gs = st.floats(-2.0, 3.0)


@settings(max_examples=100, deadline=None)
@given(w0=ws, g=gs, dg=st.floats(0.01, 1.0))
def test_monotone_in_gamma(w0, g, dg):
    a = integrate(SPEC, w0, g, ReachX(1.5))
    b = integrate(SPEC, w0, g + dg, ReachX(1.5))
    xs = np.linspace(0.0, 1.5, 16)
    assert np.all(b(xs) >= a(xs) - 1e-9)


@settings(max_examples=100, deadline=None)
@given(w0=ws, g=gs, dw=st.floats(0.01, 1.0))
def test_monotone_in_start(w0, g, dw):
    a = integrate(SPEC, w0, g, ReachX(1.5))
    b = integrate(SPEC, w0 + dw, g, ReachX(1.5))
    xs = np.linspace(0.0, 1.5, 16)
    assert np.all(b(xs) >= a(xs) - 1e-9)


@settings(max_examples=100, deadline=None)
@given(w0=ws, g=gs)
def test_no_interior_local_minimum(w0, g):
    c = integrate(SPEC, w0, g, [WBelow(-10.0), AfterPeakWBelow(-10.0)])
    yp = c.w_prime
    # once w' is negative it stays non-positive (up to noise)
    first_neg = np.nonzero(yp < -1e-9)[0]
    if len(first_neg):
        assert np.all(yp[first_neg[0]:] < 1e-9)


def test_quadratic_interval_menu_solution():
    spec = ProblemSpec(1.0, 1.0, 0.5, 1.0, 0.5, LinearHolding(1.0), IntervalMenu(-1.0, 1.0, QuadraticCost(1.0)))
    c = integrate(spec, 0.0, 0.5, ReachX(2.0), tol=1e-11)
    assert np.max(np.abs(c.node_residuals())) < 1e-10
