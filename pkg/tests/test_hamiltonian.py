import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from driftband.hamiltonian import (AbsoluteCost, FiniteMenu, IntervalMenu, MenuError, QuadraticCost,
                                   TableCost, evaluate, lipschitz_constant)

from oracles import grid_pi

CANON = FiniteMenu.from_function((-1.0, -0.5, 0.0, 0.5, 1.0), lambda m: m * m)
QUAD = IntervalMenu(-1.0, 1.0, QuadraticCost(1.0))
GENERIC = IntervalMenu(-1.0, 1.0, lambda m: math.cosh(m) - 1.0 + 0.1 * m)
MENUS = [CANON, QUAD, GENERIC, IntervalMenu(-2.0, 1.0, AbsoluteCost(0.7)),
         IntervalMenu(-1.0, 2.0, TableCost((-1.0, 0.0, 2.0), (0.5, 0.0, 1.0)))]

ws = st.floats(-20.0, 20.0, allow_nan=False)


def test_zero_cost_pair():
    menu = FiniteMenu.from_pairs([(-1.0, 0.0), (1.0, 0.0)])
    v = evaluate(menu, 2.0)
    assert (v.pi, v.mu) == (-2.0, -1.0)
    v = evaluate(menu, 0.0)
    assert v.pi == 0.0 and v.mu == -1.0


def test_quadratic_interval_stationary_point():
    v = evaluate(QUAD, 1.0)
    assert v.pi == pytest.approx(-0.25, abs=1e-14)
    assert v.mu == pytest.approx(-0.5, abs=1e-14)
    pi_grid, mu_grid = grid_pi((-1.0, 1.0), lambda m: m * m, 1.0)
    assert v.pi == pytest.approx(pi_grid, abs=1e-9)
    assert v.mu == pytest.approx(mu_grid, abs=1e-4)


@pytest.mark.parametrize("w", [-3.0, -0.7, 0.0, 0.3, 1.2, 4.0])
def test_generic_cost_matches_grid_scan(w):
    pi_grid, mu_grid = grid_pi((-1.0, 1.0), lambda m: np.cosh(m) - 1.0 + 0.1 * m, w)
    v = evaluate(GENERIC, w)
    assert v.pi == pytest.approx(pi_grid, abs=1e-9)
    assert v.mu == pytest.approx(mu_grid, abs=1e-4)


def test_lipschitz_constant():
    assert lipschitz_constant(FiniteMenu.from_pairs([(-1, 0), (1, 0)])) == 1.0
    assert lipschitz_constant(FiniteMenu.from_pairs([(0, 0)])) == 0.0
    assert lipschitz_constant(IntervalMenu(-3.0, 2.0, QuadraticCost(1.0))) == 3.0


def test_kinks_of_canonical_menu():
    assert CANON.kinks == pytest.approx((-1.5, -0.5, 0.5, 1.5))


def test_invalid_menus():
    with pytest.raises(MenuError):
        FiniteMenu((), ())
    with pytest.raises(MenuError):
        FiniteMenu((1.0, 0.0), (0.0, 0.0))
    with pytest.raises(MenuError):
        FiniteMenu((0.0, 0.0), (0.0, 1.0))
    with pytest.raises(MenuError):
        FiniteMenu((0.0, math.inf), (0.0, 1.0))
    with pytest.raises(MenuError):
        IntervalMenu(1.0, -1.0, QuadraticCost(1.0))
    with pytest.raises(MenuError):
        IntervalMenu(-1.0, 1.0, lambda m: math.log(m))


def test_tie_breaks_to_smallest_drift():
    menu = FiniteMenu.from_pairs([(-1.0, 1.0), (0.0, 0.0), (1.0, 1.0)])
    assert menu.mu(1.0) == -1.0   # -1*1+1 == 0 == 0*1+0
    assert menu.mu(-1.0) == 0.0   # 0 ties with 1*(-1)+1


@pytest.mark.parametrize("menu", MENUS, ids=["finite", "quad", "generic", "absolute", "table"])
@settings(max_examples=150, deadline=None)
@given(w1=ws, w2=ws, lam=st.floats(0.0, 1.0))
def test_concave(menu, w1, w2, lam):
    lhs = menu.pi(lam * w1 + (1 - lam) * w2)
    assert lhs >= lam * menu.pi(w1) + (1 - lam) * menu.pi(w2) - 1e-9


@pytest.mark.parametrize("menu", MENUS, ids=["finite", "quad", "generic", "absolute", "table"])
@settings(max_examples=150, deadline=None)
@given(w1=ws, w2=ws)
def test_lipschitz_and_monotone_minimiser(menu, w1, w2):
    M = lipschitz_constant(menu)
    assert abs(menu.pi(w1) - menu.pi(w2)) <= M * abs(w1 - w2) + 1e-9
    if w1 < w2:
        assert menu.mu(w1) >= menu.mu(w2) - 1e-6


@pytest.mark.parametrize("menu", MENUS, ids=["finite", "quad", "generic", "absolute", "table"])
@settings(max_examples=100, deadline=None)
@given(w=ws, t=st.floats(0.0, 1.0))
def test_envelope_below_every_drift(menu, w, t):
    mu = menu.lo + t * (menu.hi - menu.lo)
    if isinstance(menu, FiniteMenu):
        mu = menu.drifts[int(t * (len(menu.drifts) - 1))]
    v = evaluate(menu, w)
    assert v.pi <= mu * w + float(menu.cost(mu)) + 1e-9
    assert v.pi == pytest.approx(v.mu * w + float(menu.cost(v.mu)), abs=1e-9)
    assert menu.lo <= v.mu <= menu.hi


def test_scaling_multiplies_pi():
    for menu in MENUS[:2]:
        s = menu.scaled(2.0)
        for w in (-2.0, 0.1, 3.0):
            assert s.pi(2.0 * w) == pytest.approx(2.0 * menu.pi(w), abs=1e-12)
            assert s.mu(2.0 * w) == pytest.approx(menu.mu(w), abs=1e-12)
