import math

import pytest
from hypothesis import given, settings, strategies as st

from driftband.roots import BracketError, bisect, brent, expand_upward


def test_brent_cubic():
    r = brent(lambda x: x ** 3 - 2.0, 0.0, 2.0, xtol=1e-14)
    assert r.root == pytest.approx(2 ** (1 / 3), abs=1e-13)
    assert r.lo <= r.root <= r.hi


def test_brent_rejects_non_bracket():
    with pytest.raises(BracketError):
        brent(lambda x: x * x + 1.0, -1.0, 1.0)


def test_brent_survives_infinite_values():
    fn = lambda x: math.inf if x < 0.1 else 1.0 - x  # noqa: E731
    r = brent(fn, 0.0, 3.0, xtol=1e-12)
    assert r.root == pytest.approx(1.0, abs=1e-11)


def test_bisect():
    r = bisect(lambda x: math.cos(x), 0.0, 3.0, xtol=1e-12)
    assert r.root == pytest.approx(math.pi / 2, abs=1e-11)


def test_expand_upward():
    lo, f_lo, hi, f_hi = expand_upward(lambda x: x - 37.0, 0.0, -37.0, 1.0, limit=1e6)
    assert lo < 37.0 <= hi and f_lo < 0.0 <= f_hi
    with pytest.raises(BracketError):
        expand_upward(lambda x: -1.0, 0.0, -1.0, 1.0, limit=100.0)


@settings(max_examples=100, deadline=None)
@given(c=st.floats(-50.0, 50.0), s=st.floats(0.1, 10.0))
def test_brent_monotone_functions(c, s):
    fn = lambda x: math.tanh(s * (x - c)) + 0.01 * (x - c)  # noqa: E731
    r = brent(fn, -100.0, 100.0, xtol=1e-12)
    assert abs(r.root - c) < 1e-9
