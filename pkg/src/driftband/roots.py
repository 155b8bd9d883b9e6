"""Bracketed scalar root finding for monotone, possibly infinite-valued functions.

All routines keep a sign-change bracket at every iteration.  Function values
of ``+inf``/``-inf`` are allowed (a shot that diverges reports an infinite
functional); such iterations fall back to bisection.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable


class BracketError(RuntimeError):
    """No sign-change bracket could be established within the allowed range."""

    def __init__(self, message: str, trace=None):
        super().__init__(message)
        self.trace = list(trace or [])


class ConvergenceError(RuntimeError):
    pass


@dataclass
class RootResult:
    root: float
    value: float
    lo: float
    hi: float
    evaluations: int
    trace: list = field(default_factory=list)


def _sign(v: float) -> int:
    return int(v > 0) - int(v < 0)


def expand_upward(fn: Callable[[float], float], lo: float, f_lo: float, step: float,
                  *, limit: float, growth: float = 2.0, max_iter: int = 200):
    """March ``x = lo + step, lo + step*growth, ...`` until ``fn`` changes sign.

    Returns ``(lo, f_lo, hi, f_hi)`` with the last same-sign point as ``lo``.
    """
    if _sign(f_lo) == 0:
        return lo, f_lo, lo, f_lo
    trace = [(lo, f_lo)]
    x, d = lo, step
    for _ in range(max_iter):
        x_new = x + d
        if abs(x_new - lo) > limit:
            break
        f_new = fn(x_new)
        trace.append((x_new, f_new))
        if _sign(f_new) != _sign(f_lo):
            return x, trace[-2][1], x_new, f_new
        x = x_new
        d *= growth
    raise BracketError(f"no sign change within {limit:g} of {lo:g}", trace)


def brent(fn: Callable[[float], float], a: float, b: float, *, fa: float | None = None,
          fb: float | None = None, xtol: float = 1e-12, rtol: float = 4 * 2.2e-16,
          max_iter: int = 200) -> RootResult:
    """Brent-Dekker root finding on a sign-change bracket [a, b].

    Interpolation is only attempted with finite values; otherwise the step is
    a bisection, so infinite sentinels on one side are handled.
    """
    n_eval = 0
    if fa is None:
        fa = fn(a)
        n_eval += 1
    if fb is None:
        fb = fn(b)
        n_eval += 1
    trace = [(a, fa), (b, fb)]
    if fa == 0.0:
        return RootResult(a, fa, a, a, n_eval, trace)
    if fb == 0.0:
        return RootResult(b, fb, b, b, n_eval, trace)
    if _sign(fa) == _sign(fb):
        raise BracketError(f"[{a}, {b}] is not a bracket: f = {fa}, {fb}", trace)

    xpre, fpre, xcur, fcur = a, fa, b, fb
    xblk = fblk = spre = scur = 0.0
    for _ in range(max_iter):
        if fpre != 0.0 and fcur != 0.0 and (_sign(fpre) != _sign(fcur)):
            xblk, fblk = xpre, fpre
            spre = scur = xcur - xpre
        if abs(fblk) < abs(fcur):
            xpre, xcur, xblk = xcur, xblk, xcur
            fpre, fcur, fblk = fcur, fblk, fcur
        assert _sign(fcur) != _sign(fblk) or fcur == 0.0, "bracket lost"

        delta = 0.5 * (xtol + rtol * abs(xcur))
        sbis = 0.5 * (xblk - xcur)
        if fcur == 0.0 or abs(sbis) < delta:
            lo, hi = sorted((xcur, xblk))
            return RootResult(xcur, fcur, lo, hi, n_eval, trace)

        finite = math.isfinite(fpre) and math.isfinite(fcur) and math.isfinite(fblk)
        if finite and abs(spre) > delta and abs(fcur) < abs(fpre):
            if xpre == xblk:
                stry = -fcur * (xcur - xpre) / (fcur - fpre)
            else:
                dpre = (fpre - fcur) / (xpre - xcur)
                dblk = (fblk - fcur) / (xblk - xcur)
                stry = -fcur * (fblk * dblk - fpre * dpre) / (dblk * dpre * (fblk - fpre))
            if 2.0 * abs(stry) < min(abs(spre), 3.0 * abs(sbis) - delta):
                spre, scur = scur, stry
            else:
                spre = scur = sbis
        else:
            spre = scur = sbis

        xpre, fpre = xcur, fcur
        if abs(scur) > delta:
            xcur += scur
        else:
            xcur += delta if sbis > 0 else -delta
        fcur = fn(xcur)
        n_eval += 1
        trace.append((xcur, fcur))
    raise ConvergenceError(f"brent did not converge in {max_iter} iterations")


def bisect(fn: Callable[[float], float], a: float, b: float, *, fa: float | None = None,
           fb: float | None = None, xtol: float = 1e-12, max_iter: int = 200) -> RootResult:
    """Plain bisection on a sign-change bracket."""
    n_eval = 0
    if fa is None:
        fa = fn(a)
        n_eval += 1
    if fb is None:
        fb = fn(b)
        n_eval += 1
    trace = [(a, fa), (b, fb)]
    if fa == 0.0:
        return RootResult(a, fa, a, a, n_eval, trace)
    if fb == 0.0:
        return RootResult(b, fb, b, b, n_eval, trace)
    if _sign(fa) == _sign(fb):
        raise BracketError(f"[{a}, {b}] is not a bracket: f = {fa}, {fb}", trace)
    for _ in range(max_iter):
        if abs(b - a) <= xtol:
            break
        m = 0.5 * (a + b)
        fm = fn(m)
        n_eval += 1
        trace.append((m, fm))
        if fm == 0.0:
            return RootResult(m, fm, m, m, n_eval, trace)
        if _sign(fm) == _sign(fa):
            a, fa = m, fm
        else:
            b, fb = m, fm
        assert _sign(fa) != _sign(fb), "bracket lost"
    x, fx = (a, fa) if abs(fa) <= abs(fb) else (b, fb)
    lo, hi = sorted((a, b))
    return RootResult(x, fx, lo, hi, n_eval, trace)
