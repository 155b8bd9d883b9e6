"""Free boundary solver for the optimal band policy.

The unknowns ``(w0, gamma, q, Q, S)`` are pinned down by five conditions on
one shot ``w = w(.; w0, gamma)``:

    int_0^q (w + k) dx = -K,      w(q) = -k,
    int_Q^S (w - ell) dx = L,     w(Q) = w(S) = ell.

They are solved by nesting monotone one-dimensional root problems:

* ``gamma1_star(w0)`` makes the area of ``w`` above ``ell`` equal ``L``;
* ``gamma2_star(w0)`` makes the area of ``w`` below ``-k`` up to its first
  up-crossing of ``-k`` equal ``K``;
* the outer search picks ``w0`` with ``gamma1_star(w0) == gamma2_star(w0)``.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .ode import (AfterPeakWBelow, ProblemSpec, ReachX, Shape, SolutionCurve, WAbove,
                  find_crossings, integrate)
from .roots import BracketError, RootResult, brent, expand_upward

__all__ = [
    "FreeBoundarySolution", "PreconditionError", "SolveError", "Tolerances", "f1", "f2",
    "gamma1_star", "gamma2_lower", "gamma2_star", "mu_star_profile", "solution_from_summary",
    "solve",
]


class PreconditionError(ValueError):
    """An operation was called outside the region where its root exists."""


class SolveError(RuntimeError):
    """The outer search failed; ``trace`` holds the ``(w0, d(w0))`` evaluations."""

    def __init__(self, message: str, trace=None):
        super().__init__(message)
        self.trace = list(trace or [])


@dataclass(frozen=True)
class Tolerances:
    """Numerical tolerances for one solve.

    ``ode`` is the relative/absolute stepper tolerance, ``gamma`` and ``w0``
    are root tolerances, ``residual`` is the acceptance level for the five
    boundary residuals.  ``w0_floor`` bounds the downward search for the
    outer bracket (default ``-1e6 * (k + ell + 1)``).
    """

    ode: float = 1e-10
    gamma: float = 1e-9
    w0: float = 1e-9
    residual: float = 1e-6
    w0_floor: float | None = None
    descent_start: float = 0.5

    def __post_init__(self):
        for name in ("ode", "gamma", "w0", "residual", "descent_start"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, (int, float)) or not (v > 0.0 and math.isfinite(v)):
                raise ValueError(f"tolerance {name} must be a positive number, got {v!r}")
        if self.w0_floor is not None and not (isinstance(self.w0_floor, (int, float)) and self.w0_floor < 0.0):
            raise ValueError("w0_floor must be a negative number")

    def halved(self) -> "Tolerances":
        return replace(self, ode=self.ode / 2, gamma=self.gamma / 2, w0=self.w0 / 2,
                       residual=self.residual / 2)

    def floor_for(self, spec: ProblemSpec) -> float:
        if self.w0_floor is not None:
            return self.w0_floor
        return -1e6 * (spec.k + spec.ell + 1.0)


DEFAULT_TOL = Tolerances()

# inner root tolerances are tighter than the outer one so that d(w0) is smooth
_INNER = 1e-3


def _scale(spec: ProblemSpec) -> float:
    return spec.k + spec.ell


def _gamma_start(spec: ProblemSpec, w0: float) -> float:
    # gamma = pi(w0) gives w'(0) = 0; anything at or below it is decreasing
    return spec.pi(w0)


# ---------------------------------------------------------------------------
# area above ell
# ---------------------------------------------------------------------------

def _shoot_above(spec: ProblemSpec, w0: float, gamma: float, tol: float) -> SolutionCurve:
    return integrate(spec, w0, gamma, AfterPeakWBelow(spec.ell), tol)


def _area_above(spec: ProblemSpec, curve: SolutionCurve) -> tuple[float, float, float]:
    """(f1, Q, S) for one shot; f1 is inf for an increasing curve."""
    if curve.shape is Shape.INCREASING:
        return math.inf, math.nan, math.nan
    if curve.peak <= spec.ell:
        return 0.0, math.nan, math.nan
    ups = [x for x, d in find_crossings(curve, spec.ell) if d > 0]
    downs = [x for x, d in find_crossings(curve, spec.ell) if d < 0]
    if not ups or not downs:
        # peak within rounding of ell
        return 0.0, math.nan, math.nan
    Q, S = ups[0], downs[-1]
    return curve.integral(Q, S, spec.ell), Q, S


def f1(spec: ProblemSpec, w0: float, gamma: float, tol: float = 1e-10) -> float:
    """Area of ``w(.; w0, gamma)`` above ``ell``; ``inf`` if w never turns down."""
    if not w0 < spec.ell:
        raise PreconditionError(f"f1 needs w0 < ell, got w0={w0}")
    return _area_above(spec, _shoot_above(spec, w0, gamma, tol))[0]


def gamma1_star(spec: ProblemSpec, w0: float, tol: Tolerances | float = DEFAULT_TOL,
                *, bracket: tuple[float, float] | None = None) -> RootResult:
    """gamma with ``f1(w0, gamma) = L`` (result ``.root``)."""
    tol = _as_tol(tol)
    if not w0 < spec.ell:
        raise PreconditionError(f"gamma1_star needs w0 < ell, got w0={w0}")
    fn = lambda g: f1(spec, w0, g, tol.ode) - spec.L  # noqa: E731
    lo, flo, hi, fhi = _bracket(fn, _gamma_start(spec, w0), -spec.L, _scale(spec), bracket)
    return brent(fn, lo, hi, fa=flo, fb=fhi, xtol=tol.gamma * _INNER)


# ---------------------------------------------------------------------------
# area below -k
# ---------------------------------------------------------------------------

def _peak_gap(spec: ProblemSpec, w0: float, gamma: float, tol: float) -> float:
    curve = integrate(spec, w0, gamma, AfterPeakWBelow(math.inf), tol)
    if curve.shape is Shape.INCREASING:
        return math.inf
    return curve.peak + spec.k


def gamma2_lower(spec: ProblemSpec, w0: float, tol: Tolerances | float = DEFAULT_TOL,
                 *, bracket: tuple[float, float] | None = None) -> RootResult:
    """gamma at which the maximum of ``w(.; w0, gamma)`` equals ``-k``.

    The returned bracket's upper end ``.hi`` has peak at or above ``-k``.
    """
    tol = _as_tol(tol)
    if not w0 < -spec.k:
        raise PreconditionError(f"gamma2_lower needs w0 < -k, got w0={w0}")
    fn = lambda g: _peak_gap(spec, w0, g, tol.ode)  # noqa: E731
    lo, flo, hi, fhi = _bracket(fn, _gamma_start(spec, w0), w0 + spec.k, _scale(spec), bracket)
    return brent(fn, lo, hi, fa=flo, fb=fhi, xtol=tol.gamma * _INNER)


def _first_up(spec: ProblemSpec, w0: float, gamma: float, tol: float, slack: float):
    """(curve, q) with q the first up-crossing of -k."""
    curve = integrate(spec, w0, gamma, [WAbove(-spec.k), AfterPeakWBelow(math.inf)], tol)
    for x, d in find_crossings(curve, -spec.k):
        if d > 0:
            return curve, x
    if curve.shape is Shape.UNIMODAL and curve.peak + spec.k >= -slack:
        return curve, curve.x_star
    raise PreconditionError(f"w(.; {w0}, {gamma}) never reaches -k")


def f2(spec: ProblemSpec, w0: float, gamma: float, tol: float = 1e-10,
       *, slack: float = 0.0) -> float:
    """``int_0^q (w + k) dx`` with q the first up-crossing of ``-k``.

    ``slack`` lets a peak that misses ``-k`` by at most that much count as
    touching it (used at the lower end of the gamma range).
    """
    if not w0 < -spec.k:
        raise PreconditionError(f"f2 needs w0 < -k, got w0={w0}")
    curve, q = _first_up(spec, w0, gamma, tol, slack)
    return curve.integral(0.0, q, -spec.k)


@dataclass
class Gamma2Result:
    root: float
    lower: float
    f2_at_lower: float
    evaluations: int


def gamma2_star(spec: ProblemSpec, w0: float, tol: Tolerances | float = DEFAULT_TOL,
                *, lower: RootResult | None = None,
                bracket: tuple[float, float] | None = None) -> Gamma2Result:
    """gamma > gamma2_lower(w0) with ``f2(w0, gamma) = -K``.

    Raises :class:`PreconditionError` when ``f2`` already exceeds ``-K`` at
    the lower end, i.e. ``w0`` is not low enough.
    """
    tol = _as_tol(tol)
    low = lower if lower is not None else gamma2_lower(spec, w0, tol)
    g_lo = low.hi
    slack = 10.0 * tol.ode * (1.0 + abs(w0))
    f_lo = f2(spec, w0, g_lo, tol.ode, slack=slack)
    if not f_lo < -spec.K:
        raise PreconditionError(
            f"w0={w0} is not below the threshold: f2 at gamma2_lower is {f_lo:.6g} >= -K")
    fn = lambda g: f2(spec, w0, g, tol.ode, slack=slack) + spec.K  # noqa: E731
    a, fa, b, fb = _bracket(fn, g_lo, f_lo + spec.K, _scale(spec), bracket)
    res = brent(fn, a, b, fa=fa, fb=fb, xtol=tol.gamma * _INNER)
    return Gamma2Result(res.root, g_lo, f_lo, res.evaluations + low.evaluations)


# ---------------------------------------------------------------------------
# outer search
# ---------------------------------------------------------------------------

def _as_tol(tol) -> Tolerances:
    if isinstance(tol, Tolerances):
        return tol
    return Tolerances(ode=min(1e-10, float(tol)), gamma=float(tol), w0=float(tol))


def _bracket(fn, start, f_start, step, hint):
    """Sign-change bracket for an increasing function starting at ``start``.

    ``hint`` is a previous bracket that is tried first.
    """
    if hint is not None and hint[1] > start:
        a, b = max(hint[0], start), hint[1]
        fa = f_start if a == start else fn(a)
        fb = fn(b)
        if fa < 0.0 < fb:
            return a, fa, b, fb
        if fa < 0.0:
            start, f_start = a, fa
        elif f_start < 0.0 and fb < 0.0:
            start, f_start = b, fb
    if f_start >= 0.0:
        raise BracketError(f"function is already non-negative at the start {start}")
    return expand_upward(fn, start, f_start, step, limit=1e12 * step)


@dataclass
class _Outer:
    spec: ProblemSpec
    tol: Tolerances
    trace: list = field(default_factory=list)
    g1_hint: tuple[float, float] | None = None
    g2_hint: tuple[float, float] | None = None

    def d(self, w0: float) -> float:
        g2 = gamma2_star(self.spec, w0, self.tol, bracket=self.g2_hint)
        g1 = gamma1_star(self.spec, w0, self.tol, bracket=self.g1_hint)
        width = 4.0 * _scale(self.spec) * 1e-3
        self.g1_hint = (g1.root - width, g1.root + width)
        self.g2_hint = (max(g2.lower, g2.root - width), g2.root + width)
        val = g2.root - g1.root
        self.trace.append((w0, val))
        return val

    def threshold_ok(self, w0: float) -> bool:
        low = gamma2_lower(self.spec, w0, self.tol)
        slack = 10.0 * self.tol.ode * (1.0 + abs(w0))
        return f2(self.spec, w0, low.hi, self.tol.ode, slack=slack) < -self.spec.K


def _find_upper(out: _Outer) -> tuple[float, float]:
    """A w0 just below the f2 threshold, with d(w0) < 0."""
    spec, tol = out.spec, out.tol
    floor = tol.floor_for(spec)
    prev = None
    step = tol.descent_start
    w0 = -spec.k - step
    while not out.threshold_ok(w0):
        prev = w0
        step *= 2.0
        w0 = -spec.k - step
        if w0 < floor:
            raise SolveError("no w0 above the floor satisfies the f2 threshold", out.trace)
    if prev is not None:
        # pull w0 up towards the threshold, keeping the threshold satisfied
        a, b = w0, prev
        while b - a > 1e-3 * (1.0 + abs(a)):
            m = 0.5 * (a + b)
            if out.threshold_ok(m):
                a = m
            else:
                b = m
        w0 = a
    return w0, out.d(w0)


def solve(spec: ProblemSpec, tol: Tolerances | float = DEFAULT_TOL) -> "FreeBoundarySolution":
    """Solve the free boundary problem for ``spec``."""
    tol = _as_tol(tol)
    out = _Outer(spec, tol)
    floor = tol.floor_for(spec)
    try:
        w_hi, d_hi = _find_upper(out)
        if d_hi >= 0.0:
            # the threshold point already has d >= 0; walk up in small steps
            raise SolveError(f"d(w0) = {d_hi:.3g} >= 0 at the threshold w0 = {w_hi:.6g}", out.trace)
        step = tol.descent_start
        w_lo, d_lo = w_hi, d_hi
        while d_lo < 0.0:
            w_hi, d_hi = w_lo, d_lo
            w_lo = w_hi - step
            if w_lo < floor:
                raise SolveError(f"d(w0) stays negative down to the floor {floor:g}", out.trace)
            d_lo = out.d(w_lo)
            step *= 2.0
        res = brent(out.d, w_lo, w_hi, fa=d_lo, fb=d_hi, xtol=tol.w0)
    except (BracketError, PreconditionError) as exc:
        raise SolveError(str(exc), out.trace) from exc
    return _assemble(spec, res.root, tol, out)


def _assemble(spec: ProblemSpec, w0: float, tol: Tolerances, out: _Outer) -> "FreeBoundarySolution":
    g1 = gamma1_star(spec, w0, tol, bracket=out.g1_hint).root
    g2 = gamma2_star(spec, w0, tol, bracket=out.g2_hint).root
    gamma = 0.5 * (g1 + g2)
    curve = integrate(spec, w0, gamma, AfterPeakWBelow(spec.ell), tol.ode)
    if curve.shape is not Shape.UNIMODAL:
        raise SolveError(f"solution curve is {curve.shape.value}, expected unimodal", out.trace)
    ups_k = [x for x, d in find_crossings(curve, -spec.k) if d > 0]
    ups_l = [x for x, d in find_crossings(curve, spec.ell) if d > 0]
    downs_l = [x for x, d in find_crossings(curve, spec.ell) if d < 0]
    if not (ups_k and ups_l and downs_l):
        raise SolveError("solution curve misses one of the boundary crossings", out.trace)
    q, Q, S = ups_k[0], ups_l[0], downs_l[-1]
    sol = FreeBoundarySolution(
        spec=spec, w0_star=w0, gamma_star=gamma, q_star=q, Q_star=Q, S_star=S,
        x_star=curve.x_star, curve=curve, tolerances=tol,
        gamma_gap=g2 - g1, d_trace=list(out.trace))
    return sol


# ---------------------------------------------------------------------------
# solution object
# ---------------------------------------------------------------------------

@dataclass
class FreeBoundarySolution:
    spec: ProblemSpec
    w0_star: float
    gamma_star: float
    q_star: float
    Q_star: float
    S_star: float
    x_star: float
    curve: SolutionCurve
    tolerances: Tolerances
    gamma_gap: float = 0.0
    d_trace: list = field(default_factory=list)

    @property
    def residuals(self) -> dict[str, float]:
        s, c = self.spec, self.curve
        return {
            "r1": c.integral(0.0, self.q_star, -s.k) + s.K,
            "r2": c.integral(self.Q_star, self.S_star, s.ell) - s.L,
            "r3": float(c(self.q_star)) + s.k,
            "r4": float(c(self.Q_star)) - s.ell,
            "r5": float(c(self.S_star)) - s.ell,
        }

    def max_residual(self) -> float:
        return max(abs(v) for v in self.residuals.values())

    def extended_curve(self, x_max: float) -> SolutionCurve:
        """The optimal shot continued to at least ``x_max`` (w* keeps falling past S*)."""
        if x_max <= self.curve.x_end:
            return self.curve
        cache = self.__dict__.setdefault("_extended", {})
        key = float(x_max)
        if key not in cache:
            cache[key] = integrate(self.spec, self.w0_star, self.gamma_star, ReachX(x_max),
                                   self.tolerances.ode)
        return cache[key]

    def w_star(self, x):
        return self.curve(x)

    def mu_star(self, x):
        w = np.atleast_1d(np.asarray(self.curve(x), dtype=float))
        out = np.array([self.spec.mu(v) for v in w])
        return out if np.ndim(x) else float(out[0])

    def summary(self) -> dict:
        return {
            "w0_star": self.w0_star,
            "gamma_star": self.gamma_star,
            "q_star": self.q_star,
            "Q_star": self.Q_star,
            "S_star": self.S_star,
            "x_star": self.x_star,
            "residuals": self.residuals,
            "tolerances": {k: v for k, v in asdict(self.tolerances).items()},
        }

    def write_summary(self, path, extra: dict | None = None) -> None:
        doc = self.summary()
        if extra:
            doc.update(extra)
        with open(path, "w") as fh:
            json.dump(doc, fh, indent=2)
            fh.write("\n")

    def write_curve(self, path, n_grid: int = 1001) -> None:
        xs, mus = mu_star_profile(self, n_grid)
        ws = self.curve(xs)
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["x", "w_star", "mu_star"])
            for row in zip(xs, ws, mus):
                wr.writerow([repr(float(v)) for v in row])


def solution_from_summary(spec: ProblemSpec, doc: dict,
                          tol: Tolerances = DEFAULT_TOL) -> FreeBoundarySolution:
    """Rebuild a solution from its summary by re-shooting from ``(w0_star, gamma_star)``.

    Nothing is re-solved: the boundary points are taken as given, so a
    tampered summary yields a curve that fails certification.
    """
    try:
        vals = {k: float(doc[k]) for k in ("w0_star", "gamma_star", "q_star", "Q_star", "S_star", "x_star")}
    except (KeyError, TypeError, ValueError) as exc:
        raise ValueError(f"solution summary is missing or has a bad field: {exc}") from exc
    S = vals["S_star"]
    curve = integrate(spec, vals["w0_star"], vals["gamma_star"], ReachX(S * (1.0 + 1e-12) + 1e-12), tol.ode)
    return FreeBoundarySolution(spec=spec, curve=curve, tolerances=tol, **vals)


def mu_star_profile(solution: FreeBoundarySolution, n_grid: int = 1001):
    """``(x, mu*(x))`` on a uniform grid over ``[0, S*]``."""
    if n_grid < 2:
        raise ValueError("n_grid must be at least 2")
    xs = np.linspace(0.0, solution.S_star, n_grid)
    return xs, solution.mu_star(xs)
