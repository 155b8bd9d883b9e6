"""Shooting the first-order ODE for the marginal relative value ``w = V'``.

For a problem instance and a pair ``(w0, gamma)`` we integrate

    (sigma^2 / 2) w'(x) + pi(w(x)) + h(x) = gamma,   w(0) = w0,

forward in ``x >= 0``.  Depending on ``gamma`` relative to ``pi(w0)`` the
solution is decreasing, increasing, or rises to a single interior maximum
and then falls to minus infinity; :func:`classify` reports which.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import brentq

from .hamiltonian import DriftMenu, lipschitz_constant
from .stepper import CapExceededError, DenseCurve, StepSizeError, integrate_scalar

__all__ = [
    "AfterPeakWBelow", "CapExceededError", "ClassificationError", "LinearHolding",
    "PowerHolding", "ProblemSpec", "ReachX", "Shape", "SolutionCurve", "SpecError",
    "StepSizeError", "TableHolding", "WAbove", "WBelow", "classify", "find_crossings",
    "integrate",
]


class SpecError(ValueError):
    """The problem instance violates a modelling assumption."""


class ClassificationError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# holding costs
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LinearHolding:
    rate: float = 1.0

    def __call__(self, x):
        return self.rate * x

    def inverse(self, v: float) -> float:
        return v / self.rate

    def scaled(self, factor: float) -> "LinearHolding":
        return LinearHolding(self.rate * factor)

    def describe(self) -> dict:
        return {"family": "linear", "rate": self.rate}


@dataclass(frozen=True)
class PowerHolding:
    """h(x) = coef * x**power."""

    coef: float
    power: float

    def __call__(self, x):
        return self.coef * np.power(np.maximum(x, 0.0), self.power) if np.ndim(x) else \
            self.coef * max(x, 0.0) ** self.power

    def inverse(self, v: float) -> float:
        return (max(v, 0.0) / self.coef) ** (1.0 / self.power)

    def scaled(self, factor: float) -> "PowerHolding":
        return PowerHolding(self.coef * factor, self.power)

    def describe(self) -> dict:
        return {"family": "power", "coef": self.coef, "power": self.power}


@dataclass(frozen=True)
class TableHolding:
    """Piecewise-linear holding cost through sorted (x, h) nodes.

    Beyond the last node the final slope is continued, keeping h unbounded.
    """

    xs: tuple[float, ...]
    hs: tuple[float, ...]

    def __post_init__(self):
        if len(self.xs) != len(self.hs) or len(self.xs) < 2:
            raise SpecError("holding table needs at least two (x, h) pairs")
        if any(b <= a for a, b in zip(self.xs, self.xs[1:])):
            raise SpecError("holding table abscissae must be strictly increasing")
        if any(b <= a for a, b in zip(self.hs, self.hs[1:])):
            raise SpecError("holding table values must be strictly increasing")

    def __call__(self, x):
        slope = (self.hs[-1] - self.hs[-2]) / (self.xs[-1] - self.xs[-2])
        xa = np.asarray(x, dtype=float)
        out = np.interp(xa, self.xs, self.hs)
        out = np.where(xa > self.xs[-1], self.hs[-1] + slope * (xa - self.xs[-1]), out)
        return float(out) if out.ndim == 0 else out

    def inverse(self, v: float) -> float:
        slope = (self.hs[-1] - self.hs[-2]) / (self.xs[-1] - self.xs[-2])
        if v > self.hs[-1]:
            return self.xs[-1] + (v - self.hs[-1]) / slope
        return float(np.interp(v, self.hs, self.xs))

    def scaled(self, factor: float) -> "TableHolding":
        return TableHolding(self.xs, tuple(factor * v for v in self.hs))

    def describe(self) -> dict:
        return {"family": "table", "points": [[a, b] for a, b in zip(self.xs, self.hs)]}


def holding_inverse(h: Callable[[float], float], v: float) -> float:
    """Smallest x >= 0 with h(x) = v for a strictly increasing, unbounded h."""
    if hasattr(h, "inverse"):
        return float(h.inverse(v))
    if v <= h(0.0):
        return 0.0
    hi = 1.0
    while h(hi) < v:
        hi *= 2.0
        if hi > 1e300:
            raise SpecError("holding cost does not reach the requested level")
    return brentq(lambda x: h(x) - v, 0.0, hi, xtol=1e-14, rtol=1e-15)


# ---------------------------------------------------------------------------
# problem instance
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ProblemSpec:
    """A Brownian inventory instance.

    ``K, k`` are the fixed and per-unit costs of raising inventory, ``L, ell``
    those of lowering it, ``h`` the holding-cost rate and ``menu`` the
    admissible drifts with their cost rates.
    """

    sigma: float
    K: float
    k: float
    L: float
    ell: float
    h: Callable[[float], float]
    menu: DriftMenu
    check_points: int = 257

    def __post_init__(self):
        if not (self.sigma > 0.0 and math.isfinite(self.sigma)):
            raise SpecError("sigma must be positive and finite")
        for name in ("K", "k", "L", "ell"):
            v = getattr(self, name)
            if not (v > 0.0 and math.isfinite(v)):
                raise SpecError(f"{name} must be strictly positive, got {v}")
        if abs(float(self.h(0.0))) > 1e-12:
            raise SpecError("holding cost must vanish at zero inventory")
        grid = np.linspace(0.0, 10.0 * (1.0 + self.k + self.ell), self.check_points)
        vals = np.array([float(self.h(x)) for x in grid])
        if not np.all(np.diff(vals) > 0.0):
            raise SpecError("holding cost must be strictly increasing on the sampled grid")

    @property
    def diffusion(self) -> float:
        """sigma^2 / 2."""
        return 0.5 * self.sigma * self.sigma

    @property
    def lipschitz(self) -> float:
        return lipschitz_constant(self.menu)

    def pi(self, w: float) -> float:
        return self.menu.pi(w)

    def mu(self, w: float) -> float:
        return self.menu.mu(w)

    def slope(self, x: float, w: float, gamma: float) -> float:
        """w'(x) from the ODE."""
        return (gamma - self.menu.pi(w) - self.h(x)) / self.diffusion

    def residual(self, x, w, wp, gamma):
        return self.diffusion * wp + self.menu.pi(w) + self.h(x) - gamma

    def scaled(self, factor: float) -> "ProblemSpec":
        """Instance with h, c, K, k, L, ell all multiplied by ``factor``."""
        return ProblemSpec(self.sigma, self.K * factor, self.k * factor, self.L * factor,
                           self.ell * factor, self.h.scaled(factor), self.menu.scaled(factor))

    def x_cap(self, w0: float, gamma: float) -> float:
        """Default hard cap on x for one shot."""
        target = abs(gamma) + abs(self.pi(w0)) + abs(self.pi(0.0)) + self.lipschitz * (abs(w0) + 10.0) + 10.0
        x = 1.0
        while self.h(x) < target:
            x *= 2.0
            if x > 1e12:
                raise SpecError("holding cost grows too slowly to bound the integration range")
        return x


# ---------------------------------------------------------------------------
# stopping rules
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ReachX:
    x_cap: float


@dataclass(frozen=True)
class WBelow:
    level: float


@dataclass(frozen=True)
class WAbove:
    level: float


@dataclass(frozen=True)
class AfterPeakWBelow:
    """Stop once w' < 0 has been seen and w < level (level=inf: just past the peak)."""

    level: float


StoppingRule = ReachX | WBelow | WAbove | AfterPeakWBelow


def _make_stop(rules: Sequence[StoppingRule]):
    below = [r.level for r in rules if isinstance(r, WBelow)]
    above = [r.level for r in rules if isinstance(r, WAbove)]
    after = [r.level for r in rules if isinstance(r, AfterPeakWBelow)]
    if not (below or above or after):
        return None
    lo = max(below) if below else -math.inf
    hi = min(above) if above else math.inf
    after_lvl = max(after) if after else None
    state = {"falling": False, "reason": None}

    def stop(x, w, wp):
        if w < lo:
            state["reason"] = "w_below"
            return True
        if w >= hi:
            state["reason"] = "w_above"
            return True
        if after_lvl is not None:
            if wp < 0.0:
                state["falling"] = True
            if state["falling"] and w < after_lvl:
                state["reason"] = "after_peak"
                return True
        return False

    return stop, state


# ---------------------------------------------------------------------------
# curves
# ---------------------------------------------------------------------------

class Shape(str, Enum):
    DECREASING = "decreasing"
    INCREASING = "increasing"
    UNIMODAL = "unimodal"


@dataclass
class SolutionCurve:
    """One shot ``w(.; w0, gamma)`` with dense output.

    ``events`` lists ``(level, x, direction)`` for crossings of ``-k``,
    ``ell`` (``level`` given as a float) and of ``w' = 0`` (``level`` is the
    string ``"w'=0"``).  ``provisional`` is True when an increasing
    classification rests only on the integration cap.
    """

    spec: ProblemSpec
    w0: float
    gamma: float
    dense: DenseCurve
    tol: float
    stop_reason: str
    shape: Shape = field(init=False)
    x_star: float = field(init=False)
    provisional: bool = field(init=False, default=False)

    def __post_init__(self):
        self.shape, self.x_star, self.provisional = _classify(self)

    @cached_property
    def events(self) -> list:
        ev = []
        for level in (-self.spec.k, self.spec.ell):
            ev.extend((level, x, d) for x, d in find_crossings(self, level))
        if self.shape is Shape.UNIMODAL:
            ev.append(("w'=0", self.x_star, 0))
        return sorted(ev, key=lambda e: e[1])

    # nodes ------------------------------------------------------------
    @property
    def x(self) -> np.ndarray:
        return self.dense.x

    @property
    def w(self) -> np.ndarray:
        return self.dense.y

    @property
    def w_prime(self) -> np.ndarray:
        return self.dense.yp

    @property
    def x_end(self) -> float:
        return self.dense.x_end

    def __call__(self, x):
        return self.dense(x)

    def slope(self, x):
        """w'(x) from the ODE at the interpolated w (vectorised)."""
        xa = np.asarray(x, dtype=float)
        wa = np.asarray(self.dense(xa), dtype=float)
        pis = np.array([self.spec.pi(v) for v in wa.ravel()]).reshape(wa.shape)
        out = (self.gamma - pis - np.asarray(self.spec.h(xa), dtype=float)) / self.spec.diffusion
        return float(out) if out.ndim == 0 else out

    def integral(self, a: float, b: float, shift: float = 0.0) -> float:
        """Integral of ``w - shift`` over [a, b]."""
        return self.dense.integral(a, b, shift)

    @property
    def peak(self) -> float:
        """max of w over the integrated range."""
        if self.shape is Shape.UNIMODAL:
            return float(self.dense(self.x_star))
        if self.shape is Shape.DECREASING:
            return self.w0
        return float(np.max(self.w))

    def node_residuals(self) -> np.ndarray:
        return np.array([self.spec.residual(x, w, wp, self.gamma)
                         for x, w, wp in zip(self.x, self.w, self.w_prime)])

    def to_csv(self, path) -> None:
        data = np.column_stack([self.x, self.w, self.w_prime])
        np.savetxt(path, data, delimiter=",", header="x,w,w_prime", comments="", fmt="%.17g")


def integrate(
    spec: ProblemSpec,
    w0: float,
    gamma: float,
    stop: Sequence[StoppingRule] | StoppingRule = (),
    tol: float = 1e-10,
    *,
    x_cap: float | None = None,
    strict: bool = False,
) -> SolutionCurve:
    """Shoot ``w(.; w0, gamma)`` until the first stopping rule fires.

    ``stop`` may hold several rules; the integration halts at the first one
    satisfied.  A :class:`ReachX` rule sets the x range.  Without it the
    range is the default cap from :meth:`ProblemSpec.x_cap`; reaching that cap
    is reported through ``stop_reason == "cap"``, or raises
    :class:`CapExceededError` when ``strict`` is set.
    """
    if tol <= 0.0:
        raise ValueError("tol must be positive")
    rules = [stop] if not isinstance(stop, (list, tuple)) else list(stop)
    reach = [r.x_cap for r in rules if isinstance(r, ReachX)]
    cap = min(reach) if reach else (x_cap if x_cap is not None else spec.x_cap(w0, gamma))
    made = _make_stop(rules)
    stop_fn, state = made if made is not None else (None, {"reason": None})

    sig2 = spec.diffusion
    pi = spec.menu.pi
    h = spec.h
    g = float(gamma)

    def rhs(x, w):
        return (g - pi(w) - h(x)) / sig2

    h_max = sig2 / (4.0 * spec.lipschitz + 1e-12)
    y_bound = 1e8 * (1.0 + abs(w0) + abs(g) + spec.k + spec.ell)
    dense = integrate_scalar(rhs, 0.0, float(w0), cap, rtol=tol, atol=tol, h_max=h_max,
                             y_kinks=spec.menu.kinks, stop=stop_fn, y_bound=y_bound)
    if dense.termination == "stop":
        reason = state["reason"]
    elif dense.termination == "diverged":
        reason = "diverged"
    else:
        reason = "reach_x" if reach else "cap"
        if strict and not reach:
            raise CapExceededError(f"no stopping rule fired before x cap {cap:.6g} (w0={w0}, gamma={gamma})")
    return SolutionCurve(spec, float(w0), g, dense, tol, reason)


def _classify(curve: SolutionCurve):
    d = curve.dense
    if len(d.x) < 2:
        raise ClassificationError("curve has a single node; nothing to classify")
    if d.yp[0] <= 0.0:
        return Shape.DECREASING, 0.0, False
    neg = np.nonzero(d.yp <= 0.0)[0]
    if len(neg) == 0:
        if np.all(np.abs(d.yp) < 1e-14):
            raise ClassificationError("w' below noise floor everywhere")
        return Shape.INCREASING, math.inf, curve.stop_reason != "diverged"
    i = int(neg[0])
    a, b = float(d.x[i - 1]), float(d.x[i])
    fa, fb = curve.slope(a), curve.slope(b)
    if fb == 0.0:
        return Shape.UNIMODAL, b, False
    if fa <= 0.0:
        return Shape.UNIMODAL, a, False
    xs = brentq(curve.slope, a, b, xtol=1e-13, rtol=4 * np.finfo(float).eps)
    return Shape.UNIMODAL, float(xs), False


def classify(curve: SolutionCurve) -> Shape:
    return curve.shape


def find_crossings(curve, level: float) -> list[tuple[float, int]]:
    """All roots of ``w(x) = level`` on the integrated range, with direction.

    A root at x = 0 is reported only when w(0) equals ``level`` and
    w'(0) != 0.  Within each step the interpolant is split at an interior
    extremum of the node slopes, so touching-and-returning crossings inside a
    single step are still found.
    """
    d = curve.dense if isinstance(curve, SolutionCurve) else curve
    s = d.y - level
    out: list[tuple[float, int]] = []
    if s[0] == 0.0 and d.yp[0] != 0.0:
        out.append((float(d.x[0]), int(np.sign(d.yp[0]))))
    n = len(d.coef)
    sign_change = np.nonzero(s[:-1] * s[1:] < 0.0)[0]
    exact = np.nonzero(s[1:] == 0.0)[0]
    turn = np.nonzero((d.yp[:-1] > 0.0) & (d.yp[1:] < 0.0) | (d.yp[:-1] < 0.0) & (d.yp[1:] > 0.0))[0]
    candidates = sorted(set(sign_change.tolist()) | set(turn.tolist()) | set(exact.tolist()))
    for i in candidates:
        if i >= n:
            continue
        pieces = [(0.0, 1.0)]
        if i in set(turn.tolist()):
            te = _poly_turn(d.coef[i])
            if te is not None:
                pieces = [(0.0, te), (te, 1.0)]
        for ta, tb in pieces:
            # interpolant values; nodes and interpolant may disagree in the last bit
            fa = d.segment_value(i, ta) - level
            fb = d.segment_value(i, tb) - level
            if tb == 1.0 and s[i + 1] == 0.0:
                x = float(d.x[i + 1])
                out.append((x, int(np.sign(d.yp[i + 1])) or (1 if fa < 0.0 else -1)))
                continue
            if fa * fb < 0.0:
                t = brentq(lambda t: d.segment_value(i, t) - level, ta, tb, xtol=1e-15, rtol=1e-15)
                x = float(d.x[i] + t * (d.x[i + 1] - d.x[i]))
                out.append((x, 1 if fb > 0.0 else -1))
            elif len(pieces) == 1 and s[i] * s[i + 1] < 0.0:
                t = 0.0 if abs(fa) < abs(fb) else 1.0
                x = float(d.x[i] + t * (d.x[i + 1] - d.x[i]))
                out.append((x, 1 if s[i + 1] > 0.0 else -1))
    out.sort()
    # collapse duplicates from a root sitting on a shared node
    dedup: list[tuple[float, int]] = []
    for x, dirn in out:
        if dedup and abs(x - dedup[-1][0]) < 1e-14 * (1.0 + abs(x)):
            continue
        dedup.append((x, dirn))
    return dedup


def _poly_turn(c) -> float | None:
    """t in (0, 1) where the quartic step polynomial has zero derivative."""
    dp = lambda t: c[1] + t * (2 * c[2] + t * (3 * c[3] + t * 4 * c[4]))  # noqa: E731
    a, b = dp(0.0), dp(1.0)
    if a * b >= 0.0:
        return None
    return float(brentq(dp, 0.0, 1.0, xtol=1e-15))
