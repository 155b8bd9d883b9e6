"""Drift menus and the reduced Hamiltonian.

For a marginal value ``w`` the running cost of the best admissible drift is

    pi(w) = min_{mu in U} (mu * w + c(mu)),

and ``mu(w)`` is the minimiser, taking the smallest one when several tie.
``pi`` is concave and Lipschitz with constant ``max(|mu_lo|, |mu_hi|)``, and
``mu(w)`` is non-increasing in ``w``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

TIE_TOL = 1e-12
GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


class MenuError(ValueError):
    """Raised for an invalid drift menu or an unevaluable cost function."""


@dataclass(frozen=True)
class HamiltonianValue:
    pi: float
    mu: float


# ---------------------------------------------------------------------------
# cost families for the interval variant
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class QuadraticCost:
    """c(mu) = a*mu**2 + b*mu + d."""

    a: float
    b: float = 0.0
    d: float = 0.0

    def __call__(self, mu):
        return self.a * mu * mu + self.b * mu + self.d

    def scaled(self, factor: float) -> "QuadraticCost":
        return QuadraticCost(self.a * factor, self.b * factor, self.d * factor)

    def argmin(self, w: float, lo: float, hi: float) -> float:
        # mu*w + a mu^2 + b mu: stationary point when a > 0, endpoints otherwise
        if self.a > 0.0:
            return min(max(-(w + self.b) / (2.0 * self.a), lo), hi)
        v_lo = lo * w + self(lo)
        v_hi = hi * w + self(hi)
        return lo if v_lo <= v_hi + TIE_TOL else hi

    def kinks(self, lo: float, hi: float) -> tuple[float, ...]:
        if self.a > 0.0:
            return tuple(sorted({-(2.0 * self.a * lo + self.b), -(2.0 * self.a * hi + self.b)}))
        return (-(self(hi) - self(lo)) / (hi - lo),) if hi > lo else ()

    def describe(self) -> dict:
        return {"family": "quadratic", "a": self.a, "b": self.b, "d": self.d}


@dataclass(frozen=True)
class AbsoluteCost:
    """c(mu) = a*|mu|."""

    a: float

    def __call__(self, mu):
        return self.a * abs(mu)

    def scaled(self, factor: float) -> "AbsoluteCost":
        return AbsoluteCost(self.a * factor)

    def candidates(self, lo: float, hi: float) -> tuple[float, ...]:
        pts = {lo, hi}
        if lo < 0.0 < hi:
            pts.add(0.0)
        return tuple(sorted(pts))

    def describe(self) -> dict:
        return {"family": "absolute", "a": self.a}


@dataclass(frozen=True)
class TableCost:
    """Piecewise-linear cost through sorted (mu, c) nodes."""

    mus: tuple[float, ...]
    costs: tuple[float, ...]

    def __post_init__(self):
        if len(self.mus) != len(self.costs) or len(self.mus) < 2:
            raise MenuError("cost table needs at least two (mu, cost) pairs of equal length")
        if any(b <= a for a, b in zip(self.mus, self.mus[1:])):
            raise MenuError("cost table drifts must be strictly increasing")

    def __call__(self, mu):
        return np.interp(mu, self.mus, self.costs)

    def scaled(self, factor: float) -> "TableCost":
        return TableCost(self.mus, tuple(factor * c for c in self.costs))

    def candidates(self, lo: float, hi: float) -> tuple[float, ...]:
        inner = [m for m in self.mus if lo < m < hi]
        return tuple(sorted({lo, hi, *inner}))

    def describe(self) -> dict:
        return {"family": "table", "points": [[m, c] for m, c in zip(self.mus, self.costs)]}


# ---------------------------------------------------------------------------
# menus
# ---------------------------------------------------------------------------

def _envelope_kinks(pairs: Sequence[tuple[float, float]]) -> tuple[float, ...]:
    """w-values where the argmin of mu*w + c switches (breakpoints of pi)."""
    kinks = set()
    n = len(pairs)
    for i in range(n):
        for j in range(i + 1, n):
            (mi, ci), (mj, cj) = pairs[i], pairs[j]
            w = -(cj - ci) / (mj - mi)
            vals = [m * w + c for m, c in pairs]
            best = min(vals)
            tol = TIE_TOL * (1.0 + abs(best))
            if vals[i] <= best + tol and vals[j] <= best + tol:
                kinks.add(w)
    return tuple(sorted(kinks))


@dataclass(frozen=True)
class FiniteMenu:
    """Finite drift set {mu_i} with cost rates {c_i}."""

    drifts: tuple[float, ...]
    costs: tuple[float, ...]
    kinks: tuple[float, ...] = field(init=False, repr=False)

    def __post_init__(self):
        drifts = tuple(float(m) for m in self.drifts)
        costs = tuple(float(c) for c in self.costs)
        if not drifts:
            raise MenuError("drift menu is empty")
        if len(drifts) != len(costs):
            raise MenuError("drifts and costs differ in length")
        if not all(math.isfinite(v) for v in drifts + costs):
            raise MenuError("drift menu contains non-finite values")
        if any(b <= a for a, b in zip(drifts, drifts[1:])):
            raise MenuError("finite drift menu must be strictly increasing without duplicates")
        object.__setattr__(self, "drifts", drifts)
        object.__setattr__(self, "costs", costs)
        object.__setattr__(self, "kinks", _envelope_kinks(list(zip(drifts, costs))))

    @classmethod
    def from_pairs(cls, pairs) -> "FiniteMenu":
        pairs = sorted((float(m), float(c)) for m, c in pairs)
        return cls(tuple(m for m, _ in pairs), tuple(c for _, c in pairs))

    @classmethod
    def from_function(cls, drifts, cost: Callable[[float], float]) -> "FiniteMenu":
        drifts = sorted(float(m) for m in drifts)
        return cls(tuple(drifts), tuple(float(cost(m)) for m in drifts))

    @property
    def lo(self) -> float:
        return self.drifts[0]

    @property
    def hi(self) -> float:
        return self.drifts[-1]

    def cost(self, mu):
        """Cost rate of a menu drift (vectorised over arrays of menu drifts)."""
        mu_arr = np.asarray(mu, dtype=float)
        idx = np.searchsorted(self.drifts, mu_arr)
        idx = np.clip(idx, 0, len(self.drifts) - 1)
        out = np.asarray(self.costs)[idx]
        if not np.allclose(np.asarray(self.drifts)[idx], mu_arr, rtol=0.0, atol=1e-12):
            raise MenuError("drift is not an element of the finite menu")
        return float(out) if out.ndim == 0 else out

    def pi(self, w: float) -> float:
        best = math.inf
        for m, c in zip(self.drifts, self.costs):
            v = m * w + c
            if v < best:
                best = v
        return best

    def evaluate(self, w: float) -> HamiltonianValue:
        vals = [m * w + c for m, c in zip(self.drifts, self.costs)]
        best = min(vals)
        # drifts are ascending, so the first tied entry is the smallest minimiser
        for m, v in zip(self.drifts, vals):
            if v <= best + TIE_TOL:
                return HamiltonianValue(best, m)
        raise AssertionError("unreachable")

    def mu(self, w: float) -> float:
        return self.evaluate(w).mu

    def scaled(self, factor: float) -> "FiniteMenu":
        return FiniteMenu(self.drifts, tuple(factor * c for c in self.costs))

    def describe(self) -> dict:
        return {"type": "finite", "pairs": [[m, c] for m, c in zip(self.drifts, self.costs)]}


@dataclass(frozen=True)
class IntervalMenu:
    """Drift interval [lo, hi] with cost function ``cost``.

    Built-in cost families are minimised exactly.  An arbitrary callable is
    minimised on a uniform grid of ``grid_size`` points followed by
    golden-section refinement around the best grid point.
    """

    lo: float
    hi: float
    cost_fn: Callable[[float], float]
    grid_size: int = 1025
    kinks: tuple[float, ...] = field(init=False, repr=False)
    _finite: FiniteMenu | None = field(init=False, repr=False, default=None)

    def __post_init__(self):
        lo, hi = float(self.lo), float(self.hi)
        if not (math.isfinite(lo) and math.isfinite(hi)):
            raise MenuError("drift interval endpoints must be finite")
        if lo > hi:
            raise MenuError("drift interval needs lo <= hi")
        if self.grid_size < 3:
            raise MenuError("grid_size must be at least 3")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        finite = None
        if hasattr(self.cost_fn, "candidates"):
            finite = FiniteMenu.from_function(self.cost_fn.candidates(lo, hi), self.cost_fn)
        object.__setattr__(self, "_finite", finite)
        if finite is not None:
            kinks = finite.kinks
        elif hasattr(self.cost_fn, "kinks"):
            kinks = self.cost_fn.kinks(lo, hi)
        else:
            kinks = ()
        object.__setattr__(self, "kinks", tuple(kinks))
        grid = np.linspace(lo, hi, self.grid_size)
        try:
            vals = np.array([float(self.cost_fn(m)) for m in grid])
        except Exception as exc:  # noqa: BLE001 - any failure means a broken instance
            raise MenuError(f"cost function not evaluable on [{lo}, {hi}]: {exc}") from exc
        if not np.all(np.isfinite(vals)):
            raise MenuError("cost function returns non-finite values on the drift interval")
        object.__setattr__(self, "_grid", grid)
        object.__setattr__(self, "_grid_cost", vals)

    def cost(self, mu):
        return self.cost_fn(mu)

    def _argmin_generic(self, w: float) -> float:
        vals = self._grid * w + self._grid_cost
        best = vals.min()
        i = int(np.argmax(vals <= best + TIE_TOL))
        a = self._grid[max(i - 1, 0)]
        b = self._grid[min(i + 1, self.grid_size - 1)]
        f = lambda m: m * w + float(self.cost_fn(m))  # noqa: E731
        mu, v = float(self._grid[i]), float(vals[i])
        # golden-section on the neighbouring cells
        x1 = b - GOLDEN * (b - a)
        x2 = a + GOLDEN * (b - a)
        f1, f2 = f(x1), f(x2)
        while b - a > 1e-13 * (1.0 + abs(a) + abs(b)):
            if f1 <= f2:
                b, x2, f2 = x2, x1, f1
                x1 = b - GOLDEN * (b - a)
                f1 = f(x1)
            else:
                a, x1, f1 = x1, x2, f2
                x2 = a + GOLDEN * (b - a)
                f2 = f(x2)
        cand = 0.5 * (a + b)
        if f(cand) < v - TIE_TOL:
            mu = cand
        return mu

    def evaluate(self, w: float) -> HamiltonianValue:
        if self.lo == self.hi:
            return HamiltonianValue(self.lo * w + float(self.cost_fn(self.lo)), self.lo)
        if self._finite is not None:
            return self._finite.evaluate(w)
        if hasattr(self.cost_fn, "argmin"):
            mu = self.cost_fn.argmin(w, self.lo, self.hi)
        else:
            mu = self._argmin_generic(w)
        return HamiltonianValue(mu * w + float(self.cost_fn(mu)), mu)

    def pi(self, w: float) -> float:
        if self._finite is not None:
            return self._finite.pi(w)
        return self.evaluate(w).pi

    def mu(self, w: float) -> float:
        return self.evaluate(w).mu

    def scaled(self, factor: float) -> "IntervalMenu":
        if hasattr(self.cost_fn, "scaled"):
            fn = self.cost_fn.scaled(factor)
        else:
            base = self.cost_fn
            fn = lambda m: factor * base(m)  # noqa: E731
        return IntervalMenu(self.lo, self.hi, fn, self.grid_size)

    def describe(self) -> dict:
        out = {"type": "interval", "lo": self.lo, "hi": self.hi}
        if hasattr(self.cost_fn, "describe"):
            out["cost"] = self.cost_fn.describe()
        return out


DriftMenu = FiniteMenu | IntervalMenu


def evaluate(menu: DriftMenu, w: float) -> HamiltonianValue:
    """Minimum of ``mu*w + c(mu)`` over the menu and its smallest minimiser."""
    return menu.evaluate(float(w))


def lipschitz_constant(menu: DriftMenu) -> float:
    return max(abs(menu.lo), abs(menu.hi))
