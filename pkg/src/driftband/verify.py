"""Certification of a solved instance and exact evaluation of band policies.

:func:`evaluate_band_policy` computes the long-run average cost of any
control band policy ``(0, q, Q, S)`` with a state-feedback drift by solving
the linear ODE for ``w = V'``.  :func:`check_lower_bound` tests the
inequalities that make the solved relative value a lower bound for every
admissible policy.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .freeboundary import FreeBoundarySolution
from .hamiltonian import FiniteMenu, MenuError
from .ode import ProblemSpec, find_crossings
from .stepper import DenseCurve, integrate_scalar

__all__ = [
    "BandPolicy", "CertificationError", "CertificationReport", "ConstantDrift",
    "DegeneratePolicyError", "EvalResult", "FunctionDrift", "PolicyError", "StepDrift",
    "brute_force_local_opt", "check_lower_bound", "drift_from_solution",
    "evaluate_band_policy", "optimal_policy",
]


class PolicyError(ValueError):
    pass


class DegeneratePolicyError(RuntimeError):
    """The boundary conditions do not determine (w0, gamma)."""


class CertificationError(RuntimeError):
    def __init__(self, report: "CertificationReport"):
        super().__init__(report.summary_line())
        self.report = report


# ---------------------------------------------------------------------------
# drift profiles
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ConstantDrift:
    mu: float
    breaks: tuple[float, ...] = ()

    def value(self, x: float, seg: int = 0) -> float:
        return self.mu

    def values(self):
        return (self.mu,)

    def describe(self) -> dict:
        return {"type": "const", "mu": self.mu}


@dataclass(frozen=True)
class StepDrift:
    """Piecewise-constant drift: ``values[i]`` on ``[breaks[i-1], breaks[i])``."""

    breaks: tuple[float, ...]
    vals: tuple[float, ...]

    def __post_init__(self):
        if len(self.vals) != len(self.breaks) + 1:
            raise PolicyError("a step drift needs one more value than breakpoints")
        if any(b <= a for a, b in zip(self.breaks, self.breaks[1:])):
            raise PolicyError("step drift breakpoints must be strictly increasing")

    def value(self, x: float, seg: int | None = None) -> float:
        if seg is None:
            seg = int(np.searchsorted(self.breaks, x, side="right"))
        return self.vals[seg]

    def values(self):
        return self.vals

    def describe(self) -> dict:
        return {"type": "step", "breaks": list(self.breaks), "values": list(self.vals)}


@dataclass(frozen=True)
class FunctionDrift:
    """Drift given by a callable of x; ``breaks`` mark its non-smooth points."""

    fn: Callable[[float], float]
    breaks: tuple[float, ...] = ()
    samples: tuple[float, ...] = field(default=(), repr=False)

    def value(self, x: float, seg: int = 0) -> float:
        return float(self.fn(x))

    def values(self):
        return self.samples

    def describe(self) -> dict:
        return {"type": "function", "breaks": list(self.breaks)}


DriftProfile = ConstantDrift | StepDrift | FunctionDrift


def _piecewise_constant(menu) -> bool:
    return isinstance(menu, FiniteMenu) or getattr(menu, "_finite", None) is not None


def drift_from_solution(solution: FreeBoundarySolution, x_max: float | None = None,
                        shift: float = 0.0) -> DriftProfile:
    """``mu(w*(x) + shift)`` on ``[0, x_max]`` (default ``S*``).

    For menus whose minimiser is piecewise constant in ``w`` the result is an
    exact :class:`StepDrift` with breaks where ``w* + shift`` crosses a kink.
    """
    spec = solution.spec
    x_max = solution.S_star if x_max is None else x_max
    curve = solution.extended_curve(x_max)
    breaks = sorted({x for lvl in spec.menu.kinks for x, _ in find_crossings(curve, lvl - shift)
                     if 0.0 < x < x_max})
    if _piecewise_constant(spec.menu):
        edges = [0.0, *breaks, x_max]
        vals = tuple(spec.mu(float(curve(0.5 * (a + b))) + shift) for a, b in zip(edges, edges[1:]))
        # merge neighbours with equal drift
        mb, mv = [], [vals[0]]
        for b, v in zip(breaks, vals[1:]):
            if v != mv[-1]:
                mb.append(b)
                mv.append(v)
        return StepDrift(tuple(mb), tuple(mv))
    grid = np.linspace(0.0, x_max, 65)
    samples = tuple(spec.mu(float(w) + shift) for w in curve(grid))
    return FunctionDrift(lambda x: spec.mu(float(curve(x)) + shift), tuple(breaks), samples)


# ---------------------------------------------------------------------------
# band policies
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BandPolicy:
    q: float
    Q: float
    S: float
    drift: DriftProfile

    def __post_init__(self):
        if not (0.0 < self.q <= self.Q < self.S) or not all(map(math.isfinite, (self.q, self.Q, self.S))):
            raise PolicyError(f"band policy needs 0 < q <= Q < S, got q={self.q}, Q={self.Q}, S={self.S}")

    def mu(self, x: float) -> float:
        return self.drift.value(x) if not isinstance(self.drift, StepDrift) else self.drift.value(x, None)

    def check_menu(self, spec: ProblemSpec) -> None:
        menu = spec.menu
        for v in self.drift.values():
            if isinstance(menu, FiniteMenu):
                if not any(abs(v - m) <= 1e-12 for m in menu.drifts):
                    raise PolicyError(f"drift {v} is not in the menu")
            elif not (menu.lo - 1e-12 <= v <= menu.hi + 1e-12):
                raise PolicyError(f"drift {v} is outside [{menu.lo}, {menu.hi}]")

    def describe(self) -> dict:
        return {"q": self.q, "Q": self.Q, "S": self.S, "drift": self.drift.describe()}


def optimal_policy(solution: FreeBoundarySolution) -> BandPolicy:
    return BandPolicy(solution.q_star, solution.Q_star, solution.S_star, drift_from_solution(solution))


# ---------------------------------------------------------------------------
# exact evaluation
# ---------------------------------------------------------------------------

@dataclass
class EvalResult:
    """Average cost ``gamma`` of a band policy and the implied ``w(0)``.

    ``curves`` holds the three trajectories (homogeneous, cost-driven,
    gamma-driven) whose combination ``w0*u + p + gamma*g`` is ``V'``.
    """

    gamma: float
    w0: float
    policy: BandPolicy
    curves: tuple[DenseCurve, DenseCurve, DenseCurve]
    condition: float
    residuals: tuple[float, float]

    def w(self, x):
        u, p, g = self.curves
        return self.w0 * u(x) + p(x) + self.gamma * g(x)

    def to_dict(self) -> dict:
        return {"gamma": self.gamma, "w0": self.w0, "policy": self.policy.describe(),
                "condition": self.condition, "residuals": list(self.residuals)}


def _linear_shot(spec: ProblemSpec, drift: DriftProfile, S: float, y0: float, a_gamma: float,
                 with_costs: bool, tol: float) -> DenseCurve:
    d = spec.diffusion
    h = spec.h
    cost = spec.menu.cost

    # the stepper numbers segments by the breaks inside (0, S) only
    offset = sum(1 for b in drift.breaks if b <= 0.0)

    def rhs(x, y, seg=0):
        m = drift.value(x, seg + offset)
        src = (cost(m) + h(x)) if with_costs else 0.0
        return (a_gamma - m * y - src) / d

    h_max = d / (4.0 * spec.lipschitz + 1e-12)
    return integrate_scalar(rhs, 0.0, y0, S, rtol=tol, atol=tol, h_max=h_max,
                            x_breaks=drift.breaks)


def evaluate_band_policy(spec: ProblemSpec, policy: BandPolicy, tol: float = 1e-12,
                         *, max_condition: float = 1e12) -> EvalResult:
    """Long-run average cost of ``policy`` from the linear ODE for ``V'``.

    With the drift fixed, ``(sigma^2/2) w' + mu(x) w + c(mu(x)) + h(x) = gamma``
    is linear, so ``w = w0*u + p + gamma*g``.  The impulse conditions

        int_0^q w = -(K + k q),     int_Q^S w = L + ell (S - Q)

    then form a 2x2 system in ``(w0, gamma)``.
    """
    policy.check_menu(spec)
    q, Q, S = policy.q, policy.Q, policy.S
    u = _linear_shot(spec, policy.drift, S, 1.0, 0.0, False, tol)
    p = _linear_shot(spec, policy.drift, S, 0.0, 0.0, True, tol)
    g = _linear_shot(spec, policy.drift, S, 0.0, 1.0, False, tol)
    A = np.array([[u.integral(0.0, q), g.integral(0.0, q)],
                  [u.integral(Q, S), g.integral(Q, S)]])
    rhs = np.array([-(spec.K + spec.k * q) - p.integral(0.0, q),
                    spec.L + spec.ell * (S - Q) - p.integral(Q, S)])
    cond = float(np.linalg.cond(A))
    if not math.isfinite(cond) or cond > max_condition:
        raise DegeneratePolicyError(f"boundary system is singular (condition {cond:.3g})")
    w0, gamma = np.linalg.solve(A, rhs)
    res = tuple(float(v) for v in A @ np.array([w0, gamma]) - rhs)
    return EvalResult(float(gamma), float(w0), policy, (u, p, g), cond, res)


# ---------------------------------------------------------------------------
# lower-bound certification
# ---------------------------------------------------------------------------

@dataclass
class CertificationReport:
    passed: bool
    tol: float
    gamma: float
    x_max: float
    n_grid: int
    minima: dict
    argmins: dict
    violations: dict
    metadata: dict

    def summary_line(self) -> str:
        parts = ", ".join(f"{k}={v:.3g}" for k, v in self.minima.items())
        return f"certification {'passed' if self.passed else 'FAILED'} ({parts})"

    def to_dict(self) -> dict:
        return {"passed": self.passed, "tol": self.tol, "gamma": self.gamma, "x_max": self.x_max,
                "n_grid": self.n_grid, "minima": self.minima, "argmins": self.argmins,
                "violations": self.violations, "metadata": self.metadata}


class _ValueStar:
    """f*(x) = int_0^x w*, continued linearly with slope ell past S*."""

    def __init__(self, solution: FreeBoundarySolution):
        self.sol = solution
        self.S = solution.S_star
        self.curve = solution.curve.dense
        self.f_S = float(self.curve.antiderivative(self.S)[0])
        self.ell = solution.spec.ell

    def f(self, x):
        x = np.asarray(x, dtype=float)
        inner = self.curve.antiderivative(np.minimum(x, self.S))
        return np.where(x <= self.S, inner, self.f_S + self.ell * (x - self.S))

    def fp(self, x):
        x = np.asarray(x, dtype=float)
        return np.where(x <= self.S, self.curve(np.minimum(x, self.S)), self.ell)

    def fpp(self, x):
        x = np.asarray(x, dtype=float)
        return np.where(x < self.S, self.curve.derivative(np.minimum(x, self.S)), 0.0)


def _grid(S: float, x_max: float, n: int) -> np.ndarray:
    # cell centres of a lattice that has S as a node, so S itself is never sampled
    m = max(1, round(n * S / x_max))
    dx = S / m
    count = int(math.floor(x_max / dx))
    return (np.arange(count) + 0.5) * dx


def _pair_min(f, pts, fixed, slope, upward):
    """min over ordered pairs of the impulse inequality margin, O(n^2)."""
    fx = f(pts)
    # margin(a -> b) = f(b) + fixed + slope*|b - a| - f(a)
    diff = pts[None, :] - pts[:, None]           # b - a, rows index a
    marg = fx[None, :] + fixed + slope * np.abs(diff) - fx[:, None]
    mask = diff > 0 if upward else diff < 0
    marg = np.where(mask, marg, np.inf)
    i, j = np.unravel_index(np.argmin(marg), marg.shape)
    return float(marg[i, j]), (float(pts[i]), float(pts[j])), marg


def check_lower_bound(spec: ProblemSpec, solution: FreeBoundarySolution, x_max: float | None = None,
                      n_grid: int = 1000, tol: float = 1e-6, *, raise_on_failure: bool = False,
                      max_pairs: int = 2000, max_violations: int = 10) -> CertificationReport:
    """Check the lower-bound inequalities for f* on ``[0, x_max]``.

    (i) drift: ``sigma^2/2 f'' + pi(f') + h - gamma >= -tol`` on a grid that
    avoids S*, where f'' jumps; (ii) up-impulse pairs x < y:
    ``f(y) + K + k(y - x) - f(x) >= -tol``; (iii) down-impulse pairs y < x:
    ``f(y) + L + ell(x - y) - f(x) >= -tol``; (iv) f* bounded below.
    The five boundary residuals must also be within ``tol``; ``minima["boundary"]``
    is minus the largest of them.
    """
    if n_grid < 1000:
        raise ValueError("n_grid must be at least 1000")
    S = solution.S_star
    x_max = 3.0 * S if x_max is None else float(x_max)
    if not x_max > S:
        raise ValueError("x_max must exceed S*")
    gamma = solution.gamma_star
    if solution.curve.x_end < S * (1.0 - 1e-12):
        report = CertificationReport(
            False, tol, gamma, x_max, n_grid, {}, {},
            {"curve": [f"w* only reaches x={solution.curve.x_end:.6g} < S*={S:.6g}"]},
            {"curve_termination": solution.curve.stop_reason})
        if raise_on_failure:
            raise CertificationError(report)
        return report
    vs = _ValueStar(solution)
    xs = _grid(S, x_max, n_grid)

    fp = vs.fp(xs)
    drift = spec.diffusion * vs.fpp(xs) + np.array([spec.pi(v) for v in fp]) + spec.h(xs) - gamma
    i_drift = int(np.argmin(drift))

    # tail past x_max: for x > S*, the margin is pi(ell) + h(x) - gamma, increasing in x
    tail_margin = spec.pi(spec.ell) + float(spec.h(x_max)) - gamma

    step = max(1, int(math.ceil(len(xs) / max_pairs)))
    key = np.array([0.0, solution.q_star, solution.Q_star, S])
    pts = np.unique(np.concatenate([xs[::step], key]))
    up_min, up_at, up_marg = _pair_min(vs.f, pts, spec.K, spec.k, True)
    dn_min, dn_at, dn_marg = _pair_min(vs.f, pts, spec.L, spec.ell, False)

    f_grid = vs.f(pts)
    f_lb = float(np.min(f_grid))
    bounded = math.isfinite(f_lb) and spec.ell > 0.0

    minima = {"drift": float(drift[i_drift]), "up_impulse": up_min, "down_impulse": dn_min,
              "boundary": -float(max(abs(v) for v in solution.residuals.values()))}
    argmins = {"drift": float(xs[i_drift]), "up_impulse": list(up_at), "down_impulse": list(dn_at)}

    violations = {}
    bad = np.nonzero(drift < -tol)[0]
    if len(bad):
        violations["drift"] = [[float(xs[i]), float(drift[i])] for i in bad[:max_violations]]
    for name, marg in (("up_impulse", up_marg), ("down_impulse", dn_marg)):
        ii, jj = np.nonzero(marg < -tol)
        if len(ii):
            violations[name] = [[float(pts[a]), float(pts[b]), float(marg[a, b])]
                                for a, b in list(zip(ii, jj))[:max_violations]]
    if not bounded:
        violations["bounded_below"] = [f_lb]
    # f* is only a valid certificate if the boundary conditions hold
    res = solution.residuals
    res_max = max(abs(v) for v in res.values())
    if not res_max <= tol:
        violations["boundary"] = [[k, float(v)] for k, v in res.items() if not abs(v) <= tol]

    passed = not violations and tail_margin >= -tol
    meta = {
        "f_lower_bound": f_lb,
        "min_w_star": float(np.min(solution.curve.w)),
        "tail_margin_at_x_max": tail_margin,
        "tail_argument": "past S* f' = ell, so the drift margin pi(ell) + h(x) - gamma grows with h",
        "pair_points": int(len(pts)),
        "equality_region_max_abs": float(np.max(np.abs(drift[xs < S]))) if np.any(xs < S) else 0.0,
    }
    report = CertificationReport(passed, tol, gamma, x_max, n_grid, minima, argmins, violations, meta)
    if raise_on_failure and not passed:
        raise CertificationError(report)
    return report


# ---------------------------------------------------------------------------
# brute-force neighbourhood search
# ---------------------------------------------------------------------------

DEFAULT_DELTAS = (-0.1, -0.05, 0.0, 0.05, 0.1)


@dataclass
class LocalOptRow:
    dq: float
    dQ: float
    dS: float
    shift: float
    gamma: float | None
    diff: float | None
    note: str = ""


def brute_force_local_opt(spec: ProblemSpec, solution: FreeBoundarySolution,
                          delta_grid: Sequence[float] = DEFAULT_DELTAS,
                          drift_shifts: Sequence[float] = (0.0,), tol: float = 1e-12) -> list[LocalOptRow]:
    """Evaluate perturbed band policies around the solution.

    Each row moves ``(q*, Q*, S*)`` by ``(dq, dQ, dS)`` from ``delta_grid`` and
    uses the drift ``mu(w*(x) + shift)`` for each shift.  ``diff`` is the
    evaluated cost minus ``gamma*``; infeasible orderings get ``gamma=None``.
    """
    rows = []
    deltas = [float(d) for d in delta_grid]
    s_max = solution.S_star + max(0.0, max(deltas))
    drifts = {s: drift_from_solution(solution, s_max, s) for s in drift_shifts}
    for shift, drift in drifts.items():
        for dq in deltas:
            for dQ in deltas:
                for dS in deltas:
                    q, Q, S = solution.q_star + dq, solution.Q_star + dQ, solution.S_star + dS
                    try:
                        pol = BandPolicy(q, Q, S, _clip_drift(drift, S))
                        res = evaluate_band_policy(spec, pol, tol)
                    except (PolicyError, DegeneratePolicyError, MenuError) as exc:
                        rows.append(LocalOptRow(dq, dQ, dS, shift, None, None, str(exc)))
                        continue
                    rows.append(LocalOptRow(dq, dQ, dS, shift, res.gamma, res.gamma - solution.gamma_star))
    return rows


def _clip_drift(drift: DriftProfile, S: float) -> DriftProfile:
    if isinstance(drift, StepDrift):
        keep = [i for i, b in enumerate(drift.breaks) if b < S]
        return StepDrift(tuple(drift.breaks[i] for i in keep), drift.vals[:len(keep) + 1])
    if isinstance(drift, FunctionDrift):
        return FunctionDrift(drift.fn, tuple(b for b in drift.breaks if b < S), drift.samples)
    return drift
