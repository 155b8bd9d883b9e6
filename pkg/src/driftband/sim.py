"""Monte Carlo simulation of the inventory under a band policy.

Paths follow the Euler-Maruyama recursion ``X += mu(X) dt + sigma sqrt(dt) Z``.
A step whose end is at or below 0 triggers an up-impulse to ``q``; at or
above ``S`` a down-impulse to ``Q``.  Holding and drift costs accrue at the
left endpoint of each step.

Normals come from a counter-based generator: the uniform for step ``i`` of
replication ``r`` is a SplitMix64 hash of ``(seed, r, i)``, mapped through an
inverse normal CDF.  A report therefore depends only on its inputs, not on
call order or thread layout.

With ``bridge=True`` (the default) a step that stays inside the band is also
tested for an excursion past a boundary using the Brownian-bridge crossing
probability ``exp(-2 a b / (sigma^2 dt))``; this removes the ``O(sqrt(dt))``
bias of endpoint monitoring.
"""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import asdict, dataclass, field

import numba
import numpy as np

from .hamiltonian import FiniteMenu
from .ode import LinearHolding, PowerHolding, ProblemSpec, TableHolding
from .verify import BandPolicy, ConstantDrift, FunctionDrift, StepDrift

__all__ = ["DiscretizationWarning", "SimConfig", "SimError", "SimReport", "simulate", "sweep"]

_TABLE_POINTS = 8193
_BLOCK = 1024


class SimError(ValueError):
    pass


class DiscretizationWarning(UserWarning):
    pass


@dataclass(frozen=True)
class SimConfig:
    dt: float = 1e-3
    horizon: float = 1e5
    burn_in: float = 1e3
    replications: int = 32
    seed: int = 0
    x0: float | None = None
    bridge: bool = True
    strict: bool = False
    trace_steps: int = 0

    def __post_init__(self):
        if not (self.dt > 0.0 and math.isfinite(self.dt)):
            raise SimError("dt must be positive")
        if not (0.0 <= self.burn_in < self.horizon):
            raise SimError("need 0 <= burn_in < horizon")
        if self.replications < 1:
            raise SimError("replications must be at least 1")
        if self.x0 is not None and self.x0 < 0.0:
            raise SimError("x0 must be non-negative")
        if not (0 <= self.seed < 2 ** 64):
            raise SimError("seed must fit in 64 unsigned bits")


@dataclass
class SimReport:
    gamma_hat: float
    std_err: float
    breakdown: dict
    counts: dict
    violations: int
    replications: list = field(default_factory=list)
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------------------
# random numbers
# ---------------------------------------------------------------------------

@numba.njit(cache=True, error_model="numpy")
def _mix(z):
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


@numba.njit(cache=True, error_model="numpy")
def _uniform(key, counter):
    z = _mix(key + (counter + np.uint64(1)) * np.uint64(0x9E3779B97F4A7C15))
    # 53 random bits, centred in their cell so 0 and 1 never occur
    return (float(z >> np.uint64(11)) + 0.5) * (1.0 / 9007199254740992.0)


@numba.njit(cache=True, error_model="numpy")
def _norm_ppf(p):
    # rational approximation (relative error < 1e-7, largest near |z| = 1.97)
    if p < 0.02425:
        r = math.sqrt(-2.0 * math.log(p))
        return (((((-7.784894002430293e-03 * r - 3.223964580411365e-01) * r - 2.400758277161838e+00) * r
                  - 2.549732539343734e+00) * r + 4.374664141464968e+00) * r + 2.938163982698783e+00) / \
            ((((7.784695709041462e-03 * r + 3.224671290700398e-01) * r + 2.445134137142996e+00) * r
              + 3.754408661907416e+00) * r + 1.0)
    if p > 0.97575:
        r = math.sqrt(-2.0 * math.log(1.0 - p))
        return -(((((-7.784894002430293e-03 * r - 3.223964580411365e-01) * r - 2.400758277161838e+00) * r
                   - 2.549732539343734e+00) * r + 4.374664141464968e+00) * r + 2.938163982698783e+00) / \
            ((((7.784695709041462e-03 * r + 3.224671290700398e-01) * r + 2.445134137142996e+00) * r
              + 3.754408661907416e+00) * r + 1.0)
    s = p - 0.5
    r = s * s
    return (((((-3.969683028665376e+01 * r + 2.209460984245205e+02) * r - 2.759285104469687e+02) * r
              + 1.383577518672690e+02) * r - 3.066479806614716e+01) * r + 2.506628277459239e+00) * s / \
        (((((-5.447609879822406e+01 * r + 1.615858368580409e+02) * r - 1.556989798598866e+02) * r
           + 6.680131188330100e+01) * r - 1.328068155288572e+01) * r + 1.0)


@numba.njit(cache=True, error_model="numpy")
def _fill_normals(key, start, out):
    """out[j] = normal for counter start + j; same values as _norm_ppf(_uniform(...))."""
    n = out.shape[0]
    # branch-free central formula first so the loop vectorises, then patch the tails
    for j in range(n):
        z = _mix(key + (np.uint64(start + j) + np.uint64(1)) * np.uint64(0x9E3779B97F4A7C15))
        p = (float(z >> np.uint64(11)) + 0.5) * (1.0 / 9007199254740992.0)
        s = p - 0.5
        r = s * s
        out[j] = (((((-3.969683028665376e+01 * r + 2.209460984245205e+02) * r - 2.759285104469687e+02) * r
                    + 1.383577518672690e+02) * r - 3.066479806614716e+01) * r + 2.506628277459239e+00) * s / \
            (((((-5.447609879822406e+01 * r + 1.615858368580409e+02) * r - 1.556989798598866e+02) * r
               + 6.680131188330100e+01) * r - 1.328068155288572e+01) * r + 1.0)
    for j in range(n):
        # |z| > 1.9729... exactly when p lies in a tail region
        if out[j] > 1.97 or out[j] < -1.97:
            out[j] = _norm_ppf(_uniform(key, np.uint64(start + j)))
    return out


@numba.njit(cache=True, error_model="numpy")
def _key(seed, rep):
    return _mix(_mix(seed) ^ (rep * np.uint64(0x9E3779B97F4A7C15) + np.uint64(0x632BE59BD9B4E019)))


def _replication_key(seed: int, rep: int) -> np.uint64:
    return np.uint64(_key(np.uint64(seed), np.uint64(rep)))


# ---------------------------------------------------------------------------
# path kernel
# ---------------------------------------------------------------------------

@numba.njit(cache=True, error_model="numpy")
def _h_linear(x, p0, p1, xs, hs):
    return p0 * x


@numba.njit(cache=True, error_model="numpy")
def _h_power(x, p0, p1, xs, hs):
    return p0 * x ** p1 if x > 0.0 else 0.0


@numba.njit(cache=True, error_model="numpy")
def _h_table(x, p0, p1, xs, hs):
    n = xs.shape[0]
    if x >= xs[n - 1]:
        return hs[n - 1] + (hs[n - 1] - hs[n - 2]) / (xs[n - 1] - xs[n - 2]) * (x - xs[n - 1])
    if x <= xs[0]:
        return hs[0] + (hs[1] - hs[0]) / (xs[1] - xs[0]) * (x - xs[0])
    lo, hi = 0, n - 1
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if xs[mid] <= x:
            lo = mid
        else:
            hi = mid
    t = (x - xs[lo]) / (xs[hi] - xs[lo])
    return hs[lo] + t * (hs[hi] - hs[lo])


_HOLDING_FNS = (_h_linear, _h_power, _h_table)
_KERNELS: dict = {}


def _kernel(h_kind: int, traced: bool = False):
    """Path kernel with the holding-cost family fixed at compile time.

    A runtime family switch inside the loop costs a factor of three or more
    in throughput, so each family gets its own compiled kernel.
    """
    if (h_kind, traced) in _KERNELS:
        return _KERNELS[h_kind, traced]
    holding = _HOLDING_FNS[h_kind]

    @numba.njit(error_model="numpy")
    def run_path(key, n_steps, n_burn, dt, sigma, x0, q, Q, S, K, k, L, ell,
                 breaks, mus, costs, h0, h1, h_xs, h_hs, bridge, trace):
        sq = sigma * math.sqrt(dt)
        inv_var = 1.0 / (sigma * sigma * dt)
        up_cost = K + k * q
        dn_cost = L + ell * (S - Q)
        nb = breaks.shape[0]
        n_trace = trace.shape[0]
        x = x0
        hold = 0.0
        drift = 0.0
        up = 0.0
        dn = 0.0
        n_up = 0
        n_dn = 0
        bad = 0
        cum = 0.0
        aux = np.uint64(0x5851F42D4C957F2D)
        zbuf = np.empty(_BLOCK)
        for i in range(n_steps):
            jb = i % _BLOCK
            if jb == 0:
                _fill_normals(key, i, zbuf)
            seg = 0
            while seg < nb and x >= breaks[seg]:
                seg += 1
            mu = mus[seg]
            count = i >= n_burn
            hx = holding(x, h0, h1, h_xs, h_hs)
            if count:
                hold += hx * dt
                drift += costs[seg] * dt
            if traced:
                cum += (hx + costs[seg]) * dt
            z = zbuf[jb]
            xn = x + mu * dt + sq * z
            hit_lo = xn <= 0.0
            hit_hi = xn >= S
            if bridge and not hit_lo and not hit_hi:
                # Brownian-bridge excursion past either boundary within the step
                e_lo = 2.0 * x * xn * inv_var
                e_hi = 2.0 * (S - x) * (S - xn) * inv_var
                if e_lo < 40.0 or e_hi < 40.0:
                    u = _uniform(key ^ aux, np.uint64(i))
                    p_lo = math.exp(-e_lo) if e_lo < 40.0 else 0.0
                    p_hi = math.exp(-e_hi) if e_hi < 40.0 else 0.0
                    if u < p_lo:
                        hit_lo = True
                    elif u < p_lo + p_hi:
                        hit_hi = True
            if hit_lo:
                xn = q
                if traced:
                    cum += up_cost
                if count:
                    up += up_cost
                    n_up += 1
            elif hit_hi:
                xn = Q
                if traced:
                    cum += dn_cost
                if count:
                    dn += dn_cost
                    n_dn += 1
            if xn < 0.0 or xn > S:
                bad += 1
            if traced and i < n_trace:
                trace[i, 0] = (i + 1) * dt
                trace[i, 1] = xn
                trace[i, 2] = mu
                trace[i, 3] = cum
            x = xn
        return hold, drift, up, dn, n_up, n_dn, bad

    _KERNELS[h_kind, traced] = run_path
    return run_path


# ---------------------------------------------------------------------------
# policy and instance tables
# ---------------------------------------------------------------------------

def _drift_table(spec: ProblemSpec, policy: BandPolicy):
    d = policy.drift
    if isinstance(d, ConstantDrift):
        breaks, mus = np.empty(0), np.array([d.mu])
    elif isinstance(d, StepDrift):
        breaks, mus = np.asarray(d.breaks, float), np.asarray(d.vals, float)
    elif isinstance(d, FunctionDrift):
        # piecewise-constant sampling on a fine grid, value at each cell midpoint
        edges = np.linspace(0.0, policy.S, _TABLE_POINTS)
        mids = 0.5 * (edges[:-1] + edges[1:])
        breaks, mus = edges[1:-1], np.array([d.value(float(x)) for x in mids])
    else:
        raise SimError(f"unsupported drift profile {type(d).__name__}")
    costs = np.array([float(spec.menu.cost(float(m))) for m in mus])
    return breaks, mus, costs


def _holding_table(spec: ProblemSpec, S: float):
    h = spec.h
    empty = np.zeros(2)
    if isinstance(h, LinearHolding):
        return 0, h.rate, 0.0, empty, empty
    if isinstance(h, PowerHolding):
        return 1, h.coef, h.power, empty, empty
    if isinstance(h, TableHolding):
        return 2, 0.0, 0.0, np.asarray(h.xs, float), np.asarray(h.hs, float)
    xs = np.linspace(0.0, S, _TABLE_POINTS)
    return 2, 0.0, 0.0, xs, np.array([float(h(x)) for x in xs])


def _check_discretization(spec: ProblemSpec, policy: BandPolicy, cfg: SimConfig) -> None:
    mu_max = max(abs(spec.menu.lo), abs(spec.menu.hi))
    reach = cfg.dt * mu_max + 4.0 * spec.sigma * math.sqrt(cfg.dt)
    width = min(policy.q, policy.S - policy.Q)
    if reach > width:
        msg = (f"dt={cfg.dt:g} is coarse for the band: one step moves up to {reach:.3g}, "
               f"more than min(q, S - Q) = {width:.3g}")
        if cfg.strict:
            raise SimError(msg)
        warnings.warn(msg, DiscretizationWarning, stacklevel=3)


def simulate(spec: ProblemSpec, policy: BandPolicy, config: SimConfig = SimConfig(),
             *, trace_path=None) -> SimReport:
    """Estimate the long-run average cost of ``policy`` by simulation.

    Each replication starts at ``x0`` (default ``Q``; above ``S`` it is moved
    to ``Q`` at no cost) and averages costs over ``(burn_in, horizon]``.
    """
    policy.check_menu(spec)
    cfg = config
    _check_discretization(spec, policy, cfg)
    n_steps = int(round(cfg.horizon / cfg.dt))
    n_burn = int(round(cfg.burn_in / cfg.dt))
    window = (n_steps - n_burn) * cfg.dt
    x0 = policy.Q if cfg.x0 is None else float(cfg.x0)
    if x0 > policy.S:
        x0 = policy.Q
    breaks, mus, costs = _drift_table(spec, policy)
    h_kind, h0, h1, h_xs, h_hs = _holding_table(spec, policy.S)

    per_rep = []
    trace = None
    for r in range(cfg.replications):
        n_trace = min(cfg.trace_steps, n_steps) if (r == 0 and trace_path is not None) else 0
        buf = np.zeros((n_trace, 4))
        out = _kernel(h_kind, n_trace > 0)(_replication_key(cfg.seed, r), n_steps, n_burn, cfg.dt, spec.sigma, x0,
                  policy.q, policy.Q, policy.S, spec.K, spec.k, spec.L, spec.ell,
                  breaks, mus, costs, h0, h1, h_xs, h_hs, cfg.bridge, buf)
        hold, drift, up, dn, n_up, n_dn, bad = out
        per_rep.append({
            "gamma": (hold + drift + up + dn) / window,
            "holding": hold / window, "drift": drift / window,
            "up": up / window, "down": dn / window,
            "up_rate": n_up / window, "down_rate": n_dn / window, "violations": int(bad),
        })
        if n_trace:
            trace = buf

    if trace is not None:
        with open(trace_path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["t", "X", "mu", "cumulative_cost"])
            wr.writerows([[repr(float(v)) for v in row] for row in trace])

    g = np.array([r["gamma"] for r in per_rep])
    se = float(np.std(g, ddof=1) / math.sqrt(len(g))) if len(g) > 1 else math.nan
    mean = lambda key: float(np.mean([r[key] for r in per_rep]))  # noqa: E731
    return SimReport(
        gamma_hat=float(np.mean(g)),
        std_err=se,
        breakdown={"holding": mean("holding"), "drift": mean("drift"), "up": mean("up"), "down": mean("down")},
        counts={"up_per_time": mean("up_rate"), "down_per_time": mean("down_rate")},
        violations=int(sum(r["violations"] for r in per_rep)),
        replications=per_rep,
        config=asdict(cfg),
    )


def sweep(spec: ProblemSpec, policies, config: SimConfig = SimConfig()) -> list[SimReport]:
    """Simulate each policy with its own seed stream, derived from the base seed and its index."""
    reports = []
    for i, pol in enumerate(policies):
        seed = int(_replication_key(config.seed, 0x10000 + i))
        cfg = SimConfig(**{**asdict(config), "seed": seed})
        reports.append(simulate(spec, pol, cfg))
    return reports


def is_menu_drift(spec: ProblemSpec, mu: float) -> bool:
    if isinstance(spec.menu, FiniteMenu):
        return any(abs(mu - m) <= 1e-12 for m in spec.menu.drifts)
    return spec.menu.lo <= mu <= spec.menu.hi
