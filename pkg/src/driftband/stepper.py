"""Adaptive Dormand-Prince 5(4) integration of scalar ODEs with dense output.

The integrator is written for scalar right-hand sides evaluated from plain
Python; thousands of shots are taken per free-boundary solve, so the loop
avoids numpy on the hot path and only assembles arrays once at the end.

Two features matter for the piecewise-smooth problems in this package:

* ``y_kinks``: levels of ``y`` at which the right-hand side has a kink
  (the drift argmin switches).  A trial step that crosses such a level is
  shortened to end on it, so no step straddles a kink.
* ``x_breaks``: abscissae where the right-hand side jumps.  Steps end
  exactly on them and the right-hand side is told which segment it is in.
"""
from __future__ import annotations

import bisect
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

# Dormand-Prince tableau
C2, C3, C4, C5 = 1 / 5, 3 / 10, 4 / 5, 8 / 9
A21 = 1 / 5
A31, A32 = 3 / 40, 9 / 40
A41, A42, A43 = 44 / 45, -56 / 15, 32 / 9
A51, A52, A53, A54 = 19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729
A61, A62, A63, A64, A65 = 9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656
B1, B3, B4, B5, B6 = 35 / 384, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84
E1, E3, E4, E5, E6, E7 = -71 / 57600, 71 / 16695, -71 / 1920, 17253 / 339200, -22 / 525, 1 / 40

# continuous extension: y(x0 + t h) = y0 + h * sum_j K_j * (P[j] @ [t, t^2, t^3, t^4])
DENSE_P = np.array([
    [1, -8048581381 / 2820520608, 8663915743 / 2820520608, -12715105075 / 11282082432],
    [0, 0, 0, 0],
    [0, 131558114200 / 32700410799, -68118460800 / 10900136933, 87487479700 / 32700410799],
    [0, -1754552775 / 470086768, 14199869525 / 1410260304, -10690763975 / 1880347072],
    [0, 127303824393 / 49829197408, -318862633887 / 49829197408, 701980252875 / 199316789632],
    [0, -282668133 / 205662961, 2019193451 / 616988883, -1453857185 / 822651844],
    [0, 40617522 / 29380423, -110615467 / 29380423, 69997945 / 29380423],
])
_P = DENSE_P.tolist()

# Gauss-Legendre nodes on [0, 1]; 4 points integrate the quartic interpolant exactly
_GL_T, _GL_W = np.polynomial.legendre.leggauss(4)
GL_NODES = 0.5 * (_GL_T + 1.0)
GL_WEIGHTS = 0.5 * _GL_W


class StepSizeError(RuntimeError):
    """Step size fell below the floor (stiff or non-integrable right-hand side)."""


class CapExceededError(RuntimeError):
    """The integration reached its hard cap before any stopping rule fired."""


def _dense_value(y0, h, k, t):
    acc = 0.0
    for j in (0, 2, 3, 4, 5, 6):
        p = _P[j]
        acc += k[j] * (t * (p[0] + t * (p[1] + t * (p[2] + t * p[3]))))
    return y0 + h * acc


@dataclass
class DenseCurve:
    """Piecewise quartic interpolant produced by :func:`integrate_scalar`.

    ``coef[i]`` holds the power-basis coefficients of step ``i`` in the local
    variable ``t = (x - x[i]) / (x[i+1] - x[i])``; ``yp`` stores the
    right-hand side at each node.
    """

    x: np.ndarray
    y: np.ndarray
    yp: np.ndarray
    coef: np.ndarray
    termination: str = "end"

    @property
    def x_end(self) -> float:
        return float(self.x[-1])

    def _locate(self, xq):
        xq = np.asarray(xq, dtype=float)
        i = np.clip(np.searchsorted(self.x, xq, side="right") - 1, 0, len(self.coef) - 1)
        h = self.x[i + 1] - self.x[i]
        t = (xq - self.x[i]) / h
        return i, t, h

    def __call__(self, xq):
        i, t, _ = self._locate(xq)
        c = self.coef[i]
        out = c[..., 0] + t * (c[..., 1] + t * (c[..., 2] + t * (c[..., 3] + t * c[..., 4])))
        return float(out) if np.ndim(out) == 0 else out

    def derivative(self, xq):
        """Derivative of the interpolant (not of the ODE right-hand side)."""
        i, t, h = self._locate(xq)
        c = self.coef[i]
        out = (c[..., 1] + t * (2 * c[..., 2] + t * (3 * c[..., 3] + t * 4 * c[..., 4]))) / h
        return float(out) if np.ndim(out) == 0 else out

    def segment_value(self, i: int, t: float) -> float:
        c = self.coef[i]
        return float(c[0] + t * (c[1] + t * (c[2] + t * (c[3] + t * c[4]))))

    def integral(self, a: float, b: float, shift: float = 0.0) -> float:
        """Integral of ``y - shift`` over [a, b] by per-step Gauss-Legendre."""
        if b < a:
            return -self.integral(b, a, shift)
        if a < self.x[0] - 1e-12 or b > self.x[-1] + 1e-12 * (1 + abs(self.x[-1])):
            raise ValueError(f"integration range [{a}, {b}] outside curve [{self.x[0]}, {self.x[-1]}]")
        if b == a:
            return 0.0
        i0 = int(np.clip(np.searchsorted(self.x, a, side="right") - 1, 0, len(self.coef) - 1))
        i1 = int(np.clip(np.searchsorted(self.x, b, side="left") - 1, 0, len(self.coef) - 1))
        lo = np.maximum(self.x[i0:i1 + 1], a)
        hi = np.minimum(self.x[i0 + 1:i1 + 2], b)
        width = hi - lo
        xs = lo[:, None] + width[:, None] * GL_NODES[None, :]
        vals = self(xs) - shift
        return float(np.sum(width * (vals @ GL_WEIGHTS)))

    def antiderivative(self, xq) -> np.ndarray:
        """F(x) = integral of y from x[0] to x, vectorised."""
        xq = np.atleast_1d(np.asarray(xq, dtype=float))
        h = np.diff(self.x)
        # exact integral of each quartic step
        c = self.coef
        step_int = h * (c[:, 0] + c[:, 1] / 2 + c[:, 2] / 3 + c[:, 3] / 4 + c[:, 4] / 5)
        cum = np.concatenate([[0.0], np.cumsum(step_int)])
        i, t, hh = self._locate(xq)
        ci = c[i]
        part = hh * t * (ci[:, 0] + t * (ci[:, 1] / 2 + t * (ci[:, 2] / 3 + t * (ci[:, 3] / 4 + t * ci[:, 4] / 5))))
        return cum[i] + part

    def restrict(self, x_max: float) -> "DenseCurve":
        """Copy truncated to [x[0], x_max] (x_max rounded up to a node)."""
        n = int(np.searchsorted(self.x, x_max, side="left"))
        n = max(1, min(n, len(self.coef)))
        return DenseCurve(self.x[:n + 1].copy(), self.y[:n + 1].copy(), self.yp[:n + 1].copy(),
                          self.coef[:n].copy(), self.termination)


def integrate_scalar(
    rhs: Callable[..., float],
    x0: float,
    y0: float,
    x_end: float,
    *,
    rtol: float = 1e-10,
    atol: float = 1e-10,
    h_max: float = math.inf,
    h_init: float | None = None,
    y_kinks: Sequence[float] = (),
    x_breaks: Sequence[float] = (),
    stop: Callable[[float, float, float], bool] | None = None,
    y_bound: float = math.inf,
    h_min_rel: float = 1e-14,
) -> DenseCurve:
    """Integrate ``y' = rhs(x, y)`` from ``x0`` until ``x_end``, a stop, or divergence.

    With ``x_breaks`` the right-hand side is called as ``rhs(x, y, seg)`` where
    ``seg`` indexes the interval between consecutive breaks.  ``stop`` is called
    on every accepted node and ends the integration when it returns True.
    ``termination`` on the result is one of ``"end"``, ``"stop"``, ``"diverged"``.
    """
    breaks = sorted(b for b in x_breaks if x0 < b < x_end)
    kinks = sorted(set(y_kinks))
    seg = 0
    if breaks:
        f = lambda x, y: rhs(x, y, seg)  # noqa: E731
    else:
        f = rhs
    next_break = breaks[0] if breaks else x_end

    x, y = float(x0), float(y0)
    k1 = f(x, y)
    xs, ys, yps, ks = [x], [y], [k1], []
    span = x_end - x0
    h = min(h_init if h_init is not None else 1e-2, h_max, span)
    h_floor = h_min_rel * max(1.0, abs(x_end))
    termination = "end"

    while True:
        if x >= x_end:
            break
        last = False
        if x + h >= next_break:
            h = next_break - x
            last = True
        # a short step forced by a break or the end point is fine
        if h < h_floor and not last:
            raise StepSizeError(f"step size {h:.3e} below floor at x={x:.6g}, y={y:.6g}")

        k2 = f(x + C2 * h, y + h * (A21 * k1))
        k3 = f(x + C3 * h, y + h * (A31 * k1 + A32 * k2))
        k4 = f(x + C4 * h, y + h * (A41 * k1 + A42 * k2 + A43 * k3))
        k5 = f(x + C5 * h, y + h * (A51 * k1 + A52 * k2 + A53 * k3 + A54 * k4))
        xn = next_break if last else x + h
        k6 = f(xn, y + h * (A61 * k1 + A62 * k2 + A63 * k3 + A64 * k4 + A65 * k5))
        yn = y + h * (B1 * k1 + B3 * k3 + B4 * k4 + B5 * k5 + B6 * k6)
        k7 = f(xn, yn)

        if kinks:
            # shorten the step so that it ends on the first kink it crosses
            lo_y, hi_y = (y, yn) if y < yn else (yn, y)
            j = bisect.bisect_right(kinks, lo_y)
            if j < len(kinks) and kinks[j] < hi_y:
                level = kinks[j] if yn > y else kinks[bisect.bisect_left(kinks, hi_y) - 1]
                kk = (k1, k2, k3, k4, k5, k6, k7)
                t_k = _kink_fraction(y, h, kk, level)
                if t_k * h > 1e-9 * (1.0 + abs(x)) and t_k < 1.0 - 1e-9:
                    h = t_k * h * (1.0 + 1e-12)
                    continue

        err = h * (E1 * k1 + E3 * k3 + E4 * k4 + E5 * k5 + E6 * k6 + E7 * k7)
        sc = atol + rtol * max(abs(y), abs(yn))
        ratio = abs(err) / sc
        if ratio <= 1.0:
            ks.append((k1, k2, k3, k4, k5, k6, k7))
            x, y, k1 = xn, yn, k7
            xs.append(x)
            ys.append(y)
            yps.append(k1)
            if last and breaks and x < x_end and x == next_break:
                seg += 1
                next_break = breaks[seg] if seg < len(breaks) else x_end
                k1 = f(x, y)
                yps[-1] = k1
            if stop is not None and stop(x, y, k1):
                termination = "stop"
                break
            if abs(y) > y_bound:
                termination = "diverged"
                break
            fac = 10.0 if ratio == 0.0 else min(10.0, max(0.2, 0.9 * ratio ** -0.2))
            h = min(h * fac, h_max)
        else:
            if not math.isfinite(ratio):
                h *= 0.1
            else:
                h *= max(0.1, 0.9 * ratio ** -0.2)

    x_arr = np.asarray(xs)
    kmat = np.asarray(ks, dtype=float).reshape(-1, 7)
    hs = np.diff(x_arr)
    coef = np.empty((len(ks), 5))
    coef[:, 0] = ys[:-1]
    coef[:, 1:] = hs[:, None] * (kmat @ DENSE_P)
    return DenseCurve(x_arr, np.asarray(ys), np.asarray(yps), coef, termination)


def _kink_fraction(y0, h, k, level) -> float:
    """Fraction t in (0, 1) at which the trial-step interpolant reaches ``level``."""
    a, b = 0.0, 1.0
    fa = y0 - level
    yb = _dense_value(y0, h, k, 1.0)
    fb = yb - level
    if fa == 0.0:
        return 0.0
    if fa * fb > 0.0:
        # interpolant and step end disagree; fall back to linear guess
        y1 = y0 + h * (B1 * k[0] + B3 * k[2] + B4 * k[3] + B5 * k[4] + B6 * k[5])
        return min(max((level - y0) / (y1 - y0), 0.0), 1.0)
    for _ in range(60):
        # regula falsi with bisection safeguard
        t = b - fb * (b - a) / (fb - fa)
        if not (a < t < b):
            t = 0.5 * (a + b)
        ft = _dense_value(y0, h, k, t) - level
        if ft == 0.0:
            return t
        if (ft > 0.0) == (fa > 0.0):
            a, fa = t, ft
        else:
            b, fb = t, ft
        if b - a < 1e-14:
            break
        # keep the bracket shrinking from both sides
        m = 0.5 * (a + b)
        fm = _dense_value(y0, h, k, m) - level
        if (fm > 0.0) == (fa > 0.0):
            a, fa = m, fm
        else:
            b, fb = m, fm
    return 0.5 * (a + b)
