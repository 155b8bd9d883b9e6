"""Instance configuration files (JSON).

Example::

    {
      "sigma": 1.0,
      "costs": {"K": 1.0, "k": 0.5, "L": 1.0, "l": 0.5},
      "holding": {"family": "linear", "params": {"rate": 1.0}},
      "drift_menu": {"type": "finite",
                     "pairs": [{"mu": -1, "cost": 1}, {"mu": 0, "cost": 0}, {"mu": 1, "cost": 1}]},
      "tolerances": {"gamma": 1e-9},
      "sim": {"dt": 1e-3, "horizon": 1e5}
    }

Holding families: ``linear`` (``rate``), ``power`` (``coef``, ``power``),
``table`` (``points``: sorted ``[x, h]`` pairs).  Drift menus: ``finite``
with ``pairs`` (``{"mu", "cost"}`` objects or ``[mu, cost]`` arrays), or
``interval`` with ``lo``, ``hi`` and ``cost`` one of ``quadratic``
(``a``, ``b``, ``d``), ``absolute`` (``a``) or ``table`` (``points``).
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, fields
from pathlib import Path

from .freeboundary import Tolerances
from .hamiltonian import AbsoluteCost, FiniteMenu, IntervalMenu, MenuError, QuadraticCost, TableCost
from .ode import LinearHolding, PowerHolding, ProblemSpec, SpecError, TableHolding
from .sim import SimConfig, SimError


class ConfigError(ValueError):
    """Malformed configuration; ``field`` is a dotted path to the culprit."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


@dataclass
class InstanceConfig:
    spec: ProblemSpec
    tolerances: Tolerances
    sim: SimConfig
    raw: dict
    sha256: str


def _num(obj: dict, key: str, path: str, *, positive: bool = False, default=None) -> float:
    if key not in obj:
        if default is not None:
            return default
        raise ConfigError(f"{path}.{key}" if path else key, "missing")
    v = obj[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{path}.{key}" if path else key, f"expected a number, got {v!r}")
    v = float(v)
    if not math.isfinite(v):
        raise ConfigError(f"{path}.{key}" if path else key, "must be finite")
    if positive and not v > 0.0:
        raise ConfigError(f"{path}.{key}" if path else key, f"must be > 0, got {v}")
    return v


def _obj(parent: dict, key: str, path: str) -> dict:
    if key not in parent:
        raise ConfigError(f"{path}.{key}" if path else key, "missing")
    v = parent[key]
    if not isinstance(v, dict):
        raise ConfigError(f"{path}.{key}" if path else key, "expected an object")
    return v


def _points(obj, path: str) -> tuple[tuple[float, ...], tuple[float, ...]]:
    pts = obj.get("points")
    if not isinstance(pts, list) or len(pts) < 2:
        raise ConfigError(f"{path}.points", "expected at least two [x, value] pairs")
    xs, ys = [], []
    for i, p in enumerate(pts):
        if not (isinstance(p, (list, tuple)) and len(p) == 2
                and all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in p)):
            raise ConfigError(f"{path}.points[{i}]", "expected a [x, value] number pair")
        xs.append(float(p[0]))
        ys.append(float(p[1]))
    if any(b <= a for a, b in zip(xs, xs[1:])):
        raise ConfigError(f"{path}.points", "abscissae must be strictly increasing")
    return tuple(xs), tuple(ys)


def _holding(cfg: dict):
    h = _obj(cfg, "holding", "")
    fam = h.get("family")
    params = h.get("params", {k: v for k, v in h.items() if k != "family"})
    if not isinstance(params, dict):
        raise ConfigError("holding.params", "expected an object")
    try:
        if fam == "linear":
            return LinearHolding(_num(params, "rate", "holding.params", positive=True))
        if fam == "power":
            return PowerHolding(_num(params, "coef", "holding.params", positive=True),
                                _num(params, "power", "holding.params", positive=True))
        if fam == "table":
            xs, hs = _points(params, "holding.params")
            return TableHolding(xs, hs)
    except SpecError as exc:
        raise ConfigError("holding", str(exc)) from exc
    raise ConfigError("holding.family", f"expected linear, power or table, got {fam!r}")


def _menu(cfg: dict):
    m = _obj(cfg, "drift_menu", "")
    kind = m.get("type", "finite" if "pairs" in m else "interval")
    try:
        if kind == "finite":
            pairs = m.get("pairs")
            if not isinstance(pairs, list) or not pairs:
                raise ConfigError("drift_menu.pairs", "expected a non-empty list")
            out = []
            for i, p in enumerate(pairs):
                path = f"drift_menu.pairs[{i}]"
                if isinstance(p, dict):
                    out.append((_num(p, "mu", path), _num(p, "cost", path)))
                elif isinstance(p, (list, tuple)) and len(p) == 2:
                    out.append((_num({"mu": p[0]}, "mu", path), _num({"cost": p[1]}, "cost", path)))
                else:
                    raise ConfigError(path, "expected {mu, cost} or [mu, cost]")
            mus = [a for a, _ in out]
            if any(b <= a for a, b in zip(mus, mus[1:])):
                raise ConfigError("drift_menu.pairs", "drifts must be strictly increasing without duplicates")
            return FiniteMenu.from_pairs(out)
        if kind == "interval":
            lo = _num(m, "lo", "drift_menu")
            hi = _num(m, "hi", "drift_menu")
            c = _obj(m, "cost", "drift_menu")
            fam = c.get("family")
            if fam == "quadratic":
                fn = QuadraticCost(_num(c, "a", "drift_menu.cost"), _num(c, "b", "drift_menu.cost", default=0.0),
                                   _num(c, "d", "drift_menu.cost", default=0.0))
            elif fam == "absolute":
                fn = AbsoluteCost(_num(c, "a", "drift_menu.cost"))
            elif fam == "table":
                fn = TableCost(*_points(c, "drift_menu.cost"))
            else:
                raise ConfigError("drift_menu.cost.family", f"expected quadratic, absolute or table, got {fam!r}")
            grid = m.get("grid_size", 1025)
            if not isinstance(grid, int) or isinstance(grid, bool):
                raise ConfigError("drift_menu.grid_size", "expected an integer")
            return IntervalMenu(lo, hi, fn, grid)
    except MenuError as exc:
        raise ConfigError("drift_menu", str(exc)) from exc
    raise ConfigError("drift_menu.type", f"expected finite or interval, got {kind!r}")


def _dataclass_block(cls, block, path: str, base=None):
    if block is None:
        return base if base is not None else cls()
    if not isinstance(block, dict):
        raise ConfigError(path, "expected an object")
    names = {f.name for f in fields(cls)}
    unknown = sorted(set(block) - names)
    if unknown:
        raise ConfigError(f"{path}.{unknown[0]}", f"unknown key (allowed: {', '.join(sorted(names))})")
    try:
        return cls(**block)
    except (TypeError, ValueError) as exc:
        raise ConfigError(path, str(exc)) from exc


def parse_config(doc: dict, sha256: str = "") -> InstanceConfig:
    if not isinstance(doc, dict):
        raise ConfigError("", "top level must be an object")
    sigma = _num(doc, "sigma", "", positive=True)
    costs = _obj(doc, "costs", "")
    K = _num(costs, "K", "costs", positive=True)
    k = _num(costs, "k", "costs", positive=True)
    L = _num(costs, "L", "costs", positive=True)
    ell = _num(costs, "l", "costs", positive=True)
    h = _holding(doc)
    menu = _menu(doc)
    try:
        spec = ProblemSpec(sigma, K, k, L, ell, h, menu)
    except SpecError as exc:
        raise ConfigError("", str(exc)) from exc
    tol = _dataclass_block(Tolerances, doc.get("tolerances"), "tolerances")
    try:
        sim = _dataclass_block(SimConfig, doc.get("sim"), "sim")
    except SimError as exc:
        raise ConfigError("sim", str(exc)) from exc
    return InstanceConfig(spec, tol, sim, doc, sha256)


def load_config(path) -> InstanceConfig:
    p = Path(path)
    try:
        data = p.read_bytes()
    except OSError as exc:
        raise ConfigError("", f"cannot read {p}: {exc.strerror}") from exc
    try:
        doc = json.loads(data)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ConfigError("", f"not valid JSON: {exc}") from exc
    return parse_config(doc, hashlib.sha256(data).hexdigest())
