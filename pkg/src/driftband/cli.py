"""Command-line front end.

    driftband solve    CONFIG [--tol T] [--out-dir D]
    driftband eval     CONFIG (--policy SPEC | --from-solution FILE)
    driftband simulate CONFIG (--policy SPEC | --from-solution FILE) [--seed N] ...
    driftband verify   CONFIG [--from-solution FILE] [--tol T]
    driftband sweep    CONFIG [--from-solution FILE] [--deltas a,b,c] ...

Exit status: 0 success, 2 malformed input, 3 solver failure,
4 certification failure.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import math
import sys
import warnings
from dataclasses import asdict, replace
from pathlib import Path

from . import __version__
from .config import ConfigError, InstanceConfig, load_config
from .freeboundary import FreeBoundarySolution, SolveError, solution_from_summary, solve
from .sim import DiscretizationWarning, SimConfig, SimError, simulate, sweep
from .verify import (BandPolicy, ConstantDrift, DegeneratePolicyError, PolicyError, check_lower_bound,
                     drift_from_solution, evaluate_band_policy)

EXIT_OK, EXIT_CONFIG, EXIT_SOLVE, EXIT_CERT = 0, 2, 3, 4


class UsageError(ValueError):
    pass


def _stamp(cfg: InstanceConfig, doc: dict, command: str) -> dict:
    return {"tool": "driftband", "tool_version": __version__, "command": command,
            "config_hash": cfg.sha256, **doc}


def _write_json(path: Path, doc: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2, allow_nan=True) + "\n")


def _file_sha(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def parse_policy(text: str) -> dict:
    """``q=..,Q=..,S=..,mu=const:<v>|from-solution`` to a dict."""
    out = {}
    for part in text.split(","):
        if "=" not in part:
            raise UsageError(f"--policy: expected key=value, got {part!r}")
        key, val = (s.strip() for s in part.split("=", 1))
        if key in ("q", "Q", "S"):
            try:
                out[key] = float(val)
            except ValueError as exc:
                raise UsageError(f"--policy: {key} must be a number, got {val!r}") from exc
        elif key == "mu":
            if val == "from-solution":
                out["mu"] = None
            elif val.startswith("const:"):
                try:
                    out["mu"] = float(val[len("const:"):])
                except ValueError as exc:
                    raise UsageError(f"--policy: bad constant drift {val!r}") from exc
            else:
                raise UsageError("--policy: mu must be const:<v> or from-solution")
        else:
            raise UsageError(f"--policy: unknown key {key!r}")
    return out


def _tolerances(cfg: InstanceConfig, args):
    tol = cfg.tolerances
    if args.tol is not None and args.command in ("solve", "sweep", "eval", "simulate"):
        tol = replace(tol, gamma=args.tol, w0=args.tol, ode=min(tol.ode, args.tol))
    return tol


def _solution(cfg: InstanceConfig, args) -> FreeBoundarySolution:
    tol = _tolerances(cfg, args)
    if args.from_solution:
        try:
            doc = json.loads(Path(args.from_solution).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"--from-solution: cannot read {args.from_solution}: {exc}") from exc
        try:
            return solution_from_summary(cfg.spec, doc, tol)
        except ValueError as exc:
            raise UsageError(f"--from-solution: {exc}") from exc
    return solve(cfg.spec, tol)


def _policy(cfg: InstanceConfig, args) -> tuple[BandPolicy, FreeBoundarySolution | None]:
    if args.policy is None and not args.from_solution:
        raise UsageError(f"{args.command} needs --policy or --from-solution")
    sol = None
    if args.policy is None:
        sol = _solution(cfg, args)
        return BandPolicy(sol.q_star, sol.Q_star, sol.S_star, drift_from_solution(sol)), sol
    p = parse_policy(args.policy)
    missing = [k for k in ("q", "Q", "S", "mu") if k not in p]
    if missing:
        raise UsageError(f"--policy: missing {', '.join(missing)}")
    if p["mu"] is None:
        sol = _solution(cfg, args)
        drift = drift_from_solution(sol, max(p["S"], sol.S_star))
    else:
        drift = ConstantDrift(p["mu"])
    try:
        return BandPolicy(p["q"], p["Q"], p["S"], drift), sol
    except PolicyError as exc:
        raise UsageError(f"--policy: {exc}") from exc


def _sim_config(cfg: InstanceConfig, args) -> SimConfig:
    over = {k: v for k, v in (("seed", args.seed), ("replications", args.replications),
                              ("dt", args.dt), ("horizon", args.horizon)) if v is not None}
    if args.strict:
        over["strict"] = True
    if getattr(args, "trace", None):
        over["trace_steps"] = args.trace
    base = asdict(cfg.sim)
    if "horizon" in over and over["horizon"] <= base["burn_in"]:
        over["burn_in"] = 0.0
    try:
        return SimConfig(**{**base, **over})
    except SimError as exc:
        raise UsageError(str(exc)) from exc


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_solve(cfg, args, out: Path) -> int:
    sol = solve(cfg.spec, _tolerances(cfg, args))
    curve_path = out / "curve.csv"
    out.mkdir(parents=True, exist_ok=True)
    sol.write_curve(curve_path)
    doc = sol.summary()
    doc["curve_file"] = {"path": curve_path.name, "sha256": _file_sha(curve_path)}
    _write_json(out / "solution.json", _stamp(cfg, doc, "solve"))
    res = max(abs(v) for v in sol.residuals.values())
    print(f"gamma*={sol.gamma_star:.12g} q*={sol.q_star:.9g} Q*={sol.Q_star:.9g} "
          f"S*={sol.S_star:.9g} x*={sol.x_star:.9g} max|residual|={res:.2e}")
    return EXIT_OK


def cmd_eval(cfg, args, out: Path) -> int:
    pol, _ = _policy(cfg, args)
    try:
        res = evaluate_band_policy(cfg.spec, pol)
    except (DegeneratePolicyError, PolicyError) as exc:
        raise UsageError(str(exc)) from exc
    _write_json(out / "eval.json", _stamp(cfg, res.to_dict(), "eval"))
    print(f"gamma={res.gamma:.12g} w0={res.w0:.12g}")
    return EXIT_OK


def cmd_simulate(cfg, args, out: Path) -> int:
    pol, _ = _policy(cfg, args)
    sc = _sim_config(cfg, args)
    trace = out / "trace.csv" if sc.trace_steps else None
    if trace is not None:
        out.mkdir(parents=True, exist_ok=True)
    try:
        rep = simulate(cfg.spec, pol, sc, trace_path=trace)
    except (SimError, PolicyError) as exc:
        raise UsageError(str(exc)) from exc
    doc = {"policy": pol.describe(), **rep.to_dict()}
    _write_json(out / "sim.json", _stamp(cfg, doc, "simulate"))
    print(f"gamma_hat={rep.gamma_hat:.9g} std_err={rep.std_err:.3g} violations={rep.violations}")
    return EXIT_OK


def cmd_verify(cfg, args, out: Path) -> int:
    sol = _solution(cfg, args)
    tol = args.tol if args.tol is not None else cfg.tolerances.residual
    rep = check_lower_bound(cfg.spec, sol, args.x_max, args.n_grid, tol)
    _write_json(out / "verify.json", _stamp(cfg, rep.to_dict(), "verify"))
    print(rep.summary_line())
    return EXIT_OK if rep.passed else EXIT_CERT


def cmd_sweep(cfg, args, out: Path) -> int:
    sol = _solution(cfg, args)
    try:
        deltas = [float(v) for v in args.deltas.split(",")]
    except ValueError as exc:
        raise UsageError(f"--deltas: {exc}") from exc
    sc = _sim_config(cfg, args)
    drift = drift_from_solution(sol, sol.S_star + max(0.0, max(deltas)))
    family, keys = [], []
    for dq in deltas:
        for dQ in deltas:
            for dS in deltas:
                try:
                    family.append(BandPolicy(sol.q_star + dq, sol.Q_star + dQ, sol.S_star + dS, drift))
                    keys.append((dq, dQ, dS))
                except PolicyError:
                    continue
    try:
        reports = sweep(cfg.spec, family, sc)
    except (SimError, PolicyError) as exc:
        raise UsageError(str(exc)) from exc
    rows = [{"dq": k[0], "dQ": k[1], "dS": k[2], "q": p.q, "Q": p.Q, "S": p.S,
             "gamma_hat": r.gamma_hat, "std_err": r.std_err}
            for k, p, r in zip(keys, family, reports)]
    doc = {"gamma_star": sol.gamma_star, "sim": asdict(sc), "rows": rows}
    _write_json(out / "sweep.json", _stamp(cfg, doc, "sweep"))
    best = min(rows, key=lambda r: r["gamma_hat"])
    print(f"{len(rows)} policies; lowest gamma_hat={best['gamma_hat']:.9g} at "
          f"(dq, dQ, dS)=({best['dq']}, {best['dQ']}, {best['dS']})")
    return EXIT_OK


COMMANDS = {"solve": cmd_solve, "eval": cmd_eval, "simulate": cmd_simulate,
            "verify": cmd_verify, "sweep": cmd_sweep}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="driftband", description=__doc__.split("\n\n")[0])
    ap.add_argument("--version", action="version", version=f"driftband {__version__}")
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("config", help="instance configuration (JSON)")
    ap.add_argument("--tol", type=float, help="root tolerance (solve/eval/simulate/sweep) or "
                                              "certification tolerance (verify)")
    ap.add_argument("--seed", type=int)
    ap.add_argument("--replications", type=int)
    ap.add_argument("--dt", type=float)
    ap.add_argument("--horizon", type=float)
    ap.add_argument("--policy", help="q=..,Q=..,S=..,mu=const:<v>|from-solution")
    ap.add_argument("--from-solution", dest="from_solution", help="solution summary written by solve")
    ap.add_argument("--out-dir", dest="out_dir", default=".")
    ap.add_argument("--strict", action="store_true", help="coarse time steps are an error")
    ap.add_argument("--trace", type=int, default=0, help="simulate: write the first N steps of path 0")
    ap.add_argument("--x-max", dest="x_max", type=float, help="verify: right end of the grid (default 3 S*)")
    ap.add_argument("--n-grid", dest="n_grid", type=int, default=1000)
    ap.add_argument("--deltas", default="-0.05,0,0.05", help="sweep: offsets applied to q, Q and S")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    out = Path(args.out_dir)
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(f"error: config {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("always", DiscretizationWarning)
            return COMMANDS[args.command](cfg, args, out)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SolveError as exc:
        print(f"error: solver failed: {exc}", file=sys.stderr)
        print("d(w0) trace:", file=sys.stderr)
        for w0, d in exc.trace:
            print(f"  w0={w0:.12g}  d={d:.6g}", file=sys.stderr)
        _write_json(out / "solve_failure.json", _stamp(cfg, {
            "error": str(exc), "d_trace": [[w, d if math.isfinite(d) else None] for w, d in exc.trace]}, args.command))
        return EXIT_SOLVE


if __name__ == "__main__":
    sys.exit(main())
