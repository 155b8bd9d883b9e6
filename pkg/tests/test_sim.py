
import numpy as np
import pytest
from scipy.stats import norm

from driftband.sim import (DiscretizationWarning, SimConfig, SimError, _fill_normals, _norm_ppf, _replication_key,
                           _uniform, simulate, sweep)
from driftband.verify import BandPolicy, ConstantDrift, evaluate_band_policy, optimal_policy

SHORT = SimConfig(dt=1e-3, horizon=2e3, burn_in=1e2, replications=4, seed=7)


def test_normals_blocked_equals_scalar():
    key = _replication_key(3, 1)
    out = _fill_normals(key, 5000, np.empty(20000))
    ref = np.array([_norm_ppf(_uniform(key, np.uint64(5000 + j))) for j in range(20000)])
    assert np.array_equal(out, ref)


def test_inverse_cdf_accuracy():
    ps = np.concatenate([np.logspace(-15, -1, 200), np.linspace(0.01, 0.99, 999), 1 - np.logspace(-12, -1, 200)])
    z = np.array([_norm_ppf(p) for p in ps])
    assert np.max(np.abs(z - norm.ppf(ps)) / np.maximum(1.0, np.abs(norm.ppf(ps)))) < 1e-7


def test_uniforms_look_uniform():
    key = _replication_key(0, 0)
    z = _fill_normals(key, 0, np.empty(200000))
    assert abs(np.mean(z)) < 0.01 and abs(np.std(z) - 1.0) < 0.01
    assert 0.0 < _uniform(key, np.uint64(0)) < 1.0


def test_deterministic_and_seed_sensitive(spec, solution):
    pol = optimal_policy(solution)
    a = simulate(spec, pol, SHORT)
    b = simulate(spec, pol, SHORT)
    c = simulate(spec, pol, SimConfig(**{**SHORT.__dict__, "seed": 8}))
    assert a.gamma_hat == b.gamma_hat and a.replications == b.replications
    assert a.gamma_hat != c.gamma_hat


def test_breakdown_adds_up(spec, solution):
    rep = simulate(spec, optimal_policy(solution), SHORT)
    assert sum(rep.breakdown.values()) == pytest.approx(rep.gamma_hat, rel=1e-12)
    assert rep.violations == 0
    assert rep.counts["up_per_time"] > 0.0 and rep.counts["down_per_time"] > 0.0


def test_agrees_with_exact_evaluator(spec):
    pol = BandPolicy(0.5, 1.0, 2.5, ConstantDrift(0.0))
    exact = evaluate_band_policy(spec, pol).gamma
    rep = simulate(spec, pol, SimConfig(horizon=1e4, burn_in=1e2, replications=8, seed=11))
    assert abs(rep.gamma_hat - exact) < 4.0 * rep.std_err + 2e-3


def test_sweep_uses_distinct_streams(spec, solution):
    pol = optimal_policy(solution)
    reps = sweep(spec, [pol, pol], SimConfig(horizon=200.0, burn_in=10.0, replications=2))
    assert reps[0].gamma_hat != reps[1].gamma_hat


def test_coarse_step_warning_and_strict(spec):
    pol = BandPolicy(0.05, 1.0, 1.05, ConstantDrift(0.0))
    with pytest.warns(DiscretizationWarning):
        simulate(spec, pol, SimConfig(dt=1e-2, horizon=10.0, burn_in=0.0, replications=2))
    with pytest.raises(SimError):
        simulate(spec, pol, SimConfig(dt=1e-2, horizon=10.0, burn_in=0.0, replications=2, strict=True))


def test_trace_file(spec, solution, tmp_path):
    path = tmp_path / "trace.csv"
    cfg = SimConfig(horizon=50.0, burn_in=0.0, replications=2, trace_steps=100)
    simulate(spec, optimal_policy(solution), cfg, trace_path=path)
    rows = path.read_text().splitlines()
    assert rows[0] == "t,X,mu,cumulative_cost" and len(rows) == 101
    xs = np.array([float(r.split(",")[1]) for r in rows[1:]])
    cum = np.array([float(r.split(",")[3]) for r in rows[1:]])
    assert np.all(xs >= 0.0) and np.all(np.diff(cum) >= 0.0)


def test_config_validation():
    with pytest.raises(SimError):
        SimConfig(dt=0.0)
    with pytest.raises(SimError):
        SimConfig(horizon=1.0, burn_in=2.0)
    with pytest.raises(SimError):
        SimConfig(replications=0)
