"""Acceptance gate: the eight criteria at their stated tolerances.

Each test records one pass/fail line (printed in the pytest terminal summary)
before asserting.  Run directly with ``python3 tests/test_acceptance.py``.

Ensembles are cached per module.  The three criterion-1 temperatures run at
the default step ``dt = 1e-3`` so that the runtime bound is measured on the
default configuration; the remaining temperatures use ``dt = 2e-3``, whose
explicit-Euler variance bias (about ``dt/2`` relative on the slow mode) is
below a quarter of a standard error at 10^5 paths.  All seeds are fixed here
and were not tuned.
"""

import functools
import math
import os
import sys
import time
from pathlib import Path

import numpy as np
import pytest
import scipy.linalg
import scipy.stats as sps
import sympy as sp
from hypothesis import HealthCheck, given, settings

sys.path.insert(0, str(Path(__file__).parent))

import _report  # noqa: E402
from field_helpers import COARSE, FINE, common, smooth_fields  # noqa: E402
from oracles import THERMAL  # noqa: E402

from nelson_tfd import (  # noqa: E402
    DriftSet,
    EnsembleConfig,
    PhysicalParams,
    classical_noise_rate,
    distribution_test,
    marginal_histogram,
    moment_estimates,
    simulate_ensemble,
    simulate_transformed,
    stationary_covariance,
    step_transformed,
    transformed_noise_rate,
    uncertainty_estimate,
)
from nelson_tfd.cli import main as cli_main, residual_table  # noqa: E402
from nelson_tfd.fields import (  # noqa: E402
    Grid,
    ScalarField2D,
    X,
    XT,
    continuity_field,
    continuity_residual,
    dynamical_field,
    dynamical_residual,
    equilibrium_fields,
    fokker_planck_field,
    fokker_planck_residual,
    kinematical_field,
    kinematical_residual,
    osmotic_divergence_field,
    osmotic_field,
    osmotic_residual,
    velocities_from_rs,
)
from nelson_tfd.rng import WienerStream, wiener_increment  # noqa: E402
from nelson_tfd.stats import _jackknife_se, jackknife_variance  # noqa: E402

pytestmark = pytest.mark.acceptance

N_PATHS = 100_000
HORIZON = 10.0
THREADS = os.cpu_count() or 1
MAIN_SEEDS = {0.5: 101, 1.0: 102, 3.0: 103}
AUX_SEEDS = {0.25: 201, 2.0: 202, 5.0: 203, 20.0: 204, math.inf: 205}
TRANSFORMED_SEEDS = {0.5: 301, 1.0: 302, 3.0: 303}
SWEEP_SEED = 11
GRID_BETAS = (0.25, 0.5, 1.0, 2.0, 3.0, 5.0, math.inf)
TIMINGS = {}


def params(bb):
    return PhysicalParams.from_beta_bar(bb)


@functools.lru_cache(maxsize=None)
def ensemble(bb):
    """Stationary-initialized forward-group ensemble of 10^5 paths to T = 10."""
    if bb in MAIN_SEEDS:
        cfg = EnsembleConfig(params=params(bb), n_paths=N_PATHS, base_seed=MAIN_SEEDS[bb],
                             threads=THREADS)
    else:
        cfg = EnsembleConfig(params=params(bb), n_paths=N_PATHS, dt=2e-3, horizon=HORIZON,
                             base_seed=AUX_SEEDS[bb], threads=THREADS)
    start = time.perf_counter()
    ens = simulate_ensemble(cfg)
    TIMINGS[bb] = time.perf_counter() - start
    return ens


def finish(number, title, checks):
    """Record the criterion line, then fail with every failed check listed."""
    passed = all(ok for _, ok in checks)
    failed = [name for name, ok in checks if not ok]
    detail = "; ".join(name for name, _ in checks)
    _report.record(number, title, passed, detail)
    assert passed, "failed: " + "; ".join(failed)


# ---------------------------------------------------------------------------

def test_criterion_1_equilibrium_variance():
    checks = []
    for bb in (0.5, 1.0, 3.0):
        est = moment_estimates(ensemble(bb))
        target = THERMAL[bb][2]
        z = (est.var_x - target) / est.se_var_x
        checks.append((f"bb={bb:g} Var[x]={est.var_x:.5f}+-{est.se_var_x:.5f} "
                       f"target {target:.7f} z={z:+.2f} in {TIMINGS[bb]:.1f}s", abs(z) < 3))
        checks.append((f"bb={bb:g} runtime {TIMINGS[bb]:.1f}s <= 60s", TIMINGS[bb] <= 60.0))
    cov = stationary_covariance(params(1.0))
    checks.append((f"closed form at bb=1 {cov.var_x:.7f}", round(cov.var_x, 7) == 1.0819767))
    finish(1, "equilibrium variance", checks)


def test_criterion_2_uncertainty_product():
    checks = []
    for bb in GRID_BETAS:
        p = params(bb)
        rep = uncertainty_estimate(ensemble(bb), DriftSet.equilibrium(p), p)
        floor_ok = rep.product >= 0.5 * p.hbar - 3 * rep.se_product
        if bb in (1.0, 3.0, math.inf):
            checks.append((f"bb={bb:g} product {rep.product:.5f}+-{rep.se_product:.5f} vs "
                           f"{rep.analytic_product:.5f} z={rep.z_score:+.2f}",
                           abs(rep.z_score) < 3))
        checks.append((f"bb={bb:g} >= hbar/2 - 3SE", floor_ok))
    inf_target = 0.5 * params(math.inf).hbar
    checks.append(("bb=inf analytic is exactly hbar/2",
                   uncertainty_estimate(ensemble(math.inf), DriftSet.equilibrium(params(math.inf)))
                   .analytic_product == inf_target))
    finish(2, "uncertainty product", checks)


def test_criterion_3_histograms():
    checks, variances = [], []
    for bb in (0.5, 1.0, 3.0):
        ens = ensemble(bb)
        hist = marginal_histogram(ens, "x", 101)
        law = sps.norm(0.0, math.sqrt(THERMAL[bb][2]))
        stat, p = distribution_test(hist, law)
        checks.append((f"bb={bb:g} chi2={stat:.1f} p={p:.3f} > 0.01", p > 0.01))
        variances.append(moment_estimates(ens).var_x)
    analytic = [THERMAL[bb][2] for bb in (0.5, 1.0, 3.0)]
    ordering = variances[0] > variances[1] > variances[2]
    checks.append(("empirical Var ordering " + " > ".join(f"{v:.4f}" for v in variances)
                   + " follows coth", ordering and analytic[0] > analytic[1] > analytic[2]))
    finish(3, "marginal distributions", checks)


def test_criterion_4_cross_correlation():
    checks = []
    for bb in (0.5, 1.0, 3.0, 20.0):
        est = moment_estimates(ensemble(bb))
        target = THERMAL[bb][3]
        if bb == 20.0:
            checks.append((f"bb=20 |E[x xt]|={abs(est.cov_x_x_tilde):.2e} < 3SE={3 * est.se_cov_x_x_tilde:.2e}",
                           abs(est.cov_x_x_tilde) < 3 * est.se_cov_x_x_tilde))
        else:
            z = (est.cov_x_x_tilde - target) / est.se_cov_x_x_tilde
            checks.append((f"bb={bb:g} E[x xt]={est.cov_x_x_tilde:.5f} target {target:.5f} z={z:+.2f}",
                           abs(z) < 3))
    finish(4, "cross correlation", checks)


def test_criterion_5_transformed_process():
    checks = []
    for bb, seed in TRANSFORMED_SEEDS.items():
        p = params(bb)
        ens = simulate_transformed(EnsembleConfig(params=p, n_paths=N_PATHS, dt=2e-3,
                                                  horizon=HORIZON, base_seed=seed,
                                                  threads=THREADS))
        var, loo = jackknife_variance(ens.x)
        se = _jackknife_se(loo)
        target = 0.5 * p.hbar / (p.m * p.omega) * (1 + 2 * THERMAL[bb][0])
        z = (var - target) / se
        checks.append((f"bb={bb:g} Var[X]={var:.5f}+-{se:.5f} z={z:+.2f}", abs(z) < 3))
        same = abs(target - THERMAL[bb][2]) <= 1e-12 * target
        base = moment_estimates(ensemble(bb))
        zc = (var - base.var_x) / math.hypot(se, base.se_var_x)
        checks.append((f"bb={bb:g} equals criterion-1 target and estimate (z={zc:+.2f})",
                       same and abs(zc) < 3))
    p = params(0.01)
    ratio = transformed_noise_rate(p) / classical_noise_rate(p)
    dt, n = 1e-3, 1_000_000
    dW = wiener_increment(WienerStream(401, np.arange(n)), dt)
    Xn, _ = step_transformed(np.zeros(n), np.zeros(n), dt, p, noise=dW)
    emp = Xn.var() / dt / classical_noise_rate(p)
    checks.append((f"bb=0.01 rate ratio {ratio:.6f}, empirical {emp:.4f}, within 1%",
                   abs(ratio - 1) < 0.01 and abs(emp - 1) < 0.01))
    finish(5, "transformed process and classical limit", checks)


RESIDUALS = ("osmotic", "continuity", "fp_forward", "fp_backward", "kinematical", "dynamical")


def _closed_residuals(bb):
    p = params(bb)
    R, S, P = equilibrium_fields(p)
    vel = velocities_from_rs(R, S, p)
    g = Grid.default(p, h=0.05)
    return [osmotic_residual(vel, P, p, g), continuity_residual(vel, P, p, g),
            fokker_planck_residual(vel, P, p, "forward", g),
            fokker_planck_residual(vel, P, p, "backward", g),
            kinematical_residual(vel, p, g), dynamical_residual(vel, None, p, g)]


def _all_fields(vel, P, V, g, p):
    return [osmotic_field(vel, P, p, g)[0], continuity_field(vel, P, p, g)[0],
            fokker_planck_field(vel, P, p, "forward", g)[0],
            fokker_planck_field(vel, P, p, "backward", g)[0],
            kinematical_field(vel, p, g)[0], dynamical_field(vel, V, p, g)[0]]


PROPERTY = settings(max_examples=25, deadline=None, derandomize=True, database=None,
                    suppress_health_check=list(HealthCheck))


def _grid_ratios():
    """Worst per-residual error reduction over derandomized random smooth fields."""
    p = params(1.0)
    worst = dict.fromkeys(RESIDUALS, math.inf)

    @PROPERTY
    @given(smooth_fields())
    def run(fields):
        R, S, P, V = fields
        exact = _all_fields(velocities_from_rs(R, S, p), P, V, FINE, p)
        exact_c = _all_fields(velocities_from_rs(R, S, p), P, V, COARSE, p)
        fine = _all_fields(velocities_from_rs(R.sample(FINE), S.sample(FINE), p, check=False),
                           P.sample(FINE), V, FINE, p)
        coarse = _all_fields(velocities_from_rs(R.sample(COARSE), S.sample(COARSE), p, check=False),
                             P.sample(COARSE), V, COARSE, p)
        for name, ef, ec, gf, gc in zip(RESIDUALS, exact, exact_c, fine, coarse):
            ef_, ec_ = common(gf - ef, gc - ec)
            worst[name] = min(worst[name], np.max(np.abs(ec_)) / np.max(np.abs(ef_)))

    run()
    return worst


def test_criterion_6_field_residuals():
    checks = []
    for bb in (0.5, 1.0, 3.0, 20.0, math.inf):
        res = _closed_residuals(bb)
        checks.append((f"bb={bb:g} closed-form max {max(res):.1e} <= 1e-10", max(res) <= 1e-10))
    worst = _grid_ratios()
    for name in RESIDUALS:
        checks.append((f"{name} grid ratio >= {worst[name]:.2f}", worst[name] >= 3.8))
    table = residual_table(params(1.0), Grid(3.0, 0.01))
    bad = [r[0] for r in table if r[-1] == "not-converging"]
    checks.append(("equilibrium grid table converges" + (f" (not: {bad})" if bad else ""), not bad))
    finish(6, "field-equation residuals", checks)


def _identity_errors(R, S, P, g, p):
    vel = velocities_from_rs(R, S, p, check=False)
    fwd = fokker_planck_field(vel, P, p, "forward", g)[0]
    bwd = fokker_planck_field(vel, P, p, "backward", g)[0]
    cont = continuity_field(vel, P, p, g)[0]
    osm = osmotic_divergence_field(vel, P, p, g)[0]
    return (float(np.max(np.abs(fwd + bwd - 2 * cont))),
            float(np.max(np.abs(fwd - bwd + 2 * osm))))


def test_criterion_7_algebraic_structure():
    checks = []
    p = params(1.0)
    R, S, P = equilibrium_fields(p)
    worst_sum = worst_diff = 0.0
    for bb in (0.5, 1.0, 3.0):
        q = params(bb)
        Rq, Sq, Pq = equilibrium_fields(q)
        g = Grid(3.0, 0.05)
        for fields in ((Rq, Sq, Pq), (Rq.sample(g), Sq.sample(g), Pq.sample(g))):
            s_err, d_err = _identity_errors(*fields, g, q)
            worst_sum, worst_diff = max(worst_sum, s_err), max(worst_diff, d_err)

    @PROPERTY
    @given(smooth_fields())
    def random_fields(fields):
        nonlocal worst_sum, worst_diff
        Rr, Sr, Pr, _ = fields
        for f in ((Rr, Sr, Pr), (Rr.sample(FINE), Sr.sample(FINE), Pr.sample(FINE))):
            s_err, d_err = _identity_errors(*f, FINE, p)
            worst_sum, worst_diff = max(worst_sum, s_err), max(worst_diff, d_err)

    random_fields()
    checks.append((f"fwd+bwd-2cont max {worst_sum:.1e} <= 1e-12", worst_sum <= 1e-12))
    checks.append((f"fwd-bwd+2osmdiv max {worst_diff:.1e} <= 1e-12", worst_diff <= 1e-12))

    R2 = R + ScalarField2D.from_expr(0.3 * sp.sin(X + 2 * XT))
    S2 = ScalarField2D.from_expr(0.2 * sp.cos(X) * XT)
    vel = velocities_from_rs(R2, S2, p)
    b, bs, bt, bts = vel.drift_fields()
    pts = np.random.default_rng(7).uniform(-2, 2, (2, 200))
    u, v = vel.u.evaluate(*pts), vel.v.evaluate(*pts)
    bv, bsv = b.evaluate(*pts), bs.evaluate(*pts)
    ident = max(np.max(np.abs(bv - bsv - 2 * u)), np.max(np.abs(bv + bsv - 2 * v)))
    checks.append((f"b-b*=2u and b+b*=2v max {ident:.1e}", ident <= 1e-12))

    f = R2 + S2
    errs = []
    for h in (1e-2, 1e-3):
        fd = (f.evaluate(pts[0] + h, pts[1]) - f.evaluate(pts[0] - h, pts[1])) / (2 * h)
        errs.append(float(np.max(np.abs(p.hbar / p.m * fd - bv))))
    order = math.log10(errs[0] / errs[1])
    checks.append((f"drift gradient check order {order:.2f} (errors {errs[0]:.1e} -> {errs[1]:.1e})",
                   1.9 <= order <= 2.1))
    finish(7, "algebraic structure", checks)


def _lyapunov_var(p, dt):
    """Exact stationary Var[x] of the explicit-Euler recursion at step ``dt``."""
    c, s = 1 / math.tanh(p.beta_bar / 2), 1 / math.sinh(p.beta_bar / 2)
    A = -p.omega * np.array([[c, -s], [-s, c]])
    M = np.eye(2) + A * dt
    Q = np.eye(2) * p.hbar / p.m * dt
    return scipy.linalg.solve_discrete_lyapunov(M, Q)[0, 0]


def test_criterion_8_determinism_and_convergence(tmp_path):
    checks = []
    cfg = EnsembleConfig(params=params(1.0), n_paths=5000, dt=2e-3, horizon=1.0, base_seed=77)
    a, b = simulate_ensemble(cfg), simulate_ensemble(cfg)
    checks.append(("identical seeds give identical arrays",
                   np.array_equal(a.x, b.x) and np.array_equal(a.x_tilde, b.x_tilde)))
    blobs = []
    for name in ("r1", "r2"):
        code = cli_main(["simulate", "--paths", "500", "--horizon", "0.5", "--seed", "77",
                         "--out", str(tmp_path / name)])
        blobs.append(code == 0 and ((tmp_path / name / "moments.csv").read_bytes(),
                                    (tmp_path / name / "paths.csv").read_bytes()))
    checks.append(("CLI outputs byte-identical", bool(blobs[0]) and blobs[0] == blobs[1]))

    # coupled dt sweep: the same Brownian path at dt = 2e-3, 1e-3, 5e-4
    p = params(1.0)
    fine = 5e-4
    values, loos = [], []
    for r in (4, 2, 1):
        ens = simulate_ensemble(EnsembleConfig(params=p, n_paths=20_000, dt=r * fine,
                                               horizon=HORIZON, base_seed=SWEEP_SEED,
                                               substeps=r, threads=THREADS))
        v, loo = jackknife_variance(ens.x)
        values.append(v)
        loos.append(loo)
    d1, d2 = values[0] - values[1], values[1] - values[2]
    se1, se2 = _jackknife_se(loos[0] - loos[1]), _jackknife_se(loos[1] - loos[2])
    ratio = d1 / d2
    se_ratio = _jackknife_se((loos[0] - loos[1]) / (loos[1] - loos[2]))
    pred = [_lyapunov_var(p, dt) for dt in (4 * fine, 2 * fine, fine)]
    p1, p2 = pred[0] - pred[1], pred[1] - pred[2]
    checks.append((f"bias differences {d1:.3e}+-{se1:.1e}, {d2:.3e}+-{se2:.1e} vs exact "
                   f"discrete {p1:.3e}, {p2:.3e}", abs(d1 - p1) < 3 * se1 and abs(d2 - p2) < 3 * se2))
    checks.append((f"halving ratio {ratio:.3f}+-{se_ratio:.3f} vs 2", abs(ratio - 2) < 3 * se_ratio))
    finish(8, "determinism and dt convergence", checks)


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
