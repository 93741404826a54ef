"""Acceptance criteria, each run at its stated scale and tolerance.

Every test appends one PASS/FAIL line that is printed in the pytest
terminal summary (and immediately to stdout, visible with ``-s``).
Run just this file with ``pytest tests/test_acceptance.py -v``.
"""

import numpy as np
import pytest

from racedc.aggregate import gral_solve_arrays, race_linear, race_nonlinear
from racedc.baselines import aee_nonlinear, dc_pce
from racedc.datagen import (
    CovarianceSpec, DataBatch, LinearModelSpec, NonlinearModelSpec, gen_linear_batches,
    gen_nonlinear_batches, linear_jac, shifted_square, shifted_square_jac,
)
from racedc.harness import ExperimentConfig, run_experiment
from racedc.local_estimators import (
    hk_ridge_value, lasso_cv_fit, lasso_fit, lasso_lambda_max, nls_fit, ols_fit, ridge_fit,
    shifted_square_init,
)
from racedc.protocol import (
    LinearSessionConfig, LocalPlan, NonlinearSessionConfig, run_linear_session,
    run_nonlinear_session,
)
from racedc.remodel import AdjustmentSpec, ProjectionSpec, draw_projections

from conftest import ACCEPTANCE_LINES

pytestmark = pytest.mark.slow


def report(number, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def seed_of(*key):
    return int(np.random.SeedSequence(list(key)).generate_state(1)[0])


# ---------------------------------------------------------------- 1

def test_c1_exact_unbiasedness():
    n, p, R, reps = 2000, 10, 50, 500
    beta = np.r_[3, 2, 1, 0.5, -2, np.zeros(p - 5)]
    spec = LinearModelSpec(beta, 4.0, CovarianceSpec("ar1", 0.5))
    worst = {}
    for N in (20, 80):
        errs = {}
        for rep in range(reps):
            seed = seed_of(101, N, rep)
            bs = gen_linear_batches(spec, N, n // N, seed)
            fits = {"lasso": [lasso_cv_fit(b, seed=seed) for b in bs],
                    "ridge": [ridge_fit(b, hk_ridge_value(b)) for b in bs]}
            proj = ProjectionSpec(R=R, seed=seed)
            for est, fl in fits.items():
                for mode in ("ridge_sigma", "unit"):
                    b = race_linear(bs, fl, AdjustmentSpec(weight_mode=mode), proj).beta
                    errs.setdefault((est, mode), []).append(b - beta)
        for key, E in errs.items():
            E = np.array(E)
            z = np.abs(E.mean(axis=0)) / (E.std(axis=0, ddof=1) / np.sqrt(reps))
            worst[(N,) + key] = float(z.max())
    bad = {k: v for k, v in worst.items() if v > 3}
    detail = (f"max |mean error|/MC-stderr over 10 components = "
              f"{max(worst.values()):.2f} (limit 3) across N in {{20,80}}, "
              f"both weight modes, lasso and ridge starts")
    if bad:
        detail += f"; over limit: {bad}"
    report(1, not bad, detail)


# ---------------------------------------------------------------- 2

def test_c2_ols_collapse():
    n, N = 1000, 10
    spec = LinearModelSpec(np.array([1.0, -2.0, 0.5, 3.0, 0.0]), 1.0, CovarianceSpec("ar1", 0.5))
    bs = gen_linear_batches(spec, N, n // N, seed=7)
    fits = [ols_fit(b) for b in bs]
    adj = AdjustmentSpec(weight_mode="unit", inverse="exact")
    est = race_linear(bs, fits, adj, ProjectionSpec(R=2000, seed=1)).beta
    diff = float(np.max(np.abs(est - ols_fit(bs).beta_hat)))
    report(2, diff <= 1e-6,
           f"max |race - pooled OLS| = {diff:.3g} (limit 1e-6; exact Gram inverses, "
           f"unit weights, R=2000)")


# ---------------------------------------------------------------- 3

def test_c3_root_n_rate():
    reps, N = 200, 50
    ratios = {}
    for exp in ("lasso", "nonlinear"):
        mse = {}
        for n in (1000, 4000):
            cfg = ExperimentConfig(exp, n=n, N_list=(N,), reps=reps, R=50, seed=303,
                                   methods=("race",), include_full=False)
            mse[n] = run_experiment(cfg).summed_mse("race", N)
        ratios[exp] = mse[1000] / mse[4000]
    ok = all(3 <= r <= 5 for r in ratios.values())
    report(3, ok, "summed-MSE ratio n=1000 / n=4000 at N=50: " +
           ", ".join(f"{k} {v:.2f}" for k, v in ratios.items()) + " (required in [3, 5])")


# ---------------------------------------------------------------- 4

def test_c4_large_N_robustness():
    base = dict(experiment="lasso", n=4000, reps=200, R=50, seed=404, include_full=False)
    big = run_experiment(ExperimentConfig(N_list=(200,), methods=("race", "AV", "DC"), **base))
    few = run_experiment(ExperimentConfig(N_list=(20,), methods=("AV",), **base))
    race, av, dc = (big.summed_mse(m, 200) for m in ("race", "AV", "DC"))
    av20 = few.summed_mse("AV", 20)
    ok = (big.failures[("race", 200)] == 0 and race < av and race < dc and av > av20)
    report(4, ok, f"N=200 summed MSE race {race:.4f} < AV {av:.4f} and DC-lasso {dc:.4f}; "
                  f"AV N=200 {av:.4f} > AV N=20 {av20:.4f}; race failures "
                  f"{big.failures[('race', 200)]}")


# ---------------------------------------------------------------- 5

def test_c5_nonlinear_iterations():
    cfg = ExperimentConfig("nonlinear", n=4000, N_list=(100,), reps=100, R=50, tol=1e-4,
                           seed=505, methods=("race",), include_full=False)
    rep = run_experiment(cfg)
    its = rep.iterations[100]
    med = float(np.median(its))
    report(5, med <= 4 and len(its) == 100,
           f"median outer iterations {med:g} over {len(its)} reps (limit 4); "
           f"range {min(its)}-{max(its)}")


# ---------------------------------------------------------------- 6

def test_c6_thresholding_sparsity():
    cfg = ExperimentConfig("lasso", n=4000, N_list=(50,), reps=200, R=50, seed=606,
                           threshold_mode="hard", methods=("race", "race_hard"),
                           include_full=False)
    rep = run_experiment(cfg)
    zero = rep.beta == 0
    E = rep.errors[("race_hard", 50)]
    frac = float(np.mean(np.all(E[:, zero] == 0.0, axis=1)))
    per_comp = float(np.mean(E[:, zero] == 0.0))
    sd = float(np.sqrt(np.mean(rep.errors[("race", 50)][:, zero] ** 2)))
    t = np.sqrt(np.log(30) / 4000)
    report(6, frac >= 0.95,
           f"all 25 zero components exactly 0 in {frac:.1%} of 200 reps (required 95%); "
           f"per-component zero rate {per_comp:.1%}; t={t:.4f}, "
           f"race RMS on zero components {sd:.4f}")


# ---------------------------------------------------------------- 7

def test_c7_protocol_invariants():
    notes = []
    ok = True
    spec3 = LinearModelSpec(np.array([3.0, 2, 1, -1, -2, 0]), 0.25,
                            CovarianceSpec("equicorrelated", 0.9))
    bs3 = gen_linear_batches(spec3, 20, 100, seed=1)
    cfg = LinearSessionConfig(plan=LocalPlan(kind="pce", r=5))
    res, st = run_linear_session(bs3, "DC_pce", cfg)
    ok &= st.rounds == 2 and res.rounds == 2
    notes.append(f"DC_pce rounds={st.rounds}")

    spec1 = LinearModelSpec(np.r_[3, 2, 1, 0.5, -2, np.zeros(25)], 4.0, CovarianceSpec("ar1", 0.5))
    bs1 = gen_linear_batches(spec1, 50, 80, seed=2)
    spec2 = LinearModelSpec(np.array([2.0, 1.5, 1, 0.5, -2, 0]), 4.0,
                            CovarianceSpec("equicorrelated", 0.95))
    bs2 = gen_linear_batches(spec2, 20, 100, seed=3)
    sessions = [(bs1, "race", "lasso"), (bs1, "AV", "lasso"), (bs1, "DC_lasso", "lasso"),
                (bs2, "race", "ridge"), (bs2, "AV", "ridge"), (bs2, "DC_ridge", "ridge"),
                (bs3, "race", "pce"), (bs3, "AV", "pce"), (bs3, "DC_pce", "pce")]
    for bs, method, kind in sessions:
        c = LinearSessionConfig(plan=LocalPlan(kind=kind, r=5, cv_seed=1))
        run_linear_session(bs, method, c)  # raises FirewallViolation on any row-sized payload
    notes.append(f"{len(sessions)} linear sessions passed the firewall")

    spec4 = NonlinearModelSpec(np.array([2.0, 1, -2, 0]), 1.0, CovarianceSpec("ar1", 0.5))
    bs4 = gen_nonlinear_batches(spec4, 100, 40, seed=4)
    ncfg = NonlinearSessionConfig(shifted_square, shifted_square_jac, shifted_square_init)
    est, nst = run_nonlinear_session(bs4, ncfg)
    fits = [nls_fit(b, shifted_square, shifted_square_jac, shifted_square_init(b), tol=ncfg.nls_tol)
            for b in bs4]
    lib = race_nonlinear(bs4, fits, shifted_square, shifted_square_jac, ncfg.adj, ncfg.proj)
    ok &= nst.rounds == est.iterations == lib.iterations
    notes.append(f"nonlinear rounds={nst.rounds}, solver iterations={lib.iterations}")
    report(7, bool(ok), "; ".join(notes))


# ---------------------------------------------------------------- 8

def test_c8_oracle_equivalences():
    rng = np.random.default_rng(808)
    notes, ok = [], True

    kkt = 0.0
    for _ in range(50):
        m, p = rng.integers(10, 80), rng.integers(2, 25)
        X = rng.standard_normal((m, p))
        b = DataBatch(X, X @ rng.standard_normal(p) + rng.standard_normal(m))
        lam = rng.uniform(0.001, 1.0) * lasso_lambda_max(X, b.y)
        kkt = max(kkt, lasso_fit(b, lam).extras["kkt_residual"])
    ok &= kkt <= 1e-6
    notes.append(f"lasso KKT {kkt:.1e}")

    U = rng.standard_normal((30, 4))
    z = rng.standard_normal(30)
    w = rng.uniform(0.1, 3.0, 30)
    sw = np.sqrt(w)
    oracle = np.linalg.lstsq(U * sw[:, None], z * sw, rcond=None)[0]
    g = float(np.max(np.abs(gral_solve_arrays(U, z, w)[0] - oracle)))
    ok &= g <= 1e-10
    notes.append(f"gral_solve {g:.1e}")

    spec = LinearModelSpec(np.array([3.0, 2, 1, -1, -2, 0]), 0.25,
                           CovarianceSpec("equicorrelated", 0.9))
    bs = gen_linear_batches(spec, 10, 50, seed=5)
    pooled = ols_fit(bs).beta_hat
    d = float(np.max(np.abs(dc_pce(bs, 6).beta - pooled)))
    ok &= d <= 1e-8
    notes.append(f"dc_pce(r=p) {d:.1e}")

    a = float(np.max(np.abs(aee_nonlinear([ols_fit(b) for b in bs], bs, linear_jac).beta
                            - pooled)))
    ok &= a <= 1e-8
    notes.append(f"aee(linear) {a:.1e}")

    E = draw_projections(6, ProjectionSpec(seed=9), 100_000, 0)
    v = float(np.max(np.abs(E.var(axis=0) * 6 - 1)))
    ok &= v <= 0.05
    notes.append(f"projection variance rel. error {v:.3f}")
    report(8, bool(ok), "; ".join(notes))


if __name__ == "__main__":
    import sys
    sys.exit(pytest.main([__file__, "-v", "-s"]))
