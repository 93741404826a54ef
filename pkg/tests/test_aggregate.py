import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from racedc.aggregate import (
    C2ViolationError, GlobalEstimate, RaceFailure, default_threshold, gral_solve,
    gral_solve_arrays, race_from_summaries, race_linear, race_nonlinear, solver_residual_check,
    threshold,
)
from racedc.datagen import (
    CovarianceSpec, NonlinearModelSpec, gen_nonlinear_batches, linear_f, linear_jac, shifted_square, shifted_square_jac,
)
from racedc.local_estimators import lasso_fit, nls_fit, ols_fit, ridge_fit
from racedc.remodel import (
    AdjustmentSpec, LinearDesign, ProjectedRecord, ProjectionSpec, draw_projections,
    summarize_linear,
)

from conftest import make_batches


def ols_fits(bs):
    return [ols_fit(b) for b in bs]


# ---------------------------------------------------------------- gral_solve

def test_diagonal_records_return_beta():
    beta = np.array([1.5, -2.0, 0.25])
    recs = [ProjectedRecord(beta[j], np.eye(3)[j], 1.0, j) for j in range(3)]
    np.testing.assert_array_equal(gral_solve(recs).beta, beta)


def test_gral_solve_matches_dense_oracle():
    rng = np.random.default_rng(0)
    U = rng.standard_normal((30, 4))
    z = rng.standard_normal(30)
    w = rng.uniform(0.2, 3.0, 30)
    recs = [ProjectedRecord(z[i], U[i], w[i], i) for i in range(30)]
    sw = np.sqrt(w)
    oracle = np.linalg.lstsq(U * sw[:, None], z * sw, rcond=None)[0]
    np.testing.assert_allclose(gral_solve(recs).beta, oracle, atol=1e-10)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(5, 40))
def test_gral_solve_permutation_invariant(seed, n):
    rng = np.random.default_rng(seed)
    U = rng.standard_normal((n, 3))
    z = rng.standard_normal(n)
    w = rng.uniform(0.1, 2.0, n)
    perm = rng.permutation(n)
    a = gral_solve_arrays(U, z, w)[0]
    b = gral_solve_arrays(U[perm], z[perm], w[perm])[0]
    np.testing.assert_allclose(a, b, atol=1e-12, rtol=1e-10)


def test_too_few_records_violate_c2():
    U = np.ones((2, 3))
    with pytest.raises(C2ViolationError):
        gral_solve_arrays(U, np.ones(2), np.ones(2))


def test_collinear_records_violate_c2_unless_jittered():
    U = np.column_stack([np.arange(1.0, 6.0), 2 * np.arange(1.0, 6.0)])
    z, w = np.ones(5), np.ones(5)
    with pytest.raises(C2ViolationError):
        gral_solve_arrays(U, z, w)
    beta, cond, jit = gral_solve_arrays(U, z, w, jitter=True)
    assert jit and np.all(np.isfinite(beta)) and cond < np.inf


# ---------------------------------------------------------------- thresholding

def est(b):
    return GlobalEstimate(np.asarray(b, float), "race")


def test_threshold_examples():
    np.testing.assert_array_equal(threshold(est([3, 0.001]), 0.01, "hard").beta, [3, 0])
    np.testing.assert_allclose(threshold(est([3, -2]), 0.5, "soft").beta, [2.5, -1.5])
    g = np.array([0.3, -1e-9, 2.0])
    np.testing.assert_array_equal(threshold(est(g), 0.0, "hard").beta, g)
    assert threshold(est(g), 0.1, "soft").method == "race_soft"


def test_threshold_errors():
    with pytest.raises(ValueError):
        threshold(est([1.0]), -0.1)
    with pytest.raises(ValueError):
        threshold(est([1.0]), 0.1, "firm")


@settings(max_examples=50, deadline=None)
@given(a=st.lists(st.floats(-10, 10), min_size=3, max_size=3),
       b=st.lists(st.floats(-10, 10), min_size=3, max_size=3), t=st.floats(0, 5))
def test_soft_threshold_nonexpansive(a, b, t):
    sa = threshold(est(a), t, "soft").beta
    sb = threshold(est(b), t, "soft").beta
    assert np.max(np.abs(sa - sb)) <= np.max(np.abs(np.subtract(a, b))) + 1e-12


def test_default_threshold():
    assert default_threshold(30, 4000) == pytest.approx(np.sqrt(np.log(30) / 4000))


# ---------------------------------------------------------------- linear race

def test_single_draw_equals_one_solve():
    _, bs = make_batches(N=8)
    adj = AdjustmentSpec()
    proj = ProjectionSpec(R=1, seed=4)
    fits = [ridge_fit(b, 1.0) for b in bs]
    out = race_linear(bs, fits, adj, proj)
    design = LinearDesign([summarize_linear(b, f, adj) for b, f in zip(bs, fits)], adj)
    recs = design.record_list(draw_projections(4, proj, 8, 0))
    np.testing.assert_array_equal(out.beta, gral_solve(recs).beta)
    assert out.R_used == 1


@pytest.mark.parametrize("R", [1, 7, 40])
@pytest.mark.parametrize("mode", ["ridge_sigma", "unit"])
def test_zero_noise_returns_beta(R, mode):
    spec, bs = make_batches(N=10, noise_var=0.0)
    fits = [lasso_fit(b, 0.2) for b in bs]
    out = race_linear(bs, fits, AdjustmentSpec(weight_mode=mode), ProjectionSpec(R=R, seed=1))
    np.testing.assert_allclose(out.beta, spec.beta, atol=1e-10)


def test_exact_inverse_race_is_weighted_local_ols():
    # with M_j = G_j^{-1} and unit weights: U_j = eta_j and z_j = eta_j' b_ols_j
    _, bs = make_batches(N=8)
    adj = AdjustmentSpec(weight_mode="unit", inverse="exact")
    proj = ProjectionSpec(R=5, seed=2)
    out = race_linear(bs, ols_fits(bs), adj, proj)
    locals_ = np.array([ols_fit(b).beta_hat for b in bs])
    sols = []
    for r in range(5):
        E = draw_projections(4, proj, 8, r)
        A = sum(np.outer(e, e) for e in E)
        c = sum(np.outer(e, e) @ bj for e, bj in zip(E, locals_))
        sols.append(np.linalg.solve(A, c))
    np.testing.assert_allclose(out.beta, np.mean(sols, axis=0), atol=1e-10)


def test_stacked_variant_labelled_and_close():
    _, bs = make_batches(N=10)
    fits = [ridge_fit(b, 1.0) for b in bs]
    a = race_linear(bs, fits, AdjustmentSpec(), ProjectionSpec(R=20), stacked=True)
    b = race_linear(bs, fits, AdjustmentSpec(), ProjectionSpec(R=20))
    assert a.method == "race_stacked" and b.method == "race"
    assert np.max(np.abs(a.beta - b.beta)) < 0.2


def test_race_fails_when_records_cannot_identify():
    # N < p: every draw has fewer records than unknowns
    _, bs = make_batches(p=6, N=3)
    fits = [ridge_fit(b, 1.0) for b in bs]
    with pytest.raises(RaceFailure):
        race_linear(bs, fits, AdjustmentSpec(), ProjectionSpec(R=5))


def test_race_reports_condition_and_skips():
    _, bs = make_batches(N=12)
    out = race_linear(bs, [ridge_fit(b, 1.0) for b in bs], AdjustmentSpec(), ProjectionSpec(R=9))
    assert out.skipped == 0 and out.R_used == 9 and 1 <= out.condition_number < 1e12


def test_race_from_summaries_matches_race_linear():
    _, bs = make_batches(N=9)
    adj, proj = AdjustmentSpec(), ProjectionSpec(R=6, seed=3)
    fits = [ridge_fit(b, 0.5) for b in bs]
    sums = [summarize_linear(b, f, adj) for b, f in zip(bs, fits)]
    np.testing.assert_array_equal(race_from_summaries(sums, adj, proj).beta,
                                  race_linear(bs, fits, adj, proj).beta)


# ---------------------------------------------------------------- nonlinear race

def test_nonlinear_linear_f_one_step_solution():
    spec, bs = make_batches(N=10)
    fits = [nls_fit(b, linear_f, linear_jac, np.zeros(4)) for b in bs]
    adj = AdjustmentSpec(weight_mode="unit")
    proj = ProjectionSpec(R=5, seed=1)
    target = race_linear(bs, fits, adj, proj, stacked=True).beta
    out = race_nonlinear(bs, fits, linear_f, linear_jac, adj, proj, max_outer=1, tol=1e9)
    np.testing.assert_allclose(out.beta, target, atol=1e-8)
    # started at the answer, the first step is already below tolerance
    again = race_nonlinear(bs, fits, linear_f, linear_jac, adj, proj, init=target)
    assert again.iterations == 1
    np.testing.assert_allclose(again.beta, target, atol=1e-8)


def test_nonlinear_zero_noise_truth_is_fixed_point():
    beta = np.array([2.0, 1.0, -2.0, 0.0])
    spec = NonlinearModelSpec(beta, 0.0, CovarianceSpec("ar1", 0.5))
    bs = gen_nonlinear_batches(spec, 20, 50, seed=0)
    fits = [nls_fit(b, shifted_square, shifted_square_jac, beta) for b in bs]
    out = race_nonlinear(bs, fits, shifted_square, shifted_square_jac, AdjustmentSpec(),
                         ProjectionSpec(R=10), init=beta)
    assert out.iterations == 1
    np.testing.assert_allclose(out.beta, beta, atol=1e-8)


@pytest.fixture(scope="module")
def exp4_run():
    beta = np.array([2.0, 1.0, -2.0, 0.0])
    spec = NonlinearModelSpec(beta, 1.0, CovarianceSpec("ar1", 0.5))
    bs = gen_nonlinear_batches(spec, 40, 50, seed=1)
    from racedc.local_estimators import shifted_square_init
    fits = [nls_fit(b, shifted_square, shifted_square_jac, shifted_square_init(b)) for b in bs]
    out = race_nonlinear(bs, fits, shifted_square, shifted_square_jac, AdjustmentSpec(),
                         ProjectionSpec(R=20, seed=2), tol=1e-4)
    return bs, out


def test_nonlinear_residual_after_convergence(exp4_run):
    bs, out = exp4_run
    res = solver_residual_check(out, bs, shifted_square, shifted_square_jac)
    assert res <= 10 * 1e-4
    assert out.iterations <= 6


def test_nonlinear_residual_increases_under_perturbation(exp4_run):
    bs, out = exp4_run
    base = solver_residual_check(out, bs, shifted_square, shifted_square_jac)
    for k in range(4):
        moved = out.beta.copy()
        moved[k] += 0.1
        assert solver_residual_check(out, bs, shifted_square, shifted_square_jac, moved) > base


def test_nonlinear_residual_linear_f_is_normal_equation_residual():
    _, bs = make_batches(N=10)
    fits = [ols_fit(b) for b in bs]
    adj, proj = AdjustmentSpec(weight_mode="unit"), ProjectionSpec(R=4)
    out = race_nonlinear(bs, fits, linear_f, linear_jac, adj, proj)
    assert solver_residual_check(out, bs, linear_f, linear_jac) <= 1e-8


def test_nonlinear_nonconvergence_carries_estimate():
    beta = np.array([2.0, 1.0, -2.0, 0.0])
    spec = NonlinearModelSpec(beta, 1.0, CovarianceSpec("ar1", 0.5))
    bs = gen_nonlinear_batches(spec, 20, 50, seed=0)
    fits = [nls_fit(b, shifted_square, shifted_square_jac, beta) for b in bs]
    from racedc.local_estimators import ConvergenceError
    with pytest.raises(ConvergenceError) as ei:
        race_nonlinear(bs, fits, shifted_square, shifted_square_jac, AdjustmentSpec(),
                       ProjectionSpec(R=5), init=beta + 1.0, tol=1e-14, max_outer=2)
    assert ei.value.estimate.iterations == 2


def test_nonlinear_bad_arguments():
    _, bs = make_batches(N=5)
    fits = [ols_fit(b) for b in bs]
    with pytest.raises(ValueError):
        race_nonlinear(bs, fits, linear_f, linear_jac, AdjustmentSpec(), ProjectionSpec(), tol=0)
    with pytest.raises(ValueError):
        race_nonlinear(bs, fits, linear_f, linear_jac, AdjustmentSpec(), ProjectionSpec(),
                       init=np.full(4, np.nan))
