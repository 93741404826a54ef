"""Monte Carlo replication of the four simulation designs.

Each replication generates fresh batches, fits the local estimators once and
feeds them to race and to every applicable competitor. Per-replication
errors are stored and reduced afterwards, so the reduction order (and hence
the output) does not depend on how replications were scheduled.
"""

import csv
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .aggregate import (
    C2ViolationError, RaceFailure, default_threshold, race_linear, race_nonlinear, threshold,
)
from .baselines import (
    DegenerateAggregateError, adjusted_fits, aee_nonlinear, dc_lasso, dc_pce, dc_ridge,
    full_oracle, global_pca_basis, ridge_weight, simple_average, simple_average_pce,
)
from .datagen import (
    CovarianceSpec, LinearModelSpec, NonlinearModelSpec, gen_linear_batches,
    gen_nonlinear_batches, shifted_square, shifted_square_jac,
)
from .local_estimators import ConvergenceError, nls_fit, shifted_square_init
from .protocol import (
    LinearSessionConfig, LocalPlan, NonlinearSessionConfig, run_linear_session,
    run_nonlinear_session,
)
from ._linalg import SingularSystemError
from .remodel import AdjustmentSpec, ProjectionSpec, build_H

log = logging.getLogger(__name__)

EXPERIMENTS = ("lasso", "ridge", "pce", "nonlinear")

TRUE_BETA = {
    "lasso": (3.0, 2.0, 1.0, 0.5, -2.0) + (0.0,) * 25,
    "ridge": (2.0, 1.5, 1.0, 0.5, -2.0, 0.0),
    "pce": (3.0, 2.0, 1.0, -1.0, -2.0, 0.0),
    "nonlinear": (2.0, 1.0, -2.0, 0.0),
}
NOISE_VAR = {"lasso": 4.0, "ridge": 4.0, "pce": 0.25, "nonlinear": 1.0}
COVARIANCE = {
    "lasso": CovarianceSpec("ar1", 0.5),
    "ridge": CovarianceSpec("equicorrelated", 0.95),
    "pce": CovarianceSpec("equicorrelated", 0.9),
    "nonlinear": CovarianceSpec("ar1", 0.5),
}

MAX_FAILURE_FRACTION = 0.20
NLS_TOL = 1e-9

# failures that count against a method instead of aborting the run
EXPECTED_FAILURES = (SingularSystemError, C2ViolationError, RaceFailure, ConvergenceError,
                     DegenerateAggregateError, np.linalg.LinAlgError)


class ConfigError(ValueError):
    pass


class ExcessiveFailures(RuntimeError):
    def __init__(self, message, report):
        super().__init__(message)
        self.report = report


@dataclass
class ExperimentConfig:
    experiment: str = "lasso"
    n: int = 4000
    N_list: tuple = (20, 50, 100, 200)
    reps: int = 100
    R: int = 50
    k1: float = 0.1
    k2: float = 0.1
    seed: int = 0
    mean_mode: str = "identical"
    tuning_mode: str = "hk"
    r: int = 5
    threshold_mode: str = "none"  # none | hard | soft | both
    weight_mode: str = "ridge_sigma"
    stacked: bool = False
    p: int | None = None
    noise_var: float | None = None
    lasso_lambda: float | None = None
    tol: float = 1e-4
    max_outer: int = 25
    include_full: bool = True
    methods: tuple | None = None  # restrict to these method names; None runs all
    n_jobs: int = 1
    output_dir: str | None = None

    def validate(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.experiment!r}")
        if self.reps < 1:
            raise ConfigError("reps must be at least 1")
        if not self.N_list:
            raise ConfigError("need at least one batch count")
        for N in self.N_list:
            if N < 1 or self.n % N:
                raise ConfigError(f"n={self.n} is not divisible by N={N}")
        if self.R < 1:
            raise ConfigError("R must be at least 1")
        if self.k1 <= 0 or self.k2 <= 0:
            raise ConfigError("k1 and k2 must be positive")
        if self.mean_mode not in ("identical", "batch_means"):
            raise ConfigError(f"unknown mean mode {self.mean_mode!r}")
        if self.tuning_mode not in ("hk", "cv"):
            raise ConfigError(f"unknown ridge tuning {self.tuning_mode!r}")
        if self.threshold_mode not in ("none", "hard", "soft", "both"):
            raise ConfigError(f"unknown threshold mode {self.threshold_mode!r}")
        if self.experiment == "pce" and not 1 <= self.r <= len(self.beta):
            raise ConfigError(f"PCE rank r={self.r} outside [1, {len(self.beta)}]")
        return self

    @property
    def beta(self):
        b = np.array(TRUE_BETA[self.experiment])
        if self.p is not None:
            b = np.concatenate([b, np.zeros(max(0, self.p - b.size))])[: self.p]
        return b

    def model(self):
        noise = NOISE_VAR[self.experiment] if self.noise_var is None else self.noise_var
        cov = COVARIANCE[self.experiment]
        if self.experiment == "nonlinear":
            return NonlinearModelSpec(self.beta, noise, cov)
        return LinearModelSpec(self.beta, noise, cov, self.mean_mode)


@dataclass
class MetricsReport:
    experiment: str
    beta: np.ndarray
    N_list: tuple
    reps: int
    errors: dict = field(default_factory=dict)      # (method, N) -> (k, p) array
    failures: dict = field(default_factory=dict)    # (method, N) -> int
    iterations: dict = field(default_factory=dict)  # N -> list of outer iterations

    @property
    def methods(self):
        return sorted({m for m, _ in list(self.errors) + list(self.failures)})

    def _err(self, method, N):
        e = self.errors.get((method, N))
        return np.empty((0, self.beta.size)) if e is None else e

    def bias(self, method, N):
        return self._err(method, N).mean(axis=0)

    def mse(self, method, N):
        return np.mean(self._err(method, N) ** 2, axis=0)

    def mc_stderr(self, method, N):
        e = self._err(method, N)
        if e.shape[0] < 2:
            return np.full(self.beta.size, np.nan)
        return e.std(axis=0, ddof=1) / np.sqrt(e.shape[0])

    def summed_mse(self, method, N):
        return float(np.sum(self.mse(method, N)))

    def failure_count(self, method):
        return sum(v for (m, _), v in self.failures.items() if m == method)

    def mean_iterations(self, N=None):
        its = [i for k, v in self.iterations.items() if N is None or k == N for i in v]
        return float(np.mean(its)) if its else float("nan")

    def cells(self):
        """Rows (method, N, component, bias, mse, stderr) in a fixed order."""
        for method in self.methods:
            for N in sorted(self.N_list):
                if self._err(method, N).shape[0] == 0:
                    continue
                b, m, s = self.bias(method, N), self.mse(method, N), self.mc_stderr(method, N)
                for k in range(self.beta.size):
                    yield method, N, k, float(b[k]), float(m[k]), float(s[k])


def _substream_seed(*key):
    return int(np.random.SeedSequence(list(key)).generate_state(1)[0])


class _Collector:
    """Runs each requested method once and records its estimate or its failure."""

    def __init__(self, methods):
        self.methods = methods
        self.out = {}

    def wants(self, name):
        return self.methods is None or name in self.methods

    def __call__(self, name, fn):
        if not self.wants(name):
            return
        try:
            self.out[name] = np.asarray(fn(), dtype=float)
        except EXPECTED_FAILURES as e:
            log.debug("%s failed: %s", name, e)
            self.out[name] = None

    def fail(self, *names):
        for name in names:
            if self.wants(name):
                self.out[name] = None


def _nonlinear_replication(config, N, m, data_seed, adj, proj, run, extra):
    batches = gen_nonlinear_batches(config.model(), N, m, data_seed)
    f, jac = shifted_square, shifted_square_jac
    try:
        fits = [nls_fit(b, f, jac, shifted_square_init(b), tol=NLS_TOL) for b in batches]
    except EXPECTED_FAILURES:
        fits = None
    if fits is None:
        run.fail("race", "AV", "AEE")
    else:
        def race():
            est = race_nonlinear(batches, fits, f, jac, adj, proj,
                                 tol=config.tol, max_outer=config.max_outer)
            extra["iterations"] = est.iterations
            return est.beta

        def av():
            ra = [ft.beta_hat + build_H(b, ft, jac, config.k1) @ (b.y - f(b.X, ft.beta_hat)) / b.m
                  for b, ft in zip(batches, fits)]
            return simple_average(ra).beta

        run("race", race)
        run("AV", av)
        run("AEE", lambda: aee_nonlinear(fits, batches, jac).beta)
    if config.include_full:
        run("Full", lambda: full_oracle(batches, "nls", f=f, grad_f=jac,
                                        init=shifted_square_init).beta)


def _linear_replication(config, N, m, data_seed, adj, proj, run):
    exp = config.experiment
    batches = gen_linear_batches(config.model(), N, m, data_seed)
    plan = LocalPlan(kind=exp, lam=config.lasso_lambda, cv_seed=data_seed,
                     ridge_tuning=config.tuning_mode, r=config.r)
    need_fits = any(run.wants(k) for k in ("race", "race_hard", "race_soft", "AV", "DC"))
    fits = None
    if need_fits:
        try:
            fits = [plan.fit(b) for b in batches]
        except EXPECTED_FAILURES:
            fits = None

    modes = {"none": (), "hard": ("hard",), "soft": ("soft",),
             "both": ("hard", "soft")}[config.threshold_mode]
    if fits is None:
        run.fail("race", *(f"race_{md}" for md in modes))
    elif run.wants("race"):
        try:
            est = race_linear(batches, fits, adj, proj, stacked=config.stacked)
        except EXPECTED_FAILURES as e:
            log.debug("race failed: %s", e)
            run.fail("race", *(f"race_{md}" for md in modes))
        else:
            run("race", lambda: est.beta)
            t = default_threshold(config.beta.size, config.n)
            for md in modes:
                run(f"race_{md}", lambda md=md: threshold(est, t, md).beta)

    if exp == "pce":
        def av_pce():
            P_r = global_pca_basis([b.X.T @ b.X for b in batches], config.r)
            return simple_average_pce(batches, P_r, config.k1).beta
        run("AV", av_pce)
        run("DC", lambda: dc_pce(batches, config.r).beta)
    elif fits is None:
        run.fail("AV", "DC")
    else:
        run("AV", lambda: simple_average(adjusted_fits(batches, fits, config.k1)).beta)
        if exp == "lasso":
            run("DC", lambda: dc_lasso(fits).beta)
        else:
            run("DC", lambda: dc_ridge(
                fits, [ridge_weight(b, ft) for b, ft in zip(batches, fits)]).beta)
    if config.include_full:
        run("Full", lambda: full_oracle(
            batches, exp, k1=config.k1, tuning=config.tuning_mode, r=config.r,
            cv_seed=data_seed, lam=config.lasso_lambda).beta)


def run_replication(config, N, rep):
    """Estimates from every method for one replication.

    Returns ``({method: beta or None}, extra)``; None marks a failure.
    The data and projection streams depend only on (seed, N, rep).
    """
    m = config.n // N
    data_seed = _substream_seed(config.seed, N, rep, 0)
    proj = ProjectionSpec("gaussian_invp", config.R, _substream_seed(config.seed, N, rep, 1))
    adj = AdjustmentSpec(config.k1, config.k2, config.weight_mode)
    run, extra = _Collector(config.methods), {}
    if config.experiment == "nonlinear":
        _nonlinear_replication(config, N, m, data_seed, adj, proj, run, extra)
    else:
        _linear_replication(config, N, m, data_seed, adj, proj, run)
    return run.out, extra


def _rep_job(args):
    config, N, rep = args
    return run_replication(config, N, rep)


def run_experiment(config):
    """Run every (N, replication) pair and reduce to bias / MSE per component."""
    config.validate()
    beta = config.beta
    report = MetricsReport(config.experiment, beta, tuple(config.N_list), config.reps)
    jobs = [(config, N, rep) for N in config.N_list for rep in range(config.reps)]
    if config.n_jobs > 1:
        with ProcessPoolExecutor(config.n_jobs) as ex:
            results = list(ex.map(_rep_job, jobs, chunksize=max(1, len(jobs) // (8 * config.n_jobs))))
    else:
        results = [_rep_job(j) for j in jobs]

    per = {}
    for (_, N, _), (out, extra) in zip(jobs, results):
        for name, est in out.items():
            per.setdefault((name, N), [])
            if est is None:
                report.failures[(name, N)] = report.failures.get((name, N), 0) + 1
            else:
                per[(name, N)].append(est - beta)
        if "iterations" in extra:
            report.iterations.setdefault(N, []).append(extra["iterations"])
    for key, errs in per.items():
        report.failures.setdefault(key, 0)
        if errs:
            report.errors[key] = np.array(errs)

    bad = [(k, v) for k, v in report.failures.items() if v > MAX_FAILURE_FRACTION * config.reps]
    if bad:
        desc = ", ".join(f"{m} at N={N}: {v}/{config.reps}" for (m, N), v in sorted(bad))
        raise ExcessiveFailures(f"methods failed too often ({desc})", report)
    return report


# ---------------------------------------------------------------- output

CSV_HEADER = ["experiment", "method", "N", "component_index", "bias", "mse", "mc_stderr"]
PLOT_HEADER = ["experiment", "method", "N", "component_index", "metric", "value"]


def emit_csv(report, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for method, N, k, b, m, s in report.cells():
            w.writerow([report.experiment, method, N, k, repr(b), repr(m), repr(s)])
    return Path(path)


def emit_plotdata(report, path):
    """Long format: one row per (method, N, component, metric)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PLOT_HEADER)
        for method, N, k, b, m, _ in report.cells():
            w.writerow([report.experiment, method, N, k, "bias", repr(b)])
            w.writerow([report.experiment, method, N, k, "mse", repr(m)])
    return Path(path)


def read_metrics_csv(path):
    """Parse a metrics CSV back into {(method, N, k): (bias, mse, stderr)}."""
    out = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            key = (row["method"], int(row["N"]), int(row["component_index"]))
            out[key] = (float(row["bias"]), float(row["mse"]), float(row["mc_stderr"]))
    return out


def trace_session(config, path, N=None, rep=0):
    """Replay one replication's race as a message-passing session and dump its trace."""
    config.validate()
    N = config.N_list[0] if N is None else N
    m = config.n // N
    data_seed = _substream_seed(config.seed, N, rep, 0)
    proj = ProjectionSpec("gaussian_invp", config.R, _substream_seed(config.seed, N, rep, 1))
    adj = AdjustmentSpec(config.k1, config.k2, config.weight_mode)
    if config.experiment == "nonlinear":
        batches = gen_nonlinear_batches(config.model(), N, m, data_seed)
        cfg = NonlinearSessionConfig(shifted_square, shifted_square_jac, shifted_square_init,
                                     adj, proj, config.tol, config.max_outer, NLS_TOL)
        return run_nonlinear_session(batches, cfg, trace_path=path)
    batches = gen_linear_batches(config.model(), N, m, data_seed)
    plan = LocalPlan(kind=config.experiment, lam=config.lasso_lambda, cv_seed=data_seed,
                     ridge_tuning=config.tuning_mode, r=config.r)
    cfg = LinearSessionConfig(plan, adj, proj, config.stacked)
    return run_linear_session(batches, "race", cfg, trace_path=path)


def full_scale(config):
    """Large-scale settings: n=10000, 500 replications, R=200."""
    return replace(config, n=10000, reps=500, R=200, N_list=(50, 100, 200, 400))
