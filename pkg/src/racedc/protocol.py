"""In-process coordinator/worker simulation of the divide-and-combine plans.

Workers own their batch and only ever send p-sized (or r-sized) summaries.
Every message passes through :class:`Network`, which checks the payload
shapes against the allowed dimensions (the raw-data firewall), counts the
scalars, and keeps a trace that can be dumped as line-delimited JSON.
"""

import json
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .aggregate import GlobalEstimate, NonlinearAggregator, race_from_summaries
from .baselines import (
    dc_lasso, dc_pce_from_summaries, dc_ridge, global_pca_basis, ridge_weight, simple_average,
)
from .local_estimators import (
    ConvergenceError, LocalFit, cv_select_lambda, cv_select_ridge, hk_ridge_value, lasso_fit,
    nls_fit, ols_fit, pca_basis, pce_fit, ridge_fit,
)
from .remodel import (
    AdjustmentSpec, LinearSummary, NonlinearCompressed, NonlinearStatic, ProjectionSpec,
    build_H, nonlinear_compress, nonlinear_static, residual_adjust, ridge_inverse,
    summarize_linear,
)

COORDINATOR = "coordinator"
KINDS = ("GramSummary", "LocalFitMsg", "ProjectedBatch", "EigenBroadcast",
         "BetaBroadcast", "CompressedNL", "Done")


class FirewallViolation(RuntimeError):
    """A message payload had a shape that could carry raw rows."""


@dataclass
class Message:
    kind: str
    payload: dict
    round: int
    src: str
    dst: str

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown message kind {self.kind!r}")
        self.payload = {k: np.asarray(v, dtype=float) for k, v in self.payload.items()}

    @property
    def payload_scalars(self):
        return int(sum(v.size for v in self.payload.values()))


@dataclass
class CommStats:
    rounds: int
    upstream_scalars_per_worker: int
    downstream_scalars: int
    upstream_by_round: dict = field(default_factory=dict)


class Network:
    """Synchronous message queues between named nodes."""

    def __init__(self, allowed_dims):
        self.allowed_dims = set(allowed_dims) | {1}
        self.inbox = {}
        self.trace = []

    def register(self, node):
        self.inbox[node] = deque()

    def check(self, msg):
        for key, arr in msg.payload.items():
            bad = [d for d in arr.shape if d not in self.allowed_dims]
            if bad:
                raise FirewallViolation(
                    f"{msg.src}->{msg.dst} {msg.kind}.{key} has shape {arr.shape}; "
                    f"only dimensions {sorted(self.allowed_dims)} may cross the network")

    def send(self, msg):
        self.check(msg)
        self.inbox[msg.dst].append(msg)
        self.trace.append({"round": msg.round, "from": msg.src, "to": msg.dst,
                           "kind": msg.kind, "payload_scalars": msg.payload_scalars})

    def receive(self, node):
        box = self.inbox[node]
        out = list(box)
        box.clear()
        return out

    def stats(self, workers):
        rounds = max((t["round"] for t in self.trace), default=0)
        up = {w: 0 for w in workers}
        down = {w: 0 for w in workers}
        by_round = {}
        for t in self.trace:
            if t["to"] == COORDINATOR:
                up[t["from"]] += t["payload_scalars"]
                if t["from"] == workers[-1]:
                    by_round[t["round"]] = by_round.get(t["round"], 0) + t["payload_scalars"]
            else:
                down[t["to"]] += t["payload_scalars"]
        return CommStats(max(rounds, 1), max(up.values()), max(down.values()), by_round)

    def dump_trace(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            for t in self.trace:
                fh.write(json.dumps(t) + "\n")


# ---------------------------------------------------------------- local plans

@dataclass(frozen=True)
class LocalPlan:
    """How a worker computes its local estimate.

    ``kind`` is one of lasso, ridge, pce, ols. Lasso uses ``lam`` when given,
    otherwise K-fold CV; ridge uses the HK value or CV; PCE uses ``P_r`` when
    one is supplied, otherwise the batch's own leading eigenvectors.
    """

    kind: str = "lasso"
    lam: float | None = None
    folds: int = 5
    cv_seed: int = 0
    ridge_tuning: str = "hk"
    r: int | None = None

    def fit(self, batch, P_r=None):
        if self.kind == "lasso":
            lam = self.lam if self.lam is not None else cv_select_lambda(
                batch, self.folds, seed=self.cv_seed)
            return lasso_fit(batch, lam)
        if self.kind == "ridge":
            if self.ridge_tuning == "hk":
                s = hk_ridge_value(batch)
            else:
                s = cv_select_ridge(batch, self.folds, seed=self.cv_seed)
            return ridge_fit(batch, s)
        if self.kind == "pce":
            if P_r is None:
                P_r = pca_basis(batch.X.T @ batch.X / batch.m, self.r)[1]
            return pce_fit(batch, P_r)
        if self.kind == "ols":
            return ols_fit(batch)
        raise ValueError(f"unknown local estimator {self.kind!r}")


@dataclass(frozen=True)
class LinearSessionConfig:
    plan: LocalPlan = field(default_factory=LocalPlan)
    adj: AdjustmentSpec = field(default_factory=AdjustmentSpec)
    proj: ProjectionSpec = field(default_factory=ProjectionSpec)
    stacked: bool = False
    parallel: bool = False


@dataclass(frozen=True)
class NonlinearSessionConfig:
    f: object
    grad_f: object
    init_fn: object
    adj: AdjustmentSpec = field(default_factory=AdjustmentSpec)
    proj: ProjectionSpec = field(default_factory=ProjectionSpec)
    tol: float = 1e-4
    max_outer: int = 25
    nls_tol: float = 1e-9
    parallel: bool = False


# ---------------------------------------------------------------- workers

class LinearWorker:
    def __init__(self, name, batch, method, cfg, net):
        self.name, self._batch, self.method, self.cfg, self.net = name, batch, method, cfg, net
        self._fit = None

    def _send(self, kind, payload, rnd):
        self.net.send(Message(kind, payload, rnd, self.name, COORDINATOR))

    def start(self):
        """Round-one upload (no prompt from the coordinator needed)."""
        b, cfg = self._batch, self.cfg
        two_round = self.method == "DC_pce" or (self.method == "AV" and cfg.plan.kind == "pce")
        if two_round:
            self._send("GramSummary", {"xtx": b.X.T @ b.X}, 1)
            return
        fit = self._fit = cfg.plan.fit(b)
        if self.method == "race":
            s = summarize_linear(b, fit, cfg.adj)
            self._send("GramSummary", {"gram": s.gram}, 1)
            self._send("LocalFitMsg", {"beta_hat": s.beta_hat, "beta_ra": s.beta_ra}, 1)
        elif self.method == "AV":
            ra = residual_adjust(b, fit, ridge_inverse(fit.gram, cfg.adj.k1))
            self._send("LocalFitMsg", {"beta_ra": ra}, 1)
        elif self.method == "DC_lasso":
            self._send("GramSummary", {"gram": fit.gram}, 1)
            self._send("LocalFitMsg", {"beta_hat": fit.beta_hat}, 1)
        elif self.method == "DC_ridge":
            self._send("GramSummary", {"A": ridge_weight(b, fit)}, 1)
            self._send("LocalFitMsg", {"beta_hat": fit.beta_hat}, 1)
        else:
            raise ValueError(f"unknown linear method {self.method!r}")

    def step(self):
        b = self._batch
        for msg in self.net.receive(self.name):
            if msg.kind == "Done":
                continue
            P_r = msg.payload["P_r"]
            if self.method == "DC_pce":
                Z = b.X @ P_r
                self._send("GramSummary", {"ztz": Z.T @ Z}, msg.round + 1)
                self._send("LocalFitMsg", {"zty": Z.T @ b.y}, msg.round + 1)
            else:
                fit = pce_fit(b, P_r)
                ra = residual_adjust(b, fit, ridge_inverse(fit.gram, self.cfg.adj.k1))
                self._send("LocalFitMsg", {"beta_ra": ra}, msg.round + 1)


class NonlinearWorker:
    def __init__(self, name, batch, cfg, net):
        self.name, self._batch, self.cfg, self.net = name, batch, cfg, net
        b = batch
        self.fit = nls_fit(b, cfg.f, cfg.grad_f, cfg.init_fn(b), tol=cfg.nls_tol)
        self._H = build_H(b, self.fit, cfg.grad_f, cfg.adj.k1)

    def _send(self, kind, payload, rnd):
        self.net.send(Message(kind, payload, rnd, self.name, COORDINATOR))

    def send_local_fit(self):
        self._send("LocalFitMsg", {"beta_hat": self.fit.beta_hat}, 0)

    def step(self):
        for msg in self.net.receive(self.name):
            if msg.kind != "BetaBroadcast":
                continue
            beta = msg.payload["beta"]
            c = nonlinear_compress(self._batch, self._H, self.cfg.f, self.cfg.grad_f, beta)
            payload = {"Hf": c.Hf, "HJ": c.HJ}
            if msg.round == 1:
                s = nonlinear_static(self._batch, self._H)
                payload.update(Hy=s.Hy, S=s.S)
            self._send("CompressedNL", payload, msg.round)


# ---------------------------------------------------------------- sessions

def _names(n):
    return [f"worker-{j}" for j in range(n)]


def _run_all(fn, items, parallel):
    if parallel:
        with ThreadPoolExecutor() as ex:
            return list(ex.map(fn, items))
    return [fn(x) for x in items]


def _collect(net, names):
    """Coordinator inbox grouped by sender, in worker order."""
    by = {n: {} for n in names}
    for msg in net.receive(COORDINATOR):
        by[msg.src].update(msg.payload)
    return [by[n] for n in names]


def run_linear_session(batches, method, config=None, trace_path=None):
    """Execute a linear plan as message passing; returns (result, CommStats)."""
    cfg = config or LinearSessionConfig()
    p = batches[0].p
    dims = {p}
    if cfg.plan.r is not None:
        dims.add(cfg.plan.r)
    net = Network(dims)
    names = _names(len(batches))
    net.register(COORDINATOR)
    workers = []
    for n, b in zip(names, batches):
        net.register(n)
        workers.append(LinearWorker(n, b, method, cfg, net))
    _run_all(lambda w: w.start(), workers, cfg.parallel)
    up = _collect(net, names)
    rnd = 1

    two_round = method == "DC_pce" or (method == "AV" and cfg.plan.kind == "pce")
    if two_round:
        P_r = global_pca_basis([u["xtx"] for u in up], cfg.plan.r)
        for n in names:
            net.send(Message("EigenBroadcast", {"P_r": P_r}, rnd, COORDINATOR, n))
        _run_all(lambda w: w.step(), workers, cfg.parallel)
        up = _collect(net, names)
        rnd = 2

    if method == "race":
        summaries = [LinearSummary(u["gram"], u["beta_hat"], u["beta_ra"], j)
                     for j, u in enumerate(up)]
        result = race_from_summaries(summaries, cfg.adj, cfg.proj, stacked=cfg.stacked)
    elif method == "AV":
        result = simple_average([u["beta_ra"] for u in up], rounds=rnd)
    elif method == "DC_lasso":
        fits = [LocalFit(u["beta_hat"], "lasso", u["gram"]) for u in up]
        result = dc_lasso(fits)
    elif method == "DC_ridge":
        fits = [LocalFit(u["beta_hat"], "ridge", None) for u in up]
        result = dc_ridge(fits, [u["A"] for u in up])
    elif method == "DC_pce":
        result = dc_pce_from_summaries([u["ztz"] for u in up], [u["zty"] for u in up], P_r)
    else:
        raise ValueError(f"unknown linear method {method!r}")

    for n in names:
        net.send(Message("Done", {}, rnd, COORDINATOR, n))
    _run_all(lambda w: w.step(), workers, cfg.parallel)
    if trace_path is not None:
        net.dump_trace(trace_path)
    return result, net.stats(names)


def run_nonlinear_session(batches, config, trace_path=None):
    """Iterative nonlinear race as message passing; rounds = outer iterations.

    Round 0 fetches the starting value (worker 0's local estimate). In round
    t >= 1 the coordinator broadcasts the iterate and each worker returns
    ``H f`` and ``H fdot`` at it (plus ``H y`` and ``H H'`` in round 1).
    """
    cfg = config
    net = Network({batches[0].p})
    names = _names(len(batches))
    net.register(COORDINATOR)
    for n in names:
        net.register(n)
    workers = _run_all(lambda nb: NonlinearWorker(nb[0], nb[1], cfg, net),
                       list(zip(names, batches)), cfg.parallel)

    workers[0].send_local_fit()
    beta = net.receive(COORDINATOR)[0].payload["beta_hat"]
    agg = None
    cond = np.nan
    for t in range(1, cfg.max_outer + 1):
        for n in names:
            net.send(Message("BetaBroadcast", {"beta": beta}, t, COORDINATOR, n))
        _run_all(lambda w: w.step(), workers, cfg.parallel)
        up = _collect(net, names)
        if agg is None:
            statics = [NonlinearStatic(u["Hy"], u["S"], j) for j, u in enumerate(up)]
            agg = NonlinearAggregator(statics, cfg.proj, cfg.adj.weight_mode)
        comp = [NonlinearCompressed(u["Hf"], u["HJ"], j) for j, u in enumerate(up)]
        new, cond = agg.update(comp, beta)
        change = float(np.max(np.abs(new - beta)))
        beta = new
        if change < cfg.tol:
            break
    else:
        raise ConvergenceError(f"nonlinear session did not converge in {cfg.max_outer} rounds",
                               change)
    for n in names:
        net.send(Message("Done", {}, t, COORDINATOR, n))
    if trace_path is not None:
        net.dump_trace(trace_path)
    est = GlobalEstimate(beta, "race_nonlinear", cfg.proj.R, t, cond)
    return est, net.stats(names)
