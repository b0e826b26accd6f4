"""Constrained gradient attacks: CPGD with its fixed decay schedule and CAPGD
with momentum, checkpointed step halving, per-iteration repair and two
starting points."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .constraints import ConstraintSet
from .model import Classifier, attack_objective
from .perturbation import Budget, lp_norm
from .results import AttackResult, domain_of, example_rngs, finalize, repair_scaled

ABLATIONS = ("NREP", "NINI", "NRAN", "NADA")


@dataclass(frozen=True)
class CpgdConfig:
    n_iter: int = 10
    M: int = 7

    def __post_init__(self):
        if self.n_iter < 1:
            raise ValueError("n_iter must be >= 1")
        if self.M < 1:
            raise ValueError("M must be >= 1")


@dataclass(frozen=True)
class CapgdConfig:
    n_iter: int = 10
    alpha: float = 0.75
    rho: float = 0.75
    ablation: frozenset = field(default_factory=frozenset)
    seed: int = 0

    def __post_init__(self):
        if self.n_iter < 1:
            raise ValueError("n_iter must be >= 1")
        if not 0 <= self.alpha <= 1:
            raise ValueError("alpha must be in [0, 1]")
        if not 0 < self.rho < 1:
            raise ValueError("rho must be in (0, 1)")
        abl = frozenset(a.upper() for a in self.ablation)
        unknown = abl - set(ABLATIONS)
        if unknown:
            raise ValueError(f"unknown ablation flag(s) {sorted(unknown)}; choose from {ABLATIONS}")
        object.__setattr__(self, "ablation", abl)


def cpgd_schedule(k: int, K: int, M: int, epsilon: float) -> float:
    """Step size of CPGD at iteration ``k`` out of ``K``."""
    period = max(K // M, 1)
    # dividing by an exact power of ten keeps the result correctly rounded
    return epsilon / 10.0 ** (1 + k // period)


def capgd_checkpoints(n_iter: int) -> list[int]:
    """Iterations at which CAPGD may halve its step."""
    if n_iter < 1:
        raise ValueError("n_iter must be >= 1")
    p = [0.0, 0.22]
    while True:
        nxt = round(p[-1] + max(p[-1] - p[-2] - 0.03, 0.06), 10)
        if nxt > 1:
            break
        p.append(nxt)
    # round before ceil so that e.g. 0.7 * 10 does not become 8
    ws = {math.ceil(round(pj * n_iter, 9)) for pj in p}
    ws.add(n_iter)
    return sorted(w for w in ws if w <= n_iter)


class StepController:
    """Step size, loss history and best-so-far bookkeeping for a batch of
    CAPGD runs."""

    def __init__(self, eta0, checkpoints, rho: float = 0.75, batch: int = 1):
        self.eta = np.full(batch, float(eta0)) if np.ndim(eta0) == 0 else np.array(eta0, dtype=float)
        self.checkpoints = list(checkpoints)
        self.rho = rho
        self.losses: list[np.ndarray] = []
        self.lmax = np.full(len(self.eta), -np.inf)
        self.x_max = None
        self.checkpoint_eta: dict[int, np.ndarray] = {}
        self.checkpoint_lmax: dict[int, np.ndarray] = {}
        self.halvings = np.zeros(len(self.eta), dtype=int)

    def record(self, loss, x=None) -> np.ndarray:
        """Append L'(x^(k)); returns the rows where the best loss improved."""
        loss = np.asarray(loss, dtype=float)
        self.losses.append(loss)
        better = loss > self.lmax
        self.lmax = np.where(better, loss, self.lmax)
        if x is not None:
            self.x_max = x.copy() if self.x_max is None else np.where(better[:, None], x, self.x_max)
        return better

    def mark(self, j: int) -> None:
        self.checkpoint_eta[j] = self.eta.copy()
        self.checkpoint_lmax[j] = self.lmax.copy()

    def increases(self, j: int) -> np.ndarray:
        w0, w1 = self.checkpoints[j - 1], self.checkpoints[j]
        L = np.stack(self.losses[w0:w1 + 1])
        return (L[1:] > L[:-1]).sum(axis=0)

    def should_halve(self, j: int) -> np.ndarray:
        """Halving test at checkpoint ``j`` (>= 1): too few loss increases in
        the window, or neither the step nor the best loss moved since the
        previous checkpoint."""
        w0, w1 = self.checkpoints[j - 1], self.checkpoints[j]
        few_increases = self.increases(j) < self.rho * (w1 - w0)
        stalled = (self.checkpoint_eta[j - 1] == self.eta) & (self.checkpoint_lmax[j - 1] == self.lmax)
        return few_increases | stalled

    def checkpoint(self, j: int) -> np.ndarray:
        """Decide at checkpoint ``j``, halve where needed; returns the mask."""
        halve = self.should_halve(j)
        self.mark(j)
        self.eta = np.where(halve, self.eta / 2, self.eta)
        self.halvings += halve
        return halve


def _direction(g, mask, norm):
    g = g * mask
    if norm == "Linf":
        return np.sign(g)
    return g / np.maximum(lp_norm(g, "L2"), 1e-12)[:, None]


def cpgd(
    model: Classifier,
    X,
    Y,
    omega: ConstraintSet,
    cfg: CpgdConfig = CpgdConfig(),
    budget: Budget = Budget(),
    example_ids=None,
) -> AttackResult:
    """Projected gradient ascent on ``CE - penalty`` with a fixed step decay,
    followed each step by projection, type rounding and repair."""
    t0 = time.perf_counter()
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.asarray(Y, dtype=int)
    domain = domain_of(model, omega)
    x = X.copy()
    if len(X):
        for k in range(cfg.n_iter):
            eta = cpgd_schedule(k, cfg.n_iter, cfg.M, budget.epsilon)
            obj = attack_objective(model, x, X, Y, omega)
            x = domain.project(x + eta * _direction(obj.grad, domain.mask, budget.norm), X, budget)
            x = domain.round_types(x)
            x = repair_scaled(omega, x, X, model.scaler)
    adv, success = finalize(model, X, Y, omega, budget, domain, x)
    return AttackResult(adv, success, np.full(len(X), cfg.n_iter), time.perf_counter() - t0, "cpgd")


def _capgd_run(model, X, Y, omega, domain, budget, cfg: CapgdConfig, x0, trace=False):
    """One batched run of the adaptive loop from starting points ``x0``."""
    n = len(X)
    repair_each = "NREP" not in cfg.ablation
    adaptive = "NADA" not in cfg.ablation
    mask = domain.mask
    W = capgd_checkpoints(cfg.n_iter)
    ctrl = StepController(2 * budget.epsilon, W, cfg.rho, n)

    found = np.zeros(n, bool)
    x_found = X.copy()
    first_hit = np.full(n, cfg.n_iter)

    def note_valid(x, obj, k):
        nonlocal found, x_found
        ok = obj.satisfied & (obj.predicted != Y) & domain.contains(x, X, budget)
        x_found = np.where(ok[:, None], x, x_found)
        first_hit[ok & ~found] = k
        found = found | ok

    obj0 = attack_objective(model, x0, X, Y, omega)
    note_valid(x0, obj0, 0)
    x1 = domain.project(x0 + ctrl.eta[:, None] * _direction(obj0.grad, mask, budget.norm), X, budget)
    x1 = domain.round_types(x1)
    obj1 = attack_objective(model, x1, X, Y, omega)
    note_valid(x1, obj1, 1)
    ctrl.record(obj0.total, x0)
    ctrl.record(obj1.total, x1)
    grad_max = np.where((obj1.total > obj0.total)[:, None], obj1.grad, obj0.grad)
    ctrl.mark(0)
    lmax_trace = [ctrl.lmax.copy()]
    eta_trace = [ctrl.eta.copy()]

    x_prev, x_cur, g_cur = x0, x1, obj1.grad
    for k in range(1, cfg.n_iter):
        step = ctrl.eta[:, None] * _direction(g_cur, mask, budget.norm)
        z = domain.project(x_cur + step, X, budget)
        x_new = x_cur + cfg.alpha * (z - x_cur) + (1 - cfg.alpha) * (x_cur - x_prev)
        x_new = domain.round_types(domain.project(x_new, X, budget))
        if repair_each:
            x_new = repair_scaled(omega, x_new, X, model.scaler)
        obj = attack_objective(model, x_new, X, Y, omega)
        note_valid(x_new, obj, k + 1)
        better = ctrl.record(obj.total, x_new)
        grad_max = np.where(better[:, None], obj.grad, grad_max)
        x_prev, x_cur, g_cur = x_cur, x_new, obj.grad
        if adaptive and k in W:
            j = W.index(k)
            halve = ctrl.checkpoint(j)
            # restart halved rows from the best point found so far
            x_cur = np.where(halve[:, None], ctrl.x_max, x_cur)
            x_prev = np.where(halve[:, None], ctrl.x_max, x_prev)
            g_cur = np.where(halve[:, None], grad_max, g_cur)
        lmax_trace.append(ctrl.lmax.copy())
        eta_trace.append(ctrl.eta.copy())

    x_best = ctrl.x_max
    if not repair_each:
        x_best = repair_scaled(omega, x_best, X, model.scaler)
        obj = attack_objective(model, x_best, X, Y, omega)
        note_valid(x_best, obj, cfg.n_iter)
    x_out = np.where(found[:, None], x_found, x_best)
    out = {"x": x_out, "found": found, "lmax": ctrl.lmax, "iterations": first_hit}
    if trace:
        out["lmax_trace"] = np.stack(lmax_trace)
        out["eta_trace"] = np.stack(eta_trace)
    return out


def capgd(
    model: Classifier,
    X,
    Y,
    omega: ConstraintSet,
    cfg: CapgdConfig = CapgdConfig(),
    budget: Budget = Budget(),
    example_ids=None,
    trace: bool = False,
) -> AttackResult:
    """Constrained adaptive PGD, run from the clean row and from a random
    point of the ball; the better of the two outcomes is kept per example."""
    t0 = time.perf_counter()
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.asarray(Y, dtype=int)
    n = len(X)
    domain = domain_of(model, omega)
    ids = np.arange(n) if example_ids is None else np.asarray(example_ids)
    if n == 0:
        return AttackResult(X.copy(), np.zeros(0, bool), np.zeros(0, int), 0.0, "capgd")

    starts = []
    use_clean = "NINI" not in cfg.ablation or "NRAN" in cfg.ablation
    use_random = "NRAN" not in cfg.ablation
    if use_clean:
        starts.append(("clean", X.copy()))
    if use_random:
        rngs = example_rngs(cfg.seed, ids)
        x_rand = np.stack([domain.sample(X[i], budget, rngs[i]) for i in range(n)])
        starts.append(("random", x_rand))

    runs = {name: _capgd_run(model, X, Y, omega, domain, budget, cfg, x0, trace) for name, x0 in starts}
    best = None
    for name, _ in starts:
        r = runs[name]
        if best is None:
            best = dict(r)
            continue
        # successful beats unsuccessful; otherwise the higher best loss wins
        take = (r["found"] & ~best["found"]) | ((r["found"] == best["found"]) & (r["lmax"] > best["lmax"]))
        for key in ("x", "found", "lmax", "iterations"):
            best[key] = np.where(take[:, None] if best[key].ndim == 2 else take, r[key], best[key])

    adv, success = finalize(model, X, Y, omega, budget, domain, best["x"])
    result = AttackResult(adv, success, best["iterations"], time.perf_counter() - t0, "capgd")
    if trace:
        result.trace = {name: {k: v for k, v in r.items() if k != "x"} for name, r in runs.items()}
    return result
