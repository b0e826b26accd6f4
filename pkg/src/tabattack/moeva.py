"""MOEVA: gradient-free multi-objective evolutionary attack.

Each example evolves its own population, minimising three objectives:
probability of the true class, L2 distance to the clean row, and the
constraint penalty. Survival follows NSGA-II (non-dominated rank, then
crowding distance). Populations for all examples are stored in one
``(batch, population, d)`` array and advanced together.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .constraints import ConstraintSet, penalty
from .features import unscale
from .model import Classifier
from .perturbation import Budget, lp_norm
from .results import AttackResult, domain_of, example_rngs, finalize, repair_scaled

_UNRANKED = np.iinfo(np.int32).max


@dataclass(frozen=True)
class MoevaConfig:
    n_gen: int = 100
    n_off: int = 100
    n_pop: int = 200
    seed: int = 0
    crossover_prob: float = 0.9
    mutation_scale: float = 0.1  # Gaussian sigma as a fraction of epsilon

    def __post_init__(self):
        if self.n_pop < 2:
            raise ValueError("n_pop must be >= 2")
        if self.n_off < 1:
            raise ValueError("n_off must be >= 1")
        if self.n_gen < 1:
            raise ValueError("n_gen must be >= 1")


def objectives(model: Classifier, candidate, x_orig, y, omega: ConstraintSet):
    """``(f1, f2, f3)``: true-class probability, scaled L2 distance and
    constraint penalty. Accepts single rows or batches."""
    c = np.asarray(candidate, dtype=float)
    single = c.ndim == 1
    c2 = np.atleast_2d(c)
    x0 = np.broadcast_to(np.atleast_2d(x_orig), c2.shape)
    y = np.broadcast_to(np.asarray(y, dtype=int), (len(c2),))
    probs = model.predict_proba(c2)
    f1 = probs[np.arange(len(c2)), y]
    f2 = lp_norm(c2 - x0, "L2")
    f3 = penalty(omega, unscale(c2, model.scaler), unscale(x0, model.scaler))
    if single:
        return float(f1[0]), float(f2[0]), float(f3[0])
    return f1, f2, f3


def non_dominated_rank(F, n_needed: int | None = None) -> np.ndarray:
    """Pareto rank (0 = non-dominated) of each row of ``F`` (batch, P, M),
    all objectives minimised. Peeling stops once ``n_needed`` individuals
    per batch are ranked; the rest get a large sentinel rank."""
    F = np.asarray(F, dtype=float)
    B, P, M = F.shape
    # compare dense per-objective ranks (ties share a rank): same order,
    # but int16 comparisons are much cheaper than float ones
    rows = np.arange(B)[:, None]
    le = np.ones((B, P, P), bool)
    tmp = np.empty((B, P, P), bool)
    for m in range(M):
        order = np.argsort(F[..., m], axis=1, kind="stable")
        fs = F[..., m][rows, order]
        dense = np.zeros((B, P), np.int16)
        dense[:, 1:] = np.cumsum(fs[:, 1:] != fs[:, :-1], axis=1)
        r = np.empty((B, P), np.int16)
        r[rows, order] = dense
        np.less_equal(r[:, :, None], r[:, None, :], out=tmp)
        le &= tmp
    dom = le & ~le.transpose(0, 2, 1)  # dom[b, i, j]: i dominates j
    count = dom.sum(axis=1)
    rank = np.full((B, P), _UNRANKED, dtype=np.int64)
    remaining = np.ones((B, P), bool)
    need = P if n_needed is None else min(n_needed, P)
    r = 0
    while remaining.any():
        front = remaining & (count == 0)
        rank[front] = r
        remaining &= ~front
        if ((P - remaining.sum(axis=1)) >= need).all():
            break
        # each individual leaves exactly once, so only its own row is read
        bi, ii = np.nonzero(front)
        batches, starts = np.unique(bi, return_index=True)
        count[batches] -= np.add.reduceat(dom[bi, ii].astype(np.int64), starts, axis=0)
        r += 1
    return rank


def crowding_distance(F, rank) -> np.ndarray:
    """NSGA-II crowding distance computed within each rank group."""
    F = np.asarray(F, dtype=float)
    B, P, M = F.shape
    rows = np.arange(B)[:, None]
    cd = np.zeros((B, P))
    for m in range(M):
        order = np.lexsort((F[..., m], rank), axis=-1)
        fs = F[..., m][rows, order]
        rs = rank[rows, order]
        first = np.ones((B, P), bool)
        first[:, 1:] = rs[:, 1:] != rs[:, :-1]
        last = np.ones((B, P), bool)
        last[:, :-1] = rs[:, :-1] != rs[:, 1:]
        # spread of each group, broadcast back along the sorted order
        lo_pos = np.maximum.accumulate(np.where(first, np.arange(P), 0), axis=1)
        hi_pos = np.flip(np.minimum.accumulate(np.flip(np.where(last, np.arange(P), P - 1), 1), axis=1), 1)
        span = fs[rows, hi_pos] - fs[rows, lo_pos]
        prev = np.concatenate([fs[:, :1], fs[:, :-1]], axis=1)
        nxt = np.concatenate([fs[:, 1:], fs[:, -1:]], axis=1)
        contrib = np.where(span > 0, (nxt - prev) / np.where(span > 0, span, 1.0), 0.0)
        contrib = np.where(first | last, np.inf, contrib)
        cd[rows, order] += contrib
    return cd


def _survive(F, n_pop):
    """Indices (batch, n_pop) of survivors plus their rank and crowding."""
    B, P, _ = F.shape
    rows = np.arange(B)[:, None]
    rank = non_dominated_rank(F, n_pop)
    cd = crowding_distance(F, rank)
    # the lexicographically best individual is always kept, even when
    # more than n_pop individuals tie on infinite crowding
    lex = np.lexsort((F[..., 2], F[..., 1], F[..., 0]), axis=-1)[:, 0]
    cd[np.arange(B), lex] = np.inf
    first = np.zeros((B, P), bool)
    first[np.arange(B), lex] = True
    order = np.lexsort((-cd, rank, ~first), axis=-1)[:, :n_pop]
    return order, rank[rows, order], cd[rows, order]


class _Evaluator:
    def __init__(self, model, X, Y, omega, budget, domain):
        self.model, self.X, self.Y, self.omega = model, X, Y, omega
        self.budget, self.domain = budget, domain

    def __call__(self, pop):
        """Objectives and validity for ``pop`` (batch, k, d)."""
        B, k, d = pop.shape
        flat = pop.reshape(B * k, d)
        X0 = np.repeat(self.X, k, axis=0)
        Y0 = np.repeat(self.Y, k)
        probs = self.model.predict_proba(flat)
        f1 = probs[np.arange(len(flat)), Y0]
        f2 = lp_norm(flat - X0, "L2")
        raw, raw0 = unscale(flat, self.model.scaler), unscale(X0, self.model.scaler)
        pen = penalty(self.omega, raw, raw0)
        valid = (pen == 0) & self.domain.contains(flat, X0, self.budget)
        success = valid & (np.argmax(probs, axis=1) != Y0)
        F = np.stack([f1, f2, pen], axis=1).reshape(B, k, 3)
        return F, valid.reshape(B, k), success.reshape(B, k)

    def pipeline(self, pop):
        B, k, d = pop.shape
        flat = pop.reshape(B * k, d)
        X0 = np.repeat(self.X, k, axis=0)
        out = self.domain.project(flat, X0, self.budget)
        out = self.domain.round_types(out)
        out = repair_scaled(self.omega, out, X0, self.model.scaler)
        # repair can push a target past its bounds; pull it back and let the
        # penalty objective deal with the broken equality
        lo, hi = self.domain.bounds
        out = np.clip(out, np.minimum(lo, X0), np.maximum(hi, X0))
        return out.reshape(B, k, d)


def moeva(
    model: Classifier,
    X,
    Y,
    omega: ConstraintSet,
    cfg: MoevaConfig = MoevaConfig(),
    budget: Budget = Budget(),
    example_ids=None,
    initial_population=None,
    trace: bool = False,
) -> AttackResult:
    """Evolve one population per example; return the best valid adversarial
    individual found (lowest true-class probability), else the valid
    individual with the lowest true-class probability."""
    t0 = time.perf_counter()
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.asarray(Y, dtype=int)
    B, d = X.shape
    domain = domain_of(model, omega)
    if B == 0:
        return AttackResult(X.copy(), np.zeros(0, bool), np.zeros(0, int), 0.0, "moeva")
    ids = np.arange(B) if example_ids is None else np.asarray(example_ids)
    rngs = example_rngs(cfg.seed, ids)
    mut = np.flatnonzero(domain.mask)
    m = len(mut)
    sigma = cfg.mutation_scale * budget.epsilon
    evaluate = _Evaluator(model, X, Y, omega, budget, domain)
    rows = np.arange(B)[:, None]

    # initial population: the clean row plus jittered copies
    noise = np.stack([r.standard_normal((cfg.n_pop, m)) for r in rngs])
    pop = np.repeat(X[:, None, :], cfg.n_pop, axis=1)
    pop[:, 1:, mut] += sigma * noise[:, 1:]
    pop = evaluate.pipeline(pop)
    pop[:, 0] = X
    if initial_population is not None:
        inj = np.asarray(initial_population, dtype=float).reshape(B, -1, d)
        k = min(inj.shape[1], cfg.n_pop - 1)
        pop[:, 1:1 + k] = inj[:, :k]
    F, valid, success = evaluate(pop)

    best_adv = X.copy()
    best_f1 = np.full(B, np.inf)
    hit_gen = np.full(B, cfg.n_gen)

    def archive(cands, F, success, gen):
        f1 = np.where(success, F[..., 0], np.inf)
        j = np.argmin(f1, axis=1)
        f = f1[np.arange(B), j]
        better = f < best_f1
        best_adv[better] = cands[np.arange(B), j][better]
        hit_gen[better & ~np.isfinite(best_f1)] = gen
        best_f1[better] = f[better]

    archive(pop, F, success, 0)
    order, rank, cd = _survive(F, cfg.n_pop)
    pop, F, valid = pop[rows, order], F[rows, order], valid[rows, order]
    history = [F[np.arange(B), np.lexsort((F[..., 2], F[..., 1], F[..., 0]), axis=-1)[:, 0]]]

    n_off = cfg.n_off
    for gen in range(1, cfg.n_gen + 1):
        u = np.stack([r.random((n_off, 7 + m)) for r in rngs])
        g = np.stack([r.standard_normal((n_off, m)) for r in rngs]) if m else np.zeros((B, n_off, 0))
        # binary tournaments on (rank, -crowding)
        cand = np.minimum((u[..., :4] * cfg.n_pop).astype(int), cfg.n_pop - 1)
        r_c, c_c = rank[rows[..., None], cand], cd[rows[..., None], cand]
        a_wins = (r_c[..., 0::2] < r_c[..., 1::2]) | (
            (r_c[..., 0::2] == r_c[..., 1::2]) & (c_c[..., 0::2] >= c_c[..., 1::2])
        )
        parents = np.where(a_wins, cand[..., 0::2], cand[..., 1::2])
        p1 = pop[rows, parents[..., 0]]
        p2 = pop[rows, parents[..., 1]]
        child = p1.copy()
        if m:
            # two-point crossover over the mutable coordinates
            cuts = np.sort(np.minimum((u[..., 5:7] * (m + 1)).astype(int), m), axis=-1)
            pos = np.arange(m)
            seg = (pos >= cuts[..., :1]) & (pos < cuts[..., 1:2]) & (u[..., 4:5] < cfg.crossover_prob)
            genes = np.where(seg, p2[..., mut], p1[..., mut])
            flip = u[..., 7:7 + m] < 1.0 / m
            genes = genes + np.where(flip, sigma * g, 0.0)
            child[..., mut] = genes
        child = evaluate.pipeline(child)
        Fc, valid_c, success_c = evaluate(child)
        archive(child, Fc, success_c, gen)

        allpop = np.concatenate([pop, child], axis=1)
        allF = np.concatenate([F, Fc], axis=1)
        allvalid = np.concatenate([valid, valid_c], axis=1)
        order, rank, cd = _survive(allF, cfg.n_pop)
        pop, F, valid = allpop[rows, order], allF[rows, order], allvalid[rows, order]
        if trace:
            history.append(F[np.arange(B), np.lexsort((F[..., 2], F[..., 1], F[..., 0]), axis=-1)[:, 0]])

    found = np.isfinite(best_f1)
    f1_valid = np.where(valid, F[..., 0], np.inf)
    j = np.argmin(f1_valid, axis=1)
    fallback = np.where(np.isfinite(f1_valid[np.arange(B), j])[:, None], pop[np.arange(B), j], X)
    x_out = np.where(found[:, None], best_adv, fallback)
    adv, succ = finalize(model, X, Y, omega, budget, domain, x_out)
    result = AttackResult(adv, succ, hit_gen, time.perf_counter() - t0, "moeva")
    if trace:
        result.trace = {"best_objectives": np.stack(history, axis=1), "population": pop, "objectives": F}
    return result
