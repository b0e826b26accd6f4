"""Constrained Adaptive Attack: a sequential ensemble where each stage only
sees the rows that no earlier stage managed to break."""

from __future__ import annotations

import time

import numpy as np

from .constraints import ConstraintSet
from .gradient import CapgdConfig, CpgdConfig, capgd, cpgd
from .model import Classifier
from .moeva import MoevaConfig, moeva
from .perturbation import Budget
from .results import AttackResult, is_adv

STAGES = ("capgd", "moeva")
KNOWN_STAGES = ("cpgd", "capgd", "moeva")

__all__ = ["STAGES", "caa", "is_adv"]


def _run_stage(name, model, X, Y, omega, budget, ids, capgd_cfg, moeva_cfg, cpgd_cfg):
    if name == "capgd":
        return capgd(model, X, Y, omega, capgd_cfg, budget, example_ids=ids)
    if name == "moeva":
        return moeva(model, X, Y, omega, moeva_cfg, budget, example_ids=ids)
    return cpgd(model, X, Y, omega, cpgd_cfg, budget, example_ids=ids)


def caa(
    model: Classifier,
    X,
    Y,
    omega: ConstraintSet,
    budget: Budget = Budget(),
    capgd_cfg: CapgdConfig = CapgdConfig(),
    moeva_cfg: MoevaConfig = MoevaConfig(),
    stages=STAGES,
    example_ids=None,
    cpgd_cfg: CpgdConfig = CpgdConfig(),
) -> AttackResult:
    """Rows that are already adversarial pass through untouched; every other
    row goes through ``stages`` in order until one of them succeeds. Rows no
    stage breaks are returned unchanged.

    ``trace`` holds per-stage wall-clock seconds, attempted row counts and the
    indices each stage broke (the pass-through is reported as ``clean``).
    """
    t0 = time.perf_counter()
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.asarray(Y, dtype=int)
    n = len(X)
    stages = tuple(stages)
    unknown = [s for s in stages if s not in KNOWN_STAGES]
    if unknown:
        raise ValueError(f"unknown stage(s) {unknown}; choose from {KNOWN_STAGES}")
    ids = np.arange(n) if example_ids is None else np.asarray(example_ids)

    out = X.copy()
    iterations = np.zeros(n, dtype=int)
    success = is_adv(X, X, Y, model, omega, budget)
    broken = {"clean": np.flatnonzero(success).tolist()}
    seconds = {}
    attempted = {}
    for name in stages:
        idx = np.flatnonzero(~success)
        attempted[name] = int(len(idx))
        if len(idx) == 0:
            seconds[name] = 0.0
            broken[name] = []
            continue
        ts = time.perf_counter()
        res = _run_stage(name, model, X[idx], Y[idx], omega, budget, ids[idx], capgd_cfg, moeva_cfg, cpgd_cfg)
        seconds[name] = time.perf_counter() - ts
        ok = is_adv(res.adversarial, X[idx], Y[idx], model, omega, budget)
        hit = idx[ok]
        out[hit] = res.adversarial[ok]
        iterations[hit] = res.iterations[ok]
        success[hit] = True
        broken[name] = hit.tolist()

    trace = {"stage_seconds": seconds, "stage_attempted": attempted, "stage_success": broken}
    return AttackResult(out, success, iterations, time.perf_counter() - t0, "caa", trace)
