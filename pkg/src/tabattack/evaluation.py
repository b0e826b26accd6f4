"""Robust-accuracy protocol, success sets and coverage, budget sweeps and the
CAPGD ablation matrix, plus the JSON/CSV/SVG report they all produce."""

from __future__ import annotations

import csv
import io
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from itertools import product
from pathlib import Path

import numpy as np

from .caa import STAGES, caa
from .constraints import ConstraintSet
from .gradient import ABLATIONS, CapgdConfig, CpgdConfig, capgd, cpgd
from .model import Classifier
from .moeva import MoevaConfig, moeva
from .perturbation import Budget
from .results import AttackResult, is_adv

log = logging.getLogger(__name__)

REPORT_VERSION = 1
ATTACKS = ("cpgd", "capgd", "moeva", "caa")
SWEEP_AXES = ("epsilon", "capgd_iters", "moeva_iters")
DEFAULT_GRIDS = {
    "epsilon": (0.25, 0.5, 1.0, 5.0),
    "capgd_iters": (5, 10, 20, 100),
    "moeva_iters": (50, 100, 200, 1000),
}


class ConfigError(ValueError):
    """An attack configuration document does not match its schema."""


# --- attack configuration ---------------------------------------------------

_COMMON = {"attack", "epsilon", "norm", "seed"}
_KEYS = {
    "cpgd": _COMMON | {"n_iter", "M"},
    "capgd": _COMMON | {"n_iter", "alpha", "rho", "ablation"},
    "moeva": _COMMON | {"n_gen", "n_off", "n_pop"},
    "caa": _COMMON | {"stages", "capgd", "moeva"},
}


@dataclass(frozen=True)
class AttackSetup:
    """A fully resolved attack: which one, its budget and its settings."""

    name: str
    budget: Budget = Budget()
    seed: int = 0
    cpgd: CpgdConfig = CpgdConfig()
    capgd: CapgdConfig = CapgdConfig()
    moeva: MoevaConfig = MoevaConfig()
    stages: tuple = STAGES
    label: str = ""

    @property
    def title(self) -> str:
        return self.label or self.name

    def with_seed(self, seed: int) -> "AttackSetup":
        return replace(
            self, seed=seed, capgd=replace(self.capgd, seed=seed), moeva=replace(self.moeva, seed=seed)
        )

    def run(self, model: Classifier, X, Y, omega: ConstraintSet) -> AttackResult:
        if self.name == "cpgd":
            return cpgd(model, X, Y, omega, self.cpgd, self.budget)
        if self.name == "capgd":
            return capgd(model, X, Y, omega, self.capgd, self.budget)
        if self.name == "moeva":
            return moeva(model, X, Y, omega, self.moeva, self.budget)
        return caa(model, X, Y, omega, self.budget, self.capgd, self.moeva, self.stages, cpgd_cfg=self.cpgd)

    def to_json(self) -> dict:
        doc = {"attack": self.name, "epsilon": self.budget.epsilon, "norm": self.budget.norm, "seed": self.seed}
        capgd_doc = {
            "n_iter": self.capgd.n_iter,
            "alpha": self.capgd.alpha,
            "rho": self.capgd.rho,
            "ablation": sorted(self.capgd.ablation),
        }
        moeva_doc = {"n_gen": self.moeva.n_gen, "n_off": self.moeva.n_off, "n_pop": self.moeva.n_pop}
        if self.name == "cpgd":
            doc.update(n_iter=self.cpgd.n_iter, M=self.cpgd.M)
        elif self.name == "capgd":
            doc.update(capgd_doc)
        elif self.name == "moeva":
            doc.update(moeva_doc)
        else:
            doc.update(stages=list(self.stages), capgd=capgd_doc, moeva=moeva_doc)
        return doc


def _pick(doc: dict, keys, where: str) -> dict:
    unknown = sorted(set(doc) - set(keys))
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {unknown}; allowed {sorted(keys)}")
    return doc


def _build(cls, doc: dict, mapping: dict, where: str):
    kwargs = {}
    for key, attr in mapping.items():
        if key in doc:
            kwargs[attr] = doc[key]
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


def parse_attack_config(doc: dict | None = None, attack: str | None = None) -> AttackSetup:
    """Resolve an attack config document. ``attack`` (e.g. from the command
    line) overrides or supplies the ``attack`` key."""
    doc = dict(doc or {})
    name = attack or doc.get("attack")
    if name is None:
        raise ConfigError("no attack given; choose one of " + ", ".join(ATTACKS))
    if name not in ATTACKS:
        raise ConfigError(f"unknown attack {name!r}; choose one of " + ", ".join(ATTACKS))
    if doc.get("attack", name) != name:
        log.info("attack %r from the command line overrides %r in the config", name, doc["attack"])
    _pick(doc, _KEYS[name], f"{name} config")
    try:
        budget = Budget(float(doc.get("epsilon", 0.5)), doc.get("norm", "L2"))
        seed = int(doc.get("seed", 0))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{name} config: {exc}") from None
    if budget.epsilon <= 0:
        raise ConfigError(f"{name} config: epsilon must be > 0")
    capgd_map = {"n_iter": "n_iter", "alpha": "alpha", "rho": "rho", "ablation": "ablation"}
    moeva_map = {"n_gen": "n_gen", "n_off": "n_off", "n_pop": "n_pop"}
    setup = AttackSetup(name, budget, seed)
    if name == "cpgd":
        setup = replace(setup, cpgd=_build(CpgdConfig, doc, {"n_iter": "n_iter", "M": "M"}, "cpgd config"))
    elif name == "capgd":
        setup = replace(setup, capgd=_build(CapgdConfig, _ablation(doc), capgd_map, "capgd config"))
    elif name == "moeva":
        setup = replace(setup, moeva=_build(MoevaConfig, doc, moeva_map, "moeva config"))
    else:
        stages = tuple(doc.get("stages", STAGES))
        bad = [s for s in stages if s not in ("cpgd", "capgd", "moeva")]
        if bad or not stages:
            raise ConfigError(f"caa config: stages must be a non-empty list drawn from cpgd, capgd, moeva; got {list(stages)}")
        sub_c = _pick(dict(doc.get("capgd", {})), set(capgd_map), "caa.capgd config")
        sub_m = _pick(dict(doc.get("moeva", {})), set(moeva_map), "caa.moeva config")
        setup = replace(
            setup,
            stages=stages,
            capgd=_build(CapgdConfig, _ablation(sub_c), capgd_map, "caa.capgd config"),
            moeva=_build(MoevaConfig, sub_m, moeva_map, "caa.moeva config"),
        )
    return setup.with_seed(seed)


def _ablation(doc: dict) -> dict:
    if "ablation" in doc:
        doc = dict(doc)
        abl = doc["ablation"]
        doc["ablation"] = frozenset([abl] if isinstance(abl, str) else abl)
    return doc


# --- metrics ----------------------------------------------------------------


def robust_accuracy(model: Classifier, X_eval, X_adv, Y, omega: ConstraintSet, budget: Budget) -> float:
    """Share of rows that are classified correctly and were not broken by a
    valid adversarial. Returns nan for an empty evaluation set."""
    X_eval = np.atleast_2d(np.asarray(X_eval, dtype=float))
    Y = np.asarray(Y, dtype=int)
    if len(Y) == 0:
        return float("nan")
    wrong = model.predict(X_eval) != Y
    broken = is_adv(X_adv, X_eval, Y, model, omega, budget)
    return float(1.0 - np.mean(wrong | broken))


def success_set(result, ids=None) -> frozenset:
    """Indices of rows the attack broke. Given several results (one per
    seed), the union of their sets."""
    if isinstance(result, AttackResult):
        idx = np.flatnonzero(result.success)
        if ids is not None:
            idx = np.asarray(ids)[idx]
        return frozenset(int(i) for i in idx)
    out = frozenset()
    for r in result:
        out |= success_set(r, ids)
    return out


def coverage(C_A, C_B) -> float:
    """|C_B| / |C_A ∪ C_B|: how much of the joint success set B accounts for."""
    A, B = set(C_A), set(C_B)
    union = A | B
    if not union:
        log.info("coverage of two empty success sets taken as 1.0")
        return 1.0
    return len(B) / len(union)


# --- reports ----------------------------------------------------------------


def _stats(values) -> dict:
    v = np.asarray(values, dtype=float)
    if len(v) == 0:
        return {"mean": None, "std": None}
    return {"mean": float(np.mean(v)), "std": float(np.std(v))}


@dataclass
class AttackSummary:
    name: str
    config: dict
    robust_accuracy: list  # one entry per seed
    durations: list
    success_sets: list  # one sorted index list per seed

    @property
    def success_union(self) -> list:
        return sorted(set().union(*map(set, self.success_sets))) if self.success_sets else []

    def to_json(self, timing: bool = True) -> dict:
        return {
            "name": self.name,
            "config": self.config,
            "robust_accuracy": {**_stats(self.robust_accuracy), "per_seed": list(self.robust_accuracy)},
            "duration_s": _stats(self.durations) if timing else {"mean": None, "std": None},
            "success_indices": self.success_union,
            "success_indices_per_seed": [list(s) for s in self.success_sets],
        }


@dataclass
class EvaluationReport:
    attacks: list
    seeds: list
    clean_accuracy: float
    n_eval: int
    dataset: str = ""
    model_file: str = ""
    kind: str = "evaluate"
    grid: dict | None = None

    @property
    def robust_accuracy(self) -> dict:
        return {a.name: float(np.mean(a.robust_accuracy)) for a in self.attacks}

    @property
    def durations(self) -> dict:
        return {a.name: float(np.mean(a.durations)) for a in self.attacks}

    @property
    def success_sets(self) -> dict:
        return {a.name: frozenset(a.success_union) for a in self.attacks}

    def coverage_matrix(self) -> tuple[list, np.ndarray]:
        """Names and the matrix ``M[i, j] = coverage(C_i, C_j)``."""
        names = [a.name for a in self.attacks]
        sets = self.success_sets
        M = np.array([[coverage(sets[a], sets[b]) for b in names] for a in names])
        return names, M

    def to_json(self, timing: bool = True) -> dict:
        names, M = self.coverage_matrix()
        pairs = [
            {"a": a, "b": b, "coverage": float(M[i, j])}
            for (i, a), (j, b) in product(enumerate(names), enumerate(names))
        ]
        doc = {
            "report_version": REPORT_VERSION,
            "kind": self.kind,
            "dataset": self.dataset,
            "model_file": self.model_file,
            "seeds": list(self.seeds),
            "n_eval": self.n_eval,
            "clean_accuracy": self.clean_accuracy,
            "attacks": [a.to_json(timing) for a in self.attacks],
            "coverage": {"pairs": pairs, "matrix": {"names": names, "values": M.tolist()}},
        }
        if self.grid is not None:
            doc["grid"] = self.grid
        return doc

    def dumps(self, timing: bool = True) -> str:
        return json.dumps(self.to_json(timing), indent=2, sort_keys=True) + "\n"

    def write(self, path, timing: bool = True) -> None:
        Path(path).write_text(self.dumps(timing), encoding="utf-8")

    def to_csv(self, timing: bool = True) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["attack", "seed", "robust_accuracy", "duration_s", "n_success"])
        for a in self.attacks:
            for seed, ra, t, s in zip(self.seeds, a.robust_accuracy, a.durations, a.success_sets):
                w.writerow([a.name, seed, repr(ra), repr(t) if timing else "", len(s)])
        return buf.getvalue()

    def write_svg(self, path) -> None:
        """Bar chart of robust accuracy per attack, or a line over the grid
        for a sweep. Needs matplotlib."""
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        means = [np.mean(a.robust_accuracy) for a in self.attacks]
        stds = [np.std(a.robust_accuracy) for a in self.attacks]
        fig, ax = plt.subplots(figsize=(6, 3.5))
        if self.grid is not None:
            ax.errorbar(self.grid["values"], means, yerr=stds, marker="o", capsize=3)
            ax.set_xscale("log")
            ax.set_xlabel(self.grid["axis"])
        else:
            ax.bar([a.name for a in self.attacks], means, yerr=stds, capsize=3)
        ax.set_ylabel("robust accuracy")
        ax.set_ylim(0, 1)
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)


# --- drivers ----------------------------------------------------------------


def _map(fn, items, workers: int):
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def evaluate(
    model: Classifier,
    X,
    Y,
    omega: ConstraintSet,
    setups,
    seeds=(0,),
    dataset: str = "",
    model_file: str = "",
    workers: int = 1,
    kind: str = "evaluate",
) -> EvaluationReport:
    """Run every attack setup for every seed on the evaluation rows."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.asarray(Y, dtype=int)
    seeds = [int(s) for s in seeds]
    if not seeds:
        raise ValueError("at least one seed is required")
    setups = list(setups)
    jobs = [(i, s) for i in range(len(setups)) for s in seeds]

    def one(job):
        i, seed = job
        setup = setups[i].with_seed(seed)
        res = setup.run(model, X, Y, omega)
        ra = robust_accuracy(model, X, res.adversarial, Y, omega, setup.budget)
        log.info("%s seed %d: robust accuracy %.4f in %.2fs", setup.title, seed, ra, res.seconds)
        return ra, res.seconds, sorted(success_set(res))

    outcomes = dict(zip(jobs, _map(one, jobs, workers)))
    summaries = []
    for i, setup in enumerate(setups):
        rows = [outcomes[(i, s)] for s in seeds]
        cfg = setup.to_json()
        cfg.pop("seed")
        summaries.append(AttackSummary(setup.title, cfg, [r[0] for r in rows], [r[1] for r in rows], [r[2] for r in rows]))
    clean = float(np.mean(model.predict(X) == Y)) if len(Y) else float("nan")
    return EvaluationReport(summaries, seeds, clean, len(Y), dataset, model_file, kind)


def budget_sweep(
    model: Classifier,
    X,
    Y,
    omega: ConstraintSet,
    axis: str,
    values=None,
    base: AttackSetup | None = None,
    seeds=(0,),
    workers: int = 1,
    **names,
) -> EvaluationReport:
    """One CAA run per grid value with everything else held at ``base``."""
    if axis not in SWEEP_AXES:
        raise ValueError(f"unknown sweep axis {axis!r}; choose from {SWEEP_AXES}")
    values = list(DEFAULT_GRIDS[axis] if values is None else values)
    if not values:
        raise ValueError("sweep needs at least one value")
    base = base or AttackSetup("caa")
    if base.name != "caa":
        base = replace(base, name="caa")
    setups = []
    for v in values:
        if axis == "epsilon":
            if not float(v) > 0:
                raise ValueError(f"epsilon must be > 0, got {v}")
            s = replace(base, budget=Budget(float(v), base.budget.norm))
        elif axis == "capgd_iters":
            s = replace(base, capgd=replace(base.capgd, n_iter=int(v)))
        else:
            s = replace(base, moeva=replace(base.moeva, n_gen=int(v)))
        setups.append(replace(s, label=f"caa[{axis}={v}]"))
    report = evaluate(model, X, Y, omega, setups, seeds, workers=workers, kind="sweep", **names)
    report.grid = {"axis": axis, "values": values}
    return report


def ablation_matrix(
    model: Classifier,
    X,
    Y,
    omega: ConstraintSet,
    budget: Budget = Budget(),
    seeds=(0,),
    capgd_cfg: CapgdConfig = CapgdConfig(),
    workers: int = 1,
    **names,
) -> EvaluationReport:
    """CAPGD and its four single-component removals, with pairwise coverage."""
    base = AttackSetup("capgd", budget, capgd=replace(capgd_cfg, ablation=frozenset()))
    setups = [base] + [
        replace(base, capgd=replace(base.capgd, ablation=frozenset([flag])), label=f"capgd-{flag}")
        for flag in ABLATIONS
    ]
    return evaluate(model, X, Y, omega, setups, seeds, workers=workers, kind="ablation", **names)


__all__ = [
    "ATTACKS",
    "AttackSetup",
    "AttackSummary",
    "ConfigError",
    "DEFAULT_GRIDS",
    "EvaluationReport",
    "SWEEP_AXES",
    "ablation_matrix",
    "budget_sweep",
    "coverage",
    "evaluate",
    "parse_attack_config",
    "robust_accuracy",
    "success_set",
]
