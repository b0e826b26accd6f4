"""Desk-scale benchmark: synthetic constrained data, a trained MLP and the
critical-class evaluation rows, built deterministically from one seed."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .constraints import ConstraintSet, parse_constraints
from .features import Dataset, SyntheticConfig, generate_synthetic, scale, split
from .model import Classifier, TrainConfig, build_classifier, train
from .perturbation import Budget

TEST_FRACTION = 0.25


@dataclass(frozen=True)
class Benchmark:
    seed: int
    train: Dataset
    test: Dataset
    omega: ConstraintSet
    constraint_text: str
    model: Classifier
    X: np.ndarray  # scaled critical-class test rows
    Y: np.ndarray
    budget: Budget

    @property
    def clean_accuracy(self) -> float:
        return float(np.mean(self.model.predict(self.X) == self.Y))


@lru_cache(maxsize=16)
def build_benchmark(
    seed: int = 0,
    config: SyntheticConfig = SyntheticConfig(),
    train_cfg: TrainConfig | None = None,
    budget: Budget = Budget(),
) -> Benchmark:
    """Everything an attack run needs, keyed by ``seed``. Cached, so treat
    the returned arrays as read-only."""
    data, text = generate_synthetic(config, seed)
    tr, te = split(data, TEST_FRACTION, seed)
    omega = parse_constraints(text, data.specs)
    cfg = train_cfg or TrainConfig(seed=seed)
    model = train(build_classifier(len(data.specs), data.n_classes, seed=seed), tr, cfg, te)
    crit = te.critical()
    X = scale(crit.rows, model.scaler)
    X.setflags(write=False)
    Y = crit.labels.copy()
    Y.setflags(write=False)
    return Benchmark(seed, tr, te, omega, text, model, X, Y, budget)
