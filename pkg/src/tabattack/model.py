"""Feed-forward ReLU classifier with manual backprop.

The model consumes rows in scaled space; it carries the :class:`Scaler` it
was trained with so attacks can evaluate constraints in original units.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .constraints import ConstraintSet, penalty_and_gradient
from .features import Dataset, Scaler, fit_scaler, scale, unscale
from .perturbation import Budget, Domain, lp_norm

HIDDEN = (64, 32, 16)


class TrainingDivergedError(RuntimeError):
    def __init__(self, epoch: int):
        super().__init__(f"training diverged: non-finite loss at epoch {epoch}")
        self.epoch = epoch


@dataclass
class Classifier:
    dims: list[int]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    scaler: Scaler | None = None
    activation: str = "relu"
    metadata: dict = field(default_factory=dict)

    @property
    def n_features(self) -> int:
        return self.dims[0]

    @property
    def n_classes(self) -> int:
        return self.dims[-1]

    def _check(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.shape[-1] != self.dims[0]:
            raise ValueError(f"dimension mismatch: expected {self.dims[0]} features, got {X.shape[-1]}")
        return X

    def _forward(self, X):
        acts = [X]
        h = X
        last = len(self.weights) - 1
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ W + b
            h = z if i == last else np.maximum(z, 0.0)
            acts.append(h)
        return acts

    def _backward(self, acts, dlogits, want_params=True):
        """Backprop ``dlogits``; returns (param grads, input grad)."""
        gW, gb = [], []
        g = dlogits
        for i in range(len(self.weights) - 1, -1, -1):
            if want_params:
                gW.append(acts[i].T @ g)
                gb.append(g.sum(axis=0))
            g = g @ self.weights[i].T
            if i > 0:
                g = g * (acts[i] > 0)
        return gW[::-1], gb[::-1], g

    def logits(self, X) -> np.ndarray:
        X = self._check(X)
        return self._forward(np.atleast_2d(X))[-1]

    def predict_proba(self, X) -> np.ndarray:
        X = self._check(X)
        single = X.ndim == 1
        p = softmax(self.logits(X))
        return p[0] if single else p

    def predict(self, X) -> np.ndarray:
        return np.argmax(self.predict_proba(X), axis=-1)

    def evaluate(self, X, y):
        """Per-row cross-entropy, its input gradient and class probabilities."""
        X = np.atleast_2d(self._check(X))
        y = np.asarray(y, dtype=int)
        acts = self._forward(X)
        logp = log_softmax(acts[-1])
        ce = -logp[np.arange(len(X)), y]
        probs = np.exp(logp)
        d = probs.copy()
        d[np.arange(len(X)), y] -= 1.0
        _, _, gx = self._backward(acts, d, want_params=False)
        return ce, gx, probs

    def loss_and_input_grad(self, X, y):
        ce, gx, _ = self.evaluate(X, y)
        return ce, gx

    def copy(self) -> "Classifier":
        return Classifier(
            list(self.dims),
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            self.scaler,
            self.activation,
            dict(self.metadata),
        )


class MaskedClassifier(Classifier):
    """Gradient-masked wrapper: logits are floored onto a staircase of width
    ``step`` and the critical class gets a constant ``critical_bias``. Scores
    are piecewise constant, so the input gradient is zero almost everywhere,
    but a black-box search still sees the staircase."""

    def __init__(self, base: Classifier, step: float = 0.25, critical_bias: float = 12.0, critical_class: int = 1):
        super().__init__(list(base.dims), base.weights, base.biases, base.scaler, base.activation, dict(base.metadata))
        if step <= 0:
            raise ValueError("step must be positive")
        self.step = float(step)
        self.critical_bias = float(critical_bias)
        self.critical_class = int(critical_class)
        self.metadata["masking"] = {
            "step": self.step,
            "critical_bias": self.critical_bias,
            "critical_class": self.critical_class,
        }

    def logits(self, X) -> np.ndarray:
        z = self.step * np.floor(super().logits(X) / self.step)
        z[:, self.critical_class] += self.critical_bias
        return z

    def evaluate(self, X, y):
        X = np.atleast_2d(self._check(X))
        y = np.asarray(y, dtype=int)
        logp = log_softmax(self.logits(X))
        return -logp[np.arange(len(X)), y], np.zeros_like(X), np.exp(logp)

    def copy(self) -> "MaskedClassifier":
        return MaskedClassifier(Classifier.copy(self), self.step, self.critical_bias, self.critical_class)


def softmax(z) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(z) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def build_classifier(n_features: int, n_classes: int = 2, hidden=HIDDEN, seed: int = 0, scaler=None) -> Classifier:
    """He-initialised MLP ``n_features -> hidden... -> n_classes``."""
    rng = np.random.default_rng(seed)
    dims = [int(n_features), *map(int, hidden), int(n_classes)]
    weights = [rng.normal(0.0, np.sqrt(2.0 / a), size=(a, b)) for a, b in zip(dims[:-1], dims[1:])]
    biases = [np.zeros(b) for b in dims[1:]]
    return Classifier(dims, weights, biases, scaler)


def forward(model: Classifier, x) -> np.ndarray:
    return model.predict_proba(x)


@dataclass(frozen=True)
class LossBreakdown:
    task_loss: float
    penalty_sum: float
    total: float


class Objective(NamedTuple):
    total: np.ndarray
    grad: np.ndarray
    ce: np.ndarray
    penalty: np.ndarray
    satisfied: np.ndarray
    probs: np.ndarray

    @property
    def predicted(self) -> np.ndarray:
        return np.argmax(self.probs, axis=-1)


def attack_objective(model: Classifier, X, X_orig, Y, omega: ConstraintSet | None):
    """Batched attack loss ``CE - penalty`` and its gradient in scaled space.

    ``satisfied`` is the constraint check of each row (all True when
    ``omega`` is empty).
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    ce, g, probs = model.evaluate(X, Y)
    n = len(X)
    if omega is None or len(omega) == 0:
        return Objective(ce, g, ce, np.zeros(n), np.ones(n, bool), probs)
    raw = unscale(X, model.scaler)
    raw0 = unscale(np.atleast_2d(X_orig), model.scaler)
    pen, gpen, sat = penalty_and_gradient(omega, raw, raw0)
    # chain rule through the min-max scaling
    gpen = gpen * model.scaler.span
    return Objective(ce - pen, g - gpen, ce, pen, sat, probs)


def attack_loss_and_grad(model: Classifier, x, x_orig, y, omega: ConstraintSet | None):
    """Single-example loss breakdown and gradient of ``CE - penalty``."""
    obj = attack_objective(model, np.atleast_2d(x), np.atleast_2d(x_orig), [y], omega)
    return LossBreakdown(float(obj.ce[0]), float(obj.penalty[0]), float(obj.total[0])), obj.grad[0]


# --- training ---------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 40
    batch_size: int = 64
    learning_rate: float = 2e-3
    seed: int = 0
    optimizer: str = "adam"

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


@dataclass(frozen=True)
class PgdConfig:
    """Inner maximisation for adversarial training (plain PGD, no constraints)."""

    epsilon: float = 0.5
    steps: int = 10
    step_size: float | None = None
    norm: str = "L2"

    @property
    def alpha(self) -> float:
        if self.step_size is not None:
            return self.step_size
        return 2.5 * self.epsilon / max(self.steps, 1)


def _normalize(g, norm):
    if norm == "Linf":
        return np.sign(g)
    n = lp_norm(g, "L2")
    return g / np.maximum(n, 1e-12)[:, None]


def pgd(model: Classifier, X, y, domain: Domain, atk: PgdConfig) -> np.ndarray:
    """Untargeted PGD on cross-entropy, started at ``X`` (no random start)."""
    X = np.asarray(X, dtype=float)
    budget = Budget(atk.epsilon, atk.norm)
    x = X.copy()
    for _ in range(atk.steps):
        _, g = model.loss_and_input_grad(x, y)
        g = g * domain.mask
        x = domain.project(x + atk.alpha * _normalize(g, atk.norm), X, budget)
    return x


class _Adam:
    def __init__(self, params, lr, b1=0.9, b2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        c1 = 1 - self.b1**self.t
        c2 = 1 - self.b2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


class _Sgd:
    def __init__(self, params, lr):
        self.lr = lr

    def step(self, params, grads):
        for p, g in zip(params, grads):
            p -= self.lr * g


def accuracy(model: Classifier, dataset: Dataset) -> float:
    X = scale(dataset.rows, model.scaler)
    return float(np.mean(model.predict(X) == dataset.labels))


def train(model: Classifier, dataset: Dataset, cfg: TrainConfig = TrainConfig(), test: Dataset | None = None) -> Classifier:
    return train_adversarial(model, dataset, cfg, None, test)


def _epoch(model, X, Y, batch_size, atk, domain, opt, params) -> float:
    """One pass over ``X`` in order; returns the summed batch loss."""
    total = 0.0
    for start in range(0, len(X), batch_size):
        xb, yb = X[start:start + batch_size], Y[start:start + batch_size]
        if atk is not None and atk.steps > 0:
            xb = pgd(model, xb, yb, domain, atk)
        acts = model._forward(xb)
        logp = log_softmax(acts[-1])
        rows = np.arange(len(xb))
        loss = -logp[rows, yb].mean()
        total += loss * len(xb)
        d = np.exp(logp)
        d[rows, yb] -= 1.0
        gW, gb, _ = model._backward(acts, d / len(xb))
        opt.step(params, gW + gb)
    return total


def train_adversarial(
    model: Classifier,
    dataset: Dataset,
    cfg: TrainConfig = TrainConfig(),
    atk: PgdConfig | None = PgdConfig(),
    test: Dataset | None = None,
) -> Classifier:
    """Minibatch training; with ``atk`` each batch is first replaced by its
    PGD perturbation (Madry-style adversarial training)."""
    if len(dataset) == 0:
        raise ValueError("cannot train on an empty dataset")
    model = model.copy()
    if model.scaler is None:
        model.scaler = fit_scaler(dataset)
    X = scale(dataset.rows, model.scaler)
    Y = dataset.labels
    domain = Domain(dataset.specs, model.scaler)
    rng = np.random.default_rng(cfg.seed)
    params = model.weights + model.biases
    opt = _Adam(params, cfg.learning_rate) if cfg.optimizer == "adam" else _Sgd(params, cfg.learning_rate)
    n = len(X)
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        # overflow shows up as a non-finite loss below; no need to warn too
        with np.errstate(over="ignore", invalid="ignore"):
            total = _epoch(model, X[order], Y[order], cfg.batch_size, atk, domain, opt, params)
        if not np.isfinite(total):
            raise TrainingDivergedError(epoch)
    model.metadata.update(
        seed=cfg.seed,
        epochs=cfg.epochs,
        train_accuracy=accuracy(model, dataset),
        adversarial=atk is not None and atk.steps > 0,
    )
    if atk is not None and atk.steps > 0:
        model.metadata["pgd"] = {"epsilon": atk.epsilon, "steps": atk.steps, "step_size": atk.alpha, "norm": atk.norm}
    ref = test if test is not None else dataset
    model.metadata["clean_accuracy"] = accuracy(model, ref)
    return model


# --- serialization ----------------------------------------------------------


def model_to_json(model: Classifier) -> dict:
    doc = {
        "dims": list(model.dims),
        "activation": model.activation,
        "weights": [w.tolist() for w in model.weights],
        "biases": [b.tolist() for b in model.biases],
        "scaler": model.scaler.to_json() if model.scaler is not None else None,
        "metadata": model.metadata,
    }
    return doc


def model_from_json(doc: dict) -> Classifier:
    try:
        dims = [int(v) for v in doc["dims"]]
        weights = [np.asarray(w, dtype=float).reshape(a, b) for w, a, b in zip(doc["weights"], dims[:-1], dims[1:])]
        biases = [np.asarray(b, dtype=float).reshape(n) for b, n in zip(doc["biases"], dims[1:])]
    except (KeyError, ValueError, TypeError) as exc:
        raise ValueError(f"malformed model document: {exc}") from None
    if doc.get("activation", "relu") != "relu":
        raise ValueError(f"unsupported activation {doc.get('activation')!r}")
    scaler = Scaler.from_json(doc["scaler"]) if doc.get("scaler") else None
    model = Classifier(dims, weights, biases, scaler, "relu", dict(doc.get("metadata", {})))
    if "masking" in model.metadata:
        return MaskedClassifier(model, **model.metadata["masking"])
    return model


def save_model(model: Classifier, path) -> None:
    Path(path).write_text(json.dumps(model_to_json(model), sort_keys=True) + "\n", encoding="utf-8")


def load_model(path) -> Classifier:
    with open(path, encoding="utf-8") as fh:
        return model_from_json(json.load(fh))
