"""Attack outputs and the validity oracle shared by every attack."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .constraints import ConstraintSet, check, repair
from .features import scale, unscale
from .perturbation import BALL_TOL, Budget, Domain, lp_norm


@dataclass
class AttackResult:
    adversarial: np.ndarray  # (n, d), scaled space
    success: np.ndarray  # (n,) bool
    iterations: np.ndarray  # (n,) int
    seconds: float
    name: str = ""
    trace: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.adversarial)

    @property
    def success_rate(self) -> float:
        return float(self.success.mean()) if len(self.success) else 0.0


def is_adv(X_i, X_c, Y_c, model, omega: ConstraintSet, budget: Budget) -> np.ndarray:
    """Rows of ``X_i`` that satisfy the constraints, are misclassified and
    stay within ``budget`` of the matching clean row of ``X_c``."""
    X_i = np.atleast_2d(np.asarray(X_i, dtype=float))
    X_c = np.atleast_2d(np.asarray(X_c, dtype=float))
    Y_c = np.asarray(Y_c, dtype=int)
    if not (len(X_i) == len(X_c) == len(Y_c)) or X_i.shape != X_c.shape:
        raise ValueError(f"dimension mismatch: {X_i.shape}, {X_c.shape}, {Y_c.shape}")
    if len(X_i) == 0:
        return np.zeros(0, bool)
    valid = check(omega, unscale(X_i, model.scaler), unscale(X_c, model.scaler))
    flipped = model.predict(X_i) != Y_c
    close = lp_norm(X_i - X_c, budget.norm) <= budget.epsilon + BALL_TOL
    return valid & flipped & close


def domain_of(model, omega: ConstraintSet) -> Domain:
    if omega.specs is None:
        raise ValueError("constraint set carries no feature specs; build it with parse_constraints")
    if model.scaler is None:
        raise ValueError("model has no scaler; train it first")
    return Domain(omega.specs, model.scaler)


def repair_scaled(omega: ConstraintSet, x, x_orig, scaler) -> np.ndarray:
    """Repair in original units; coordinates that are not repair targets are
    returned bit-identical."""
    if not omega.repair_plan:
        return np.array(x, dtype=float)
    raw = unscale(x, scaler)
    fixed = repair(omega, raw, unscale(x_orig, scaler))
    out = np.array(x, dtype=float)
    targets = [t for t, _ in omega.repair_plan]
    # a target repair leaves as is keeps its scaled value, so the unscale/scale
    # round trip cannot nudge an already consistent row
    moved = fixed[..., targets] != raw[..., targets]
    out[..., targets] = np.where(moved, scale(fixed, scaler)[..., targets], out[..., targets])
    return out


def finalize(model, X, Y, omega, budget, domain: Domain, X_adv):
    """Swap out-of-domain rows for the clean row, then score validity."""
    ok = domain.contains(X_adv, X, budget)
    X_adv = np.where(ok[:, None], X_adv, X)
    return X_adv, is_adv(X_adv, X, Y, model, omega, budget)


def example_rngs(seed: int, ids) -> list[np.random.Generator]:
    """One generator per example so results do not depend on batching."""
    return [np.random.default_rng([int(seed), int(i)]) for i in ids]
