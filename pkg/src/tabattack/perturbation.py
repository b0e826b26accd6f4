"""Feasible perturbations in scaled space: Lp-ball projection, bounds,
immutability masks, type rounding and random starts inside the ball."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np

from .features import FeatureSpec, Scaler, scale, unscale

NORMS = ("L2", "Linf")
# slack for floating-point round-off in ball membership tests
BALL_TOL = 1e-9


@dataclass(frozen=True)
class Budget:
    epsilon: float = 0.5
    norm: str = "L2"

    def __post_init__(self):
        if self.norm not in NORMS:
            raise ValueError(f"norm must be one of {NORMS}, got {self.norm!r}")
        if not np.isfinite(self.epsilon) or self.epsilon < 0:
            raise ValueError(f"epsilon must be a finite non-negative number, got {self.epsilon}")


def lp_norm(delta, norm: str = "L2") -> np.ndarray:
    delta = np.asarray(delta, dtype=float)
    if norm == "L2":
        return np.sqrt(np.sum(delta * delta, axis=-1))
    return np.max(np.abs(delta), axis=-1, initial=0.0)


def mutability_mask(specs: Sequence[FeatureSpec]) -> np.ndarray:
    return np.array([s.mutable for s in specs], dtype=bool)


def scaled_bounds(specs: Sequence[FeatureSpec], scaler: Scaler) -> tuple[np.ndarray, np.ndarray]:
    """Feature bounds in scaled space, intersected with [0, 1]."""
    lo = scale(np.array([s.lower for s in specs]), scaler)
    hi = scale(np.array([s.upper for s in specs]), scaler)
    return np.clip(lo, 0.0, 1.0), np.clip(hi, 0.0, 1.0)


def project(x, x_orig, budget: Budget, mask=None, lo=0.0, hi=1.0) -> np.ndarray:
    """Project onto the ball around ``x_orig``, then clip to bounds.

    Immutable coordinates are restored first so they never consume budget.
    Bounds are widened per row to include ``x_orig`` (test rows may sit
    outside the training range), so clipping only shrinks the perturbation.
    """
    x = np.asarray(x, dtype=float)
    x_orig = np.asarray(x_orig, dtype=float)
    if mask is not None:
        x = np.where(mask, x, x_orig)
    delta = x - x_orig
    eps = budget.epsilon
    if budget.norm == "L2":
        norms = lp_norm(delta, "L2")
        factor = np.where(norms > eps, eps / np.maximum(norms, 1e-300), 1.0)
        delta = delta * np.expand_dims(factor, -1)
    else:
        delta = np.clip(delta, -eps, eps)
    out = np.clip(x_orig + delta, np.minimum(lo, x_orig), np.maximum(hi, x_orig))
    if mask is not None:
        out = np.where(mask, out, x_orig)
    return out


def round_types(x, specs: Sequence[FeatureSpec], scaler: Scaler) -> np.ndarray:
    """Snap discrete features to integers and categorical ones to the nearest
    category (ties go to the lower category). Continuous features pass through."""
    x = np.asarray(x, dtype=float)
    raw = unscale(x, scaler)
    out = raw.copy()
    touched = False
    for j, s in enumerate(specs):
        if s.ftype == "discrete":
            v = np.ceil(raw[..., j] - 0.5)
            out[..., j] = np.clip(v, s.lower, s.upper)
            touched = True
        elif s.ftype == "categorical":
            cats = np.asarray(s.categories)
            k = np.argmin(np.abs(raw[..., j][..., None] - cats), axis=-1)
            out[..., j] = cats[k]
            touched = True
    if not touched:
        return x.copy()
    res = scale(out, scaler)
    # keep untouched continuous coordinates bit-identical
    cont = np.array([s.ftype == "continuous" for s in specs])
    return np.where(cont, x, res)


def sample_in_ball(x_orig, budget: Budget, mask, rng_seed, lo=0.0, hi=1.0) -> np.ndarray:
    """Uniform sample from the ball (restricted to mutable coordinates),
    clipped to bounds. ``rng_seed`` is an int seed or a numpy Generator."""
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    x_orig = np.asarray(x_orig, dtype=float)
    shape = x_orig.shape
    mask = np.ones(shape[-1], bool) if mask is None else np.asarray(mask, bool)
    m = int(mask.sum())
    delta = np.zeros(shape)
    if m == 0 or budget.epsilon == 0:
        return x_orig.copy()
    lead = shape[:-1]
    if budget.norm == "L2":
        g = rng.standard_normal(lead + (m,))
        g /= np.maximum(lp_norm(g, "L2"), 1e-300)[..., None]
        r = budget.epsilon * rng.random(lead) ** (1.0 / m)
        delta[..., mask] = g * r[..., None]
    else:
        delta[..., mask] = rng.uniform(-budget.epsilon, budget.epsilon, lead + (m,))
    return np.clip(x_orig + delta, np.minimum(lo, x_orig), np.maximum(hi, x_orig))


def in_domain(x, x_orig, budget: Budget, mask=None, lo=0.0, hi=1.0) -> np.ndarray:
    """Rows inside the ball, within bounds, with immutable features untouched."""
    x = np.asarray(x, dtype=float)
    x_orig = np.asarray(x_orig, dtype=float)
    ok = lp_norm(x - x_orig, budget.norm) <= budget.epsilon + BALL_TOL
    lo = np.minimum(lo, x_orig) - BALL_TOL
    hi = np.maximum(hi, x_orig) + BALL_TOL
    ok &= np.all((x >= lo) & (x <= hi), axis=-1)
    if mask is not None:
        ok &= np.all(np.where(mask, True, x == x_orig), axis=-1)
    return ok


@dataclass(frozen=True)
class Domain:
    """Bundles the per-feature structure an attack needs in scaled space."""

    specs: tuple[FeatureSpec, ...]
    scaler: Scaler

    @cached_property
    def mask(self) -> np.ndarray:
        return mutability_mask(self.specs)

    @cached_property
    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return scaled_bounds(self.specs, self.scaler)

    def project(self, x, x_orig, budget: Budget) -> np.ndarray:
        lo, hi = self.bounds
        return project(x, x_orig, budget, self.mask, lo, hi)

    def round_types(self, x) -> np.ndarray:
        return round_types(x, self.specs, self.scaler)

    def sample(self, x_orig, budget: Budget, rng) -> np.ndarray:
        lo, hi = self.bounds
        return sample_in_ball(x_orig, budget, self.mask, rng, lo, hi)

    def contains(self, x, x_orig, budget: Budget) -> np.ndarray:
        lo, hi = self.bounds
        return in_domain(x, x_orig, budget, self.mask, lo, hi)
