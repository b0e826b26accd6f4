"""Satisfaction, differentiable penalties and the repair operator.

All functions work on raw (unscaled) feature values and accept either a
single vector or a batch of rows. Numeric expressions are evaluated with
forward-mode derivatives so penalties come with exact (sub)gradients.

Penalty translation (``d = lhs - rhs``, ``tol`` the set tolerance):

    lhs <= rhs   d                    when d > tol
    lhs <  rhs   d + tol              when d >= 0
    lhs  = rhs   |d|                  when |d| > tol
    lhs != rhs   tol - |d|            when |d| <= tol
    f in {v..}   min_i |f - v_i|      when that distance > tol
    a and b      pen(a) + pen(b)
    a or b       min(pen(a), pen(b))

and zero otherwise, so ``penalty == 0`` exactly when ``check`` holds.
"""

from __future__ import annotations

import graphlib
import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .nodes import (
    And,
    BinOp,
    Cmp,
    Const,
    Constraint,
    Feature,
    Member,
    Or,
    OrigFeature,
    conjuncts,
    features_of,
    to_text,
)
from .parser import parse_lines

log = logging.getLogger(__name__)

DIV_GUARD = 1e-12
DIV_LARGE = 1e12
_TINY = np.finfo(float).smallest_subnormal


class CyclicConstraintError(ValueError):
    """Equality constraints ``f = psi`` that depend on each other."""


@dataclass
class _Val:
    value: np.ndarray  # (n,)
    grad: np.ndarray | None  # (n, d)
    guard: np.ndarray  # (n,) bool, a near-zero division was hit


def _eval(node, x, x0, need_grad) -> _Val:
    n, d = x.shape
    if isinstance(node, Const):
        return _Val(np.full(n, float(node.value)), np.zeros((n, d)) if need_grad else None, np.zeros(n, bool))
    if isinstance(node, Feature):
        g = None
        if need_grad:
            g = np.zeros((n, d))
            g[:, node.index] = 1.0
        return _Val(x[:, node.index].copy(), g, np.zeros(n, bool))
    if isinstance(node, OrigFeature):
        return _Val(x0[:, node.index].copy(), np.zeros((n, d)) if need_grad else None, np.zeros(n, bool))
    if isinstance(node, BinOp):
        a = _eval(node.left, x, x0, need_grad)
        b = _eval(node.right, x, x0, need_grad)
        guard = a.guard | b.guard
        g = None
        if node.op == "+":
            v = a.value + b.value
            if need_grad:
                g = a.grad + b.grad
        elif node.op == "-":
            v = a.value - b.value
            if need_grad:
                g = a.grad - b.grad
        elif node.op == "*":
            v = a.value * b.value
            if need_grad:
                g = a.grad * b.value[:, None] + b.grad * a.value[:, None]
        elif node.op == "/":
            small = np.abs(b.value) < DIV_GUARD
            den = np.where(small, 1.0, b.value)
            v = a.value / den
            sign = np.sign(a.value) * np.where(b.value < 0, -1.0, 1.0)
            v = np.where(small, sign * DIV_LARGE, v)
            if need_grad:
                g = (a.grad * den[:, None] - b.grad * a.value[:, None]) / (den**2)[:, None]
                g[small] = 0.0
            if small.any():
                log.debug("division by near-zero in %d row(s)", int(small.sum()))
            guard = guard | small
        else:
            raise ValueError(f"unknown operator {node.op!r}")
        return _Val(v, g, guard)
    raise TypeError(f"not a numeric expression: {node!r}")


@dataclass
class _Sat:
    sat: np.ndarray  # (n,) bool
    pen: np.ndarray  # (n,) >= 0, zero iff sat
    grad: np.ndarray | None  # (n, d)


def _cmp(op, d, gd, tol):
    if op in (">=", ">"):
        op = "<=" if op == ">=" else "<"
        d = -d
        gd = None if gd is None else -gd
    if op == "<=":
        sat = d <= tol
        viol, gv = d, gd
    elif op == "<":
        sat = d < 0
        viol, gv = d + tol, gd
    elif op == "=":
        sat = np.abs(d) <= tol
        viol = np.abs(d)
        gv = None if gd is None else np.sign(d)[:, None] * gd
    elif op == "!=":
        sat = np.abs(d) > tol
        viol = tol - np.abs(d)
        gv = None if gd is None else -np.sign(d)[:, None] * gd
    else:
        raise ValueError(f"unknown comparison {op!r}")
    return sat, viol, gv


def _sat(node, x, x0, tol, need_grad) -> _Sat:
    n, d = x.shape
    if isinstance(node, Cmp):
        a = _eval(node.left, x, x0, need_grad)
        b = _eval(node.right, x, x0, need_grad)
        gd = a.grad - b.grad if need_grad else None
        sat, viol, gv = _cmp(node.op, a.value - b.value, gd, tol)
        guard = a.guard | b.guard
        sat = sat & ~guard
        viol = np.where(guard, np.maximum(viol, tol), viol)
        # the floor keeps "penalty 0 iff satisfied" exact on the boundary
        pen = np.where(sat, 0.0, np.maximum(viol, _TINY))
        g = None
        if need_grad:
            g = np.where((sat | (viol <= 0))[:, None], 0.0, gv)
        return _Sat(sat, pen, g)
    if isinstance(node, Member):
        f = _eval(Feature(node.index), x, x0, need_grad)
        dists, grads, guards = [], [], []
        for v in node.values:
            e = _eval(v, x, x0, need_grad)
            diff = f.value - e.value
            dists.append(np.abs(diff))
            guards.append(e.guard)
            if need_grad:
                grads.append(np.sign(diff)[:, None] * (f.grad - e.grad))
        dists = np.stack(dists, axis=1)
        guard = np.stack(guards, axis=1)
        dists = np.where(guard, np.inf, dists)
        k = np.argmin(dists, axis=1)
        m = dists[np.arange(n), k]
        sat = m <= tol
        pen = np.where(sat, 0.0, np.where(np.isfinite(m), m, DIV_LARGE))
        g = None
        if need_grad:
            g = np.stack(grads, axis=1)[np.arange(n), k]
            g = np.where((sat | ~np.isfinite(m))[:, None], 0.0, g)
        return _Sat(sat, pen, g)
    if isinstance(node, And):
        a = _sat(node.left, x, x0, tol, need_grad)
        b = _sat(node.right, x, x0, tol, need_grad)
        return _Sat(a.sat & b.sat, a.pen + b.pen, a.grad + b.grad if need_grad else None)
    if isinstance(node, Or):
        a = _sat(node.left, x, x0, tol, need_grad)
        b = _sat(node.right, x, x0, tol, need_grad)
        take_a = a.pen <= b.pen
        pen = np.where(take_a, a.pen, b.pen)
        g = np.where(take_a[:, None], a.grad, b.grad) if need_grad else None
        return _Sat(a.sat | b.sat, pen, g)
    raise TypeError(f"not a constraint: {node!r}")


def _as_batch(x, x_orig):
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    x0 = x if x_orig is None else np.atleast_2d(np.asarray(x_orig, dtype=float))
    if x0.shape != x.shape:
        x0 = np.broadcast_to(x0, x.shape)
    return x, x0, single


@dataclass(frozen=True)
class ConstraintSet:
    """A parsed set of feature-relationship constraints over named features.

    ``names`` fixes the feature order; ``specs`` (optional) carries the
    per-feature metadata the attacks need for masking, bounds and rounding.
    """

    constraints: tuple[Constraint, ...]
    names: tuple[str, ...]
    tolerance: float = 1e-6
    specs: tuple | None = None
    repair_plan: tuple[tuple[int, object], ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "constraints", tuple(self.constraints))
        object.__setattr__(self, "names", tuple(self.names))
        if self.specs is not None:
            object.__setattr__(self, "specs", tuple(self.specs))
        object.__setattr__(self, "repair_plan", self._plan_repair())

    @classmethod
    def from_text(cls, text: str, specs: Sequence, tolerance: float = 1e-6) -> "ConstraintSet":
        names = [s.name for s in specs]
        return cls(tuple(parse_lines(text, names)), tuple(names), tolerance, tuple(specs))

    @property
    def d(self) -> int:
        return len(self.names)

    def __len__(self) -> int:
        return len(self.constraints)

    def to_text(self) -> str:
        return "".join(to_text(c, self.names) + "\n" for c in self.constraints)

    def _plan_repair(self):
        assign: dict[int, object] = {}
        for c in self.constraints:
            for clause in conjuncts(c):
                if not (isinstance(clause, Cmp) and clause.op == "="):
                    continue
                if isinstance(clause.left, Feature) and clause.left.index not in features_of(clause.right):
                    target, expr = clause.left.index, clause.right
                elif isinstance(clause.right, Feature) and clause.right.index not in features_of(clause.left):
                    target, expr = clause.right.index, clause.left
                else:
                    continue
                if target in assign:
                    log.info("feature %s already repaired by an earlier equality", self.names[target])
                    continue
                assign[target] = expr
        graph = {t: features_of(e) & assign.keys() for t, e in assign.items()}
        try:
            order = list(graphlib.TopologicalSorter(graph).static_order())
        except graphlib.CycleError as exc:
            cycle = " -> ".join(self.names[i] for i in exc.args[1])
            raise CyclicConstraintError(f"cyclic equality constraints: {cycle}") from None
        return tuple((t, assign[t]) for t in order)

    def _evaluate(self, x, x_orig, need_grad):
        x, x0, single = _as_batch(x, x_orig)
        n, d = x.shape
        if d != self.d:
            raise ValueError(f"dimension mismatch: {d} != {self.d}")
        sat = np.ones(n, bool)
        pen = np.zeros(n)
        grad = np.zeros((n, d)) if need_grad else None
        for c in self.constraints:
            r = _sat(c, x, x0, self.tolerance, need_grad)
            sat &= r.sat
            pen += r.pen
            if need_grad:
                grad += r.grad
        return sat, pen, grad, single

    def satisfied(self, x, x_orig=None) -> np.ndarray:
        """Per-constraint satisfaction, shape (n, len(self))."""
        x, x0, _ = _as_batch(x, x_orig)
        cols = [_sat(c, x, x0, self.tolerance, False).sat for c in self.constraints]
        return np.stack(cols, axis=1) if cols else np.ones((len(x), 0), bool)


def check(omega: ConstraintSet, x, x_orig=None):
    """True where every constraint holds (within ``omega.tolerance``)."""
    sat, _, _, single = omega._evaluate(x, x_orig, False)
    return bool(sat[0]) if single else sat


def penalty(omega: ConstraintSet, x, x_orig=None):
    _, pen, _, single = omega._evaluate(x, x_orig, False)
    return float(pen[0]) if single else pen


def penalty_gradient(omega: ConstraintSet, x, x_orig=None) -> np.ndarray:
    _, _, grad, single = omega._evaluate(x, x_orig, True)
    return grad[0] if single else grad


def penalty_and_gradient(omega: ConstraintSet, x, x_orig=None):
    """Batched ``(penalty, gradient, satisfied)`` in a single pass."""
    sat, pen, grad, single = omega._evaluate(x, x_orig, True)
    if single:
        return float(pen[0]), grad[0], bool(sat[0])
    return pen, grad, sat


def repair(omega: ConstraintSet, x, x_orig=None) -> np.ndarray:
    """Force every feature defined by an equality ``f = psi`` to ``psi``.

    Assignments run in dependency order, so chains such as ``c = a + b`` and
    ``e = 2 * c`` settle in one pass.
    """
    x, x0, single = _as_batch(x, x_orig)
    out = x.copy()
    for target, expr in omega.repair_plan:
        out[:, target] = _eval(expr, out, x0, False).value
    return out[0] if single else out


def parse_constraints(text: str, specs: Sequence, tolerance: float = 1e-6) -> ConstraintSet:
    return ConstraintSet.from_text(text, specs, tolerance)
