"""AST node types for feature-relationship constraints."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

ARITH_OPS = ("+", "-", "*", "/")
CMP_OPS = ("<", "<=", "=", "!=", ">=", ">")


@dataclass(frozen=True)
class Const:
    value: float


@dataclass(frozen=True)
class Feature:
    index: int


@dataclass(frozen=True)
class OrigFeature:
    """Value of a feature in the unperturbed input."""

    index: int


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "NumExpr"
    right: "NumExpr"


NumExpr = Union[Const, Feature, OrigFeature, BinOp]


@dataclass(frozen=True)
class Cmp:
    op: str
    left: NumExpr
    right: NumExpr


@dataclass(frozen=True)
class Member:
    index: int
    values: tuple[NumExpr, ...]


@dataclass(frozen=True)
class And:
    left: "Constraint"
    right: "Constraint"


@dataclass(frozen=True)
class Or:
    left: "Constraint"
    right: "Constraint"


Constraint = Union[Cmp, Member, And, Or]


def features_of(node) -> set[int]:
    """Indices of perturbable features referenced by ``node``."""
    if isinstance(node, Feature):
        return {node.index}
    if isinstance(node, (Const, OrigFeature)):
        return set()
    if isinstance(node, (BinOp, Cmp, And, Or)):
        return features_of(node.left) | features_of(node.right)
    if isinstance(node, Member):
        out = {node.index}
        for v in node.values:
            out |= features_of(v)
        return out
    raise TypeError(f"not a constraint node: {node!r}")


def conjuncts(node: Constraint) -> list[Constraint]:
    """Flatten nested top-level conjunctions."""
    if isinstance(node, And):
        return conjuncts(node.left) + conjuncts(node.right)
    return [node]


def to_text(node, names) -> str:
    """Fully parenthesised rendering that parses back to an equal tree."""
    if isinstance(node, Const):
        return repr(float(node.value))
    if isinstance(node, Feature):
        return names[node.index]
    if isinstance(node, OrigFeature):
        return f"orig({names[node.index]})"
    if isinstance(node, BinOp):
        return f"({to_text(node.left, names)} {node.op} {to_text(node.right, names)})"
    if isinstance(node, Cmp):
        return f"{to_text(node.left, names)} {node.op} {to_text(node.right, names)}"
    if isinstance(node, Member):
        vals = ", ".join(to_text(v, names) for v in node.values)
        return f"{names[node.index]} in {{{vals}}}"
    if isinstance(node, And):
        return f"({to_text(node.left, names)} and {to_text(node.right, names)})"
    if isinstance(node, Or):
        return f"({to_text(node.left, names)} or {to_text(node.right, names)})"
    raise TypeError(f"not a constraint node: {node!r}")
