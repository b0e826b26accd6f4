from .engine import (
    ConstraintSet,
    CyclicConstraintError,
    check,
    parse_constraints,
    penalty,
    penalty_and_gradient,
    penalty_gradient,
    repair,
)
from .nodes import And, BinOp, Cmp, Const, Feature, Member, Or, OrigFeature, to_text
from .parser import (
    ConstraintSyntaxError,
    ConstraintTypeError,
    UnknownFeatureError,
    parse_constraint,
    parse_lines,
)

__all__ = [
    "And",
    "BinOp",
    "Cmp",
    "Const",
    "ConstraintSet",
    "ConstraintSyntaxError",
    "ConstraintTypeError",
    "CyclicConstraintError",
    "Feature",
    "Member",
    "Or",
    "OrigFeature",
    "UnknownFeatureError",
    "check",
    "parse_constraint",
    "parse_constraints",
    "parse_lines",
    "penalty",
    "penalty_and_gradient",
    "penalty_gradient",
    "repair",
    "to_text",
]
