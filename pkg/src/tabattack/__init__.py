"""Constrained adversarial attacks against tabular classifiers."""

__version__ = "0.1.0"

from .caa import caa, is_adv
from .constraints import ConstraintSet, check, parse_constraints, penalty, repair
from .evaluation import ablation_matrix, budget_sweep, coverage, robust_accuracy, success_set
from .features import Dataset, FeatureSpec, load_dataset, load_spec
from .gradient import CapgdConfig, CpgdConfig, capgd, cpgd
from .model import Classifier, MaskedClassifier, build_classifier, load_model, train, train_adversarial
from .moeva import MoevaConfig, moeva
from .perturbation import Budget
from .results import AttackResult

__all__ = [
    "AttackResult",
    "Budget",
    "CapgdConfig",
    "Classifier",
    "ConstraintSet",
    "CpgdConfig",
    "Dataset",
    "FeatureSpec",
    "MaskedClassifier",
    "MoevaConfig",
    "ablation_matrix",
    "budget_sweep",
    "build_classifier",
    "caa",
    "capgd",
    "check",
    "coverage",
    "cpgd",
    "is_adv",
    "load_dataset",
    "load_model",
    "load_spec",
    "moeva",
    "parse_constraints",
    "penalty",
    "repair",
    "robust_accuracy",
    "success_set",
    "train",
    "train_adversarial",
]
