"""Tabular feature space: feature metadata, CSV ingestion, min-max scaling,
stratified splits and a synthetic constrained dataset generator.

Attacks work on rows scaled to [0, 1]; constraints are stated in original
units, so the :class:`Scaler` travels with the model and is used to move
between the two spaces.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

FEATURE_TYPES = ("continuous", "discrete", "categorical")
LABEL_COLUMN = "label"


class DatasetError(ValueError):
    """Raised for malformed feature specs or CSV rows."""


@dataclass(frozen=True)
class FeatureSpec:
    name: str
    ftype: str
    mutable: bool
    lower: float
    upper: float
    categories: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.ftype not in FEATURE_TYPES:
            raise DatasetError(f"feature {self.name!r}: unknown type {self.ftype!r}")
        if not self.lower <= self.upper:
            raise DatasetError(f"feature {self.name!r}: lower > upper")
        if self.ftype == "discrete":
            if float(self.lower) != int(self.lower) or float(self.upper) != int(self.upper):
                raise DatasetError(f"feature {self.name!r}: discrete bounds must be integers")
        if self.ftype == "categorical":
            if not self.categories:
                raise DatasetError(f"feature {self.name!r}: categorical needs categories")
            cats = tuple(sorted(float(c) for c in self.categories))
            if cats[0] < self.lower or cats[-1] > self.upper:
                raise DatasetError(f"feature {self.name!r}: category outside bounds")
            object.__setattr__(self, "categories", cats)

    def to_json(self) -> dict:
        out = {
            "name": self.name,
            "type": self.ftype,
            "mutable": self.mutable,
            "lower": self.lower,
            "upper": self.upper,
        }
        if self.categories is not None:
            out["categories"] = list(self.categories)
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "FeatureSpec":
        try:
            cats = obj.get("categories")
            return cls(
                name=str(obj["name"]),
                ftype=str(obj["type"]),
                mutable=bool(obj["mutable"]),
                lower=float(obj["lower"]),
                upper=float(obj["upper"]),
                categories=tuple(cats) if cats is not None else None,
            )
        except KeyError as exc:
            raise DatasetError(f"feature spec missing field {exc.args[0]!r}") from None


@dataclass(frozen=True)
class Dataset:
    specs: tuple[FeatureSpec, ...]
    rows: np.ndarray
    labels: np.ndarray
    critical_class: int = 1

    def __post_init__(self):
        rows = np.asarray(self.rows, dtype=float)
        labels = np.asarray(self.labels, dtype=int)
        if rows.ndim != 2 or rows.shape[1] != len(self.specs):
            raise DatasetError(f"rows must be n x {len(self.specs)}, got {rows.shape}")
        if len(rows) != len(labels):
            raise DatasetError("rows and labels differ in length")
        rows.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "specs", tuple(self.specs))

    def __len__(self) -> int:
        return len(self.rows)

    @property
    def n_features(self) -> int:
        return len(self.specs)

    @property
    def names(self) -> list[str]:
        return [s.name for s in self.specs]

    @property
    def n_classes(self) -> int:
        return int(max(self.labels.max(initial=0), self.critical_class)) + 1

    def subset(self, idx) -> "Dataset":
        return Dataset(self.specs, self.rows[idx], self.labels[idx], self.critical_class)

    def critical(self) -> "Dataset":
        """Rows of the critical class, the ones an attacker perturbs."""
        return self.subset(np.flatnonzero(self.labels == self.critical_class))


@dataclass(frozen=True)
class Scaler:
    min: np.ndarray
    max: np.ndarray

    @property
    def span(self) -> np.ndarray:
        return self.max - self.min

    def to_json(self) -> dict:
        return {"min": self.min.tolist(), "max": self.max.tolist()}

    @classmethod
    def from_json(cls, obj: dict) -> "Scaler":
        return cls(np.asarray(obj["min"], float), np.asarray(obj["max"], float))


def bounds_violations(rows: np.ndarray, specs: Sequence[FeatureSpec]) -> list[str]:
    lower = np.array([s.lower for s in specs])
    upper = np.array([s.upper for s in specs])
    bad = (rows < lower) | (rows > upper)
    problems = []
    for i, j in zip(*np.nonzero(bad)):
        s = specs[j]
        problems.append(
            f"bound violation at row {i + 1}: {s.name}={rows[i, j]!r} "
            f"outside [{s.lower}, {s.upper}]"
        )
    return problems


def load_spec(spec_path) -> tuple[list[FeatureSpec], int]:
    """Read a feature spec JSON file; returns (specs, critical_class).

    Accepts either a bare array of feature objects (critical class 1) or an
    object ``{"features": [...], "critical_class": k}``.
    """
    with open(spec_path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DatasetError(f"{spec_path}: invalid JSON ({exc.msg})") from None
    if isinstance(doc, list):
        return [FeatureSpec.from_json(o) for o in doc], 1
    if "features" not in doc:
        raise DatasetError(f"{spec_path}: expected 'features' array")
    return [FeatureSpec.from_json(o) for o in doc["features"]], int(doc.get("critical_class", 1))


def save_spec(path, specs: Sequence[FeatureSpec], critical_class: int) -> None:
    doc = {"features": [s.to_json() for s in specs], "critical_class": critical_class}
    Path(path).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


def load_dataset(csv_path, spec_path) -> Dataset:
    specs, critical = load_spec(spec_path)
    names = [s.name for s in specs]
    with open(csv_path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DatasetError(f"{csv_path}: empty file") from None
        header = [h.strip() for h in header]
        missing = [c for c in names + [LABEL_COLUMN] if c not in header]
        if missing:
            raise DatasetError(f"{csv_path}: missing column(s) {', '.join(missing)}")
        cols = [header.index(c) for c in names]
        label_col = header.index(LABEL_COLUMN)
        rows, labels = [], []
        for lineno, rec in enumerate(reader, start=1):
            if not rec:
                continue
            try:
                rows.append([float(rec[c]) for c in cols])
                lab = float(rec[label_col])
            except (ValueError, IndexError):
                raise DatasetError(f"non-numeric at row {lineno}") from None
            if lab != int(lab) or lab < 0:
                raise DatasetError(f"bad label at row {lineno}")
            labels.append(int(lab))
    arr = np.asarray(rows, dtype=float).reshape(-1, len(specs))
    problems = bounds_violations(arr, specs)
    if problems:
        raise DatasetError("; ".join(problems))
    return Dataset(tuple(specs), arr, np.asarray(labels, dtype=int), critical)


def save_dataset(path, dataset: Dataset) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(dataset.names + [LABEL_COLUMN])
        for row, lab in zip(dataset.rows, dataset.labels):
            w.writerow([repr(float(v)) for v in row] + [int(lab)])


def fit_scaler(dataset: Dataset) -> Scaler:
    if len(dataset) == 0:
        raise DatasetError("cannot fit a scaler on an empty dataset")
    lo = dataset.rows.min(axis=0)
    hi = dataset.rows.max(axis=0)
    hi = np.where(hi > lo, hi, lo + 1.0)
    return Scaler(lo.copy(), hi.copy())


def _check_dim(x: np.ndarray, scaler: Scaler) -> None:
    if x.shape[-1] != scaler.min.shape[0]:
        raise ValueError(f"dimension mismatch: {x.shape[-1]} != {scaler.min.shape[0]}")


def scale(x, scaler: Scaler) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    _check_dim(x, scaler)
    return (x - scaler.min) / scaler.span


def unscale(x01, scaler: Scaler) -> np.ndarray:
    x01 = np.asarray(x01, dtype=float)
    _check_dim(x01, scaler)
    return x01 * scaler.span + scaler.min


def split(dataset: Dataset, test_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Stratified train/test split, deterministic for a fixed seed."""
    if not 0 < test_fraction < 1:
        raise ValueError(f"test_fraction must be in (0, 1), got {test_fraction}")
    rng = np.random.default_rng(seed)
    train_idx, test_idx = [], []
    for c in np.unique(dataset.labels):
        members = np.flatnonzero(dataset.labels == c)
        if len(members) < 2:
            raise DatasetError(f"class {c} has fewer than 2 members")
        members = rng.permutation(members)
        n_test = int(round(test_fraction * len(members)))
        n_test = min(max(n_test, 1), len(members) - 1)
        test_idx.append(members[:n_test])
        train_idx.append(members[n_test:])
    train_idx = np.sort(np.concatenate(train_idx))
    test_idx = np.sort(np.concatenate(test_idx))
    return dataset.subset(train_idx), dataset.subset(test_idx)


# --- synthetic benchmark ---------------------------------------------------


@dataclass(frozen=True)
class SyntheticConfig:
    n_features: int = 6
    n_rows: int = 1000
    n_constraints: int = 3
    critical_fraction: float = 0.5
    separation: float = 1.0


# class-conditional means for the base features: (class 0, class 1)
_LOW_MEAN = (3.0, 5.0)
_GAP_MEAN = (7.0, 4.5)
_COUNT_RATE = (3.0, 5.5)
_AGE_MEAN = (45.0, 52.0)
_KIND_PROBS = ((0.5, 0.3, 0.2), (0.2, 0.3, 0.5))


def generate_synthetic(config: SyntheticConfig = SyntheticConfig(), seed: int = 0):
    """Two-class constrained dataset; returns ``(Dataset, constraint_text)``.

    Base features are ``low <= high``, ``total = low + high`` and a
    categorical ``kind`` in {0, 1, 2}; ``age`` is immutable. Extra features
    ``extra<j>`` are bounded by ``high`` and each contributes one more
    ``extra<j> <= high`` relation when more than three constraints are asked.
    """
    d, n, k = config.n_features, config.n_rows, config.n_constraints
    if d < 4 or n < 100 or k < 1:
        raise DatasetError("synthetic config needs n_features >= 4, n_rows >= 100, n_constraints >= 1")
    n_extra = max(d - 6, 0)
    if k > 3 + n_extra:
        raise DatasetError(
            f"unsatisfiable config: {k} constraints need at least {k + 3} features"
        )
    rng = np.random.default_rng(seed)
    sep = config.separation
    y = (rng.random(n) < config.critical_fraction).astype(int)

    def by_class(pair):
        p0, p1 = pair
        mid = 0.5 * (p0 + p1)
        return np.where(y == 1, mid + sep * (p1 - mid), mid + sep * (p0 - mid))

    low = np.clip(rng.normal(by_class(_LOW_MEAN), 1.0), 0.0, 10.0)
    gap = np.abs(rng.normal(by_class(_GAP_MEAN), 1.2))
    high = np.clip(low + gap, 0.0, 20.0)
    high = np.maximum(high, low)
    total = low + high
    probs = np.array(_KIND_PROBS)[y]
    kind = (rng.random(n)[:, None] > np.cumsum(probs, axis=1)).sum(axis=1).astype(float)

    specs = [
        FeatureSpec("low", "continuous", True, 0.0, 10.0),
        FeatureSpec("high", "continuous", True, 0.0, 20.0),
        FeatureSpec("total", "continuous", True, 0.0, 30.0),
        FeatureSpec("kind", "categorical", d > 4, 0.0, 2.0, (0.0, 1.0, 2.0)),
    ]
    cols = [low, high, total, kind]
    if d >= 5:
        age = np.clip(np.round(rng.normal(by_class(_AGE_MEAN), 6.0), 1), 18.0, 90.0)
        specs.append(FeatureSpec("age", "continuous", False, 18.0, 90.0))
        cols.append(age)
    if d >= 6:
        count = np.clip(rng.poisson(by_class(_COUNT_RATE)), 0, 10).astype(float)
        specs.append(FeatureSpec("count", "discrete", True, 0.0, 10.0))
        cols.append(count)
    for j in range(n_extra):
        specs.append(FeatureSpec(f"extra{j}", "continuous", True, 0.0, 20.0))
        cols.append(high * rng.random(n))

    lines = ["low <= high", "total = low + high", "kind in {0, 1, 2}"][:k]
    lines += [f"extra{j} <= high" for j in range(k - 3)] if k > 3 else []
    rows = np.column_stack(cols)
    return Dataset(tuple(specs), rows, y, critical_class=1), "\n".join(lines) + "\n"
