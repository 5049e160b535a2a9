"""Tabular data ingestion, task typing, and synthetic generators.

A :class:`Dataset` is an immutable bundle of a feature matrix, a response
vector and task metadata.  Categorical features are level-encoded as dense
integer codes (first-appearance order) but stored in the float feature
matrix so that tree code never branches on dtype.
"""

from __future__ import annotations

import csv
import re
import warnings
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .seeding import rng_for

__all__ = [
    "TaskKind",
    "Column",
    "Dataset",
    "DroppedRowsWarning",
    "GeneratorSpec",
    "load_csv",
    "save_csv",
    "synthesize",
    "parse_generator_spec",
    "GENERATORS",
]

# Integer targets with at most this many distinct values default to
# classification (overridable by the caller).
CLASSIFICATION_CARDINALITY_LIMIT = 10

MISSING_TOKENS = {"", "NA", "NaN", "nan"}


class TaskKind(Enum):
    BINARY = "binary"
    MULTICLASS = "multiclass"
    REGRESSION = "regression"

    @property
    def is_classification(self) -> bool:
        return self is not TaskKind.REGRESSION


class DroppedRowsWarning(UserWarning):
    """Rows with missing cells were dropped during ingestion."""


@dataclass(frozen=True)
class Column:
    """Feature or target metadata: name plus level table for categoricals."""

    name: str
    kind: str  # "numeric" | "categorical"
    levels: tuple[str, ...] | None = None

    @property
    def cardinality(self) -> int:
        return 0 if self.levels is None else len(self.levels)


@dataclass(frozen=True)
class Dataset:
    """Feature matrix, response and task metadata.

    Invariants (checked at construction): n >= 2, p >= 1, response length
    n, no missing values, classification labels dense in 0..K-1 with every
    class present.
    """

    X: np.ndarray
    y: np.ndarray
    task: TaskKind
    n_classes: int
    columns: tuple[Column, ...]
    target: Column
    name: str = "dataset"

    def __post_init__(self):
        X = np.ascontiguousarray(np.asarray(self.X, dtype=np.float64))
        object.__setattr__(self, "X", X)
        if X.ndim != 2:
            raise ValueError("feature matrix must be 2-dimensional")
        n, p = X.shape
        if n < 2:
            raise ValueError(f"need at least 2 observations, got {n}")
        if p < 1:
            raise ValueError("need at least one feature")
        if len(self.columns) != p:
            raise ValueError("column metadata does not match feature count")
        if not np.all(np.isfinite(X)):
            raise ValueError("feature matrix contains missing/non-finite values")
        if self.task.is_classification:
            y = np.ascontiguousarray(np.asarray(self.y, dtype=np.int64))
            if self.n_classes < 2:
                raise ValueError("classification needs at least two classes")
            if (self.task is TaskKind.BINARY) != (self.n_classes == 2):
                raise ValueError("binary task requires exactly two classes")
            present = np.unique(y)
            if present.size != self.n_classes or present[0] != 0 or present[-1] != self.n_classes - 1:
                raise ValueError("class indices must be dense in 0..K-1 with every class present")
        else:
            y = np.ascontiguousarray(np.asarray(self.y, dtype=np.float64))
            if not np.all(np.isfinite(y)):
                raise ValueError("regression response contains missing/non-finite values")
            if self.n_classes != 0:
                raise ValueError("regression datasets have n_classes == 0")
        if y.shape != (n,):
            raise ValueError("response length must equal number of rows")
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    def feature_is_categorical(self) -> np.ndarray:
        return np.array([c.kind == "categorical" for c in self.columns], dtype=bool)

    def feature_cardinality(self) -> np.ndarray:
        return np.array([c.cardinality for c in self.columns], dtype=np.int64)


# ---------------------------------------------------------------------------
# CSV ingestion
# ---------------------------------------------------------------------------


def _is_number(token: str) -> bool:
    try:
        float(token)
    except ValueError:
        return False
    return True


def _encode_levels(values: list[str]) -> tuple[np.ndarray, tuple[str, ...]]:
    # First-appearance order: the file order is the single source of truth.
    table: dict[str, int] = {}
    codes = np.empty(len(values), dtype=np.float64)
    for i, v in enumerate(values):
        if v not in table:
            table[v] = len(table)
        codes[i] = table[v]
    return codes, tuple(table)


def _infer_task(values: list[str]) -> TaskKind:
    if not all(_is_number(v) for v in values):
        distinct = len(set(values))
        return TaskKind.BINARY if distinct == 2 else TaskKind.MULTICLASS
    numbers = [float(v) for v in values]
    distinct = sorted(set(numbers))
    if all(float(x).is_integer() for x in distinct) and len(distinct) <= CLASSIFICATION_CARDINALITY_LIMIT:
        return TaskKind.BINARY if len(distinct) == 2 else TaskKind.MULTICLASS
    return TaskKind.REGRESSION


def load_csv(path: str | Path, target: str, task: TaskKind | str | None = None,
             name: str | None = None) -> Dataset:
    """Load an RFC-4180-style CSV (header required) into a Dataset.

    Rows containing missing cells (empty or NA) are dropped and their count
    reported through a :class:`DroppedRowsWarning`.  Non-numeric columns are
    level-encoded in first-appearance order.  The task is inferred from the
    target column unless ``task`` overrides it.
    """
    path = Path(path)
    if isinstance(task, str):
        task = TaskKind(task)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file, header row required") from None
        rows: list[list[str]] = []
        bad_lines: list[int] = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                bad_lines.append(lineno)
                continue
            rows.append(row)
    if bad_lines:
        shown = ", ".join(map(str, bad_lines[:10]))
        raise ValueError(f"{path}: {len(bad_lines)} unparseable row(s) at line(s) {shown}")
    if target not in header:
        raise ValueError(f"{path}: target column {target!r} not found (have {header})")
    if not rows:
        raise ValueError(f"{path}: no data rows")

    keep = [r for r in rows if not any(cell.strip() in MISSING_TOKENS for cell in r)]
    dropped = len(rows) - len(keep)
    if dropped:
        warnings.warn(
            f"{path}: {dropped} row(s) dropped due to missing cells",
            DroppedRowsWarning,
            stacklevel=2,
        )
    if len(keep) < 2:
        raise ValueError(f"{path}: fewer than 2 complete rows after dropping missing values")

    t_idx = header.index(target)
    target_values = [r[t_idx].strip() for r in keep]
    feature_names = [h for i, h in enumerate(header) if i != t_idx]
    feature_cells = [[r[i].strip() for i, h in enumerate(header) if i != t_idx] for r in keep]

    n, p = len(keep), len(feature_names)
    if p < 1:
        raise ValueError(f"{path}: no feature columns besides the target")
    X = np.empty((n, p), dtype=np.float64)
    columns: list[Column] = []
    for j, colname in enumerate(feature_names):
        values = [row[j] for row in feature_cells]
        if all(_is_number(v) for v in values):
            X[:, j] = [float(v) for v in values]
            columns.append(Column(colname, "numeric"))
        else:
            codes, levels = _encode_levels(values)
            X[:, j] = codes
            columns.append(Column(colname, "categorical", levels))

    inferred = _infer_task(target_values)
    effective = task or inferred
    target_numeric = all(_is_number(v) for v in target_values)
    if effective is TaskKind.REGRESSION:
        if not target_numeric:
            raise ValueError(f"{path}: non-numeric target {target!r} cannot be a regression response")
        y = np.array([float(v) for v in target_values])
        return Dataset(X, y, TaskKind.REGRESSION, 0, tuple(columns),
                       Column(target, "numeric"), name or path.stem)
    codes, levels = _encode_levels(target_values)
    k = len(levels)
    if k < 2:
        raise ValueError(f"{path}: classification target {target!r} has a single class")
    if task is not None and task is TaskKind.BINARY and k != 2:
        raise ValueError(f"{path}: target has {k} classes, binary task requested")
    kind = TaskKind.BINARY if k == 2 else TaskKind.MULTICLASS
    return Dataset(X, codes.astype(np.int64), kind, k, tuple(columns),
                   Column(target, "categorical", levels), name or path.stem)


def save_csv(dataset: Dataset, path: str | Path) -> None:
    """Write a Dataset back to CSV (features first, target last).

    Round-trips through :func:`load_csv`: matrices, response and level
    encodings are reproduced exactly.
    """
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([c.name for c in dataset.columns] + [dataset.target.name])
        for i in range(dataset.n):
            row = []
            for j, col in enumerate(dataset.columns):
                v = dataset.X[i, j]
                row.append(col.levels[int(v)] if col.kind == "categorical" else repr(float(v)))
            if dataset.task.is_classification:
                row.append(dataset.target.levels[int(dataset.y[i])])
            else:
                row.append(repr(float(dataset.y[i])))
            writer.writerow(row)


# ---------------------------------------------------------------------------
# Synthetic generators
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GeneratorSpec:
    name: str
    params: dict = field(default_factory=dict)

    def label(self) -> str:
        inner = ",".join(f"{k}={v:g}" if isinstance(v, float) else f"{k}={v}"
                         for k, v in sorted(self.params.items()))
        return f"{self.name}({inner})"


_SPEC_RE = re.compile(r"^\s*([A-Za-z][\w-]*)\s*\(\s*(.*?)\s*\)\s*$")


def parse_generator_spec(text: str) -> GeneratorSpec:
    """Parse ``name(k=v, k=v)`` strings; hyphens in keys map to underscores."""
    m = _SPEC_RE.match(text)
    if not m:
        raise ValueError(f"malformed generator spec {text!r} (expected name(k=v,...))")
    name, body = m.group(1), m.group(2)
    params: dict = {}
    if body:
        for part in body.split(","):
            if "=" not in part:
                raise ValueError(f"malformed parameter {part!r} in generator spec {text!r}")
            key, val = part.split("=", 1)
            key = key.strip().replace("-", "_")
            val = val.strip()
            params[key] = int(val) if re.fullmatch(r"[+-]?\d+", val) else float(val)
    return GeneratorSpec(name, params)


def _columns(p: int) -> tuple[Column, ...]:
    return tuple(Column(f"x{j + 1}", "numeric") for j in range(p))


def _binary_target() -> Column:
    return Column("y", "categorical", ("0", "1"))


def _check_sizes(n: int, p: int) -> None:
    if n < 2 or p < 1:
        raise ValueError(f"non-positive or degenerate sizes n={n}, p={p}")


def _two_gaussians(n: int, p: int, sep: float, rng: np.random.Generator) -> Dataset:
    # Two spherical unit-variance classes whose means are `sep` apart, so the
    # best achievable error is Phi(-sep/2).  Class 0 takes the extra row when
    # n is odd.
    _check_sizes(n, p)
    n0 = (n + 1) // 2
    y = np.concatenate([np.zeros(n0, dtype=np.int64), np.ones(n - n0, dtype=np.int64)])
    X = rng.standard_normal((n, p))
    X[y == 1] += sep / np.sqrt(p)
    return Dataset(X, y, TaskKind.BINARY, 2, _columns(p), _binary_target())


def _label_noise(n: int, p: int, flip: float, rng: np.random.Generator) -> Dataset:
    # Linearly separable rule sign(x1) with an exact round(flip*n) labels
    # flipped uniformly at random.
    _check_sizes(n, p)
    if not 0.0 <= flip <= 1.0:
        raise ValueError(f"flip fraction must be in [0,1], got {flip}")
    X = rng.standard_normal((n, p))
    y = (X[:, 0] > 0).astype(np.int64)
    n_flip = int(round(flip * n))
    idx = rng.choice(n, size=n_flip, replace=False)
    y[idx] ^= 1
    if np.unique(y).size < 2:
        y[0] ^= 1  # keep both classes present on tiny/degenerate draws
    return Dataset(X, y, TaskKind.BINARY, 2, _columns(p), _binary_target())


def _linear_regression(n: int, p: int, noise_sd: float, rng: np.random.Generator) -> Dataset:
    _check_sizes(n, p)
    if noise_sd < 0:
        raise ValueError("noise_sd must be non-negative")
    X = rng.standard_normal((n, p))
    beta = np.ones(p) / np.sqrt(p)
    y = X @ beta + noise_sd * rng.standard_normal(n)
    return Dataset(X, y, TaskKind.REGRESSION, 0, _columns(p),
                   Column("y", "numeric"))


def _margin_traps(n: int, p: int, trap_frac: float, trap_shift: float,
                  sep: float, spread: float, rng: np.random.Generator) -> Dataset:
    """Well-separated gaussians plus mislabeled points planted in the margin.

    Half of the trap points carry the class-1 label but sit at fraction
    ``trap_shift`` of the way from the class-0 mean towards the class-1
    mean; the other half mirror this (class-0 label at fraction
    1 - trap_shift), so for trap_shift < 0.5 every trap is slightly on the
    wrong side of the midpoint.  Traps are scattered with standard
    deviation ``spread`` in the directions orthogonal to the
    class-separation axis so that each is isolated rather than a learnable
    cluster.  Trees mostly cut the empty margin near its middle, so a trap
    is misclassified a little more often than not: its single-tree error
    lands just above 0.5, which is exactly the difficulty profile that
    makes mean error-rate curves rise again after an early minimum.
    """
    _check_sizes(n, p)
    if not 0.0 < trap_frac < 0.5:
        raise ValueError("trap_frac must be in (0, 0.5)")
    n_traps = max(2, int(round(trap_frac * n)))
    n_traps += n_traps % 2
    half = n_traps // 2
    base = _two_gaussians(n - n_traps, p, sep, rng)
    offset = sep / np.sqrt(p)
    lateral = rng.standard_normal((n_traps, p)) * spread
    lateral -= lateral.mean(axis=1, keepdims=True)  # no along-axis component
    axis_pos = np.concatenate([np.full(half, trap_shift),
                               np.full(half, 1.0 - trap_shift)])
    traps = axis_pos[:, None] * offset + lateral
    traps += rng.standard_normal((n_traps, p)) * 0.05
    trap_y = np.concatenate([np.ones(half, dtype=np.int64),
                             np.zeros(half, dtype=np.int64)])
    X = np.vstack([base.X, traps])
    y = np.concatenate([base.y, trap_y])
    return Dataset(X, y, TaskKind.BINARY, 2, _columns(p), _binary_target())


GENERATORS = {
    "two-gaussians": lambda q, rng: _two_gaussians(
        int(q["n"]), int(q["p"]), float(q.get("sep", 2.0)), rng),
    "label-noise": lambda q, rng: _label_noise(
        int(q["n"]), int(q["p"]), float(q.get("flip", 0.1)), rng),
    "linear-regression": lambda q, rng: _linear_regression(
        int(q["n"]), int(q["p"]), float(q.get("noise_sd", 1.0)), rng),
    "margin-traps": lambda q, rng: _margin_traps(
        int(q["n"]), int(q["p"]), float(q.get("trap_frac", 0.1)),
        float(q.get("trap_shift", 0.4)), float(q.get("sep", 6.0)),
        float(q.get("spread", 1.5)), rng),
}


def synthesize(spec: GeneratorSpec | str, seed: int) -> Dataset:
    """Build a synthetic dataset, bit-identical for fixed (spec, seed)."""
    if isinstance(spec, str):
        spec = parse_generator_spec(spec)
    try:
        build = GENERATORS[spec.name]
    except KeyError:
        raise ValueError(
            f"unknown generator {spec.name!r}; known: {sorted(GENERATORS)}") from None
    try:
        ds = build(spec.params, rng_for(seed, "synthesize", spec.name))
    except KeyError as exc:
        raise ValueError(f"generator {spec.name!r} missing parameter {exc}") from None
    return Dataset(ds.X, ds.y, ds.task, ds.n_classes, ds.columns, ds.target,
                   name=f"{spec.label()}#seed={seed}")
