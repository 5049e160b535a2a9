"""Out-of-bag performance curves: measure(T') for every prefix T' = 1..T.

A single pass over the forest maintains the OOB vote aggregates; at each
prefix the requested measures are evaluated from the current predictions.
Curve values are undefined (NaN) before the first prefix at which every
observation has been out-of-bag at least once, mirroring how such curves
are normally plotted.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .datasets import Dataset
from .forest import Forest, OOBPredictions, VoteMatrix, add_tree_votes, oob_predictions
from .measures import DEFAULT_LOG_OFFSET, MeasureId, default_measures, evaluate_measure
from .seeding import derive_seed

__all__ = [
    "OOBCurve",
    "compute_curve",
    "average_curves",
    "NonMonotonicityReport",
    "nonmonotonicity_report",
    "write_curves_csv",
    "read_curves_csv",
    "curves_to_columns",
    "CurveFile",
]

NA_TOKEN = "NA"


@dataclass(frozen=True)
class OOBCurve:
    measure: MeasureId
    grid: np.ndarray  # tree counts, ascending
    values: np.ndarray  # float64, NaN where undefined
    first_defined_t: int | None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.grid.shape != self.values.shape:
            raise ValueError("grid and values must align")

    def value_at(self, t: int) -> float:
        idx = np.searchsorted(self.grid, t)
        if idx >= self.grid.shape[0] or self.grid[idx] != t:
            raise KeyError(f"T={t} not on curve grid")
        return float(self.values[idx])

    def defined_mask(self) -> np.ndarray:
        return np.isfinite(self.values)


def compute_curve(forest: Forest, data: Dataset, measures=None, tie_seed: int = 0,
                  log_offset: float = DEFAULT_LOG_OFFSET,
                  metadata: dict | None = None) -> dict[MeasureId, OOBCurve]:
    """Compute OOB curves for every requested measure in one prefix pass.

    The tie-breaking stream at prefix T' is derived from (tie_seed, T'), so
    averaging curves across repetitions is well defined and vote vectors
    without ties never consume randomness.
    """
    if (forest.n, forest.p) != (data.n, data.p) or forest.task is not data.task:
        raise ValueError("forest was not trained on this dataset shape/task")
    measures = tuple(measures) if measures is not None else default_measures(data.task)
    is_clf = data.task.is_classification
    for m in measures:
        needs_clf = m.required_input in ("labels", "probabilities")
        if needs_clf != is_clf:
            raise ValueError(f"measure {m.value} does not apply to {data.task.value} tasks")

    n, n_trees = data.n, forest.n_trees
    oob_count = np.zeros(n, dtype=np.int64)
    votes = np.zeros((n, forest.n_classes), dtype=np.int64) if is_clf else None
    pred_sum = None if is_clf else np.zeros(n, dtype=np.float64)

    values = {m: np.full(n_trees, np.nan) for m in measures}
    n_undefined = n
    first_defined_t: int | None = None
    base_meta = {
        "dataset": data.name,
        "task": data.task.value,
        "trees": n_trees,
        "master_seed": forest.master_seed,
        "tie_seed": tie_seed,
        "mtry": forest.params.tree.mtry,
        "min_node_size": forest.params.tree.min_node_size,
        "sampling": forest.params.sampling,
        "source": "empirical",
    }
    if metadata:
        base_meta.update(metadata)

    for t in range(n_trees):
        add_tree_votes(forest, data, t, oob_count, votes, pred_sum)
        t_prime = t + 1
        if first_defined_t is None:
            n_undefined = int(np.sum(oob_count == 0))
            if n_undefined > 0:
                continue
            first_defined_t = t_prime
        snapshot = VoteMatrix(prefix=t_prime, oob_count=oob_count, votes=votes,
                              pred_sum=pred_sum, forest_tag=forest.tag())
        pred = oob_predictions(snapshot, tie_seed=derive_seed(tie_seed, t_prime))
        for m in measures:
            values[m][t] = evaluate_measure(m, data.y, pred, log_offset)

    grid = np.arange(1, n_trees + 1)
    return {
        m: OOBCurve(measure=m, grid=grid, values=values[m],
                    first_defined_t=first_defined_t,
                    metadata=dict(base_meta, measure=m.value))
        for m in measures
    }


def average_curves(curves: list[OOBCurve]) -> OOBCurve:
    """Pointwise mean; a point is defined iff defined in every input."""
    if not curves:
        raise ValueError("need at least one curve")
    first = curves[0]
    for c in curves[1:]:
        if c.measure is not first.measure:
            raise ValueError("curves measure mismatch")
        if c.grid.shape != first.grid.shape or np.any(c.grid != first.grid):
            raise ValueError("curves grid mismatch")
    stacked = np.stack([c.values for c in curves])
    mean = stacked.mean(axis=0)  # NaN wherever any input is undefined
    finite = np.isfinite(mean)
    first_def = int(first.grid[np.argmax(finite)]) if finite.any() else None
    return OOBCurve(measure=first.measure, grid=first.grid.copy(), values=mean,
                    first_defined_t=first_def,
                    metadata=dict(first.metadata, aggregated_over=len(curves)))


@dataclass(frozen=True)
class NonMonotonicityReport:
    is_nonmonotone: bool
    argmin_t: int
    min_value: float
    final_value: float
    window: tuple[int, int]
    delta: float
    measure: str

    def to_dict(self) -> dict:
        return {
            "is_nonmonotone": self.is_nonmonotone,
            "argmin_t": self.argmin_t,
            "min_value": self.min_value,
            "final_value": self.final_value,
            "window": list(self.window),
            "delta": self.delta,
            "measure": self.measure,
        }


def nonmonotonicity_report(curve: OOBCurve, window: tuple[int, int] = (10, 150),
                           delta: float = 0.005) -> NonMonotonicityReport:
    """Flag curves whose final value exceeds their windowed minimum by at
    least ``delta`` (the signature of a rise after an early minimum)."""
    lo, hi = window
    defined = curve.defined_mask()
    in_window = defined & (curve.grid >= lo) & (curve.grid <= hi)
    if not np.any(in_window):
        raise ValueError(f"curve has no defined values in window [{lo}, {hi}]")
    w_values = curve.values[in_window]
    w_grid = curve.grid[in_window]
    k = int(np.argmin(w_values))
    min_value = float(w_values[k])
    final_value = float(curve.values[defined][-1])
    return NonMonotonicityReport(
        is_nonmonotone=bool(final_value - min_value >= delta),
        argmin_t=int(w_grid[k]),
        min_value=min_value,
        final_value=final_value,
        window=(lo, hi),
        delta=delta,
        measure=curve.measure.value,
    )


# ---------------------------------------------------------------------------
# plot-ready CSV (shared by empirical and analytic curves)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CurveFile:
    metadata: dict
    grid: np.ndarray
    columns: dict[str, np.ndarray]


def write_curves_csv(path, grid: np.ndarray, columns: dict[str, np.ndarray],
                     metadata: dict | None = None) -> None:
    """Columns ``T,<measure>,...`` with ``# key=value`` metadata header
    lines; undefined values are written as NA."""
    path = Path(path)
    names = list(columns)
    for name in names:
        if columns[name].shape != grid.shape:
            raise ValueError(f"column {name!r} does not match the grid")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        for key, val in (metadata or {}).items():
            fh.write(f"# {key}={val}\n")
        writer = csv.writer(fh)
        writer.writerow(["T"] + names)
        for i in range(grid.shape[0]):
            row = [str(int(grid[i]))]
            for name in names:
                v = columns[name][i]
                row.append(NA_TOKEN if not np.isfinite(v) else repr(float(v)))
            writer.writerow(row)


def read_curves_csv(path) -> CurveFile:
    metadata: dict = {}
    rows: list[list[str]] = []
    with open(path, newline="", encoding="utf-8") as fh:
        for line in fh:
            if line.startswith("#"):
                body = line[1:].strip()
                if "=" in body:
                    key, val = body.split("=", 1)
                    metadata[key.strip()] = val.strip()
                continue
            rows.append(next(csv.reader([line])))
    if not rows:
        raise ValueError(f"{path}: no curve data")
    header, data_rows = rows[0], rows[1:]
    if not header or header[0] != "T":
        raise ValueError(f"{path}: first column must be T")
    grid = np.array([int(r[0]) for r in data_rows], dtype=np.int64)
    columns = {}
    for j, name in enumerate(header[1:], start=1):
        columns[name] = np.array(
            [np.nan if r[j] == NA_TOKEN else float(r[j]) for r in data_rows])
    return CurveFile(metadata=metadata, grid=grid, columns=columns)


def curves_to_columns(curves: dict[MeasureId, OOBCurve]) -> tuple[np.ndarray, dict]:
    """Align a measure->curve mapping into (grid, named columns) for CSV."""
    items = list(curves.values())
    grid = items[0].grid
    for c in items[1:]:
        if c.grid.shape != grid.shape or np.any(c.grid != grid):
            raise ValueError("curves do not share a grid")
    return grid, {c.measure.value: c.values for c in items}
