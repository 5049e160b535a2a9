"""Desk-scale reproduction of the repeated-training study protocol.

``run_study`` trains R forests of T trees per dataset, averages the OOB
curves over repetitions, and writes plot-ready CSV / JSON artifacts:
mean curves, non-monotonicity reports, difficulty histograms,
convergence and performance-gain summaries, and measure-correlation
matrices.  Everything is deterministic for a fixed config, including
the parallelism degree.
"""

from __future__ import annotations

import json
import math
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .curves import (OOBCurve, average_curves, compute_curve, curves_to_columns,
                     nonmonotonicity_report, write_curves_csv)
from .datasets import Dataset, TaskKind, load_csv, parse_generator_spec, synthesize
from .forest import ForestParams, resolve_jobs, train_forest
from .measures import MeasureId, default_measures
from .seeding import derive_seed
from .theory import OOB_TREE_FRACTION, difficulty_histogram, estimate_difficulties

__all__ = [
    "kendall_tau_b",
    "pearson",
    "CorrelationEntry",
    "CorrelationReport",
    "correlate_curves",
    "ConvergenceSummary",
    "convergence_summary",
    "StudyConfig",
    "StudyResult",
    "run_study",
    "BUNDLED_SUITES",
]


# ---------------------------------------------------------------------------
# curve-to-curve association
# ---------------------------------------------------------------------------


def pearson(x, y) -> float:
    """Plain linear correlation; NaN when either side is constant."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    dx = x - x.mean()
    dy = y - y.mean()
    denom = math.sqrt(float(np.sum(dx * dx)) * float(np.sum(dy * dy)))
    if denom == 0.0:
        return float("nan")
    return float(np.sum(dx * dy)) / denom


def kendall_tau_b(x, y) -> float:
    """Tie-adjusted rank correlation by direct pair counting.

    tau_b = (C - D) / sqrt((n0 - tx)(n0 - ty)) with n0 = n(n-1)/2 and
    tx, ty the tied-pair counts per side.  Quadratic in n, which is fine
    for curve grids (<= a few thousand points).
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n = x.shape[0]
    if n != y.shape[0] or n < 2:
        raise ValueError("need two equal-length sequences of >= 2 values")
    sx = np.sign(x[:, None] - x[None, :])
    sy = np.sign(y[:, None] - y[None, :])
    iu = np.triu_indices(n, k=1)
    prod = sx[iu] * sy[iu]
    c_minus_d = int(np.sum(prod > 0)) - int(np.sum(prod < 0))
    n0 = n * (n - 1) // 2
    tx = int(np.sum(sx[iu] == 0))
    ty = int(np.sum(sy[iu] == 0))
    if tx == n0 or ty == n0:
        return float("nan")
    return c_minus_d / math.sqrt(float(n0 - tx) * float(n0 - ty))


@dataclass(frozen=True)
class CorrelationEntry:
    measures: tuple[str, ...]
    pearson: np.ndarray  # (m, m), NaN where undefined
    kendall: np.ndarray
    n_points: int

    def to_dict(self) -> dict:
        def clean(mat):
            return [[None if not np.isfinite(v) else float(v) for v in row]
                    for row in mat]
        return {
            "measures": list(self.measures),
            "pearson": clean(self.pearson),
            "kendall": clean(self.kendall),
            "n_points": self.n_points,
        }


def correlate_curves(curves: dict[MeasureId, OOBCurve],
                     max_t: int = 500) -> CorrelationEntry:
    """Pearson and Kendall tau-b matrices between measure curves on their
    common defined grid, truncated to T <= max_t.

    Values are used as-is (no orientation flip), so higher-is-better
    measures naturally anti-correlate with losses.
    """
    if len(curves) < 2:
        raise ValueError("need at least two measure curves to correlate")
    items = sorted(curves.items(), key=lambda kv: kv[0].value)
    grid = items[0][1].grid
    common = np.ones(grid.shape[0], dtype=bool)
    for _, c in items:
        if c.grid.shape != grid.shape or np.any(c.grid != grid):
            raise ValueError("curves do not share a grid")
        common &= c.defined_mask()
    common &= grid <= max_t
    if int(np.sum(common)) < 3:
        raise ValueError("fewer than 3 common defined grid points")
    m = len(items)
    pear = np.eye(m)
    kend = np.eye(m)
    series = [c.values[common] for _, c in items]
    for i in range(m):
        for j in range(i + 1, m):
            pear[i, j] = pear[j, i] = pearson(series[i], series[j])
            kend[i, j] = kend[j, i] = kendall_tau_b(series[i], series[j])
    return CorrelationEntry(
        measures=tuple(mid.value for mid, _ in items),
        pearson=pear, kendall=kend, n_points=int(np.sum(common)))


@dataclass(frozen=True)
class CorrelationReport:
    per_dataset: dict[str, CorrelationEntry]
    averages: dict[tuple[str, ...], CorrelationEntry]

    def to_dict(self) -> dict:
        return {
            "datasets": {k: v.to_dict() for k, v in sorted(self.per_dataset.items())},
            "averages": {" ,".join(k): v.to_dict() for k, v in sorted(self.averages.items())},
        }


def _average_entries(entries: list[CorrelationEntry]) -> CorrelationEntry:
    # elementwise mean ignoring undefined (NaN) cells
    pear = np.nanmean(np.stack([e.pearson for e in entries]), axis=0)
    kend = np.nanmean(np.stack([e.kendall for e in entries]), axis=0)
    return CorrelationEntry(measures=entries[0].measures, pearson=pear,
                            kendall=kend,
                            n_points=int(np.mean([e.n_points for e in entries])))


def build_correlation_report(entries: dict[str, CorrelationEntry]) -> CorrelationReport:
    groups: dict[tuple[str, ...], list[CorrelationEntry]] = {}
    for entry in entries.values():
        groups.setdefault(entry.measures, []).append(entry)
    averages = {ms: _average_entries(group) for ms, group in groups.items()}
    return CorrelationReport(per_dataset=entries, averages=averages)


# ---------------------------------------------------------------------------
# convergence
# ---------------------------------------------------------------------------

GAIN_START_T = 11


@dataclass(frozen=True)
class ConvergenceSummary:
    t_at_tolerance: int
    effective_t: int
    converged: bool
    tolerance: float
    gain_from_t: int
    gain: float
    final_value: float

    def to_dict(self) -> dict:
        return asdict(self)


def convergence_summary(curve: OOBCurve, tolerance: float) -> ConvergenceSummary:
    """Smallest T after which the curve stays within ``tolerance`` of its
    final value, plus the performance gain relative to the earliest
    plotted point (T = 11, or the first defined point after it)."""
    defined = curve.defined_mask()
    if not np.any(defined):
        raise ValueError("curve has no defined values")
    grid = curve.grid[defined]
    values = curve.values[defined]
    if grid[-1] <= GAIN_START_T:
        raise ValueError(f"curve must be defined beyond T={GAIN_START_T}")
    final = float(values[-1])
    ok = np.abs(values - final) <= tolerance
    suffix_ok = np.flip(np.logical_and.accumulate(np.flip(ok)))
    first = int(np.argmax(suffix_ok))  # last entry is always True
    t_at = int(grid[first])
    converged = t_at < int(grid[-1])
    start_idx = int(np.argmax(grid >= GAIN_START_T))
    if grid[start_idx] < GAIN_START_T:
        raise ValueError(f"curve has no defined values at or after T={GAIN_START_T}")
    return ConvergenceSummary(
        t_at_tolerance=t_at,
        effective_t=max(1, int(math.floor(t_at * OOB_TREE_FRACTION + 0.5))),
        converged=converged,
        tolerance=tolerance,
        gain_from_t=int(grid[start_idx]),
        gain=final - float(values[start_idx]),
        final_value=final,
    )


# ---------------------------------------------------------------------------
# study protocol
# ---------------------------------------------------------------------------

BUNDLED_SUITES: dict[str, tuple[str, ...]] = {
    # datasets engineered to carry difficulty mass just above 0.5, whose
    # mean error-rate curves rise again after an early minimum
    "traps": (
        "margin-traps(n=300,p=5,trap_frac=0.10,trap_shift=0.38)",
        "margin-traps(n=300,p=5,trap_frac=0.12,trap_shift=0.40)",
        "margin-traps(n=240,p=4,trap_frac=0.10,trap_shift=0.40)",
    ),
    # well-behaved classification suites with monotone mean curves
    "clean": (
        "two-gaussians(n=200,p=5,sep=3.0)",
        "two-gaussians(n=300,p=5,sep=3.0)",
        "two-gaussians(n=240,p=8,sep=4.0)",
    ),
    "regression": (
        "linear-regression(n=250,p=8,noise_sd=1.0)",
    ),
    "demo": (
        "two-gaussians(n=120,p=4,sep=2.5)",
        "linear-regression(n=120,p=4,noise_sd=0.5)",
    ),
}


@dataclass(frozen=True)
class DatasetSource:
    text: str
    target: str = "y"
    task: str | None = None

    def resolve(self, master_seed: int, index: int) -> Dataset:
        if "(" in self.text:
            spec = parse_generator_spec(self.text)
            return synthesize(spec, seed=derive_seed(master_seed, "data", index))
        return load_csv(self.text, target=self.target, task=self.task)

    @staticmethod
    def from_obj(obj) -> "DatasetSource":
        if isinstance(obj, str):
            return DatasetSource(text=obj)
        if isinstance(obj, dict):
            text = obj.get("path") or obj.get("generator")
            if not text:
                raise ValueError(f"dataset entry needs 'path' or 'generator': {obj}")
            return DatasetSource(text=text, target=obj.get("target", "y"),
                                 task=obj.get("task"))
        raise ValueError(f"malformed dataset entry: {obj!r}")

    def to_obj(self):
        if self.target == "y" and self.task is None:
            return self.text
        key = "generator" if "(" in self.text else "path"
        obj = {key: self.text, "target": self.target}
        if self.task:
            obj["task"] = self.task
        return obj


@dataclass(frozen=True)
class StudyConfig:
    datasets: tuple[DatasetSource, ...]
    outdir: str
    trees: int = 2000
    repetitions: int = 100
    master_seed: int = 0
    jobs: int | None = None
    measures: tuple[str, ...] | None = None  # None -> defaults per task
    epsilon_trees: int = 10_000
    estimate_epsilons: bool = True
    epsilon_bins: int = 20
    nonmono_window: tuple[int, int] = (10, 150)
    nonmono_delta: float = 0.005
    correlation_max_t: int = 500
    convergence_tolerance: float = 0.005
    mtry: int | None = None
    min_node_size: int | None = None

    def __post_init__(self):
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")
        if self.trees < GAIN_START_T:
            raise ValueError(f"trees must be >= {GAIN_START_T} so that measures can be defined")
        if not self.datasets:
            raise ValueError("study needs at least one dataset")

    @staticmethod
    def from_dict(obj: dict) -> "StudyConfig":
        obj = dict(obj)
        if obj.pop("paper_scale", False):
            obj.setdefault("repetitions", 1000)
        datasets = tuple(DatasetSource.from_obj(d) for d in obj.pop("datasets", []))
        window = obj.pop("nonmono_window", (10, 150))
        known = {f.name for f in StudyConfig.__dataclass_fields__.values()}  # type: ignore[attr-defined]
        unknown = set(obj) - known
        if unknown:
            raise ValueError(f"unknown config field(s): {sorted(unknown)}")
        if "measures" in obj and obj["measures"] is not None:
            obj["measures"] = tuple(obj["measures"])
        return StudyConfig(datasets=datasets, nonmono_window=tuple(window), **obj)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["datasets"] = [d.to_obj() for d in self.datasets]
        out["nonmono_window"] = list(self.nonmono_window)
        if self.measures is not None:
            out["measures"] = list(self.measures)
        return out


@dataclass
class DatasetOutcome:
    dataset_id: str
    name: str
    task: str
    files: dict[str, str]
    nonmonotone_error_rate: bool | None
    summary: dict


@dataclass
class StudyResult:
    outdir: Path
    outcomes: dict[str, DatasetOutcome]
    failures: dict[str, str]
    correlation_report: CorrelationReport | None

    @property
    def exit_code(self) -> int:
        return 2 if self.failures else 0


def _measures_for(config: StudyConfig, data: Dataset) -> tuple[MeasureId, ...]:
    if config.measures is None:
        return default_measures(data.task)
    chosen = tuple(MeasureId(m) for m in config.measures)
    wanted_kind = data.task.is_classification
    usable = tuple(m for m in chosen
                   if (m.required_input in ("labels", "probabilities")) == wanted_kind)
    return usable or default_measures(data.task)


def _forest_params(config: StudyConfig, data: Dataset) -> ForestParams:
    from .cart import TreeParams

    base = TreeParams.defaults(data.task, data.p)
    tree = TreeParams(mtry=config.mtry or base.mtry,
                      min_node_size=config.min_node_size or base.min_node_size)
    return ForestParams(tree=tree)


_REP_STATE: dict = {}


def _rep_init(data, n_trees, params, measures, tie_master):
    _REP_STATE["args"] = (data, n_trees, params, measures, tie_master)


def _run_rep(payload: tuple[int, int]) -> dict:
    rep, forest_seed = payload
    data, n_trees, params, measures, tie_master = _REP_STATE["args"]
    forest = train_forest(data, n_trees, params, master_seed=forest_seed, n_jobs=1)
    curves = compute_curve(forest, data, measures,
                           tie_seed=derive_seed(tie_master, rep))
    return {m.value: curves[m].values for m in measures}


def _rep_curves(data: Dataset, config: StudyConfig, d_index: int,
                measures: tuple[MeasureId, ...], jobs: int) -> dict[MeasureId, OOBCurve]:
    params = _forest_params(config, data)
    tie_master = derive_seed(config.master_seed, "tie", d_index)
    payloads = [(r, derive_seed(config.master_seed, "forest", d_index, r))
                for r in range(config.repetitions)]
    if jobs == 1 or len(payloads) < 2 * jobs:
        _rep_init(data, config.trees, params, measures, tie_master)
        results = [_run_rep(pl) for pl in payloads]
    else:
        chunks = [payloads[i::jobs] for i in range(jobs)]
        by_rep: dict[int, dict] = {}
        with ProcessPoolExecutor(max_workers=jobs, initializer=_rep_init,
                                 initargs=(data, config.trees, params, measures,
                                           tie_master)) as pool:
            for chunk, outs in zip(chunks, pool.map(_chunk_runner, chunks)):
                for (rep, _), out in zip(chunk, outs):
                    by_rep[rep] = out
        results = [by_rep[r] for r in range(config.repetitions)]

    grid = np.arange(1, config.trees + 1)
    mean_curves: dict[MeasureId, OOBCurve] = {}
    for m in measures:
        stacked = np.stack([res[m.value] for res in results])
        reps = [OOBCurve(measure=m, grid=grid, values=stacked[i],
                         first_defined_t=None, metadata={})
                for i in range(stacked.shape[0])]
        mean = average_curves(reps)
        mean_curves[m] = replace(
            mean, metadata={"dataset": data.name, "task": data.task.value,
                            "measure": m.value, "trees": config.trees,
                            "repetitions": config.repetitions,
                            "master_seed": config.master_seed,
                            "source": "empirical-mean"})
    return mean_curves


def _chunk_runner(chunk: list[tuple[int, int]]) -> list[dict]:
    return [_run_rep(pl) for pl in chunk]


def _dataset_id(index: int, data: Dataset) -> str:
    safe = "".join(ch if ch.isalnum() or ch in "()=,.-" else "_" for ch in data.name)
    return f"d{index:02d}_{safe}"


def _json_dump(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _process_dataset(config: StudyConfig, index: int, source: DatasetSource,
                     jobs: int, outdir: Path) -> tuple[DatasetOutcome, CorrelationEntry | None]:
    data = source.resolve(config.master_seed, index)
    dataset_id = _dataset_id(index, data)
    measures = _measures_for(config, data)
    mean_curves = _rep_curves(data, config, index, measures, jobs)

    files: dict[str, str] = {}
    grid, columns = curves_to_columns(mean_curves)
    curve_path = outdir / f"{dataset_id}.curve.csv"
    write_curves_csv(curve_path, grid, columns,
                     metadata=mean_curves[measures[0]].metadata)
    files["curve"] = curve_path.name

    nonmono = {}
    for m, curve in mean_curves.items():
        try:
            nonmono[m.value] = nonmonotonicity_report(
                curve, config.nonmono_window, config.nonmono_delta).to_dict()
        except ValueError as exc:
            nonmono[m.value] = {"error": str(exc)}
    nonmono_path = outdir / f"{dataset_id}.nonmono.json"
    _json_dump(nonmono_path, nonmono)
    files["nonmono"] = nonmono_path.name

    flagged = None
    if data.task.is_classification and MeasureId.ERROR_RATE in mean_curves:
        entry = nonmono.get(MeasureId.ERROR_RATE.value, {})
        flagged = entry.get("is_nonmonotone")

    if config.estimate_epsilons and data.task is TaskKind.BINARY:
        forest = train_forest(data, config.epsilon_trees, _forest_params(config, data),
                              master_seed=derive_seed(config.master_seed, "eps", index),
                              n_jobs=jobs)
        diffs = estimate_difficulties(forest, data)
        eps_path = outdir / f"{dataset_id}.epsilons.csv"
        with open(eps_path, "w", encoding="utf-8") as fh:
            fh.write("row,epsilon\n")
            for i, e in enumerate(diffs.epsilons):
                fh.write(f"{i},{e!r}\n")
        files["epsilons"] = eps_path.name
        edges, counts = difficulty_histogram(diffs, config.epsilon_bins)
        hist_path = outdir / f"{dataset_id}.eps_hist.csv"
        with open(hist_path, "w", encoding="utf-8") as fh:
            fh.write("bin_low,bin_high,count\n")
            for i in range(counts.shape[0]):
                fh.write(f"{edges[i]!r},{edges[i + 1]!r},{int(counts[i])}\n")
        files["eps_hist"] = hist_path.name

    convergence = {}
    gains = {}
    for m, curve in mean_curves.items():
        try:
            summ = convergence_summary(curve, config.convergence_tolerance)
            convergence[m.value] = summ.to_dict()
            gains[m.value] = summ.gain
        except ValueError as exc:
            convergence[m.value] = {"error": str(exc)}

    corr_entry = None
    if len(mean_curves) >= 2:
        try:
            corr_entry = correlate_curves(mean_curves, config.correlation_max_t)
        except ValueError:
            corr_entry = None

    first_def = mean_curves[measures[0]].first_defined_t
    summary = {
        "dataset": data.name,
        "task": data.task.value,
        "n": data.n,
        "p": data.p,
        "repetitions": config.repetitions,
        "trees": config.trees,
        "first_defined_t": first_def,
        "gains_vs_start": gains,
        "convergence": convergence,
        "nonmonotone_error_rate": flagged,
    }
    summary_path = outdir / f"{dataset_id}.summary.json"
    _json_dump(summary_path, summary)
    files["summary"] = summary_path.name

    outcome = DatasetOutcome(dataset_id=dataset_id, name=data.name,
                             task=data.task.value, files=files,
                             nonmonotone_error_rate=flagged, summary=summary)
    return outcome, corr_entry


def run_study(config: StudyConfig) -> StudyResult:
    """Run the whole protocol; per-dataset failures are isolated and
    reported, never fatal.  Exit code semantics: 0 clean, 2 partial."""
    outdir = Path(config.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    jobs = resolve_jobs(config.jobs)
    _json_dump(outdir / "config.json", config.to_dict())

    outcomes: dict[str, DatasetOutcome] = {}
    failures: dict[str, str] = {}
    corr_entries: dict[str, CorrelationEntry] = {}
    for index, source in enumerate(config.datasets):
        label = f"d{index:02d}:{source.text}"
        try:
            outcome, corr = _process_dataset(config, index, source, jobs, outdir)
        except Exception as exc:  # noqa: BLE001 - isolation is the contract
            failures[label] = f"{type(exc).__name__}: {exc}"
            continue
        outcomes[outcome.dataset_id] = outcome
        if corr is not None:
            corr_entries[outcome.dataset_id] = corr

    report = build_correlation_report(corr_entries) if corr_entries else None
    if report is not None:
        _json_dump(outdir / "correlations.json", report.to_dict())

    census = {
        "n_datasets": len(config.datasets),
        "n_completed": len(outcomes),
        "n_failed": len(failures),
        "failures": failures,
        "nonmonotone_flagged": sorted(
            oid for oid, oc in outcomes.items() if oc.nonmonotone_error_rate),
        "window": list(config.nonmono_window),
        "delta": config.nonmono_delta,
    }
    _json_dump(outdir / "study.json", census)
    return StudyResult(outdir=outdir, outcomes=outcomes, failures=failures,
                       correlation_report=report)
