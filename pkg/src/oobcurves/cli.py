"""Command-line interface.

Subcommands: ``train`` (one forest, OOB curves to CSV), ``study`` (full
repeated-training protocol from a JSON config, each field overridable by
flags), ``theory`` (analytic expected curves from difficulties),
``epsilons`` (estimate per-observation difficulties with a large forest),
``correlate`` (measure-curve correlation matrices), ``report``
(summarize a study directory).

Exit codes: 0 success, 1 configuration/usage errors, 2 partial dataset
failures inside a study.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .curves import read_curves_csv, write_curves_csv, OOBCurve
from .cart import TreeParams
from .datasets import Dataset, TaskKind, load_csv, synthesize
from .forest import ForestParams, JOBS_ENV_VAR, save_forest, train_forest
from .measures import MeasureId, default_measures
from .seeding import derive_seed
from .study import (BUNDLED_SUITES, DatasetSource, StudyConfig, build_correlation_report,
                    correlate_curves, run_study)
from .theory import (ANALYTIC_MEASURES, DifficultyVector, difficulty_histogram,
                     estimate_difficulties, expected_curve)
from .curves import compute_curve, curves_to_columns

__all__ = ["main"]


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # config errors exit 1, not argparse's 2
        raise UsageError(message)


def _load_dataset(args) -> Dataset:
    text = args.data
    if "(" in text:
        return synthesize(text, seed=args.data_seed)
    return load_csv(text, target=args.target, task=args.task)


def _tree_params(args, data: Dataset) -> ForestParams:
    base = TreeParams.defaults(data.task, data.p)
    tree = TreeParams(mtry=args.mtry or base.mtry,
                      min_node_size=args.min_node_size or base.min_node_size)
    return ForestParams(tree=tree)


def _parse_measures(text: str | None, data: Dataset):
    if not text:
        return default_measures(data.task)
    return tuple(MeasureId(m.strip()) for m in text.split(","))


def _parse_grid(text: str) -> list[int]:
    if ":" in text:
        parts = text.split(":")
        if len(parts) == 2:
            lo, hi, step = int(parts[0]), int(parts[1]), 1
        elif len(parts) == 3:
            lo, hi, step = int(parts[0]), int(parts[1]), int(parts[2])
        else:
            raise UsageError(f"malformed grid {text!r}")
        return list(range(lo, hi + 1, step))
    return [int(tok) for tok in text.split(",") if tok.strip()]


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def _cmd_train(args) -> int:
    data = _load_dataset(args)
    params = _tree_params(args, data)
    measures = _parse_measures(args.measures, data)
    forest = train_forest(data, args.trees, params, master_seed=args.seed,
                          n_jobs=args.jobs)
    curves = compute_curve(forest, data, measures, tie_seed=args.tie_seed)
    grid, columns = curves_to_columns(curves)
    write_curves_csv(args.out, grid, columns,
                     metadata=next(iter(curves.values())).metadata)
    if args.save_forest:
        save_forest(forest, args.save_forest)
    first = next(iter(curves.values())).first_defined_t
    print(f"trained {args.trees} trees on {data.name} "
          f"(n={data.n}, p={data.p}, task={data.task.value})")
    print(f"curves -> {args.out} (first defined T: {first})")
    return 0


def _cmd_study(args) -> int:
    cfg: dict = {}
    if args.config:
        cfg = json.loads(Path(args.config).read_text(encoding="utf-8"))
    datasets = list(cfg.get("datasets", []))
    cli_datasets: list = []
    for suite in args.suite or []:
        if suite not in BUNDLED_SUITES:
            raise UsageError(f"unknown suite {suite!r}; known: {sorted(BUNDLED_SUITES)}")
        cli_datasets.extend(BUNDLED_SUITES[suite])
    cli_datasets.extend(args.data or [])
    if cli_datasets:
        datasets = cli_datasets
    cfg["datasets"] = datasets

    overrides = {
        "outdir": args.outdir,
        "trees": args.trees,
        "repetitions": args.reps,
        "master_seed": args.seed,
        "jobs": args.jobs,
        "epsilon_trees": args.eps_trees,
        "nonmono_delta": args.delta,
        "convergence_tolerance": args.convergence_tol,
        "correlation_max_t": args.max_corr_t,
        "mtry": args.mtry,
        "min_node_size": args.min_node_size,
    }
    for key, val in overrides.items():
        if val is not None:
            cfg[key] = val
    if args.window:
        cfg["nonmono_window"] = args.window
    if args.paper_scale:
        cfg["paper_scale"] = True
    if args.no_epsilons:
        cfg["estimate_epsilons"] = False
    if args.measures:
        cfg["measures"] = [m.strip() for m in args.measures.split(",")]
    if "outdir" not in cfg:
        raise UsageError("an output directory is required (--outdir or config)")

    config = StudyConfig.from_dict(cfg)
    result = run_study(config)
    print(f"study artifacts in {result.outdir}")
    print(f"datasets: {len(config.datasets)}, completed: {len(result.outcomes)}, "
          f"failed: {len(result.failures)}")
    for label, err in result.failures.items():
        print(f"  FAILED {label}: {err}", file=sys.stderr)
    flagged = sorted(o.dataset_id for o in result.outcomes.values()
                     if o.nonmonotone_error_rate)
    if flagged:
        print(f"non-monotone error-rate curves: {', '.join(flagged)}")
    return result.exit_code


def _read_difficulties(args) -> DifficultyVector:
    if args.epsilons:
        eps = [float(tok) for tok in args.epsilons.split(",") if tok.strip()]
        return DifficultyVector(np.array(eps))
    if not args.eps_file:
        raise UsageError("provide --epsilons or --eps-file")
    rows = Path(args.eps_file).read_text(encoding="utf-8").strip().splitlines()
    values = []
    for line in rows:
        if line.startswith("#") or line.lower().startswith("row,"):
            continue
        parts = line.split(",")
        values.append(float(parts[-1]))
    return DifficultyVector(np.array(values))


def _cmd_theory(args) -> int:
    diffs = _read_difficulties(args)
    grid = np.array(_parse_grid(args.grid), dtype=np.int64)
    names = [m.strip() for m in args.measures.split(",")]
    for name in names:
        if name not in ANALYTIC_MEASURES:
            raise UsageError(f"unknown analytic measure {name!r}; known: {ANALYTIC_MEASURES}")
    columns = {}
    for name in names:
        curve = expected_curve(diffs, grid, name, oob_adjust=args.oob_adjust,
                               a=args.offset)
        columns[name] = curve.values
    write_curves_csv(args.out, grid, columns, metadata={
        "source": "analytic",
        "oob_adjusted": args.oob_adjust,
        "n": diffs.n,
        "offset": args.offset,
    })
    print(f"expected curves ({', '.join(names)}) over {grid.size} grid points -> {args.out}")
    return 0


def _cmd_epsilons(args) -> int:
    data = _load_dataset(args)
    if data.task is not TaskKind.BINARY:
        raise UsageError("difficulty estimation needs a binary classification dataset")
    forest = train_forest(data, args.trees, _tree_params(args, data),
                          master_seed=args.seed, n_jobs=args.jobs)
    diffs = estimate_difficulties(forest, data)
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write("row,epsilon\n")
        for i, e in enumerate(diffs.epsilons):
            fh.write(f"{i},{e!r}\n")
    print(f"estimated {diffs.n} difficulties from {args.trees} trees -> {args.out}")
    if args.hist_out:
        edges, counts = difficulty_histogram(diffs, args.bins)
        with open(args.hist_out, "w", encoding="utf-8") as fh:
            fh.write("bin_low,bin_high,count\n")
            for i in range(counts.shape[0]):
                fh.write(f"{edges[i]!r},{edges[i + 1]!r},{int(counts[i])}\n")
        print(f"histogram ({args.bins} bins) -> {args.hist_out}")
    above = float(np.mean(diffs.epsilons > 0.5))
    print(f"mean eps: {diffs.epsilons.mean():.4f}; fraction above 0.5: {above:.4f}")
    return 0


def _curves_from_file(path: Path) -> dict[MeasureId, OOBCurve]:
    cf = read_curves_csv(path)
    curves = {}
    for name, values in cf.columns.items():
        try:
            mid = MeasureId(name)
        except ValueError:
            continue
        finite = np.isfinite(values)
        first = int(cf.grid[np.argmax(finite)]) if finite.any() else None
        curves[mid] = OOBCurve(measure=mid, grid=cf.grid, values=values,
                               first_defined_t=first, metadata=dict(cf.metadata))
    return curves


def _cmd_correlate(args) -> int:
    paths = [Path(p) for p in args.curves or []]
    if args.indir:
        paths.extend(sorted(Path(args.indir).glob("*.curve.csv")))
    if not paths:
        raise UsageError("provide --curves files or --indir")
    entries = {}
    for path in paths:
        curves = _curves_from_file(path)
        if len(curves) < 2:
            print(f"  skipping {path} (fewer than two known measures)", file=sys.stderr)
            continue
        entries[path.stem] = correlate_curves(curves, max_t=args.max_t)
    if not entries:
        raise UsageError("no usable curve files")
    report = build_correlation_report(entries)
    payload = report.to_dict()
    if args.out:
        Path(args.out).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n",
                                  encoding="utf-8")
        print(f"correlation report -> {args.out}")
    else:
        print(json.dumps(payload, indent=2, sort_keys=True))
    return 0


def _cmd_report(args) -> int:
    study_dir = Path(args.study_dir)
    study_path = study_dir / "study.json"
    if not study_path.exists():
        raise UsageError(f"{study_dir} does not contain study.json")
    census = json.loads(study_path.read_text(encoding="utf-8"))
    summaries = {}
    for path in sorted(study_dir.glob("*.summary.json")):
        summaries[path.stem.replace(".summary", "")] = json.loads(
            path.read_text(encoding="utf-8"))
    print(f"study: {census['n_completed']}/{census['n_datasets']} datasets completed, "
          f"{census['n_failed']} failed")
    if census["nonmonotone_flagged"]:
        print(f"non-monotone error-rate curves (delta={census['delta']}, "
              f"window={census['window']}): {', '.join(census['nonmonotone_flagged'])}")
    else:
        print("no non-monotone error-rate curves flagged")
    for did, summ in summaries.items():
        gains = ", ".join(f"{k}={v:+.4f}" for k, v in sorted(summ["gains_vs_start"].items()))
        print(f"  {did}: task={summ['task']} n={summ['n']} p={summ['p']} "
              f"first_defined_T={summ['first_defined_t']}")
        print(f"    gains vs T={summ['convergence'].get('error_rate', {}).get('gain_from_t', 11)}"
              f": {gains}")
        for m, conv in sorted(summ["convergence"].items()):
            if "error" in conv:
                continue
            print(f"    {m}: stable within {conv['tolerance']} from T={conv['t_at_tolerance']}"
                  f" (~{conv['effective_t']} effective trees)")
    combined = {"census": census, "datasets": summaries}
    corr_path = study_dir / "correlations.json"
    if corr_path.exists():
        combined["correlations"] = json.loads(corr_path.read_text(encoding="utf-8"))
    if args.out:
        Path(args.out).write_text(json.dumps(combined, indent=2, sort_keys=True) + "\n",
                                  encoding="utf-8")
        print(f"combined report -> {args.out}")
    return 0


# ---------------------------------------------------------------------------
# parser assembly
# ---------------------------------------------------------------------------


def _add_data_options(sp) -> None:
    sp.add_argument("--data", required=True,
                    help="CSV path or generator spec like two-gaussians(n=200,p=5,sep=3.0)")
    sp.add_argument("--target", default="y", help="target column for CSV data")
    sp.add_argument("--task", default=None, choices=[t.value for t in TaskKind],
                    help="override inferred task kind")
    sp.add_argument("--data-seed", type=int, default=1, help="seed for generator data")


def _add_forest_options(sp) -> None:
    sp.add_argument("--mtry", type=int, default=None)
    sp.add_argument("--min-node-size", type=int, default=None)
    sp.add_argument("--jobs", type=int, default=None,
                    help=f"worker processes (default ${JOBS_ENV_VAR} or 1)")


def build_parser() -> _Parser:
    parser = _Parser(prog="oobcurves",
                     description="Random-forest out-of-bag performance curves "
                                 "and their analytic expectations.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sp = sub.add_parser("train", help="train one forest and emit its OOB curves")
    _add_data_options(sp)
    _add_forest_options(sp)
    sp.add_argument("--trees", type=int, default=500)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--tie-seed", type=int, default=0)
    sp.add_argument("--measures", default=None, help="comma list (default per task)")
    sp.add_argument("--out", required=True, help="curve CSV path")
    sp.add_argument("--save-forest", default=None, help="serialize the forest (.json/.json.gz)")
    sp.set_defaults(func=_cmd_train)

    sp = sub.add_parser("study", help="full repeated-training study from a config")
    sp.add_argument("--config", default=None, help="JSON config file")
    sp.add_argument("--data", action="append", default=None,
                    help="dataset (repeatable); replaces the config list")
    sp.add_argument("--suite", action="append", default=None,
                    choices=sorted(BUNDLED_SUITES),
                    help="bundled generator suite (repeatable)")
    sp.add_argument("--outdir", default=None)
    sp.add_argument("--trees", type=int, default=None)
    sp.add_argument("--reps", type=int, default=None)
    sp.add_argument("--seed", type=int, default=None)
    sp.add_argument("--paper-scale", action="store_true",
                    help="default repetitions to 1000")
    sp.add_argument("--eps-trees", type=int, default=None)
    sp.add_argument("--no-epsilons", action="store_true")
    sp.add_argument("--delta", type=float, default=None, help="non-monotonicity delta")
    sp.add_argument("--window", type=int, nargs=2, default=None,
                    metavar=("LO", "HI"), help="non-monotonicity window")
    sp.add_argument("--convergence-tol", type=float, default=None)
    sp.add_argument("--max-corr-t", type=int, default=None)
    sp.add_argument("--measures", default=None)
    _add_forest_options(sp)
    sp.set_defaults(func=_cmd_study)

    sp = sub.add_parser("theory", help="analytic expected curves from difficulties")
    sp.add_argument("--epsilons", default=None, help="inline comma list of eps values")
    sp.add_argument("--eps-file", default=None, help="CSV with an epsilon column")
    sp.add_argument("--grid", default="1:2000", help="T grid: lo:hi[:step] or comma list")
    sp.add_argument("--measures", default="error_rate",
                    help=f"comma list from {ANALYTIC_MEASURES}")
    sp.add_argument("--oob-adjust", action="store_true",
                    help="replace T by round(T*exp(-1))")
    sp.add_argument("--offset", type=float, default=1e-15, help="log-loss offset a")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=_cmd_theory)

    sp = sub.add_parser("epsilons", help="estimate per-observation difficulties")
    _add_data_options(sp)
    _add_forest_options(sp)
    sp.add_argument("--trees", type=int, default=10_000)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True)
    sp.add_argument("--hist-out", default=None)
    sp.add_argument("--bins", type=int, default=20)
    sp.set_defaults(func=_cmd_epsilons)

    sp = sub.add_parser("correlate", help="correlation matrices between measure curves")
    sp.add_argument("--curves", nargs="*", default=None, help="curve CSV files")
    sp.add_argument("--indir", default=None, help="directory of *.curve.csv files")
    sp.add_argument("--max-t", type=int, default=500)
    sp.add_argument("--out", default=None, help="write JSON here (default: stdout)")
    sp.set_defaults(func=_cmd_correlate)

    sp = sub.add_parser("report", help="summarize a study output directory")
    sp.add_argument("--study-dir", required=True)
    sp.add_argument("--out", default=None)
    sp.set_defaults(func=_cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
