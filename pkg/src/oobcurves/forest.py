"""Bagged tree ensembles with out-of-bag bookkeeping.

A :class:`Forest` keeps its trees in training order together with the
T x n bootstrap-multiplicity record (``inbag``).  Observation i is
out-of-bag for tree t exactly when ``inbag[t, i] == 0``; every OOB
quantity downstream derives from that relation.

Randomness is split into named streams per tree (see
:mod:`oobcurves.seeding`), so training is embarrassingly parallel and the
result is bit-identical for any parallelism degree.
"""

from __future__ import annotations

import gzip
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .cart import Tree, TreeParams, predict_rows, train_tree
from .datasets import Dataset, TaskKind
from .seeding import derive_seed, rng_for

__all__ = [
    "ForestParams",
    "Forest",
    "VoteMatrix",
    "OOBPredictions",
    "train_forest",
    "oob_votes_prefix",
    "oob_predictions",
    "save_forest",
    "load_forest",
    "resolve_jobs",
]

JOBS_ENV_VAR = "OOBCURVES_JOBS"
FOREST_FORMAT = "oobcurves.forest"
FOREST_VERSION = 1


def resolve_jobs(n_jobs: int | None) -> int:
    """None -> $OOBCURVES_JOBS -> 1."""
    if n_jobs is not None:
        return max(1, int(n_jobs))
    env = os.environ.get(JOBS_ENV_VAR)
    return max(1, int(env)) if env else 1


@dataclass(frozen=True)
class ForestParams:
    tree: TreeParams
    sampling: str = "bootstrap"  # "bootstrap" (size n, with replacement) | "subsample"
    sample_fraction: float = 1.0  # only for subsample mode

    def validate(self, p: int) -> None:
        self.tree.validate(p)
        if self.sampling not in ("bootstrap", "subsample"):
            raise ValueError(f"unknown sampling mode {self.sampling!r}")
        if self.sampling == "subsample" and not 0.0 < self.sample_fraction < 1.0:
            raise ValueError("subsample fraction must be in (0,1)")


@dataclass(frozen=True)
class Forest:
    trees: tuple[Tree, ...]
    inbag: np.ndarray  # (T, n) int16 bootstrap multiplicities
    params: ForestParams
    master_seed: int
    task: TaskKind
    n_classes: int
    n: int
    p: int

    @property
    def n_trees(self) -> int:
        return len(self.trees)

    def tag(self) -> tuple:
        """Identity used to detect vote-matrix / forest mismatches."""
        return (self.master_seed, self.n_trees, self.n, self.n_classes,
                self.task.value)


@dataclass(frozen=True)
class VoteMatrix:
    """OOB aggregates over the first ``prefix`` trees.

    Classification: per-observation, per-class OOB vote counts.
    Regression: per-observation OOB prediction sum.  Both carry the
    per-observation OOB tree count.
    """

    prefix: int
    oob_count: np.ndarray  # (n,) int64
    votes: np.ndarray | None = None  # (n, K) int64
    pred_sum: np.ndarray | None = None  # (n,) float64
    forest_tag: tuple = ()


@dataclass(frozen=True)
class OOBPredictions:
    defined: np.ndarray  # (n,) bool: at least one OOB tree
    labels: np.ndarray | None = None  # (n,) int64, -1 where undefined
    probs: np.ndarray | None = None  # (n, K) float64, NaN rows where undefined
    values: np.ndarray | None = None  # (n,) float64, NaN where undefined

    @property
    def n_undefined(self) -> int:
        return int(np.sum(~self.defined))


def _sample_rows(n: int, params: ForestParams, rng: np.random.Generator) -> np.ndarray:
    if params.sampling == "bootstrap":
        return rng.integers(0, n, size=n)
    size = max(1, int(round(params.sample_fraction * n)))
    return rng.choice(n, size=size, replace=False)


def _train_one(data: Dataset, params: ForestParams, master_seed: int,
               t: int) -> tuple[Tree, np.ndarray]:
    rows = _sample_rows(data.n, params, rng_for(master_seed, "boot", t))
    tree = train_tree(data, rows, params.tree, seed=derive_seed(master_seed, "tree", t))
    inbag = np.bincount(rows, minlength=data.n).astype(np.int16)
    return tree, inbag


_WORKER_STATE: dict = {}


def _init_worker(data: Dataset, params: ForestParams, master_seed: int) -> None:
    _WORKER_STATE["args"] = (data, params, master_seed)


def _worker_chunk(ts: list[int]) -> list[tuple[Tree, np.ndarray]]:
    data, params, master_seed = _WORKER_STATE["args"]
    return [_train_one(data, params, master_seed, t) for t in ts]


def train_forest(data: Dataset, n_trees: int, params: ForestParams | None = None,
                 master_seed: int = 0, n_jobs: int | None = None) -> Forest:
    """Train ``n_trees`` bagged trees; tree t depends only on
    (data, params, master_seed, t), never on the parallelism degree."""
    if n_trees < 1:
        raise ValueError(f"need at least one tree, got {n_trees}")
    if params is None:
        params = ForestParams(tree=TreeParams.defaults(data.task, data.p))
    params.validate(data.p)
    jobs = resolve_jobs(n_jobs)

    if jobs == 1 or n_trees < 4 * jobs:
        results = [_train_one(data, params, master_seed, t) for t in range(n_trees)]
    else:
        chunks = [list(range(i, n_trees, jobs)) for i in range(jobs)]
        results_by_t: dict[int, tuple[Tree, np.ndarray]] = {}
        with ProcessPoolExecutor(max_workers=jobs, initializer=_init_worker,
                                 initargs=(data, params, master_seed)) as pool:
            for ts, out in zip(chunks, pool.map(_worker_chunk, chunks)):
                for t, item in zip(ts, out):
                    results_by_t[t] = item
        results = [results_by_t[t] for t in range(n_trees)]

    trees = tuple(tree for tree, _ in results)
    inbag = np.stack([ib for _, ib in results])
    return Forest(trees=trees, inbag=inbag, params=params,
                  master_seed=master_seed, task=data.task,
                  n_classes=data.n_classes, n=data.n, p=data.p)


# ---------------------------------------------------------------------------
# OOB vote accumulation
# ---------------------------------------------------------------------------


def _check_forest_data(forest: Forest, data: Dataset) -> None:
    if (forest.n, forest.p) != (data.n, data.p) or forest.task is not data.task:
        raise ValueError("forest was not trained on this dataset shape/task")


def add_tree_votes(forest: Forest, data: Dataset, t: int, oob_count: np.ndarray,
                   votes: np.ndarray | None, pred_sum: np.ndarray | None) -> None:
    """Accumulate tree t's OOB predictions into mutable buffers (in place)."""
    oob_rows = np.flatnonzero(forest.inbag[t] == 0)
    if oob_rows.size == 0:
        return
    preds = predict_rows(forest.trees[t], data.X, oob_rows)
    oob_count[oob_rows] += 1
    if forest.task.is_classification:
        votes[oob_rows, preds.astype(np.int64)] += 1
    else:
        pred_sum[oob_rows] += preds


def oob_votes_prefix(forest: Forest, data: Dataset, prefix: int,
                     prior: VoteMatrix | None = None) -> VoteMatrix:
    """OOB vote aggregates over trees 1..prefix.

    With ``prior`` (the matrix at prefix-1) only one tree is processed;
    the result is identical to recomputing from scratch.
    """
    _check_forest_data(forest, data)
    if not 1 <= prefix <= forest.n_trees:
        raise ValueError(f"prefix {prefix} out of range [1, {forest.n_trees}]")
    is_clf = forest.task.is_classification
    if prior is not None:
        if prior.forest_tag != forest.tag():
            raise ValueError("prior vote matrix belongs to a different forest")
        if prior.prefix != prefix - 1:
            raise ValueError(
                f"prior must be at prefix {prefix - 1}, got {prior.prefix}")
        oob_count = prior.oob_count.copy()
        votes = prior.votes.copy() if is_clf else None
        pred_sum = None if is_clf else prior.pred_sum.copy()
        start = prefix - 1
    else:
        oob_count = np.zeros(forest.n, dtype=np.int64)
        votes = np.zeros((forest.n, forest.n_classes), dtype=np.int64) if is_clf else None
        pred_sum = None if is_clf else np.zeros(forest.n, dtype=np.float64)
        start = 0
    for t in range(start, prefix):
        add_tree_votes(forest, data, t, oob_count, votes, pred_sum)
    return VoteMatrix(prefix=prefix, oob_count=oob_count, votes=votes,
                      pred_sum=pred_sum, forest_tag=forest.tag())


def oob_predictions(matrix: VoteMatrix, tie_seed: int = 0) -> OOBPredictions:
    """Turn vote aggregates into predictions and probability vectors.

    Classification ties (two or more classes sharing the top vote count)
    are broken uniformly at random from a dedicated stream of ``tie_seed``;
    observations with zero OOB trees are flagged undefined, never guessed.
    """
    defined = matrix.oob_count > 0
    if matrix.votes is not None:
        n, k = matrix.votes.shape
        probs = np.full((n, k), np.nan)
        probs[defined] = matrix.votes[defined] / matrix.oob_count[defined, None]
        labels = np.full(n, -1, dtype=np.int64)
        labels[defined] = np.argmax(matrix.votes[defined], axis=1)
        top = matrix.votes.max(axis=1)
        tied = defined & (np.sum(matrix.votes == top[:, None], axis=1) > 1)
        if np.any(tied):
            rng = rng_for(tie_seed, "ties")
            for i in np.flatnonzero(tied):
                pool = np.flatnonzero(matrix.votes[i] == top[i])
                labels[i] = pool[rng.integers(0, pool.size)]
        return OOBPredictions(defined=defined, labels=labels, probs=probs)
    values = np.full(matrix.oob_count.shape[0], np.nan)
    values[defined] = matrix.pred_sum[defined] / matrix.oob_count[defined]
    return OOBPredictions(defined=defined, values=values)


# ---------------------------------------------------------------------------
# Serialization (versioned JSON container, .gz transparent)
# ---------------------------------------------------------------------------


def _tree_to_obj(tree: Tree) -> dict:
    return {
        "feature": tree.feature.tolist(),
        "threshold": tree.threshold.tolist(),
        "left": tree.left.tolist(),
        "right": tree.right.tolist(),
        "leaf_value": tree.leaf_value.tolist(),
        "routes": tree.routes.tolist() if tree.has_routes else None,
        "node_depth": tree.node_depth.tolist(),
    }


def _tree_from_obj(obj: dict, task: TaskKind, n_classes: int,
                   is_cat: np.ndarray, card: np.ndarray) -> Tree:
    has_routes = obj["routes"] is not None
    return Tree(
        feature=np.array(obj["feature"], dtype=np.int64),
        threshold=np.array(obj["threshold"], dtype=np.float64),
        left=np.array(obj["left"], dtype=np.int64),
        right=np.array(obj["right"], dtype=np.int64),
        leaf_value=np.array(obj["leaf_value"], dtype=np.float64),
        routes=(np.array(obj["routes"], dtype=np.int8) if has_routes
                else np.zeros((1, 1), dtype=np.int8)),
        node_depth=np.array(obj["node_depth"], dtype=np.int64),
        has_routes=has_routes,
        is_classification=task.is_classification,
        n_classes=n_classes,
        feature_is_cat=is_cat,
        feature_card=card,
    )


def save_forest(forest: Forest, path) -> None:
    obj = {
        "format": FOREST_FORMAT,
        "version": FOREST_VERSION,
        "master_seed": forest.master_seed,
        "task": forest.task.value,
        "n_classes": forest.n_classes,
        "n": forest.n,
        "p": forest.p,
        "params": {
            "mtry": forest.params.tree.mtry,
            "min_node_size": forest.params.tree.min_node_size,
            "sampling": forest.params.sampling,
            "sample_fraction": forest.params.sample_fraction,
        },
        "feature_is_cat": forest.trees[0].feature_is_cat.tolist(),
        "feature_card": forest.trees[0].feature_card.tolist(),
        "inbag": forest.inbag.tolist(),
        "trees": [_tree_to_obj(t) for t in forest.trees],
    }
    raw = json.dumps(obj).encode("utf-8")
    if str(path).endswith(".gz"):
        with gzip.open(path, "wb") as fh:
            fh.write(raw)
    else:
        with open(path, "wb") as fh:
            fh.write(raw)


def load_forest(path) -> Forest:
    if str(path).endswith(".gz"):
        with gzip.open(path, "rb") as fh:
            obj = json.loads(fh.read().decode("utf-8"))
    else:
        with open(path, "rb") as fh:
            obj = json.loads(fh.read().decode("utf-8"))
    if obj.get("format") != FOREST_FORMAT:
        raise ValueError(f"{path}: not a forest container")
    if obj.get("version") != FOREST_VERSION:
        raise ValueError(f"{path}: unsupported container version {obj.get('version')}")
    task = TaskKind(obj["task"])
    is_cat = np.array(obj["feature_is_cat"], dtype=bool)
    card = np.array(obj["feature_card"], dtype=np.int64)
    trees = tuple(_tree_from_obj(t, task, obj["n_classes"], is_cat, card)
                  for t in obj["trees"])
    params = ForestParams(
        tree=TreeParams(mtry=obj["params"]["mtry"],
                        min_node_size=obj["params"]["min_node_size"]),
        sampling=obj["params"]["sampling"],
        sample_fraction=obj["params"]["sample_fraction"],
    )
    return Forest(trees=trees, inbag=np.array(obj["inbag"], dtype=np.int16),
                  params=params, master_seed=obj["master_seed"], task=task,
                  n_classes=obj["n_classes"], n=obj["n"], p=obj["p"])
