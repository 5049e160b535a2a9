"""Performance measures as pure functions of truths and predictions.

All functions accept an optional boolean ``defined`` mask; masked-out
entries (e.g. observations that never fell out-of-bag) are excluded from
the computation rather than imputed.  Probability matrices are validated
to row-sum to one within 1e-9.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

__all__ = [
    "MeasureId",
    "default_measures",
    "error_rate",
    "balanced_error_rate",
    "brier",
    "log_loss",
    "auc",
    "auc_multiclass",
    "mse",
    "mae",
    "medse",
    "medae",
    "r_squared",
    "RegressionSummary",
    "regression_measures",
    "evaluate_measure",
]

DEFAULT_LOG_OFFSET = 1e-15

_LABELS, _PROBS, _NUMERIC = "labels", "probabilities", "numeric"


class MeasureId(Enum):
    ERROR_RATE = "error_rate"
    BALANCED_ERROR_RATE = "balanced_error_rate"
    BRIER = "brier"
    LOG_LOSS = "log_loss"
    AUC = "auc"
    MSE = "mse"
    MAE = "mae"
    MEDSE = "medse"
    MEDAE = "medae"
    R_SQUARED = "r_squared"

    @property
    def required_input(self) -> str:
        if self in (MeasureId.ERROR_RATE, MeasureId.BALANCED_ERROR_RATE):
            return _LABELS
        if self in (MeasureId.BRIER, MeasureId.LOG_LOSS, MeasureId.AUC):
            return _PROBS
        return _NUMERIC

    @property
    def higher_is_better(self) -> bool:
        return self in (MeasureId.AUC, MeasureId.R_SQUARED)


CLASSIFICATION_MEASURES = (MeasureId.ERROR_RATE, MeasureId.BALANCED_ERROR_RATE,
                           MeasureId.BRIER, MeasureId.LOG_LOSS, MeasureId.AUC)
REGRESSION_MEASURES = (MeasureId.MSE, MeasureId.MAE, MeasureId.MEDSE,
                       MeasureId.MEDAE, MeasureId.R_SQUARED)


def default_measures(task) -> tuple[MeasureId, ...]:
    return CLASSIFICATION_MEASURES if task.is_classification else REGRESSION_MEASURES


def _mask(y, other, defined):
    y = np.asarray(y)
    other = np.asarray(other)
    if y.shape[0] != other.shape[0]:
        raise ValueError("length mismatch between truths and predictions")
    if defined is None:
        return y, other
    defined = np.asarray(defined, dtype=bool)
    return y[defined], other[defined]


def _require_nonempty(y):
    if y.shape[0] == 0:
        raise ValueError("no defined observations to evaluate")


def _check_probs(p: np.ndarray) -> None:
    if p.ndim != 2:
        raise ValueError("probability matrix must be 2-dimensional")
    sums = p.sum(axis=1)
    if np.any(np.abs(sums - 1.0) > 1e-9):
        bad = int(np.argmax(np.abs(sums - 1.0) > 1e-9))
        raise ValueError(f"probability row {bad} sums to {sums[bad]!r}, expected 1")


# ---------------------------------------------------------------------------
# classification
# ---------------------------------------------------------------------------


def error_rate(y, predicted, defined=None) -> float:
    """Fraction of misclassified observations among the defined ones."""
    yt, yp = _mask(y, predicted, defined)
    _require_nonempty(yt)
    return float(np.mean(yt != yp))


def balanced_error_rate(y, predicted, defined=None) -> float:
    """Macro average of within-class error rates (classes without defined
    observations are skipped)."""
    yt, yp = _mask(y, predicted, defined)
    _require_nonempty(yt)
    rates = [float(np.mean(yp[yt == c] != c)) for c in np.unique(yt)]
    return float(np.mean(rates))


def brier(y, probs, mode: str = "binary-halved", defined=None) -> float:
    """Mean Brier score.

    ``binary-halved`` is the two-class convention (y - p1)^2; ``multiclass``
    sums squared errors over all class indicators and equals twice the
    halved value when K = 2.
    """
    yt, pp = _mask(y, probs, defined)
    _require_nonempty(yt)
    _check_probs(pp)
    k = pp.shape[1]
    if mode == "binary-halved":
        if k != 2:
            raise ValueError(f"binary-halved mode needs K=2, got K={k}")
        return float(np.mean((yt - pp[:, 1]) ** 2))
    if mode != "multiclass":
        raise ValueError(f"unknown brier mode {mode!r}")
    onehot = np.zeros_like(pp)
    onehot[np.arange(yt.shape[0]), yt] = 1.0
    return float(np.mean(np.sum((pp - onehot) ** 2, axis=1)))


def log_loss(y, probs, a: float = DEFAULT_LOG_OFFSET, defined=None) -> float:
    """Mean negative log probability of the true class.

    The offset ``a`` guards log(0) and is applied only when the assigned
    probability is exactly zero.
    """
    if a <= 0:
        raise ValueError("log-loss offset a must be > 0")
    yt, pp = _mask(y, probs, defined)
    _require_nonempty(yt)
    _check_probs(pp)
    p_true = pp[np.arange(yt.shape[0]), yt]
    return float(np.mean(-np.log(np.where(p_true == 0.0, a, p_true))))


def _midranks(x: np.ndarray) -> np.ndarray:
    """1-based ranks with ties sharing the average rank (exact
    half-integers, so rank sums stay exact in float64)."""
    order = np.argsort(x, kind="mergesort")
    xs = x[order]
    n = x.shape[0]
    starts = np.concatenate(([0], np.flatnonzero(xs[1:] != xs[:-1]) + 1))
    ends = np.concatenate((starts[1:], [n]))
    avg = (starts + 1 + ends) / 2.0
    ranks = np.empty(n)
    ranks[order] = np.repeat(avg, ends - starts)
    return ranks


def auc(y, scores, defined=None) -> float:
    """Probability that a random positive outranks a random negative, ties
    counting one half; computed by midrank sums (Mann-Whitney)."""
    yt, sc = _mask(y, scores, defined)
    _require_nonempty(yt)
    pos = yt == 1
    n1 = int(np.sum(pos))
    n2 = yt.shape[0] - n1
    if n1 == 0 or n2 == 0:
        raise ValueError("AUC needs both classes present")
    ranks = _midranks(np.asarray(sc, dtype=np.float64))
    rank_sum = float(np.sum(ranks[pos]))
    return (rank_sum - n1 * (n1 + 1) / 2.0) / (n1 * n2)


def auc_multiclass(y, probs, defined=None) -> float:
    """Average of one-vs-one AUCs over ordered class pairs: pair (j, k)
    uses the class-j probability column with class j as positive.
    Equals the binary AUC when K = 2."""
    yt, pp = _mask(y, probs, defined)
    _require_nonempty(yt)
    k = pp.shape[1]
    if k < 2:
        raise ValueError("need at least two classes")
    present = np.unique(yt)
    if present.size != k:
        missing = sorted(set(range(k)) - set(present.tolist()))
        raise ValueError(f"class(es) {missing} have no defined observations")
    total = 0.0
    for j in range(k):
        for kk in range(k):
            if j == kk:
                continue
            sub = (yt == j) | (yt == kk)
            total += auc((yt[sub] == j).astype(np.int64), pp[sub, j])
    return total / (k * (k - 1))


# ---------------------------------------------------------------------------
# regression
# ---------------------------------------------------------------------------


def mse(y, predicted, defined=None) -> float:
    yt, yp = _mask(y, predicted, defined)
    _require_nonempty(yt)
    return float(np.mean((yt - yp) ** 2))


def mae(y, predicted, defined=None) -> float:
    yt, yp = _mask(y, predicted, defined)
    _require_nonempty(yt)
    return float(np.mean(np.abs(yt - yp)))


def medse(y, predicted, defined=None) -> float:
    yt, yp = _mask(y, predicted, defined)
    _require_nonempty(yt)
    return float(np.median((yt - yp) ** 2))


def medae(y, predicted, defined=None) -> float:
    yt, yp = _mask(y, predicted, defined)
    _require_nonempty(yt)
    return float(np.median(np.abs(yt - yp)))


def r_squared(y, predicted, defined=None) -> float:
    yt, yp = _mask(y, predicted, defined)
    if yt.shape[0] < 2:
        raise ValueError("R^2 needs at least two defined observations")
    denom = float(np.sum((yt - np.mean(yt)) ** 2))
    if denom == 0.0:
        raise ValueError("R^2 undefined for a constant response")
    return 1.0 - float(np.sum((yt - yp) ** 2)) / denom


@dataclass(frozen=True)
class RegressionSummary:
    mse: float
    mae: float
    medse: float
    medae: float
    r_squared: float


def regression_measures(y, predicted, defined=None) -> RegressionSummary:
    return RegressionSummary(
        mse=mse(y, predicted, defined),
        mae=mae(y, predicted, defined),
        medse=medse(y, predicted, defined),
        medae=medae(y, predicted, defined),
        r_squared=r_squared(y, predicted, defined),
    )


# ---------------------------------------------------------------------------
# dispatch used by the curve engine
# ---------------------------------------------------------------------------

_REGRESSION_FN = {
    MeasureId.MSE: mse,
    MeasureId.MAE: mae,
    MeasureId.MEDSE: medse,
    MeasureId.MEDAE: medae,
    MeasureId.R_SQUARED: r_squared,
}


def evaluate_measure(measure: MeasureId, y, pred, log_offset: float = DEFAULT_LOG_OFFSET) -> float:
    """Evaluate one measure on an :class:`~oobcurves.forest.OOBPredictions`."""
    if measure.required_input == _NUMERIC:
        if pred.values is None:
            raise ValueError(f"{measure.value} needs numeric predictions")
        return _REGRESSION_FN[measure](y, pred.values, pred.defined)
    if measure.required_input == _LABELS:
        if pred.labels is None:
            raise ValueError(f"{measure.value} needs class predictions")
        fn = error_rate if measure is MeasureId.ERROR_RATE else balanced_error_rate
        return fn(y, pred.labels, pred.defined)
    if pred.probs is None:
        raise ValueError(f"{measure.value} needs probability estimates")
    k = pred.probs.shape[1]
    if measure is MeasureId.BRIER:
        mode = "binary-halved" if k == 2 else "multiclass"
        return brier(y, pred.probs, mode, pred.defined)
    if measure is MeasureId.LOG_LOSS:
        return log_loss(y, pred.probs, log_offset, pred.defined)
    if k == 2:
        return auc(y, pred.probs[:, 1], pred.defined)
    return auc_multiclass(y, pred.probs, pred.defined)
