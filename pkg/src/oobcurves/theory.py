"""Analytic expected performance curves from per-observation difficulties.

For a fixed training set, the per-tree errors of observation i are
independent Bernoulli(eps_i) draws, so the number of wrong votes among T
trees is Binomial(T, eps_i).  Everything here follows from that fact:

* expected error rate: the upper binomial tail P(X > T/2), plus half the
  probability of an exact tie when T is even (ties are broken at random);
* expected Brier / squared error: eps^2 + eps(1-eps)/T, strictly
  decreasing in T (same form with (mean, variance) of the per-tree
  residual in regression);
* expected log loss: a second-order Taylor expansion around the mean vote
  share, and an exact version summing over the binomial support that
  serves as its oracle;
* OOB curves behave like test curves with T replaced by T*exp(-1), since
  that is the average number of trees for which an observation is
  out-of-bag.

Binomial tails are computed from log-gamma pmf terms, always summing the
smaller tail so values stay accurate near 0 and 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln

from .datasets import Dataset, TaskKind
from .forest import Forest, oob_predictions, oob_votes_prefix
from .measures import DEFAULT_LOG_OFFSET
from .seeding import rng_for

__all__ = [
    "DifficultyVector",
    "ExpectedCurve",
    "OOB_TREE_FRACTION",
    "effective_trees",
    "expected_error_rate",
    "expected_error_curve",
    "expected_brier",
    "expected_squared_error",
    "expected_brier_curve",
    "expected_logloss_taylor",
    "expected_logloss_exact",
    "expected_logloss_curve",
    "expected_curve",
    "estimate_difficulties",
    "difficulty_histogram",
    "auc_two_point_scenario",
]

OOB_TREE_FRACTION = math.exp(-1.0)
EXACT_LOGLOSS_T_LIMIT = 10 ** 6

ANALYTIC_MEASURES = ("error_rate", "brier", "log_loss_taylor", "log_loss_exact")


@dataclass(frozen=True)
class DifficultyVector:
    """Per-observation single-tree error probabilities eps_i in [0, 1]."""

    epsilons: np.ndarray
    provenance: tuple = ("specified",)

    def __post_init__(self):
        eps = np.ascontiguousarray(np.asarray(self.epsilons, dtype=np.float64))
        if eps.ndim != 1 or eps.size == 0:
            raise ValueError("difficulty vector must be a non-empty 1-d array")
        if np.any(~np.isfinite(eps)) or eps.min() < 0.0 or eps.max() > 1.0:
            raise ValueError("difficulties must lie in [0, 1]")
        object.__setattr__(self, "epsilons", eps)

    @property
    def n(self) -> int:
        return self.epsilons.shape[0]


@dataclass(frozen=True)
class ExpectedCurve:
    measure: str  # one of ANALYTIC_MEASURES
    grid: np.ndarray
    values: np.ndarray
    oob_adjusted: bool
    metadata: dict = field(default_factory=dict)

    def value_at(self, t: int) -> float:
        idx = np.searchsorted(self.grid, t)
        if idx >= self.grid.shape[0] or self.grid[idx] != t:
            raise KeyError(f"T={t} not on curve grid")
        return float(self.values[idx])


def effective_trees(t: int) -> int:
    """OOB-adjusted tree count: round-half-up of T*exp(-1), at least 1."""
    return max(1, int(math.floor(t * OOB_TREE_FRACTION + 0.5)))


def _check_eps_t(eps: float, t: int) -> None:
    if not 0.0 <= eps <= 1.0:
        raise ValueError(f"eps must be in [0, 1], got {eps}")
    if t < 1:
        raise ValueError(f"T must be >= 1, got {t}")


def _log_pmf(t: int, xs: np.ndarray, eps: float) -> np.ndarray:
    return (gammaln(t + 1.0) - gammaln(xs + 1.0) - gammaln(t - xs + 1.0)
            + xs * math.log(eps) + (t - xs) * math.log1p(-eps))


def expected_error_rate(eps: float, t: int) -> float:
    """P(X > T/2) + 0.5 * P(X = T/2) for X ~ Binomial(T, eps).

    Increasing in T over odd T for eps > 0.5, decreasing for eps < 0.5,
    constant 0.5 at eps = 0.5.
    """
    _check_eps_t(eps, t)
    if eps == 0.0:
        return 0.0
    if eps == 1.0:
        return 1.0
    half = t // 2
    even = t % 2 == 0
    tie = 0.5 * math.exp(_log_pmf(t, np.array([half], dtype=np.float64), eps)[0]) if even else 0.0
    if eps <= 0.5:
        # upper tail is the smaller one; sum its terms smallest-first
        xs = np.arange(half + 1, t + 1, dtype=np.float64)
        upper = math.fsum(np.exp(_log_pmf(t, xs, eps))[::-1])
        return min(1.0, upper + tie)
    xs = np.arange(0, half + (0 if even else 1), dtype=np.float64)
    lower = math.fsum(np.exp(_log_pmf(t, xs, eps)))
    return max(0.0, 1.0 - lower - tie)


def _expected_error_rates(eps: np.ndarray, t: int) -> np.ndarray:
    """Vectorized expected_error_rate over a difficulty vector at fixed T."""
    out = np.empty(eps.shape[0])
    for side in (True, False):
        mask = (eps <= 0.5) if side else (eps > 0.5)
        mask &= (eps > 0.0) & (eps < 1.0)
        if not np.any(mask):
            continue
        e = eps[mask]
        half = t // 2
        even = t % 2 == 0
        loge = np.log(e)[:, None]
        log1me = np.log1p(-e)[:, None]
        if side:
            xs = np.arange(half + 1, t + 1, dtype=np.float64)
        else:
            xs = np.arange(0, half + (0 if even else 1), dtype=np.float64)
        logc = gammaln(t + 1.0) - gammaln(xs + 1.0) - gammaln(t - xs + 1.0)
        mass = np.exp(logc[None, :] + xs[None, :] * loge + (t - xs)[None, :] * log1me).sum(axis=1)
        if even:
            xh = np.array([half], dtype=np.float64)
            logch = gammaln(t + 1.0) - gammaln(xh + 1.0) - gammaln(t - xh + 1.0)
            tie = 0.5 * np.exp(logch + xh * loge + (t - xh) * log1me)[:, 0]
        else:
            tie = 0.0
        out[mask] = np.clip(mass + tie, 0.0, 1.0) if side else np.clip(1.0 - mass - tie, 0.0, 1.0)
    out[eps == 0.0] = 0.0
    out[eps == 1.0] = 1.0
    return out


def _as_grid(grid) -> np.ndarray:
    grid = np.asarray(grid, dtype=np.int64)
    if grid.ndim != 1 or grid.size == 0:
        raise ValueError("grid must be a non-empty 1-d list of tree counts")
    if grid.min() < 1:
        raise ValueError("grid entries must be positive integers")
    return grid


def _difficulties(d) -> DifficultyVector:
    return d if isinstance(d, DifficultyVector) else DifficultyVector(np.asarray(d, dtype=np.float64))


def expected_error_curve(d, grid, oob_adjust: bool = False) -> ExpectedCurve:
    """Mean over observations of the expected per-observation error rate.

    With ``oob_adjust`` the binomial uses round(T*exp(-1)) trees, modeling
    that only that many trees vote for an OOB observation on average.
    """
    d = _difficulties(d)
    grid = _as_grid(grid)
    cache: dict[int, float] = {}
    values = np.empty(grid.shape[0])
    for i, t in enumerate(grid):
        t_eff = effective_trees(int(t)) if oob_adjust else int(t)
        if t_eff not in cache:
            cache[t_eff] = float(_expected_error_rates(d.epsilons, t_eff).mean())
        values[i] = cache[t_eff]
    return ExpectedCurve("error_rate", grid, values, oob_adjust,
                         metadata={"source": "analytic", "n": d.n})


def expected_brier(eps: float, t: int) -> float:
    """eps^2 + eps(1-eps)/T: the expected squared vote-share error."""
    _check_eps_t(eps, t)
    return eps * eps + eps * (1.0 - eps) / t


def expected_squared_error(mean_err: float, var_err: float, t: int) -> float:
    """Regression form: per-tree residual mean/variance supplied directly."""
    if t < 1:
        raise ValueError(f"T must be >= 1, got {t}")
    if var_err < 0:
        raise ValueError("variance must be non-negative")
    return mean_err * mean_err + var_err / t


def expected_brier_curve(d, grid, oob_adjust: bool = False) -> ExpectedCurve:
    d = _difficulties(d)
    grid = _as_grid(grid)
    eps = d.epsilons
    values = np.empty(grid.shape[0])
    for i, t in enumerate(grid):
        t_eff = effective_trees(int(t)) if oob_adjust else int(t)
        values[i] = float(np.mean(eps * eps + eps * (1.0 - eps) / t_eff))
    return ExpectedCurve("brier", grid, values, oob_adjust,
                         metadata={"source": "analytic", "n": d.n})


def expected_logloss_taylor(eps: float, t: int, a: float = DEFAULT_LOG_OFFSET) -> float:
    """Second-order Taylor approximation of the expected log loss:
    -ln(1 - eps + a) + eps(1-eps) / (2T (1 - eps + a)^2)."""
    _check_eps_t(eps, t)
    if a <= 0:
        raise ValueError("offset a must be > 0")
    denom = 1.0 - eps + a
    return -math.log(denom) + eps * (1.0 - eps) / (2.0 * t * denom * denom)


def expected_logloss_exact(eps: float, t: int, a: float = DEFAULT_LOG_OFFSET) -> float:
    """Exact expectation of -ln(1 - X/T + a), X ~ Binomial(T, eps), by
    summation over the whole support (practical for T up to ~1e6)."""
    _check_eps_t(eps, t)
    if a <= 0:
        raise ValueError("offset a must be > 0")
    if t > EXACT_LOGLOSS_T_LIMIT:
        raise ValueError(f"T={t} beyond the practical bound {EXACT_LOGLOSS_T_LIMIT}")
    if eps == 0.0:
        return -math.log1p(a)
    if eps == 1.0:
        return -math.log(a)
    xs = np.arange(0, t + 1, dtype=np.float64)
    pmf = np.exp(_log_pmf(t, xs, eps))
    losses = -np.log(1.0 - xs / t + a)
    return float(np.dot(pmf, losses))


def expected_logloss_curve(d, grid, oob_adjust: bool = False,
                           a: float = DEFAULT_LOG_OFFSET, exact: bool = False) -> ExpectedCurve:
    d = _difficulties(d)
    grid = _as_grid(grid)
    fn = expected_logloss_exact if exact else expected_logloss_taylor
    values = np.empty(grid.shape[0])
    for i, t in enumerate(grid):
        t_eff = effective_trees(int(t)) if oob_adjust else int(t)
        values[i] = float(np.mean([fn(float(e), t_eff, a) for e in d.epsilons]))
    name = "log_loss_exact" if exact else "log_loss_taylor"
    return ExpectedCurve(name, grid, values, oob_adjust,
                         metadata={"source": "analytic", "n": d.n, "offset": a})


def expected_curve(d, grid, measure: str, oob_adjust: bool = False,
                   a: float = DEFAULT_LOG_OFFSET) -> ExpectedCurve:
    """Dispatch on the analytic measure name (see ANALYTIC_MEASURES)."""
    if measure == "error_rate":
        return expected_error_curve(d, grid, oob_adjust)
    if measure == "brier":
        return expected_brier_curve(d, grid, oob_adjust)
    if measure == "log_loss_taylor":
        return expected_logloss_curve(d, grid, oob_adjust, a, exact=False)
    if measure == "log_loss_exact":
        return expected_logloss_curve(d, grid, oob_adjust, a, exact=True)
    raise ValueError(f"unknown analytic measure {measure!r}; known: {ANALYTIC_MEASURES}")


# ---------------------------------------------------------------------------
# difficulty estimation and AUC scenarios
# ---------------------------------------------------------------------------


def estimate_difficulties(forest: Forest, data: Dataset) -> DifficultyVector:
    """eps_i = |y_i - p_i| from a (large) forest's OOB class probabilities.

    Binary classification only; raises if any observation never fell OOB
    (practically impossible for the intended forest sizes).
    """
    if data.task is not TaskKind.BINARY:
        raise ValueError("difficulty estimation is defined for binary classification only")
    votes = oob_votes_prefix(forest, data, forest.n_trees)
    pred = oob_predictions(votes)
    if pred.n_undefined:
        rows = np.flatnonzero(~pred.defined)[:10].tolist()
        raise ValueError(
            f"{pred.n_undefined} observation(s) have no OOB trees (e.g. rows {rows}); "
            "use a larger forest")
    eps = np.abs(data.y.astype(np.float64) - pred.probs[:, 1])
    return DifficultyVector(eps, provenance=("estimated", forest.n_trees))


def difficulty_histogram(d: DifficultyVector, bins: int = 20) -> tuple[np.ndarray, np.ndarray]:
    """Histogram of eps over [0, 1]: (bin edges, counts)."""
    counts, edges = np.histogram(d.epsilons, bins=bins, range=(0.0, 1.0))
    return edges, counts


def auc_two_point_scenario(y1: int, y2: int, p1_mean: float, p2_mean: float,
                           t: int, replicates: int = 100_000, seed: int = 0) -> float:
    """Monte Carlo expected AUC of a two-observation test set.

    Vote shares are drawn as Binomial(T, p_mean)/T; the AUC of the pair is
    1, 0.5 or 0 depending on how the positive's share ranks against the
    negative's.  Depending on the labels this expected curve increases or
    decreases with T, and mixtures of such pairs need not be monotone.
    """
    if {y1, y2} != {0, 1}:
        raise ValueError("the two observations must have labels 0 and 1")
    if not (0.0 < p1_mean < 1.0 and 0.0 < p2_mean < 1.0):
        raise ValueError("probability means must lie strictly inside (0, 1)")
    if t < 1 or replicates < 1:
        raise ValueError("T and replicates must be >= 1")
    rng = rng_for(seed, "auc-scenario", t)
    shares1 = rng.binomial(t, p1_mean, size=replicates) / t
    shares2 = rng.binomial(t, p2_mean, size=replicates) / t
    pos, neg = (shares1, shares2) if y1 == 1 else (shares2, shares1)
    s = np.where(pos > neg, 1.0, np.where(pos == neg, 0.5, 0.0))
    return float(s.mean())
