"""Statistical kernels shared across the pipeline.

Word error rate, Cohen's kappa, two-sided Mann-Whitney U, Pearson
chi-square and a few quantile helpers. Distributions (normal, chi-square)
come from scipy; the test statistics themselves are computed here.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import stats as sps


class Undefined(ValueError):
    """A statistic has no defined value for the given input."""


_PUNCT = re.compile(r"[^\w\s']|(?<!\w)'|'(?!\w)")


def normalize_words(text: str) -> list[str]:
    """Lowercase, strip punctuation and split on whitespace."""
    return _PUNCT.sub(" ", text.lower()).split()


def edit_distance(a: Sequence, b: Sequence) -> int:
    """Levenshtein distance with unit substitution/insertion/deletion cost."""
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, x in enumerate(a, 1):
        cur = [i]
        for j, y in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (x != y)))
        prev = cur
    return prev[-1]


def wer(reference: Sequence[str], hypothesis: Sequence[str]) -> float:
    """Word error rate: word-level edit distance over the reference length.

    Strings are tokenized with :func:`normalize_words`; sequences are used
    as given.
    """
    if isinstance(reference, str):
        reference = normalize_words(reference)
    if isinstance(hypothesis, str):
        hypothesis = normalize_words(hypothesis)
    if len(reference) == 0:
        raise Undefined("WER is undefined for an empty reference")
    return edit_distance(reference, hypothesis) / len(reference)


@dataclass(frozen=True)
class ConfusionTable:
    """Square contingency table, rows = rater A (or prediction), cols = rater B."""

    counts: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        arr = np.asarray(self.counts)
        if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
            raise ValueError("confusion table must be square")
        if (arr < 0).any():
            raise ValueError("confusion counts must be non-negative")

    @classmethod
    def from_labels(cls, a: Sequence, b: Sequence, classes: Sequence | None = None) -> "ConfusionTable":
        if len(a) != len(b):
            raise ValueError("label sequences differ in length")
        if classes is None:
            classes = sorted(set(a) | set(b))
        index = {c: i for i, c in enumerate(classes)}
        k = len(classes)
        grid = [[0] * k for _ in range(k)]
        for x, y in zip(a, b):
            grid[index[x]][index[y]] += 1
        return cls(tuple(tuple(r) for r in grid))

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.counts, dtype=np.int64)

    @property
    def total(self) -> int:
        return int(self.array.sum())


def cohen_kappa(table: ConfusionTable | Sequence[Sequence[int]]) -> float:
    """Cohen's kappa from a square agreement table."""
    if not isinstance(table, ConfusionTable):
        table = ConfusionTable(tuple(tuple(int(v) for v in row) for row in table))
    arr = table.array.astype(float)
    n = arr.sum()
    if n <= 0:
        raise Undefined("kappa needs at least one rated item")
    p_o = np.trace(arr) / n
    p_e = float((arr.sum(axis=1) / n) @ (arr.sum(axis=0) / n))
    if math.isclose(p_e, 1.0):
        raise Undefined("chance agreement is 1; kappa undefined")
    return float((p_o - p_e) / (1.0 - p_e))


@dataclass(frozen=True)
class MannWhitneyResult:
    U: float
    p: float
    method: str


# below this size of the smaller sample the exact permutation path is used
EXACT_CUTOFF = 8


def _exact_rank_sum_pvalue(ranks2: np.ndarray, n_a: int, observed2: int) -> float:
    """Two-sided exact p for the rank sum of a size-n_a subset.

    ``ranks2`` are doubled midranks so every value is an integer; the
    count of subsets per rank sum is built with a knapsack recursion.
    """
    max_sum = int(np.sort(ranks2)[::-1][:n_a].sum())
    # ways[j][s]: subsets of size j with doubled rank sum s
    # float counts: C(N, 7) overflows int64 for N in the thousands
    ways = np.zeros((n_a + 1, max_sum + 1))
    ways[0, 0] = 1.0
    for r in ranks2:
        r = int(r)
        for j in range(n_a, 0, -1):
            ways[j, r:] += ways[j - 1, : max_sum + 1 - r]
    dist = ways[n_a]
    denom = dist.sum()
    lower = dist[: observed2 + 1].sum()
    upper = dist[observed2:].sum()
    return float(min(1.0, 2 * min(lower, upper) / denom))


def mann_whitney_u(a: Sequence[float], b: Sequence[float], alternative: str = "two-sided") -> MannWhitneyResult:
    """Two-sided Mann-Whitney U test for samples ``a`` and ``b``.

    U is reported for ``a``: the number of (a_i, b_j) pairs with a_i > b_j,
    ties counted as 1/2. Midranks handle ties. When the smaller sample has
    fewer than :data:`EXACT_CUTOFF` values the p-value comes from the exact
    permutation distribution of the midrank sum; otherwise from the normal
    approximation with tie-corrected variance and continuity correction.
    """
    if alternative != "two-sided":
        raise ValueError("only the two-sided alternative is supported")
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    n_a, n_b = len(a), len(b)
    if n_a < 1 or n_b < 1:
        raise ValueError("both samples need at least one value")
    pooled = np.concatenate([a, b])
    ranks = sps.rankdata(pooled)
    r_a = ranks[:n_a].sum()
    U = float(r_a - n_a * (n_a + 1) / 2)
    if np.all(pooled == pooled[0]):
        return MannWhitneyResult(U, 1.0, "degenerate")

    if min(n_a, n_b) < EXACT_CUTOFF:
        ranks2 = np.rint(ranks * 2).astype(np.int64)
        if n_a <= n_b:
            p = _exact_rank_sum_pvalue(ranks2, n_a, int(ranks2[:n_a].sum()))
        else:
            p = _exact_rank_sum_pvalue(ranks2, n_b, int(ranks2[n_a:].sum()))
        return MannWhitneyResult(U, p, "exact")

    n = n_a + n_b
    _, tie_counts = np.unique(pooled, return_counts=True)
    tie_term = float((tie_counts**3 - tie_counts).sum())
    var = n_a * n_b / 12.0 * ((n + 1) - tie_term / (n * (n - 1)))
    mu = n_a * n_b / 2.0
    if var <= 0:
        return MannWhitneyResult(U, 1.0, "degenerate")
    z = max(abs(U - mu) - 0.5, 0.0) / math.sqrt(var)
    p = float(min(1.0, 2.0 * sps.norm.sf(z)))
    return MannWhitneyResult(U, p, "asymptotic")


@dataclass(frozen=True)
class ChiSquareResult:
    statistic: float
    p: float
    dof: int


def chi_square(table: Sequence[Sequence[float]], yates: bool = False) -> ChiSquareResult:
    """Pearson chi-square test of independence on an r x c table."""
    obs = np.asarray(table, dtype=float)
    if obs.ndim != 2:
        raise ValueError("expected a 2-D contingency table")
    rows, cols = obs.sum(axis=1), obs.sum(axis=0)
    if (rows == 0).any() or (cols == 0).any():
        raise Undefined("a margin is zero; expected counts undefined")
    expected = np.outer(rows, cols) / obs.sum()
    dev = np.abs(obs - expected)
    dof = (obs.shape[0] - 1) * (obs.shape[1] - 1)
    if yates and dof == 1:
        dev = np.maximum(dev - 0.5, 0.0)
    stat = float((dev**2 / expected).sum())
    return ChiSquareResult(stat, float(sps.chi2.sf(stat, dof)), dof)


def chi_square_gof(observed: Sequence[float], expected: Sequence[float] | None = None) -> ChiSquareResult:
    """Goodness-of-fit against ``expected`` (uniform when omitted)."""
    obs = np.asarray(observed, dtype=float)
    if expected is None:
        exp = np.full_like(obs, obs.sum() / len(obs))
    else:
        exp = np.asarray(expected, dtype=float)
        exp = exp * obs.sum() / exp.sum()
    if (exp <= 0).any():
        raise Undefined("expected counts must be positive")
    stat = float(((obs - exp) ** 2 / exp).sum())
    dof = len(obs) - 1
    return ChiSquareResult(stat, float(sps.chi2.sf(stat, dof)), dof)


def median(values: Sequence[float]) -> float:
    if len(values) == 0:
        raise Undefined("median of an empty sample")
    return float(np.median(np.asarray(values, dtype=float)))


def quantiles(values: Sequence[float], probs: Sequence[float] = (0.25, 0.5, 0.75, 1.0)) -> list[float]:
    """Quantiles with linear interpolation between order statistics."""
    if len(values) == 0:
        raise Undefined("quantiles of an empty sample")
    return [float(q) for q in np.quantile(np.asarray(values, dtype=float), probs)]


def mean_interval(values: Sequence[float], level: float = 0.95) -> tuple[float, float, float]:
    """Mean with a Student-t confidence interval; (mean, lo, hi)."""
    x = np.asarray(values, dtype=float)
    if len(x) == 0:
        raise Undefined("interval of an empty sample")
    m = float(x.mean())
    if len(x) == 1:
        return m, m, m
    sd = float(x.std(ddof=1))
    half = float(sps.t.ppf(0.5 + level / 2, len(x) - 1)) * sd / math.sqrt(len(x))
    return m, m - half, m + half
