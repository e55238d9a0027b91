"""Population-size estimation for uniformly sampled video months.

Two estimators of how many videos exist in a month, given a sample of K
draws (with replacement) containing N distinct videos of which N1 were
drawn exactly once:

* Good-Turing coverage: ``M = N / (1 - N1 / K)``
* fixed-point maximum likelihood: iterate ``M <- N / (1 - exp(-K / M))``

The second is used only to cross-check the first.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

logger = logging.getLogger(__name__)


class EstimatorError(ValueError):
    pass


class EmptyMonth(EstimatorError):
    """No draws in the month."""


class Undefined(EstimatorError):
    """Every draw is a singleton, so coverage is zero."""


class Diverges(EstimatorError):
    """N == K: the likelihood fixed point sits at infinity."""


@dataclass(frozen=True)
class MonthlyCounts:
    month: str  # "YYYY-MM", UTC
    K: int
    N: int
    N1: int

    def __post_init__(self):
        if not (self.K >= self.N >= self.N1 >= 0):
            raise ValueError(f"need K >= N >= N1 >= 0, got K={self.K} N={self.N} N1={self.N1}")


def good_turing(c: MonthlyCounts) -> float:
    if c.K == 0:
        raise EmptyMonth(c.month)
    if c.N1 == c.K:
        raise Undefined(f"{c.month}: no repeated draws (N1 == K)")
    return c.N / (1.0 - c.N1 / c.K)


def _one_minus_exp_neg(x: float) -> float:
    # 1 - e^{-x}; for x > 700 e^{-x} underflows and the term is exactly 1
    if x > 700.0:
        return 1.0
    return -math.expm1(-x)


def mle_fixed_point(c: MonthlyCounts, iterations: int = 1000, M0: float = 10.0,
                    rtol: float = 1e-9) -> tuple[float, bool]:
    """Iterate the likelihood equation from ``M0``.

    Runs at most ``iterations`` steps and stops early once the relative
    change drops below ``rtol``. Returns ``(M, converged)``; when the cap
    is hit the last iterate is returned with ``converged=False``.
    """
    if c.K == 0:
        raise EmptyMonth(c.month)
    if c.N >= c.K:
        raise Diverges(f"{c.month}: N == K, no finite solution")
    M = float(M0)
    for _ in range(iterations):
        nxt = c.N / _one_minus_exp_neg(c.K / M)
        if abs(nxt - M) / nxt < rtol:
            return nxt, True
        M = nxt
    return M, False


@dataclass
class EstimateResult:
    month: str
    K: int
    N: int
    N1: int
    M_gt: float = math.nan
    M_mle: float = math.nan
    relative_gap: float = math.nan
    conspiracy_pct: float = 0.0
    conspiracy_volume: float = math.nan
    converged: bool = False
    flags: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not any(f in ("empty", "undefined") for f in self.flags)


CSV_FIELDS = ["month", "K", "N", "N1", "M_gt", "M_mle", "gap", "pct", "volume", "flags"]


def estimate_month(c: MonthlyCounts, positives: int = 0, denominator: int | None = None,
                   iterations: int = 1000, M0: float = 10.0) -> EstimateResult:
    res = EstimateResult(c.month, c.K, c.N, c.N1)
    denom = c.K if denominator is None else denominator
    res.conspiracy_pct = positives / denom if denom else 0.0
    try:
        res.M_gt = good_turing(c)
    except EmptyMonth:
        res.flags.append("empty")
    except Undefined:
        res.flags.append("undefined")
    try:
        res.M_mle, res.converged = mle_fixed_point(c, iterations, M0)
        if not res.converged:
            res.flags.append("mle_not_converged")
    except Diverges:
        res.flags.append("mle_diverges")
    except EmptyMonth:
        pass
    if res.ok:
        if not math.isnan(res.M_mle):
            res.relative_gap = abs(res.M_gt - res.M_mle) / res.M_gt
        res.conspiracy_volume = res.M_gt * res.conspiracy_pct
    return res


def monthly_series(stats, labels: Mapping[str, object], over: str = "draws",
                   iterations: int = 1000, M0: float = 10.0) -> list[EstimateResult]:
    """Per-month population estimates and conspiracy volume.

    ``stats`` is an :class:`ctscope.ingest.CorpusStats` (it must carry the
    per-video draw counts); ``labels`` maps video id to a truthy value for
    positive videos (``VideoClass.CONSPIRACY`` or ``True``).

    With ``over="draws"`` (default) the prevalence is positive draws / K;
    ``over="unique"`` uses positive unique videos / N instead.
    """
    if over not in ("draws", "unique"):
        raise ValueError("over must be 'draws' or 'unique'")
    pos_draws: dict[str, int] = {}
    pos_unique: dict[str, int] = {}
    for vid, (month, draws) in stats.occurrences.items():
        if _is_positive(labels.get(vid)):
            pos_draws[month] = pos_draws.get(month, 0) + draws
            pos_unique[month] = pos_unique.get(month, 0) + 1
    out = []
    for month in sorted(stats.per_month):
        c = stats.per_month[month]
        if over == "draws":
            r = estimate_month(c, pos_draws.get(month, 0), c.K, iterations, M0)
        else:
            r = estimate_month(c, pos_unique.get(month, 0), c.N, iterations, M0)
            r.flags.append("pct_over_unique")
        if not r.ok:
            logger.warning("month %s excluded from volumes: %s", month, ",".join(r.flags))
        out.append(r)
    return out


def _is_positive(v) -> bool:
    if v is None:
        return False
    name = getattr(v, "name", None)
    if name is not None:
        return name == "CONSPIRACY"
    return bool(v)


def _fmt(x: float) -> str:
    return "NA" if isinstance(x, float) and math.isnan(x) else repr(float(x))


def write_estimates_csv(results: Iterable[EstimateResult], path: str | Path) -> Path:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_FIELDS)
        for r in results:
            w.writerow([r.month, r.K, r.N, r.N1, _fmt(r.M_gt), _fmt(r.M_mle), _fmt(r.relative_gap),
                        _fmt(r.conspiracy_pct), _fmt(r.conspiracy_volume), ";".join(r.flags)])
    return path


def simulate_month(rng: np.random.Generator, M: int, K: int, month: str = "sim") -> MonthlyCounts:
    """Draw K items uniformly with replacement from M and tally N, N1."""
    counts = np.bincount(rng.integers(0, M, size=K), minlength=M)
    return MonthlyCounts(month, K, int((counts > 0).sum()), int((counts == 1).sum()))
