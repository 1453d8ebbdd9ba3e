"""Significance tests, effect sizes, inference cost accounting, Pareto fronts.

The Student-t tail probability is computed from scratch via the regularized
incomplete beta function (Lentz continued fraction) so tests can check it
against independent references. Sample (n-1) variance is used inside the
t statistic and Cohen's d; descriptive trace statistics elsewhere use
population variance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Optional, Sequence

from .assess import InstanceResult
from .gateway import ModelHandle


class StatsError(ValueError):
    pass


def _betacf(a: float, b: float, x: float, max_iter: int = 300, eps: float = 1e-15) -> float:
    """Continued fraction for the incomplete beta function (modified Lentz)."""
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < tiny:
        d = tiny
    d = 1.0 / d
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < eps:
            return h
    raise StatsError("incomplete beta continued fraction failed to converge")


def reg_inc_beta(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta I_x(a, b)."""
    if not 0.0 <= x <= 1.0:
        raise StatsError(f"x out of [0,1]: {x}")
    if x == 0.0:
        return 0.0
    if x == 1.0:
        return 1.0
    ln_front = (
        math.lgamma(a + b)
        - math.lgamma(a)
        - math.lgamma(b)
        + a * math.log(x)
        + b * math.log1p(-x)
    )
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def t_sf(t: float, df: int) -> float:
    """Upper-tail probability P(T >= t) for Student's t with df degrees."""
    if df < 1:
        raise StatsError(f"df must be >= 1, got {df}")
    if t < 0:
        return 1.0 - t_sf(-t, df)
    x = df / (df + t * t)
    return 0.5 * reg_inc_beta(df / 2.0, 0.5, x)


class Direction(str, Enum):
    A_GT_B = "a_gt_b"
    A_LT_B = "a_lt_b"


@dataclass
class PairedTResult:
    t: float
    p: float
    df: int


def _sample_sd(values: Sequence[float]) -> float:
    n = len(values)
    mean = sum(values) / n
    return math.sqrt(sum((v - mean) ** 2 for v in values) / (n - 1))


def paired_t_one_sided(
    a: Sequence[float], b: Sequence[float], direction: Direction
) -> PairedTResult:
    """One-sided paired t-test on matched observations."""
    if len(a) != len(b):
        raise StatsError(f"length_mismatch: {len(a)} vs {len(b)}")
    n = len(a)
    if n < 2:
        raise StatsError("need at least 2 paired observations")
    d = [x - y for x, y in zip(a, b)]
    sd = _sample_sd(d)
    if sd == 0.0:
        raise StatsError("zero_variance: paired differences are constant")
    mean_d = sum(d) / n
    t = mean_d / (sd / math.sqrt(n))
    df = n - 1
    p = t_sf(t, df) if direction is Direction.A_GT_B else t_sf(-t, df)
    return PairedTResult(t=t, p=p, df=df)


def _check_ps(ps: Iterable[float]) -> list[float]:
    ps = list(ps)
    for p in ps:
        if not 0.0 <= p <= 1.0:
            raise StatsError(f"invalid_p: {p}")
    return ps


def bonferroni(ps: Sequence[float], m: Optional[int] = None) -> list[float]:
    """min(1, m*p) per value; m defaults to the family size |ps|."""
    ps = _check_ps(ps)
    if m is None:
        m = len(ps)
    return [min(1.0, m * p) for p in ps]


def holm(ps: Sequence[float]) -> list[float]:
    """Holm step-down corrected p-values, mapped back to input order."""
    ps = _check_ps(ps)
    m = len(ps)
    order = sorted(range(m), key=lambda i: ps[i])
    corrected = [0.0] * m
    running_max = 0.0
    for rank, idx in enumerate(order):
        adjusted = min(1.0, (m - rank) * ps[idx])
        running_max = max(running_max, adjusted)
        corrected[idx] = running_max
    return corrected


def cohens_d(a: Sequence[float], b: Sequence[float]) -> float:
    """Standardized mean difference with pooled sample standard deviation."""
    if len(a) < 2 or len(b) < 2:
        raise StatsError("each group needs at least 2 observations")
    na, nb = len(a), len(b)
    sa2 = _sample_sd(a) ** 2
    sb2 = _sample_sd(b) ** 2
    pooled = math.sqrt(((na - 1) * sa2 + (nb - 1) * sb2) / (na + nb - 2))
    if pooled == 0.0:
        raise StatsError("zero pooled variance")
    return (sum(a) / na - sum(b) / nb) / pooled


def run_cost(results: list[InstanceResult], handle: ModelHandle) -> float:
    """Total USD: token sums times per-1M prices, linear over partitions."""
    if handle.price_in_usd_per_1m < 0 or handle.price_out_usd_per_1m < 0:
        raise StatsError("missing_price: negative or unset prices")
    prompt_tokens = sum(t.prompt_tokens for r in results for t in r.turns)
    completion_tokens = sum(t.completion_tokens for r in results for t in r.turns)
    return (
        prompt_tokens * handle.price_in_usd_per_1m / 1e6
        + completion_tokens * handle.price_out_usd_per_1m / 1e6
    )


@dataclass(frozen=True)
class CostAccuracyPoint:
    label: str
    cost: float
    accuracy: float


def pareto_frontier(points: Sequence[CostAccuracyPoint]) -> list[CostAccuracyPoint]:
    """Points not strictly dominated (cost <= and accuracy >=, one strict),
    in stable input order."""
    frontier = []
    for p in points:
        dominated = any(
            q.cost <= p.cost
            and q.accuracy >= p.accuracy
            and (q.cost < p.cost or q.accuracy > p.accuracy)
            for q in points
        )
        if not dominated:
            frontier.append(p)
    return frontier
