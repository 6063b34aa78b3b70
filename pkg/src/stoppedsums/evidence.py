"""Finite-range evidence for statements of the form ``E[...] < inf`` or ``= inf``.

A series or integral is cut into blocks over geometrically growing ranges
``[T_{k-1}, T_k)`` with ``T_k = T_0 * growth**k``. The block sums behave in
a characteristic way: for a convergent tail they shrink geometrically, for a
divergent one they stop shrinking. The rule applied to the last three
block ratios is

* divergent if every ratio is at least ``diverge_ratio``, at least
  ``min_divergent_blocks`` blocks have been summed and the partial sum has
  passed ``bound`` when one is given;
* finite if every ratio is at most ``finite_ratio`` and the geometric tail
  estimate is below ``rel_tail`` times the partial sum;
* inconclusive otherwise.

Everything is carried in the log domain so that neither huge nor tiny
values overflow.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import special

from ._numerics import log_quad

FINITE = "finite"
DIVERGENT = "divergent"
INCONCLUSIVE = "inconclusive"


@dataclass(frozen=True)
class EvidenceRule:
    growth: float = 10.0
    diverge_ratio: float = 0.9
    finite_ratio: float = 0.8
    rel_tail: float = 1e-6
    window: int = 3
    max_blocks: int = 60
    bound: float | None = None
    # increments still rise through the bulk of a law, so divergence waits this long
    min_divergent_blocks: int = 6


DEFAULT_RULE = EvidenceRule()


@dataclass(frozen=True)
class Evidence:
    status: str
    log_partial_sums: tuple[float, ...]
    log_increments: tuple[float, ...]
    cutoffs: tuple[float, ...]
    log_tail_bound: float = math.nan
    note: str = ""
    extras: dict = field(default_factory=dict)

    @property
    def is_finite(self) -> bool:
        return self.status == FINITE

    @property
    def is_divergent(self) -> bool:
        return self.status == DIVERGENT

    @property
    def estimate(self) -> float:
        """Last partial sum (a lower bound in either case)."""
        return math.exp(min(self.log_partial_sums[-1], 709.0)) if self.log_partial_sums else 0.0

    def to_dict(self) -> dict:
        return {
            "status": self.status,
            "partial_sums": [math.exp(min(v, 709.0)) for v in self.log_partial_sums],
            "log_partial_sums": list(self.log_partial_sums),
            "log_increments": list(self.log_increments),
            "cutoffs": list(self.cutoffs),
            "log_tail_bound": self.log_tail_bound,
            "note": self.note,
        }


def _verdict(log_incs: list[float], log_sums: list[float], rule: EvidenceRule) -> tuple[str | None, float]:
    w = rule.window
    if len(log_incs) < w + 1:
        return None, math.nan
    last = np.array(log_incs[-(w + 1):])
    if np.all(np.isneginf(last[1:])):
        return FINITE, -math.inf
    with np.errstate(invalid="ignore"):
        lr = np.diff(last)
    lr = np.where(np.isnan(lr), -np.inf, lr)
    if np.all(lr >= math.log(rule.diverge_ratio)):
        if len(log_incs) < rule.min_divergent_blocks:
            return None, math.inf
        if rule.bound is None or log_sums[-1] >= math.log(rule.bound):
            return DIVERGENT, math.inf
        return None, math.inf
    if np.all(lr <= math.log(rule.finite_ratio)):
        r = math.exp(float(np.max(lr)))
        log_tail = float(last[-1]) + math.log(r / (1.0 - r)) if r > 0 else -math.inf
        if log_tail <= log_sums[-1] + math.log(rule.rel_tail):
            return FINITE, log_tail
    return None, math.nan


def _run(block: Callable[[float, float], float], t0: float, rule: EvidenceRule, limit: float) -> Evidence:
    log_incs: list[float] = []
    log_sums: list[float] = []
    cutoffs: list[float] = []
    lo, hi = 0.0, t0
    total = -math.inf
    for _ in range(rule.max_blocks):
        inc = block(lo, hi)
        if not math.isnan(inc):
            total = float(np.logaddexp(total, inc))
        log_incs.append(inc)
        log_sums.append(total)
        cutoffs.append(hi)
        status, log_tail = _verdict(log_incs, log_sums, rule)
        if status is not None:
            return Evidence(status, tuple(log_sums), tuple(log_incs), tuple(cutoffs), log_tail)
        if math.isinf(total) and total > 0:
            return Evidence(DIVERGENT, tuple(log_sums), tuple(log_incs), tuple(cutoffs), math.inf,
                            "partial sum overflowed")
        lo, hi = hi, hi * rule.growth
        if hi > limit:
            break
    return Evidence(INCONCLUSIVE, tuple(log_sums), tuple(log_incs), tuple(cutoffs), math.nan,
                    "no decision within the numeric range")


def integral_evidence(logf: Callable[[float], float], t0: float = 1.0, breaks=(),
                      rule: EvidenceRule = DEFAULT_RULE, upper: float = math.inf) -> Evidence:
    """Evidence for ``int_0^upper exp(logf(x)) dx``."""
    limit = min(1e300, upper)

    def block(lo, hi):
        hi = min(hi, upper)
        if hi <= lo:
            return -math.inf
        inner = tuple(b for b in breaks if lo < b < hi)
        return log_quad(logf, lo, hi, breaks=inner)

    if math.isfinite(upper):
        inc = block(0.0, upper)
        return Evidence(FINITE, (inc,), (inc,), (upper,), -math.inf, "bounded support")
    return _run(block, t0, rule, limit)


def series_evidence(log_term: Callable[[np.ndarray], np.ndarray], start: int = 0, t0: int = 10,
                    rule: EvidenceRule = DEFAULT_RULE, stop: int | None = None,
                    max_terms: int = 10_000_000) -> Evidence:
    """Evidence for ``sum_{n >= start} exp(log_term(n))``; ``stop`` bounds the support."""

    def block(lo, hi):
        a = max(int(math.ceil(lo)), start)
        b = int(math.ceil(hi))
        if stop is not None:
            b = min(b, stop + 1)
        if b <= a:
            return -math.inf
        vals = np.asarray(log_term(np.arange(a, b)), dtype=float)
        return float(special.logsumexp(vals)) if vals.size else -math.inf

    if stop is not None and stop < max_terms:
        inc = block(0, stop + 1)
        return Evidence(FINITE, (inc,), (inc,), (float(stop),), -math.inf, "bounded support")
    return _run(block, float(t0), rule, float(max_terms))


def moment_evidence(dist, log_weight: Callable, rule: EvidenceRule = DEFAULT_RULE) -> Evidence:
    """Evidence for ``E exp(log_weight(xi))`` under an analytic law.

    Uses the density where one exists and the atoms for point-mass laws.
    """
    from .distributions.analytic import PointMassMix

    if isinstance(dist, PointMassMix):
        vals = np.asarray(dist.values, dtype=float)
        lw = np.array([float(log_weight(v)) for v in vals]) + np.log(np.asarray(dist.probs, dtype=float))
        s = float(special.logsumexp(lw))
        return Evidence(FINITE, (s,), (s,), (float(vals.max()),), -math.inf, "finite support")

    def logf(x):
        lp = float(dist.logpdf(x))
        if lp == -math.inf:
            return -math.inf
        return float(log_weight(x)) + lp

    t0 = max([1.0, *[b for b in dist.breakpoints if math.isfinite(b)]])
    return integral_evidence(logf, t0=t0, breaks=dist.breakpoints, rule=rule, upper=dist.upper_support)


__all__ = [
    "DIVERGENT",
    "DEFAULT_RULE",
    "Evidence",
    "EvidenceRule",
    "FINITE",
    "INCONCLUSIVE",
    "integral_evidence",
    "moment_evidence",
    "series_evidence",
]
