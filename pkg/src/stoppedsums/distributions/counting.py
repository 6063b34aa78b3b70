"""Laws of the counting variable (number of summands).

Unbounded families are enumerated up to a configurable tail threshold; the
neglected mass is reported alongside the enumerated probabilities. Tails and
partial means are available analytically (or by convergent summation) far
beyond the enumerated range, which the tail-domination checks rely on.
"""

from __future__ import annotations

import functools
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Any, ClassVar

import numpy as np
from scipy import special, stats

from .._numerics import safe_log
from ..errors import PreconditionError

# Default enumeration threshold for P(tau > N).
TAIL_THRESHOLD = 1e-16
MAX_ENUMERATION = 2_000_000


def _out(v):
    v = np.asarray(v, dtype=float)
    return float(v) if v.ndim == 0 else v


class CountingDistribution(ABC):
    """Law of a nonnegative integer counting variable."""

    family: ClassVar[str]

    @abstractmethod
    def log_tail(self, n):
        """``log P(tau > n)``; real arguments are floored."""

    def tail(self, n):
        return _out(np.exp(self.log_tail(n)))

    def log_pmf(self, n):
        n = np.asarray(n, dtype=float)
        hi = np.asarray(self.log_tail(n), dtype=float)
        lo = np.asarray(self.log_tail(n - 1), dtype=float)
        with np.errstate(invalid="ignore", over="ignore", divide="ignore"):
            v = lo + np.log(-np.expm1(hi - lo))
        v = np.where(np.isneginf(lo), -np.inf, v)
        return _out(np.where(n < 0, -np.inf, v))

    def pmf(self, n):
        return _out(np.exp(self.log_pmf(n)))

    @property
    @abstractmethod
    def mean(self) -> float: ...

    @property
    def max_support(self) -> int | None:
        """Largest atom for bounded laws, ``None`` otherwise."""
        return None

    @property
    def exp_moment_abscissa(self) -> float:
        """``sup{s: E exp(s*tau) < inf}``."""
        return math.inf if self.max_support is not None else 0.0

    @property
    def is_heavy_tailed(self) -> bool:
        return self.exp_moment_abscissa == 0.0

    @property
    def panjer_ab(self) -> tuple[float, float] | None:
        """``(a, b)`` when the law is in the (a, b, 0) class."""
        return None

    def pgf(self, z: float) -> float:
        probs, rem = self.support()
        return float(np.polynomial.polynomial.polyval(z, probs))

    def support(self, threshold: float = TAIL_THRESHOLD, max_n: int = MAX_ENUMERATION):
        """Enumerate ``P(tau = n)`` for ``n = 0..N``.

        Returns ``(probs, remainder)`` with ``remainder = P(tau > N)``; ``N`` is
        the smallest enumerated bound with remainder below ``threshold`` (or
        ``max_n``).
        """
        top = self.max_support
        if top is None:
            top = 16
            while top < max_n and self.tail(top) > threshold:
                top *= 2
            top = min(top, max_n)
            # shrink back to the smallest adequate bound
            lo, hi = top // 2, top
            while hi - lo > 1:
                mid = (lo + hi) // 2
                if self.tail(mid) > threshold:
                    lo = mid
                else:
                    hi = mid
            top = hi if self.tail(hi) <= threshold else top
        n = np.arange(top + 1)
        probs = np.asarray(self.pmf(n), dtype=float)
        remainder = 0.0 if self.max_support is not None else float(self.tail(top))
        return probs, remainder

    def log_partial_mean_tail(self, k):
        """``log E[tau; tau > k]`` computed without enumeration cutoff."""
        k = np.asarray(k, dtype=float)
        kf = np.floor(np.maximum(k, 0.0)).astype(np.int64)
        top = int(kf.max()) if kf.size else 0
        suffix = _suffix_log_sums(self, top)
        # E[tau; tau > k] = (k+1) P(tau > k) + sum_{m > k} P(tau > m)
        first = np.log(kf + 1.0) + np.asarray(self.log_tail(kf), dtype=float)
        v = np.logaddexp(first, suffix[kf])
        if np.any(k < 0):
            v = np.where(k < 0, math.log(self.mean), v)
        return _out(v)

    def second_moment(self) -> float:
        probs, rem = self.support()
        n = np.arange(probs.size)
        return math.fsum(n * n * probs)

    def size_biased(self) -> CountingDistribution:
        m = self.mean
        if not (0.0 < m < math.inf):
            raise PreconditionError(f"size bias needs a finite positive mean, got {m}")
        if self.max_support is not None:
            probs, _ = self.support()
            n = np.arange(probs.size)
            return Explicit(tuple(n * probs / m))
        return SizeBiasedCount(self)

    @abstractmethod
    def params(self) -> dict[str, Any]: ...

    def to_dict(self) -> dict[str, Any]:
        return {"family": self.family, **self.params()}


@functools.lru_cache(maxsize=64)
def _suffix_log_sums(dist: CountingDistribution, top: int) -> np.ndarray:
    """``log sum_{m > k} P(tau > m)`` for ``k = 0..top``."""
    base = float(dist.log_tail(top))
    m_end = top + 1
    if dist.max_support is not None:
        m_end = max(m_end, dist.max_support + 1)
    elif math.isfinite(base):
        step = 64
        while float(dist.log_tail(m_end)) > base - 48.0 and m_end < 10**8:
            m_end += step
            step *= 2
    m = np.arange(m_end + 1)
    lt = np.asarray(dist.log_tail(m), dtype=float)
    # acc[j] = log sum_{i >= j} lt[i]
    acc = np.logaddexp.accumulate(lt[::-1])[::-1]
    return np.append(acc[1: top + 2], -np.inf)[: top + 1]


@dataclass(frozen=True)
class Geometric(CountingDistribution):
    """``P(tau = n) = (1-q) q^n`` for ``n >= 0``."""

    q: float
    family: ClassVar[str] = "geometric"

    def __post_init__(self):
        if not 0.0 <= self.q < 1.0:
            raise PreconditionError("Geometric needs 0 <= q < 1")

    def log_tail(self, n):
        n = np.floor(np.asarray(n, dtype=float))
        with np.errstate(divide="ignore"):
            v = (n + 1.0) * math.log(self.q) if self.q > 0 else np.where(n >= 0, -np.inf, 0.0)
        return _out(np.where(n < 0, 0.0, v))

    def log_pmf(self, n):
        n = np.asarray(n, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            v = math.log1p(-self.q) + n * (math.log(self.q) if self.q > 0 else -np.inf)
        if self.q == 0:
            v = np.where(n == 0, 0.0, -np.inf)
        return _out(np.where((n < 0) | (n != np.floor(n)), -np.inf, v))

    @property
    def mean(self) -> float:
        return self.q / (1.0 - self.q)

    @property
    def exp_moment_abscissa(self) -> float:
        return -math.log(self.q) if self.q > 0 else math.inf

    @property
    def panjer_ab(self):
        return (self.q, 0.0)

    def pgf(self, z: float) -> float:
        return (1.0 - self.q) / (1.0 - self.q * z)

    def log_partial_mean_tail(self, k):
        k = np.floor(np.maximum(np.asarray(k, dtype=float), 0.0))
        lq = math.log(self.q)
        # (k+1) q^{k+1} + q^{k+2} / (1-q)
        return _out((k + 1.0) * lq + np.log(k + 1.0 + self.q / (1.0 - self.q)))

    def second_moment(self) -> float:
        q = self.q
        return q * (1.0 + q) / (1.0 - q) ** 2

    def params(self):
        return {"q": self.q}


@dataclass(frozen=True)
class Poisson(CountingDistribution):
    lam: float
    family: ClassVar[str] = "poisson"

    def __post_init__(self):
        if self.lam < 0:
            raise PreconditionError("Poisson needs lam >= 0")

    def log_tail(self, n):
        n = np.floor(np.asarray(n, dtype=float))
        if self.lam == 0:
            return _out(np.where(n < 0, 0.0, -np.inf))
        return _out(np.where(n < 0, 0.0, stats.poisson.logsf(n, self.lam)))

    def log_pmf(self, n):
        n = np.asarray(n, dtype=float)
        if self.lam == 0:
            return _out(np.where(n == 0, 0.0, -np.inf))
        return _out(stats.poisson.logpmf(n, self.lam))

    @property
    def mean(self) -> float:
        return self.lam

    @property
    def exp_moment_abscissa(self) -> float:
        return math.inf

    @property
    def panjer_ab(self):
        return (0.0, self.lam)

    def pgf(self, z: float) -> float:
        return math.exp(self.lam * (z - 1.0))

    def second_moment(self) -> float:
        return self.lam + self.lam**2

    def params(self):
        return {"lam": self.lam}


@dataclass(frozen=True)
class Binomial(CountingDistribution):
    trials: int
    p: float
    family: ClassVar[str] = "binomial"

    def __post_init__(self):
        if self.trials < 0 or not 0.0 <= self.p <= 1.0:
            raise PreconditionError("Binomial needs trials >= 0 and 0 <= p <= 1")

    def log_tail(self, n):
        n = np.floor(np.asarray(n, dtype=float))
        with np.errstate(divide="ignore"):
            v = np.where(n < 0, 0.0, np.where(n >= self.trials, -np.inf,
                                               stats.binom.logsf(n, self.trials, self.p)))
        return _out(v)

    def log_pmf(self, n):
        with np.errstate(divide="ignore"):
            return _out(stats.binom.logpmf(np.asarray(n, dtype=float), self.trials, self.p))

    @property
    def max_support(self) -> int:
        return self.trials

    @property
    def mean(self) -> float:
        return self.trials * self.p

    @property
    def panjer_ab(self):
        # with a = -p/(1-p) below -1 the recursion amplifies rounding error
        # geometrically, so only p <= 1/2 is offered to it
        if self.p > 0.5:
            return None
        r = self.p / (1.0 - self.p)
        return (-r, (self.trials + 1) * r)

    def pgf(self, z: float) -> float:
        return (1.0 - self.p + self.p * z) ** self.trials

    def params(self):
        return {"trials": self.trials, "p": self.p}


@dataclass(frozen=True)
class WeibullCount(CountingDistribution):
    """``P(tau > n) = exp(-n^beta)`` for integer ``n >= 0`` (so ``tau >= 1``)."""

    beta: float
    family: ClassVar[str] = "weibull_count"

    def __post_init__(self):
        if self.beta <= 0:
            raise PreconditionError("WeibullCount needs beta > 0")

    def log_tail(self, n):
        n = np.floor(np.asarray(n, dtype=float))
        return _out(np.where(n < 0, 0.0, -(np.maximum(n, 0.0) ** self.beta)))

    def log_pmf(self, n):
        n = np.asarray(n, dtype=float)
        nn = np.maximum(n, 1.0)
        hi = nn**self.beta
        lo = (nn - 1.0) ** self.beta
        with np.errstate(divide="ignore"):
            v = -hi + np.log(np.expm1(hi - lo))
        return _out(np.where((n < 1) | (n != np.floor(n)), -np.inf, v))

    @functools.cached_property
    def mean(self) -> float:
        # E tau = sum_{n >= 0} P(tau > n)
        total = 0.0
        start = 0
        while True:
            n = np.arange(start, start + 4096, dtype=float)
            terms = np.exp(-(n**self.beta))
            total += math.fsum(terms)
            if terms[-1] < 1e-20 * total:
                return total
            start += 4096

    @property
    def exp_moment_abscissa(self) -> float:
        if self.beta < 1:
            return 0.0
        return 1.0 if self.beta == 1 else math.inf

    def params(self):
        return {"beta": self.beta}


@dataclass(frozen=True)
class PowerCount(CountingDistribution):
    """``P(tau > n) = (n+1)^(-alpha)`` for integer ``n >= 0`` (so ``tau >= 1``)."""

    alpha: float
    family: ClassVar[str] = "power_count"

    def __post_init__(self):
        if self.alpha <= 1:
            raise PreconditionError("PowerCount needs alpha > 1 for a finite mean")

    def log_tail(self, n):
        n = np.floor(np.asarray(n, dtype=float))
        return _out(np.where(n < 0, 0.0, -self.alpha * np.log1p(np.maximum(n, 0.0))))

    @property
    def mean(self) -> float:
        return float(special.zeta(self.alpha, 1.0))

    def log_partial_mean_tail(self, k):
        k = np.floor(np.maximum(np.asarray(k, dtype=float), 0.0))
        first = (1.0 - self.alpha) * np.log1p(k)
        return _out(np.logaddexp(first, np.log(special.zeta(self.alpha, k + 2.0))))

    def second_moment(self) -> float:
        if self.alpha <= 2:
            return math.inf
        # E tau^2 = sum_{m >= 0} (2m + 1) (m+1)^{-alpha}
        return float(2.0 * special.zeta(self.alpha - 1.0, 1.0) - special.zeta(self.alpha, 1.0))

    def params(self):
        return {"alpha": self.alpha}


@dataclass(frozen=True)
class Deterministic(CountingDistribution):
    n: int
    family: ClassVar[str] = "deterministic"

    def __post_init__(self):
        if self.n < 0:
            raise PreconditionError("Deterministic needs n >= 0")

    def log_tail(self, k):
        k = np.floor(np.asarray(k, dtype=float))
        return _out(np.where(k < self.n, 0.0, -np.inf))

    def log_pmf(self, k):
        k = np.asarray(k, dtype=float)
        return _out(np.where(k == self.n, 0.0, -np.inf))

    @property
    def max_support(self) -> int:
        return self.n

    @property
    def mean(self) -> float:
        return float(self.n)

    @property
    def panjer_ab(self):
        return (0.0, 0.0) if self.n == 0 else None

    def pgf(self, z: float) -> float:
        return z**self.n

    def size_biased(self):
        if self.n == 0:
            raise PreconditionError("size bias needs a positive mean")
        return Deterministic(self.n)

    def params(self):
        return {"n": self.n}


@dataclass(frozen=True)
class Explicit(CountingDistribution):
    """Finite pmf given as ``probs[n] = P(tau = n)``."""

    probs: tuple[float, ...]
    family: ClassVar[str] = "explicit"

    def __post_init__(self):
        p = tuple(float(v) for v in self.probs)
        while len(p) > 1 and p[-1] == 0.0:
            p = p[:-1]
        object.__setattr__(self, "probs", p)
        if not p or min(p) < 0 or abs(math.fsum(p) - 1.0) > 1e-12:
            raise PreconditionError("explicit pmf must be nonnegative and sum to 1 within 1e-12")

    @classmethod
    def from_support(cls, support, probs) -> Explicit:
        top = max(int(s) for s in support)
        arr = [0.0] * (top + 1)
        for s, q in zip(support, probs):
            arr[int(s)] += float(q)
        return cls(tuple(arr))

    def log_tail(self, n):
        n = np.floor(np.asarray(n, dtype=float))
        p = np.asarray(self.probs)
        # suffix sums of nonnegative terms, no cancellation
        suffix = np.append(np.cumsum(p[::-1])[::-1], 0.0)
        idx = np.clip(n + 1, 0, p.size).astype(int)
        return _out(np.where(n < 0, 0.0, safe_log(np.minimum(suffix[idx], 1.0))))

    def log_pmf(self, n):
        n = np.asarray(n, dtype=float)
        p = np.append(np.asarray(self.probs), 0.0)
        idx = np.where((n >= 0) & (n < p.size - 1) & (n == np.floor(n)), n, p.size - 1).astype(int)
        return _out(safe_log(p[idx]))

    @property
    def max_support(self) -> int:
        return len(self.probs) - 1

    @property
    def mean(self) -> float:
        return math.fsum(i * p for i, p in enumerate(self.probs))

    def pgf(self, z: float) -> float:
        return math.fsum(p * z**i for i, p in enumerate(self.probs))

    def params(self):
        return {"probs": list(self.probs)}


@dataclass(frozen=True)
class SizeBiasedCount(CountingDistribution):
    """``P(tau_* = n) = n P(tau = n) / E tau`` for an unbounded base law."""

    base: CountingDistribution
    family: ClassVar[str] = "size_biased_count"

    def __post_init__(self):
        # the base mean may be a slow series; compute it once
        object.__setattr__(self, "_log_base_mean", math.log(self.base.mean))

    def log_tail(self, n):
        return _out(np.minimum(np.asarray(self.base.log_partial_mean_tail(n)) - self._log_base_mean, 0.0))

    def log_pmf(self, n):
        n = np.asarray(n, dtype=float)
        with np.errstate(divide="ignore"):
            return _out(np.log(np.maximum(n, 0.0)) + self.base.log_pmf(n) - self._log_base_mean)

    @property
    def mean(self) -> float:
        return self.base.second_moment() / self.base.mean

    @property
    def exp_moment_abscissa(self) -> float:
        return self.base.exp_moment_abscissa

    def params(self):
        return {"base": self.base.to_dict()}


_FAMILIES = {
    "geometric": Geometric,
    "poisson": Poisson,
    "binomial": Binomial,
    "weibull_count": WeibullCount,
    "power_count": PowerCount,
    "deterministic": Deterministic,
}


def counting_from_dict(spec: dict[str, Any]) -> CountingDistribution:
    """Build a counting law from JSON, e.g. ``{"family": "geometric", "q": 0.5}``.

    Explicit laws accept either ``{"probs": [...]}`` indexed from 0 or
    ``{"support": [...], "probs": [...]}``.
    """
    spec = dict(spec)
    family = spec.pop("family", None)
    if family == "explicit":
        if "support" in spec:
            return Explicit.from_support(spec["support"], spec["probs"])
        return Explicit(tuple(spec["probs"]))
    if family == "size_biased_count":
        return SizeBiasedCount(counting_from_dict(spec["base"]))
    cls = _FAMILIES.get(family)
    if cls is None:
        raise PreconditionError(f"unknown counting family {family!r}")
    try:
        return cls(**spec)
    except TypeError as exc:
        raise PreconditionError(f"bad parameters for {family}: {exc}") from None
