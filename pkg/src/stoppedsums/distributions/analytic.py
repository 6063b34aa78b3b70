"""Closed-form laws for the summands.

Every family lives on the nonnegative half-line and exposes its tail, log
tail, log density (where one exists), mean, Laplace transform and the
finiteness abscissa of the Laplace transform. Objects are frozen
dataclasses and safe to share between threads.
"""

from __future__ import annotations

import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Any, ClassVar

import numpy as np
from scipy import special, stats

from .._numerics import log_gammaincc, log_quad, safe_log
from ..errors import PreconditionError, UnsupportedFamilyError

# Laplace transforms above this are reported as infinite.
OVERFLOW_LOG = 700.0


@dataclass(frozen=True)
class LaplaceReport:
    gamma: float
    phi: float
    gamma_hat: float
    infinite: bool
    warnings: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "gamma": self.gamma,
            "phi": None if self.infinite else self.phi,
            "phi_infinite": self.infinite,
            "gamma_hat": self.gamma_hat,
            "warnings": list(self.warnings),
        }


def _out(v):
    v = np.asarray(v, dtype=float)
    return float(v) if v.ndim == 0 else v


class AnalyticDistribution(ABC):
    """Law of a nonnegative summand with an analytic tail."""

    family: ClassVar[str]

    @abstractmethod
    def log_tail(self, x):
        """``log P(xi > x)``, vectorized."""

    def tail(self, x):
        return _out(np.exp(self.log_tail(x)))

    def logpdf(self, x):
        raise UnsupportedFamilyError(f"{self.family} has no density")

    def pdf(self, x):
        return _out(np.exp(self.logpdf(x)))

    @property
    @abstractmethod
    def mean(self) -> float: ...

    @property
    @abstractmethod
    def gamma_hat(self) -> float: ...

    @property
    def is_heavy_tailed(self) -> bool:
        return self.gamma_hat == 0.0

    @property
    def upper_support(self) -> float:
        return math.inf

    @property
    def breakpoints(self) -> tuple[float, ...]:
        """Points where the density is not smooth."""
        return ()

    def _phi_at_gamma_hat(self) -> float:
        return math.inf

    def _log_phi_finite(self, gamma: float) -> float:
        # E e^{gamma xi} = 1 + gamma * int_0^inf e^{gamma x} P(xi > x) dx
        if gamma == 0.0:
            return 0.0
        li = log_quad(lambda y: gamma * y + float(self.log_tail(y)), 0.0,
                      breaks=self.breakpoints)
        if gamma > 0:
            return math.log1p(gamma * math.exp(li)) if li < OVERFLOW_LOG else math.inf
        return math.log1p(-abs(gamma) * math.exp(li))

    def laplace(self, gamma: float) -> LaplaceReport:
        gamma = float(gamma)
        gh = self.gamma_hat
        if gamma == 0.0:
            return LaplaceReport(gamma, 1.0, gh, False)
        if gamma > gh:
            return LaplaceReport(gamma, math.inf, gh, True)
        if gamma == gh:
            phi = self._phi_at_gamma_hat()
            return LaplaceReport(gamma, phi, gh, math.isinf(phi))
        lp = self._log_phi_finite(gamma)
        if lp > OVERFLOW_LOG:
            return LaplaceReport(gamma, math.inf, gh, True, ("overflow threshold exceeded",))
        return LaplaceReport(gamma, math.exp(lp), gh, False)

    def phi_at_gamma_hat(self) -> float:
        """Left limit of the Laplace transform at its abscissa."""
        gh = self.gamma_hat
        if gh == 0.0:
            return 1.0
        return self._phi_at_gamma_hat()

    def second_moment(self) -> float:
        li = log_quad(lambda y: math.log(2.0 * y) + float(self.log_tail(y)) if y > 0 else -math.inf,
                      0.0, breaks=self.breakpoints)
        return math.exp(li) if li < OVERFLOW_LOG else math.inf

    def size_biased(self) -> AnalyticDistribution:
        m = self.mean
        if not (0.0 < m < math.inf):
            raise PreconditionError(f"size bias needs a finite positive mean, got {m}")
        return SizeBiased(self)

    @abstractmethod
    def params(self) -> dict[str, Any]: ...

    def to_dict(self) -> dict[str, Any]:
        return {"family": self.family, **self.params()}


@dataclass(frozen=True)
class Pareto(AnalyticDistribution):
    alpha: float
    scale: float = 1.0
    family: ClassVar[str] = "pareto"

    def __post_init__(self):
        if self.alpha <= 0 or self.scale <= 0:
            raise PreconditionError("Pareto needs alpha > 0 and scale > 0")

    def log_tail(self, x):
        x = np.asarray(x, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            v = np.where(x < self.scale, 0.0, -self.alpha * np.log(np.maximum(x, self.scale) / self.scale))
        return _out(v)

    def tail(self, x):
        x = np.asarray(x, dtype=float)
        return _out(np.where(x < self.scale, 1.0, (np.maximum(x, self.scale) / self.scale) ** -self.alpha))

    def logpdf(self, x):
        x = np.asarray(x, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            v = np.where(
                x < self.scale,
                -np.inf,
                math.log(self.alpha / self.scale) - (self.alpha + 1.0) * np.log(np.maximum(x, self.scale) / self.scale),
            )
        return _out(v)

    @property
    def mean(self) -> float:
        return self.alpha * self.scale / (self.alpha - 1.0) if self.alpha > 1 else math.inf

    @property
    def gamma_hat(self) -> float:
        return 0.0

    @property
    def breakpoints(self):
        return (self.scale,)

    def second_moment(self) -> float:
        return self.alpha * self.scale**2 / (self.alpha - 2.0) if self.alpha > 2 else math.inf

    def size_biased(self) -> AnalyticDistribution:
        if self.alpha <= 1:
            raise PreconditionError("size bias needs a finite mean (alpha > 1)")
        return Pareto(self.alpha - 1.0, self.scale)

    def params(self):
        return {"alpha": self.alpha, "scale": self.scale}


@dataclass(frozen=True)
class Weibull(AnalyticDistribution):
    """Tail ``exp(-(x/scale)^beta)``."""

    beta: float
    scale: float = 1.0
    family: ClassVar[str] = "weibull"

    def __post_init__(self):
        if self.beta <= 0 or self.scale <= 0:
            raise PreconditionError("Weibull needs beta > 0 and scale > 0")

    def log_tail(self, x):
        x = np.maximum(np.asarray(x, dtype=float), 0.0)
        return _out(-((x / self.scale) ** self.beta))

    def logpdf(self, x):
        x = np.asarray(x, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            z = np.maximum(x, 0.0) / self.scale
            v = math.log(self.beta / self.scale) + (self.beta - 1.0) * np.log(z) - z**self.beta
            v = np.where(x < 0, -np.inf, v)
        return _out(v)

    @property
    def mean(self) -> float:
        return self.scale * math.gamma(1.0 + 1.0 / self.beta)

    def second_moment(self) -> float:
        return self.scale**2 * math.gamma(1.0 + 2.0 / self.beta)

    @property
    def gamma_hat(self) -> float:
        if self.beta < 1:
            return 0.0
        if self.beta == 1:
            return 1.0 / self.scale
        return math.inf

    def params(self):
        return {"beta": self.beta, "scale": self.scale}


@dataclass(frozen=True)
class Lognormal(AnalyticDistribution):
    mu: float
    sigma: float
    family: ClassVar[str] = "lognormal"

    def __post_init__(self):
        if self.sigma <= 0:
            raise PreconditionError("Lognormal needs sigma > 0")

    @property
    def _frozen(self):
        return stats.lognorm(s=self.sigma, scale=math.exp(self.mu))

    def log_tail(self, x):
        x = np.asarray(x, dtype=float)
        return _out(np.where(x <= 0, 0.0, self._frozen.logsf(np.maximum(x, 1e-300))))

    def logpdf(self, x):
        x = np.asarray(x, dtype=float)
        return _out(np.where(x <= 0, -np.inf, self._frozen.logpdf(np.maximum(x, 1e-300))))

    @property
    def mean(self) -> float:
        return math.exp(self.mu + 0.5 * self.sigma**2)

    def second_moment(self) -> float:
        return math.exp(2.0 * self.mu + 2.0 * self.sigma**2)

    @property
    def gamma_hat(self) -> float:
        return 0.0

    def size_biased(self) -> AnalyticDistribution:
        return Lognormal(self.mu + self.sigma**2, self.sigma)

    def params(self):
        return {"mu": self.mu, "sigma": self.sigma}


@dataclass(frozen=True)
class Exponential(AnalyticDistribution):
    rate: float
    family: ClassVar[str] = "exponential"

    def __post_init__(self):
        if self.rate <= 0:
            raise PreconditionError("Exponential needs rate > 0")

    def log_tail(self, x):
        return _out(-self.rate * np.maximum(np.asarray(x, dtype=float), 0.0))

    def logpdf(self, x):
        x = np.asarray(x, dtype=float)
        return _out(np.where(x < 0, -np.inf, math.log(self.rate) - self.rate * x))

    @property
    def mean(self) -> float:
        return 1.0 / self.rate

    def second_moment(self) -> float:
        return 2.0 / self.rate**2

    @property
    def gamma_hat(self) -> float:
        return self.rate

    def _log_phi_finite(self, gamma: float) -> float:
        return math.log(self.rate / (self.rate - gamma))

    def params(self):
        return {"rate": self.rate}


@dataclass(frozen=True)
class ExpPolynomial(AnalyticDistribution):
    """Tail ``exp(-rate*x) * (1+x)^(-power)``; finite transform at its abscissa when power > 1."""

    rate: float
    power: float
    family: ClassVar[str] = "exp_polynomial"

    def __post_init__(self):
        if self.rate <= 0 or self.power < 0:
            raise PreconditionError("ExpPolynomial needs rate > 0 and power >= 0")

    def log_tail(self, x):
        x = np.maximum(np.asarray(x, dtype=float), 0.0)
        return _out(-self.rate * x - self.power * np.log1p(x))

    def logpdf(self, x):
        x = np.asarray(x, dtype=float)
        xp = np.maximum(x, 0.0)
        v = -self.rate * xp - self.power * np.log1p(xp) + np.log(self.rate + self.power / (1.0 + xp))
        return _out(np.where(x < 0, -np.inf, v))

    @property
    def mean(self) -> float:
        return math.exp(log_quad(lambda y: float(self.log_tail(y)), 0.0))

    @property
    def gamma_hat(self) -> float:
        return self.rate

    def _phi_at_gamma_hat(self) -> float:
        if self.power <= 1:
            return math.inf
        return 1.0 + self.rate / (self.power - 1.0)

    def params(self):
        return {"rate": self.rate, "power": self.power}


@dataclass(frozen=True)
class PointMassMix(AnalyticDistribution):
    """Finite mixture of atoms at nonnegative points."""

    values: tuple[float, ...]
    probs: tuple[float, ...]
    family: ClassVar[str] = "point_mass_mix"

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        object.__setattr__(self, "probs", tuple(float(p) for p in self.probs))
        if len(self.values) != len(self.probs) or not self.values:
            raise PreconditionError("values and probs must be nonempty and of equal length")
        if min(self.values) < 0:
            raise PreconditionError("atoms must be nonnegative")
        if min(self.probs) < 0 or abs(math.fsum(self.probs) - 1.0) > 1e-12:
            raise PreconditionError("probs must be nonnegative and sum to 1")

    def log_tail(self, x):
        x = np.asarray(x, dtype=float)
        v = np.asarray(self.values)
        p = np.asarray(self.probs)
        t = np.sum(np.where(v[None, :] > x.reshape(-1, 1), p[None, :], 0.0), axis=1)
        return _out(safe_log(np.minimum(t, 1.0)).reshape(x.shape))

    @property
    def mean(self) -> float:
        return math.fsum(v * p for v, p in zip(self.values, self.probs))

    def second_moment(self) -> float:
        return math.fsum(v * v * p for v, p in zip(self.values, self.probs))

    @property
    def gamma_hat(self) -> float:
        return math.inf

    @property
    def upper_support(self) -> float:
        return max(v for v, p in zip(self.values, self.probs) if p > 0)

    def _log_phi_finite(self, gamma: float) -> float:
        return float(special.logsumexp([gamma * v for v in self.values], b=list(self.probs)))

    def _phi_at_gamma_hat(self) -> float:
        return math.inf if self.upper_support > 0 else 1.0

    def size_biased(self) -> AnalyticDistribution:
        m = self.mean
        if m <= 0:
            raise PreconditionError("size bias needs a positive mean")
        pairs = [(v, v * p / m) for v, p in zip(self.values, self.probs) if v * p > 0]
        return PointMassMix(tuple(v for v, _ in pairs), tuple(q for _, q in pairs))

    def params(self):
        return {"values": list(self.values), "probs": list(self.probs)}


@dataclass(frozen=True)
class SizeBiased(AnalyticDistribution):
    """Law reweighted by ``x / E xi``."""

    base: AnalyticDistribution
    family: ClassVar[str] = "size_biased"

    def log_tail(self, x):
        # P(xi_* > x) = (x P(xi > x) + int_x^inf P(xi > y) dy) / E xi
        x = np.asarray(x, dtype=float)
        b = self.base
        if isinstance(b, Exponential):
            xp = np.maximum(x, 0.0)
            return _out(np.log1p(b.rate * xp) - b.rate * xp)
        if isinstance(b, Weibull):
            z = (np.maximum(x, 0.0) / b.scale) ** b.beta
            return _out(log_gammaincc(1.0 + 1.0 / b.beta, z))
        if isinstance(b, Pareto) and b.alpha > 1.0:
            # size biasing lowers the Pareto index by one
            return _out(Pareto(b.alpha - 1.0, b.scale).log_tail(x))
        flat = np.atleast_1d(x).astype(float)
        out = np.empty_like(flat)
        logm = math.log(b.mean)
        for i, xi in enumerate(flat):
            xi = max(xi, 0.0)
            lt0 = float(b.log_tail(xi))
            if lt0 == -math.inf:
                out[i] = -math.inf
                continue
            lj = log_quad(lambda y: float(b.log_tail(y)) - lt0, xi, breaks=b.breakpoints)
            out[i] = min(0.0, lt0 + math.log(xi + math.exp(lj)) - logm)
        return _out(out.reshape(np.shape(x)))

    def logpdf(self, x):
        x = np.asarray(x, dtype=float)
        with np.errstate(divide="ignore"):
            return _out(np.log(np.maximum(x, 0.0)) + self.base.logpdf(x) - math.log(self.base.mean))

    @property
    def mean(self) -> float:
        return self.base.second_moment() / self.base.mean

    @property
    def gamma_hat(self) -> float:
        return self.base.gamma_hat

    @property
    def breakpoints(self):
        return self.base.breakpoints

    def params(self):
        return {"base": self.base.to_dict()}


@dataclass(frozen=True)
class Reweighted(AnalyticDistribution):
    """Law with density proportional to ``exp(weight(x))`` times the base density."""

    base: AnalyticDistribution
    weight: Any
    log_norm: float = field(default=math.nan)
    family: ClassVar[str] = "reweighted"

    def __post_init__(self):
        if math.isnan(self.log_norm):
            ln = log_quad(lambda y: float(self.weight(y)) + float(self.base.logpdf(y)), 0.0,
                          breaks=self.base.breakpoints)
            if not ln < OVERFLOW_LOG:
                raise PreconditionError("reweighting normalizer E exp(weight(xi)) is not finite")
            object.__setattr__(self, "log_norm", ln)

    def logpdf(self, x):
        x = np.asarray(x, dtype=float)
        w = np.vectorize(lambda y: float(self.weight(y)))(x) if x.ndim else float(self.weight(float(x)))
        return _out(w + self.base.logpdf(x) - self.log_norm)

    def log_tail(self, x):
        flat = np.atleast_1d(np.asarray(x, dtype=float))
        out = np.empty_like(flat)
        for i, xi in enumerate(flat):
            xi = max(xi, 0.0)
            out[i] = min(0.0, log_quad(lambda y: float(self.logpdf(y)), xi, breaks=self.base.breakpoints))
        return _out(out.reshape(np.shape(x)))

    @property
    def mean(self) -> float:
        lm = log_quad(lambda y: math.log(y) + float(self.logpdf(y)) if y > 0 else -math.inf, 0.0,
                      breaks=self.base.breakpoints)
        return math.exp(lm) if lm < OVERFLOW_LOG else math.inf

    @property
    def gamma_hat(self) -> float:
        # a concave (sublinear) weight leaves the abscissa unchanged
        return self.base.gamma_hat

    @property
    def breakpoints(self):
        return self.base.breakpoints

    def params(self):
        w = self.weight.to_dict() if hasattr(self.weight, "to_dict") else repr(self.weight)
        return {"base": self.base.to_dict(), "weight": w, "log_norm": self.log_norm}


_FAMILIES = {
    "pareto": Pareto,
    "weibull": Weibull,
    "lognormal": Lognormal,
    "exponential": Exponential,
    "exp_polynomial": ExpPolynomial,
    "point_mass_mix": PointMassMix,
}


def distribution_from_dict(spec: dict[str, Any]) -> AnalyticDistribution:
    """Build a summand law from its JSON form, e.g. ``{"family": "pareto", "alpha": 1.5}``."""
    spec = dict(spec)
    family = spec.pop("family", None)
    if family == "size_biased":
        return SizeBiased(distribution_from_dict(spec["base"]))
    if family == "reweighted":
        from ..functions import function_from_dict

        return Reweighted(distribution_from_dict(spec["base"]), function_from_dict(spec["weight"]),
                          spec.get("log_norm", math.nan))
    cls = _FAMILIES.get(family)
    if cls is None:
        raise PreconditionError(f"unknown distribution family {family!r}")
    if cls is PointMassMix:
        return PointMassMix(tuple(spec.pop("values")), tuple(spec.pop("probs")), **spec)
    try:
        return cls(**spec)
    except TypeError as exc:
        raise PreconditionError(f"bad parameters for {family}: {exc}") from None
