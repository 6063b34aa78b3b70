"""Summand laws, counting laws and their lattice discretizations."""

from __future__ import annotations

from ..errors import ClassificationError, PreconditionError
from .analytic import (
    AnalyticDistribution,
    Exponential,
    ExpPolynomial,
    LaplaceReport,
    Lognormal,
    Pareto,
    PointMassMix,
    Reweighted,
    SizeBiased,
    Weibull,
    distribution_from_dict,
)
from .counting import (
    Binomial,
    CountingDistribution,
    Deterministic,
    Explicit,
    Geometric,
    Poisson,
    PowerCount,
    SizeBiasedCount,
    WeibullCount,
    counting_from_dict,
)
from .lattice import LatticeDistribution, discretize, lattice_from_points


def tail(d, x):
    """``P(X > x)`` for an analytic law, a lattice or a counting law."""
    return d.tail(x)


def laplace(d, gamma: float) -> LaplaceReport:
    return d.laplace(gamma)


def gamma_hat(d) -> float:
    """Abscissa of convergence of the Laplace transform (analytic laws only)."""
    if isinstance(d, LatticeDistribution):
        raise ClassificationError("classification-requires-analytic-form: lattices never self-classify")
    if not isinstance(d, AnalyticDistribution):
        raise ClassificationError("classification-requires-analytic-form")
    return d.gamma_hat


def size_bias(d):
    """Size-biased version of a summand or counting law."""
    if isinstance(d, (AnalyticDistribution, CountingDistribution)):
        return d.size_biased()
    raise PreconditionError(f"cannot size-bias {type(d).__name__}")


__all__ = [
    "AnalyticDistribution", "Binomial", "CountingDistribution", "Deterministic", "Explicit",
    "ExpPolynomial", "Exponential", "Geometric", "LaplaceReport", "LatticeDistribution", "Lognormal",
    "Pareto", "PointMassMix", "Poisson", "PowerCount", "Reweighted", "SizeBiased", "SizeBiasedCount",
    "Weibull", "WeibullCount", "counting_from_dict", "discretize", "distribution_from_dict",
    "gamma_hat", "lattice_from_points", "laplace", "size_bias", "tail",
]
