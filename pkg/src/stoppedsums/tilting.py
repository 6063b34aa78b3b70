"""Exponential change of measure for the summands and the counting variable.

Tilting ``F`` by ``gamma`` gives ``G(du) = e^{gamma u} F(du) / phi(gamma)``;
tilting ``tau`` by ``phi`` gives ``P(nu = k) = phi^k P(tau = k) / E phi^tau``.
Under both tilts the law of the stopped sum transforms as
``E phi^tau * G^{*nu}(du) = e^{gamma u} F^{*tau}(du)``, which
``tilt_identity_check`` verifies point by point on a lattice.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from scipy import special

from ._numerics import TrendVerdict, log_tail_from_masses, quartile_trend, safe_log, write_csv_rows
from .compound import compound, convolve
from .distributions.analytic import AnalyticDistribution, distribution_from_dict
from .distributions.counting import (
    Binomial,
    CountingDistribution,
    Deterministic,
    Explicit,
    Geometric,
    Poisson,
)
from .distributions.lattice import LatticeDistribution
from .errors import DivergentNormalizerError, PreconditionError, TruncatedRegionError
from .evidence import DIVERGENT, FINITE, series_evidence

# Relative size below which trailing tilted counting terms are dropped.
_TERM_FLOOR = 1e-18
_MAX_TERMS = 10_000_000
# Masses below this are excluded from relative discrepancies.
RELATIVE_FLOOR = 1e-280
LOG_TINY = math.log(1e-300)


def _source_of(F: LatticeDistribution) -> AnalyticDistribution | None:
    prov = F.provenance or {}
    spec = prov.get("distribution")
    if spec is None:
        return None
    try:
        return distribution_from_dict(spec)
    except Exception:  # provenance from an unknown family is informational only
        return None


def tilt_distribution(F: LatticeDistribution, gamma: float,
                      source: AnalyticDistribution | None = None) -> LatticeDistribution:
    """``e^{gamma x} F(dx)`` normalized over the represented lattice mass.

    Computed with a max shift in the log domain, so large ``gamma * x`` never
    overflows. The result carries no deficit: whatever ``F`` lost beyond its
    cutoff is not part of the tilted lattice.
    """
    gamma = float(gamma)
    warnings: list[str] = []
    src = source if source is not None else _source_of(F)
    if src is not None and gamma > 0 and src.laplace(gamma).infinite:
        warnings.append(f"analytic phi({gamma}) is infinite; the tilt exists only for the truncated lattice")
    if gamma == 0.0 and not F.is_truncated:
        return F
    with np.errstate(divide="ignore"):
        logm = safe_log(F.masses) + gamma * F.grid
    log_phi = float(special.logsumexp(logm))
    masses = np.exp(logm - log_phi)
    prov = {"tilted_from": F.provenance, "gamma": gamma, "log_phi_lattice": log_phi}
    if warnings:
        prov["warnings"] = warnings
    return LatticeDistribution(F.step, masses, log_tail_from_masses(masses, 0.0), F.origin, 0.0, prov)


def lattice_log_phi(F: LatticeDistribution, gamma: float) -> float:
    with np.errstate(divide="ignore"):
        return float(special.logsumexp(safe_log(F.masses) + gamma * F.grid))


@dataclass(frozen=True)
class TiltedCounting:
    nu: CountingDistribution
    log_normalizer: float

    @property
    def normalizer(self) -> float:
        return math.exp(self.log_normalizer)


def _tilt_counting_full(tau: CountingDistribution, phi: float) -> TiltedCounting:
    if not phi >= 1.0:
        raise PreconditionError(f"tilting a counting law needs phi >= 1, got {phi}")
    if phi == 1.0:
        return TiltedCounting(tau, 0.0)
    lp = math.log(phi)
    if isinstance(tau, Deterministic):
        return TiltedCounting(tau, tau.n * lp)
    if isinstance(tau, Geometric):
        qn = tau.q * phi
        if qn >= 1.0:
            raise DivergentNormalizerError(
                f"E phi^tau diverges for Geometric(q={tau.q}) at phi={phi}", failing_index=0)
        return TiltedCounting(Geometric(qn), math.log1p(-tau.q) - math.log1p(-qn))
    if isinstance(tau, Poisson):
        return TiltedCounting(Poisson(tau.lam * phi), tau.lam * (phi - 1.0))
    if isinstance(tau, Binomial):
        base = 1.0 - tau.p + tau.p * phi
        return TiltedCounting(Binomial(tau.trials, tau.p * phi / base), tau.trials * math.log(base))
    if isinstance(tau, Explicit):
        n = np.arange(len(tau.probs))
        with np.errstate(divide="ignore"):
            lt = safe_log(np.asarray(tau.probs)) + n * lp
        ln = float(special.logsumexp(lt))
        return TiltedCounting(Explicit(tuple(np.exp(lt - ln))), ln)

    def log_term(n):
        return np.asarray(tau.log_pmf(n), dtype=float) + n * lp

    ev = series_evidence(log_term, start=0, stop=tau.max_support, max_terms=_MAX_TERMS)
    if ev.status != FINITE:
        # the first block whose contribution stopped shrinking
        incs = np.array(ev.log_increments)
        grow = np.nonzero(np.diff(incs) >= math.log(0.9))[0]
        idx = int(ev.cutoffs[grow[0]]) if grow.size else int(ev.cutoffs[-1])
        kind = "diverges" if ev.status == DIVERGENT else "could not be shown finite"
        raise DivergentNormalizerError(
            f"E phi^tau {kind} for {tau.family} at phi={phi}; partial sums fail from n={idx}",
            failing_index=idx)
    top = int(ev.cutoffs[-1])
    n = np.arange(top + 1)
    lt = log_term(n)
    ln = float(special.logsumexp(lt))
    keep = np.nonzero(lt - ln > math.log(_TERM_FLOOR))[0]
    probs = np.exp(lt[: keep[-1] + 1] - ln)
    probs = probs / math.fsum(probs)
    return TiltedCounting(Explicit(tuple(probs)), ln)


def tilt_counting(tau: CountingDistribution, phi: float) -> CountingDistribution:
    """Law of ``nu`` with ``P(nu = k) proportional to phi^k P(tau = k)``."""
    return _tilt_counting_full(tau, phi).nu


@dataclass(frozen=True, eq=False)
class TiltPair:
    G: LatticeDistribution
    nu: CountingDistribution
    gamma_hat_used: float
    phi_at_gamma_hat: float
    normalizer: float
    warnings: tuple[str, ...] = ()

    @property
    def lam(self) -> float:
        return math.log(self.phi_at_gamma_hat)

    def to_dict(self) -> dict[str, Any]:
        return {
            "gamma_hat_used": self.gamma_hat_used,
            "phi_at_gamma_hat": self.phi_at_gamma_hat,
            "lambda": self.lam,
            "normalizer": self.normalizer,
            "nu": self.nu.to_dict(),
            "nu_mean": self.nu.mean,
            "warnings": list(self.warnings),
        }


def tilt_pair(F: AnalyticDistribution, tau: CountingDistribution, lattice: LatticeDistribution) -> TiltPair:
    """Tilt at the abscissa ``gamma_hat`` of ``F``.

    The abscissa and ``phi(gamma_hat)`` come from the analytic law, because
    any truncated lattice has an infinite abscissa. ``G`` is the tilted
    lattice and ``nu`` the counting law tilted by the analytic
    ``phi(gamma_hat)``.
    """
    gh = F.gamma_hat
    if not (0.0 < gh < math.inf):
        raise PreconditionError(f"tilting needs a finite positive abscissa, got gamma_hat={gh}")
    phi = F.phi_at_gamma_hat()
    if not math.isfinite(phi):
        raise PreconditionError("phi(gamma_hat) is infinite; the tilted counting law does not exist")
    tc = _tilt_counting_full(tau, phi)
    G = tilt_distribution(lattice, gh, F)
    warn = tuple((G.provenance or {}).get("warnings", ()))
    return TiltPair(G, tc.nu, gh, phi, tc.normalizer, warn)


@dataclass
class IdentityReport:
    gamma: float
    n_max: int
    per_n_max_abs: list[float]
    per_n_max_rel: list[float]
    mixture_max_abs: float
    mixture_max_rel: float
    tolerance: float
    notes: list[str] = field(default_factory=list)
    # grid, normalizer * G^{*nu} masses and e^{gamma x} F^{*tau} masses
    mixture_points: tuple[np.ndarray, np.ndarray, np.ndarray] | None = None

    @property
    def max_abs(self) -> float:
        return max([self.mixture_max_abs, *self.per_n_max_abs])

    @property
    def max_rel(self) -> float:
        return max([self.mixture_max_rel, *self.per_n_max_rel])

    @property
    def passed(self) -> bool:
        return self.max_rel <= self.tolerance

    def to_dict(self) -> dict[str, Any]:
        return {
            "gamma": self.gamma,
            "n_max": self.n_max,
            "per_n_max_abs": self.per_n_max_abs,
            "per_n_max_rel": self.per_n_max_rel,
            "mixture_max_abs": self.mixture_max_abs,
            "mixture_max_rel": self.mixture_max_rel,
            "max_abs": self.max_abs,
            "max_rel": self.max_rel,
            "tolerance": self.tolerance,
            "passed": self.passed,
            "notes": self.notes,
        }

    def write_csv(self, path) -> None:
        """Per-point mixture discrepancy; header only when the mixture was skipped."""
        points = zip(*self.mixture_points) if self.mixture_points is not None else ()
        write_csv_rows(path, "x,lhs,rhs,abs_diff", ((x, a, b, abs(a - b)) for x, a, b in points))


def _discrepancy(lhs: np.ndarray, rhs: np.ndarray) -> tuple[float, float]:
    m = min(lhs.size, rhs.size)
    lhs, rhs = _pad(lhs, m), _pad(rhs, m)
    diff = np.abs(lhs - rhs)
    ok = np.maximum(np.abs(lhs), np.abs(rhs)) > RELATIVE_FLOOR
    rel = float(np.max(diff[ok] / np.maximum(np.abs(lhs[ok]), np.abs(rhs[ok])))) if ok.any() else 0.0
    return float(diff.max()) if diff.size else 0.0, rel


def _pad(v: np.ndarray, m: int) -> np.ndarray:
    if v.size >= m:
        return v[:m]
    return np.concatenate([v, np.zeros(m - v.size)])


def _tilt_masses(masses: np.ndarray, grid: np.ndarray, gamma: float, log_scale: float) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.exp(safe_log(masses) + gamma * grid - log_scale)


def tilt_identity_check(F: LatticeDistribution, tau: CountingDistribution, gamma: float, n_max: int,
                        tolerance: float = 1e-12) -> IdentityReport:
    """Compare ``G^{*n}`` with ``e^{gamma u} F^{*n} / phi^n`` and the mixed version.

    ``phi`` is the lattice transform, which makes both identities exact on
    the represented grid. For a truncated ``F`` only the grid up to its
    cutoff is compared.
    """
    log_phi = lattice_log_phi(F, gamma)
    G = tilt_distribution(F, gamma)
    per_abs, per_rel = [], []
    Fn = LatticeDistribution.point_mass(0.0, F.step)
    Gn = Fn
    for n in range(1, n_max + 1):
        Fn = F if n == 1 else convolve(Fn, F)
        Gn = G if n == 1 else convolve(Gn, G)
        rhs = _tilt_masses(Fn.masses, Fn.grid, gamma, n * log_phi)
        a, r = _discrepancy(Gn.masses[: Fn.size], rhs)
        per_abs.append(a)
        per_rel.append(r)
    notes: list[str] = []
    tc = _tilt_counting_full(tau, math.exp(log_phi)) if log_phi >= 0 else None
    if tc is None:
        notes.append("lattice phi below 1; mixture identity skipped")
        mix_abs = mix_rel = 0.0
        points = None
    else:
        cf = compound(F, tau, n_max=n_max, threshold=1.0)
        cg = compound(G, tc.nu, n_max=n_max, threshold=1.0)
        lhs = tc.normalizer * cg.lattice.masses[: cf.lattice.size]
        rhs = _tilt_masses(cf.lattice.masses, cf.lattice.grid, gamma, 0.0)
        mix_abs, mix_rel = _discrepancy(lhs, rhs)
        m = min(lhs.size, rhs.size)
        points = (cf.lattice.grid[:m], _pad(lhs, m), _pad(rhs, m))
        if cf.truncation_error_bound > 0:
            notes.append(f"counting law truncated at n={n_max}; both sides use the same terms")
    return IdentityReport(gamma, n_max, per_abs, per_rel, mix_abs, mix_rel, tolerance, notes, points)


@dataclass(frozen=True, eq=False)
class DominationCurve:
    x: np.ndarray
    ratio: np.ndarray
    verdict: TrendVerdict
    clipped: int = 0
    notes: tuple[str, ...] = ()

    def to_dict(self) -> dict[str, Any]:
        return {"verdict": self.verdict.to_dict(), "clipped_points": self.clipped, "notes": list(self.notes),
                "n_points": int(self.x.size)}

    def write_csv(self, path) -> None:
        write_csv_rows(path, "x,ratio", zip(self.x, self.ratio))


def _log_tail_of(G, x: np.ndarray) -> np.ndarray:
    if isinstance(G, LatticeDistribution):
        out = np.full(x.shape, -np.inf)
        for i, xi in enumerate(x):
            try:
                out[i] = G.log_tail_at(float(xi))
            except TruncatedRegionError:
                out[i] = np.nan
        return out
    return np.asarray(G.log_tail(x), dtype=float)


def tail_ratio_curve(tau: CountingDistribution, c: float, denominator, x_grid,
                     factor: float = 1.0) -> DominationCurve:
    """``P(c tau > x) / D(x)`` on ``x_grid`` with the quartile trend verdict.

    Points where the denominator is below 1e-300, or where a truncated
    lattice cannot answer, are dropped and counted.
    """
    if not c > 0:
        raise PreconditionError("c must be positive")
    x = np.asarray(x_grid, dtype=float)
    log_den = _log_tail_of(denominator, x)
    ok = np.isfinite(log_den) & (log_den > LOG_TINY)
    notes = []
    clipped = int((~ok).sum())
    if clipped:
        notes.append(f"{clipped} grid points dropped where the denominator is below 1e-300 or unknown")
    x = x[ok]
    log_num = np.asarray(tau.log_tail(np.floor(x / c)), dtype=float)
    with np.errstate(invalid="ignore"):
        ratio = np.exp(log_num - log_den[ok])
    return DominationCurve(x, ratio, quartile_trend(ratio, factor), clipped, tuple(notes))


def check_cnu_domination(nu: CountingDistribution, c: float, G, x_grid, factor: float = 1.0) -> DominationCurve:
    """Finite-grid evidence for ``P(c nu > x) = o(G_bar(x))``."""
    return tail_ratio_curve(nu, c, G, x_grid, factor)


__all__ = [
    "DominationCurve",
    "IdentityReport",
    "TiltPair",
    "check_cnu_domination",
    "lattice_log_phi",
    "tail_ratio_curve",
    "tilt_counting",
    "tilt_distribution",
    "tilt_identity_check",
    "tilt_pair",
]
