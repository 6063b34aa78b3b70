"""Ratio curves ``P(S_tau > x) / P(xi > x)`` and the predictions for their lower limit.

A lower limit cannot be observed at finite ``x``. ``ratio_curve`` reports the
running infimum over the last decades of the grid together with convergence
diagnostics, and the ``check_*`` functions return finite-grid verdicts for
the tail conditions the predictions rest on.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from scipy import special

from ._numerics import quartile_trend, write_csv_rows
from .compound import compound, convolve, panjer_compound, required_n_max
from .distributions.analytic import AnalyticDistribution
from .distributions.counting import CountingDistribution
from .distributions.lattice import LatticeDistribution, discretize
from .errors import NumericRangeError, PreconditionError
from .evidence import DIVERGENT, FINITE, INCONCLUSIVE, Evidence, moment_evidence
from .functions import Elementary, PiecewiseFunction
from .tilting import DominationCurve, tail_ratio_curve

UNVERIFIED = "unverified-hypotheses"
# Neglected counting mass may be at most this fraction of the smallest tail.
MAX_TRUNCATION_SHARE = 0.01


class Regime(str, enum.Enum):
    HEAVY = "HeavyTheorem1"
    LIGHT = "LightTheorem3"
    UNCLASSIFIED = "Unclassified"


@dataclass(frozen=True)
class Prediction:
    value: float
    regime: Regime
    flags: tuple[str, ...] = ()

    def to_dict(self) -> dict[str, Any]:
        return {"value": self.value, "regime": self.regime.value, "flags": list(self.flags)}


def _series_tau_phi(tau: CountingDistribution, phi: float) -> float:
    """``E[tau phi^(tau-1)]`` by direct summation in the log domain."""
    lp = math.log(phi)
    top = tau.max_support
    if top is not None:
        n = np.arange(1, top + 1)
        with np.errstate(divide="ignore"):
            terms = np.asarray(tau.log_pmf(n), dtype=float) + np.log(n) + (n - 1) * lp
        return float(np.exp(special.logsumexp(terms)))
    from .evidence import series_evidence

    ev = series_evidence(lambda n: np.asarray(tau.log_pmf(n), dtype=float)
                         + np.log(np.maximum(n, 1)) + (n - 1) * lp, start=1)
    if ev.status == DIVERGENT:
        return math.inf
    if ev.status != FINITE:
        raise NumericRangeError(f"E[tau phi^(tau-1)] could not be summed for phi={phi}")
    return math.exp(ev.log_partial_sums[-1])


def predicted_liminf(F: AnalyticDistribution, tau: CountingDistribution,
                     hypotheses_checked: bool = False) -> Prediction:
    """``E tau`` for heavy-tailed ``F``; ``E[tau phi(gamma_hat)^(tau-1)]`` otherwise."""
    flags = () if hypotheses_checked else (UNVERIFIED,)
    gh = F.gamma_hat
    if gh == 0.0:
        return Prediction(tau.mean, Regime.HEAVY, flags)
    phi = F.phi_at_gamma_hat()
    if math.isinf(phi):
        p_two = float(tau.tail(1))
        if p_two > 0:
            return Prediction(math.inf, Regime.LIGHT, flags + ("phi-infinite",))
        return Prediction(float(tau.pmf(1)), Regime.LIGHT, flags)
    return Prediction(_series_tau_phi(tau, phi), Regime.LIGHT, flags)


@dataclass(frozen=True)
class GridSpec:
    """Discretization and reporting window for a ratio curve.

    ``x_min``/``x_max`` bound the reported grid (default: first grid point
    above zero and the cutoff); the running infimum is taken over the last
    ``window_decades`` decades below ``x_max``. ``n_points`` thins the grid
    geometrically.
    """

    step: float
    cutoff: float
    x_min: float | None = None
    x_max: float | None = None
    window_decades: float = 1.0
    n_points: int | None = None
    n_max: int | None = None
    method: str = "auto"
    allow_heavy_truncation: bool = False


@dataclass(frozen=True, eq=False)
class RatioCurve:
    x: np.ndarray
    ratio: np.ndarray
    running_inf: np.ndarray
    predicted: float
    regime: Regime
    floor: np.ndarray
    window_start: float
    diagnostics: dict[str, Any] = field(default_factory=dict)
    compound_meta: dict[str, Any] = field(default_factory=dict)

    @property
    def liminf_estimate(self) -> float:
        w = self.running_inf[np.isfinite(self.running_inf)]
        return float(w[-1]) if w.size else math.nan

    @property
    def end_value(self) -> float:
        return float(self.ratio[-1]) if self.ratio.size else math.nan

    @property
    def above_floor(self) -> bool:
        ok = np.isfinite(self.ratio) & np.isfinite(self.floor)
        return bool(np.all(self.ratio[ok] >= self.floor[ok] * (1.0 - 1e-12)))

    def to_dict(self) -> dict[str, Any]:
        return {
            "predicted": self.predicted,
            "regime": self.regime.value,
            "liminf_estimate": self.liminf_estimate,
            "end_value": self.end_value,
            "window_start": self.window_start,
            "n_points": int(self.x.size),
            "above_union_floor": self.above_floor,
            "diagnostics": self.diagnostics,
            "compound": self.compound_meta,
        }

    def write_csv(self, path) -> None:
        write_csv_rows(path, "x,ratio,running_inf,predicted",
                       ((x, r, m, self.predicted) for x, r, m in zip(self.x, self.ratio, self.running_inf)))


def _report_grid(lat: LatticeDistribution, spec: GridSpec) -> np.ndarray:
    idx = np.arange(1, lat.size)
    x = lat.grid[idx]
    lo = spec.x_min if spec.x_min is not None else x[0]
    hi = min(spec.x_max if spec.x_max is not None else lat.end, lat.end)
    x = x[(x >= lo - 1e-12) & (x <= hi + 1e-12)]
    if spec.n_points is not None and x.size > spec.n_points:
        x = x[_geometric_indices(x.size, spec.n_points)]
    return x


def _geometric_indices(size: int, k: int) -> np.ndarray:
    """``k`` distinct indices below ``size``, geometrically spaced once spacing exceeds one."""
    target = np.geomspace(1, size, k) - 1
    pick = np.empty(k, dtype=int)
    prev = -1
    for i, t in enumerate(target):
        prev = min(max(prev + 1, int(round(t))), size - (k - i))
        pick[i] = prev
    return pick


def _union_floor(weights: np.ndarray, tail: np.ndarray) -> np.ndarray:
    """``sum_n p_n (1 - (1 - t)^n) / t``, the union-bound floor of the ratio."""
    n = np.arange(weights.size)[:, None]
    t = tail[None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        part = -np.expm1(n * np.log1p(-t))
        return np.sum(weights[:, None] * part, axis=0) / tail


def ratio_curve(F: AnalyticDistribution, tau: CountingDistribution, spec: GridSpec,
                prediction: Prediction | None = None) -> RatioCurve:
    lat = discretize(F, spec.step, spec.cutoff, spec.allow_heavy_truncation)
    x = _report_grid(lat, spec)
    if x.size == 0:
        raise PreconditionError("the reporting window contains no grid points")
    log_den = np.asarray(F.log_tail(x), dtype=float)
    min_tail = float(np.exp(log_den.min()))
    method = spec.method
    if method == "auto":
        method = "panjer" if tau.panjer_ab is not None else "direct"
    if method == "panjer":
        res = panjer_compound(lat, tau)
        neglected = 0.0
    else:
        n_max = spec.n_max if spec.n_max is not None else required_n_max(tau, 1e-3 * min_tail)
        neglected = float(tau.tail(n_max))
        if neglected > MAX_TRUNCATION_SHARE * min_tail:
            need = required_n_max(tau, 1e-3 * min_tail)
            raise NumericRangeError(
                f"neglected counting mass {neglected:.3g} exceeds 1% of the smallest tail {min_tail:.3g}; "
                f"use n_max >= {need}")
        res = compound(lat, tau, n_max=n_max, threshold=max(neglected, 1e-300), method=method)
    log_num = np.asarray(res.lattice.log_tail_at(x), dtype=float)
    with np.errstate(invalid="ignore"):
        ratio = np.exp(log_num - log_den)
    ratio = np.where(np.isneginf(log_den), np.nan, ratio)

    x_end = x[-1]
    window_start = x_end / 10.0**spec.window_decades
    in_win = x >= window_start
    running = np.full(x.shape, np.nan)
    if in_win.any():
        running[in_win] = np.fmin.accumulate(ratio[in_win])

    weights = res.per_n_weights
    floor = _union_floor(weights, np.exp(log_den))

    pred = prediction if prediction is not None else predicted_liminf(F, tau)
    diagnostics = _convergence(x[in_win], ratio[in_win], pred.value)
    diagnostics["neglected_counting_mass"] = neglected
    diagnostics["prediction_flags"] = list(pred.flags)
    return RatioCurve(x, ratio, running, pred.value, pred.regime, floor, float(window_start), diagnostics,
                      res.metadata())


def _convergence(x: np.ndarray, ratio: np.ndarray, predicted: float) -> dict[str, Any]:
    """Trend of the gap to the prediction and the slope of the ratio in ``log x``."""
    out: dict[str, Any] = {}
    ok = np.isfinite(ratio)
    x, ratio = x[ok], ratio[ok]
    if x.size < 4:
        out["trend_positive"] = False
        out["note"] = "too few points in the window"
        return out
    lx = np.log(x)
    out["ratio_slope_logx"] = float(np.polyfit(lx, ratio, 1)[0])
    if math.isfinite(predicted):
        gap = np.abs(ratio - predicted)
        verdict = quartile_trend(gap)
        out["gap_trend"] = verdict.to_dict()
        out["trend_positive"] = verdict.positive
        out["end_gap"] = float(gap[-1])
        out["relative_end_gap"] = float(gap[-1] / predicted)
        pos = gap > 0
        if pos.sum() >= 2:
            out["gap_slope_loglog"] = float(np.polyfit(lx[pos], np.log(gap[pos]), 1)[0])
    else:
        out["trend_positive"] = bool(out["ratio_slope_logx"] > 0)
    return out


def check_G_o_F(F: AnalyticDistribution, tau: CountingDistribution, c: float, x_grid,
                factor: float = 1.0) -> DominationCurve:
    """Finite-grid evidence for ``P(c tau > x) = o(F_bar(x))``; ``c`` must exceed ``E xi``."""
    m = F.mean
    if not c > m:
        raise PreconditionError(
            f"the heavy-tailed lower-limit theorem asks for the tail condition for some c > E xi; "
            f"got c={c} <= E xi={m}")
    return tail_ratio_curve(tau, c, F, x_grid, factor)


@dataclass
class TailRatioReport:
    gamma_hat: float
    per_y: list[dict[str, Any]]
    tolerance: float

    @property
    def passed(self) -> bool:
        return all(r["passed"] for r in self.per_y)

    @property
    def failures(self) -> list[float]:
        return [r["y"] for r in self.per_y if not r["passed"]]

    def to_dict(self) -> dict[str, Any]:
        return {"gamma_hat": self.gamma_hat, "tolerance": self.tolerance, "passed": self.passed,
                "failures": self.failures, "per_y": self.per_y}


def check_tail_ratio_lower(F: AnalyticDistribution, y_values, x_grid, tol: float = 1e-9) -> TailRatioReport:
    """``min_x F_bar(x - y) / F_bar(x)`` against ``exp(gamma_hat * y)`` for each ``y``."""
    gh = F.gamma_hat
    if not gh > 0:
        raise PreconditionError("the light-tailed condition needs gamma_hat > 0")
    x = np.asarray(x_grid, dtype=float)
    lt_x = np.asarray(F.log_tail(x), dtype=float)
    ok = np.isfinite(lt_x)
    rows = []
    for y in np.atleast_1d(np.asarray(y_values, dtype=float)):
        lr = np.asarray(F.log_tail(x[ok] - y), dtype=float) - lt_x[ok]
        min_log = float(lr.min()) if lr.size else math.nan
        target = gh * y if math.isfinite(gh) else (math.inf if y > 0 else 0.0)
        passed = bool(min_log >= target + math.log1p(-tol)) if math.isfinite(target) else False
        rows.append({"y": float(y), "min_ratio": math.exp(min_log), "bound": math.exp(target),
                     "passed": passed})
    return TailRatioReport(gh, rows, tol)


def is_concave_function(r, grid=None) -> bool:
    if isinstance(r, PiecewiseFunction):
        flags = r.check_shape(grid)
        return r.shape in ("concave", "linear") and all(flags.values()) and (
            r.shape == "concave" or np.all(np.diff(r.eps * r.slopes) <= 1e-12))
    if isinstance(r, Elementary):
        return r.is_concave
    xs = np.linspace(0.0, 100.0, 2001) if grid is None else np.asarray(grid, dtype=float)
    y = np.asarray(r(xs), dtype=float)
    return bool(np.all(np.diff(y, 2) <= 1e-9 * (1 + np.abs(y[1:-1]))))


@dataclass
class PropositionReport:
    status: str
    premises: dict[str, dict[str, Any]]
    extras: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {"status": self.status, "premises": self.premises, "extras": self.extras}


def _lattice_log_expect(lat: LatticeDistribution, fn) -> float:
    with np.errstate(divide="ignore", invalid="ignore"):
        vals = np.asarray(fn(lat.grid), dtype=float) + np.log(lat.masses)
    vals = vals[~np.isnan(vals)]
    return float(special.logsumexp(vals)) if vals.size else -math.inf


def stopped_moment_terms(F: AnalyticDistribution, tau: CountingDistribution, r, step: float, cutoff: float,
                         n_top: int) -> np.ndarray:
    """``log(P(tau = n) n E exp(r(S_{n-1})))`` for ``n = 1..n_top`` from lattice powers."""
    lat = discretize(F, step, cutoff, allow_heavy_truncation=True)
    terms = np.full(n_top, -np.inf)
    cur = LatticeDistribution.point_mass(0.0, step)
    for n in range(1, n_top + 1):
        if n > 1:
            cur = convolve(cur, lat)
        lp = float(tau.log_pmf(n))
        if lp == -math.inf:
            continue
        terms[n - 1] = lp + math.log(n) + _lattice_log_expect(cur, r)
    return terms


def _premise(ev: Evidence, want: str) -> dict[str, Any]:
    holds = ev.status == want
    fails = ev.status not in (want, INCONCLUSIVE)
    return {"status": "holds" if holds else "fails" if fails else INCONCLUSIVE, "evidence": ev.to_dict()}


def proposition_hypotheses_check(F: AnalyticDistribution, tau: CountingDistribution, r, c: float,
                                 step: float = 0.5, cutoff: float | None = None,
                                 n_top: int | None = None) -> PropositionReport:
    """Premises of the concave-weight criterion for the lower limit ``E tau``.

    1. ``E exp(r(xi)) < inf``; 2. ``E xi exp(r(xi)) = inf``;
    3. ``E tau exp(r(S_{tau-1})) < inf``. Premise 3 uses lattice powers of a
    truncated upper-grid ``F``: grid placement pushes the sums up and the
    truncation drops far-tail mass, so the partial sums carry a
    discretization bias in both directions. It only counts as holding when
    the terms visibly die out before ``n_top``.
    """
    if not is_concave_function(r):
        raise PreconditionError("the weight r must be concave")
    if not F.is_heavy_tailed:
        return PropositionReport("not applicable", {}, {"reason": "F is light-tailed"})

    def lr(x):
        return float(r(x))

    def lxr(x):
        return math.log(x) + float(r(x)) if x > 0 else -math.inf

    p1 = _premise(moment_evidence(F, lr), FINITE)
    p2 = _premise(moment_evidence(F, lxr), DIVERGENT)

    if cutoff is None:
        cutoff = 1e3
    if n_top is None:
        n_top = min(400, max(2, required_n_max(tau, 1e-12)))
    terms = stopped_moment_terms(F, tau, r, step, cutoff, n_top)
    total = float(special.logsumexp(terms))
    last = terms[-max(1, n_top // 4):]
    tail_share = float(special.logsumexp(last)) - total if np.isfinite(total) else 0.0
    if tau.max_support is not None and tau.max_support <= n_top:
        st3 = "holds"
    elif tail_share < math.log(1e-6):
        st3 = "holds"
    elif np.all(np.diff(terms[np.isfinite(terms)][-5:]) >= 0):
        st3 = "fails"
    else:
        st3 = INCONCLUSIVE
    p3 = {"status": st3, "partial_sum": math.exp(min(total, 709.0)), "log_partial_sum": total,
          "n_top": n_top, "last_quarter_log_share": tail_share, "lattice_cutoff": cutoff,
          "note": "partial sums are biased by discretization (upper grid, truncated tail)"}

    n = np.arange(1, n_top + 1)
    with np.errstate(divide="ignore"):
        cr = np.asarray(tau.log_pmf(n), dtype=float) + np.log(n) + np.asarray(r(c * n), dtype=float)
    extras = {"E_tau_exp_r_c_tau_partial": float(np.exp(min(special.logsumexp(cr), 709.0))), "c": c}

    premises = {"E_exp_r_finite": p1, "E_xi_exp_r_infinite": p2, "E_tau_exp_r_S_finite": p3}
    states = [p["status"] for p in premises.values()]
    if all(s == "holds" for s in states):
        status = "applicable"
    elif any(s == "fails" for s in states):
        status = "not applicable"
    else:
        status = INCONCLUSIVE
    return PropositionReport(status, premises, extras)


__all__ = [
    "GridSpec",
    "Prediction",
    "PropositionReport",
    "RatioCurve",
    "Regime",
    "TailRatioReport",
    "check_G_o_F",
    "check_tail_ratio_lower",
    "predicted_liminf",
    "proposition_hypotheses_check",
    "ratio_curve",
]
