"""Executable versions of the existence arguments behind the lower-limit results.

Each builder picks knots by doubling searches and per-interval parameters by
bisection, then re-derives the defining interval equations from the finished
function with an independent quadrature and records them in a
``ConstructionCertificate``. Infinite conclusions are certified the way the
arguments themselves establish them: every stage contributes at least a
fixed amount.
"""

from __future__ import annotations

import bisect
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Any, Callable

import mpmath
import numpy as np
from scipy import integrate, optimize, special

from ._numerics import log_quad, quartile_trend
from .compound import convolve
from .distributions.analytic import AnalyticDistribution, Reweighted
from .distributions.counting import CountingDistribution
from .distributions.lattice import LatticeDistribution, discretize
from .errors import NumericRangeError, PreconditionError
from .evidence import DIVERGENT, FINITE, moment_evidence, series_evidence
from .functions import (
    Composition,
    Elementary,
    PiecewiseFunction,
    RealFunction,
    SmoothedFunction,
    SumFunction,
)
from .limits import check_G_o_F

RESIDUAL_TOL = 1e-9
# Doublings allowed when searching for the next knot.
KNOT_BUDGET = 200
X_LIMIT = 1e300


@dataclass
class ConstructionCertificate:
    per_interval_residuals: list[float]
    invariant_flags: dict[str, bool]
    divergence_evidence: dict[str, Any]
    finiteness_evidence: dict[str, Any]
    tolerance: float = RESIDUAL_TOL
    partial: bool = False
    notes: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        res_ok = all(r <= self.tolerance for r in self.per_interval_residuals)
        return res_ok and all(self.invariant_flags.values()) and not self.partial

    @property
    def max_residual(self) -> float:
        return max(self.per_interval_residuals, default=0.0)

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["passed"] = self.passed
        return json.loads(json.dumps(d, default=_json_default))

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> ConstructionCertificate:
        d = {k: v for k, v in d.items() if k != "passed"}
        return cls(**d)


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.bool_):
        return bool(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not serializable: {type(o)}")


def _is_concave(f) -> bool:
    if isinstance(f, Elementary):
        return f.is_concave
    if isinstance(f, PiecewiseFunction):
        return f.shape in ("concave", "linear") and f.check_shape().get("slopes_monotone", True)
    xs = np.concatenate([np.linspace(0, 10, 201), np.geomspace(10, 1e8, 200)[1:]])
    y = np.asarray(f(xs), dtype=float)
    s = np.diff(y) / np.diff(xs)
    return bool(np.all(np.diff(s) <= 1e-9 * (1 + np.abs(s[1:]))))


def _nondecreasing(f, hi: float = 1e12) -> bool:
    xs = np.concatenate([np.linspace(0, 10, 201), np.geomspace(10, hi, 300)[1:]])
    y = np.asarray(f(xs), dtype=float)
    return bool(np.all(np.diff(y) >= -1e-12 * (1 + np.abs(y[1:]))))


def _require_unbounded(g, level: float) -> None:
    """``g -> inf`` checked on the numeric range: it must pass ``level`` and keep growing."""
    far = np.geomspace(1e3, X_LIMIT, 60)
    y = np.asarray(g(far), dtype=float)
    if not (np.all(np.diff(y) >= -1e-12) and y[-1] > y[len(y) // 2] and y[-1] >= level):
        raise PreconditionError("g must increase to infinity; it stays bounded on the numeric range")


def _knot_search(start: float, ok: Callable[[float], bool], base: float = 0.0) -> float:
    """First ``base + start * 2^j`` accepted by ``ok``."""
    d = start
    for _ in range(KNOT_BUDGET):
        if ok(base + d):
            return base + d
        d *= 2.0
        if base + d > X_LIMIT:
            break
    raise NumericRangeError(f"no admissible knot found below {X_LIMIT:g}")


# Concave witness with finite exponential moment and divergent weighted moment.


def _min_piece_kink(f, a: float, s: float, hi: float) -> float | None:
    """Point in ``(a, hi)`` where ``s (x - a)`` and ``f(x) - f(a)`` cross, if any."""
    if not math.isfinite(s):
        return None
    fa = float(f(a))

    def d(x):
        return s * (x - a) - (float(f(x)) - fa)

    lo = a + 1e-12 * max(1.0, a)
    if d(lo) > 0 or d(hi) <= 0:
        return None
    return optimize.brentq(d, lo, hi, xtol=1e-13 * max(1.0, hi), maxiter=200)


def _log_delta(F: AnalyticDistribution, f, a: float, x: float, v: float, s: float, eps: float) -> float:
    """``log(E{e^{h_eps(xi)}; a < xi <= x} + e^{h_eps(x)} F_bar(x))`` for the trial piece."""
    fa = float(f(a))

    def m(y):
        lin = s * (y - a) if math.isfinite(s) else math.inf
        return min(lin, float(f(y)) - fa)

    kink = _min_piece_kink(f, a, s, x)
    breaks = tuple(b for b in (*F.breakpoints, kink) if b is not None and a < b < x)
    li = log_quad(lambda y: eps * m(y) + float(F.logpdf(y)), a, x, breaks=breaks)
    lt = eps * m(x) + float(F.log_tail(x))
    return v + float(np.logaddexp(li, lt))


def _left_slope(f, a: float, s: float, eps: float, x: float) -> float:
    lin = s * (x - a) if math.isfinite(s) else math.inf
    b = float(f(x)) - float(f(a))
    df = float(f.derivative(x, "left"))
    if math.isclose(lin, b, rel_tol=1e-12, abs_tol=1e-15):
        return eps * max(s, df)
    return eps * (s if lin < b else df)


def _window_average_mp(p: PiecewiseFunction, x: float, w: float):
    """``int_x^{x+w} p / w`` by extended-precision quadrature of the piece formulas.

    Serves as an oracle at knots so large that ``x + w`` is not resolvable
    in double precision.
    """
    with mpmath.workdps(60):
        kn = [mpmath.mpf(float(k)) for k in p.knots]
        lo, hi = mpmath.mpf(float(x)), mpmath.mpf(float(x)) + w

        def val(y):
            i = max(0, bisect.bisect_right(kn, y) - 1)
            return mpmath.mpf(float(p.values[i])) + float(p.eps[i] * p.slopes[i]) * (y - kn[i])

        pts = [lo] + [k for k in kn if lo < k < hi] + [hi]
        return mpmath.quad(val, pts) / w


def _quad_expect(F: AnalyticDistribution, fn, a: float, b: float, breaks=()) -> float:
    """``E{e^{fn(xi)}; a < xi <= b}`` by plain adaptive quadrature (independent oracle)."""
    pts = {p for p in (*F.breakpoints, *breaks) if a < p < b}
    if b > 16.0 * max(a, 1.0):
        # geometric cuts keep each piece within a factor of 4
        pts.update(np.geomspace(max(a, 1.0), b, int(math.log(b / max(a, 1.0)) / math.log(4.0)) + 2)[1:-1])
    edges = [a, *sorted(p for p in pts if a < p < b), b]
    total = 0.0
    for lo, hi in zip(edges[:-1], edges[1:]):
        val, _ = integrate.quad(lambda y: math.exp(float(fn(y)) + float(F.logpdf(y))), lo, hi,
                                epsabs=0.0, epsrel=1e-12, limit=500)
        total += val
    return total


def build_h_moments_ext(F: AnalyticDistribution, f, g, n_stages: int,
                        tol: float = RESIDUAL_TOL, margin: str = "stage") -> tuple[PiecewiseFunction,
                                                                                   ConstructionCertificate]:
    """Concave ``h <= f`` with ``E e^{h(xi)} < inf`` and ``E e^{h(xi)+g(xi)} = inf``.

    On ``(x_{n-1}, x_n]`` the function is
    ``h(x_{n-1}) + eps_n min(h'(x_{n-1}) (x - x_{n-1}), f(x) - f(x_{n-1}))``;
    ``x_n`` is found by doubling until ``e^{g} >= 2^n`` there and the full
    piece (``eps = 1``) overshoots the target, then ``eps_n`` is bisected so
    that
    ``E{e^h; (x_{n-1}, x_n]} + e^{h(x_n)} F_bar(x_n) = e^{h(x_{n-1})} F_bar(x_{n-1}) + 2^-n``.

    ``margin="stage"`` asks the overshoot to exceed the target by ``2^-n``;
    ``margin="unit"`` asks for 1, which can push the knots out very fast.
    """
    if F.gamma_hat != 0.0:
        raise PreconditionError("the summand law must be heavy-tailed")
    if n_stages < 0:
        raise PreconditionError("n_stages must be nonnegative")
    if not _is_concave(f):
        raise PreconditionError("f must be concave")
    if not _nondecreasing(f):
        raise PreconditionError("f must be nondecreasing for the piecewise construction")
    _require_unbounded(g, (n_stages + 1) * math.log(2.0))
    ev_f = moment_evidence(F, lambda y: float(f(y)))
    if ev_f.status != DIVERGENT:
        raise PreconditionError(f"E exp(f(xi)) must diverge; evidence is {ev_f.status}")

    f0 = float(f(0.0))
    s0 = float(f.derivative(0.0, "right"))
    knots = [0.0]
    values = [f0]
    slopes = [s0]
    eps_list: list[float] = []
    notes: list[str] = []
    a, v, s = 0.0, f0, s0
    for n in range(1, n_stages + 1):
        target_extra = 2.0**-n
        base_log = v + float(F.log_tail(a))
        log_target = float(np.logaddexp(base_log, math.log(target_extra)))
        extra = target_extra if margin == "stage" else 1.0
        log_need = float(np.logaddexp(base_log, math.log(target_extra + extra)))

        def admissible(x, a=a, v=v, s=s, n=n, log_need=log_need):
            if float(g(x)) < n * math.log(2.0):
                return False
            return _log_delta(F, f, a, x, v, s, 1.0) > log_need

        x_n = _knot_search(max(2.0 * a, 1.0), admissible)

        def resid(e, a=a, x_n=x_n, v=v, s=s, log_target=log_target):
            return _log_delta(F, f, a, x_n, v, s, e) - log_target

        lo = 1e-300
        if resid(lo) >= 0:
            raise NumericRangeError(f"stage {n}: the interval equation has no root in (0, 1]")
        eps = optimize.brentq(resid, lo, 1.0, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
        eps_list.append(eps)
        lin = s * (x_n - a) if math.isfinite(s) else math.inf
        v_next = v + eps * min(lin, float(f(x_n)) - float(f(a)))
        s_next = _left_slope(f, a, s, eps, x_n)
        knots.append(x_n)
        values.append(v_next)
        slopes.append(s_next)
        a, v, s = x_n, v_next, s_next

    if n_stages == 0:
        eps_arr = np.array([1.0])
    else:
        # the piece beyond the last knot continues with the last eps
        eps_arr = np.array([*eps_list, eps_list[-1]])
    h = PiecewiseFunction(np.array(knots), np.array(values), np.array(slopes), "concave", eps_arr, f,
                          {"stage_eps": eps_list, "stages": n_stages})
    cert = _certify_moments_ext(F, f, g, h, n_stages, tol)
    cert.notes.extend(notes)
    return h, cert


def _certify_moments_ext(F, f, g, h: PiecewiseFunction, n_stages: int, tol: float) -> ConstructionCertificate:
    x = h.knots
    residuals = []
    lhs_sum = 0.0
    for n in range(1, n_stages + 1):
        lo, hi = x[n - 1], x[n]
        kink = _min_piece_kink(f, lo, h.slopes[n - 1], hi)
        interval = _quad_expect(F, h, lo, hi, () if kink is None else (kink,))
        lhs = interval + math.exp(float(h(hi)) + float(F.log_tail(hi)))
        rhs = math.exp(float(h(lo)) + float(F.log_tail(lo))) + 2.0**-n
        residuals.append(abs(lhs - rhs))
        lhs_sum += interval

    # witnesses E{e^{h+g}; xi > x_n} >= 1/2 from the next stage
    witnesses = []
    hg = SumFunction((h, g))
    for n in range(1, n_stages):
        lo, hi = x[n], x[n + 1]
        part = _quad_expect(F, hg, lo, hi)
        lower = part + math.exp(float(hg(hi)) + float(F.log_tail(hi)))
        witnesses.append(lower)

    grid = np.unique(np.concatenate([np.linspace(0, x[-1], 2001),
                                     np.geomspace(max(x[-1], 1.0), 1e3 * max(x[-1], 1.0), 200)]))
    hv = np.asarray(h(grid))
    fv = np.asarray(f(grid))
    shape = h.check_shape(grid)
    flags = {
        "eps_in_unit_interval": bool(np.all((h.eps > 0) & (h.eps <= 1))),
        "h_le_f": bool(np.all(hv <= fv + 1e-12 * (1 + np.abs(fv)))),
        "slopes_nonincreasing": shape.get("slopes_monotone", True),
        "continuous": shape["continuous"],
        "knots_increasing": bool(np.all(np.diff(x) > 0)),
        "g_reaches_2^n_at_knots": bool(all(float(g(x[n])) >= n * math.log(2.0) - 1e-12
                                           for n in range(1, n_stages + 1))),
        "tail_witness_ge_half": bool(all(w >= 0.5 - tol for w in witnesses)),
    }
    bound = math.exp(float(h(0.0))) * float(F.tail(0.0)) + 1.0
    flags["telescoping_bound"] = bool(lhs_sum <= bound + n_stages * tol)
    return ConstructionCertificate(
        residuals, flags,
        {"tail_witnesses": witnesses, "floor": 0.5, "stages_certified": len(witnesses)},
        {"partial_expectation": lhs_sum, "bound": bound, "upto": float(x[-1])},
        tol,
    )


def build_h_weighted(F: AnalyticDistribution, f1, f2, g, n_stages: int,
                     tol: float = RESIDUAL_TOL) -> tuple[PiecewiseFunction, ConstructionCertificate]:
    """Same construction under the law reweighted by ``e^{f1} / E e^{f1(xi)}``.

    The result ``h <= f2`` has ``E e^{f1+h} < inf`` and ``E e^{f1+h+g} = inf``.
    A constant ``f1`` leaves the law unchanged and the call reduces exactly to
    ``build_h_moments_ext``.
    """
    if isinstance(f1, Elementary) and f1.kind == "const":
        return build_h_moments_ext(F, f2, g, n_stages, tol)
    ev1 = moment_evidence(F, lambda y: float(f1(y)))
    if ev1.status != FINITE:
        raise PreconditionError(f"E exp(f1(xi)) must be finite; evidence is {ev1.status}")
    ev12 = moment_evidence(F, lambda y: float(f1(y)) + float(f2(y)))
    if ev12.status != DIVERGENT:
        raise PreconditionError(f"E exp(f1(xi) + f2(xi)) must diverge; evidence is {ev12.status}")
    P = Reweighted(F, f1)
    h, cert = build_h_moments_ext(P, f2, g, n_stages, tol)
    norm = math.exp(P.log_norm)
    # translate the witnesses back to the original law
    cert.divergence_evidence = {
        **cert.divergence_evidence,
        "scale": norm,
        "weighted_tail_witnesses": [norm * w for w in cert.divergence_evidence["tail_witnesses"]],
        "note": "E{e^{f1+h+g}; xi > x_n} = E e^{f1} * E*{e^{h+g}; xi > x_n}",
    }
    cert.finiteness_evidence = {
        **cert.finiteness_evidence,
        "E_exp_f1": norm,
        "weighted_partial_expectation": norm * cert.finiteness_evidence["partial_expectation"],
    }
    cert.notes.append("built under the reweighted law")
    return h, cert


# Concave slowly growing function with a finite exponential moment.


def _quantile_above(dist, level_log: float, start: float) -> float:
    """Smallest ``x >= start`` (to relative precision) with ``log P(chi > x) <= level_log``."""
    lt = lambda x: float(dist.log_tail(x))  # noqa: E731
    if lt(start) <= level_log:
        return start
    hi = max(start * 2.0, start + 1.0)
    while lt(hi) > level_log:
        hi *= 2.0
        if hi > X_LIMIT:
            raise NumericRangeError("tail does not reach the requested level")
    lo = start
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if lt(mid) <= level_log:
            hi = mid
        else:
            lo = mid
        if hi - lo <= 1e-12 * hi:
            break
    return hi


@dataclass(frozen=True)
class _TailCallable:
    tail: Callable[[float], float]

    def log_tail(self, x):
        p = float(self.tail(float(x)))
        return math.log(p) if p > 0 else -math.inf


def build_g_finite_moment(chi, n_stages: int = 30, gap_growth: float = 1.01,
                          tol: float = RESIDUAL_TOL) -> tuple[SmoothedFunction, ConstructionCertificate]:
    """Concave ``g`` with ``g(0) = 0``, ``g' <= 1``, ``g -> inf`` and ``E e^{g(chi)} < inf``.

    ``chi`` is any law with ``log_tail`` or a plain ``x -> P(chi > x)``. Knots satisfy
    ``P(chi > x_n) <= e^-n`` with strictly growing gaps, the piecewise linear
    ``g1`` takes the value ``n/2`` at ``x_n``, and the returned ``g`` is its
    unit-window average. ``g1`` is kept in the certificate.
    """
    if not hasattr(chi, "log_tail"):
        chi = _TailCallable(chi)
    knots = [0.0, max(1.0, _quantile_above(chi, -1.0, 0.0))]
    notes: list[str] = []
    partial = False
    for n in range(2, n_stages + 1):
        gap = knots[-1] - knots[-2]
        floor_x = knots[-1] + gap * gap_growth
        try:
            q = _quantile_above(chi, -float(n), floor_x)
        except NumericRangeError:
            notes.append(f"tail does not reach e^-{n} within the numeric range; stopped at {n - 1} stages")
            partial = True
            break
        knots.append(max(q, floor_x))
    knots_a = np.array(knots)
    vals = 0.5 * np.arange(knots_a.size)
    g1 = PiecewiseFunction.linear(knots_a, vals, "concave", aux={"role": "g1"})
    g = SmoothedFunction(g1)

    # E e^{g1(chi)} <= sum_n e^{g1(x_{n+1})} P(chi > x_n) <= sum_n e^{(n+1)/2} e^{-n}
    lt = np.array([float(chi.log_tail(x)) for x in knots_a])
    n = np.arange(knots_a.size)
    bound_terms = np.exp((n + 1) / 2.0 - n)
    used = np.exp(np.minimum((n + 1) / 2.0 + lt, 700.0))
    widths = np.diff(knots_a)
    xs = np.unique(np.concatenate([np.linspace(0, knots_a[-1], 4001), knots_a[-1] * np.geomspace(1, 1e6, 100)]))
    gs = np.diff(np.asarray(g(xs))) / np.diff(xs)
    gv = np.asarray(g(xs))
    dg = np.asarray(g.derivative(xs))
    flags = {
        "tail_levels": bool(np.all(lt <= -n + 1e-12)),
        "gaps_strictly_increasing": bool(np.all(np.diff(widths) > 0)),
        "g1_values_half_n": bool(np.allclose(np.asarray(g1(knots_a)), vals, rtol=0, atol=0)),
        "g_at_zero": bool(abs(float(g(0.0))) <= 1e-15),
        "g_nonnegative": bool(np.all(gv >= -1e-12)),
        "slope_at_most_one": bool(np.all(dg <= 1.0 + 1e-12) and np.all(g1.slopes <= 1.0)),
        "g1_concave": bool(np.all(np.diff(g1.slopes) <= 0)),
        "g_concave_on_grid": bool(np.all(np.diff(gs) <= 1e-9 * (1 + np.abs(gs[1:])))),
        "g_increasing": bool(gv[-1] > gv[len(gv) // 2]),
    }
    fin = {
        "series_terms": used.tolist(),
        "series_bound_terms": bound_terms.tolist(),
        "series_partial_sum": float(used.sum()),
        "bound_total": float(math.exp(0.5) / (1.0 - math.exp(-0.5))),
        "terms_within_bound": bool(np.all(used <= bound_terms * (1 + 1e-12))),
    }
    flags["finite_moment_bound"] = fin["terms_within_bound"]
    # per stage: knot value of g1, tail-level shortfall, and g at the knot
    # against a quadrature of the unit-window average of g1
    g_at = np.asarray(g(knots_a))
    base = _window_average_mp(g1, 0.0, g.window)
    residuals = []
    for k, x in enumerate(knots_a):
        oracle = float(_window_average_mp(g1, x, g.window) - base)
        residuals.append(max(abs(float(g1(x)) - vals[k]), max(0.0, lt[k] + k),
                             abs(g_at[k] - oracle) / max(1.0, abs(oracle))))
    cert = ConstructionCertificate(residuals, flags, {}, fin, tol, partial, notes)
    cert.finiteness_evidence["g1"] = g1.to_dict()
    return g, cert


def log_scale_transform(g: RealFunction) -> Composition:
    """``x -> g(ln(x + 1)) - 1``, the slowly varying companion of ``g``."""
    return Composition(g, Elementary("log1p"), -1.0)


# Sublinear concave minorant keeping a divergent exponential moment.


def _stage_log_integral(chi, a: float, b: float, v: float, s: float, f, fa_offset: float) -> float:
    """``log E{e^{v + min(s (chi - a), f(chi) - fa_offset)}; a < chi <= b}``."""

    def m(y):
        return min(s * (y - a), float(f(y)) - fa_offset)

    kink = _min_piece_kink(lambda y: float(f(y)) - fa_offset + float(f(a)), a, s, b) if s > 0 else None
    breaks = tuple(p for p in (*chi.breakpoints, kink) if p is not None and a < p < b)
    return v + log_quad(lambda y: m(y) + float(chi.logpdf(y)), a, b, breaks=breaks)


def flatten_to_sublinear(f, chi: AnalyticDistribution, n_stages: int,
                         tol: float = RESIDUAL_TOL) -> tuple[PiecewiseFunction, ConstructionCertificate]:
    """Concave ``f1 <= f`` with slopes damped stage by stage and ``E e^{f1(chi)} = inf``.

    ``f1 = min(x, f(x))`` up to ``x_1``; on ``(x_n, x_{n+1}]`` it is
    ``f1(x_n) + min(f1'(x_n) (x - x_n) / n, f(x) - f(x_n))`` with ``x_{n+1}``
    the first doubling at which the stage expectation reaches 1.
    """
    if n_stages < 1:
        raise PreconditionError("n_stages must be at least 1")
    if not _is_concave(f):
        raise PreconditionError("f must be concave")
    ev = moment_evidence(chi, lambda y: float(f(y)))
    if ev.status != DIVERGENT:
        raise PreconditionError(f"E exp(f(chi)) must diverge; evidence is {ev.status}")
    notes: list[str] = []
    partial = False

    # first piece: min(x, f(x)) = 0 + min(1 * (x - 0), f(x) - 0)
    x1 = _knot_search(1.0, lambda x: _stage_log_integral(chi, 0.0, x, 0.0, 1.0, f, 0.0) >= 0.0)
    knots, values, slopes, offsets = [0.0], [0.0], [1.0], [0.0]
    lin0 = x1
    v1 = min(lin0, float(f(x1)))
    knots.append(x1)
    values.append(v1)
    d1 = 1.0 if lin0 < float(f(x1)) else float(f.derivative(x1, "left"))
    prev_slope = d1
    stage_logs = [_stage_log_integral(chi, 0.0, x1, 0.0, 1.0, f, 0.0)]
    for n in range(1, n_stages):
        a, v = knots[-1], values[-1]
        s = prev_slope / n
        fa = float(f(a))
        try:
            b = _knot_search(2.0 * a, lambda x: _stage_log_integral(chi, a, x, v, s, f, fa) >= 0.0)
        except NumericRangeError:
            notes.append(f"stage {n + 1}: expectation did not reach 1 within the numeric range")
            partial = True
            break
        slopes.append(s)
        offsets.append(fa)
        stage_logs.append(_stage_log_integral(chi, a, b, v, s, f, fa))
        lin = s * (b - a)
        bb = float(f(b)) - fa
        values.append(v + min(lin, bb))
        knots.append(b)
        prev_slope = s if lin < bb else float(f.derivative(b, "left"))
    # continuation beyond the last knot with the next damped slope
    slopes.append(prev_slope / max(1, len(knots) - 1))
    offsets.append(float(f(knots[-1])))
    f1 = PiecewiseFunction(np.array(knots), np.array(values), np.array(slopes), "concave", None, f,
                           {"stages": len(knots) - 1}, np.array(offsets))

    # independent recomputation of the stage expectations from f1 itself
    contributions = []
    for i in range(len(knots) - 1):
        lo, hi = knots[i], knots[i + 1]
        val = _quad_expect(chi, f1, lo, hi)
        contributions.append(val)
    # the builder's log-domain stage integrals against the quadrature recomputation
    residuals = [abs(math.exp(sl) - cv) / max(1.0, cv) for sl, cv in zip(stage_logs, contributions)]
    xs = np.unique(np.concatenate([np.linspace(0, knots[-1], 4001), knots[-1] * np.geomspace(1, 1e4, 200)]))
    fv, f1v = np.asarray(f(xs)), np.asarray(f1(xs))
    left, right = f1.knot_slopes()
    damping = []
    for n in range(1, len(knots) - 1):
        # slope entering stage n+1 is at most the slope at x_n divided by n
        damping.append(bool(f1.slopes[n + 1] <= left[n - 1] / n * (1 + 1e-12) + 1e-300)
                       if n + 1 < len(f1.slopes) else True)
    ratios = f1v[xs > 1] / xs[xs > 1]
    flags = {
        "stage_contributions_ge_1": bool(all(c >= 1.0 - tol for c in contributions)),
        "f1_le_f": bool(np.all(f1v <= fv + 1e-12 * (1 + np.abs(fv)))),
        "slopes_damped": bool(all(damping)),
        "concave": bool(np.all(right <= left + 1e-12)),
        "continuous": f1.check_shape()["continuous"],
    }
    if len(knots) >= 4:
        flags["sublinear_trend"] = quartile_trend(ratios).positive
    else:
        notes.append("too few stages for a sublinearity trend; only the initial min(x, f(x)) piece is built")
    cert = ConstructionCertificate(
        residuals, flags,
        {"stage_contributions": contributions, "floor": 1.0, "stages_certified": len(contributions),
         "log_stage_integrals": stage_logs},
        {}, tol, partial, notes)
    return f1, cert


# Convex inverse witness for the heavy-tailed lower-limit result.


class _StepTail:
    """``log P(c tau_* > y)`` as a step function with a growing cache of step values."""

    def __init__(self, tau_star: CountingDistribution, c: float):
        self.tau = tau_star
        self.c = c
        self._log_t = np.asarray(tau_star.log_tail(np.arange(1024)), dtype=float)

    def steps(self, k_max: int) -> np.ndarray:
        if k_max >= self._log_t.size:
            size = max(2 * self._log_t.size, k_max + 1)
            self._log_t = np.asarray(self.tau.log_tail(np.arange(size)), dtype=float)
        return self._log_t[: k_max + 1]

    def __call__(self, y):
        y = np.asarray(y, dtype=float)
        k = np.floor(np.maximum(y, 0.0) / self.c).astype(np.int64)
        top = int(k.max()) if k.size else 0
        vals = self.steps(top)[k] if top < 2**24 else np.asarray(self.tau.log_tail(k), dtype=float)
        return _out_arr(np.where(y < 0, 0.0, vals))

    def cutoff(self, level: float) -> int:
        """First ``k`` with ``log P(tau_* > k) <= level``, read off the cache."""
        while self._log_t[-1] > level:
            if self._log_t.size > 2**27:
                raise NumericRangeError("step tail does not decay within the numeric range")
            self.steps(2 * self._log_t.size)
        # log tails are nonincreasing, so their negatives are sorted
        return int(np.searchsorted(-self._log_t, -level, side="left"))


def _out_arr(v):
    v = np.asarray(v, dtype=float)
    return float(v) if v.ndim == 0 else v


def _log_step_integral(step: _StepTail, lo: float, hi: float, v: float, a: float, slack: float = 60.0) -> float:
    """``log int_lo^hi e^y G_*(v + a (y - lo)) dy`` in closed form over the steps of ``G_*``.

    Steps whose contribution is below ``e^{-slack}`` relative to ``e^{hi}``
    are dropped; their total is at most ``e^{hi - slack} (hi - lo)``.
    """
    if hi <= lo:
        return -math.inf
    c = step.c
    z_hi = v + a * (hi - lo)
    k_first = int(math.floor(max(v, 0.0) / c))
    k_last = int(math.floor(z_hi / c))
    k_cut = step.cutoff(-(slack + max(hi, 0.0)) - math.log(max(hi - lo, 1.0)))
    k_last_used = min(k_last, max(k_cut, k_first))
    ks = np.arange(k_first, k_last_used + 1)
    log_t = step.steps(int(ks[-1]))[ks]
    # y-range of step k: z in [c k, c (k+1))
    y0 = np.maximum(lo + (c * ks - v) / a, lo)
    y1 = np.minimum(lo + (c * (ks + 1) - v) / a, hi)
    w = y1 - y0
    keep = w > 0
    with np.errstate(divide="ignore"):
        logs = log_t[keep] + y1[keep] + np.log(-np.expm1(-w[keep]))
    return float(special.logsumexp(logs)) if logs.size else -math.inf


def _log_step_integral_by_parts(step: _StepTail, lo: float, hi: float, v: float, a: float,
                                slack: float = 60.0) -> float:
    """Same integral as ``_log_step_integral`` via summation by parts against the pmf.

    ``int e^y G_*(h) dy = e^hi G_*(h(hi)) - e^lo G_*(h(lo)) + sum_k P(tau_* = k) e^{y_k}``
    over the jump points ``y_k`` with ``h(y_k) = c k`` in ``(lo, hi]``.
    """
    c = step.c
    z_hi = v + a * (hi - lo)
    k_first = int(math.floor(v / c)) + 1
    k_last = int(math.floor(z_hi / c))
    k_cut = step.cutoff(-(slack + max(hi, 0.0)) - math.log(max(hi - lo, 1.0)))
    ks = np.arange(k_first, min(k_last, max(k_cut, k_first)) + 1, dtype=float)
    y_k = lo + (c * ks - v) / a
    pos = np.concatenate([[hi + float(step(z_hi))], y_k + np.asarray(step.tau.log_pmf(ks), dtype=float)])
    neg = lo + float(step(v))
    return float(special.logsumexp(np.append(pos, neg), b=np.append(np.ones(pos.size), -1.0)))


def _ratio_threshold(F_star: AnalyticDistribution, step: _StepTail, level: float, horizon: int) -> float:
    """Smallest ``x`` such that ``F_*(y) / G_*(y) >= e^level`` at every checked ``y > x``.

    ``G_*`` is constant on ``[c k, c (k+1))`` so the ratio is smallest at the
    right end of each step; those ends are checked densely for small ``k``
    and on a log grid up to ``horizon``.
    """
    ks = np.unique(np.concatenate([np.arange(min(horizon, 20000)),
                                   np.geomspace(20000, max(horizon, 20001), 2000).astype(np.int64)]))
    log_g = step.steps(int(ks[-1]))[ks]
    log_f = np.asarray(F_star.log_tail(step.c * (ks + 1)), dtype=float)
    with np.errstate(invalid="ignore"):
        ok = (log_f - log_g >= level) | np.isneginf(log_g)
    if ok.all():
        return 0.0
    bad = np.nonzero(~ok)[0][-1]
    if bad == ks.size - 1:
        raise NumericRangeError(f"tail ratio below e^{level:.3g} at the end of the checked horizon")
    return float(step.c * (ks[bad] + 1))


def build_h_convex_inverse(F: AnalyticDistribution, tau: CountingDistribution, c: float, n_stages: int,
                     tol: float = RESIDUAL_TOL, horizon: int = 10**7,
                     x_grid=None) -> tuple[PiecewiseFunction, ConstructionCertificate]:
    """Convex piecewise linear ``h`` with ``int e^x F_*(h) dx = inf`` and ``int e^x G_*(h) dx < inf``.

    ``F_*`` and ``G_*`` are the size-biased law of the summand and of
    ``c tau``. The inverse ``f = h^-1`` is then concave and increasing with
    ``E xi e^{f(xi)} = inf`` and ``E tau e^{f(c tau)} < inf``.

    Slope ``a_n`` on ``(x_n, x_{n+1}]``; ``a_0 >= 1`` gives unit stage
    integral and stage ``n`` integrates to ``2^-n``. ``n_stages`` inductive
    steps give ``n_stages + 1`` intervals. Beyond ``F_* / G_* >= 2^{n}`` on
    ``(x_n, inf)``, each ``F_*`` stage integral is at least 1.

    When ``tau`` has an exponential moment the linear witness ``f(x) = lam x``
    is returned instead, with ``lam c`` at most half the moment abscissa.
    """
    if F.gamma_hat != 0.0:
        raise PreconditionError("the summand law must be heavy-tailed")
    m = F.mean
    if not math.isfinite(m):
        raise PreconditionError("E xi must be finite")
    grid = np.geomspace(max(c, 1.0), 1e6 * max(c, 1.0), 240) if x_grid is None else x_grid
    dom = check_G_o_F(F, tau, c, grid)
    if not dom.verdict.positive:
        raise PreconditionError("P(c tau > x) = o(F_bar(x)) is not supported on the grid; "
                                "the heavy-tailed lower-limit theorem needs it for some c > E xi")
    abscissa = tau.exp_moment_abscissa
    if abscissa > 0:
        return _linear_witness(F, tau, c, abscissa, tol, dom)
    if n_stages < 0:
        raise PreconditionError("n_stages must be nonnegative")

    F_star = F.size_biased()
    step = _StepTail(tau.size_biased(), c)
    ln2 = math.log(2.0)

    def solve_slope(lo, hi, v, a_min, log_target):
        def r(a):
            return _log_step_integral(step, lo, hi, v, a) - log_target

        if r(a_min) < 0:
            raise NumericRangeError("stage integral already below its target at the smallest slope")
        a_hi = 2.0 * a_min
        while r(a_hi) > 0:
            a_hi *= 2.0
            if a_hi > 1e300:
                raise NumericRangeError("no slope reaches the stage target")
        return optimize.brentq(r, a_min, a_hi, xtol=1e-14 * a_hi, rtol=4 * np.finfo(float).eps, maxiter=500)

    # base interval (0, x_1]
    x1_floor = _ratio_threshold(F_star, step, ln2, horizon)
    x1 = _knot_search(max(1.0, x1_floor), lambda x: x > x1_floor and _log_step_integral(step, 0.0, x, 0.0, 1.0) >= 0.0)
    a0 = solve_slope(0.0, x1, 0.0, 1.0, 0.0)
    knots, values, slopes = [0.0, x1], [0.0, a0 * x1], [a0]
    for n in range(n_stages):
        lo, v, a_prev = knots[-1], values[-1], slopes[-1]
        floor_x = _ratio_threshold(F_star, step, (n + 2) * ln2, horizon)
        # increments from x_n keep h, and with it the step index, moderate
        nxt = _knot_search(max(floor_x - lo, 1.0),
                           lambda x: x > floor_x and _log_step_integral(step, lo, x, v, a_prev) >= 0.0, base=lo)
        a_next = solve_slope(lo, nxt, v, a_prev, -(n + 1) * ln2)
        knots.append(nxt)
        values.append(v + a_next * (nxt - lo))
        slopes.append(a_next)
    slopes.append(slopes[-1])
    h = PiecewiseFunction.linear(np.array(knots), np.array(values), "convex",
                                 aux={"a": slopes[:-1], "c": c, "stages": n_stages})
    cert = _certify_convex_inverse(F_star, step, h, n_stages, tol, horizon)
    cert.divergence_evidence["G_o_F"] = dom.to_dict()
    return h, cert


def _certify_convex_inverse(F_star, step: _StepTail, h: PiecewiseFunction, n_stages: int, tol: float,
                      horizon: int) -> ConstructionCertificate:
    x, vals, a = h.knots, h.values, h.slopes
    g_int, f_int, residuals = [], [], []
    for n in range(n_stages + 1):
        lo, hi = x[n], x[n + 1]
        hn = lambda y, n=n: vals[n] + a[n] * (y - x[n])  # noqa: E731
        lg = _log_step_integral_by_parts(step, lo, hi, vals[n], a[n])
        # kinks of F_* pulled back through the linear piece
        f_breaks = tuple(lo + (b - vals[n]) / a[n] for b in F_star.breakpoints)
        lf = log_quad(lambda y: y + float(F_star.log_tail(hn(y))), lo, hi,
                      breaks=tuple(b for b in f_breaks if lo < b < hi))
        gi = math.exp(lg)
        g_int.append(gi)
        f_int.append(math.exp(min(lf, 700.0)))
        residuals.append(abs(gi - 2.0**-n))
    ratio_ok = []
    for n in range(1, n_stages + 2):
        try:
            ratio_ok.append(_ratio_threshold(F_star, step, n * math.log(2.0), horizon) <= x[n])
        except NumericRangeError:
            ratio_ok.append(False)
    flags = {
        "a0_ge_1": bool(a[0] >= 1.0),
        "slopes_strictly_increasing": bool(np.all(np.diff(a[:-1]) > 0)),
        "h_convex": h.check_shape()["slopes_monotone"],
        "h_at_zero": bool(vals[0] == 0.0),
        "knots_increasing": bool(np.all(np.diff(x) > 0)),
        "ratio_condition": bool(all(ratio_ok)),
        "F_stage_integrals_ge_1": bool(all(v >= 1.0 - tol for v in f_int)),
        "G_stage_sum": bool(abs(sum(g_int) - (2.0 - 2.0**-n_stages)) <= (n_stages + 1) * tol),
    }
    return ConstructionCertificate(
        residuals, flags,
        {"F_star_stage_integrals": f_int, "floor": 1.0, "stages_certified": len(f_int)},
        {"G_star_stage_integrals": g_int, "sum": sum(g_int), "limit": 2.0},
        tol, notes=["the concave witness is the inverse of h"])


def _linear_witness(F, tau, c, abscissa, tol, dom) -> tuple[PiecewiseFunction, ConstructionCertificate]:
    lam = min(1.0, 0.5 * abscissa) / c
    ev = series_evidence(lambda n: np.log(np.maximum(n, 1)) + np.asarray(tau.log_pmf(n)) + lam * c * n,
                         start=1, stop=tau.max_support)
    f = PiecewiseFunction.linear(np.array([0.0, 1.0]), np.array([0.0, lam]), "linear",
                                 aux={"lambda": lam, "c": c, "light_tailed_counts": True})
    flags = {"E_tau_exp_f_finite": ev.is_finite, "summand_heavy": F.gamma_hat == 0.0}
    cert = ConstructionCertificate(
        [], flags, {"reason": "E xi e^{lam xi} = inf for every lam > 0 under a heavy-tailed law"},
        {"E_tau_exp_lam_c_tau": ev.to_dict(), "G_o_F": dom.to_dict()}, tol,
        notes=[f"counting law has exponential moments up to {abscissa:.6g}; returned f(x) = {lam:.6g} x"])
    return f, cert


# Growth bounds for concave exponents of random walks.


@dataclass
class GrowthReport:
    """``E e^{h(S_n)}`` against ``e^{h(nc)}`` for ``n = 1..N`` on a lattice."""

    n: np.ndarray
    log_expectations: np.ndarray
    log_ratios: np.ndarray
    K_hat: float
    bounded: bool
    growth_exponent: float
    deficits: np.ndarray
    x0: float | None = None
    induction_holds: bool | None = None
    notes: list[str] = field(default_factory=list)

    @property
    def ratios(self) -> np.ndarray:
        return np.exp(self.log_ratios)

    def to_dict(self) -> dict[str, Any]:
        return {
            "n": self.n.tolist(), "ratios": self.ratios.tolist(), "K_hat": self.K_hat,
            "bounded": self.bounded, "growth_exponent": self.growth_exponent,
            "max_deficit": float(self.deficits.max()), "x0": self.x0,
            "induction_holds": self.induction_holds, "notes": self.notes,
        }


def _h_values(h, x: np.ndarray) -> np.ndarray:
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.asarray(h(x), dtype=float) * np.ones_like(x)


def _check_log_lower(h, x_large: np.ndarray) -> None:
    hv = _h_values(h, x_large)
    if np.any(hv < np.log(x_large) - 1e-12):
        bad = float(x_large[np.argmax(hv < np.log(x_large) - 1e-12)])
        raise PreconditionError(f"h(x) >= ln x fails at x = {bad:.6g}; the growth bound needs it at large x")


def _default_cutoff(F: AnalyticDistribution, step: float, max_points: int = 2_000_000) -> float:
    level = math.log(1e-16)
    x = 1.0
    while float(F.log_tail(x)) > level and x < step * max_points:
        x *= 2.0
    if float(F.log_tail(x)) > level:
        return step * max_points
    lo, hi = x / 2.0, x
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        lo, hi = (mid, hi) if float(F.log_tail(mid)) > level else (lo, mid)
    return hi


def verify_growth_bound(F: AnalyticDistribution, h, c: float, N: int, step: float = 0.25,
                        cutoff: float | None = None, strict: bool = True, x0: float | None = None,
                        growth_tol: float = 0.05) -> GrowthReport:
    """Empirical constant ``K = max_n E e^{h(S_n)} / e^{h(nc)}`` and a boundedness verdict.

    ``S_n`` is built by repeated lattice convolution. The ratios count as
    bounded when their log-log slope over the last half of ``n`` is at most
    ``growth_tol``. ``strict`` enforces ``h(x) >= ln x`` at large grid
    points. With ``x0`` the report also checks
    ``E e^{h(S_n)} <= e^{h(nc + x0)}`` for every computed ``n``.
    """
    if not c > F.mean:
        raise PreconditionError(f"c must exceed E xi = {F.mean:.6g}")
    if N < 1:
        raise PreconditionError("N must be at least 1")
    cut = _default_cutoff(F, step) if cutoff is None else cutoff
    probe = np.linspace(0.0, cut, 4001)
    hv = _h_values(h, probe)
    if np.any(np.diff(hv) < -1e-12 * (1 + np.abs(hv[1:]))):
        raise PreconditionError("h must be nondecreasing")
    if strict:
        _check_log_lower(h, np.geomspace(max(cut / 2.0, 2.0), max(cut, 4.0), 64))
    ev = moment_evidence(F, lambda y: float(h(y)))
    if ev.status != FINITE:
        raise PreconditionError(f"E exp(h(xi)) must be finite; evidence is {ev.status}")
    lat = discretize(F, step, cut, allow_heavy_truncation=True)
    notes = []
    if lat.deficit > 0:
        notes.append(f"summand lattice drops tail mass {lat.deficit:.3g} beyond {lat.end:.6g}")
    # S_n is kept on [0, n c + cut]: beyond that it needs a summand above the
    # cutoff or a deviation far past its mean. Whatever is dropped there, or
    # lost with the summand tail, is reported as the deficit of S_n.
    base = LatticeDistribution.from_masses(step, lat.masses)
    ns = np.arange(1, N + 1)
    log_e, log_r, deficits = [], [], []
    cur = base
    for n in ns:
        if n > 1:
            full = convolve(cur, base)
            keep = min(full.size, int(math.ceil((n * c + cut) / step)) + 1)
            cur = LatticeDistribution.from_masses(step, full.masses[:keep])
        with np.errstate(divide="ignore"):
            le = float(special.logsumexp(np.log(cur.masses) + _h_values(h, cur.grid)))
        log_e.append(le)
        log_r.append(le - float(h(n * c)))
        deficits.append(max(0.0, 1.0 - math.fsum(cur.masses)))
    log_e_a, log_r_a = np.array(log_e), np.array(log_r)
    half = ns >= max(1, N // 2)
    if half.sum() >= 2:
        slope = float(np.polyfit(np.log(ns[half]), log_r_a[half], 1)[0])
    else:
        slope = 0.0
    induction = None
    if x0 is not None:
        induction = bool(np.all(log_e_a <= _h_values(h, ns * c + x0) + 1e-12))
    return GrowthReport(ns, log_e_a, log_r_a, float(np.exp(log_r_a.max())), slope <= growth_tol, slope,
                        np.array(deficits), x0, induction, notes)


@dataclass
class SemiMomentReport:
    """Where ``E e^{h(x + eta)} <= e^{h(x)}`` holds on a grid."""

    x0: float | None
    found: bool
    x: np.ndarray
    margins: np.ndarray
    max_violation_x: float | None
    notes: list[str] = field(default_factory=list)

    def to_dict(self) -> dict[str, Any]:
        return {"x0": self.x0, "found": self.found, "max_violation_x": self.max_violation_x,
                "min_margin": float(self.margins.min()) if self.margins.size else None,
                "n_points": int(self.x.size), "notes": self.notes}


def find_x0_semi_moment(eta: LatticeDistribution, h, x_grid=None, strict: bool = True,
                        rtol: float = 1e-12) -> SemiMomentReport:
    """Smallest grid ``x0`` beyond which ``e^{h(x)} - E e^{h(x + eta)} >= 0`` on the whole grid.

    ``eta`` is a lattice law with negative mean (typically ``xi - c``).
    The default grid starts at the first ``x >= 0`` where ``h(x + eta)``
    is defined for every atom. Margins are compared with a relative slack
    of ``rtol e^{h(x)}``.
    """
    if not eta.mean() < 0:
        raise PreconditionError(f"E eta must be negative, got {eta.mean():.6g}")
    atoms = eta.grid[eta.masses > 0]
    masses = eta.masses[eta.masses > 0]
    lo_atom = float(atoms.min())
    if x_grid is None:
        start = 0.0
        while np.isnan(_h_values(h, np.array([start + lo_atom]))[0]):
            start = max(2.0 * start, eta.step)
            if start > X_LIMIT:
                raise PreconditionError("h is undefined on the shifted support")
        x_grid = np.concatenate([[start], start + np.geomspace(eta.step / 4, 1e6, 400)])
    x = np.asarray(x_grid, dtype=float)
    if strict:
        _check_log_lower(h, x[x >= max(x[-1] / 10.0, 2.0)])
    notes = []
    if eta.deficit > 0:
        notes.append(f"eta lattice drops tail mass {eta.deficit:.3g}; its contribution is not included")
    hx = _h_values(h, x)
    shifted = _h_values(h, x[:, None] + atoms[None, :])
    if np.any(np.isnan(shifted)):
        raise PreconditionError("h is undefined at some x + eta on the grid")
    with np.errstate(divide="ignore"):
        log_e = special.logsumexp(shifted + np.log(masses)[None, :], axis=1)
    # margin scaled by e^{-h(x)}: 1 - E e^{h(x+eta) - h(x)}; huge violations overflow to -inf
    with np.errstate(over="ignore", invalid="ignore"):
        rel = -np.expm1(log_e - hx)
        margins = np.exp(hx) * rel
    ok = rel >= -rtol
    if ok.all():
        return SemiMomentReport(float(x[0]), True, x, margins, None, notes)
    last_bad = int(np.nonzero(~ok)[0][-1])
    if last_bad == x.size - 1:
        return SemiMomentReport(None, False, x, margins, float(x[last_bad]),
                                notes + ["not found within range"])
    return SemiMomentReport(float(x[last_bad + 1]), True, x, margins, float(x[last_bad]), notes)


# Name under which the external API lists the convex-inverse builder.
build_h_section5 = build_h_convex_inverse


# The full chain for a general exponent f = ln x + f2.


class _WeightedScaledCounts:
    """Law of ``c N`` where ``P(N = n)`` is proportional to ``e^{f(c n)} P(tau = n)``.

    Weights are summed over doubling blocks until a block falls ``slack``
    nats below the total. If the term budget runs out first, the rest is
    estimated as a geometric continuation of the last two blocks and added
    to every tail; tails below that remainder are then out of reach.
    """

    def __init__(self, tau: CountingDistribution, c: float, f, slack: float = 80.0,
                 max_terms: int = 10_000_000):
        chunks, parts = [], []
        total = -math.inf
        lo, hi = 0, 1024
        top = tau.max_support
        remainder = -math.inf
        while True:
            if top is not None:
                hi = min(hi, top + 1)
            n = np.arange(lo, hi, dtype=float)
            with np.errstate(divide="ignore", invalid="ignore"):
                lw = _h_values(f, c * n) + np.asarray(tau.log_pmf(n), dtype=float)
            lw = np.where(np.isnan(lw), -np.inf, lw)
            chunks.append(lw)
            part = float(special.logsumexp(lw)) if lw.size else -math.inf
            parts.append(part)
            total = float(np.logaddexp(total, part))
            if (top is not None and hi > top) or (len(parts) > 2 and part < total - slack):
                break
            if hi >= max_terms:
                log_r = parts[-1] - parts[-2]
                if not log_r < math.log(0.9):
                    raise PreconditionError("E exp(f(c tau)) is not finite within the enumeration range")
                remainder = parts[-1] + log_r - math.log(-math.expm1(log_r))
                total = float(np.logaddexp(total, remainder))
                break
            lo, hi = hi, 2 * hi
        lw = np.concatenate(chunks)
        self.c = c
        self.log_norm = total
        self.log_remainder = remainder - total
        # suffix[k] = log sum_{m >= k} w_m, remainder included
        self._suffix = np.logaddexp(np.logaddexp.accumulate(lw[::-1])[::-1], remainder) - total
        self.breakpoints = ()

    def log_tail(self, x):
        x = np.asarray(x, dtype=float)
        cap = self.c * (self._suffix.size + 1)
        k = np.floor(np.clip(np.nan_to_num(x, nan=cap), -self.c, cap) / self.c).astype(np.int64) + 1
        out = np.where(k < self._suffix.size, self._suffix[np.clip(k, 0, self._suffix.size - 1)],
                       self.log_remainder)
        return _out_arr(np.minimum(out, 0.0))


@dataclass
class PipelineReport:
    g1: SmoothedFunction
    g: RealFunction
    h: PiecewiseFunction | None
    r: RealFunction | None
    g_certificate: ConstructionCertificate
    h_certificate: ConstructionCertificate | None
    evidence: dict[str, Any]
    notes: list[str] = field(default_factory=list)

    def to_dict(self) -> dict[str, Any]:
        return {
            "g1": self.g1.to_dict(), "g": self.g.to_dict(),
            "h": None if self.h is None else self.h.to_dict(),
            "g_certificate": self.g_certificate.to_dict(),
            "h_certificate": None if self.h_certificate is None else self.h_certificate.to_dict(),
            "evidence": json.loads(json.dumps(self.evidence, default=_json_default)),
            "notes": self.notes,
        }


def stopped_moment_pipeline(F: AnalyticDistribution, tau: CountingDistribution, c: float, f2,
                            n_stages: int = 2, g_stages: int = 30,
                            tol: float = RESIDUAL_TOL) -> PipelineReport:
    """Objects of the general lower-limit argument for ``f = ln x + f2``.

    Checks ``E e^{f(xi)} = inf`` and ``E e^{f(c tau)} < inf`` for ``c > E xi``,
    builds ``g1`` with ``E e^{f(c tau) + g1(c tau)} < inf`` under the
    reweighted law of ``c tau``, sets ``g(x) = g1(ln(x + 1)) - 1``, builds
    ``h <= f2`` with ``E xi e^h < inf`` and ``E xi e^{h+g} = inf``, and
    records evidence for ``E tau e^{r(c tau)} < inf`` with ``r = h + g``.

    ``g`` grows doubly logarithmically, so only a few ``h`` stages fit below
    the floating point range; stages that do not fit are reported.
    """
    if F.gamma_hat != 0.0:
        raise PreconditionError("the summand law must be heavy-tailed")
    if not c > F.mean:
        raise PreconditionError(f"c must exceed E xi = {F.mean:.6g}")
    if not (_is_concave(f2) and _nondecreasing(f2)):
        raise PreconditionError("f - ln x must be concave and nondecreasing")
    f = SumFunction((Elementary("log"), f2))
    ev_xi = moment_evidence(F, lambda y: float(f(y)))
    if ev_xi.status != DIVERGENT:
        raise PreconditionError(f"E exp(f(xi)) must diverge; evidence is {ev_xi.status}")
    ev_tau = series_evidence(lambda n: _h_values(f, c * n.astype(float)) + np.asarray(tau.log_pmf(n)),
                             start=1, stop=tau.max_support)
    if ev_tau.status != FINITE:
        raise PreconditionError(f"E exp(f(c tau)) must be finite; evidence is {ev_tau.status}")

    chi = _WeightedScaledCounts(tau, c, f)
    g1, g_cert = build_g_finite_moment(chi, g_stages, tol=tol)
    g = log_scale_transform(g1)
    notes = []
    h = h_cert = r = None
    stages = n_stages
    while stages >= 0:
        try:
            h, h_cert = build_h_weighted(F, Elementary("log"), f2, g, stages, tol)
            break
        except (NumericRangeError, PreconditionError) as exc:
            notes.append(f"{stages} stages of h do not fit: {exc}")
            stages -= 1
    evidence: dict[str, Any] = {"E_exp_f_xi": ev_xi.to_dict(), "E_exp_f_c_tau": ev_tau.to_dict(),
                                "h_stages": stages}
    if h is not None:
        r = SumFunction((h, g))
        ev_r = series_evidence(
            lambda n: np.log(np.maximum(n, 1)) + _h_values(r, c * n.astype(float)) + np.asarray(tau.log_pmf(n)),
            start=1, stop=tau.max_support)
        evidence["E_tau_exp_r_c_tau"] = ev_r.to_dict()
        if not ev_r.is_finite:
            notes.append(f"E tau exp(r(c tau)) evidence is {ev_r.status}")
    return PipelineReport(g1, g, h, r, g_cert, h_cert, evidence, notes)


__all__ = [
    "ConstructionCertificate",
    "build_g_finite_moment",
    "build_h_moments_ext",
    "build_h_convex_inverse",
    "build_h_section5",
    "build_h_weighted",
    "find_x0_semi_moment",
    "verify_growth_bound",
    "GrowthReport",
    "SemiMomentReport",
    "flatten_to_sublinear",
    "log_scale_transform",
    "PipelineReport",
    "stopped_moment_pipeline",
]
