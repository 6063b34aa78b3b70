"""Small numeric helpers shared across modules."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


def safe_log(x):
    """Elementwise log mapping zeros to -inf without warnings."""
    with np.errstate(divide="ignore"):
        return np.log(x)


def log_tail_from_masses(masses: np.ndarray, deficit: float = 0.0) -> np.ndarray:
    """Return ``log(deficit + sum_{j>k} masses[j])`` for every index ``k``.

    Accumulates right-to-left with ``logaddexp`` so that tails far below the
    smallest normal double are still resolved in relative terms.
    """
    masses = np.asarray(masses, dtype=float)
    if masses.size == 0:
        return np.empty(0)
    head = -math.inf if deficit <= 0 else math.log(deficit)
    terms = np.concatenate(([head], safe_log(masses[:0:-1])))
    return np.logaddexp.accumulate(terms)[::-1].copy()


class KahanAccumulator:
    """Compensated elementwise summation of equally shaped arrays."""

    def __init__(self, size: int):
        self.total = np.zeros(size)
        self._comp = np.zeros(size)

    def add(self, values: np.ndarray) -> None:
        y = values - self._comp
        t = self.total + y
        self._comp = (t - self.total) - y
        self.total = t


def write_csv_rows(path, header: str, rows) -> int:
    """Write ``rows`` under ``header``; floats use the shortest round-trip repr.

    Integers stay integers. Returns the number of data rows.
    """
    count = 0
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(header + "\n")
        for row in rows:
            fh.write(",".join(str(int(v)) if isinstance(v, (int, np.integer)) else repr(float(v)) for v in row))
            fh.write("\n")
            count += 1
    return count


def pad_to(arr: np.ndarray, size: int) -> np.ndarray:
    if arr.size >= size:
        return arr[:size]
    return np.concatenate((arr, np.zeros(size - arr.size)))


@dataclass(frozen=True)
class TrendVerdict:
    """Finite-grid surrogate for a ``ratio -> 0`` statement.

    The verdict is positive when every value in the last quarter of the grid
    lies strictly below ``factor`` times every value in the first quarter, or
    when the last quarter is identically zero.
    """

    positive: bool
    first_quartile_min: float
    last_quartile_max: float
    factor: float
    n_points: int

    def to_dict(self) -> dict:
        return {
            "positive": self.positive,
            "first_quartile_min": self.first_quartile_min,
            "last_quartile_max": self.last_quartile_max,
            "factor": self.factor,
            "n_points": self.n_points,
            "rule": "last-quartile max < factor * first-quartile min, or last quartile == 0",
        }


def quartile_trend(values, factor: float = 1.0) -> TrendVerdict:
    v = np.asarray(values, dtype=float)
    v = v[np.isfinite(v)]
    if v.size < 4:
        return TrendVerdict(False, math.nan, math.nan, factor, int(v.size))
    q = v.size // 4
    first_min = float(v[:q].min())
    last_max = float(v[-q:].max())
    positive = last_max == 0.0 or last_max < factor * first_min
    return TrendVerdict(positive, first_min, last_max, factor, int(v.size))


def _piece_log_integral(logf, lo: float, hi: float, rtol: float) -> float:
    from scipy import integrate

    probes = [logf(lo), logf(0.5 * (lo + hi)), logf(hi)]
    finite = [p for p in probes if math.isfinite(p)]
    if not finite:
        # density may blow up at an endpoint; probe inside
        finite = [logf(lo + 0.25 * (hi - lo)), logf(lo + 0.75 * (hi - lo))]
        finite = [p for p in finite if math.isfinite(p)]
        if not finite:
            return -math.inf
    shift = max(finite)

    def integrand(y):
        v = logf(y) - shift
        return math.exp(v) if v > -745.0 else 0.0

    val, _ = integrate.quad(integrand, lo, hi, epsabs=0.0, epsrel=rtol, limit=400)
    if val <= 0.0:
        return -math.inf
    return math.log(val) + shift


def _pieces(a: float, b: float, breaks, ratio: float):
    pts = [a, *sorted({float(t) for t in breaks if a < t < b})]
    for lo, hi in zip(pts, pts[1:]):
        yield lo, hi, True
    lo = pts[-1]
    while lo < b:
        if lo < 0.0:
            hi = 0.0
        elif lo < 1.0:
            hi = 1.0
        else:
            hi = lo * ratio
        hi = min(hi, b, 1e300)
        yield lo, hi, False
        if hi >= 1e300:
            return
        lo = hi


def log_quad(logf, a: float, b: float = math.inf, breaks=(), ratio: float = 4.0,
             rtol: float = 1e-12, negligible: float = 40.0) -> float:
    """Return ``log int_a^b exp(logf(y)) dy`` for a scalar log-integrand.

    The range is cut at ``breaks`` and then into geometrically growing pieces
    so that integrands spanning many orders of magnitude stay resolvable.
    For ``b = inf`` pieces are added until three consecutive ones fall more
    than ``negligible`` nats below the running total.
    """
    if not b > a:
        return -math.inf
    total = -math.inf
    quiet = 0
    for lo, hi, forced in _pieces(a, b, breaks, ratio):
        piece = _piece_log_integral(logf, lo, hi, rtol)
        total = float(np.logaddexp(total, piece))
        if math.isinf(b) and not forced:
            quiet = quiet + 1 if piece < total - negligible else 0
            if quiet >= 3:
                break
    return total


def log_gammaincc(a: float, z):
    """``log Q(a, z)`` (regularized upper incomplete gamma), safe in the far tail."""
    from scipy import special

    z = np.asarray(z, dtype=float)
    q = special.gammaincc(a, z)
    out = safe_log(q)
    far = (q < 1e-280) & (z > 0)
    if np.any(far):
        zf = z[far]
        series = np.ones_like(zf)
        term = np.ones_like(zf)
        for k in range(1, 12):
            term = term * (a - k) / zf
            series = series + term
        out = np.array(out, dtype=float)
        out[far] = (a - 1.0) * np.log(zf) - zf + np.log(series) - special.gammaln(a)
    return out[()] if out.ndim == 0 else out
