"""Convolution powers and compound laws on a lattice.

``convolve`` and ``conv_power`` build the laws of ``S_n``; ``compound`` mixes
them over a counting law. ``panjer_compound`` is the recursion for the
(a, b, 0) class and ``brute_force_compound`` enumerates every outcome tuple
for small instances, serving as an oracle.
"""

from __future__ import annotations

import enum
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from scipy import signal

from ._numerics import KahanAccumulator, log_tail_from_masses, write_csv_rows
from .distributions.analytic import PointMassMix
from .distributions.counting import CountingDistribution
from .distributions.lattice import LatticeDistribution, lattice_from_points
from .errors import PreconditionError, UnsupportedFamilyError

# Entries of an FFT product whose tail falls below this are recomputed directly.
FFT_TAIL_FLOOR = 1e-12
# Default bound on neglected counting mass.
DEFAULT_TRUNCATION = 1e-12
BRUTE_MAX_SUPPORT = 6
BRUTE_MAX_N = 8
MAX_LENGTH = 5_000_000


class Method(str, enum.Enum):
    DIRECT = "Direct"
    FFT = "FFT"
    PANJER = "Panjer"
    BRUTE_FORCE = "BruteForce"


@dataclass(frozen=True, eq=False)
class CompoundResult:
    lattice: LatticeDistribution
    per_n_weights: np.ndarray
    truncation_error_bound: float
    method: Method
    notes: dict[str, Any] = field(default_factory=dict)

    def tail(self, x):
        return self.lattice.tail(x)

    def metadata(self) -> dict[str, Any]:
        return {
            "method": self.method.value,
            "truncation_error_bound": self.truncation_error_bound,
            "step": self.lattice.step,
            "origin": self.lattice.origin,
            "deficit": self.lattice.deficit,
            "n_max": int(self.per_n_weights.size - 1),
            **self.notes,
        }

    def write_csv(self, path: str | os.PathLike) -> None:
        lat = self.lattice
        write_csv_rows(path, "x,mass,log_tail", zip(lat.grid, lat.masses, lat.log_tail))

    def write_json(self, path: str | os.PathLike) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.metadata(), fh, indent=2, sort_keys=True)


def _direct(a: np.ndarray, b: np.ndarray, length: int) -> np.ndarray:
    if a.size * b.size <= 40_000_000 or min(a.size, b.size) <= 64:
        return np.convolve(a, b)[:length]
    return _fft_with_repair(a, b, length)


def _fft_with_repair(a: np.ndarray, b: np.ndarray, length: int) -> np.ndarray:
    out = np.maximum(signal.fftconvolve(a, b)[:length], 0.0)
    # The FFT carries absolute error near eps * total mass; recompute the
    # entries sitting in the far tail directly. The terms are nonnegative, so
    # a plain dot product is accurate to a relative n * eps.
    tail = np.cumsum(out[::-1])[::-1]
    low = np.nonzero(tail < FFT_TAIL_FLOOR)[0]
    if low.size:
        start = int(low[0])
        b_rev = b[::-1]
        for k in range(start, length):
            lo = max(0, k - b.size + 1)
            hi = min(k, a.size - 1)
            out[k] = float(np.dot(a[lo:hi + 1], b_rev[b.size - 1 - k + lo:b.size - k + hi])) if hi >= lo else 0.0
    # Near-zero FFT noise in the bulk is clipped to zero above; that is below
    # the tolerance any caller uses there.
    return out


def convolve(a: LatticeDistribution, b: LatticeDistribution, method: str = "direct") -> LatticeDistribution:
    """Law of ``X + Y`` for independent lattice laws with a common step.

    If either input is truncated the product is kept only up to the shorter
    truncated length, beyond which it would be incomplete; the neglected
    mass joins the deficit.
    """
    if not math.isclose(a.step, b.step, rel_tol=1e-12):
        raise PreconditionError(f"step mismatch: {a.step} vs {b.step}")
    full_len = a.size + b.size - 1
    lengths = [x.size for x in (a, b) if x.is_truncated]
    length = min(lengths) if lengths else full_len
    if method == "fft":
        full = _fft_with_repair(a.masses, b.masses, full_len)
    elif method == "direct":
        full = _direct(a.masses, b.masses, full_len)
    else:
        raise PreconditionError(f"unknown convolution method {method!r}")
    kept = full[:length]
    da, db = a.deficit, b.deficit
    deficit = da + db - da * db + math.fsum(full[length:])
    return LatticeDistribution(a.step, kept, log_tail_from_masses(kept, deficit),
                               a.origin + b.origin, deficit)


def conv_power(F: LatticeDistribution, n: int, method: str = "direct") -> LatticeDistribution:
    if n < 0:
        raise PreconditionError("convolution power must be nonnegative")
    result = LatticeDistribution.point_mass(0.0, F.step)
    base = F
    while n:
        if n & 1:
            result = convolve(result, base, method)
        n >>= 1
        if n:
            base = convolve(base, base, method)
    return result


def required_n_max(tau: CountingDistribution, threshold: float) -> int:
    """Smallest ``n`` with ``P(tau > n) <= threshold``."""
    top = tau.max_support
    if top is not None:
        lo = 0
        hi = int(top)
    else:
        hi = 1
        while tau.tail(hi) > threshold:
            hi *= 2
            if hi > 1 << 40:
                raise PreconditionError("counting law tail does not reach the truncation threshold")
        lo = 0
    while lo < hi:
        mid = (lo + hi) // 2
        if tau.tail(mid) <= threshold:
            hi = mid
        else:
            lo = mid + 1
    return lo


def _weights(tau: CountingDistribution, n_max: int) -> np.ndarray:
    return np.exp(np.asarray(tau.log_pmf(np.arange(n_max + 1)), dtype=float))


def _result_length(F: LatticeDistribution, n_max: int) -> int:
    return F.size if F.is_truncated else n_max * (F.size - 1) + 1


def compound(F: LatticeDistribution, tau: CountingDistribution, n_max: int | None = None,
             threshold: float = DEFAULT_TRUNCATION, method: str = "direct",
             workers: int | None = None) -> CompoundResult:
    """Mixture ``sum_{n <= n_max} P(tau = n) F^{*n}``.

    Masses are combined with compensated summation and the log tail by
    log-sum-exp over ``n``, so the far tail keeps its relative accuracy.
    """
    if n_max is None:
        n_max = required_n_max(tau, threshold)
    neglected = float(tau.tail(n_max))
    if neglected > threshold:
        need = required_n_max(tau, threshold)
        raise PreconditionError(
            f"P(tau > {n_max}) = {neglected:.3g} exceeds {threshold:.3g}; need n_max >= {need}")
    if F.origin != 0.0:
        raise PreconditionError("compound needs a lattice with origin 0")
    length = _result_length(F, n_max)
    if length > MAX_LENGTH:
        raise PreconditionError(f"compound lattice of length {length} is too long")
    weights = _weights(tau, n_max)
    workers = workers or int(os.environ.get("STOPPEDSUMS_WORKERS", "1"))

    def chunk(ns: range):
        acc = KahanAccumulator(length)
        lt = np.full(length, -np.inf)
        deficits = []
        cur = conv_power(F, ns.start, method)
        for n in ns:
            if n > ns.start:
                cur = convolve(cur, F, method)
            w = weights[n]
            if w == 0.0:
                continue
            acc.add(w * _pad(cur.masses, length))
            lt = np.logaddexp(lt, math.log(w) + _pad(cur.log_tail, length, -np.inf))
            deficits.append(w * cur.deficit)
        return acc, lt, deficits

    ranges = _split(n_max + 1, max(1, workers))
    if len(ranges) == 1:
        parts = [chunk(ranges[0])]
    else:
        with ThreadPoolExecutor(max_workers=len(ranges)) as ex:
            parts = list(ex.map(chunk, ranges))
    total = KahanAccumulator(length)
    lt = np.full(length, -np.inf)
    deficits: list[float] = []
    for acc, part_lt, d in parts:
        total.add(acc.total)
        lt = np.logaddexp(lt, part_lt)
        deficits.extend(d)
    masses = total.total
    deficit = math.fsum(deficits)
    lat = LatticeDistribution(F.step, np.maximum(masses, 0.0), lt, 0.0, deficit,
                              {"compound_of": F.provenance, "tau": tau.to_dict(), "n_max": n_max})
    bound = max(neglected, abs(1.0 - lat.total_mass))
    return CompoundResult(lat, weights, bound, Method.FFT if method == "fft" else Method.DIRECT)


def _pad(v: np.ndarray, length: int, fill: float = 0.0) -> np.ndarray:
    if v.size >= length:
        return v[:length]
    out = np.full(length, fill)
    out[:v.size] = v
    return out


def _split(n: int, parts: int) -> list[range]:
    parts = min(parts, n)
    bounds = np.linspace(0, n, parts + 1).astype(int)
    return [range(int(lo), int(hi)) for lo, hi in zip(bounds[:-1], bounds[1:]) if hi > lo]


def panjer_compound(F: LatticeDistribution, tau: CountingDistribution, length: int | None = None,
                    threshold: float = DEFAULT_TRUNCATION) -> CompoundResult:
    """Compound law by the Panjer recursion for (a, b, 0) counting laws.

    For a truncated ``F`` the recursion runs over the represented grid; its
    values there are exact because grid mass beyond the cutoff never feeds
    back into smaller sums. For an untruncated ``F`` and unbounded ``tau``
    the output is cut at ``length`` and the rest goes to the deficit.
    """
    ab = tau.panjer_ab
    if ab is None:
        raise UnsupportedFamilyError(f"{tau.family} is not in the (a, b, 0) class or its recursion is unstable "
                                     "(binomial with p > 1/2)")
    if F.origin != 0.0:
        raise PreconditionError("panjer recursion needs a lattice with origin 0")
    a, b = ab
    f = F.masses
    bounded = tau.max_support is not None
    if length is None:
        if F.is_truncated:
            length = F.size
        elif bounded:
            length = int(tau.max_support) * (F.size - 1) + 1
        else:
            length = required_n_max(tau, threshold) * (F.size - 1) + 1
    if length > MAX_LENGTH:
        raise PreconditionError(f"panjer output of length {length} is too long")
    fpad = _pad(f, length)
    jf = np.arange(length) * fpad
    g = np.zeros(length)
    g[0] = tau.pgf(fpad[0])
    denom = 1.0 - a * fpad[0]
    for k in range(1, length):
        top = min(k, f.size - 1)
        if top < 1:
            break
        window = g[k - top:k][::-1]  # g[k-1], ..., g[k-top]
        g[k] = (a * np.dot(fpad[1:top + 1], window) + (b / k) * np.dot(jf[1:top + 1], window)) / denom
    g = np.maximum(g, 0.0)
    if bounded and not F.is_truncated:
        deficit = 0.0
    else:
        deficit = max(0.0, 1.0 - math.fsum(g))
    lat = LatticeDistribution(F.step, g, log_tail_from_masses(g, deficit), 0.0, deficit,
                              {"compound_of": F.provenance, "tau": tau.to_dict()})
    n_top = int(tau.max_support) if bounded else required_n_max(tau, threshold)
    weights = _weights(tau, n_top)
    bound = max(float(tau.tail(n_top)), abs(1.0 - lat.total_mass)) if not F.is_truncated else abs(
        1.0 - lat.total_mass)
    return CompoundResult(lat, weights, bound, Method.PANJER)


def brute_force_compound(F, tau: CountingDistribution, n_max: int, step: float = 1.0) -> CompoundResult:
    """Enumerate every outcome tuple; exact up to float summation.

    ``F`` is an untruncated lattice or a ``PointMassMix`` whose atoms are
    multiples of ``step``.
    """
    if isinstance(F, PointMassMix):
        F = lattice_from_points(F.values, F.probs, step)
    if not isinstance(F, LatticeDistribution) or F.is_truncated:
        raise PreconditionError("brute force needs a finite, untruncated law")
    if F.origin != 0.0:
        raise PreconditionError("brute force needs a lattice with origin 0")
    pos = np.nonzero(F.masses)[0]
    if pos.size > BRUTE_MAX_SUPPORT:
        raise PreconditionError(f"support of size {pos.size} exceeds {BRUTE_MAX_SUPPORT}")
    if not 0 <= n_max <= BRUTE_MAX_N:
        raise PreconditionError(f"n_max must lie in [0, {BRUTE_MAX_N}]")
    w = F.masses[pos]
    weights = _weights(tau, n_max)
    length = n_max * int(pos.max()) + 1
    out = np.zeros(length)
    s = pos.size
    for n, p in enumerate(weights):
        if p == 0.0:
            continue
        if n == 0:
            out[0] += p
            continue
        total = s**n
        for start in range(0, total, 1 << 16):
            codes = np.arange(start, min(total, start + (1 << 16)))
            digits = np.unravel_index(codes, (s,) * n)
            sums = np.zeros(codes.size, dtype=int)
            prob = np.full(codes.size, p)
            for d in digits:
                sums += pos[d]
                prob *= w[d]
            out += np.bincount(sums, weights=prob, minlength=length)[:length]
    neglected = float(tau.tail(n_max))
    lat = LatticeDistribution(F.step, out, log_tail_from_masses(out, 0.0), 0.0, 0.0,
                              {"tau": tau.to_dict(), "n_max": n_max})
    return CompoundResult(lat, weights, max(neglected, abs(1.0 - lat.total_mass)), Method.BRUTE_FORCE)


__all__ = [
    "CompoundResult",
    "Method",
    "brute_force_compound",
    "compound",
    "conv_power",
    "convolve",
    "panjer_compound",
    "required_n_max",
]
