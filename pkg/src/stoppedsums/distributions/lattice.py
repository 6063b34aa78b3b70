"""Discretized laws on a uniform grid.

A lattice stores point masses at ``origin + k*step`` for ``k = 0..K`` and the
log tail ``log P(X > origin + k*step)`` alongside them. When the law was cut
off at the last grid point the missing mass is kept in ``deficit``; such a
lattice knows its tail exactly up to the last grid point and refuses queries
beyond it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from scipy import special

from .._numerics import log_tail_from_masses, safe_log
from ..errors import PreconditionError, TruncatedRegionError
from .analytic import AnalyticDistribution, LaplaceReport, OVERFLOW_LOG

# Discretization refuses to cut off more than this much mass unless told to.
MAX_CUTOFF_TAIL = 0.01
_GRID_EPS = 1e-9


@dataclass(frozen=True, eq=False)
class LatticeDistribution:
    step: float
    masses: np.ndarray
    log_tail: np.ndarray
    origin: float = 0.0
    deficit: float = 0.0
    provenance: dict[str, Any] | None = field(default=None)

    def __post_init__(self):
        m = np.ascontiguousarray(self.masses, dtype=float)
        lt = np.ascontiguousarray(self.log_tail, dtype=float)
        m.setflags(write=False)
        lt.setflags(write=False)
        object.__setattr__(self, "masses", m)
        object.__setattr__(self, "log_tail", lt)
        if not self.step > 0:
            raise PreconditionError("lattice step must be positive")
        if m.ndim != 1 or m.shape != lt.shape or m.size == 0:
            raise PreconditionError("masses and log_tail must be nonempty 1-D arrays of equal length")
        if np.any(m < 0):
            raise PreconditionError("lattice masses must be nonnegative")
        if self.deficit < 0:
            raise PreconditionError("deficit must be nonnegative")

    @classmethod
    def from_masses(cls, step: float, masses, origin: float = 0.0, deficit: float = 0.0,
                    provenance: dict | None = None) -> LatticeDistribution:
        masses = np.asarray(masses, dtype=float)
        return cls(step, masses, log_tail_from_masses(masses, deficit), origin, deficit, provenance)

    @classmethod
    def point_mass(cls, x: float = 0.0, step: float = 1.0) -> LatticeDistribution:
        k = int(round(x / step))
        masses = np.zeros(k + 1)
        masses[k] = 1.0
        return cls.from_masses(step, masses)

    @property
    def size(self) -> int:
        return int(self.masses.size)

    @property
    def grid(self) -> np.ndarray:
        return self.origin + self.step * np.arange(self.size)

    @property
    def end(self) -> float:
        return self.origin + self.step * (self.size - 1)

    @property
    def is_truncated(self) -> bool:
        return self.deficit > 0.0

    @property
    def total_mass(self) -> float:
        return math.fsum(self.masses) + self.deficit

    def index_of(self, x: float) -> int:
        """Index ``k`` with ``origin + k*step <= x < origin + (k+1)*step``."""
        return int(math.floor((x - self.origin) / self.step + _GRID_EPS))

    def log_tail_at(self, x) -> float | np.ndarray:
        xs = np.atleast_1d(np.asarray(x, dtype=float))
        out = np.empty_like(xs)
        head = float(np.logaddexp(safe_log(self.masses[0]), self.log_tail[0]))
        for i, xi in enumerate(xs):
            k = self.index_of(xi)
            if k < 0:
                out[i] = head
            elif k < self.size:
                out[i] = self.log_tail[k]
            elif self.is_truncated:
                raise TruncatedRegionError(
                    f"tail queried at x={xi} beyond truncation point {self.end} (deficit {self.deficit:.3g})")
            else:
                out[i] = -math.inf
        return float(out[0]) if np.ndim(x) == 0 else out

    def tail(self, x):
        return np.exp(self.log_tail_at(x))

    def tail_at_grid(self) -> np.ndarray:
        return np.exp(self.log_tail)

    def mean(self) -> float:
        return math.fsum(self.grid * self.masses)

    def expect(self, fn) -> float:
        """``sum_k fn(x_k) * mass_k`` over represented mass."""
        vals = np.asarray(fn(self.grid), dtype=float)
        return math.fsum(vals * self.masses)

    def laplace(self, gamma: float) -> LaplaceReport:
        warn: tuple[str, ...] = ()
        if gamma > 0 and self.is_truncated:
            warn = (f"truncation deficit {self.deficit:.3g} biases phi downward",)
        with np.errstate(divide="ignore"):
            lp = float(special.logsumexp(gamma * self.grid + safe_log(self.masses)))
        if gamma == 0 and not self.is_truncated:
            lp = 0.0
        if lp > OVERFLOW_LOG:
            return LaplaceReport(gamma, math.inf, math.inf, True, warn + ("overflow threshold exceeded",))
        return LaplaceReport(gamma, math.exp(lp), math.inf, False, warn)

    def shifted(self, offset: float) -> LatticeDistribution:
        """Law of ``X + offset``; ``offset`` must be a multiple of the step."""
        k = offset / self.step
        if abs(k - round(k)) > 1e-9:
            raise PreconditionError("shift must be a multiple of the lattice step")
        return LatticeDistribution(self.step, self.masses, self.log_tail, self.origin + round(k) * self.step,
                                   self.deficit, self.provenance)

    def check_invariants(self, rtol: float = 1e-10) -> None:
        if self.masses.sum() > 1.0 + 1e-12:
            raise AssertionError("masses sum above 1")
        if np.any(np.diff(self.log_tail) > 1e-12):
            raise AssertionError("log tail increases")
        rebuilt = log_tail_from_masses(self.masses, self.deficit)
        ok = self.log_tail > math.log(1e-300)
        lin = np.exp(self.log_tail[ok])
        if ok.any() and np.max(np.abs(np.exp(rebuilt[ok]) - lin) / lin) > rtol:
            raise AssertionError("log tail inconsistent with cumulated masses")

    def to_dict(self) -> dict[str, Any]:
        return {
            "step": self.step,
            "origin": self.origin,
            "deficit": self.deficit,
            "masses": self.masses.tolist(),
            "provenance": self.provenance,
        }


def discretize(d: AnalyticDistribution, step: float, cutoff: float,
               allow_heavy_truncation: bool = False) -> LatticeDistribution:
    """Upper-grid discretization of ``d`` on ``[0, cutoff]``.

    Cell ``(x_{k-1}, x_k]`` is moved to ``x_k``, so grid tails equal the
    analytic tails exactly; they are copied from ``d.log_tail`` rather than
    cumulated. Masses are formed from log-tail differences to keep far-tail
    relative accuracy.
    """
    if not step > 0:
        raise PreconditionError("step must be positive")
    if not cutoff > step:
        raise PreconditionError("cutoff must exceed step")
    k = int(math.ceil(cutoff / step - _GRID_EPS))
    grid = step * np.arange(k + 1)
    lt = np.asarray(d.log_tail(grid), dtype=float)
    deficit = float(np.exp(lt[-1]))
    if deficit > MAX_CUTOFF_TAIL and not allow_heavy_truncation:
        raise PreconditionError(
            f"tail at cutoff {grid[-1]} is {deficit:.3g} > {MAX_CUTOFF_TAIL}; raise the cutoff or allow truncation")
    masses = np.empty(k + 1)
    masses[0] = -np.expm1(lt[0])
    with np.errstate(invalid="ignore"):
        diff = lt[:-1] - lt[1:]
        masses[1:] = np.where(np.isneginf(lt[:-1]), 0.0, np.exp(lt[1:]) * np.expm1(diff))
    masses[1:] = np.where(np.isneginf(lt[1:]) & np.isfinite(lt[:-1]), np.exp(lt[:-1]), masses[1:])
    masses = np.nan_to_num(masses, nan=0.0)
    return LatticeDistribution(step, masses, lt, 0.0, deficit,
                               {"distribution": d.to_dict(), "cutoff": float(grid[-1])})


def lattice_from_points(values, probs, step: float = 1.0) -> LatticeDistribution:
    """Exact lattice for a finite law whose atoms sit on the grid."""
    values = np.asarray(values, dtype=float)
    idx = np.rint(values / step).astype(int)
    if np.any(np.abs(idx * step - values) > 1e-9 * max(1.0, step)) or np.any(idx < 0):
        raise PreconditionError("atoms must be nonnegative multiples of the step")
    masses = np.zeros(idx.max() + 1)
    np.add.at(masses, idx, np.asarray(probs, dtype=float))
    return LatticeDistribution.from_masses(step, masses)
