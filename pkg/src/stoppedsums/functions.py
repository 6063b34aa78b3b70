"""Real functions on the half-line used as moment weights and witnesses.

``Elementary`` covers the closed forms that appear as inputs (powers,
logarithms, linear maps). ``PiecewiseFunction`` holds the objects the
builders produce: on each interval ``(x_i, x_{i+1}]`` it is

    v_i + eps_i * min(s_i * (x - x_i), base(x) - base(x_i))

which reduces to a straight line when there is no base function. The last
piece extends to infinity. ``SmoothedFunction`` is the unit-window average
of a piecewise linear function, and ``Composition`` is ``outer(inner(x)) +
offset``.
"""

from __future__ import annotations

import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .errors import PreconditionError

_KNOT_TOL = 1e-9


def _out(v):
    v = np.asarray(v, dtype=float)
    return float(v) if v.ndim == 0 else v


def _enc(v: float):
    return v if math.isfinite(v) else ("inf" if v > 0 else "-inf")


def _dec(v) -> float:
    return float(v)


class RealFunction(ABC):
    """Vectorized real function with one-sided derivatives."""

    @abstractmethod
    def __call__(self, x): ...

    @abstractmethod
    def derivative(self, x, side: str = "left"): ...

    @abstractmethod
    def to_dict(self) -> dict[str, Any]: ...


_KINDS = ("power", "log1p", "log", "linear", "const")


@dataclass(frozen=True)
class Elementary(RealFunction):
    """``coef * u(x) + shift`` with ``u`` one of power, log1p, log, linear, const.

    ``power`` is ``max(x, 0)**exponent``; ``log1p`` is ``log(1 + x)`` and
    ``-inf`` for ``x <= -1``.
    """

    kind: str
    coef: float = 1.0
    exponent: float = 1.0
    shift: float = 0.0

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise PreconditionError(f"unknown function kind {self.kind!r}; expected one of {_KINDS}")

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            if self.kind == "power":
                u = np.maximum(x, 0.0) ** self.exponent
            elif self.kind == "log1p":
                u = np.where(x > -1.0, np.log1p(np.maximum(x, -1.0 + 1e-300)), -np.inf)
            elif self.kind == "log":
                u = np.where(x > 0, np.log(np.where(x > 0, x, 1.0)), -np.inf)
            elif self.kind == "linear":
                u = x
            else:
                u = np.zeros_like(x)
        return _out(self.coef * u + self.shift)

    def derivative(self, x, side: str = "left"):
        x = np.asarray(x, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            if self.kind == "power":
                p = self.exponent
                xc = np.maximum(x, 0.0)
                if p < 1:
                    d = np.where(xc > 0, p * xc ** (p - 1.0), np.inf)
                else:
                    d = p * xc ** (p - 1.0)
                if side == "left":
                    d = np.where(x <= 0, 0.0, d)
            elif self.kind == "log1p":
                d = np.where(x > -1.0, 1.0 / (1.0 + x), np.inf)
            elif self.kind == "log":
                d = np.where(x > 0, 1.0 / np.where(x > 0, x, 1.0), np.inf)
            elif self.kind == "linear":
                d = np.ones_like(x)
            else:
                d = np.zeros_like(x)
        return _out(self.coef * d)

    @property
    def is_concave(self) -> bool:
        if self.kind in ("linear", "const"):
            return True
        if self.kind == "power":
            return (self.coef >= 0 and self.exponent <= 1) or (self.coef <= 0 and self.exponent >= 1)
        return self.coef >= 0

    def to_dict(self):
        return {"type": "elementary", "kind": self.kind, "coef": self.coef,
                "exponent": self.exponent, "shift": self.shift}


@dataclass(frozen=True)
class SumFunction(RealFunction):
    terms: tuple[RealFunction, ...]

    def __call__(self, x):
        return _out(sum(np.asarray(t(x), dtype=float) for t in self.terms))

    def derivative(self, x, side: str = "left"):
        return _out(sum(np.asarray(t.derivative(x, side), dtype=float) for t in self.terms))

    def to_dict(self):
        return {"type": "sum", "terms": [t.to_dict() for t in self.terms]}


@dataclass(frozen=True)
class Composition(RealFunction):
    """``outer(inner(x)) + offset``."""

    outer: RealFunction
    inner: RealFunction
    offset: float = 0.0

    def __call__(self, x):
        return _out(np.asarray(self.outer(self.inner(x)), dtype=float) + self.offset)

    def derivative(self, x, side: str = "left"):
        # Valid for nondecreasing inner functions, the only ones used here.
        u = self.inner(x)
        return _out(np.asarray(self.outer.derivative(u, side)) * np.asarray(self.inner.derivative(x, side)))

    def to_dict(self):
        return {"type": "composition", "outer": self.outer.to_dict(), "inner": self.inner.to_dict(),
                "offset": self.offset}


@dataclass(frozen=True, eq=False)
class PiecewiseFunction(RealFunction):
    knots: np.ndarray
    values: np.ndarray
    slopes: np.ndarray
    shape: str = "linear"
    eps: np.ndarray | None = None
    base: RealFunction | None = None
    aux: dict[str, Any] = field(default_factory=dict)
    offsets: np.ndarray | None = None

    def __post_init__(self):
        knots = np.asarray(self.knots, dtype=float)
        values = np.asarray(self.values, dtype=float)
        slopes = np.asarray(self.slopes, dtype=float)
        if knots.ndim != 1 or knots.size == 0 or values.shape != knots.shape or slopes.shape != knots.shape:
            raise PreconditionError("knots, values and slopes must be 1-D arrays of equal length")
        if np.any(np.diff(knots) <= 0):
            raise PreconditionError("knots must be strictly increasing")
        if self.shape not in ("concave", "convex", "linear"):
            raise PreconditionError(f"unknown shape {self.shape!r}")
        eps = np.ones_like(knots) if self.eps is None else np.asarray(self.eps, dtype=float)
        if eps.shape != knots.shape:
            raise PreconditionError("eps must have one entry per piece")
        if self.base is None and not np.all(np.isfinite(slopes)):
            raise PreconditionError("infinite slopes need a base function")
        if self.offsets is not None:
            offsets = np.asarray(self.offsets, dtype=float)
        elif self.base is not None:
            offsets = np.asarray(self.base(knots), dtype=float)
        else:
            offsets = np.zeros_like(knots)
        for name, arr in (("knots", knots), ("values", values), ("slopes", slopes), ("eps", eps)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        offsets.setflags(write=False)
        object.__setattr__(self, "offsets", offsets)

    @classmethod
    def linear(cls, knots, values, shape: str | None = None, aux=None) -> PiecewiseFunction:
        """Continuous piecewise linear interpolant, extended by the last slope."""
        knots = np.asarray(knots, dtype=float)
        values = np.asarray(values, dtype=float)
        if np.any(np.diff(knots) <= 0):
            raise PreconditionError("knots must be strictly increasing")
        s = np.diff(values) / np.diff(knots)
        slopes = np.append(s, s[-1] if s.size else 0.0)
        if shape is None:
            d = np.diff(slopes)
            shape = "concave" if np.all(d <= 0) else "convex" if np.all(d >= 0) else "linear"
        return cls(knots, values, slopes, shape, aux=dict(aux or {}))

    @property
    def n_pieces(self) -> int:
        return int(self.knots.size)

    def piece_index(self, x) -> np.ndarray:
        i = np.searchsorted(self.knots, np.asarray(x, dtype=float), side="left") - 1
        return np.clip(i, 0, self.knots.size - 1)

    def _piece_terms(self, x, i):
        dx = x - self.knots[i]
        s = self.slopes[i]
        with np.errstate(invalid="ignore"):
            lin = np.where(dx == 0, 0.0, s * dx)
        if self.base is None:
            return lin, None
        b = np.asarray(self.base(x), dtype=float) - self.offsets[i]
        return lin, b

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        i = self.piece_index(x)
        lin, b = self._piece_terms(x, i)
        inc = lin if b is None else np.minimum(lin, b)
        v = self.values[i] + self.eps[i] * inc
        # Stored knot values are returned verbatim.
        j = np.clip(np.searchsorted(self.knots, x), 0, self.knots.size - 1)
        v = np.where(self.knots[j] == x, self.values[j], v)
        return _out(v)

    def derivative(self, x, side: str = "left"):
        x = np.asarray(x, dtype=float)
        if side == "left":
            i = self.piece_index(x)
        else:
            i = np.clip(np.searchsorted(self.knots, x, side="right") - 1, 0, self.knots.size - 1)
        lin, b = self._piece_terms(x, i)
        s = self.slopes[i]
        if b is None:
            return _out(self.eps[i] * s)
        db = np.asarray(self.base.derivative(x, side), dtype=float)
        at_knot = x == self.knots[i]
        tie = np.isclose(lin, b, rtol=1e-13, atol=1e-15) | at_knot
        pick = np.where(lin < b, s, db)
        pick = np.where(tie, np.maximum(s, db) if side == "left" else np.minimum(s, db), pick)
        return _out(self.eps[i] * pick)

    def knot_slopes(self) -> tuple[np.ndarray, np.ndarray]:
        """Left and right derivatives at every knot after the first."""
        k = self.knots[1:]
        return np.atleast_1d(self.derivative(k, "left")), np.atleast_1d(self.derivative(k, "right"))

    def check_shape(self, grid=None, tol: float = 1e-9) -> dict[str, bool]:
        """Structural checks: continuity at knots and slope monotonicity."""
        flags: dict[str, bool] = {}
        k = self.knots[1:]
        if k.size:
            i = np.arange(k.size)
            lin, b = self._piece_terms(k, i)
            inc = lin if b is None else np.minimum(lin, b)
            left_vals = self.values[i] + self.eps[i] * inc
            scale = np.maximum(1.0, np.abs(self.values[1:]))
            flags["continuous"] = bool(np.all(np.abs(left_vals - self.values[1:]) <= tol * scale))
        else:
            flags["continuous"] = True
        if self.shape != "linear" or self.base is None:
            left, right = self.knot_slopes()
            finite = np.isfinite(left) & np.isfinite(right)
            if self.shape == "concave":
                flags["slopes_monotone"] = bool(np.all(right[finite] <= left[finite] + tol))
                flags["eps_in_unit_interval"] = bool(np.all((self.eps > 0) & (self.eps <= 1)))
            elif self.shape == "convex":
                flags["slopes_monotone"] = bool(np.all(np.diff(self.eps * self.slopes) >= -tol))
        if grid is not None and self.shape in ("concave", "convex"):
            x = np.unique(np.asarray(grid, dtype=float))
            y = np.asarray(self(x))
            sl = np.diff(y) / np.diff(x)
            d = np.diff(sl)
            flags["grid_" + self.shape] = bool(np.all(d <= tol * (1 + np.abs(sl[1:]))) if self.shape == "concave"
                                               else np.all(d >= -tol * (1 + np.abs(sl[1:]))))
        return flags

    # Piecewise linear helpers.

    def _require_linear(self):
        if self.base is not None:
            raise PreconditionError("operation defined for piecewise linear functions only")

    def antiderivative(self, x):
        """``int_{x_0}^x`` of the function, for piecewise linear functions."""
        self._require_linear()
        x = np.asarray(x, dtype=float)
        widths = np.diff(self.knots)
        areas = self.values[:-1] * widths + 0.5 * self.eps[:-1] * self.slopes[:-1] * widths**2
        cum = np.concatenate([[0.0], np.cumsum(areas)])
        i = self.piece_index(x)
        dx = x - self.knots[i]
        return _out(cum[i] + self.values[i] * dx + 0.5 * self.eps[i] * self.slopes[i] * dx**2)

    def integral(self, a, b):
        return _out(np.asarray(self.antiderivative(b)) - np.asarray(self.antiderivative(a)))

    def inverse(self, y):
        """Inverse of an increasing piecewise linear function."""
        self._require_linear()
        if np.any(self.slopes * self.eps <= 0):
            raise PreconditionError("inverse needs strictly positive slopes")
        y = np.asarray(y, dtype=float)
        i = np.clip(np.searchsorted(self.values, y, side="left") - 1, 0, self.knots.size - 1)
        return _out(self.knots[i] + (y - self.values[i]) / (self.eps[i] * self.slopes[i]))

    def to_dict(self) -> dict[str, Any]:
        return {
            "type": "piecewise",
            "knots": [_enc(v) for v in self.knots.tolist()],
            "values": [_enc(v) for v in self.values.tolist()],
            "slopes": [_enc(v) for v in self.slopes.tolist()],
            "shape": self.shape,
            "eps": self.eps.tolist(),
            "base": None if self.base is None else self.base.to_dict(),
            "aux": {k: ([_enc(float(u)) for u in v] if isinstance(v, (list, tuple, np.ndarray)) else v)
                    for k, v in self.aux.items()},
            "offsets": [_enc(v) for v in self.offsets.tolist()],
        }


@dataclass(frozen=True, eq=False)
class SmoothedFunction(RealFunction):
    """``int_x^{x+w} p(y) dy / w - int_0^w p(y) dy / w`` for piecewise linear ``p``.

    With ``w = 1`` this is the unit-window smoothing that turns a piecewise
    linear ``p`` with slopes at most 1 into a smooth function with the same
    slope bound and value 0 at the origin.
    """

    inner: PiecewiseFunction
    window: float = 1.0

    def __post_init__(self):
        self.inner._require_linear()

    def _window_integral(self, x: np.ndarray) -> np.ndarray:
        # trapezoids in offsets from x: exact for linear pieces and free of the
        # cancellation an antiderivative difference suffers at large x
        p, w = self.inner, self.window
        kn = p.knots

        def value_at(t):
            # p(x + t) evaluated from the piece containing x + t, using offsets
            i = p.piece_index(x + t)
            return p.values[i] + p.eps[i] * p.slopes[i] * ((x - kn[i]) + t)

        lo = np.searchsorted(kn, x, side="right")
        hi = np.searchsorted(kn, x + w, side="left")
        t_prev = np.zeros_like(x)
        v_prev = value_at(t_prev)
        total = np.zeros_like(x)
        for j in range(int(np.max(hi - lo, initial=0))):
            k = lo + j
            inside = k < hi
            kk = np.minimum(k, kn.size - 1)
            t = np.where(inside, kn[kk] - x, t_prev)
            v = np.where(inside, p.values[kk], v_prev)
            total += 0.5 * (v + v_prev) * (t - t_prev)
            t_prev, v_prev = t, v
        t_end = np.full_like(x, w)
        total += 0.5 * (value_at(t_end) + v_prev) * (t_end - t_prev)
        return total

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        flat = np.atleast_1d(x)
        base = float(self._window_integral(np.zeros(1))[0])
        return _out(((self._window_integral(flat) - base) / self.window).reshape(x.shape))

    def derivative(self, x, side: str = "left"):
        x = np.asarray(x, dtype=float)
        return _out((np.asarray(self.inner(x + self.window)) - np.asarray(self.inner(x))) / self.window)

    def to_dict(self):
        return {"type": "smoothed", "inner": self.inner.to_dict(), "window": self.window}


def function_from_dict(spec: dict[str, Any]) -> RealFunction:
    kind = spec.get("type", "elementary")
    if kind == "elementary":
        return Elementary(spec["kind"], float(spec.get("coef", 1.0)), float(spec.get("exponent", 1.0)),
                          float(spec.get("shift", 0.0)))
    if kind == "sum":
        return SumFunction(tuple(function_from_dict(t) for t in spec["terms"]))
    if kind == "composition":
        return Composition(function_from_dict(spec["outer"]), function_from_dict(spec["inner"]),
                           float(spec.get("offset", 0.0)))
    if kind == "smoothed":
        inner = function_from_dict(spec["inner"])
        assert isinstance(inner, PiecewiseFunction)
        return SmoothedFunction(inner, float(spec.get("window", 1.0)))
    if kind == "piecewise":
        base = spec.get("base")
        return PiecewiseFunction(
            np.array([_dec(v) for v in spec["knots"]]),
            np.array([_dec(v) for v in spec["values"]]),
            np.array([_dec(v) for v in spec["slopes"]]),
            spec.get("shape", "linear"),
            None if spec.get("eps") is None else np.array(spec["eps"], dtype=float),
            None if base is None else function_from_dict(base),
            {k: ([_dec(u) for u in v] if isinstance(v, list) else v) for k, v in spec.get("aux", {}).items()},
            None if spec.get("offsets") is None else np.array([_dec(v) for v in spec["offsets"]]),
        )
    raise PreconditionError(f"unknown function type {kind!r}")


def parse_function(spec: str | dict[str, Any]) -> RealFunction:
    """Accepts a dict or a short string such as ``"x^0.5"``, ``"ln(1+x)"``, ``"ln x"``, ``"2"``."""
    if isinstance(spec, dict):
        return function_from_dict(spec)
    s = spec.replace(" ", "")
    if s in ("ln(1+x)", "log1p(x)"):
        return Elementary("log1p")
    if s in ("lnx", "log(x)", "ln(x)"):
        return Elementary("log")
    if s == "x":
        return Elementary("linear")
    if s.startswith("x^") or s.startswith("x**"):
        return Elementary("power", exponent=float(s.split("^")[-1].split("**")[-1]))
    try:
        return Elementary("const", shift=float(s))
    except ValueError:
        raise PreconditionError(f"cannot parse function {spec!r}") from None


__all__ = [
    "Composition",
    "Elementary",
    "PiecewiseFunction",
    "RealFunction",
    "SmoothedFunction",
    "SumFunction",
    "function_from_dict",
    "parse_function",
]
