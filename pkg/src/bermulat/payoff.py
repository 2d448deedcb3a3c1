"""Payoffs g = K - fbar (puts) / fbar - K (calls) and exercise regions.

Baskets map log-price vectors to a basket value.  The closed-form exercise
regions (the start points from which exercise has positive probability over
a horizon) exist for the 1-d exponential and the max-exponential basket;
everything else is predicate-only via the sign of ``P_t(g v 0) - P_t g``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .chain import ChainSpec
from .errors import DimensionMismatch, UnsupportedCombination, WeightSumOffByMoreThanTol


def _coords(x, d: int) -> list[np.ndarray]:
    """Split points of shape (..., d) — or (...,) when d=1 — into coordinate arrays."""
    a = np.asarray(x, dtype=float)
    if d == 1:
        if a.ndim and a.shape[-1] == 1:
            return [a[..., 0]]
        return [a]
    if a.ndim == 0 or a.shape[-1] != d:
        raise DimensionMismatch(f"points of shape {a.shape} do not match dimension d={d}")
    return [a[..., j] for j in range(d)]


# --------------------------------------------------------------------------
# Baskets
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Exp1D:
    kind: str = "exp1d"
    d: int = 1

    def value_from_coords(self, coords):
        return np.exp(coords[0])


@dataclass(frozen=True)
class MaxExp:
    d: int = 2
    kind: str = "max_exp"

    def value_from_coords(self, coords):
        out = np.exp(coords[0])
        for c in coords[1:]:
            out = np.maximum(out, np.exp(c))
        return out


@dataclass(frozen=True)
class MinExp:
    d: int = 2
    kind: str = "min_exp"

    def value_from_coords(self, coords):
        out = np.exp(coords[0])
        for c in coords[1:]:
            out = np.minimum(out, np.exp(c))
        return out


@dataclass(frozen=True)
class WeightedSumExp:
    weights: tuple
    kind: str = "weighted_sum_exp"

    @property
    def d(self) -> int:
        return len(self.weights)

    def value_from_coords(self, coords):
        out = self.weights[0] * np.exp(coords[0])
        for w, c in zip(self.weights[1:], coords[1:]):
            out = out + w * np.exp(c)
        return out


BASKETS = (Exp1D, MaxExp, MinExp, WeightedSumExp)


@dataclass(frozen=True)
class PayoffSpec:
    """side put/call, strike K >= 0, basket fbar.  g is K - fbar or fbar - K."""

    side: str
    strike: float
    fbar: object

    def __post_init__(self):
        if self.side not in ("put", "call"):
            raise UnsupportedCombination(f"side must be 'put' or 'call', got {self.side!r}")
        if self.strike < 0.0:
            raise UnsupportedCombination(f"strike must be >= 0, got {self.strike}")
        if isinstance(self.fbar, WeightedSumExp):
            w = np.asarray(self.fbar.weights, dtype=float)
            if np.any(w < 0.0) or abs(float(np.sum(w)) - 1.0) > 1e-12:
                raise WeightSumOffByMoreThanTol(
                    f"basket weights must be convex, got {w.tolist()}"
                )

    @property
    def d(self) -> int:
        return self.fbar.d

    @property
    def g_monotone(self) -> str:
        """g is decreasing for puts, increasing for calls."""
        return "decreasing" if self.side == "put" else "increasing"

    @property
    def log_strike(self) -> float:
        return math.log(self.strike) if self.strike > 0.0 else -math.inf

    def fbar_value(self, x):
        return self.fbar.value_from_coords(_coords(x, self.d))

    def g_from_coords(self, coords):
        v = self.fbar.value_from_coords(coords)
        return self.strike - v if self.side == "put" else v - self.strike

    def gv0_from_coords(self, coords):
        return np.maximum(self.g_from_coords(coords), 0.0)


def evaluate_g(p: PayoffSpec, x):
    """g(x); vectorized over leading axes."""
    return p.g_from_coords(_coords(x, p.d))


def evaluate_gv0(p: PayoffSpec, x):
    """(g v 0)(x), the payoff actually received on exercise."""
    return np.maximum(evaluate_g(p, x), 0.0)


# --------------------------------------------------------------------------
# Regions
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class HalfLine:
    """Open half line (lo, +inf) in d=1."""

    lo: float

    def contains(self, x):
        return _coords(x, 1)[0] > self.lo


@dataclass(frozen=True)
class UnionOfUpperHalfSpaces:
    """Union over coordinates j of {x_j > c_j} (strict)."""

    thresholds: tuple

    def contains(self, x):
        coords = _coords(x, len(self.thresholds))
        out = coords[0] > self.thresholds[0]
        for c, t in zip(coords[1:], self.thresholds[1:]):
            out = out | (c > t)
        return out


@dataclass(frozen=True)
class Box:
    """Closed axis-aligned box [lo, hi]."""

    lo: tuple
    hi: tuple

    def __post_init__(self):
        if len(self.lo) != len(self.hi) or any(a > b for a, b in zip(self.lo, self.hi)):
            raise DimensionMismatch(f"bad box lo={self.lo} hi={self.hi}")

    @property
    def d(self) -> int:
        return len(self.lo)

    def contains(self, x):
        coords = _coords(x, self.d)
        out = (coords[0] >= self.lo[0]) & (coords[0] <= self.hi[0])
        for j in range(1, self.d):
            out = out & (coords[j] >= self.lo[j]) & (coords[j] <= self.hi[j])
        return out


@dataclass(frozen=True)
class Intersection:
    parts: tuple

    def contains(self, x):
        out = self.parts[0].contains(x)
        for p in self.parts[1:]:
            out = out & p.contains(x)
        return out


def exercise_probability_gap(p: PayoffSpec, chain: ChainSpec, t: float, x):
    """``P_t(g v 0)(x) - P_t g(x)`` — positive exactly on E^t (predicate form)."""
    from .chain import compose  # local import to keep module load light

    n = _steps(chain, t)
    comp = compose(chain, n)
    pts = np.asarray(x, dtype=float)
    if p.d == 1 and (pts.ndim == 0 or pts.shape[-1] != 1):
        pts = pts[..., None]
    shifted = pts[..., None, :] + comp.increments  # (..., M, d)
    coords = [shifted[..., j] for j in range(p.d)]
    g = p.g_from_coords(coords)
    gap = np.maximum(g, 0.0) - g  # = (g v 0) - g = -(g ^ 0)
    return gap @ comp.weights


def _steps(chain: ChainSpec, t: float) -> int:
    n = t / chain.h
    k = round(n)
    if k < 1 or abs(n - k) > 1e-9 * max(1.0, abs(n)):
        raise DimensionMismatch(f"horizon t={t} is not a positive multiple of h={chain.h}")
    return k


def exercise_region(p: PayoffSpec, chain: ChainSpec, t: float):
    """Closed form for E^t = {P_t(g v 0) > P_t g}.

    Put + exp1d gives an open half line, put + max-exp a union of upper
    half spaces; anything else has no closed form here (sample the
    predicate instead).  Boundary points belong to the complement.
    """
    n = _steps(chain, t)
    if p.side != "put":
        raise UnsupportedCombination("closed-form regions are implemented for puts only")
    lnk = p.log_strike
    if isinstance(p.fbar, Exp1D):
        max_y = float(np.max(chain.increments[:, 0]))
        return HalfLine(lnk - n * max_y)
    if isinstance(p.fbar, MaxExp):
        max_y = np.max(chain.increments, axis=0)
        return UnionOfUpperHalfSpaces(tuple(lnk - n * float(v) for v in max_y))
    raise UnsupportedCombination(
        f"no closed-form region for basket {p.fbar.kind}; use exercise_probability_gap"
    )


def region_measure_bound(p: PayoffSpec, chain: ChainSpec, s: float, box: Box | None = None) -> float:
    """Measure bound for the band {e^{rs} g > P_s(g v 0) > P_s g}.

    d=1: the band is an interval of width at most ``s * max_i y_i / h``.
    max-exp with a box B inside [lnK-R, lnK+R]^d: ``s * R^{d-1} / h *
    sum_j (max_i (y_i)_j v 0)``.
    """
    _steps(chain, s)
    if p.side != "put":
        raise UnsupportedCombination("measure bounds are implemented for puts only")
    if isinstance(p.fbar, Exp1D):
        max_y = float(np.max(chain.increments[:, 0]))
        return s * max(max_y, 0.0) / chain.h
    if isinstance(p.fbar, MaxExp):
        if box is None:
            raise UnsupportedCombination("max-exp measure bound needs a compact box")
        lnk = p.log_strike
        r_box = max(
            max(abs(lo - lnk), abs(hi - lnk)) for lo, hi in zip(box.lo, box.hi)
        )
        col_max = np.maximum(np.max(chain.increments, axis=0), 0.0)
        return s * r_box ** (p.d - 1) * float(np.sum(col_max)) / chain.h
    raise UnsupportedCombination(f"no measure bound for basket {p.fbar.kind}")
