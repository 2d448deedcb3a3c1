"""Translation-invariant finite-state Markov chains on R^d.

A chain is a finite set of increments ``y_i`` with probabilities ``alpha_i``
and a base time step ``h``; the time index set is ``I = h*N0``.  Composition
over ``n`` base steps is performed exactly on the integer key lattice when
the increments admit one (the cubature-derived chains always do), so equal
increment sums recombine with no tolerance games.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, TYPE_CHECKING

import numpy as np

from .errors import (
    DimensionMismatch,
    NonPositiveStep,
    NonPositiveWeight,
    OverflowRisk,
    UnsupportedBasket,
    WeightSumOffByMoreThanTol,
)

if TYPE_CHECKING:  # pragma: no cover
    from .lattice import LatticeEmbedding

WEIGHT_SUM_TOL = 1e-12
COMPOSE_WEIGHT_TOL = 1e-10
MERGE_REL_TOL = 1e-12
DEFAULT_PATH_CAP = 1_000_000


@dataclass(frozen=True)
class ChainSpec:
    """Base chain: increments ``y_i`` (m, d), weights ``alpha_i`` (m,), step h.

    Instances should be built through :func:`validate_chain` (or the
    :func:`chain_spec` shorthand) so the sign flags are populated and the
    arrays are frozen.
    """

    d: int
    h: float
    increments: np.ndarray
    weights: np.ndarray
    all_increments_nonneg: bool = False
    contains_zero: bool = False
    has_nonpos_increment: bool = False
    embedding: "LatticeEmbedding | None" = field(default=None, repr=False)

    @property
    def m(self) -> int:
        return self.increments.shape[0]

    def with_embedding(self, emb: "LatticeEmbedding") -> "ChainSpec":
        return replace(self, embedding=emb)


def chain_spec(increments, weights, h: float) -> ChainSpec:
    """Build and validate a ChainSpec from plain sequences."""
    inc = np.atleast_2d(np.asarray(increments, dtype=float))
    if inc.ndim != 2:
        raise DimensionMismatch(f"increments must be an (m, d) array, got shape {inc.shape}")
    w = np.asarray(weights, dtype=float).reshape(-1)
    return validate_chain(ChainSpec(d=inc.shape[1], h=float(h), increments=inc, weights=w))


def validate_chain(raw: ChainSpec) -> ChainSpec:
    """Check invariants, compute sign flags, freeze the arrays."""
    inc = np.array(raw.increments, dtype=float)
    w = np.array(raw.weights, dtype=float)
    if raw.h <= 0.0 or not math.isfinite(raw.h):
        raise NonPositiveStep(f"base step h must be > 0, got {raw.h}")
    if inc.ndim != 2 or inc.shape[1] != raw.d:
        raise DimensionMismatch(
            f"increments shape {inc.shape} does not match dimension d={raw.d}"
        )
    if inc.shape[0] < 1:
        raise DimensionMismatch("need at least one increment")
    if w.shape != (inc.shape[0],):
        raise DimensionMismatch(
            f"{inc.shape[0]} increments but {w.shape[0]} weights"
        )
    if np.any(w <= 0.0):
        raise NonPositiveWeight(f"weights must be strictly positive, got {w.tolist()}")
    s = math.fsum(w.tolist())
    if abs(s - 1.0) > WEIGHT_SUM_TOL:
        raise WeightSumOffByMoreThanTol(f"weights sum to {s!r}, off by {abs(s - 1.0):.3e}")
    inc.setflags(write=False)
    w.setflags(write=False)
    return ChainSpec(
        d=raw.d,
        h=float(raw.h),
        increments=inc,
        weights=w,
        all_increments_nonneg=bool(np.all(inc >= 0.0)),
        contains_zero=bool(np.any(np.all(inc == 0.0, axis=1))),
        has_nonpos_increment=bool(np.any(np.all(inc <= 0.0, axis=1))),
        embedding=raw.embedding,
    )


# --------------------------------------------------------------------------
# Integer-lattice fit (increments as b + scale * integer offsets)
# --------------------------------------------------------------------------

def _float_gcd(values, tol: float) -> float:
    """Greatest common divisor of positive floats up to tol (0.0 if empty)."""
    g = 0.0
    for v in values:
        a, b = g, abs(float(v))
        while b > tol:
            a, b = b, math.fmod(a, b)
        g = a
    return g


def fit_lattice(increments: np.ndarray, tol: float = 1e-10):
    """Fit ``y_i = b + scale * kappa_i`` with integer offsets kappa.

    Uses ``b = y_1`` and the per-coordinate gcd of the remaining differences
    as the smallest admissible scale.  Returns ``(b, scale, kappa)`` or None
    when some coordinate has no integer structure within ``tol``.
    """
    inc = np.asarray(increments, dtype=float)
    m, d = inc.shape
    b = inc[0].copy()
    diffs = inc - b
    scale = np.ones(d)
    kappa = np.zeros((m, d), dtype=np.int64)
    for j in range(d):
        col = diffs[:, j]
        nonzero = np.abs(col[np.abs(col) > tol])
        if nonzero.size == 0:
            continue  # degenerate coordinate: scale 1, all offsets 0
        g = _float_gcd(sorted(nonzero.tolist()), tol)
        if g <= tol:
            return None
        k = np.rint(col / g)
        if np.max(np.abs(col - k * g)) >= tol:
            return None
        scale[j] = g
        kappa[:, j] = k.astype(np.int64)
    return b, scale, kappa


# --------------------------------------------------------------------------
# Composition (Chapman-Kolmogorov)
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ComposedChain:
    """The n-step chain: all n-fold increment sums, duplicates merged."""

    n: int
    t: float
    increments: np.ndarray  # (M, d)
    weights: np.ndarray     # (M,)
    keys: np.ndarray | None = None  # (M, d) integer offsets when lattice-exact

    @property
    def m(self) -> int:
        return self.increments.shape[0]


def _compose_on_lattice(spec: ChainSpec, n: int, b, scale, kappa) -> ComposedChain:
    # Convolve path weights on integer keys; iteration order is fixed by
    # sorting keys each step, so the merge is deterministic and exact.
    weights: dict[tuple, float] = {}
    for k, a in zip(map(tuple, kappa.tolist()), spec.weights.tolist()):
        weights[k] = weights.get(k, 0.0) + a
    acc = dict(weights)
    for _ in range(n - 1):
        nxt: dict[tuple, float] = {}
        for key in sorted(acc):
            wk = acc[key]
            for kap, a in zip(map(tuple, kappa.tolist()), spec.weights.tolist()):
                new = tuple(x + y for x, y in zip(key, kap))
                nxt[new] = nxt.get(new, 0.0) + wk * a
        acc = nxt
    keys = np.array(sorted(acc), dtype=np.int64).reshape(len(acc), spec.d)
    w = np.array([acc[tuple(k)] for k in keys.tolist()])
    inc = n * np.asarray(b)[None, :] + keys * np.asarray(scale)[None, :]
    return ComposedChain(n=n, t=n * spec.h, increments=inc, weights=w, keys=keys)


def _compose_by_merge(spec: ChainSpec, n: int, cap: int) -> ComposedChain:
    # Fallback for chains without a lattice embedding: quantized-coordinate
    # hashing with relative-tolerance snapping.
    if spec.m ** n > cap:
        raise OverflowRisk(
            f"composing {spec.m}^{n} paths exceeds cap {cap} and the chain has no lattice embedding"
        )
    span = float(np.max(np.abs(spec.increments))) * n
    q = MERGE_REL_TOL * max(1.0, span)
    acc: dict[tuple, tuple[np.ndarray, float]] = {
        tuple(np.rint(y / q).astype(np.int64).tolist()): (y.copy(), a)
        for y, a in zip(spec.increments, spec.weights.tolist())
    }
    for _ in range(n - 1):
        nxt: dict[tuple, tuple[np.ndarray, float]] = {}
        for key in sorted(acc):
            y0, w0 = acc[key]
            for y, a in zip(spec.increments, spec.weights.tolist()):
                z = y0 + y
                k = tuple(np.rint(z / q).astype(np.int64).tolist())
                if k in nxt:
                    nxt[k] = (nxt[k][0], nxt[k][1] + w0 * a)
                else:
                    nxt[k] = (z, w0 * a)
        acc = nxt
    items = [acc[k] for k in sorted(acc)]
    inc = np.array([it[0] for it in items])
    w = np.array([it[1] for it in items])
    return ComposedChain(n=n, t=n * spec.h, increments=inc, weights=w, keys=None)


def compose(spec: ChainSpec, n: int, cap: int = DEFAULT_PATH_CAP) -> ComposedChain:
    """All n-fold sums of base increments with path probabilities merged."""
    if n < 1:
        raise DimensionMismatch(f"compose needs n >= 1, got {n}")
    emb = spec.embedding
    if emb is not None:
        out = _compose_on_lattice(spec, n, emb.drift, emb.scale, emb.offsets)
    else:
        fit = fit_lattice(spec.increments)
        if fit is not None:
            out = _compose_on_lattice(spec, n, *fit)
        else:
            out = _compose_by_merge(spec, n, cap)
    total = math.fsum(out.weights.tolist())
    assert abs(total - 1.0) < COMPOSE_WEIGHT_TOL, f"composed weights sum to {total!r}"
    return out


def expected_value(spec: ChainSpec, n: int, f: Callable, x) -> float:
    """``P_{nh} f (x)``: the n-step expectation of f started at x.

    Summation is over the composed (merged) chain in fixed key order with
    compensated summation, so results are bit-reproducible.
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.shape != (spec.d,):
        raise DimensionMismatch(f"point has shape {x.shape}, chain dimension is {spec.d}")
    if n == 0:
        return float(f(x if spec.d > 1 else x[0]))
    comp = compose(spec, n)
    pts = x[None, :] + comp.increments
    args = pts if spec.d > 1 else pts[:, 0]
    vals = np.asarray([float(f(p)) for p in args], dtype=float)
    return math.fsum((comp.weights * vals).tolist())


def shifted_chain(spec: ChainSpec) -> ChainSpec:
    """Chain Q with increments ``y_i - min_i y_i`` (componentwise min).

    The result has all increments nonnegative and attains zero in every
    coordinate; its Bellman values dominate the original chain's.
    """
    lo = np.min(spec.increments, axis=0)
    return chain_spec(spec.increments - lo[None, :], spec.weights, spec.h)


# --------------------------------------------------------------------------
# Growth factors of the basket under the chain
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class GrowthFactors:
    """Per-year constants with ``gamma0^t * fbar <= P_t fbar <= gamma1^t * fbar``."""

    gamma0: float
    gamma1: float
    exact: bool
    note: str

    @property
    def log_gamma0(self) -> float:
        return math.log(self.gamma0)

    @property
    def log_gamma1(self) -> float:
        return math.log(self.gamma1)


def coordinate_factors(spec: ChainSpec) -> np.ndarray:
    """Per-coordinate one-step factors ``sum_i alpha_i exp((y_i)_j)``."""
    return spec.weights @ np.exp(spec.increments)


def growth_factors(spec: ChainSpec, fbar) -> GrowthFactors:
    """Growth factor pair for a basket (see payoff module for the baskets).

    exp and equal-factor weighted sums get the exact eigenfactor; max/min
    baskets get the product-form bounds (the lower one is a derived bound,
    the paper does not supply one).
    """
    kind = getattr(fbar, "kind", None)
    h = spec.h
    if kind == "exp1d":
        if spec.d != 1:
            raise UnsupportedBasket(f"exp1d basket needs d=1, chain has d={spec.d}")
        c = float(coordinate_factors(spec)[0])
        g = c ** (1.0 / h)
        return GrowthFactors(g, g, exact=True, note="exact eigenfactor")
    if kind == "weighted_sum_exp":
        c = coordinate_factors(spec)
        cmin, cmax = float(np.min(c)), float(np.max(c))
        if cmax - cmin <= 1e-12 * max(1.0, cmax):
            g = cmax ** (1.0 / h)
            return GrowthFactors(g, g, exact=True, note="exact eigenfactor (equal coordinate factors)")
        return GrowthFactors(
            cmin ** (1.0 / h),
            cmax ** (1.0 / h),
            exact=False,
            note="derived bound (unequal coordinate factors)",
        )
    if kind in ("max_exp", "min_exp"):
        e = np.exp(spec.increments)
        up = float(spec.weights @ np.max(e, axis=1)) ** (1.0 / h)
        lo = float(spec.weights @ np.min(e, axis=1)) ** (1.0 / h)
        exact = spec.d == 1
        note = "exact eigenfactor" if exact else "gamma1 per the max-basket bound; gamma0 is a derived bound"
        return GrowthFactors(lo, up, exact=exact, note=note)
    raise UnsupportedBasket(f"unknown basket {fbar!r}")
