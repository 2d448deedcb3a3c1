"""Recombining lattice and the Bellman-operator sweep.

The Bellman operator over a horizon ``t`` is ``B_t f = max(e^{-rt} P_t f, g)``;
a Bermudan value with N exercise dates is ``(B_{T/N})^N (g v 0)`` evaluated at
the anchor.  Increment sums recombine on a scaled integer lattice, so the node
count grows polynomially in the step count while the exhaustive tree oracle
(kept for cross-checking) grows exponentially.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .chain import ChainSpec, ComposedChain, _compose_on_lattice, compose, fit_lattice
from .errors import (
    DimensionMismatch,
    EmbeddingMissing,
    NoEmbedding,
    StepNotMultipleOfH,
    TooLarge,
)
from .payoff import PayoffSpec

EMBED_TOL = 1e-10
TREE_PATH_CAP = 10 ** 6
SPARSE_NODE_CAP = 500_000
DENSE_CELL_CAP = 5_000_000
CHUNK_CELLS = 4_000_000


@dataclass(frozen=True)
class LatticeEmbedding:
    """Affine map from integer keys to increments: ``y_i = drift + scale * offsets_i``.

    A node reached after n base steps with key k sits at
    ``x0 + n * drift + scale * k``.
    """

    drift: np.ndarray    # (d,)
    scale: np.ndarray    # (d,) strictly positive
    offsets: np.ndarray  # (m, d) int64
    approximate: bool = False

    @property
    def d(self) -> int:
        return self.drift.shape[0]

    def node_positions(self, anchor, n_steps: int, keys):
        keys = np.asarray(keys)
        return np.asarray(anchor, dtype=float) + n_steps * self.drift + keys * self.scale


def detect_embedding(chain: ChainSpec, tol: float = EMBED_TOL) -> LatticeEmbedding:
    """Fit the smallest per-coordinate scale snapping all increments to integers.

    Raises NoEmbedding when a coordinate has no integer structure within tol
    (e.g. incommensurable increments); callers may then fall back to
    quantized-coordinate hashing, flagged approximate.
    """
    if chain.embedding is not None:
        return chain.embedding
    fit = fit_lattice(chain.increments, tol)
    if fit is None:
        raise NoEmbedding(
            f"increments do not fit a scaled integer lattice at tol {tol:g}"
        )
    b, scale, kappa = fit
    resid = np.max(np.abs(chain.increments - (b + scale * kappa)))
    assert resid < EMBED_TOL, f"lattice fit residual {resid:.3e}"
    return LatticeEmbedding(drift=b, scale=scale, offsets=kappa)


def _approximate_embedding(chain: ChainSpec) -> LatticeEmbedding:
    span = float(np.max(np.abs(chain.increments)))
    quantum = 1e-12 * max(1.0, span)
    offsets = np.rint(chain.increments / quantum).astype(np.int64)
    return LatticeEmbedding(
        drift=np.zeros(chain.d),
        scale=np.full(chain.d, quantum),
        offsets=offsets,
        approximate=True,
    )


def _resolve_embedding(chain: ChainSpec) -> LatticeEmbedding:
    try:
        return detect_embedding(chain)
    except NoEmbedding:
        return _approximate_embedding(chain)


# --------------------------------------------------------------------------
# Node growth
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class NodeGrowth:
    distinct: int
    naive_paths: int
    ratio: float  # distinct / (2n+1)^d, the polynomial-growth witness


def _sumset(offsets: np.ndarray, n: int, cap: int = SPARSE_NODE_CAP) -> list[np.ndarray]:
    """Key sets reachable after 0..n applications of the offset set."""
    d = offsets.shape[1]
    offs = [tuple(o) for o in offsets.tolist()]
    layers = [np.zeros((1, d), dtype=np.int64)]
    cur = {(0,) * d}
    for _ in range(n):
        cur = {tuple(k + o for k, o in zip(key, off)) for key in cur for off in offs}
        if len(cur) > cap:
            raise TooLarge(f"reachable node set exceeds cap {cap}")
        layers.append(np.array(sorted(cur), dtype=np.int64).reshape(len(cur), d))
    return layers


def reachable_nodes(embedding: LatticeEmbedding, chain: ChainSpec, n: int) -> NodeGrowth:
    """Distinct recombined nodes after n base steps vs the naive m^n paths."""
    if n == 0:
        return NodeGrowth(1, 1, 1.0 / 1.0)
    layers = _sumset(embedding.offsets, n)
    distinct = layers[n].shape[0]
    return NodeGrowth(
        distinct=distinct,
        naive_paths=chain.m ** n,
        ratio=distinct / float((2 * n + 1) ** embedding.d),
    )


# --------------------------------------------------------------------------
# Value layers and the sweep
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ValueLayer:
    """Sparse value function at one exercise step: integer key -> price."""

    step: int                 # exercise-date index (0 = valuation date)
    base_steps: int           # base steps from the anchor to this layer
    keys: np.ndarray          # (n_nodes, d) int64
    values: np.ndarray        # (n_nodes,)
    anchor: np.ndarray        # (d,)
    embedding: LatticeEmbedding

    def positions(self) -> np.ndarray:
        return self.embedding.node_positions(self.anchor, self.base_steps, self.keys)

    def as_dict(self) -> dict:
        return {tuple(k): float(v) for k, v in zip(self.keys.tolist(), self.values)}


def _check_horizon(chain: ChainSpec, tau: float) -> int:
    q = tau / chain.h
    k = round(q)
    if k < 1 or abs(q - k) > 1e-9 * max(1.0, abs(q)):
        raise StepNotMultipleOfH(
            f"exercise step {tau} is not a positive integer multiple of h={chain.h}"
        )
    return k


def _composed_step(chain: ChainSpec, emb: LatticeEmbedding, q: int) -> ComposedChain:
    if q == 1:
        keys = emb.offsets
        order = np.lexsort(keys.T[::-1])
        return ComposedChain(
            n=1,
            t=chain.h,
            increments=chain.increments[order],
            weights=chain.weights[order],
            keys=keys[order],
        )
    return _compose_on_lattice(chain, q, emb.drift, emb.scale, emb.offsets)


def _anchor_array(x, d: int) -> np.ndarray:
    a = np.asarray(x, dtype=float)
    if d == 1:
        a = a.reshape(-1, 1)
    else:
        a = np.atleast_2d(a)
        if a.shape[1] != d:
            raise DimensionMismatch(f"anchors of shape {a.shape} do not match d={d}")
    return a


def _g_on_box(payoff, anchors, emb, base_steps, lo, shape):
    """g at the dense key box [lo, lo+shape-1]^d for each anchor (broadcast)."""
    nc, d = anchors.shape
    coords = []
    for a in range(d):
        keys = lo[a] + np.arange(shape[a])
        bshape = (1,) * (1 + a) + (shape[a],) + (1,) * (d - 1 - a)
        xa = anchors[:, a].reshape((nc,) + (1,) * d)
        coords.append(
            xa + base_steps * emb.drift[a] + emb.scale[a] * keys.reshape(bshape)
        )
    return payoff.g_from_coords(coords)


def _dense_sweep(chain, payoff, r, n_dates, q, anchors, emb) -> np.ndarray:
    """Backward induction on dense key boxes, vectorized over anchors."""
    comp = _composed_step(chain, emb, q)
    kmin = comp.keys.min(axis=0)
    kmax = comp.keys.max(axis=0)
    span = kmax - kmin
    d = chain.d
    tau = q * chain.h
    disc = math.exp(-r * tau)

    def box(j):
        lo = j * kmin
        shape = tuple(int(j * s) + 1 for s in span)
        return lo, shape

    lo_n, shape_n = box(n_dates)
    cells = int(np.prod(shape_n))
    chunk = max(1, CHUNK_CELLS // max(cells, 1))
    out = np.empty(anchors.shape[0])
    for start in range(0, anchors.shape[0], chunk):
        sub = anchors[start : start + chunk]
        nc = sub.shape[0]
        g_term = _g_on_box(payoff, sub, emb, n_dates * q, lo_n, shape_n)
        v = np.maximum(g_term, 0.0)  # terminal condition is g v 0
        for j in range(n_dates, 0, -1):
            lo_prev, shape_prev = box(j - 1)
            cont = np.zeros((nc,) + shape_prev)
            for key, w in zip(comp.keys.tolist(), comp.weights.tolist()):
                sl = tuple(
                    slice(int(k - km), int(k - km) + sz)
                    for k, km, sz in zip(key, kmin.tolist(), shape_prev)
                )
                cont += w * v[(slice(None), *sl)]
            g_prev = _g_on_box(payoff, sub, emb, (j - 1) * q, lo_prev, shape_prev)
            v = np.maximum(disc * cont, g_prev)  # intermediate max is with g
        out[start : start + chunk] = v.reshape(nc)
    return out


def _sparse_sweep(chain, payoff, r, n_dates, q, anchors, emb, keep_layers=False):
    """Backward induction on explicit reachable-key sets (any lattice)."""
    comp = _composed_step(chain, emb, q)
    layer_keys = _sumset(comp.keys, n_dates)
    index = [
        {tuple(k): i for i, k in enumerate(lk.tolist())} for lk in layer_keys
    ]
    gathers = []
    for j in range(1, n_dates + 1):
        prev = layer_keys[j - 1]
        idx = np.empty((comp.m, prev.shape[0]), dtype=np.int64)
        for i, off in enumerate(comp.keys.tolist()):
            for p, key in enumerate(prev.tolist()):
                idx[i, p] = index[j][tuple(k + o for k, o in zip(key, off))]
        gathers.append(idx)

    tau = q * chain.h
    disc = math.exp(-r * tau)
    nc = anchors.shape[0]

    def g_at(j, keys):
        pos = anchors[:, None, :] + (j * q) * emb.drift + keys[None, :, :] * emb.scale
        coords = [pos[..., a] for a in range(chain.d)]
        return payoff.g_from_coords(coords)

    layers_out = []
    g_term = g_at(n_dates, layer_keys[n_dates])
    v = np.maximum(g_term, 0.0)
    if keep_layers:
        layers_out.append((n_dates, layer_keys[n_dates], v.copy()))
    for j in range(n_dates, 0, -1):
        idx = gathers[j - 1]
        cont = np.zeros((nc, layer_keys[j - 1].shape[0]))
        for i, w in enumerate(comp.weights.tolist()):
            cont += w * v[:, idx[i]]
        v = np.maximum(disc * cont, g_at(j - 1, layer_keys[j - 1]))
        if keep_layers:
            layers_out.append((j - 1, layer_keys[j - 1], v.copy()))
    return (v[:, 0], layers_out) if keep_layers else (v[:, 0], None)


def bellman_sweep(
    chain: ChainSpec,
    payoff: PayoffSpec,
    r: float,
    n_dates: int,
    tau: float,
    anchor,
) -> list[ValueLayer]:
    """Full backward sweep, one ValueLayer per exercise date (index = step).

    Layer ``n_dates`` holds the terminal payoff ``g v 0`` on every node
    reachable in ``n_dates * tau/h`` base steps; layer ``j-1`` applies
    ``max(e^{-r tau} P_tau V_j, g)``.  The price is layer 0 at key 0.
    """
    if n_dates < 1:
        raise StepNotMultipleOfH(f"need at least one exercise date, got {n_dates}")
    q = _check_horizon(chain, tau)
    emb = _resolve_embedding(chain)
    anchors = _anchor_array(anchor, chain.d)
    if anchors.shape[0] != 1:
        raise DimensionMismatch("bellman_sweep takes a single anchor")
    _, raw_layers = _sparse_sweep(
        chain, payoff, r, n_dates, q, anchors, emb, keep_layers=True
    )
    layers = [
        ValueLayer(
            step=j,
            base_steps=j * q,
            keys=keys,
            values=vals[0],
            anchor=anchors[0],
            embedding=emb,
        )
        for j, keys, vals in raw_layers
    ]
    layers.sort(key=lambda L: L.step)
    return layers


def grid_prices(
    chain: ChainSpec,
    payoff: PayoffSpec,
    r: float,
    T: float,
    n_dates: int,
    anchors,
) -> np.ndarray:
    """Bermudan values ``(B_{T/N})^N (g v 0)`` at many anchors at once.

    Per-anchor lattices share their key structure (translation invariance),
    so the sweep is vectorized across anchors; dense key boxes are used when
    the composed offsets allow it.
    """
    if n_dates < 1:
        raise StepNotMultipleOfH(f"need at least one exercise date, got {n_dates}")
    q = _check_horizon(chain, T / n_dates)
    pts = _anchor_array(anchors, chain.d)
    emb = _resolve_embedding(chain)
    if emb.approximate and chain.m ** (n_dates * q) > TREE_PATH_CAP:
        raise EmbeddingMissing(
            "chain has no lattice embedding and the path count exceeds the cap"
        )
    comp = _composed_step(chain, emb, q)
    span = comp.keys.max(axis=0) - comp.keys.min(axis=0)
    cells = float(np.prod(n_dates * span.astype(float) + 1.0))
    if not emb.approximate and cells <= DENSE_CELL_CAP:
        return _dense_sweep(chain, payoff, r, n_dates, q, pts, emb)
    vals, _ = _sparse_sweep(chain, payoff, r, n_dates, q, pts, emb)
    return vals


def price_bermudan(
    chain: ChainSpec, payoff: PayoffSpec, r: float, T: float, n_dates: int, x0
) -> float:
    """Value of the Bermudan option with ``n_dates`` equidistant exercise dates."""
    return float(grid_prices(chain, payoff, r, T, n_dates, [x0] if chain.d == 1 else [list(np.atleast_1d(x0))])[0])


# --------------------------------------------------------------------------
# Dyadic refinement
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class DyadicTable:
    """Values V_n = (B_{T 2^-n})^{2^n}(g v 0) on a grid, one row per level."""

    levels: tuple
    grid: np.ndarray            # (G,) or (G, d)
    values: np.ndarray          # (L, G)
    diffs: np.ndarray           # (L-1, G): values[i+1] - values[i]


def dyadic_sequence(
    chain: ChainSpec,
    payoff: PayoffSpec,
    r: float,
    T: float,
    levels,
    grid,
) -> DyadicTable:
    """Bermudan values at exercise counts 2^n for n in levels (ascending)."""
    levels = tuple(int(n) for n in levels)
    if any(b <= a for a, b in zip(levels, levels[1:])):
        raise DimensionMismatch(f"levels must be strictly increasing, got {levels}")
    _check_horizon(chain, T * 2.0 ** (-max(levels)))
    pts = _anchor_array(grid, chain.d)
    rows = [grid_prices(chain, payoff, r, T, 2 ** n, pts) for n in levels]
    values = np.vstack(rows)
    return DyadicTable(
        levels=levels,
        grid=np.asarray(grid, dtype=float),
        values=values,
        diffs=values[1:] - values[:-1],
    )


# --------------------------------------------------------------------------
# Exhaustive oracle (non-recombined)
# --------------------------------------------------------------------------

def _unmerged_step(chain: ChainSpec, q: int):
    """All m^q ordered q-step paths: increments (m^q, d) and weights (m^q,)."""
    inc = chain.increments
    w = chain.weights
    pos = inc.copy()
    wts = w.copy()
    for _ in range(q - 1):
        pos = (pos[:, None, :] + inc[None, :, :]).reshape(-1, chain.d)
        wts = (wts[:, None] * w[None, :]).reshape(-1)
    return pos, wts


def tree_oracle(
    chain: ChainSpec, payoff: PayoffSpec, r: float, T: float, n_dates: int, x0
) -> float:
    """Price by exhaustive non-recombined backward induction.

    Enumerates every increment path (no node identification at all), so it
    is independent of the lattice machinery; usable while m^(total steps)
    stays below the path cap.
    """
    if n_dates < 1:
        raise StepNotMultipleOfH(f"need at least one exercise date, got {n_dates}")
    q = _check_horizon(chain, T / n_dates)
    total = n_dates * q
    if chain.m ** total > TREE_PATH_CAP:
        raise TooLarge(
            f"{chain.m}^{total} paths exceed the oracle cap {TREE_PATH_CAP}"
        )
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    if x0.shape != (chain.d,):
        raise DimensionMismatch(f"anchor shape {x0.shape} does not match d={chain.d}")
    step_inc, step_w = _unmerged_step(chain, q)
    mq = step_inc.shape[0]
    tau = q * chain.h
    disc = math.exp(-r * tau)

    # positions at each exercise date, fully expanded in path order
    date_pos = [x0[None, :]]
    for _ in range(n_dates):
        prev = date_pos[-1]
        date_pos.append((prev[:, None, :] + step_inc[None, :, :]).reshape(-1, chain.d))

    def g_at(pos):
        coords = [pos[:, a] for a in range(chain.d)]
        return payoff.g_from_coords(coords)

    v = np.maximum(g_at(date_pos[n_dates]), 0.0)
    for j in range(n_dates, 0, -1):
        cont = v.reshape(-1, mq) @ step_w
        v = np.maximum(disc * cont, g_at(date_pos[j - 1]))
    return float(v[0])


# --------------------------------------------------------------------------
# Direct operator application (for the verification harness)
# --------------------------------------------------------------------------

def semigroup_apply(chain: ChainSpec, n: int, f, x) -> np.ndarray:
    """``P_{nh} f`` at an array of points; f must be vectorized."""
    pts = _anchor_array(x, chain.d)
    comp = compose(chain, n)
    shifted = pts[:, None, :] + comp.increments[None, :, :]
    args = shifted if chain.d > 1 else shifted[..., 0]
    vals = np.asarray(f(args), dtype=float)
    return vals @ comp.weights


def bellman_apply(chain: ChainSpec, payoff: PayoffSpec, r: float, t: float, f, x) -> np.ndarray:
    """``B_t f = max(e^{-rt} P_t f, g)`` at an array of points."""
    n = _check_horizon(chain, t)
    pts = _anchor_array(x, chain.d)
    cont = math.exp(-r * t) * semigroup_apply(chain, n, f, pts)
    g = payoff.g_from_coords([pts[:, a] for a in range(chain.d)])
    return np.maximum(cont, g)


def refinement_gap(chain: ChainSpec, payoff: PayoffSpec, r: float, s: float, f, x) -> np.ndarray:
    """First-order difference ``(B_{s/2})^2 f - B_s f`` (nonnegative for f >= g v 0)."""
    half = s / 2.0
    _check_horizon(chain, half)
    pts = _anchor_array(x, chain.d)

    def inner(zz):
        zz_arr = np.asarray(zz, dtype=float)
        flat = zz_arr.reshape(-1, chain.d) if chain.d > 1 else zz_arr.reshape(-1, 1)
        out = bellman_apply(chain, payoff, r, half, f, flat)
        return out.reshape(zz_arr.shape[:-1] if chain.d > 1 else zz_arr.shape)

    two = bellman_apply(chain, payoff, r, half, inner, pts)
    one = bellman_apply(chain, payoff, r, s, f, pts)
    return two - one
