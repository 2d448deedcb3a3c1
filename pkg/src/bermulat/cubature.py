"""Gaussian cubature formulas and the chains they induce.

A formula is a set of nodes/weights integrating polynomials up to a claimed
degree exactly against the standard Gaussian.  Chains are built as
``y_i = mu h + diag(sigma) sqrt(h) z_i``; two drift conventions are exposed:
:func:`calibrate_drift` makes the discounted exponential a martingale
(continuous dividend yield delta), while :func:`admissible_volatility` works
under the lognormal convention ``mu = r - sigma^2/2`` and bounds the
volatility that keeps every increment componentwise nonnegative.
"""

from __future__ import annotations

import itertools
import math
import re
from dataclasses import dataclass

import numpy as np

from .chain import ChainSpec, chain_spec
from .errors import (
    DimensionMismatch,
    NoLatticeScale,
    ParseError,
    UnknownName,
    WeightSumError,
)
from .lattice import LatticeEmbedding

_SQRT3 = math.sqrt(3.0)


@dataclass(frozen=True)
class CubatureFormula:
    d: int
    nodes: np.ndarray      # (m, d), dimensionless
    weights: np.ndarray    # (m,)
    degree: int | None     # claimed exactness degree
    lattice_scale: np.ndarray | None = None  # per-coordinate c with nodes/c integer

    @property
    def m(self) -> int:
        return self.nodes.shape[0]


def _make_formula(nodes, weights, degree, lattice_scale=None) -> CubatureFormula:
    nodes = np.atleast_2d(np.asarray(nodes, dtype=float))
    weights = np.asarray(weights, dtype=float).reshape(-1)
    if weights.shape[0] != nodes.shape[0]:
        raise DimensionMismatch(
            f"{nodes.shape[0]} nodes but {weights.shape[0]} weights"
        )
    s = math.fsum(weights.tolist())
    if abs(s - 1.0) > 1e-12:
        raise WeightSumError(f"cubature weights sum to {s!r}")
    if lattice_scale is not None:
        lattice_scale = np.broadcast_to(
            np.asarray(lattice_scale, dtype=float), (nodes.shape[1],)
        ).copy()
        if np.any(lattice_scale <= 0):
            raise NoLatticeScale(f"lattice scale must be positive, got {lattice_scale}")
        resid = np.abs(nodes / lattice_scale - np.rint(nodes / lattice_scale))
        if np.max(resid * lattice_scale) >= 1e-10:
            raise NoLatticeScale("nodes do not quantize to the claimed lattice scale")
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return CubatureFormula(
        d=nodes.shape[1], nodes=nodes, weights=weights, degree=degree,
        lattice_scale=lattice_scale,
    )


# Builtin 1-d rules, derived by moment matching (see the tests for the
# moment-equation derivation); stored at full binary64 precision.
def _gauss_d1_deg3() -> CubatureFormula:
    return _make_formula([[-1.0], [1.0]], [0.5, 0.5], 3, lattice_scale=[1.0])


def _gauss_d1_deg5() -> CubatureFormula:
    return _make_formula(
        [[-_SQRT3], [0.0], [_SQRT3]],
        [1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0],
        5,
        lattice_scale=[_SQRT3],
    )


_BUILTINS = {
    "gauss_d1_deg3": _gauss_d1_deg3,
    "gauss_d1_deg5": _gauss_d1_deg5,
}

_PRODUCT_RE = re.compile(r"^product\(\s*(\d+)\s*,\s*([A-Za-z0-9_]+)\s*\)$")


def product_formula(d: int, base: CubatureFormula) -> CubatureFormula:
    """Tensor product of a 1-d rule; exact to the base degree."""
    if base.d != 1:
        raise DimensionMismatch("product formula needs a 1-d base rule")
    nodes = np.array(list(itertools.product(base.nodes[:, 0].tolist(), repeat=d)))
    weights = np.array(
        [math.prod(t) for t in itertools.product(base.weights.tolist(), repeat=d)]
    )
    scale = (
        np.repeat(base.lattice_scale, d) if base.lattice_scale is not None else None
    )
    return _make_formula(nodes, weights, base.degree, lattice_scale=scale)


def builtin_formula(name: str) -> CubatureFormula:
    """Look up a builtin rule: gauss_d1_deg3, gauss_d1_deg5, product(d, base)."""
    if name in _BUILTINS:
        return _BUILTINS[name]()
    m = _PRODUCT_RE.match(name.strip())
    if m:
        return product_formula(int(m.group(1)), builtin_formula(m.group(2)))
    raise UnknownName(f"unknown cubature formula {name!r}")


# --------------------------------------------------------------------------
# Node-file I/O: "d m" header, m lines "weight z_1 .. z_d",
# optional trailing "scale c_1 .. c_d".
# --------------------------------------------------------------------------

def load_formula(path) -> CubatureFormula:
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    rows = [
        (i + 1, ln.strip()) for i, ln in enumerate(lines)
        if ln.strip() and not ln.lstrip().startswith("#")
    ]
    if not rows:
        raise ParseError("empty node file", line=1)
    lineno, header = rows[0]
    parts = header.split()
    if len(parts) != 2:
        raise ParseError(f"expected header 'd m', got {header!r}", line=lineno)
    try:
        d, m = int(parts[0]), int(parts[1])
    except ValueError:
        raise ParseError(f"non-integer header {header!r}", line=lineno) from None
    if d < 1 or m < 1:
        raise ParseError(f"need d >= 1 and m >= 1, got d={d} m={m}", line=lineno)
    body = rows[1:]
    if len(body) < m:
        raise ParseError(f"expected {m} node lines, found {len(body)}", line=lineno)
    weights = np.empty(m)
    nodes = np.empty((m, d))
    for k in range(m):
        lineno, ln = body[k]
        fields = ln.split()
        if len(fields) != d + 1:
            raise ParseError(
                f"expected weight + {d} coordinates, got {len(fields)} fields", line=lineno
            )
        try:
            vals = [float(v) for v in fields]
        except ValueError:
            raise ParseError(f"non-numeric field in {ln!r}", line=lineno) from None
        weights[k] = vals[0]
        nodes[k] = vals[1:]
    scale = None
    extra = body[m:]
    if extra:
        lineno, ln = extra[0]
        fields = ln.split()
        if fields[0] != "scale" or len(fields) != d + 1:
            raise ParseError(f"expected 'scale c_1 .. c_{d}', got {ln!r}", line=lineno)
        try:
            scale = [float(v) for v in fields[1:]]
        except ValueError:
            raise ParseError(f"non-numeric scale in {ln!r}", line=lineno) from None
        if len(extra) > 1:
            raise ParseError("trailing content after scale line", line=extra[1][0])
    s = math.fsum(weights.tolist())
    if abs(s - 1.0) > 1e-12:
        raise WeightSumError(f"node-file weights sum to {s!r}")
    return _make_formula(nodes, weights, degree=None, lattice_scale=scale)


def format_node_file(formula: CubatureFormula) -> str:
    """Serialize a formula in the node-file format (17 significant digits)."""
    out = [f"{formula.d} {formula.m}"]
    for w, z in zip(formula.weights, formula.nodes):
        out.append(" ".join(f"{v:.17g}" for v in (w, *z)))
    if formula.lattice_scale is not None:
        out.append("scale " + " ".join(f"{v:.17g}" for v in formula.lattice_scale))
    return "\n".join(out) + "\n"


# --------------------------------------------------------------------------
# Moment verification
# --------------------------------------------------------------------------

def gaussian_moment(beta) -> float:
    """Closed-form standard-Gaussian moment E[z^beta] (double factorials)."""
    out = 1.0
    for k in beta:
        if k % 2 == 1:
            return 0.0
        out *= float(math.prod(range(k - 1, 0, -2)))
    return out


@dataclass(frozen=True)
class MomentRow:
    beta: tuple
    quadrature: float
    gaussian: float
    abs_error: float


@dataclass(frozen=True)
class MomentReport:
    rows: tuple
    max_abs_error: float


def moment_check(formula: CubatureFormula, up_to_degree: int) -> MomentReport:
    """Compare quadrature sums against closed-form Gaussian moments."""
    if up_to_degree > 8:
        raise DimensionMismatch("moment checks supported up to degree 8")
    rows = []
    for total in range(up_to_degree + 1):
        for beta in itertools.combinations_with_replacement(range(formula.d), total):
            exps = [0] * formula.d
            for j in beta:
                exps[j] += 1
            quad = float(formula.weights @ np.prod(formula.nodes ** np.array(exps), axis=1))
            gm = gaussian_moment(exps)
            rows.append(MomentRow(tuple(exps), quad, gm, abs(quad - gm)))
    return MomentReport(rows=tuple(rows), max_abs_error=max(r.abs_error for r in rows))


# --------------------------------------------------------------------------
# GF(2) recombination analysis
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Mod2Report:
    points: np.ndarray       # distinct projected points in (Z/2Z)^d, sorted
    projected_count: int
    rank: int
    relations: tuple         # index sets into `points`, XOR-summing to zero
    message: str

    def verify_relations(self) -> bool:
        return all(
            not np.any(np.bitwise_xor.reduce(self.points[list(rel)], axis=0) % 2)
            for rel in self.relations
        )


def _gf2_rank(rows: np.ndarray) -> int:
    a = (rows % 2).astype(np.uint8).copy()
    rank = 0
    for col in range(a.shape[1]):
        pivot = None
        for r in range(rank, a.shape[0]):
            if a[r, col]:
                pivot = r
                break
        if pivot is None:
            continue
        a[[rank, pivot]] = a[[pivot, rank]]
        for r in range(a.shape[0]):
            if r != rank and a[r, col]:
                a[r] ^= a[rank]
        rank += 1
        if rank == a.shape[0]:
            break
    return rank


def mod2_recombination_analysis(formula: CubatureFormula, max_support: int = 4) -> Mod2Report:
    """Classify zero representations of the integer node set modulo 2.

    Duplicated projections and the zero point recombine trivially (addition
    of the zero node does nothing); the interesting relations are XOR-zero
    subsets of the distinct nonzero projected points, reported with minimal
    support up to ``max_support``.
    """
    if formula.lattice_scale is None:
        raise NoLatticeScale("mod-2 analysis needs an integer representation of the nodes")
    ints = np.rint(formula.nodes / formula.lattice_scale).astype(np.int64)
    proj = np.unique(ints % 2, axis=0)
    nonzero = proj[np.any(proj, axis=1)]
    rank = _gf2_rank(proj)
    relations = []
    idx_nonzero = [i for i, p in enumerate(proj) if np.any(p)]
    for size in range(3, max_support + 1):
        for combo in itertools.combinations(idx_nonzero, size):
            if not np.any(np.bitwise_xor.reduce(proj[list(combo)], axis=0) % 2):
                if not any(set(r) < set(combo) for r in relations):
                    relations.append(combo)
    if not relations and nonzero.shape[0] == formula.d and _gf2_rank(nonzero) == formula.d:
        message = (
            "only trivial zero representation "
            "(no nontrivial recombination beyond lattice symmetry)"
        )
    elif not relations:
        message = "no zero relation of support <= %d among distinct projected points" % max_support
    else:
        message = f"{len(relations)} nontrivial zero relation(s) of support <= {max_support}"
    return Mod2Report(
        points=proj,
        projected_count=proj.shape[0],
        rank=rank,
        relations=tuple(relations),
        message=message,
    )


# --------------------------------------------------------------------------
# Drift calibration and the chain itself
# --------------------------------------------------------------------------

def calibrate_drift(formula: CubatureFormula, r: float, delta: float, sigma, h: float):
    """Drift making ``e^{-(r-delta) t} E[exp(X_t)]`` constant per coordinate.

    mu_k = r - delta - (1/h) ln( sum_i alpha_i e^{(z_i)_k sigma_k sqrt(h)} ).
    """
    if h <= 0:
        raise DimensionMismatch(f"h must be positive, got {h}")
    sigma = np.broadcast_to(np.asarray(sigma, dtype=float), (formula.d,))
    if np.any(sigma < 0):
        raise DimensionMismatch("volatilities must be nonnegative")
    if delta > r:
        raise DimensionMismatch(f"need delta <= r, got delta={delta} > r={r}")
    sqh = math.sqrt(h)
    mu = np.empty(formula.d)
    for k in range(formula.d):
        s = float(formula.weights @ np.exp(formula.nodes[:, k] * sigma[k] * sqh))
        mu[k] = r - delta - math.log(s) / h
    return mu


def admissible_volatility(formula: CubatureFormula, r: float, h: float):
    """Largest sigma_k keeping all increments nonnegative under mu = r - sigma^2/2.

    Root of ``sigma^2 - 2 h^{-1/2} (min_i z_ik) sigma - 2 r <= 0``.
    """
    if r <= 0 or h <= 0:
        raise DimensionMismatch(f"need r > 0 and h > 0, got r={r}, h={h}")
    zmin = np.min(formula.nodes, axis=0)
    return (zmin + np.sqrt(zmin ** 2 + 2.0 * r * h)) / math.sqrt(h)


def build_chain(formula: CubatureFormula, mu, sigma, h: float) -> ChainSpec:
    """Chain increments ``y_i = mu h + diag(sigma) sqrt(h) z_i`` with embedding."""
    mu = np.broadcast_to(np.asarray(mu, dtype=float), (formula.d,))
    sigma = np.broadcast_to(np.asarray(sigma, dtype=float), (formula.d,))
    sqh = math.sqrt(h)
    increments = mu * h + sigma * sqh * formula.nodes
    spec = chain_spec(increments, formula.weights, h)
    if formula.lattice_scale is not None:
        scale = sigma * sqh * formula.lattice_scale
        offsets = np.rint(formula.nodes / formula.lattice_scale).astype(np.int64)
        degenerate = scale <= 0.0
        scale = np.where(degenerate, 1.0, scale)
        offsets[:, degenerate] = 0
        emb = LatticeEmbedding(drift=mu * h, scale=scale, offsets=offsets)
        spec = spec.with_embedding(emb)
    return spec
