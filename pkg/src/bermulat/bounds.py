"""Explicit constants behind the error bounds.

All suprema over (0,T] are taken over the finite time grid h, 2h, ..., T
exactly as the bounds are stated; the analytic endpoint value is used only
as a cross-check.  Constants whose defining region is unbounded (so the
supremum is infinite) raise NotApplicable instead of being truncated.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .chain import ChainSpec, GrowthFactors, growth_factors
from .errors import NotApplicable, PreconditionViolated, StepNotMultipleOfH
from .payoff import Box, Exp1D, MaxExp, PayoffSpec

EQ_TOL = 1e-12          # tolerance for gamma == e^r branch decisions
SIGN_TOL = 1e-12        # tolerance for increment sign preconditions


def _time_grid(chain: ChainSpec, T: float) -> np.ndarray:
    n = T / chain.h
    k = round(n)
    if k < 1 or abs(n - k) > 1e-9 * max(1.0, n):
        raise StepNotMultipleOfH(f"T={T} is not a positive multiple of h={chain.h}")
    return chain.h * np.arange(1, k + 1)


def _regime(log_gamma: float, r: float) -> str:
    if log_gamma < r - EQ_TOL:
        return "below"
    if log_gamma > r + EQ_TOL:
        return "above"
    return "equal"


def _sup_ratio(grid: np.ndarray, fn) -> float:
    return float(np.max(fn(grid) / grid))


# --------------------------------------------------------------------------
# First-order constants for puts: R, D-tilde, C0
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class FirstOrderConstants:
    gamma1: float
    R: float
    dtilde: float
    c0: float
    regime: str          # gamma1 vs e^r: below / equal / above
    notes: tuple = ()

    @property
    def l1_prefactor(self) -> float:
        """(ln gamma1 - r) D~ + r K + C0 is assembled by the callers; this
        dataclass only carries the shared ingredients."""
        raise AttributeError("use convergence_constant_* for assembled products")


def _dtilde_put(payoff: PayoffSpec, chain: ChainSpec, T: float, regime: str, notes: list) -> float:
    K = payoff.strike
    if regime == "equal":
        notes.append("gamma1 == e^r within tolerance: both indicators vanish, D~ = 0")
        return 0.0
    if regime == "above":
        raise NotApplicable(
            "gamma1 > e^r: sup of fbar over the union of exercise regions is infinite"
        )
    if K == 0.0:
        return 0.0
    steps = round(T / chain.h)
    if isinstance(payoff.fbar, Exp1D):
        max_y = float(np.max(chain.increments[:, 0]))
        n_star = steps if max_y >= 0 else 1
        return K * math.exp(-n_star * max_y)
    if isinstance(payoff.fbar, MaxExp):
        vals = []
        for j in range(payoff.d):
            max_yj = float(np.max(chain.increments[:, j]))
            n_star = steps if max_yj >= 0 else 1
            vals.append(K * math.exp(-n_star * max_yj))
        return min(vals)
    raise NotApplicable(
        f"no closed-form exercise region for basket {payoff.fbar.kind}"
    )


def first_order_constants(
    chain: ChainSpec, payoff: PayoffSpec, r: float, T: float
) -> FirstOrderConstants:
    """R (L-infinity rate), D-tilde and C0 (L1 ingredients) for a put."""
    if payoff.side != "put":
        raise PreconditionViolated("first_order_constants is the put-side variant")
    grid = _time_grid(chain, T)
    gf = growth_factors(chain, payoff.fbar)
    g1 = gf.gamma1
    K = payoff.strike
    notes: list[str] = []
    if not gf.exact:
        notes.append(f"gamma1 provenance: {gf.note}")
    R = K * _sup_ratio(grid, lambda t: g1 ** t - 1.0)
    if g1 > 1.0:
        # (gamma1^t - 1)/t is increasing, so the grid sup sits at t = T.
        analytic = K * (g1 ** T - 1.0) / T
        assert abs(R - analytic) <= 1e-14 * max(1.0, abs(R))
    if g1 < 1.0 - EQ_TOL:
        notes.append("gamma1 < 1: R is negative and the L-infinity lemma hypotheses fail")
    regime = _regime(math.log(g1), r)
    dtilde = _dtilde_put(payoff, chain, T, regime, notes)
    c0 = K * (_sup_ratio(grid, lambda t: 1.0 - np.exp(-r * t)) - r) + dtilde * (
        _sup_ratio(grid, lambda t: g1 ** t * np.exp(-r * t) - 1.0) - math.log(g1) + r
    )
    return FirstOrderConstants(
        gamma1=g1, R=R, dtilde=dtilde, c0=c0, regime=regime, notes=tuple(notes)
    )


# --------------------------------------------------------------------------
# Call analogues: D-bar, C1
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class CallConstants:
    gamma0: float
    dbar: float
    c1: float
    regime: str
    notes: tuple = ()


def _dbar_call(payoff: PayoffSpec, chain: ChainSpec, T: float, regime: str, notes: list) -> float:
    K = payoff.strike
    if regime == "equal":
        notes.append("gamma0 == e^r within tolerance: both indicators vanish, D- = 0")
        return 0.0
    if regime == "above":
        # inf of fbar over a south-west region is 0 for exponential baskets
        return 0.0
    if K == 0.0:
        return 0.0
    steps = round(T / chain.h)
    if isinstance(payoff.fbar, Exp1D):
        min_y = float(np.min(chain.increments[:, 0]))
        n_star = steps if min_y <= 0 else 1
        return K * math.exp(-n_star * min_y)
    if isinstance(payoff.fbar, MaxExp):
        min_all = float(np.min(chain.increments))
        n_star = steps if min_all <= 0 else 1
        return K * math.exp(-n_star * min_all)
    raise NotApplicable(f"no closed-form call region for basket {payoff.fbar.kind}")


def call_constants(chain: ChainSpec, payoff: PayoffSpec, r: float, T: float) -> CallConstants:
    """Mirror of first_order_constants for calls with dividends in (r, chain)."""
    if payoff.side != "call":
        raise PreconditionViolated("call_constants is the call-side variant")
    grid = _time_grid(chain, T)
    gf = growth_factors(chain, payoff.fbar)
    g0 = gf.gamma0
    K = payoff.strike
    notes: list[str] = []
    regime = _regime(math.log(g0), r)
    dbar = _dbar_call(payoff, chain, T, regime, notes)
    c1 = K * (_sup_ratio(grid, lambda t: 1.0 - np.exp(-r * t)) - r) + dbar * (
        _sup_ratio(grid, lambda t: g0 ** t * np.exp(-r * t) - 1.0) - math.log(g0) + r
    )
    return CallConstants(gamma0=g0, dbar=dbar, c1=c1, regime=regime, notes=tuple(notes))


# --------------------------------------------------------------------------
# The quadratic-rate constant D
# --------------------------------------------------------------------------

def _require_nonneg_increments(chain: ChainSpec) -> None:
    if float(np.min(chain.increments)) < -SIGN_TOL:
        raise PreconditionViolated(
            "all increments must be componentwise nonnegative for the quadratic bound"
        )


@dataclass(frozen=True)
class ConvergenceConstant:
    """D with its ingredients; the quadratic first-order bound is (D/2) s^2
    and the k-th refinement difference is bounded by D s^2 2^{-(k+1)}."""

    D: float
    prefactor: float         # (ln gamma1 - r) D~ + r K + C0
    lattice_factor: float    # max_i y_i / h, or R^{d-1} sum_j (max_i y_ij v 0)/h
    first_order: FirstOrderConstants
    box_radius: float | None = None

    def first_order_l1_bound(self, s: float) -> float:
        return 0.5 * self.D * s * s

    def refinement_l1_bound(self, s: float, level: int) -> float:
        return self.D * s * s * 2.0 ** -(level + 1)


def convergence_constant_vanilla(
    chain: ChainSpec, payoff: PayoffSpec, r: float, T: float
) -> ConvergenceConstant:
    """D for the 1-d vanilla put with nonnegative increments."""
    if chain.d != 1 or not isinstance(payoff.fbar, Exp1D) or payoff.side != "put":
        raise PreconditionViolated("vanilla constant needs a d=1 exponential put")
    _require_nonneg_increments(chain)
    fo = first_order_constants(chain, payoff, r, T)
    pref = (math.log(fo.gamma1) - r) * fo.dtilde + r * payoff.strike + fo.c0
    lat = float(np.max(chain.increments[:, 0])) / chain.h
    return ConvergenceConstant(
        D=pref * lat, prefactor=pref, lattice_factor=lat, first_order=fo
    )


def convergence_constant_maxput(
    chain: ChainSpec, payoff: PayoffSpec, r: float, T: float, box: Box
) -> ConvergenceConstant:
    """D for the max-put on a compact box B with B - lnK inside [-R, R]^d."""
    if not isinstance(payoff.fbar, MaxExp) or payoff.side != "put":
        raise PreconditionViolated("max-put constant needs a max-exp put")
    _require_nonneg_increments(chain)
    near_zero = np.max(np.abs(chain.increments), axis=1) <= SIGN_TOL
    if not bool(np.any(near_zero)):
        raise PreconditionViolated("the zero vector must be among the increments")
    lnk = payoff.log_strike
    r_box = max(
        max(abs(lo - lnk), abs(hi - lnk)) for lo, hi in zip(box.lo, box.hi)
    )
    fo = first_order_constants(chain, payoff, r, T)
    pref = (math.log(fo.gamma1) - r) * fo.dtilde + r * payoff.strike + fo.c0
    col_max = np.maximum(np.max(chain.increments, axis=0), 0.0)
    lat = r_box ** (payoff.d - 1) * float(np.sum(col_max)) / chain.h
    return ConvergenceConstant(
        D=pref * lat,
        prefactor=pref,
        lattice_factor=lat,
        first_order=fo,
        box_radius=r_box,
    )


# --------------------------------------------------------------------------
# Lower bound off the exercise-probability region
# --------------------------------------------------------------------------

def lower_bound_firstorder(
    chain: ChainSpec,
    payoff: PayoffSpec,
    r: float,
    T: float,
    t: float,
    eps1: float,
) -> float:
    """Uniform lower bound for the first-order L-infinity gap off E^{t/2}:
    (min_i alpha_i)^{T/h} e^{-r t/2} K (ln gamma0 - eps1) t/2."""
    gf = growth_factors(chain, payoff.fbar)
    g0 = gf.gamma0
    if g0 <= 1.0 + EQ_TOL:
        raise NotApplicable(f"gamma0={g0} is not > 1; the lower bound has no content")
    has_nonneg = bool(np.any(np.all(chain.increments >= -SIGN_TOL, axis=1)))
    has_nonpos = bool(np.any(np.all(chain.increments <= SIGN_TOL, axis=1)))
    if not (has_nonneg and has_nonpos):
        raise PreconditionViolated(
            "need one componentwise-nonpositive and one componentwise-nonnegative increment"
        )
    lg0 = math.log(g0)
    if not 0.0 < eps1 < lg0:
        raise PreconditionViolated(f"eps1 must lie in (0, ln gamma0)=(0, {lg0}), got {eps1}")
    half = 0.5 * t
    k = round(half / chain.h)
    if k < 1 or abs(half / chain.h - k) > 1e-9:
        raise StepNotMultipleOfH(f"t/2={half} is not a positive multiple of h={chain.h}")
    if g0 ** half - 1.0 < (lg0 - eps1) * half:
        raise NotApplicable(f"epsilon_0 threshold check failed at t={t}")
    steps_T = round(T / chain.h)
    min_alpha = float(np.min(chain.weights))
    return (
        min_alpha ** steps_T
        * math.exp(-r * half)
        * payoff.strike
        * (lg0 - eps1)
        * half
    )


# --------------------------------------------------------------------------
# Telescoping refinement bound
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class DifferenceBound:
    """Bound on ||V_N - V_M|| from per-level bounds D s^2 2^{-(k+1)}.

    ``partial_sum`` is the explicit telescoped sum over k = M..N-1 (this is
    what the implementation asserts); ``closed_form`` is the verbatim
    closed-form factor 2^{-M}(1 - 2^{-(N-M-1)}) reported alongside (the two
    differ by an off-by-one in the geometric sum and the closed form is only
    meaningful for N >= M+2); ``relaxed`` is D s^2 2^{-M}.
    """

    partial_sum: float
    closed_form: float
    relaxed: float
    M: int
    N: int

    def as_dict(self) -> dict:
        return {
            "partial_sum": self.partial_sum,
            "closed_form": self.closed_form,
            "relaxed": self.relaxed,
            "M": self.M,
            "N": self.N,
        }


def predicted_difference_bound(D: float, s: float, M: int, N: int) -> DifferenceBound:
    if not (N > M >= 0):
        raise PreconditionViolated(f"need N > M >= 0, got M={M}, N={N}")
    if s <= 0 or D < 0:
        raise PreconditionViolated(f"need s > 0 and D >= 0, got s={s}, D={D}")
    ss = D * s * s
    partial = ss * math.fsum(2.0 ** -(k + 1) for k in range(M, N))
    closed = ss * 2.0 ** -M * (1.0 - 2.0 ** -(N - M - 1))
    return DifferenceBound(
        partial_sum=partial, closed_form=closed, relaxed=ss * 2.0 ** -M, M=M, N=N
    )


# --------------------------------------------------------------------------
# Aggregate report
# --------------------------------------------------------------------------

@dataclass
class BoundsReport:
    gamma0: float
    gamma1: float
    growth_note: str
    R: float | None = None
    dtilde: float | None = None
    c0: float | None = None
    dbar: float | None = None
    c1: float | None = None
    D: float | None = None
    D_kind: str | None = None        # "vanilla" or "maxput"
    box_radius: float | None = None
    lattice_factor: float | None = None
    regions: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)
    not_applicable: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "gamma0": self.gamma0,
            "gamma1": self.gamma1,
            "growth_note": self.growth_note,
            "R": self.R,
            "dtilde": self.dtilde,
            "c0": self.c0,
            "dbar": self.dbar,
            "c1": self.c1,
            "D": self.D,
            "D_kind": self.D_kind,
            "box_radius": self.box_radius,
            "lattice_factor": self.lattice_factor,
            "regions": self.regions,
            "notes": list(self.notes),
            "not_applicable": dict(self.not_applicable),
        }

    def to_text(self) -> str:
        lines = []
        for key, val in self.to_dict().items():
            if key in ("regions", "notes", "not_applicable"):
                continue
            lines.append(f"{key:16s}: {val}")
        for name, reg in self.regions.items():
            lines.append(f"{'region':16s}: {name} = {reg}")
        for note in self.notes:
            lines.append(f"{'note':16s}: {note}")
        for key, reason in self.not_applicable.items():
            lines.append(f"{'not applicable':16s}: {key}: {reason}")
        return "\n".join(lines) + "\n"

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def bounds_report(
    chain: ChainSpec,
    payoff: PayoffSpec,
    r: float,
    T: float,
    box: Box | None = None,
) -> BoundsReport:
    """Compute every applicable constant for one chain/payoff pair."""
    gf = growth_factors(chain, payoff.fbar)
    rep = BoundsReport(gamma0=gf.gamma0, gamma1=gf.gamma1, growth_note=gf.note)
    lg1, lg0 = math.log(gf.gamma1), math.log(gf.gamma0)
    rep.notes.append(
        f"hypothesis gamma1 <= e^r (quadratic theorems): {lg1 <= r + EQ_TOL}"
    )
    rep.notes.append(
        f"hypothesis gamma0 in (1, e^r] (lower bound): {1.0 + EQ_TOL < gf.gamma0 and lg0 <= r + EQ_TOL}"
    )
    rep.notes.append(
        f"hypothesis increments >= 0: {chain.all_increments_nonneg}"
    )
    rep.notes.append(f"hypothesis 0 among increments: {chain.contains_zero}")
    if payoff.side == "put":
        try:
            fo = first_order_constants(chain, payoff, r, T)
            rep.R, rep.dtilde, rep.c0 = fo.R, fo.dtilde, fo.c0
            rep.notes.extend(fo.notes)
        except NotApplicable as exc:
            rep.not_applicable["first_order_constants"] = exc.reason
        for name, builder, extra in (
            ("vanilla", convergence_constant_vanilla, ()),
            ("maxput", convergence_constant_maxput, (box,)),
        ):
            if name == "maxput" and box is None:
                continue
            try:
                cc = builder(chain, payoff, r, T, *extra)
                rep.D, rep.D_kind = cc.D, name
                rep.lattice_factor = cc.lattice_factor
                rep.box_radius = cc.box_radius
                break
            except (PreconditionViolated, NotApplicable) as exc:
                rep.not_applicable[f"D_{name}"] = str(exc)
        try:
            from .payoff import exercise_region

            rep.regions["E_h"] = repr(exercise_region(payoff, chain, chain.h))
            rep.regions["E_T"] = repr(exercise_region(payoff, chain, T))
        except Exception as exc:  # predicate-only baskets
            rep.regions["E_h"] = f"predicate-only ({exc})"
    else:
        try:
            cc = call_constants(chain, payoff, r, T)
            rep.dbar, rep.c1 = cc.dbar, cc.c1
            rep.notes.extend(cc.notes)
        except NotApplicable as exc:
            rep.not_applicable["call_constants"] = exc.reason
        rep.not_applicable["D"] = "quadratic-rate constants are put-side results"
    return rep
