"""Algebraic limit shape of the weighted tiling model.

Everything is driven by one rational function g0 of the variable Q = q^u
(2r+2 zeros and poles read off the trapezoid data) and its first
integrals U, V.  The complex slope at (t, x) solves a polynomial of
degree 2r+4 in Q; the liquid region is where that polynomial has a
(unique) quadruple of roots with non-real Omega = 1/Q + kappa^2 Q, and
the arctic curve is where the quadruple degenerates into double roots.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np
import numpy.polynomial.polynomial as npoly
from scipy.integrate import quad

from .errors import (ConsistencyError, ConvergenceError, DomainError,
                     InvalidInputError)
from .numerics import ComplexPolynomial, poly_roots

logger = logging.getLogger(__name__)

_NONREAL_RTOL = 1e-6


@dataclass(frozen=True)
class ScaledModel:
    """Continuum trapezoid: geometry plus (log q, kappa^2) weights."""

    big_n: float
    big_t: float
    segments: tuple
    logq: float
    kappa_sq: float

    def __post_init__(self):
        segs = tuple((float(a), float(b)) for a, b in self.segments)
        object.__setattr__(self, "segments", segs)
        if self.logq >= 0:
            raise InvalidInputError("logq must be negative (q in (0,1))")
        if self.kappa_sq == 0:
            raise InvalidInputError("kappa_sq must be nonzero")
        prev = -self.big_t
        for a, b in segs:
            if not (prev <= a < b):
                raise InvalidInputError("segments must increase within bounds")
            prev = b
        if segs[-1][1] > self.big_n + 1e-12:
            raise InvalidInputError("segments must end below big_n")
        if abs(sum(b - a for a, b in segs) - self.big_n) > 1e-9:
            raise InvalidInputError("segment lengths must sum to big_n")
        if self.kappa_sq > 0:
            floor = self.qp(-(self.big_n + segs[-1][1]))
            if self.kappa_sq <= floor:
                raise InvalidInputError(
                    f"real case requires kappa_sq > q^-(N+b_r) = {floor:.6g}")

    @property
    def r(self) -> int:
        return len(self.segments)

    def qp(self, e) -> complex | float:
        """q-power q^e = exp(e * logq); e may be complex."""
        if np.iscomplexobj(e) or isinstance(e, complex):
            return np.exp(np.asarray(e) * self.logq)
        return math.exp(float(e) * self.logq)

    def b_t(self, t: float, z) -> complex:
        """q^{-z} + kappa^2 q^{z-t}."""
        z = np.asarray(z, dtype=complex)
        return np.exp(-z * self.logq) \
            + self.kappa_sq * np.exp((z - t) * self.logq)

    def b_t_deriv(self, t: float, z) -> complex:
        z = np.asarray(z, dtype=complex)
        return self.logq * (-np.exp(-z * self.logq)
                            + self.kappa_sq * np.exp((z - t) * self.logq))

    def support(self, t: float) -> tuple[float, float]:
        """Particle support [l(t), r(t)] at time t."""
        return (max(self.segments[0][0], t - self.big_t),
                min(self.big_n, self.segments[-1][1] + t))

    def in_polygon(self, t: float, x: float, tol: float = 1e-9) -> bool:
        if not -tol <= t <= self.big_t + tol:
            return False
        lo, hi = self.support(t)
        return lo - tol <= x <= hi + tol


# ---------------------------------------------------------------------------
# g0, f0 and the first integrals U, V
# ---------------------------------------------------------------------------

@lru_cache(maxsize=64)
def g0_zeros_poles(model: ScaledModel):
    """Zeros and poles (2r+2 each, before cancellation) of g0 plus its
    constant prefactor.  Coincident zero/pole pairs, which appear when a
    segment touches a domain corner (a_1 = -T or b_r = N), cancel."""
    ks = model.kappa_sq
    zeros = [model.qp(model.big_n), model.qp(model.big_t) / ks]
    poles = [model.qp(-model.big_n) / ks, model.qp(-model.big_t)]
    for a, b in model.segments:
        zeros += [model.qp(a), model.qp(-b) / ks]
        poles += [model.qp(-a) / ks, model.qp(b)]
    zs, ps = list(zeros), list(poles)
    for z in list(zs):
        for p in list(ps):
            if abs(z - p) < 1e-12 * (1 + abs(z)):
                zs.remove(z)
                ps.remove(p)
                break
    return (np.asarray(zs, dtype=complex), np.asarray(ps, dtype=complex),
            complex(model.qp(-model.big_t)))


@lru_cache(maxsize=64)
def _model_polys(model: ScaledModel):
    """Cached coefficient arrays D, N, D-N of the g0 numerator/denominator."""
    zeros, poles, pref = g0_zeros_poles(model)
    D = npoly.polyfromroots(poles)
    Nm = pref * npoly.polyfromroots(zeros)    # same degree after cancellation
    DN = npoly.polysub(D, Nm)
    return D, Nm, DN


def g0(model: ScaledModel, Q: complex) -> complex:
    """Rational form of the initial complex slope in the variable Q = q^u."""
    zeros, poles, pref = g0_zeros_poles(model)
    Q = complex(Q)
    dp = Q - poles
    if np.min(np.abs(dp)) < 1e-12 * (1.0 + abs(Q)):
        raise DomainError("evaluation too close to a pole of g0")
    return complex(pref * np.prod(Q - zeros) / np.prod(dp))


def g0_log_deriv(model: ScaledModel, Q: complex) -> complex:
    zeros, poles, _ = g0_zeros_poles(model)
    return complex(np.sum(1.0 / (Q - zeros)) - np.sum(1.0 / (Q - poles)))


def f0(model: ScaledModel, u: complex) -> complex:
    """Initial slope as a function of u itself."""
    return g0(model, complex(model.qp(complex(u))))


def UV_from_Q(model: ScaledModel, Q: complex):
    """(U, V, U', V') at Q = q^u; derivatives are in u."""
    Q = complex(Q)
    ks, lq = model.kappa_sq, model.logq
    f = g0(model, Q)
    if abs(1.0 - f) < 1e-12:
        raise DomainError("branch point: g0(Q) = 1")
    P = 1.0 / Q
    K = ks * Q
    U = (f * P - K) / (1.0 - f)
    V = (P - f * K) / (1.0 - f)
    df = f * g0_log_deriv(model, Q) * Q * lq  # d f0 / du
    dP = -lq * P
    dK = lq * K
    dU = ((df * P + f * dP - dK) * (1.0 - f) + (f * P - K) * df) / (1.0 - f) ** 2
    dV = ((dP - df * K - f * dK) * (1.0 - f) + (P - f * K) * df) / (1.0 - f) ** 2
    return U, V, dU, dV


def UV(model: ScaledModel, u: complex):
    """(U, V, U', V') at the point u."""
    return UV_from_Q(model, complex(model.qp(complex(u))))


# ---------------------------------------------------------------------------
# slope polynomial
# ---------------------------------------------------------------------------

def _poly_from_w(model: ScaledModel, t: float, w: complex) -> ComplexPolynomial:
    """Degree-(2r+4) polynomial in Q whose roots solve
    V(u) - q^{-t} U(u) = w."""
    ks = model.kappa_sq
    qmt = model.qp(-t)
    D, Nm, DN = _model_polys(model)
    quad_a = np.array([-1.0, 0.0, ks], dtype=complex)      # ks Q^2 - 1
    quad_b = np.array([qmt, 0.0, ks], dtype=complex)       # ks Q^2 + q^{-t}
    part1 = npoly.polymul((qmt - 1.0) * quad_a, D)
    part2 = npoly.polymul(quad_b, DN)
    part3 = npoly.polymul(np.array([0.0, -complex(w)]), DN)
    coeffs = npoly.polyadd(npoly.polyadd(part1, part2), part3)
    scale = np.abs(coeffs).max()
    coeffs = coeffs / scale
    if abs(w.imag if isinstance(w, complex) else 0.0) == 0.0:
        # real data: drop numerically-zero imaginary parts
        if np.abs(coeffs.imag).max() < 1e-14:
            coeffs = coeffs.real.astype(complex)
    return ComplexPolynomial(tuple(coeffs))


def assemble_slope_polynomial(model: ScaledModel, t: float,
                              x: complex) -> ComplexPolynomial:
    """Slope polynomial at the space-time point (t, x)."""
    if isinstance(x, (int, float)) and not model.in_polygon(t, float(x), 1e-6):
        raise DomainError(f"({t}, {x}) outside the closed trapezoid")
    return _poly_from_w(model, t, complex(model.b_t(t, x)))


@lru_cache(maxsize=64)
def spurious_fixed_points(model: ScaledModel) -> tuple:
    """Fixed points Q of Q -> 1/(kappa^2 Q) at which g0(Q) = 1.  Clearing
    the denominator 1 - g0 plants these as roots of the slope polynomial
    for every (t, w); they carry no information and must be deflated
    before classifying roots."""
    _, _, _ = g0_zeros_poles(model)
    D, Nm, DN = _model_polys(model)
    out = []
    for Q in np.sqrt(complex(1.0 / model.kappa_sq)) * np.array([1.0, -1.0]):
        scale = npoly.polyval(abs(Q), np.abs(DN)) + 1e-300
        if abs(npoly.polyval(Q, DN)) < 1e-9 * scale:
            out.append(complex(Q))
    return tuple(out)


def slope_roots(model: ScaledModel, t: float, w: complex,
                deflate: bool = True) -> np.ndarray:
    """Roots of the slope polynomial, spurious fixed points removed."""
    roots = poly_roots(_poly_from_w(model, t, w))
    if not deflate:
        return roots
    for Q0 in spurious_fixed_points(model):
        j = int(np.argmin(np.abs(roots - Q0)))
        if abs(roots[j] - Q0) < 1e-6 * (1 + abs(Q0)):
            roots = np.delete(roots, j)
    return roots


def omega_of(model: ScaledModel, Q) -> np.ndarray:
    Q = np.asarray(Q, dtype=complex)
    return 1.0 / Q + model.kappa_sq * Q


def nonreal_omega_roots(model: ScaledModel, roots: np.ndarray) -> np.ndarray:
    om = omega_of(model, roots)
    scale = 1.0 + np.median(np.abs(om))
    return roots[np.abs(om.imag) > _NONREAL_RTOL * scale]


# ---------------------------------------------------------------------------
# slope solving at real points
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SlopeSolution:
    t: float
    x: float
    u: complex
    Q: complex
    Omega: complex              # Im < 0 normalization
    f: complex                  # Im > 0 normalization
    p_horizontal: float
    p_up: float
    p_down: float


@dataclass(frozen=True)
class FrozenVerdict:
    t: float
    x: float
    density: float              # particle density, 0.0 or 1.0


def _u_from_Q(model: ScaledModel, Q: complex) -> complex:
    """u = log_q Q with Im u reduced to the fundamental period [0, 2pi/|logq|)."""
    Q = complex(Q)
    lq = model.logq
    u = complex(math.log(abs(Q)), math.atan2(Q.imag, Q.real)) / lq
    period = 2.0 * math.pi / (-lq)
    im = u.imag % period
    return complex(u.real, im)


def _slab_Q(model: ScaledModel, omega: complex) -> complex:
    """The quadratic root Q of ks Q^2 - omega Q + 1 = 0 lying in the image
    of the fundamental domain: arg Q in (-pi, 0), |ks Q^2| >= 1."""
    ks = model.kappa_sq
    disc = np.sqrt(complex(omega) ** 2 - 4.0 * ks)
    cands = [(omega + disc) / (2 * ks), (omega - disc) / (2 * ks)]
    best, best_score = None, -np.inf
    for Q in cands:
        if abs(Q) == 0:
            continue
        mod_ok = abs(ks * Q * Q) >= 1.0 - 1e-9
        arg = math.atan2(Q.imag, Q.real)
        arg_ok = -math.pi < arg < 0.0
        score = (2.0 if mod_ok else 0.0) + (1.0 if arg_ok else 0.0)
        if score > best_score:
            best, best_score = Q, score
    if best is None:
        raise ConsistencyError("no admissible quadratic branch")
    return complex(best)


def _f_from_omega(model: ScaledModel, t: float, x, omega: complex) -> complex:
    b0x = complex(model.b_t(0.0, x))
    b0xt = complex(model.b_t(0.0, np.asarray(x, dtype=complex) - t))
    return (omega - b0x) / (omega - b0xt)


def solve_slope(model: ScaledModel, t: float, x: float,
                frozen_density_from_scan: bool = True):
    """Complex slope and local lozenge densities at an interior point, or
    a FrozenVerdict where the slope polynomial has only real-Omega roots."""
    if not (0.0 < t < model.big_t):
        raise DomainError("t must be interior")
    if not model.in_polygon(t, x):
        raise DomainError(f"({t},{x}) outside the trapezoid")
    roots = slope_roots(model, t, complex(model.b_t(t, x)))
    nonreal = nonreal_omega_roots(model, roots)
    if len(nonreal) == 0:
        dens = frozen_density(model, t, x) if frozen_density_from_scan else \
            float("nan")
        return FrozenVerdict(t, x, dens)
    if len(nonreal) not in (3, 4):
        logger.warning("degenerate root pattern (%d non-real) at (%g, %g)",
                       len(nonreal), t, x)
    om = omega_of(model, nonreal)
    omega = complex(om[np.argmin(om.imag)])
    if omega.imag > 0:
        omega = omega.conjugate()
    f = _f_from_omega(model, t, x, omega)
    if f.imag < 0:
        f = _f_from_omega(model, t, x, omega.conjugate())
    Q = _slab_Q(model, omega)
    # report the polished polynomial root rather than the quadratic image
    Q = complex(roots[np.argmin(np.abs(roots - Q))])
    u = _u_from_Q(model, Q)
    ph = math.atan2(f.imag, f.real) / math.pi
    phd = math.atan2((f - 1).imag, (f - 1).real) / math.pi
    pd = phd - ph
    pu = 1.0 - phd
    return SlopeSolution(t, x, u, Q, omega, f, ph, pu, pd)


def is_liquid(model: ScaledModel, t: float, x: float) -> bool:
    if not model.in_polygon(t, x):
        return False
    roots = slope_roots(model, t, complex(model.b_t(t, x)))
    return len(nonreal_omega_roots(model, roots)) >= 3


@lru_cache(maxsize=256)
def liquid_windows(model: ScaledModel, t: float,
                   nscan: int = 400) -> tuple:
    """Maximal open x-intervals of the liquid region at time t, found by a
    scan plus bisection refinement of the edges."""
    lo, hi = model.support(t)
    xs = np.linspace(lo, hi, nscan)
    flags = np.array([is_liquid(model, t, float(xx)) for xx in xs])
    windows = []
    i = 0
    while i < nscan:
        if flags[i]:
            j = i
            while j + 1 < nscan and flags[j + 1]:
                j += 1
            a = _bisect_edge(model, t, xs[i - 1] if i > 0 else lo, xs[i]) \
                if i > 0 else lo
            b = _bisect_edge(model, t, xs[j + 1] if j + 1 < nscan else hi,
                             xs[j]) if j + 1 < nscan else hi
            windows.append((float(a), float(b)))
            i = j + 1
        else:
            i += 1
    return tuple(windows)


def _bisect_edge(model, t, x_out, x_in, iters: int = 48) -> float:
    for _ in range(iters):
        mid = 0.5 * (x_out + x_in)
        if is_liquid(model, t, mid):
            x_in = mid
        else:
            x_out = mid
        if abs(x_out - x_in) < 1e-12 * (1 + abs(x_in)):
            break
    return 0.5 * (x_out + x_in)


def _edge_density(model: ScaledModel, t: float, a: float, b: float,
                  side: str) -> float:
    """Limiting density of the liquid window (a, b) at one of its edges."""
    probe = a + 1e-4 * (b - a) if side == "left" else b - 1e-4 * (b - a)
    sol = solve_slope(model, t, probe, frozen_density_from_scan=False)
    if isinstance(sol, FrozenVerdict):
        raise ConsistencyError("probe point not liquid")
    return 1.0 if sol.p_horizontal < 0.5 else 0.0


def frozen_cuts(model: ScaledModel, t: float) -> list[tuple[float, str]]:
    """Deterministic interfaces that can separate frozen phases at time t:
    block bottoms x = a_i (vacuum below an untouched block) and block
    reach limits x = b_i + t (no block-i particle can be above)."""
    cuts = []
    for a, b in model.segments:
        cuts.append((a, "bottom"))
        cuts.append((b + t, "reach"))
    return sorted(cuts)


def frozen_density(model: ScaledModel, t: float, x: float) -> float:
    """Density (0 or 1) of a frozen point.

    Frozen stretches between liquid windows are subdivided by the
    kinematic cut lines; a cell adjacent to a window edge inherits the
    slope's limiting argument there, and a cell sandwiched between two
    cuts is forced: below a block bottom lies vacuum, above it the
    untouched block (density 1); above a reach line nothing remains.
    """
    wins = liquid_windows(model, t)
    for a, b in wins:
        if a < x < b:
            raise InvalidInputError(f"({t},{x}) is liquid, not frozen")
    if not wins:
        return _frozen_density_boundary(model, t, x)
    lo, hi = model.support(t)
    # the frozen stretch [left, right] containing x, with window adjacency
    left, right = lo, hi
    left_win = right_win = None
    for a, b in wins:
        if b <= x and b > left:
            left, left_win = b, (a, b)
        if a >= x and a < right:
            right, right_win = a, (a, b)
    cuts = [(c, kind) for c, kind in frozen_cuts(model, t)
            if left + 1e-12 < c < right - 1e-12]
    c_left = [(left, None)] + [c for c in cuts if c[0] <= x]
    c_right = [c for c in cuts if c[0] > x] + [(right, None)]
    lcut, lkind = c_left[-1]
    rcut, _ = c_right[0]
    if lkind is None and left_win is not None:
        return _edge_density(model, t, left_win[0], left_win[1], "right")
    if rcut == right and right_win is not None and c_right[0][1] is None:
        return _edge_density(model, t, right_win[0], right_win[1], "left")
    if lkind == "reach":
        return 0.0
    if lkind == "bottom":
        return 1.0
    # stretch end is the support boundary with no window on that side
    return _frozen_density_boundary(model, t, x)


def _frozen_density_boundary(model: ScaledModel, t: float, x: float) -> float:
    if t < 0.5 * model.big_t:
        inside = any(a <= x <= b for a, b in model.segments)
        return 1.0 if inside else 0.0
    return 1.0 if 0.0 <= x <= model.big_n else 0.0


def local_density(model: ScaledModel, t: float, x: float) -> float:
    """Particle density rho_t(x) = 1 - p_horizontal at any interior point."""
    sol = solve_slope(model, t, x)
    if isinstance(sol, FrozenVerdict):
        return sol.density
    return 1.0 - sol.p_horizontal


# ---------------------------------------------------------------------------
# limit height function
# ---------------------------------------------------------------------------

def limit_height(model: ScaledModel, t: float, x: float,
                 tol: float = 1e-7) -> float:
    """h(t, x) = integral of the limiting particle density up to x.

    Panels break at liquid window edges and at the kinematic cut lines,
    so each frozen panel has constant density.
    """
    if not (0.0 < t < model.big_t):
        raise DomainError("t must be interior")
    lo, hi = model.support(t)
    x = min(max(x, lo), hi)
    wins = liquid_windows(model, t)
    breaks = {lo, x}
    for a, b in wins:
        if lo < a < x:
            breaks.add(a)
        if lo < b < x:
            breaks.add(b)
    for c, _ in frozen_cuts(model, t):
        if lo < c < x:
            breaks.add(c)
    pts = sorted(breaks)
    total = 0.0
    for a, b in zip(pts, pts[1:]):
        if b - a < 1e-13:
            continue
        mid = 0.5 * (a + b)
        if any(wa < mid < wb for wa, wb in wins):
            val, _ = quad(lambda s: 1.0 - solve_slope(
                model, t, s, frozen_density_from_scan=False).p_horizontal,
                a, b, epsabs=tol, epsrel=tol, limit=200)
            total += val
        else:
            total += frozen_density(model, t, mid) * (b - a)
    return total


def density_mass(model: ScaledModel, t: float) -> float:
    """Total mass of rho_t; equals big_n in exact arithmetic."""
    lo, hi = model.support(t)
    return limit_height(model, t, hi)


# ---------------------------------------------------------------------------
# arctic curve
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ArcticPoint:
    t: float
    x: float
    w: float      # the real value of Omega on the curve
    u: complex


def _double_root_certificate(model: ScaledModel, t: float, x: float,
                             rtol: float = 1e-6) -> bool:
    roots = slope_roots(model, t, complex(model.b_t(t, x)))
    n = len(roots)
    gaps = [abs(roots[i] - roots[j]) for i in range(n) for j in range(i + 1, n)]
    gaps = np.sort(np.asarray(gaps))
    med = max(np.median(gaps), 1e-300)
    return gaps[0] ** 2 < rtol * med ** 2


def _omega_range(model: ScaledModel, ngrid: int = 40) -> tuple[float, float]:
    vals = []
    for t in np.linspace(1e-3 * model.big_t, (1 - 1e-3) * model.big_t, ngrid):
        lo, hi = model.support(t)
        xs = np.linspace(lo, hi, ngrid)
        vals.extend(np.real(model.b_t(t, xs)))
    lo, hi = min(vals), max(vals)
    pad = 0.35 * (hi - lo)
    return lo - pad, hi + pad


def arctic_curve(model: ScaledModel, M: int = 200) -> list[ArcticPoint]:
    """Arctic points from a sweep of the real parameter w = Omega."""
    if M < 8:
        raise InvalidInputError("need at least 8 sweep points")
    wlo, whi = _omega_range(model)
    ks = model.kappa_sq
    lq = model.logq
    # half the budget on the bulk range; the rest on a tan-compactified
    # grid reaching |w| -> infinity, where the curve meets the right wall
    center, span = 0.5 * (wlo + whi), max(whi - wlo, 1e-6)
    bulk = np.linspace(wlo, whi, M - M // 2)
    s = np.linspace(0.01, 0.99, M // 2)
    far = center + 0.5 * span * np.tan(np.pi * (s - 0.5))
    sweep = np.unique(np.concatenate([bulk, far]))
    out = []
    for w in sweep:
        try:
            disc = np.sqrt(complex(w) ** 2 - 4.0 * ks)
            Q = (w + disc) / (2.0 * ks)
            if abs(Q) < 1e-14:
                continue
            U, V, dU, dV = UV_from_Q(model, Q)
            # the double-root system gives V'(u) = U'(u) / q^t, so
            # q^t = U'/V' (the inverted ratio printed in the headline
            # parametrization does not match its own derivation)
            qt = dU / dV
            if abs(qt.imag) > 1e-8 * (abs(qt) + 1) or qt.real <= 0:
                continue
            t = math.log(qt.real) / lq
            if not 1e-9 < t < model.big_t - 1e-9:
                continue
            ww = V - U / qt.real
            if abs(ww.imag) > 1e-7 * (abs(ww) + 1):
                continue
            ww = ww.real
            qmt = model.qp(-t)
            disc_x = complex(ww * ww - 4.0 * ks * qmt)
            sq = np.sqrt(disc_x)
            xs = []
            for sgn in (+1, -1):
                X = (ww + sgn * sq) / (2.0 * ks * qmt)
                if abs(X.imag) < 1e-7 * (abs(X) + 1) and X.real > 0:
                    xs.append(math.log(X.real) / lq)
            kept = [xx for xx in xs if model.in_polygon(t, xx, tol=1e-7)]
            if ks < 0 and len(kept) > 1:
                # imaginary case: the admissible root is unique
                kept = kept[:1]
            for xx in kept:
                if _double_root_certificate(model, t, xx):
                    out.append(ArcticPoint(t, xx, float(w),
                                           _u_from_Q(model, Q)))
                else:
                    logger.info("sweep w=%g: (%g, %g) fails the double-root "
                                "certificate; discarded", w, t, xx)
        except (DomainError, ConsistencyError, ZeroDivisionError,
                FloatingPointError):
            continue
    return out


# ---------------------------------------------------------------------------
# characteristic flow and the Omega bijection
# ---------------------------------------------------------------------------

def calS0(model: ScaledModel, w0: complex) -> complex:
    """S_0(w) = U at the fundamental-domain preimage of w under b_0."""
    Q = _slab_Q(model, complex(w0))
    U, _, _, _ = UV_from_Q(model, Q)
    return U


def characteristic_flow(model: ScaledModel, w0: complex, t: float):
    """Flow w_t = w_0 - (q^{-t} - 1) S_0(w_0) plus the b_t-preimage of
    smaller real part."""
    w0 = complex(w0)
    if w0.imag >= 0:
        raise DomainError("flow starts in the open lower half-plane")
    s0 = calS0(model, w0)
    wt = w0 - (model.qp(-t) - 1.0) * s0
    ks = model.kappa_sq
    qmt = model.qp(-t)
    disc = np.sqrt(wt * wt - 4.0 * ks * qmt)
    zs = []
    for sgn in (+1, -1):
        X = (wt + sgn * disc) / (2.0 * ks * qmt)
        if abs(X) > 0:
            zs.append(np.log(X) / model.logq)
    zt = min(zs, key=lambda z: z.real)
    return complex(wt), complex(zt)


def omega_map(model: ScaledModel, t: float, x: float) -> complex:
    """Omega(t, x) in the lower half-plane, for liquid (t, x)."""
    sol = solve_slope(model, t, x, frozen_density_from_scan=False)
    if isinstance(sol, FrozenVerdict):
        raise DomainError(f"({t},{x}) is not liquid")
    return sol.Omega


def omega_inverse(model: ScaledModel, omega: complex) -> tuple[float, float]:
    """(t, x) with Omega(t, x) = omega; inverse of the bijection.

    The flow w_t is linear in q^{-t}, so the hitting time of the real
    axis is available in closed form.
    """
    omega = complex(omega)
    if omega.imag == 0:
        raise DomainError("omega on the real axis is the arctic boundary")
    if omega.imag > 0:
        raise DomainError("omega must be in the lower half-plane")
    s0 = calS0(model, omega)
    if s0.imag >= 0:
        raise ConsistencyError("S_0 failed the Nevanlinna property")
    ratio = 1.0 + omega.imag / s0.imag
    if ratio <= 1.0:
        raise ConsistencyError("flow does not ascend")
    t = -math.log(ratio) / (-model.logq)
    t_hit = math.log(ratio) / (-model.logq)
    w_hit = omega - (ratio - 1.0) * s0
    ks = model.kappa_sq
    qmt = model.qp(-t_hit)
    disc = np.sqrt(complex(w_hit.real) ** 2 - 4.0 * ks * qmt)
    xs = []
    for sgn in (+1, -1):
        X = (w_hit.real + sgn * disc) / (2.0 * ks * qmt)
        if abs(X.imag) < 1e-8 * (abs(X) + 1) and X.real > 0:
            xs.append(math.log(X.real) / model.logq)
    if not xs:
        raise ConsistencyError("no real preimage at the hitting time")
    return float(t_hit), float(min(xs))


# ---------------------------------------------------------------------------
# complex continuation of the slope and the Burgers residual
# ---------------------------------------------------------------------------

def _roots_at(model: ScaledModel, t: float, z: complex) -> np.ndarray:
    return slope_roots(model, t, complex(model.b_t(t, z)))


def continue_Q(model: ScaledModel, t0: float, z0: complex, Q0: complex,
               t1: float, z1: complex, depth: int = 0,
               max_depth: int = 14) -> complex:
    """Track the polynomial root Q continuously from (t0, z0) to (t1, z1),
    bisecting the parameter segment until nearest-root matching is safe."""
    roots = _roots_at(model, t1, z1)
    d = np.abs(roots - Q0)
    j = int(np.argmin(d))
    others = np.delete(d, j)
    if others.size == 0 or d[j] < 0.4 * others.min() or depth >= max_depth:
        return complex(roots[j])
    tm, zm = 0.5 * (t0 + t1), 0.5 * (z0 + z1)
    Qm = continue_Q(model, t0, z0, Q0, tm, zm, depth + 1, max_depth)
    return continue_Q(model, tm, zm, Qm, t1, z1, depth + 1, max_depth)


def slope_at_complex(model: ScaledModel, t: float, z: complex,
                     anchor: Optional[tuple] = None) -> tuple[complex, complex]:
    """Doubly complex slope f_t(z) by root continuation from a liquid
    anchor on the real axis (or a caller-provided (t0, z0, Q0)).

    Im z is first reduced to the fundamental strip (the slope is
    2 pi i / logq periodic); without a caller anchor the continuation
    path detours through quarter-period height, where the polynomial
    roots stay well separated, before descending to the target.
    """
    period = 2.0 * math.pi / (-model.logq)
    z = complex(z)
    im_red = (z.imag + 0.5 * period) % period - 0.5 * period
    z = complex(z.real, im_red)
    if anchor is not None:
        t0, z0, Q0 = anchor
        Q = continue_Q(model, t0, z0, Q0, t, z)
    else:
        wins = liquid_windows(model, t)
        if not wins:
            raise DomainError(f"no liquid section at t={t}")
        a, b = max(wins, key=lambda wpair: wpair[1] - wpair[0])
        x0 = 0.5 * (a + b)
        sol = solve_slope(model, t, x0, frozen_density_from_scan=False)
        Q0 = sol.Q
        om0 = omega_of(model, np.array([Q0]))[0]
        # branch seed: Im f > 0 continues into the upper half-strip
        f0v = _f_from_omega(model, t, x0, om0)
        sgn = 1.0 if z.imag >= 0 else -1.0
        if (sgn > 0 and f0v.imag < 0) or (sgn < 0 and f0v.imag > 0):
            Q0 = complex(np.conj(Q0))
        hgt = sgn * 0.25 * period
        waypoints = [complex(x0), complex(x0, hgt), complex(z.real, hgt), z]
        if abs(z.imag) >= 0.2 * period:
            waypoints = [complex(x0), complex(x0, z.imag),
                         complex(z.real, z.imag)]
        Q = complex(Q0)
        prev = waypoints[0]
        for wp in waypoints[1:]:
            Q = continue_Q(model, t, prev, Q, t, wp)
            prev = wp
    om = complex(omega_of(model, np.array([Q]))[0])
    f = _f_from_omega(model, t, z, om)
    return f, Q


def burgers_residual(model: ScaledModel, points: Sequence[tuple],
                     h: float = 1e-3, delta: float = 1e-3):
    """Max residual of the first-order PDE for ln f over liquid points,
    evaluated at z = x + i delta with central differences."""
    worst = 0.0
    skipped = []
    details = []
    for (t, x) in points:
        try:
            z = complex(x, delta)
            f_c, Q_c = slope_at_complex(model, t, z)
            anchor = (t, z, Q_c)
            f_tp, _ = slope_at_complex(model, t + h, z, anchor)
            f_tm, _ = slope_at_complex(model, t - h, z, anchor)
            f_zp, _ = slope_at_complex(model, t, z + h, anchor)
            f_zm, _ = slope_at_complex(model, t, z - h, anchor)
            dt = (np.log(f_tp) - np.log(f_tm)) / (2.0 * h)
            dz = (np.log(1.0 - f_zp) - np.log(1.0 - f_zm)) / (2.0 * h)
            lq = model.logq
            num = model.kappa_sq * model.qp(complex(z - t)) + model.qp(-z)
            den = model.kappa_sq * model.qp(complex(z - t)) - model.qp(-z)
            res = abs(dt + dz - lq * num / den)
            worst = max(worst, res)
            details.append(((t, x), res))
        except (DomainError, ConsistencyError) as exc:
            skipped.append(((t, x), str(exc)))
    return worst, details, skipped


# ---------------------------------------------------------------------------
# the invariant functional relation
# ---------------------------------------------------------------------------

def calS_t(model: ScaledModel, t: float, w: complex,
           hint: Optional[complex] = None) -> tuple[complex, complex, complex]:
    """(S_t(w), S_t'(w), Q) where Q solves V - q^{-t} U = w in the
    fundamental domain."""
    roots = slope_roots(model, t, complex(w))
    cands = []
    for Q in roots:
        # fundamental-domain side of the Q -> 1/(ks Q) involution
        if abs(model.kappa_sq * Q * Q) < 1.0 - 1e-9:
            continue
        # the flow must start in the open lower half-plane:
        # Omega(Q) = b_0(u) is the starting point w^0
        if omega_of(model, np.array([Q]))[0].imag >= 0:
            continue
        cands.append(Q)
    if not cands:
        raise DomainError("no admissible branch for S_t at this w")
    if hint is not None:
        Q = min(cands, key=lambda q: abs(q - hint))
    else:
        # unique by injectivity of the flow map; numerically prefer the
        # candidate deepest in the lower half-plane
        Q = min(cands,
                key=lambda q: omega_of(model, np.array([q]))[0].imag)
    U, V, dU, dV = UV_from_Q(model, complex(Q))
    qmt = model.qp(-t)
    dSdw = dU / (dV - qmt * dU)
    return U, dSdw, complex(Q)


def calS_t_inverse(model: ScaledModel, t: float, v: complex,
                   max_steps: int = 100, tol: float = 1e-11) -> complex:
    """Newton inversion of S_t, seeded by the linear asymptote
    S_t^{-1}(v) ~ (q^{-T} - q^{-t}) v."""
    w = (model.qp(-model.big_t) - model.qp(-t)) * complex(v)
    hint = None
    for _ in range(max_steps):
        s, ds, hint = calS_t(model, t, w, hint)
        err = s - v
        if abs(err) < tol * (1.0 + abs(v)):
            return complex(w)
        if ds == 0:
            break
        w = w - err / ds
    raise ConvergenceError(f"Newton inversion stalled at w={w}, "
                           f"residual {abs(err):.3e}")


def verify_invariant_relation(model: ScaledModel, t: float,
                              v_samples: Sequence[complex]) -> float:
    """max |S_t^{-1}(v) + q^{-t} v - S_0^{-1}(v) - v| over the samples.

    The exponent is -t: substituting v = S_0(w_0) into the flow identity
    gives S_t^{-1}(v) = S_0^{-1}(v) - (q^{-t} - 1) v directly.
    """
    if t == 0.0:
        return 0.0
    qmt = model.qp(-t)
    worst = 0.0
    for v in v_samples:
        wt = calS_t_inverse(model, t, complex(v))
        w0 = calS_t_inverse(model, 0.0, complex(v))
        worst = max(worst, abs(wt + qmt * v - w0 - v))
    return worst
