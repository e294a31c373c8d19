"""First-order predictions for one-step increments and field fluctuations.

The predictions are contour integrals of log B, where B combines the
exponentiated Stieltjes transform of the empirical density with the jump
weights; stability (a single-valued branch of log B off the support) is a
checkable precondition.  Exact finite-n counterparts come from
enumeration or determinant tilts, so every prediction ships with an
oracle to compare against.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.integrate import quad

from .errors import DomainError, GeometryError, InvalidInputError
from .kernels import (AscendingKernel, Factor, ParticleConfig,
                      enumerate_ascending, log_partition_function)
from .limitshape import ScaledModel, liquid_windows, omega_map
from .numerics import Contour, log_track
from .rng import stream
from .tilings import TilingTrajectory, TrapezoidSpec, sample_tiling

_GAUSS_NODES = 12


@dataclass(frozen=True)
class EmpiricalDensity:
    """Smoothed empirical density: value 1/theta on [eps x_i, eps(x_i+theta)]."""

    epsilon: float
    theta: float
    starts: tuple  # scaled left endpoints eps * x_i

    @staticmethod
    def of(x: ParticleConfig, epsilon: float) -> "EmpiricalDensity":
        return EmpiricalDensity(epsilon, x.theta,
                                tuple(epsilon * p for p in x.positions))

    @property
    def total_mass(self) -> float:
        return len(self.starts) * self.epsilon

    def support_bounds(self) -> tuple[float, float]:
        if not self.starts:
            return (0.0, 0.0)
        return (min(self.starts), max(self.starts) + self.epsilon * self.theta)


@dataclass(frozen=True)
class PredictionReport:
    predicted: complex
    measured: complex
    epsilon: float
    standard_error: float = 0.0

    @property
    def error(self) -> float:
        return abs(self.predicted - self.measured)


# ---------------------------------------------------------------------------
# scaled kernel functions
# ---------------------------------------------------------------------------

def scaled_b(k: AscendingKernel, eps: float, z):
    """b in scaled coordinates: bb(z) = b(z / eps)."""
    return k.b(np.asarray(z, dtype=complex) / eps)


def scaled_b_deriv(k: AscendingKernel, eps: float, z):
    return k.b.deriv(np.asarray(z, dtype=complex) / eps) / eps


def scaled_phi(k: AscendingKernel, eps: float, z):
    z = np.asarray(z, dtype=complex) / eps
    return k.phi_plus(z), k.phi_minus(z)


def _interval_transform(k: AscendingKernel, eps: float, z: complex,
                        lo: float, hi: float) -> complex:
    """I = integral over [lo, hi] (scaled) of bb'(z) / (bb(z) - bb(s)) ds.

    Closed forms for a single affine or q-affine factor; Gauss fallback
    for products (the intervals are O(eps) long, so a fixed rule is
    already at machine precision).
    """
    fs = k.b.factors
    if len(fs) == 1 and fs[0].power == 1:
        f = fs[0]
        if f.kind == "affine":
            return complex(np.log((z - lo) / (z - hi)))
        if f.kind == "qaffine":
            c = f.g * math.log(f.q) / eps
            Q = np.exp(c * z)
            return complex(c * (hi - lo)
                           + np.log((Q - np.exp(c * lo)) / (Q - np.exp(c * hi))))
    qk = _qk_parameters(k, eps)
    if qk is not None:
        lq, ks, t = qk
        S_lo, S_hi = np.exp(lq * lo), np.exp(lq * hi)
        # first piece: log((Q - S_lo)/(Q - S_hi)) with Q = q^z
        e1 = lq * z
        if np.real(e1) > 200:  # Q overflows: ratio -> 1
            term1 = np.log((1.0 - S_lo * np.exp(-e1))
                           / (1.0 - S_hi * np.exp(-e1)))
        else:
            Q = np.exp(e1)
            term1 = np.log((Q - S_lo) / (Q - S_hi))
        # second piece: log((S_hi - ref)/(S_lo - ref)), ref = q^{t-z}/ks
        e2 = lq * (t - z)
        if np.real(e2) > 200:  # ref overflows: ratio -> 1
            rinv = ks * np.exp(-e2)
            term2 = np.log((S_hi * rinv - 1.0) / (S_lo * rinv - 1.0))
        else:
            ref = np.exp(e2) / ks
            term2 = np.log((S_hi - ref) / (S_lo - ref))
        return complex(term1 + term2)
    return _interval_gauss(k, eps, z, lo, hi)


def _qk_parameters(k: AscendingKernel, eps: float):
    """Detect the tiling form b(x) = q^{-x} + ks q^{x-t}; returns the
    scaled (logq, ks, t) or None."""
    fs = k.b.factors
    if len(fs) != 2:
        return None
    a, b = fs
    if (a.kind, b.kind) != ("qaffine", "qaffine"):
        return None
    if not (a.a == 0 and a.b == 1 and a.g == -1 and a.d == 0 and a.power == 1):
        return None
    if not (b.a == 1 and b.g == 2 and b.power == 1 and b.q == a.q):
        return None
    lq = math.log(a.q) / eps
    return lq, b.b, float(np.real(-b.d)) * eps


_GL_X, _GL_W = np.polynomial.legendre.leggauss(_GAUSS_NODES)


def _interval_gauss(k: AscendingKernel, eps: float, z: complex,
                    lo: float, hi: float) -> complex:
    s = lo + (hi - lo) * 0.5 * (_GL_X + 1.0)
    vals = scaled_b_deriv(k, eps, z) / (scaled_b(k, eps, z)
                                        - scaled_b(k, eps, s))
    return complex(np.sum(vals * _GL_W) * 0.5 * (hi - lo))


def stieltjes_exp(dens: EmpiricalDensity, k: AscendingKernel, z: complex,
                  force_gauss: bool = False) -> complex:
    """G(z) = exp[ theta * integral of bb'(z) rho(s) / (bb(z)-bb(s)) ds ]."""
    if not dens.starts:
        return 1.0 + 0.0j
    lo, hi = dens.support_bounds()
    if abs(z.imag) < 1e-14 and lo <= z.real <= hi:
        raise DomainError("z inside the support of the density")
    eps, th = dens.epsilon, dens.theta
    total = 0.0 + 0.0j
    for a in dens.starts:
        if force_gauss:
            total += _interval_gauss(k, eps, z, a, a + eps * th)
        else:
            total += _interval_transform(k, eps, z, a, a + eps * th)
    return complex(np.exp(total))  # theta * (1/theta) cancels


def b_function(k: AscendingKernel, x: ParticleConfig, eps: float,
               z: complex) -> complex:
    """B(z) = G(z) phi+(z) + phi-(z) in scaled coordinates."""
    dens = EmpiricalDensity.of(x, eps)
    g = stieltjes_exp(dens, k, z)
    pp, pm = scaled_phi(k, eps, z)
    return complex(g * pp + pm)


# ---------------------------------------------------------------------------
# stability
# ---------------------------------------------------------------------------

def _tracked_logB(k: AscendingKernel, x: ParticleConfig, eps: float,
                  contour: Contour):
    """(nodes, weights, continuous log B) with the branch anchored at the
    node of maximal real part (principal value there)."""
    z, w = contour.points_weights()
    dens = EmpiricalDensity.of(x, eps)
    pp, pm = scaled_phi(k, eps, z)
    g = np.array([stieltjes_exp(dens, k, zz) for zz in z])
    bvals = g * pp + pm
    start = int(np.argmax(z.real))
    rolled = np.roll(bvals, -start)
    logs, winding = log_track(rolled)
    logs = np.roll(logs, start)
    return z, w, bvals, logs, winding


def verify_stability(k: AscendingKernel, x: ParticleConfig, eps: float,
                     contour: Contour, floor: float = 1e-8):
    """(winding, min |B|) along the contour; stability needs winding 0 and
    |B| bounded away from zero."""
    _, _, bvals, _, winding = _tracked_logB(k, x, eps, contour)
    return winding, float(np.min(np.abs(bvals)))


# ---------------------------------------------------------------------------
# one-step predictions
# ---------------------------------------------------------------------------

def predict_mean_increment(k: AscendingKernel, x: ParticleConfig, eps: float,
                           z: complex, contour: Contour) -> complex:
    """Leading deterministic term of the one-step increment of the
    modified Stieltjes transform:
    (1/(2 pi i theta)) oint log B(w) bb'(w) bb'(z) / (bb(w)-bb(z))^2 dw."""
    if contour.contains(z):
        raise GeometryError("z must lie outside the contour")
    nodes, wts, bvals, logs, winding = _tracked_logB(k, x, eps, contour)
    if winding != 0:
        raise DomainError(f"stability fails: winding {winding}")
    bz = scaled_b(k, eps, z)
    vals = logs * scaled_b_deriv(k, eps, nodes) * scaled_b_deriv(k, eps, z) \
        / (scaled_b(k, eps, nodes) - bz) ** 2
    return complex(np.sum(vals * wts) / (2j * np.pi * x.theta))


def predict_step_covariance(k: AscendingKernel, x: ParticleConfig, eps: float,
                            z1: complex, z2: complex,
                            contour: Contour) -> complex:
    """(1/(2 pi i theta)) oint [G phi+ / B](w)
    prod_{z in {z1,z2}} bb'(w) bb'(z)/(bb(w)-bb(z))^2 dw."""
    for z in (z1, z2):
        if contour.contains(z):
            raise GeometryError("z1, z2 must lie outside the contour")
    nodes, wts, bvals, _, _ = _tracked_logB(k, x, eps, contour)
    dens = EmpiricalDensity.of(x, eps)
    pp, _ = scaled_phi(k, eps, nodes)
    g = np.array([stieltjes_exp(dens, k, zz) for zz in nodes])
    db = scaled_b_deriv(k, eps, nodes)
    bw = scaled_b(k, eps, nodes)
    vals = (g * pp / bvals) * db * scaled_b_deriv(k, eps, z1) \
        / (bw - scaled_b(k, eps, z1)) ** 2 \
        * db * scaled_b_deriv(k, eps, z2) / (bw - scaled_b(k, eps, z2)) ** 2
    return complex(np.sum(vals * wts) / (2j * np.pi * x.theta))


def exact_increment_stats(k: AscendingKernel, x: ParticleConfig, eps: float,
                          zs: Sequence[complex]):
    """Exact mean vector and covariance matrix of the one-step increment
    observable at the points zs, by enumeration over e (n <= 22)."""
    patterns, weights = enumerate_ascending(k, x)
    probs = np.real(weights / weights.sum())
    E = np.array([np.array(e, dtype=float) for e in patterns])
    p1 = probs @ E
    cov_e = (probs[:, None, None] * (E[:, :, None] - p1[None, :, None])
             * (E[:, None, :] - p1[None, None, :])).sum(axis=0)
    th = x.theta
    cs = []
    for z in zs:
        c = np.array([
            (_interval_transform(k, eps, z, eps * (p + 1), eps * (p + 1 + th))
             - _interval_transform(k, eps, z, eps * p, eps * (p + th)))
            / (eps * th) for p in x.positions])
        cs.append(c)
    mean = np.array([c @ p1 for c in cs])
    cov = np.array([[cs[i] @ cov_e @ cs[j] for j in range(len(zs))]
                    for i in range(len(zs))])
    return mean, cov


def check_A_expansion(k: AscendingKernel, x: ParticleConfig, eps: float,
                      z: complex, contour: Contour) -> PredictionReport:
    """Exact log A(z) (determinant tilt) vs the Wiener-Hopf piece
    h_-(bb(z)) = (1/2 pi i) oint log B(w) bb'(w)/(bb(w)-bb(z)) dw."""
    pos = x.array()
    bz = complex(np.asarray(scaled_b(k, eps, z)))
    b0 = np.atleast_1d(np.asarray(k.b(pos)))
    b1 = np.atleast_1d(np.asarray(k.b(pos + k.theta)))
    g1 = (bz - b1) / (bz - b0)
    g0 = np.ones_like(g1)
    log_tilted = log_partition_function(k, x, (g0, g1))
    log_plain = log_partition_function(k, x)
    measured = log_tilted - log_plain
    nodes, wts, _, logs, winding = _tracked_logB(k, x, eps, contour)
    if winding != 0:
        raise DomainError(f"stability fails: winding {winding}")
    vals = logs * scaled_b_deriv(k, eps, nodes) \
        / (scaled_b(k, eps, nodes) - scaled_b(k, eps, z))
    predicted = complex(np.sum(vals * wts) / (2j * np.pi))
    return PredictionReport(predicted=predicted, measured=complex(measured),
                            epsilon=eps)


# ---------------------------------------------------------------------------
# GFF covariance and Monte-Carlo fluctuations
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class HeightTest:
    """Test pair (t, F): the pairing uses f(x) = d/dx F(b_t(x)) with F a
    polynomial in w = b_t(x) given by its coefficient list."""

    t: float
    coeffs: tuple  # F(w) = sum_m coeffs[m] w^m


def scaled_model_of(spec: TrapezoidSpec, eps: float) -> ScaledModel:
    return ScaledModel(
        big_n=eps * spec.N, big_t=eps * spec.T,
        segments=tuple((eps * a, eps * b) for a, b in spec.segments),
        logq=math.log(spec.q) / eps, kappa_sq=spec.kappa_sq)


def _F_eval(model: ScaledModel, test: HeightTest, x):
    w = model.b_t(test.t, x)
    return np.polynomial.polynomial.polyval(w, np.asarray(test.coeffs,
                                                          dtype=float))


def _f_eval(model: ScaledModel, test: HeightTest, x):
    """f(x) = d/dx F(b_t(x))."""
    w = model.b_t(test.t, x)
    dw = model.b_t_deriv(test.t, x)
    dF = np.polynomial.polynomial.polyval(
        w, np.polynomial.polynomial.polyder(np.asarray(test.coeffs,
                                                       dtype=float)))
    return np.real(dF * dw)


def gff_kernel(zi: complex, zj: complex) -> float:
    """-(1/2 pi) log |(zi - zj) / (conj(zi) - zj)|."""
    num = abs(zi - zj)
    den = abs(np.conj(zi) - zj)
    if num == 0.0:
        return float("inf")
    return -math.log(num / den) / (2.0 * math.pi)


def gff_covariance(model: ScaledModel, test_i: HeightTest, test_j: HeightTest,
                   outer_nodes: int = 64, tol: float = 1e-6) -> float:
    """Predicted covariance of the height pairings: double integral of the
    pulled-back field kernel against f_i, f_j over the liquid sections."""
    for test in (test_i, test_j):
        if not 0.0 < test.t < model.big_t:
            raise DomainError("test time outside (0, T)")
    wins_i = liquid_windows(model, test_i.t)
    wins_j = liquid_windows(model, test_j.t)
    gx, gw = np.polynomial.legendre.leggauss(outer_nodes)
    total = 0.0
    for (ai, bi) in wins_i:
        xi = ai + (bi - ai) * 0.5 * (gx + 1.0)
        wi = gw * 0.5 * (bi - ai)
        om_i = np.array([omega_map(model, test_i.t, float(xx)) for xx in xi])
        fi = np.atleast_1d(_f_eval(model, test_i, xi))
        for (aj, bj) in wins_j:
            for c, oc, fc, wc in zip(xi, om_i, fi, wi):
                def inner(xj, oc=oc):
                    om_j = omega_map(model, test_j.t, float(xj))
                    return gff_kernel(oc, om_j) * _f_eval(model, test_j,
                                                          float(xj))
                pts = [c] if (test_i.t == test_j.t and aj < c < bj) else None
                val, _ = quad(inner, aj, bj, epsabs=tol, epsrel=tol,
                              limit=200, points=pts)
                total += val * fc * wc
    return float(total)


def height_pairing(traj: TilingTrajectory, model: ScaledModel,
                   test: HeightTest, eps: float) -> float:
    """sqrt(pi) * integral of f(x) h(t/eps, x/eps) dx, exactly.

    h is piecewise linear between lattice columns with slope eps^{-1} on
    occupied cells; integrating by parts leaves the boundary term and one
    exact cell integral of F(b_t) per particle.
    """
    t_idx = int(round(test.t / eps))
    t_scaled = t_idx * eps
    tt = HeightTest(t_scaled, test.coeffs)
    spec = traj.spec
    lo = eps * max(spec.segments[0][0], t_idx - spec.T)
    hi = eps * min(spec.N, spec.segments[-1][1] + t_idx)
    total = _F_eval(model, tt, hi).real * spec.N  # h = N at the top edge
    positions = traj.states[t_idx]
    cells = np.stack([eps * positions, eps * (positions + 1)], axis=1)
    total -= np.sum(_poly_b_integral(model, tt, cells[:, 0],
                                     cells[:, 1])) / eps
    return math.sqrt(math.pi) * total


def _poly_b_integral(model: ScaledModel, test: HeightTest,
                     lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """Exact integral of F(b_t(x)) over [lo, hi] (vectorized): powers of
    b_t expand into exponentials of x."""
    coeffs = np.asarray(test.coeffs, dtype=float)
    lq = model.logq
    ks = model.kappa_sq
    t = test.t
    out = np.zeros_like(lo, dtype=float)
    for m, cm in enumerate(coeffs):
        if cm == 0.0:
            continue
        for j in range(m + 1):
            pref = cm * math.comb(m, j) * (ks ** j) * math.exp(-j * t * lq)
            c = (2 * j - m) * lq
            if abs(c) < 1e-14:
                out += pref * (hi - lo)
            else:
                out += pref * (np.exp(c * hi) - np.exp(c * lo)) / c
    return out


def mc_fluctuations(spec: TrapezoidSpec, tests: Sequence[HeightTest],
                    samples: int, seed: int, threads: int = 1):
    """Empirical covariance matrix of the centered height pairings with
    jackknife standard errors.  Replicas are keyed by their index, so the
    result is independent of execution order and thread count."""
    if samples < 100:
        raise InvalidInputError("need at least 100 samples")
    eps = 1.0 / spec.N
    model = scaled_model_of(spec, eps)
    k = len(tests)

    def one(s: int) -> np.ndarray:
        traj = sample_tiling(spec, seed, replica=s)
        return np.array([height_pairing(traj, model, test, eps)
                         for test in tests])

    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=threads) as pool:
            L = np.array(list(pool.map(one, range(samples))))
    else:
        L = np.array([one(s) for s in range(samples)])
    Lc = L - L.mean(axis=0, keepdims=True)
    cov = (Lc.T @ Lc) / (samples - 1)
    # jackknife over samples
    jk = np.empty((samples, k, k))
    for s in range(samples):
        keep = np.delete(L, s, axis=0)
        kc = keep - keep.mean(axis=0, keepdims=True)
        jk[s] = (kc.T @ kc) / (samples - 2)
    jbar = jk.mean(axis=0)
    se = np.sqrt((samples - 1) / samples
                 * np.sum((jk - jbar) ** 2, axis=0))
    return cov, se
