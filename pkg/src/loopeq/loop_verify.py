"""Holomorphic observables of one-step measures and their residue checks.

The defining property of the one-step measures is that a specific
expectation-valued function of a complex variable has no poles; every
operation here either evaluates such an observable or verifies (by
small-circle quadrature) that its candidate residues vanish.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import (GeometryError, InvalidInputError, PoleEvaluationError)
from .kernels import (AscendingKernel, DescendingKernel, KernelFunction,
                      ParticleConfig, _ascending_rows, enumerate_ascending,
                      enumerate_descending, lattice_points, step_weight)
from .numerics import Contour, contour_integrate

_RESIDUE_NODES = 64


# ---------------------------------------------------------------------------
# raw partition function at complex nodes (route (b) machinery)
# ---------------------------------------------------------------------------

def _log_partition_at(k: AscendingKernel, positions: np.ndarray,
                      site_factors: Optional[tuple] = None) -> complex:
    """log of the sum over e of the unnormalized weight; positions may be
    complex.  In the Lagrange frame the sum is det(rows0 + rows1)."""
    pos = np.asarray(positions, dtype=complex)
    n = len(pos)
    if n == 0:
        return 0.0
    v0 = np.atleast_1d(np.asarray(k.b(pos)))
    if n > 1:
        iu = np.triu_indices(n, 1)
        if np.min(np.abs((v0[:, None] - v0[None, :])[iu])) \
                < 1e-13 * (1 + np.abs(v0).max()):
            raise PoleEvaluationError("coincident b-values among positions")
    rows0, rows1, shifts = _ascending_rows(k, pos, site_factors)
    m = rows0 + rows1
    scales = np.max(np.abs(m), axis=1)
    if np.any(scales == 0):
        return complex(-np.inf)
    sign, logabs = np.linalg.slogdet(m / scales[:, None])
    if sign == 0:
        return complex(-np.inf)
    return complex(logabs + np.log(sign) + np.sum(np.log(scales))
                   + np.sum(shifts))


def ascending_observable(k: AscendingKernel, x: ParticleConfig, z: complex,
                         route: str = "partition",
                         site_factors: Optional[tuple] = None) -> complex:
    """The holomorphic observable of the ascending measure at z.

    route "brute": expectation over all 2^n jump patterns (n <= 22);
    route "partition": ratio Z_{n+1}(x, z) / Z_n(x).  The two agree to
    ~1e-9 relative wherever brute force is feasible.
    """
    z = complex(z)
    pos = x.array()
    if x.n and np.min(np.abs(z - pos)) < 1e-12 * (1 + abs(z)):
        raise PoleEvaluationError("z collides with a particle; "
                                  "use residue_at instead")
    if route == "partition":
        log_num = _log_partition_at(
            k, np.concatenate([pos.astype(complex), [z]]),
            None if site_factors is None else
            (np.concatenate([site_factors[0], [1.0]]),
             np.concatenate([site_factors[1], [1.0]])))
        log_den = _log_partition_at(k, pos.astype(complex), site_factors)
        return complex(np.exp(log_num - log_den))
    if route != "brute":
        raise InvalidInputError(f"unknown route {route!r}")
    patterns, weights = enumerate_ascending(k, x)
    if site_factors is not None:
        g0, g1 = site_factors
        extra = np.array([np.prod(np.where(np.asarray(e) > 0, g1, g0))
                          for e in patterns])
        weights = weights * extra
    bz = complex(np.asarray(k.b(z)))
    bzt = complex(np.asarray(k.b(z + k.theta)))
    bx = np.atleast_1d(np.asarray(k.b(pos)))
    acc = 0.0 + 0.0j
    pp = complex(np.asarray(k.phi_plus(z)))
    pm = complex(np.asarray(k.phi_minus(z)))
    for e, w in zip(patterns, weights):
        bshift = np.atleast_1d(np.asarray(k.b(pos + k.theta * np.asarray(e))))
        t1 = np.prod((bzt - bshift) / (bz - bx))
        t2 = np.prod((bz - bshift) / (bz - bx))
        acc += w * (pp * t1 + pm * t2)
    return complex(acc / weights.sum())


def residue_at(k: AscendingKernel, x: ParticleConfig, i: int,
               observable: Optional[Callable[[complex], complex]] = None,
               radius: Optional[float] = None,
               nodes: int = _RESIDUE_NODES) -> complex:
    """Residue of the ascending observable at the candidate pole x_i,
    by quadrature over a small circle (radius = min gap / 4)."""
    if not 1 <= i <= x.n:
        raise InvalidInputError("particle index out of range")
    pos = x.array()
    center = pos[i - 1]
    others = np.delete(pos, i - 1)
    gap = np.min(np.abs(others - center)) if others.size else 1.0
    r = radius if radius is not None else gap / 4.0
    if others.size and np.min(np.abs(others - center)) <= r:
        raise GeometryError("residue circle touches another particle")
    obs = observable or (lambda zz: ascending_observable(k, x, zz))
    circle = Contour("ellipse", complex(center), r, r, nodes)
    return contour_integrate(obs, circle) / (2j * np.pi)


def observable_scale(obs: Callable[[complex], complex], center: complex,
                     radius: float, nodes: int = 16) -> float:
    """max |obs| on the circle; the natural scale for residue tolerances."""
    z, _ = Contour("ellipse", complex(center), radius, radius,
                   max(16, nodes)).points_weights()
    return float(max(abs(obs(zz)) for zz in z))


# ---------------------------------------------------------------------------
# descending observable
# ---------------------------------------------------------------------------

def check_weight_ratio(k: DescendingKernel, x: ParticleConfig,
                       phi_plus: KernelFunction, phi_minus: KernelFunction,
                       npoints: int = 20, rtol: float = 1e-10) -> None:
    """Validate w(z+1)/w(z) = phi+(z)/phi-(z) on lattice points of L(x)."""
    lat = lattice_points(x)
    pts = lat[np.linspace(0, len(lat) - 1, min(npoints, len(lat))).astype(int)]
    checked = 0
    for ell in pts:
        w1 = complex(np.asarray(k.w(ell + 1.0)))
        w0 = complex(np.asarray(k.w(ell)))
        fp = complex(np.asarray(phi_plus(ell)))
        fm = complex(np.asarray(phi_minus(ell)))
        vals = [w1, w0, fp, fm]
        if not all(np.isfinite(v) for v in vals):
            continue  # a pole of w or phi; the ratio condition is void there
        # cross-multiplied form avoids dividing by zeros of phi^-
        scale = max(abs(w1 * fm), abs(w0 * fp), 1e-300)
        if abs(w1 * fm - w0 * fp) > rtol * scale:
            raise InvalidInputError(
                f"weight-ratio condition fails at lattice point {ell}: "
                f"w(l+1) phi-(l) = {w1 * fm} vs w(l) phi+(l) = {w0 * fp}")
        checked += 1
    if checked == 0:
        raise InvalidInputError("weight-ratio condition unverifiable: "
                                "no finite lattice points")


def descending_observable(k: DescendingKernel, x: ParticleConfig, z: complex,
                          phi_plus: KernelFunction,
                          phi_minus: KernelFunction) -> complex:
    """The holomorphic observable of the descending measure at z
    (enumeration over interlacing configurations)."""
    check_weight_ratio(k, x, phi_plus, phi_minus)
    z = complex(z)
    lat = lattice_points(x)
    pos = x.array()
    bz = complex(np.asarray(k.b(z)))
    bz1 = complex(np.asarray(k.b(z + 1.0)))
    bx = np.atleast_1d(np.asarray(k.b(pos)))
    blat = np.atleast_1d(np.asarray(k.b(lat)))
    tele = complex(np.prod((bz1 - blat) / (bz - blat)))
    top = complex(np.prod(bz - bx))
    pp = complex(np.asarray(phi_plus(z)))
    pm = complex(np.asarray(phi_minus(z)))
    ys, weights = enumerate_descending(k, x)
    acc = 0.0 + 0.0j
    for y, w in zip(ys, weights):
        by = np.atleast_1d(np.asarray(k.b(y.array())))
        t1 = pp * top / np.prod(bz - by)
        t2 = pm * tele * top / np.prod(bz1 - by)
        acc += w * (t1 + t2)
    return complex(acc / weights.sum())


def descending_residue_points(x: ParticleConfig) -> np.ndarray:
    """Interior candidate poles: every lattice point except the tops x_i."""
    lat = lattice_points(x)
    tops = set(float(p) for p in x.positions[:-1])
    return np.array([m for m in lat if float(m) not in tops])


# ---------------------------------------------------------------------------
# Poisson-walk observable
# ---------------------------------------------------------------------------

def _vandermonde_jump_ratio(pos: np.ndarray, j: int, theta: float) -> float:
    mask = np.arange(len(pos)) != j
    return float(np.prod((pos[j] + theta - pos[mask]) / (pos[j] - pos[mask])))


def poisson_observable(x: ParticleConfig, phi: KernelFunction, theta: float,
                       z: complex, rate_factors: Optional[Sequence[float]] = None
                       ) -> complex:
    """Generator observable of the nonintersecting Poisson walk at z.

    rate_factors multiplies the jump rate of individual particles inside
    the generator sum only; anything but all-ones breaks holomorphicity
    (used as a negative control).
    """
    z = complex(z)
    pos = x.array()
    both = np.concatenate([pos, pos + 1.0])
    if np.min(np.abs(z - both)) < 1e-12 * (1 + abs(z)):
        raise PoleEvaluationError("z at a candidate pole")
    rates = np.ones(x.n) if rate_factors is None else np.asarray(rate_factors)
    gen = 0.0 + 0.0j
    for j in range(x.n):
        vr = _vandermonde_jump_ratio(pos, j, theta)
        pj = complex(np.asarray(phi(pos[j]))) * rates[j]
        gen += vr * pj * (1.0 / (z - pos[j] - 1.0) - 1.0 / (z - pos[j]))
    t1 = np.prod((z - pos + theta) / (z - pos))
    t2 = np.prod((z - 1.0 - pos + theta) / (z - 1.0 - pos))
    # the shifted product carries phi(z-1): the observable is the difference
    # of one analytic expression evaluated at z and at z-1, and only this
    # version cancels the residues at x_j + 1 for non-constant phi
    return complex(theta * gen
                   + complex(np.asarray(phi(z))) * t1
                   - complex(np.asarray(phi(z - 1.0))) * t2)


# ---------------------------------------------------------------------------
# scanning
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ResidueReport:
    max_residue: float          # relative to the local observable scale
    argmax: complex
    residues: tuple             # (pole, |residue|/scale) pairs


def holomorphy_scan(obs: Callable[[complex], complex],
                    poles: Sequence[complex],
                    radius: float,
                    nodes: int = _RESIDUE_NODES) -> ResidueReport:
    """Quadrature residues of obs at each candidate pole, normalized by the
    local observable scale; reports the worst offender."""
    raw = []
    scales = []
    for p in poles:
        circle = Contour("ellipse", complex(p), radius, radius, nodes)
        res = contour_integrate(obs, circle) / (2j * np.pi)
        raw.append((complex(p), abs(res)))
        scales.append(observable_scale(obs, complex(p), radius))
    if not raw:
        return ResidueReport(0.0, 0.0, ())
    # identically-vanishing observables have no meaningful relative scale
    floor = max(1e-12, 1e-6 * max(scales))
    rows = [(p, r / max(s, floor)) for (p, r), s in zip(raw, scales)]
    worst = max(rows, key=lambda t: t[1])
    return ResidueReport(worst[1], worst[0], tuple(rows))


def corrupted_site_factors(n: int, site: int, factor: float = 2.0,
                           branch: int = 0) -> tuple:
    """Per-site tilt multiplying phi^- (branch 0) or phi^+ (branch 1) at one
    site; breaks the measure so residues stop cancelling."""
    g0 = np.ones(n)
    g1 = np.ones(n)
    (g0 if branch == 0 else g1)[site] = factor
    return g0, g1
