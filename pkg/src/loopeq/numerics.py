"""Complex-analysis plumbing: contour quadrature, branch tracking, roots.

All routines work in double precision.  Contours are closed, positively
oriented, and non-self-intersecting; quadrature nodes are returned in
traversal order so callers can track continuous branches along them.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import InvalidInputError, QuadratureError, RefinementNeededError

DEFAULT_NODES = 512


@dataclass(frozen=True)
class Contour:
    """Closed rectangle or ellipse in the complex plane.

    Ellipses are integrated with the uniform trapezoidal rule, which is
    spectrally accurate for analytic integrands.  Rectangles use composite
    Gauss-Legendre panels per side: the cornered parametrization breaks the
    periodic-trapezoid argument, while per-side Gauss keeps geometric
    convergence (each side is an analytic segment).
    """

    kind: str  # "rectangle" | "ellipse"
    center: complex
    half_width: float
    half_height: float
    nodes: int = DEFAULT_NODES

    def __post_init__(self):
        if self.kind not in ("rectangle", "ellipse"):
            raise InvalidInputError(f"unknown contour kind {self.kind!r}")
        if self.half_width <= 0 or self.half_height <= 0:
            raise InvalidInputError("contour half-sizes must be positive")
        if self.nodes < 16 or self.nodes % 2:
            raise InvalidInputError("need an even node count >= 16")

    def points_weights(self) -> tuple[np.ndarray, np.ndarray]:
        """Nodes z_k (in traversal order) and weights w_k with
        sum_k w_k f(z_k) ~ the contour integral of f."""
        if self.kind == "ellipse":
            theta = 2.0 * np.pi * np.arange(self.nodes) / self.nodes
            z = self.center + self.half_width * np.cos(theta) \
                + 1j * self.half_height * np.sin(theta)
            dz = -self.half_width * np.sin(theta) \
                + 1j * self.half_height * np.cos(theta)
            w = dz * (2.0 * np.pi / self.nodes)
            return z, w
        return self._rectangle_points_weights()

    def _rectangle_points_weights(self) -> tuple[np.ndarray, np.ndarray]:
        c, hw, hh = self.center, self.half_width, self.half_height
        corners = [c - hw - 1j * hh, c + hw - 1j * hh,
                   c + hw + 1j * hh, c - hw + 1j * hh]
        lengths = np.array([2 * hw, 2 * hh, 2 * hw, 2 * hh])
        share = lengths / lengths.sum()
        per_side = np.maximum(4, np.round(share * self.nodes).astype(int))
        pts, wts = [], []
        for i in range(4):
            a, b = corners[i], corners[(i + 1) % 4]
            x, w = np.polynomial.legendre.leggauss(per_side[i])
            t = 0.5 * (x + 1.0)
            pts.append(a + (b - a) * t)
            wts.append((b - a) * 0.5 * w)
        return np.concatenate(pts), np.concatenate(wts)

    def refined(self, factor: int = 2) -> "Contour":
        return Contour(self.kind, self.center, self.half_width,
                       self.half_height, self.nodes * factor)

    def contains(self, z: complex) -> bool:
        dz = complex(z) - self.center
        if self.kind == "ellipse":
            return (dz.real / self.half_width) ** 2 \
                + (dz.imag / self.half_height) ** 2 < 1.0
        return abs(dz.real) < self.half_width and abs(dz.imag) < self.half_height


def rectangle_around(lo: float, hi: float, height_frac: float = 0.25,
                     pad_frac: float = 0.1, nodes: int = DEFAULT_NODES) -> Contour:
    """Default rectangle enclosing a real segment [lo, hi]; half-height is a
    quarter of the segment length so nodes stay clear of lattice points."""
    length = hi - lo
    if length <= 0:
        raise InvalidInputError("need lo < hi")
    return Contour("rectangle", complex((lo + hi) / 2.0, 0.0),
                   half_width=length * (0.5 + pad_frac),
                   half_height=max(length * height_frac, 1e-8),
                   nodes=nodes)


def contour_integrate(f: Callable[[complex], complex], c: Contour) -> complex:
    """Quadrature of the contour integral of ``f`` along ``c``.

    Raises QuadratureError if ``f`` returns a non-finite value at any node.
    """
    z, w = c.points_weights()
    vals = np.asarray([f(zk) for zk in z], dtype=complex)
    bad = ~np.isfinite(vals)
    if bad.any():
        k = int(np.argmax(bad))
        raise QuadratureError(f"non-finite integrand at node {k}, z={z[k]}")
    return complex(np.sum(vals * w))


def contour_integrate_values(values: Sequence[complex], c: Contour) -> complex:
    """Same as contour_integrate but with pre-evaluated node values."""
    z, w = c.points_weights()
    vals = np.asarray(values, dtype=complex)
    if vals.shape != z.shape:
        raise InvalidInputError("value count does not match contour nodes")
    if not np.isfinite(vals).all():
        raise QuadratureError("non-finite value in contour samples")
    return complex(np.sum(vals * w))


def log_track(values: Sequence[complex]) -> tuple[np.ndarray, int]:
    """Continuous branch of log along ordered samples of a closed loop.

    Returns (log-values, winding number).  Consecutive samples must satisfy
    |arg ratio| < pi/2, otherwise RefinementNeededError is raised; the
    closing step (last back to first) is included in the winding count.
    """
    vals = np.asarray(values, dtype=complex)
    if vals.size < 2:
        raise InvalidInputError("need at least two samples")
    if (vals == 0).any() or not np.isfinite(vals).all():
        raise InvalidInputError("samples must be finite and nonzero")
    ratios = vals[1:] / vals[:-1]
    steps = np.angle(ratios)
    if np.abs(steps).max() >= np.pi / 2:
        k = int(np.argmax(np.abs(steps)))
        raise RefinementNeededError(
            f"arg jump {steps[k]:.3f} at step {k}; refine the sampling")
    closing = np.angle(vals[0] / vals[-1])
    if abs(closing) >= np.pi / 2:
        raise RefinementNeededError("arg jump on the closing step")
    logs = np.empty_like(vals)
    logs[0] = np.log(vals[0])
    logs[1:] = logs[0] + np.cumsum(np.log(np.abs(ratios)) + 1j * steps)
    total = (steps.sum() + closing) / (2.0 * np.pi)
    winding = int(np.rint(total))
    if abs(total - winding) >= 0.25:
        raise RefinementNeededError(
            f"winding estimate {total:.3f} too far from an integer")
    return logs, winding


@dataclass(frozen=True)
class ComplexPolynomial:
    """Polynomial with complex coefficients in ascending degree order."""

    coefficients: tuple = field(default_factory=tuple)

    @staticmethod
    def from_coeffs(coeffs: Sequence[complex]) -> "ComplexPolynomial":
        trimmed = np.trim_zeros(np.asarray(coeffs, dtype=complex), "b")
        if trimmed.size == 0:
            raise InvalidInputError("zero polynomial")
        return ComplexPolynomial(tuple(trimmed))

    @staticmethod
    def from_roots(roots: Sequence[complex],
                   leading: complex = 1.0) -> "ComplexPolynomial":
        coeffs = np.polynomial.polynomial.polyfromroots(
            np.asarray(roots, dtype=complex)) * leading
        return ComplexPolynomial(tuple(coeffs))

    @property
    def degree(self) -> int:
        return len(self.coefficients) - 1

    def __call__(self, z):
        return np.polynomial.polynomial.polyval(
            z, np.asarray(self.coefficients, dtype=complex))

    def deriv(self) -> "ComplexPolynomial":
        der = np.polynomial.polynomial.polyder(
            np.asarray(self.coefficients, dtype=complex))
        return ComplexPolynomial(tuple(der))

    def backward_error(self, z: complex) -> float:
        """|p(z)| / sum_i |c_i||z|^i, the standard relative residual."""
        c = np.abs(np.asarray(self.coefficients))
        scale = np.polynomial.polynomial.polyval(abs(z), c)
        return abs(self(z)) / max(scale, np.finfo(float).tiny)


_NEWTON_STEPS = 40
_CLUSTER_RTOL = 1e-7


def poly_roots(p: ComplexPolynomial) -> np.ndarray:
    """All roots of ``p`` (with multiplicity) via companion eigenvalues,
    polished by Newton steps and merged into multiplicity clusters."""
    coeffs = np.asarray(p.coefficients, dtype=complex)
    coeffs = np.trim_zeros(coeffs, "b")
    if coeffs.size == 0:
        raise InvalidInputError("zero polynomial")
    if coeffs.size == 1:
        raise InvalidInputError("degree must be at least 1")
    # scale-invariance: normalize by the largest coefficient
    coeffs = coeffs / np.abs(coeffs).max()
    roots = np.roots(coeffs[::-1])
    pol = ComplexPolynomial(tuple(coeffs))
    dpol = pol.deriv()
    for _ in range(_NEWTON_STEPS):
        pv = pol(roots)
        dv = dpol(roots)
        ok = np.abs(dv) > 1e-300
        step = np.zeros_like(roots)
        step[ok] = pv[ok] / dv[ok]
        # damp Newton near multiple roots where steps may overshoot
        big = np.abs(step) > 0.5 * (np.abs(roots) + 1.0)
        step[big] = 0.0
        newr = roots - step
        improved = np.abs(pol(newr)) <= np.abs(pv)
        roots = np.where(improved, newr, roots)
        if np.abs(step[improved]).max(initial=0.0) < 1e-16 * (np.abs(roots).max() + 1):
            break
    return _merge_clusters(roots)


def _merge_clusters(roots: np.ndarray) -> np.ndarray:
    """Average mutually close roots, preserving multiplicity counts."""
    order = np.argsort(roots.real, kind="stable")
    roots = roots[order]
    out = roots.copy()
    used = np.zeros(len(roots), dtype=bool)
    for i in range(len(roots)):
        if used[i]:
            continue
        tol = _CLUSTER_RTOL * max(1.0, abs(roots[i]))
        members = [j for j in range(len(roots))
                   if not used[j] and abs(roots[j] - roots[i]) < tol]
        if len(members) > 1:
            centroid = roots[members].mean()
            for j in members:
                out[j] = centroid
                used[j] = True
    return out
