"""Weighted lozenge tilings of trapezoids as ascending Markov chains.

A tiling of the trapezoid (N paths over T time steps) is sampled forward
in time with the exact one-step sampler; the per-step kernel encodes the
domain walls through zeros of the jump weights, so the endpoint
x(T) = (N-1, ..., 0) is a theorem, asserted at runtime as a correctness
canary.  The same module verifies two exact partition identities over
Gelfand-Tsetlin chains by direct enumeration.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterator, Sequence

import numpy as np

from . import rng as _rng
from .errors import (ConsistencyError, EnumerationBudgetError,
                     InvalidInputError, PositivityError)
from .kernels import (AscendingKernel, Factor, KernelFunction, ParticleConfig,
                      brute_force_distribution, partition_function,
                      sample_step, step_weight)

GT_CHAIN_BUDGET = 1_000_000


# ---------------------------------------------------------------------------
# trapezoid geometry
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TrapezoidSpec:
    """Integer trapezoid (N, T, segments) with (q, kappa^2) lozenge weights.

    kappa is stored through its square: kappa_sq > 0 is the real case,
    kappa_sq < 0 the imaginary case.  The trigonometric case (|q| = 1,
    complex) is not representable.
    """

    N: int
    T: int
    segments: tuple
    q: float
    kappa_sq: float

    def __post_init__(self):
        if self.N <= 0 or self.T <= 0:
            raise InvalidInputError("N and T must be positive integers")
        segs = tuple((int(a), int(b)) for a, b in self.segments)
        object.__setattr__(self, "segments", segs)
        prev = -self.T - 1
        for a, b in segs:
            if not (prev < a < b):
                raise InvalidInputError("segments must be increasing")
            prev = b
        if segs[0][0] < -self.T or segs[-1][1] > self.N:
            raise InvalidInputError("segments must lie in [-T, N]")
        if sum(b - a for a, b in segs) != self.N:
            raise InvalidInputError("segment lengths must sum to N")
        if self.q <= 0 or self.q == 1.0:
            raise InvalidInputError("q must be positive and != 1")
        if self.kappa_sq == 0:
            raise InvalidInputError("kappa_sq must be nonzero")
        if self.kappa_sq > 0:
            lo = self.q ** (self.T + segs[0][0] - 1)
            hi = self.q ** (-(self.N + segs[-1][1] - 1))
            lo, hi = min(lo, hi), max(lo, hi)
            if lo <= self.kappa_sq <= hi:
                raise PositivityError(
                    f"real case: kappa_sq = {self.kappa_sq} inside the "
                    f"forbidden interval [{lo:.6g}, {hi:.6g}]")

    @property
    def r(self) -> int:
        return len(self.segments)

    def initial_config(self) -> ParticleConfig:
        pos = []
        for a, b in reversed(self.segments):
            pos.extend(range(b - 1, a - 1, -1))
        return ParticleConfig(1.0, tuple(float(p) for p in pos))

    def final_positions(self) -> tuple:
        return tuple(float(v) for v in range(self.N - 1, -1, -1))

    def column_sites(self, s: int) -> np.ndarray:
        """Lattice sites of the domain's vertical section at integer line s."""
        lo = max(self.segments[0][0], s - self.T)
        hi = min(self.N - 1, self.segments[-1][1] - 1 + s)
        return np.arange(lo, hi + 1)

    def lozenge_weight(self, s: int, y: float) -> float:
        """Weight kappa^2 q^a - q^{-a} (a = y - (s-1)/2) of the horizontal
        lozenge whose right edge covers the hole y on line s.  This is
        kappa times the textbook weight; the constant drops out of every
        normalized quantity because the horizontal-lozenge count is fixed
        by the domain."""
        a = y - (s - 1) / 2.0
        lq = math.log(self.q)
        return self.kappa_sq * math.exp(a * lq) - math.exp(-a * lq)


def qk_kernel_at(spec: TrapezoidSpec, t: int) -> AscendingKernel:
    """One-step transition kernel of the tiling chain at time t."""
    if not 0 <= t < spec.T:
        raise InvalidInputError("time outside [0, T)")
    q, ks = spec.q, spec.kappa_sq
    N, T = spec.N, spec.T
    b = KernelFunction((Factor("qaffine", 0.0, 1.0, q, -1.0, 0.0),
                        Factor("qaffine", 1.0, ks, q, 2.0, -float(t))))
    phi_plus = KernelFunction((
        Factor("const", q ** (T + N - 1 - t)),
        Factor("qaffine", 1.0, -1.0, q, 1.0, float(-N + 1)),
        Factor("qaffine", 1.0, -ks, q, 1.0, float(-T + 1)),
    ))
    phi_minus = KernelFunction((
        Factor("const", -1.0),
        Factor("qaffine", 1.0, -1.0, q, 1.0, float(T - t)),
        Factor("qaffine", 1.0, -ks, q, 1.0, float(N - t)),
    ))
    return AscendingKernel(1.0, b, phi_plus, phi_minus)


@dataclass(frozen=True)
class TilingTrajectory:
    """States x(0..T) of one sampled tiling, with its seed."""

    spec: TrapezoidSpec
    states: np.ndarray  # (T+1, N) positions, descending within each row
    seed: int

    def config(self, t: int) -> ParticleConfig:
        return ParticleConfig(1.0, tuple(self.states[t].astype(float)))


def sample_tiling(spec: TrapezoidSpec, seed: int,
                  replica: int = 0) -> TilingTrajectory:
    """Sample one full tiling; asserts the forced endpoint."""
    x = spec.initial_config()
    states = np.empty((spec.T + 1, spec.N), dtype=np.int64)
    states[0] = np.asarray(x.positions)
    for t in range(spec.T):
        k = qk_kernel_at(spec, t)
        out = sample_step(k, x, _rng.stream(seed, replica, t))
        x = x.shifted(out.e)
        states[t + 1] = np.asarray(x.positions)
    if tuple(float(v) for v in states[spec.T]) != spec.final_positions():
        raise ConsistencyError(
            "sampled chain missed the forced endpoint; sampler bug")
    return TilingTrajectory(spec, states, seed)


def static_log_weight(spec: TrapezoidSpec, states: np.ndarray) -> float:
    """log |static weight| of a trajectory: product of horizontal-lozenge
    weights over all holes; the sign is configuration-independent."""
    total = 0.0
    for s in range(1, spec.T + 1):
        occ = set(int(v) for v in states[s])
        for y in spec.column_sites(s):
            if int(y) not in occ:
                total += math.log(abs(spec.lozenge_weight(s, float(y))))
    return total


def chain_log_probability(spec: TrapezoidSpec, states: np.ndarray) -> float:
    """log probability of a trajectory under the one-step kernels."""
    total = 0.0
    for t in range(spec.T):
        x = ParticleConfig(1.0, tuple(states[t].astype(float)))
        e = states[t + 1] - states[t]
        k = qk_kernel_at(spec, t)
        w = step_weight(k, x, e)
        z = partition_function(k, x)
        total += math.log(abs(complex(w) / complex(z)))
    return total


def enumerate_tilings(spec: TrapezoidSpec, budget: int = 100_000):
    """All trajectories with their chain probabilities (tiny domains only)."""
    trajs: list = []

    def walk(t, states, logp):
        if len(trajs) > budget:
            raise EnumerationBudgetError("too many tilings")
        if t == spec.T:
            trajs.append((np.asarray(states, dtype=np.int64), math.exp(logp)))
            return
        x = ParticleConfig(1.0, tuple(float(v) for v in states[-1]))
        pats, probs = brute_force_distribution(qk_kernel_at(spec, t), x)
        for e, p in zip(pats, probs):
            if p > 1e-14:
                walk(t + 1, states + [tuple(np.add(states[-1], e))],
                     logp + math.log(p))

    walk(0, [tuple(int(v) for v in spec.initial_config().positions)], 0.0)
    return trajs


# ---------------------------------------------------------------------------
# height function
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class HeightField:
    """h(t, x) = number of paths strictly below height x at time t."""

    x_lo: int
    values: np.ndarray  # (T+1, width) integer heights

    def h(self, t: int, x: int) -> int:
        j = int(x) - self.x_lo
        j = min(max(j, 0), self.values.shape[1] - 1)
        return int(self.values[t, j])

    @property
    def x_grid(self) -> np.ndarray:
        return self.x_lo + np.arange(self.values.shape[1])


def height_field(traj: TilingTrajectory) -> HeightField:
    spec = traj.spec
    x_lo = min(spec.segments[0][0], 0) - 1
    x_hi = spec.N + 1
    grid = np.arange(x_lo, x_hi + 1)
    vals = (traj.states[:, None, :] < grid[None, :, None]).sum(axis=2)
    return HeightField(x_lo, vals.astype(np.int64))


# ---------------------------------------------------------------------------
# SVG rendering
# ---------------------------------------------------------------------------

_COLORS = {"up": "#4a7fb5", "stay": "#e8d44d", "horizontal": "#c23b22"}
_SCALE = 24.0


def _xy(t: float, x: float) -> tuple[float, float]:
    return (_SCALE * t * math.sqrt(3) / 2.0, -_SCALE * (x - t / 2.0))


def render_svg(traj: TilingTrajectory) -> str:
    """Deterministic SVG of the tiling: path lozenges from the particle
    trajectories, horizontal lozenges at every hole."""
    spec = traj.spec
    quads = []
    for t in range(spec.T):
        for i in range(spec.N):
            x0, x1 = int(traj.states[t, i]), int(traj.states[t + 1, i])
            if x1 == x0:  # stay: parallelogram sloping down in cartesian
                quad = [(t, x0), (t, x0 + 1), (t + 1, x0 + 1), (t + 1, x0)]
                quads.append(("stay", quad))
            else:  # jump
                quad = [(t, x0), (t, x0 + 1), (t + 1, x0 + 2), (t + 1, x0 + 1)]
                quads.append(("up", quad))
    for s in range(1, spec.T + 1):
        occ = set(int(v) for v in traj.states[s])
        for y in spec.column_sites(s):
            y = int(y)
            if y not in occ:
                quad = [(s - 1, y), (s, y), (s + 1, y + 1), (s, y + 1)]
                quads.append(("horizontal", quad))
    pts = [_xy(t, x) for _, quad in quads for t, x in quad]
    if not pts:
        raise InvalidInputError("empty tiling")
    xs, ys = zip(*pts)
    pad = _SCALE
    minx, maxx = min(xs) - pad, max(xs) + pad
    miny, maxy = min(ys) - pad, max(ys) + pad
    lines = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" '
        f'viewBox="{minx:.2f} {miny:.2f} {maxx - minx:.2f} {maxy - miny:.2f}">',
    ]
    for kind, quad in quads:
        pstr = " ".join(f"{px:.2f},{py:.2f}" for px, py in map(
            lambda p: _xy(*p), quad))
        lines.append(f'<polygon points="{pstr}" fill="{_COLORS[kind]}" '
                     f'stroke="#222222" stroke-width="0.8"/>')
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


def lozenge_count(traj: TilingTrajectory) -> int:
    spec = traj.spec
    holes = sum(len(spec.column_sites(s)) - spec.N
                for s in range(1, spec.T + 1))
    return spec.N * spec.T + holes


# ---------------------------------------------------------------------------
# Gelfand-Tsetlin enumeration and partition identities
# ---------------------------------------------------------------------------

def _interlacings(lam: tuple) -> Iterator[tuple]:
    """All mu of rank len(lam)-1 with lam_i >= mu_i >= lam_{i+1}."""
    n = len(lam)
    if n == 1:
        yield ()
        return

    def rec(i, acc):
        if i == n - 1:
            yield tuple(acc)
            return
        for m in range(lam[i + 1], lam[i] + 1):
            if acc and m > acc[-1]:
                continue
            yield from rec(i + 1, acc + [m])

    yield from rec(0, [])


def gt_enumerate(lam: Sequence[int], n: int) -> Iterator[tuple]:
    """All chains (lam^(1), ..., lam^(n) = lam) of interlacing signatures."""
    lam = tuple(int(v) for v in lam)
    if len(lam) != n:
        raise InvalidInputError("lam must have n parts")
    if any(a < b for a, b in zip(lam, lam[1:])):
        raise InvalidInputError("lam must be weakly decreasing")
    if n == 1:
        yield (lam,)
        return
    for mu in _interlacings(lam):
        for chain in gt_enumerate(mu, n - 1):
            yield chain + (lam,)


def gt_count(lam: Sequence[int]) -> int:
    """Number of GT chains with top row lam (Weyl dimension formula)."""
    lam = tuple(int(v) for v in lam)
    n = len(lam)
    num = den = 1
    for i in range(n):
        for j in range(i + 1, n):
            num *= (lam[i] - i) - (lam[j] - j)
            den *= j - i
    return num // den


def _check_budget(lam):
    total = gt_count(lam)
    if total > GT_CHAIN_BUDGET:
        raise EnumerationBudgetError(f"{total} GT chains exceed the budget")
    return total


def verify_qracah(n: int, lam: Sequence[int], sigma: complex,
                  q: float) -> tuple[complex, complex, float]:
    """Both sides of the q-Racah partition identity and their relative gap.

    lhs: sum over GT chains of prod_{k<n} prod_{i<=k}
         (sigma q^{lam_i^(k)+(k+1)/2-i} - 1/(sigma q^{...})),
    rhs: Z_n * prod_{i<j} (x(lam_i - i) - x(lam_j - j)) with
         x(m) = sigma q^{m+(n+1)/2} + 1/(sigma q^{m+(n+1)/2}).
    """
    lam = tuple(int(v) for v in lam)
    if len(lam) != n or lam[-1] < 0:
        raise InvalidInputError("need a length-n signature with lam_n >= 0")
    _check_budget(lam)
    lq = math.log(q)
    sigma = complex(sigma)

    def term(m, shift):
        p = sigma * np.exp((m + shift) * lq)
        return p - 1.0 / p

    lhs = 0.0 + 0.0j
    for chain in gt_enumerate(lam, n):
        w = 1.0 + 0.0j
        for k in range(1, n):
            row = chain[k - 1]
            for i, part in enumerate(row, start=1):
                w *= term(part - i, (k + 1) / 2.0)
        lhs += w

    def xval(m):
        p = sigma * np.exp((m + (n + 1) / 2.0) * lq)
        return p + 1.0 / p

    zn = (-1.0) ** (n * (n - 1) // 2)
    for i in range(1, n + 1):
        poch = np.prod([1.0 - q ** m for m in range(1, i)]) if i > 1 else 1.0
        zn *= np.exp((i - (n + 1) / 2.0) * i * lq) / poch
    rhs = zn
    for i in range(n):
        for j in range(i + 1, n):
            rhs *= (xval(lam[i] - (i + 1)) - xval(lam[j] - (j + 1)))
    rel = abs(lhs - rhs) / max(abs(rhs), 1e-300)
    return complex(lhs), complex(rhs), float(rel)


def so_dimension_identity(n: int, lam: Sequence[int]) -> tuple[int, float]:
    """GT-weighted sum equalling the SO(2n) irreducible dimension.

    Returns (sum rounded to the nearest integer, exact product value).
    """
    lam = tuple(int(v) for v in lam)
    if len(lam) != n or lam[-1] < 0:
        raise InvalidInputError("need a nonnegative signature of length n")
    _check_budget(lam)
    total = 0.0
    for chain in gt_enumerate(lam, n):
        w = 1.0
        for k in range(1, n):
            row = chain[k - 1]
            for i, part in enumerate(row, start=1):
                w *= (part + (n + k) / 2.0 - i) / ((n + k) / 2.0 - i)
        total += w
    prod = 1.0
    for i in range(1, n + 1):
        for j in range(i + 1, n + 1):
            prod *= (lam[i - 1] - i - (lam[j - 1] - j)) / (j - i)
            prod *= (2 * n + lam[i - 1] - i + lam[j - 1] - j) / (2 * n - j - i)
    return int(round(total)), prod
