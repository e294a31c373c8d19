"""Transition kernels with Vandermonde interaction and exact samplers.

Ascending steps move each of n particles by theta*e_i, e_i in {0,1}; the
joint weight is a ratio of Vandermonde-type products in an injective
"interaction" function b times per-site weights phi^+/phi^-.  Descending
steps draw an interlacing configuration one particle shorter.  Both
partition functions collapse to determinants because the Vandermonde is
multilinear in its rows; sampling pins rows one at a time, so every
conditional is a ratio of two determinants (computed through one linear
solve against the running matrix, with rank-one row updates in between).

All determinant work runs in a monic Newton basis anchored at the b-values
of the current configuration.  The basis change leaves every determinant
ratio invariant but keeps entries far better scaled than raw powers.
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy.special import gamma as _gamma_fn

from .errors import (EnumerationBudgetError, ImpossiblePrefixError,
                     InvalidInputError, KernelError, PositivityError)

ASCEND_ENUM_LIMIT = 22
DESCEND_ENUM_LIMIT = 2_000_000
REFRESH_EVERY = 8
_LATTICE_TOL = 1e-9


class ConditioningWarning(UserWarning):
    """Determinant evaluated on an ill-conditioned matrix."""


# ---------------------------------------------------------------------------
# kernel functions: products of elementary factors
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Factor:
    """One multiplicative factor of a kernel function.

    kind:
      const    -> a
      affine   -> a + b*x
      qaffine  -> a + b * q**(g*x + d)
      gamma    -> Gamma(a + b*x)
      qgamma   -> Gamma_q(a + b*x)         (base q, 0<q<1)
      qquad    -> q**(a*x**2 + b*x)        (base q)
    power: integer exponent of the factor (negative allowed).
    """

    kind: str
    a: complex = 0.0
    b: complex = 0.0
    q: float = 0.0
    g: complex = 0.0
    d: complex = 0.0
    power: int = 1

    def eval(self, x):
        x = np.asarray(x, dtype=complex)
        if self.kind == "const":
            v = np.broadcast_to(np.asarray(self.a, dtype=complex), x.shape).copy()
        elif self.kind == "affine":
            v = self.a + self.b * x
        elif self.kind == "qaffine":
            v = self.a + self.b * np.exp((self.g * x + self.d) * math.log(self.q))
        elif self.kind == "gamma":
            v = _gamma_fn(self.a + self.b * x)
        elif self.kind == "qgamma":
            v = qgamma(self.a + self.b * x, self.q)
        elif self.kind == "qquad":
            v = np.exp((self.a * x * x + self.b * x) * math.log(self.q))
        else:
            raise InvalidInputError(f"unknown factor kind {self.kind!r}")
        if self.power != 1:
            v = v ** self.power
        return v

    def shifted_scaled(self, alpha: complex, beta: complex) -> "Factor":
        """The factor with x replaced by alpha*x + beta."""
        if self.kind == "const":
            return self
        if self.kind == "affine":
            return Factor("affine", self.a + self.b * beta, self.b * alpha,
                          power=self.power)
        if self.kind == "qaffine":
            return Factor("qaffine", self.a, self.b, self.q,
                          self.g * alpha, self.g * beta + self.d, self.power)
        if self.kind == "gamma":
            return Factor("gamma", self.a + self.b * beta, self.b * alpha,
                          power=self.power)
        if self.kind == "qgamma":
            return Factor("qgamma", self.a + self.b * beta, self.b * alpha,
                          self.q, power=self.power)
        if self.kind == "qquad":
            if beta == 0:
                return Factor("qquad", self.a * alpha ** 2, self.b * alpha,
                              self.q, power=self.power)
            return _qquad_general(self, alpha, beta)
        raise InvalidInputError(f"unknown factor kind {self.kind!r}")


def _qquad_general(f: Factor, alpha: complex, beta: complex):
    # q^{a x^2 + b x} with x -> alpha x + beta picks up a constant q^{a beta^2 + b beta}
    const = Factor("const", np.exp((f.a * beta ** 2 + f.b * beta)
                                   * math.log(f.q)) ** f.power)
    quad = Factor("qquad", f.a * alpha ** 2,
                  2 * f.a * alpha * beta + f.b * alpha, f.q, power=f.power)
    return (const, quad)


def qpochhammer_inf(a, q: float):
    """(a; q)_infinity for 0 < q < 1, truncated once |a q^m| < 1e-18."""
    if not 0 < q < 1:
        raise InvalidInputError("qpochhammer_inf needs 0 < q < 1")
    a = np.asarray(a, dtype=complex)
    out = np.ones_like(a)
    term = a.copy()
    for _ in range(100000):
        out = out * (1.0 - term)
        term = term * q
        if np.max(np.abs(term)) < 1e-18:
            break
    return out


def qgamma(x, q: float):
    """Gamma_q(x) = (1-q)^(1-x) (q;q)_inf / (q^x;q)_inf."""
    x = np.asarray(x, dtype=complex)
    qx = np.exp(x * math.log(q))
    return ((1.0 - q) ** (1.0 - x)) * qpochhammer_inf(q, q) / qpochhammer_inf(qx, q)


@dataclass(frozen=True)
class KernelFunction:
    """Product of elementary factors, evaluable at any complex point."""

    factors: tuple = ()

    def __post_init__(self):
        if not self.factors:
            raise InvalidInputError("factor list must be nonempty")

    def __call__(self, x):
        x = np.asarray(x, dtype=complex)
        out = np.ones_like(x)
        for f in self.factors:
            out = out * f.eval(x)
        if out.ndim == 0:
            return complex(out)
        return out

    def deriv(self, x, h: float = 1e-6):
        """Derivative; analytic per-factor where cheap, else central difference."""
        x = np.asarray(x, dtype=complex)
        val = self(x)
        logd = np.zeros_like(np.asarray(val, dtype=complex))
        for f in self.factors:
            if f.kind == "const":
                continue
            if f.kind == "affine":
                d = f.b / (f.a + f.b * x)
            elif f.kind == "qaffine":
                e = np.exp((f.g * x + f.d) * math.log(f.q))
                d = f.b * f.g * math.log(f.q) * e / (f.a + f.b * e)
            elif f.kind == "qquad":
                d = (2 * f.a * x + f.b) * math.log(f.q)
            else:
                # gamma-type factors: central difference of the log
                d = (np.log(f.eval(x + h)) - np.log(f.eval(x - h))) / (2 * h)
            logd = logd + f.power * d
        return val * logd

    def shifted_scaled(self, alpha: complex, beta: complex) -> "KernelFunction":
        """The function z -> self(alpha*z + beta)."""
        fs = []
        for f in self.factors:
            g = f.shifted_scaled(alpha, beta)
            fs.extend(g if isinstance(g, tuple) else (g,))
        return KernelFunction(tuple(fs))

    def inverted(self) -> "KernelFunction":
        return KernelFunction(tuple(
            Factor(f.kind, f.a, f.b, f.q, f.g, f.d, -f.power)
            for f in self.factors))

    def __mul__(self, other: "KernelFunction") -> "KernelFunction":
        return KernelFunction(self.factors + other.factors)


def const_fn(c: complex) -> KernelFunction:
    return KernelFunction((Factor("const", c),))


def affine_fn(a: complex, b: complex) -> KernelFunction:
    return KernelFunction((Factor("affine", a, b),))


def identity_fn() -> KernelFunction:
    return affine_fn(0.0, 1.0)


def qaffine_fn(a: complex, b: complex, q: float, g: complex = 1.0,
               d: complex = 0.0) -> KernelFunction:
    return KernelFunction((Factor("qaffine", a, b, q, g, d),))


def qpower_fn(q: float, g: complex, d: complex = 0.0) -> KernelFunction:
    """z -> q**(g*z + d)."""
    return qaffine_fn(0.0, 1.0, q, g, d)


def gamma_fn(a: complex, b: complex) -> KernelFunction:
    return KernelFunction((Factor("gamma", a, b),))


# ---------------------------------------------------------------------------
# configurations
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ParticleConfig:
    """Strictly ordered particle positions on the theta-shifted lattice:
    x_1 integer, consecutive gaps in theta + Z_{>=0}."""

    theta: float
    positions: tuple

    def __post_init__(self):
        if self.theta <= 0:
            raise InvalidInputError("theta must be positive")
        pos = tuple(float(p) for p in self.positions)
        object.__setattr__(self, "positions", pos)
        if not pos:
            return
        if abs(pos[0] - round(pos[0])) > _LATTICE_TOL:
            raise InvalidInputError(f"x_1 = {pos[0]} is not an integer")
        for a, b in zip(pos, pos[1:]):
            k = a - b - self.theta
            if k < -_LATTICE_TOL or abs(k - round(k)) > _LATTICE_TOL:
                raise InvalidInputError(
                    f"gap {a - b} not in theta + Z>=0 (theta={self.theta})")

    @property
    def n(self) -> int:
        return len(self.positions)

    def array(self) -> np.ndarray:
        return np.asarray(self.positions, dtype=float)

    def shifted(self, e: Sequence[int]) -> "ParticleConfig":
        arr = self.array() + self.theta * np.asarray(e, dtype=float)
        return ParticleConfig(self.theta, tuple(arr))

    @staticmethod
    def from_signature(lam: Sequence[int], theta: float) -> "ParticleConfig":
        pos = tuple(l - i * theta for i, l in enumerate(lam))
        return ParticleConfig(theta, pos)


@dataclass(frozen=True)
class AscendingKernel:
    """Data (theta, b, phi+/-) of one ascending transition."""

    theta: float
    b: KernelFunction
    phi_plus: KernelFunction
    phi_minus: KernelFunction

    def check_injective(self, x: ParticleConfig) -> None:
        """b must separate all lattice points x_i, x_i + theta."""
        pts = np.concatenate([x.array(), x.array() + self.theta])
        vals = np.atleast_1d(np.asarray(self.b(pts)))
        order = np.argsort(pts)
        dv = np.diff(vals[order])
        dp = np.diff(pts[order])
        keep = dp > _LATTICE_TOL
        if keep.any() and np.min(np.abs(dv[keep])) < 1e-13 * (np.abs(vals).max() + 1):
            raise KernelError("b is not injective on the working interval")


@dataclass(frozen=True)
class DescendingKernel:
    """Data (b, w) of one descending transition."""

    b: KernelFunction
    w: KernelFunction


@dataclass(frozen=True)
class StepOutcome:
    """Result of one exact sampling step."""

    weight: complex
    probability: float
    e: Optional[tuple] = None            # ascending: jump indicators
    y: Optional[ParticleConfig] = None   # descending: interlacing config


# ---------------------------------------------------------------------------
# direct weights and enumeration oracles
# ---------------------------------------------------------------------------

def step_weight(k: AscendingKernel, x: ParticleConfig, e: Sequence[int]) -> complex:
    """Unnormalized ascending weight of the jump pattern e."""
    e = np.asarray(e, dtype=float)
    if e.shape != (x.n,):
        raise InvalidInputError("need one indicator per particle")
    pos = x.array()
    bx = np.atleast_1d(np.asarray(k.b(pos)))
    bshift = np.atleast_1d(np.asarray(k.b(pos + k.theta * e)))
    num = bshift[:, None] - bshift[None, :]
    den = bx[:, None] - bx[None, :]
    iu = np.triu_indices(x.n, 1)
    if x.n > 1 and np.min(np.abs(den[iu])) < 1e-300:
        raise KernelError("coincident b-values in the pair denominator")
    pair = complex(np.prod(num[iu] / den[iu])) if x.n > 1 else 1.0
    wp = np.atleast_1d(np.asarray(k.phi_plus(pos)))
    wm = np.atleast_1d(np.asarray(k.phi_minus(pos)))
    site = complex(np.prod(np.where(e > 0.5, wp, wm)))
    return pair * site


def enumerate_ascending(k: AscendingKernel, x: ParticleConfig):
    """All 2^n jump patterns with their unnormalized weights (n <= 22)."""
    if x.n > ASCEND_ENUM_LIMIT:
        raise EnumerationBudgetError(f"refusing to enumerate n={x.n} > "
                                     f"{ASCEND_ENUM_LIMIT}")
    patterns = list(itertools.product((0, 1), repeat=x.n))
    weights = np.array([step_weight(k, x, e) for e in patterns])
    return patterns, weights


def brute_force_distribution(k: AscendingKernel, x: ParticleConfig):
    """Normalized ascending probabilities by enumeration."""
    patterns, weights = enumerate_ascending(k, x)
    total = weights.sum()
    if abs(total) < 1e-300:
        raise KernelError("total weight vanishes")
    probs = (weights / total).real
    return patterns, probs


# ---------------------------------------------------------------------------
# Lagrange-basis determinant engine (ascending)
# ---------------------------------------------------------------------------
#
# All determinants run in the Lagrange cardinal basis anchored at the
# b-values of the current configuration.  Two payoffs: the stay-rows
# become exact basis vectors (the b(x_i) are the interpolation nodes), so
# packed configurations yield near-triangular, well-conditioned matrices;
# and the basis-change constant cancels the Vandermonde normalizer, so
# Z(x) is det M with no further division.

def _lagrange_weights_log(nodes: np.ndarray) -> np.ndarray:
    """lw[j] = -sum_{k != j} log(nodes[j] - nodes[k])."""
    diff = nodes[:, None] - nodes[None, :]
    np.fill_diagonal(diff, 1.0)
    if np.min(np.abs(diff + np.eye(len(nodes)) * 0)) == 0.0:
        raise KernelError("coincident b-values among interpolation nodes")
    return -np.sum(np.log(diff.astype(complex)), axis=1)


def _lagrange_rows(vals: np.ndarray, nodes: np.ndarray,
                   lw: Optional[np.ndarray] = None
                   ) -> tuple[np.ndarray, np.ndarray]:
    """rows[i, j] = L_j(vals[i]) * exp(-shift[i]) with L_j the cardinal
    polynomial of the nodes; shift keeps every row in floating range.
    Exact node hits produce exact basis vectors."""
    nodes = np.asarray(nodes, dtype=complex)
    vals = np.asarray(vals, dtype=complex)
    n = len(nodes)
    if lw is None:
        lw = _lagrange_weights_log(nodes)
    rows = np.zeros((len(vals), n), dtype=complex)
    shifts = np.zeros(len(vals))
    scale = 1.0 + np.max(np.abs(nodes))
    for i, v in enumerate(vals):
        d = v - nodes
        j0 = int(np.argmin(np.abs(d)))
        if abs(d[j0]) < 1e-14 * scale:
            rows[i, j0] = 1.0
            continue
        logs = np.log(d.astype(complex))
        s = np.sum(logs) + lw - logs
        shift = max(float(np.max(s.real)), 0.0)
        rows[i] = np.exp(s - shift)
        shifts[i] = shift
    return rows, shifts


def _ascending_rows(k: AscendingKernel, pos: np.ndarray,
                    site_factors: Optional[tuple] = None):
    """(rows0, rows1, shifts): the stay/jump row blocks in the Lagrange
    frame; M = rows0 + rows1 and log Z = log det M + sum(shifts)."""
    pos = np.asarray(pos, dtype=complex)
    v0 = np.atleast_1d(np.asarray(k.b(pos)))
    v1 = np.atleast_1d(np.asarray(k.b(pos + k.theta)))
    w0 = np.atleast_1d(np.asarray(k.phi_minus(pos))).astype(complex)
    w1 = np.atleast_1d(np.asarray(k.phi_plus(pos))).astype(complex)
    if site_factors is not None:
        g0, g1 = site_factors
        w0 = w0 * np.asarray(g0, dtype=complex)
        w1 = w1 * np.asarray(g1, dtype=complex)
    rows1, shifts = _lagrange_rows(v1, v0)
    rows1 = w1[:, None] * rows1
    n = len(pos)
    rows0 = np.zeros((n, n), dtype=complex)
    rows0[np.arange(n), np.arange(n)] = w0 * np.exp(-shifts)
    return rows0, rows1, shifts


class _RowEngine:
    """Shared machinery: a matrix whose rows are progressively pinned,
    with the inverse maintained by rank-one updates.

    The matrix is stored two-sided equilibrated (Ruiz scaling): the raw
    Newton-basis entries span many orders of magnitude on packed
    configurations and plain row scaling is not enough at n ~ 50+.
    Callers consume the scaling through ``reduce_row``/``inverse_column``.
    """

    def __init__(self, matrix: np.ndarray):
        m = matrix.astype(complex)
        n = m.shape[0]
        self.row_scales = np.ones(n)
        self.col_scales = np.ones(n)
        for _ in range(4):
            rs = np.max(np.abs(m), axis=1)
            if np.any(rs == 0):
                raise KernelError("zero row in the partition matrix")
            m /= rs[:, None]
            self.row_scales *= rs
            cs = np.max(np.abs(m), axis=0)
            cs[cs == 0] = 1.0
            m /= cs[None, :]
            self.col_scales *= cs
        self.m = m
        self.inv = np.linalg.inv(self.m)
        self._pins = 0

    def clone(self) -> "_RowEngine":
        new = object.__new__(_RowEngine)
        new.m = self.m.copy()
        new.inv = self.inv.copy()
        new.row_scales = self.row_scales.copy()
        new.col_scales = self.col_scales.copy()
        new._pins = self._pins
        return new

    def inverse_column(self, i: int) -> np.ndarray:
        return self.inv[:, i]

    def refresh(self) -> None:
        """Discard rank-one-update drift by refactorizing."""
        try:
            self.inv = np.linalg.inv(self.m)
        except np.linalg.LinAlgError as exc:
            raise ImpossiblePrefixError("pinned matrix is singular") from exc

    def reduce_row(self, row: np.ndarray, i: int) -> np.ndarray:
        """Bring an unscaled candidate row for slot i into the scaled frame."""
        return row / self.col_scales / self.row_scales[i]

    def pin_row(self, i: int, row: np.ndarray) -> None:
        scaled = row / self.col_scales
        s = np.max(np.abs(scaled))
        if s == 0:
            raise ImpossiblePrefixError("pinned row vanishes identically")
        r = scaled / s
        d = r - self.m[i]
        v = self.inv[:, i]
        denom = 1.0 + d @ v
        self.m[i] = r
        self.row_scales[i] = s
        self._pins += 1
        if abs(denom) < 1e-10 or self._pins % REFRESH_EVERY == 0:
            try:
                self.inv = np.linalg.inv(self.m)
            except np.linalg.LinAlgError as exc:
                raise ImpossiblePrefixError("pinned matrix is singular") from exc
        else:
            self.inv -= np.outer(v, d @ self.inv) / denom


class AscendingEngine:
    """Determinant representation of the ascending one-step measure.

    Row i sums the stay and jump contributions of particle i; by row
    multilinearity of the Vandermonde, det(rows0 + rows1) realizes the
    full 2^n sum.  Optional per-site factors (g0, g1) tilt the measure
    (used for observables computed as partition-function ratios).
    """

    def __init__(self, k: AscendingKernel, x: ParticleConfig,
                 site_factors: Optional[tuple] = None):
        self.k = k
        self.x = x
        self.rows0, self.rows1, self.shifts = _ascending_rows(
            k, x.array(), site_factors)
        self._engine = _RowEngine(self.rows0 + self.rows1)

    def clone(self) -> "AscendingEngine":
        new = object.__new__(AscendingEngine)
        new.k = self.k
        new.x = self.x
        new.rows0 = self.rows0.copy()
        new.rows1 = self.rows1.copy()
        new.shifts = self.shifts
        new._engine = self._engine.clone()
        return new

    def branch_weights(self, i: int) -> tuple[float, float]:
        """Unnormalized (p_stay, p_jump) for particle i given earlier pins;
        they sum to one when nothing is degenerate."""
        v = self._engine.inverse_column(i)
        p0 = self._engine.reduce_row(self.rows0[i], i) @ v
        p1 = self._engine.reduce_row(self.rows1[i], i) @ v
        return p0, p1

    def jump_probability(self, i: int) -> float:
        p0, p1 = self.branch_weights(i)
        if abs(p0 + p1 - 1.0) > 1e-9:
            # rank-one-update drift: the matrix rows are exact, so a
            # refactorization fully restores the identity p0 + p1 = 1
            self._engine.refresh()
            p0, p1 = self.branch_weights(i)
        tot = p0 + p1
        if abs(tot) < 1e-12:
            raise ImpossiblePrefixError(f"prefix has no mass at particle {i}")
        p = (p1 / tot).real
        if p < -1e-6 or p > 1 + 1e-6:
            # the solve against an ill-conditioned pinned matrix can lose
            # accuracy on near-null branches; the determinant ratio from
            # two LU factorizations stays backward stable
            p = self._det_ratio_probability(i)
        if p < -1e-6 or p > 1 + 1e-6:
            raise PositivityError(f"conditional {p} outside [0,1]; "
                                  "instance is not probabilistic")
        return min(max(p, 0.0), 1.0)

    def _det_ratio_probability(self, i: int) -> float:
        eng = self._engine
        dets = []
        for rows in (self.rows0, self.rows1):
            m = eng.m.copy()
            m[i] = rows[i] / eng.col_scales
            sign, logabs = np.linalg.slogdet(m)
            dets.append((sign, logabs))
        ref = max(d[1] for d in dets)
        if ref == -np.inf:
            raise ImpossiblePrefixError(f"prefix has no mass at particle {i}")
        d0 = dets[0][0] * np.exp(dets[0][1] - ref)
        d1 = dets[1][0] * np.exp(dets[1][1] - ref)
        if abs(d0 + d1) < 1e-300:
            raise ImpossiblePrefixError(f"prefix has no mass at particle {i}")
        return float(np.real(d1 / (d0 + d1)))

    def pin(self, i: int, e: int) -> None:
        row = self.rows1[i] if e else self.rows0[i]
        self._engine.pin_row(i, row)
        # later pins must see the committed row
        (self.rows1 if e else self.rows0)[i] = row
        (self.rows0 if e else self.rows1)[i] = 0.0


def log_partition_function(k: AscendingKernel, x: ParticleConfig,
                           site_factors: Optional[tuple] = None) -> complex:
    """log Z(x) (complex: log|Z| + i arg Z); in the Lagrange frame the
    partition function is det(M) itself."""
    if x.n == 0:
        return 0.0
    k.check_injective(x)
    eng = AscendingEngine(k, x, site_factors)
    m = eng._engine.m
    sign, logabs = np.linalg.slogdet(m)
    if sign == 0:
        return complex(-np.inf, 0.0)
    logdet_m = logabs + np.log(sign) \
        + np.sum(np.log(eng._engine.row_scales)) \
        + np.sum(np.log(eng._engine.col_scales)) \
        + np.sum(eng.shifts)
    cond = np.linalg.cond(m)
    if cond > 1e12:
        warnings.warn(f"partition matrix condition number {cond:.2e}",
                      ConditioningWarning)
    return complex(logdet_m)


def partition_function(k: AscendingKernel, x: ParticleConfig,
                       site_factors: Optional[tuple] = None) -> complex:
    """Z(x) = sum over e of step_weight(k, x, e), as a determinant."""
    if x.n == 0:
        return 1.0 + 0.0j
    lz = log_partition_function(k, x, site_factors)
    if lz.real == -np.inf:
        return 0.0 + 0.0j
    return complex(np.exp(lz))


def conditional_jump_probability(k: AscendingKernel, x: ParticleConfig,
                                 prefix: Sequence[int]) -> float:
    """P(e_{m+1} = 1 | e_1..e_m) as a ratio of pinned determinants."""
    m = len(prefix)
    if m >= x.n:
        raise InvalidInputError("prefix must leave at least one free particle")
    eng = AscendingEngine(k, x)
    for i, ei in enumerate(prefix):
        p = eng.jump_probability(i)
        if (ei and p == 0.0) or (not ei and p == 1.0):
            raise ImpossiblePrefixError(f"prefix step {i} has probability 0")
        eng.pin(i, int(ei))
    return eng.jump_probability(m)


def sequential_distribution(k: AscendingKernel, x: ParticleConfig) -> dict:
    """Implied distribution of the sequential sampler: every outcome's
    product of stored conditionals.  Exponential in n; test use only."""
    if x.n > ASCEND_ENUM_LIMIT:
        raise EnumerationBudgetError("tree too large")
    out: dict = {}

    def walk(eng: AscendingEngine, i: int, prob: float, prefix: tuple):
        if i == x.n:
            out[prefix] = prob
            return
        p1 = eng.jump_probability(i)
        for e, pe in ((0, 1.0 - p1), (1, p1)):
            if pe <= 1e-13:
                for tail in itertools.product((0, 1), repeat=x.n - i - 1):
                    out[prefix + (e,) + tail] = 0.0
                continue
            sub = eng.clone()
            sub.pin(i, e)
            walk(sub, i + 1, prob * pe, prefix + (e,))

    walk(AscendingEngine(k, x), 0, 1.0, ())
    return out


def sample_step(k: AscendingKernel, x: ParticleConfig,
                rng: np.random.Generator) -> StepOutcome:
    """Draw one ascending step exactly; same generator state => same outcome."""
    n = x.n
    if n == 0:
        return StepOutcome(weight=1.0, probability=1.0, e=())
    eng = AscendingEngine(k, x)
    u = rng.random(n)
    e = []
    prob = 1.0
    for i in range(n):
        p1 = eng.jump_probability(i)
        ei = 1 if u[i] < p1 else 0
        prob *= p1 if ei else (1.0 - p1)
        eng.pin(i, ei)
        e.append(ei)
    return StepOutcome(weight=step_weight(k, x, e), probability=prob,
                       e=tuple(e))


# ---------------------------------------------------------------------------
# descending transitions
# ---------------------------------------------------------------------------

def descend_intervals(x: ParticleConfig) -> list[np.ndarray]:
    """Interval I_i = {x_{i+1}+theta, ..., x_i} of admissible y_i values."""
    pos = x.array()
    th = x.theta
    out = []
    for i in range(x.n - 1):
        count = int(round(pos[i] - pos[i + 1] - th)) + 1
        out.append(pos[i + 1] + th + np.arange(count, dtype=float))
    return out


def lattice_points(x: ParticleConfig) -> np.ndarray:
    """The lattice L(x): union of the descend intervals, decreasing order."""
    iv = descend_intervals(x)
    if not iv:
        return np.array([])
    return np.concatenate([np.sort(v)[::-1] for v in iv])


def per_site_weight(k: DescendingKernel, x: ParticleConfig, y: float) -> complex:
    """w(y) times the inverse lattice products over L(x) \\ {y}."""
    lat = lattice_points(x)
    by = complex(np.asarray(k.b(y)))
    blat = np.atleast_1d(np.asarray(k.b(lat)))
    above = lat > y + _LATTICE_TOL
    below = lat < y - _LATTICE_TOL
    val = complex(np.asarray(k.w(y)))
    val /= complex(np.prod(blat[above] - by))
    val /= complex(np.prod(by - blat[below]))
    return val


def descending_weight(k: DescendingKernel, x: ParticleConfig,
                      y: ParticleConfig) -> complex:
    """Unnormalized weight of the interlacing configuration y."""
    iv = descend_intervals(x)
    if y.n != x.n - 1:
        raise InvalidInputError("y must have one particle fewer than x")
    for i, yi in enumerate(y.positions):
        if not np.any(np.abs(iv[i] - yi) < _LATTICE_TOL):
            raise InvalidInputError(f"y_{i+1} = {yi} outside its interval")
    by = np.atleast_1d(np.asarray(k.b(y.array())))
    iu = np.triu_indices(y.n, 1)
    pair = complex(np.prod((by[:, None] - by[None, :])[iu])) if y.n > 1 else 1.0
    site = complex(np.prod([per_site_weight(k, x, yi) for yi in y.positions])) \
        if y.n else 1.0
    return pair * site


def enumerate_descending(k: DescendingKernel, x: ParticleConfig):
    """All interlacing y with unnormalized weights (budget-guarded)."""
    iv = descend_intervals(x)
    total = 1
    for v in iv:
        total *= len(v)
        if total > DESCEND_ENUM_LIMIT:
            raise EnumerationBudgetError("too many interlacing configurations")
    configs, weights = [], []
    for combo in itertools.product(*[list(v) for v in iv]):
        y = ParticleConfig(x.theta, combo)
        configs.append(y)
        weights.append(descending_weight(k, x, y))
    return configs, np.asarray(weights)


class DescendingEngine:
    """Determinant form of the descending measure: per-particle factors are
    independent across rows, so summing row i over its interval realizes
    the full interlacing sum.  Normalizer convention: Z = det M directly
    (no Vandermonde division; the pair product in the weight is not a
    ratio)."""

    def __init__(self, k: DescendingKernel, x: ParticleConfig):
        self.k = k
        self.x = x
        self.intervals = descend_intervals(x)
        n = x.n - 1
        if n <= 0:
            raise InvalidInputError("x needs at least two particles")
        if any(len(v) == 0 for v in self.intervals):
            raise InvalidInputError("empty descend interval")
        nodes = np.array([np.asarray(k.b(v.mean())) for v in self.intervals],
                         dtype=complex)
        lw = _lagrange_weights_log(nodes)
        self.site_rows = []
        m = np.zeros((n, n), dtype=complex)
        for i, v in enumerate(self.intervals):
            bv = np.atleast_1d(np.asarray(k.b(v)))
            wv = np.array([per_site_weight(k, x, yi) for yi in v])
            rows, shifts = _lagrange_rows(bv, nodes, lw)
            rows = (wv * np.exp(shifts))[:, None] * rows
            self.site_rows.append(rows)
            m[i] = rows.sum(axis=0)
        self._engine = _RowEngine(m)

    def site_probabilities(self, i: int) -> np.ndarray:
        p = self._raw_site_probabilities(i)
        if abs(p.sum() - 1.0) > 1e-9:
            self._engine.refresh()
            p = self._raw_site_probabilities(i)
        total = p.sum()
        if abs(total) < 1e-9:
            raise ImpossiblePrefixError(f"no mass left for particle {i}")
        p = np.clip(p / total, 0.0, None)
        return p / p.sum()

    def _raw_site_probabilities(self, i: int) -> np.ndarray:
        v = self._engine.inverse_column(i)
        return np.real((self.site_rows[i] / self._engine.col_scales[None, :])
                       @ v / self._engine.row_scales[i])

    def pin(self, i: int, idx: int) -> None:
        self._engine.pin_row(i, self.site_rows[i][idx])


def descending_partition_and_sample(k: DescendingKernel, x: ParticleConfig,
                                    rng: np.random.Generator) -> StepOutcome:
    """Exact draw of one descending step, particle by particle."""
    eng = DescendingEngine(k, x)
    ys = []
    prob = 1.0
    u = rng.random(x.n - 1)
    for i, v in enumerate(eng.intervals):
        p = eng.site_probabilities(i)
        idx = int(np.searchsorted(np.cumsum(p), u[i]))
        idx = min(idx, len(v) - 1)
        prob *= p[idx]
        eng.pin(i, idx)
        ys.append(v[idx])
    y = ParticleConfig(x.theta, tuple(ys))
    return StepOutcome(weight=descending_weight(k, x, y), probability=prob, y=y)


def particle_hole_dual(k: DescendingKernel, x: ParticleConfig):
    """Ascending form of the descending kernel on the complementary holes.

    Returns (dual kernel, dual hole configuration): holes of x in L(x),
    coordinates divided by theta, theta replaced by 1/theta.  Normalized
    probabilities match: P_dual(e | holes) = P(y | x) for y with hole set
    holes + e/theta... (holes of y are holes of x shifted up by e).
    """
    th = x.theta
    lat = lattice_points(x)
    occupied = x.array()[:-1]  # x_1..x_n lie in L(x); x_{n+1} does not
    mask = np.ones(len(lat), dtype=bool)
    for p in occupied:
        j = np.argmin(np.abs(lat - p))
        if abs(lat[j] - p) > _LATTICE_TOL:
            raise InvalidInputError("particle off its own lattice")
        mask[j] = False
    holes = lat[mask]
    dual_b = k.b.shifted_scaled(th, 0.0)
    dual_phi_plus = k.w.shifted_scaled(th, 0.0) * \
        k.w.shifted_scaled(th, 1.0).inverted()
    dual = AscendingKernel(theta=1.0 / th, b=dual_b,
                           phi_plus=dual_phi_plus, phi_minus=const_fn(1.0))
    hole_config = ParticleConfig(1.0 / th, tuple(holes / th))
    return dual, hole_config


def holes_of(x: ParticleConfig, y: ParticleConfig) -> np.ndarray:
    """Hole positions of y inside L(x), in decreasing order (undivided)."""
    lat = lattice_points(x)
    mask = np.ones(len(lat), dtype=bool)
    for p in y.positions:
        j = np.argmin(np.abs(lat - p))
        if abs(lat[j] - p) > _LATTICE_TOL:
            raise InvalidInputError("y off the lattice L(x)")
        mask[j] = False
    return lat[mask]


# ---------------------------------------------------------------------------
# built-in instances
# ---------------------------------------------------------------------------

def bernoulli_kernel(theta: float, p: float) -> AscendingKernel:
    """Nonintersecting Bernoulli walks: b = id, constant jump odds."""
    return AscendingKernel(theta, identity_fn(), const_fn(p), const_fn(1.0 - p))


def macdonald_ascending_kernel(q: float, theta: float,
                               jump_weight: float) -> AscendingKernel:
    """Ascending Macdonald specialization: b(z) = q^z, phi+ = const."""
    return AscendingKernel(theta, qpower_fn(q, 1.0),
                           const_fn(jump_weight), const_fn(1.0))


def gt_uniform_descending(x: ParticleConfig) -> DescendingKernel:
    """Uniform Gelfand-Tsetlin level-to-level kernel at theta = 1."""
    x1, xlast = x.positions[0], x.positions[-1]
    w = gamma_fn(-xlast, 1.0) * gamma_fn(x1 + 1.0, -1.0)
    return DescendingKernel(identity_fn(), w)


def jack_descending(x: ParticleConfig) -> DescendingKernel:
    """Jack-weighted corners kernel: w(z) = Gamma(x1-z+theta) Gamma(z-x_{n+1})."""
    x1, xlast = x.positions[0], x.positions[-1]
    w = gamma_fn(x1 + x.theta, -1.0) * gamma_fn(-xlast, 1.0)
    return DescendingKernel(identity_fn(), w)


def macdonald_descending(x: ParticleConfig, q: float) -> DescendingKernel:
    """Descending Macdonald specialization: b(z) = q^{-z}, Gaussian times
    q-gamma weight."""
    x1, xlast = x.positions[0], x.positions[-1]
    th = x.theta
    w = KernelFunction((
        Factor("qquad", -0.5, xlast + 0.5, q),
        Factor("qgamma", x1 + th, -1.0, q),
        Factor("qgamma", -xlast, 1.0, q),
    ))
    return DescendingKernel(qpower_fn(q, -1.0), w)
