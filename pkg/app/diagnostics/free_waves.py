"""
Exact radial free waves in odd dimension d, used as ground truth for the channel
experiments.

Descent: u = (r^{-1} d/dr)^m (W / r), m = (d-3)/2, with W(t, r) = h+(r+t) + h-(r-t).
The operator is tracked as a sum of terms coef * W^(j) * r^{-p}, so every derivative
of u is exact. P(R) data evolves by a terminating series in t of powers of the
Laplacian.
"""

import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import Dict, List, Sequence, Tuple

import numpy
from numpy.polynomial import Polynomial
from numpy.polynomial.legendre import leggauss
from scipy.integrate import simpson

from app.cauchy.cauchy_algebra import basis_counts
from app.evolver.waveEvolver import BUMP_POWER

logger = logging.getLogger(__name__)

Terms = Dict[Tuple[int, int], float]

# Gauss-Legendre nodes per piece; exact for the squared seed derivatives
RADIATION_NODES = 24


@dataclass(frozen=True)
class BumpSeed:
    amplitude: float
    center: float
    width: float
    power: int = BUMP_POWER

    def __post_init__(self):
        if self.width <= 0:
            raise ValueError(f"Seed width must be positive, got {self.width}")

    @cached_property
    def polynomial(self) -> Polynomial:
        """amplitude * (1 - y^2)^power in the local variable y = (x - center) / width."""
        return self.amplitude * Polynomial([1.0, 0.0, -1.0]) ** self.power

    def scaled(self, factor: float) -> "BumpSeed":
        return BumpSeed(self.amplitude * factor, self.center, self.width, self.power)

    @property
    def support(self) -> Tuple[float, float]:
        return self.center - self.width, self.center + self.width

    def __call__(self, x: numpy.ndarray, order: int = 0) -> numpy.ndarray:
        x = numpy.asarray(x, dtype=float)
        y = (x - self.center) / self.width
        values = self.polynomial.deriv(order)(y) / self.width**order if order else self.polynomial(y)
        lo, hi = self.support
        return numpy.where((x > lo) & (x < hi), values, 0.0)


@dataclass(frozen=True)
class SeedPair:
    """The 1-D d'Alembert profiles h+ (incoming) and h- (outgoing)."""

    h_plus: BumpSeed
    h_minus: BumpSeed

    @classmethod
    def position(cls, bump: BumpSeed) -> "SeedPair":
        """Data (D^m(h/r), 0)."""
        half = bump.scaled(0.5)
        return cls(half, half)

    @classmethod
    def velocity(cls, bump: BumpSeed) -> "SeedPair":
        """Data (0, D^m(h'/r))."""
        return cls(bump.scaled(0.5), bump.scaled(-0.5))

    @property
    def support(self) -> Tuple[float, float]:
        lo = min(self.h_plus.support[0], self.h_minus.support[0])
        hi = max(self.h_plus.support[1], self.h_minus.support[1])
        return lo, hi


@dataclass(frozen=True)
class FreeWaveValues:
    u: numpy.ndarray
    u_t: numpy.ndarray
    u_r: numpy.ndarray
    u_tt: numpy.ndarray
    u_rr: numpy.ndarray

    def residual(self, dim: int, r: numpy.ndarray) -> numpy.ndarray:
        """u_tt - u_rr - ((d-1)/r) u_r."""
        return self.u_tt - self.u_rr - (dim - 1) / r * self.u_r


def _check_odd(d: int):
    if d < 3 or d % 2 == 0:
        raise ValueError(f"Free-wave oracle needs odd d >= 3, got d={d}")


def _add(terms: Terms, key: Tuple[int, int], value: float):
    if value:
        terms[key] = terms.get(key, 0.0) + value


def apply_descent(terms: Terms) -> Terms:
    """r^{-1} d/dr applied term-wise: W^(j) r^{-p} -> W^(j+1) r^{-p-1} - p W^(j) r^{-p-2}."""
    out: Terms = {}
    for (j, p), c in terms.items():
        _add(out, (j + 1, p + 1), c)
        _add(out, (j, p + 2), -p * c)
    return out


def apply_radial(terms: Terms) -> Terms:
    """d/dr applied term-wise."""
    out: Terms = {}
    for (j, p), c in terms.items():
        _add(out, (j + 1, p), c)
        _add(out, (j, p + 1), -p * c)
    return out


def descent_terms(d: int) -> Terms:
    _check_odd(d)
    terms: Terms = {(0, 1): 1.0}
    for _ in range((d - 3) // 2):
        terms = apply_descent(terms)
    return terms


def _evaluate(terms: Terms, seed: SeedPair, t: float, r: numpy.ndarray, time_order: int) -> numpy.ndarray:
    out = numpy.zeros_like(r)
    sign = -1.0 if time_order % 2 else 1.0
    for (j, p), c in terms.items():
        order = j + time_order
        w = seed.h_plus(r + t, order) + sign * seed.h_minus(r - t, order)
        out += c * w * r ** (-float(p))
    return out


def free_wave_exact(d: int, seed: SeedPair, t: float, r) -> FreeWaveValues:
    """
    Radial free wave generated by ``seed`` in dimension d, with its first and second
    derivatives, at time t and radii r > 0.

    Raises:
        ValueError: for even d.
    """
    terms = descent_terms(d)
    r = numpy.atleast_1d(numpy.asarray(r, dtype=float))
    radial = apply_radial(terms)
    radial2 = apply_radial(radial)
    return FreeWaveValues(
        u=_evaluate(terms, seed, t, r, 0),
        u_t=_evaluate(terms, seed, t, r, 1),
        u_r=_evaluate(radial, seed, t, r, 0),
        u_tt=_evaluate(terms, seed, t, r, 2),
        u_rr=_evaluate(radial2, seed, t, r, 0),
    )


def _laplacian_chain(d: int, exponent: int, steps: int) -> List[Tuple[float, int]]:
    """[(c_k, a_k)] with Delta^k r^exponent = c_k r^{a_k}, k = 0..steps."""
    chain = [(1.0, exponent)]
    for _ in range(steps):
        c, a = chain[-1]
        chain.append((c * a * (a + d - 2), a - 2))
    return chain


def _factorial(k: int) -> float:
    out = 1.0
    for i in range(2, k + 1):
        out *= i
    return out


def power_wave_terms(d: int, lam: Sequence[float], mu: Sequence[float], t: float) -> Tuple[Dict[int, float], Dict[int, float]]:
    """
    u_r and u_t of the free wave with data sum lam_i r^{2i-d}, sum mu_j r^{2j-d}, as
    {exponent: coefficient} maps. Valid on r >= R + |t| when the data is given on r >= R.
    """
    u_r: Dict[int, float] = {}
    u_t: Dict[int, float] = {}
    for i, coef in enumerate(lam, start=1):
        if not coef:
            continue
        for k, (c, a) in enumerate(_laplacian_chain(d, 2 * i - d, i)):
            if not c:
                break
            # t^{2k}/(2k)! Delta^k f
            _add(u_r, a - 1, coef * c * a * t ** (2 * k) / _factorial(2 * k))
            if k:
                _add(u_t, a, coef * c * t ** (2 * k - 1) / _factorial(2 * k - 1))
    for j, coef in enumerate(mu, start=1):
        if not coef:
            continue
        for k, (c, a) in enumerate(_laplacian_chain(d, 2 * j - d, j)):
            if not c:
                break
            # t^{2k+1}/(2k+1)! Delta^k g
            _add(u_r, a - 1, coef * c * a * t ** (2 * k + 1) / _factorial(2 * k + 1))
            _add(u_t, a, coef * c * t ** (2 * k) / _factorial(2 * k))
    return u_r, u_t


def _power_sum(coefficients: Dict[int, float], r: numpy.ndarray) -> numpy.ndarray:
    out = numpy.zeros_like(r)
    for a, c in coefficients.items():
        out += c * r ** float(a)
    return out


def _tail_energy(u_r: Dict[int, float], u_t: Dict[int, float], d: int, rho: float) -> float:
    """int_rho^inf (u_t^2 + u_r^2) r^{d-1} dr for power sums decaying faster than r^{-d/2}."""
    total = 0.0
    for series in (u_r, u_t):
        for a, c in series.items():
            for b, e in series.items():
                q = a + b + d - 1
                if q >= -1:
                    raise ValueError(f"Power tail r^{q} is not integrable")
                total += c * e * -(rho ** (q + 1)) / (q + 1)
    return total


@dataclass(frozen=True, eq=False)
class ExactFreeWave:
    """Superposition of descent waves and a P(R) component, exact on r >= R + |t|."""

    dim: int
    seeds: Tuple[SeedPair, ...] = ()
    lam: numpy.ndarray = field(default_factory=lambda: numpy.zeros(0))
    mu: numpy.ndarray = field(default_factory=lambda: numpy.zeros(0))

    def __post_init__(self):
        _check_odd(self.dim)
        k, ktilde = basis_counts(self.dim)
        lam = numpy.zeros(ktilde) if len(self.lam) == 0 else numpy.asarray(self.lam, dtype=float)
        mu = numpy.zeros(k) if len(self.mu) == 0 else numpy.asarray(self.mu, dtype=float)
        if lam.shape != (ktilde,) or mu.shape != (k,):
            raise ValueError(f"P(R) coefficients need lengths ({ktilde}, {k}), got ({lam.shape}, {mu.shape})")
        object.__setattr__(self, "lam", lam)
        object.__setattr__(self, "mu", mu)

    @property
    def support_edge(self) -> float:
        return max((seed.support[1] for seed in self.seeds), default=0.0)

    def derivatives(self, t: float, r: numpy.ndarray) -> Tuple[numpy.ndarray, numpy.ndarray, numpy.ndarray]:
        """(u, u_t, u_r) at time t; the power part is only meaningful on r >= R + |t|."""
        r = numpy.atleast_1d(numpy.asarray(r, dtype=float))
        u = numpy.zeros_like(r)
        u_t = numpy.zeros_like(r)
        u_r = numpy.zeros_like(r)
        for seed in self.seeds:
            values = free_wave_exact(self.dim, seed, t, r)
            u += values.u
            u_t += values.u_t
            u_r += values.u_r
        power_r, power_t = power_wave_terms(self.dim, self.lam, self.mu, t)
        u_r += _power_sum(power_r, r)
        u_t += _power_sum(power_t, r)
        for i, coef in enumerate(self.lam, start=1):
            for k, (c, a) in enumerate(_laplacian_chain(self.dim, 2 * i - self.dim, i)):
                u += coef * c * t ** (2 * k) / _factorial(2 * k) * r ** float(a)
        for j, coef in enumerate(self.mu, start=1):
            for k, (c, a) in enumerate(_laplacian_chain(self.dim, 2 * j - self.dim, j)):
                u += coef * c * t ** (2 * k + 1) / _factorial(2 * k + 1) * r ** float(a)
        return u, u_t, u_r

    def _breakpoints(self, t: float, lo: float, hi: float) -> List[float]:
        points = {lo, hi}
        for seed in self.seeds:
            for edge in seed.h_plus.support:
                points.add(edge - t)
            for edge in seed.h_minus.support:
                points.add(edge + t)
        return sorted(p for p in points if lo <= p <= hi)

    def exterior_energy(self, t: float, R: float, nodes_per_piece: int = 2001) -> float:
        """int_{r >= R + |t|} (u_t^2 + u_r^2) r^{d-1} dr: Simpson between seed kinks, exact beyond."""
        rho = R + abs(t)
        edge = max(rho, self.support_edge + abs(t))
        total = 0.0
        if self.seeds and edge > rho:
            points = self._breakpoints(t, rho, edge)
            for a, b in zip(points[:-1], points[1:]):
                if b - a <= 0:
                    continue
                r = numpy.linspace(a, b, nodes_per_piece)
                _, u_t, u_r = self.derivatives(t, r)
                total += float(simpson((u_t**2 + u_r**2) * r ** (self.dim - 1), x=r))
        if numpy.any(self.lam) or numpy.any(self.mu):
            power_r, power_t = power_wave_terms(self.dim, self.lam, self.mu, t)
            total += _tail_energy(power_r, power_t, self.dim, edge)
        return total

    def radiation_limit(self, direction: int, R: float) -> float:
        """
        lim_{t -> direction * inf} of the exterior energy on r >= R + |t|.

        Only the profile travelling outwards survives: on r = |t| + rho the leading
        descent term gives (u_t^2 + u_r^2) r^{d-1} -> 2 h^{(m+1)}(rho)^2, with h = h-
        for t -> +inf and h = h+ for t -> -inf. The P(R) part and every cross term decay.
        """
        if direction not in (1, -1):
            raise ValueError(f"direction must be +1 or -1, got {direction}")
        order = (self.dim - 3) // 2 + 1
        profiles = [seed.h_minus if direction > 0 else seed.h_plus for seed in self.seeds]
        points = sorted({R} | {edge for p in profiles for edge in p.support if edge > R})
        nodes, weights = leggauss(RADIATION_NODES)
        total = 0.0
        for a, b in zip(points[:-1], points[1:]):
            x = 0.5 * (b - a) * nodes + 0.5 * (a + b)
            values = sum((p(x, order) for p in profiles), numpy.zeros_like(x))
            total += 0.5 * (b - a) * float(weights @ values**2)
        return 2.0 * total
