"""
Exterior harmonic maps Q_{l,n}: the static solutions of the equivariant wave map
equation on r >= 1 with Q(1) = 0 and Q(inf) = n*pi.

In s = log r the profile equation is the damped pendulum

    phi_ss + phi_s = kappa * sin(2 phi),   kappa = l(l+1)/2,

whose equilibria m*pi are saddles and (m+1/2)*pi stable foci.
"""

import logging
import math
from dataclasses import dataclass
from enum import Enum
from functools import cached_property
from typing import Optional, Tuple, Union

import numpy
import pandas
from scipy.integrate import simpson, solve_ivp
from scipy.interpolate import CubicHermiteSpline

from app.config import Config

logger = logging.getLogger(__name__)

ArrayLike = Union[float, numpy.ndarray]

CENTRAL_EIGHTH_ORDER = numpy.array([1 / 280, -4 / 105, 1 / 5, -4 / 5, 0.0, 4 / 5, -1 / 5, 4 / 105, -1 / 280])


class TerminalKind(str, Enum):
    FOCUS = "focus"
    SADDLE = "saddle"
    TRANSIENT = "transient"


class ShotOutcome(str, Enum):
    UNDERSHOOT = "undershoot"
    OVERSHOOT = "overshoot"
    UNRESOLVED = "unresolved"


@dataclass(frozen=True)
class PendulumState:
    s: float
    phi: float
    phidot: float

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.s, self.phi, self.phidot)):
            raise ValueError(f"Pendulum state must be finite, got {self}")
        if self.s < 0:
            raise ValueError(f"Pendulum state lives on s >= 0, got s={self.s}")


@dataclass(frozen=True, eq=False)
class PendulumTrajectory:
    ell: int
    a: float
    s: numpy.ndarray
    phi: numpy.ndarray
    phidot: numpy.ndarray
    kind: TerminalKind
    m: Optional[int] = None
    solution: Optional[object] = None  # scipy OdeSolution, dense in s

    @property
    def final_state(self) -> PendulumState:
        return PendulumState(float(self.s[-1]), float(self.phi[-1]), float(self.phidot[-1]))

    @property
    def terminal_angle(self) -> Optional[float]:
        if self.m is None:
            return None
        if self.kind == TerminalKind.FOCUS:
            return (self.m + 0.5) * math.pi
        return self.m * math.pi


@dataclass(frozen=True)
class AlphaFit:
    alpha: float
    correction: float
    predicted_correction: float
    residual: float
    window: Tuple[float, float] = (0.0, 0.0)


def kappa(ell: int) -> float:
    return ell * (ell + 1) / 2.0


def correction_coefficient(ell: int, alpha: float) -> float:
    """Coefficient of r^{-3(l+1)} in Q: determined by alpha alone."""
    return ell * alpha**3 / (3.0 * (4 * ell + 3))


def series_deviation(ell: int, alpha: float, s: ArrayLike) -> Tuple[ArrayLike, ArrayLike]:
    """n*pi - Q and its s-derivative from the two-term asymptotic series."""
    p = ell + 1
    c = correction_coefficient(ell, alpha)
    e1 = numpy.exp(-p * numpy.asarray(s, dtype=float))
    e3 = e1**3
    return alpha * e1 - c * e3, -p * alpha * e1 + 3 * p * c * e3


@dataclass(frozen=True, eq=False)
class HarmonicMapProfile:
    """
    Q_{l,n} sampled on a uniform grid in s = log r, 0 <= s <= s_max.

    Samples with s <= seam come from the profile ODE, the rest from the
    asymptotic series. ``deviation`` stores n*pi - Q without cancellation.
    """

    ell: int
    n: int
    shoot_param: float
    alpha0: float
    s_max: float
    s: numpy.ndarray
    q: numpy.ndarray
    q_s: numpy.ndarray
    deviation: numpy.ndarray
    seam: float
    converged: bool = True

    def __post_init__(self):
        if self.ell < 0 or self.n < 0:
            raise ValueError(f"Profile needs l >= 0 and n >= 0, got l={self.ell}, n={self.n}")
        if len(self.s) < 5:
            raise ValueError("Profile needs at least 5 samples")

    @classmethod
    def zero(cls, ell: int, s_max: float = Config.Shooting.s_max, ds: float = Config.Shooting.sample_ds):
        s = numpy.linspace(0.0, s_max, int(round(s_max / ds)) + 1)
        zeros = numpy.zeros_like(s)
        return cls(ell, 0, 0.0, 0.0, s_max, s, zeros, zeros.copy(), zeros.copy(), seam=s_max)

    @classmethod
    def from_samples(cls, ell: int, n: int, r: numpy.ndarray, q: numpy.ndarray, q_r: numpy.ndarray,
                     shoot_param: Optional[float] = None, alpha0: float = 0.0) -> "HarmonicMapProfile":
        """Profile from a table (r, Q, Q'); r must be uniform in log r and start at 1."""
        r = numpy.asarray(r, dtype=float)
        s = numpy.log(r)
        if abs(s[0]) > 1e-12:
            raise ValueError(f"Profile table must start at r=1, got r={r[0]}")
        q = numpy.asarray(q, dtype=float)
        q_s = numpy.asarray(q_r, dtype=float) * r
        return cls(
            ell=ell, n=n, shoot_param=float(q_s[0]) if shoot_param is None else shoot_param, alpha0=alpha0,
            s_max=float(s[-1]), s=s, q=q, q_s=q_s, deviation=n * math.pi - q, seam=float(s[-1]),
        )

    @property
    def ds(self) -> float:
        return float(self.s[1] - self.s[0])

    @property
    def r(self) -> numpy.ndarray:
        return numpy.exp(self.s)

    @property
    def r_max(self) -> float:
        return math.exp(self.s_max)

    @cached_property
    def spline(self) -> CubicHermiteSpline:
        return CubicHermiteSpline(self.s, self.q, self.q_s)

    def table(self) -> pandas.DataFrame:
        r = self.r
        return pandas.DataFrame({"r": r, "Q": self.q, "dQdr": self.q_s / r})

    def header(self) -> dict:
        return {
            "ell": self.ell,
            "n": self.n,
            "shootParam": self.shoot_param,
            "alpha0": self.alpha0,
            "residual": plugback_residual(self),
            "seam": self.seam,
            "sMax": self.s_max,
        }


def _pendulum_rhs(ell: int):
    k = kappa(ell)

    def rhs(s, y):
        return [y[1], -y[1] + k * numpy.sin(2.0 * y[0])]

    return rhs


def linearization_attracting(ell: int, angle: float) -> bool:
    """True when both eigenvalues of the linearized pendulum at ``angle`` have negative real part."""
    jacobian = numpy.array([[0.0, 1.0], [2.0 * kappa(ell) * math.cos(2.0 * angle), -1.0]])
    return bool(numpy.all(numpy.linalg.eigvals(jacobian).real < 0))


def _focus_event(basin: float):
    def event(s, y):
        m = math.floor(y[0] / math.pi)
        return abs(y[0] - (m + 0.5) * math.pi) + abs(y[1]) - basin

    event.terminal = True
    event.direction = -1
    return event


def _saddle_event(basin: float):
    def event(s, y):
        m = round(y[0] / math.pi)
        return abs(y[0] - m * math.pi) + abs(y[1]) - basin

    event.terminal = True
    event.direction = -1
    return event


def integrate_pendulum(ell: int, a: float, s_max: float) -> PendulumTrajectory:
    """
    Integrates phi(0) = 0, phi'(0) = a with an adaptive RK45 pair and classifies the
    terminal behaviour by basin entry around a focus or a saddle.

    Raises:
        ValueError: if s_max <= 0.
        RuntimeError: if the integrator fails (step size underflow).
    """
    if not s_max > 0:
        raise ValueError(f"Integration horizon must be positive, got s_max={s_max}")
    basin = Config.Shooting.basin_radius
    if a == 0.0:
        zero = numpy.zeros(1)
        return PendulumTrajectory(ell, a, zero, zero.copy(), zero.copy(), TerminalKind.SADDLE, 0)

    sol = solve_ivp(
        _pendulum_rhs(ell), (0.0, s_max), [0.0, a], method="RK45",
        rtol=Config.Shooting.rtol, atol=Config.Shooting.atol, dense_output=True,
        events=[_focus_event(basin), _saddle_event(basin)],
    )
    if sol.status == -1:
        raise RuntimeError(f"Pendulum integration failed for l={ell}, a={a}: {sol.message}")

    phi, phidot = sol.y[0], sol.y[1]
    kind, m = TerminalKind.TRANSIENT, None
    if sol.status == 1:
        if len(sol.t_events[0]):
            kind, m = TerminalKind.FOCUS, math.floor(phi[-1] / math.pi)
            if not linearization_attracting(ell, (m + 0.5) * math.pi):
                raise RuntimeError(f"Focus at {(m + 0.5)}*pi is not attracting for l={ell}")
        else:
            kind, m = TerminalKind.SADDLE, round(phi[-1] / math.pi)
    logger.debug(f"Pendulum l={ell} a={a}: {kind.value} m={m} at s={sol.t[-1]:.3f}")
    return PendulumTrajectory(ell, a, sol.t, phi, phidot, kind, m, sol.sol)


def terminal_scan(ell: int, a_values, s_max: float) -> Tuple[list, list]:
    """
    Terminal index m for each a (foci and saddles both report their m) and the
    positions where m decreases although a increases.
    """
    terminals = []
    for a in a_values:
        trajectory = integrate_pendulum(ell, float(a), s_max)
        terminals.append(trajectory.m)
    violations = [
        i for i in range(1, len(terminals))
        if terminals[i] is not None and terminals[i - 1] is not None and terminals[i] < terminals[i - 1]
    ]
    if violations:
        logger.warning(f"Terminal index not monotone in a for l={ell} at positions {violations}")
    return terminals, violations


def _shot(ell: int, n: int, a: float, s_max: float) -> Tuple[ShotOutcome, object]:
    target = n * math.pi

    def crosses_target(s, y):
        return y[0] - target

    crosses_target.terminal = True
    crosses_target.direction = 1

    def turns_back(s, y):
        return y[1]

    turns_back.terminal = True
    turns_back.direction = -1

    sol = solve_ivp(
        _pendulum_rhs(ell), (0.0, s_max), [0.0, a], method="RK45",
        rtol=Config.Shooting.rtol, atol=Config.Shooting.atol, dense_output=True,
        events=[crosses_target, turns_back],
    )
    if sol.status == -1:
        raise RuntimeError(f"Shooting integration failed for l={ell}, n={n}, a={a}: {sol.message}")
    if len(sol.t_events[0]):
        return ShotOutcome.OVERSHOOT, sol
    if len(sol.t_events[1]):
        return ShotOutcome.UNDERSHOOT, sol
    return ShotOutcome.UNRESOLVED, sol


def _find_bracket(ell: int, n: int, s_max: float, scan_start: float) -> Tuple[float, float]:
    limit = Config.Shooting.scan_limit
    a = scan_start
    outcome, _ = _shot(ell, n, a, s_max)
    if outcome == ShotOutcome.UNRESOLVED:
        return a, a
    if outcome == ShotOutcome.OVERSHOOT:
        while outcome == ShotOutcome.OVERSHOOT:
            a /= 2.0
            if a < 1.0 / limit:
                raise RuntimeError(f"No undershoot witness for l={ell}, n={n} in a in [{1.0 / limit}, {scan_start}]")
            outcome, _ = _shot(ell, n, a, s_max)
        return (a, a) if outcome == ShotOutcome.UNRESOLVED else (a, 2.0 * a)
    while outcome == ShotOutcome.UNDERSHOOT:
        a *= 2.0
        if a > limit:
            raise RuntimeError(f"No overshoot witness for l={ell}, n={n} in a in [{scan_start}, {limit}]")
        outcome, _ = _shot(ell, n, a, s_max)
    return (a, a) if outcome == ShotOutcome.UNRESOLVED else (a / 2.0, a)


def _bisect_shooting(ell: int, n: int, lo: float, hi: float, s_max: float) -> Tuple[float, float, object]:
    lo_solution = None
    while hi - lo > Config.Shooting.bracket_width:
        mid = 0.5 * (lo + hi)
        if not lo < mid < hi:
            break
        outcome, sol = _shot(ell, n, mid, s_max)
        if outcome == ShotOutcome.UNDERSHOOT:
            lo, lo_solution = mid, sol
        elif outcome == ShotOutcome.OVERSHOOT:
            hi = mid
        else:
            return mid, mid, sol
    if lo_solution is None:
        _, lo_solution = _shot(ell, n, lo, s_max)
    return lo, hi, lo_solution


def _deviation_at_origin(ell: int, n: int, alpha: float, seam: float, s_eval=None, max_step: float = numpy.inf,
                         method: str = "RK45", rtol: float = Config.Shooting.rtol):
    """
    Integrates the deviation n*pi - Q backwards from the series at ``seam`` to s = 0.

    Backwards in s the decaying mode grows and the growing mode decays, so this
    direction follows the profile stably.
    """
    delta0, delta_s0 = series_deviation(ell, alpha, seam)
    stop = (n + 0.5) * math.pi

    def past_target(s, y):
        return y[0] - stop

    past_target.terminal = True

    sol = solve_ivp(
        _pendulum_rhs(ell), (seam, 0.0), [float(delta0), float(delta_s0)], method=method,
        rtol=rtol, atol=Config.Shooting.atol * float(delta0), t_eval=s_eval,
        max_step=max_step, events=[past_target],
    )
    if sol.status == -1:
        raise RuntimeError(f"Profile integration failed for l={ell}, n={n}, alpha={alpha}: {sol.message}")
    if sol.status == 1:
        return 0.5 * math.pi, sol
    return float(sol.y[0][-1]) - n * math.pi, sol


def _seam_for(ell: int, alpha: float, s_max: float) -> float:
    p = ell + 1
    seam_deviation = Config.Shooting.fit_deviation * 10.0 ** (-p)
    return min(s_max, math.log(alpha / seam_deviation) / p)


def _estimate_alpha(ell: int, n: int, solution, s_end: float) -> Optional[float]:
    p = ell + 1
    s = numpy.linspace(0.0, s_end, 4001)
    deviation = n * math.pi - solution(s)[0]
    close = numpy.nonzero((deviation > 0) & (deviation <= Config.Shooting.fit_deviation))[0]
    if not len(close):
        return None
    i = close[0]
    alpha = deviation[i] * math.exp(p * s[i])
    for _ in range(3):
        alpha = deviation[i] * math.exp(p * s[i]) + correction_coefficient(ell, alpha) * math.exp(-2 * p * s[i])
    return alpha


def _bisect_alpha(ell: int, n: int, estimate: Optional[float], s_max: float) -> float:
    def value(alpha):
        return _deviation_at_origin(ell, n, alpha, _seam_for(ell, alpha, s_max))[0]

    lo, hi = (0.99 * estimate, 1.01 * estimate) if estimate else (0.5, 2.0)
    for _ in range(60):
        if value(lo) < 0:
            break
        lo /= 2.0
    else:
        raise RuntimeError(f"No lower alpha witness for l={ell}, n={n}")
    for _ in range(60):
        if value(hi) > 0:
            break
        hi *= 2.0
    else:
        raise RuntimeError(f"No upper alpha witness for l={ell}, n={n}")

    while hi - lo > 1e-15 * hi:
        mid = 0.5 * (lo + hi)
        if not lo < mid < hi:
            break
        if value(mid) < 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def shoot(ell: int, n: int, s_max: float = Config.Shooting.s_max,
          bracket: Optional[Tuple[float, float]] = None,
          scan_start: float = Config.Shooting.scan_start) -> HarmonicMapProfile:
    """
    Degree-n exterior harmonic map for equivariance class l.

    The shooting parameter a = phi'(0) is bisected between an undershoot witness
    (phi' vanishes below n*pi) and an overshoot witness (phi crosses n*pi). The samples
    are then produced by integrating the deviation n*pi - Q from the asymptotic series
    back to r = 1, with alpha0 bisected so that Q(1) = 0.

    Raises:
        ValueError: for l < 1, n < 0, or a supplied bracket that does not bracket.
        RuntimeError: if no bracket is found within the scan limits.
    """
    if ell < 1:
        raise ValueError(f"ell must be >= 1, got {ell}")
    if n < 0:
        raise ValueError(f"Degree must be >= 0, got n={n}")
    if n == 0:
        return HarmonicMapProfile.zero(ell, s_max)

    if bracket is None:
        lo, hi = _find_bracket(ell, n, s_max, scan_start)
    else:
        lo, hi = bracket
        if _shot(ell, n, lo, s_max)[0] != ShotOutcome.UNDERSHOOT or _shot(ell, n, hi, s_max)[0] != ShotOutcome.OVERSHOOT:
            raise ValueError(f"Bracket {bracket} does not bracket the degree-{n} shooting parameter for l={ell}")
    logger.info(f"Shooting bracket for l={ell}, n={n}: [{lo}, {hi}]")

    lo, hi, witness = _bisect_shooting(ell, n, lo, hi, s_max)
    shoot_param = 0.5 * (lo + hi)

    alpha = _bisect_alpha(ell, n, _estimate_alpha(ell, n, witness.sol, float(witness.t[-1])), s_max)
    seam = _seam_for(ell, alpha, s_max)

    ds = Config.Shooting.sample_ds
    s = numpy.linspace(0.0, s_max, int(round(s_max / ds)) + 1)
    inside = s <= seam
    _, sol = _deviation_at_origin(
        ell, n, alpha, seam, s_eval=s[inside][::-1], max_step=ds,
        method=Config.Shooting.sample_method, rtol=Config.Shooting.sample_rtol,
    )
    if sol.y.shape[1] != int(inside.sum()):
        raise RuntimeError(f"Profile integration for l={ell}, n={n} stopped early at s={sol.t[-1]}")

    deviation = numpy.empty_like(s)
    deviation_s = numpy.empty_like(s)
    deviation[inside], deviation_s[inside] = sol.y[0][::-1], sol.y[1][::-1]
    deviation[~inside], deviation_s[~inside] = series_deviation(ell, alpha, s[~inside])
    q = n * math.pi - deviation
    q[0] = 0.0

    a_profile = -deviation_s[0]
    if abs(a_profile - shoot_param) > 1e-8 * max(1.0, abs(shoot_param)):
        logger.warning(f"Profile slope {a_profile} at r=1 differs from shooting parameter {shoot_param} (l={ell}, n={n})")

    profile = HarmonicMapProfile(
        ell=ell, n=n, shoot_param=shoot_param, alpha0=alpha, s_max=s_max,
        s=s, q=q, q_s=-deviation_s, deviation=deviation, seam=seam,
    )
    logger.info(f"Harmonic map l={ell}, n={n}: a={shoot_param:.15g}, alpha0={alpha:.15g}, seam s={seam:.3f}")
    return profile


def fit_alpha(profile: HarmonicMapProfile) -> AlphaFit:
    """
    Least squares for (n*pi - Q) r^{l+1} = alpha + beta r^{-2(l+1)} over the last
    decade of r before the seam.
    """
    if profile.n == 0:
        return AlphaFit(0.0, 0.0, 0.0, 0.0)
    if not profile.converged:
        raise ValueError(f"Profile l={profile.ell}, n={profile.n} did not converge")
    p = profile.ell + 1
    lo = max(0.0, profile.seam - math.log(10.0))
    window = (profile.s >= lo - 1e-12) & (profile.s <= profile.seam + 1e-12)
    if window.sum() < 3:
        raise ValueError(f"Fit window [{lo}, {profile.seam}] holds fewer than 3 samples")
    r = numpy.exp(profile.s[window])
    y = profile.deviation[window] * r**p
    design = numpy.column_stack([numpy.ones_like(r), r ** (-2.0 * p)])
    coef, *_ = numpy.linalg.lstsq(design, y, rcond=None)
    residual = float(numpy.max(numpy.abs(design @ coef - y)))
    alpha, beta = float(coef[0]), float(coef[1])
    return AlphaFit(
        alpha=alpha, correction=beta, predicted_correction=-correction_coefficient(profile.ell, alpha),
        residual=residual, window=(float(r[0]), float(r[-1])),
    )


def evaluate_Q(profile: HarmonicMapProfile, r: ArrayLike) -> Tuple[ArrayLike, ArrayLike]:
    """
    (Q(r), Q'(r)): cubic Hermite interpolation in s = log r up to r_max, the asymptotic
    series beyond.

    Raises:
        ValueError: for r < 1.
    """
    r_arr = numpy.asarray(r, dtype=float)
    if numpy.any(r_arr < 1.0):
        raise ValueError(f"Q is defined on r >= 1, got r={float(numpy.min(r_arr))}")
    s = numpy.log(r_arr)
    inside = s <= profile.s_max
    q = numpy.empty_like(s)
    q_r = numpy.empty_like(s)
    if numpy.any(inside):
        q[inside] = profile.spline(s[inside])
        q_r[inside] = profile.spline(s[inside], 1) / r_arr[inside]
    if numpy.any(~inside):
        deviation, deviation_s = series_deviation(profile.ell, profile.alpha0, s[~inside])
        q[~inside] = profile.n * math.pi - deviation
        q_r[~inside] = -deviation_s / r_arr[~inside]
    if q.ndim == 0:
        return float(q), float(q_r)
    return q, q_r


def plugback_residual(profile: HarmonicMapProfile) -> float:
    """
    sup over interior samples of |r^2 (Q_rr + 2 Q_r / r) - kappa sin 2Q| = |phi_ss + phi_s - kappa sin 2phi|,
    with phi_ss from the eighth-order central difference of the stored phi_s.
    """
    if profile.n == 0 and not numpy.any(profile.q):
        return 0.0
    half = len(CENTRAL_EIGHTH_ORDER) // 2
    deviation_s = -profile.q_s
    deviation_ss = numpy.correlate(deviation_s, CENTRAL_EIGHTH_ORDER, mode="valid") / profile.ds
    interior = slice(half, len(deviation_s) - half)
    residual = deviation_ss + deviation_s[interior] - kappa(profile.ell) * numpy.sin(2.0 * profile.deviation[interior])
    return float(numpy.max(numpy.abs(residual)))


def harmonic_energy(profile: HarmonicMapProfile) -> float:
    """E_l(Q, 0) = 1/2 int (phi_s^2 + l(l+1) sin^2 phi) e^s ds, with the series tail added."""
    ell = profile.ell
    density = (profile.q_s**2 + 2.0 * kappa(ell) * numpy.sin(profile.deviation) ** 2) * profile.r
    energy = 0.5 * float(simpson(density, dx=profile.ds))
    if profile.alpha0:
        p = ell + 1
        energy += 0.5 * profile.alpha0**2 * (p**2 + ell * (ell + 1)) * math.exp((1 - 2 * p) * profile.s_max) / (2 * p - 1)
    return energy
