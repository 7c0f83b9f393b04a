"""
Orthogonal projection onto P(R) = span{(r^{2i-d}, 0), (0, r^{2j-d})} inside
Hdot^1 x L^2(r >= R, r^{d-1} dr), using the explicit Cauchy inverses.

Index conventions follow the formulas: i, j run from 1, the Hdot^1 part has
k~ = floor((d+2)/4) elements and the L^2 part k = floor(d/4).
"""

import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy
from scipy.integrate import simpson
from scipy.linalg import null_space

from app.cauchy.cauchy_algebra import (
    CoefficientFamily,
    basis_counts,
    cauchy_inverse,
    coefficients,
    h1_gram_cauchy,
    l2_gram_cauchy,
)
from app.config import Config
from app.evolver.grid import RadialGrid, integrate, radial_derivative

logger = logging.getLogger(__name__)


def gram_l2(d: int, radius: float) -> numpy.ndarray:
    k, _ = basis_counts(d)
    idx = numpy.arange(1, k + 1)
    i, j = numpy.meshgrid(idx, idx, indexing="ij")
    return radius ** (2.0 * i + 2.0 * j - d) / (d - 2.0 * i - 2.0 * j)


def gram_h1(d: int, radius: float) -> numpy.ndarray:
    _, ktilde = basis_counts(d)
    idx = numpy.arange(1, ktilde + 1)
    i, j = numpy.meshgrid(idx, idx, indexing="ij")
    return (2.0 * i - d) * (2.0 * j - d) * radius ** (2.0 * i + 2.0 * j - d - 2) / (d + 2.0 - 2.0 * i - 2.0 * j)


@dataclass(frozen=True, eq=False)
class ProjectionBasis:
    dim: int
    radius: float
    k: int
    ktilde: int
    gram_l2: numpy.ndarray
    gram_h1: numpy.ndarray
    inv_l2: numpy.ndarray
    inv_h1: numpy.ndarray
    coeffs: CoefficientFamily
    lambda_operator: numpy.ndarray  # lambda = lambda_operator @ (int u_r r^{2i-2})
    mu_operator: numpy.ndarray  # mu = mu_operator @ (int u_t r^{2i-1})

    @property
    def h1_exponents(self) -> numpy.ndarray:
        return 2.0 * numpy.arange(1, self.ktilde + 1) - self.dim

    @property
    def l2_exponents(self) -> numpy.ndarray:
        return 2.0 * numpy.arange(1, self.k + 1) - self.dim


@dataclass(frozen=True, eq=False)
class ExteriorData:
    """
    Radial data (f, g) on a grid starting at R. ``tail_lambda``/``tail_mu`` describe the
    data beyond the last node exactly, as coefficients of r^{2i-d}; without them the data
    is taken to vanish there.
    """

    grid: RadialGrid
    f: numpy.ndarray
    g: numpy.ndarray
    dim: int
    f_r: Optional[numpy.ndarray] = None
    tail_lambda: Optional[numpy.ndarray] = None
    tail_mu: Optional[numpy.ndarray] = None
    time: float = 0.0

    def __post_init__(self):
        for name in ("f", "g", "f_r"):
            values = getattr(self, name)
            if values is None:
                continue
            values = numpy.asarray(values, dtype=float)
            object.__setattr__(self, name, values)
            if values.shape != (self.grid.npoints,):
                raise ValueError(f"Sample '{name}' has shape {values.shape}, grid has {self.grid.npoints} nodes")
            if not numpy.all(numpy.isfinite(values)):
                raise ValueError(f"Sample '{name}' contains non-finite values")
        k, ktilde = basis_counts(self.dim)
        for name, size in (("tail_lambda", ktilde), ("tail_mu", k)):
            values = getattr(self, name)
            if values is not None:
                values = numpy.asarray(values, dtype=float)
                if values.shape != (size,):
                    raise ValueError(f"Tail '{name}' must have {size} entries, got {values.shape}")
                object.__setattr__(self, name, values)

    @property
    def radius(self) -> float:
        return self.grid.r_min

    @property
    def derivative(self) -> numpy.ndarray:
        if self.f_r is not None:
            return self.f_r
        return radial_derivative(self.f, self.grid.dr)

    @property
    def has_tail(self) -> bool:
        return self.tail_lambda is not None or self.tail_mu is not None

    def tail_or_zero(self) -> Tuple[numpy.ndarray, numpy.ndarray]:
        k, ktilde = basis_counts(self.dim)
        lam = self.tail_lambda if self.tail_lambda is not None else numpy.zeros(ktilde)
        mu = self.tail_mu if self.tail_mu is not None else numpy.zeros(k)
        return lam, mu

    def restrict(self, radius: float, r_edge: Optional[float] = None) -> "ExteriorData":
        window = self.grid.window(radius, r_edge)
        sub = self.grid.restrict(radius, r_edge)
        cut_outer = window.stop < self.grid.npoints
        return ExteriorData(
            grid=sub,
            f=self.f[window],
            g=self.g[window],
            dim=self.dim,
            f_r=None if self.f_r is None else self.f_r[window],
            tail_lambda=None if cut_outer else self.tail_lambda,
            tail_mu=None if cut_outer else self.tail_mu,
            time=self.time,
        )


@dataclass(frozen=True, eq=False)
class ProjectionCoefficients:
    lam: numpy.ndarray
    mu: numpy.ndarray
    radius: float
    time: float = 0.0
    truncated: bool = False
    error_bound: float = 0.0


@dataclass(frozen=True)
class NormSplit:
    total_norm_sq: float
    proj_norm_sq: float
    perp_norm_sq: float
    flagged: bool = False


@dataclass(frozen=True)
class SeminormReport:
    pip_norm_sq: float
    pipp_norm_sq: float
    radii: Tuple[float, ...]
    flagged: bool = False


def build_basis(d: int, R: float) -> ProjectionBasis:
    """
    Gram matrices A(R), A~(R) and their explicit inverses for P(R) in dimension d.

    Raises:
        ValueError: for even d, d < 3 or R < 1.
    """
    k, ktilde = basis_counts(d)
    if not R >= 1.0:
        raise ValueError(f"Projection radius must satisfy R >= 1, got R={R}")
    fam = coefficients(d)

    inv_l2 = numpy.zeros((k, k))
    if k:
        exact = cauchy_inverse(l2_gram_cauchy(d))
        for i in range(1, k + 1):
            for j in range(1, k + 1):
                inv_l2[i - 1, j - 1] = float(exact[i - 1][j - 1]) * R ** (d - 2 * i - 2 * j)

    exact_h1 = cauchy_inverse(h1_gram_cauchy(d))
    inv_h1 = numpy.zeros((ktilde, ktilde))
    for i in range(1, ktilde + 1):
        for j in range(1, ktilde + 1):
            inv_h1[i - 1, j - 1] = (
                float(exact_h1[i - 1][j - 1]) * R ** (d + 2 - 2 * i - 2 * j) / ((d - 2 * i) * (d - 2 * j))
            )

    lambda_operator = numpy.zeros((ktilde, ktilde))
    for j in range(1, ktilde + 1):
        for i in range(1, ktilde + 1):
            lambda_operator[j - 1, i - 1] = (
                -(R ** (d + 2 - 2 * i - 2 * j))
                / ((d - 2 * j) * (d + 2 - 2 * i - 2 * j))
                * float(fam.dvec[i - 1] * fam.dvec[j - 1])
            )
    mu_operator = numpy.zeros((k, k))
    for j in range(1, k + 1):
        for i in range(1, k + 1):
            mu_operator[j - 1, i - 1] = R ** (d - 2 * i - 2 * j) / (d - 2 * i - 2 * j) * float(fam.c[i - 1] * fam.c[j - 1])

    basis = ProjectionBasis(
        dim=d,
        radius=float(R),
        k=k,
        ktilde=ktilde,
        gram_l2=gram_l2(d, R),
        gram_h1=gram_h1(d, R),
        inv_l2=inv_l2,
        inv_h1=inv_h1,
        coeffs=fam,
        lambda_operator=lambda_operator,
        mu_operator=mu_operator,
    )
    for name, gram, inverse in (("L2", basis.gram_l2, inv_l2), ("H1", basis.gram_h1, inv_h1)):
        if gram.size and numpy.abs(gram @ inverse - numpy.eye(len(gram))).max() > 1e-10:
            logger.warning(f"{name} Gram inverse residual above 1e-10 for d={d}, R={R}")
    logger.debug(f"Built projection basis d={d} R={R} (k={k}, ktilde={ktilde})")
    return basis


def _edge_check(integrand_edge: float, r_edge: float, total: float) -> Tuple[bool, float]:
    bound = abs(integrand_edge) * r_edge
    return bound > Config.Projection.tail_tolerance * abs(total), bound


def _moments(u: ExteriorData, basis: ProjectionBasis) -> Tuple[numpy.ndarray, numpy.ndarray, numpy.ndarray, numpy.ndarray, bool]:
    """
    Hdot^1 moments int u_r r^{2i-2} dr (i <= k~) and L^2 moments int u_t r^{2i-1} dr (i <= k),
    with their truncation error bounds.
    """
    d, r, dr = basis.dim, u.grid.r, u.grid.dr
    r_edge = u.grid.r_max
    f_r = u.derivative
    tail_lam, tail_mu = u.tail_or_zero()
    tail_fr_edge = float(numpy.sum(tail_lam * basis.h1_exponents * r_edge ** (basis.h1_exponents - 1)))
    tail_g_edge = float(numpy.sum(tail_mu * r_edge ** basis.l2_exponents))

    truncated = False
    h1 = numpy.zeros(basis.ktilde)
    h1_err = numpy.zeros(basis.ktilde)
    for i in range(1, basis.ktilde + 1):
        total = integrate(f_r * r ** (2 * i - 2), dr)
        for j in range(1, basis.ktilde + 1):
            total += tail_lam[j - 1] * (2 * j - d) * r_edge ** (2 * i + 2 * j - d - 2) / (d + 2 - 2 * i - 2 * j)
        flagged, bound = _edge_check((f_r[-1] - tail_fr_edge) * r_edge ** (2 * i - 2), r_edge, total)
        truncated |= flagged
        h1[i - 1], h1_err[i - 1] = total, bound

    l2 = numpy.zeros(basis.k)
    l2_err = numpy.zeros(basis.k)
    for i in range(1, basis.k + 1):
        total = integrate(u.g * r ** (2 * i - 1), dr)
        for j in range(1, basis.k + 1):
            total += tail_mu[j - 1] * r_edge ** (2 * i + 2 * j - d) / (d - 2 * i - 2 * j)
        flagged, bound = _edge_check((u.g[-1] - tail_g_edge) * r_edge ** (2 * i - 1), r_edge, total)
        truncated |= flagged
        l2[i - 1], l2_err[i - 1] = total, bound

    return h1, l2, h1_err, l2_err, truncated


def _check_compatible(u: ExteriorData, basis: ProjectionBasis):
    if u.dim != basis.dim:
        raise ValueError(f"Data dimension {u.dim} does not match basis dimension {basis.dim}")
    if abs(u.radius - basis.radius) > 1e-9 * max(1.0, basis.radius):
        raise ValueError(f"Data starts at r={u.radius}, basis radius is R={basis.radius}")


def project_coefficients(u: ExteriorData, basis: ProjectionBasis) -> ProjectionCoefficients:
    """
    lambda_j, mu_j of the orthogonal projection of u onto P(R), from the explicit formulas.

    A truncated tail (integrand not negligible at the last node) is flagged on the result,
    which still carries the coefficients together with an error bound.
    """
    _check_compatible(u, basis)
    h1, l2, h1_err, l2_err, truncated = _moments(u, basis)
    lam = basis.lambda_operator @ h1
    mu = basis.mu_operator @ l2 if basis.k else numpy.zeros(0)
    error_bound = 0.0
    if basis.ktilde:
        error_bound = max(error_bound, float(numpy.max(numpy.abs(basis.lambda_operator) @ h1_err)))
    if basis.k:
        error_bound = max(error_bound, float(numpy.max(numpy.abs(basis.mu_operator) @ l2_err)))
    if truncated:
        logger.warning(
            f"Moment integrals truncated at r={u.grid.r_max} (d={basis.dim}, R={basis.radius}, t={u.time}); "
            f"coefficient error bound {error_bound:.3e}"
        )
    return ProjectionCoefficients(
        lam=lam, mu=mu, radius=basis.radius, time=u.time, truncated=truncated, error_bound=error_bound
    )


def apply_projection(
    u: ExteriorData, coeffs: ProjectionCoefficients, basis: ProjectionBasis
) -> Tuple[ExteriorData, ExteriorData]:
    _check_compatible(u, basis)
    r = u.grid.r
    powers_h1 = r[:, None] ** basis.h1_exponents[None, :]
    pi_f = powers_h1 @ coeffs.lam
    pi_fr = (powers_h1 / r[:, None] * basis.h1_exponents[None, :]) @ coeffs.lam
    pi_g = (r[:, None] ** basis.l2_exponents[None, :]) @ coeffs.mu if basis.k else numpy.zeros_like(r)

    projected = ExteriorData(
        grid=u.grid, f=pi_f, g=pi_g, dim=u.dim, f_r=pi_fr, tail_lambda=coeffs.lam, tail_mu=coeffs.mu, time=u.time
    )
    tail_lam, tail_mu = u.tail_or_zero()
    complement = ExteriorData(
        grid=u.grid,
        f=u.f - pi_f,
        g=u.g - pi_g,
        dim=u.dim,
        f_r=u.derivative - pi_fr,
        tail_lambda=tail_lam - coeffs.lam,
        tail_mu=tail_mu - coeffs.mu,
        time=u.time,
    )
    return projected, complement


def inner(u: ExteriorData, v: ExteriorData) -> float:
    """<u, v> in Hdot^1 x L^2(r >= R, r^{d-1} dr), quadrature plus exact tails."""
    if u.grid != v.grid or u.dim != v.dim:
        raise ValueError("Inner product needs data on the same grid and dimension")
    d, r = u.dim, u.grid.r
    weight = r ** (d - 1)
    value = integrate((u.derivative * v.derivative + u.g * v.g) * weight, u.grid.dr)
    if u.has_tail and v.has_tail:
        r_edge = u.grid.r_max
        lam_u, mu_u = u.tail_or_zero()
        lam_v, mu_v = v.tail_or_zero()
        value += float(lam_u @ gram_h1(d, r_edge) @ lam_v)
        if mu_u.size:
            value += float(mu_u @ gram_l2(d, r_edge) @ mu_v)
    return value


def norm_via_identity(u: ExteriorData, basis: ProjectionBasis) -> NormSplit:
    """
    ||pi_R u||^2 = U B U^t from the moment vectors and explicit inverses, and
    ||pi_R^perp u||^2 = <u, u> - ||pi_R u||^2.
    """
    _check_compatible(u, basis)
    h1, l2, _, _, _ = _moments(u, basis)
    weighted_h1 = basis.h1_exponents * h1  # <f, r^{2i-d}>_{Hdot^1} = (2i-d) int f_r r^{2i-2}
    proj = float(weighted_h1 @ basis.inv_h1 @ weighted_h1)
    if basis.k:
        proj += float(l2 @ basis.inv_l2 @ l2)
    total = inner(u, u)
    perp = total - proj
    flagged = perp < -Config.Projection.negative_tolerance * max(total, 1.0)
    if flagged:
        logger.warning(f"Negative perp norm {perp:.3e} for d={basis.dim}, R={basis.radius}: quadrature failure")
    return NormSplit(total_norm_sq=total, proj_norm_sq=proj, perp_norm_sq=perp, flagged=flagged)


def _track_arrays(track: Sequence[ProjectionCoefficients]) -> Tuple[numpy.ndarray, numpy.ndarray, numpy.ndarray]:
    ordered = sorted(track, key=lambda c: c.radius)
    radii = numpy.array([c.radius for c in ordered])
    lam = numpy.array([c.lam for c in ordered]).reshape(len(ordered), -1)
    mu = numpy.array([c.mu for c in ordered]).reshape(len(ordered), -1)
    return radii, lam, mu


def _pipp_integral(radii: numpy.ndarray, lam: numpy.ndarray, mu: numpy.ndarray, d: int) -> float:
    integrand = numpy.zeros_like(radii)
    for i in range(1, lam.shape[1] + 1):
        integrand += (numpy.gradient(lam[:, i - 1], radii) * radii ** (2 * i - (d + 1) / 2.0)) ** 2
    for i in range(1, mu.shape[1] + 1):
        integrand += (numpy.gradient(mu[:, i - 1], radii) * radii ** (2 * i - (d - 1) / 2.0)) ** 2
    return float(simpson(integrand, x=radii))


def coefficient_seminorms(track: Sequence[ProjectionCoefficients], d: int) -> SeminormReport:
    """
    Coefficient-side quantities equivalent to ||pi_R u||^2 (at the first radius) and
    ||pi_R^perp u||^2 (integral over the sampled radii).
    """
    if len(track) < 3:
        raise ValueError(f"Seminorms need at least 3 radii, got {len(track)}")
    radii, lam, mu = _track_arrays(track)
    r0 = radii[0]
    pip = 0.0
    for i in range(1, lam.shape[1] + 1):
        pip += (lam[0, i - 1] * r0 ** (2 * i - (d + 2) / 2.0)) ** 2
    for i in range(1, mu.shape[1] + 1):
        pip += (mu[0, i - 1] * r0 ** (2 * i - d / 2.0)) ** 2

    pipp = _pipp_integral(radii, lam, mu, d)
    flagged = len(radii) < Config.Projection.min_track_points
    if not flagged and len(radii) >= 2 * Config.Projection.min_track_points - 1:
        coarse = _pipp_integral(radii[::2], lam[::2], mu[::2], d)
        flagged = abs(coarse - pipp) > 0.05 * max(abs(pipp), 1e-300)
    if flagged:
        logger.warning(f"R-grid with {len(radii)} radii too coarse for stable differencing of the coefficients")
    return SeminormReport(pip_norm_sq=pip, pipp_norm_sq=pipp, radii=tuple(radii.tolist()), flagged=flagged)


def channel_derivative(track: Sequence[ProjectionCoefficients], d: int) -> numpy.ndarray:
    """
    Closed form of d/dR ||pi_R^perp u||^2 in terms of d/dR lambda_i and d/dR mu_i, per sampled radius.
    """
    radii, lam, mu = _track_arrays(track)
    first = numpy.zeros_like(radii)
    for i in range(1, lam.shape[1] + 1):
        first += numpy.gradient(lam[:, i - 1], radii) * radii ** (2.0 * i - d)
    second = numpy.zeros_like(radii)
    for i in range(1, mu.shape[1] + 1):
        second += numpy.gradient(mu[:, i - 1], radii) * radii ** (2.0 * i - d + 1) / (d - 2.0 - 2.0 * i)
    return -(first**2) * radii ** (d - 1) - (second**2) * radii ** (d - 1)


def lambda_by_parts(u: ExteriorData, basis: ProjectionBasis) -> numpy.ndarray:
    """
    lambda_j after integrating by parts: only u(R) and int_R^inf u r^{2i-1} dr (i < k~) enter.
    """
    _check_compatible(u, basis)
    d, R, r = basis.dim, basis.radius, u.grid.r
    r_edge = u.grid.r_max
    tail_lam, _ = u.tail_or_zero()
    dvec = [float(v) for v in basis.coeffs.dvec]

    moments = numpy.zeros(max(basis.ktilde - 1, 0))
    for i in range(1, basis.ktilde):
        total = integrate(u.f * r ** (2 * i - 1), u.grid.dr)
        for j in range(1, basis.ktilde + 1):
            total += tail_lam[j - 1] * r_edge ** (2 * i + 2 * j - d) / (d - 2 * i - 2 * j)
        moments[i - 1] = total

    lam = numpy.zeros(basis.ktilde)
    for j in range(1, basis.ktilde + 1):
        acc = u.f[0] * R ** (d - 2 * j)
        for i in range(1, basis.ktilde):
            acc += 2 * i * dvec[i] * R ** (d - 2 * i - 2 * j) / (d - 2 * i - 2 * j) * moments[i - 1]
        lam[j - 1] = dvec[j - 1] / (d - 2 * j) * acc
    return lam


def reconstruction_residuals(
    u: ExteriorData, coeffs: ProjectionCoefficients, basis: ProjectionBasis
) -> Tuple[float, float]:
    """Relative residuals of the moment identities rebuilt from lambda (Hdot^1) and mu (L^2)."""
    _check_compatible(u, basis)
    d, R = basis.dim, basis.radius
    h1, l2, _, _, _ = _moments(u, basis)

    predicted_h1 = numpy.zeros(basis.ktilde)
    for i in range(1, basis.ktilde + 1):
        for j in range(1, basis.ktilde + 1):
            predicted_h1[i - 1] -= R ** (2 * i + 2 * j - d - 2) * (d - 2 * j) / (d + 2 - 2 * i - 2 * j) * coeffs.lam[j - 1]
    predicted_l2 = numpy.zeros(basis.k)
    for i in range(1, basis.k + 1):
        for j in range(1, basis.k + 1):
            predicted_l2[i - 1] += R ** (2 * i + 2 * j - d) / (d - 2 * i - 2 * j) * coeffs.mu[j - 1]

    def relative(actual: numpy.ndarray, predicted: numpy.ndarray) -> float:
        if actual.size == 0:
            return 0.0
        scale = float(numpy.max(numpy.abs(actual)))
        diff = float(numpy.max(numpy.abs(actual - predicted)))
        return diff / scale if scale > 0 else diff

    return relative(h1, predicted_h1), relative(l2, predicted_l2)


def algebra_fact_ratios(d: int, n_samples: int, rng: numpy.random.Generator) -> Tuple[List[float], List[float]]:
    """
    Samples vectors a (length k~) and b (length k) obeying the equal-row-sum constraints
    and returns (sum a)^2 / sum a^2 and (sum b_j/(d-2-2j))^2 / sum b^2 for each sample.
    """
    k, ktilde = basis_counts(d)

    def constrained(size: int, weight) -> numpy.ndarray:
        rows = []
        for m in range(2, size + 1):
            rows.append([weight(1, j) - weight(m, j) for j in range(1, size + 1)])
        if not rows:
            return numpy.eye(size)
        return null_space(numpy.array(rows, dtype=float))

    a_space = constrained(ktilde, lambda m, j: (d - 2.0 * j) / (d + 2.0 - 2.0 * m - 2.0 * j))
    a_ratios: List[float] = []
    b_ratios: List[float] = []
    if a_space.size:
        for _ in range(n_samples):
            a = a_space @ rng.normal(size=a_space.shape[1]) * rng.uniform(0.1, 10.0)
            a_ratios.append(float(numpy.sum(a) ** 2 / numpy.sum(a**2)))
    if k:
        b_space = constrained(k, lambda m, j: 1.0 / (d - 2.0 * m - 2.0 * j))
        weights = numpy.array([1.0 / (d - 2.0 - 2.0 * j) for j in range(1, k + 1)])
        for _ in range(n_samples):
            b = b_space @ rng.normal(size=b_space.shape[1]) * rng.uniform(0.1, 10.0)
            b_ratios.append(float((weights @ b) ** 2 / numpy.sum(b**2)))
    return a_ratios, b_ratios
