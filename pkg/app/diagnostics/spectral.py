"""
Positivity check for H = -Delta_d + V on r > 1 with Dirichlet data at r = 1.

The operator is discretised exactly as the u-form evolver does: the stiffness matrix K
comes from the flux weights and the mass matrix M = diag(cell * r^{d-1}), so
f^T K f is the discrete Hdot^1 norm and f^T M V f the potential term.
"""

import logging
from typing import Optional, Tuple

import numpy
from scipy.sparse import diags
from scipy.sparse.linalg import splu

from app.diagnostics.reports import SpectralCheck
from app.evolver.grid import RadialGrid
from app.evolver.waveEvolver import UModel, bump
from app.harmonic.harmonicMap import HarmonicMapProfile

logger = logging.getLogger(__name__)


def discrete_operator(model: UModel) -> Tuple[numpy.ndarray, numpy.ndarray, numpy.ndarray]:
    """(K diagonal, K off-diagonal, M diagonal) on the interior nodes."""
    dr = model.grid.dr
    flux = model.flux_weight / dr
    k_diag = flux[:-1] + flux[1:]
    k_off = -flux[1:-1]
    mass = (model.cell_weight * model.node_weight)[1:-1]
    return k_diag, k_off, mass


def negative_count(diagonal: numpy.ndarray, off: numpy.ndarray) -> int:
    """Number of negative eigenvalues of a symmetric tridiagonal matrix (Sylvester inertia of LDL^T)."""
    count = 0
    pivot = diagonal[0]
    if pivot < 0:
        count += 1
    for i in range(1, len(diagonal)):
        if pivot == 0.0:
            pivot = numpy.finfo(float).tiny
        pivot = diagonal[i] - off[i - 1] ** 2 / pivot
        if pivot < 0:
            count += 1
    return count


def inverse_iteration(k_diag, k_off, mass, potential, shift: float, rng: numpy.random.Generator,
                      tol: float = 1e-12, max_iter: int = 2000) -> Tuple[float, numpy.ndarray, int, bool]:
    """Smallest generalised eigenpair of (K + M V) f = lambda M f nearest to ``shift``."""
    a_diag = k_diag + mass * potential
    operator = diags([k_off, a_diag, k_off], [-1, 0, 1], format="csc")
    lu = splu(diags([k_off, a_diag - shift * mass, k_off], [-1, 0, 1], format="csc"))
    x = rng.normal(size=len(mass))
    x /= numpy.sqrt(x @ (mass * x))
    value = float(x @ (operator @ x))
    for iteration in range(1, max_iter + 1):
        y = lu.solve(mass * x)
        x = y / numpy.sqrt(y @ (mass * y))
        previous, value = value, float(x @ (operator @ x))
        if abs(value - previous) <= tol * max(1.0, abs(value)):
            return value, x, iteration, True
    logger.warning(f"Inverse iteration did not converge in {max_iter} iterations (last value {value:.6e})")
    return value, x, max_iter, False


def rayleigh_quotients(model: UModel, n_probes: int, rng: numpy.random.Generator) -> numpy.ndarray:
    """<Hf, f> / ||f||^2_{Hdot^1} on random bumps supported in (1, r_max)."""
    k_diag, k_off, mass = discrete_operator(model)
    potential = model.V[1:-1]
    r = model.grid.r[1:-1]
    span = model.grid.r_max - model.grid.r_min
    ratios = numpy.empty(n_probes)
    for p in range(n_probes):
        width = rng.uniform(0.02, 0.25) * span
        center = rng.uniform(model.grid.r_min + width, model.grid.r_max - width)
        f = bump(r, 1.0, center, width)
        kf = k_diag * f
        kf[1:] += k_off * f[:-1]
        kf[:-1] += k_off * f[1:]
        stiffness = float(f @ kf)
        ratios[p] = (stiffness + float(f @ (mass * potential * f))) / stiffness
    return ratios


def spectral_check(profile: Optional[HarmonicMapProfile], grid: RadialGrid, ell: Optional[int] = None,
                   n_probes: int = 100, seed: int = 0) -> SpectralCheck:
    """
    Smallest Dirichlet eigenvalue of H for the harmonic map ``profile`` (V = 0 when it is
    None) together with the Rayleigh-quotient range c1 <= <Hf,f>/||f||^2 <= c2 on random probes.
    """
    if profile is None:
        if ell is None:
            raise ValueError("The free operator needs l")
        model = UModel(ell=ell, grid=grid, potential=False, nonlinear=False)
        degree = 0
    else:
        model = UModel.from_profile(profile, grid, potential=True, nonlinear=False)
        degree = profile.n
    rng = numpy.random.default_rng(seed)
    k_diag, k_off, mass = discrete_operator(model)
    potential = model.V[1:-1]

    negatives = negative_count(k_diag + mass * potential, k_off)
    shift = 0.0 if negatives == 0 else float(potential.min()) - 1.0
    value, _, iterations, converged = inverse_iteration(k_diag, k_off, mass, potential, shift, rng)
    if negatives:
        logger.warning(f"H has {negatives} negative eigenvalue(s) for l={model.ell}, n={degree}; smallest {value:.6e}")

    ratios = rayleigh_quotients(model, n_probes, rng)
    logger.info(f"Spectral check l={model.ell} n={degree}: lambda_min={value:.6e}, Rayleigh range [{ratios.min():.4f}, {ratios.max():.4f}]")
    return SpectralCheck(
        dim=model.dim,
        ell=model.ell,
        n=degree,
        npoints=grid.npoints,
        r_max=grid.r_max,
        smallest_eigenvalue=value,
        converged=converged,
        iterations=iterations,
        negative_count=negatives,
        rayleigh_min=float(ratios.min()),
        rayleigh_max=float(ratios.max()),
        probes=n_probes,
    )
