import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import numpy
import pandas

from app.config import Config
from app.evolver.state import Form, WaveState
from app.evolver.waveEvolver import EvolutionResult, PsiModel, UModel, convert_psi_u, local_norm_sq
from app.harmonic.harmonicMap import HarmonicMapProfile
from app.projection.projector import (
    ExteriorData,
    ProjectionBasis,
    ProjectionCoefficients,
    build_basis,
    project_coefficients,
    reconstruction_residuals,
)

logger = logging.getLogger(__name__)

RESIDUAL_WARNING = 1e-6


def scattering_metrics(result: EvolutionResult, profile: HarmonicMapProfile, R: float) -> pandas.DataFrame:
    """
    Per snapshot: the deviation norm on the core 1 <= r <= R, the u-form exterior norm on
    r >= R + |t|, and the split of the deviation energy between core, annulus
    R <= r <= R + |t| and the region beyond.
    """
    if not result.snapshots:
        raise ValueError("Scattering metrics need snapshots; run with probes.snapshots enabled")
    grid = result.snapshots[0].grid
    psi_model = PsiModel.from_profile(profile, grid, balanced=False)
    u_model = UModel(ell=profile.ell, grid=grid)
    edge = grid.r_max - Config.Evolution.causal_margin_cells * grid.dr

    rows = []
    for snapshot in result.snapshots:
        psi_state = convert_psi_u(snapshot, profile, Form.PSI)
        u_state = convert_psi_u(snapshot, profile, Form.U)
        outer_start = min(R + abs(snapshot.time), edge)
        core = local_norm_sq(psi_state, psi_model, grid.r_min, R)
        annulus = local_norm_sq(psi_state, psi_model, R, outer_start)
        outer = local_norm_sq(psi_state, psi_model, outer_start, edge)
        total = core + annulus + outer
        rows.append(
            {
                "time": snapshot.time,
                "core_norm": float(numpy.sqrt(core)),
                "exterior_norm": float(numpy.sqrt(local_norm_sq(u_state, u_model, outer_start, edge))),
                "core_fraction": core / total if total > 0 else 0.0,
                "annulus_fraction": annulus / total if total > 0 else 0.0,
                "outer_fraction": outer / total if total > 0 else 0.0,
            }
        )
    frame = pandas.DataFrame(rows)
    logger.info(f"Core norm for l={profile.ell}, n={profile.n} went {frame.core_norm.iloc[0]:.4e} -> {frame.core_norm.iloc[-1]:.4e}")
    return frame


def core_decay(metrics: pandas.DataFrame) -> float:
    """Final over initial core norm; 0 for a solution starting at Q."""
    start = float(metrics.core_norm.iloc[0])
    return float(metrics.core_norm.iloc[-1]) / start if start > 0 else 0.0


@dataclass
class CoefficientTracks:
    dim: int
    frame: pandas.DataFrame  # time, R, family, index, value, truncated, residual_h1, residual_l2
    coefficients: Dict[float, List[ProjectionCoefficients]]

    def normalized_lambda_sup(self, r_min: float = 10.0, index: int = 1) -> pandas.Series:
        """sup over R >= r_min of |lambda_index(t, R)| R^{2 index - (d+2)/2}, per time."""
        rows = self.frame[(self.frame.family == "lambda") & (self.frame["index"] == index) & (self.frame.R >= r_min)]
        scaled = rows.value.abs() * rows.R ** (2 * index - (self.dim + 2) / 2.0)
        return scaled.groupby(rows.time).max().rename("normalized_lambda")

    def at(self, time: float) -> List[ProjectionCoefficients]:
        key = min(self.coefficients, key=lambda t: abs(t - time))
        return self.coefficients[key]


def track_projection_coefficients(snapshots: Sequence[WaveState], radii: Sequence[float],
                                  profile: Optional[HarmonicMapProfile] = None) -> CoefficientTracks:
    """
    lambda_i(t, R), mu_i(t, R) of the u-form radiation u(t) = (psi - Q)/r^l for every
    snapshot and radius. psi-form snapshots need the profile to convert.
    """
    if not snapshots:
        raise ValueError("No snapshots to track")
    bases: Dict[float, ProjectionBasis] = {}
    rows = []
    tracks: Dict[float, List[ProjectionCoefficients]] = {}
    dim = snapshots[0].dim
    for snapshot in snapshots:
        if snapshot.form == Form.PSI:
            if profile is None:
                raise ValueError("psi-form snapshots need the harmonic map profile")
            snapshot = convert_psi_u(snapshot, profile, Form.U)
        grid = snapshot.grid
        current = []
        for R in radii:
            # the data starts at the first node >= R, so the basis is built there
            exterior = grid.restrict(R)
            if exterior.r_min not in bases:
                bases[exterior.r_min] = build_basis(dim, exterior.r_min)
            basis = bases[exterior.r_min]
            window = grid.window(R)
            data = ExteriorData(
                grid=exterior,
                f=snapshot.field[window],
                g=snapshot.velocity[window],
                dim=dim,
                time=snapshot.time,
            )
            coeffs = project_coefficients(data, basis)
            residual_h1, residual_l2 = reconstruction_residuals(data, coeffs, basis)
            if max(residual_h1, residual_l2) > RESIDUAL_WARNING and not coeffs.truncated:
                logger.warning(f"Moment reconstruction residual {max(residual_h1, residual_l2):.2e} at t={snapshot.time}, R={R}")
            current.append(coeffs)
            for family, values in (("lambda", coeffs.lam), ("mu", coeffs.mu)):
                for index, value in enumerate(values, start=1):
                    rows.append((snapshot.time, R, family, index, float(value), coeffs.truncated, residual_h1, residual_l2))
        tracks[snapshot.time] = current
    frame = pandas.DataFrame(
        rows, columns=["time", "R", "family", "index", "value", "truncated", "residual_h1", "residual_l2"]
    )
    return CoefficientTracks(dim=dim, frame=frame, coefficients=tracks)


def degree_in_cone(snapshot: WaveState, profile: HarmonicMapProfile) -> Optional[int]:
    """
    round(psi / pi) at the outermost node the pinned edge cannot have reached by time t,
    r = r_max - |t| - margin. None once that reach covers the whole grid.
    """
    psi = convert_psi_u(snapshot, profile, Form.PSI)
    grid = psi.grid
    radius = grid.r_max - abs(psi.time) - Config.Evolution.causal_margin_cells * grid.dr
    if radius <= grid.r_min:
        return None
    index = grid.index_at(radius)
    if grid.r[index] > radius:
        index -= 1
    return int(round(psi.field[index] / numpy.pi))
