import logging
from typing import Optional, Union

import numpy

from app.cauchy.cauchy_algebra import basis_counts
from app.config import Config, ProbeConfig
from app.diagnostics.free_waves import BumpSeed, ExactFreeWave, SeedPair, free_wave_exact
from app.diagnostics.reports import ChannelReport, OracleComparison
from app.evolver.grid import RadialGrid, integrate, radial_derivative
from app.evolver.state import Form, WaveState
from app.evolver.waveEvolver import UModel, evolve
from app.projection.projector import ExteriorData, build_basis, norm_via_identity

logger = logging.getLogger(__name__)

DATA_KINDS = ("power", "bump-f", "bump-g", "random")


def power_data(d: int, lam=None, mu=None) -> ExactFreeWave:
    """Data inside P(R); (r^{2-d}, 0) unless coefficients are given."""
    k, ktilde = basis_counts(d)
    if lam is None and mu is None:
        lam = numpy.zeros(ktilde)
        lam[0] = 1.0
    return ExactFreeWave(
        dim=d,
        lam=numpy.zeros(ktilde) if lam is None else numpy.asarray(lam, dtype=float),
        mu=numpy.zeros(k) if mu is None else numpy.asarray(mu, dtype=float),
    )


def bump_data(d: int, R: float, component: str, amplitude: float = 1.0, width: float = 1.0,
              center: Optional[float] = None) -> ExactFreeWave:
    """(f, 0) or (0, g) generated by a bump seed supported in r >= R."""
    center = R + width if center is None else center
    if center - width < R:
        raise ValueError(f"Seed support [{center - width}, {center + width}] reaches below R={R}")
    seed = BumpSeed(amplitude, center, width)
    if component == "f":
        return ExactFreeWave(dim=d, seeds=(SeedPair.position(seed),))
    if component == "g":
        return ExactFreeWave(dim=d, seeds=(SeedPair.velocity(seed),))
    raise ValueError(f"Bump component must be 'f' or 'g', got {component!r}")


def random_data(d: int, R: float, rng: numpy.random.Generator) -> ExactFreeWave:
    """Position and velocity seeds in r >= R plus a random P(R) component."""
    seeds = []
    for builder in (SeedPair.position, SeedPair.velocity):
        for _ in range(int(rng.integers(1, 3))):
            width = float(rng.uniform(0.5, 2.0))
            center = R + width + float(rng.uniform(0.0, 3.0))
            seeds.append(builder(BumpSeed(float(rng.normal()), center, width)))
    k, ktilde = basis_counts(d)
    lam = rng.normal(size=ktilde) * R ** (d / 2.0 - 1.0) * float(rng.uniform(0.0, 1.0))
    mu = rng.normal(size=k) * R ** (d / 2.0 - 2.0) * float(rng.uniform(0.0, 1.0))
    return ExactFreeWave(dim=d, seeds=tuple(seeds), lam=lam, mu=mu)


def make_channel_data(kind: str, d: int, R: float, rng: numpy.random.Generator) -> ExactFreeWave:
    if kind == "power":
        return power_data(d)
    if kind == "bump-f":
        return bump_data(d, R, "f")
    if kind == "bump-g":
        return bump_data(d, R, "g")
    if kind == "random":
        return random_data(d, R, rng)
    raise ValueError(f"Unknown channel data kind {kind!r}, expected one of {DATA_KINDS}")


def exterior_data(wave: ExactFreeWave, R: float, npoints: int = 8001, t: float = 0.0) -> ExteriorData:
    """Samples of (u, u_t) on R <= r <= edge with exact derivative and the P(R) tail beyond."""
    edge = max(wave.support_edge + abs(t), R + 1.0)
    grid = RadialGrid(r_max=edge, npoints=npoints, r_min=R)
    u, u_t, u_r = wave.derivatives(t, grid.r)
    return ExteriorData(grid=grid, f=u, g=u_t, dim=wave.dim, f_r=u_r, tail_lambda=wave.lam, tail_mu=wave.mu, time=t)


def _slope_flagged(series, step: float, initial: float) -> bool:
    slope = (series[-1] - series[-2]) / step if len(series) > 1 else 0.0
    return abs(slope) > Config.Channels.plateau_slope * max(initial, 1e-300)


def channel_experiment(d: int, R: float, data: Union[ExactFreeWave, ExteriorData], T: float,
                       n_times: int = 41) -> ChannelReport:
    """
    Exterior energies int_{r >= R+|t|} |grad_{t,x} u|^2 r^{d-1} dr for t in [0, T] and
    [-T, 0], their limits as t -> +-inf, and the ratio of the larger limit against
    ||pi_R^perp (f, g)||^2.

    Exact-oracle data is evaluated in closed form and its limits come from the
    radiation profiles; the series on [0, T] is flagged when it is still further than
    ``Config.Channels.plateau_gap`` from them. Sampled ExteriorData on a grid from r = 1
    is evolved by the free u-form flow and the values at |t| = T stand in for the limits.
    """
    if T <= 0:
        raise ValueError(f"Channel experiment needs T > 0, got {T}")
    times = numpy.linspace(0.0, T, n_times)
    if isinstance(data, ExactFreeWave):
        if data.dim != d:
            raise ValueError(f"Data lives in d={data.dim}, experiment in d={d}")
        plus = [data.exterior_energy(t, R) for t in times]
        minus = [data.exterior_energy(-t, R) for t in times]
        limit_plus, limit_minus = data.radiation_limit(1, R), data.radiation_limit(-1, R)
        split = norm_via_identity(exterior_data(data, R), build_basis(d, R))
        scale = Config.Channels.plateau_gap * max(plus[0], 1e-300)
        flagged = abs(plus[-1] - limit_plus) > scale or abs(minus[-1] - limit_minus) > scale
        oracle = "exact"
    else:
        times, plus, minus = _numeric_exterior(d, R, data, T, n_times)
        limit_plus, limit_minus = plus[-1], minus[-1]
        exterior = data.restrict(R)
        split = norm_via_identity(exterior, build_basis(d, exterior.radius))
        step = times[1] - times[0] if len(times) > 1 else T
        flagged = _slope_flagged(plus, step, plus[0]) or _slope_flagged(minus, step, plus[0])
        oracle = "numeric"
    if flagged:
        logger.warning(f"Exterior energy at |t|={T} is still away from its limit for d={d}, R={R}")

    limit = max(limit_plus, limit_minus)
    ratio = None
    if split.perp_norm_sq > 1e-10 * max(split.total_norm_sq, 1e-300):
        ratio = limit / split.perp_norm_sq
    logger.info(f"Channel d={d} R={R}: limits (+{limit_plus:.6e}, -{limit_minus:.6e}), perp {split.perp_norm_sq:.6e}, ratio {ratio}")
    return ChannelReport(
        dim=d,
        R=R,
        times=[float(t) for t in times],
        exterior_plus=[float(v) for v in plus],
        exterior_minus=[float(v) for v in minus],
        initial_exterior=float(plus[0]),
        limit_plus=float(limit_plus),
        limit_minus=float(limit_minus),
        perp_norm_sq=split.perp_norm_sq,
        proj_norm_sq=split.proj_norm_sq,
        ratio=ratio,
        plateau_flagged=flagged,
        oracle=oracle,
    )


def _numeric_exterior(d: int, R: float, data: ExteriorData, T: float, n_times: int):
    if data.dim != d:
        raise ValueError(f"Data lives in d={data.dim}, experiment in d={d}")
    if abs(data.grid.r_min - 1.0) > 1e-12:
        raise ValueError("Numeric channel experiments need data on a grid starting at r = 1")
    grid = data.grid
    nonzero = numpy.flatnonzero(numpy.abs(data.f) + numpy.abs(data.g))
    support_edge = grid.r[nonzero[-1]] if nonzero.size else grid.r_min
    # reflections off the pinned outer node must not re-enter r >= R + |t| before T
    if 2.0 * grid.r_max - support_edge - R < 2.0 * T + Config.Evolution.causal_margin_cells * grid.dr:
        raise ValueError(f"Grid with r_max={grid.r_max} is too short for T={T} with data up to r={support_edge}")
    model = UModel.free(d, grid)
    state = WaveState(Form.U, grid, data.f, data.g, 0.0, ell=model.ell)
    probes = ProbeConfig(radii=(R,), cadence=T / max(n_times - 1, 1), snapshots=False)
    series = []
    for direction in (1.0, -1.0):
        result = evolve(state, direction * T, model, probes)
        series.append([entry.local[float(R)][1] for entry in result.ledger.entries])
    times = [abs(entry.time) for entry in result.ledger.entries]
    return times, series[0], series[1]


def compare_with_oracle(d: int, seed: SeedPair, T: float, dr: float) -> OracleComparison:
    """
    Relative energy-norm error of the free u-form flow against the exact descent wave at
    time T, on r >= 1 + T where the Dirichlet node at r = 1 has no influence.
    """
    lo, hi = seed.support
    if lo <= 1.0:
        raise ValueError(f"Seed support must lie in r > 1, got [{lo}, {hi}]")
    margin = Config.Evolution.causal_margin_cells
    grid = RadialGrid.from_spacing(hi + 2 * T + 2.0 + margin * dr, dr)
    initial = free_wave_exact(d, seed, 0.0, grid.r)
    u0, v0 = initial.u.copy(), initial.u_t.copy()
    u0[0] = 0.0
    model = UModel.free(d, grid)
    state = WaveState(Form.U, grid, u0, v0, 0.0, ell=model.ell)
    result = evolve(state, T, model, ProbeConfig(radii=(1.0,), cadence=T, snapshots=False))

    exact = free_wave_exact(d, seed, T, grid.r)
    window = grid.window(1.0 + T, grid.r_max - T)
    r = grid.r[window]
    weight = r ** (d - 1)
    numeric_r = radial_derivative(result.state.field, grid.dr)[window]
    error = integrate(((result.state.velocity[window] - exact.u_t[window]) ** 2 + (numeric_r - exact.u_r[window]) ** 2) * weight, dr)
    scale = integrate((exact.u_t[window] ** 2 + exact.u_r[window] ** 2) * weight, dr)
    residual = numpy.abs(exact.residual(d, grid.r)).max() / max(numpy.abs(exact.u_tt).max(), 1e-300)
    relative = float(numpy.sqrt(error / scale)) if scale > 0 else 0.0
    logger.info(f"Free-wave comparison d={d}, T={T}, dr={dr}: relative energy error {relative:.3e}")
    return OracleComparison(dim=d, T=T, dr=dr, relative_error=relative, residual=float(residual))
