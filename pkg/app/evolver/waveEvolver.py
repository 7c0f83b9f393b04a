"""
Method-of-lines evolution of the exterior equivariant wave map.

psi-form:  psi_tt = psi_rr + (2/r) psi_r - l(l+1) sin(2 psi) / (2 r^2)
u-form:    u_tt = u_rr + ((d-1)/r) u_r - V u + F(r, u) + G(r, u),  d = 2l+3

Space is discretised in flux form, (1/w)(w f_r)_r with w = r^{d-1} (d = 3 in psi-form),
which is second order and conserves a discrete energy exactly in the semi-discrete
flow. Both grid ends are Dirichlet; time stepping is classical RK4.
"""

import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import ClassVar, Dict, List, Optional, Sequence, Tuple

import numpy
import pandas

from app.config import Config, PerturbationConfig, ProbeConfig
from app.evolver.grid import RadialGrid, integrate, radial_derivative
from app.evolver.state import Form, WaveState
from app.harmonic.harmonicMap import HarmonicMapProfile, evaluate_Q, kappa

logger = logging.getLogger(__name__)

BUMP_POWER = 8


class EvolutionAborted(RuntimeError):
    def __init__(self, message: str, last_good: WaveState):
        super().__init__(message)
        self.last_good = last_good


def bump(r: numpy.ndarray, amplitude: float, center: float, width: float, power: int = BUMP_POWER) -> numpy.ndarray:
    """amplitude * (1 - ((r - center)/width)^2)^power on |r - center| < width, zero outside."""
    x = (numpy.asarray(r, dtype=float) - center) / width
    return numpy.where(numpy.abs(x) < 1.0, amplitude * (1.0 - x**2) ** power, 0.0)


@dataclass(frozen=True, eq=False)
class RadialModel:
    ell: int
    grid: RadialGrid

    form: ClassVar[Form]

    @property
    def weight_power(self) -> int:
        return 2

    @cached_property
    def r(self) -> numpy.ndarray:
        return self.grid.r

    @cached_property
    def node_weight(self) -> numpy.ndarray:
        return self.r**self.weight_power

    @cached_property
    def flux_weight(self) -> numpy.ndarray:
        return (0.5 * (self.r[1:] + self.r[:-1])) ** self.weight_power

    @cached_property
    def cell_weight(self) -> numpy.ndarray:
        c = numpy.full(self.grid.npoints, self.grid.dr)
        c[0] = c[-1] = 0.5 * self.grid.dr
        return c

    @property
    def reference(self) -> numpy.ndarray:
        return numpy.zeros(self.grid.npoints)

    def laplacian(self, f: numpy.ndarray) -> numpy.ndarray:
        dr = self.grid.dr
        flux = self.flux_weight * numpy.diff(f) / dr
        out = numpy.zeros_like(f)
        out[1:-1] = (flux[1:] - flux[:-1]) / (dr * self.node_weight[1:-1])
        return out

    def forcing(self, f: numpy.ndarray) -> numpy.ndarray:
        raise NotImplementedError

    def potential_density(self, f: numpy.ndarray) -> numpy.ndarray:
        """Weighted density P with dP/df = -w * forcing(f)."""
        raise NotImplementedError

    def acceleration(self, f: numpy.ndarray) -> numpy.ndarray:
        a = self.laplacian(f) + self.forcing(f)
        a[0] = a[-1] = 0.0
        return a

    def discrete_energy(self, f: numpy.ndarray, v: numpy.ndarray) -> float:
        dr = self.grid.dr
        kinetic = 0.5 * numpy.sum(self.cell_weight * self.node_weight * v**2)
        gradient = 0.5 * numpy.sum(self.flux_weight * numpy.diff(f) ** 2) / dr
        potential = numpy.sum(self.cell_weight * self.potential_density(f))
        return float(kinetic + gradient + potential)

    def check_state(self, state: WaveState):
        if state.form != self.form:
            raise ValueError(f"State is in {state.form.value}-form, model expects {self.form.value}-form")
        if state.grid != self.grid:
            raise ValueError("State and model live on different grids")
        if state.ell != self.ell:
            raise ValueError(f"State has l={state.ell}, model has l={self.ell}")


@dataclass(frozen=True, eq=False)
class PsiModel(RadialModel):
    """
    psi-form flow. ``background`` is subtracted from the acceleration; set to the discrete
    residual of Q it makes (Q, 0) an exact fixed point of the scheme.
    """

    background: Optional[numpy.ndarray] = None
    q: Optional[numpy.ndarray] = None

    form: ClassVar[Form] = Form.PSI

    @classmethod
    def from_profile(cls, profile: HarmonicMapProfile, grid: RadialGrid, balanced: bool = True) -> "PsiModel":
        q, _ = evaluate_Q(profile, grid.r)
        raw = cls(ell=profile.ell, grid=grid, q=q)
        if not balanced:
            return raw
        residual = raw.acceleration(q)
        return cls(ell=profile.ell, grid=grid, background=residual, q=q)

    @property
    def reference(self) -> numpy.ndarray:
        return self.q if self.q is not None else numpy.zeros(self.grid.npoints)

    def forcing(self, f):
        out = -kappa(self.ell) * numpy.sin(2.0 * f) / self.r**2
        if self.background is not None:
            out = out - self.background
        return out

    def potential_density(self, f):
        density = kappa(self.ell) * numpy.sin(f) ** 2
        if self.background is not None:
            density = density + self.background * f * self.node_weight
        return density


@dataclass(frozen=True, eq=False)
class UModel(RadialModel):
    """
    u-form flow about Q (Q = 0 when ``q`` is None). ``potential`` switches the V term and
    ``nonlinear`` the F + G terms; both off gives the free radial wave in d = 2l+3.
    """

    q: Optional[numpy.ndarray] = None
    potential: bool = True
    nonlinear: bool = True

    form: ClassVar[Form] = Form.U

    @classmethod
    def from_profile(cls, profile: HarmonicMapProfile, grid: RadialGrid, potential: bool = True,
                     nonlinear: bool = True) -> "UModel":
        q, _ = evaluate_Q(profile, grid.r)
        return cls(ell=profile.ell, grid=grid, q=q, potential=potential, nonlinear=nonlinear)

    @classmethod
    def free(cls, dim: int, grid: RadialGrid) -> "UModel":
        if dim < 3 or dim % 2 == 0:
            raise ValueError(f"Free radial waves need odd d >= 3, got d={dim}")
        return cls(ell=(dim - 3) // 2, grid=grid, potential=False, nonlinear=False)

    @property
    def weight_power(self) -> int:
        return 2 * self.ell + 2

    @property
    def dim(self) -> int:
        return 2 * self.ell + 3

    @cached_property
    def _trig(self) -> Tuple[numpy.ndarray, numpy.ndarray]:
        q = self.q if self.q is not None else numpy.zeros(self.grid.npoints)
        return numpy.sin(2.0 * q), numpy.cos(2.0 * q)

    @cached_property
    def V(self) -> numpy.ndarray:
        if not self.potential:
            return numpy.zeros(self.grid.npoints)
        _, cos2q = self._trig
        return 2.0 * kappa(self.ell) * (cos2q - 1.0) / self.r**2

    def nonlinear_terms(self, u: numpy.ndarray) -> Tuple[numpy.ndarray, numpy.ndarray]:
        """(F, G) at the nodes."""
        sin2q, cos2q = self._trig
        x = self.r**self.ell * u
        scale = 2.0 * kappa(self.ell) / self.r ** (self.ell + 2)
        return scale * numpy.sin(x) ** 2 * sin2q, scale * (x - 0.5 * numpy.sin(2.0 * x)) * cos2q

    def forcing(self, u):
        out = -self.V * u
        if self.nonlinear:
            f_term, g_term = self.nonlinear_terms(u)
            out = out + f_term + g_term
        return out

    def potential_density(self, u):
        density = 0.5 * self.V * u**2
        if self.nonlinear:
            sin2q, cos2q = self._trig
            x = self.r**self.ell * u
            primitive = 2.0 * kappa(self.ell) / self.r ** (2 * self.ell + 2) * (
                (0.5 * x - 0.25 * numpy.sin(2.0 * x)) * sin2q
                + (0.5 * x**2 + 0.25 * (numpy.cos(2.0 * x) - 1.0)) * cos2q
            )
            density = density - primitive
        return density * self.node_weight


@dataclass(frozen=True)
class EnergyParts:
    total: float
    kinetic: float
    gradient: float
    potential: float
    quadratic_form: Optional[float] = None


@dataclass
class LedgerEntry:
    time: float
    total: float
    kinetic: float
    gradient: float
    potential: float
    outer_flux: float
    cumulative_flux: float
    edge_amplitude: float
    endpoint: float
    local: Dict[float, Tuple[float, float]] = field(default_factory=dict)  # R -> (interior, exterior)


@dataclass
class EnergyLedger:
    entries: List[LedgerEntry] = field(default_factory=list)

    def to_frame(self) -> pandas.DataFrame:
        rows = []
        for entry in self.entries:
            row = {
                "time": entry.time,
                "total": entry.total,
                "kinetic": entry.kinetic,
                "gradient": entry.gradient,
                "potential": entry.potential,
                "outer_flux": entry.outer_flux,
                "cumulative_flux": entry.cumulative_flux,
                "edge_amplitude": entry.edge_amplitude,
                "endpoint": entry.endpoint,
            }
            for radius, (interior, exterior) in sorted(entry.local.items()):
                row[f"interior_{radius:g}"] = interior
                row[f"exterior_{radius:g}"] = exterior
            rows.append(row)
        return pandas.DataFrame(rows)

    def channel_frame(self) -> pandas.DataFrame:
        rows = [
            (entry.time, radius, interior, exterior)
            for entry in self.entries
            for radius, (interior, exterior) in sorted(entry.local.items())
        ]
        return pandas.DataFrame(rows, columns=["time", "R", "interior", "exterior"])

    def max_relative_drift(self) -> float:
        """max_t |E(t) - E(0) + cumulative outer flux(t)| / max(E(0), tiny)."""
        if not self.entries:
            return 0.0
        e0 = self.entries[0].total
        scale = abs(e0) if e0 else 1.0
        return max(abs(e.total - e0 + e.cumulative_flux) for e in self.entries) / scale


@dataclass
class EvolutionResult:
    state: WaveState
    ledger: EnergyLedger
    snapshots: List[WaveState] = field(default_factory=list)
    checkpoints: List[WaveState] = field(default_factory=list)


def _default_model(state: WaveState) -> RadialModel:
    if state.form == Form.PSI:
        return PsiModel(ell=state.ell, grid=state.grid)
    if state.degree != 0:
        raise ValueError(f"u-form state with n={state.degree} needs UModel.from_profile; the default model assumes Q = 0")
    return UModel(ell=state.ell, grid=state.grid)


def rhs_psi(state: WaveState, model: Optional[PsiModel] = None) -> numpy.ndarray:
    """Acceleration psi_rr + (2/r) psi_r - l(l+1) sin(2 psi)/(2 r^2) with both ends pinned."""
    if state.form != Form.PSI:
        raise ValueError("rhs_psi needs a psi-form state")
    model = model or PsiModel(ell=state.ell, grid=state.grid)
    return model.acceleration(state.field)


def rhs_u(state: WaveState, profile: HarmonicMapProfile) -> numpy.ndarray:
    """Acceleration u_rr + ((2l+2)/r) u_r - V u + F + G about Q_{l,n}."""
    if state.form != Form.U:
        raise ValueError("rhs_u needs a u-form state")
    return UModel.from_profile(profile, state.grid).acceleration(state.field)


def energy(state: WaveState, model: Optional[RadialModel] = None) -> EnergyParts:
    """
    Discrete (conserved) total plus Simpson quadratures of the kinetic, gradient and
    potential parts. In u-form also <Hu, u> = int (u_r^2 + V u^2) r^{d-1} dr.
    """
    model = model or _default_model(state)
    model.check_state(state)
    dr, r = state.grid.dr, state.grid.r
    f_r = radial_derivative(state.field, dr)
    weight = r**model.weight_power
    kinetic = 0.5 * integrate(state.velocity**2 * weight, dr)
    gradient = 0.5 * integrate(f_r**2 * weight, dr)
    quadratic_form = None
    if state.form == Form.PSI:
        potential = integrate(kappa(state.ell) * numpy.sin(state.field) ** 2, dr)
    else:
        potential = integrate(model.potential_density(state.field), dr)
        quadratic_form = integrate((f_r**2 + model.V * state.field**2) * weight, dr)
    total = model.discrete_energy(state.field, state.velocity)
    return EnergyParts(total, kinetic, gradient, potential, quadratic_form)


def local_norm_sq(state: WaveState, model: RadialModel, r_lo: float, r_hi: Optional[float] = None) -> float:
    """
    Energy norm of the deviation from the model's reference on r_lo <= r <= r_hi:
    psi-form int (phi_t^2 + phi_r^2 + l(l+1) phi^2/r^2) r^2 dr with phi = psi - Q,
    u-form int (u_t^2 + u_r^2) r^{d-1} dr.
    """
    grid = state.grid
    if r_lo > grid.r_max:
        return 0.0
    deviation = state.field - model.reference
    d_r = radial_derivative(deviation, grid.dr)
    r = grid.r
    density = (state.velocity**2 + d_r**2) * r**model.weight_power
    if state.form == Form.PSI:
        density = density + 2.0 * kappa(state.ell) * deviation**2
    window = grid.window(r_lo, r_hi)
    if window.stop - window.start < 3:
        return 0.0
    return integrate(density[window], grid.dr)


def _check_cfl(dt: float, dr: float):
    limit = Config.Evolution.max_cfl * dr
    if abs(dt) > limit * (1.0 + 1e-12):
        raise ValueError(
            f"CFL violation: |dt| = {abs(dt)} exceeds {Config.Evolution.max_cfl} * dr = {limit}; "
            f"the RK4 step is only stable for dt <= 0.8 dr"
        )


def step(state: WaveState, dt: float, model: Optional[RadialModel] = None) -> WaveState:
    """One classical RK4 step on (field, velocity); boundary nodes stay pinned."""
    _check_cfl(dt, state.grid.dr)
    model = model or _default_model(state)
    f, v = state.field, state.velocity
    k1f, k1v = v, model.acceleration(f)
    k2f, k2v = v + 0.5 * dt * k1v, model.acceleration(f + 0.5 * dt * k1f)
    k3f, k3v = v + 0.5 * dt * k2v, model.acceleration(f + 0.5 * dt * k2f)
    k4f, k4v = v + dt * k3v, model.acceleration(f + dt * k3f)
    f_new = f + dt / 6.0 * (k1f + 2.0 * k2f + 2.0 * k3f + k4f)
    v_new = v + dt / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v)
    f_new[0], f_new[-1] = f[0], f[-1]
    v_new[0] = v_new[-1] = 0.0
    if not (numpy.all(numpy.isfinite(f_new)) and numpy.all(numpy.isfinite(v_new))):
        raise EvolutionAborted(f"Non-finite values after step from t={state.time}", last_good=state)
    return state.evolve_to(f_new, v_new, state.time + dt)


def _ledger_entry(state: WaveState, model: RadialModel, initial: numpy.ndarray, radii: Sequence[float],
                  cumulative_flux: float) -> LedgerEntry:
    parts = energy(state, model)
    grid = state.grid
    margin = Config.Evolution.causal_margin_cells
    # pinned outer node: the boundary term of the discrete energy identity is v_N * flux = 0
    outer_flux = -float(state.velocity[-1] * model.flux_weight[-1] * (state.field[-1] - state.field[-2]) / grid.dr)
    edge_amplitude = float(numpy.max(numpy.abs(state.field[-(margin + 1):] - initial[-(margin + 1):])))
    causal_edge = grid.r_max - margin * grid.dr
    local = {}
    for radius in radii:
        interior = local_norm_sq(state, model, grid.r_min, radius)
        exterior = local_norm_sq(state, model, radius + abs(state.time), causal_edge)
        local[float(radius)] = (interior, exterior)
    return LedgerEntry(
        time=state.time,
        total=parts.total,
        kinetic=parts.kinetic,
        gradient=parts.gradient,
        potential=parts.potential,
        outer_flux=outer_flux,
        cumulative_flux=cumulative_flux,
        edge_amplitude=edge_amplitude,
        endpoint=float(state.field[-1]),
        local=local,
    )


def evolve(state: WaveState, T: float, model: Optional[RadialModel] = None,
           probes: Optional[ProbeConfig] = None, cfl: float = Config.Evolution.cfl,
           checkpoint_every: int = Config.Evolution.checkpoint_every) -> EvolutionResult:
    """
    Advances ``state`` by T (negative T runs backwards), recording the ledger and local
    energies at the probe cadence.

    Raises:
        ValueError: if r_max < R_interest + |T| + margin, or the CFL number is out of range.
        EvolutionAborted: on non-finite values, carrying the last finite state.
    """
    model = model or _default_model(state)
    model.check_state(state)
    probes = probes or ProbeConfig()
    grid = state.grid
    if not 0 < cfl <= Config.Evolution.max_cfl:
        raise ValueError(f"CFL number {cfl} outside (0, {Config.Evolution.max_cfl}]")

    r_interest = max(probes.radii) if probes.radii else grid.r_min
    required = r_interest + abs(T) + Config.Evolution.causal_margin_cells * grid.dr
    if grid.r_max < required:
        raise ValueError(
            f"Causal margin violated: r_max = {grid.r_max} < R_interest + |T| + margin = {required}"
        )

    nsteps = int(math.ceil(abs(T) / (cfl * grid.dr) - 1e-9)) if T else 0
    dt = T / nsteps if nsteps else 0.0
    cadence = max(1, int(round(probes.cadence / abs(dt)))) if nsteps else 1

    initial = state.field.copy()
    ledger = EnergyLedger([_ledger_entry(state, model, initial, probes.radii, 0.0)])
    snapshots = [state] if probes.snapshots else []
    checkpoints: List[WaveState] = []
    cumulative_flux = 0.0
    previous_flux = ledger.entries[0].outer_flux
    logger.info(f"Evolving {state.form.value}-form l={state.ell} n={state.degree} to T={T} in {nsteps} steps (dt={dt:.3e})")

    current = state
    for i in range(1, nsteps + 1):
        try:
            current = step(current, dt, model)
        except EvolutionAborted as e:
            logger.error(f"Evolution aborted at t={e.last_good.time}: {e}")
            raise
        if checkpoint_every and i % checkpoint_every == 0:
            checkpoints.append(current)
        if i % cadence == 0 or i == nsteps:
            entry = _ledger_entry(current, model, initial, probes.radii, cumulative_flux)
            cumulative_flux += 0.5 * (previous_flux + entry.outer_flux) * (entry.time - ledger.entries[-1].time)
            entry.cumulative_flux = cumulative_flux
            previous_flux = entry.outer_flux
            ledger.entries.append(entry)
            if probes.snapshots:
                snapshots.append(current)
            logger.debug(f"t={current.time:.4f} E={entry.total:.12e}")

    if not checkpoints or checkpoints[-1] is not current:
        checkpoints.append(current)
    drift = ledger.max_relative_drift()
    if drift > 1e-6:
        logger.warning(f"Energy identity drift {drift:.3e} exceeds 1e-6 relative")
    logger.info(f"Evolution finished at t={current.time}: energy drift {drift:.3e}")
    return EvolutionResult(state=current, ledger=ledger, snapshots=snapshots, checkpoints=checkpoints)


def make_initial_data(ell: int, n: int, profile: HarmonicMapProfile, perturbation: PerturbationConfig,
                      grid: RadialGrid, form: Form = Form.PSI) -> WaveState:
    """
    psi_0 = Q_{l,n} + bump, psi_1 = velocity * bump shape; converted to u-form on request.

    Raises:
        ValueError: on a profile for another (l, n), a bump reaching r <= 1 or r >= r_max,
            or an endpoint more than 0.1 away from n*pi.
    """
    if profile.ell != ell or profile.n != n:
        raise ValueError(f"Profile is Q_({profile.ell},{profile.n}), requested ({ell},{n})")
    p = perturbation
    lo, hi = p.center - p.width, p.center + p.width
    if (p.amplitude or p.velocity) and (lo <= grid.r_min or hi >= grid.r_max):
        raise ValueError(f"Perturbation support [{lo}, {hi}] must lie inside ({grid.r_min}, {grid.r_max})")

    r = grid.r
    q, _ = evaluate_Q(profile, r)
    field = q + bump(r, p.amplitude, p.center, p.width)
    velocity = bump(r, p.velocity, p.center, p.width)
    field[0] = 0.0
    if abs(field[-1] - n * math.pi) > 0.1:
        raise ValueError(f"Initial data endpoint {field[-1]} is not within 0.1 of n*pi for n={n}")

    state = WaveState(Form.PSI, grid, field, velocity, time=0.0, ell=ell, degree=n)
    parts = energy(state)
    if not math.isfinite(parts.kinetic + parts.gradient + parts.potential):
        raise ValueError("Initial data has infinite energy")
    if form == Form.U:
        return convert_psi_u(state, profile, Form.U)
    return state


def convert_psi_u(state: WaveState, profile: HarmonicMapProfile, target: Form) -> WaveState:
    """phi = psi - Q, u = phi / r^l (and back)."""
    target = Form(target)
    if state.ell != profile.ell or state.degree != profile.n:
        raise ValueError(
            f"State (l={state.ell}, n={state.degree}) does not match profile (l={profile.ell}, n={profile.n})"
        )
    if state.form == target:
        return state
    r = state.grid.r
    q, _ = evaluate_Q(profile, r)
    scale = r**state.ell
    if target == Form.U:
        field = (state.field - q) / scale
        velocity = state.velocity / scale
    else:
        field = q + scale * state.field
        velocity = scale * state.velocity
    field[0] = 0.0
    return WaveState(target, state.grid, field, velocity, state.time, state.ell, state.degree)


def norm_equivalence(psi_state: WaveState, profile: HarmonicMapProfile) -> float:
    """||u||_H^2 / ||psi - Q||_{H_l}^2 for the same data, as a measured constant."""
    u_state = convert_psi_u(psi_state, profile, Form.U)
    psi_norm = local_norm_sq(psi_state, PsiModel.from_profile(profile, psi_state.grid, balanced=False), 1.0)
    u_norm = local_norm_sq(u_state, UModel(ell=profile.ell, grid=psi_state.grid), 1.0)
    ratio = u_norm / psi_norm if psi_norm else 0.0
    logger.debug(f"Norm equivalence ratio for l={profile.ell}: {ratio:.6f}")
    return ratio


def sharp_hardy_constant(ell: int) -> float:
    """(2/(d-2))^2 with d = 2l+3."""
    return 4.0 / (2 * ell + 1) ** 2


def hardy_constant(u: numpy.ndarray, grid: RadialGrid, ell: int) -> float:
    """int u^2 r^{2l} dr / int u_r^2 r^{2l+2} dr for u vanishing at r = 1."""
    r = grid.r
    u = numpy.asarray(u, dtype=float)
    numerator = integrate(u**2 * r ** (2 * ell), grid.dr)
    denominator = integrate(radial_derivative(u, grid.dr) ** 2 * r ** (2 * ell + 2), grid.dr)
    if denominator <= 0:
        raise ValueError("Hardy ratio needs a non-constant u")
    return numerator / denominator
