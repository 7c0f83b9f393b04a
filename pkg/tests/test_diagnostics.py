import numpy
import pytest
from scipy.linalg import eigh

from app.config import PerturbationConfig, ProbeConfig
from app.diagnostics.channels import (
    bump_data,
    channel_experiment,
    compare_with_oracle,
    exterior_data,
    make_channel_data,
    power_data,
    random_data,
)
from app.diagnostics.free_waves import BumpSeed, ExactFreeWave, SeedPair, free_wave_exact
from app.diagnostics.scattering import core_decay, degree_in_cone, scattering_metrics, track_projection_coefficients
from app.diagnostics.spectral import discrete_operator, negative_count, spectral_check
from app.evolver.grid import RadialGrid
from app.evolver.waveEvolver import PsiModel, UModel, evolve, make_initial_data
from app.harmonic.harmonicMap import shoot
from app.projection.projector import ExteriorData


@pytest.mark.parametrize("d", [3, 5, 7, 9])
@pytest.mark.parametrize("builder", [SeedPair.position, SeedPair.velocity])
def test_exact_free_wave_solves_the_equation(d, builder):
    seed = builder(BumpSeed(1.0, 4.0, 1.5))
    r = numpy.linspace(1.0, 20.0, 4001)
    values = free_wave_exact(d, seed, 1.7, r)
    assert numpy.abs(values.residual(d, r)).max() <= 1e-9 * numpy.abs(values.u_tt).max()


def test_free_wave_initial_data():
    bump = BumpSeed(1.0, 4.0, 1.5)
    r = numpy.linspace(1.0, 10.0, 901)
    position = free_wave_exact(5, SeedPair.position(bump), 0.0, r)
    assert not numpy.any(position.u_t)
    velocity = free_wave_exact(5, SeedPair.velocity(bump), 0.0, r)
    assert not numpy.any(velocity.u)
    three = free_wave_exact(3, SeedPair.position(bump), 2.0, r)
    expected = 0.5 * (bump(r + 2.0) + bump(r - 2.0)) / r
    assert numpy.allclose(three.u, expected, rtol=1e-12, atol=1e-14)


def test_even_dimension_rejected():
    with pytest.raises(ValueError):
        free_wave_exact(4, SeedPair.position(BumpSeed(1.0, 4.0, 1.0)), 0.0, [2.0])
    with pytest.raises(ValueError):
        ExactFreeWave(dim=6)


@pytest.mark.parametrize("d", [3, 5, 7])
def test_power_data_exterior_energy_law(d):
    wave = power_data(d)
    for t in (0.0, 3.0, -5.0, 20.0):
        expected = (d - 2) * (2.0 + abs(t)) ** (2 - d)
        assert wave.exterior_energy(t, 2.0) == pytest.approx(expected, rel=1e-12)


def test_power_data_channel_has_no_ratio():
    report = channel_experiment(7, 2.0, power_data(7), 20.0)
    assert report.ratio is None
    assert report.max_limit / report.initial_exterior <= 1e-4
    assert abs(report.perp_norm_sq) <= 1e-10 * report.proj_norm_sq


@pytest.mark.parametrize("d", [3, 5, 7])
@pytest.mark.parametrize("component", ["f", "g"])
def test_bump_channel_ratio_is_one_half(d, component):
    report = channel_experiment(d, 2.0, bump_data(d, 2.0, component), 20.0)
    assert report.oracle == "exact"
    assert not report.plateau_flagged
    assert report.ratio == pytest.approx(0.5, abs=0.025)
    assert report.limit_plus == pytest.approx(report.limit_minus, rel=1e-9)


def test_bump_channel_in_three_dimensions_is_exact():
    report = channel_experiment(3, 2.0, bump_data(3, 2.0, "f"), 20.0)
    assert report.ratio == pytest.approx(0.5, rel=1e-6)


@pytest.mark.parametrize("d", [3, 5, 7])
def test_random_data_channel_bound(d):
    rng = numpy.random.default_rng(12345 + d)
    for _ in range(5):
        report = channel_experiment(d, 2.0, random_data(d, 2.0, rng), 20.0, n_times=3)
        assert report.ratio is not None
        assert report.ratio >= 0.48


@pytest.mark.slow
@pytest.mark.parametrize("d", [3, 5, 7])
def test_random_data_channel_bound_at_scale(d):
    rng = numpy.random.default_rng(2024 + d)
    ratios = []
    for _ in range(200):
        report = channel_experiment(d, 2.0, random_data(d, 2.0, rng), 20.0, n_times=3)
        assert report.ratio is not None
        ratios.append(report.ratio)
    assert min(ratios) >= 0.48


@pytest.mark.parametrize("d", [3, 5, 7])
@pytest.mark.parametrize("component", ["f", "g"])
def test_radiation_limit_of_bump_is_half_the_energy(d, component):
    wave = bump_data(d, 2.0, component)
    total = wave.exterior_energy(0.0, 2.0)
    assert wave.radiation_limit(1, 2.0) == pytest.approx(0.5 * total, rel=1e-6)
    assert wave.radiation_limit(-1, 2.0) == pytest.approx(0.5 * total, rel=1e-6)


def test_radiation_limit_ignores_the_power_component():
    seed = SeedPair.position(BumpSeed(1.0, 4.0, 1.0))
    plain = ExactFreeWave(dim=5, seeds=(seed,))
    tailed = ExactFreeWave(dim=5, seeds=(seed,), lam=numpy.array([3.0]), mu=numpy.array([2.0]))
    assert tailed.radiation_limit(1, 2.0) == pytest.approx(plain.radiation_limit(1, 2.0), rel=1e-12)
    assert power_data(5).radiation_limit(1, 2.0) == 0.0
    with pytest.raises(ValueError):
        plain.radiation_limit(0, 2.0)


def test_random_channel_series_approaches_the_limit():
    report = channel_experiment(5, 2.0, random_data(5, 2.0, numpy.random.default_rng(7)), 20.0, n_times=5)
    assert report.exterior_plus[-1] >= report.limit_plus * (1 - 1e-9)
    assert report.exterior_plus[-1] - report.limit_plus <= report.exterior_plus[2] - report.limit_plus + 1e-12


def test_channel_input_validation():
    with pytest.raises(ValueError):
        channel_experiment(5, 2.0, power_data(5), 0.0)
    with pytest.raises(ValueError):
        channel_experiment(7, 2.0, power_data(5), 10.0)
    with pytest.raises(ValueError):
        bump_data(5, 2.0, "f", center=2.5)
    with pytest.raises(ValueError):
        bump_data(5, 2.0, "h")
    with pytest.raises(ValueError):
        make_channel_data("noise", 5, 2.0, numpy.random.default_rng(0))


def test_exterior_data_samples_the_wave():
    wave = bump_data(5, 2.0, "f")
    data = exterior_data(wave, 2.0, npoints=2001)
    assert data.grid.r_min == 2.0
    assert data.grid.r_max == pytest.approx(wave.support_edge)
    assert data.has_tail


def _sampled_bump(d, grid):
    seed = SeedPair.position(BumpSeed(1.0, 4.0, 1.0))
    values = free_wave_exact(d, seed, 0.0, grid.r)
    return ExteriorData(grid=grid, f=values.u, g=values.u_t, dim=d)


def test_numeric_channel_matches_exact():
    grid = RadialGrid.from_spacing(14.0, 0.01)
    report = channel_experiment(3, 2.0, _sampled_bump(3, grid), 6.0, n_times=7)
    assert report.oracle == "numeric"
    assert len(report.times) == len(report.exterior_plus) == len(report.exterior_minus)
    assert report.ratio == pytest.approx(0.5, abs=0.01)


def test_numeric_channel_needs_room_for_reflections():
    grid = RadialGrid.from_spacing(9.0, 0.01)
    with pytest.raises(ValueError):
        channel_experiment(3, 2.0, _sampled_bump(3, grid), 6.0)


def test_oracle_comparison_rejects_seed_at_boundary():
    with pytest.raises(ValueError):
        compare_with_oracle(3, SeedPair.position(BumpSeed(1.0, 1.5, 1.0)), 1.0, 0.02)


def test_negative_count():
    assert negative_count(numpy.array([1.0, -2.0, 3.0]), numpy.array([0.0, 0.0])) == 1
    assert negative_count(numpy.array([2.0, 2.0, 2.0]), numpy.array([-1.0, -1.0])) == 0
    assert negative_count(numpy.array([1.0, 1.0]), numpy.array([2.0])) == 1


def test_free_operator_spectrum():
    grid = RadialGrid(r_max=21.0, npoints=201)
    check = spectral_check(None, grid, ell=1, n_probes=20)
    assert check.converged
    assert check.negative_count == 0
    assert check.smallest_eigenvalue > 0
    assert check.rayleigh_min == pytest.approx(1.0) and check.rayleigh_max == pytest.approx(1.0)

    k_diag, k_off, mass = discrete_operator(UModel(ell=1, grid=grid, potential=False, nonlinear=False))
    dense = numpy.diag(k_diag) + numpy.diag(k_off, 1) + numpy.diag(k_off, -1)
    smallest = eigh(dense, numpy.diag(mass), eigvals_only=True)[0]
    assert check.smallest_eigenvalue == pytest.approx(smallest, rel=1e-8)


def test_free_operator_needs_ell():
    with pytest.raises(ValueError):
        spectral_check(None, RadialGrid(r_max=21.0, npoints=201))


def test_linearized_operator_is_positive(profile_l1_n1):
    grid = RadialGrid(r_max=21.0, npoints=2001)
    check = spectral_check(profile_l1_n1, grid, n_probes=50, seed=3)
    assert check.ell == 1 and check.n == 1 and check.dim == 5
    assert check.negative_count == 0
    assert check.smallest_eigenvalue >= -1e-8
    assert 0 < check.rayleigh_min <= check.rayleigh_max <= 1.0


@pytest.mark.slow
@pytest.mark.parametrize("ell", [1, 2, 3])
@pytest.mark.parametrize("n", [0, 1, 2])
def test_linearized_operator_is_positive_across_classes(ell, n, profile_cache):
    grid = RadialGrid(r_max=21.0, npoints=2001)
    check = spectral_check(profile_cache(ell, n), grid, n_probes=100, seed=ell + 10 * n)
    assert check.ell == ell and check.n == n
    assert check.negative_count == 0
    assert check.smallest_eigenvalue >= -1e-8
    assert check.rayleigh_min > 0


@pytest.fixture
def perturbed_run(profile_l1_n1):
    grid = RadialGrid(r_max=21.0, npoints=1001)
    perturbation = PerturbationConfig(amplitude=0.1, center=2.5, width=1.0)
    state = make_initial_data(1, 1, profile_l1_n1, perturbation, grid)
    model = PsiModel.from_profile(profile_l1_n1, grid)
    return evolve(state, 4.0, model, ProbeConfig(radii=(3.0,), cadence=1.0))


def test_scattering_metrics(perturbed_run, profile_l1_n1):
    metrics = scattering_metrics(perturbed_run, profile_l1_n1, 3.0)
    assert list(metrics.columns) == [
        "time", "core_norm", "exterior_norm", "core_fraction", "annulus_fraction", "outer_fraction"
    ]
    assert len(metrics) == 5
    assert metrics.core_norm.iloc[0] > 0
    fractions = metrics[["core_fraction", "annulus_fraction", "outer_fraction"]].sum(axis=1)
    assert numpy.allclose(fractions, 1.0)
    assert 0 <= core_decay(metrics) < 10


def test_scattering_from_the_harmonic_map_itself(profile_l1_n1):
    grid = RadialGrid(r_max=21.0, npoints=1001)
    state = make_initial_data(1, 1, profile_l1_n1, PerturbationConfig(), grid)
    result = evolve(state, 1.0, PsiModel.from_profile(profile_l1_n1, grid), ProbeConfig(radii=(3.0,), cadence=0.5))
    metrics = scattering_metrics(result, profile_l1_n1, 3.0)
    assert metrics.core_norm.max() <= 1e-8
    assert core_decay(metrics) == 0.0


def test_scattering_needs_snapshots(profile_l1_n1):
    grid = RadialGrid(r_max=21.0, npoints=1001)
    state = make_initial_data(1, 1, profile_l1_n1, PerturbationConfig(), grid)
    result = evolve(state, 0.5, PsiModel.from_profile(profile_l1_n1, grid),
                    ProbeConfig(radii=(3.0,), cadence=0.5, snapshots=False))
    with pytest.raises(ValueError):
        scattering_metrics(result, profile_l1_n1, 3.0)


def test_projection_tracks(perturbed_run, profile_l1_n1):
    tracks = track_projection_coefficients(perturbed_run.snapshots, (3.0, 5.0), profile_l1_n1)
    assert tracks.dim == 5
    assert len(tracks.frame) == 5 * 2 * 2
    assert set(tracks.frame.family) == {"lambda", "mu"}
    assert not tracks.frame.truncated.any()
    sup = tracks.normalized_lambda_sup(r_min=3.0)
    assert len(sup) == 5
    assert len(tracks.at(2.0)) == 2
    with pytest.raises(ValueError):
        track_projection_coefficients(perturbed_run.snapshots, (3.0,))
    with pytest.raises(ValueError):
        track_projection_coefficients([], (3.0,))


def test_projection_tracks_of_zero_solution():
    profile = shoot(1, 0)
    grid = RadialGrid(r_max=21.0, npoints=1001)
    state = make_initial_data(1, 0, profile, PerturbationConfig(), grid)
    result = evolve(state, 1.0, PsiModel.from_profile(profile, grid), ProbeConfig(radii=(3.0,), cadence=0.5))
    tracks = track_projection_coefficients(result.snapshots, (3.0,), profile)
    assert (tracks.frame.value == 0.0).all()


def test_projection_tracks_at_radius_between_nodes(perturbed_run, profile_l1_n1):
    tracks = track_projection_coefficients(perturbed_run.snapshots, (3.01,), profile_l1_n1)
    on_node = track_projection_coefficients(perturbed_run.snapshots, (3.02,), profile_l1_n1)
    assert set(tracks.frame.R) == {3.01}
    assert numpy.allclose(tracks.frame.value, on_node.frame.value, rtol=1e-12, atol=0.0)


def test_degree_is_read_inside_the_causal_cone(perturbed_run, profile_l1_n1):
    readings = [degree_in_cone(snapshot, profile_l1_n1) for snapshot in perturbed_run.snapshots]
    assert readings == [1] * len(perturbed_run.snapshots)
    flipped = perturbed_run.snapshots[-1]
    flipped = flipped.evolve_to(flipped.field - 2.0 * numpy.pi * (flipped.grid.r > 10.0), flipped.velocity, flipped.time)
    assert degree_in_cone(flipped, profile_l1_n1) == -1
    late = flipped.evolve_to(flipped.field, flipped.velocity, 25.0)
    assert degree_in_cone(late, profile_l1_n1) is None


@pytest.mark.slow
@pytest.mark.parametrize("ell", [1, 2])
@pytest.mark.parametrize("n", [0, 1])
def test_perturbed_harmonic_map_relaxes(ell, n, profile_cache):
    profile = profile_cache(ell, n)
    grid = RadialGrid(r_max=60.0, npoints=3001)
    perturbation = PerturbationConfig(amplitude=0.3, center=3.0, width=1.0)
    state = make_initial_data(ell, n, profile, perturbation, grid)
    radii = (5.0, 10.0, 12.0, 14.0, 16.0, 18.0, 20.0)
    result = evolve(state, 30.0, PsiModel.from_profile(profile, grid), ProbeConfig(radii=radii, cadence=0.5))

    metrics = scattering_metrics(result, profile, 5.0)
    assert metrics.time.iloc[-1] == pytest.approx(30.0)
    assert core_decay(metrics) <= 0.05
    assert [degree_in_cone(snapshot, profile) for snapshot in result.snapshots] == [n] * len(result.snapshots)

    tracks = track_projection_coefficients(result.snapshots, radii, profile)
    assert set(tracks.frame.R) == set(radii)
    sup = tracks.normalized_lambda_sup(r_min=10.0)
    exit_time = max(radii) + perturbation.center + perturbation.width
    assert sup.idxmax() < exit_time
    assert sup[sup.index >= exit_time].max() <= 0.5 * sup.max()
    assert sup.iloc[-1] <= 0.25 * sup.max()
