import math

import numpy
import pytest

from app.harmonic.harmonicMap import (
    HarmonicMapProfile,
    PendulumState,
    TerminalKind,
    evaluate_Q,
    fit_alpha,
    harmonic_energy,
    integrate_pendulum,
    kappa,
    linearization_attracting,
    plugback_residual,
    series_deviation,
    shoot,
    terminal_scan,
)


def test_kappa():
    assert kappa(1) == 1.0
    assert kappa(3) == 6.0


def test_foci_attract_and_saddles_do_not():
    for ell in (1, 2, 5):
        assert linearization_attracting(ell, 0.5 * math.pi)
        assert linearization_attracting(ell, 2.5 * math.pi)
        assert not linearization_attracting(ell, 0.0)
        assert not linearization_attracting(ell, math.pi)


def test_zero_slope_stays_at_saddle():
    trajectory = integrate_pendulum(1, 0.0, 10.0)
    assert trajectory.kind == TerminalKind.SADDLE
    assert trajectory.m == 0
    assert trajectory.terminal_angle == 0.0


def test_large_slope_settles_on_a_focus():
    trajectory = integrate_pendulum(1, 20.0, 80.0)
    assert trajectory.kind == TerminalKind.FOCUS
    assert trajectory.m >= 1
    assert abs(trajectory.final_state.phi - trajectory.terminal_angle) <= 1e-5


def test_pendulum_horizon_must_be_positive():
    with pytest.raises(ValueError):
        integrate_pendulum(1, 1.0, 0.0)


def test_pendulum_state_validation():
    with pytest.raises(ValueError):
        PendulumState(-1.0, 0.0, 0.0)
    with pytest.raises(ValueError):
        PendulumState(0.0, float("nan"), 0.0)


def test_terminal_scan_reports_every_slope():
    terminals, violations = terminal_scan(1, [0.0, 20.0], 80.0)
    assert terminals[0] == 0
    assert terminals[1] >= 1
    assert violations == []


def test_ell_zero_rejected():
    with pytest.raises(ValueError, match="ell must be >= 1"):
        shoot(0, 1)


def test_negative_degree_rejected():
    with pytest.raises(ValueError):
        shoot(1, -1)


def test_degree_zero_is_the_zero_map():
    profile = shoot(2, 0)
    assert profile.n == 0
    assert not numpy.any(profile.q)
    assert plugback_residual(profile) == 0.0
    assert harmonic_energy(profile) == 0.0
    assert fit_alpha(profile).alpha == 0.0


@pytest.mark.parametrize("fixture", ["profile_l1_n1", "profile_l2_n1"])
def test_profile_solves_the_equation(fixture, request):
    profile = request.getfixturevalue(fixture)
    assert profile.converged
    assert profile.q[0] == 0.0
    assert profile.alpha0 > 0
    assert profile.shoot_param > 0
    assert plugback_residual(profile) <= 1e-8
    # degree-1 ground state increases from 0 towards pi
    assert numpy.all(numpy.diff(profile.deviation) < 0)
    assert numpy.all(profile.deviation > 0)
    assert abs(profile.q[-1] - math.pi) < 1e-12


def test_profile_slope_matches_shooting_parameter(profile_l1_n1):
    assert profile_l1_n1.q_s[0] == pytest.approx(profile_l1_n1.shoot_param, rel=1e-7)


def test_fitted_alpha_matches(profile_l1_n1, profile_l2_n1):
    for profile in (profile_l1_n1, profile_l2_n1):
        fit = fit_alpha(profile)
        assert fit.alpha == pytest.approx(profile.alpha0, rel=1e-6)
        assert fit.window[0] < fit.window[1]


def test_alpha_stable_under_longer_horizon(profile_l1_n1):
    longer = shoot(1, 1, s_max=80.0)
    assert longer.alpha0 == pytest.approx(profile_l1_n1.alpha0, rel=1e-6)


def test_shooting_parameter_unique(profile_l1_n1):
    a = profile_l1_n1.shoot_param
    again = shoot(1, 1, bracket=(0.5 * a, 2.0 * a))
    assert abs(again.shoot_param - a) <= 1e-9


def test_bad_bracket_rejected(profile_l1_n1):
    a = profile_l1_n1.shoot_param
    with pytest.raises(ValueError):
        shoot(1, 1, bracket=(2.0 * a, 4.0 * a))


def test_evaluate_Q(profile_l1_n1):
    q1, _ = evaluate_Q(profile_l1_n1, 1.0)
    assert q1 == 0.0
    r = numpy.array([1.5, 3.0, 10.0])
    q, q_r = evaluate_Q(profile_l1_n1, r)
    assert numpy.all((q > 0) & (q < math.pi))
    assert numpy.all(q_r > 0)
    with pytest.raises(ValueError):
        evaluate_Q(profile_l1_n1, 0.5)


def test_evaluate_Q_beyond_table_uses_series(profile_l1_n1):
    r = 10.0 * profile_l1_n1.r_max
    q, _ = evaluate_Q(profile_l1_n1, r)
    deviation, _ = series_deviation(1, profile_l1_n1.alpha0, math.log(r))
    assert math.pi - q == pytest.approx(deviation, abs=1e-15)


def test_profile_from_samples(profile_l1_n1):
    table = profile_l1_n1.table()
    rebuilt = HarmonicMapProfile.from_samples(1, 1, table.r.values, table.Q.values, table.dQdr.values)
    assert rebuilt.shoot_param == pytest.approx(profile_l1_n1.shoot_param, rel=1e-12)
    with pytest.raises(ValueError):
        HarmonicMapProfile.from_samples(1, 1, table.r.values[1:], table.Q.values[1:], table.dQdr.values[1:])


def test_header_and_energy(profile_l1_n1):
    header = profile_l1_n1.header()
    assert header["ell"] == 1 and header["n"] == 1
    assert header["residual"] <= 1e-8
    energy = harmonic_energy(profile_l1_n1)
    assert math.isfinite(energy) and energy > 0


@pytest.mark.slow
def test_higher_degree_profile():
    profile = shoot(1, 2)
    assert plugback_residual(profile) <= 1e-8
    assert profile.deviation[0] == pytest.approx(2 * math.pi)
    assert fit_alpha(profile).alpha == pytest.approx(profile.alpha0, rel=1e-6)


@pytest.mark.slow
@pytest.mark.parametrize("ell", [1, 2, 3, 4])
@pytest.mark.parametrize("n", [1, 2, 3])
def test_profiles_solve_the_equation_across_classes(ell, n, profile_cache):
    profile = profile_cache(ell, n)
    assert profile.converged
    assert plugback_residual(profile) <= 1e-8
    assert profile.deviation[0] == pytest.approx(n * math.pi)


def _bumped(profile, amplitude, center, width):
    s, r = profile.s, profile.r
    x = (s - center) / width
    inside = numpy.abs(x) < 1.0
    b = numpy.where(inside, amplitude * (1.0 - x**2) ** 4, 0.0)
    b_s = numpy.where(inside, -8.0 * amplitude * x * (1.0 - x**2) ** 3 / width, 0.0)
    return HarmonicMapProfile.from_samples(
        profile.ell, profile.n, r, profile.q + b, (profile.q_s + b_s) / r, alpha0=profile.alpha0
    )


@pytest.mark.parametrize("fixture", ["profile_l1_n1", "profile_l2_n1"])
def test_harmonic_map_minimizes_energy_in_its_degree(fixture, request):
    profile = request.getfixturevalue(fixture)
    rng = numpy.random.default_rng(31)
    ground = harmonic_energy(profile)
    for _ in range(25):
        center = float(rng.uniform(0.5, 3.0))
        width = float(rng.uniform(0.1, min(center, 1.5)))
        trial = _bumped(profile, float(rng.normal(scale=0.5)), center, width)
        assert trial.n == profile.n
        assert harmonic_energy(trial) >= ground - 1e-10
