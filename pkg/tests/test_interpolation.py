import numpy as np
import pytest

from aggsteady.interpolation import (
    InterpolationCurve,
    PlateauError,
    continuity_residual,
    curve_at,
    density_values,
    kinetic_energy,
    quantile_distance_1d,
    solve_srt,
    transport_field,
    velocity_ratio_bound,
    wasserstein_lipschitz_bound,
)
from aggsteady.radial_core import (
    chebyshev_mass_grid,
    height_from_density,
    random_density,
    tent_density,
    uniform_density,
    unit_ball_volume,
)


@pytest.fixture(scope="module")
def tent_pair():
    return InterpolationCurve.from_densities(tent_density(1, 1.0, 2048), tent_density(1, 2.0, 2048))


def test_identical_endpoints_give_a_constant_curve():
    rho = random_density(np.random.default_rng(0), 2, 1024)
    curve = InterpolationCurve.from_densities(rho, rho)
    assert curve.is_degenerate()
    for t in (0.0, 0.3, 1.0):
        rt = curve_at(curve, t, grid=rho.grid)
        assert rho.grid.integrate(np.abs(rt.values - rho.values)) < 1e-6
    assert transport_field(curve, 0.3, 0.5) == 0.0
    b = wasserstein_lipschitz_bound(curve, 0.1, 0.9)
    assert b.kinetic == 0.0 and b.crude == 0.0


def test_uniform_endpoints_stay_uniform():
    for n in (1, 2, 3):
        curve = InterpolationCurve.from_densities(uniform_density(1.0, n, 512),
                                                  uniform_density(2.0, n, 512))
        for t in (0.25, 0.5, 0.9):
            Rt = curve.support_radius(t)
            rho = curve.density_at(t, num_cells=256)
            assert rho.support_radius == pytest.approx(Rt, rel=1e-12)
            inside = rho.r < Rt * (1 - 1e-9)
            np.testing.assert_allclose(rho.values[inside], 1 / (unit_ball_volume(n) * Rt ** n),
                                       rtol=1e-10)


def test_support_radius_formula():
    curve = InterpolationCurve.from_densities(uniform_density(1.0, 1, 64), uniform_density(2.0, 1, 64))
    assert curve.support_radius(0.5) == pytest.approx(4 / 3)
    for n in (1, 2, 3):
        rng = np.random.default_rng(10 + n)
        for _ in range(20):
            a, b = random_density(rng, n, 512), random_density(rng, n, 512)
            curve = InterpolationCurve.from_densities(a, b)
            t = rng.uniform()
            expected = ((1 - t) * a.support_radius ** -n + t * b.support_radius ** -n) ** (-1 / n)
            assert curve.density_at(t, num_cells=128).support_radius == pytest.approx(expected, rel=1e-12)


def test_curve_densities_are_valid():
    rng = np.random.default_rng(5)
    for n in (1, 2, 3):
        curve = InterpolationCurve.from_densities(random_density(rng, n, 1024),
                                                  random_density(rng, n, 1024))
        for t in np.linspace(0, 1, 6):
            rho = curve_at(curve, t)
            assert rho.is_radially_decreasing()
            assert abs(rho.mass - 1) < 1e-8


def test_mismatched_mass_grids_are_rejected():
    rho = tent_density(1)
    a = height_from_density(rho, chebyshev_mass_grid(64))
    b = height_from_density(rho, chebyshev_mass_grid(65))
    with pytest.raises(ValueError):
        InterpolationCurve(a, b, 1)
    # the explicit constructor re-samples instead
    assert InterpolationCurve.from_heights(a, b, 1).mass_grid.size == 64


def test_plateau_endpoints_reject_mass_coordinate():
    curve = InterpolationCurve.from_densities(uniform_density(1.0, 1, 64), uniform_density(2.0, 1, 64))
    with pytest.raises(PlateauError):
        solve_srt(curve, 0.5, 0.5)


def test_mass_coordinate_near_the_origin(tent_pair):
    s = [solve_srt(tent_pair, r, 0.5) for r in (1e-2, 1e-4, 1e-6)]
    assert np.all(np.diff(s) > 0)
    assert s[-1] > 1 - 1e-5


def test_mass_coordinate_against_level_set_inversion(tent_pair):
    t = 0.4
    rho_t = tent_pair.density_at(t, num_cells=8192)
    for r in (0.2, 0.5, 0.9):
        s = solve_srt(tent_pair, r, t)
        # mass below height rho_t(r): int min(rho_t, h) over the line
        h = density_values(tent_pair, t, r)[0]
        v = np.minimum(rho_t.values, h)
        assert rho_t.grid.integrate(v) == pytest.approx(s, abs=1e-6)
        assert h == pytest.approx(float(rho_t.evaluate(r)), abs=1e-6)


def test_transport_points_outward_when_the_target_is_flatter(tent_pair):
    r = np.linspace(0.05, 0.9, 20)
    v = transport_field(tent_pair, r, 0.5)
    assert np.all(v > 0)
    assert np.all(np.abs(v) / r <= velocity_ratio_bound(tent_pair) * (1 + 1e-9))


def test_continuity_equation_residual_is_first_order():
    a = random_density(np.random.default_rng(1), 2, 2048)
    b = random_density(np.random.default_rng(2), 2, 2048)
    curve = InterpolationCurve.from_densities(a, b)
    res = np.array([continuity_residual(curve, 0.5, num_cells=N) for N in (128, 512, 2048)])
    # refining the radial grid by 4 should cut the residual by about 4
    rates = np.log(res[:-1] / res[1:]) / np.log(4)
    assert np.all(rates > 0.9)
    assert res[-1] < 1e-2


def test_lipschitz_bound_dominates_the_exact_distance(tent_pair):
    assert wasserstein_lipschitz_bound(tent_pair, 0.3, 0.3).kinetic == 0.0
    rng = np.random.default_rng(4)
    for _ in range(4):
        t1, t2 = np.sort(rng.uniform(0, 1, 2))
        exact = quantile_distance_1d(tent_pair.density_at(t1), tent_pair.density_at(t2))
        bound = wasserstein_lipschitz_bound(tent_pair, t1, t2, num_times=5, num_cells=512)
        assert exact <= bound.kinetic * (1 + 1e-3)
        assert bound.kinetic <= bound.crude


def test_quantile_distance_of_dilations():
    # even densities on the line: d2(rho, rho_2) = sqrt(second moment) for a dilation by 2
    a = tent_density(1, 1.0, 4096)
    b = tent_density(1, 2.0, 4096)
    assert quantile_distance_1d(a, b) == pytest.approx(np.sqrt(1 / 6), rel=1e-6)


def test_kinetic_energy_is_finite(tent_pair):
    assert 0 < kinetic_energy(tent_pair, 0.5) < np.inf
