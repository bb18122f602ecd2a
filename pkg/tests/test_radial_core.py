import numpy as np
import pytest
from scipy import integrate

from aggsteady.radial_core import (
    HeightFunction,
    HeightTransform,
    RadialDensity,
    RadialGrid,
    chebyshev_mass_grid,
    density_from_height,
    height_from_density,
    linf,
    load_density,
    load_height,
    lp_norm,
    moment,
    quadratic_cap_density,
    random_density,
    save_density,
    save_height,
    support_radius,
    tent_density,
    uniform_density,
    unit_ball_volume,
)


def test_uniform_height_is_linear():
    rho = uniform_density(1.0, 1, 512)
    h = height_from_density(rho, chebyshev_mass_grid(256))
    np.testing.assert_allclose(h.h, h.s / 2, rtol=1e-12)
    np.testing.assert_allclose(h.hprime, 0.5, rtol=1e-12)


def test_tent_height_closed_form():
    rho = tent_density(1, 1.0, 4096)
    s = chebyshev_mass_grid(512)
    h = height_from_density(rho, s)
    np.testing.assert_allclose(h.h, 1 - np.sqrt(1 - s), rtol=1e-9, atol=1e-12)
    inner = s < 1 - 1e-4
    np.testing.assert_allclose(h.hprime[inner], 0.5 / np.sqrt(1 - s[inner]), rtol=1e-9)


def test_tent_mass_below_height_by_direct_quadrature():
    rho = tent_density(1, 1.0, 4096)
    s = np.array([0.1, 0.37, 0.8, 0.99])
    h = height_from_density(rho, s)
    for sj, hj in zip(s, h.h):
        # both half-lines of the line
        val = 2 * integrate.quad(lambda x: min(max(1 - x, 0.0), hj), 0, 1, points=[1 - hj])[0]
        assert val == pytest.approx(sj, abs=1e-10)


def test_hprime_limit_at_zero_is_inverse_support_measure():
    for n in (1, 2, 3):
        rho = random_density(np.random.default_rng(n), n, 4096)
        h = height_from_density(rho)
        measure = unit_ball_volume(n) * rho.support_radius ** n
        assert h.hprime_at_zero * measure == pytest.approx(1.0, rel=1e-12)
        # extrapolate the sampled h' to s = 0 from the first nodes
        head = h.s < 1e-5
        p = np.polyfit(h.s[head], h.hprime[head], 1)
        assert p[1] * measure == pytest.approx(1.0, rel=1e-4)


def test_height_invariants_hold():
    rho = random_density(np.random.default_rng(7), 2, 2048)
    h = height_from_density(rho)
    assert h.check() == []
    assert h.support_radius(2) == pytest.approx(rho.support_radius)


def test_rejects_bad_inputs():
    rho = tent_density(1, 1.0, 256)
    bumpy = rho.with_values(rho.values * (1 + 0.1 * np.sin(40 * rho.r)))
    with pytest.raises(ValueError):
        height_from_density(bumpy.normalized())
    with pytest.raises(ValueError):
        height_from_density(rho, np.array([0.0, 0.5]))
    with pytest.raises(ValueError):
        HeightFunction(np.array([0.2, 0.4]), np.array([0.1, 0.2]), np.array([1.0, -1.0]), 1.0, 1.0)


def test_uniform_recovered_from_linear_height():
    R, n = 1.5, 2
    s = chebyshev_mass_grid(128)
    c = 1 / (unit_ball_volume(n) * R ** n)
    h = HeightFunction(s, c * s, np.full_like(s, c), c, c)
    rho = density_from_height(h, n, num_cells=256)
    assert rho.support_radius == pytest.approx(R)
    inside = rho.r < R * (1 - 1e-12)
    np.testing.assert_allclose(rho.values[inside], c, rtol=1e-12)
    assert rho.values[-1] == 0.0


def test_two_layer_height_gives_two_step_density():
    # h' = 1/2 on (0, 1/2), h' = 2 on (1/2, 1): levels of radius 1 and 1/4 in n = 1
    s = (np.arange(2000) + 0.5) / 2000
    hp = np.where(s < 0.5, 0.5, 2.0)
    h = np.where(s < 0.5, 0.5 * s, 0.25 + 2.0 * (s - 0.5))
    rho = density_from_height(HeightFunction(s, h, hp, 0.5, 1.25), 1, num_cells=4000)
    r = rho.r
    # layer formula: rho(r) = sum over layers wider than r of h' ds
    np.testing.assert_allclose(rho.values[r < 0.2], 1.25, atol=2e-3)
    np.testing.assert_allclose(rho.values[(r > 0.3) & (r < 0.95)], 0.25, atol=2e-3)
    assert rho.mass == pytest.approx(1.0, abs=2e-3)


def test_tent_round_trip():
    rho = tent_density(1, 1.0, 4096)
    back = density_from_height(height_from_density(rho), 1, rho.grid)
    assert rho.grid.integrate(np.abs(back.values - rho.values)) < 1e-6


def test_norms_and_moments():
    uni = uniform_density(1.0, 1, 1024)
    assert lp_norm(uni, 2) ** 2 == pytest.approx(0.5, rel=1e-12)
    tent = tent_density(1, 1.0, 4096)
    assert moment(tent, 0) == pytest.approx(1.0, rel=1e-12)
    assert moment(tent, 1) == pytest.approx(1 / 3, rel=1e-6)
    assert linf(tent) == pytest.approx(1.0)
    cap = quadratic_cap_density(3, 2.0, 512, outer=3.0)
    # the interpolant vanishes at the first node past the last positive value
    assert 2.0 <= support_radius(cap) < 2.0 + cap.r[1]


def test_grid_integrates_shell_weighted_polynomials_exactly():
    for n in (1, 2, 3):
        grid = RadialGrid.uniform(1.0, n, 64)
        rho = RadialDensity(grid, 1 - grid.nodes)
        # linear profiles are integrated exactly by the hat weights
        exact = {1: 1.0, 2: 2 * np.pi / 6, 3: 4 * np.pi / 12}[n]
        assert rho.mass == pytest.approx(exact, rel=1e-12)


def test_transform_estimator_round_trip():
    rho = quadratic_cap_density(2, 1.0, 2048)
    est = HeightTransform(mass_grid_size=1024).fit(rho.normalized())
    table = est.transform(rho.normalized())
    assert table.shape == (1024, 3)
    back = est.inverse_transform(grid=rho.grid)
    assert rho.grid.integrate(np.abs(back.values - rho.normalized().values)) < 1e-5


def test_csv_round_trip(tmp_path):
    rho = random_density(np.random.default_rng(3), 2, 256)
    save_density(rho, tmp_path / "rho.csv")
    again = load_density(tmp_path / "rho.csv")
    assert again.dimension == 2
    np.testing.assert_array_equal(again.values, rho.values)
    h = height_from_density(rho, chebyshev_mass_grid(64))
    save_height(h, tmp_path / "h.csv", 2)
    h2, n = load_height(tmp_path / "h.csv")
    assert n == 2
    np.testing.assert_array_equal(h2.h, h.h)
