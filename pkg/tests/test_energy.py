import numpy as np
import pytest

from aggsteady.energy import (
    certify_convexity,
    classify_1d,
    dilate,
    dilation_scan,
    discriminant_1d,
    endpoint_slopes,
    energy_on_curve,
    entropy,
    entropy_from_height,
    free_energy,
    interaction,
    interaction_from_height,
    interaction_on_curve,
    interaction_on_curve_1d,
    pair_integrand_1d,
    pair_second_derivative_1d,
    quadratic_form_discriminant_1d,
)
from aggsteady.interpolation import InterpolationCurve
from aggsteady.potentials import constant, quadratic, riesz, step
from aggsteady.radial_core import (
    height_from_density,
    quadratic_cap_density,
    random_density,
    tent_density,
    uniform_density,
)


def test_entropy_of_the_uniform_density():
    rho = uniform_density(1.0, 1, 2048)
    assert entropy(rho, 2) == pytest.approx(0.5, rel=1e-12)
    assert entropy_from_height(height_from_density(rho), 2) == pytest.approx(0.5, rel=1e-10)
    with pytest.raises(ValueError):
        entropy(rho, 1.0)


@pytest.mark.parametrize("m", [1.5, 2.0, 3.0])
def test_entropy_routes_agree(m):
    rng = np.random.default_rng(int(10 * m))
    for n in (1, 2, 3):
        rho = random_density(rng, n, 4096)
        assert entropy_from_height(height_from_density(rho), m) == pytest.approx(entropy(rho, m),
                                                                               rel=1e-6)


def test_quadratic_interaction_is_half_the_variance():
    rho = uniform_density(1.0, 1, 2048)
    assert interaction(rho, quadratic()) == pytest.approx(1 / 6, rel=1e-6)
    h = height_from_density(rho)
    assert interaction_from_height(h, 1, quadratic()) == pytest.approx(1 / 6, rel=1e-6)
    # in n dimensions: E|X|^2 = n R^2 / (n + 2) for the uniform ball
    for n in (2, 3):
        rho = uniform_density(1.0, n, 1024)
        assert interaction(rho, quadratic()) == pytest.approx(n / (2 * (n + 2)), rel=1e-4)


def test_step_interaction_on_the_uniform_interval():
    rho = uniform_density(1.0, 1, 2048)
    curve = InterpolationCurve.from_densities(rho, rho)
    for a in (0.3, 1.0, 1.7):
        exact = 0.5 * (1 - a / 2) ** 2
        assert interaction_on_curve_1d(curve, 0.5, a).value == pytest.approx(exact, rel=1e-6)
        # the grid kernel sees a jump, so the physical route is first order in dx
        errs = [abs(interaction(uniform_density(1.0, 1, N), step(a), max_nodes=N + 1) - exact)
                for N in (512, 2048)]
        assert errs[1] < 1.0 / 2048
        assert errs[1] < errs[0] / 3
    # only the endpoint pair sits at distance exactly 2R, where W_a = 1
    dx = rho.grid.nodes[1]
    assert 0.0 <= interaction(rho, step(2.0)) < dx * dx
    assert interaction(rho, step(2.0 + 2 * dx)) == 0.0
    assert interaction_on_curve_1d(curve, 0.5, 2.5).value == 0.0


def test_one_dimensional_cases():
    # half widths 1/(2f) and 1/(2g)
    assert classify_1d(1.0, 1.0, 5.0) == 1
    assert classify_1d(10.0, 0.1, 0.5) == 2
    assert classify_1d(1.0, 1.0, 0.5) == 3
    # case 2 is affine in the heights: zero second derivative
    f, g = 0.1 + np.linspace(0, 0.01, 5), 10.0
    vals = pair_integrand_1d(f, g, 0.5)
    assert np.max(np.abs(np.diff(vals, 2))) < 1e-14
    assert pair_second_derivative_1d(0.1, 10.0, 1.0, 1.0, 0.5) == 0.0


def test_case_three_second_derivative_and_discriminant():
    rng = np.random.default_rng(3)
    a = 0.6
    f, g = rng.uniform(0.5, 1.5, (2, 200))
    keep = classify_1d(f, g, a) == 3
    f, g = f[keep], g[keep]
    np.testing.assert_allclose(discriminant_1d(f, g, a), quadratic_form_discriminant_1d(f, g, a),
                               rtol=1e-9, atol=1e-12)
    assert np.all(discriminant_1d(f, g, a) < 0)
    df, dg, dt = 0.3, -0.2, 1e-4
    num = (pair_integrand_1d(f + df * dt, g + dg * dt, a) - 2 * pair_integrand_1d(f, g, a)
           + pair_integrand_1d(f - df * dt, g - dg * dt, a)) / dt ** 2
    np.testing.assert_allclose(pair_second_derivative_1d(f, g, df, dg, a), num, rtol=1e-4, atol=1e-6)


def test_curve_energy_matches_physical_route():
    a, b = tent_density(2, 1.0, 1024), quadratic_cap_density(2, 1.5, 1024)
    curve = InterpolationCurve.from_densities(a, b)
    W = riesz(1)
    for t, rho in ((0.0, a), (1.0, b)):
        report = energy_on_curve(curve, t, 2.0, W)
        assert report.S == pytest.approx(entropy(rho, 2.0), rel=1e-5)
        assert report.I == pytest.approx(interaction(rho, W), rel=1e-4)
    both = interaction_on_curve(curve, 0.5, [riesz(1), quadratic()])
    assert both.shape == (2,)
    assert free_energy(a, 2.0, W).as_dict()["E"] == pytest.approx(entropy(a, 2) + interaction(a, W))


def test_certificate_on_identical_endpoints():
    rho = tent_density(1, 1.0, 512)
    cert = certify_convexity(InterpolationCurve.from_densities(rho, rho), 2.0, quadratic(), tgrid=5)
    assert cert.degenerate and cert.passed
    assert "identical" in cert.summary


def test_certificate_passes_for_quadratic_diffusion():
    curve = InterpolationCurve.from_densities(tent_density(1, 1.0, 1024), tent_density(1, 2.0, 1024))
    cert = certify_convexity(curve, 2.0, quadratic(), tgrid=11)
    assert cert.passed and cert.summary.startswith("PASS")
    assert len(cert.rows()) == 11
    assert np.all(cert.second_differences("I") > 0)


def test_endpoint_slopes_away_from_a_critical_point():
    curve = InterpolationCurve.from_densities(tent_density(1, 1.0, 1024), tent_density(1, 2.0, 1024))
    slopes, _ = endpoint_slopes(curve, 2.0, quadratic())
    # the tent is not a steady state, so the slope stays bounded away from zero
    assert slopes.min() > 1e-2
    assert np.ptp(slopes) / slopes.max() < 0.05


def test_dilation_scaling():
    rho = tent_density(1, 1.0, 2048)
    assert dilate(rho, 1.0).mass == pytest.approx(rho.mass)
    assert dilate(rho, 2.0).mass == pytest.approx(1.0, rel=1e-10)
    assert entropy(dilate(rho, 0.5), 2.0) == pytest.approx(0.5 * entropy(rho, 2.0), rel=1e-12)
    # entropy alone: E scales as lambda^(n (m - 1))
    for n in (1, 3):
        rho = tent_density(n, 1.0, 1024)
        table = dilation_scan(rho, 1.5, constant(), np.geomspace(1e-3, 1e-1, 6))
        assert table.small_scale_exponent() == pytest.approx(0.5 * n, rel=0.05)
