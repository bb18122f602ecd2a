import json

import numpy as np
import pytest

from aggsteady.energy import interaction
from aggsteady.potentials import (
    convolve,
    cutoff_eta,
    cutoff_eta_prime,
    eval_wprime,
    forge_tail,
    parse_potential,
    potential_from_dict,
    quadratic,
    riesz,
    save_potential,
    smooth_tabulated,
    step,
    step_decompose,
    tabulated,
)
from aggsteady.radial_core import RadialGrid, quadratic_cap_density, tent_density
from aggsteady.steady_state import solve_steady


def test_riesz_derivatives():
    assert eval_wprime(riesz(2), 3.0) == pytest.approx(3.0)
    assert eval_wprime(riesz(0), 2.0) == pytest.approx(0.5)
    assert riesz(0).value(np.e) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        eval_wprime(step(1.0), 0.5)
    with pytest.raises(ValueError):
        eval_wprime(riesz(1), 0.0)


def test_cutoff_eta_shape():
    assert cutoff_eta(-1.0) == 0.0
    assert cutoff_eta(2.0) == 1.0
    x = np.linspace(0, 1, 200001)
    slope = np.gradient(cutoff_eta(x), x)
    assert slope.max() < 2.0
    assert slope.max() == pytest.approx(15 / 8, rel=1e-6)
    assert np.all(np.diff(cutoff_eta(x)) > 0)
    np.testing.assert_allclose(cutoff_eta_prime(x[1:-1]), slope[1:-1], atol=1e-4)


def test_forge_tail_matches_base_and_slope():
    R, eps = 2.0, 0.1
    W = forge_tail(quadratic(), R, eps)
    r = np.linspace(0.01, 2 * R, 500)
    np.testing.assert_array_equal(W.wprime(r), quadratic().wprime(r))
    np.testing.assert_allclose(W.value(r), quadratic().value(r), rtol=1e-14)
    assert W.wprime(R) == quadratic().wprime(R)
    assert W.wprime(4 * R) == eps
    far = np.linspace(3 * R, 10 * R, 100)
    np.testing.assert_array_equal(W.w1prime(far), 0.0)
    np.testing.assert_array_equal(W.w2prime(far[1:]), eps)


def test_forge_tail_derivative_sign_and_continuity():
    R, eps = 1.5, 0.05
    W = forge_tail(quadratic(), R, eps)
    r = np.linspace(1e-3, 5 * R, 20001)
    wp = W.wprime(r)
    assert np.all(wp >= 0)
    assert np.all(wp[r <= 2 * R] > 0) and np.all(wp[r >= 3 * R] > 0)
    for edge in (2 * R, 3 * R):
        h = 1e-12 * edge
        assert abs(W.wprime(edge + h) - W.wprime(edge - h)) < 1e-10
    # value is the integral of the derivative
    a, b = 2.3 * R, 4.1 * R
    x = np.linspace(a, b, 40001)
    assert W.value(b) - W.value(a) == pytest.approx(np.trapezoid(W.wprime(x), x), rel=1e-8)


def test_forge_tail_rejects_bad_slopes():
    for eps in (0.0, 1.0, -0.5):
        with pytest.raises(ValueError):
            forge_tail(quadratic(), 2.0, eps)
    with pytest.raises(ValueError):
        forge_tail(quadratic(), -1.0, 0.1)


def test_near_and_tail_parts_add_up():
    W = forge_tail(riesz(1), 2.0, 0.2)
    r = np.linspace(0.1, 15.0, 300)
    shift = W.value(r[0]) - W.w1_value(r[0]) - W.w2_value(r[0])
    np.testing.assert_allclose(W.w1_value(r) + W.w2_value(r) + shift, W.value(r), atol=1e-12)
    assert W.w1_value(6.0) == 0.0


@pytest.mark.parametrize("n", [1, 2, 3])
def test_tail_laplacian_literal_bound(n):
    # the stated estimate n eps / R; fails for n = 1, 2 (see notes)
    R, eps = 2.0, 0.1
    W = forge_tail(quadratic(), R, eps)
    r = np.linspace(2 * R, 4 * R, 20001)
    assert np.max(np.abs(W.w2_laplacian(r, n))) <= n * eps / R


@pytest.mark.parametrize("n", [1, 2, 3])
def test_tail_laplacian_chain_rule_bound(n):
    R, eps = 2.0, 0.1
    W = forge_tail(quadratic(), R, eps)
    r = np.linspace(2 * R, 4 * R, 20001)
    bound = eps * (15 / 8 / R + (n - 1) / (2 * R))
    assert np.max(np.abs(W.w2_laplacian(r, n))) <= bound * (1 + 1e-12)
    # and against a finite-difference Laplacian of w2
    w2 = W.w2_value(r)
    dr = r[1] - r[0]
    lap = np.gradient(np.gradient(w2, dr), dr) + (n - 1) / r * np.gradient(w2, dr)
    inner = slice(5, -5)
    np.testing.assert_allclose(lap[inner], W.w2_laplacian(r, n)[inner], atol=1e-5)


def test_step_decomposition_reconstructs_quadratic():
    dec = step_decompose(quadratic(), 2.0, num=2000)
    r = np.linspace(0, 2, 777)
    assert np.max(np.abs(dec.reconstruct(r) - quadratic().value(r))) < 1e-5


def test_step_decomposition_converges_at_second_order():
    W = smooth_tabulated()
    r = np.linspace(0, 5, 333)
    errs = [np.max(np.abs(step_decompose(W, 5.0, num).reconstruct(r) - W.value(r)))
            for num in (101, 201, 401)]
    rates = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(rates > 1.8)


def test_step_decomposition_of_a_step_is_a_point_mass():
    dec = step_decompose(step(0.7), 3.0)
    assert dec.point_mass
    np.testing.assert_array_equal(dec.nodes, [0.7])
    np.testing.assert_array_equal(dec.weights, [1.0])


def test_singular_potentials_need_truncation():
    with pytest.raises(ValueError):
        step_decompose(riesz(-0.5), 2.0)
    dec = step_decompose(riesz(-0.5), 2.0, num=4000, lower=0.05)
    r = np.linspace(0.2, 2.0, 50)
    np.testing.assert_allclose(dec.reconstruct(r), riesz(-0.5).value(r), rtol=1e-4)


def test_interaction_is_linear_in_the_step_decomposition():
    rho = tent_density(1, 1.0, 1024)
    W = riesz(2)
    dec = step_decompose(W, 2.0, num=200)
    steps = np.array([interaction(rho, step(a)) if a > 0 else 0.5 for a in dec.nodes])
    combined = float(np.dot(dec.weights, steps)) + 0.5 * dec.offset
    assert combined == pytest.approx(interaction(rho, W), rel=1e-4)


def test_step_energy_vanishes_for_long_steps():
    rho = quadratic_cap_density(2, 1.0, 256)
    assert interaction(rho, step(2.0 * rho.support_radius)) == pytest.approx(0.0, abs=1e-14)


def test_convolution_against_brute_force_in_3d():
    rho = quadratic_cap_density(3, 1.0, 200)
    phi = convolve(rho, riesz(1))
    # tensor Gauss quadrature over the unit ball in spherical coordinates
    x, wx = np.polynomial.legendre.leggauss(200)
    rr, wr = 0.5 * (x + 1), 0.5 * wx
    mu, wmu = np.polynomial.legendre.leggauss(200)
    dens = 15 / (8 * np.pi) * (1 - rr ** 2)
    for node in (0, 80, 180):
        point = rho.r[node]
        dist = np.sqrt(np.maximum(rr[:, None] ** 2 + point ** 2 - 2 * rr[:, None] * point * mu, 0))
        val = 2 * np.pi * np.sum(wr[:, None] * wmu * (rr ** 2 * dens)[:, None] * dist)
        assert phi[node] == pytest.approx(val, rel=1e-4)


def test_attractive_tables_use_monotone_interpolation():
    r = np.linspace(0, 4, 9)
    W = tabulated(r, np.sqrt(r) + 0.01)
    x = np.linspace(1e-3, 6, 1000)
    assert np.all(W.wprime(x) > 0)
    np.testing.assert_allclose(W.wprime(r[1:]), np.sqrt(r[1:]) + 0.01)


def test_shifting_the_potential_leaves_the_steady_state_unchanged():
    base = solve_steady(riesz(1), 2.0, 1)
    shifted = solve_steady(riesz(1).shifted(7.5), 2.0, 1)
    grid = base.density.grid
    assert grid.integrate(np.abs(base.density.values
                                 - shifted.density.evaluate(grid.nodes))) < 1e-8
    assert shifted.C - base.C == pytest.approx(7.5, abs=1e-8)


def test_parse_and_serialise(tmp_path):
    W = parse_potential("riesz:k=0.5")
    assert W.kind == "riesz" and W.k == 0.5
    M = forge_tail(quadratic(), 2.0, 0.25)
    save_potential(M, tmp_path / "w.json")
    again = parse_potential(str(tmp_path / "w.json"))
    assert again.key() == M.key()
    inline = parse_potential(json.dumps(M.describe()))
    r = np.linspace(0.1, 10, 50)
    np.testing.assert_array_equal(inline.wprime(r), M.wprime(r))
    assert potential_from_dict({"kind": "tabulated"}).kind == "tabulated"
    with pytest.raises(ValueError):
        parse_potential("banana")


def test_convolution_grid_is_shared_by_cache():
    grid = RadialGrid.uniform(2.0, 2, 128)
    assert grid.key() == RadialGrid.uniform(2.0, 2, 128).key()
