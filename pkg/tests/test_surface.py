import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from barymorse import build_surface
from barymorse.surface import (
    conformal_factor,
    cutoff,
    gauss_curvature,
    green,
    green_pairing,
    green_regular_part,
    integrate,
    robin_constant,
    robin_extrapolated,
    solve_poisson,
)

from oracles import SPHERE_ROBIN, TORUS_ROBIN, sphere_green, torus_green

# Frozen from the closed-form series oracle (agrees with two truncations to 1e-14).
TORUS_G_HALF = -0.0551589000381629


def test_torus_first_eigenvalue(torus):
    assert math.isclose(float(np.min(torus.eigenvalues[1:])), 4 * math.pi**2, rel_tol=1e-14)


def test_area_is_one(torus, sphere):
    assert abs(integrate(torus, np.ones(torus.shape)) - 1) < 1e-12
    assert abs(integrate(sphere, np.ones(sphere.shape)) - 1) < 1e-12


def test_sphere_curvature_and_gauss_bonnet(sphere):
    x = sphere.grid_points()
    K = gauss_curvature(sphere, x)
    assert np.allclose(K, 4 * math.pi)
    assert abs(integrate(sphere, K.reshape(sphere.shape)) - 4 * math.pi) < 1e-10


def test_torus_is_flat(torus):
    assert np.all(gauss_curvature(torus, torus.grid_points()) == 0)


@pytest.mark.parametrize("kind,N,eta", [("torus", 32, None), ("torus", 100, None), ("sphere", 16, None), ("torus", 64, 0.07), ("cube", 64, None)])
def test_build_rejects_bad_input(kind, N, eta):
    with pytest.raises(ValueError):
        build_surface(kind, N, eta)


def test_quadrature_kills_eigenmodes(torus, sphere):
    for s in (torus, sphere):
        x = s.grid_points()
        for _, e in s.eigenmodes(12):
            assert abs(integrate(s, e(x).reshape(s.shape))) < 1e-12


# -- cut-off -----------------------------------------------------------------


def test_cutoff_values():
    eta = 0.05
    assert cutoff(eta / 2, eta) == pytest.approx(eta / 2, abs=0)
    assert cutoff(3 * eta, eta) == pytest.approx(2 * eta, abs=0)


def test_cutoff_monotone_and_c2():
    eta = 0.05
    t = np.linspace(0, 3 * eta, 3001)
    v = cutoff(t, eta)
    assert np.all(np.diff(v) >= 0)
    for e in (eta, 2 * eta):
        for d in (0, 1, 2):
            lo, hi = cutoff(e - 1e-12, eta, d), cutoff(e + 1e-12, eta, d)
            assert abs(lo - hi) < 1e-6


def test_cutoff_derivatives_match_differences():
    eta = 0.05
    t = np.linspace(1.01 * eta, 1.99 * eta, 50)
    h = 1e-6
    assert np.allclose(cutoff(t, eta, 1), (cutoff(t + h, eta) - cutoff(t - h, eta)) / (2 * h), atol=1e-7)
    assert np.allclose(cutoff(t, eta, 2), (cutoff(t + h, eta, 1) - cutoff(t - h, eta, 1)) / (2 * h), atol=1e-5)


# -- Green's function --------------------------------------------------------


def test_torus_green_value(torus):
    v = float(green(torus, [0.0, 0.0], np.array([[0.5, 0.5]]))[0])
    assert abs(torus_green(0.5, 0.5, 20) - torus_green(0.5, 0.5, 40)) < 1e-8
    assert abs(v - torus_green(0.5, 0.5)) < 1e-12
    assert v == pytest.approx(TORUS_G_HALF, abs=1e-13)


@pytest.mark.parametrize("x", [(0.3, 0.2), (0.1, 0.45), (0.77, 0.61), (0.02, 0.9)])
def test_torus_green_against_series(torus, x):
    assert abs(float(green(torus, [0.0, 0.0], np.array([x]))[0]) - torus_green(*x)) < 1e-10


def test_torus_green_ewald_matches_series_method(torus):
    rng = np.random.default_rng(3)
    x = rng.random((5, 2))
    assert np.allclose(green(torus, [0.2, 0.7], x), green(torus, [0.2, 0.7], x, method="series"), atol=1e-8)


def test_sphere_green_against_oracle(sphere):
    rng = np.random.default_rng(4)
    a = sphere.random_points(rng, 1)[0]
    x = sphere.random_points(rng, 6)
    assert np.allclose(green(sphere, a, x), sphere_green(a, x), atol=1e-12)


@pytest.mark.parametrize("fixture", ["torus", "sphere"])
def test_green_symmetric(fixture, request):
    s = request.getfixturevalue(fixture)
    rng = np.random.default_rng(5)
    P, Q = s.random_points(rng, 10), s.random_points(rng, 10)
    for p, q in zip(P, Q):
        assert abs(float(green(s, p, q[None])[0]) - float(green(s, q, p[None])[0])) < 1e-10


def test_torus_green_mean_zero(torus):
    a = np.array([0.1234, 0.5678])
    assert abs(green_pairing(torus, a, lambda x: np.ones(len(x)))) < 1e-10


def test_sphere_green_mean_zero():
    s = build_surface("sphere", 128)
    a = s.random_points(np.random.default_rng(6), 1)[0]
    assert abs(green_pairing(s, a, lambda x: np.ones(len(x)))) < 1e-10


def test_green_pairing_pole_on_node(torus):
    a = torus.grid_points().reshape(-1, 2)[12345]
    assert abs(green_pairing(torus, a, lambda x: np.ones(len(x)))) < 1e-10


def test_green_spectral_residual(torus):
    a = np.array([0.1234, 0.5678])
    for mu, e in torus.eigenmodes(20):
        assert abs(green_pairing(torus, a, lambda x: mu * e(x)) - float(e(a[None])[0])) < 1e-8


def test_naive_quadrature_misses_the_pole(torus):
    # plain grid sums of the singular kernel carry an O(h^2 ln h) error
    a = np.array([0.1234, 0.5678])
    assert abs(integrate(torus, torus.green_field(a))) > 1e-8


def test_robin_constants(torus, sphere):
    assert robin_constant(torus) == pytest.approx(TORUS_ROBIN, abs=1e-13)
    assert robin_constant(sphere) == pytest.approx(SPHERE_ROBIN, abs=1e-13)


def test_torus_regular_part_homogeneous(torus):
    rng = np.random.default_rng(7)
    vals = [float(green_regular_part(torus, a, a[None])[0]) for a in torus.random_points(rng, 10)]
    assert np.ptp(vals) < 1e-8
    assert np.mean(vals) == pytest.approx(TORUS_ROBIN, abs=1e-8)


def test_sphere_regular_part_homogeneous(sphere):
    rng = np.random.default_rng(8)
    vals = [float(green_regular_part(sphere, a, a[None])[0]) for a in sphere.random_points(rng, 6)]
    assert np.ptp(vals) < 1e-6
    assert np.mean(vals) == pytest.approx(SPHERE_ROBIN, abs=1e-6)


@pytest.mark.parametrize("fixture", ["torus", "sphere"])
def test_regular_part_extrapolation_order(fixture, request):
    s = request.getfixturevalue(fixture)
    a = s.random_points(np.random.default_rng(9), 1)[0]
    _, diag = robin_extrapolated(s, a)
    orders = [o for o in diag["observed_orders"] if np.isfinite(o)]
    samples = np.asarray(diag["samples"])
    # either the samples are flat to roundoff or they converge at order >= 2
    assert np.ptp(samples) < 1e-12 or min(orders) >= 2 - 1e-3


# -- Poisson ---------------------------------------------------------------


def test_poisson_zero(torus):
    assert np.all(solve_poisson(torus, np.zeros(torus.shape)) == 0)


@pytest.mark.parametrize("fixture", ["torus", "sphere"])
def test_poisson_eigenfunctions(fixture, request):
    s = request.getfixturevalue(fixture)
    x = s.grid_points()
    (m1, e1), (m2, e2) = s.eigenmodes(5)[0], s.eigenmodes(5)[4]
    f = (e1(x) + 2 * e2(x)).reshape(s.shape)
    u = solve_poisson(s, f)
    assert np.allclose(u, (e1(x) / m1 + 2 * e2(x) / m2).reshape(s.shape), atol=1e-12)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_poisson_inverts_laplacian(seed):
    s = build_surface("torus", 64)
    rng = np.random.default_rng(seed)
    c = np.zeros(s.shape, dtype=complex)
    c[:6, :6] = rng.normal(size=(6, 6)) + 1j * rng.normal(size=(6, 6))
    u = np.real(np.fft.ifft2(c))
    u -= s.mean(u)
    assert np.allclose(solve_poisson(s, s.neg_laplacian(u)), u, atol=1e-10 * max(1.0, np.max(np.abs(u))))


# -- conformal factor ------------------------------------------------------


def test_torus_conformal_factor_zero(torus):
    x = torus.grid_points()[:100]
    assert np.all(conformal_factor(torus, [0.3, 0.3], x) == 0)


def test_sphere_conformal_factor_normalised(sphere):
    a = sphere.random_points(np.random.default_rng(10), 1)[0]
    h = 1e-5
    assert abs(float(conformal_factor(sphere, a, a[None])[0])) < 1e-14
    grad = [
        (float(conformal_factor(sphere, a, sphere.chart_inverse(a, np.array([[h * e[0], h * e[1]]])))[0])
         - float(conformal_factor(sphere, a, sphere.chart_inverse(a, np.array([[-h * e[0], -h * e[1]]])))[0])) / (2 * h)
        for e in ((1, 0), (0, 1))
    ]
    assert max(map(abs, grad)) < 1e-8


def test_sphere_conformal_factor_pde(sphere):
    a = sphere.random_points(np.random.default_rng(11), 1)[0]
    h = 1e-3
    eta0 = sphere.eta0
    u = lambda y: float(conformal_factor(sphere, a, sphere.chart_inverse(a, np.atleast_2d(y)))[0])
    for r, th in [(0.2 * eta0, 0.3), (0.5 * eta0, 2.0), (0.9 * eta0, 4.0)]:
        y = np.array([r * math.cos(th), r * math.sin(th)])
        lap = sum(
            (-u(y + 2 * h * e) + 16 * u(y + h * e) - 30 * u(y) + 16 * u(y - h * e) - u(y - 2 * h * e)) / (12 * h * h)
            for e in (np.array([1.0, 0.0]), np.array([0.0, 1.0]))
        )
        assert abs(lap - 2 * 4 * math.pi * math.exp(-u(y))) < 1e-6
