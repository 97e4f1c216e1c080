import dataclasses

import numpy as np
import pytest

from orbitlab.errors import DegenerateGeodesic, TubeExit
from orbitlab.expansion import (build_bundle, compute_a, equation_residual,
                                order_cancellation, residual, solve_fT,
                                verify_alphabeta)
from orbitlab.harness import fit_slope
from orbitlab.loops import Loop, find_geodesic, manifold_loop

PI = np.pi
EPS = np.geomspace(1e-4, 1e-2, 7)


@pytest.fixture(scope="module")
def inner_bundle(tilted_torus):
    x0 = find_geodesic(tilted_torus, tilted_torus.seed_loop((1, 0), 256), (1, 0)).loop
    return build_bundle(tilted_torus, x0)


def _radii(bundle, eps, order=2):
    return np.linalg.norm(bundle.assemble(eps, order).samples, axis=1)


# ---------------------------------------------------------------- a, fT, g_n

def test_a_circle(circle, circle_x0):
    np.testing.assert_allclose(compute_a(circle, circle_x0), -4 * PI ** 2, rtol=1e-12)


def test_a_sphere_quartic(sphere):
    x0 = manifold_loop(sphere, sphere.seed_loop((), 256))
    np.testing.assert_allclose(compute_a(sphere, x0), -2 * PI ** 2, rtol=1e-12)


def test_a_meridian(torus, meridian):
    np.testing.assert_allclose(compute_a(torus, meridian), -4 * PI ** 2, rtol=1e-9)


def test_circle_bundle_terms(circle_bundle):
    assert np.max(np.abs(circle_bundle.fT)) <= 1e-12
    # spectral second derivatives amplify roundoff by about N^2
    np.testing.assert_allclose(circle_bundle.gn, 16 * PI ** 4, rtol=1e-8)


def test_meridian_bundle_terms(meridian_bundle):
    assert np.max(np.abs(meridian_bundle.fT)) <= 1e-8
    np.testing.assert_allclose(meridian_bundle.gn, 16 * PI ** 4, rtol=1e-8)


def test_sphere_is_degenerate(sphere):
    x0 = manifold_loop(sphere, sphere.seed_loop((), 256))
    with pytest.raises(DegenerateGeodesic):
        build_bundle(sphere, x0)


def test_meridian_needs_quotient(torus, meridian):
    with pytest.raises(DegenerateGeodesic):
        solve_fT(torus, meridian, compute_a(torus, meridian))


def test_fT_diagnostics(inner_bundle, meridian_bundle):
    for b in (inner_bundle, meridian_bundle):
        assert b.diagnostics["orthogonality"] <= 1e-8
        assert b.diagnostics["compatibility"] <= 1e-8
    # the tilted coefficient produces a genuine tangential correction
    assert np.max(np.abs(inner_bundle.fT)) > 1e-2


def test_gn_time_equivariance(tilted_torus, inner_bundle):
    shift = 37
    x0 = Loop(np.roll(inner_bundle.x0.samples, -shift, axis=0), True)
    other = build_bundle(tilted_torus, x0)
    scale = np.max(np.abs(inner_bundle.gn))
    assert np.ptp(inner_bundle.gn) > 1e-3 * scale
    np.testing.assert_allclose(other.gn, np.roll(inner_bundle.gn, -shift), atol=1e-9 * scale)
    np.testing.assert_allclose(other.a, np.roll(inner_bundle.a, -shift), atol=1e-9)


# ---------------------------------------------------------------- assemble

def test_assemble_eps_zero(circle_bundle):
    assert np.array_equal(circle_bundle.assemble(0.0).samples, circle_bundle.x0.samples)


@pytest.mark.parametrize("name", ["circle_bundle", "meridian_bundle"])
def test_assemble_matches_exact_radius_series(name, request):
    bundle = request.getfixturevalue(name)
    eps = 1e-3
    X = bundle.assemble(eps).samples
    foot, v = bundle.scenario.project(X)
    np.testing.assert_allclose(v, -4 * PI ** 2 * eps + 16 * PI ** 4 * eps ** 2, atol=1e-9)
    exact = 1 / (1 + 4 * PI ** 2 * eps) - 1
    # the remainder is the cubic Taylor term (4 pi^2 eps)^3
    assert np.max(np.abs(v - exact)) == pytest.approx((4 * PI ** 2 * eps) ** 3, rel=0.2)


def test_assemble_tube_exit(circle_bundle):
    with pytest.raises(TubeExit):
        circle_bundle.assemble(0.05)


# ---------------------------------------------------------------- residual rates

@pytest.mark.parametrize("order,slope", [(2, 2.0), (1, 1.0), (0, 0.0)])
def test_circle_residual_slopes(circle, circle_bundle, order, slope):
    pairs = [(e, residual(circle, circle_bundle.assemble(e, order), e).dual) for e in EPS]
    fit = fit_slope(pairs)
    assert fit.slope == pytest.approx(slope, abs=0.1)


def test_circle_residual_slope_wide_range():
    from orbitlab.geometry import make_scenario
    sc = make_scenario("circle", b0=-100.0)
    bundle = build_bundle(sc, manifold_loop(sc, sc.seed_loop((1,), 256)))
    fit = fit_slope([(e, residual(sc, bundle.assemble(e), e).dual)
                     for e in np.geomspace(1e-4, 1e-1, 7)])
    assert fit.slope == pytest.approx(2.0, abs=0.1) and fit.r2 >= 0.99


@pytest.mark.parametrize("name", ["meridian_bundle", "inner_bundle"])
def test_torus_residual_slopes(name, request):
    bundle = request.getfixturevalue(name)
    fit = fit_slope([(e, residual(bundle.scenario, bundle.assemble(e), e).dual) for e in EPS])
    assert fit.slope == pytest.approx(2.0, abs=0.2) and fit.r2 >= 0.99


def test_exact_orbit_residual_floor(circle):
    for eps in (1e-4, 1e-3, 1e-2):
        X = circle.seed_loop((1,), 256) / (1 + 4 * PI ** 2 * eps)
        F = equation_residual(circle, X, eps)
        assert np.max(np.abs(F)) <= 1e-9 * (2 * PI) ** 2


def test_order_cancellation(inner_bundle, circle_bundle):
    for b in (inner_bundle, circle_bundle):
        c0, c1 = order_cancellation(b)
        assert c0 <= 1e-8 and c1 <= 1e-8


# ---------------------------------------------------------------- alpha, beta

def test_alphabeta_circle(circle_bundle):
    rep = verify_alphabeta(circle_bundle)
    n = circle_bundle.normals
    np.testing.assert_allclose(rep.alpha, (-1.0 * -4 * PI ** 2) * n, rtol=1e-12)
    assert rep.alpha_error <= 1e-4 and rep.beta_error <= 1e-4
    # no tangential beta on the circle
    tangential = rep.beta - np.sum(rep.beta * n, axis=1)[:, None] * n
    assert np.max(np.abs(tangential)) <= 1e-9 * np.max(np.abs(rep.beta))


def test_alphabeta_tilted(inner_bundle):
    rep = verify_alphabeta(inner_bundle)
    assert rep.alpha_error <= 1e-4 and rep.beta_error <= 1e-4


def test_alphabeta_zero_offsets(circle_bundle):
    z = dataclasses.replace(circle_bundle, a=0 * circle_bundle.a, fT=0 * circle_bundle.fT,
                            gn=0 * circle_bundle.gn)
    rep = verify_alphabeta(z, eps_list=np.linspace(-1e-2, 1e-2, 16))
    assert np.max(np.abs(rep.alpha_fit)) <= 1e-25 and np.max(np.abs(rep.beta_fit)) <= 1e-22


def test_bundle_csv(tmp_path, meridian_bundle):
    meridian_bundle.write_csv(tmp_path / "b.csv")
    lines = (tmp_path / "b.csv").read_text().splitlines()
    assert lines[0] == "t,x0_1,x0_2,x0_3,a,fT_1,fT_2,fT_3,g_n"
    assert len(lines) == 257
