import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from orbitlab.errors import DegenerateNormal, NondegeneracyViolation, TubeExit
from orbitlab.geometry import make_scenario, scenario_bounds, tangent_basis


def _sympy_potential(name, b0, b_grad, cubic, R=2.0, r=1.0):
    xs = sp.symbols(f"x1:{4 if name != 'circle' else 3}", real=True)
    if name == "torus":
        d = sp.sqrt((sp.sqrt(xs[0] ** 2 + xs[1] ** 2) - R) ** 2 + xs[2] ** 2) - r
    else:
        d = sp.sqrt(sum(x ** 2 for x in xs)) - 1
    beta = b0 + sum(g * x for g, x in zip(b_grad, xs))
    return xs, sp.Rational(1, 2) * beta * d ** 2 + cubic * d ** 3


def _sympy_jet(xs, V):
    n = len(xs)
    grad = [sp.diff(V, x) for x in xs]
    hess = [[sp.diff(g, y) for y in xs] for g in grad]
    third = [[[sp.diff(h, z) for z in xs] for h in row] for row in hess]
    return [sp.lambdify(xs, e, "numpy") for e in (V, grad, hess, third)], n


@pytest.mark.parametrize("name,b_grad", [
    ("circle", (0.1, -0.2)),
    ("sphere", (0.1, 0.0, 0.2)),
    ("torus", (0.05, 0.02, 0.1)),
])
def test_potential_jet_matches_symbolic(name, b_grad, rng):
    sc = make_scenario(name, b0=-1.3, b_grad=b_grad, cubic=0.7)
    xs, V = _sympy_potential(name, -1.3, b_grad, 0.7)
    fns, n = _sympy_jet(xs, V)
    X = sc.sample_manifold(100)[:25]
    X = X + 0.2 * sc.tube_radius * rng.normal(size=X.shape)
    f, g, h, t = sc.potential_jet(X)
    for j, x in enumerate(X):
        ref = [np.asarray(fn(*x), dtype=float) for fn in fns]
        assert f[j] == pytest.approx(float(ref[0]), rel=1e-12, abs=1e-14)
        np.testing.assert_allclose(g[j], ref[1], rtol=1e-10, atol=1e-12)
        np.testing.assert_allclose(h[j], ref[2], rtol=1e-10, atol=1e-11)
        np.testing.assert_allclose(t[j], ref[3], rtol=1e-9, atol=1e-10)


def test_quartic_sphere_jet_matches_symbolic(sphere, rng):
    xs = sp.symbols("x1:4", real=True)
    V = -sp.Rational(1, 4) * (sum(x ** 2 for x in xs) - 1) ** 2
    fns, _ = _sympy_jet(xs, V)
    X = sphere.sample_manifold(100)[:20] * (1 + 0.1 * rng.normal(size=(20, 1)))
    f, g, h, t = sphere.potential_jet(X)
    for j, x in enumerate(X):
        ref = [np.asarray(fn(*x), dtype=float) for fn in fns]
        assert f[j] == pytest.approx(float(ref[0]), abs=1e-14)
        np.testing.assert_allclose(g[j], ref[1], atol=1e-12)
        np.testing.assert_allclose(h[j], ref[2], atol=1e-12)
        np.testing.assert_allclose(t[j], ref[3], atol=1e-12)


# ---------------------------------------------------------------- projection

def test_project_circle_examples(circle):
    h, v = circle.project_to_tube(np.array([1.2, 0.0]))
    np.testing.assert_allclose(h, [1.0, 0.0])
    assert v == pytest.approx(0.2)
    h, v = circle.project_to_tube(np.array([1.0, 0.0]))
    np.testing.assert_allclose(h, [1.0, 0.0])
    assert v == 0.0


def test_project_torus_raw_and_tube_exit(torus):
    h, v = torus.project(np.array([[3.5, 0.0, 0.0]]))
    np.testing.assert_allclose(h[0], [3.0, 0.0, 0.0])
    assert v[0] == pytest.approx(0.5)
    # 0.5 lies outside the tube of radius 0.4 r
    with pytest.raises(TubeExit):
        torus.project_to_tube(np.array([3.5, 0.0, 0.0]))
    h, v = torus.project_to_tube(np.array([3.3, 0.0, 0.0]))
    np.testing.assert_allclose(h, [3.0, 0.0, 0.0])
    assert v == pytest.approx(0.3)


@pytest.mark.parametrize("name", ["circle", "sphere", "torus"])
def test_projection_reconstructs(name, rng):
    sc = make_scenario(name, b0=-1.0)
    X = sc.sample_manifold(200)
    U = X + 0.9 * sc.tube_radius * rng.uniform(-1, 1, size=(len(X), 1)) * sc.normal(X)
    h, v = sc.project_to_tube(U)
    np.testing.assert_allclose(h + v[:, None] * sc.normal(h), U, atol=1e-12)
    assert np.max(np.abs(v)) <= sc.tube_radius
    assert np.max(np.abs(sc.grad(h))) <= 1e-12


# ---------------------------------------------------------------- frames

def test_circle_frame(circle):
    fr = circle.frame_at(np.array([1.0, 0.0]))
    np.testing.assert_allclose(fr.normal, [1.0, 0.0])
    np.testing.assert_allclose(np.abs(fr.tangents[0]), [0.0, 1.0])
    np.testing.assert_allclose(fr.H, [[1.0]])
    assert fr.b == pytest.approx(-1.0)
    assert fr.lambda_local == pytest.approx(0.0, abs=1e-14)


def test_sphere_frame_identity(sphere, rng):
    for x in sphere.sample_manifold(100)[::9]:
        fr = sphere.frame_at(x)
        np.testing.assert_allclose(fr.H, np.eye(2), atol=1e-12)
        assert fr.b == pytest.approx(-2.0, rel=1e-12)


@pytest.mark.parametrize("name", ["circle", "sphere", "torus"])
def test_frame_orthonormal(name):
    sc = make_scenario(name, b0=-1.0)
    for x in sc.sample_manifold(100)[::7]:
        fr = sc.frame_at(x)
        B = np.vstack([fr.tangents, fr.normal])
        np.testing.assert_allclose(B @ B.T, np.eye(len(x)), atol=1e-12)


def test_frame_requires_manifold_point(circle):
    with pytest.raises(ValueError):
        circle.frame_at(np.array([1.2, 0.0]))


def test_frame_degenerate_normal():
    from orbitlab.geometry import CircleScenario

    class Broken(CircleScenario):
        def distance_jet(self, X):
            d, g, h, t = super().distance_jet(X)
            return d, 0.1 * g, h, t

    with pytest.raises(DegenerateNormal):
        Broken(b0=-1.0).frame_at(np.array([1.0, 0.0]))


def test_adapted_derivatives_circle(circle):
    ad = circle.adapted_derivatives(np.array([1.0, 0.0]))
    assert ad.b == pytest.approx(-1.0)
    # D3_{ijn} = b H_{ij} = -1 and D3_{nnn} = 0
    assert ad.third[0, 0, 1] == pytest.approx(-1.0)
    assert ad.third[1, 1, 1] == pytest.approx(0.0, abs=1e-13)
    assert ad.second[0, 0] == pytest.approx(0.0, abs=1e-14)


def test_adapted_derivatives_sphere_quartic(sphere):
    ad = sphere.adapted_derivatives(np.array([0.0, 0.6, 0.8]))
    assert ad.b == pytest.approx(-2.0)


def test_adapted_derivatives_variable_b(rng):
    g = np.array([0.1, 0.0, 0.2])
    sc = make_scenario("torus", b0=-1.0, b_grad=g, cubic=0.3)
    for x in sc.sample_manifold(100)[::11]:
        ad = sc.adapted_derivatives(x)
        fr = ad.frame
        assert ad.b == pytest.approx(-1.0 + g @ x, rel=1e-12)
        np.testing.assert_allclose(ad.tangential_grad_b, fr.tangents @ g, atol=1e-12)
        # third normal derivative 3 D_n b + 6 c
        assert ad.third[-1, -1, -1] == pytest.approx(3 * g @ fr.normal + 6 * 0.3, abs=1e-12)


def test_adapted_derivatives_rejects_non_normal_form():
    from orbitlab.geometry import CircleScenario

    class Tilted(CircleScenario):
        def potential_jet(self, X):
            f, g, h, t = super().potential_jet(X)
            h = h.copy()
            h[:, 0, 1] += 0.1
            h[:, 1, 0] += 0.1
            return f, g, h, t

    with pytest.raises(NondegeneracyViolation):
        Tilted(b0=-1.0).adapted_derivatives(np.array([1.0, 0.0]))


def test_vanishing_pattern_quadratic_scenarios():
    for name in ("circle", "sphere", "torus"):
        sc = make_scenario(name, b0=-1.5)
        for x in sc.sample_manifold(100)[::5]:
            sc.adapted_derivatives(x, tol=1e-8)


# ---------------------------------------------------------------- bounds

def test_bounds_circle():
    b = scenario_bounds(make_scenario("circle", b0=-1.0))
    assert b.H_bar == pytest.approx(1.0)
    assert b.Lambda == 0.0
    assert b.b_extreme == pytest.approx(-1.0)


def test_bounds_torus():
    b = scenario_bounds(make_scenario("torus", b0=-1.0), sample_count=400)
    assert b.H_bar == pytest.approx(1.0, rel=1e-12)
    assert b.Lambda == 0.0
    assert b.sample_count >= 400


def test_bounds_need_samples(circle):
    with pytest.raises(ValueError):
        scenario_bounds(circle, sample_count=50)


def test_bounds_cubic_lambda():
    b = scenario_bounds(make_scenario("circle", b0=-1.0, cubic=0.5))
    assert b.Lambda == pytest.approx(3.0)


# ---------------------------------------------------------------- invariants

@pytest.mark.parametrize("name", ["circle", "sphere", "torus"])
def test_critical_manifold(name):
    sc = make_scenario(name, b0=-1.0, cubic=0.2)
    assert np.max(np.abs(sc.grad(sc.sample_manifold(400)))) <= 1e-10


@pytest.mark.parametrize("name", ["sphere", "torus"])
def test_gauss_map_finite_differences(name, rng):
    sc = make_scenario(name, b0=-1.0)
    X = sc.sample_manifold(400)
    idx = rng.choice(len(X), 100, replace=False)
    E = tangent_basis(sc.normal(X[idx]))
    S = sc.shape_operator(X[idx])
    s = 1e-4
    for j, x in enumerate(X[idx]):
        w = rng.normal(size=E.shape[1]) @ E[j]
        fd = (sc.normal(x + s * w) - sc.normal(x - s * w))[0] / (2 * s)
        exact = S[j] @ w
        assert np.linalg.norm(fd - exact) <= 1e-5 * max(np.linalg.norm(exact), 1e-3)


@settings(max_examples=40, deadline=None)
@given(phi=st.floats(0, 2 * np.pi), theta=st.floats(0, 2 * np.pi))
def test_torus_principal_curvatures(phi, theta):
    sc = make_scenario("torus", b0=-1.0)
    x = sc.from_angles(np.array([phi]), np.array([theta]))[0]
    ev = np.sort(np.linalg.eigvalsh(sc.frame_at(x).H))
    ref = np.sort([1.0, np.cos(theta) / (2.0 + np.cos(theta))])
    np.testing.assert_allclose(ev, ref, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(b0=st.floats(-5, -0.1), c=st.floats(-1, 1))
def test_normal_hessian_is_b(b0, c):
    sc = make_scenario("sphere", b0=b0, cubic=c)
    nd = sc.normal_data(sc.sample_manifold(100))
    np.testing.assert_allclose(nd["b"], b0, rtol=1e-12)


def test_scenario_validation():
    with pytest.raises(ValueError):
        make_scenario("circle", b0=0.0)
    with pytest.raises(ValueError):
        make_scenario("torus", R=1.0, r=2.0)
    with pytest.raises(ValueError):
        make_scenario("circle", b0=-1.0, b_grad=[2.0, 0.0])
    with pytest.raises(ValueError):
        make_scenario("klein")


def test_winding(torus):
    assert torus.winding(torus.seed_loop((1, 0), 128)) == (1, 0)
    assert torus.winding(torus.seed_loop((0, 1), 128)) == (0, 1)
    assert torus.winding(torus.seed_loop((2, 1), 128)) == (2, 1)
