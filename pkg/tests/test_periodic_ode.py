import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from orbitlab.errors import FixedPointDiverged, ResonantLambda
from orbitlab.loops import derivative
from orbitlab.periodic_ode import (PeriodicLinearProblem, PeriodicOperator,
                                   _delta, estimate_audit, green_kernel,
                                   kernel_table, perturbation_audit,
                                   resonance_epsilons, solve_constant,
                                   solve_perturbed, spectral_distance,
                                   to_period_one)

TWO_PI = 2 * np.pi


def _residual(lam, v, sigma):
    return np.linalg.norm(derivative(v, 2) + lam * v - sigma) / np.linalg.norm(sigma)


def _smooth(rng, N, modes=12):
    t = np.arange(N) / N
    k = np.arange(1, modes + 1)[:, None]
    a, b = rng.normal(size=(2, modes, 1)) / k
    return rng.normal() + np.sum(a * np.cos(TWO_PI * k * t) + b * np.sin(TWO_PI * k * t), axis=0)


# ---------------------------------------------------------------- constant coefficient

def test_constant_forcing():
    lam = to_period_one(-1.0)
    v = solve_constant(lam, np.full(256, 1.0) * TWO_PI ** 2)
    np.testing.assert_allclose(v, -1.0, rtol=1e-14)


def test_delta_forcing_gives_kernel():
    N = 1024
    lam = to_period_one(-1.0)
    v = solve_constant(lam, _delta(N))
    # the 2 pi problem has forcing delta / (2 pi)^2 and kernel units 2 pi
    sup_2pi = TWO_PI * np.max(np.abs(v))
    # truncating the kernel's Fourier series rounds its cusp off by O(1/N)
    assert sup_2pi == pytest.approx(1 / (2 * np.tanh(np.pi)), rel=2e-3)
    assert sup_2pi <= 1 / (2 * np.tanh(np.pi))
    G = green_kernel(lam, np.arange(N) / N)
    assert np.max(np.abs(-v - G)[N // 8: -N // 8]) <= 1e-6 * np.max(G)


def test_attractive_spectral_vs_convolution():
    lam_2pi = 10.5 ** 2
    lam = to_period_one(lam_2pi)
    t = np.arange(256) / 256
    sigma = np.sin(np.sqrt(lam) * t)
    a = solve_constant(lam, sigma)
    b = solve_constant(lam, sigma, method="convolution")
    assert np.max(np.abs(a - b)) <= 1e-9 * np.max(np.abs(a))
    assert _residual(lam, a, sigma) <= 1e-8


@pytest.mark.parametrize("mode", ["repulsive", "attractive"])
def test_paths_agree_on_random_problems(mode, rng):
    # 10 operators x 10 forcings; the convolution path caches kernel
    # coefficients per operator
    if mode == "repulsive":
        lams = -to_period_one(10 ** rng.uniform(-1, 4, size=10))
    else:
        lams = to_period_one((rng.choice(np.arange(1, 60), 10, replace=False) + 0.5) ** 2)
    worst_gap = worst_res = 0.0
    for i in range(100):
        lam = lams[i % 10]
        sigma = _smooth(rng, 128)
        a = solve_constant(lam, sigma)
        b = solve_constant(lam, sigma, method="convolution")
        worst_gap = max(worst_gap, np.max(np.abs(a - b)) / np.max(np.abs(a)))
        worst_res = max(worst_res, _residual(lam, a, sigma))
    assert worst_gap <= 1e-9
    assert worst_res <= 1e-8


def test_resonance_detected():
    for k in (0, 1, 5):
        with pytest.raises(ResonantLambda):
            solve_constant((TWO_PI * k) ** 2 * (1 + 1e-10), np.ones(64))
    solve_constant((TWO_PI * 5.5) ** 2, np.ones(64))


def test_spectral_distance():
    assert spectral_distance(-3.0) == 3.0
    assert spectral_distance((TWO_PI * 3.5) ** 2) == pytest.approx(TWO_PI ** 2 * 3.25)


# ---------------------------------------------------------------- kernels

@pytest.mark.parametrize("lam_2pi", [-1.0, -100.0, -1e4])
def test_repulsive_kernel_norms(lam_2pi):
    lam = to_period_one(lam_2pi)
    tab = kernel_table(lam, 2048)
    root = np.sqrt(-lam_2pi)
    assert np.all(tab.values > 0)
    np.testing.assert_allclose(tab.values[1:], tab.values[1:][::-1], rtol=1e-12)
    assert tab.sup_norm_2pi == pytest.approx(1 / (2 * root * np.tanh(np.pi * root)), rel=1e-12)
    assert tab.l1_norm_2pi == pytest.approx(1 / -lam_2pi, rel=1e-12)
    assert TWO_PI * tab.values.max() == pytest.approx(tab.sup_norm_2pi, rel=1e-10)


@pytest.mark.parametrize("k", [10, 25, 50])
def test_attractive_kernel_norms(k):
    lam_2pi = (k + 0.5) ** 2
    tab = kernel_table(to_period_one(lam_2pi), 4096)
    assert tab.sup_norm_2pi == pytest.approx(1 / (2 * np.sqrt(lam_2pi)), rel=1e-12)
    assert tab.l1_norm_2pi == pytest.approx(2 / np.sqrt(lam_2pi), rel=1e-12)


# ---------------------------------------------------------------- perturbed

def test_zero_gamma_reduces_to_constant(rng):
    lam = to_period_one(-100.0)
    sigma = rng.normal(size=256)
    sol = solve_perturbed(PeriodicLinearProblem(lam, np.zeros(256), sigma))
    np.testing.assert_allclose(sol.v, solve_constant(lam, sigma), rtol=1e-12, atol=1e-15)
    assert sol.iterations <= 2


def test_perturbed_matches_direct(rng):
    lam = to_period_one(-100.0)
    gamma = -np.abs(rng.normal(size=256)) * 10
    sigma = rng.normal(size=256)
    sol = solve_perturbed(PeriodicLinearProblem(lam, gamma, sigma))
    assert sol.direct_gap <= 1e-9
    direct = PeriodicOperator(lam, gamma).solve(sigma)
    np.testing.assert_allclose(sol.v, direct, rtol=1e-12)
    assert 0 < sol.contraction < 1


def test_perturbation_bounds_repulsive():
    rows = perturbation_audit("repulsive", [-100.0], trials=100, rng=0)
    assert rows[0].worst_l1 <= 1.1
    assert rows[0].worst_linf <= 1.1
    assert rows[0].worst_gap <= 1e-9


def test_perturbation_bounds_attractive():
    rows = perturbation_audit("attractive", [10.5 ** 2, 30.5 ** 2], trials=50, rng=0)
    for r in rows:
        assert r.worst_l1 <= 1.1 and r.worst_linf <= 1.1


def test_fixed_point_diverges_for_small_lambda(rng):
    lam = to_period_one(-0.01)
    gamma = -np.full(128, 50.0)
    with pytest.raises(FixedPointDiverged):
        solve_perturbed(PeriodicLinearProblem(lam, gamma, rng.normal(size=128)))


def test_comparison_principle(rng):
    N = 256
    for _ in range(50):
        lam0 = -to_period_one(10 ** rng.uniform(0, 3))
        sigma = np.abs(_smooth(rng, N))
        extra = -np.abs(_smooth(rng, N)) * abs(lam0) * rng.uniform(0, 2)
        v = PeriodicOperator(lam0, extra).solve(sigma)
        vbar = solve_constant(lam0, sigma)
        assert np.all(v <= 1e-14)
        assert np.all(vbar <= v + 1e-12 * np.max(np.abs(vbar)))


@settings(max_examples=25, deadline=None)
@given(lam_2pi=st.floats(-1e4, -0.5))
def test_repulsive_solution_residual(lam_2pi):
    rng = np.random.default_rng(0)
    lam = to_period_one(lam_2pi)
    sigma = _smooth(rng, 128)
    assert _residual(lam, solve_constant(lam, sigma), sigma) <= 1e-8


# ---------------------------------------------------------------- resonance grid

def test_resonance_epsilons_examples():
    assert resonance_epsilons(1.0, [0], convention="2pi")[0] == pytest.approx(4.0)
    eps = resonance_epsilons(1.0, range(0, 200))
    assert np.all(np.diff(eps) < 0) and eps[-1] < 1e-5
    assert resonance_epsilons(1.0, [3])[0] == pytest.approx(1 / (TWO_PI * 3.5) ** 2)
    for k in range(1, 60):
        lam_2pi = 1.0 / resonance_epsilons(1.0, [k], convention="2pi")[0]
        dist = min(abs(lam_2pi - j ** 2) for j in range(k + 3))
        assert dist >= np.sqrt(lam_2pi) - 0.25 - 1e-9
    with pytest.raises(ValueError):
        resonance_epsilons(-1.0, [1])


# ---------------------------------------------------------------- audit

def test_audit_repulsive_examples():
    rows = estimate_audit("repulsive", [-1.0, -1e2, -1e4], trials=2, N=16384, rng=0)
    assert rows[0].bound == pytest.approx(1 / (2 * np.tanh(np.pi)), rel=1e-12)
    assert rows[0].bound == pytest.approx(0.50187, abs=1e-5)
    assert rows[0].observed == pytest.approx(rows[0].bound, rel=2e-3)
    # the simple constant becomes exact as lambda -> -infinity
    ratios = [r.observed / r.simple_constant for r in rows]
    assert ratios[-1] == pytest.approx(1.0, abs=2e-2)
    assert [r.bound / r.simple_constant for r in rows][-1] == pytest.approx(1.0, abs=1e-12)
    assert not rows[0].simple_constant_holds


def test_audit_attractive_example():
    r = estimate_audit("attractive", [10.5 ** 2], trials=5, rng=0)[0]
    assert r.observed <= (1 / (2 * 10.5)) * (1 + 1e-6)


def test_audit_rejects_mode_mismatch():
    with pytest.raises(ValueError):
        estimate_audit("repulsive", [4.0])
