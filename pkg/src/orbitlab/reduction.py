"""Elimination of the normal coordinate and the reduced loop functional.

A loop ``u`` near ``M`` is written ``u = h + v n_h`` with ``h`` on ``M``.
For a fixed ``h`` the normal coordinate solves the periodic problem

    v'' - Q_h v = P_h - (1/eps) dVbar/dv(h, v),

with ``Q_h = |S h'|^2``, ``P_h = h' . S h'``, ``B_h = b(h)`` and
``Vbar(h, v) = V(h + v n_h)``.  Its solution ``v(h)`` defines the reduced
functional ``L_eps(h) = E_eps(h + v(h) n_h)`` whose critical points are
periodic orbits of ``x'' + V'(x)/eps = 0``.
"""

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .errors import (AdmissibilityFailed, ConsistencyCheckFailed,
                     ContractionFailed, FixedPointDiverged, ResonantLambda)
from .geometry import scenario_bounds
from .loops import (Loop, ReducedCoefficients, TangentField, as_samples,
                    derivative, descend, diff_matrix, energy, energy_gradient,
                    find_geodesic, manifold_loop, mean_inner,
                    project_tangent, write_loop_csv)
from .periodic_ode import PeriodicOperator, resonance_epsilons


# ---------------------------------------------------------------- coefficients

def _loop_curvature_bound(shape):
    return float(np.max(np.abs(np.linalg.eigvalsh(shape))))


def reduced_coefficients(scenario, h, method="spectral"):
    """Pointwise ``Q_h``, ``P_h`` and ``B_h`` along a loop on ``M``.

    The ``L^1`` bounds ``|P_h| <= 2 H L_0(h)`` and ``|Q_h| <= 2 H^2 L_0(h)``
    are asserted with ``H`` the largest principal curvature met by the loop.
    """
    X = as_samples(h)
    nd = scenario.normal_data(X)
    hd = derivative(X, 1, method)
    Sh = np.einsum("mij,mj->mi", nd["shape"], hd)
    Q = np.einsum("mi,mi->m", Sh, Sh)
    P = np.einsum("mi,mi->m", hd, Sh)
    L0 = 0.5 * np.mean(np.einsum("mi,mi->m", hd, hd))
    H = _loop_curvature_bound(nd["shape"])
    slack = 1e-12 * max(1.0, L0)
    if np.mean(np.abs(P)) > 2 * H * L0 + slack:
        raise ConsistencyCheckFailed("|P_h|_L1 exceeds 2 H L0(h)")
    if np.mean(Q) > 2 * H ** 2 * L0 + slack:
        raise ConsistencyCheckFailed("|Q_h|_L1 exceeds 2 H^2 L0(h)")
    return ReducedCoefficients(Q, P, nd["b"])


def normal_potential(scenario, X, normals, v):
    """``Vbar``, ``dVbar/dv`` and ``d^2 Vbar/dv^2`` at ``u = h + v n``."""
    U = X + v[:, None] * normals
    f, g, H, _ = scenario.potential_jet(U)
    return (f, np.einsum("mi,mi->m", g, normals),
            np.einsum("mi,mij,mj->m", normals, H, normals))


# ---------------------------------------------------------------- normal solve

@dataclass
class ReducedState:
    h: Loop
    v: np.ndarray
    coefficients: ReducedCoefficients
    eps: float
    iterations: int
    mode: str
    normals: np.ndarray
    direct_gap: float = np.nan
    residual: float = np.nan
    contraction: float = 0.0
    radius: float = np.inf
    info: dict = field(default_factory=dict)

    @property
    def u(self):
        return self.h.samples + self.v[:, None] * self.normals

    @property
    def v_sup(self):
        return float(np.max(np.abs(self.v)))

    @property
    def scaled_sup(self):
        """``|v|_inf / sqrt(eps)``, the quantity kept bounded by the theory."""
        return self.v_sup / np.sqrt(self.eps)


def _normal_residual(D2, coeffs, v, dV, eps):
    F = D2 @ v - coeffs.Q * v - coeffs.P + dV / eps
    scale = (np.max(np.abs(D2 @ v)) + np.max(np.abs(coeffs.Q * v))
             + np.max(np.abs(coeffs.P)) + np.max(np.abs(dV)) / eps)
    return F, float(np.max(np.abs(F)) / scale) if scale > 0 else 0.0


def _check_attractive(scenario, h, eps, energy_cap):
    if not scenario.constant_b:
        raise AdmissibilityFailed("attractive mode needs a constant normal Hessian")
    k = np.sqrt(scenario.b0 / eps) / (2 * np.pi) - 0.5
    kr = round(k)
    if kr < 0 or abs(resonance_epsilons(scenario.b0, [kr])[0] - eps) > 1e-9 * eps:
        raise ResonantLambda(f"eps = {eps:.6g} is off the resonance-avoiding grid (k = {k:.4f})")
    A = 2 * energy(h) + 1 if energy_cap is None else energy_cap
    bounds = scenario_bounds(scenario, energy_cap=A)
    if not bounds.attractive_admissible():
        raise AdmissibilityFailed("4 Lambda H A >= b0")
    return int(kr), bounds.contraction_constant() * np.sqrt(eps)


def solve_normal(scenario, h, eps, mode=None, tol=1e-12, max_iter=200,
                 verify=True, energy_cap=None, method="spectral"):
    """Normal coordinate ``v(h)`` by the contraction of the existence proof.

    The linear part ``v'' + (lam0 + gamma) v`` with ``lam0 = b_*/eps``
    (``b_* = max B_h`` if repulsive, ``b0`` if attractive) and
    ``gamma = (B_h - b_*)/eps - Q_h`` is factorized once; the remainder
    ``(B_h v - dVbar/dv)/eps`` is iterated.  With ``verify`` the result is
    compared with a direct Newton solve of the full equation.

    Raises
    ------
    ContractionFailed
        The iteration does not contract or leaves the tube.
    ResonantLambda
        Attractive mode with ``eps`` off the grid ``eps_k``.
    """
    X = as_samples(h)
    loop = h if isinstance(h, Loop) else Loop(X, True)
    mode = scenario.sign if mode is None else mode
    if mode not in ("repulsive", "attractive"):
        raise ValueError(f"unknown mode {mode!r}")
    if mode != scenario.sign:
        raise ValueError(f"scenario is {scenario.sign}, requested {mode}")
    coeffs = reduced_coefficients(scenario, X, method)
    normals = scenario.normal(X)
    info = {}
    if mode == "attractive":
        info["k"], radius = _check_attractive(scenario, X, eps, energy_cap)
        b_star = scenario.b0
    else:
        b_star = float(np.max(coeffs.B))
        if b_star >= 0:
            raise ContractionFailed("normal Hessian is not negative along the loop")
        radius = np.inf

    N = len(X)
    op = PeriodicOperator(b_star / eps, (coeffs.B - b_star) / eps - coeffs.Q)
    v = np.zeros(N)
    prev = None
    ratio = 0.0
    for it in range(1, max_iter + 1):
        if np.max(np.abs(v)) > scenario.tube_radius:
            raise ContractionFailed(f"normal coordinate left the tube at eps = {eps:.3g}")
        _, dV, _ = normal_potential(scenario, X, normals, v)
        nxt = op.solve(coeffs.P + (coeffs.B * v - dV) / eps)
        step = float(np.max(np.abs(nxt - v)))
        v = nxt
        size = max(np.max(np.abs(v)), 1e-300)
        if step <= tol * size:
            break
        if prev:
            ratio = step / prev
            # the remainder is divided by eps, so increments stall at a
            # roundoff floor well above tol * |v|
            if ratio > 0.5 and step <= 1e3 * tol * size:
                break
            if ratio >= 1.0:
                raise ContractionFailed(f"increment ratio {ratio:.3g} at eps = {eps:.3g}")
        prev = step
    else:
        raise ContractionFailed(f"no contraction in {max_iter} iterations at eps = {eps:.3g}")

    D2 = diff_matrix(N, 2, method)
    _, dV, _ = normal_potential(scenario, X, normals, v)
    _, res = _normal_residual(D2, coeffs, v, dV, eps)
    state = ReducedState(loop, v, coeffs, eps, it, mode, normals, residual=res,
                         contraction=ratio, radius=radius, info=info)
    if np.max(np.abs(v)) > radius:
        raise ContractionFailed(f"|v| = {np.max(np.abs(v)):.3g} exceeds the radius {radius:.3g}")
    if verify:
        w = direct_normal(scenario, X, eps, coeffs, normals, method)
        state.direct_gap = float(np.max(np.abs(w - v)) / max(np.max(np.abs(w)), 1e-300))
    return state


def direct_normal(scenario, X, eps, coeffs=None, normals=None, method="spectral",
                  max_iter=50, tol=1e-14):
    """Newton's method on the discretized normal equation, started at 0."""
    X = as_samples(X)
    coeffs = reduced_coefficients(scenario, X, method) if coeffs is None else coeffs
    normals = scenario.normal(X) if normals is None else normals
    N = len(X)
    D2 = diff_matrix(N, 2, method)
    v = np.zeros(N)
    for _ in range(max_iter):
        _, dV, d2V = normal_potential(scenario, X, normals, v)
        F, _ = _normal_residual(D2, coeffs, v, dV, eps)
        J = D2 - np.diag(coeffs.Q) + np.diag(d2V / eps)
        dv = linalg.solve(J, -F)
        v = v + dv
        if np.max(np.abs(dv)) <= tol * max(1.0, np.max(np.abs(v))):
            return v
    raise FixedPointDiverged("direct normal solve did not converge")


# ---------------------------------------------------------------- functional

@dataclass(frozen=True)
class ReducedEnergy:
    """Reduced functional and its gap over the loop energy.

    ``gap_formula`` is ``(1/eps) int (v dVbar/dv / 2 - Vbar)``.  Because the
    normal equation pairs ``P_h`` with ``v`` once, the exact gap is
    ``gap_formula + int v P_h / 2``; ``gap_corrected`` holds that value.
    """

    value: float
    gap: float
    loop_energy: float
    gap_formula: float
    gap_corrected: float
    ambient_value: float

    def __iter__(self):
        return iter((self.value, self.gap))


def reduced_energy(scenario, h, eps, mode=None, state=None, method="spectral"):
    """``L_eps(h)`` and ``G_eps(h) = L_eps(h) - L_0(h)``.

    The value is assembled from the tubular splitting of ``|u'|^2``; the
    same number is recomputed from the ambient loop ``u`` and the corrected
    closed form of the gap is checked against the direct difference.
    """
    X = as_samples(h)
    if state is None:
        state = solve_normal(scenario, h, eps, mode, verify=False, method=method)
    c, v, n = state.coefficients, state.v, state.normals
    L0 = energy(X, method)
    vd = derivative(v, 1, method)
    Vb, dV, _ = normal_potential(scenario, X, n, v)
    kinetic = 0.5 * np.mean(vd ** 2 + v ** 2 * c.Q + 2 * v * c.P)
    gap = kinetic - np.mean(Vb) / eps
    value = L0 + gap
    formula = np.mean(0.5 * v * dV - Vb) / eps
    corrected = formula + 0.5 * np.mean(v * c.P)
    U = state.u
    ambient = energy(U, method) - np.mean(scenario.V(U)) / eps
    scale = max(abs(gap), np.max(np.abs(v)) * np.mean(np.abs(c.P)), 1e-300)
    if abs(corrected - gap) > 1e-6 * scale + 1e-12 * abs(L0):
        raise ConsistencyCheckFailed(
            f"gap {gap:.6g} disagrees with its closed form {corrected:.6g}")
    return ReducedEnergy(float(value), float(gap), float(L0), float(formula),
                         float(corrected), float(ambient))


def reduced_gradient(scenario, h, eps, mode=None, state=None, method="spectral"):
    """``L^2`` gradient of ``L_eps`` as a tangent field along ``h``.

    The normal equation makes ``v`` stationary, so only the explicit
    dependence on ``h`` survives.  A variation ``k`` of ``h`` moves
    ``u = h + v n_h`` by ``(I + v S)k``, giving the gradient
    ``-P_T (I + v S)(u'' + V'(u)/eps)`` with ``S`` the shape operator.
    """
    X = as_samples(h)
    if state is None:
        state = solve_normal(scenario, h, eps, mode, verify=False, method=method)
    U = state.u
    force = derivative(derivative(U, 1, method), 1, method) + scenario.grad(U) / eps
    S = scenario.shape_operator(X)
    pulled = force + state.v[:, None] * np.einsum("mij,mj->mi", S, force)
    base = state.h
    return TangentField(-project_tangent(state.normals, pulled), base)


# ---------------------------------------------------------------- minimization

@dataclass
class ReducedMinimum:
    loop: Loop
    value: float
    gap: float
    loop_energy: float
    v_sup: float
    gradient_norm: float
    loop_gradient_norm: float
    iterations: int
    eps: float
    geodesic_energy: float
    history: list = field(default_factory=list)


def minimize_reduced(scenario, cls, eps, seed=None, mode=None, tol=1e-8,
                     max_iters=3000, N=256, method="spectral"):
    """Minimize ``L_eps`` in the homotopy class ``cls``.

    The descent starts from the closed geodesic of the class (computed from
    ``seed`` or the scenario's analytic seed), so ``geodesic_energy`` is the
    limit value the minima approach as ``eps -> 0``.
    """
    cls = tuple(int(c) for c in np.atleast_1d(cls))
    if not any(cls):
        raise ValueError("class must be nontrivial")
    if seed is None:
        seed = scenario.seed_loop(cls, N)
    geo = find_geodesic(scenario, seed, cls, method=method)
    alpha0 = energy(geo.loop, method)

    def vg(Y):
        st = solve_normal(scenario, Y, eps, mode, verify=False, method=method)
        return (reduced_energy(scenario, Y, eps, state=st, method=method).value,
                reduced_gradient(scenario, Y, eps, state=st, method=method).vectors)

    X, history, gnorm, it, _ = descend(scenario, geo.loop.samples, vg, tol,
                                       max_iters, cls)
    loop = manifold_loop(scenario, X)
    st = solve_normal(scenario, loop, eps, mode, method=method)
    re = reduced_energy(scenario, loop, eps, state=st, method=method)
    g0 = energy_gradient(scenario, loop, method).norm()
    return ReducedMinimum(loop, re.value, re.gap, re.loop_energy, st.v_sup,
                          float(gnorm), float(g0), it, float(eps), float(alpha0),
                          history)


# ---------------------------------------------------------------- reports

@dataclass(frozen=True)
class ReductionRow:
    eps: float
    v_sup: float
    gap: float
    value: float
    loop_energy: float
    gradient_norm: float
    loop_gradient_norm: float
    iterations: int
    geodesic_energy: float

    @property
    def error(self):
        return abs(self.value - self.geodesic_energy)


def reduction_sweep(scenario, cls, eps_list, mode=None, N=256, method="spectral",
                    loop_dir=None):
    """``minimize_reduced`` along a sequence of ``eps``; the minimizers are
    written as loop CSVs into ``loop_dir`` when given."""
    rows = []
    for eps in eps_list:
        m = minimize_reduced(scenario, cls, eps, mode=mode, N=N, method=method)
        rows.append(ReductionRow(m.eps, m.v_sup, m.gap, m.value, m.loop_energy,
                                 m.gradient_norm, m.loop_gradient_norm,
                                 m.iterations, m.geodesic_energy))
        if loop_dir is not None:
            write_loop_csv(f"{loop_dir}/minimizer_eps_{eps:.3e}.csv", m.loop)
    return rows


REDUCTION_COLUMNS = ("eps", "v_sup", "gap", "value", "loop_energy",
                     "gradient_norm", "loop_gradient_norm", "iterations")


def write_reduction_csv(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(REDUCTION_COLUMNS)
        for r in rows:
            w.writerow([repr(float(getattr(r, c))) if c != "iterations" else r.iterations
                        for c in REDUCTION_COLUMNS])


def tangent_pairing(grad, k):
    """``<grad, k>`` in the loop inner product."""
    g = grad.vectors if isinstance(grad, TangentField) else grad
    return mean_inner(g, k)


__all__ = [
    "ReducedState", "ReducedEnergy", "ReducedMinimum", "ReductionRow",
    "reduced_coefficients", "normal_potential", "solve_normal", "direct_normal",
    "reduced_energy", "reduced_gradient", "minimize_reduced",
    "reduction_sweep", "write_reduction_csv", "tangent_pairing",
]
