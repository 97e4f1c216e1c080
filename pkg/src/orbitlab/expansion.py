"""Second-order approximate orbits ``x_eps = x0 + eps f + eps^2 g``.

Starting from a nondegenerate closed geodesic ``x0`` the coefficients are

* ``f = f^T + a n`` with ``a = S(x0', x0') / b``,
* ``f^T`` the solution of the Jacobi equation ``J f^T = r`` orthogonal to
  ``x0'``, where ``r = P (a S x0')' + a^2 grad_b / 2 + a' S x0'``,
* ``g = g_n n`` with ``g_n`` fixed by the normal component of the order
  ``eps`` equation.

Here ``S`` is the second fundamental form (``dn = S``), ``b`` the normal
Hessian and ``grad_b`` its tangential gradient.
"""

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .errors import ConsistencyCheckFailed, DegenerateGeodesic, TubeExit
from .loops import (JacobiOperator, Loop, TangentField, as_samples, derivative,
                    h1_dual_norm, l2_norm, mean_inner, project_tangent)


@dataclass(frozen=True)
class GeodesicData:
    """Pointwise geometry along a loop on ``M``."""

    X: np.ndarray
    velocity: np.ndarray
    accel: np.ndarray
    n: np.ndarray
    S: np.ndarray
    Sv: np.ndarray
    b: np.ndarray
    grad_b: np.ndarray
    dn_b: np.ndarray

    @classmethod
    def build(cls, scenario, x0, method="spectral"):
        X = as_samples(x0)
        nd = scenario.normal_data(X)
        v = derivative(X, 1, method)
        Sv = np.einsum("mij,mj->mi", nd["shape"], v)
        return cls(X, v, derivative(X, 2, method), nd["n"], nd["shape"], Sv,
                   nd["b"], nd["grad_b"], nd["dn_b"])

    @property
    def kappa(self):
        """``S(x0', x0')``."""
        return np.einsum("mi,mi->m", self.velocity, self.Sv)


def compute_a(scenario, x0, method="spectral", tol=1e-8):
    """Normal component of the first-order coefficient."""
    geo = GeodesicData.build(scenario, x0, method)
    kappa = geo.kappa
    normal_accel = np.einsum("mi,mi->m", geo.accel, geo.n)
    err = np.max(np.abs(normal_accel + kappa))
    if err > tol * max(1.0, np.max(np.abs(kappa))):
        raise ConsistencyCheckFailed(f"normal acceleration differs from -S(x',x') by {err:.3g}")
    return kappa / geo.b


def jacobi_rhs(geo, a, method="spectral"):
    """L^2 representative of the linear form driving ``f^T`` and the norms of
    its three terms."""
    aSv = a[:, None] * geo.Sv
    terms = (project_tangent(geo.n, derivative(aSv, 1, method)),
             0.5 * (a ** 2)[:, None] * geo.grad_b,
             derivative(a, 1, method)[:, None] * geo.Sv)
    return sum(terms), sum(l2_norm(t) for t in terms)


@dataclass
class FTSolution:
    fT: np.ndarray
    condition: float
    orthogonality: float
    compatibility: float
    equation_residual: float
    constraint_count: int


def solve_fT(scenario, x0, a, quotient_symmetries=False, method="spectral",
             max_condition=1e10, tol=1e-8):
    """Tangential first-order coefficient.

    The Jacobi system is bordered by ``<f, x0'> = 0``; with
    ``quotient_symmetries`` it is also bordered by the tangential parts of
    the scenario's rotation fields, which removes Jacobi fields coming from
    continuous symmetries.  Raises ``DegenerateGeodesic`` if the restricted
    system is singular.
    """
    geo = GeodesicData.build(scenario, x0, method)
    J = JacobiOperator(scenario, x0, method)
    M = J.matrix()
    rhs, scale = jacobi_rhs(geo, a, method)
    dirs = [geo.velocity]
    if quotient_symmetries:
        dirs += [project_tangent(geo.n, geo.X @ K.T) for K in scenario.killing_generators()]
    C = np.column_stack([J.to_coords(d) for d in dirs])
    U, s, _ = np.linalg.svd(C, full_matrices=False)
    C = U[:, s > 1e-8 * s.max()]
    m = C.shape[1]

    Q = linalg.null_space(C.T)
    ev = np.linalg.eigvalsh(Q.T @ M @ Q)
    cond = np.max(np.abs(ev)) / np.min(np.abs(ev))
    if not np.isfinite(cond) or cond > max_condition:
        raise DegenerateGeodesic(f"restricted Jacobi system has condition {cond:.3g}")

    cr = J.to_coords(rhs)
    K = np.block([[M, C], [C.T, np.zeros((m, m))]])
    sol = np.linalg.solve(K, np.concatenate([cr, np.zeros(m)]))
    f = J.from_coords(sol[:-m])

    vnorm = l2_norm(geo.velocity)
    # the rhs can vanish identically; anchor to its natural magnitude
    ref = scale + l2_norm(a[:, None] * geo.Sv) * vnorm
    compat = max(abs(mean_inner(rhs, d)) / (ref * max(l2_norm(d), 1e-300)) for d in dirs)
    eq_res = l2_norm(J.apply(f).vectors - rhs) / ref
    orth = abs(mean_inner(f, geo.velocity)) / (vnorm * max(l2_norm(f), 1.0))
    for label, val in (("compatibility", compat), ("Jacobi equation residual", eq_res),
                       ("orthogonality", orth)):
        if val > tol:
            raise ConsistencyCheckFailed(f"{label} = {val:.3g}")
    return FTSolution(f, float(cond), orth, compat, eq_res, m)


def compute_gn(scenario, x0, a, fT, method="spectral"):
    """Normal second-order coefficient, assembled term by term."""
    geo = GeodesicData.build(scenario, x0, method)
    b = geo.b
    Sf = np.einsum("mij,mj->mi", geo.S, fT)
    Hff = np.einsum("mi,mi->m", fT, Sf)
    grad_b_f = np.einsum("mi,mi->m", geo.grad_b, fT)
    cov_f = project_tangent(geo.n, derivative(fT, 1, method))
    Hv_covf = np.einsum("mi,mi->m", geo.Sv, cov_f)
    Hvf = np.einsum("mi,mi->m", geo.Sv, fT)
    S2vv = np.einsum("mi,mi->m", geo.Sv, geo.Sv)
    rhs = (-0.5 * (b * Hff + 2 * a * grad_b_f + 3 * geo.dn_b * a ** 2 - 2 * Hv_covf)
           - derivative(a, 2, method) + a * S2vv + derivative(Hvf, 1, method))
    return rhs / b


@dataclass
class ExpansionBundle:
    scenario: object
    x0: Loop
    a: np.ndarray
    fT: np.ndarray
    gn: np.ndarray
    normals: np.ndarray
    method: str = "spectral"
    diagnostics: dict = field(default_factory=dict)

    @property
    def f(self):
        return self.fT + self.a[:, None] * self.normals

    @property
    def g(self):
        return self.gn[:, None] * self.normals

    def normal_offset(self, eps):
        return eps * self.a + eps ** 2 * self.gn

    def assemble(self, eps, order=2):
        """Approximate orbit; ``order=1`` drops ``g`` and ``order=0`` returns
        ``x0``."""
        X = self.x0.samples
        if order == 0 or eps == 0:
            return Loop(X.copy())
        off = eps * np.sqrt(np.sum(self.f ** 2, axis=1))
        if order == 2:
            off = np.abs(self.normal_offset(eps)) + eps * np.linalg.norm(self.fT, axis=1)
        rho = self.scenario.tube_radius
        if np.max(off) > rho:
            raise TubeExit(f"offset {np.max(off):.3g} exceeds tube radius {rho:.3g}")
        out = X + eps * self.f
        if order == 2:
            out = out + eps ** 2 * self.g
        return Loop(out)

    def tangent_field(self):
        return TangentField(self.fT, self.x0)

    def write_csv(self, path):
        X, X_dim = self.x0.samples, self.x0.dim
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t"] + [f"x0_{i + 1}" for i in range(X_dim)] + ["a"]
                       + [f"fT_{i + 1}" for i in range(X_dim)] + ["g_n"])
            for j in range(self.x0.N):
                w.writerow([repr(j / self.x0.N)] + [repr(float(v)) for v in X[j]]
                           + [repr(float(self.a[j]))]
                           + [repr(float(v)) for v in self.fT[j]] + [repr(float(self.gn[j]))])


def build_bundle(scenario, x0, quotient_symmetries=False, method="spectral"):
    """Complete second-order data along a nondegenerate geodesic."""
    if not isinstance(x0, Loop):
        x0 = Loop(x0, on_manifold=True)
    a = compute_a(scenario, x0, method)
    sol = solve_fT(scenario, x0, a, quotient_symmetries, method)
    gn = compute_gn(scenario, x0, a, sol.fT, method)
    diag = {"condition": sol.condition, "orthogonality": sol.orthogonality,
            "compatibility": sol.compatibility, "jacobi_residual": sol.equation_residual,
            "constraints": sol.constraint_count}
    return ExpansionBundle(scenario, x0, a, sol.fT, gn, scenario.normal(x0.samples),
                           method, diag)


# ---------------------------------------------------------------- residuals

@dataclass(frozen=True)
class ResidualReport:
    dual: float
    l2: float
    sup: float


def equation_residual(scenario, X, eps, method="spectral"):
    """Pointwise ``x'' + V'(x) / eps``."""
    X = as_samples(X)
    return derivative(X, 2, method) + scenario.grad(X) / eps


def residual(scenario, x, eps, method="spectral"):
    """Size of ``DE_eps(x)``, measured in the ``H^1`` dual norm (also L^2
    and sup for reference)."""
    F = equation_residual(scenario, x, eps, method)
    return ResidualReport(h1_dual_norm(F), l2_norm(F), float(np.max(np.abs(F))))


def closed_form_alpha_beta(bundle):
    """Coefficients of ``V'(x_eps) = eps alpha + eps^2 beta + O(eps^3)``."""
    geo = GeodesicData.build(bundle.scenario, bundle.x0, bundle.method)
    a, fT, b, n = bundle.a, bundle.fT, geo.b, geo.n
    alpha = (b * a)[:, None] * n
    Sf = np.einsum("mij,mj->mi", geo.S, fT)
    Hff = np.einsum("mi,mi->m", fT, Sf)
    gbf = np.einsum("mi,mi->m", geo.grad_b, fT)
    beta_n = b * bundle.gn + 0.5 * (b * Hff + 2 * a * gbf + 3 * geo.dn_b * a ** 2)
    beta_t = (b * a)[:, None] * Sf + 0.5 * (a ** 2)[:, None] * geo.grad_b
    return alpha, beta_n[:, None] * n + beta_t


def order_cancellation(bundle):
    """Sup norms of the order-1 and order-eps parts of the residual,
    ``x0'' + alpha`` and ``f'' + beta``; both vanish for a correct bundle."""
    alpha, beta = closed_form_alpha_beta(bundle)
    X = bundle.x0.samples
    c0 = derivative(X, 2, bundle.method) + alpha
    c1 = derivative(bundle.f, 2, bundle.method) + beta
    scale0 = np.max(np.abs(alpha))
    scale1 = max(np.max(np.abs(beta)), np.max(np.abs(derivative(bundle.f, 2, bundle.method))))
    return float(np.max(np.abs(c0)) / scale0), float(np.max(np.abs(c1)) / scale1)


@dataclass(frozen=True)
class AlphaBetaReport:
    alpha_fit: np.ndarray
    beta_fit: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    alpha_error: float
    beta_error: float
    eps_list: np.ndarray


def verify_alphabeta(bundle, eps_list=None, degree=8):
    """Fit the Taylor coefficients of ``V'(x0 + eps f + eps^2 g)`` in ``eps``
    by least squares and compare with the closed forms."""
    X, f, g = bundle.x0.samples, bundle.f, bundle.g
    if eps_list is None:
        size = max(np.max(np.abs(f)), np.sqrt(np.max(np.abs(g))), 1e-12)
        eps_max = 0.05 * bundle.scenario.tube_radius / size
        nodes = np.cos(np.pi * (np.arange(2 * degree) + 0.5) / (2 * degree))
        eps_list = eps_max * nodes
    eps_list = np.asarray(eps_list, dtype=float)
    scale = np.max(np.abs(eps_list))
    s = eps_list / scale
    vals = np.stack([bundle.scenario.grad(X + e * f + e * e * g) for e in eps_list])
    A = np.vander(s, degree + 1, increasing=True)
    coef, *_ = np.linalg.lstsq(A, vals.reshape(len(s), -1), rcond=None)
    shape = X.shape
    alpha_fit = coef[1].reshape(shape) / scale
    beta_fit = coef[2].reshape(shape) / scale ** 2
    alpha, beta = closed_form_alpha_beta(bundle)

    def rel(fit, ref):
        return float(np.max(np.abs(fit - ref)) / max(np.max(np.abs(ref)), 1e-300))

    ref_b = max(np.max(np.abs(beta)), 1e-12 * np.max(np.abs(alpha)) ** 2, 1e-300)
    beta_err = float(np.max(np.abs(beta_fit - beta)) / ref_b)
    return AlphaBetaReport(alpha_fit, beta_fit, alpha, beta, rel(alpha_fit, alpha),
                           beta_err, eps_list)
