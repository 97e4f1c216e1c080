"""Newton correction of approximate orbits and adiabatic-limit sweeps.

The periodic problem ``x'' + V'(x) / eps = 0`` is discretized with the
spectral second-derivative matrix and solved in real space.  Time
translation (and any continuous rotation symmetry of ``V`` not already
generated by it) leaves the problem degenerate, so the Jacobian is bordered
by the constraints ``<x - x_ref, z> = 0`` for ``z`` in the span of the
velocity and the symmetry fields, with Lagrange multipliers.
"""

import csv
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .errors import AdmissibilityFailed, NewtonDiverged, SingularJacobian
from .expansion import equation_residual
from .geometry import scenario_bounds
from .loops import Loop, as_samples, derivative, diff_matrix, energy
from .periodic_ode import TWO_PI, resonance_epsilons, spectral_distance


@dataclass
class OrbitResult:
    solution: Loop
    eps: float
    residual_sup: float
    newton_iters: int
    correction: np.ndarray
    correction_tangent: np.ndarray
    correction_normal: np.ndarray
    condition_estimate: float
    initial_guess: str
    multipliers: np.ndarray
    step_history: list = field(default_factory=list)
    gauge_error: float = 0.0
    info: dict = field(default_factory=dict)

    @property
    def correction_sup(self):
        return float(np.max(np.abs(self.correction)))

    @property
    def correction_normal_sup(self):
        return float(np.max(np.abs(self.correction_normal)))

    def quadratic_ratios(self):
        e = [s for s in self.step_history if s > 0]
        return [e[i + 1] / e[i] ** 2 for i in range(len(e) - 1) if e[i] > 1e-7]


def gauge_directions(scenario, X_ref, symmetries="auto", method="spectral"):
    """Orthonormal (in R^{Nn}) constraint directions: the velocity plus the
    independent rotation fields of the scenario."""
    dirs = [derivative(X_ref, 1, method).ravel()]
    if symmetries == "auto":
        dirs += [(X_ref @ K.T).ravel() for K in scenario.killing_generators()]
    C = np.column_stack(dirs)
    U, s, _ = np.linalg.svd(C, full_matrices=False)
    return U[:, s > 1e-6 * s.max()]


class GaugedSystem:
    """Residual and bordered Jacobian of the periodic problem at fixed eps."""

    def __init__(self, scenario, X_ref, eps, symmetries="auto", method="spectral"):
        self.scenario = scenario
        self.X_ref = np.array(as_samples(X_ref), dtype=float)
        self.N, self.n = self.X_ref.shape
        self.eps = eps
        self.method = method
        self.C = gauge_directions(scenario, self.X_ref, symmetries, method)
        self.kinetic = np.kron(diff_matrix(self.N, 2, method), np.eye(self.n))
        self.scale = np.abs(np.diag(self.kinetic)).max()

    def jacobian(self, X, eps=None):
        eps = self.eps if eps is None else eps
        A = self.kinetic.copy()
        H = self.scenario.hess(X) / eps
        for j in range(self.N):
            s = slice(j * self.n, (j + 1) * self.n)
            A[s, s] += H[j]
        m = self.C.shape[1]
        Cs = self.scale * self.C
        return np.block([[A, Cs], [Cs.T, np.zeros((m, m))]])

    def residual(self, X, mu):
        F = equation_residual(self.scenario, X, self.eps, self.method).ravel()
        F = F + self.scale * self.C @ mu
        g = self.scale * self.C.T @ (X - self.X_ref).ravel()
        return np.concatenate([F, g])


def correct_orbit(scenario, x_eps, eps, bundle=None, symmetries="auto",
                  max_iter=30, step_tol=1e-12, max_condition=1e12,
                  initial_guess="order-2", method="spectral"):
    """Newton iteration from ``x_eps`` to a periodic solution.

    Raises ``SingularJacobian`` when the bordered Jacobian at the initial
    guess has condition above ``max_condition``, ``NewtonDiverged`` if the
    steps stop contracting and ``TubeExit`` if an iterate leaves the tube.
    """
    X_ref = as_samples(x_eps)
    sysm = GaugedSystem(scenario, X_ref, eps, symmetries, method)
    m = sysm.C.shape[1]
    X = X_ref.copy()
    mu = np.zeros(m)
    cond = np.linalg.cond(sysm.jacobian(X))
    if not np.isfinite(cond) or cond > max_condition:
        raise SingularJacobian(f"condition {cond:.3g} at eps = {eps:.6g}", cond)
    steps = []
    for it in range(1, max_iter + 1):
        G = sysm.residual(X, mu)
        delta = linalg.solve(sysm.jacobian(X), -G, assume_a="sym")
        X = X + delta[:-m].reshape(X.shape)
        mu = mu + delta[-m:]
        step = float(np.max(np.abs(delta[:-m])))
        steps.append(step)
        scenario.project_to_tube(X)
        if not np.isfinite(step):
            raise NewtonDiverged("non-finite Newton step")
        if len(steps) >= 4 and steps[-1] > steps[-2] > steps[-3]:
            raise NewtonDiverged(f"Newton steps growing: {steps[-3:]}")
        if step <= step_tol * max(1.0, np.max(np.abs(X))):
            break
    else:
        raise NewtonDiverged(f"no convergence in {max_iter} iterations (last step {steps[-1]:.3g})")

    F = equation_residual(scenario, X, eps, method)
    y = X - X_ref
    if bundle is not None:
        normals = bundle.normals
    else:
        normals = scenario.normal(scenario.project_to_tube(X_ref)[0])
    yn = np.einsum("mi,mi->m", y, normals)
    yt = y - yn[:, None] * normals
    vel = derivative(X_ref, 1, method)
    gauge = abs(np.mean(np.sum(y * vel, axis=1))) / np.sqrt(np.mean(np.sum(vel * vel, axis=1)))
    return OrbitResult(Loop(X), eps, float(np.max(np.abs(F))), it, y, yt, yn,
                       float(cond), initial_guess, mu, steps, float(gauge))


def energy_drift(scenario, X, eps, method="spectral"):
    """Relative oscillation of ``|x'|^2/2 + V(x)/eps`` along the orbit."""
    X = as_samples(X)
    v = derivative(X, 1, method)
    kin = 0.5 * np.sum(v * v, axis=1)
    E = kin + scenario.V(X) / eps
    return float((E.max() - E.min()) / np.mean(kin))


def find_eps0(scenario, bundle, start=1e-2, max_newton=12, floor=1e-8):
    """Largest ``start / 2^k`` for which Newton converges in at most
    ``max_newton`` iterations."""
    eps = start
    while eps > floor:
        try:
            res = correct_orbit(scenario, bundle.assemble(eps), eps, bundle)
            if res.newton_iters <= max_newton:
                return eps
        except Exception:
            pass
        eps /= 2
    raise NewtonDiverged(f"no convergent eps above {floor:g}")


# ---------------------------------------------------------------- attractive

def attractive_correct(scenario, bundle, k, energy_cap=None, **kwargs):
    """Correct on the resonance-avoiding grid ``eps_k``."""
    if scenario.sign != "attractive":
        raise ValueError("attractive_correct needs a positive normal Hessian")
    if not scenario.constant_b:
        raise AdmissibilityFailed("attractive runs need a constant normal Hessian")
    A = 2 * energy(bundle.x0) + 1 if energy_cap is None else energy_cap
    bounds = scenario_bounds(scenario, energy_cap=A)
    if not bounds.attractive_admissible():
        raise AdmissibilityFailed(
            f"4 Lambda H A = {4 * bounds.Lambda * bounds.H_bar * A:.3g} >= b0 = {bounds.b_extreme:.3g}")
    eps = float(resonance_epsilons(scenario.b0, [k])[0])
    res = correct_orbit(scenario, bundle.assemble(eps), eps, bundle, **kwargs)
    lam = scenario.b0 / eps
    res.info.update(k=k, resonance_distance=spectral_distance(lam),
                    resonance_distance_2pi=spectral_distance(lam) / TWO_PI ** 2,
                    contraction_constant=bounds.contraction_constant(),
                    admissibility=4 * bounds.Lambda * bounds.H_bar * A / scenario.b0)
    return res


def bordered_condition(scenario, bundle, eps):
    X = bundle.assemble(eps).samples
    sysm = GaugedSystem(scenario, X, eps)
    return float(np.linalg.cond(sysm.jacobian(X)))


def locate_resonance(scenario, bundle, m, max_sweeps=30, rtol=1e-13):
    """Parameter ``eps`` near ``b0 / (2 pi m)^2`` where the bordered Jacobian
    at ``x_eps`` is singular, with the condition number there.

    With the linearization point frozen the Jacobian is affine in
    ``eta = 1/eps``, so the singular value of ``eta`` is a generalized
    eigenvalue; refreezing at the new ``eps`` a few times converges.
    """
    eps = scenario.b0 / (TWO_PI * m) ** 2
    target = 1.0 / eps
    for _ in range(max_sweeps):
        X = bundle.assemble(eps).samples
        sysm = GaugedSystem(scenario, X, eps)
        B = sysm.jacobian(X, eps=np.inf)
        H = np.zeros_like(B)
        Hx = scenario.hess(X)
        n = sysm.n
        for j in range(sysm.N):
            s = slice(j * n, (j + 1) * n)
            H[s, s] = Hx[j]
        eta = linalg.eigvals(B, -H)
        eta = eta[np.isfinite(eta) & (np.abs(eta.imag) < 1e-6 * np.abs(eta))].real
        eta = eta[np.argmin(np.abs(eta - target))]
        done = abs(1.0 / eta - eps) <= rtol * eps
        eps = 1.0 / eta
        if done:
            break
    return eps, bordered_condition(scenario, bundle, eps)


# ---------------------------------------------------------------- sweeps

@dataclass
class SweepRow:
    T: float
    eps: float
    dist_C0: float
    dist_C1: float
    corr_sup: float
    corr_normal_sup: float
    newton_iters: int
    cond_est: float
    energy: float
    slope_C0_running: float = float("nan")


@dataclass
class SweepReport:
    rows: list
    mode: str = "repulsive"

    def column(self, name):
        return np.array([getattr(r, name) for r in self.rows])

    def write_csv(self, path):
        cols = ["T", "eps", "dist_C0", "dist_C1", "corr_sup", "corr_normal_sup",
                "newton_iters", "cond_est", "slope_C0_running"]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(cols)
            for r in self.rows:
                w.writerow([repr(float(getattr(r, c))) if c != "newton_iters" else r.newton_iters
                            for c in cols])


def thread_count(default=1):
    try:
        return max(1, int(os.environ.get("ORBITLAB_THREADS", default)))
    except ValueError:
        return default


def _sweep_row(scenario, bundle, T, eps, method):
    res = correct_orbit(scenario, bundle.assemble(eps), eps, bundle, method=method)
    X, X0 = res.solution.samples, bundle.x0.samples
    c0 = float(np.max(np.abs(X - X0)))
    c1 = c0 + float(np.max(np.abs(derivative(X, 1, method) - derivative(X0, 1, method))))
    return SweepRow(float(T), float(eps), c0, c1, res.correction_sup,
                    res.correction_normal_sup, res.newton_iters,
                    res.condition_estimate, energy(X, method))


def adiabatic_sweep(scenario, bundle, T_list=None, eps_list=None, workers=None,
                    method="spectral"):
    """Correct orbits for each period ``T`` (``eps = T^{-1/2}``) and record
    the distance of the rescaled orbit to the geodesic."""
    if (T_list is None) == (eps_list is None):
        raise ValueError("give exactly one of T_list and eps_list")
    if T_list is not None:
        T = np.asarray(T_list, dtype=float)
        eps = T ** -0.5
    else:
        eps = np.asarray(eps_list, dtype=float)
        T = eps ** -2.0
    order = np.argsort(T)
    T, eps = T[order], eps[order]
    workers = thread_count() if workers is None else workers
    task = lambda p: _sweep_row(scenario, bundle, p[0], p[1], method)
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            rows = list(pool.map(task, zip(T, eps)))
    else:
        rows = [task(p) for p in zip(T, eps)]
    for i in range(1, len(rows)):
        x = np.log([r.T for r in rows[: i + 1]])
        y = np.log([r.dist_C0 for r in rows[: i + 1]])
        rows[i].slope_C0_running = float(np.polyfit(x, y, 1)[0])
    mode = "repulsive" if scenario.sign == "repulsive" else "attractive"
    return SweepReport(rows, mode)
