"""Discrete periodic loops, the loop energy and closed geodesics.

Loops are sampled at ``t_j = j/N`` on the unit period.  Time derivatives are
spectral by default; ``method="fd4"`` switches to fourth-order central
differences.  The first spectral derivative drops the Nyquist mode (so its
matrix is skew-symmetric) while the second keeps it with symbol
``-(pi N)^2`` (so its matrix is symmetric negative semidefinite with a
one-dimensional kernel).
"""

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import ClassDrift, MaxItersExceeded, NotAGeodesic, TubeExit
from .geometry import TOL_MANIFOLD, tangent_basis

METHODS = ("spectral", "fd4")


# ---------------------------------------------------------------- types

@dataclass(frozen=True)
class Loop:
    samples: np.ndarray
    on_manifold: bool = False

    def __post_init__(self):
        s = np.array(self.samples, dtype=float)
        if s.ndim != 2:
            raise ValueError("samples must be an (N, n) array")
        if s.shape[0] % 2 or s.shape[0] < 64:
            raise ValueError(f"N must be even and >= 64, got {s.shape[0]}")
        s.setflags(write=False)
        object.__setattr__(self, "samples", s)

    @property
    def N(self):
        return self.samples.shape[0]

    @property
    def dim(self):
        return self.samples.shape[1]

    @property
    def t(self):
        return np.arange(self.N) / self.N

    def shifted(self, shift):
        """Time rotation ``x(. + shift)`` by trigonometric interpolation."""
        return Loop(fourier_eval(self.samples, self.t + shift), self.on_manifold)


@dataclass(frozen=True)
class TangentField:
    vectors: np.ndarray
    base: Loop

    def norm(self):
        return l2_norm(self.vectors)


@dataclass(frozen=True)
class ReducedCoefficients:
    Q: np.ndarray
    P: np.ndarray
    B: np.ndarray


@dataclass(frozen=True)
class NormSplit:
    tangent: TangentField
    normal: np.ndarray
    c0: float


def as_samples(h):
    return h.samples if isinstance(h, Loop) else np.asarray(h, dtype=float)


def manifold_loop(scenario, samples):
    """Wrap samples as an on-manifold loop, asserting the critical-point
    property."""
    samples = np.asarray(samples, dtype=float)
    g = scenario.grad(samples)
    if np.max(np.abs(g)) > TOL_MANIFOLD:
        raise ValueError(f"|V'| = {np.max(np.abs(g)):.3g} on supposed manifold samples")
    return Loop(samples, on_manifold=True)


# ---------------------------------------------------------------- spectral

def wavenumbers(N):
    return np.fft.fftfreq(N, 1.0 / N)


def derivative(Y, order=1, method="spectral"):
    """Time derivative along axis 0 of periodic samples."""
    Y = np.asarray(Y, dtype=float)
    N = Y.shape[0]
    if method == "spectral":
        k = wavenumbers(N)
        symbol = (2j * np.pi * k) ** order
        if order % 2:
            symbol[N // 2] = 0.0
        shape = (N,) + (1,) * (Y.ndim - 1)
        return np.real(np.fft.ifft(symbol.reshape(shape) * np.fft.fft(Y, axis=0), axis=0))
    if method == "fd4":
        h = 1.0 / N
        r = lambda s: np.roll(Y, -s, axis=0)
        if order == 1:
            return (-r(2) + 8 * r(1) - 8 * r(-1) + r(-2)) / (12 * h)
        if order == 2:
            return (-r(2) + 16 * r(1) - 30 * Y + 16 * r(-1) - r(-2)) / (12 * h * h)
        return derivative(derivative(Y, order - 2, method), 2, method)
    raise ValueError(f"unknown method {method!r}; choose from {METHODS}")


def diff_matrix(N, order=1, method="spectral"):
    """Dense matrix of :func:`derivative` acting on length-``N`` vectors."""
    return derivative(np.eye(N), order, method)


def sobolev_smooth(Y):
    """Apply ``(1 - d^2/dt^2)^{-1}`` spectrally along axis 0."""
    N = Y.shape[0]
    w = 1.0 / (1.0 + (2 * np.pi * wavenumbers(N)) ** 2)
    shape = (N,) + (1,) * (Y.ndim - 1)
    return np.real(np.fft.ifft(w.reshape(shape) * np.fft.fft(Y, axis=0), axis=0))


def fourier_eval(Y, times):
    """Evaluate the trigonometric interpolant of samples ``Y`` at ``times``."""
    Y = np.asarray(Y, dtype=float)
    N = Y.shape[0]
    C = np.fft.rfft(Y, axis=0) / N
    k = np.arange(C.shape[0])
    w = np.full(C.shape[0], 2.0)
    w[0] = 1.0
    w[-1] = 1.0
    phase = np.exp(2j * np.pi * np.outer(np.asarray(times), k))
    if C.ndim == 1:
        return np.real(phase @ (w * C))
    return np.real(phase @ (w[:, None] * C))


def mean_inner(U, W):
    """L^2(0,1) inner product of two sampled fields."""
    return float(np.mean(np.sum(np.asarray(U) * np.asarray(W), axis=-1)
                         if np.ndim(U) > 1 else np.asarray(U) * np.asarray(W)))


def l2_norm(U):
    return np.sqrt(mean_inner(U, U))


def h1_dual_norm(F):
    """Norm of ``F`` in the dual of ``H^1(S^1)``."""
    F = np.asarray(F, dtype=float)
    if F.ndim == 1:
        F = F[:, None]
    N = F.shape[0]
    Fh = np.fft.fft(F, axis=0) / N
    w = 1.0 / (1.0 + (2 * np.pi * wavenumbers(N)) ** 2)
    return float(np.sqrt(np.sum(w[:, None] * np.abs(Fh) ** 2)))


def h1_norm(F, method="spectral"):
    F = np.asarray(F, dtype=float)
    return np.sqrt(mean_inner(F, F) + mean_inner(derivative(F, 1, method),
                                                 derivative(F, 1, method)))


# ---------------------------------------------------------------- energy

def tangent_projection(normals):
    n = normals.shape[1]
    return np.eye(n)[None] - np.einsum("mi,mj->mij", normals, normals)


def project_tangent(normals, Y):
    return Y - np.einsum("mi,mi->m", Y, normals)[:, None] * normals


def energy(h, method="spectral"):
    """``L_0(h) = (1/2) int |h'|^2``."""
    hd = derivative(as_samples(h), 1, method)
    return 0.5 * float(np.mean(np.sum(hd * hd, axis=1)))


def covariant_derivative(scenario, h, xi, method="spectral"):
    """Tangential part of the time derivative of a tangent field."""
    X = as_samples(h)
    V = xi.vectors if isinstance(xi, TangentField) else np.asarray(xi, dtype=float)
    out = project_tangent(scenario.normal(X), derivative(V, 1, method))
    return TangentField(out, h if isinstance(h, Loop) else Loop(X, True))


def energy_gradient(scenario, h, method="spectral"):
    """L^2 representative ``-P h''`` of ``DL_0(h)``."""
    X = as_samples(h)
    g = -project_tangent(scenario.normal(X), derivative(X, 2, method))
    return TangentField(g, h if isinstance(h, Loop) else Loop(X, True))


class JacobiOperator:
    """Second variation of ``L_0`` at a closed geodesic.

    ``J k = -(nabla nabla k) - R(k, x', x')`` with the curvature term expanded
    through the second fundamental form ``S``:
    ``R(k, x', x') = S(x',x') S k - S(k,x') S x'``.
    """

    def __init__(self, scenario, x0, method="spectral", gradient_tol=1e-6):
        X = as_samples(x0)
        self.scenario = scenario
        self.x0 = x0 if isinstance(x0, Loop) else Loop(X, True)
        self.method = method
        g = energy_gradient(scenario, X, method).norm()
        if g > gradient_tol:
            raise NotAGeodesic(f"gradient norm {g:.3g} exceeds {gradient_tol:g}")
        self.normals = scenario.normal(X)
        self.shape = scenario.shape_operator(X)
        self.velocity = derivative(X, 1, method)
        self.Sv = np.einsum("mij,mj->mi", self.shape, self.velocity)
        self.kappa = np.einsum("mi,mi->m", self.velocity, self.Sv)
        self.frames = tangent_basis(self.normals)

    @property
    def N(self):
        return self.velocity.shape[0]

    def apply(self, k):
        K = k.vectors if isinstance(k, TangentField) else np.asarray(k, dtype=float)
        Svk = np.einsum("mi,mi->m", self.Sv, K)
        connection = (project_tangent(self.normals, derivative(K, 2, self.method))
                      + Svk[:, None] * self.Sv)
        Sk = np.einsum("mij,mj->mi", self.shape, K)
        curvature = self.kappa[:, None] * Sk - Svk[:, None] * self.Sv
        return TangentField(-connection - curvature, self.x0)

    def matrix(self):
        """Matrix ``M`` in per-sample tangent coordinates, so that
        ``<J k, w> = c_w . M c_k / N``; symmetric by construction."""
        N, E = self.N, self.frames
        k = E.shape[1]
        D2 = diff_matrix(N, 2, self.method)
        M = -np.einsum("jl,jai,lbi->jalb", D2, E, E)
        local = -self.kappa[:, None, None] * np.einsum("mai,mij,mbj->mab", E, self.shape, E)
        idx = np.arange(N)
        M[idx, :, idx, :] += local
        return M.reshape(N * k, N * k)

    def to_coords(self, V):
        return np.einsum("mai,mi->ma", self.frames, V).ravel()

    def from_coords(self, c):
        k = self.frames.shape[1]
        return np.einsum("ma,mai->mi", c.reshape(self.N, k), self.frames)

    def spectrum(self):
        return np.linalg.eigvalsh(self.matrix())

    def kernel_dimension(self, threshold=1e-6):
        ev = np.abs(self.spectrum())
        return int(np.sum(ev <= threshold * ev.max()))


def second_variation_apply(scenario, x0, k, method="spectral"):
    return JacobiOperator(scenario, x0, method).apply(k)


# ---------------------------------------------------------------- geodesics

@dataclass
class DescentResult:
    loop: Loop
    energies: list = field(default_factory=list)
    gradient_norm: float = np.inf
    iterations: int = 0
    converged: bool = False


def _retract(scenario, X):
    h, _ = scenario.project_to_tube(X)
    return h


def descend(scenario, X, value_and_gradient, tol, max_iters, cls, step=1.0,
            stagnation_factor=1e3, roundoff=1e-12):
    """Backtracking descent on ``M``-valued loops with an ``H^1``
    preconditioner and per-step reprojection.

    ``value_and_gradient(X)`` returns the functional value and its L^2
    gradient (tangent).  Steps satisfy the Armijo condition until the
    predicted decrease drops below ``roundoff`` relative to the value; past
    that point a step is accepted when it lowers the gradient norm without
    raising the value beyond roundoff.  Returns the final samples, history, gradient norm,
    iteration count and convergence flag.
    """
    value, G = value_and_gradient(X)
    history = [value]
    it = 0
    while True:
        gnorm = l2_norm(G)
        if gnorm <= tol:
            return X, history, gnorm, it, True
        if it >= max_iters:
            raise MaxItersExceeded(f"gradient {gnorm:.3g} after {it} iterations")
        normals = scenario.normal(X)
        d = -project_tangent(normals, sobolev_smooth(G))
        slope = mean_inner(G, d)
        drifted = False
        t = step
        while t > 1e-14:
            try:
                trial = _retract(scenario, X + t * d)
            except TubeExit:
                t *= 0.5
                continue
            if scenario.winding(trial) != cls:
                drifted = True
                t *= 0.5
                continue
            tv, tG = value_and_gradient(trial)
            if tv <= value + 1e-4 * t * slope and tv < value:
                break
            # below float resolution of the functional: gradient norm is the merit
            floor = roundoff * max(1.0, abs(value))
            if -t * slope < floor and tv <= value + floor and l2_norm(tG) < gnorm:
                break
            t *= 0.5
        else:
            if drifted:
                raise ClassDrift("no admissible step keeps the winding data")
            if gnorm <= stagnation_factor * tol:
                # at the roundoff floor of the functional
                return X, history, gnorm, it, True
            raise MaxItersExceeded(f"line search failed at gradient {gnorm:.3g}")
        X, value, G = trial, tv, tG
        history.append(value)
        it += 1
        step = min(2.0 * t, 4.0)


def constant_speed(X, method="spectral", sweeps=3):
    """Reparametrize a loop proportionally to arclength."""
    X = np.asarray(X, dtype=float)
    N = X.shape[0]
    t = np.arange(N) / N
    for _ in range(sweeps):
        speed = np.linalg.norm(derivative(X, 1, method), axis=1)
        length = speed.mean()
        # s(t) = length t + periodic part
        fl = np.fft.fft(speed - length)
        k = wavenumbers(N)
        k[0] = 1.0
        sym = 1.0 / (2j * np.pi * k)
        sym[0] = 0.0
        sym[N // 2] = 0.0
        periodic = np.fft.ifft(fl * sym).real
        # invert s(tau) = length * t_j by Newton on the interpolants
        tau = t.copy()
        for _ in range(30):
            s = length * tau + fourier_eval(periodic, tau)
            ds = fourier_eval(speed, tau)
            step = (s - length * t) / ds
            tau -= step
            if np.max(np.abs(step)) < 1e-15:
                break
        X = fourier_eval(X, tau)
    return X


def time_gauge(X):
    """Rotate in time so that sample 0 maximizes the first coordinate."""
    X = np.asarray(X, dtype=float)
    N = X.shape[0]
    x1 = X[:, 0]
    t = np.argmax(x1) / N
    d1, d2 = derivative(x1, 1), derivative(x1, 2)
    for _ in range(20):
        a, b = fourier_eval(d1, [t])[0], fourier_eval(d2, [t])[0]
        if b >= 0:
            break
        step = a / b
        t -= step
        if abs(step) < 1e-15:
            break
    return fourier_eval(X, np.arange(N) / N + t)


def find_geodesic(scenario, seed, class_constraint=None, tol=1e-8,
                  max_iters=5000, method="spectral", gauge=True):
    """Closed geodesic in the homotopy class of ``seed`` by energy descent.

    Returns a :class:`DescentResult`.  Raises ``ClassDrift`` if the class
    changes and ``MaxItersExceeded`` if the gradient tolerance is not met.
    """
    X = _retract(scenario, as_samples(seed))
    cls = scenario.winding(X)
    if class_constraint is not None and tuple(class_constraint) != cls:
        raise ValueError(f"seed has class {cls}, expected {tuple(class_constraint)}")

    def vg(Y):
        return energy(Y, method), energy_gradient(scenario, Y, method).vectors

    X, history, gnorm, it, ok = descend(scenario, X, vg, tol, max_iters, cls)
    if gauge:
        Y = _retract(scenario, time_gauge(constant_speed(X, method)))
        # the gauge must not spoil convergence
        if energy_gradient(scenario, Y, method).norm() <= max(gnorm, tol) * 10:
            X = Y
        else:
            X = _retract(scenario, time_gauge(X))
        gnorm = energy_gradient(scenario, X, method).norm()
    if scenario.winding(X) != cls:
        raise ClassDrift(f"class changed from {cls} to {scenario.winding(X)}")
    return DescentResult(manifold_loop(scenario, X), history, gnorm, it, ok)


def norm_split(scenario, x0, z, method="spectral"):
    """Split ``z = z^T + z_n n`` along ``x0`` and measure the two-sided
    equivalence constant between ``|z|_{H^1}`` and ``|z_n| + |z^T|``."""
    X = as_samples(x0)
    Z = np.asarray(z, dtype=float)
    N = scenario.normal(X)
    zn = np.einsum("mi,mi->m", Z, N)
    zT = Z - zn[:, None] * N
    full = h1_norm(Z, method)
    cov = project_tangent(N, derivative(zT, 1, method))
    tang = np.sqrt(mean_inner(zT, zT) + mean_inner(cov, cov))
    parts = h1_norm(zn, method) + tang
    if full == 0.0 and parts == 0.0:
        c0 = 1.0
    else:
        c0 = max(full / parts, parts / full)
    base = x0 if isinstance(x0, Loop) else Loop(X, True)
    return NormSplit(TangentField(zT, base), zn, float(c0))


# ---------------------------------------------------------------- io

def write_loop_csv(path, loop):
    X = as_samples(loop)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + [f"x{i + 1}" for i in range(X.shape[1])])
        for tj, row in zip(np.arange(len(X)) / len(X), X):
            w.writerow([repr(float(tj))] + [repr(float(v)) for v in row])


def read_loop_csv(path, on_manifold=False):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    if header[0] != "t" or not header[1:]:
        raise ValueError(f"{path}: expected columns t, x1..xn")
    data = np.array([[float(v) for v in r[1:]] for r in body])
    return Loop(data, on_manifold)
