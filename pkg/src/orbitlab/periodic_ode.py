"""Scalar periodic linear problems ``v'' + (lam0 + gamma(t)) v = sigma(t)``.

Everything is solved on the unit period.  Helpers convert to and from the
``[0, 2 pi]`` convention, where ``lam_2pi = lam / (2 pi)^2``.

Sign convention of the kernels: ``green_kernel`` returns the positive
function ``G`` with ``-G'' + |lam| G = delta`` in the repulsive case, so the
solution of ``v'' + lam v = sigma`` is ``v = -G * sigma``; in the
attractive case the kernel solves ``G'' + lam G = delta`` and ``v = G * sigma``.
"""

import csv
import warnings
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import integrate, linalg

from .errors import FixedPointDiverged, ResonantLambda

TWO_PI = 2.0 * np.pi


def to_period_one(lam_2pi):
    return TWO_PI ** 2 * lam_2pi


def to_two_pi(lam):
    return lam / TWO_PI ** 2


def _wavenumbers(N):
    return np.fft.fftfreq(N, 1.0 / N)


def check_resonance(lam, rel=1e-8):
    """Raise ``ResonantLambda`` if ``lam`` is within ``rel`` of some
    ``(2 pi k)^2``."""
    if lam < 0:
        return
    k = np.rint(np.sqrt(lam) / TWO_PI)
    gap = abs(lam - (TWO_PI * k) ** 2)
    if gap <= rel * max(1.0, abs(lam)):
        raise ResonantLambda(f"lambda = {lam:.12g} is on the eigenvalue (2 pi {int(k)})^2")


def spectral_distance(lam):
    """Distance from ``lam`` to the periodic spectrum ``{(2 pi k)^2}``."""
    if lam < 0:
        return -lam
    k = np.rint(np.sqrt(lam) / TWO_PI)
    return float(min(abs(lam - (TWO_PI * j) ** 2) for j in (k - 1, k, k + 1) if j >= 0))


# ---------------------------------------------------------------- kernels

def green_kernel(lam, t):
    """Closed-form periodic kernel on the unit period, for ``t`` in [0, 1]."""
    t = np.asarray(t, dtype=float)
    if lam < 0:
        mu = np.sqrt(-lam)
        # cosh(mu (t - 1/2)) / (2 mu sinh(mu/2)) written without overflow
        return (np.exp(mu * (t - 1.0)) + np.exp(-mu * t)) / (2 * mu * (-np.expm1(-mu)))
    check_resonance(lam)
    w = np.sqrt(lam)
    return np.cos(w * (t - 0.5)) / (2 * w * np.sin(w / 2))


@dataclass(frozen=True)
class GreenKernel:
    mode: str
    lam: float
    values: np.ndarray
    sup_norm: float
    l1_norm: float

    @property
    def lam_2pi(self):
        return to_two_pi(self.lam)

    @property
    def sup_norm_2pi(self):
        return TWO_PI * self.sup_norm

    @property
    def l1_norm_2pi(self):
        return TWO_PI ** 2 * self.l1_norm


def kernel_table(lam, N):
    """Tabulated kernel with its analytic norms (unit-period units)."""
    t = np.arange(N) / N
    vals = green_kernel(lam, t)
    if lam < 0:
        mu = np.sqrt(-lam)
        sup = 1.0 / (2 * mu * np.tanh(mu / 2))
        l1 = 1.0 / mu ** 2
        mode = "repulsive"
    else:
        w = np.sqrt(lam)
        s = abs(np.sin(w / 2))
        sup = 1.0 / (2 * w * s)
        # integral of |cos(w (t - 1/2))| over [0, 1]
        l1 = _abs_cos_integral(w) / (2 * w * s)
        mode = "attractive"
    return GreenKernel(mode, lam, vals, sup, l1)


def _abs_cos_integral(w):
    """``int_{-1/2}^{1/2} |cos(w s)| ds``."""
    half = w / 2
    full, rest = divmod(half, np.pi / 2)
    # |sin| primitive over whole quarter periods is 1 each
    return 2.0 / w * (full + (np.sin(rest) if int(full) % 2 == 0 else 1 - np.cos(rest)))


@lru_cache(maxsize=64)
def _kernel_fourier(lam, N):
    """Fourier coefficients ``int_0^1 G(t) cos(2 pi k t) dt`` by adaptive
    quadrature of the closed-form kernel."""
    K = N // 2 + 1
    coef = np.empty(K)
    f = lambda t: float(green_kernel(lam, t))
    scale = 1.0 / max(1.0, np.sqrt(abs(lam)))
    pts = [scale * j for j in (1, 4, 16) if scale * j < 0.5]
    pts += [1 - p for p in pts]
    with warnings.catch_warnings():
        # quadpack flags roundoff near 1e-13; accuracy is checked against the
        # spectral path instead
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        for k in range(K):
            coef[k] = _quad_coefficient(f, k, pts)
    return coef


def _quad_coefficient(f, k, pts):
    if k == 0:
        return integrate.quad(f, 0, 1, points=sorted(pts), limit=400,
                              epsabs=0, epsrel=1e-13)[0]
    return integrate.quad(f, 0, 1, weight="cos", wvar=TWO_PI * k,
                          limit=400, epsabs=1e-17, epsrel=1e-13)[0]


# ---------------------------------------------------------------- solvers

def solve_constant(lam, sigma, method="spectral"):
    """Solve ``v'' + lam v = sigma`` on the unit period.

    ``method="spectral"`` divides Fourier coefficients by the symbol;
    ``method="convolution"`` convolves the trigonometric interpolant of
    ``sigma`` with the closed-form kernel, whose Fourier coefficients are
    obtained by quadrature.
    """
    sigma = np.asarray(sigma, dtype=float)
    N = sigma.shape[0]
    check_resonance(lam)
    k = _wavenumbers(N)
    if method == "spectral":
        symbol = lam - (TWO_PI * k) ** 2
        return np.real(np.fft.ifft(np.fft.fft(sigma) / symbol))
    if method == "convolution":
        c = _kernel_fourier(float(lam), N)
        ghat = c[np.abs(k).astype(int)]
        sign = -1.0 if lam < 0 else 1.0
        return sign * np.real(np.fft.ifft(np.fft.fft(sigma) * ghat))
    raise ValueError(f"unknown method {method!r}")


class PeriodicOperator:
    """Dense factorization of ``d^2/dt^2 + lam0 + gamma(t)``."""

    def __init__(self, lam0, gamma=None, N=None):
        if gamma is None:
            gamma = np.zeros(N)
        gamma = np.asarray(gamma, dtype=float)
        self.N = gamma.shape[0]
        self.lam0 = lam0
        self.gamma = gamma
        k = _wavenumbers(self.N)
        D2 = np.real(np.fft.ifft(-(TWO_PI * k)[:, None] ** 2 * np.fft.fft(np.eye(self.N), axis=0), axis=0))
        self.matrix = D2 + np.diag(lam0 + gamma)
        self._lu = linalg.lu_factor(self.matrix)

    def solve(self, sigma):
        return linalg.lu_solve(self._lu, np.asarray(sigma, dtype=float))

    def condition(self):
        return np.linalg.cond(self.matrix)


@dataclass(frozen=True)
class PeriodicLinearProblem:
    lam0: float
    gamma: np.ndarray
    sigma: np.ndarray

    @property
    def mode(self):
        return "repulsive" if self.lam0 < 0 else "attractive"

    @property
    def N(self):
        return len(self.sigma)


@dataclass(frozen=True)
class PerturbedSolution:
    v: np.ndarray
    iterations: int
    contraction: float
    direct_gap: float
    ratio_l1: float
    ratio_linf: float


def forcing_l1_2pi(f_period_one):
    """``||f||_{L^1(0, 2 pi)}`` of a unit-period forcing expressed in 2 pi time."""
    return TWO_PI * np.mean(np.abs(f_period_one)) / TWO_PI ** 2


def forcing_sup_2pi(f_period_one):
    return np.max(np.abs(f_period_one)) / TWO_PI ** 2


def solve_perturbed(problem, tol=1e-12, max_iter=500, energy_cap=None):
    """Fixed-point solve checked against a direct dense solve.

    Returns the direct solution with the iteration count, the observed
    contraction factor, the gap between both paths and the audit ratios
    ``|v|_inf 2 sqrt|lam0| / |sigma|_L1`` and ``|v|_inf |lam0| / |sigma|_inf``
    (both independent of the time convention).
    """
    lam0, gamma, sigma = problem.lam0, np.asarray(problem.gamma), np.asarray(problem.sigma)
    check_resonance(lam0)
    if energy_cap is not None and np.mean(np.abs(gamma)) > energy_cap:
        raise ValueError("|gamma|_L1 exceeds the cap")
    direct = PeriodicOperator(lam0, gamma).solve(sigma)
    v = solve_constant(lam0, sigma)
    prev_step = None
    ratio = 0.0
    for it in range(1, max_iter + 1):
        nxt = solve_constant(lam0, sigma - gamma * v)
        step = np.max(np.abs(nxt - v))
        v = nxt
        if prev_step:
            ratio = step / prev_step
            if ratio >= 1.0 and step > tol * max(1.0, np.max(np.abs(v))):
                raise FixedPointDiverged(f"increment ratio {ratio:.3g} at iteration {it}")
        if step <= tol * max(np.max(np.abs(v)), 1e-300):
            break
        prev_step = step
    else:
        raise FixedPointDiverged(f"no convergence in {max_iter} iterations")
    gap = np.max(np.abs(v - direct)) / max(np.max(np.abs(direct)), 1e-300)
    vs = np.max(np.abs(direct))
    r1 = vs * 2 * np.sqrt(abs(lam0)) / np.mean(np.abs(sigma)) if np.any(sigma) else 0.0
    rinf = vs * abs(lam0) / np.max(np.abs(sigma)) if np.any(sigma) else 0.0
    return PerturbedSolution(direct, it, ratio, gap, r1, rinf)


def resonance_epsilons(b0, k_range, convention="period1"):
    """Attractive sequence with ``b0 / eps_k = (k + 1/2)^2`` (2 pi time),
    i.e. ``eps_k = b0 / (2 pi (k + 1/2))^2`` on the unit period."""
    if b0 <= 0:
        raise ValueError("b0 must be positive")
    k = np.asarray(list(k_range), dtype=float)
    eps = b0 / (k + 0.5) ** 2
    if convention == "period1":
        return eps / TWO_PI ** 2
    if convention == "2pi":
        return eps
    raise ValueError(f"unknown convention {convention!r}")


@dataclass(frozen=True)
class PerturbationRow:
    lam0: float  # 2 pi time
    mode: str
    trials: int
    worst_l1: float
    worst_linf: float
    worst_gap: float


def perturbation_audit(mode, lambdas_2pi, trials=100, gamma_l1=1.0, N=512, rng=None):
    """Worst ratios of ``|v|_inf`` to the asymptotic bounds for random
    perturbed problems, in 2 pi time.

    The ``L^1`` bound is ``|sigma|_L1 / (2 sqrt|lam0|)`` in both modes; the
    sup bound is ``|sigma|_inf / |lam0|`` (repulsive) and
    ``2 |sigma|_inf / sqrt(lam0)`` (attractive).  ``gamma`` is scaled to
    ``|gamma|_{L^1(0, 2 pi)} = gamma_l1``.  A ratio at most ``1 + delta``
    confirms the bound with slack ``delta``.
    """
    g = np.random.default_rng(rng)
    rows = []
    for lam_2pi in lambdas_2pi:
        lam = to_period_one(lam_2pi)
        root = np.sqrt(abs(lam_2pi))
        w1 = winf = gap = 0.0
        # near-extremal forcings first: a delta, a constant, the kernel sign
        extremal = [_delta(N), np.ones(N), np.sign(green_kernel(lam, np.arange(N) / N))]
        for i in range(trials):
            gamma = g.normal(size=N)
            if mode == "repulsive":
                gamma = -np.abs(gamma)
            gamma *= gamma_l1 / forcing_l1_2pi(gamma)
            sigma = extremal[i] if i < len(extremal) else g.normal(size=N)
            sol = solve_perturbed(PeriodicLinearProblem(lam, gamma, sigma))
            vs = np.max(np.abs(sol.v))
            w1 = max(w1, vs * 2 * root / forcing_l1_2pi(sigma))
            if mode == "repulsive":
                winf = max(winf, vs * root ** 2 / forcing_sup_2pi(sigma))
            else:
                winf = max(winf, vs * root / (2 * forcing_sup_2pi(sigma)))
            gap = max(gap, sol.direct_gap)
        rows.append(PerturbationRow(float(lam_2pi), mode, trials, float(w1),
                                    float(winf), float(gap)))
    return rows


# ---------------------------------------------------------------- audit

@dataclass(frozen=True)
class AuditRow:
    lam0: float  # 2 pi time
    mode: str
    bound: float
    observed: float
    margin: float
    simple_constant: float

    @property
    def simple_constant_holds(self):
        return self.observed <= self.simple_constant * (1 + 1e-12)


def _delta(N, center=0):
    s = np.zeros(N)
    s[center] = N
    return s


def estimate_audit(mode, lambdas_2pi, trials=20, N=1024, rng=None, slack=1e-6):
    """Sharpest observed ``|v|_inf / |sigma|_{L^1(0, 2 pi)}`` per ``lam0``.

    The bound is the exact kernel sup (``coth``-corrected in the repulsive
    case).  Each row records the observed ratio, the bound and the simpler
    ``1 / (2 sqrt|lam0|)`` constant for comparison.  ``slack`` absorbs the
    aliasing of the discrete delta forcing, whose trigonometric interpolant
    has small negative lobes.
    """
    g = np.random.default_rng(rng)
    rows = []
    for lam_2pi in lambdas_2pi:
        lam = to_period_one(lam_2pi)
        if mode == "repulsive" and lam >= 0 or mode == "attractive" and lam <= 0:
            raise ValueError(f"lambda {lam_2pi} does not match mode {mode}")
        root = np.sqrt(abs(lam_2pi))
        if mode == "repulsive":
            bound = 1.0 / (2 * root * np.tanh(np.pi * root))
        else:
            bound = 1.0 / (2 * root * abs(np.sin(np.pi * root)))
        forcings = [_delta(N)] + [g.normal(size=N) for _ in range(trials)]
        worst = 0.0
        for sigma in forcings:
            # same v solves the 2 pi problem with forcing sigma / (2 pi)^2
            v = solve_constant(lam, sigma)
            worst = max(worst, np.max(np.abs(v)) / forcing_l1_2pi(sigma))
        if worst > bound * (1 + slack):
            raise AssertionError(f"kernel bound violated at lambda {lam_2pi}: {worst} > {bound}")
        rows.append(AuditRow(float(lam_2pi), mode, float(bound), float(worst),
                             float(bound - worst), float(1.0 / (2 * root))))
    return rows


def write_audit_csv(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["lambda0", "mode", "bound", "observed", "margin"])
        for r in rows:
            w.writerow([repr(r.lam0), r.mode, repr(r.bound), repr(r.observed), repr(r.margin)])
