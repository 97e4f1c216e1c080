"""Analytic potentials, critical manifolds and their differential geometry.

Every scenario carries a potential of the form ``V = phi(beta(x), d(x))``
where ``d`` is the signed distance to a hypersurface ``M`` and ``beta`` is an
affine coefficient field, so that ``V''`` restricted to the normal direction
is ``beta`` on ``M``.  Derivatives up to third order are exact: they are
assembled from closed-form jets of the building blocks through the chain
rule, never by finite differences.

Arrays of points have shape ``(m, n)``.  A *jet* is a tuple
``(value, gradient, hessian, third)`` with shapes ``(m,)``, ``(m, n)``,
``(m, n, n)`` and ``(m, n, n, n)``.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateNormal, NondegeneracyViolation, TubeExit

TOL_MANIFOLD = 1e-10


# ---------------------------------------------------------------- jets

def norm_jet(X):
    """Jet of ``|x|`` at each row of ``X``."""
    X = np.asarray(X, dtype=float)
    n = X.shape[1]
    r = np.sqrt(np.einsum("mi,mi->m", X, X))
    with np.errstate(divide="ignore", invalid="ignore"):
        u = X / r[:, None]
        P = np.eye(n)[None] - np.einsum("mi,mj->mij", u, u)
        hess = P / r[:, None, None]
        third = -(np.einsum("mij,mk->mijk", P, u)
                  + np.einsum("mik,mj->mijk", P, u)
                  + np.einsum("mjk,mi->mijk", P, u)) / (r ** 2)[:, None, None, None]
    return r, u, hess, third


def affine_jet(X, const, grad):
    """Jet of ``const + grad . x``."""
    X = np.asarray(X, dtype=float)
    m, n = X.shape
    grad = np.asarray(grad, dtype=float)
    return (const + X @ grad, np.broadcast_to(grad, (m, n)).copy(),
            np.zeros((m, n, n)), np.zeros((m, n, n, n)))


def embed_jet(jet, index, n):
    """Lift a jet in a subset of coordinates to ``n`` coordinates."""
    f, g, h, t = jet
    m = f.shape[0]
    G = np.zeros((m, n))
    H = np.zeros((m, n, n))
    T = np.zeros((m, n, n, n))
    ix = np.asarray(index)
    G[:, ix] = g
    H[np.ix_(np.arange(m), ix, ix)] = h
    T[np.ix_(np.arange(m), ix, ix, ix)] = t
    return f, G, H, T


def compose(outer, inner):
    """Chain rule to third order.

    ``outer`` is the jet of ``phi(y_1..y_p)`` evaluated at ``y(x)`` (with
    derivative arrays indexed by the ``p`` inner variables); ``inner`` is a
    list of ``p`` jets of the ``y_a`` in ``x``.
    """
    f, fa, fab, fabc = outer
    Y1 = np.stack([j[1] for j in inner], axis=1)
    Y2 = np.stack([j[2] for j in inner], axis=1)
    Y3 = np.stack([j[3] for j in inner], axis=1)
    grad = np.einsum("ma,mai->mi", fa, Y1)
    hess = (np.einsum("mab,mai,mbj->mij", fab, Y1, Y1)
            + np.einsum("ma,maij->mij", fa, Y2))
    third = (np.einsum("mabc,mai,mbj,mck->mijk", fabc, Y1, Y1, Y1)
             + np.einsum("mab,maik,mbj->mijk", fab, Y2, Y1)
             + np.einsum("mab,mai,mbjk->mijk", fab, Y1, Y2)
             + np.einsum("mab,maij,mbk->mijk", fab, Y2, Y1)
             + np.einsum("ma,maijk->mijk", fa, Y3))
    return f, grad, hess, third


def _polynomial_outer(beta, d, cubic):
    """Jet of ``phi(beta, d) = beta d^2 / 2 + cubic d^3`` in ``(beta, d)``."""
    m = beta.shape[0]
    f = 0.5 * beta * d ** 2 + cubic * d ** 3
    fa = np.stack([0.5 * d ** 2, beta * d + 3 * cubic * d ** 2], axis=1)
    fab = np.zeros((m, 2, 2))
    fab[:, 0, 1] = fab[:, 1, 0] = d
    fab[:, 1, 1] = beta + 6 * cubic * d
    fabc = np.zeros((m, 2, 2, 2))
    fabc[:, 0, 1, 1] = fabc[:, 1, 0, 1] = fabc[:, 1, 1, 0] = 1.0
    fabc[:, 1, 1, 1] = 6 * cubic
    return f, fa, fab, fabc


# ---------------------------------------------------------------- frames

@dataclass(frozen=True)
class ManifoldFrame:
    point: np.ndarray
    normal: np.ndarray
    tangents: np.ndarray  # (n-1, n), rows are e_i
    H: np.ndarray  # second fundamental form in the tangent basis
    b: float
    lambda_local: float


@dataclass(frozen=True)
class AdaptedDerivatives:
    """Components of ``V''`` and ``V'''`` in the frame ``(e_1..e_{n-1}, n)``.

    The last index is the normal one.
    """

    frame: ManifoldFrame
    second: np.ndarray
    third: np.ndarray

    @property
    def b(self):
        return self.second[-1, -1]

    @property
    def tangential_grad_b(self):
        return self.third[:-1, -1, -1]

    @property
    def normal_grad_b(self):
        return self.third[-1, -1, -1] / 3.0


@dataclass(frozen=True)
class ScenarioBounds:
    H_bar: float
    b_extreme: float
    Lambda: float
    energy_cap: float | None
    sample_count: int

    def attractive_admissible(self, energy_cap=None):
        A = self.energy_cap if energy_cap is None else energy_cap
        return 4.0 * self.Lambda * self.H_bar * A < self.b_extreme

    def contraction_constant(self, energy_cap=None):
        """Constant ``C`` of the attractive contraction radius ``C sqrt(eps)``."""
        A = self.energy_cap if energy_cap is None else energy_cap
        b0, lam, H = self.b_extreme, self.Lambda, self.H_bar
        x = 4.0 * lam * H * A / b0
        if lam == 0.0:
            return H * A / (2.0 * np.sqrt(b0))
        return (1.0 - np.sqrt(1.0 - x)) * np.sqrt(b0) / (4.0 * lam)


def tangent_basis(normals):
    """Orthonormal tangent frames ``(m, n-1, n)`` completing each normal."""
    N = np.atleast_2d(normals)
    m, n = N.shape
    if n == 2:
        return np.stack([-N[:, 1], N[:, 0]], axis=1)[:, None, :]
    if n != 3:
        raise ValueError("tangent frames implemented for n = 2, 3")
    axis = np.argmin(np.abs(N), axis=1)
    a = np.eye(3)[axis]
    e1 = a - np.einsum("mi,mi->m", a, N)[:, None] * N
    e1 /= np.linalg.norm(e1, axis=1)[:, None]
    e2 = np.cross(N, e1)
    return np.stack([e1, e2], axis=1)


# ---------------------------------------------------------------- scenarios

@dataclass(frozen=True)
class Scenario:
    """Base class: subclasses supply the signed distance and projection.

    Parameters
    ----------
    b0 : float
        Normal Hessian on ``M`` (constant part).  Negative is repulsive.
    b_grad : array_like, optional
        Gradient of the affine coefficient ``beta(x) = b0 + b_grad . x``.
    cubic : float
        Coefficient of the ``d^3`` term.
    potential : {"quadratic", "quartic"}
        ``"quartic"`` uses ``(b0/8)(|x|^2 - 1)^2`` (circle and sphere only).
    """

    b0: float = -1.0
    b_grad: tuple | None = None
    cubic: float = 0.0
    potential: str = "quadratic"
    name: str = field(default="", init=False)
    dim: int = field(default=0, init=False)

    def __post_init__(self):
        if self.b0 == 0.0:
            raise ValueError("b0 must be nonzero")
        if self.potential not in ("quadratic", "quartic"):
            raise ValueError(f"unknown potential {self.potential!r}")
        if self.b_grad is not None:
            g = tuple(float(c) for c in self.b_grad)
            if len(g) != self.dim:
                raise ValueError("b_grad has the wrong dimension")
            if np.linalg.norm(g) * self.max_radius >= abs(self.b0):
                raise ValueError("b_grad too large: b would change sign on M")
            object.__setattr__(self, "b_grad", g)

    # subclass hooks
    max_radius = 1.0

    def distance_jet(self, X):
        raise NotImplementedError

    def project(self, U):
        raise NotImplementedError

    @property
    def tube_radius(self):
        raise NotImplementedError

    # ------------------------------------------------------------ potential

    @property
    def sign(self):
        return "repulsive" if self.b0 < 0 else "attractive"

    @property
    def constant_b(self):
        return self.b_grad is None or not np.any(self.b_grad)

    def params(self):
        out = {"b0": self.b0, "cubic": self.cubic, "potential": self.potential}
        if self.b_grad is not None:
            out["b_grad"] = list(self.b_grad)
        return out

    def potential_jet(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if self.potential == "quartic":
            s = np.einsum("mi,mi->m", X, X)
            m, n = X.shape
            sj = (s, 2 * X, np.broadcast_to(2 * np.eye(n), (m, n, n)).copy(),
                  np.zeros((m, n, n, n)))
            c = self.b0 / 8.0
            outer = (c * (s - 1) ** 2, (2 * c * (s - 1))[:, None],
                     np.full((m, 1, 1), 2 * c), np.zeros((m, 1, 1, 1)))
            return compose(outer, [sj])
        dj = self.distance_jet(X)
        g = np.zeros(X.shape[1]) if self.b_grad is None else np.array(self.b_grad)
        bj = affine_jet(X, self.b0, g)
        return compose(_polynomial_outer(bj[0], dj[0], self.cubic), [bj, dj])

    def V(self, X):
        return self.potential_jet(X)[0]

    def grad(self, X):
        return self.potential_jet(X)[1]

    def hess(self, X):
        return self.potential_jet(X)[2]

    def third(self, X):
        return self.potential_jet(X)[3]

    # ------------------------------------------------------------ geometry

    def normal(self, X):
        """Unit normal field ``grad d`` (valid in the tube)."""
        return self.distance_jet(np.atleast_2d(X))[1]

    def shape_operator(self, X):
        """Ambient ``hess d``; on ``M`` it is the second fundamental form
        extended by zero in the normal direction."""
        return self.distance_jet(np.atleast_2d(X))[2]

    def project_to_tube(self, U):
        """Foot points and signed normal distances, ``u = h + v n_h``."""
        U = np.asarray(U, dtype=float)
        single = U.ndim == 1
        h, v = self.project(np.atleast_2d(U))
        if not np.all(np.isfinite(v)) or np.any(np.abs(v) > self.tube_radius):
            raise TubeExit(
                f"distance {np.nanmax(np.abs(v)):.3g} exceeds tube radius "
                f"{self.tube_radius:.3g}")
        return (h[0], v[0]) if single else (h, v)

    def check_on_manifold(self, X, tol=1e-9):
        d = self.distance_jet(np.atleast_2d(X))[0]
        if np.max(np.abs(d)) > tol:
            raise ValueError(f"points are {np.max(np.abs(d)):.3g} off the manifold")

    def normal_data(self, X):
        """Vectorised normal-direction quantities at points of ``M``.

        Returns a dict with ``n``, ``shape`` (ambient), ``b``, ``grad_b``
        (tangential gradient of ``b`` as an ambient vector), ``dn_b`` and
        ``lambda_local``.
        """
        X = np.atleast_2d(X)
        _, N, S, _ = self.distance_jet(X)
        _, _, V2, V3 = self.potential_jet(X)
        b = np.einsum("mi,mij,mj->m", N, V2, N)
        t_nn = np.einsum("mijk,mj,mk->mi", V3, N, N)
        nnn = np.einsum("mi,mi->m", t_nn, N)
        grad_b = t_nn - nnn[:, None] * N
        return {"n": N, "shape": S, "b": b, "grad_b": grad_b,
                "dn_b": nnn / 3.0, "lambda_local": np.abs(nnn)}

    def frame_at(self, x):
        x = np.asarray(x, dtype=float)
        self.check_on_manifold(x)
        _, g, S, _ = self.distance_jet(x[None])
        gn = np.linalg.norm(g[0])
        if not np.isfinite(gn) or gn < 0.5:
            raise DegenerateNormal(f"|grad d| = {gn:.3g} at {x}")
        n = g[0] / gn
        E = tangent_basis(n[None])[0]
        H = E @ S[0] @ E.T
        H = 0.5 * (H + H.T)
        _, _, V2, V3 = self.potential_jet(x[None])
        b = n @ V2[0] @ n
        lam = abs(np.einsum("ijk,i,j,k->", V3[0], n, n, n))
        return ManifoldFrame(x, n, E, H, float(b), float(lam))

    def adapted_derivatives(self, x, tol=1e-8):
        """Frame components of ``V''`` and ``V'''`` with the normal-form
        vanishing pattern asserted."""
        fr = self.frame_at(x)
        B = np.vstack([fr.tangents, fr.normal])
        _, _, V2, V3 = self.potential_jet(fr.point[None])
        D2 = B @ V2[0] @ B.T
        D3 = np.einsum("ijk,ai,bj,ck->abc", V3[0], B, B, B)
        out = AdaptedDerivatives(fr, D2, D3)
        k = D2.shape[0] - 1
        scale = max(1.0, np.max(np.abs(D2)), np.max(np.abs(D3)))
        mask2 = np.ones_like(D2, dtype=bool)
        mask2[k, k] = False
        checks = {
            "D2 off the normal-normal entry": np.max(np.abs(D2[mask2])),
            "D3 tangential block": np.max(np.abs(D3[:k, :k, :k])),
            "D3_ijn - b H_ij": np.max(np.abs(D3[:k, :k, k] - out.b * fr.H)),
        }
        for label, err in checks.items():
            if err > tol * scale:
                raise NondegeneracyViolation(f"{label} = {err:.3g} at {x}")
        return out

    # ------------------------------------------------------------ symmetry

    def killing_generators(self):
        """Skew matrices generating rotations that preserve ``V``."""
        return []

    # ------------------------------------------------------------ sampling

    def sample_manifold(self, count):
        raise NotImplementedError

    def winding(self, samples):
        """Homotopy data of a closed loop (tuple of integers)."""
        return ()

    def seed_loop(self, cls, N, perturbation=0.0, rng=None):
        raise NotImplementedError


def _angle_winding(angles):
    steps = np.diff(np.concatenate([angles, angles[:1]]))
    steps = (steps + np.pi) % (2 * np.pi) - np.pi
    return int(np.rint(steps.sum() / (2 * np.pi)))


def _rotation_generator(i, j, n):
    K = np.zeros((n, n))
    K[i, j], K[j, i] = -1.0, 1.0
    return K


def _bump(t, rng, amplitude, modes=3):
    """Smooth random periodic function with zero mean."""
    out = np.zeros_like(t)
    for k in range(1, modes + 1):
        c, s = rng.normal(size=2) / k ** 2
        out += c * np.cos(2 * np.pi * k * t) + s * np.sin(2 * np.pi * k * t)
    return amplitude * out


@dataclass(frozen=True)
class CircleScenario(Scenario):
    """Unit circle in the plane."""

    def __post_init__(self):
        object.__setattr__(self, "name", "circle")
        object.__setattr__(self, "dim", 2)
        super().__post_init__()

    @property
    def tube_radius(self):
        return 0.5

    def distance_jet(self, X):
        r, u, h, t = norm_jet(X)
        return r - 1.0, u, h, t

    def project(self, U):
        r = np.linalg.norm(U, axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            return U / r[:, None], r - 1.0

    def killing_generators(self):
        return [_rotation_generator(0, 1, 2)] if self.constant_b else []

    def sample_manifold(self, count):
        th = 2 * np.pi * (np.arange(count) + 0.5) / count
        return np.column_stack([np.cos(th), np.sin(th)])

    def winding(self, samples):
        return (_angle_winding(np.arctan2(samples[:, 1], samples[:, 0])),)

    def seed_loop(self, cls=(1,), N=256, perturbation=0.0, rng=None):
        k = int(np.atleast_1d(cls)[0])
        t = np.arange(N) / N
        th = 2 * np.pi * k * t
        if perturbation:
            th = th + _bump(t, np.random.default_rng(rng), perturbation)
        return np.column_stack([np.cos(th), np.sin(th)])


@dataclass(frozen=True)
class SphereScenario(Scenario):
    """Unit sphere in three-space."""

    def __post_init__(self):
        object.__setattr__(self, "name", "sphere")
        object.__setattr__(self, "dim", 3)
        super().__post_init__()

    @property
    def tube_radius(self):
        return 0.5

    def distance_jet(self, X):
        r, u, h, t = norm_jet(X)
        return r - 1.0, u, h, t

    def project(self, U):
        r = np.linalg.norm(U, axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            return U / r[:, None], r - 1.0

    def killing_generators(self):
        if not self.constant_b:
            return []
        return [_rotation_generator(i, j, 3) for i, j in ((1, 2), (2, 0), (0, 1))]

    def sample_manifold(self, count):
        i = np.arange(count) + 0.5
        z = 1 - 2 * i / count
        phi = np.pi * (1 + 5 ** 0.5) * i
        s = np.sqrt(1 - z ** 2)
        return np.column_stack([s * np.cos(phi), s * np.sin(phi), z])

    def seed_loop(self, cls=(), N=256, perturbation=0.0, rng=None):
        """Great circle in the equatorial plane (tilted when perturbed)."""
        t = np.arange(N) / N
        th = 2 * np.pi * t
        X = np.column_stack([np.cos(th), np.sin(th), np.zeros(N)])
        if perturbation:
            X[:, 2] = _bump(t, np.random.default_rng(rng), perturbation)
            X /= np.linalg.norm(X, axis=1)[:, None]
        return X


@dataclass(frozen=True)
class TorusScenario(Scenario):
    """Torus of revolution about the z-axis with radii ``R > r``."""

    R: float = 2.0
    r: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "name", "torus")
        object.__setattr__(self, "dim", 3)
        if not self.R > self.r > 0:
            raise ValueError("need R > r > 0")
        if self.potential != "quadratic":
            raise ValueError("torus supports the quadratic potential only")
        super().__post_init__()

    @property
    def max_radius(self):
        return self.R + self.r

    @property
    def tube_radius(self):
        return 0.4 * self.r

    def params(self):
        return {**super().params(), "R": self.R, "r": self.r}

    def distance_jet(self, X):
        X = np.asarray(X, dtype=float)
        rho = embed_jet(norm_jet(X[:, :2]), [0, 1], 3)
        z = affine_jet(X, 0.0, [0.0, 0.0, 1.0])
        s, ds, hs, ts = norm_jet(np.column_stack([rho[0] - self.R, X[:, 2]]))
        return compose((s - self.r, ds, hs, ts), [rho, z])

    def project(self, U):
        rho = np.linalg.norm(U[:, :2], axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            core = np.column_stack([self.R * U[:, :2] / rho[:, None],
                                    np.zeros(len(U))])
            q = U - core
            s = np.linalg.norm(q, axis=1)
            return core + self.r * q / s[:, None], s - self.r

    def killing_generators(self):
        if self.b_grad is None or not np.any(self.b_grad[:2]):
            return [_rotation_generator(0, 1, 3)]
        return []

    def sample_manifold(self, count):
        k = int(np.ceil(np.sqrt(count)))
        phi, th = np.meshgrid(2 * np.pi * (np.arange(k) + 0.5) / k,
                              2 * np.pi * (np.arange(k) + 0.5) / k)
        return self.from_angles(phi.ravel(), th.ravel())

    def from_angles(self, phi, theta):
        """Point at azimuth ``phi`` and tube angle ``theta``."""
        w = self.R + self.r * np.cos(theta)
        return np.column_stack([w * np.cos(phi), w * np.sin(phi),
                                self.r * np.sin(theta)])

    def angles(self, X):
        phi = np.arctan2(X[:, 1], X[:, 0])
        rho = np.linalg.norm(X[:, :2], axis=1)
        return phi, np.arctan2(X[:, 2], rho - self.R)

    def winding(self, samples):
        phi, th = self.angles(samples)
        return (_angle_winding(phi), _angle_winding(th))

    def seed_loop(self, cls=(1, 0), N=256, perturbation=0.0, rng=None):
        """Loop of class ``(p, q)``: ``p`` turns about the axis, ``q`` about
        the core circle.  Class ``(1, 0)`` starts on the top circle so the
        descent has real work to do only when perturbed; unperturbed seeds are
        the analytic inner equator and meridian."""
        p, q = (int(c) for c in cls)
        t = np.arange(N) / N
        phi = 2 * np.pi * p * t
        th = 2 * np.pi * q * t + (np.pi if q == 0 else 0.0)
        if perturbation:
            g = np.random.default_rng(rng)
            phi = phi + _bump(t, g, perturbation)
            th = th + _bump(t, g, perturbation)
            if q == 0:
                th = th - np.pi / 2
        return self.from_angles(phi, th)


SCENARIOS = {
    "circle": CircleScenario,
    "sphere": SphereScenario,
    "torus": TorusScenario,
}


def make_scenario(name, **params):
    try:
        cls = SCENARIOS[name]
    except KeyError:
        raise ValueError(f"unknown scenario {name!r}; choose from {sorted(SCENARIOS)}")
    return cls(**params)


def scenario_bounds(scenario, sample_count=400, energy_cap=None):
    """Sampled suprema of curvature, normal Hessian and third normal
    derivative over ``M``."""
    if sample_count < 100:
        raise ValueError("need at least 100 samples")
    X = scenario.sample_manifold(sample_count)
    nd = scenario.normal_data(X)
    E = tangent_basis(nd["n"])
    H = np.einsum("mai,mij,mbj->mab", E, nd["shape"], E)
    H_bar = float(np.max(np.abs(np.linalg.eigvalsh(H))))
    b = nd["b"]
    # worst case: the b closest to zero
    b_ext = float(np.max(b) if scenario.sign == "repulsive" else np.min(b))
    lam = float(np.max(nd["lambda_local"]))
    if lam <= 1e-12 * max(1.0, np.max(np.abs(b))):
        lam = 0.0  # roundoff of an identically vanishing third derivative
    return ScenarioBounds(H_bar, b_ext, lam, energy_cap, len(X))
