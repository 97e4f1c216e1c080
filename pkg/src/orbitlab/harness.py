"""Run configuration, slope fitting and the registry of checked claims.

Each claim reruns a small, deterministic experiment and compares one
measured number with a tolerance.  Claims share expensive intermediate
results (geodesics, expansion bundles) through a :class:`ClaimContext`.
"""

import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import yaml
from scipy import integrate

from .errors import ConfigError, InsufficientPoints, SingularJacobian
from .expansion import build_bundle, residual
from .geometry import SCENARIOS, make_scenario
from .loops import (JacobiOperator, derivative, energy, energy_gradient, find_geodesic,
                    manifold_loop, mean_inner, project_tangent, time_gauge)
from .orbit import (adiabatic_sweep, attractive_correct, correct_orbit,
                    energy_drift, locate_resonance)
from .periodic_ode import (TWO_PI, green_kernel, kernel_table,
                           perturbation_audit, to_period_one)
from .reduction import (minimize_reduced, reduced_energy, reduced_gradient,
                        solve_normal)

# ---------------------------------------------------------------- slopes


@dataclass(frozen=True)
class SlopeFit:
    slope: float
    intercept: float
    r2: float

    @property
    def conclusive(self):
        return self.r2 >= 0.99


def fit_slope(pairs):
    """Least-squares line through ``(log x, log y)``.

    Raises ``InsufficientPoints`` for fewer than four pairs and
    ``ValueError`` for nonpositive data.
    """
    xy = np.asarray(list(pairs), dtype=float)
    if xy.ndim != 2 or len(xy) < 4:
        raise InsufficientPoints(f"need at least 4 points, got {len(xy)}")
    if np.any(xy <= 0):
        raise ValueError("slope fits need positive data")
    lx, ly = np.log(xy[:, 0]), np.log(xy[:, 1])
    slope, intercept = np.polyfit(lx, ly, 1)
    pred = slope * lx + intercept
    ss_tot = np.sum((ly - ly.mean()) ** 2)
    r2 = 1.0 - np.sum((ly - pred) ** 2) / ss_tot if ss_tot > 0 else 1.0
    return SlopeFit(float(slope), float(intercept), float(r2))


# ---------------------------------------------------------------- grids


def parse_grid(text):
    """Parse ``"a:b:logxK"`` (``K`` points geometrically spaced, ends
    included), ``"a:b:linK"`` or a comma list ``"1e-2,1e-3"``."""
    if isinstance(text, (list, tuple)):
        return [float(v) for v in text]
    text = str(text).strip()
    try:
        if ":" in text:
            lo, hi, kind = text.split(":")
            lo, hi = float(lo), float(hi)
            if kind.startswith("logx"):
                if lo * hi <= 0:
                    raise ValueError("geometric grid ends must share a sign")
                n = int(kind[4:])
                sign = np.sign(lo)
                return list(sign * np.geomspace(abs(lo), abs(hi), n + 1))
            if kind.startswith("lin"):
                return list(np.linspace(lo, hi, int(kind[3:])))
            raise ValueError(f"unknown spacing {kind!r}")
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad grid {text!r}: {exc}") from exc


def parse_class(text):
    if isinstance(text, (list, tuple)):
        return tuple(int(c) for c in text)
    try:
        return tuple(int(c) for c in str(text).split(",") if c.strip())
    except ValueError as exc:
        raise ConfigError(f"bad class {text!r}") from exc


# ---------------------------------------------------------------- config


@dataclass
class RunConfig:
    """Inputs of one run.

    Exactly one of ``eps`` and ``T`` may be given; they are linked by
    ``eps^2 = 1/T``.
    """

    scenario: str = "circle"
    params: dict = field(default_factory=dict)
    mode: str | None = None
    cls: tuple = (1,)
    N: int = 256
    eps: list | None = None
    T: list | None = None
    k_range: list | None = None
    out: str = "out"
    seed: int = 0
    quotient_symmetries: bool = False

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"scenario: unknown {self.scenario!r}, choose from {sorted(SCENARIOS)}")
        if self.N % 2 or self.N < 64:
            raise ConfigError(f"N: must be even and >= 64, got {self.N}")
        if self.eps is not None and self.T is not None:
            raise ConfigError("eps and T are mutually exclusive")
        if self.mode not in (None, "repulsive", "attractive"):
            raise ConfigError(f"mode: unknown {self.mode!r}")
        self.cls = parse_class(self.cls)
        if self.eps is not None:
            self.eps = parse_grid(self.eps)
        if self.T is not None:
            self.T = parse_grid(self.T)
        try:
            self.make_scenario()
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"params: {exc}") from exc

    def make_scenario(self):
        return make_scenario(self.scenario, **self.params)

    def eps_grid(self):
        if self.eps is not None:
            return list(self.eps)
        if self.T is not None:
            return [t ** -0.5 for t in self.T]
        return None

    @classmethod
    def load(cls, path):
        """Read a YAML or JSON mapping (JSON is a subset of YAML)."""
        path = Path(path)
        try:
            data = yaml.safe_load(path.read_text())
        except yaml.YAMLError as exc:
            mark = getattr(exc, "problem_mark", None)
            where = f" line {mark.line + 1}" if mark else ""
            raise ConfigError(f"{path}:{where} {exc}") from exc
        except OSError as exc:
            raise ConfigError(str(exc)) from exc
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        if "class" in data:
            data["cls"] = data.pop("class")
        known = set(cls.__dataclass_fields__)
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"{path}: unknown field(s) {unknown}")
        return cls(**data)


# ---------------------------------------------------------------- claims


@dataclass
class ClaimReport:
    claim_id: str
    anchor: str
    measured: float
    tolerance: str
    status: str  # "pass", "fail" or "inconclusive"
    runtime: float = 0.0
    details: dict = field(default_factory=dict)

    @property
    def passed(self):
        return self.status == "pass"

    def line(self):
        return (f"{self.status.upper():12s} {self.claim_id:36s} measured={self.measured:.6g} "
                f"tolerance={self.tolerance}")


class ClaimContext:
    """Memoized shared inputs for the claims."""

    def __init__(self, N=256, seed=0):
        self.N = N
        self.seed = seed
        self._cache = {}

    def _memo(self, key, build):
        if key not in self._cache:
            self._cache[key] = build()
        return self._cache[key]

    def circle(self, b0=-1.0):
        return make_scenario("circle", b0=b0)

    def circle_geodesic(self, b0=-1.0):
        sc = self.circle(b0)
        return self._memo(("circle-x0", b0),
                          lambda: manifold_loop(sc, sc.seed_loop((1,), self.N)))

    def circle_bundle(self, b0=-1.0):
        return self._memo(("circle-bundle", b0),
                          lambda: build_bundle(self.circle(b0), self.circle_geodesic(b0)))

    def torus(self, b0=-1.0):
        return make_scenario("torus", b0=b0)

    def torus_geodesic(self, cls, b0=-1.0):
        sc = self.torus(b0)
        return self._memo(("torus-x0", cls, b0),
                          lambda: find_geodesic(sc, sc.seed_loop(cls, self.N), cls).loop)

    def meridian_bundle(self, b0=-1.0):
        return self._memo(("meridian-bundle", b0), lambda: build_bundle(
            self.torus(b0), self.torus_geodesic((0, 1), b0), quotient_symmetries=True))

    def random_torus_loops(self, count, b0=-10.0):
        """Perturbed loops in both torus classes, kept below the energy cap
        ``2 L_0(geodesic) + 1``."""
        sc = self.torus(b0)
        rng = np.random.default_rng(self.seed)
        cap = 2 * energy(self.torus_geodesic((0, 1), b0)) + 1
        loops = []
        t = np.arange(self.N) / self.N

        def bump():
            k = np.arange(1, 4)[:, None]
            c, d = rng.normal(size=(2, 3, 1)) / k ** 2
            return 0.15 * np.sum(c * np.cos(TWO_PI * k * t) + d * np.sin(TWO_PI * k * t), axis=0)

        while len(loops) < count:
            p, q = ((1, 0), (0, 1))[len(loops) % 2]
            # around the inner equator or the meridian
            X = sc.from_angles(TWO_PI * p * t + bump(), TWO_PI * q * t + np.pi * (q == 0) + bump())
            if energy(X) <= cap:
                loops.append(X)
        return sc, loops, cap


def _slope_status(fit, ok):
    if not fit.conclusive:
        return "inconclusive"
    return "pass" if ok else "fail"


def claim_circle_radius(ctx):
    sc, B = ctx.circle(), ctx.circle_bundle()
    eps = 1e-3
    res = correct_orbit(sc, B.assemble(eps), eps, B)
    err = float(np.max(np.abs(np.linalg.norm(res.solution.samples, axis=1)
                              - 1 / (1 + 4 * np.pi ** 2 * eps))))
    return err, "<= 1e-9", "pass" if err <= 1e-9 else "fail", {"newton_iters": res.newton_iters}


def _residual_and_corrections(ctx):
    def run():
        out = {}
        eps = np.geomspace(1e-4, 1e-2, 9)
        for name, sc, B in (("circle", ctx.circle(), ctx.circle_bundle()),
                            ("meridian", ctx.torus(), ctx.meridian_bundle())):
            rows = []
            for e in eps:
                r = residual(sc, B.assemble(e), e).dual
                c = correct_orbit(sc, B.assemble(e), e, B)
                rows.append((e, r, c.correction_sup, c.correction_normal_sup))
            out[name] = np.array(rows)
        return out
    return ctx._memo("residual-corrections", run)


def claim_residual_slope(ctx):
    data = _residual_and_corrections(ctx)
    fits = {k: fit_slope(v[:, :2]) for k, v in data.items()}
    ok = all(1.8 <= f.slope <= 2.2 for f in fits.values())
    worst = min(fits.values(), key=lambda f: f.r2)
    status = _slope_status(worst, ok)
    measured = min(fits.values(), key=lambda f: -abs(f.slope - 2)).slope
    return measured, "slope in [1.8, 2.2], r2 >= 0.99", status, {
        k: asdict(f) for k, f in fits.items()}


def claim_correction_slope(ctx):
    data = _residual_and_corrections(ctx)
    full = {k: fit_slope(v[:, [0, 2]]) for k, v in data.items()}
    normal = {k: fit_slope(v[:, [0, 3]]) for k, v in data.items()}
    ok = all(f.slope >= 1.8 for f in full.values()) and all(f.slope > 2.0 for f in normal.values())
    worst = min(list(full.values()) + list(normal.values()), key=lambda f: f.r2)
    measured = min(f.slope for f in full.values())
    details = {f"{k}-full": asdict(f) for k, f in full.items()}
    details.update({f"{k}-normal": asdict(f) for k, f in normal.items()})
    return measured, "full slope >= 1.8, normal slope > 2", _slope_status(worst, ok), details


def claim_adiabatic_rate(ctx):
    sc, B = ctx.circle(-100.0), ctx.circle_bundle(-100.0)
    rep = adiabatic_sweep(sc, B, T_list=np.geomspace(1e2, 1e6, 9))
    fit = fit_slope(zip(rep.column("T"), rep.column("dist_C0")))
    c1 = rep.column("dist_C1")
    ok = abs(fit.slope + 0.5) <= 0.1 and bool(np.all(np.diff(c1) < 0))
    return fit.slope, "slope in [-0.6, -0.4], C1 distance decreasing", _slope_status(fit, ok), {
        "fit": asdict(fit), "dist_C1": c1.tolist()}


def claim_periodic_estimates(ctx):
    rep = perturbation_audit("repulsive", [-100.0, -1e3, -1e4], trials=100, rng=ctx.seed)
    att = perturbation_audit("attractive", [(k + 0.5) ** 2 for k in (10, 20, 30, 40, 50)],
                             trials=100, rng=ctx.seed)
    worst = max(max(r.worst_l1, r.worst_linf) for r in rep + att)
    gap = max(r.worst_gap for r in rep + att)
    kernel_err = 0.0
    for lam_2pi in (-1.0, -100.0, 10.5 ** 2, 50.5 ** 2):
        lam = to_period_one(lam_2pi)
        root = np.sqrt(abs(lam_2pi))
        if lam < 0:
            sup, l1 = 1 / (2 * root * np.tanh(np.pi * root)), 1 / abs(lam_2pi)
        else:
            sup, l1 = 1 / (2 * root), 2 / root
        tab = kernel_table(lam, 1024)
        zeros = [] if lam < 0 else [0.5 + (j + 0.5) * np.pi / np.sqrt(lam)
                                    for j in range(-int(np.sqrt(lam)), int(np.sqrt(lam)))]
        pts = sorted(z for z in zeros if 0 < z < 1)
        l1_num = integrate.quad(lambda t: abs(green_kernel(lam, t)), 0, 1,
                                points=pts or None, limit=500, epsabs=0, epsrel=1e-13)[0]
        kernel_err = max(kernel_err, abs(TWO_PI * np.max(np.abs(tab.values)) - sup) / sup,
                         abs(TWO_PI ** 2 * l1_num - l1) / l1)
    ok = worst <= 1.1 and gap <= 1e-9 and kernel_err <= 1e-10
    return worst, "ratio <= 1 + 0.1, kernel norms <= 1e-10", "pass" if ok else "fail", {
        "fixed_point_gap": gap, "kernel_norm_error": kernel_err}


def _normal_sweep(ctx):
    def run():
        sc, loops, cap = ctx.random_torus_loops(20)
        eps_list = np.geomspace(1e-4, 1e-2, 5)
        rows = []
        for X in loops:
            for e in eps_list:
                st = solve_normal(sc, X, e)
                re = reduced_energy(sc, X, e, state=st)
                dG = reduced_gradient(sc, X, e, state=st).vectors - energy_gradient(sc, X).vectors
                rows.append((e, st.v_sup, st.direct_gap, abs(re.gap),
                             np.sqrt(mean_inner(dG, dG)), st.residual))
        return np.array(rows).reshape(len(loops), len(eps_list), -1), cap
    return ctx._memo("normal-sweep", run)


def _bounded_ratio(arr, eps):
    """Largest growth of ``arr / sqrt(eps)`` as ``eps`` decreases."""
    scaled = arr / np.sqrt(eps)
    return float(np.max(scaled[:, 0] / scaled[:, -1]))


def claim_normal_bound(ctx):
    data, cap = _normal_sweep(ctx)
    eps = data[:, :, 0]
    growth = _bounded_ratio(data[:, :, 1], eps)
    gap = float(np.max(data[:, :, 2]))
    res = float(np.max(data[:, :, 5]))
    ok = growth <= 1.0 and gap <= 1e-9 and res <= 1e-9
    return growth, "|v| eps^-1/2 nonincreasing as eps -> 0, paths agree <= 1e-9", \
        "pass" if ok else "fail", {"path_gap": gap, "residual": res, "energy_cap": cap}


def claim_gap_bound(ctx):
    data, _ = _normal_sweep(ctx)
    eps = data[:, :, 0]
    g_growth = _bounded_ratio(data[:, :, 3], eps)
    dg_growth = _bounded_ratio(data[:, :, 4], eps)
    # quadratic-in-distance potential: the gap formula integrand vanishes
    sc = ctx.circle()
    re = reduced_energy(sc, ctx.circle_geodesic(), 1e-3)
    formula_zero = abs(re.gap_formula)
    direct_vs_formula = abs(re.gap - re.gap_formula)
    ok = (g_growth <= 1.0 and dg_growth <= 1.0 and formula_zero <= 1e-12
          and direct_vs_formula <= 1e-8)
    return direct_vs_formula, "bounds nonincreasing; formula gap 0 and |direct - formula| <= 1e-8", \
        "pass" if ok else "fail", {
            "gap_growth": g_growth, "gradient_gap_growth": dg_growth,
            "formula_gap": formula_zero, "direct_gap": re.gap,
            "corrected_formula_error": abs(re.gap - re.gap_corrected)}


def claim_reduced_minima(ctx):
    sc = ctx.torus(-10.0)
    alpha0 = {(1, 0): 2 * np.pi ** 2 * (sc.R - sc.r) ** 2, (0, 1): 2 * np.pi ** 2 * sc.r ** 2}
    details = {}
    ok = True
    final = 0.0
    for cls, a0 in alpha0.items():
        errs = []
        for e in (1e-2, 1e-3, 1e-4):
            m = minimize_reduced(sc, cls, e, N=ctx.N)
            errs.append(abs(m.value - a0) / a0)
        details[str(cls)] = errs
        ok = ok and bool(np.all(np.diff(errs) < 0)) and errs[-1] <= 1e-3
        final = max(final, errs[-1])
    return final, "errors decreasing, final relative error <= 1e-3", "pass" if ok else "fail", details


def claim_attractive(ctx):
    sc = ctx.circle(1.0)
    B = ctx.circle_bundle(1.0)
    ks = [10, 14, 20, 28, 40, 56, 80, 100]
    rows = []
    for k in ks:
        r = attractive_correct(sc, B, k)
        X, X0 = r.solution.samples, B.x0.samples
        c0 = float(np.max(np.abs(X - X0)))
        c1 = c0 + float(np.max(np.abs(derivative(X, 1) - derivative(X0, 1))))
        rows.append((r.eps ** -2, c0, c1, r.condition_estimate))
    rows = np.array(rows)
    fit = fit_slope(rows[:, :2])
    median = float(np.median(rows[:, 3]))
    detect = []
    for m in (5, 10):
        eps_m, cond = locate_resonance(sc, B, m)
        try:
            correct_orbit(sc, B.assemble(eps_m), eps_m, B)
            flagged = False
        except SingularJacobian:
            flagged = True
        detect.append((cond / median, flagged))
    ok = (abs(fit.slope + 0.5) <= 0.1 and bool(np.all(np.diff(rows[:, 2]) < 0))
          and all(ratio >= 1e6 and flagged for ratio, flagged in detect))
    return fit.slope, "slope in [-0.6, -0.4]; resonance condition >= 1e6 x median", \
        _slope_status(fit, ok), {"fit": asdict(fit), "median_condition": median,
                                 "resonance_ratios": [d[0] for d in detect]}


def claim_structural(ctx):
    """Finite-difference, symmetry, conservation and gauge checks."""
    rng = np.random.default_rng(ctx.seed)
    worst = {}
    # loop-energy gradient vs finite differences on the torus
    sc, loops, _ = ctx.random_torus_loops(6)
    t = np.arange(ctx.N) / ctx.N
    errs = []
    for X in loops:
        n = sc.normal(X)
        c = rng.normal(size=(3, 3))
        k = project_tangent(n, np.stack([np.sin(TWO_PI * t * (i + 1) + c[i, 0]) * c[i, 1]
                                         for i in range(3)], axis=1))
        s = 1e-5
        hp, _ = sc.project_to_tube(X + s * k)
        hm, _ = sc.project_to_tube(X - s * k)
        fd = (energy(hp) - energy(hm)) / (2 * s)
        errs.append(abs(fd - mean_inner(energy_gradient(sc, X).vectors, k)) / abs(fd))
        e = 1e-3
        fd = (reduced_energy(sc, hp, e).value - reduced_energy(sc, hm, e).value) / (2 * s)
        errs.append(abs(fd - mean_inner(reduced_gradient(sc, X, e).vectors, k)) / abs(fd))
    worst["gradient_fd"] = (max(errs), 1e-4)
    # Jacobi operator symmetry
    J = JacobiOperator(ctx.torus(), ctx.torus_geodesic((0, 1))).matrix()
    worst["jacobi_symmetry"] = (float(np.max(np.abs(J - J.T)) / np.max(np.abs(J))), 1e-8)
    # first integral along a corrected orbit
    circ, B = ctx.circle(), ctx.circle_bundle()
    res = correct_orbit(circ, B.assemble(1e-3), 1e-3, B)
    worst["energy_conservation"] = (energy_drift(circ, res.solution, 1e-3), 1e-8)
    # time gauge: sample 0 carries the largest first coordinate
    x0 = ctx.torus_geodesic((0, 1))
    shifted = time_gauge(x0.shifted(0.3137).samples)
    worst["time_gauge"] = (float(np.max(shifted[:, 0]) - shifted[0, 0]), 1e-10)
    # rotation equivariance of the normal coordinate
    torus = ctx.torus(-10.0)
    X = loops[0]
    ang = 0.7
    R = np.array([[np.cos(ang), -np.sin(ang), 0], [np.sin(ang), np.cos(ang), 0], [0, 0, 1]])
    v1 = solve_normal(torus, X, 1e-3).v
    v2 = solve_normal(torus, X @ R.T, 1e-3).v
    worst["rotation_equivariance"] = (float(np.max(np.abs(v1 - v2)) / np.max(np.abs(v1))), 1e-10)
    ratio = max(v / tol for v, tol in worst.values())
    status = "pass" if all(v <= tol for v, tol in worst.values()) else "fail"
    return ratio, "every check <= its tolerance", status, {k: v[0] for k, v in worst.items()}


CLAIMS = {
    "circle-exact-radius": ("exact circular orbit", claim_circle_radius),
    "pseudo-critical-residual-slope": ("residual of the second-order expansion", claim_residual_slope),
    "corrected-orbit-slope": ("distance of the true orbit to the expansion", claim_correction_slope),
    "adiabatic-limit-rate": ("convergence of rescaled orbits to the geodesic", claim_adiabatic_rate),
    "periodic-estimates": ("periodic Green function bounds", claim_periodic_estimates),
    "normal-coordinate-bound": ("size of the normal coordinate", claim_normal_bound),
    "reduced-gap-bound": ("gap between reduced and loop energy", claim_gap_bound),
    "reduced-minima": ("class minima of the reduced functional", claim_reduced_minima),
    "attractive-grid": ("attractive orbits on the resonance-avoiding grid", claim_attractive),
    "structural-invariants": ("finite-difference, symmetry and gauge checks", claim_structural),
}


def run_claim(claim_id, ctx=None):
    ctx = ClaimContext() if ctx is None else ctx
    anchor, fn = CLAIMS[claim_id]
    t0 = time.perf_counter()
    measured, tol, status, details = fn(ctx)
    return ClaimReport(claim_id, anchor, float(measured), tol, status,
                       time.perf_counter() - t0, details)


def run_claims(ids=None, ctx=None):
    ctx = ClaimContext() if ctx is None else ctx
    return [run_claim(i, ctx) for i in (ids or CLAIMS)]


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return obj


def write_manifest(out_dir, command, reports, files=(), config=None):
    """``manifest.json`` listing outputs and claim results."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    body = {
        "command": command,
        "created": time.strftime("%Y-%m-%dT%H:%M:%S"),
        "config": _jsonable(config or {}),
        "files": sorted(str(f) for f in files),
        "claims": [_jsonable(asdict(r)) for r in reports],
        "all_passed": all(r.passed for r in reports),
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(body, indent=2, sort_keys=True))
    return path


__all__ = [
    "SlopeFit", "fit_slope", "parse_grid", "parse_class", "RunConfig",
    "ClaimReport", "ClaimContext", "CLAIMS", "run_claim", "run_claims",
    "write_manifest",
]
