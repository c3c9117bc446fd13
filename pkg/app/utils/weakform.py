"""
Weak formulation of v = h + u_perp on sampled graphs.

All space-time integrals are trapezoid sums over grid nodes of integrands
evaluated at graph points (x, f(x,t), t), with d H^{n-1} = sqrt(1+|grad f|^2) dx.
Test functions are evaluated in closed form. The quadrature error estimate is
|I_h - I_2h| / 3 from the stride-2 subsample (needs even N and M).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import integrate

from app.core.config import logger
from app.utils.geometry import curvature_slice, mean_curvature, normal_and_area, time_slope, velocity
from app.utils.grid import AmbientField, GraphFlow, SpaceTimeGrid, gradient, hessian
from app.utils.pool import run_ordered
from app.utils.testfn import SupportError, TestFunction


class InadmissibleExponents(ValueError):
    pass


class WeakFormError(ValueError):
    pass


# ---------- Exponents ----------

@dataclass(frozen=True)
class Exponents:
    k: int
    p: Optional[float]
    q: float
    alpha: float
    n: Optional[int] = None
    beta: Optional[float] = None
    gamma: Optional[float] = None
    any_p: bool = False
    alpha_upper: Optional[float] = None


def _check_pq(p: float, q: float) -> None:
    for name, v in (("p", p), ("q", q)):
        if not (np.isfinite(v) and v >= 2.0):
            raise InadmissibleExponents(f"{name} must lie in [2, inf), got {v}")


def admissibility(k: int, p: float, q: float) -> Exponents:
    """alpha = 1 - k/p - 2/q, rejected unless positive."""
    if int(k) != k or k < 1:
        raise InadmissibleExponents(f"surface dimension k must be a positive integer, got {k}")
    _check_pq(p, q)
    alpha = 1.0 - k / p - 2.0 / q
    if alpha <= 0:
        raise InadmissibleExponents(f"alpha = 1 - {k}/{p} - 2/{q} = {alpha:.6g} is not positive")
    return Exponents(k=int(k), p=float(p), q=float(q), alpha=alpha)


def theorem_exponents(n: int, beta: float, gamma: float) -> Exponents:
    """(p, q, alpha) from integrability exponents beta of the forcing in space and gamma in time."""
    if n not in (2, 3):
        raise InadmissibleExponents(f"n must be 2 or 3, got {n}")
    if not gamma > 2.0:
        raise InadmissibleExponents(f"gamma must exceed 2, got {gamma}")
    gate = n * gamma / (2.0 * (gamma - 1.0))
    if not gate < beta:
        raise InadmissibleExponents(f"n gamma / (2 (gamma - 1)) = {gate:.6g} must be below beta = {beta}")
    if n == 2 and beta < 4.0 / 3.0:
        raise InadmissibleExponents(f"beta must be at least 4/3 when n = 2, got {beta}")
    if beta >= n:
        upper = 1.0 - 2.0 / gamma
        return Exponents(k=n - 1, p=None, q=float(gamma), alpha=upper, n=n, beta=float(beta),
                         gamma=float(gamma), any_p=True, alpha_upper=upper)
    p = beta * (n - 1) / (n - beta)
    alpha = 2.0 - n / beta - 2.0 / gamma
    if alpha <= 0:
        raise InadmissibleExponents(f"alpha = {alpha:.6g} is not positive")
    return Exponents(k=n - 1, p=p, q=float(gamma), alpha=alpha, n=n, beta=float(beta), gamma=float(gamma))


# ---------- Quadrature ----------

def _space_integral(values: np.ndarray, h: float) -> float:
    out = values
    for _ in range(values.ndim):
        out = integrate.trapezoid(out, dx=h, axis=0)
    return float(out)


class _SpaceTime:
    """Accumulates trapezoid sums on the grid and its stride-2 subsample."""

    def __init__(self, grid: SpaceTimeGrid):
        self.grid = grid
        self.coarse = grid.N % 2 == 0 and grid.M % 2 == 0
        self.wt = grid.time_weights()
        if self.coarse:
            w2 = np.full(grid.M // 2 + 1, 2.0 * grid.dt)
            w2[0] = w2[-1] = grid.dt
            self.wt2 = w2
        self.fine: Dict[str, float] = {}
        self.sub: Dict[str, float] = {}

    def add(self, j: int, parts: Dict[str, np.ndarray]) -> None:
        hx = self.grid.hx
        for key, arr in parts.items():
            self.fine[key] = self.fine.get(key, 0.0) + self.wt[j] * _space_integral(arr, hx)
            if self.coarse and j % 2 == 0:
                sub = arr[tuple([slice(None, None, 2)] * arr.ndim)]
                self.sub[key] = self.sub.get(key, 0.0) + self.wt2[j // 2] * _space_integral(sub, 2.0 * hx)

    def error(self, keys: Sequence[str]) -> Optional[float]:
        if not self.coarse:
            return None
        fine = sum(self.fine.get(k, 0.0) for k in keys)
        sub = sum(self.sub.get(k, 0.0) for k in keys)
        return abs(fine - sub) / 3.0


def _support_indices(grid: SpaceTimeGrid, phi: TestFunction) -> np.ndarray:
    lo, hi = phi.time_support()
    t = grid.t()
    return np.flatnonzero((t > lo) & (t < hi))


def _nodes(gf: GraphFlow, j: int):
    grid = gf.grid
    return grid.mesh(), gf.f[j], grid.t()[j]


# ---------- Norms ----------

def lpq_norm(gf: GraphFlow, u: AmbientField, p: float, q: float) -> float:
    """(int (int_{M_t} |u|^p dH)^{q/p} dt)^{1/q}."""
    _check_pq(p, q)
    grid = gf.grid
    inner = np.empty(grid.M + 1)
    for j in range(grid.M + 1):
        uj = u.on_graph(gf, j)
        if not np.all(np.isfinite(uj)):
            raise WeakFormError(f"forcing is not finite on the graph at t={grid.t()[j]:.6g}")
        _, area = normal_and_area(gf, j)
        mag = np.sqrt(np.sum(uj * uj, axis=0))
        inner[j] = _space_integral(mag ** p * area, grid.hx)
    total = integrate.trapezoid(np.maximum(inner, 0.0) ** (q / p), dx=grid.dt)
    out = float(total ** (1.0 / q))
    if not np.isfinite(out):
        raise WeakFormError(f"L^{p},{q} norm is not finite")
    return out


@dataclass(frozen=True)
class StrongNorms:
    time_derivative: float
    hessian: float
    p: float
    q: float
    margin: float


def strong_norms(gf: GraphFlow, p: float, q: float, s: float) -> StrongNorms:
    """L^q_t L^p_x norms of d_t f and |Hess f| over the cube of half-width 1-s and t in (t0 + s^2, t1)."""
    grid = gf.grid
    if not 0.0 < s < 1.0:
        raise WeakFormError(f"margin must lie in (0, 1), got {s}")
    mask = grid.inner_mask(s)
    t = grid.t()
    js = np.flatnonzero(t >= grid.t0 + s * s - 1e-12)
    if len(js) < 2:
        raise WeakFormError(f"fewer than two time levels after t0 + s^2 = {grid.t0 + s * s:.6g}")
    w = grid.spatial_weights()
    ft_in, hess_in = [], []
    for j in js:
        ft, _ = time_slope(gf, int(j))
        frob = np.sqrt(np.sum(hessian(gf.f[j], grid.hx) ** 2, axis=(0, 1)))
        ft_in.append(float(np.sum((np.abs(ft) ** p * w)[mask])))
        hess_in.append(float(np.sum((frob ** p * w)[mask])))

    def outer(vals):
        return float(integrate.trapezoid(np.array(vals) ** (q / p), x=t[js]) ** (1.0 / q))

    return StrongNorms(time_derivative=outer(ft_in), hessian=outer(hess_in), p=float(p), q=float(q), margin=float(s))


# ---------- Brakke residual ----------

@dataclass
class WeakFormReport:
    total: float
    curvature_term: float
    transport_term: float
    time_term: float
    quad_error: Optional[float] = None

    def to_dict(self) -> Dict:
        return {
            "total": self.total,
            "curvature_term": self.curvature_term,
            "transport_term": self.transport_term,
            "time_term": self.time_term,
            "quad_error": self.quad_error,
        }


def _brakke_parts(gf: GraphFlow, u: AmbientField, phi: TestFunction, j: int) -> Dict[str, np.ndarray]:
    xs, fj, t = _nodes(gf, j)
    cf = mean_curvature(gf, j)
    _, area = normal_and_area(gf, j)
    val = phi.value(xs, fj, t)
    grad = phi.gradient(xs, fj, t)
    dphi = phi.time_derivative(xs, fj, t)
    uj = u.on_graph(gf, j)
    un = np.sum(uj * cf.nu, axis=0)
    lead = grad - val[None] * cf.hvec
    return {
        "curvature": np.sum(lead * cf.hvec, axis=0) * area,
        "transport": un * np.sum(lead * cf.nu, axis=0) * area,
        "time": dphi * area,
    }


def brakke_residual(gf: GraphFlow, u: AmbientField, phi: TestFunction) -> WeakFormReport:
    """int int (grad phi - phi h) . (h + (u.nu) nu) + d_t phi dH dt."""
    try:
        phi.check_inside(gf.grid)
    except SupportError as ex:
        raise WeakFormError(f"test function support: {ex}") from ex
    acc = _SpaceTime(gf.grid)
    for j in _support_indices(gf.grid, phi):
        acc.add(int(j), _brakke_parts(gf, u, phi, int(j)))
    c = acc.fine.get("curvature", 0.0)
    tr = acc.fine.get("transport", 0.0)
    tm = acc.fine.get("time", 0.0)
    return WeakFormReport(total=c + tr + tm, curvature_term=c, transport_term=tr, time_term=tm,
                          quad_error=acc.error(("curvature", "transport", "time")))


def velocity_identity_residual(gf: GraphFlow, psi: TestFunction) -> float:
    """int int (grad psi - psi h) . v + d_t psi dH dt."""
    try:
        psi.check_inside(gf.grid)
    except SupportError as ex:
        raise WeakFormError(f"test function support: {ex}") from ex
    grid = gf.grid
    wt = grid.time_weights()
    total = 0.0
    for j in _support_indices(grid, psi):
        j = int(j)
        xs, fj, t = _nodes(gf, j)
        cf = mean_curvature(gf, j)
        vf = velocity(gf, j)
        _, area = normal_and_area(gf, j)
        val = psi.value(xs, fj, t)
        lead = psi.gradient(xs, fj, t) - val[None] * cf.hvec
        integrand = (np.sum(lead * vf.vvec, axis=0) + psi.time_derivative(xs, fj, t)) * area
        total += wt[j] * _space_integral(integrand, grid.hx)
    return total


# ---------- Pointwise residual ----------

@dataclass(frozen=True)
class PdeResidual:
    field: np.ndarray
    max: float
    l2: float


def pde_residual(gf: GraphFlow, u: AmbientField) -> PdeResidual:
    """d_t f / w - div(grad f / w) - u . nu on interior space-time nodes, w = sqrt(1+|grad f|^2)."""
    grid = gf.grid
    if grid.M < 2:
        raise WeakFormError("pointwise residual needs at least 3 time levels")
    inner = tuple([slice(1, -1)] * grid.dim)
    out = np.empty((grid.M - 1,) + tuple(s - 2 for s in grid.spatial_shape))
    for j in range(1, grid.M):
        ft, _ = time_slope(gf, j)
        nu, area = normal_and_area(gf, j)
        H = curvature_slice(gf.f[j], grid.hx)
        un = np.sum(u.on_graph(gf, j) * nu, axis=0)
        out[j - 1] = (ft / area - H - un)[inner]
    l2 = out ** 2
    l2 = integrate.trapezoid(l2, dx=grid.dt, axis=0)
    l2 = float(np.sqrt(max(_space_integral(l2, grid.hx), 0.0)))
    return PdeResidual(field=out, max=float(np.max(np.abs(out))), l2=l2)


# ---------- Blow-up ----------

@dataclass(frozen=True)
class BlowupProfile:
    """psi~ as a bump of radius R on R^n centered at height offset c (in units of lambda)."""

    radius: float = 1.0
    offset: float = 0.0
    profile: str = "bump"

    def scaled(self, gf: GraphFlow, y: Sequence[float], s: float, lam: float) -> TestFunction:
        fy = graph_value(gf, y, s)
        return TestFunction(center=tuple(y), radius=lam * self.radius, height=fy + lam * self.offset,
                            time=s, time_radius=lam * lam, profile=self.profile, separable=True,
                            amplitude=lam ** (-gf.n), normalize_time=True)


def graph_value(gf: GraphFlow, y: Sequence[float], s: float) -> float:
    idx = gf.grid.spatial_index(y)
    return float(gf.f[(gf.grid.time_index(s),) + idx])


@dataclass
class BlowupReport:
    lambdas: List[float]
    values: List[Optional[float]]
    curvature_terms: List[Optional[float]]
    limit: float
    resolvable: List[bool]
    notes: List[str] = field(default_factory=list)

    @property
    def last_resolved(self) -> Optional[float]:
        vals = [v for v, ok in zip(self.values, self.resolvable) if ok and v is not None]
        return vals[-1] if vals else None


def _residual_vector(gf: GraphFlow, u: AmbientField, j: int) -> Tuple[np.ndarray, np.ndarray]:
    """(h + (u.nu) nu - v, h) as (n,) + spatial arrays."""
    cf = mean_curvature(gf, j)
    vf = velocity(gf, j)
    un = np.sum(u.on_graph(gf, j) * cf.nu, axis=0)
    return cf.hvec + un[None] * cf.nu - vf.vvec, cf.hvec


def _blowup_terms(gf: GraphFlow, u: AmbientField, psi: TestFunction) -> Tuple[float, float]:
    grid = gf.grid
    wt = grid.time_weights()
    full = 0.0
    curv = 0.0
    for j in _support_indices(grid, psi):
        j = int(j)
        xs, fj, t = _nodes(gf, j)
        w, h = _residual_vector(gf, u, j)
        _, area = normal_and_area(gf, j)
        val = psi.value(xs, fj, t)
        grad = psi.gradient(xs, fj, t)
        full += wt[j] * _space_integral(np.sum((grad - val[None] * h) * w, axis=0) * area, grid.hx)
        curv += wt[j] * _space_integral(val * np.sum(h * w, axis=0) * area, grid.hx)
    return full, curv


def tangent_plane_limit(gf: GraphFlow, u: AmbientField, y: Sequence[float], s: float,
                        shape: BlowupProfile, points: int = 401) -> float:
    """(int over Tan_Y M_s of grad psi~) . (h + (u.nu) nu - v)(y, s)."""
    grid = gf.grid
    d = grid.dim
    j = grid.time_index(s)
    idx = grid.spatial_index(y)
    w, _ = _residual_vector(gf, u, j)
    wY = w[(slice(None),) + idx]
    slope = np.array([g[idx] for g in gradient(gf.f[j], grid.hx)])
    R = shape.radius + abs(shape.offset)
    pts = points if d == 1 else max(101, points // 2)
    ax = np.linspace(-R, R, pts)
    mesh = np.meshgrid(*([ax] * d), indexing="ij")
    height = sum(slope[a] * mesh[a] for a in range(d))
    unit = TestFunction(center=(0.0,) * d, radius=shape.radius, height=shape.offset, profile=shape.profile)
    grad = unit.gradient(mesh, height, 0.0)
    integrand = np.tensordot(wY, grad, axes=(0, 0)) * np.sqrt(1.0 + float(np.sum(slope ** 2)))
    return _space_integral(integrand, ax[1] - ax[0])


def blowup_residual(gf: GraphFlow, u: AmbientField, y: Sequence[float], s: float,
                    lambdas: Sequence[float], shape: Optional[BlowupProfile] = None) -> BlowupReport:
    """Weak-form integrand against psi_lambda for each lambda, and its tangent-plane limit."""
    shape = shape or BlowupProfile()
    grid = gf.grid

    def one(lam: float):
        if lam * shape.radius < 4.0 * grid.hx or lam * lam < 4.0 * grid.dt:
            return None, None, f"lambda={lam}: below grid resolution (need lambda R >= 4 hx and lambda^2 >= 4 dt)"
        psi = shape.scaled(gf, y, s, lam)
        try:
            psi.check_inside(grid)
        except SupportError as ex:
            return None, None, f"lambda={lam}: {ex}"
        full, curv = _blowup_terms(gf, u, psi)
        return full, curv, None

    results = run_ordered(one, list(lambdas))
    notes = [r[2] for r in results if r[2]]
    for note in notes:
        logger.warning(note)
    return BlowupReport(
        lambdas=[float(v) for v in lambdas],
        values=[r[0] for r in results],
        curvature_terms=[r[1] for r in results],
        limit=tangent_plane_limit(gf, u, y, s, shape),
        resolvable=[r[2] is None for r in results],
        notes=notes,
    )


@dataclass(frozen=True)
class BlowupScaling:
    lambdas: List[float]
    mass: List[float]
    gradient_mass: List[float]


def blowup_scaling(gf: GraphFlow, y: Sequence[float], s: float, lambdas: Sequence[float],
                   shape: Optional[BlowupProfile] = None) -> BlowupScaling:
    """int int psi_lambda dH dt and int int |grad psi_lambda| dH dt per lambda."""
    shape = shape or BlowupProfile()
    grid = gf.grid
    wt = grid.time_weights()
    mass, gmass = [], []
    for lam in lambdas:
        psi = shape.scaled(gf, y, s, lam)
        psi.check_inside(grid)
        m = g = 0.0
        for j in _support_indices(grid, psi):
            xs, fj, t = _nodes(gf, int(j))
            _, area = normal_and_area(gf, int(j))
            m += wt[j] * _space_integral(psi.value(xs, fj, t) * area, grid.hx)
            gn = np.sqrt(np.sum(psi.gradient(xs, fj, t) ** 2, axis=0))
            g += wt[j] * _space_integral(gn * area, grid.hx)
        mass.append(m)
        gmass.append(g)
    return BlowupScaling(lambdas=[float(v) for v in lambdas], mass=mass, gradient_mass=gmass)


# ---------- Violation witness ----------

WITNESS_RADII = (0.2, 0.3, 0.4)
WITNESS_OFFSETS = (-0.5, -0.25, 0.0, 0.25, 0.5)


def witness_family(gf: GraphFlow, s: Optional[float] = None) -> List[TestFunction]:
    """Fixed 5 x 5 x 3 family: 5 positions, 5 height offsets (in units of the radius), 3 radii."""
    grid = gf.grid
    s = 0.5 * (grid.t0 + grid.t1) if s is None else float(s)
    out = []
    for a in WITNESS_RADII:
        ys = np.linspace(-(0.95 - a), 0.95 - a, 5)
        for yv in ys:
            y = (float(yv),) + (0.0,) * (grid.dim - 1)
            fy = graph_value(gf, y, s)
            for off in WITNESS_OFFSETS:
                out.append(TestFunction(center=y, radius=a, height=fy + off * a, time=s,
                                        time_radius=min(a * a, 0.45 * (grid.t1 - grid.t0))))
    return out


@dataclass(frozen=True)
class ViolationScan:
    min_total: float
    witness: TestFunction
    totals: List[float]


def scan_for_violation(gf: GraphFlow, u: AmbientField, family: Optional[Sequence[TestFunction]] = None) -> ViolationScan:
    family = list(family) if family is not None else witness_family(gf)
    totals = run_ordered(lambda phi: brakke_residual(gf, u, phi).total, family)
    k = int(np.argmin(totals))
    logger.info(f"witness scan over {len(family)} bumps: min total {totals[k]:.6g}")
    return ViolationScan(min_total=float(totals[k]), witness=family[k], totals=[float(v) for v in totals])
