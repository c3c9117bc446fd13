"""
Parabolic mollification of sampled graphs and the signed-distance machinery
built on the mollified graph M_t^eps = {(x, f^eps(x,t))}.

- rho(z, tau) = C exp(1 - 1/(1 - |z|^2 - tau^2)) on the unit ball of R^{n-1} x R,
  rho^eps(x, t) = eps^{-n-1} rho(x/eps, t/eps^2).
- Nodal f^eps: direct correlation with the stencil rho^eps(k hx, l dt) hx^{n-1} dt,
  normalized to unit mass. Defined on nodes whose parabolic eps-neighborhood
  lies inside the grid; NaN elsewhere.
- Off-grid f^eps (nearest-point search): sum_k rho^eps(x - y_k, t - s_k) f_k /
  sum_k rho^eps(x - y_k, t - s_k). This agrees with the nodal stencil at nodes,
  and its derivatives are the exact derivatives of the quotient.
- d~ is the signed distance to M_t^eps (positive above), d = eta(d~) with a
  C^2 quintic clip that is the identity on [-eps, eps] and constant beyond 2 eps.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from itertools import product
from typing import Callable, Dict, Optional, Tuple

import numpy as np
from scipy import integrate, ndimage, optimize
from scipy.interpolate import RegularGridInterpolator

from app.core.config import NEWTON_MAX_ITER, NEWTON_TOL, logger
from app.utils.grid import GraphFlow, gradient, parabolic_seminorm
from app.utils.testfn import TestFunction


class MollifyError(ValueError):
    pass


class DistanceError(RuntimeError):
    def __init__(self, message: str, diagnostics: Optional[Dict] = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class InversionError(RuntimeError):
    pass


# ---------- Kernel ----------

def _bump(q: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """g(q) = exp(1 - 1/(1-q)) on q < 1 with g' and g''."""
    q = np.asarray(q, dtype=float)
    inside = q < 1.0
    om = np.where(inside, 1.0 - q, 1.0)
    g = np.where(inside, np.exp(1.0 - 1.0 / om), 0.0)
    g1 = np.where(inside, -g / om ** 2, 0.0)
    g2 = np.where(inside, g * (2.0 * q - 1.0) / om ** 4, 0.0)
    return g, g1, g2


_SPHERE_AREA = {2: 2.0 * np.pi, 3: 4.0 * np.pi}
# integral over the unit sphere S^{D-1} of the length of the projection onto the x-directions
_SPHERE_XPROJ = {2: 4.0, 3: np.pi ** 2}


def _radial(power: int, fn: Callable[[float], float]) -> float:
    val, _ = integrate.quad(lambda r: r ** power * fn(r), 0.0, 1.0, epsabs=1e-14, epsrel=1e-12, limit=200)
    return float(val)


@lru_cache(maxsize=None)
def kernel_moments(n: int) -> Tuple[float, float, float]:
    """(C, m2, L1 norm of grad_x rho) for the unit kernel on R^{n-1} x R.

    m2 is the second moment of one x-coordinate; the eps-kernel has m2 eps^2
    and gradient L1 norm equal to the unit value divided by eps.
    """
    D = n
    if D not in _SPHERE_AREA:
        raise MollifyError(f"kernel defined for n in (2, 3), got {n}")
    g = lambda r: float(_bump(r * r)[0])
    g1 = lambda r: float(abs(_bump(r * r)[1]))
    mass = _SPHERE_AREA[D] * _radial(D - 1, g)
    C = 1.0 / mass
    m2 = _radial(D + 1, g) / (D * _radial(D - 1, g))
    grad_l1 = 2.0 * C * _SPHERE_XPROJ[D] * _radial(D, g1)
    return C, m2, grad_l1


@dataclass(frozen=True)
class MollifierKernel:
    n: int

    @property
    def C(self) -> float:
        return kernel_moments(self.n)[0]

    def second_moment(self, eps: float) -> float:
        return kernel_moments(self.n)[1] * eps ** 2

    def gradient_l1(self) -> float:
        return kernel_moments(self.n)[2]

    def value(self, eps: float, y: np.ndarray, s: np.ndarray) -> np.ndarray:
        """rho^eps at offsets y (shape (..., n-1)) and s."""
        q = np.sum((np.asarray(y) / eps) ** 2, axis=-1) + (np.asarray(s) / eps ** 2) ** 2
        return self.C * eps ** (-self.n - 1) * _bump(q)[0]

    def stencil(self, eps: float, hx: float, dt: float) -> Tuple[np.ndarray, float]:
        """Unit-mass correlation weights (time axis first) and the raw discrete mass."""
        d = self.n - 1
        K = int(np.ceil(eps / hx))
        L = int(np.ceil(eps ** 2 / dt))
        ks = np.arange(-K, K + 1) * hx
        ls = np.arange(-L, L + 1) * dt
        axes = np.meshgrid(ls, *([ks] * d), indexing="ij")
        y = np.stack(axes[1:], axis=-1)
        w = self.value(eps, y, axes[0]) * hx ** d * dt
        raw = float(np.sum(w))
        return w / raw, raw


# ---------- Clipping profile ----------

def _clip_poly(u: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    # p(0)=1, p'(0)=1, p''(0)=0, p'(1)=p''(1)=p'''(1)=0, plateau p(1)=1.4
    p = 1.0 + u - 2.0 * u ** 3 + 2.0 * u ** 4 - 0.6 * u ** 5
    p1 = (1.0 - u) ** 3 * (1.0 + 3.0 * u)
    p2 = -12.0 * u * (1.0 - u) ** 2
    return p, p1, p2


def eta(s: np.ndarray, eps: float) -> np.ndarray:
    return eta_derivatives(s, eps)[0]


def eta_derivatives(s: np.ndarray, eps: float) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """eta, eta', eta'' of the clip: identity on [-eps, eps], constant 1.4 eps beyond 2 eps."""
    s = np.asarray(s, dtype=float)
    a = np.abs(s)
    sgn = np.where(s < 0, -1.0, 1.0)
    u = np.clip((a - eps) / eps, 0.0, 1.0)
    p, p1, p2 = _clip_poly(u)
    mid = (a > eps) & (a < 2.0 * eps)
    far = a >= 2.0 * eps
    e0 = np.where(a <= eps, s, sgn * eps * np.where(far, 1.4, p))
    e1 = np.where(a <= eps, 1.0, np.where(mid, p1, 0.0))
    e2 = np.where(mid, sgn * p2 / eps, 0.0)
    return e0, e1, e2


def eta_prime(s: np.ndarray, eps: float) -> np.ndarray:
    return eta_derivatives(s, eps)[1]


def eta_second(s: np.ndarray, eps: float) -> np.ndarray:
    return eta_derivatives(s, eps)[2]


# ---------- Mollified graph ----------

@dataclass
class MollifiedGraph:
    eps: float
    base: GraphFlow
    kernel: MollifierKernel
    feps: np.ndarray
    time_mask: np.ndarray
    space_mask: np.ndarray
    raw_mass: float
    _reach: Optional[float] = field(default=None, repr=False)

    @property
    def grid(self):
        return self.base.grid

    @property
    def dim(self) -> int:
        return self.base.grid.dim

    @property
    def mask(self) -> np.ndarray:
        return self.time_mask.reshape((-1,) + (1,) * self.dim) & self.space_mask[None]

    @property
    def time_indices(self) -> np.ndarray:
        return np.flatnonzero(self.time_mask)

    def second_differences(self, j: int) -> Tuple[np.ndarray, np.ndarray]:
        """Compact-stencil Hessian of nodal f^eps at time j; (d, d, Q) with the node mask."""
        return _second_differences(self.feps[j], self.grid.hx, self.space_mask)

    @property
    def reach(self) -> float:
        """1 / (max principal-curvature bound of M_t^eps over all defined nodes)."""
        if self._reach is None:
            kmax = 0.0
            for j in self.time_indices:
                hess, _ = self.second_differences(int(j))
                if hess.shape[-1]:
                    kmax = max(kmax, float(np.max(_operator_norm(hess))))
            self._reach = np.inf if kmax <= 0 else 1.0 / kmax
        return self._reach

    def evaluate(self, xq: np.ndarray, j: int, order: int = 2, with_time: bool = False):
        """f^eps and derivatives at off-grid points xq (Q, d) and grid time t_j.

        Returns (f, grad (Q,d), hess (Q,d,d), ft (Q,)); entries above `order`
        and ft (unless requested) are None.
        """
        grid = self.grid
        d = self.dim
        xq = np.atleast_2d(np.asarray(xq, dtype=float))
        if xq.shape[1] != d:
            raise MollifyError(f"query points need {d} coordinates, got {xq.shape[1]}")
        if not self.time_mask[j]:
            raise MollifyError(f"f^eps undefined at time index {j} (within eps^2 of the time boundary)")
        lim = 1.0 - self.eps + 1e-9
        if np.any(np.abs(xq) > lim):
            raise MollifyError(f"query point outside the region |x| <= 1 - eps = {1.0 - self.eps:.6g}")

        eps, hx, dt = self.eps, grid.hx, grid.dt
        K = int(np.ceil(eps / hx)) + 1
        L = int(np.ceil(eps ** 2 / dt))
        base = np.floor((xq + 1.0) / hx).astype(int)
        Q = xq.shape[0]
        cst = self.kernel.C * eps ** (-self.kernel.n - 1) * hx ** d * dt
        t = grid.t()[j]

        S = np.zeros(Q)
        P = np.zeros(Q)
        S1 = np.zeros((Q, d))
        P1 = np.zeros((Q, d))
        S2 = np.zeros((Q, d, d))
        P2 = np.zeros((Q, d, d))
        St = np.zeros(Q)
        Pt = np.zeros(Q)
        # time offsets are handled as a leading array axis; only space offsets loop
        jj = j + np.arange(-L, L + 1)
        t_ok = (jj >= 0) & (jj <= grid.M)
        jj = np.clip(jj, 0, grid.M)
        tau = (t - grid.t()[jj]) / eps ** 2
        f = self.base.f[jj]
        eye = np.eye(d)[None]
        for off in product(range(-K, K + 2), repeat=d):
            idx = base + np.array(off)
            ok = np.all((idx >= 0) & (idx <= grid.N), axis=1)
            if not np.any(ok):
                continue
            idx = np.clip(idx, 0, grid.N)
            y = -1.0 + idx * hx
            z = (xq - y) / eps
            q = np.sum(z * z, axis=1)[None, :] + (tau * tau)[:, None]
            g, g1, g2 = _bump(q)
            live = t_ok[:, None] & ok[None, :]
            g = np.where(live, g, 0.0)
            if not np.any(g):
                continue
            g1 = np.where(live, g1, 0.0)
            g2 = np.where(live, g2, 0.0)
            fv = f[(slice(None),) + tuple(idx.T)]
            S += cst * g.sum(axis=0)
            P += cst * (g * fv).sum(axis=0)
            if order >= 1:
                a1 = cst * g1.sum(axis=0)
                b1 = cst * (g1 * fv).sum(axis=0)
                S1 += a1[:, None] * 2.0 * z / eps
                P1 += b1[:, None] * 2.0 * z / eps
            if order >= 2:
                a2 = cst * g2.sum(axis=0)
                b2 = cst * (g2 * fv).sum(axis=0)
                zz = 4.0 * z[:, :, None] * z[:, None, :] / eps ** 2
                S2 += a2[:, None, None] * zz + a1[:, None, None] * 2.0 * eye / eps ** 2
                P2 += b2[:, None, None] * zz + b1[:, None, None] * 2.0 * eye / eps ** 2
            if with_time:
                wt = cst * g1 * (2.0 * tau / eps ** 2)[:, None]
                St += wt.sum(axis=0)
                Pt += (wt * fv).sum(axis=0)

        val = P / S
        grad = hess = ft = None
        if order >= 1:
            grad = (P1 - val[:, None] * S1) / S[:, None]
        if order >= 2:
            hess = (P2 - val[:, None, None] * S2
                    - grad[:, :, None] * S1[:, None, :] - grad[:, None, :] * S1[:, :, None]) / S[:, None, None]
        if with_time:
            ft = (Pt - val * St) / S
        return val, grad, hess, ft


def _second_differences(fj: np.ndarray, hx: float, mask: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    d = fj.ndim
    inner = np.zeros_like(mask)
    sl = tuple([slice(1, -1)] * d)
    inner[sl] = mask[sl]
    for ax in range(d):
        inner &= np.roll(mask, 1, axis=ax) & np.roll(mask, -1, axis=ax)
    if d == 2:
        for sx, sy in ((1, 1), (1, -1), (-1, 1), (-1, -1)):
            inner &= np.roll(np.roll(mask, sx, axis=0), sy, axis=1)
    pts = np.argwhere(inner)
    out = np.zeros((d, d, len(pts)))
    if not len(pts):
        return out, inner
    c = tuple(pts.T)

    def at(shift):
        return fj[tuple(pts[:, a] + shift[a] for a in range(d))]

    for a in range(d):
        e = [0] * d
        e[a] = 1
        m = [0] * d
        m[a] = -1
        out[a, a] = (at(e) - 2.0 * fj[c] + at(m)) / hx ** 2
    if d == 2:
        cross = (at((1, 1)) - at((1, -1)) - at((-1, 1)) + at((-1, -1))) / (4.0 * hx ** 2)
        out[0, 1] = out[1, 0] = cross
    return out, inner


def _operator_norm(hess: np.ndarray) -> np.ndarray:
    """Spectral norm of symmetric (d, d, Q) stacks."""
    if hess.shape[0] == 1:
        return np.abs(hess[0, 0])
    mats = np.moveaxis(hess, -1, 0)
    return np.max(np.abs(np.linalg.eigvalsh(mats)), axis=-1)


def mollify_graph(gf: GraphFlow, eps: float) -> MollifiedGraph:
    grid = gf.grid
    if eps < 2.0 * grid.hx - 1e-12:
        raise MollifyError(f"eps={eps} is below 2 hx = {2.0 * grid.hx:.6g}")
    if eps ** 2 < 2.0 * grid.dt - 1e-12:
        raise MollifyError(f"eps^2={eps ** 2:.6g} is below 2 dt = {2.0 * grid.dt:.6g}")
    kernel = MollifierKernel(grid.n)
    weights, raw = kernel.stencil(eps, grid.hx, grid.dt)
    conv = ndimage.correlate(gf.f, weights, mode="nearest")

    t = grid.t()
    time_mask = (t >= grid.t0 + eps ** 2 - 1e-12) & (t <= grid.t1 - eps ** 2 + 1e-12)
    space_mask = grid.inner_mask(eps)
    if not np.any(time_mask) or not np.any(space_mask):
        raise MollifyError(f"no node has its eps-neighborhood inside the domain for eps={eps}")
    full = time_mask.reshape((-1,) + (1,) * grid.dim) & space_mask[None]
    feps = np.where(full, conv, np.nan)
    logger.info(f"mollified eps={eps}: raw kernel mass {raw:.10f}, stencil {weights.shape}")
    return MollifiedGraph(eps=float(eps), base=gf, kernel=kernel, feps=feps,
                          time_mask=time_mask, space_mask=space_mask, raw_mass=raw)


# ---------- Mollification bounds ----------

@dataclass(frozen=True)
class LemmaBounds:
    sup_diff: float
    bound1: float
    max_hessian: float
    bound2: float
    seminorm: float
    c_rho: float
    alpha: float

    @property
    def holds(self) -> bool:
        return self.holds_sup and self.holds_hessian

    @property
    def holds_sup(self) -> bool:
        return self.sup_diff <= self.bound1 + 1e-12

    @property
    def holds_hessian(self) -> bool:
        return self.max_hessian <= self.bound2 + 1e-10


def lemma_bounds(mg: MollifiedGraph, alpha: float, seminorm: Optional[float] = None) -> LemmaBounds:
    """Measured sup|f^eps - f| and max |Hess f^eps| against 2[f]eps^{1+a} and [f] |grad rho|_1 eps^{a-1}."""
    if seminorm is None:
        seminorm = parabolic_seminorm(mg.base, alpha)
    full = mg.mask
    diff = np.abs(mg.feps - mg.base.f)[full]
    sup_diff = float(np.max(diff)) if diff.size else 0.0
    max_hess = 0.0
    for j in mg.time_indices:
        hess, _ = mg.second_differences(int(j))
        if hess.shape[-1]:
            max_hess = max(max_hess, float(np.max(_operator_norm(hess))))
    c_rho = seminorm * mg.kernel.gradient_l1()
    return LemmaBounds(
        sup_diff=sup_diff,
        bound1=2.0 * seminorm * mg.eps ** (1.0 + alpha),
        max_hessian=max_hess,
        bound2=c_rho * mg.eps ** (alpha - 1.0),
        seminorm=float(seminorm),
        c_rho=float(c_rho),
        alpha=float(alpha),
    )


# ---------- Nearest point and signed distance ----------

@dataclass(frozen=True)
class ClippedDistance:
    eps: float
    tilde: np.ndarray
    value: np.ndarray
    gradient: np.ndarray
    hessian: np.ndarray
    dt: np.ndarray
    nearest: np.ndarray
    iterations: np.ndarray


def _energy(mg: MollifiedGraph, x: np.ndarray, xq: np.ndarray, xn: np.ndarray, j: int) -> np.ndarray:
    f = mg.evaluate(x, j, order=0)[0]
    return 0.5 * (np.sum((x - xq) ** 2, axis=1) + (xn - f) ** 2)


def nearest_points(mg: MollifiedGraph, X: np.ndarray, j: int) -> Tuple[np.ndarray, np.ndarray]:
    """Damped Newton for argmin_x* |X - (x*, f^eps(x*, t_j))|^2, seeded at the horizontal projection."""
    d = mg.dim
    X = np.atleast_2d(np.asarray(X, dtype=float))
    xq, xn = X[:, :d], X[:, d]
    lim = 1.0 - mg.eps + 1e-10
    x = np.clip(xq.copy(), -lim, lim)
    Q = X.shape[0]
    done = np.zeros(Q, dtype=bool)
    iters = np.zeros(Q, dtype=int)
    last_step = np.full(Q, np.inf)
    eye = np.eye(d)[None]
    for _ in range(NEWTON_MAX_ITER):
        idx = np.flatnonzero(~done)
        if idx.size == 0:
            break
        xi = x[idx]
        f, g, h, _ = mg.evaluate(xi, j)
        r = xn[idx] - f
        grad_e = (xi - xq[idx]) - r[:, None] * g
        hess_e = eye + g[:, :, None] * g[:, None, :] - r[:, None, None] * h
        step = np.linalg.solve(hess_e, -grad_e[..., None])[..., 0]
        uphill = np.sum(step * grad_e, axis=1) >= 0
        step[uphill] = -grad_e[uphill]

        e0 = 0.5 * (np.sum((xi - xq[idx]) ** 2, axis=1) + r ** 2)
        alpha = np.ones(idx.size)
        trial = np.clip(xi + step, -lim, lim)
        for _ in range(40):
            et = _energy(mg, trial, xq[idx], xn[idx], j)
            bad = et > e0 + 1e-15 * (1.0 + e0)
            if not np.any(bad):
                break
            alpha[bad] *= 0.5
            trial[bad] = np.clip(xi[bad] + alpha[bad, None] * step[bad], -lim, lim)
        moved = np.sqrt(np.sum((trial - xi) ** 2, axis=1))
        x[idx] = trial
        iters[idx] += 1
        last_step[idx] = moved
        done[idx[(moved <= NEWTON_TOL) | (np.sqrt(np.sum(grad_e ** 2, axis=1)) <= NEWTON_TOL)]] = True
    if not np.all(done):
        bad = np.flatnonzero(~done)
        raise DistanceError(
            f"nearest-point Newton did not converge for {bad.size} point(s) in {NEWTON_MAX_ITER} iterations",
            diagnostics={"points": X[bad].tolist(), "last_step": last_step[bad].tolist(), "time_index": int(j)},
        )
    at_edge = np.any(np.abs(x) >= lim, axis=1)
    if np.any(at_edge):
        raise DistanceError("nearest point left the region where f^eps is defined",
                            diagnostics={"points": X[at_edge].tolist(), "time_index": int(j)})
    return x, iters


def signed_distance(mg: MollifiedGraph, X: np.ndarray, j: int) -> ClippedDistance:
    """d~, d = eta(d~), grad d, Hess d and d_t d at ambient points X (shape (n,) or (Q, n))."""
    single = np.asarray(X).ndim == 1
    X = np.atleast_2d(np.asarray(X, dtype=float))
    d = mg.dim
    n = d + 1
    xs, iters = nearest_points(mg, X, j)
    f, g, h, ft = mg.evaluate(xs, j, order=2, with_time=True)
    f_above = mg.evaluate(X[:, :d], j, order=0)[0]

    Xs = np.concatenate([xs, f[:, None]], axis=1)
    diff = X - Xs
    dist = np.sqrt(np.sum(diff ** 2, axis=1))
    sign = np.where(X[:, d] >= f_above, 1.0, -1.0)
    tilde = sign * dist

    w = np.sqrt(1.0 + np.sum(g * g, axis=1))
    nu = np.concatenate([-g, np.ones((len(w), 1))], axis=1) / w[:, None]

    hess_e = np.eye(d)[None] + g[:, :, None] * g[:, None, :] - (X[:, d] - f)[:, None, None] * h
    if np.any(np.linalg.eigvalsh(hess_e)[:, 0] <= 0) or np.any(np.abs(tilde) > mg.reach):
        raise DistanceError("point outside the smoothness neighborhood of M_t^eps",
                            diagnostics={"reach": mg.reach, "distance": np.abs(tilde).tolist(), "time_index": int(j)})

    small = np.abs(tilde) <= 1e-6
    grad_tilde = np.where(small[:, None], nu, diff / np.where(small, 1.0, tilde)[:, None])

    # Hess d~ = D nu(x*) . dx*/dX with dx*/dX = (Hess E)^{-1} [I | grad f^eps]
    gh = np.einsum("qk,qkj->qj", g, h)
    dnu = np.empty((len(w), n, d))
    dnu[:, :d, :] = -h / w[:, None, None] + g[:, :, None] * gh[:, None, :] / w[:, None, None] ** 3
    dnu[:, d, :] = -gh / w[:, None] ** 3
    rhs = np.concatenate([np.broadcast_to(np.eye(d), (len(w), d, d)), g[:, :, None]], axis=2)
    dxs = np.linalg.solve(hess_e, rhs)
    hess_tilde = np.einsum("qkj,qjm->qkm", dnu, dxs)
    hess_tilde = 0.5 * (hess_tilde + np.swapaxes(hess_tilde, 1, 2))

    dt_tilde = -ft / w
    e0, e1, e2 = eta_derivatives(tilde, mg.eps)
    grad_d = e1[:, None] * grad_tilde
    hess_d = e2[:, None, None] * grad_tilde[:, :, None] * grad_tilde[:, None, :] + e1[:, None, None] * hess_tilde
    out = ClippedDistance(eps=mg.eps, tilde=tilde, value=e0, gradient=grad_d, hessian=hess_d,
                          dt=e1 * dt_tilde, nearest=Xs, iterations=iters)
    if single:
        out = ClippedDistance(eps=out.eps, tilde=out.tilde[0], value=out.value[0], gradient=out.gradient[0],
                              hessian=out.hessian[0], dt=out.dt[0], nearest=out.nearest[0],
                              iterations=out.iterations[0])
    return out


# ---------- Projection maps ----------

@dataclass
class ProjectionMaps:
    nodes: np.ndarray
    x: np.ndarray
    F: np.ndarray
    gradF: np.ndarray
    G: Callable[[np.ndarray], np.ndarray]
    roundtrip: float
    max_gradF_minus_I: float


def _graph_interpolator(gf: GraphFlow, j: int) -> RegularGridInterpolator:
    axes = tuple([gf.grid.x()] * gf.grid.dim)
    return RegularGridInterpolator(axes, gf.f[j], method="cubic")


def projection_maps(mg: MollifiedGraph, gf: GraphFlow, j: int, margin: int = 1) -> ProjectionMaps:
    """F^eps on inner nodes, its gradient, and G^eps = (F^eps)^{-1} by a normal-line root solve."""
    grid = gf.grid
    d = grid.dim
    mask = mg.space_mask.copy()
    for _ in range(margin):
        mask = ndimage.binary_erosion(mask)
    if not np.any(mask):
        raise MollifyError("no inner node left for the projection maps")
    mesh = grid.mesh()
    xs = np.stack([m[mask] for m in mesh], axis=1)
    fx = gf.f[j][mask]
    grads = np.stack([gg[mask] for gg in gradient(gf.f[j], grid.hx)], axis=1)
    cd = signed_distance(mg, np.concatenate([xs, fx[:, None]], axis=1), j)

    dval = cd.value
    gp = cd.gradient[:, :d]
    gn = cd.gradient[:, d]
    hpp = cd.hessian[:, :d, :d]
    hpn = cd.hessian[:, :d, d]
    F = xs - dval[:, None] * gp
    eye = np.eye(d)[None]
    gradF = (eye - gp[:, :, None] * gp[:, None, :] - gn[:, None, None] * gp[:, :, None] * grads[:, None, :]
             - dval[:, None, None] * (hpp + hpn[:, :, None] * grads[:, None, :]))

    interp = _graph_interpolator(gf, j)
    eps = mg.eps

    def G(xstar: np.ndarray) -> np.ndarray:
        xstar = np.atleast_2d(np.asarray(xstar, dtype=float))
        fe, ge, _, _ = mg.evaluate(xstar, j, order=1)
        w = np.sqrt(1.0 + np.sum(ge * ge, axis=1))
        out = np.empty_like(xstar)
        for q in range(xstar.shape[0]):
            nu_p = -ge[q] / w[q]
            nu_n = 1.0 / w[q]

            def gap(s, q=q, nu_p=nu_p, nu_n=nu_n):
                p = np.clip(xstar[q] + s * nu_p, -1.0, 1.0)
                return fe[q] + s * nu_n - float(interp(p[None])[0])

            root = None
            for width in (eps, 2.0 * eps):
                a, b = gap(-width), gap(width)
                if a * b <= 0:
                    root = optimize.brentq(gap, -width, width, xtol=1e-15, rtol=4.0 * np.finfo(float).eps, maxiter=200)
                    break
            if root is None:
                raise InversionError(f"no graph point on the normal line through x*={xstar[q].tolist()} within 2 eps")
            out[q] = xstar[q] + root * nu_p
        return out

    back = G(F)
    roundtrip = float(np.max(np.abs(back - xs)))
    dev = _operator_norm(np.moveaxis(gradF - eye, 0, -1))
    return ProjectionMaps(nodes=mask, x=xs, F=F, gradF=gradF, G=G, roundtrip=roundtrip,
                          max_gradF_minus_I=float(np.max(dev)))


# ---------- Change of variables ----------

@dataclass(frozen=True)
class ChangeOfVariables:
    lhs: float
    rhs: float
    gap: float


def change_of_variables_check(mg: MollifiedGraph, gf: GraphFlow, phi: TestFunction) -> ChangeOfVariables:
    """int phi d_t d^eps sqrt(1+|grad f|^2) versus int d_t phi f."""
    grid = gf.grid
    phi.check_inside(grid)
    lo, hi = phi.time_support()
    if lo < grid.t0 + mg.eps ** 2 or hi > grid.t1 - mg.eps ** 2:
        raise MollifyError("test function time support reaches where f^eps is undefined")
    if max(abs(c) for c in phi.center) + phi.radius > 1.0 - mg.eps - grid.hx:
        raise MollifyError("test function spatial support reaches where f^eps is undefined")

    mesh = grid.mesh()
    wx = grid.spatial_weights()
    wt = grid.time_weights()
    times = grid.t()
    lhs = 0.0
    rhs = 0.0
    for j in range(grid.M + 1):
        fj = gf.f[j]
        rhs += wt[j] * float(np.sum(phi.time_derivative(mesh, fj, times[j]) * fj * wx))
        if not (lo < times[j] < hi):
            continue
        vals = phi.value(mesh, fj, times[j])
        sel = vals > 0
        if not np.any(sel):
            continue
        X = np.concatenate([np.stack([m[sel] for m in mesh], axis=1), fj[sel][:, None]], axis=1)
        cd = signed_distance(mg, X, j)
        area = np.sqrt(1.0 + sum(g * g for g in gradient(fj, grid.hx)))[sel]
        lhs += wt[j] * float(np.sum(vals[sel] * cd.dt * area * wx[sel]))
    return ChangeOfVariables(lhs=lhs, rhs=rhs, gap=abs(lhs - rhs))


@dataclass(frozen=True)
class CurvatureBound:
    max_hessian: float
    scale: float
    ratio: float


def distance_curvature_bound(mg: MollifiedGraph, gf: GraphFlow, j: int, alpha: float, margin: int = 2) -> CurvatureBound:
    """max |Hess d^eps| over nodes of the original graph M_t against eps^{alpha-1}."""
    mask = mg.space_mask.copy()
    for _ in range(margin):
        mask = ndimage.binary_erosion(mask)
    if not np.any(mask):
        raise MollifyError("no inner node left for the curvature bound")
    mesh = gf.grid.mesh()
    X = np.concatenate([np.stack([m[mask] for m in mesh], axis=1), gf.f[j][mask][:, None]], axis=1)
    cd = signed_distance(mg, X, j)
    worst = float(np.max(np.abs(np.linalg.eigvalsh(cd.hessian))))
    scale = mg.eps ** (alpha - 1.0)
    return CurvatureBound(max_hessian=worst, scale=scale, ratio=worst / scale)
