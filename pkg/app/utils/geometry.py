"""
Differential geometry of sampled graphs M_t = {(x, f(x,t))}.

Sign conventions: nu = (-grad f, 1)/sqrt(1 + |grad f|^2) points up, H is the
scalar with h = H nu, so a concave-down cap has H < 0.

Mean curvature uses a staggered flux stencil. Fluxes grad f / sqrt(1+|grad f|^2)
live on cell faces, with the face-normal slope from the two adjacent nodes and
the transverse slope averaged over the face. H at a node is the divided
difference of face fluxes. Pairing H against nodal values of a test function
is then an exact summation by parts of the face fluxes against the face
differences of the test function, which `divergence_identity_residual`
exploits.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import List, Tuple

import numpy as np
from scipy import integrate

from app.utils.grid import GraphFlow, gradient, hessian
from app.utils.testfn import TestFunction


class GeometryError(ValueError):
    pass


@dataclass(frozen=True)
class CurvatureField:
    H: np.ndarray
    hvec: np.ndarray
    nu: np.ndarray


@dataclass(frozen=True)
class VelocityField:
    vn: np.ndarray
    vvec: np.ndarray
    one_sided: bool = False


@dataclass(frozen=True)
class W22Diagnostic:
    hessian_norm: np.ndarray
    f_norm: np.ndarray
    h_norm: np.ndarray
    ratio: np.ndarray

    @property
    def max_ratio(self) -> float:
        return float(np.max(self.ratio)) if self.ratio.size else 0.0


def _check_index(gf: GraphFlow, j: int) -> None:
    if not 0 <= j <= gf.grid.M:
        raise GeometryError(f"time index {j} outside [0, {gf.grid.M}]")


def normal_and_area(gf: GraphFlow, j: int) -> Tuple[np.ndarray, np.ndarray]:
    _check_index(gf, j)
    grads = gradient(gf.f[j], gf.grid.hx)
    area = np.sqrt(1.0 + sum(g * g for g in grads))
    nu = np.stack([-g / area for g in grads] + [1.0 / area])
    return nu, area


# ---------- Staggered fluxes ----------

def _face_fluxes(fj: np.ndarray, hx: float) -> List[np.ndarray]:
    """Face fluxes per axis.

    d = 1: flux[i] sits on face i+1/2, shape (N,).
    d = 2: axis-0 fluxes on faces (i+1/2, k) for interior k, shape (N, N-1);
           axis-1 fluxes on faces (i, k+1/2) for interior i, shape (N-1, N).
    """
    if fj.ndim == 1:
        s = np.diff(fj) / hx
        return [s / np.sqrt(1.0 + s * s)]
    s1 = (fj[1:, 1:-1] - fj[:-1, 1:-1]) / hx
    s2 = ((fj[:-1, 2:] - fj[:-1, :-2]) + (fj[1:, 2:] - fj[1:, :-2])) / (4.0 * hx)
    fx = s1 / np.sqrt(1.0 + s1 * s1 + s2 * s2)
    t2 = (fj[1:-1, 1:] - fj[1:-1, :-1]) / hx
    t1 = ((fj[2:, :-1] - fj[:-2, :-1]) + (fj[2:, 1:] - fj[:-2, 1:])) / (4.0 * hx)
    fy = t2 / np.sqrt(1.0 + t1 * t1 + t2 * t2)
    return [fx, fy]


def _interior_divergence(fluxes: List[np.ndarray], hx: float) -> np.ndarray:
    if len(fluxes) == 1:
        return np.diff(fluxes[0]) / hx
    fx, fy = fluxes
    return (fx[1:, :] - fx[:-1, :]) / hx + (fy[:, 1:] - fy[:, :-1]) / hx


def _extrapolate_edges(H: np.ndarray) -> None:
    """Fill boundary nodes by linear extrapolation from the two nearest interior nodes."""
    for ax in range(H.ndim):
        idx = [slice(1, -1)] * H.ndim
        for a in range(ax):
            idx[a] = slice(None)

        def at(i):
            sl = list(idx)
            sl[ax] = i
            return tuple(sl)

        H[at(0)] = 2.0 * H[at(1)] - H[at(2)]
        H[at(-1)] = 2.0 * H[at(-2)] - H[at(-3)]


def curvature_slice(fj: np.ndarray, hx: float) -> np.ndarray:
    """Scalar mean curvature H of one time slice (boundary nodes extrapolated)."""
    H = np.zeros_like(fj, dtype=float)
    inner = tuple([slice(1, -1)] * fj.ndim)
    H[inner] = _interior_divergence(_face_fluxes(fj, hx), hx)
    _extrapolate_edges(H)
    return H


def mean_curvature(gf: GraphFlow, j: int) -> CurvatureField:
    nu, _ = normal_and_area(gf, j)
    H = curvature_slice(gf.f[j], gf.grid.hx)
    return CurvatureField(H=H, hvec=H[None] * nu, nu=nu)


def curvature_perpendicularity(gf: GraphFlow, j: int) -> float:
    """max |h . (e_i + d_i f e_n)| over nodes and coordinate tangents."""
    cf = mean_curvature(gf, j)
    grads = gradient(gf.f[j], gf.grid.hx)
    worst = 0.0
    for i, g in enumerate(grads):
        dot = cf.hvec[i] + g * cf.hvec[-1]
        worst = max(worst, float(np.max(np.abs(dot))))
    return worst


# ---------- Velocity ----------

def time_slope(gf: GraphFlow, j: int) -> Tuple[np.ndarray, bool]:
    """d_t f at time index j and whether a one-sided stencil was used."""
    _check_index(gf, j)
    M, dt, f = gf.grid.M, gf.grid.dt, gf.f
    if M < 2:
        raise GeometryError("velocity needs at least 3 time levels")
    if 0 < j < M:
        return (f[j + 1] - f[j - 1]) / (2.0 * dt), False
    if j == 0:
        return (-3.0 * f[0] + 4.0 * f[1] - f[2]) / (2.0 * dt), True
    return (3.0 * f[M] - 4.0 * f[M - 1] + f[M - 2]) / (2.0 * dt), True


def velocity(gf: GraphFlow, j: int) -> VelocityField:
    ft, one_sided = time_slope(gf, j)
    nu, area = normal_and_area(gf, j)
    vn = ft / area
    return VelocityField(vn=vn, vvec=vn[None] * nu, one_sided=one_sided)


# ---------- Divergence-form identity ----------

def psi_on_graph(psi: TestFunction, gf: GraphFlow, j: int) -> np.ndarray:
    return psi.value(gf.grid.mesh(), gf.f[j], gf.grid.t()[j])


def divergence_identity_residual(gf: GraphFlow, j: int, psi: TestFunction) -> float:
    """int grad psi . grad f / sqrt(1+|grad f|^2) dx + int psi H dx, discretely paired."""
    _check_index(gf, j)
    psi.check_inside(gf.grid, require_time=False)
    grid = gf.grid
    hx = grid.hx
    fj = gf.f[j]
    p = psi_on_graph(psi, gf, j)
    cell = hx ** grid.dim

    fluxes = _face_fluxes(fj, hx)
    H = _interior_divergence(fluxes, hx)
    inner = tuple([slice(1, -1)] * grid.dim)
    node_term = float(np.sum(p[inner] * H)) * cell

    if grid.dim == 1:
        face_term = float(np.sum(np.diff(p) / hx * fluxes[0])) * cell
    else:
        dpx = (p[1:, 1:-1] - p[:-1, 1:-1]) / hx
        dpy = (p[1:-1, 1:] - p[1:-1, :-1]) / hx
        face_term = float(np.sum(dpx * fluxes[0]) + np.sum(dpy * fluxes[1])) * cell
    return face_term + node_term


# ---------- A priori W^{2,2} diagnostic ----------

def _cube_l2(values: np.ndarray, hx: float) -> float:
    out = values
    for _ in range(values.ndim):
        out = integrate.trapezoid(out, dx=hx, axis=0)
    return float(np.sqrt(max(float(out), 0.0)))


def w22_diagnostic(gf: GraphFlow, s: float) -> W22Diagnostic:
    grid = gf.grid
    if not 0.0 < s < 1.0:
        raise GeometryError(f"margin must lie in (0, 1), got {s}")
    lo = int(np.ceil(s / grid.hx - 1e-9))
    hi = grid.N - lo
    if hi - lo < 2:
        raise GeometryError(f"inner region for margin {s} has fewer than 3 nodes per axis at N={grid.N}")
    inner = tuple([slice(lo, hi + 1)] * grid.dim)

    hess_n, f_n, h_n = [], [], []
    for j in range(grid.M + 1):
        fj = gf.f[j]
        hess = hessian(fj, grid.hx)
        frob2 = np.sum(hess ** 2, axis=(0, 1))
        hess_n.append(_cube_l2(frob2[inner], grid.hx))
        f_n.append(_cube_l2(fj ** 2, grid.hx))
        h_n.append(_cube_l2(curvature_slice(fj, grid.hx) ** 2, grid.hx))
    hess_n, f_n, h_n = np.array(hess_n), np.array(f_n), np.array(h_n)
    den = f_n + h_n
    ratio = np.divide(hess_n, den, out=np.zeros_like(hess_n), where=den > 0)
    return W22Diagnostic(hessian_norm=hess_n, f_norm=f_n, h_norm=h_n, ratio=ratio)
