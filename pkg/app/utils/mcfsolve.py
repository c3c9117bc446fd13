"""
Finite differences for the graphical motion law in nondivergence form

    d_t f = sum_ij a_ij(grad f) d_ij f + u(x, f, t) . (-grad f, 1),
    a_ij = delta_ij - d_i f d_j f / (1 + |grad f|^2),

with Dirichlet data on the boundary of [-1,1]^{n-1}.

- semi-implicit: (I - dt A(f_j)) f_{j+1} = f_j + dt u . (-grad f_j, 1), coefficients
  lagged at f_j, sparse assembly solved by BiCGSTAB with a Jacobi preconditioner
  and the explicit predictor as initial guess.
- explicit: forward Euler, gated by dt <= hx^2 / (2 (n-1)).
Mixed derivatives (n = 3) use the centered 4-point cross stencil.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Dict, List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, field_validator
from scipy import sparse
from scipy.sparse.linalg import LinearOperator, bicgstab

from app.core.config import logger
from app.utils.expr import Expr, parse_graph
from app.utils.grid import AmbientField, GraphFlow, SpaceTimeGrid, build_grid, gradient, sample_graph
from app.utils.pool import run_ordered

SLOPE_LIMIT = 1.0e3


class SolverError(RuntimeError):
    def __init__(self, message: str, diagnostics: Optional[Dict] = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class CFLError(ValueError):
    pass


class SolverConfig(BaseModel):
    scheme: Literal["semi-implicit", "explicit"] = "semi-implicit"
    n: int = 2
    N: int
    dt: float
    t0: float = 0.0
    t_final: float
    boundary: Literal["exact", "frozen"] = "frozen"
    tol: float = 1e-12
    max_iter: int = 2000

    @field_validator("tol")
    @classmethod
    def _tol(cls, v: float) -> float:
        if not 0.0 < v <= 1e-10:
            raise ValueError("linear-solve tolerance must lie in (0, 1e-10]")
        return v

    @field_validator("dt")
    @classmethod
    def _dt(cls, v: float) -> float:
        if not v > 0:
            raise ValueError("dt must be positive")
        return v

    @property
    def hx(self) -> float:
        return 2.0 / self.N

    def grid(self) -> SpaceTimeGrid:
        span = self.t_final - self.t0
        M = max(1, int(round(span / self.dt)))
        return build_grid(self.n, self.N, M, self.t0, self.t_final)


@dataclass
class StepRecord:
    max_slope: float
    iterations: int
    ellipticity: Tuple[float, float]
    max_principle: Optional[bool] = None


@dataclass
class SolveDiagnostics:
    scheme: str
    dt: float
    steps: List[StepRecord] = field(default_factory=list)

    def to_dict(self) -> Dict:
        return {
            "scheme": self.scheme,
            "dt": self.dt,
            "max_slope": max((s.max_slope for s in self.steps), default=0.0),
            "iterations": [s.iterations for s in self.steps],
            "max_principle_ok": all(s.max_principle is not False for s in self.steps),
            "ellipticity_min": min((s.ellipticity[0] for s in self.steps), default=1.0),
        }


# ---------- Operator ----------

def coefficients(fj: np.ndarray, hx: float) -> Tuple[np.ndarray, List[np.ndarray]]:
    """a_ij as a (d, d) + spatial array, with the gradient it was built from."""
    grads = gradient(fj, hx)
    d = len(grads)
    w2 = 1.0 + sum(g * g for g in grads)
    a = np.empty((d, d) + fj.shape)
    for i in range(d):
        for k in range(d):
            a[i, k] = (1.0 if i == k else 0.0) - grads[i] * grads[k] / w2
    return a, grads


def _check_ellipticity(a: np.ndarray, grads: List[np.ndarray]) -> Tuple[float, float]:
    d = a.shape[0]
    slope2 = float(np.max(sum(g * g for g in grads)))
    if d == 1:
        eig = a[0, 0].ravel()
        lo, hi = float(np.min(eig)), float(np.max(eig))
    else:
        mats = np.moveaxis(a.reshape(d, d, -1), -1, 0)
        eig = np.linalg.eigvalsh(mats)
        lo, hi = float(np.min(eig)), float(np.max(eig))
    floor = 1.0 / (1.0 + slope2)
    if lo < floor - 1e-12 or hi > 1.0 + 1e-12:
        raise SolverError(f"coefficient eigenvalues [{lo:.6g}, {hi:.6g}] leave [{floor:.6g}, 1]",
                          diagnostics={"min_eig": lo, "max_eig": hi, "max_slope2": slope2})
    return lo, hi


def apply_operator(fj: np.ndarray, a: np.ndarray, hx: float) -> np.ndarray:
    """sum a_ij d_ij f on interior nodes (zero on the boundary)."""
    out = np.zeros_like(fj)
    h2 = hx * hx
    if fj.ndim == 1:
        out[1:-1] = a[0, 0, 1:-1] * (fj[2:] - 2.0 * fj[1:-1] + fj[:-2]) / h2
        return out
    c = (slice(1, -1), slice(1, -1))
    dxx = (fj[2:, 1:-1] - 2.0 * fj[1:-1, 1:-1] + fj[:-2, 1:-1]) / h2
    dyy = (fj[1:-1, 2:] - 2.0 * fj[1:-1, 1:-1] + fj[1:-1, :-2]) / h2
    dxy = (fj[2:, 2:] - fj[2:, :-2] - fj[:-2, 2:] + fj[:-2, :-2]) / (4.0 * h2)
    out[c] = a[0, 0][c] * dxx + 2.0 * a[0, 1][c] * dxy + a[1, 1][c] * dyy
    return out


def _assemble(a: np.ndarray, hx: float, dt: float, shape: Tuple[int, ...]) -> sparse.csr_matrix:
    """I - dt A on interior rows, identity on boundary rows."""
    size = int(np.prod(shape))
    index = np.arange(size).reshape(shape)
    h2 = hx * hx
    rows, cols, vals = [], [], []
    inner = tuple([slice(1, -1)] * len(shape))
    centre = index[inner].ravel()

    def put(offset: Tuple[int, ...], weight: np.ndarray):
        sl = tuple(slice(1 + o, s - 1 + o) for o, s in zip(offset, shape))
        rows.append(centre)
        cols.append(index[sl].ravel())
        vals.append(np.broadcast_to(weight, index[inner].shape).ravel())

    if len(shape) == 1:
        a11 = a[0, 0][inner]
        put((0,), 1.0 + dt * 2.0 * a11 / h2)
        put((1,), -dt * a11 / h2)
        put((-1,), -dt * a11 / h2)
    else:
        a11, a12, a22 = a[0, 0][inner], a[0, 1][inner], a[1, 1][inner]
        put((0, 0), 1.0 + dt * 2.0 * (a11 + a22) / h2)
        put((1, 0), -dt * a11 / h2)
        put((-1, 0), -dt * a11 / h2)
        put((0, 1), -dt * a22 / h2)
        put((0, -1), -dt * a22 / h2)
        cross = dt * 2.0 * a12 / (4.0 * h2)
        put((1, 1), -cross)
        put((-1, -1), -cross)
        put((1, -1), cross)
        put((-1, 1), cross)

    bnd = np.ones(shape, dtype=bool)
    bnd[inner] = False
    bidx = index[bnd]
    rows.append(bidx)
    cols.append(bidx)
    vals.append(np.ones(bidx.size))
    A = sparse.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(size, size))
    return A.tocsr()


def _forcing(fj: np.ndarray, grads: List[np.ndarray], u: AmbientField, mesh: List[np.ndarray], t: float) -> np.ndarray:
    """u(x, f, t) . (-grad f, 1)."""
    if u.is_zero():
        return np.zeros_like(fj)
    uv = u.at(mesh, fj, t)
    return uv[-1] - sum(uv[i] * grads[i] for i in range(len(grads)))


# ---------- Stepping ----------

def step(
    fj: np.ndarray,
    u: AmbientField,
    cfg: SolverConfig,
    t: float,
    boundary_next: np.ndarray,
    mesh: Optional[List[np.ndarray]] = None,
    dt: Optional[float] = None,
) -> Tuple[np.ndarray, StepRecord]:
    """One time step from t to t + dt; boundary_next holds the Dirichlet values at t + dt."""
    fj = np.asarray(fj, dtype=float)
    if not np.all(np.isfinite(fj)):
        raise SolverError(f"non-finite heights at t={t:.6g}")
    dt = cfg.dt if dt is None else dt
    hx = cfg.hx
    d = fj.ndim
    if mesh is None:
        mesh = list(np.meshgrid(*([-1.0 + np.arange(cfg.N + 1) * hx] * d), indexing="ij"))
    a, grads = coefficients(fj, hx)
    slope = float(np.sqrt(np.max(sum(g * g for g in grads))))
    if slope > SLOPE_LIMIT:
        raise SolverError(f"slope blow-up at t={t:.6g}: max |grad f| = {slope:.6g}",
                          diagnostics={"t": t, "max_slope": slope})
    ell = _check_ellipticity(a, grads)
    rhs_force = _forcing(fj, grads, u, mesh, t)

    bnd = np.ones(fj.shape, dtype=bool)
    bnd[tuple([slice(1, -1)] * d)] = False

    predictor = fj + dt * (apply_operator(fj, a, hx) + rhs_force)
    predictor[bnd] = boundary_next[bnd]
    iters = 0
    if cfg.scheme == "explicit":
        if dt > hx * hx / (2.0 * d) * (1.0 + 1e-12):
            raise CFLError(f"explicit step dt={dt:.6g} exceeds hx^2/(2(n-1)) = {hx * hx / (2.0 * d):.6g}")
        out = predictor
    else:
        A = _assemble(a, hx, dt, fj.shape)
        b = fj + dt * rhs_force
        b[bnd] = boundary_next[bnd]
        b = b.ravel()
        diag = A.diagonal()
        precond = LinearOperator(A.shape, matvec=lambda v: v / diag)
        count = [0]

        def tick(_):
            count[0] += 1

        sol, info = bicgstab(A, b, x0=predictor.ravel(), rtol=cfg.tol, atol=0.0,
                             maxiter=cfg.max_iter, M=precond, callback=tick)
        iters = count[0]
        if info != 0:
            res = float(np.linalg.norm(A @ sol - b) / max(np.linalg.norm(b), 1e-300))
            raise SolverError(f"linear solve failed at t={t:.6g} (info={info})",
                              diagnostics={"t": t, "info": int(info), "relative_residual": res, "iterations": iters})
        out = sol.reshape(fj.shape)

    mp = None
    if u.is_zero():
        cap = max(float(np.max(fj)), float(np.max(boundary_next[bnd])))
        mp = bool(float(np.max(out)) <= cap + 1e-10 * (1.0 + abs(cap)))
        if not mp:
            logger.warning(f"maximum principle slack at t={t + dt:.6g}: {float(np.max(out)) - cap:.3g}")
    return out, StepRecord(max_slope=slope, iterations=iters, ellipticity=ell, max_principle=mp)


def _as_expr(obj: Union[str, Expr], n: int) -> Expr:
    return parse_graph(obj, n) if isinstance(obj, str) else obj


def solve(
    f0: Union[np.ndarray, str, Expr],
    u: AmbientField,
    cfg: SolverConfig,
    exact: Optional[Union[str, Expr]] = None,
) -> GraphFlow:
    """March from t0 to t_final. Boundary data from `exact` (boundary="exact") or the initial trace."""
    grid = cfg.grid()
    mesh = grid.mesh()
    times = grid.t()
    if cfg.boundary == "exact":
        if exact is None:
            raise SolverError("boundary='exact' needs an exact solution")
        exact = _as_expr(exact, cfg.n)
        exact_samples = sample_graph(exact, grid).f
    if isinstance(f0, (str, Expr)):
        f0 = sample_graph(_as_expr(f0, cfg.n), build_grid(cfg.n, cfg.N, 1, grid.t0, grid.t0 + 1.0)).f[0]
    f0 = np.asarray(f0, dtype=float)
    if f0.shape != grid.spatial_shape:
        raise SolverError(f"initial data has shape {f0.shape}, grid expects {grid.spatial_shape}")

    out = np.empty(grid.shape)
    out[0] = f0
    diag = SolveDiagnostics(scheme=cfg.scheme, dt=grid.dt)
    for j in range(grid.M):
        bnext = exact_samples[j + 1] if cfg.boundary == "exact" else f0
        try:
            out[j + 1], rec = step(out[j], u, cfg, times[j], bnext, mesh=mesh, dt=grid.dt)
        except SolverError as ex:
            ex.diagnostics.setdefault("step", j)
            raise
        diag.steps.append(rec)
    logger.info(f"solved {cfg.scheme} N={cfg.N} M={grid.M}: max slope {diag.to_dict()['max_slope']:.4g}")
    return GraphFlow(grid=grid, f=out, meta={"solver": diag.to_dict()})


# ---------- Convergence ----------

@dataclass
class ConvergenceStudy:
    levels: List[Tuple[int, float]]
    errors: List[float]
    order: Optional[float]
    label: str

    def to_dict(self) -> Dict:
        return asdict(self)


def observed_order(hs: Sequence[float], errors: Sequence[float]) -> float:
    """Least-squares slope of log error against log h."""
    slope, _ = np.polyfit(np.log(np.asarray(hs, dtype=float)), np.log(np.asarray(errors, dtype=float)), 1)
    return float(slope)


def convergence_study(
    exact: Union[str, Expr],
    u: AmbientField,
    levels: Sequence[Tuple[int, float]],
    n: int = 2,
    t0: float = 0.0,
    t_final: float = 0.5,
    scheme: str = "semi-implicit",
) -> ConvergenceStudy:
    if len(levels) < 3:
        raise SolverError(f"convergence study needs at least 3 levels, got {len(levels)}")
    exact = _as_expr(exact, n)

    def run(level):
        N, dt = level
        cfg = SolverConfig(scheme=scheme, n=n, N=N, dt=dt, t0=t0, t_final=t_final, boundary="exact")
        grid = cfg.grid()
        truth = sample_graph(exact, grid).f
        gf = solve(truth[0], u, cfg, exact=exact)
        return float(np.max(np.abs(gf.f - truth)))

    errors = run_ordered(run, list(levels))
    if all(e < 1e-12 for e in errors):
        return ConvergenceStudy(levels=[tuple(l) for l in levels], errors=errors, order=None, label="exact")
    order = observed_order([2.0 / N for N, _ in levels], [max(e, 1e-300) for e in errors])
    logger.info(f"convergence errors {errors}, observed order {order:.3f}")
    return ConvergenceStudy(levels=[tuple(l) for l in levels], errors=errors, order=order, label=f"{order:.3f}")
