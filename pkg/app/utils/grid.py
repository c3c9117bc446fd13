"""
Space-time grids over [-1,1]^{n-1} x [t0,t1], sampled graph flows, ambient
fields and the discrete parabolic C^{1,alpha} seminorm.

Array convention: samples are indexed (time, x1, ..., x_{n-1}); spatial
derivatives use 2nd-order centered differences in the interior and 2nd-order
one-sided differences on the boundary (numpy.gradient with edge_order=2).
Every other module goes through `gradient` / `hessian` below.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from app.core.config import SEMINORM_MAX_NODES, SEMINORM_SEED, logger
from app.utils.expr import Expr, parse, parse_graph


class GridError(ValueError):
    pass


@dataclass(frozen=True)
class SpaceTimeGrid:
    n: int
    N: int
    M: int
    t0: float
    t1: float

    @property
    def dim(self) -> int:
        return self.n - 1

    @property
    def hx(self) -> float:
        return 2.0 / self.N

    @property
    def dt(self) -> float:
        return (self.t1 - self.t0) / self.M

    @property
    def spatial_shape(self) -> Tuple[int, ...]:
        return (self.N + 1,) * self.dim

    @property
    def shape(self) -> Tuple[int, ...]:
        return (self.M + 1,) + self.spatial_shape

    def x(self) -> np.ndarray:
        return -1.0 + np.arange(self.N + 1) * self.hx

    def t(self) -> np.ndarray:
        return self.t0 + np.arange(self.M + 1) * self.dt

    def mesh(self) -> List[np.ndarray]:
        """Spatial coordinate arrays, each of shape `spatial_shape`."""
        axes = [self.x()] * self.dim
        return list(np.meshgrid(*axes, indexing="ij"))

    def boundary_mask(self) -> np.ndarray:
        mask = np.zeros(self.spatial_shape, dtype=bool)
        for ax in range(self.dim):
            idx = [slice(None)] * self.dim
            idx[ax] = 0
            mask[tuple(idx)] = True
            idx[ax] = -1
            mask[tuple(idx)] = True
        return mask

    def inner_mask(self, margin: float) -> np.ndarray:
        """Nodes with |x_i| <= 1 - margin on every axis."""
        inside = np.abs(self.x()) <= 1.0 - margin + 1e-12
        mask = np.ones(self.spatial_shape, dtype=bool)
        for ax in range(self.dim):
            shape = [1] * self.dim
            shape[ax] = self.N + 1
            mask = mask & inside.reshape(shape)
        return mask

    def spatial_weights(self) -> np.ndarray:
        """Tensor trapezoid weights on the spatial cube."""
        w1 = np.full(self.N + 1, self.hx)
        w1[0] = w1[-1] = 0.5 * self.hx
        w = np.ones(self.spatial_shape)
        for ax in range(self.dim):
            shape = [1] * self.dim
            shape[ax] = self.N + 1
            w = w * w1.reshape(shape)
        return w

    def time_weights(self) -> np.ndarray:
        w = np.full(self.M + 1, self.dt)
        w[0] = w[-1] = 0.5 * self.dt
        return w

    def spatial_index(self, y: Sequence[float]) -> Tuple[int, ...]:
        """Index of the node nearest to y."""
        return tuple(int(np.clip(round((float(v) + 1.0) / self.hx), 0, self.N)) for v in y)

    def time_index(self, s: float) -> int:
        return int(np.clip(round((float(s) - self.t0) / self.dt), 0, self.M))


def build_grid(n: int, N: int, M: int, t0: float, t1: float) -> SpaceTimeGrid:
    if n not in (2, 3):
        raise GridError(f"ambient dimension must be 2 or 3, got {n}")
    if int(N) != N or N < 4:
        raise GridError(f"need N >= 4 cells per axis, got {N}")
    if int(M) != M or M < 1:
        raise GridError(f"need M >= 1 time steps, got {M}")
    if not (np.isfinite(t0) and np.isfinite(t1)) or not t0 < t1:
        raise GridError(f"time span must satisfy t0 < t1, got [{t0}, {t1}]")
    return SpaceTimeGrid(n=int(n), N=int(N), M=int(M), t0=float(t0), t1=float(t1))


# ---------- Stencils ----------

def gradient(fj: np.ndarray, hx: float) -> List[np.ndarray]:
    """Spatial gradient of one time slice, one array per axis."""
    if fj.ndim == 1:
        return [np.gradient(fj, hx, edge_order=2)]
    return list(np.gradient(fj, hx, edge_order=2))


def hessian(fj: np.ndarray, hx: float) -> np.ndarray:
    """Spatial Hessian of one time slice, shape (d, d) + fj.shape."""
    d = fj.ndim
    grads = gradient(fj, hx)
    out = np.empty((d, d) + fj.shape)
    for i in range(d):
        gi = gradient(grads[i], hx)
        for k in range(d):
            out[i, k] = gi[k]
    # mixed entries: average of both differentiation orders
    for i in range(d):
        for k in range(i + 1, d):
            sym = 0.5 * (out[i, k] + out[k, i])
            out[i, k] = sym
            out[k, i] = sym
    return out


def time_derivative(f: np.ndarray, dt: float) -> np.ndarray:
    """d/dt along axis 0: centered inside, 2nd-order one-sided at both ends."""
    if f.shape[0] < 3:
        raise GridError("time derivative needs at least 3 time levels")
    return np.gradient(f, dt, axis=0, edge_order=2)


# ---------- Graph flows ----------

@dataclass
class GraphFlow:
    grid: SpaceTimeGrid
    f: np.ndarray
    boundary: np.ndarray = None
    meta: Dict = field(default_factory=dict)

    def __post_init__(self):
        f = np.array(self.f, dtype=float)
        if f.shape != self.grid.shape:
            raise GridError(f"samples have shape {f.shape}, grid expects {self.grid.shape}")
        if not np.all(np.isfinite(f)):
            bad = tuple(int(i) for i in np.argwhere(~np.isfinite(f))[0])
            raise GridError(f"non-finite sample at index {bad}")
        f.setflags(write=False)
        self.f = f
        trace = f[:, self.grid.boundary_mask()]
        if self.boundary is None:
            self.boundary = trace
        else:
            b = np.array(self.boundary, dtype=float)
            if b.shape != trace.shape or not np.array_equal(b, trace):
                raise GridError("boundary trace does not match samples at boundary nodes")
            self.boundary = b
        self.boundary.setflags(write=False)

    @property
    def n(self) -> int:
        return self.grid.n

    def at(self, j: int) -> np.ndarray:
        if not 0 <= j <= self.grid.M:
            raise GridError(f"time index {j} outside [0, {self.grid.M}]")
        return self.f[j]


def _node_location(grid: SpaceTimeGrid, index: Sequence[int]) -> str:
    j = index[0]
    xs = ", ".join(f"x{a + 1}={grid.x()[i]:.6g}" for a, i in enumerate(index[1:]))
    return f"t={grid.t()[j]:.6g}, {xs}"


def sample_graph(expr: Union[str, Expr], grid: SpaceTimeGrid) -> GraphFlow:
    if isinstance(expr, str):
        expr = parse_graph(expr, grid.n)
    d = grid.dim
    env = {}
    for a in range(d):
        shape = [1] * (d + 1)
        shape[a + 1] = grid.N + 1
        env[f"x{a + 1}"] = grid.x().reshape(shape)
    env["t"] = grid.t().reshape((grid.M + 1,) + (1,) * d)
    f = expr(**env)
    f = np.broadcast_to(f, grid.shape).astype(float)
    if not np.all(np.isfinite(f)):
        bad = tuple(int(i) for i in np.argwhere(~np.isfinite(f))[0])
        raise GridError(f"'{expr.text}' is not finite at node {bad} ({_node_location(grid, bad)})")
    return GraphFlow(grid=grid, f=f)


# ---------- Ambient fields ----------

@dataclass(frozen=True)
class AmbientField:
    """Vector field u(x, xn, t) with n components; closed form or composed samples."""

    n: int
    kind: str = "expr"
    exprs: Optional[Tuple[Expr, ...]] = None
    samples: Optional[np.ndarray] = None

    @classmethod
    def from_strings(cls, components: Sequence[str], n: int) -> "AmbientField":
        if len(components) != n:
            raise GridError(f"forcing needs {n} components, got {len(components)}")
        return cls(n=n, kind="expr", exprs=tuple(parse(str(c), n) for c in components))

    @classmethod
    def zero(cls, n: int) -> "AmbientField":
        return cls.from_strings(["0"] * n, n)

    @classmethod
    def constant(cls, vec: Sequence[float]) -> "AmbientField":
        return cls.from_strings([repr(float(v)) for v in vec], len(vec))

    @classmethod
    def from_samples(cls, samples: np.ndarray, grid: SpaceTimeGrid) -> "AmbientField":
        s = np.asarray(samples, dtype=float)
        if s.shape != (grid.n,) + grid.shape:
            raise GridError(f"forcing samples need shape {(grid.n,) + grid.shape}, got {s.shape}")
        if not np.all(np.isfinite(s)):
            raise GridError("forcing samples contain non-finite values")
        return cls(n=grid.n, kind="samples", samples=s)

    def is_zero(self) -> bool:
        if self.kind == "samples":
            return not np.any(self.samples)
        return all(e.text in ("0", "0.0") for e in self.exprs)

    def at(self, xs: Sequence[np.ndarray], xn: np.ndarray, t) -> np.ndarray:
        """Evaluate at ambient points; returns shape (n,) + broadcast shape."""
        if self.kind != "expr":
            raise GridError("sampled forcing is only defined on graph nodes")
        env = {f"x{a + 1}": xs[a] for a in range(self.n - 1)}
        env["xn"] = xn
        env["t"] = t
        parts = [e(**env) for e in self.exprs]
        shape = np.broadcast_shapes(*[p.shape for p in parts])
        out = np.stack([np.broadcast_to(p, shape) for p in parts])
        if not np.all(np.isfinite(out)):
            raise GridError("forcing is not finite at some evaluation point")
        return out

    def on_graph(self, gf: GraphFlow, j: int) -> np.ndarray:
        """u at (x, f(x, t_j), t_j) for every spatial node; shape (n,) + spatial."""
        if gf.n != self.n:
            raise GridError(f"forcing has {self.n} components, flow lives in R^{gf.n}")
        if self.kind == "samples":
            return self.samples[:, j]
        return self.at(gf.grid.mesh(), gf.at(j), gf.grid.t()[j])


# ---------- Parabolic seminorm ----------

@dataclass(frozen=True)
class SeminormEstimate:
    value: float
    gradient_part: float
    time_part: float
    alpha: float
    mode: str
    pairs: int


def _stratified(count: int, total: int, rng: np.random.Generator) -> np.ndarray:
    if count >= total:
        return np.arange(total)
    edges = np.linspace(0, total, count + 1).astype(int)
    picks = np.array([rng.integers(lo, max(lo + 1, hi)) for lo, hi in zip(edges[:-1], edges[1:])])
    picks[0], picks[-1] = 0, total - 1
    return np.unique(picks)


def parabolic_seminorm_estimate(
    gf: GraphFlow,
    alpha: float,
    max_nodes: int = SEMINORM_MAX_NODES,
    seed: int = SEMINORM_SEED,
    block: int = 256,
) -> SeminormEstimate:
    if not 0.0 < alpha <= 1.0:
        raise GridError(f"Hoelder exponent must lie in (0, 1], got {alpha}")
    grid = gf.grid
    d = grid.dim
    n_space = (grid.N + 1) ** d
    total = (grid.M + 1) * n_space

    if total <= max_nodes:
        mode = "full"
        t_idx = np.arange(grid.M + 1)
        s_idx = np.arange(n_space)
    else:
        mode = "stratified"
        rng = np.random.default_rng(seed)
        n_t = int(min(grid.M + 1, max(2, int(np.sqrt(max_nodes)))))
        n_s = int(min(n_space, max(2, max_nodes // n_t)))
        t_idx = _stratified(n_t, grid.M + 1, rng)
        s_idx = _stratified(n_s, n_space, rng)
    logger.info(f"seminorm scan: mode={mode}, nodes={len(t_idx) * len(s_idx)} of {total}")

    coords = np.stack([c.ravel() for c in grid.mesh()], axis=1)[s_idx]  # (S, d)
    times = grid.t()[t_idx]
    flat = gf.f.reshape(grid.M + 1, n_space)
    grads = np.stack(
        [np.stack([g.ravel() for g in gradient(gf.f[j], grid.hx)], axis=1)[s_idx] for j in t_idx]
    )  # (T, S, d)

    T, S = len(t_idx), len(s_idx)
    y = np.broadcast_to(coords[None], (T, S, d)).reshape(-1, d)
    s = np.broadcast_to(times[:, None], (T, S)).reshape(-1)
    g = grads.reshape(-1, d)

    grad_sup = 0.0
    pairs = 0
    K = y.shape[0]
    for a in range(0, K, block):
        b = min(K, a + block)
        dy = np.sqrt(np.sum((y[a:b, None, :] - y[None, :, :]) ** 2, axis=-1))
        ds = np.abs(s[a:b, None] - s[None, :])
        den = np.maximum(dy ** alpha, ds ** (alpha / 2.0))
        num = np.sqrt(np.sum((g[a:b, None, :] - g[None, :, :]) ** 2, axis=-1))
        ok = den > 0
        pairs += int(np.count_nonzero(ok))
        if np.any(ok):
            grad_sup = max(grad_sup, float(np.max(num[ok] / den[ok])))

    time_sup = 0.0
    if T >= 2:
        vals = flat[t_idx][:, s_idx]  # (T, S)
        for a in range(T):
            dts = np.abs(times[a] - times)
            ok = dts > 0
            if not np.any(ok):
                continue
            q = np.abs(vals[a][None, :] - vals[ok]) / (dts[ok][:, None] ** ((1.0 + alpha) / 2.0))
            time_sup = max(time_sup, float(np.max(q)))

    return SeminormEstimate(
        value=grad_sup + time_sup,
        gradient_part=grad_sup,
        time_part=time_sup,
        alpha=float(alpha),
        mode=mode,
        pairs=pairs,
    )


def parabolic_seminorm(gf: GraphFlow, alpha: float) -> float:
    """Node-pair lower bound for the parabolic C^{1,alpha} seminorm of gf."""
    return parabolic_seminorm_estimate(gf, alpha).value
