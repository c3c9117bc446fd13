"""
Compactly supported nonnegative test functions on space x height x time.

A TestFunction is radial in the parabolic metric
    q = |x - y|^2 / a^2 + (xn - c)^2 / a^2 + (t - s)^2 / tau^2
(tau = a^2 unless given), or separable as psi~(x, xn) * eta(t) for the
blow-up construction. Value, full space gradient (including the xn
component) and time derivative are closed form.

Profiles:
- "bump": exp(1 - 1/(1 - q)) for q < 1, peak value 1, C-infinity
- "poly": (1 - q)^3 for q < 1
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy import integrate


class SupportError(ValueError):
    pass


PROFILES = ("bump", "poly")


def _profile(name: str, q: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Profile g(q) and g'(q), both zero for q >= 1."""
    q = np.asarray(q, dtype=float)
    inside = q < 1.0
    qq = np.where(inside, q, 0.0)
    if name == "bump":
        one_minus = 1.0 - qq
        g = np.where(inside, np.exp(1.0 - 1.0 / one_minus), 0.0)
        dg = np.where(inside, -g / one_minus ** 2, 0.0)
    elif name == "poly":
        g = np.where(inside, (1.0 - qq) ** 3, 0.0)
        dg = np.where(inside, -3.0 * (1.0 - qq) ** 2, 0.0)
    else:
        raise SupportError(f"unknown test-function profile '{name}'")
    return g, dg


@lru_cache(maxsize=None)
def profile_integral(name: str) -> float:
    """Integral of g(r^2) over r in (-1, 1)."""
    val, _ = integrate.quad(lambda r: float(_profile(name, r * r)[0]), -1.0, 1.0, epsabs=1e-13, epsrel=1e-12)
    return float(val)


@dataclass(frozen=True)
class TestFunction:
    __test__ = False

    center: Tuple[float, ...]
    radius: float
    height: Optional[float] = None
    time: Optional[float] = None
    time_radius: Optional[float] = None
    profile: str = "bump"
    separable: bool = False
    amplitude: float = 1.0
    normalize_time: bool = False

    def __post_init__(self):
        if self.radius <= 0:
            raise SupportError(f"test-function radius must be positive, got {self.radius}")
        if self.profile not in PROFILES:
            raise SupportError(f"unknown test-function profile '{self.profile}'")
        if self.time_radius is not None and self.time_radius <= 0:
            raise SupportError(f"time radius must be positive, got {self.time_radius}")
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))

    @property
    def tau(self) -> float:
        return float(self.time_radius) if self.time_radius is not None else self.radius ** 2

    # ---------- support ----------

    def time_support(self) -> Optional[Tuple[float, float]]:
        if self.time is None:
            return None
        return (self.time - self.tau, self.time + self.tau)

    def check_inside(self, grid, require_time: bool = True) -> None:
        """Raise SupportError unless the support sits strictly inside the grid domain."""
        if len(self.center) != grid.dim:
            raise SupportError(f"test function has {len(self.center)} spatial coordinates, grid has {grid.dim}")
        reach = max(abs(y) for y in self.center) + self.radius
        if reach >= 1.0:
            raise SupportError(f"spatial support reaches |x| = {reach:.6g} >= 1")
        if self.time is None:
            if require_time:
                raise SupportError("test function needs compact support in time")
            return
        lo, hi = self.time_support()
        if not (grid.t0 < lo and hi < grid.t1):
            raise SupportError(f"time support [{lo:.6g}, {hi:.6g}] not inside ({grid.t0}, {grid.t1})")

    def check_inside_box(self, n: int, t0: float, t1: float) -> None:
        """Same check on the periodic box [-1,1)^n, with the height axis as x_n."""
        if len(self.center) != n - 1 or self.height is None:
            raise SupportError("box test functions need n-1 spatial coordinates and a height")
        reach = max([abs(y) for y in self.center] + [abs(self.height)]) + self.radius
        if reach >= 1.0:
            raise SupportError(f"support reaches |x| = {reach:.6g} >= 1")
        if self.time is not None:
            lo, hi = self.time_support()
            if not (t0 < lo and hi < t1):
                raise SupportError(f"time support [{lo:.6g}, {hi:.6g}] not inside ({t0}, {t1})")

    # ---------- evaluation ----------

    def _space_q(self, xs: Sequence[np.ndarray], xn) -> np.ndarray:
        a2 = self.radius ** 2
        q = 0.0
        for x, y in zip(xs, self.center):
            q = q + (np.asarray(x, dtype=float) - y) ** 2 / a2
        if self.height is not None:
            q = q + (np.asarray(xn, dtype=float) - self.height) ** 2 / a2
        return np.asarray(q, dtype=float)

    def _time_q(self, t) -> np.ndarray:
        if self.time is None:
            return np.zeros_like(np.asarray(t, dtype=float))
        return (np.asarray(t, dtype=float) - self.time) ** 2 / self.tau ** 2

    def _eta(self, t) -> Tuple[np.ndarray, np.ndarray]:
        """Separable time factor and its t-derivative."""
        if self.time is None:
            t = np.asarray(t, dtype=float)
            return np.ones_like(t), np.zeros_like(t)
        h, dh = _profile(self.profile, self._time_q(t))
        scale = 1.0 / profile_integral(self.profile) if self.normalize_time else 1.0
        dq = 2.0 * (np.asarray(t, dtype=float) - self.time) / self.tau ** 2
        return scale * h, scale * dh * dq

    def value(self, xs: Sequence[np.ndarray], xn, t) -> np.ndarray:
        qx = self._space_q(xs, xn)
        if self.separable:
            g, _ = _profile(self.profile, qx)
            eta, _ = self._eta(t)
            return self.amplitude * g * eta
        g, _ = _profile(self.profile, qx + self._time_q(t))
        return self.amplitude * g

    def gradient(self, xs: Sequence[np.ndarray], xn, t) -> np.ndarray:
        """Full space gradient (d/dx_1, ..., d/dx_{n-1}, d/dx_n); shape (n,) + broadcast."""
        qx = self._space_q(xs, xn)
        if self.separable:
            _, dg = _profile(self.profile, qx)
            eta, _ = self._eta(t)
            factor = self.amplitude * dg * eta
        else:
            _, dg = _profile(self.profile, qx + self._time_q(t))
            factor = self.amplitude * dg
        a2 = self.radius ** 2
        parts = [factor * 2.0 * (np.asarray(x, dtype=float) - y) / a2 for x, y in zip(xs, self.center)]
        if self.height is not None:
            parts.append(factor * 2.0 * (np.asarray(xn, dtype=float) - self.height) / a2)
        else:
            parts.append(np.zeros_like(factor))
        shape = np.broadcast_shapes(*[np.shape(p) for p in parts])
        return np.stack([np.broadcast_to(p, shape) for p in parts])

    def time_derivative(self, xs: Sequence[np.ndarray], xn, t) -> np.ndarray:
        qx = self._space_q(xs, xn)
        if self.time is None:
            return np.zeros(np.broadcast_shapes(qx.shape, np.shape(t)))
        if self.separable:
            g, _ = _profile(self.profile, qx)
            _, deta = self._eta(t)
            return self.amplitude * g * deta
        _, dg = _profile(self.profile, qx + self._time_q(t))
        return self.amplitude * dg * 2.0 * (np.asarray(t, dtype=float) - self.time) / self.tau ** 2


def zero_test_function(grid) -> TestFunction:
    """A test function that vanishes identically (amplitude 0)."""
    return TestFunction(center=(0.0,) * grid.dim, radius=0.5, time=0.5 * (grid.t0 + grid.t1),
                        time_radius=0.25 * (grid.t1 - grid.t0), amplitude=0.0)
