"""Noise-free references on a spatial lattice.

Because the Euler state has exact Gaussian one-step transitions (drift
frozen at the left endpoint, deterministic volatility), the backward scheme
with *exact* conditional expectations is computable to quadrature precision:
Gauss-Hermite integration in the transition variable combined with monotone
cubic interpolation of the previous value slice.  This isolates
time-discretization error from the Monte Carlo / regression error of the
path solver.  For the pure-quadratic driver the exponential change of
variable turns the same discrete problem into a Snell envelope recursion,
giving an independent closed-form-in-structure oracle.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np
from numpy.polynomial.hermite import hermgauss
from scipy.interpolate import PchipInterpolator

from .forward import ReflectionSchedule, TimeGrid
from .model import ProblemSpec, TruncationRadius, smooth_truncation, y_bound
from .scheme import PICARD_MAX_ITER, PICARD_TOL


@dataclass(frozen=True)
class SpaceGrid:
    nodes: np.ndarray
    quad_order: int

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        if nodes.size < 51:
            raise ValueError("space grid needs at least 51 nodes")
        if self.quad_order < 7:
            raise ValueError("quadrature order must be >= 7")
        if np.any(np.diff(nodes) <= 0):
            raise ValueError("nodes must be strictly increasing")
        object.__setattr__(self, "nodes", nodes)

    @property
    def J(self) -> int:
        return self.nodes.size


def build_space_grid(spec: ProblemSpec, J: int = 401, quad_order: int = 15,
                     n_sigmas: float = 6.0) -> SpaceGrid:
    """Nodes covering x0 +/- n_sigmas * sigma_bar * sqrt(T), padded for drift."""
    sigma_bar = max(spec.sigma_norm(t) for t in np.linspace(0.0, spec.T, 9))
    half = n_sigmas * sigma_bar * math.sqrt(spec.T)
    lo, hi = spec.x0 - half, spec.x0 + half
    # one expansion pass so drift cannot push quadrature points off the grid
    bmax = float(np.max(np.abs(np.asarray(
        spec.drift(0.0, np.linspace(lo, hi, 33))))))
    pad = bmax * spec.T
    return SpaceGrid(nodes=np.linspace(lo - pad, hi + pad, J), quad_order=quad_order)


@dataclass(frozen=True)
class GridSolution:
    grid: TimeGrid
    space: SpaceGrid
    y: np.ndarray                     # (N+1, J)
    z: Optional[np.ndarray] = None    # (N, J, m)
    dk: Optional[np.ndarray] = None   # (N+1, J)
    x0: float = 0.0
    interpolation: str = "pchip-constant-extrapolation"

    def y_at(self, i: int, x):
        interp = PchipInterpolator(self.space.nodes, self.y[i], extrapolate=False)
        xc = np.clip(x, self.space.nodes[0], self.space.nodes[-1])
        return interp(xc)

    def z_at(self, i: int, x):
        if self.z is None:
            raise ValueError("this solution does not carry a Z component")
        xc = np.clip(x, self.space.nodes[0], self.space.nodes[-1])
        out = np.empty(np.shape(xc) + (self.z.shape[2],))
        for c in range(self.z.shape[2]):
            out[..., c] = PchipInterpolator(
                self.space.nodes, self.z[i, :, c], extrapolate=False)(xc)
        return out

    @property
    def y0(self) -> float:
        return float(self.y_at(0, self.x0))


def _std_normal_quadrature(q: int):
    # Gauss-Hermite for weight e^{-u^2} mapped to the standard normal density
    h, w = hermgauss(q)
    return h * math.sqrt(2.0), w / math.sqrt(math.pi)


def _interp_slice(nodes, values, pts, warn_state):
    lo, hi = nodes[0], nodes[-1]
    if np.any(pts < lo) or np.any(pts > hi):
        if not warn_state.get("warned"):
            warnings.warn("quadrature points left the space grid; using "
                          "constant extrapolation at the edges", RuntimeWarning)
            warn_state["warned"] = True
    interp = PchipInterpolator(nodes, values, extrapolate=False)
    return interp(np.clip(pts, lo, hi))


def exact_scheme_solve(spec: ProblemSpec, grid: TimeGrid, schedule: ReflectionSchedule,
                       space: SpaceGrid, radius: Optional[TruncationRadius] = None
                       ) -> GridSolution:
    """Backward induction with exact (quadrature) conditional expectations."""
    nodes = space.nodes
    J, N, m = space.J, grid.N, spec.m
    u, w = _std_normal_quadrature(space.quad_order)
    M = y_bound(spec).M
    refl = np.zeros(N + 1, dtype=bool)
    refl[schedule.indices] = True
    warn_state: dict = {}

    g_nodes = np.asarray(spec.obstacle(nodes), dtype=float)
    y = np.empty((N + 1, J))
    z = np.zeros((N, J, m))
    dk = np.zeros((N + 1, J))
    y[N] = g_nodes

    for i in range(N - 1, -1, -1):
        ti = grid.times[i]
        dti = grid.dt[i]
        s = spec.sigma_norm(ti)
        sig = np.asarray(spec.vol(ti), dtype=float)
        mean = nodes + np.asarray(spec.drift(ti, nodes), dtype=float) * dti
        pts = mean[:, None] + s * math.sqrt(dti) * u[None, :]
        vals = _interp_slice(nodes, y[i + 1], pts, warn_state)   # (J, q)
        e = vals @ w
        eu = (vals * u[None, :]) @ w
        if s > 0:
            z[i] = eu[:, None] * (sig[None, :] / (s * math.sqrt(dti)))
        hz = z[i] if radius is None else smooth_truncation(z[i], radius.M_z)

        yi = e.copy()
        for _ in range(PICARD_MAX_ITER):
            y_new = e + dti * np.asarray(
                spec.generator(ti, nodes, yi, hz), dtype=float)
            if float(np.max(np.abs(y_new - yi))) <= PICARD_TOL:
                yi = y_new
                break
            yi = y_new
        yi = np.clip(yi, -M, M)
        if refl[i]:
            y[i] = np.maximum(yi, g_nodes)
            dk[i] = y[i] - yi
        else:
            y[i] = yi

    return GridSolution(grid=grid, space=space, y=y, z=z, dk=dk, x0=spec.x0)


def _require_pure_quadratic(spec: ProblemSpec):
    if not spec.pure_quadratic:
        raise ValueError("Snell oracle requires the pure-quadratic driver class")
    # verify numerically rather than trusting the flag
    rng = np.random.default_rng(0)
    zs = rng.normal(size=(16, spec.m))
    want = 0.5 * spec.alpha * np.sum(zs * zs, axis=-1)
    got = np.asarray(spec.generator(0.3 * spec.T, np.full(16, spec.x0),
                                    rng.normal(size=16), zs), dtype=float)
    if np.max(np.abs(got - want)) > 1e-12:
        raise ValueError("generator is not exactly (alpha/2)|z|^2")


def snell_cole_hopf(spec: ProblemSpec, grid: TimeGrid, schedule: ReflectionSchedule,
                    space: SpaceGrid) -> GridSolution:
    """Y via the exponential transform: e^{alpha Y} is the Snell envelope of
    e^{alpha g(X^pi)} over stopping times restricted to the reflection set."""
    _require_pure_quadratic(spec)
    nodes = space.nodes
    N = grid.N
    u, w = _std_normal_quadrature(space.quad_order)
    refl = np.zeros(N + 1, dtype=bool)
    refl[schedule.indices] = True
    warn_state: dict = {}

    payoff = np.exp(spec.alpha * np.asarray(spec.obstacle(nodes), dtype=float))
    S = np.empty((N + 1, space.J))
    S[N] = payoff
    for i in range(N - 1, -1, -1):
        ti = grid.times[i]
        dti = grid.dt[i]
        s = spec.sigma_norm(ti)
        mean = nodes + np.asarray(spec.drift(ti, nodes), dtype=float) * dti
        pts = mean[:, None] + s * math.sqrt(dti) * u[None, :]
        cont = _interp_slice(nodes, S[i + 1], pts, warn_state) @ w
        S[i] = np.maximum(payoff, cont) if refl[i] else cont

    return GridSolution(grid=grid, space=space, y=np.log(S) / spec.alpha, x0=spec.x0)


def brute_force_tiny(spec: ProblemSpec, grid: TimeGrid, schedule: ReflectionSchedule,
                     quad_order: int = 9,
                     radius: Optional[TruncationRadius] = None) -> float:
    """Exact scheme value at the root of the full q^N quadrature tree (N <= 4).

    No spatial interpolation at all: every reachable state gets its own tree
    node, so this is an independent oracle for tiny instances.
    """
    N = grid.N
    if N > 4:
        raise ValueError("brute force is restricted to N <= 4")
    if quad_order > 9:
        raise ValueError("brute force is restricted to quadrature order <= 9")
    u, w = _std_normal_quadrature(quad_order)
    M = y_bound(spec).M
    refl = np.zeros(N + 1, dtype=bool)
    refl[schedule.indices] = True

    # forward pass: states[i] has shape (q^i,)
    states = [np.array([spec.x0])]
    for i in range(N):
        ti = grid.times[i]
        dti = grid.dt[i]
        s = spec.sigma_norm(ti)
        x = states[-1]
        mean = x + np.asarray(spec.drift(ti, x), dtype=float) * dti
        states.append((mean[:, None] + s * math.sqrt(dti) * u[None, :]).ravel())

    yv = np.asarray(spec.obstacle(states[N]), dtype=float)
    for i in range(N - 1, -1, -1):
        ti = grid.times[i]
        dti = grid.dt[i]
        s = spec.sigma_norm(ti)
        sig = np.asarray(spec.vol(ti), dtype=float)
        x = states[i]
        child = yv.reshape(x.size, u.size)
        e = child @ w
        eu = (child * u[None, :]) @ w
        z = np.zeros((x.size, spec.m))
        if s > 0:
            z = eu[:, None] * (sig[None, :] / (s * math.sqrt(dti)))
        hz = z if radius is None else smooth_truncation(z, radius.M_z)
        yi = e.copy()
        for _ in range(PICARD_MAX_ITER):
            y_new = e + dti * np.asarray(spec.generator(ti, x, yi, hz), dtype=float)
            if float(np.max(np.abs(y_new - yi))) <= PICARD_TOL:
                yi = y_new
                break
            yi = y_new
        yi = np.clip(yi, -M, M)
        yv = np.maximum(yi, np.asarray(spec.obstacle(x), dtype=float)) if refl[i] else yi
    return float(yv[0])
