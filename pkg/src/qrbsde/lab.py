"""Experiment runners: rate measurements, coupled stability sweeps, bound checks.

Each runner is seed-deterministic end to end and returns a frozen report
object that serializes to a dict (for JSON) and to flat rows (for CSV).
Rates are measured as ordinary least-squares slopes on log-log points, with
a 95% confidence band from standard regression theory.
"""

from __future__ import annotations

import dataclasses
import hashlib
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import stats

from .forward import (PathBundle, ReflectionSchedule, TimeGrid, euler_simulate,
                      exact_simulate, make_grid, sample_increments)
from .model import ProblemSpec, TruncationRadius, y_bound
from .oracle import (GridSolution, build_space_grid, exact_scheme_solve,
                     snell_cole_hopf)
from .regress import BasisSpec, build_basis, evaluate_fit, fit_least_squares
from .scheme import SchemeSolution, estimate_Mz_auto, solve_backward


@dataclass(frozen=True)
class MCConfig:
    """Monte Carlo leg of an experiment: path count, seed, regression basis."""
    n_paths: int = 50_000
    seed: int = 42
    basis: BasisSpec = field(default_factory=BasisSpec)
    M_z: Optional[float] = None   # None -> pilot auto-estimate per solve

    def __post_init__(self):
        if self.n_paths < 1:
            raise ValueError("need at least one path")


def _resolve_radius(spec, grid, schedule, bundle, mc: MCConfig) -> TruncationRadius:
    if mc.M_z is not None:
        return TruncationRadius(float(mc.M_z), "user-supplied")
    return estimate_Mz_auto(spec, grid, schedule, bundle, mc.basis)


def _solve_mc(spec, N, mc: MCConfig, reflection="all"):
    grid, sched = make_grid(N, spec.T, reflection)
    bundle = euler_simulate(spec, sample_increments(grid, mc.n_paths, mc.seed, spec.m))
    radius = _resolve_radius(spec, grid, sched, bundle, mc)
    sol = solve_backward(spec, grid, sched, bundle, mc.basis, radius)
    return grid, sched, bundle, sol


# ---------------------------------------------------------------------------
# slope fitting

@dataclass(frozen=True)
class SlopeFit:
    slope: float
    intercept: float
    band95: float      # half-width of the 95% confidence interval on the slope
    n_points: int

    def to_dict(self) -> dict:
        return {"slope": self.slope, "intercept": self.intercept,
                "band95": self.band95, "n_points": self.n_points}


def slope_fit(points: Sequence[tuple]) -> SlopeFit:
    """OLS fit of log(err) on log(h) for (h, err) pairs; all values positive."""
    pts = [(float(h), float(e)) for h, e in points]
    if len(pts) < 3:
        raise ValueError("slope fit needs at least 3 points")
    h = np.array([p[0] for p in pts])
    e = np.array([p[1] for p in pts])
    if np.any(h <= 0) or np.any(e <= 0):
        raise ValueError("slope fit requires strictly positive (h, err) values")
    lx, ly = np.log(h), np.log(e)
    n = lx.size
    sxx = float(np.sum((lx - lx.mean()) ** 2))
    if sxx == 0:
        raise ValueError("slope fit requires at least two distinct h values")
    slope = float(np.sum((lx - lx.mean()) * (ly - ly.mean())) / sxx)
    intercept = float(ly.mean() - slope * lx.mean())
    resid = ly - (intercept + slope * lx)
    if n > 2:
        s2 = float(np.sum(resid ** 2) / (n - 2))
        band = float(stats.t.ppf(0.975, n - 2) * math.sqrt(s2 / sxx))
    else:
        band = 0.0
    return SlopeFit(slope=slope, intercept=intercept, band95=band, n_points=n)


# ---------------------------------------------------------------------------
# convergence in the time grid

@dataclass(frozen=True)
class ConvergenceReport:
    kind: str            # "grid-refinement" | "reflection-sweep"
    x_name: str          # meaning of the cell key: "mesh" | "reflection_mesh"
    cells: tuple         # one dict per grid size / schedule, key order fixed
    slopes: dict         # error name -> SlopeFit (None if not fittable)
    reference: dict      # oracle identities and reference values
    floor_limited: bool = False

    def rows(self):
        return [dict(c) for c in self.cells]

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "x_name": self.x_name,
            "cells": self.rows(),
            "slopes": {k: (v.to_dict() if v is not None else None)
                       for k, v in self.slopes.items()},
            "reference": dict(self.reference),
            "floor_limited": self.floor_limited,
        }


def run_convergence(spec: ProblemSpec, Ns: Sequence[int], mc: MCConfig,
                    oracle: str = "auto") -> ConvergenceReport:
    """Solve on refining uniform grids with reflection at every grid time.

    Two error layers per N, kept separate because they scale oppositely:

    * rate columns ("y0_err", "y_sup_err", "z_err"): the quadrature solve at
      this N against the same solver at twice the finest N (self-reference,
      plus the Snell value for the pure-quadratic class) — noise-free, these
      carry the time-discretization rate and are what the slopes are fit on;
    * regression columns ("mc_*"): the path solver against the quadrature
      solve at the *same* N — pure Monte Carlo/projection error, which grows
      with the step count at a fixed path budget and therefore must not be
      mixed into the rate fit.

    Spatial L2 norms are taken over the simulated path cloud, so both layers
    use the same (forward-law) weighting.
    """
    Ns = [int(n) for n in Ns]
    if len(Ns) < 4:
        raise ValueError("convergence study needs at least 4 grid sizes")
    if any(b <= a for a, b in zip(Ns, Ns[1:])):
        raise ValueError("grid sizes must be strictly increasing")
    if oracle not in ("auto", "exact-scheme", "snell"):
        raise ValueError(f"unknown oracle {oracle!r}")
    if oracle == "snell" and not spec.pure_quadratic:
        raise ValueError("Snell oracle requires the pure-quadratic driver class")

    N_ref = 2 * max(Ns)
    for n in Ns:
        if N_ref % n != 0:
            raise ValueError(f"N={n} must divide the reference grid {N_ref}")

    space = build_space_grid(spec)
    grid_ref, sched_ref = make_grid(N_ref, spec.T, "all")
    ref = exact_scheme_solve(spec, grid_ref, sched_ref, space)
    reference = {"y0_oracle": "exact-scheme", "N_ref": N_ref,
                 "exact_scheme_y0": ref.y0}
    y0_ref = ref.y0
    if spec.pure_quadratic:
        snell_ref = snell_cole_hopf(spec, grid_ref, sched_ref, space)
        reference["snell_y0"] = snell_ref.y0
        if oracle in ("auto", "snell"):
            reference["y0_oracle"] = "snell"
            y0_ref = snell_ref.y0

    cells = []
    for N in Ns:
        stride = N_ref // N
        grid, sched, bundle, sol = _solve_mc(spec, N, mc)
        X = bundle.X_euler
        orc = exact_scheme_solve(spec, grid, sched, space)

        sup_y = 0.0           # quadrature-at-N vs fine reference
        mc_sup_y = 0.0        # path solver vs quadrature-at-N
        z_terms = np.zeros(mc.n_paths)
        mc_z_terms = np.zeros(mc.n_paths)
        for i in range(N):
            y_ref_i = np.asarray(ref.y_at(stride * i, X[:, i]), dtype=float)
            y_orc_i = np.asarray(orc.y_at(i, X[:, i]), dtype=float)
            z_ref_i = np.asarray(ref.z_at(stride * i, X[:, i]), dtype=float)
            z_orc_i = np.asarray(orc.z_at(i, X[:, i]), dtype=float)
            sup_y = max(sup_y, float(np.sqrt(np.mean((y_orc_i - y_ref_i) ** 2))))
            mc_sup_y = max(mc_sup_y,
                           float(np.sqrt(np.mean((sol.Ybar[:, i] - y_orc_i) ** 2))))
            z_terms += np.sum((z_orc_i - z_ref_i) ** 2, axis=-1) * grid.dt[i]
            mc_z_terms += np.sum((sol.Zbar[:, i, :] - z_orc_i) ** 2,
                                 axis=-1) * grid.dt[i]

        cells.append({
            "N": N, "mesh": grid.mesh,
            "y0_scheme": sol.y0_fit, "y0_se": sol.y0_se,
            "y0_oracle": orc.y0, "y0_ref": y0_ref,
            "y0_err": abs(orc.y0 - y0_ref),
            "y_sup_err": sup_y,
            "z_err": float(np.mean(z_terms)),
            "mc_y0_gap": abs(sol.y0_fit - orc.y0),
            "mc_y_sup_err": mc_sup_y,
            "mc_z_gap": float(np.mean(mc_z_terms)),
            "M_z": sol.radius.M_z,
        })

    def _fit(key):
        try:
            return slope_fit([(c["mesh"], c[key]) for c in cells if c[key] > 0])
        except ValueError:
            return None

    slopes = {"y0_err": _fit("y0_err"), "y_sup_err": _fit("y_sup_err"),
              "z_err": _fit("z_err"), "mc_y0_gap": _fit("mc_y0_gap"),
              "mc_z_gap": _fit("mc_z_gap")}
    floor = min(c["mc_y0_gap"] for c in cells) <= 3.0 * max(c["y0_se"] for c in cells)
    return ConvergenceReport(kind="grid-refinement", x_name="mesh",
                             cells=tuple(cells), slopes=slopes,
                             reference=reference, floor_limited=bool(floor))


def run_discrete_reflection_sweep(spec: ProblemSpec, N: int,
                                  kappas: Sequence[int],
                                  engine: str = "auto") -> ConvergenceReport:
    """Fix a fine time grid and coarsen only the reflection schedule.

    Noise-free by construction: values come from the quadrature scheme (or
    the Snell recursion for the pure-quadratic class), so the monotonicity of
    the value in schedule refinement is exact, not statistical.  The gap is
    measured against the everywhere-reflected run on the same grid.
    """
    kappas = [int(k) for k in kappas]
    if engine == "auto":
        engine = "snell" if spec.pure_quadratic else "exact-scheme"
    if engine not in ("snell", "exact-scheme"):
        raise ValueError(f"unknown engine {engine!r}")
    for k in kappas:
        if k < 1 or N % k != 0:
            raise ValueError(f"kappa={k} must divide N={N}")

    space = build_space_grid(spec)

    def value(reflection):
        grid, sched = make_grid(N, spec.T, reflection)
        if engine == "snell":
            return snell_cole_hopf(spec, grid, sched, space).y0, sched
        return exact_scheme_solve(spec, grid, sched, space).y0, sched

    y0_ref, _ = value("all")
    cells = []
    for k in sorted(kappas):
        y0_k, sched = value(("every", N // k))
        cells.append({
            "kappa": k, "reflection_mesh": sched.mesh,
            "y0": y0_k, "y0_ref": y0_ref, "gap": y0_ref - y0_k,
        })

    nondecreasing = all(b["y0"] >= a["y0"] - 1e-10
                        for a, b in zip(cells, cells[1:]))
    try:
        fit = slope_fit([(c["reflection_mesh"], c["gap"]) for c in cells
                         if c["gap"] > 0])
    except ValueError:
        fit = None
    return ConvergenceReport(
        kind="reflection-sweep", x_name="reflection_mesh",
        cells=tuple(cells), slopes={"gap": fit},
        reference={"engine": engine, "N": N, "y0_full_reflection": y0_ref,
                   "monotone_nondecreasing": nondecreasing})


# ---------------------------------------------------------------------------
# stability under forward perturbations

@dataclass(frozen=True)
class StabilityReport:
    kind: str            # "drift-shift" | "euler-vs-exact"
    x_name: str          # "eps" | "mesh"
    cells: tuple
    slopes: dict
    dx_proxy_name: str = "(E sup_i |dX_i|^4)^(1/4)"
    dw_checksum: str = ""

    def rows(self):
        return [dict(c) for c in self.cells]

    def to_dict(self) -> dict:
        return {
            "kind": self.kind, "x_name": self.x_name, "cells": self.rows(),
            "slopes": {k: (v.to_dict() if v is not None else None)
                       for k, v in self.slopes.items()},
            "dx_proxy_name": self.dx_proxy_name,
            "dw_checksum": self.dw_checksum,
        }


def _dw_checksum(bundle: PathBundle) -> str:
    return hashlib.sha256(np.ascontiguousarray(bundle.dW).tobytes()).hexdigest()


def _deltas(grid: TimeGrid, XA, XB, solA: SchemeSolution, solB: SchemeSolution):
    """Path-wise coupled differences between two solved legs on one grid."""
    dx4 = np.max((XA - XB) ** 4, axis=1)
    dY = np.max((solA.Ybar - solB.Ybar) ** 2, axis=1)
    dZ = np.sum(np.sum((solA.Zbar - solB.Zbar) ** 2, axis=-1) * grid.dt[None, :],
                axis=1)
    dK = (solA.K_terminal - solB.K_terminal) ** 2
    return {
        "dx_proxy": float(np.mean(dx4)) ** 0.25,
        "D_Y": float(np.mean(dY)),
        "D_Z": float(np.mean(dZ)),
        "D_K": float(np.mean(dK)),
    }


def run_stability(spec: ProblemSpec, kind: str, levels: Sequence[float],
                  mc: MCConfig, N: int = 64) -> StabilityReport:
    """Solve two coupled legs on the same Brownian increments and compare.

    kind "drift-shift": perturb the drift by a constant eps (levels must be a
    decreasing eps list); both legs are Euler-simulated from bit-identical
    increments.  kind "euler-vs-exact": levels is an increasing N list; each
    cell couples the Euler states with exact-transition states sharing the
    step increments.
    """
    if kind == "drift-shift":
        eps = [float(e) for e in levels]
        if any(b >= a for a, b in zip(eps, eps[1:])):
            raise ValueError("eps levels must be strictly decreasing")
        grid, sched = make_grid(N, spec.T, "all")
        bundle = euler_simulate(spec, sample_increments(grid, mc.n_paths, mc.seed, spec.m))
        # one radius shared by every leg so deltas never cross a truncation edge
        radius = _resolve_radius(spec, grid, sched, bundle, mc)
        sol0 = solve_backward(spec, grid, sched, bundle, mc.basis, radius)
        checksum = _dw_checksum(bundle)

        cells = []
        for e in eps:
            b0 = spec.drift

            def drift_e(t, x, _b=b0, _e=e):
                return np.asarray(_b(t, x), dtype=float) + _e

            spec_e = dataclasses.replace(spec, drift=drift_e)
            bundle_e = euler_simulate(spec_e, dataclasses.replace(
                bundle, X_euler=None, X_exact=None))
            assert _dw_checksum(bundle_e) == checksum
            sol_e = solve_backward(spec_e, grid, sched, bundle_e, mc.basis, radius)
            d = _deltas(grid, bundle.X_euler, bundle_e.X_euler, sol0, sol_e)
            d["eps"] = e
            d["ratio_Y"] = d["D_Y"] / d["dx_proxy"] if d["dx_proxy"] > 0 else 0.0
            cells.append(d)

        x_key, x_name = "eps", "eps"
    elif kind == "euler-vs-exact":
        Ns = [int(n) for n in levels]
        if any(b <= a for a, b in zip(Ns, Ns[1:])):
            raise ValueError("N levels must be strictly increasing")
        cells = []
        checksum = ""
        for n in Ns:
            grid, sched = make_grid(n, spec.T, "all")
            bundle = sample_increments(grid, mc.n_paths, mc.seed, spec.m)
            bundle = exact_simulate(spec, euler_simulate(spec, bundle))
            checksum = _dw_checksum(bundle)
            radius = _resolve_radius(spec, grid, sched, bundle, mc)
            sol_e = solve_backward(spec, grid, sched, bundle, mc.basis, radius)
            exact_leg = dataclasses.replace(bundle, X_euler=bundle.X_exact)
            sol_x = solve_backward(spec, grid, sched, exact_leg, mc.basis, radius)
            d = _deltas(grid, bundle.X_exact, bundle.X_euler, sol_x, sol_e)
            d["N"] = n
            d["mesh"] = grid.mesh
            d["ratio_Y"] = d["D_Y"] / d["dx_proxy"] if d["dx_proxy"] > 0 else 0.0
            cells.append(d)
        x_key, x_name = "mesh", "mesh"
    else:
        raise ValueError(f"unknown stability kind {kind!r}")

    def _fit(key):
        try:
            return slope_fit([(c[x_key], c[key]) for c in cells if c[key] > 0])
        except ValueError:
            return None

    slopes = {"dx_proxy": _fit("dx_proxy"), "D_Y": _fit("D_Y"),
              "D_Z": _fit("D_Z"), "D_K": _fit("D_K")}
    return StabilityReport(kind=kind, x_name=x_name, cells=tuple(cells),
                           slopes=slopes, dw_checksum=checksum)


# ---------------------------------------------------------------------------
# a priori bound diagnostics

@dataclass(frozen=True)
class DiagnosticsReport:
    tail_sum_max: float        # max over i of 99th-pct fitted conditional tail sum
    bound_value: float         # exp(4 alpha M)/alpha^2 [1 + 2 alpha M_f (1+M) T]
    passed: bool
    moments: dict              # {"sumZ2": {p: E[S^p]}, "K_T": {p: E[K^p]}}
    grid_N: int
    n_paths: int
    seed: int

    def to_dict(self) -> dict:
        return {
            "tail_sum_max": self.tail_sum_max,
            "bound_value": self.bound_value,
            "passed": self.passed,
            "moments": {k: {str(p): v for p, v in d.items()}
                        for k, d in self.moments.items()},
            "grid_N": self.grid_N, "n_paths": self.n_paths, "seed": self.seed,
        }


def bmo_bound_value(spec: ProblemSpec) -> float:
    """Closed-form bound on the conditional residual quadratic variation of Z.

    Pure function of the problem constants: exp(4 alpha M)/alpha^2 times
    (1 + 2 alpha M_f (1 + M) T), with M the uniform Y bound.
    """
    M = y_bound(spec).M
    a = spec.alpha
    return math.exp(4.0 * a * M) / a ** 2 \
        * (1.0 + 2.0 * a * spec.M_f * (1.0 + M) * spec.T)


def run_diagnostics(spec: ProblemSpec, N: int, mc: MCConfig,
                    sol: Optional[SchemeSolution] = None,
                    bundle: Optional[PathBundle] = None) -> DiagnosticsReport:
    """Estimate sup_i of the conditional tail sum E_i[sum_{j>=i} |Z_j|^2 dt_j]
    by cross-sectional regression and compare to the closed-form bound."""
    if sol is None or bundle is None:
        grid, sched, bundle, sol = _solve_mc(spec, N, mc)
    grid = sol.grid
    X = bundle.X_euler

    step2 = np.sum(sol.Zbar ** 2, axis=-1) * grid.dt[None, :]     # (P, N)
    tails = np.cumsum(step2[:, ::-1], axis=1)[:, ::-1]            # tail sums
    S = tails[:, 0]

    tail_max = 0.0
    for i in range(grid.N):
        xs = X[:, i]
        if i == 0:
            fitted = np.full(mc.n_paths, float(np.mean(tails[:, i])))
        else:
            b = mc.basis
            if b.kind == "polynomial" and b.domain is None:
                b = dataclasses.replace(
                    b, domain=(float(np.quantile(xs, 0.005)),
                               float(np.quantile(xs, 0.995))))
            phi = build_basis(b, xs)
            fit = fit_least_squares(phi, xs, tails[:, i], ridge=b.ridge)
            fitted = evaluate_fit(fit, xs)
        tail_max = max(tail_max, float(np.quantile(fitted, 0.99)))

    bound = bmo_bound_value(spec)
    K = sol.K_terminal
    moments = {
        "sumZ2": {p: float(np.mean(S ** p)) for p in (1, 2, 4)},
        "K_T": {p: float(np.mean(K ** p)) for p in (1, 2, 4)},
    }
    return DiagnosticsReport(
        tail_sum_max=tail_max, bound_value=bound,
        passed=bool(tail_max <= bound), moments=moments,
        grid_N=grid.N, n_paths=bundle.n_paths, seed=bundle.seed)
