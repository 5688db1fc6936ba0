"""Problem definitions: coefficient functions, constants, assumption checks, truncation.

A problem is the pair of a scalar forward diffusion with deterministic
volatility,

    dX_t = b(t, X_t) dt + sigma(t) . dW_t,    X_0 = x0,

and a reflected backward equation with driver f(t, x, y, z) of at most
quadratic growth in z and obstacle/terminal function g(x).  All coefficient
callables are vectorised over numpy arrays: ``drift(t, x)`` and
``obstacle(x)`` map arrays elementwise, ``vol(t)`` returns an ``(m,)``
vector, and ``generator(t, x, y, z)`` broadcasts over leading axes with
``z`` carrying a trailing axis of size ``m``.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.stats import qmc

PRESET_NAMES = ("P1-pure-quadratic", "P2-mixed-quadratic", "P3-lipschitz")

# fields of a preset that build_preset accepts as overrides
_OVERRIDABLE = ("T", "x0", "L", "M_f", "M_g", "alpha", "m", "smooth_g")


@dataclass(frozen=True)
class ProblemSpec:
    name: str
    drift: Callable
    vol: Callable
    generator: Callable
    obstacle: Callable
    L: float
    M_f: float
    M_g: float
    alpha: float
    T: float
    x0: float
    m: int = 1
    pure_quadratic: bool = False
    truncation_radius: Optional[float] = None
    induced_lipschitz: Optional[dict] = None

    def __post_init__(self):
        if self.T <= 0:
            raise ValueError("T must be positive")
        if self.L <= 0:
            raise ValueError("L must be positive")
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if self.M_g < 0 or self.M_f < 0:
            raise ValueError("M_g and M_f must be nonnegative")
        if self.m < 1:
            raise ValueError("Brownian dimension m must be >= 1")

    def sigma_norm(self, t):
        """Euclidean norm |sigma(t)|; the effective scalar volatility of X."""
        return float(np.linalg.norm(np.asarray(self.vol(t), dtype=float)))


@dataclass(frozen=True)
class YBound:
    M: float


@dataclass(frozen=True)
class TruncationRadius:
    M_z: float
    provenance: str = "user-supplied"  # or "auto-estimated"

    def __post_init__(self):
        if self.M_z <= 0:
            raise ValueError("M_z must be positive")


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    worst_ratio: float
    witness: tuple


@dataclass(frozen=True)
class AssumptionReport:
    checks: dict  # check name -> CheckResult
    cloud_description: str

    _GROUPS = {
        "HX": ("HX.coef_bound", "HX.b_lipschitz"),
        "HF": ("HF.growth", "HF.x_lipschitz", "HF.y_lipschitz", "HF.z_lipschitz",
               "HF.g_bound", "HF.g_lipschitz"),
        "HT": ("HT.time_holder",),
        "H1": ("H1.dg_bound", "H1.dg_lipschitz"),
        "H2": ("H2.d2g_bound", "H2.d2g_lipschitz", "H2.sigma_time_lipschitz"),
    }

    def passes(self, assumption: str) -> bool:
        keys = self._GROUPS[assumption]
        return all(self.checks[k].passed for k in keys if k in self.checks)


# ---------------------------------------------------------------------------
# obstacle building blocks

def clip_obstacle(x, lo=0.0, hi=0.5):
    """g(x) = clip(1 - x, lo, hi): bounded, 1-Lipschitz, kinked at the clips."""
    return np.clip(1.0 - np.asarray(x, dtype=float), lo, hi)


def soft_clip_obstacle(x, lo=0.0, hi=0.5, sharpness=20.0):
    """Smooth (log-sum-exp) version of clip_obstacle; C-infinity and 1-Lipschitz."""
    v = 1.0 - np.asarray(x, dtype=float)
    k = sharpness
    # (1/k)[softplus(k(v-lo)) - softplus(k(v-hi))] + lo  ->  clip(v, lo, hi) as k -> inf
    return lo + (np.logaddexp(0.0, k * (v - lo)) - np.logaddexp(0.0, k * (v - hi))) / k


# ---------------------------------------------------------------------------
# preset catalog

def build_preset(name: str, overrides: Optional[dict] = None) -> ProblemSpec:
    """Instantiate one of the shipped problem presets, optionally overriding fields.

    P1-pure-quadratic : driftless, f = (alpha/2)|z|^2, capped put-like obstacle.
    P2-mixed-quadratic: mean-reverting drift, f mixing y, sin(x)z and (1/2)z^2.
    P3-lipschitz      : as P2 but with globally Lipschitz f = -0.1y + 0.2z.
    """
    if name not in PRESET_NAMES:
        raise ValueError(f"unknown preset {name!r}; choose from {PRESET_NAMES}")
    overrides = dict(overrides or {})
    for key in overrides:
        if key not in _OVERRIDABLE:
            raise ValueError(f"cannot override unknown field {key!r}")

    smooth_g = bool(overrides.pop("smooth_g", False))
    g = soft_clip_obstacle if smooth_g else clip_obstacle

    base = dict(T=1.0, x0=1.0, m=1, L=1.0, M_g=0.5)
    base.update(overrides)
    m = int(base["m"])

    sigma_vec = np.full(m, 0.3 / math.sqrt(m))

    def vol(t, _s=sigma_vec):
        return _s

    if name == "P1-pure-quadratic":
        alpha = float(base.get("alpha", 1.0))

        def drift(t, x):
            return np.zeros_like(np.asarray(x, dtype=float))

        def generator(t, x, y, z, _a=alpha):
            z = np.asarray(z, dtype=float)
            return 0.5 * _a * np.sum(z * z, axis=-1)

        return ProblemSpec(
            name=name, drift=drift, vol=vol, generator=generator, obstacle=g,
            L=float(base["L"]), M_f=float(base.get("M_f", 0.0)),
            M_g=float(base["M_g"]), alpha=alpha, T=float(base["T"]),
            x0=float(base["x0"]), m=m, pure_quadratic=True,
        )

    def drift(t, x):
        return 0.5 * (1.0 - np.asarray(x, dtype=float))

    if name == "P2-mixed-quadratic":
        # alpha budget: the (1/2)z^2 core plus slack absorbing 0.2 sin(x) z via
        # 0.2|z| <= 0.1/beta + 0.1*beta*z^2; with beta = 1 the growth bound
        # |f| <= 0.2(1 + |y|) + (1.2/2)|z|^2 holds.
        alpha = float(base.get("alpha", 1.2))

        def generator(t, x, y, z):
            x = np.asarray(x, dtype=float)
            z = np.asarray(z, dtype=float)
            z1 = z[..., 0]
            return -0.1 * np.asarray(y, dtype=float) + 0.2 * np.sin(x) * z1 \
                + 0.5 * np.sum(z * z, axis=-1)

        M_f = float(base.get("M_f", 0.2))
    else:  # P3-lipschitz
        alpha = float(base.get("alpha", 1.0))

        def generator(t, x, y, z):
            z = np.asarray(z, dtype=float)
            return -0.1 * np.asarray(y, dtype=float) + 0.2 * z[..., 0]

        M_f = float(base.get("M_f", 0.2))

    return ProblemSpec(
        name=name, drift=drift, vol=vol, generator=generator, obstacle=g,
        L=float(base["L"]), M_f=M_f, M_g=float(base["M_g"]), alpha=alpha,
        T=float(base["T"]), x0=float(base["x0"]), m=m,
    )


# ---------------------------------------------------------------------------
# uniform Y bound and truncation

def y_bound(spec: ProblemSpec) -> YBound:
    """Conservative Gronwall bound M = e^{M_f T}(M_g + M_f T) for sup |Y|."""
    return YBound(M=math.exp(spec.M_f * spec.T) * (spec.M_g + spec.M_f * spec.T))


def smooth_truncation(z, n: float):
    """Radial truncation h_n: identity on |z| <= n, norm capped below n+1.

    Outside the ball the norm is remapped by rho(r) = n + 1 - exp(-(r - n)),
    which keeps h_n C^1, 1-Lipschitz, and |h_n(z)| <= n + 1.
    """
    if n <= 0:
        raise ValueError("truncation level n must be positive")
    z = np.asarray(z, dtype=float)
    scalar = z.ndim == 0
    zv = np.atleast_1d(z)
    r = np.sqrt(np.sum(zv * zv, axis=-1, keepdims=True))
    rho = n + 1.0 - np.exp(np.minimum(n - r, 0.0))  # only used where r > n
    scale = np.where(r > n, rho / np.maximum(r, 1e-300), 1.0)
    out = zv * scale
    return float(out[0]) if scalar else out.reshape(z.shape)


def truncate_generator(spec: ProblemSpec, radius: TruncationRadius) -> ProblemSpec:
    """Replace f by f(t, x, y, h_{M_z}(z)); the result is globally Lipschitz."""
    Mz = radius.M_z
    f = spec.generator

    def truncated(t, x, y, z, _f=f, _n=Mz):
        return _f(t, x, y, smooth_truncation(z, _n))

    induced = {
        "x": spec.L * (Mz + 2.0),
        "y": spec.L,
        "z": spec.L * (2.0 * Mz + 3.0),
    }
    return dataclasses.replace(
        spec, generator=truncated, pure_quadratic=False,
        truncation_radius=Mz, induced_lipschitz=induced,
    )


# ---------------------------------------------------------------------------
# sampled assumption validation

@dataclass(frozen=True)
class CloudConfig:
    n_points: int = 2048
    x_half_width: float = 3.0   # box around x0
    y_bound: float = 2.0
    z_bound: float = 3.0
    fd_step: float = 1e-5

    def __post_init__(self):
        if self.n_points < 1000:
            raise ValueError("cloud must contain at least 10^3 points")


_PASS_TOL = 1.0 + 1e-6
_TINY = 1e-300


def _worst(name, ratios, witnesses):
    ratios = np.asarray(ratios, dtype=float)
    k = int(np.argmax(ratios))
    return CheckResult(name=name, passed=bool(ratios[k] <= _PASS_TOL),
                       worst_ratio=float(ratios[k]), witness=tuple(witnesses[k]))


def validate_assumptions(spec: ProblemSpec, cloud: CloudConfig = CloudConfig()) -> AssumptionReport:
    """Check (HX), (HF), (HT), (H1), (H2) numerically on a quasi-random cloud.

    Each inequality is evaluated as the ratio observed-LHS / permitted-RHS; a
    check passes iff the worst ratio over the cloud is <= 1 + 1e-6.  Failures
    are report content, never exceptions.
    """
    n = cloud.n_points
    sob = qmc.Sobol(d=7, scramble=False, seed=0)
    u = sob.random(n)
    # skip the all-zeros first Sobol point to avoid degenerate pairs
    u = np.clip(u, 1e-9, 1.0 - 1e-9)

    t = u[:, 0] * spec.T
    s = u[:, 1] * t  # s <= t for the time-Hoelder pairs
    x = spec.x0 + (2.0 * u[:, 2] - 1.0) * cloud.x_half_width
    y = (2.0 * u[:, 3] - 1.0) * cloud.y_bound
    z = (2.0 * u[:, 4] - 1.0)[:, None] * cloud.z_bound * np.ones((1, spec.m))
    if spec.m > 1:
        z[:, 1:] *= (2.0 * u[:, 5:6] - 1.0)
    # partner points at a spread of separations, so kinks at any scale show up
    scales = np.logspace(-3, -0.5, 6)[np.arange(n) % 6]
    xp = x + scales * cloud.x_half_width
    yp = y + scales * cloud.y_bound
    zp = z + scales[:, None] * cloud.z_bound

    checks = {}

    def f(tt, xx, yy, zz):
        return np.asarray(spec.generator(tt, xx, yy, zz), dtype=float)

    # --- (HX)
    signorm = np.array([spec.sigma_norm(ti) for ti in t])
    b0 = np.array([abs(float(np.asarray(spec.drift(ti, np.zeros(1)))[0])) for ti in t])
    checks["HX.coef_bound"] = _worst(
        "HX.coef_bound", (b0 + signorm) / spec.L, list(zip(t)))
    db = np.abs(np.array([float(np.asarray(spec.drift(ti, np.array([xi]))
                                           - spec.drift(ti, np.array([xpi])))[0])
                          for ti, xi, xpi in zip(t, x, xp)]))
    checks["HX.b_lipschitz"] = _worst(
        "HX.b_lipschitz", db / (spec.L * np.abs(xp - x) + _TINY), list(zip(t, x, xp)))

    # --- (HF)
    znorm = np.linalg.norm(z, axis=-1)
    zpnorm = np.linalg.norm(zp, axis=-1)
    fv = np.array([f(ti, xi, yi, zi) for ti, xi, yi, zi in zip(t, x, y, z)])
    growth_rhs = spec.M_f * (1.0 + np.abs(y)) + 0.5 * spec.alpha * znorm ** 2
    checks["HF.growth"] = _worst(
        "HF.growth", np.abs(fv) / np.maximum(growth_rhs, _TINY), list(zip(t, x, y, znorm)))

    fx = np.array([f(ti, xpi, yi, zi) for ti, xpi, yi, zi in zip(t, xp, y, z)])
    checks["HF.x_lipschitz"] = _worst(
        "HF.x_lipschitz",
        np.abs(fv - fx) / (spec.L * (1.0 + znorm) * np.abs(xp - x) + _TINY),
        list(zip(t, x, xp)))

    fy = np.array([f(ti, xi, ypi, zi) for ti, xi, ypi, zi in zip(t, x, yp, z)])
    checks["HF.y_lipschitz"] = _worst(
        "HF.y_lipschitz", np.abs(fv - fy) / (spec.L * np.abs(yp - y) + _TINY),
        list(zip(t, y, yp)))

    fz = np.array([f(ti, xi, yi, zpi) for ti, xi, yi, zpi in zip(t, x, y, zp)])
    dz = np.linalg.norm(zp - z, axis=-1)
    checks["HF.z_lipschitz"] = _worst(
        "HF.z_lipschitz",
        np.abs(fv - fz) / (spec.L * (1.0 + znorm + zpnorm) * dz + _TINY),
        list(zip(t, znorm, zpnorm)))

    g = lambda v: np.asarray(spec.obstacle(np.asarray(v, dtype=float)), dtype=float)
    gv, gp = g(x), g(xp)
    checks["HF.g_bound"] = _worst(
        "HF.g_bound", np.abs(gv) / max(spec.M_g, _TINY), list(zip(x)))
    checks["HF.g_lipschitz"] = _worst(
        "HF.g_lipschitz", np.abs(gv - gp) / (spec.L * np.abs(xp - x) + _TINY),
        list(zip(x, xp)))

    # --- (HT)
    bs = np.array([float(np.asarray(spec.drift(si, np.array([xi])))[0]) for si, xi in zip(s, x)])
    bt = np.array([float(np.asarray(spec.drift(ti, np.array([xi])))[0]) for ti, xi in zip(t, x)])
    dsig = np.array([np.linalg.norm(np.asarray(spec.vol(ti), dtype=float)
                                    - np.asarray(spec.vol(si), dtype=float))
                     for ti, si in zip(t, s)])
    fs = np.array([f(si, xi, yi, zi) for si, xi, yi, zi in zip(s, x, y, z)])
    ht_lhs = np.abs(bt - bs) + dsig + np.abs(fv - fs)
    checks["HT.time_holder"] = _worst(
        "HT.time_holder", ht_lhs / (spec.L * np.sqrt(np.abs(t - s)) + _TINY),
        list(zip(s, t, x)))

    # --- (H1) / (H2): finite-difference derivatives of g
    h = cloud.fd_step
    dg = (g(x + h) - g(x - h)) / (2.0 * h)
    dgp = (g(xp + h) - g(xp - h)) / (2.0 * h)
    checks["H1.dg_bound"] = _worst(
        "H1.dg_bound", np.abs(dg) / spec.L, list(zip(x)))
    checks["H1.dg_lipschitz"] = _worst(
        "H1.dg_lipschitz", np.abs(dg - dgp) / (spec.L * np.abs(xp - x) + _TINY),
        list(zip(x, xp)))

    d2g = (g(x + h) - 2.0 * gv + g(x - h)) / h ** 2
    d2gp = (g(xp + h) - 2.0 * gp + g(xp - h)) / h ** 2
    checks["H2.d2g_bound"] = _worst(
        "H2.d2g_bound", np.abs(d2g) / spec.L, list(zip(x)))
    checks["H2.d2g_lipschitz"] = _worst(
        "H2.d2g_lipschitz", np.abs(d2g - d2gp) / (spec.L * np.abs(xp - x) + _TINY),
        list(zip(x, xp)))
    checks["H2.sigma_time_lipschitz"] = _worst(
        "H2.sigma_time_lipschitz", dsig / (spec.L * np.abs(t - s) + _TINY),
        list(zip(s, t)))

    desc = (f"{n} Sobol points; t in [0,{spec.T}], x in "
            f"[{spec.x0 - cloud.x_half_width},{spec.x0 + cloud.x_half_width}], "
            f"|y| <= {cloud.y_bound}, |z| <= {cloud.z_bound}")
    return AssumptionReport(checks=checks, cloud_description=desc)
