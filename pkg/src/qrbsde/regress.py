"""Cross-sectional least squares for conditional expectations E[. | X_{t_i}].

Two basis families: standardized global polynomials for smooth problems and
piecewise-constant cell indicators as a robust fallback.  Fitting goes
through an orthogonal decomposition (SVD-based lstsq, ridge by row
augmentation) and every fit carries its condition number and in-sample RMSE.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np


@dataclass(frozen=True)
class BasisSpec:
    kind: str = "polynomial"          # "polynomial" | "piecewise-constant"
    degree: int = 6                   # polynomial degree
    cells: int = 50                   # piecewise cell count
    domain: Optional[tuple] = None    # (x_lo, x_hi) for piecewise cells
    ridge: float = 1e-8

    def __post_init__(self):
        if self.kind not in ("polynomial", "piecewise-constant"):
            raise ValueError(f"unknown basis kind {self.kind!r}")
        if self.kind == "polynomial" and not (0 <= self.degree <= 12):
            raise ValueError("polynomial degree must be in 0..12")
        if self.kind == "piecewise-constant" and not (1 <= self.cells <= 10 ** 4):
            raise ValueError("cell count must be in 1..10^4")
        if self.domain is not None and self.domain[0] >= self.domain[1]:
            raise ValueError("domain requires x_lo < x_hi")
        if self.ridge < 0:
            raise ValueError("ridge parameter must be nonnegative")

    @property
    def dimension(self) -> int:
        return self.degree + 1 if self.kind == "polynomial" else self.cells


class DesignEvaluator:
    """Feature map x -> phi(x) in R^d, frozen to the fitting sample's scaling."""

    def __init__(self, spec: BasisSpec, xs: np.ndarray):
        xs = np.asarray(xs, dtype=float)
        if xs.size == 0:
            raise ValueError("empty sample")
        self.spec = spec
        if spec.kind == "polynomial":
            self.mean = float(np.mean(xs))
            self.std = float(np.std(xs))
            if self.std == 0.0 and spec.degree >= 1:
                raise ValueError("degenerate (zero-variance) sample with degree >= 1")
            if self.std == 0.0:
                self.std = 1.0
            # an explicit domain localizes the polynomial: inputs are clipped
            # to the box before the monomials, so the fit extrapolates as a
            # constant instead of oscillating outside it
            if spec.domain is not None:
                self.lo, self.hi = spec.domain
            else:
                self.lo, self.hi = -np.inf, np.inf
        else:
            lo, hi = spec.domain if spec.domain is not None \
                else (float(np.min(xs)), float(np.max(xs)))
            if lo == hi:
                hi = lo + 1.0
            self.lo, self.hi = lo, hi

    @property
    def dimension(self) -> int:
        return self.spec.dimension

    def __call__(self, x) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if self.spec.kind == "polynomial":
            u = (np.clip(x, self.lo, self.hi) - self.mean) / self.std
            return np.vander(u, self.spec.degree + 1, increasing=True)
        # piecewise-constant one-hot; overflow clamped to the edge cells
        c = self.spec.cells
        j = np.floor((x - self.lo) / (self.hi - self.lo) * c).astype(int)
        j = np.clip(j, 0, c - 1)
        out = np.zeros((x.size, c))
        out[np.arange(x.size), j] = 1.0
        return out


@dataclass(frozen=True)
class RegressionFit:
    evaluator: DesignEvaluator
    coef: np.ndarray
    cond: float
    rmse: float
    clamp: Optional[tuple] = None


def build_basis(spec: BasisSpec, xs) -> DesignEvaluator:
    return DesignEvaluator(spec, np.asarray(xs, dtype=float))


def fit_least_squares(phi: DesignEvaluator, xs, ys, ridge: float = 0.0,
                      clamp: Optional[tuple] = None) -> RegressionFit:
    """Ridge-regularized least squares of ys on phi(xs)."""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if xs.shape[0] != ys.shape[0]:
        raise ValueError("xs and ys must have matching length")
    A = phi(xs)
    d = A.shape[1]
    if xs.shape[0] < d:
        raise ValueError("need at least as many samples as basis functions")
    if ridge > 0.0:
        A_aug = np.vstack([A, np.sqrt(ridge) * np.eye(d)])
        y_aug = np.concatenate([ys, np.zeros(d)])
    else:
        A_aug, y_aug = A, ys
    coef, _, rank, sv = np.linalg.lstsq(A_aug, y_aug, rcond=None)
    if rank < d:
        raise np.linalg.LinAlgError(
            "rank-deficient design matrix; supply a positive ridge parameter")
    cond = float(sv[0] / sv[-1]) if sv[-1] > 0 else np.inf
    resid = ys - A @ coef
    rmse = float(np.sqrt(np.mean(resid ** 2)))
    return RegressionFit(evaluator=phi, coef=coef, cond=cond, rmse=rmse, clamp=clamp)


def evaluate_fit(fit: RegressionFit, x, clamp: Optional[tuple] = None):
    """phi(x) . coef, optionally clipped to [lo, hi]."""
    x = np.asarray(x, dtype=float)
    scalar = x.ndim == 0
    v = fit.evaluator(x) @ fit.coef
    clamp = clamp if clamp is not None else fit.clamp
    if clamp is not None:
        v = np.clip(v, clamp[0], clamp[1])
    return float(v[0]) if scalar else v
