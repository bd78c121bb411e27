"""Oscillating monotone flux laws of weighted p-Laplace type.

A model is A_mu(y, xi) = a(y) (mu^2 + |xi|^2)^((p-2)/2) xi with a 1-periodic
weight a bounded between positive constants, growth exponent p in (1, 20],
and regularization floor mu >= 0.  The matrix variant replaces a(y) xi by
a(y) @ xi with a symmetric positive definite matrix weight.

At mu = 0 the flux is positively homogeneous of degree p - 1 in xi; a
positive mu trades exact homogeneity for a nondegenerate Jacobian, which the
solvers exploit through a continuation schedule.  Weight bounds are fitted by
dense sampling at construction and double as the expected monotonicity
constants in the linear case p = 2.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

__all__ = [
    "WeightSpec",
    "ConstantWeight",
    "TrigWeight",
    "LayeredWeight",
    "DiagonalShiftWeight",
    "MatrixWeight",
    "FluxModel",
    "weight_from_dict",
    "eval_flux",
    "eval_energy_density",
    "flux_jacobian",
    "flux_given_weight",
    "jacobian_given_weight",
    "check_homogeneity",
    "check_monotonicity_growth",
    "check_lipschitz_in_y",
]

_SAMPLES_PER_AXIS = 1024


class WeightSpec:
    """Base class for 1-periodic weights on the unit cell.

    Subclasses implement ``_evaluate(y)`` for y of shape (dim,) + batch and
    set ``is_matrix``.  Construction samples the weight densely, checks
    periodicity and positivity, and records the fitted bounds
    ``mu0_weight <= a <= mu1_weight`` (eigenvalue bounds for matrix weights).
    """

    dim: int
    is_matrix: bool = False

    def eval(self, y: np.ndarray) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        if y.shape[0] != self.dim:
            raise ValueError(f"y must have leading axis {self.dim}, got shape {y.shape}")
        return self._evaluate(y)

    def _evaluate(self, y: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _sample_points(self) -> np.ndarray:
        n = _SAMPLES_PER_AXIS if self.dim == 1 else 512
        ax = np.arange(n) / n
        grids = np.meshgrid(*([ax] * self.dim), indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=0)

    def _validate(self) -> None:
        pts = self._sample_points()
        vals = self.eval(pts)
        if not np.all(np.isfinite(vals)):
            raise ValueError("weight evaluates to non-finite values")
        shifted = self.eval(pts + 1.0)
        scale = max(1.0, float(np.max(np.abs(vals))))
        if np.max(np.abs(shifted - vals)) > 1e-9 * scale:
            raise ValueError("weight is not 1-periodic in every axis")
        if self.is_matrix:
            lo, hi = _sym2x2_eig_bounds(vals)
        else:
            lo, hi = float(vals.min()), float(vals.max())
        if lo <= 0.0:
            raise ValueError(f"weight must be uniformly positive; sampled minimum {lo:.3e}")
        self.mu0_weight = lo
        self.mu1_weight = hi


def _sym2x2_eig_bounds(vals: np.ndarray) -> tuple[float, float]:
    # vals has shape (d, d, m); closed-form eigenvalues, d in {1, 2}.
    d = vals.shape[0]
    if d == 1:
        return float(vals.min()), float(vals.max())
    asym = np.max(np.abs(vals[0, 1] - vals[1, 0]))
    if asym > 1e-12 * max(1.0, float(np.max(np.abs(vals)))):
        raise ValueError("matrix weight must be symmetric")
    tr = vals[0, 0] + vals[1, 1]
    disc = np.sqrt((vals[0, 0] - vals[1, 1]) ** 2 + 4.0 * vals[0, 1] ** 2)
    return float(((tr - disc) / 2.0).min()), float(((tr + disc) / 2.0).max())


class ConstantWeight(WeightSpec):
    def __init__(self, dim: int, value: float):
        self.dim = dim
        self.value = float(value)
        self._validate()

    def _evaluate(self, y):
        return np.full(y.shape[1:], self.value)


class TrigWeight(WeightSpec):
    """base + sum of amplitude * sin(2 pi k . y + phase) over integer wavevectors."""

    def __init__(self, dim: int, base: float, terms):
        self.dim = dim
        self.base = float(base)
        self.terms = []
        for amp, kvec, phase in terms:
            kvec = tuple(int(k) for k in kvec)
            if len(kvec) != dim:
                raise ValueError(f"wavevector {kvec} does not match dim {dim}")
            self.terms.append((float(amp), kvec, float(phase)))
        self._validate()

    def _evaluate(self, y):
        out = np.full(y.shape[1:], self.base)
        for amp, kvec, phase in self.terms:
            arg = sum(k * y[a] for a, k in enumerate(kvec))
            out = out + amp * np.sin(2.0 * np.pi * arg + phase)
        return out


class LayeredWeight(WeightSpec):
    """Weight depending on the first coordinate only, a(y) = profile(y_1)."""

    def __init__(self, dim: int, profile: Callable[[np.ndarray], np.ndarray]):
        self.dim = dim
        self.profile = profile
        self._validate()

    def _evaluate(self, y):
        return np.asarray(self.profile(y[0]), dtype=float)


class DiagonalShiftWeight(WeightSpec):
    """Weight of the form a(y) = profile(y_1 + ... + y_d).

    All partial derivatives of a coincide, the structure under which the
    single-profile corrector ansatz applies in dimension d >= 2.
    """

    def __init__(self, dim: int, profile: Callable[[np.ndarray], np.ndarray]):
        self.dim = dim
        self.profile = profile
        self._validate()

    def _evaluate(self, y):
        return np.asarray(self.profile(np.sum(y, axis=0)), dtype=float)


class MatrixWeight(WeightSpec):
    """Symmetric positive definite matrix weight built from scalar entries."""

    is_matrix = True

    def __init__(self, dim: int, entries):
        self.dim = dim
        if len(entries) != dim or any(len(row) != dim for row in entries):
            raise ValueError(f"entries must form a {dim}x{dim} grid of scalar weights")
        self.entries = entries
        for i in range(dim):
            for j in range(dim):
                if entries[i][j].is_matrix:
                    raise ValueError("matrix weight entries must be scalar weights")
        self._validate()

    def _evaluate(self, y):
        batch = y.shape[1:]
        out = np.empty((self.dim, self.dim) + batch)
        for i in range(self.dim):
            for j in range(self.dim):
                out[i, j] = self.entries[i][j].eval(y)
        return out


def _sin_profile(base: float, amplitude: float, frequency: int):
    def profile(t):
        return base + amplitude * np.sin(2.0 * np.pi * frequency * t)

    return profile


def weight_from_dict(dim: int, spec: dict) -> WeightSpec:
    """Build a weight from a declarative description (config-file surface)."""
    kind = spec.get("kind")
    if kind == "constant":
        return ConstantWeight(dim, spec["value"])
    if kind == "trig":
        terms = [
            (t["amplitude"], t["wavevector"], t.get("phase", 0.0))
            for t in spec["terms"]
        ]
        return TrigWeight(dim, spec["base"], terms)
    if kind == "layered":
        return LayeredWeight(
            dim, _sin_profile(spec["base"], spec["amplitude"], spec.get("frequency", 1))
        )
    if kind == "diagonal_shift":
        return DiagonalShiftWeight(
            dim, _sin_profile(spec["base"], spec["amplitude"], spec.get("frequency", 1))
        )
    if kind == "matrix":
        entries = [[weight_from_dict(dim, e) for e in row] for row in spec["entries"]]
        return MatrixWeight(dim, entries)
    raise ValueError(f"unknown weight kind {kind!r}")


@dataclass(frozen=True)
class FluxModel:
    """Growth exponent, weight, and regularization floor of one flux law."""

    p: float
    weight: WeightSpec
    mu_reg: float = 0.0

    def __post_init__(self) -> None:
        if not 1.0 < self.p <= 20.0:
            raise ValueError(f"p must lie in (1, 20], got {self.p}")
        if self.mu_reg < 0.0:
            raise ValueError(f"mu_reg must be >= 0, got {self.mu_reg}")

    @property
    def dim(self) -> int:
        return self.weight.dim


def _sigma_sq(xi: np.ndarray, mu: float) -> np.ndarray:
    return mu * mu + np.sum(xi * xi, axis=0)


def flux_given_weight(a: np.ndarray, xi: np.ndarray, p: float, mu: float) -> np.ndarray:
    """A_mu with precomputed weight values; a scalar-shaped or (d,d)-shaped."""
    s2 = _sigma_sq(xi, mu)
    if a.ndim == xi.ndim + 1:
        axi = np.einsum("ij...,j...->i...", a, xi)
    else:
        axi = a * xi
    with np.errstate(divide="ignore", invalid="ignore"):
        fac = np.where(s2 > 0.0, s2 ** ((p - 2.0) / 2.0), 0.0)
    return fac * axi


def jacobian_given_weight(a: np.ndarray, xi: np.ndarray, p: float, mu: float) -> np.ndarray:
    """d A_mu / d xi with precomputed weight values; shape (d, d) + batch.

    For p > 2 the Jacobian extends continuously by zero at sigma = 0; for
    p < 2 it is singular there, which the caller must exclude via mu > 0.
    """
    d = xi.shape[0]
    s2 = _sigma_sq(xi, mu)
    if np.any(s2 == 0.0):
        if p < 2.0:
            raise ValueError(
                "flux Jacobian is singular at xi = 0 for p < 2 with mu = 0; "
                "use a positive regularization floor"
            )
        if p == 2.0:
            s2 = np.where(s2 == 0.0, 1.0, s2)  # factor becomes 1, term vanishes
    matrix_weight = a.ndim == xi.ndim + 1
    if matrix_weight:
        axi = np.einsum("ij...,j...->i...", a, xi)
    else:
        axi = a * xi
    with np.errstate(divide="ignore", invalid="ignore"):
        fac = np.where(s2 > 0.0, s2 ** ((p - 2.0) / 2.0), 0.0)
        fac2 = np.where(s2 > 0.0, (p - 2.0) * s2 ** ((p - 4.0) / 2.0), 0.0)
    eye = np.eye(d).reshape((d, d) + (1,) * (xi.ndim - 1))
    if matrix_weight:
        first = fac * a
    else:
        first = fac * a * eye
    second = fac2 * axi[:, None] * xi[None, :]
    return first + second


def eval_flux(model: FluxModel, y: np.ndarray, xi: np.ndarray) -> np.ndarray:
    """A_mu(y, xi) for batched points y and arguments xi, shape (dim,) + batch."""
    y = np.asarray(y, dtype=float)
    xi = np.asarray(xi, dtype=float)
    if xi.shape[0] != model.dim:
        raise ValueError(f"xi must have leading axis {model.dim}, got shape {xi.shape}")
    a = model.weight.eval(y)
    return flux_given_weight(a, xi, model.p, model.mu_reg)


def eval_energy_density(model: FluxModel, y: np.ndarray, xi: np.ndarray) -> np.ndarray:
    """W_mu(y, xi) = a(y) (mu^2 + |xi|^2)^(p/2) / p, the potential of A_mu."""
    if model.weight.is_matrix:
        raise ValueError("matrix weights admit no scalar potential; energy undefined")
    y = np.asarray(y, dtype=float)
    xi = np.asarray(xi, dtype=float)
    a = model.weight.eval(y)
    s2 = _sigma_sq(xi, model.mu_reg)
    return a * s2 ** (model.p / 2.0) / model.p


def flux_jacobian(model: FluxModel, y: np.ndarray, xi: np.ndarray) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    xi = np.asarray(xi, dtype=float)
    a = model.weight.eval(y)
    return jacobian_given_weight(a, xi, model.p, model.mu_reg)


# ------------------------------------------------------------------ samplers


@dataclass(frozen=True)
class HomogeneityReport:
    max_defect: float
    n_samples: int
    per_scale: dict
    flagged: bool  # True when mu_reg > 0 breaks exact homogeneity


def check_homogeneity(model: FluxModel, n_samples: int = 200, seed: int = 0) -> HomogeneityReport:
    """Sampled defect of A(y, t xi) = t^(p-1) A(y, xi) for t in {0.5, 2, 10}."""
    rng = np.random.default_rng(seed)
    d = model.dim
    y = rng.random((d, n_samples))
    xi = rng.standard_normal((d, n_samples))
    base = eval_flux(model, y, xi)
    per_scale = {}
    worst = 0.0
    for t in (0.5, 2.0, 10.0):
        lhs = eval_flux(model, y, t * xi)
        rhs = t ** (model.p - 1.0) * base
        scale = np.maximum(np.sqrt(np.sum(rhs**2, axis=0)), 1e-300)
        defect = float(np.max(np.sqrt(np.sum((lhs - rhs) ** 2, axis=0)) / scale))
        per_scale[t] = defect
        worst = max(worst, defect)
    return HomogeneityReport(worst, n_samples, per_scale, model.mu_reg > 0.0)


@dataclass(frozen=True)
class MonotonicityReport:
    mu0_fit: float
    mu1_fit: float
    violations: int
    n_pairs: int
    skipped: int


def check_monotonicity_growth(
    model: FluxModel, n_pairs: int = 10_000, seed: int = 0, pairs=None
) -> MonotonicityReport:
    """Sample the two-sided monotonicity/growth sandwich and fit its constants.

    Lower ratio: <A(y,xi) - A(y,xi'), xi - xi'> / ((|xi|+|xi'|)^(p-2) |xi - xi'|^2).
    Upper ratio: |A(y,xi) - A(y,xi')| / ((|xi|+|xi'|)^(p-2) |xi - xi'|).
    Coincident pairs are skipped.  In the linear case p = 2 both ratios equal
    a(y), so the fitted constants reproduce the weight bounds.  Explicit
    ``pairs = (y, xi, xi')`` bypass the random draw.
    """
    d = model.dim
    if pairs is not None:
        y, xi, xip = (np.asarray(v, dtype=float) for v in pairs)
        n_pairs = y.shape[1]
    else:
        rng = np.random.default_rng(seed)
        y = rng.random((d, n_pairs))
        xi = rng.standard_normal((d, n_pairs))
        xip = rng.standard_normal((d, n_pairs))
    diff = xi - xip
    dn = np.sqrt(np.sum(diff**2, axis=0))
    keep = dn > 0.0
    skipped = int(n_pairs - keep.sum())
    y, xi, xip, diff, dn = y[:, keep], xi[:, keep], xip[:, keep], diff[:, keep], dn[keep]
    if keep.sum() == 0:
        return MonotonicityReport(np.nan, np.nan, 0, 0, skipped)
    dA = eval_flux(model, y, xi) - eval_flux(model, y, xip)
    inner = np.sum(dA * diff, axis=0)
    sums = np.sqrt(np.sum(xi**2, axis=0)) + np.sqrt(np.sum(xip**2, axis=0))
    wfac = sums ** (model.p - 2.0)
    low = inner / (wfac * dn**2)
    up = np.sqrt(np.sum(dA**2, axis=0)) / (wfac * dn)
    return MonotonicityReport(
        mu0_fit=float(low.min()),
        mu1_fit=float(up.max()),
        violations=int(np.sum(inner <= 0.0)),
        n_pairs=int(keep.sum()),
        skipped=skipped,
    )


@dataclass(frozen=True)
class LipschitzReport:
    mu2_fit: float
    n_pairs: int


def check_lipschitz_in_y(model: FluxModel, n_pairs: int = 10_000, seed: int = 0) -> LipschitzReport:
    """Fit the spatial Lipschitz constant |A(y,xi)-A(y',xi)| <= mu2 |y-y'| |xi|^(p-1).

    Pairs mix global draws with local perturbations (the local ones drive the
    fitted constant toward the sharp value); distances use the torus metric.
    """
    rng = np.random.default_rng(seed)
    d = model.dim
    y = rng.random((d, n_pairs))
    local = rng.random(n_pairs) < 0.5
    step = np.where(local, 1e-3, 1.0)
    yp = np.where(local, y + step * rng.standard_normal((d, n_pairs)), rng.random((d, n_pairs)))
    delta = (y - yp + 0.5) % 1.0 - 0.5
    dist = np.sqrt(np.sum(delta**2, axis=0))
    xi = rng.standard_normal((d, n_pairs))
    xin = np.sqrt(np.sum(xi**2, axis=0))
    keep = (dist > 0.0) & (xin > 0.0)
    y, yp, xi = y[:, keep], yp[:, keep], xi[:, keep]
    dist, xin = dist[keep], xin[keep]
    dA = eval_flux(model, y, xi) - eval_flux(model, yp, xi)
    ratio = np.sqrt(np.sum(dA**2, axis=0)) / (dist * xin ** (model.p - 1.0))
    return LipschitzReport(mu2_fit=float(ratio.max()), n_pairs=int(keep.sum()))
