"""Flux correctors: antisymmetric potentials for the oscillating flux part.

Subtracting the effective flux from the corrected flux leaves the oscillation

    b(y) = A(y, P(y)) - A_hat,

a periodic, mean-zero, divergence-free vector field per direction.  Each
component admits a periodic potential f_i with laplacian f_i = b_i, and the
antisymmetrized gradient

    E_ji = d_j f_i - d_i f_j

recovers b through b_i = sum_j d_j E_ji.  The skew symmetry is what makes E
useful downstream: divergences of its columns can be moved onto test
functions without boundary terms.  In one dimension E vanishes identically
and b itself is zero up to quadrature error, since the corrected flux is a
per-parity constant.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cell_grid import (
    CellField,
    PeriodicGrid,
    _centered_diff,
    lp_norm,
    poisson_periodic,
    project_compatible,
)
from .cell_solver import Corrector, HolderFit, effective_flux, flux_field, solve_cell
from .flux_model import FluxModel
from .solvers import CellSolveConfig

__all__ = [
    "oscillation_flux",
    "build_flux_corrector",
    "validate_flux_corrector",
    "holder_E_in_xi",
    "FluxCorrectorSet",
    "FluxCorrectorReport",
    "holder_exponent_flux",
]


def oscillation_flux(model: FluxModel, corrector: Corrector) -> CellField:
    """Corrected flux minus its cell average; mean zero by construction."""
    A = flux_field(model, corrector)
    ahat = effective_flux(model, corrector)
    grid = corrector.grid
    return CellField(grid, A.data - ahat.reshape((grid.dim,) + (1,) * grid.dim))


@dataclass(frozen=True)
class FluxCorrectorSet:
    """Oscillating flux b, scalar potentials f, and the skew matrix field E.

    E is stored as a full rank-2 field with exact antisymmetry
    E[j, i] = -E[i, j]; component(j, i) reads an entry directly.  In one
    dimension E is the zero field.
    """

    xi: np.ndarray
    b: CellField
    f: CellField
    E: CellField

    @property
    def grid(self) -> PeriodicGrid:
        return self.b.grid

    def component(self, j: int, i: int) -> np.ndarray:
        return self.E.data[j, i]


def build_flux_corrector(model: FluxModel, corrector: Corrector) -> FluxCorrectorSet:
    """Solve the component Poisson problems and antisymmetrize.

    The Poisson solves drop the discrete kernel modes of the wide Laplacian;
    whatever part of b lives there is quantified by validate_flux_corrector,
    not silently resurrected.
    """
    grid = corrector.grid
    d = grid.dim
    n = grid.n
    b = oscillation_flux(model, corrector)
    f = np.empty((d,) + grid.shape)
    for i in range(d):
        # Projecting first keeps the solve well posed even when b is pure
        # roundoff, as in one dimension where the exact flux is constant.
        rhs = project_compatible(CellField(grid, b.data[i]))
        f[i] = poisson_periodic(rhs).data
    E = np.zeros((d, d) + grid.shape)
    for i in range(d):
        for j in range(i + 1, d):
            upper = _centered_diff(f[i], j, n) - _centered_diff(f[j], i, n)
            E[j, i] = upper
            E[i, j] = -upper
    return FluxCorrectorSet(
        xi=corrector.xi,
        b=b,
        f=CellField(grid, f),
        E=CellField(grid, E),
    )


@dataclass(frozen=True)
class FluxCorrectorReport:
    reconstruction_residual: float
    potential_divergence: float
    mean_defect: float
    antisymmetry_defect: float


def validate_flux_corrector(fcs: FluxCorrectorSet) -> FluxCorrectorReport:
    """Discrete identities the corrector set is supposed to satisfy.

    reconstruction_residual:
        max_i || sum_j d_j E[j, i] - b_i ||_2, the error in recovering the
        oscillating flux from the skew potential.  It collects the cell-solve
        residual and any kernel-mode content of b.
    potential_divergence:
        || sum_i d_i f_i ||_2; the potential vector is discrete-harmonic in
        its divergence, which the solver returns as zero.
    """
    grid = fcs.grid
    d = grid.dim
    n = grid.n
    r1 = 0.0
    for i in range(d):
        recon = np.zeros(grid.shape)
        for j in range(d):
            recon += _centered_diff(fcs.E.data[j, i], j, n)
        diff = CellField(grid, recon - fcs.b.data[i])
        r1 = max(r1, lp_norm(diff, 2.0))
    div_f = np.zeros(grid.shape)
    for i in range(d):
        div_f += _centered_diff(fcs.f.data[i], i, n)
    r2 = lp_norm(CellField(grid, div_f), 2.0)
    axes = tuple(range(1, 1 + d))
    mean_defect = float(np.max(np.abs(fcs.b.data.mean(axis=axes))))
    anti = float(np.max(np.abs(fcs.E.data + np.swapaxes(fcs.E.data, 0, 1))))
    return FluxCorrectorReport(
        reconstruction_residual=r1,
        potential_divergence=r2,
        mean_defect=mean_defect,
        antisymmetry_defect=anti,
    )


def holder_exponent_flux(p: float) -> float:
    """Worst-case Holder exponent of xi -> A(., P(xi)) on the unit sphere."""
    if p >= 2.0:
        return 2.0 / p
    return (p - 1.0) / (3.0 - p)


def holder_E_in_xi(
    model: FluxModel,
    grid: PeriodicGrid,
    cfg: CellSolveConfig | None = None,
    separations=(1e-1, 3e-2, 1e-2, 3e-3),
    base_angle: float = 0.3,
) -> HolderFit:
    """Measured Holder modulus of xi -> E along unit-sphere perturbations.

    E inherits the flux modulus through the linear Poisson construction, so
    the log-log slope should not fall below holder_exponent_flux(p).  Only
    meaningful in two dimensions; E vanishes identically in one.
    """
    if model.dim != 2:
        raise ValueError("the skew potential is only nontrivial in two dimensions")
    if cfg is None:
        cfg = CellSolveConfig()
    seps = tuple(float(s) for s in separations)
    if len(seps) < 2:
        raise ValueError("need at least two separations")
    base = np.array([np.cos(base_angle), np.sin(base_angle)])
    f0 = build_flux_corrector(model, solve_cell(model, base, grid, cfg))
    diffs = []
    for s in seps:
        dphi = 2.0 * np.arcsin(min(s / 2.0, 1.0))
        phi = base_angle + dphi
        xi2 = np.array([np.cos(phi), np.sin(phi)])
        f1 = build_flux_corrector(model, solve_cell(model, xi2, grid, cfg))
        diff = CellField(grid, f1.E.data - f0.E.data)
        diffs.append(lp_norm(diff, model.p))
    logs = np.log(np.asarray(seps))
    logd = np.log(np.maximum(np.asarray(diffs), 1e-300))
    slope = float(np.polyfit(logs, logd, 1)[0])
    return HolderFit(
        slope=slope,
        expected=holder_exponent_flux(model.p),
        separations=seps,
        differences=tuple(diffs),
    )
