"""Skew flux-corrector construction and its discrete identities."""

import numpy as np
import pytest

from plhom.cell_grid import PeriodicGrid
from plhom.cell_solver import solve_cell
from plhom.flux_corrector import (
    build_flux_corrector,
    holder_E_in_xi,
    holder_exponent_flux,
    oscillation_flux,
    validate_flux_corrector,
)

from conftest import model_1d, model_diagonal_2d, model_layered_2d


def _corrector_set(model, xi, n):
    grid = PeriodicGrid(model.dim, n)
    return build_flux_corrector(model, solve_cell(model, xi, grid))


# ------------------------------------------------------- layered closed form


def test_layered_oscillation_is_pure_sine():
    # a = 2 + sin(2 pi y1), xi = e2, p = 2: the corrector vanishes and the
    # oscillating flux is exactly sin(2 pi y1) e2.
    model = model_layered_2d(2.0)
    grid = PeriodicGrid(2, 64)
    b = oscillation_flux(model, solve_cell(model, [0.0, 1.0], grid))
    y1 = grid.coords()[0]
    assert np.max(np.abs(b.data[1] - np.sin(2.0 * np.pi * y1))) <= 1e-12
    assert np.max(np.abs(b.data[0])) <= 1e-12


def test_layered_skew_potential_discrete_closed_form():
    # Single Fourier mode: the discrete Poisson solve and centered derivative
    # act as scalar multipliers, giving E_12 = -cos(2 pi y1) / (n sin(2 pi/n))
    # exactly.
    n = 64
    model = model_layered_2d(2.0)
    fcs = _corrector_set(model, [0.0, 1.0], n)
    y1 = fcs.grid.coords()[0]
    exact = -np.cos(2.0 * np.pi * y1) / (n * np.sin(2.0 * np.pi / n))
    assert np.max(np.abs(fcs.component(0, 1) - exact)) <= 1e-13


def test_layered_skew_potential_converges_to_continuum():
    model = model_layered_2d(2.0)
    defects = []
    for n in (64, 256):
        fcs = _corrector_set(model, [0.0, 1.0], n)
        y1 = fcs.grid.coords()[0]
        cont = -np.cos(2.0 * np.pi * y1) / (2.0 * np.pi)
        defects.append(np.max(np.abs(fcs.component(0, 1) - cont)))
    assert defects[0] <= 1e-3
    assert defects[1] <= 1e-4
    assert defects[1] < defects[0] / 8.0  # second order in 1/n


# ---------------------------------------------------------------- identities


@pytest.mark.parametrize(
    "model,xi",
    [
        (model_layered_2d(2.0), [0.0, 1.0]),
        (model_diagonal_2d(3.0), [1.0, 0.5]),
        (model_diagonal_2d(1.5), [1.0, 0.5]),
    ],
)
def test_reconstruction_identities(model, xi):
    fcs = _corrector_set(model, xi, 64)
    rep = validate_flux_corrector(fcs)
    assert rep.reconstruction_residual <= 1e-10
    assert rep.potential_divergence <= 1e-10
    assert rep.mean_defect <= 1e-13
    assert rep.antisymmetry_defect == 0.0


def test_one_dimensional_potential_vanishes():
    # Constant-per-parity flux: b is roundoff, E is identically zero.
    model = model_1d(3.0)
    fcs = _corrector_set(model, [1.0], 256)
    assert fcs.E.data.shape == (1, 1, 256)
    assert np.all(fcs.E.data == 0.0)
    rep = validate_flux_corrector(fcs)
    assert rep.reconstruction_residual <= 1e-10


# ----------------------------------------------------------- scaling in xi


def test_skew_potential_linear_at_p2():
    model = model_layered_2d(2.0)
    f1 = _corrector_set(model, [0.0, 1.0], 64)
    f2 = _corrector_set(model, [0.0, 2.5], 64)
    assert np.max(np.abs(f2.E.data - 2.5 * f1.E.data)) <= 1e-9


def test_skew_potential_degree_p_minus_1():
    p = 3.0
    model = model_diagonal_2d(p)
    f1 = _corrector_set(model, [0.8, 0.4], 64)
    f2 = _corrector_set(model, [1.6, 0.8], 64)
    scale = np.max(np.abs(f2.E.data))
    defect = np.max(np.abs(f2.E.data - 2.0 ** (p - 1.0) * f1.E.data))
    assert defect <= 1e-7 * max(scale, 1e-30)


# -------------------------------------------------------------- Holder in xi


def test_holder_exponent_values():
    assert holder_exponent_flux(2.0) == 1.0
    assert holder_exponent_flux(4.0) == 0.5
    assert holder_exponent_flux(1.5) == pytest.approx(0.5 / 1.5)


def test_holder_E_slope_linear_case():
    fit = holder_E_in_xi(
        model_layered_2d(2.0), PeriodicGrid(2, 32), separations=(1e-1, 3e-2, 1e-2)
    )
    assert fit.expected == 1.0
    assert fit.slope >= 0.95


def test_holder_E_rejects_1d():
    with pytest.raises(ValueError):
        holder_E_in_xi(model_1d(2.0), PeriodicGrid(1, 64))
