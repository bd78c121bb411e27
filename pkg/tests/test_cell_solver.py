"""Cell-problem solves, effective fluxes, and corrector diagnostics."""

import numpy as np
import pytest

from plhom.cell_grid import PeriodicGrid
from plhom.cell_solver import (
    ConvergenceError,
    corrector_bounds_check,
    effective_flux,
    effective_flux_1d_oracle,
    flux_field,
    holder_in_xi,
    linearity_check_p2,
    solve_cell,
)
from plhom.solvers import CellSolveConfig

from conftest import (
    model_1d,
    model_const,
    model_diagonal_2d,
    model_layered_2d,
    model_matrix_2d,
)

# p-harmonic means of 2 + sin(2 pi y), frozen from the closed form evaluated
# at quadrature resolutions 1e4 to 1.6e5 (agreement to the last digit).
AHAT_1D = {1.5: 1.6118548977353129, 2.0: 1.7320508075688772, 3.0: 1.7981024073469529}


# --------------------------------------------------------------- closed forms


@pytest.mark.parametrize("p", [1.5, 2.0, 3.0])
def test_oracle_matches_frozen_values(p):
    assert effective_flux_1d_oracle(model_1d(p)) == pytest.approx(AHAT_1D[p], abs=1e-12)


def test_oracle_p2_is_harmonic_mean_sqrt3():
    assert effective_flux_1d_oracle(model_1d(2.0)) == pytest.approx(np.sqrt(3.0), abs=1e-13)


def test_oracle_rejects_2d():
    with pytest.raises(ValueError):
        effective_flux_1d_oracle(model_layered_2d(2.0))


# ----------------------------------------------------------- trivial problems


@pytest.mark.parametrize("p", [1.5, 2.0, 3.0])
def test_constant_weight_corrector_vanishes(p):
    grid = PeriodicGrid(2, 32)
    model = model_const(p, value=1.7, dim=2)
    cor = solve_cell(model, [0.6, -0.8], grid)
    assert np.max(np.abs(cor.N.data)) <= 1e-12
    assert cor.residual <= 1e-12
    ahat = effective_flux(model, cor)
    expected = 1.7 * np.array([0.6, -0.8])  # |xi| = 1
    assert np.allclose(ahat, expected, atol=1e-12)


def test_zero_direction_short_circuits():
    grid = PeriodicGrid(2, 32)
    model = model_layered_2d(3.0)
    cor = solve_cell(model, [0.0, 0.0], grid)
    assert cor.iterations == 0
    assert np.all(cor.P.data == 0.0)
    assert np.allclose(effective_flux(model, cor), 0.0)


def test_layered_2d_transverse_direction_needs_no_corrector():
    # a depends on y1 only, so the flux for xi = e2 is already divergence free.
    grid = PeriodicGrid(2, 64)
    model = model_layered_2d(2.0)
    cor = solve_cell(model, [0.0, 1.0], grid)
    assert np.max(np.abs(cor.N.data)) <= 1e-9
    ahat = effective_flux(model, cor)
    assert ahat[1] == pytest.approx(2.0, abs=1e-9)  # arithmetic mean of the weight
    assert ahat[0] == pytest.approx(0.0, abs=1e-9)


# ----------------------------------------------------- solver vs. closed form


@pytest.mark.parametrize("p", [1.5, 2.0, 3.0])
def test_1d_effective_coefficient_converges_to_oracle(p):
    grid = PeriodicGrid(1, 512)
    model = model_1d(p)
    cor = solve_cell(model, [1.0], grid)
    assert cor.residual <= 1e-9
    ahat = effective_flux(model, cor)[0]
    assert ahat == pytest.approx(AHAT_1D[p], abs=1e-4)


@pytest.mark.parametrize("p", [1.5, 3.0])
def test_1d_flux_is_pointwise_constant(p):
    # The centered scheme decouples into two parity classes, each enforcing a
    # constant flux equal to a rectangle-rule mean of the smooth weight, so
    # the flux is pointwise the closed-form value up to solver tolerance.
    grid = PeriodicGrid(1, 512)
    model = model_1d(p)
    cor = solve_cell(model, [1.0], grid)
    A = flux_field(model, cor).data[0]
    assert np.max(np.abs(A - AHAT_1D[p])) <= 1e-6


def test_1d_effective_coefficient_spectrally_exact():
    # Rectangle-rule means of smooth periodic integrands beat every power of
    # h, so even coarse grids hit the closed form to near machine precision.
    model = model_1d(3.0)
    for n in (64, 512):
        cor = solve_cell(model, [1.0], PeriodicGrid(1, n))
        assert abs(effective_flux(model, cor)[0] - AHAT_1D[3.0]) <= 1e-12


def test_layered_2d_axis_direction_matches_1d_coefficient():
    # For xi = e1 the layered cell problem reduces to the 1d one.
    grid = PeriodicGrid(2, 256)
    model = model_layered_2d(2.0)
    cor = solve_cell(model, [1.0, 0.0], grid)
    ahat = effective_flux(model, cor)
    assert ahat[0] == pytest.approx(np.sqrt(3.0), abs=1e-4)
    assert abs(ahat[1]) <= 1e-8


# ------------------------------------------------------------- homogeneity


@pytest.mark.parametrize("p", [1.5, 3.0])
def test_corrector_one_homogeneity(p):
    grid = PeriodicGrid(2, 64)
    model = model_layered_2d(p)
    xi = np.array([0.8, 0.6])
    c1 = solve_cell(model, xi, grid)
    c2 = solve_cell(model, 2.0 * xi, grid)
    scale = np.sqrt(np.mean(c2.N.data**2))
    defect = np.sqrt(np.mean((c2.N.data - 2.0 * c1.N.data) ** 2))
    assert defect <= 1e-8 * max(scale, 1e-30)


def test_effective_flux_homogeneity_degree_p_minus_1():
    p = 3.0
    grid = PeriodicGrid(2, 64)
    model = model_diagonal_2d(p)
    xi = np.array([1.0, 0.5])
    a1 = effective_flux(model, solve_cell(model, xi, grid))
    a3 = effective_flux(model, solve_cell(model, 3.0 * xi, grid))
    assert np.allclose(a3, 3.0 ** (p - 1.0) * a1, rtol=1e-7)


# ------------------------------------------------------------------ solvers


def test_newton_and_picard_agree():
    grid = PeriodicGrid(2, 64)
    model = model_layered_2d(3.0)
    xi = np.array([1.0, 0.7])
    cn = solve_cell(model, xi, grid, CellSolveConfig(strategy="newton"))
    cp = solve_cell(model, xi, grid, CellSolveConfig(strategy="picard"))
    assert cn.residual <= 1e-9 and cp.residual <= 1e-9
    assert np.max(np.abs(cn.N.data - cp.N.data)) <= 1e-6


def test_energy_decreases_within_stages():
    grid = PeriodicGrid(2, 64)
    model = model_diagonal_2d(3.0)
    cor = solve_cell(model, [1.0, 1.0], grid)
    for trace in cor.info["energy_traces"]:
        diffs = np.diff(np.asarray(trace))
        assert np.all(diffs <= 1e-13)


def test_matrix_weight_routes_to_picard():
    grid = PeriodicGrid(2, 32)
    model = model_matrix_2d(2.0)
    cor = solve_cell(model, [1.0, 0.0], grid, CellSolveConfig(strategy="newton"))
    assert cor.info["strategy"] == "picard"
    assert cor.residual <= 1e-9
    ahat = effective_flux(model, cor)
    assert np.all(np.isfinite(ahat))
    assert float(ahat @ np.array([1.0, 0.0])) > 0.0


def test_nonconvergence_raises_with_best_iterate():
    grid = PeriodicGrid(2, 32)
    model = model_layered_2d(3.0)
    cfg = CellSolveConfig(tol=1e-14, max_iter=1, cg_max_iter=3)
    with pytest.raises(ConvergenceError) as exc:
        solve_cell(model, [1.0, 0.3], grid, cfg)
    assert isinstance(exc.value.best, np.ndarray)
    assert np.isfinite(exc.value.residual)


def test_bad_inputs_rejected():
    grid = PeriodicGrid(2, 32)
    model = model_layered_2d(2.0)
    with pytest.raises(ValueError):
        solve_cell(model, [1.0], grid)  # wrong length
    with pytest.raises(ValueError):
        solve_cell(model, [np.nan, 0.0], grid)
    with pytest.raises(ValueError):
        solve_cell(model_1d(2.0), [1.0], grid)  # dim mismatch
    with pytest.raises(ValueError):
        CellSolveConfig(strategy="gradient-descent")
    with pytest.raises(ValueError):
        solve_cell(model, [1.0, 0.0], grid, CellSolveConfig(mu_schedule=(1e-8, 1e-4)))


# ---------------------------------------------------------------- diagnostics


def test_bounds_report_scale_invariant():
    grid = PeriodicGrid(2, 64)
    model = model_layered_2d(3.0)
    r1 = corrector_bounds_check(model, solve_cell(model, [1.0, 0.5], grid))
    r3 = corrector_bounds_check(model, solve_cell(model, [3.0, 1.5], grid))
    assert r1.ratio_grad == pytest.approx(r3.ratio_grad, rel=1e-6)
    assert r1.ratio_p == pytest.approx(r3.ratio_p, rel=1e-6)
    assert r1.ratio_p >= 1.0 - 1e-9  # mean of P is xi, so its L^p norm dominates |xi|


def test_holder_slope_linear_case():
    grid = PeriodicGrid(2, 32)
    fit = holder_in_xi(model_layered_2d(2.0), grid, separations=(1e-1, 3e-2, 1e-2))
    assert fit.expected == 1.0
    assert fit.slope >= 0.95


def test_holder_slope_1d_degenerates_to_linear():
    grid = PeriodicGrid(1, 256)
    fit = holder_in_xi(model_1d(3.0), grid, separations=(1e-1, 1e-2, 1e-3))
    assert fit.slope == pytest.approx(1.0, abs=0.05)


def test_linearity_p2_and_rejection():
    grid = PeriodicGrid(2, 64)
    assert linearity_check_p2(model_layered_2d(2.0), grid) <= 1e-6
    with pytest.raises(ValueError):
        linearity_check_p2(model_layered_2d(3.0), grid)
