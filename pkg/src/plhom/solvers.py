"""Iterative machinery shared by the cell and domain solvers.

The periodic cell problem is solved as convex energy minimization: damped
Newton steps with an Armijo backtracking line search on the discrete energy,
inner conjugate-gradient solves preconditioned by a constant-coefficient
spectral inverse, and a continuation schedule that drives the regularization
floor mu down from a mild value to its final target.  A frozen-coefficient
Picard iteration serves as fallback and as the only path for matrix weights,
which admit no scalar potential.

All iterations are deterministic: fixed initial guesses, fixed sweep orders,
no randomized components.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .cell_grid import PeriodicGrid, _symbol_sq
from .flux_model import flux_given_weight, jacobian_given_weight

__all__ = ["CellSolveConfig", "ConvergenceError", "default_mu_schedule"]


class ConvergenceError(RuntimeError):
    """Raised when an iteration fails to meet its tolerance; carries the best iterate."""

    def __init__(self, message: str, best: np.ndarray | None = None, residual: float = np.nan):
        super().__init__(message)
        self.best = best
        self.residual = residual


@dataclass(frozen=True)
class CellSolveConfig:
    """Tolerances and strategy for the nonlinear cell solves.

    tol:
        Absolute target for the discrete L^2 norm of the cell residual,
        evaluated with the final-stage regularized flux.
    mu_schedule:
        Decreasing continuation values for the regularization floor; None
        derives the default from p (ending at 0 for p >= 2, at 1e-8 for
        p < 2, a single stage for p = 2).
    strategy:
        "newton" (energy minimization; scalar weights only) or "picard"
        (frozen coefficients; required and auto-selected for matrix weights).
    """

    tol: float = 1e-9
    max_iter: int = 200
    mu_schedule: tuple | None = None
    strategy: str = "newton"
    armijo_c1: float = 1e-4
    backtrack: float = 0.5
    max_backtracks: int = 40
    cg_rtol_coarse: float = 1e-2
    cg_max_iter: int = 4000
    picard_relax: float | None = None

    def __post_init__(self):
        if self.strategy not in ("newton", "picard"):
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if self.tol <= 0.0:
            raise ValueError("tol must be positive")


def default_mu_schedule(p: float) -> tuple:
    if p == 2.0:
        return (0.0,)
    if p > 2.0:
        return (1e-2, 1e-4, 1e-6, 1e-8, 0.0)
    return (1e-2, 1e-4, 1e-6, 1e-8)


# ----------------------------------------------------------- periodic calculus
# Array-level mirrors of cell_grid, used in solver hot loops.


def grad_arr(v: np.ndarray, n: int) -> np.ndarray:
    d = v.ndim
    comps = [
        (np.roll(v, -1, axis=a) - np.roll(v, 1, axis=a)) * (n / 2.0) for a in range(d)
    ]
    return np.stack(comps, axis=0)


def div_arr(F: np.ndarray, n: int) -> np.ndarray:
    d = F.shape[0]
    out = np.zeros(F.shape[1:])
    for a in range(d):
        out += (np.roll(F[a], -1, axis=a) - np.roll(F[a], 1, axis=a)) * (n / 2.0)
    return out


def l2_arr(v: np.ndarray, grid: PeriodicGrid) -> float:
    return float(np.sqrt(np.sum(v * v) * grid.cell_volume))


class SpectralInverse:
    """Apply (c * laplacian)^(-1) on the compatible subspace; CG preconditioner."""

    def __init__(self, grid: PeriodicGrid, coeff: float):
        self.lam = _symbol_sq(grid)
        self.mask = self.lam > 0.0
        self.coeff = coeff

    def __call__(self, w: np.ndarray) -> np.ndarray:
        what = np.fft.fftn(w)
        out = np.zeros_like(what)
        out[self.mask] = what[self.mask] / (self.coeff * self.lam[self.mask])
        return np.fft.ifftn(out).real


def pcg(apply_A, b: np.ndarray, prec, rtol: float, max_iter: int) -> tuple[np.ndarray, int]:
    """Preconditioned conjugate gradients from the zero initial guess.

    apply_A must be symmetric positive definite on the subspace containing b;
    starting from zero keeps every iterate in the Krylov space of b, so
    kernel components are never populated.
    """
    x = np.zeros_like(b)
    r = b.copy()
    b_norm = np.sqrt(np.sum(b * b))
    if b_norm == 0.0:
        return x, 0
    z = prec(r)
    p = z.copy()
    rz = np.sum(r * z)
    for it in range(1, max_iter + 1):
        Ap = apply_A(p)
        pAp = np.sum(p * Ap)
        if pAp <= 0.0 or not np.isfinite(pAp):
            raise ConvergenceError(
                "conjugate gradients broke down (operator not positive definite; "
                "a vanishing Jacobian at mu = 0 needs a positive mu floor)",
                best=x,
            )
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        if np.sqrt(np.sum(r * r)) <= rtol * b_norm:
            return x, it
        z = prec(r)
        rz_new = np.sum(r * z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    return x, max_iter


def _energy(a_vals: np.ndarray, P: np.ndarray, p: float, mu: float, grid: PeriodicGrid) -> float:
    s2 = mu * mu + np.sum(P * P, axis=0)
    return float(np.sum(a_vals * s2 ** (p / 2.0)) / p * grid.cell_volume)


@dataclass
class StageResult:
    N: np.ndarray
    residual: float
    iterations: int
    energy_trace: list = field(default_factory=list)
    converged: bool = True


def _cell_residual(a_vals, xi, N, grid, p, mu):
    P = xi.reshape((grid.dim,) + (1,) * grid.dim) + grad_arr(N, grid.n)
    A = flux_given_weight(a_vals, P, p, mu)
    return div_arr(A, grid.n), P, A


def _backtrack_step(a_vals, xi, grid, p, mu, cfg, N, res, energy, delta, slope, s0=1.0):
    """Hybrid backtracking line search along a descent direction.

    Uses the Armijo energy test while the predicted decrease is measurable.
    Near convergence the decrement shrinks like the residual squared and
    drops below machine precision long before tight residual targets are
    met, so the merit then switches to plain residual-norm decrease.  When
    no energy exists (matrix weights) the residual merit is used throughout.
    Returns (N, r, P, res, energy, accepted).
    """
    n = grid.n
    have_energy = energy is not None
    meas = 64.0 * np.finfo(float).eps * (abs(energy) + 1.0) if have_energy else 0.0
    use_res = (not have_energy) or (cfg.armijo_c1 * slope <= meas)
    s = s0
    for _ in range(cfg.max_backtracks):
        N_try = N + s * delta
        N_try -= N_try.mean()
        if use_res:
            r_try, P_try, _ = _cell_residual(a_vals, xi, N_try, grid, p, mu)
            res_try = l2_arr(r_try, grid)
            if res_try < res:
                e_try = _energy(a_vals, P_try, p, mu, grid) if have_energy else None
                return N_try, r_try, P_try, res_try, e_try, True
        else:
            P_try = xi.reshape((grid.dim,) + (1,) * grid.dim) + grad_arr(N_try, n)
            e_try = _energy(a_vals, P_try, p, mu, grid)
            if e_try <= energy - cfg.armijo_c1 * s * slope:
                r_try, _, _ = _cell_residual(a_vals, xi, N_try, grid, p, mu)
                return N_try, r_try, P_try, l2_arr(r_try, grid), e_try, True
        s *= cfg.backtrack
    return N, None, None, res, energy, False


def newton_stage(
    a_vals: np.ndarray,
    xi: np.ndarray,
    grid: PeriodicGrid,
    p: float,
    mu: float,
    cfg: CellSolveConfig,
    N0: np.ndarray,
    tol: float,
) -> StageResult:
    """Damped Newton on the cell energy at fixed mu; scalar weights only."""
    n = grid.n
    N = N0.copy()
    r, P, _ = _cell_residual(a_vals, xi, N, grid, p, mu)
    res = l2_arr(r, grid)
    energy = _energy(a_vals, P, p, mu, grid)
    trace = [energy]
    for it in range(1, cfg.max_iter + 1):
        if res <= tol:
            return StageResult(N, res, it - 1, trace)
        M = jacobian_given_weight(a_vals, P, p, mu)
        # Scale the preconditioner by the current mean isotropic stiffness.
        c_bar = max(float(np.mean(np.trace(M, axis1=0, axis2=1))) / grid.dim, 1e-300)
        prec = SpectralInverse(grid, c_bar)

        def apply_J(v):
            g = grad_arr(v, n)
            return -div_arr(np.einsum("ab...,b...->a...", M, g), n)

        rtol = min(cfg.cg_rtol_coarse, max(0.1 * tol / max(res, 1e-300), 1e-13))
        delta, _ = pcg(apply_J, r, prec, rtol, cfg.cg_max_iter)
        slope = float(np.sum(r * delta) * grid.cell_volume)
        if slope <= 0.0:
            raise ConvergenceError(
                "Newton direction is not a descent direction", best=N, residual=res
            )
        N, r, P, res, energy, accepted = _backtrack_step(
            a_vals, xi, grid, p, mu, cfg, N, res, energy, delta, slope
        )
        if not accepted:
            # Stalled line search: the iterate is as good as this stage gets.
            return StageResult(N, res, it, trace, converged=res <= tol)
        trace.append(energy)
    return StageResult(N, res, cfg.max_iter, trace, converged=res <= tol)


def picard_stage(
    a_vals: np.ndarray,
    xi: np.ndarray,
    grid: PeriodicGrid,
    p: float,
    mu: float,
    cfg: CellSolveConfig,
    N0: np.ndarray,
    tol: float,
) -> StageResult:
    """Frozen-coefficient iteration; handles scalar and matrix weights.

    The update solves the lagged-diffusivity SPD system for an increment with
    the nonlinear residual as right hand side, which makes the step a descent
    direction whenever a scalar potential exists.  Matrix weights have none;
    there steps are accepted on residual-norm decrease alone.
    """
    n = grid.n
    d = grid.dim
    N = N0.copy()
    matrix_weight = a_vals.ndim == d + 2
    if matrix_weight:
        c_iso = np.trace(a_vals, axis1=0, axis2=1) / d
    else:
        c_iso = a_vals
    s0 = cfg.picard_relax if cfg.picard_relax is not None else 1.0
    r, P, _ = _cell_residual(a_vals, xi, N, grid, p, mu)
    res = l2_arr(r, grid)
    energy = None if matrix_weight else _energy(a_vals, P, p, mu, grid)
    for it in range(1, cfg.max_iter + 1):
        if res <= tol:
            return StageResult(N, res, it - 1)
        s2 = mu * mu + np.sum(P * P, axis=0)
        fac = np.where(s2 > 0.0, s2 ** ((p - 2.0) / 2.0), 0.0)
        if matrix_weight:
            K = a_vals * fac
        else:
            K = (a_vals * fac)[None, None] * np.eye(d).reshape((d, d) + (1,) * d)

        def apply_L(v):
            g = grad_arr(v, n)
            return -div_arr(np.einsum("ab...,b...->a...", K, g), n)

        prec = SpectralInverse(grid, max(float(np.mean(c_iso * fac)), 1e-300))
        rtol = min(cfg.cg_rtol_coarse, max(0.1 * tol / max(res, 1e-300), 1e-13))
        delta, _ = pcg(apply_L, r, prec, rtol, cfg.cg_max_iter)
        slope = float(np.sum(r * delta) * grid.cell_volume)
        if slope <= 0.0 and not matrix_weight:
            return StageResult(N, res, it, converged=res <= tol)
        N, r, P, res, energy, accepted = _backtrack_step(
            a_vals, xi, grid, p, mu, cfg, N, res, energy, delta, slope, s0=s0
        )
        if not accepted:
            return StageResult(N, res, it, converged=res <= tol)
    return StageResult(N, res, cfg.max_iter, converged=res <= tol)


def solve_cell_arrays(
    a_vals: np.ndarray,
    xi: np.ndarray,
    grid: PeriodicGrid,
    p: float,
    cfg: CellSolveConfig,
    N0: np.ndarray | None = None,
) -> tuple[np.ndarray, float, float, int, dict]:
    """Continuation-driven cell solve on raw arrays.

    Returns (N, residual, mu_final, total_iterations, info).  Intermediate
    continuation stages may stop early; only the final stage must meet tol.
    N0 warm starts the first continuation stage.
    """
    matrix_weight = a_vals.ndim == grid.dim + 2
    strategy = "picard" if matrix_weight else cfg.strategy
    schedule = cfg.mu_schedule if cfg.mu_schedule is not None else default_mu_schedule(p)
    if len(schedule) == 0:
        raise ValueError("mu_schedule must not be empty")
    if any(b > a for a, b in zip(schedule, schedule[1:])):
        raise ValueError("mu_schedule must be non-increasing")
    if N0 is None:
        N = np.zeros(grid.shape)
    else:
        N0 = np.asarray(N0, dtype=float)
        if N0.shape != grid.shape:
            raise ValueError(f"warm start shape {N0.shape} != grid shape {grid.shape}")
        N = N0 - np.mean(N0)
    stage = picard_stage if strategy == "picard" else newton_stage
    total = 0
    traces = []
    for k, mu in enumerate(schedule):
        final = k == len(schedule) - 1
        stage_tol = cfg.tol if final else max(cfg.tol, 1e-3 * l2_arr_scale(a_vals, xi, p, mu))
        result = stage(a_vals, xi, grid, p, mu, cfg, N, stage_tol)
        N = result.N
        total += result.iterations
        traces.append(result.energy_trace if hasattr(result, "energy_trace") else [])
        if final and not result.converged:
            raise ConvergenceError(
                f"cell solve did not reach tol={cfg.tol:.1e} within "
                f"{cfg.max_iter} iterations (residual {result.residual:.3e})",
                best=N,
                residual=result.residual,
            )
    info = {"strategy": strategy, "mu_schedule": tuple(schedule), "energy_traces": traces}
    return N, result.residual, schedule[-1], total, info


def l2_arr_scale(a_vals: np.ndarray, xi: np.ndarray, p: float, mu: float) -> float:
    # Characteristic flux magnitude, used to set loose intermediate-stage targets.
    amax = float(np.max(a_vals))
    s = float(np.sqrt(mu * mu + np.sum(xi * xi)))
    return amax * max(s, 1e-300) ** (p - 1.0)
