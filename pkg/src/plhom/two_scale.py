"""Two-scale first-order approximation of oscillating gradients.

The corrected gradient of the homogenized solution,

    V_i(x) = d_i u0(x) + D_i^h ( eps N(x/eps, phi_eps(x)) ),

uses a difference quotient of step h = eps^tau instead of a true derivative,
and feeds the corrector a smoothed, cut-off version of grad u0:

    phi_eps = S_eps( psi * grad u0 ),

with S_eps a compactly supported mollifier and psi an interior cutoff.  The
smoothing keeps the corrector argument slowly varying, the cutoff removes
the boundary layer where correctors are not helpful, and the quotient step
trades corrector regularity in xi against the oscillation scale; admissible
tau ranges depend on p through the Holder exponents of the corrector map.

Correctors at arbitrary xi come from a direction table: the cell problem is
solved on the unit sphere (a sign pair in one dimension, a fan of angles in
two) and extended by one-homogeneity, with exact linear superposition
replacing interpolation at p = 2.  Mesh nodes must land on cell nodes, which
pins n_cell to a multiple of the cells-per-period count.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace

import numpy as np
from scipy.signal import fftconvolve

from .cell_grid import PeriodicGrid
from .cell_solver import effective_flux, solve_cell
from .domain_solver import DomainMesh, Solution, _gradient, domain_lp_norm
from .flux_corrector import build_flux_corrector, holder_exponent_flux
from .flux_model import FluxModel
from .solvers import CellSolveConfig

__all__ = [
    "mollify",
    "cutoff",
    "colayer_mask",
    "diff_quotient",
    "CorrectorTable",
    "build_corrector_table",
    "TableLaw",
    "ApproxField",
    "build_first_order_gradient",
    "TauRange",
    "admissible_tau",
    "error_gradient_norm",
    "error_solution_norm",
    "holder_modulus",
    "SmallGradientReport",
    "small_gradient_fraction",
    "SmoothingReport",
    "smoothing_rate_check",
    "WeightedSmoothingReport",
    "weighted_smoothing_check",
    "QuotientDecomposition",
    "quotient_decomposition_check",
    "SkewQuotientReport",
    "skew_quotient_check",
    "SkewTable",
    "build_skew_table",
]


# ---------------------------------------------------------------- smoothing


def _distance_field(mesh: DomainMesh) -> np.ndarray:
    X = mesh.coords()
    dist = np.minimum(X[0], 1.0 - X[0])
    for a in range(1, mesh.dim):
        dist = np.minimum(dist, np.minimum(X[a], 1.0 - X[a]))
    return dist


def colayer_mask(mesh: DomainMesh, depth: float) -> np.ndarray:
    """Nodes at distance >= depth from the boundary of the unit box."""
    if depth < 0.0:
        raise ValueError("depth must be nonnegative")
    return _distance_field(mesh) >= depth - 1e-12


def _bump_kernel(mesh: DomainMesh, eps: float) -> np.ndarray:
    k = eps / (4.0 * mesh.spacing)
    if abs(k - round(k)) > 1e-9 or round(k) < 1:
        raise ValueError(
            f"smoothing radius eps = {eps} must be a positive multiple of "
            f"4 * spacing = {4.0 * mesh.spacing} so the kernel is resolved"
        )
    K = int(np.floor(eps / 2.0 / mesh.spacing - 1e-12))
    offsets = np.arange(-K, K + 1) * mesh.spacing
    if mesh.dim == 1:
        r2 = (2.0 * np.abs(offsets) / eps) ** 2
    else:
        oz, oy = np.meshgrid(offsets, offsets, indexing="ij")
        r2 = (2.0 / eps) ** 2 * (oz**2 + oy**2)
    w = np.where(r2 < 1.0, np.exp(-1.0 / np.maximum(1.0 - r2, 1e-300)), 0.0)
    return w / w.sum()


def mollify(mesh: DomainMesh, values: np.ndarray, eps: float) -> np.ndarray:
    """Convolve with the compactly supported bump of radius eps/2.

    Zero padding is exact whenever the field already vanishes within eps/2
    of the boundary, which the interior cutoff guarantees downstream.
    """
    w = _bump_kernel(mesh, eps)
    values = np.asarray(values, dtype=float)
    if values.shape == mesh.shape:
        return fftconvolve(values, w, mode="same")
    if values.shape[1:] == mesh.shape:
        return np.stack([fftconvolve(c, w, mode="same") for c in values], axis=0)
    raise ValueError(f"field shape {values.shape} does not match mesh {mesh.shape}")


def cutoff(mesh: DomainMesh, r: float) -> np.ndarray:
    """Cubic interior cutoff: 0 at distance <= r, 1 at distance >= 2r.

    The transition uses the smoothstep 3 s^2 - 2 s^3, giving a Lipschitz
    constant of order 1/r.  Requires 2r strictly below the inradius 1/2 so
    the plateau is nonempty.
    """
    if not 0.0 < 2.0 * r < 0.5:
        raise ValueError(f"cutoff radius must satisfy 0 < 2r < 1/2, got r = {r}")
    s = np.clip((_distance_field(mesh) - r) / r, 0.0, 1.0)
    return s * s * (3.0 - 2.0 * s)


def diff_quotient(
    mesh: DomainMesh, values: np.ndarray, axis: int, step_nodes: int
) -> tuple[np.ndarray, np.ndarray]:
    """Forward difference quotient over an integer number of node steps.

    Returns (quotient, valid): the quotient is (f(x + h e_axis) - f(x)) / h
    with h = step_nodes * spacing, and valid marks nodes whose shifted
    partner stays inside the box; entries outside are zero.
    """
    if not 0 < step_nodes <= mesh.n:
        raise ValueError(f"step_nodes must lie in [1, {mesh.n}], got {step_nodes}")
    if axis < 0 or axis >= mesh.dim:
        raise ValueError(f"axis out of range for dim {mesh.dim}")
    values = np.asarray(values, dtype=float)
    ax = values.ndim - mesh.dim + axis
    q = mesh.n + 1
    out = np.zeros_like(values)
    src = [slice(None)] * values.ndim
    dst = [slice(None)] * values.ndim
    src[ax] = slice(step_nodes, q)
    dst[ax] = slice(0, q - step_nodes)
    out[tuple(dst)] = (values[tuple(src)] - values[tuple(dst)]) * (mesh.n / step_nodes)
    valid = np.zeros(mesh.shape, dtype=bool)
    vdst = [slice(None)] * mesh.dim
    vdst[axis] = slice(0, q - step_nodes)
    valid[tuple(vdst)] = True
    return out, valid


# ---------------------------------------------------------- corrector table


@dataclass(frozen=True)
class CorrectorTable:
    """Cell correctors tabulated over unit directions, extended by homogeneity.

    mode "basis" (p = 2): exact superposition of coordinate-direction solves.
    mode "signed" (one dimension): one solve per sign of xi.
    mode "angular" (two dimensions, p != 2): piecewise-linear interpolation
    over a uniform fan of angles, scaled by |xi| (degree p - 1 for fluxes).
    """

    model: FluxModel
    grid: PeriodicGrid
    mode: str
    directions: np.ndarray
    N_tab: np.ndarray
    G_tab: np.ndarray
    Ahat_tab: np.ndarray
    residuals: tuple

    @property
    def n_dir(self) -> int:
        return self.directions.shape[0]

    def _angular_weights(self, xi: np.ndarray):
        # xi shape (2,) + batch -> indices and weights into the angle fan.
        ang = np.arctan2(xi[1], xi[0])
        t = np.mod(ang / (2.0 * np.pi), 1.0) * self.n_dir
        k0 = np.floor(t).astype(int) % self.n_dir
        k1 = (k0 + 1) % self.n_dir
        w = t - np.floor(t)
        return k0, k1, w

    def _gather(self, tab: np.ndarray, iy: np.ndarray, xi: np.ndarray, degree: float):
        """Evaluate a per-direction cell table at cell indices iy, direction xi."""
        norm = np.sqrt(np.sum(xi**2, axis=0))
        cell_sel = tuple(iy)
        if self.mode == "basis":
            return sum(xi[k] * tab[k][cell_sel] for k in range(self.n_dir))
        if self.mode == "signed":
            pos = tab[0][cell_sel]
            neg = tab[1][cell_sel]
            return np.where(xi[0] >= 0.0, pos, neg) * norm**degree
        k0, k1, w = self._angular_weights(xi)
        v0 = tab[k0, iy[0], iy[1]]
        v1 = tab[k1, iy[0], iy[1]]
        return ((1.0 - w) * v0 + w * v1) * norm**degree


    def eval_corrector(self, iy: np.ndarray, xi: np.ndarray) -> np.ndarray:
        """N(y, xi) at cell node indices iy (shape (dim,) + batch)."""
        return self._gather(self.N_tab, iy, xi, 1.0)

    def eval_corrector_gradient(self, iy: np.ndarray, xi: np.ndarray) -> np.ndarray:
        """grad_y N(y, xi); shape (dim,) + batch."""
        comps = [
            self._gather(self.G_tab[:, a], iy, xi, 1.0) for a in range(self.model.dim)
        ]
        return np.stack(comps, axis=0)

    def effective(self, xi: np.ndarray) -> np.ndarray:
        """Effective flux at xi (shape (dim,) + batch), degree p - 1 in |xi|."""
        d = self.model.dim
        if self.mode == "basis":
            mat = self.Ahat_tab.T  # (d, d): column j is the flux of e_j
            return np.einsum("ij,j...->i...", mat, xi)
        norm = np.sqrt(np.sum(xi**2, axis=0))
        deg = self.model.p - 1.0
        if self.mode == "signed":
            pos = self.Ahat_tab[0, 0]
            neg = self.Ahat_tab[1, 0]
            val = np.where(xi[0] >= 0.0, pos, neg) * norm**deg
            return val[None] if xi.ndim > 1 else np.array([val])
        k0, k1, w = self._angular_weights(xi)
        comps = []
        for a in range(d):
            v0 = self.Ahat_tab[k0, a]
            v1 = self.Ahat_tab[k1, a]
            comps.append(((1.0 - w) * v0 + w * v1) * norm**deg)
        return np.stack(comps, axis=0)


def build_corrector_table(
    model: FluxModel,
    n_cell: int,
    n_dir: int = 64,
    cfg: CellSolveConfig | None = None,
) -> CorrectorTable:
    """Solve the cell problem over unit directions and tabulate N, grad N, A_hat.

    Consecutive angular solves warm start from their neighbor.  p = 2 needs
    only the coordinate directions; one dimension needs only the two signs.
    """
    if cfg is None:
        cfg = CellSolveConfig()
    grid = PeriodicGrid(model.dim, n_cell)
    d = model.dim
    if model.p == 2.0:
        mode = "basis"
        dirs = np.eye(d)
    elif d == 1:
        mode = "signed"
        dirs = np.array([[1.0], [-1.0]])
    else:
        mode = "angular"
        if n_dir < 8:
            raise ValueError(f"need at least 8 directions, got {n_dir}")
        ang = 2.0 * np.pi * np.arange(n_dir) / n_dir
        dirs = np.stack([np.cos(ang), np.sin(ang)], axis=1)
    N_tab = np.empty((dirs.shape[0],) + grid.shape)
    G_tab = np.empty((dirs.shape[0], d) + grid.shape)
    A_tab = np.empty((dirs.shape[0], d))
    residuals = []
    warm = None
    for k, xi in enumerate(dirs):
        cor = solve_cell(model, xi, grid, cfg, N0=warm)
        warm = cor.N.data if mode == "angular" else None
        N_tab[k] = cor.N.data
        G_tab[k] = cor.P.data - xi.reshape((d,) + (1,) * d)
        A_tab[k] = effective_flux(model, cor)
        residuals.append(cor.residual)
    return CorrectorTable(
        model=model,
        grid=grid,
        mode=mode,
        directions=dirs,
        N_tab=N_tab,
        G_tab=G_tab,
        Ahat_tab=A_tab,
        residuals=tuple(residuals),
    )


@dataclass(frozen=True)
class TableLaw:
    """Adapter exposing a corrector table as an effective flux law.

    The Jacobian is a centered finite difference of the tabulated flux; for
    p < 2 the probe point is pushed away from the degenerate origin by the
    regularization floor.
    """

    table: CorrectorTable

    @property
    def p(self) -> float:
        return self.table.model.p

    @property
    def dim(self) -> int:
        return self.table.model.dim

    def flux(self, xi: np.ndarray, mu: float) -> np.ndarray:
        return self.table.effective(xi)

    def jacobian(self, xi: np.ndarray, mu: float) -> np.ndarray:
        d = self.dim
        if self.table.mode == "basis":
            mat = self.table.Ahat_tab.T
            return np.broadcast_to(
                mat.reshape((d, d) + (1,) * (xi.ndim - 1)), (d, d) + xi.shape[1:]
            ).copy()
        norm = np.sqrt(np.sum(xi**2, axis=0))
        floor = max(mu, 1e-8)
        scale = np.maximum(norm, floor)
        # Push degenerate points onto the sphere of radius floor along e1.
        safe = np.where(norm[None] > 0.0, xi, 0.0)
        safe = np.where(
            norm[None] >= floor,
            safe,
            np.concatenate(
                [np.broadcast_to(scale[None], (1,) + norm.shape), np.zeros((d - 1,) + norm.shape)]
            )
            if d > 1
            else np.broadcast_to(scale[None], (1,) + norm.shape),
        )
        step = 1e-4 * scale
        J = np.empty((d, d) + xi.shape[1:])
        for b in range(d):
            e = np.zeros((d,) + (1,) * (xi.ndim - 1))
            e[b] = 1.0
            fp = self.table.effective(safe + step * e)
            fm = self.table.effective(safe - step * e)
            J[:, b] = (fp - fm) / (2.0 * step)
        return J


# ----------------------------------------------------- first-order gradient


def _cells_per_period(mesh: DomainMesh, eps: float) -> int:
    m = mesh.n * eps
    if abs(m - round(m)) > 1e-9 or round(m) < 4:
        raise ValueError(
            f"mesh does not nest the period: n * eps = {m} must be an integer >= 4"
        )
    return int(round(m))


def _cell_index_map(mesh: DomainMesh, eps: float, grid: PeriodicGrid) -> np.ndarray:
    """Cell node index of x/eps for every mesh node; needs aligned grids."""
    m = _cells_per_period(mesh, eps)
    if grid.n % m != 0:
        raise ValueError(
            f"cell resolution {grid.n} must be a multiple of the {m} mesh "
            "cells per period so mesh nodes land on cell nodes"
        )
    c = grid.n // m
    idx1 = (np.arange(mesh.n + 1) * c) % grid.n
    if mesh.dim == 1:
        return idx1[None, :]
    return np.stack(np.meshgrid(idx1, idx1, indexing="ij"), axis=0)


def _step_nodes(mesh: DomainMesh, eps: float, tau: float, cap_below_period: bool = True) -> int:
    # h = eps^tau rounded up to a whole number of mesh spacings.
    s = int(np.ceil(eps**tau * mesh.n - 1e-9))
    s = max(s, 1)
    m = _cells_per_period(mesh, eps)
    return min(s, m - 1 if cap_below_period else mesh.n)


def _cutoff_radius(eps: float) -> float:
    # Follows 4 eps, clamped so the cutoff plateau stays nonempty on the
    # unit box (inradius 1/2) for coarse epsilon.
    return min(4.0 * eps, 0.45 * 0.5)


@dataclass(frozen=True)
class ApproxField:
    """First-order gradient approximation and its validity region.

    The two summands are stored separately: base is grad u0 and correction
    the corrector difference quotient; V is exactly their sum.  valid[i]
    marks nodes whose forward shift along axis i stays inside the box;
    error norms intersect all components with an interior colayer.
    """

    mesh: DomainMesh
    eps: float
    tau: float
    h: float
    step_nodes: int
    cutoff_radius: float
    base: np.ndarray
    correction: np.ndarray
    valid: np.ndarray
    phi: np.ndarray

    @property
    def V(self) -> np.ndarray:
        return self.base + self.correction


def build_first_order_gradient(
    table: CorrectorTable,
    sol_hom: Solution,
    eps: float,
    tau: float,
) -> ApproxField:
    """Assemble V = grad u0 + D^h(eps N(./eps, phi_eps)) on the mesh.

    phi_eps mollifies the cutoff gradient of u0.  The quotient step
    h = eps^tau is rounded up to a whole number of mesh spacings and capped
    below one period, keeping h < eps; tau below 1 is clamped by that cap
    and only warned about, since admissible ranges are sufficient rather
    than necessary.
    """
    mesh = sol_hom.mesh
    model = table.model
    if mesh.dim != model.dim:
        raise ValueError(f"mesh dim {mesh.dim} != model dim {model.dim}")
    if tau <= 0.0:
        raise ValueError(f"tau must be positive, got {tau}")
    if tau < 1.0:
        warnings.warn(
            f"tau = {tau} below 1 gives a step at least one period; clamped",
            stacklevel=2,
        )
    iy = _cell_index_map(mesh, eps, table.grid)
    m = _cells_per_period(mesh, eps)
    s = _step_nodes(mesh, eps, tau)
    h = s * mesh.spacing
    r_cut = _cutoff_radius(eps)
    psi = cutoff(mesh, r_cut)
    phi = mollify(mesh, psi[None] * sol_hom.grad, eps)
    d = mesh.dim
    c = table.grid.n // m
    q = mesh.n + 1
    correction = np.zeros((d,) + mesh.shape)
    valid = np.zeros((d,) + mesh.shape, dtype=bool)
    N_base = table.eval_corrector(iy, phi)
    for i in range(d):
        iy_sh = iy.copy()
        iy_sh[i] = (iy_sh[i] + s * c) % table.grid.n
        idx = [slice(None)] * d
        idx[i] = slice(s, q)
        src = tuple(idx)
        idx[i] = slice(0, q - s)
        dst = tuple(idx)
        phi_sh = np.zeros_like(phi)
        phi_sh[(slice(None),) + dst] = phi[(slice(None),) + src]
        N_sh = table.eval_corrector(iy_sh, phi_sh)
        correction[i][dst] = (N_sh[dst] - N_base[dst]) * (eps / h)
        valid[i][dst] = True
    return ApproxField(
        mesh=mesh,
        eps=eps,
        tau=tau,
        h=h,
        step_nodes=s,
        cutoff_radius=r_cut,
        base=sol_hom.grad.copy(),
        correction=correction,
        valid=valid,
        phi=phi,
    )


# ----------------------------------------------------------- admissible tau


def _alpha_exponent(p: float) -> float:
    # Holder exponent of xi -> grad N on the sphere.
    return 2.0 / p if p > 2.0 else 1.0 / (3.0 - p)


@dataclass(frozen=True)
class TauRange:
    lo: float
    hi: float
    split: float | None
    default: float


def admissible_tau(p: float, delta: float, theta: float) -> TauRange:
    """Quotient-step exponents for which the two-scale estimate closes.

    delta is the higher-integrability margin of grad u0 (exponent p(1+delta))
    and theta its interior Holder exponent.  Three regimes:

    p > 2:   a closed interval strictly above 1 whose width is of order
             beta * theta; never empty.
    p = 2:   everything above 1 + beta/theta.
    p < 2:   an interval (1, hi) split by a crossover point; the default
             sits in the upper branch.
    """
    if not 1.0 < p <= 20.0:
        raise ValueError(f"p must lie in (1, 20], got {p}")
    if delta <= 0.0:
        raise ValueError("delta must be positive")
    if not 0.0 < theta < 1.0:
        raise ValueError("theta must lie in (0, 1)")
    beta = delta / (p * (1.0 + delta))
    if p > 2.0:
        alpha = _alpha_exponent(p)
        lo = (1.0 - alpha + theta + beta) / (1.0 - alpha + theta)
        hi = (1.0 - alpha + beta) / (1.0 - alpha)
        return TauRange(lo=lo, hi=hi, split=None, default=0.5 * (lo + hi))
    if p == 2.0:
        lo = 1.0 + beta / theta
        return TauRange(lo=lo, hi=np.inf, split=None, default=lo + 0.1)
    gamma = holder_exponent_flux(p)
    hi = (1.0 - gamma + gamma * beta) / (1.0 - gamma)
    split = (1.0 - gamma + theta * (p - 1.0) + gamma * beta) / (
        1.0 - gamma + theta * (p - 1.0)
    )
    return TauRange(lo=1.0, hi=hi, split=split, default=0.5 * (split + hi))


# -------------------------------------------------------------- error norms


def error_gradient_norm(sol_eps: Solution, approx: ApproxField, p: float) -> float:
    """L^p distance between grad u_eps and V on the valid interior region.

    The region intersects every shift-validity mask with the colayer at
    depth eps; an empty intersection is an error, not a zero.
    """
    mesh = sol_eps.mesh
    if mesh.shape != approx.mesh.shape:
        raise ValueError("solution and approximation live on different meshes")
    mask = np.all(approx.valid, axis=0) & colayer_mask(mesh, approx.eps)
    if not np.any(mask):
        raise ValueError("empty comparison region: colayer and shifts exclude all nodes")
    return domain_lp_norm(mesh, sol_eps.grad - approx.V, p, mask=mask)


def error_solution_norm(sol_eps: Solution, sol_hom: Solution, p: float) -> float:
    """Plain L^p distance of the solutions over the whole box."""
    if sol_eps.mesh.shape != sol_hom.mesh.shape:
        raise ValueError("solutions live on different meshes")
    return domain_lp_norm(sol_eps.mesh, sol_eps.u - sol_hom.u, p)


def holder_modulus(
    mesh: DomainMesh, values: np.ndarray, theta: float, max_offset: float = 0.25
) -> float:
    """Discrete Holder seminorm estimate over dyadic axis offsets.

    Takes the largest ratio of sup-norm shifted difference to offset^theta
    over offsets spacing * 2^k up to max_offset, per axis.  A lower bound on
    the true seminorm that is sharp for fields rough at all scales.
    """
    if not 0.0 < theta <= 1.0:
        raise ValueError("theta must lie in (0, 1]")
    values = np.asarray(values, dtype=float)
    best = 0.0
    s = 1
    while s * mesh.spacing <= max_offset and s <= mesh.n:
        for axis in range(mesh.dim):
            ax = values.ndim - mesh.dim + axis
            q = mesh.n + 1
            sl_hi = [slice(None)] * values.ndim
            sl_lo = [slice(None)] * values.ndim
            sl_hi[ax] = slice(s, q)
            sl_lo[ax] = slice(0, q - s)
            diff = np.max(np.abs(values[tuple(sl_hi)] - values[tuple(sl_lo)]))
            best = max(best, float(diff) / (s * mesh.spacing) ** theta)
        s *= 2
    return best


# ------------------------------------------------------- structural checks


@dataclass(frozen=True)
class SmallGradientReport:
    fraction: float
    bound: float
    seminorm: float
    mask: np.ndarray


def small_gradient_fraction(
    sol_hom: Solution, eps: float, vartheta: float = 0.5
) -> SmallGradientReport:
    """Measure of the near-critical set {|grad u0| <= M eps^vartheta}.

    M is the discrete Holder norm of grad u0 (sup plus the vartheta
    seminorm over dyadic offsets up to 1/4).  The set is where first-order
    correction cannot be trusted; its measure is a diagnostic, not an error.
    """
    mesh = sol_hom.mesh
    mag = np.sqrt(np.sum(sol_hom.grad**2, axis=0))
    semi = holder_modulus(mesh, sol_hom.grad, vartheta)
    M = float(np.max(mag)) + semi
    bound = M * eps**vartheta
    mask = mag <= bound
    return SmallGradientReport(
        fraction=float(np.mean(mask)), bound=bound, seminorm=semi, mask=mask
    )


@dataclass(frozen=True)
class SmoothingReport:
    diff_norm: float
    grad_norm: float
    constant: float


def smoothing_rate_check(
    mesh: DomainMesh, values: np.ndarray, eps: float, p: float
) -> SmoothingReport:
    """Fitted constant in || S_eps f - f ||_p <= C eps || grad f ||_p.

    The difference is measured on the colayer at depth 2 eps, where the
    mollifier reads only interior values; the gradient on the colayer at
    depth eps.
    """
    values = np.asarray(values, dtype=float)
    smoothed = mollify(mesh, values, eps)
    inner = colayer_mask(mesh, 2.0 * eps)
    outer = colayer_mask(mesh, eps)
    if not np.any(inner):
        raise ValueError("colayer at depth 2 eps is empty")
    diff = domain_lp_norm(mesh, smoothed - values, p, mask=inner)
    if values.ndim == mesh.dim:
        grads = _gradient(mesh, values)
    else:
        grads = np.concatenate([_gradient(mesh, c) for c in values], axis=0)
    grad_norm = domain_lp_norm(mesh, grads, p, mask=outer)
    return SmoothingReport(
        diff_norm=diff,
        grad_norm=grad_norm,
        constant=diff / max(eps * grad_norm, 1e-300),
    )


@dataclass(frozen=True)
class WeightedSmoothingReport:
    left: float
    right: float
    constant: float
    complement_fraction: float


def weighted_smoothing_check(
    sol_hom: Solution,
    eps: float,
    p: float,
    r: float = 0.0,
    vartheta: float = 0.5,
) -> WeightedSmoothingReport:
    """Weighted smoothing inequality on the complement of the critical set.

    With phi the cutoff gradient of u0, compares

        sum_{|grad u0| > M eps^vartheta} |phi - S_eps phi|^p |grad u0|^r

    against eps^p times the same weighted norm of grad phi over the box.
    The bound degenerates where |grad u0| is small, hence the restriction;
    r = 0 reduces to the plain smoothing estimate.
    """
    mesh = sol_hom.mesh
    psi = cutoff(mesh, _cutoff_radius(eps))
    phi = psi[None] * sol_hom.grad
    smoothed = mollify(mesh, phi, eps)
    small = small_gradient_fraction(sol_hom, eps, vartheta)
    mask = ~small.mask
    if not np.any(mask):
        raise ValueError("critical set covers the box; weighted check undefined")
    mag = np.sqrt(np.sum(sol_hom.grad**2, axis=0))
    weight = mag**r if r != 0.0 else np.ones(mesh.shape)
    diff = np.sqrt(np.sum((phi - smoothed) ** 2, axis=0))
    vol = mesh.spacing**mesh.dim
    left = float(np.sum(diff[mask] ** p * weight[mask]) * vol)
    gphi = np.concatenate([_gradient(mesh, c) for c in phi], axis=0)
    gmag = np.sqrt(np.sum(gphi**2, axis=0))
    right = float(eps**p * np.sum(gmag**p * weight) * vol)
    return WeightedSmoothingReport(
        left=left,
        right=right,
        constant=left / max(right, 1e-300),
        complement_fraction=float(np.mean(mask)),
    )


@dataclass(frozen=True)
class QuotientDecomposition:
    quadrature_defect: float
    remainder_constant: float
    periodic_defect: float | None


def quotient_decomposition_check(
    table: CorrectorTable,
    mesh: DomainMesh,
    eps: float,
    phi: np.ndarray,
    axis: int,
    tau: float,
) -> QuotientDecomposition:
    """Split the corrector quotient into a frozen-argument path integral
    and a Holder-bounded remainder.

    With the corrector argument frozen at the base point, the quotient
    (eps/h)[N((x + h e)/eps, xi) - N(x/eps, xi)] equals the path average of
    grad_y N; quadrature_defect measures that identity through the table's
    own gradients.  The remainder, carrying the argument increment, is
    normalized by eps h^(alpha-1) |D^h phi|^alpha (|phi| + |phi_sh|)^(1-alpha)
    and reported as the largest ratio.  At tau = 1 the step spans a full
    period and the frozen part vanishes identically; periodic_defect records
    the achieved maximum in that case.
    """
    model = table.model
    d = mesh.dim
    iy = _cell_index_map(mesh, eps, table.grid)
    m = _cells_per_period(mesh, eps)
    s = _step_nodes(mesh, eps, tau, cap_below_period=tau > 1.0)
    h = s * mesh.spacing
    c = table.grid.n // m
    q = mesh.n + 1
    iy_sh = iy.copy()
    iy_sh[axis] = (iy_sh[axis] + s * c) % table.grid.n
    idx = [slice(None)] * d
    idx[axis] = slice(s, q)
    src = tuple(idx)
    idx[axis] = slice(0, q - s)
    dst = tuple(idx)

    N_base = table.eval_corrector(iy, phi)
    N_sh_frozen = table.eval_corrector(iy_sh, phi)
    frozen = (N_sh_frozen - N_base) * (eps / h)

    # Path average of the tabulated cell gradient, trapezoid over the
    # s * c cell nodes the step traverses.
    steps = s * c
    acc = np.zeros(mesh.shape)
    for j in range(steps + 1):
        iy_j = iy.copy()
        iy_j[axis] = (iy[axis] + j) % table.grid.n
        g = table.eval_corrector_gradient(iy_j, phi)
        wgt = 0.5 if j in (0, steps) else 1.0
        acc += wgt * g[axis]
    quad = acc / steps
    scale = max(float(np.max(np.abs(frozen[dst]))), 1e-300)
    if s * c % table.grid.n == 0:
        periodic = float(np.max(np.abs(frozen[dst])))
        qdefect = periodic
    else:
        periodic = None
        qdefect = float(np.max(np.abs(frozen[dst] - quad[dst]))) / scale

    phi_sh = np.zeros_like(phi)
    phi_sh[(slice(None),) + dst] = phi[(slice(None),) + src]
    N_sh_full = table.eval_corrector(iy_sh, phi_sh)
    remainder = (N_sh_full - N_sh_frozen) * (eps / h)
    alpha = _alpha_exponent(model.p)
    dphi = np.sqrt(np.sum((phi_sh - phi) ** 2, axis=0))
    mags = np.sqrt(np.sum(phi**2, axis=0)) + np.sqrt(np.sum(phi_sh**2, axis=0))
    denom = (eps / h) * dphi**alpha * mags ** (1.0 - alpha)
    dmax = float(np.max(denom[dst])) if np.any(denom[dst] > 0) else 0.0
    keep = np.zeros(mesh.shape, dtype=bool)
    keep[dst] = True
    keep &= denom > 1e-10 * max(dmax, 1e-300)
    if np.any(keep):
        constant = float(np.max(np.abs(remainder[keep]) / denom[keep]))
    else:
        constant = 0.0
    return QuotientDecomposition(
        quadrature_defect=qdefect,
        remainder_constant=constant,
        periodic_defect=periodic,
    )


@dataclass(frozen=True)
class SkewTable:
    """Skew potential component tabulated over directions, like CorrectorTable."""

    model: FluxModel
    grid: PeriodicGrid
    mode: str
    E_tab: np.ndarray

    @property
    def n_dir(self) -> int:
        return self.E_tab.shape[0]

    def eval_component(self, iy: np.ndarray, xi: np.ndarray) -> np.ndarray:
        deg = self.model.p - 1.0
        norm = np.sqrt(np.sum(xi**2, axis=0))
        if self.mode == "basis":
            return sum(xi[k] * self.E_tab[k][tuple(iy)] for k in range(2))
        ang = np.arctan2(xi[1], xi[0])
        t = np.mod(ang / (2.0 * np.pi), 1.0) * self.n_dir
        k0 = np.floor(t).astype(int) % self.n_dir
        k1 = (k0 + 1) % self.n_dir
        w = t - np.floor(t)
        v0 = self.E_tab[k0, iy[0], iy[1]]
        v1 = self.E_tab[k1, iy[0], iy[1]]
        return ((1.0 - w) * v0 + w * v1) * norm**deg


def build_skew_table(
    model: FluxModel,
    n_cell: int,
    n_dir: int = 16,
    cfg: CellSolveConfig | None = None,
) -> SkewTable:
    """Tabulate the (0,1) skew potential component over unit directions."""
    if model.dim != 2:
        raise ValueError("skew potentials are only nontrivial in two dimensions")
    if cfg is None:
        cfg = CellSolveConfig()
    grid = PeriodicGrid(2, n_cell)
    if model.p == 2.0:
        mode = "basis"
        dirs = np.eye(2)
    else:
        mode = "angular"
        if n_dir < 8:
            raise ValueError(f"need at least 8 directions, got {n_dir}")
        ang = 2.0 * np.pi * np.arange(n_dir) / n_dir
        dirs = np.stack([np.cos(ang), np.sin(ang)], axis=1)
    E_tab = np.empty((dirs.shape[0],) + grid.shape)
    warm = None
    for k, xi in enumerate(dirs):
        cor = solve_cell(model, xi, grid, cfg, N0=warm)
        warm = cor.N.data if mode == "angular" else None
        fcs = build_flux_corrector(model, cor)
        E_tab[k] = fcs.component(0, 1)
    return SkewTable(model=model, grid=grid, mode=mode, E_tab=E_tab)


@dataclass(frozen=True)
class SkewQuotientReport:
    remainder_constant: float
    exponent: float


def skew_quotient_check(
    stable: SkewTable,
    mesh: DomainMesh,
    eps: float,
    phi: np.ndarray,
    axis: int,
    tau: float,
) -> SkewQuotientReport:
    """Holder-normalized remainder of the skew-potential quotient.

    Freezing the argument and differencing the rest mirrors the corrector
    decomposition; the flux-type exponent gamma replaces alpha and the
    homogeneity degree is p - 1.
    """
    model = stable.model
    d = mesh.dim
    iy = _cell_index_map(mesh, eps, stable.grid)
    m = _cells_per_period(mesh, eps)
    s = _step_nodes(mesh, eps, tau)
    c = stable.grid.n // m
    q = mesh.n + 1
    iy_sh = iy.copy()
    iy_sh[axis] = (iy_sh[axis] + s * c) % stable.grid.n
    idx = [slice(None)] * d
    idx[axis] = slice(s, q)
    src = tuple(idx)
    idx[axis] = slice(0, q - s)
    dst = tuple(idx)
    phi_sh = np.zeros_like(phi)
    phi_sh[(slice(None),) + dst] = phi[(slice(None),) + src]
    E_frozen = stable.eval_component(iy_sh, phi)
    E_full = stable.eval_component(iy_sh, phi_sh)
    h = s * mesh.spacing
    remainder = (E_full - E_frozen) * (eps / h)
    gamma = holder_exponent_flux(model.p)
    dphi = np.sqrt(np.sum((phi_sh - phi) ** 2, axis=0))
    mags = np.sqrt(np.sum(phi**2, axis=0)) + np.sqrt(np.sum(phi_sh**2, axis=0))
    denom = (eps / h) * dphi**gamma * mags ** (model.p - 1.0 - gamma)
    dmax = float(np.max(denom[dst])) if np.any(denom[dst] > 0) else 0.0
    keep = np.zeros(mesh.shape, dtype=bool)
    keep[dst] = True
    keep &= denom > 1e-10 * max(dmax, 1e-300)
    if np.any(keep):
        constant = float(np.max(np.abs(remainder[keep]) / denom[keep]))
    else:
        constant = 0.0
    return SkewQuotientReport(remainder_constant=constant, exponent=gamma)
