"""Dirichlet problems on the unit box for oscillating and homogenized fluxes.

Solves  - div A(x/eps, grad u) = F  on (0,1)^d with u = g on the boundary,
and the companion homogenized problem  - div A_hat(grad u0) = F.  Nodes sit
at i/n for n intervals per axis; gradients use centered differences inside
and one-sided second-order stencils on the boundary, which makes the scheme
exact on affine data.  The residual at an interior node is the centered
divergence of the pointwise flux plus the source, so the assembled Jacobian
is nonsymmetric near the boundary and is solved directly (or by ILU
preconditioned BiCGStab when large).

For p != 2 the flux keeps a small regularization floor even in the final
continuation stage: interior critical points of u make the unregularized
Jacobian singular, and the floor's effect on the solution is far below
discretization error.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .flux_model import FluxModel, flux_given_weight, jacobian_given_weight
from .solvers import ConvergenceError

__all__ = [
    "DomainMesh",
    "DomainSolveConfig",
    "Solution",
    "solve_oscillating",
    "solve_homogenized",
    "IsotropicLaw",
    "affine_data",
    "constant_data",
    "zero_data",
    "sine_product_data",
    "ball_mask",
    "domain_lp_norm",
    "caccioppoli_check",
    "meyers_check",
    "grad_regularity_check",
    "large_scale_decay",
    "CaccioppoliReport",
    "MeyersReport",
    "DecayReport",
]


@dataclass(frozen=True)
class DomainMesh:
    """Uniform node-centered mesh on the closed unit box.

    n counts intervals per axis, so each axis holds n + 1 nodes at i/n and
    the spacing is 1/n.
    """

    dim: int
    n: int

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ValueError(f"dim must be 1 or 2, got {self.dim}")
        if self.n < 4:
            raise ValueError(f"need at least 4 intervals, got {self.n}")

    @property
    def spacing(self) -> float:
        return 1.0 / self.n

    @property
    def shape(self) -> tuple:
        return (self.n + 1,) * self.dim

    @property
    def node_count(self) -> int:
        return (self.n + 1) ** self.dim

    def axis_coords(self) -> np.ndarray:
        return np.arange(self.n + 1) / self.n

    def coords(self) -> np.ndarray:
        axes = [self.axis_coords() for _ in range(self.dim)]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=0)

    def boundary_mask(self) -> np.ndarray:
        mask = np.zeros(self.shape, dtype=bool)
        for a in range(self.dim):
            idx = [slice(None)] * self.dim
            idx[a] = 0
            mask[tuple(idx)] = True
            idx[a] = self.n
            mask[tuple(idx)] = True
        return mask

    @classmethod
    def nested(cls, dim: int, eps: float, m: int) -> "DomainMesh":
        """Mesh whose spacing divides the period: n = m / eps with m cells per period."""
        if eps <= 0.0 or eps > 1.0:
            raise ValueError(f"eps must lie in (0, 1], got {eps}")
        inv = 1.0 / eps
        if abs(inv - round(inv)) > 1e-9:
            raise ValueError(f"1/eps must be an integer, got 1/eps = {inv}")
        if m < 4:
            raise ValueError(f"need at least 4 cells per period, got {m}")
        return cls(dim, int(round(inv)) * m)


def _grad_1d(q: int, n: int) -> sp.csr_matrix:
    # Centered rows inside, one-sided second-order rows at the two ends.
    h2 = n / 2.0
    G = sp.lil_matrix((q, q))
    G[0, 0], G[0, 1], G[0, 2] = -3.0 * h2, 4.0 * h2, -1.0 * h2
    G[q - 1, q - 3], G[q - 1, q - 2], G[q - 1, q - 1] = 1.0 * h2, -4.0 * h2, 3.0 * h2
    for i in range(1, q - 1):
        G[i, i - 1] = -h2
        G[i, i + 1] = h2
    return G.tocsr()


_MESH_OPS_CACHE: dict = {}


def _mesh_ops(mesh: DomainMesh) -> dict:
    key = (mesh.dim, mesh.n)
    if key in _MESH_OPS_CACHE:
        return _MESH_OPS_CACHE[key]
    q = mesh.n + 1
    G1 = _grad_1d(q, mesh.n)
    eye = sp.identity(q, format="csr")
    if mesh.dim == 1:
        grads = [G1]
    else:
        grads = [sp.kron(G1, eye, format="csr"), sp.kron(eye, G1, format="csr")]
    interior = ~mesh.boundary_mask().ravel()
    int_idx = np.flatnonzero(interior)
    R = sp.csr_matrix(
        (np.ones(int_idx.size), (np.arange(int_idx.size), int_idx)),
        shape=(int_idx.size, mesh.node_count),
    )
    ops = {"grads": grads, "interior": interior, "int_idx": int_idx, "restrict": R}
    _MESH_OPS_CACHE[key] = ops
    return ops


@dataclass(frozen=True)
class DomainSolveConfig:
    tol: float = 1e-9
    max_iter: int = 300
    mu_schedule: tuple | None = None
    backtrack: float = 0.5
    max_backtracks: int = 30
    accept_factor: float = 1e-4
    linear_solver: str = "auto"
    direct_limit: int = 300_000
    iterative_rtol: float = 1e-10
    iterative_max_iter: int = 2000

    def __post_init__(self):
        if self.linear_solver not in ("auto", "direct", "iterative"):
            raise ValueError(f"unknown linear_solver {self.linear_solver!r}")
        if self.tol <= 0.0:
            raise ValueError("tol must be positive")


def _domain_mu_schedule(p: float) -> tuple:
    if p == 2.0:
        return (0.0,)
    return (1e-2, 1e-4, 1e-6, 1e-8)


@dataclass(frozen=True)
class Solution:
    """Converged domain solve: values, gradient, and the final residual norm."""

    mesh: DomainMesh
    u: np.ndarray
    grad: np.ndarray
    residual: float
    iterations: int
    mu_final: float
    info: dict


def _gradient(mesh: DomainMesh, u: np.ndarray) -> np.ndarray:
    ops = _mesh_ops(mesh)
    flat = u.ravel()
    return np.stack([(G @ flat).reshape(mesh.shape) for G in ops["grads"]], axis=0)


def domain_lp_norm(mesh: DomainMesh, values: np.ndarray, p: float, mask=None) -> float:
    """Discrete L^p norm over the box (or over mask) with weight spacing^dim.

    Component axes beyond the mesh shape are reduced to the pointwise
    Euclidean magnitude first.
    """
    extra = values.ndim - mesh.dim
    if extra > 0:
        mag = np.sqrt(np.sum(values**2, axis=tuple(range(extra))))
    else:
        mag = np.abs(values)
    if mask is not None:
        mag = mag[mask]
    return float((np.sum(mag**p) * mesh.spacing**mesh.dim) ** (1.0 / p))


def _residual_arrays(flux_fn, mesh, u, F_vals, mu):
    ops = _mesh_ops(mesh)
    grad = _gradient(mesh, u)
    A = flux_fn(grad, mu)
    div = np.zeros(mesh.node_count)
    for a, G in enumerate(ops["grads"]):
        div += G @ A[a].ravel()
    r_int = div[ops["interior"]] + F_vals.ravel()[ops["interior"]]
    return r_int, grad


def _residual_norm(mesh: DomainMesh, r_int: np.ndarray) -> float:
    return float(np.sqrt(np.sum(r_int**2) * mesh.spacing**mesh.dim))


def _solve_linear(J_int, rhs, cfg: DomainSolveConfig, size: int):
    use_direct = cfg.linear_solver == "direct" or (
        cfg.linear_solver == "auto" and size <= cfg.direct_limit
    )
    if use_direct:
        return spla.spsolve(J_int.tocsc(), rhs)
    ilu = spla.spilu(J_int.tocsc(), drop_tol=1e-5, fill_factor=12.0)
    prec = spla.LinearOperator(J_int.shape, ilu.solve)
    x, code = spla.bicgstab(
        J_int,
        rhs,
        rtol=cfg.iterative_rtol,
        atol=0.0,
        maxiter=cfg.iterative_max_iter,
        M=prec,
    )
    if code != 0:
        return spla.spsolve(J_int.tocsc(), rhs)
    return x


def _newton_domain(flux_fn, jac_fn, mesh, g_vals, F_vals, cfg, schedule):
    ops = _mesh_ops(mesh)
    grads = ops["grads"]
    R = ops["restrict"]
    int_idx = ops["int_idx"]
    d = mesh.dim
    u = g_vals.copy()
    total = 0
    stage_tols = [
        cfg.tol if k == len(schedule) - 1 else max(cfg.tol, 1e-6)
        for k in range(len(schedule))
    ]
    for mu, stage_tol in zip(schedule, stage_tols):
        r_int, grad = _residual_arrays(flux_fn, mesh, u, F_vals, mu)
        res = _residual_norm(mesh, r_int)
        for _ in range(cfg.max_iter):
            if res <= stage_tol:
                break
            M = jac_fn(grad, mu)
            J = None
            for a in range(d):
                Da = R @ grads[a]
                for b in range(d):
                    term = Da @ sp.diags(M[a, b].ravel()) @ grads[b]
                    J = term if J is None else J + term
            J_int = J.tocsr()[:, int_idx]
            delta = _solve_linear(J_int, -r_int, cfg, int_idx.size)
            if not np.all(np.isfinite(delta)):
                raise ConvergenceError(
                    "linear solve produced non-finite update", best=u, residual=res
                )
            s = 1.0
            accepted = False
            for _ in range(cfg.max_backtracks):
                u_try = u.copy()
                u_try.ravel()[int_idx] += s * delta
                r_try, grad_try = _residual_arrays(flux_fn, mesh, u_try, F_vals, mu)
                res_try = _residual_norm(mesh, r_try)
                if res_try <= res * (1.0 - cfg.accept_factor * s) or res_try <= stage_tol:
                    accepted = True
                    break
                s *= cfg.backtrack
            total += 1
            if not accepted:
                break
            u, r_int, grad, res = u_try, r_try, grad_try, res_try
        else:
            pass
    if res > cfg.tol:
        raise ConvergenceError(
            f"domain solve did not reach tol={cfg.tol:.1e} (residual {res:.3e})",
            best=u,
            residual=res,
        )
    return u, res, schedule[-1], total


def solve_oscillating(
    model: FluxModel,
    mesh: DomainMesh,
    eps: float,
    g,
    F,
    cfg: DomainSolveConfig | None = None,
) -> Solution:
    """Dirichlet solve for the eps-oscillating flux A(x/eps, grad u).

    The mesh must nest the periodicity cell: n * eps has to be an integer
    number of cells per period (at least 4) so that quadrature sees whole
    periods.  g and F are callables of the coordinate array of shape
    (dim,) + mesh.shape.
    """
    if cfg is None:
        cfg = DomainSolveConfig()
    if model.dim != mesh.dim:
        raise ValueError(f"model dim {model.dim} != mesh dim {mesh.dim}")
    m = mesh.n * eps
    if abs(m - round(m)) > 1e-9 or round(m) < 4:
        raise ValueError(
            f"mesh does not nest the period: n * eps = {m} must be an integer >= 4"
        )
    X = mesh.coords()
    a_vals = model.weight.eval(np.mod(X / eps, 1.0))
    g_vals = np.asarray(g(X), dtype=float)
    F_vals = np.asarray(F(X), dtype=float)
    if g_vals.shape != mesh.shape or F_vals.shape != mesh.shape:
        raise ValueError("boundary and source callables must return mesh-shaped arrays")
    p = model.p

    def flux_fn(grad, mu):
        return flux_given_weight(a_vals, grad, p, mu)

    def jac_fn(grad, mu):
        return jacobian_given_weight(a_vals, grad, p, mu)

    schedule = cfg.mu_schedule if cfg.mu_schedule is not None else _domain_mu_schedule(p)
    u, res, mu_final, total = _newton_domain(
        flux_fn, jac_fn, mesh, g_vals, F_vals, cfg, schedule
    )
    return Solution(
        mesh=mesh,
        u=u,
        grad=_gradient(mesh, u),
        residual=res,
        iterations=total,
        mu_final=mu_final,
        info={"eps": eps, "mu_schedule": tuple(schedule), "kind": "oscillating"},
    )


@dataclass(frozen=True)
class IsotropicLaw:
    """Effective flux coefficient * |xi|^(p-2) xi; exact in one dimension.

    Serves both the closed-form homogenized law (coefficient = the
    p-harmonic mean) and constant-weight sanity cases in any dimension.
    """

    coefficient: float
    p: float
    dim: int

    def __post_init__(self):
        if self.coefficient <= 0.0:
            raise ValueError("coefficient must be positive")
        if not 1.0 < self.p <= 20.0:
            raise ValueError(f"p must lie in (1, 20], got {self.p}")

    def flux(self, xi: np.ndarray, mu: float) -> np.ndarray:
        return flux_given_weight(np.asarray(self.coefficient), xi, self.p, mu)

    def jacobian(self, xi: np.ndarray, mu: float) -> np.ndarray:
        return jacobian_given_weight(np.asarray(self.coefficient), xi, self.p, mu)


def solve_homogenized(
    law,
    mesh: DomainMesh,
    g,
    F,
    cfg: DomainSolveConfig | None = None,
) -> Solution:
    """Dirichlet solve for a y-independent effective flux law.

    law provides flux(xi, mu) and jacobian(xi, mu) on gradient arrays of
    shape (dim,) + mesh.shape, plus attributes p and dim.
    """
    if cfg is None:
        cfg = DomainSolveConfig()
    if law.dim != mesh.dim:
        raise ValueError(f"law dim {law.dim} != mesh dim {mesh.dim}")
    X = mesh.coords()
    g_vals = np.asarray(g(X), dtype=float)
    F_vals = np.asarray(F(X), dtype=float)
    if g_vals.shape != mesh.shape or F_vals.shape != mesh.shape:
        raise ValueError("boundary and source callables must return mesh-shaped arrays")
    schedule = cfg.mu_schedule if cfg.mu_schedule is not None else _domain_mu_schedule(law.p)
    u, res, mu_final, total = _newton_domain(
        law.flux, law.jacobian, mesh, g_vals, F_vals, cfg, schedule
    )
    return Solution(
        mesh=mesh,
        u=u,
        grad=_gradient(mesh, u),
        residual=res,
        iterations=total,
        mu_final=mu_final,
        info={"mu_schedule": tuple(schedule), "kind": "homogenized"},
    )


# ------------------------------------------------------------- data presets


def affine_data(coeffs, offset: float = 0.0):
    """g(x) = offset + coeffs . x; exact discrete solutions for F = 0."""
    coeffs = np.asarray(coeffs, dtype=float)

    def g(X):
        return offset + np.tensordot(coeffs, X, axes=(0, 0))

    return g


def constant_data(value: float):
    def g(X):
        return np.full(X.shape[1:], float(value))

    return g


def zero_data():
    return constant_data(0.0)


def sine_product_data(amplitude: float = 1.0):
    """amplitude * prod_a sin(pi x_a); vanishes on the boundary."""

    def g(X):
        out = np.full(X.shape[1:], float(amplitude))
        for a in range(X.shape[0]):
            out = out * np.sin(np.pi * X[a])
        return out

    return g


# -------------------------------------------------------------- diagnostics


def ball_mask(mesh: DomainMesh, center, r: float) -> np.ndarray:
    center = np.asarray(center, dtype=float)
    X = mesh.coords()
    dist2 = np.zeros(mesh.shape)
    for a in range(mesh.dim):
        dist2 += (X[a] - center[a]) ** 2
    return dist2 <= r * r


def _boundary_distance(mesh: DomainMesh, center) -> float:
    center = np.asarray(center, dtype=float)
    return float(min(np.min(center), np.min(1.0 - center)))


@dataclass(frozen=True)
class CaccioppoliReport:
    grad_mass: float
    oscillation_mass: float
    ratio: float


def caccioppoli_check(sol: Solution, p: float, center, r: float) -> CaccioppoliReport:
    """Interior energy bound: grad mass on B_r vs. scaled oscillation on B_2r.

    For solutions with zero source the ratio is bounded by a constant
    depending only on the ellipticity contrast.  Requires B_2r inside the
    box.
    """
    if 2.0 * r > _boundary_distance(sol.mesh, center):
        raise ValueError("B_2r must stay inside the domain")
    inner = ball_mask(sol.mesh, center, r)
    outer = ball_mask(sol.mesh, center, 2.0 * r)
    grad_mass = domain_lp_norm(sol.mesh, sol.grad, p, mask=inner) ** p
    u_mean = float(np.mean(sol.u[outer]))
    osc = domain_lp_norm(sol.mesh, sol.u - u_mean, p, mask=outer) ** p / r**p
    return CaccioppoliReport(
        grad_mass=grad_mass,
        oscillation_mass=osc,
        ratio=grad_mass / max(osc, 1e-300),
    )


@dataclass(frozen=True)
class MeyersReport:
    base_norm: float
    improved_norm: float
    exponent: float
    quotient: float


def meyers_check(sol: Solution, p: float, delta: float, margin: float = 0.125) -> MeyersReport:
    """Higher-integrability quotient of the gradient on an interior box.

    Compares the L^(p(1+delta)) norm on the margin-shrunk box against the
    L^p norm on the full box; a bounded quotient is the discrete trace of
    the self-improving integrability of the gradient.
    """
    if delta <= 0.0:
        raise ValueError("delta must be positive")
    if not 0.0 < margin < 0.5:
        raise ValueError("margin must lie in (0, 1/2)")
    mesh = sol.mesh
    X = mesh.coords()
    inner = np.ones(mesh.shape, dtype=bool)
    for a in range(mesh.dim):
        inner &= (X[a] >= margin) & (X[a] <= 1.0 - margin)
    q = p * (1.0 + delta)
    base = domain_lp_norm(mesh, sol.grad, p)
    improved = domain_lp_norm(mesh, sol.grad, q, mask=inner)
    return MeyersReport(
        base_norm=base,
        improved_norm=improved,
        exponent=q,
        quotient=improved / max(base, 1e-300),
    )


def grad_regularity_check(sol: Solution, p: float, margin: float = 0.125) -> float:
    """Interior sup of |grad u| against its L^p average; the floor guards zero data."""
    mesh = sol.mesh
    X = mesh.coords()
    inner = np.ones(mesh.shape, dtype=bool)
    for a in range(mesh.dim):
        inner &= (X[a] >= margin) & (X[a] <= 1.0 - margin)
    mag = np.sqrt(np.sum(sol.grad**2, axis=0))
    sup = float(np.max(mag[inner]))
    avg = domain_lp_norm(mesh, sol.grad, p)
    return sup / max(avg, 1e-8)


@dataclass(frozen=True)
class DecayReport:
    radii: tuple
    masses: tuple
    slope: float
    expected: float


def large_scale_decay(
    sol: Solution,
    p: float,
    center,
    radii,
    eps: float,
) -> DecayReport:
    """Scaling of the gradient p-mass over balls above the oscillation scale.

    Fits log mass(B_r) against log r; above eps the interior large-scale
    regularity makes the mass scale like r^dim, with no blow-up from the
    microstructure.  Radii below eps are rejected: there the oscillation
    dominates and the fit would measure the microstructure instead.
    """
    radii = tuple(float(r) for r in radii)
    if len(radii) < 3:
        raise ValueError("need at least 3 radii for a slope")
    if min(radii) < eps:
        raise ValueError(f"radii must be >= eps = {eps}")
    if max(radii) > _boundary_distance(sol.mesh, center):
        raise ValueError("largest ball leaves the domain")
    masses = []
    for r in radii:
        mask = ball_mask(sol.mesh, center, r)
        masses.append(domain_lp_norm(sol.mesh, sol.grad, p, mask=mask) ** p)
    logs = np.log(np.asarray(radii))
    logm = np.log(np.maximum(np.asarray(masses), 1e-300))
    slope = float(np.polyfit(logs, logm, 1)[0])
    return DecayReport(
        radii=radii,
        masses=tuple(masses),
        slope=slope,
        expected=float(sol.mesh.dim),
    )
