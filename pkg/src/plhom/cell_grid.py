"""Uniform periodic grids on the unit cell and the discrete calculus on them.

The unit cell is the torus [0, 1)^d with d in {1, 2}.  All cell quantities
(weights, correctors, oscillation fluxes) live on a uniform node-centered
grid with n nodes per axis, node coordinates i/n, and quadrature weight
(1/n)^d per node.

The discrete gradient is the centered second-order periodic difference and
the discrete divergence is its negative adjoint, so summation by parts

    <grad u, F> = -<u, div F>

holds to machine precision.  That exactness is what makes the flux-corrector
identity (row divergence of the antisymmetric potential reproducing the
oscillation flux) hold at solver tolerance rather than at discretization
order.

The centered stencil annihilates the per-axis Nyquist modes, so the discrete
Laplacian (divergence of gradient) has a 2^d-dimensional kernel spanned by
the tensor-product modes with frequency in {0, n/2}.  The periodic Poisson
solver inverts on the orthogonal complement of that kernel and projects the
right-hand side onto it; right-hand sides produced by the discrete divergence
are compatible by construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "PeriodicGrid",
    "CellField",
    "gradient",
    "divergence",
    "laplacian",
    "mean",
    "project_zero_mean",
    "lp_norm",
    "linf_norm",
    "poisson_periodic",
    "project_compatible",
]


def _is_power_of_two(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class PeriodicGrid:
    """Uniform node-centered grid on the unit torus [0, 1)^dim.

    Attributes
    ----------
    dim:
        Spatial dimension, 1 or 2.
    n:
        Nodes per axis.  Must be a power of two >= 8 so that nested
        refinements and dyadic cell/mesh alignment stay exact.
    """

    dim: int
    n: int

    def __post_init__(self) -> None:
        if self.dim not in (1, 2):
            raise ValueError(f"dim must be 1 or 2, got {self.dim}")
        if not _is_power_of_two(self.n) or self.n < 8:
            raise ValueError(f"n must be a power of two >= 8, got {self.n}")

    @property
    def spacing(self) -> float:
        return 1.0 / self.n

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n,) * self.dim

    @property
    def node_count(self) -> int:
        return self.n**self.dim

    @property
    def cell_volume(self) -> float:
        return self.spacing**self.dim

    def axis_coords(self) -> np.ndarray:
        """Node coordinates along one axis, i/n for i = 0..n-1."""
        return np.arange(self.n) / self.n

    def coords(self) -> np.ndarray:
        """Node coordinates, shape (dim,) + shape."""
        axes = np.meshgrid(*([self.axis_coords()] * self.dim), indexing="ij")
        return np.stack(axes, axis=0)


@dataclass
class CellField:
    """A scalar, vector, or matrix field sampled at the nodes of a grid.

    data has shape grid.shape (scalar), (dim,) + grid.shape (vector), or
    (dim, dim) + grid.shape (matrix).  Values must be finite.
    """

    grid: PeriodicGrid
    data: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        self.data = np.asarray(self.data, dtype=float)
        gshape = self.grid.shape
        d = self.grid.dim
        ok = (
            self.data.shape == gshape
            or self.data.shape == (d,) + gshape
            or self.data.shape == (d, d) + gshape
        )
        if not ok:
            raise ValueError(
                f"field shape {self.data.shape} does not match grid shape "
                f"{gshape} at rank 0, 1, or 2"
            )
        if not np.all(np.isfinite(self.data)):
            raise ValueError("field contains non-finite values")

    @property
    def rank(self) -> int:
        return self.data.ndim - self.grid.dim

    @classmethod
    def scalar(cls, grid: PeriodicGrid, data: np.ndarray) -> "CellField":
        f = cls(grid, data)
        if f.rank != 0:
            raise ValueError(f"expected scalar field, got rank {f.rank}")
        return f

    @classmethod
    def vector(cls, grid: PeriodicGrid, data: np.ndarray) -> "CellField":
        f = cls(grid, data)
        if f.rank != 1:
            raise ValueError(f"expected vector field, got rank {f.rank}")
        return f

    @classmethod
    def zeros(cls, grid: PeriodicGrid, rank: int = 0) -> "CellField":
        shape = (grid.dim,) * rank + grid.shape
        return cls(grid, np.zeros(shape))


def _centered_diff(values: np.ndarray, axis: int, n: int) -> np.ndarray:
    # (f(y + h e_a) - f(y - h e_a)) / (2 h) with wrap-around indexing, h = 1/n.
    return (np.roll(values, -1, axis=axis) - np.roll(values, 1, axis=axis)) * (n / 2.0)


def gradient(f: CellField) -> CellField:
    """Centered periodic gradient of a scalar field; returns a vector field."""
    if f.rank != 0:
        raise ValueError(f"gradient expects a scalar field, got rank {f.rank}")
    g = f.grid
    comps = [_centered_diff(f.data, a, g.n) for a in range(g.dim)]
    return CellField(g, np.stack(comps, axis=0))


def divergence(F: CellField) -> CellField:
    """Centered periodic divergence of a vector field; negative adjoint of gradient."""
    if F.rank != 1:
        raise ValueError(f"divergence expects a vector field, got rank {F.rank}")
    g = F.grid
    out = np.zeros(g.shape)
    for a in range(g.dim):
        out += _centered_diff(F.data[a], a, g.n)
    return CellField(g, out)


def laplacian(f: CellField) -> CellField:
    """divergence(gradient(f)); the wide centered five/three-point Laplacian."""
    return divergence(gradient(f))


def mean(f: CellField) -> float | np.ndarray:
    """Cell average per component: scalar for rank 0, shape (dim,)*rank otherwise."""
    axes = tuple(range(f.rank, f.data.ndim))
    m = f.data.mean(axis=axes)
    return float(m) if f.rank == 0 else m


def project_zero_mean(f: CellField) -> CellField:
    """Subtract the cell average componentwise."""
    axes = tuple(range(f.rank, f.data.ndim))
    m = f.data.mean(axis=axes, keepdims=True)
    return CellField(f.grid, f.data - m)


def _pointwise_magnitude(f: CellField) -> np.ndarray:
    if f.rank == 0:
        return np.abs(f.data)
    # Euclidean magnitude over the leading component axes.
    comp_axes = tuple(range(f.rank))
    return np.sqrt(np.sum(f.data**2, axis=comp_axes))


def lp_norm(f: CellField, p: float) -> float:
    """Discrete L^p norm with quadrature weight spacing^dim.

    Vector and matrix fields are reduced to their pointwise Euclidean
    magnitude first.
    """
    if p < 1.0:
        raise ValueError(f"p must be >= 1, got {p}")
    mag = _pointwise_magnitude(f)
    return float((np.sum(mag**p) * f.grid.cell_volume) ** (1.0 / p))


def linf_norm(f: CellField) -> float:
    return float(_pointwise_magnitude(f).max())


def _symbol_sq(grid: PeriodicGrid) -> np.ndarray:
    """Eigenvalues of -laplacian on Fourier modes: sum_a (n sin(2 pi k_a / n))^2."""
    n = grid.n
    k = np.arange(n)
    s = (n * np.sin(2.0 * np.pi * k / n)) ** 2
    # The kernel frequencies 0 and n/2 must be exact zeros; floating-point
    # sin(pi) is only ~1e-16 and would otherwise amplify roundoff by ~1e28.
    s[0] = 0.0
    s[n // 2] = 0.0
    if grid.dim == 1:
        return s
    return s[:, None] + s[None, :]


def poisson_periodic(rhs: CellField, mean_tol: float = 1e-8) -> CellField:
    """Solve laplacian(f) = rhs on the torus with zero-mean f, by FFT.

    The right-hand side must have cell average compatible with solvability:
    |mean(rhs)| <= mean_tol * ||rhs||_2 (exactly zero-mean rhs always passes).
    Modes in the kernel of the centered Laplacian (per-axis frequencies in
    {0, n/2}) are projected out of the right-hand side; for right-hand sides
    in the range of the discrete divergence this projection is the identity.
    """
    if rhs.rank != 0:
        raise ValueError(f"poisson_periodic expects a scalar field, got rank {rhs.rank}")
    g = rhs.grid
    nrm = lp_norm(rhs, 2.0)
    if nrm > 0.0 and abs(float(rhs.data.mean())) > mean_tol * nrm:
        raise ValueError(
            "right-hand side is incompatible: |mean| = "
            f"{abs(float(rhs.data.mean())):.3e} exceeds {mean_tol:.1e} * ||rhs||_2"
        )
    lam = _symbol_sq(g)
    rhat = np.fft.fftn(rhs.data)
    with np.errstate(divide="ignore", invalid="ignore"):
        fhat = np.where(lam > 0.0, rhat / np.where(lam > 0.0, -lam, 1.0), 0.0)
    f = np.fft.ifftn(fhat).real
    f -= f.mean()
    return CellField(g, f)


def project_compatible(rhs: CellField) -> CellField:
    """Project a scalar field onto the range of the centered Laplacian.

    Zeros the Fourier modes with per-axis frequency in {0, n/2}.  Used by
    tests to state the Poisson round-trip identity exactly.
    """
    if rhs.rank != 0:
        raise ValueError("project_compatible expects a scalar field")
    lam = _symbol_sq(rhs.grid)
    rhat = np.fft.fftn(rhs.data)
    rhat[lam == 0.0] = 0.0
    return CellField(rhs.grid, np.fft.ifftn(rhat).real)
