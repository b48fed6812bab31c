"""Spatial grids, discrete differential operators, and discrete inner products.

Two grid families are supported:

* ``Grid1D`` - uniform vertex-centered interior nodes on (0, 1) with spacing
  h = 1/(n+1).  Used by the fourth-order Kuramoto-Sivashinsky operator with
  clamped boundary conditions (w = 0 and w_xi = 0 at both ends), imposed by
  ghost-point elimination so the matrix stays symmetric.
* ``Grid2D`` - uniform cell-centered nodes on a rectangle with each boundary
  edge labelled Dirichlet or Neumann.  The 5-point Laplacian with mirrored
  ghost cells is exactly symmetric for any edge mix, and the quadrature is a
  uniform diagonal hx*hy, which makes weighted adjoints plain transposes.

All quadrature weights are uniform per grid, so the discrete L2 adjoint of any
assembled matrix is its transpose; the rest of the package relies on that.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sps
import scipy.sparse.linalg as spsla
from scipy.linalg import eigvalsh

from .exceptions import InvalidBoundaryError, InvalidGridError

_SIDES = ("left", "right", "bottom", "top")


@dataclass(frozen=True)
class Grid1D:
    """Uniform interior-node grid on (0, 1) with trapezoid-consistent weights."""

    n: int
    h: float
    nodes: np.ndarray
    quad_weights: np.ndarray

    @property
    def size(self) -> int:
        return self.n

    @property
    def weight(self) -> float:
        """Uniform quadrature weight per node."""
        return self.h


@dataclass(frozen=True)
class Grid2D:
    """Uniform cell-centered grid on [0,lx] x [0,ly] with per-edge BC labels.

    ``dirichlet`` maps each side name to True (Dirichlet, part of Gamma_0) or
    False (Neumann, part of Gamma_1).  Nodes are ordered row-major with the
    x index fastest: flat index = iy * nx + ix.
    """

    nx: int
    ny: int
    lx: float
    ly: float
    dirichlet: dict[str, bool]
    hx: float = field(init=False)
    hy: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "hx", self.lx / self.nx)
        object.__setattr__(self, "hy", self.ly / self.ny)

    @property
    def size(self) -> int:
        return self.nx * self.ny

    @property
    def weight(self) -> float:
        """Uniform quadrature weight per node (cell area)."""
        return self.hx * self.hy

    @property
    def quad_weights(self) -> np.ndarray:
        return np.full(self.size, self.weight)

    @property
    def xs(self) -> np.ndarray:
        return (np.arange(self.nx) + 0.5) * self.hx

    @property
    def ys(self) -> np.ndarray:
        return (np.arange(self.ny) + 0.5) * self.hy

    def meshgrid(self) -> tuple[np.ndarray, np.ndarray]:
        """Coordinate arrays of shape (ny, nx) matching the flat ordering."""
        return np.meshgrid(self.xs, self.ys)

    @property
    def gamma0_sides(self) -> tuple[str, ...]:
        return tuple(s for s in _SIDES if self.dirichlet[s])


@dataclass(frozen=True)
class LinearOperator:
    """Real matrix acting on interior-node state vectors."""

    mat: sps.csr_matrix
    symmetric: bool

    @property
    def n(self) -> int:
        return self.mat.shape[0]

    def apply(self, v: np.ndarray) -> np.ndarray:
        return self.mat @ v

    __matmul__ = apply

    def toarray(self) -> np.ndarray:
        return self.mat.toarray()

    def __neg__(self) -> "LinearOperator":
        return LinearOperator(mat=(-self.mat).tocsr(), symmetric=self.symmetric)


def build_grid_1d(n: int) -> Grid1D:
    """Uniform grid with n interior nodes on (0,1).

    Interior trapezoid weights are h each (boundary values are zero for every
    field this grid carries), so sum(quad_weights) = 1 - h.
    """
    if n < 4:
        raise InvalidGridError(f"need at least 4 interior nodes for the stencils, got n={n}")
    h = 1.0 / (n + 1)
    nodes = h * np.arange(1, n + 1)
    weights = np.full(n, h)
    return Grid1D(n=n, h=h, nodes=nodes, quad_weights=weights)


def build_grid_2d(nx: int, ny: int, lx: float = 1.0, ly: float = 1.0,
                  dirichlet_sides=("left", "right", "bottom", "top")) -> Grid2D:
    """Cell-centered rectangle grid; sides not listed as Dirichlet are Neumann."""
    if nx < 4 or ny < 4:
        raise InvalidGridError(f"need at least 4 cells per axis, got nx={nx}, ny={ny}")
    if lx <= 0 or ly <= 0:
        raise InvalidGridError("rectangle extents must be positive")
    bad = [s for s in dirichlet_sides if s not in _SIDES]
    if bad:
        raise InvalidBoundaryError(f"unknown side labels {bad}; expected subset of {_SIDES}")
    dirichlet = {s: s in dirichlet_sides for s in _SIDES}
    if not any(dirichlet.values()):
        raise InvalidBoundaryError("Gamma_0 is empty: at least one side must be Dirichlet")
    return Grid2D(nx=nx, ny=ny, lx=lx, ly=ly, dirichlet=dirichlet)


def _second_difference_1d(n: int, h: float) -> sps.csr_matrix:
    """Dirichlet second-difference matrix on interior vertex nodes (zero ghosts)."""
    main = np.full(n, -2.0)
    off = np.ones(n - 1)
    return sps.diags([off, main, off], [-1, 0, 1], format="csr") / h**2


def _fourth_difference_clamped(n: int, h: float) -> sps.csr_matrix:
    """Fourth-difference matrix with clamped ends via ghost elimination.

    w_0 = 0 and w_xi(0) = 0 give the ghost value w_{-1} = w_1, which folds a
    +1 into the first diagonal entry (likewise at the right end), preserving
    symmetry.
    """
    main = np.full(n, 6.0)
    off1 = np.full(n - 1, -4.0)
    off2 = np.full(n - 2, 1.0)
    m = sps.diags([off2, off1, main, off1, off2], [-2, -1, 0, 1, 2], format="lil")
    m[0, 0] += 1.0
    m[n - 1, n - 1] += 1.0
    return (m / h**4).tocsr()


def ks_operator(grid: Grid1D, lam: float) -> LinearOperator:
    """Discrete A w = -w_xixixixi - lam * w_xixi with clamped BCs.

    Second-order central differences; symmetric by construction.
    """
    d4 = _fourth_difference_clamped(grid.n, grid.h)
    d2 = _second_difference_1d(grid.n, grid.h)
    return LinearOperator(mat=(-d4 - lam * d2).tocsr(), symmetric=True)


def _laplacian_1d_cells(n: int, h: float, dir_lo: bool, dir_hi: bool) -> sps.csr_matrix:
    """Cell-centered 1-D Laplacian factor with ghost elimination.

    Dirichlet face: ghost = -first cell (zero value at the face midpoint);
    Neumann face: ghost = first cell (mirror).  Both keep the matrix symmetric.
    """
    main = np.full(n, -2.0)
    off = np.ones(n - 1)
    m = sps.diags([off, main, off], [-1, 0, 1], format="lil")
    m[0, 0] += -1.0 if dir_lo else 1.0
    m[n - 1, n - 1] += -1.0 if dir_hi else 1.0
    return (m / h**2).tocsr()


def heat_operator(grid: Grid2D) -> LinearOperator:
    """5-point Laplacian with w=0 on Gamma_0 and dw/dnu=0 on Gamma_1.

    Symmetric negative semidefinite; negative definite whenever Gamma_0 is
    nonempty.
    """
    if not any(grid.dirichlet.values()):
        raise InvalidBoundaryError("Gamma_0 is empty: Laplacian would be singular")
    lx_op = _laplacian_1d_cells(grid.nx, grid.hx, grid.dirichlet["left"], grid.dirichlet["right"])
    ly_op = _laplacian_1d_cells(grid.ny, grid.hy, grid.dirichlet["bottom"], grid.dirichlet["top"])
    ix = sps.eye(grid.nx, format="csr")
    iy = sps.eye(grid.ny, format="csr")
    lap = sps.kron(iy, lx_op) + sps.kron(ly_op, ix)
    return LinearOperator(mat=lap.tocsr(), symmetric=True)


def inner_product(f: np.ndarray, g: np.ndarray, grid) -> float:
    """Discrete L2 inner product sum_i w_i f_i g_i."""
    if f.shape != g.shape or f.shape[0] != grid.size:
        raise ValueError(f"dimension mismatch: {f.shape} vs {g.shape} on grid of size {grid.size}")
    return grid.weight * float(np.dot(f, g))


def l2_norm(f: np.ndarray, grid) -> float:
    return float(np.sqrt(max(inner_product(f, f, grid), 0.0)))


def h1_operator(grid) -> LinearOperator:
    """K = -Delta_h + I with the grid's Dirichlet structure.

    The discrete H1 inner product is <f, g>_V := <f, K g>_L2; K is symmetric
    positive definite, so this is a genuine inner product and the Riesz map
    below is its inverse.
    """
    if isinstance(grid, Grid1D):
        neg_lap = -_second_difference_1d(grid.n, grid.h)
    else:
        neg_lap = -heat_operator(grid).mat
    k = (neg_lap + sps.eye(grid.size, format="csr")).tocsr()
    return LinearOperator(mat=k, symmetric=True)


def h1_inner(f: np.ndarray, g: np.ndarray, grid, k_op: LinearOperator | None = None) -> float:
    """Discrete H1 inner product <f, g> + <grad f, grad g>."""
    k = k_op if k_op is not None else h1_operator(grid)
    return inner_product(f, k.apply(g), grid)

def h1_norm(f: np.ndarray, grid, k_op: LinearOperator | None = None) -> float:
    return float(np.sqrt(max(h1_inner(f, f, grid, k_op), 0.0)))


def h1_riesz_map(v: np.ndarray, grid, k_op: LinearOperator | None = None) -> np.ndarray:
    """Map the L2 representer of a functional to its H1 representer.

    Solves (-Delta_h + I) g = v; the solve cannot be singular because K is
    positive definite.
    """
    k = k_op if k_op is not None else h1_operator(grid)
    if v.shape[0] != grid.size:
        raise ValueError(f"vector of size {v.shape[0]} does not match grid of size {grid.size}")
    return spsla.spsolve(k.mat.tocsc(), v)


def smallest_eigenvalue(op: LinearOperator) -> float:
    """Smallest eigenvalue of a symmetric operator.

    Dense eigensolve at desk scale; shift-invert Lanczos (shifted below the
    spectrum via a Gershgorin bound, so the target is the eigenvalue nearest
    the shift) beyond it.
    """
    if not op.symmetric:
        raise ValueError("smallest_eigenvalue requires a symmetric operator")
    if op.n <= 512:
        return float(eigvalsh(op.toarray())[0])
    mat = op.mat.tocsr()
    diag = mat.diagonal()
    row_abs = np.asarray(abs(mat).sum(axis=1)).ravel()
    lower = float(np.min(diag - (row_abs - np.abs(diag))))
    sigma = lower - 1.0
    vals = spsla.eigsh(mat.tocsc(), k=1, sigma=sigma, which="LM",
                       return_eigenvectors=False)
    return float(vals[0])
