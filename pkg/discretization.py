from dataclasses import dataclass
from typing import Dict, List, Tuple, Union

import numpy as np
import scipy.sparse as sp
from einops import rearrange

from model import CnlsCoefficients, ComplexState, ConfigurationError, GridSpec
from pml import PmlCoefficientFields

D1_WEIGHTS = np.array([1.0, -8.0, 0.0, 8.0, -1.0]) / 12.0
D2_WEIGHTS = np.array([-1.0, 16.0, -30.0, 16.0, -1.0]) / 12.0
OFFSETS = (-2, -1, 0, 1, 2)


@dataclass(frozen=True)
class StencilSet:
    """Centered 4th-order five-point stencils, weights per unit mesh width."""

    first: np.ndarray = D1_WEIGHTS
    second: np.ndarray = D2_WEIGHTS

    def d1_matrix(self, n: int, d: float) -> sp.csr_matrix:
        return _banded(self.first / d, n)

    def d2_matrix(self, n: int, d: float) -> sp.csr_matrix:
        return _banded(self.second / d**2, n)


STENCILS = StencilSet()


def _banded(weights: np.ndarray, n: int) -> sp.csr_matrix:
    # truncation at the ends is the zero ghost extension
    diagonals = [np.full(n - abs(k), w) for k, w in zip(OFFSETS, weights) if w != 0]
    offsets = [k for k, w in zip(OFFSETS, weights) if w != 0]
    return sp.diags(diagonals, offsets, shape=(n, n), format="csr")


def _apply(weights: np.ndarray, field: np.ndarray, axis: int) -> np.ndarray:
    u = np.moveaxis(np.asarray(field), axis, -1)
    if u.shape[-1] < 5:
        raise ConfigurationError(f"a line needs at least 5 points, got {u.shape[-1]}")
    p = np.pad(u, [(0, 0)] * (u.ndim - 1) + [(2, 2)])
    n = u.shape[-1]
    out = sum(w * p[..., k : k + n] for k, w in enumerate(weights) if w != 0)
    return np.moveaxis(out, -1, axis)


def apply_d1(field: np.ndarray, d: float, axis: int = -1) -> np.ndarray:
    """First derivative along `axis` with zero values beyond the ends.

    Parameters
    ----------
    field : ndarray
        Values on a uniform line (or a stack of lines).
    d : float
        Mesh width.
    axis : int, default=-1
        Axis along which to differentiate.

    Returns
    -------
    ndarray
        (u[i-2] - 8u[i-1] + 8u[i+1] - u[i+2]) / (12 d) at every point.
    """
    return _apply(D1_WEIGHTS, field, axis) / d


def apply_d2(field: np.ndarray, d: float, axis: int = -1) -> np.ndarray:
    """Second derivative along `axis`, (-u[i-2] + 16u[i-1] - 30u[i] + 16u[i+1] - u[i+2]) / (12 d^2)."""
    return _apply(D2_WEIGHTS, field, axis) / d**2


@dataclass
class GridDerivatives:
    """Sparse derivative matrices acting on row-major flattened (x, y) fields."""

    dx: sp.csr_matrix
    dy: sp.csr_matrix
    dxx: sp.csr_matrix
    dyy: sp.csr_matrix
    dxy: sp.csr_matrix
    interior: np.ndarray

    @classmethod
    def build(cls, grid: GridSpec, stencils: StencilSet = STENCILS) -> "GridDerivatives":
        ix, iy = sp.identity(grid.nx, format="csr"), sp.identity(grid.ny, format="csr")
        dx = sp.kron(stencils.d1_matrix(grid.nx, grid.dx), iy, format="csr")
        dy = sp.kron(ix, stencils.d1_matrix(grid.ny, grid.dy), format="csr")
        dxx = sp.kron(stencils.d2_matrix(grid.nx, grid.dx), iy, format="csr")
        dyy = sp.kron(ix, stencils.d2_matrix(grid.ny, grid.dy), format="csr")

        mask = np.ones(grid.shape, dtype=bool)
        mask[0, :] = mask[-1, :] = False
        mask[:, 0] = mask[:, -1] = False
        return cls(dx, dy, dxx, dyy, (dx @ dy).tocsr(), rearrange(mask, "x y -> (x y)"))


def _along_x(values: np.ndarray, grid: GridSpec) -> sp.dia_matrix:
    return sp.diags(np.repeat(values, grid.ny))


def _along_y(values: np.ndarray, grid: GridSpec) -> sp.dia_matrix:
    return sp.diags(np.tile(values, grid.nx))


@dataclass
class SparseOperator:
    """Generator L of one component, u_t = i L u in the linear part.

    Rows and columns of the outer boundary points are zero.
    """

    matrix: sp.csr_matrix
    grid: GridSpec
    component: int = 0

    def __call__(self, field: np.ndarray) -> np.ndarray:
        flat = rearrange(np.asarray(field), "x y -> (x y)")
        return rearrange(self.matrix @ flat, "(x y) -> x y", x=self.grid.nx)


def first_order_factors(
    fields: PmlCoefficientFields, grid: GridSpec, j: int, derivatives: GridDerivatives = None
) -> Tuple[sp.csr_matrix, sp.csr_matrix]:
    """Matrices of d_x^PML and d_y^PML for component j (no boundary masking)."""
    derivatives = derivatives or GridDerivatives.build(grid)
    phi = fields.phase
    px = _along_x(fields.cx, grid) @ (derivatives.dx - phi * _along_x(fields.gx[j], grid) @ derivatives.dy)
    py = _along_y(fields.cy, grid) @ (derivatives.dy - phi * _along_y(fields.gy[j], grid) @ derivatives.dx)
    return px.tocsr(), py.tocsr()


def _squared_x(fields: PmlCoefficientFields, grid: GridSpec, j: int, d: GridDerivatives) -> sp.csr_matrix:
    # (d_x^PML)^2 with the pure second derivative kept on the second-derivative stencil
    phi = fields.phase
    cx, dcx, gx, dgx = fields.cx, fields.dcx, fields.gx[j], fields.dgx[j]
    return (
        _along_x(cx**2, grid) @ d.dxx
        + _along_x(cx * dcx, grid) @ d.dx
        - phi * _along_x(cx * dcx * gx + cx**2 * dgx, grid) @ d.dy
        - 2 * phi * _along_x(cx**2 * gx, grid) @ d.dxy
        + phi**2 * _along_x(cx**2 * gx**2, grid) @ d.dyy
    )


def _squared_y(fields: PmlCoefficientFields, grid: GridSpec, j: int, d: GridDerivatives) -> sp.csr_matrix:
    phi = fields.phase
    cy, dcy, gy, dgy = fields.cy, fields.dcy, fields.gy[j], fields.dgy[j]
    return (
        _along_y(cy**2, grid) @ d.dyy
        + _along_y(cy * dcy, grid) @ d.dy
        - phi * _along_y(cy * dcy * gy + cy**2 * dgy, grid) @ d.dx
        - 2 * phi * _along_y(cy**2 * gy, grid) @ d.dxy
        + phi**2 * _along_y(cy**2 * gy**2, grid) @ d.dxx
    )


def assemble_linear_operator(
    coeffs: CnlsCoefficients,
    fields: PmlCoefficientFields,
    grid: GridSpec,
    j: int = 0,
    derivatives: GridDerivatives = None,
) -> SparseOperator:
    """Assemble alpha_x (d_x^PML)^2 + alpha_y (d_y^PML)^2 + beta (d_x^PML d_y^PML + d_y^PML d_x^PML)/2.

    Parameters
    ----------
    coeffs : CnlsCoefficients
        System coefficients; component `j` is assembled.
    fields : PmlCoefficientFields
        Layer coefficients sampled on `grid`.
    grid : GridSpec
        Full grid.
    j : int, default=0
        Component index.
    derivatives : GridDerivatives, optional
        Reused derivative matrices.

    Returns
    -------
    SparseOperator
        Complex CSR generator with zero Dirichlet rows and columns.
    """
    if fields.cx.shape != (grid.nx,) or fields.cy.shape != (grid.ny,):
        raise ConfigurationError(
            f"coefficient fields {fields.cx.shape}x{fields.cy.shape} do not match grid {grid.shape}"
        )
    if not 0 <= j < coeffs.n_components or fields.n_components != coeffs.n_components:
        raise ConfigurationError(f"component {j} is not available")

    d = derivatives or GridDerivatives.build(grid)
    c = coeffs.component(j)
    px, py = first_order_factors(fields, grid, j, d)

    op = c.alpha_x * _squared_x(fields, grid, j, d) + c.alpha_y * _squared_y(fields, grid, j, d)
    if c.beta != 0:
        op = op + 0.5 * c.beta * (px @ py + py @ px)

    mask = sp.diags(d.interior.astype(float))
    matrix = (mask @ op @ mask).tocsr().astype(np.complex128)
    matrix.eliminate_zeros()
    return SparseOperator(matrix, grid, j)


def assemble_operators(
    coeffs: CnlsCoefficients, fields: PmlCoefficientFields, grid: GridSpec
) -> List[SparseOperator]:
    d = GridDerivatives.build(grid)
    return [assemble_linear_operator(coeffs, fields, grid, j, d) for j in range(coeffs.n_components)]


class Cme2Nonlinearity:
    """gamma (|u_j|^2 u_j + 2|u_k|^2 u_j + u_k^2 conj(u_j) + eps_q |u_j|^4 u_j), k = 3 - j."""

    name = "cme2"

    def _check(self, data: np.ndarray) -> None:
        if data.shape[0] != 2:
            raise ConfigurationError(
                f"the cme2 nonlinearity needs 2 components, got {data.shape[0]}"
            )

    def __call__(self, data: np.ndarray, coeffs: CnlsCoefficients) -> np.ndarray:
        self._check(data)
        u1, u2 = data
        a1, a2 = np.abs(u1) ** 2, np.abs(u2) ** 2
        n1 = (a1 + 2 * a2 + coeffs.eps_q * a1**2) * u1 + u2**2 * np.conj(u1)
        n2 = (a2 + 2 * a1 + coeffs.eps_q * a2**2) * u2 + u1**2 * np.conj(u2)
        return coeffs.gamma * np.stack([n1, n2])

    def wirtinger(self, data: np.ndarray, coeffs: CnlsCoefficients) -> Tuple[np.ndarray, np.ndarray]:
        """Pointwise dN_j/du_k and dN_j/dconj(u_k), each of shape (2, 2, ...)."""
        self._check(data)
        u = data
        eps = coeffs.eps_q
        du = np.zeros((2, 2) + u.shape[1:], dtype=np.complex128)
        dc = np.zeros_like(du)
        for j, k in ((0, 1), (1, 0)):
            aj, ak = np.abs(u[j]) ** 2, np.abs(u[k]) ** 2
            du[j, j] = 2 * aj + 2 * ak + 3 * eps * aj**2
            dc[j, j] = u[j] ** 2 + u[k] ** 2 + 2 * eps * aj * u[j] ** 2
            du[j, k] = 2 * np.conj(u[k]) * u[j] + 2 * u[k] * np.conj(u[j])
            dc[j, k] = 2 * u[k] * u[j]
        return coeffs.gamma * du, coeffs.gamma * dc


class ScalarCubicQuintic:
    """gamma (|u_j|^2 + eps_q |u_j|^4) u_j for each component independently."""

    name = "scalar"

    def __call__(self, data: np.ndarray, coeffs: CnlsCoefficients) -> np.ndarray:
        a = np.abs(data) ** 2
        return coeffs.gamma * (a + coeffs.eps_q * a**2) * data

    def wirtinger(self, data: np.ndarray, coeffs: CnlsCoefficients) -> Tuple[np.ndarray, np.ndarray]:
        n = data.shape[0]
        du = np.zeros((n, n) + data.shape[1:], dtype=np.complex128)
        dc = np.zeros_like(du)
        for j in range(n):
            a = np.abs(data[j]) ** 2
            du[j, j] = 2 * a + 3 * coeffs.eps_q * a**2
            dc[j, j] = data[j] ** 2 * (1 + 2 * coeffs.eps_q * a)
        return coeffs.gamma * du, coeffs.gamma * dc


NONLINEARITIES: Dict[str, Union[Cme2Nonlinearity, ScalarCubicQuintic]] = {
    "cme2": Cme2Nonlinearity(),
    "scalar": ScalarCubicQuintic(),
}


def get_nonlinearity(coeffs: CnlsCoefficients):
    try:
        return NONLINEARITIES[coeffs.nonlinearity]
    except KeyError:
        raise ConfigurationError(
            f"unknown nonlinearity {coeffs.nonlinearity!r}, expected one of {sorted(NONLINEARITIES)}"
        ) from None


def evaluate_nonlinearity(
    state: Union[ComplexState, np.ndarray], coeffs: CnlsCoefficients
) -> Union[ComplexState, np.ndarray]:
    """Pointwise nonlinear term on the whole box, including the layers."""
    data = state.data if isinstance(state, ComplexState) else np.asarray(state, dtype=np.complex128)
    if data.shape[0] != coeffs.n_components:
        raise ConfigurationError(
            f"state has {data.shape[0]} components, coefficients {coeffs.n_components}"
        )
    nonlinearity = get_nonlinearity(coeffs)
    if coeffs.gamma == 0:
        if coeffs.nonlinearity == "cme2":
            nonlinearity._check(data)
        out = np.zeros_like(data)
    else:
        out = nonlinearity(data, coeffs)
    return state.with_data(out) if isinstance(state, ComplexState) else out
