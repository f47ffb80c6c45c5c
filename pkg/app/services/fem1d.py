"""Linear finite elements on a uniform mesh of [0, 1].

Nodal unknowns of coupled fields are stored node-major, so an operator on
(u1, u2, u3) is block tridiagonal with 3x3 blocks. Nonlinear integrands are
evaluated with 3-point Gauss quadrature per element, which is exact for the
products of up to three linear factors that appear in the weak forms.
"""
import logging
from dataclasses import dataclass

import numpy as np
from numba import njit

from app.config import config
from app.services.model_core import InvalidParameterError

logger = logging.getLogger(__name__)

# 3-point Gauss-Legendre rule mapped to the reference element [0, 1]
GAUSS_POINTS = np.array([0.5 - np.sqrt(15.0) / 10.0, 0.5, 0.5 + np.sqrt(15.0) / 10.0])
GAUSS_WEIGHTS = np.array([5.0 / 18.0, 8.0 / 18.0, 5.0 / 18.0])
# Hat functions of the left and right element node at the Gauss points
PHI_LEFT = 1.0 - GAUSS_POINTS
PHI_RIGHT = GAUSS_POINTS


class SingularSystemError(Exception):
    """Raised when block elimination meets a (near-)zero pivot"""

    def __init__(self, pivot_index: int, message: str = ""):
        self.pivot_index = pivot_index
        super().__init__(message or f"Singular system: zero pivot in block row {pivot_index}")


@dataclass(frozen=True)
class Mesh1D:
    """Uniform mesh x_j = j*h, j = 0..nod-1"""
    nod: int

    def __post_init__(self):
        if int(self.nod) != self.nod or self.nod < 3:
            raise InvalidParameterError(f"nod must be an integer >= 3, got {self.nod}")

    @property
    def h(self) -> float:
        return 1.0 / (self.nod - 1)

    @property
    def n_elements(self) -> int:
        return self.nod - 1

    @property
    def nodes(self) -> np.ndarray:
        return np.arange(self.nod) * self.h

    @property
    def dirichlet_node(self) -> int:
        """Index of the node at x = 1"""
        return self.nod - 1


@dataclass(frozen=True)
class TridiagonalMatrix:
    """
    Tridiagonal matrix with scalar entries (shape (n,)) or square blocks (shape (n, m, m)).

    lower[i] couples row i to unknown i-1 (lower[0] unused), upper[i] couples
    row i to unknown i+1 (upper[-1] unused).
    """
    lower: np.ndarray
    main: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        if not (self.lower.shape == self.main.shape == self.upper.shape):
            raise ValueError(
                f"Diagonal shapes differ: {self.lower.shape}, {self.main.shape}, {self.upper.shape}"
            )
        if self.main.ndim == 3 and self.main.shape[1] != self.main.shape[2]:
            raise ValueError(f"Blocks must be square, got {self.main.shape[1:]}")
        if self.main.ndim not in (1, 3):
            raise ValueError(f"Expected scalar or block diagonals, got shape {self.main.shape}")

    @property
    def n(self) -> int:
        return self.main.shape[0]

    @property
    def block_size(self) -> int:
        return 1 if self.main.ndim == 1 else self.main.shape[1]

    def as_blocks(self) -> "TridiagonalMatrix":
        if self.main.ndim == 3:
            return self
        return TridiagonalMatrix(
            self.lower.reshape(-1, 1, 1), self.main.reshape(-1, 1, 1), self.upper.reshape(-1, 1, 1)
        )

    def to_dense(self) -> np.ndarray:
        blocks = self.as_blocks()
        n, m = blocks.n, blocks.block_size
        dense = np.zeros((n * m, n * m))
        for i in range(n):
            rows = slice(i * m, (i + 1) * m)
            dense[rows, i * m:(i + 1) * m] = blocks.main[i]
            if i > 0:
                dense[rows, (i - 1) * m:i * m] = blocks.lower[i]
            if i < n - 1:
                dense[rows, (i + 1) * m:(i + 2) * m] = blocks.upper[i]
        return dense

    def matvec(self, x: np.ndarray) -> np.ndarray:
        """
        Product with x of shape (n, m) for block matrices.

        A scalar matrix accepts x of shape (n,) or (n, k) and acts on each column.
        """
        x = np.asarray(x, dtype=float)
        if self.main.ndim == 1:
            shape = (-1,) + (1,) * (x.ndim - 1)
            lower, main, upper = (d.reshape(shape) for d in (self.lower, self.main, self.upper))
            y = main * x
            y[1:] += lower[1:] * x[:-1]
            y[:-1] += upper[:-1] * x[1:]
            return y
        y = np.einsum("nij,nj->ni", self.main, x)
        y[1:] += np.einsum("nij,nj->ni", self.lower[1:], x[:-1])
        y[:-1] += np.einsum("nij,nj->ni", self.upper[:-1], x[1:])
        return y

    def transpose(self) -> "TridiagonalMatrix":
        if self.main.ndim == 1:
            lower = np.zeros_like(self.lower)
            upper = np.zeros_like(self.upper)
            lower[1:] = self.upper[:-1]
            upper[:-1] = self.lower[1:]
            return TridiagonalMatrix(lower, self.main.copy(), upper)
        lower = np.zeros_like(self.lower)
        upper = np.zeros_like(self.upper)
        lower[1:] = np.swapaxes(self.upper[:-1], 1, 2)
        upper[:-1] = np.swapaxes(self.lower[1:], 1, 2)
        return TridiagonalMatrix(lower, np.swapaxes(self.main, 1, 2).copy(), upper)


def kron_identity(a: TridiagonalMatrix, m: int = 3) -> TridiagonalMatrix:
    """Block matrix with blocks a_ij * I_m (the same scalar operator on each field)"""
    eye = np.eye(m)
    return TridiagonalMatrix(
        a.lower[:, None, None] * eye, a.main[:, None, None] * eye, a.upper[:, None, None] * eye
    )


def assemble_mass(mesh: Mesh1D) -> TridiagonalMatrix:
    """Consistent mass matrix M_jk = integral of phi_j * phi_k"""
    h = mesh.h
    main = np.full(mesh.nod, 2.0 * h / 3.0)
    main[0] = main[-1] = h / 3.0
    off = np.full(mesh.nod, h / 6.0)
    lower = off.copy()
    upper = off.copy()
    lower[0] = 0.0
    upper[-1] = 0.0
    return TridiagonalMatrix(lower, main, upper)


def assemble_weighted_stiffness(mesh: Mesh1D, w) -> TridiagonalMatrix:
    """
    Stiffness matrix K_jk = integral of w * phi_j' * phi_k' for a nodal weight w.

    The weight enters through its element midpoint value (w_left + w_right)/2,
    which is exact for a linear weight since the gradients are element-constant.
    """
    w = np.broadcast_to(np.asarray(w, dtype=float), (mesh.nod,))
    k = 0.5 * (w[:-1] + w[1:]) / mesh.h
    main = np.zeros(mesh.nod)
    main[:-1] += k
    main[1:] += k
    lower = np.zeros(mesh.nod)
    upper = np.zeros(mesh.nod)
    upper[:-1] = -k
    lower[1:] = -k
    return TridiagonalMatrix(lower, main, upper)


def assemble_stiffness(mesh: Mesh1D) -> TridiagonalMatrix:
    return assemble_weighted_stiffness(mesh, 1.0)


def gauss_coordinates(mesh: Mesh1D) -> np.ndarray:
    """Physical quadrature points, shape (n_elements, 3)"""
    return mesh.nodes[:-1, None] + mesh.h * GAUSS_POINTS[None, :]


def at_gauss(v: np.ndarray) -> np.ndarray:
    """Interpolate nodal values (nod, ...) to the quadrature points (n_elements, 3, ...)"""
    v = np.asarray(v, dtype=float)
    extra = (None,) * (v.ndim - 1)
    left = PHI_LEFT[(None, slice(None)) + extra]
    right = PHI_RIGHT[(None, slice(None)) + extra]
    return v[:-1, None] * left + v[1:, None] * right


def element_gradients(mesh: Mesh1D, v: np.ndarray) -> np.ndarray:
    """Element-constant derivative of the interpolant, shape (n_elements, ...)"""
    v = np.asarray(v, dtype=float)
    return (v[1:] - v[:-1]) / mesh.h


def integrate(mesh: Mesh1D, values: np.ndarray) -> float:
    """Integral over [0, 1] of a field given at the quadrature points"""
    return float(mesh.h * np.einsum("eq,q->", values, GAUSS_WEIGHTS))


def assemble_load(mesh: Mesh1D, values: np.ndarray) -> np.ndarray:
    """Vector b_j = integral of f * phi_j for f given at the quadrature points (n_elements, 3, ...)"""
    weighted = mesh.h * values * GAUSS_WEIGHTS.reshape((1, 3) + (1,) * (values.ndim - 2))
    load = np.zeros((mesh.nod,) + values.shape[2:])
    load[:-1] += np.einsum("eq...,q->e...", weighted, PHI_LEFT)
    load[1:] += np.einsum("eq...,q->e...", weighted, PHI_RIGHT)
    return load


def assemble_weighted_mass(mesh: Mesh1D, c: np.ndarray) -> TridiagonalMatrix:
    """
    Matrix of integral c * phi_j * phi_k for a coefficient given at the quadrature points.

    c has shape (n_elements, 3) for a scalar matrix or (n_elements, 3, m, m)
    for a block matrix whose blocks weight the coupling between fields.
    """
    shape = (1, 3) + (1,) * (c.ndim - 2)
    wc = mesh.h * c * GAUSS_WEIGHTS.reshape(shape)
    m_ll = np.einsum("eq...,q->e...", wc, PHI_LEFT * PHI_LEFT)
    m_lr = np.einsum("eq...,q->e...", wc, PHI_LEFT * PHI_RIGHT)
    m_rr = np.einsum("eq...,q->e...", wc, PHI_RIGHT * PHI_RIGHT)
    tail = c.shape[2:]
    main = np.zeros((mesh.nod,) + tail)
    lower = np.zeros((mesh.nod,) + tail)
    upper = np.zeros((mesh.nod,) + tail)
    main[:-1] += m_ll
    main[1:] += m_rr
    upper[:-1] = m_lr
    lower[1:] = m_lr
    return TridiagonalMatrix(lower, main, upper)


@njit(cache=True)
def _block_thomas(lower, main, upper, rhs, pivot_tol):
    """Block Thomas elimination; returns (failed block row or -1, solution)"""
    n = main.shape[0]
    m = main.shape[1]
    cp = np.zeros((n, m, m))
    dp = np.zeros((n, m))
    x = np.zeros((n, m))
    aug = np.empty((m, 2 * m + 1))

    for i in range(n):
        for r in range(m):
            for c in range(m):
                acc = main[i, r, c]
                if i > 0:
                    for k in range(m):
                        acc -= lower[i, r, k] * cp[i - 1, k, c]
                aug[r, c] = acc
            acc = rhs[i, r]
            if i > 0:
                for k in range(m):
                    acc -= lower[i, r, k] * dp[i - 1, k]
            aug[r, m] = acc
            for c in range(m):
                aug[r, m + 1 + c] = upper[i, r, c]

        scale = 0.0
        for r in range(m):
            for c in range(m):
                scale = max(scale, abs(aug[r, c]))
        if scale == 0.0:
            return i, x

        # Gauss-Jordan with partial pivoting on the pivot block
        for col in range(m):
            p = col
            best = abs(aug[col, col])
            for r in range(col + 1, m):
                if abs(aug[r, col]) > best:
                    best = abs(aug[r, col])
                    p = r
            if best <= pivot_tol * scale:
                return i, x
            if p != col:
                for c in range(2 * m + 1):
                    tmp = aug[col, c]
                    aug[col, c] = aug[p, c]
                    aug[p, c] = tmp
            piv = aug[col, col]
            for c in range(2 * m + 1):
                aug[col, c] /= piv
            for r in range(m):
                if r != col:
                    f = aug[r, col]
                    if f != 0.0:
                        for c in range(2 * m + 1):
                            aug[r, c] -= f * aug[col, c]

        for r in range(m):
            dp[i, r] = aug[r, m]
            for c in range(m):
                cp[i, r, c] = aug[r, m + 1 + c]

    for r in range(m):
        x[n - 1, r] = dp[n - 1, r]
    for i in range(n - 2, -1, -1):
        for r in range(m):
            acc = dp[i, r]
            for c in range(m):
                acc -= cp[i, r, c] * x[i + 1, c]
            x[i, r] = acc
    return -1, x


def solve_block_tridiagonal(a: TridiagonalMatrix, b: np.ndarray, pivot_tol: float = None) -> np.ndarray:
    """
    Solve A x = b for a scalar or block tridiagonal A.

    Args:
        a: System matrix
        b: Right-hand side, shape (n,) for scalar or (n, m) for block systems
        pivot_tol: Pivot threshold relative to the largest entry of the
            current pivot block (default config.PIVOT_TOL)

    Returns:
        Solution with the shape of b

    Raises:
        SingularSystemError: If a pivot falls below the threshold
    """
    blocks = a.as_blocks()
    b = np.asarray(b, dtype=float)
    rhs = b.reshape(blocks.n, blocks.block_size)
    if rhs.shape[0] != blocks.n:
        raise ValueError(f"Right-hand side has {rhs.shape[0]} rows, matrix has {blocks.n}")
    tol = config.PIVOT_TOL if pivot_tol is None else pivot_tol
    failed, x = _block_thomas(
        np.ascontiguousarray(blocks.lower, dtype=float),
        np.ascontiguousarray(blocks.main, dtype=float),
        np.ascontiguousarray(blocks.upper, dtype=float),
        np.ascontiguousarray(rhs),
        float(tol),
    )
    if failed >= 0:
        raise SingularSystemError(failed)
    return x.reshape(b.shape)
