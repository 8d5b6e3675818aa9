"""Uniform interval grid and the discrete Neumann Laplacian.

The Laplacian uses second-order central differences with ghost-point
reflection at both ends, ``u[-1] = u[1]`` and ``u[M] = u[M-2]``.  The
resulting matrix is not symmetric, but it is self-adjoint in the
trapezoidal inner product ``<u, w> = sum_i c_i u_i w_i`` with
``c = h * (1/2, 1, ..., 1, 1/2)``.  All norms and Rayleigh quotients in the
package use this inner product.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import List

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp


@dataclass(frozen=True)
class Grid:
    L: float
    M: int

    def __post_init__(self):
        if not (np.isfinite(self.L) and self.L > 0):
            raise ValueError(f"interval length must be positive, got {self.L!r}")
        if int(self.M) != self.M or self.M < 3:
            raise ValueError(f"need at least 3 nodes, got {self.M!r}")
        object.__setattr__(self, "M", int(self.M))

    @property
    def h(self) -> float:
        return self.L / (self.M - 1)

    @cached_property
    def nodes(self) -> np.ndarray:
        x = np.linspace(0.0, self.L, self.M)
        x[-1] = self.L
        return x

    @cached_property
    def weights(self) -> np.ndarray:
        c = np.full(self.M, self.h)
        c[0] = c[-1] = 0.5 * self.h
        return c

    def inner(self, u, w):
        return np.sum(self.weights * u * w, axis=-1)

    def norm(self, u):
        return np.sqrt(np.abs(self.inner(u, np.conj(u))))

    def mean(self, u):
        return self.inner(u, np.ones(self.M)) / self.L


def make_grid(L: float = np.pi, M: int = 401) -> Grid:
    return Grid(float(L), M)


@dataclass(frozen=True)
class NeumannLaplacian:
    grid: Grid
    matrix: sp.csr_matrix

    def __matmul__(self, u):
        return self.matrix @ u

    def apply(self, u):
        """Apply along the last axis (works for ``(M,)`` and ``(k, M)`` arrays)."""
        u = np.asarray(u)
        if u.ndim == 1:
            return self.matrix @ u
        return (self.matrix @ u.reshape(-1, self.grid.M).T).T.reshape(u.shape)

    @cached_property
    def diagonal(self) -> np.ndarray:
        return self.matrix.diagonal()

    @cached_property
    def sym_offdiagonal(self) -> np.ndarray:
        """Off-diagonal of the symmetrized tridiagonal ``C^1/2 Lap C^-1/2``."""
        upper = self.matrix.diagonal(1)
        lower = self.matrix.diagonal(-1)
        return np.sqrt(upper * lower)

    def dense(self) -> np.ndarray:
        return self.matrix.toarray()


def neumann_laplacian(grid: Grid) -> NeumannLaplacian:
    M, h2 = grid.M, grid.h**2
    main = np.full(M, -2.0 / h2)
    upper = np.full(M - 1, 1.0 / h2)
    lower = np.full(M - 1, 1.0 / h2)
    # ghost-point reflection doubles the inward neighbour
    upper[0] = 2.0 / h2
    lower[-1] = 2.0 / h2
    mat = sp.diags([lower, main, upper], [-1, 0, 1], format="csr")
    return NeumannLaplacian(grid=grid, matrix=mat)


@dataclass(frozen=True)
class EigenPair:
    k: int
    mu_k: float
    phi_k: np.ndarray


def laplacian_eigenpairs(op: NeumannLaplacian, count: int) -> List[EigenPair]:
    """First ``count`` eigenpairs of ``-Lap``, ascending, unit trapezoidal norm.

    The kernel is known exactly, so ``mu_0`` is set to 0 and ``phi_0`` to the
    normalized constant.  Remaining eigenvectors are sign-fixed so that
    ``phi_k(0) > 0``.
    """
    grid = op.grid
    if not 1 <= count <= grid.M:
        raise ValueError(f"count must be in [1, {grid.M}], got {count}")
    mu, y = sla.eigh_tridiagonal(
        -op.diagonal, -op.sym_offdiagonal, select="i", select_range=(0, count - 1)
    )
    root_c = np.sqrt(grid.weights)
    pairs = []
    for k in range(count):
        if k == 0:
            phi = np.full(grid.M, 1.0 / np.sqrt(grid.L))
            pairs.append(EigenPair(0, 0.0, phi))
            continue
        phi = y[:, k] / root_c
        phi /= grid.norm(phi)
        if phi[0] < 0:
            phi = -phi
        pairs.append(EigenPair(k, float(mu[k]), phi))
    return pairs


def analytic_eigenvalues(L: float, count: int) -> np.ndarray:
    """Continuum Neumann eigenvalues ``(k pi / L)^2`` of ``-d^2/dx^2`` on ``(0, L)``."""
    k = np.arange(count)
    return (k * np.pi / L) ** 2


def discrete_eigenvalues(grid: Grid, count: int) -> np.ndarray:
    """Closed form for this stencil: ``(4 / h^2) sin^2(k pi h / (2 L))``."""
    k = np.arange(count)
    return 4.0 / grid.h**2 * np.sin(k * np.pi * grid.h / (2.0 * grid.L)) ** 2


def gradient(grid: Grid, v) -> np.ndarray:
    """Central-difference derivative; zero at both ends by the Neumann reflection."""
    v = np.asarray(v, dtype=float)
    out = np.zeros_like(v)
    out[..., 1:-1] = (v[..., 2:] - v[..., :-2]) / (2.0 * grid.h)
    return out
