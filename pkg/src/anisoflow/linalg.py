"""Cyclic block tridiagonal linear solves with 2x2 blocks.

The Newton systems couple each node to its two cyclic neighbours:

    L_i x_{i-1} + D_i x_i + U_i x_{i+1} = b_i,   i = 0..J-1 (mod J).

Interleaving the two components per node turns the acyclic part into a
scalar banded matrix of bandwidth 3, solved by LAPACK.  The wrap-around
coupling is removed by condensing on the last node: solve the banded system
for the right-hand side plus the two coupling columns, then a single 2x2
solve recovers the last node (a rank-2 correction).  A dense solver is kept
for cross-validation at small sizes.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import solve_banded


def cyclic_block_tridiag_matvec(L, D, U, x):
    """y_i = L_i x_{i-1} + D_i x_i + U_i x_{i+1} (cyclic)."""
    y = np.einsum("ijk,ik->ij", D, x)
    y += np.einsum("ijk,ik->ij", L, np.roll(x, 1, axis=0))
    y += np.einsum("ijk,ik->ij", U, np.roll(x, -1, axis=0))
    return y


def cyclic_block_tridiag_dense(L, D, U):
    """Assemble the full (2J, 2J) matrix; for tests and small fallbacks."""
    J = D.shape[0]
    A = np.zeros((2 * J, 2 * J))
    for i in range(J):
        A[2 * i:2 * i + 2, 2 * i:2 * i + 2] = D[i]
        im = (i - 1) % J
        ip = (i + 1) % J
        A[2 * i:2 * i + 2, 2 * im:2 * im + 2] += L[i]
        A[2 * i:2 * i + 2, 2 * ip:2 * ip + 2] += U[i]
    return A


def solve_cyclic_block_tridiag_dense(L, D, U, b):
    """Dense reference solve; O(J^3) but exact sparsity-free arithmetic."""
    A = cyclic_block_tridiag_dense(L, D, U)
    x = np.linalg.solve(A, np.asarray(b, float).reshape(-1))
    return x.reshape(-1, 2)


def _banded_from_blocks(Ld, Dd, Ud):
    """Scalar banded storage (l = u = 3) of an acyclic block tridiagonal matrix.

    Ld[i] couples row-block i to column-block i-1 (Ld[0] unused), Ud[i] to
    column-block i+1 (Ud[-1] unused).
    """
    n = Dd.shape[0]
    N = 2 * n
    ab = np.zeros((7, N))
    # ab[3 + i - j, j] = A[i, j]
    ab[3, 0::2] = Dd[:, 0, 0]
    ab[3, 1::2] = Dd[:, 1, 1]
    ab[2, 1::2] = Dd[:, 0, 1]       # A[2i, 2i+1]
    ab[4, 0::2] = Dd[:, 1, 0]       # A[2i+1, 2i]
    if n > 1:
        ab[2, 2::2] = Ud[:-1, 1, 0]     # A[2i+1, 2i+2]
        ab[1, 2::2] = Ud[:-1, 0, 0]     # A[2i, 2i+2]
        ab[1, 3::2] = Ud[:-1, 1, 1]     # A[2i+1, 2i+3]
        ab[0, 3::2] = Ud[:-1, 0, 1]     # A[2i, 2i+3]
        ab[4, 1:-1:2] = Ld[1:, 0, 1]    # A[2i+2, 2i+1]
        ab[5, 0:-2:2] = Ld[1:, 0, 0]    # A[2i+2, 2i]
        ab[5, 1:-1:2] = Ld[1:, 1, 1]    # A[2i+3, 2i+1]
        ab[6, 0:-2:2] = Ld[1:, 1, 0]    # A[2i+3, 2i]
    return ab


def solve_cyclic_block_tridiag(L, D, U, b):
    """Solve the cyclic system; returns x of shape (J, 2).

    Condensation on the last node: with y = x_{J-1}, rows 0..J-2 form an
    acyclic banded system T x' = b' - C y whose only y-couplings are L_0
    (row 0) and U_{J-2} (row J-2); solving T against [b', C] and substituting
    into the last row leaves a single 2x2 system for y.
    """
    L = np.asarray(L, float)
    D = np.asarray(D, float)
    U = np.asarray(U, float)
    b = np.asarray(b, float)
    J = D.shape[0]
    if J < 3:
        raise ValueError("cyclic block tridiagonal systems need J >= 3")
    n = J - 1
    ab = _banded_from_blocks(L[:n], D[:n], U[:n])
    rhs = np.zeros((2 * n, 3))
    rhs[:, 0] = b[:n].reshape(-1)
    rhs[0:2, 1:3] = L[0]
    rhs[2 * n - 2:2 * n, 1:3] += U[n - 1]
    sol = solve_banded((3, 3), ab, rhs)
    xb = sol[:, 0].reshape(n, 2)
    xc = sol[:, 1:3].reshape(n, 2, 2)
    # last row: L_{J-1} x_{J-2} + D_{J-1} y + U_{J-1} x_0 = b_{J-1}
    A2 = (D[J - 1]
          - L[J - 1] @ xc[n - 1]
          - U[J - 1] @ xc[0])
    r2 = b[J - 1] - L[J - 1] @ xb[n - 1] - U[J - 1] @ xb[0]
    y = np.linalg.solve(A2, r2)
    x = np.empty((J, 2))
    x[:n] = xb - xc @ y
    x[J - 1] = y
    return x
