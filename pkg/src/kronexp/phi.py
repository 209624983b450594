"""Small dense matrix φ-functions.

``phi_l(X) = sum_k X^k / (k + l)!`` with ``phi_0 = exp``. The production path
is a degree-13 Padé exponential with scaling and squaring; ``phi_l`` for
``l >= 1`` is read off the exponential of a block-augmented matrix. An
independent Taylor-series evaluator serves as the accuracy oracle.
"""

from __future__ import annotations

import math

import numpy as np
import scipy.linalg

from .tensor import ORACLE_CAP, OracleCapError

MAX_ELL = 4
THETA_13 = 5.37

# numerator coefficients of the [13/13] Padé approximant to exp
_PADE13 = (
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
)


def _as_square(A, name="A") -> np.ndarray:
    A = np.asarray(A)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"{name} must be a square matrix, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise ValueError(f"{name} has non-finite entries")
    if not np.issubdtype(A.dtype, np.inexact):
        A = A.astype(float)
    return A


def _check_ell(ell: int) -> int:
    ell = int(ell)
    if not 0 <= ell <= MAX_ELL:
        raise ValueError(f"phi order ell={ell} outside supported range 0..{MAX_ELL}")
    return ell


def expm(A) -> np.ndarray:
    """Matrix exponential, [13/13] Padé with scaling and squaring.

    The scaling exponent is ``s = max(0, ceil(log2(||A||_1 / 5.37)))``.
    """
    A = _as_square(A)
    n = A.shape[0]
    norm = np.linalg.norm(A, 1) if n else 0.0
    s = max(0, math.ceil(math.log2(norm / THETA_13))) if norm > 0 else 0
    A = A / 2.0**s
    b = _PADE13
    ident = np.eye(n, dtype=A.dtype)
    A2 = A @ A
    A4 = A2 @ A2
    A6 = A4 @ A2
    U = A @ (A6 @ (b[13] * A6 + b[11] * A4 + b[9] * A2)
             + b[7] * A6 + b[5] * A4 + b[3] * A2 + b[1] * ident)
    V = (A6 @ (b[12] * A6 + b[10] * A4 + b[8] * A2)
         + b[6] * A6 + b[4] * A4 + b[2] * A2 + b[0] * ident)
    R = scipy.linalg.solve(V - U, V + U)
    for _ in range(s):
        R = R @ R
    return R


def phi_matrices(ell: int, A) -> list[np.ndarray]:
    """Return ``[phi_0(A), ..., phi_ell(A)]`` from one augmented exponential.

    The block matrix ``[[A, I, 0, ..], [0, 0, I, ..], .., [0, .., 0]]`` of
    size ``n (ell + 1)`` has ``phi_j(A)`` in block ``(0, j)`` of its exponential.
    """
    ell = _check_ell(ell)
    A = _as_square(A)
    n = A.shape[0]
    if ell == 0:
        return [expm(A)]
    m = n * (ell + 1)
    B = np.zeros((m, m), dtype=A.dtype)
    B[:n, :n] = A
    ident = np.eye(n)
    for j in range(ell):
        B[j * n:(j + 1) * n, (j + 1) * n:(j + 2) * n] = ident
    E = expm(B)
    return [E[:n, j * n:(j + 1) * n].copy() for j in range(ell + 1)]


def phi_matrix(ell: int, A) -> np.ndarray:
    """``phi_ell(A)`` for a small dense square matrix (``ell = 0`` gives ``expm``)."""
    return phi_matrices(ell, A)[-1]


def phi_taylor(ell: int, A, tol: float = 1e-15) -> np.ndarray:
    """Series oracle for ``phi_ell(A)``.

    Sums the Taylor series of ``phi_0 .. phi_ell`` at ``A / 2^s`` with
    ``||A||_1 / 2^s <= 1/2`` and undoes the scaling with the doubling formula
    ``phi_l(2X) = 2^-l (phi_0(X) phi_l(X) + sum_{j=1}^{l} phi_j(X) / (l-j)!)``.
    """
    ell = _check_ell(ell)
    if tol < 1e-15:
        raise ValueError("tol must be >= 1e-15")
    A = _as_square(A)
    n = A.shape[0]
    norm = np.linalg.norm(A, 1) if n else 0.0
    s = max(0, math.ceil(math.log2(norm / 0.5))) if norm > 0 else 0
    X = A / 2.0**s
    x = norm / 2.0**s

    # ||phi_j(X)|| >= 1 / (3 j!) whenever ||X|| <= 1/2
    floor = tol / (3.0 * math.factorial(ell))
    phis = [np.eye(n, dtype=X.dtype) / math.factorial(j) for j in range(ell + 1)]
    P = np.eye(n, dtype=X.dtype)
    k = 0
    while 2.0 * x**(k + 1) / math.factorial(k + 1) > floor:
        k += 1
        if k > 200:
            raise RuntimeError("Taylor series failed to converge within 200 terms")
        P = P @ X
        for j in range(ell + 1):
            phis[j] = phis[j] + P / math.factorial(k + j)

    for _ in range(s):
        E = phis[0]
        phis = [E @ E] + [
            (E @ phis[l] + sum(phis[j] / math.factorial(l - j) for j in range(1, l + 1))) / 2.0**l
            for l in range(1, ell + 1)
        ]
    return phis[ell]


def phi_action_dense(ell: int, K, v, cap: int | None = None) -> np.ndarray:
    """``phi_ell(K) v`` with ``K`` dense; reference path for small assembled systems."""
    K = np.asarray(K)
    cap = ORACLE_CAP if cap is None else cap
    if K.shape[0] > cap:
        raise OracleCapError(f"dense phi action of size {K.shape[0]} exceeds cap {cap}")
    return phi_matrix(ell, K) @ np.asarray(v)
