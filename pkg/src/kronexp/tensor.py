"""Dense order-d tensors and the Kronecker-structured kernels acting on them.

Tensors are plain :class:`numpy.ndarray` objects of shape ``(n_1, ..., n_d)``.
The linearization used everywhere (``vec``/``unvec``, serialization, the dense
oracles) is column stacking: the first index runs fastest, so that

    (L_d ⊗ ... ⊗ L_1) vec(T) == vec(T ×_1 L_1 ×_2 ... ×_d L_d)

Directions ``mu`` are 1-based, ``1 <= mu <= d``.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass
from typing import Sequence

import numpy as np

#: Largest N = n_1 * ... * n_d for which the dense oracles assemble matrices.
ORACLE_CAP = 4096


class DimensionError(ValueError):
    """Raised when a matrix does not conform to the tensor direction it is applied to."""

    def __init__(self, mu: int, tensor_extent: int, matrix_shape: tuple):
        self.mu = mu
        self.tensor_extent = tensor_extent
        self.matrix_shape = tuple(matrix_shape)
        super().__init__(
            f"direction mu={mu}: tensor extent n_mu={tensor_extent} does not "
            f"match matrix of shape {self.matrix_shape}"
        )


class OracleCapError(ValueError):
    """Raised when a dense oracle would assemble a matrix larger than the cap."""


@dataclass
class OpCounter:
    """Cost accounting for the tensor kernels.

    Pass an instance through ``counter=`` to any kernel; counts accumulate.
    """

    mu_mode: int = 0
    tucker: int = 0
    kronsum: int = 0
    phi_builds: int = 0
    max_imag_residual: float = 0.0

    def record_imag(self, value: float) -> None:
        if value > self.max_imag_residual:
            self.max_imag_residual = float(value)


def vec(T: np.ndarray) -> np.ndarray:
    """Stack ``T`` by columns (first index fastest)."""
    return np.asarray(T).reshape(-1, order="F")


def unvec(v: np.ndarray, dims: Sequence[int]) -> np.ndarray:
    """Inverse of :func:`vec`; returns a C-contiguous tensor of shape ``dims``."""
    dims = tuple(int(n) for n in dims)
    v = np.asarray(v)
    if v.ndim != 1 or v.size != int(np.prod(dims)):
        raise ValueError(f"vector of size {v.size} cannot be reshaped to {dims}")
    return np.ascontiguousarray(v.reshape(dims, order="F"))


def _check(T: np.ndarray, L: np.ndarray, mu: int) -> None:
    d = T.ndim
    if not 1 <= mu <= d:
        raise ValueError(f"direction mu={mu} out of range 1..{d}")
    n = T.shape[mu - 1]
    if L.ndim != 2 or L.shape != (n, n):
        raise DimensionError(mu, n, L.shape)


def mu_mode_product(T, L, mu: int, counter: OpCounter | None = None) -> np.ndarray:
    """Multiply ``L`` onto the direction-``mu`` fibers of ``T``.

    ``S[..., i_mu, ...] = sum_j L[i_mu, j] T[..., j, ...]``. The tensor is viewed
    as a stack of ``(n_mu, prod(n_>mu))`` slabs and each slab is one GEMM.
    Real tensors times complex matrices promote to complex.
    """
    T = np.asarray(T)
    L = np.asarray(L)
    _check(T, L, mu)
    shape = T.shape
    n = shape[mu - 1]
    before = int(np.prod(shape[: mu - 1], dtype=np.int64))
    after = int(np.prod(shape[mu:], dtype=np.int64))
    X = np.ascontiguousarray(T)
    if after == 1:
        S = X.reshape(before, n) @ L.T
    elif before == 1:
        S = L @ X.reshape(n, after)
    else:
        S = np.matmul(L, X.reshape(before, n, after))
    if counter is not None:
        counter.mu_mode += 1
    return S.reshape(shape)


def tucker(T, Ls: Sequence, counter: OpCounter | None = None, order: Sequence[int] | None = None):
    """Tucker operator ``T ×_1 L_1 ×_2 ... ×_d L_d``.

    Modes are applied in ascending order unless ``order`` (a permutation of
    ``1..d``) is given; the result does not depend on it.
    """
    T = np.asarray(T)
    d = T.ndim
    if len(Ls) != d:
        raise ValueError(f"tucker needs {d} matrices, got {len(Ls)}")
    if order is None:
        order = range(1, d + 1)
    elif sorted(order) != list(range(1, d + 1)):
        raise ValueError(f"order {list(order)} is not a permutation of 1..{d}")
    for mu in order:
        _check(T, np.asarray(Ls[mu - 1]), mu)
    S = T
    for mu in order:
        S = mu_mode_product(S, Ls[mu - 1], mu, counter)
    if counter is not None:
        counter.tucker += 1
    return S


def kronsum_apply(T, As: Sequence, counter: OpCounter | None = None) -> np.ndarray:
    """Action of ``K = A_d ⊕ ... ⊕ A_1`` in tensor form: ``sum_mu T ×_mu A_mu``."""
    T = np.asarray(T)
    d = T.ndim
    if len(As) != d:
        raise ValueError(f"kronsum_apply needs {d} matrices, got {len(As)}")
    for mu in range(1, d + 1):
        _check(T, np.asarray(As[mu - 1]), mu)
    S = mu_mode_product(T, As[0], 1, counter)
    for mu in range(2, d + 1):
        S = S + mu_mode_product(T, As[mu - 1], mu, counter)
    if counter is not None:
        counter.kronsum += 1
    return S


def _oracle_size(mats: Sequence, cap: int | None) -> int:
    cap = ORACLE_CAP if cap is None else cap
    if len(mats) == 0:
        raise ValueError("need at least one matrix")
    N = 1
    for M in mats:
        M = np.asarray(M)
        if M.ndim != 2 or M.shape[0] != M.shape[1]:
            raise ValueError(f"expected square matrix, got shape {M.shape}")
        N *= M.shape[0]
    if N > cap:
        raise OracleCapError(f"assembled size N={N} exceeds oracle cap {cap}")
    return N


def assemble_kronprod(Ls: Sequence, cap: int | None = None) -> np.ndarray:
    """Dense ``L_d ⊗ ... ⊗ L_1``."""
    _oracle_size(Ls, cap)
    return functools.reduce(np.kron, [np.asarray(L) for L in reversed(Ls)])


def assemble_kronsum(As: Sequence, cap: int | None = None) -> np.ndarray:
    """Dense ``A_d ⊕ ... ⊕ A_1 = sum_mu I ⊗ ... ⊗ A_mu ⊗ ... ⊗ I``."""
    N = _oracle_size(As, cap)
    As = [np.asarray(A) for A in As]
    dtype = np.result_type(*As)
    K = np.zeros((N, N), dtype=dtype)
    for mu in range(len(As)):
        factors = [np.eye(A.shape[0], dtype=dtype) for A in As]
        factors[mu] = As[mu]
        K += functools.reduce(np.kron, reversed(factors))
    return K
