"""Exponential Runge-Kutta time stepping for Kronecker-sum systems.

Each component ``c`` of the state evolves as ``u_c' = K_c u_c + g_c(t, u)``
with ``K_c = A_{c,d} ⊕ ... ⊕ A_{c,1}``. The directionally split methods never
assemble ``K_c``; the ``*_dense`` methods do and serve as small-size oracles.
"""

from __future__ import annotations

import hashlib
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import splitting
from .phi import phi_matrix
from .splitting import SplitVariant
from .tensor import ORACLE_CAP, OpCounter, OracleCapError, assemble_kronsum, kronsum_apply, unvec, vec

Nonlinearity = Callable[[float, Sequence[np.ndarray]], Sequence[np.ndarray]]


class NumericalFailure(RuntimeError):
    """A non-finite value appeared in the state."""

    def __init__(self, step: int, method: str = ""):
        self.step = step
        self.method = method
        super().__init__(f"{method or 'integration'}: non-finite state after step {step}")


@dataclass
class ProblemSpec:
    """Semidiscrete system ``u_c' = K_c u_c + g_c(t, u_1, ..., u_m)``.

    ``As[c]`` lists the direction matrices ``A_{c,1} .. A_{c,d}`` of component
    ``c``; ``g`` maps ``(t, states)`` to one tensor per component.
    """

    As: list
    g: Nonlinearity
    initial: list
    T: float
    name: str = "problem"
    seed: int | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.As) != len(self.initial):
            raise ValueError("need one list of direction matrices per component")
        dims = np.shape(self.initial[0])
        for c, (mats, u0) in enumerate(zip(self.As, self.initial)):
            if np.shape(u0) != dims:
                raise ValueError(f"component {c} has dims {np.shape(u0)}, expected {dims}")
            if len(mats) != len(dims):
                raise ValueError(f"component {c}: {len(mats)} direction matrices for d={len(dims)}")
            for mu, (A, n) in enumerate(zip(mats, dims), start=1):
                if np.shape(A) != (n, n):
                    raise ValueError(f"component {c}, mu={mu}: matrix {np.shape(A)} vs extent {n}")

    @property
    def components(self) -> int:
        return len(self.initial)

    @property
    def dims(self) -> tuple:
        return tuple(np.shape(self.initial[0]))

    @property
    def d(self) -> int:
        return len(self.dims)

    @property
    def N(self) -> int:
        return int(np.prod(self.dims))


@dataclass
class RunReport:
    method: str
    steps: int
    tau: float
    tucker_ops: int
    kronsum_actions: int
    mu_mode_products: int
    phi_matrix_builds: int
    max_imag_residual: float
    wall_time: float
    states: list
    seed: int | None = None

    def digest(self) -> str:
        """SHA-256 over the final states and the operation counters."""
        h = hashlib.sha256()
        h.update(f"{self.method}|{self.steps}|{self.tau!r}|{self.tucker_ops}|{self.kronsum_actions}|"
                 f"{self.mu_mode_products}|{self.phi_matrix_builds}|{self.max_imag_residual!r}|{self.seed}"
                 .encode())
        for u in self.states:
            h.update(np.ascontiguousarray(u).tobytes())
        return h.hexdigest()

    def summary(self) -> dict:
        return {
            "method": self.method, "steps": self.steps, "tau": self.tau,
            "tucker_ops": self.tucker_ops, "kronsum_actions": self.kronsum_actions,
            "mu_mode_products": self.mu_mode_products, "phi_matrix_builds": self.phi_matrix_builds,
            "max_imag_residual": self.max_imag_residual, "wall_time": self.wall_time,
            "seed": self.seed, "digest": self.digest(),
        }


class _SplitBackend:
    """Per-component φ-actions through precomputed split operators."""

    def __init__(self, As, tau, schemes, counter):
        self.As = As
        self.counter = counter
        # schemes: {(ell, fraction): SplitScheme}
        self.ops = {key: splitting.precompute(s, key[1] * tau, As, counter=counter)
                    for key, s in schemes.items()}

    def linear(self, U):
        return kronsum_apply(U, self.As, self.counter)

    def phi(self, ell, frac, X):
        return splitting.apply(self.ops[(ell, frac)], X, self.counter)


class _DenseBackend:
    """Per-component φ-actions with assembled ``K`` and dense φ-matrices."""

    def __init__(self, As, tau, keys, counter, dims):
        self.dims = dims
        self.K = assemble_kronsum(As)
        self.counter = counter
        self.mats = {}
        for ell, frac in keys:
            self.mats[(ell, frac)] = phi_matrix(ell, (frac * tau) * self.K)
            counter.phi_builds += 1

    def linear(self, U):
        self.counter.kronsum += 1
        return unvec(self.K @ vec(U), self.dims)

    def phi(self, ell, frac, X):
        return unvec(self.mats[(ell, frac)] @ vec(X), self.dims)


def _as_float(x):
    return np.asarray(x, dtype=float) if not np.iscomplexobj(x) else np.asarray(x)


def _check_finite(states, step, method):
    for u in states:
        if not np.all(np.isfinite(u)):
            raise NumericalFailure(step, method)


def _etd2rk_loop(p, steps, backends, counter, method, monitor, monitor_every):
    tau = p.T / steps
    t = 0.0
    U = [_as_float(u).copy() for u in p.initial]
    m = p.components
    for n in range(steps):
        G = p.g(t, U)
        U2 = []
        for c in range(m):
            F = backends[c].linear(U[c]) + G[c]
            U2.append(U[c] + tau * backends[c].phi(1, 1, F))
        G2 = p.g(t + tau, U2)
        U = [U2[c] + tau * backends[c].phi(2, 1, G2[c] - G[c]) for c in range(m)]
        t = (n + 1) * tau
        _check_finite(U, n + 1, method)
        if monitor is not None and monitor_every and (n + 1) % monitor_every == 0:
            monitor(n + 1, t, U, counter)
    return U


_THIRD = 1.0 / 3.0
_TWO_THIRDS = 2.0 / 3.0


def _exprk3_loop(p, steps, backends, counter, method, monitor, monitor_every):
    tau = p.T / steps
    t = 0.0
    U = [_as_float(u).copy() for u in p.initial]
    m = p.components
    for n in range(steps):
        G = p.g(t, U)
        F = [backends[c].linear(U[c]) + G[c] for c in range(m)]
        U2 = [U[c] + (tau / 3) * backends[c].phi(1, _THIRD, F[c]) for c in range(m)]
        G2 = p.g(t + tau / 3, U2)
        U3 = []
        for c in range(m):
            b = backends[c]
            D2 = G2[c] - G[c]
            U3.append(U[c] + (2 * tau / 3) * b.phi(1, _TWO_THIRDS, F[c])
                      + (4 * tau / 3) * b.phi(2, _TWO_THIRDS, D2))
        G3 = p.g(t + 2 * tau / 3, U3)
        Unew = []
        for c in range(m):
            b = backends[c]
            D3 = G3[c] - G[c]
            Unew.append(U[c] + tau * b.phi(1, 1, F[c]) + (3 * tau / 2) * b.phi(2, 1, D3))
        U = Unew
        t = (n + 1) * tau
        _check_finite(U, n + 1, method)
        if monitor is not None and monitor_every and (n + 1) % monitor_every == 0:
            monitor(n + 1, t, U, counter)
    return U


_ETD2RK_KEYS = ((1, 1), (2, 1))
_EXPRK3_KEYS = ((1, _THIRD), (1, _TWO_THIRDS), (2, _TWO_THIRDS), (1, 1), (2, 1))


def _report(method, p, steps, counter, U, t0):
    return RunReport(
        method=method, steps=steps, tau=p.T / steps,
        tucker_ops=counter.tucker, kronsum_actions=counter.kronsum,
        mu_mode_products=counter.mu_mode, phi_matrix_builds=counter.phi_builds,
        max_imag_residual=counter.max_imag_residual,
        wall_time=time.perf_counter() - t0, states=U, seed=p.seed,
    )


def _check_steps(steps):
    if int(steps) != steps or steps < 1:
        raise ValueError(f"steps must be a positive integer, got {steps}")
    return int(steps)


def etd2rkds_integrate(p: ProblemSpec, steps: int, monitor=None, monitor_every: int = 0) -> RunReport:
    """ETD2RK with both φ-actions replaced by the second-order splitting."""
    steps = _check_steps(steps)
    t0 = time.perf_counter()
    tau = p.T / steps
    counter = OpCounter()
    schemes = {(ell, 1): splitting.second_order_scheme(ell, p.d) for ell in (1, 2)}
    backends = [_SplitBackend(As, tau, schemes, counter) for As in p.As]
    U = _etd2rk_loop(p, steps, backends, counter, "etd2rkds", monitor, monitor_every)
    return _report("etd2rkds", p, steps, counter, U, t0)


def resolve_variant(variant, d: int) -> SplitVariant:
    """Map ``"real"``/``"cplx"`` (or a :class:`SplitVariant`) to the table used for ``d``."""
    if isinstance(variant, str) and variant in ("real", "cplx"):
        variant = splitting.real_variant(d) if variant == "real" else SplitVariant.TWO_TERM_COMPLEX
    variant = SplitVariant(variant)
    if variant is SplitVariant.TWO_TERM_REAL_2D and d != 2:
        raise ValueError(f"variant {variant.value} needs d = 2, problem has d = {d}")
    if variant is SplitVariant.SECOND_ORDER:
        raise ValueError("the second-order splitting cannot drive a third-order method")
    return variant


def exprk3ds_integrate(p: ProblemSpec, steps: int, variant="real", branch=splitting.Branch.PLUS,
                       monitor=None, monitor_every: int = 0) -> RunReport:
    """Third-order exponential RK (c2=1/3, c3=2/3) with directionally split φ-actions.

    For ``d = 1`` the single-factor splitting is exact and is used regardless
    of ``variant``.
    """
    steps = _check_steps(steps)
    variant = resolve_variant(variant, p.d)
    t0 = time.perf_counter()
    tau = p.T / steps
    counter = OpCounter()
    if p.d == 1:
        make = lambda ell: splitting.second_order_scheme(ell, 1)  # noqa: E731
    else:
        make = lambda ell: splitting.coefficients(variant, ell, p.d, branch)  # noqa: E731
    schemes = {(ell, frac): make(ell) for ell, frac in _EXPRK3_KEYS}
    backends = [_SplitBackend(As, tau, schemes, counter) for As in p.As]
    name = "exprk3ds_cplx" if variant is SplitVariant.TWO_TERM_COMPLEX else "exprk3ds_real"
    U = _exprk3_loop(p, steps, backends, counter, name, monitor, monitor_every)
    return _report(name, p, steps, counter, U, t0)


def _dense_backends(p, tau, keys, counter, cap):
    cap = ORACLE_CAP if cap is None else cap
    if p.N > cap:
        raise OracleCapError(f"dense integrator needs N={p.N} <= oracle cap {cap}")
    return [_DenseBackend(As, tau, keys, counter, p.dims) for As in p.As]


def etd2rk_dense_integrate(p: ProblemSpec, steps: int, cap: int | None = None,
                           monitor=None, monitor_every: int = 0) -> RunReport:
    """ETD2RK with exact dense φ-actions (no splitting error)."""
    steps = _check_steps(steps)
    t0 = time.perf_counter()
    counter = OpCounter()
    backends = _dense_backends(p, p.T / steps, _ETD2RK_KEYS, counter, cap)
    U = _etd2rk_loop(p, steps, backends, counter, "etd2rk_dense", monitor, monitor_every)
    return _report("etd2rk_dense", p, steps, counter, U, t0)


def exprk3_dense_integrate(p: ProblemSpec, steps: int, cap: int | None = None,
                           monitor=None, monitor_every: int = 0) -> RunReport:
    """The third-order scheme with exact dense φ-actions."""
    steps = _check_steps(steps)
    t0 = time.perf_counter()
    counter = OpCounter()
    backends = _dense_backends(p, p.T / steps, _EXPRK3_KEYS, counter, cap)
    U = _exprk3_loop(p, steps, backends, counter, "exprk3_dense", monitor, monitor_every)
    return _report("exprk3_dense", p, steps, counter, U, t0)


METHODS = {
    "etd2rkds": etd2rkds_integrate,
    "exprk3ds_real": lambda p, steps, **kw: exprk3ds_integrate(p, steps, "real", **kw),
    "exprk3ds_cplx": lambda p, steps, **kw: exprk3ds_integrate(p, steps, "cplx", **kw),
    "etd2rk_dense": etd2rk_dense_integrate,
    "exprk3_dense": exprk3_dense_integrate,
}

def tucker_ops_per_step(method: str, d: int) -> int:
    """Tucker operators per step and component, as performed by the step code."""
    if method == "etd2rkds":
        return 2
    if method in ("exprk3ds_real", "exprk3ds_cplx"):
        if d == 1:
            return 5
        return 15 if method == "exprk3ds_real" and d > 2 else 10
    return 0


def integrate(p: ProblemSpec, method: str, steps: int, **kw) -> RunReport:
    try:
        fn = METHODS[method]
    except KeyError:
        raise ValueError(f"unknown method {method!r}; choose from {sorted(METHODS)}") from None
    return fn(p, steps, **kw)


def reference_solution(p: ProblemSpec, base_steps: int, method: str = "exprk3ds_real", factor: int = 8) -> list:
    """Final states from ``factor * base_steps`` steps of ``method``."""
    return integrate(p, method, factor * base_steps).states


def error_inf(states, reference) -> float:
    """Absolute max-norm over all components."""
    return max(float(np.max(np.abs(np.asarray(u) - np.asarray(r)))) for u, r in zip(states, reference))


def fit_order(steps: Sequence[int], errors: Sequence[float]) -> float:
    """Least-squares slope of ``-log(error)`` against ``log(steps)``."""
    x = np.log(np.asarray(steps, dtype=float))
    y = np.log(np.asarray(errors, dtype=float))
    slope = np.polyfit(x, y, 1)[0]
    return float(-slope)
