"""Finite-difference Neumann discretizations and the two Turing-pattern benchmarks."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

from .integrators import ProblemSpec


@dataclass(frozen=True)
class GridSpec:
    """Uniform grid including boundary nodes, ``x_i = i h`` with ``h = L / (n - 1)``."""

    d: int
    n: int
    L: float

    def __post_init__(self):
        if self.n < 3:
            raise ValueError("need n >= 3 grid points per direction")

    @property
    def h(self) -> float:
        return self.L / (self.n - 1)

    @property
    def x(self) -> np.ndarray:
        return np.arange(self.n) * self.h

    @property
    def dims(self) -> tuple:
        return (self.n,) * self.d


def laplacian_1d_neumann(n: int, L: float = 1.0, delta: float = 1.0) -> np.ndarray:
    """``(delta / h^2) tridiag(1, -2, 1)`` with ghost-point Neumann rows.

    The first row is ``[-2, 2, 0, ...]`` and the last ``[..., 0, 2, -2]`` so
    every row sums to zero.
    """
    if n < 3:
        raise ValueError("need n >= 3")
    h = L / (n - 1)
    A = np.zeros((n, n))
    i = np.arange(n)
    A[i, i] = -2.0
    A[i[1:], i[:-1]] = 1.0
    A[i[:-1], i[1:]] = 1.0
    A[0, 1] = 2.0
    A[-1, -2] = 2.0
    return (delta / h**2) * A


@dataclass(frozen=True)
class SchnakenbergParams:
    delta_u: float = 1.0
    delta_v: float = 10.0
    rho: float = 1000.0
    a_u: float = 0.1
    a_v: float = 0.9
    seed: int = 0
    amplitude: float = 1e-5
    T: float = 2.0

    @property
    def equilibrium(self) -> tuple:
        s = self.a_u + self.a_v
        return s, self.a_v / s**2


@dataclass(frozen=True)
class FitzHughNagumoParams:
    delta_u: float = 1.0
    delta_v: float = 42.1887
    rho: float = 24.649
    a1_v: float = 11.0
    a2_v: float = 0.1
    seed: int = 0
    amplitude: float = 1e-3
    T: float = 150.0

    @property
    def equilibrium(self) -> tuple:
        return 0.0, 0.0


def _check_diffusivities(params):
    if params.delta_u <= 0 or params.delta_v <= 0:
        raise ValueError("diffusivities must be positive")


def uniform_noise(seed: int, dims, components: int = 2) -> list:
    """One independent U(0, 1) field per component.

    Streams come from ``numpy.random.SeedSequence(seed).spawn(components)``
    driving PCG64, so each component has its own reproducible stream.
    """
    children = np.random.SeedSequence(seed).spawn(components)
    return [np.random.Generator(np.random.PCG64(s)).random(dims) for s in children]


def schnakenberg_2d(n: int, params: SchnakenbergParams | None = None, T: float | None = None) -> ProblemSpec:
    p = params or SchnakenbergParams()
    _check_diffusivities(p)
    grid = GridSpec(2, n, 1.0)
    Lap = laplacian_1d_neumann(n, grid.L)
    As = [[p.delta_u * Lap, p.delta_u * Lap], [p.delta_v * Lap, p.delta_v * Lap]]
    rho, a_u, a_v = p.rho, p.a_u, p.a_v

    def g(t, states):
        u, v = states
        u2v = u * u * v
        return [rho * (a_u - u + u2v), rho * (a_v - u2v)]

    ue, ve = p.equilibrium
    noise = uniform_noise(p.seed, grid.dims)
    initial = [ue + p.amplitude * noise[0], ve + p.amplitude * noise[1]]
    return ProblemSpec(As=As, g=g, initial=initial, T=p.T if T is None else T,
                       name="schnakenberg2d", seed=p.seed, meta={"grid": grid, "params": p})


def fitzhugh_nagumo_3d(n: int, params: FitzHughNagumoParams | None = None, T: float | None = None) -> ProblemSpec:
    p = params or FitzHughNagumoParams()
    _check_diffusivities(p)
    grid = GridSpec(3, n, np.pi)
    Lap = laplacian_1d_neumann(n, grid.L)
    As = [[p.delta_u * Lap] * 3, [p.delta_v * Lap] * 3]
    rho, a1, a2 = p.rho, p.a1_v, p.a2_v

    def g(t, states):
        u, v = states
        return [rho * (-u * (u * u - 1.0) - v), (rho * a1) * (u - a2 * v)]

    noise = uniform_noise(p.seed, grid.dims)
    initial = [p.amplitude * noise[0], p.amplitude * noise[1]]
    return ProblemSpec(As=As, g=g, initial=initial, T=p.T if T is None else T,
                       name="fhn3d", seed=p.seed, meta={"grid": grid, "params": p})


MODELS = {"schnakenberg2d": (schnakenberg_2d, SchnakenbergParams),
          "fhn3d": (fitzhugh_nagumo_3d, FitzHughNagumoParams)}


def read_params(path, model: str, base=None):
    """Read ``key = value`` lines into the model's parameter dataclass.

    Blank lines and ``#`` comments are ignored; unknown keys are an error.
    """
    cls = MODELS[model][1]
    params = base or cls()
    known = {f.name: f.type for f in fields(cls)}
    updates = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key = value")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in known:
            raise ValueError(f"{path}:{lineno}: unknown parameter {key!r} for {model}")
        updates[key] = int(val) if key == "seed" else float(val)
    return replace(params, **updates)


def dominant_modes(U, grid: GridSpec, kmax: int = 10, threshold: float = 1e-12) -> list:
    """Cosine-mode content of ``U``, strongest first.

    Amplitudes of ``prod_mu cos(k_mu pi x_mu / L)`` for ``0 <= k_mu <= kmax``
    (excluding the constant; ``kmax`` is capped at ``n - 1``) from the trapezoid-weighted inner product, under
    which the sampled cosines are exactly orthogonal, so a grid field that is a
    single mode returns exactly its coefficient. Entries at or below
    ``threshold`` are dropped.
    """
    U = np.asarray(U, dtype=float)
    if U.ndim != grid.d:
        raise ValueError(f"field has order {U.ndim}, grid is {grid.d}-dimensional")
    kmax = min(kmax, grid.n - 1)
    w = np.ones(grid.n)
    w[[0, -1]] = 0.5
    k = np.arange(kmax + 1)
    C = np.cos(np.outer(k, grid.x) * np.pi / grid.L)  # (kmax+1, n)
    norms = (C * C) @ w
    coef = U - U.mean()
    for mu in range(grid.d):
        coef = np.moveaxis(np.tensordot(C * w, coef, axes=(1, mu)), 0, mu)
    denom = norms
    for _ in range(grid.d - 1):
        denom = np.multiply.outer(denom, norms)
    amp = np.abs(coef / denom)
    modes = []
    for idx in itertools.product(range(kmax + 1), repeat=grid.d):
        if any(idx) and amp[idx] > threshold:
            modes.append((idx, float(amp[idx])))
    modes.sort(key=lambda m: -m[1])
    return modes
