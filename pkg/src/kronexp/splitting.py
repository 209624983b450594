"""Directional splitting of φ-functions of Kronecker sums.

A splitting approximates ``phi_ell(tau K)``, ``K = A_d ⊕ ... ⊕ A_1``, by

    sum_i eta_i * phi_{l_i}(alpha_{i,d} tau A_d) ⊗ ... ⊗ phi_{l_i}(alpha_{i,1} tau A_1)

so that its action costs one Tucker operator per term. Coefficients are held
as high-precision closed forms (``mpmath``) and rounded to double only when
the small φ-matrices are built.
"""

from __future__ import annotations

import csv
import enum
import functools
import io
import itertools
import math
from dataclasses import dataclass, replace
from typing import Sequence

import mpmath
import numpy as np

from .phi import phi_matrix
from .tensor import OpCounter, tucker

_DPS = 50


class SplitVariant(enum.Enum):
    TWO_TERM_REAL_2D = "two_term_real_2d"
    TWO_TERM_COMPLEX = "two_term_complex"
    THREE_TERM_REAL = "three_term_real"
    SECOND_ORDER = "second_order"


class Branch(enum.Enum):
    PLUS = 1
    MINUS = -1


@dataclass(frozen=True)
class SplitTerm:
    eta: mpmath.mpc
    inner_ell: int
    alphas: tuple  # one mpmath.mpc per direction, alphas[0] is direction 1


@dataclass(frozen=True)
class SplitScheme:
    variant: SplitVariant
    ell: int
    d: int
    terms: tuple
    branch: Branch = Branch.PLUS

    @property
    def is_real(self) -> bool:
        vals = [t.eta for t in self.terms] + [a for t in self.terms for a in t.alphas]
        return all(mpmath.im(v) == 0 for v in vals)

    def with_eta(self, i: int, eta) -> "SplitScheme":
        """Copy with the weight of term ``i`` replaced (for negative controls)."""
        terms = list(self.terms)
        terms[i] = replace(terms[i], eta=mpmath.mpc(eta))
        return replace(self, terms=tuple(terms))

    def label(self) -> str:
        sign = "+" if self.branch is Branch.PLUS else "-"
        return f"{self.variant.value}[ell={self.ell},d={self.d},{sign}]"


def _c(re, im=0):
    return mpmath.mpc(re, im)


def _q(p, q=1):
    return mpmath.mpf(p) / q


def _table1(ell, sg):
    """Two-term, two-dimensional, real coefficients."""
    if ell == 1:
        r = mpmath.sqrt(10)
        eta1, eta2 = _q(-5, 4), _q(9)
        a11 = sg * 4 * r / 15 + _q(4, 3)
        a12 = -sg * 4 * r / 15 + _q(4, 3)
        a21 = sg * 2 * r / 9 + _q(16, 9)
        a22 = -sg * 2 * r / 9 + _q(16, 9)
    else:
        r = mpmath.sqrt(33)
        eta1, eta2 = _q(-4, 3), _q(22, 3)
        a11 = sg * r / 8 + _q(9, 8)
        a12 = -sg * r / 8 + _q(9, 8)
        a21 = sg * 3 * r / 22 + _q(3, 2)
        a22 = -sg * 3 * r / 22 + _q(3, 2)
    return [(_c(eta1), 1, (_c(a11), _c(a12))), (_c(eta2), 2, (_c(a21), _c(a22)))]


def _table2(ell, d, sg):
    """Two-term, d-dimensional, complex coefficients."""
    scale = mpmath.mpf(2) ** (d - 2)
    if ell == 1:
        r = mpmath.sqrt(2)
        eta1 = _c(_q(7, 4), sg * 3 * r / 2)
        a1 = _c(_q(12, 11), -sg * 4 * r / 11)
        eta2 = scale * _c(-3, -sg * 6 * r)
        a2 = _c(_q(4, 3), -sg * 2 * r / 3)
    else:
        r = mpmath.sqrt(3)
        eta1 = _c(_q(2, 3), sg * 2 * r / 3)
        a1 = _c(_q(3, 4), -sg * r / 4)
        eta2 = scale * _c(_q(-2, 3), -sg * 8 * r / 3)
        a2 = _c(_q(6, 7), -sg * 3 * r / 7)
    return [(eta1, 1, (a1,) * d), (eta2, 2, (a2,) * d)]


def _table3(ell, d, sg):
    """Three-term, d-dimensional, real coefficients."""
    scale = mpmath.mpf(2) ** (d - 3)
    if ell == 1:
        r = mpmath.sqrt(2991111)
        base, dev = _q(2243, 1350), _q(440521, 675) / r
        a_plus = 3 * (5161 + sg * r) / 15869
        a_minus = 3 * (5161 - sg * r) / 15869
        eta2, a2 = _q(-12544, 675) * scale, _q(45, 28)
    else:
        r = mpmath.sqrt(2391)
        base, dev = _q(19, 27), _q(151, 27) / r
        a_plus = 3 * (121 + sg * r) / 490
        a_minus = 3 * (121 - sg * r) / 490
        eta2, a2 = _q(-196, 27) * scale, _q(9, 7)
    return [
        (_c(base + sg * dev), 1, (_c(a_plus),) * d),
        (_c(eta2), 2, (_c(a2),) * d),
        (_c(base - sg * dev), 1, (_c(a_minus),) * d),
    ]


@functools.lru_cache(maxsize=None)
def coefficients(variant: SplitVariant, ell: int, d: int, branch: Branch = Branch.PLUS) -> SplitScheme:
    """Third-order splitting coefficients for ``phi_ell``, ``ell`` in {1, 2}."""
    variant = SplitVariant(variant)
    branch = Branch(branch)
    if ell not in (1, 2):
        raise ValueError(f"third-order splittings exist for ell in {{1, 2}}, got {ell}")
    sg = branch.value
    with mpmath.workdps(_DPS):
        if variant is SplitVariant.TWO_TERM_REAL_2D:
            if d != 2:
                raise ValueError("two-term real splitting requires d = 2")
            raw = _table1(ell, sg)
        elif variant is SplitVariant.TWO_TERM_COMPLEX:
            if d < 2:
                raise ValueError("two-term complex splitting requires d >= 2")
            raw = _table2(ell, d, sg)
        elif variant is SplitVariant.THREE_TERM_REAL:
            if d < 2:
                raise ValueError("three-term real splitting requires d >= 2")
            raw = _table3(ell, d, sg)
        else:
            raise ValueError(f"{variant} has no coefficient table; use second_order_scheme")
    terms = tuple(SplitTerm(eta, li, alphas) for eta, li, alphas in raw)
    return SplitScheme(variant, ell, d, terms, branch)


def second_order_scheme(ell: int, d: int) -> SplitScheme:
    """Single-term splitting ``ell!^(d-1) phi_ell(tau A_d) ⊗ ... ⊗ phi_ell(tau A_1)``.

    Second order in ``tau`` for ``d >= 2`` and exact for ``d = 1``.
    """
    if ell < 1:
        raise ValueError("ell must be >= 1")
    if d < 1:
        raise ValueError("d must be >= 1")
    eta = _c(math.factorial(ell) ** (d - 1))
    return SplitScheme(SplitVariant.SECOND_ORDER, ell, d, (SplitTerm(eta, ell, (_c(1),) * d),))


def real_variant(d: int) -> SplitVariant:
    """The real-arithmetic third-order variant used for dimension ``d``."""
    return SplitVariant.TWO_TERM_REAL_2D if d == 2 else SplitVariant.THREE_TERM_REAL


def exposed_schemes(d: int = 3) -> list[SplitScheme]:
    """Every distinct tabulated scheme (10 of them).

    The minus branch of the three-term table is the plus branch with terms 1
    and 3 swapped, so it is left out.
    """
    out = []
    for ell in (1, 2):
        for br in Branch:
            out.append(coefficients(SplitVariant.TWO_TERM_REAL_2D, ell, 2, br))
            out.append(coefficients(SplitVariant.TWO_TERM_COMPLEX, ell, d, br))
        out.append(coefficients(SplitVariant.THREE_TERM_REAL, ell, d, Branch.PLUS))
    return out


def _conditions(scheme: SplitScheme):
    """Multi-indices whose Taylor coefficients the scheme must match."""
    d = scheme.d
    idx = [(0,) * d]
    unit = [tuple(int(m == mu) for m in range(d)) for mu in range(d)]
    idx += unit
    idx += [tuple(2 * u for u in e) for e in unit]
    idx += [tuple(a + b for a, b in zip(unit[m], unit[n])) for m, n in itertools.combinations(range(d), 2)]
    if scheme.variant is SplitVariant.THREE_TERM_REAL:
        idx += [tuple(3 * u for u in e) for e in unit]
        idx += [
            tuple(a + b + c for a, b, c in zip(unit[m], unit[n], unit[p]))
            for m, n, p in itertools.combinations(range(d), 3)
        ]
    return idx


def _label(k) -> str:
    deg = sum(k)
    dirs = "".join(str(mu + 1) * km for mu, km in enumerate(k))
    return f"deg{deg}" + (f"[{dirs}]" if dirs else "")


def order_condition_labels(scheme: SplitScheme) -> list[str]:
    return [_label(k) for k in _conditions(scheme)]


def order_condition_residuals(scheme: SplitScheme) -> list[float]:
    """``|LHS - RHS|`` of each matching condition, in :func:`order_condition_labels` order.

    For the multi-index ``k`` (powers of ``tau A_mu``) the split expansion gives
    ``sum_i eta_i prod_mu alpha_{i,mu}^k_mu / (l_i + k_mu)!`` and the exact
    ``phi_ell(tau K)`` gives ``(|k|! / prod k_mu!) / (ell + |k|)!``.
    """
    res = []
    with mpmath.workdps(_DPS):
        for k in _conditions(scheme):
            deg = sum(k)
            lhs = mpmath.mpc(0)
            for t in scheme.terms:
                prod = t.eta
                for a, km in zip(t.alphas, k):
                    prod *= a**km / mpmath.factorial(t.inner_ell + km)
                lhs += prod
            multinom = mpmath.factorial(deg)
            for km in k:
                multinom /= mpmath.factorial(km)
            rhs = multinom / mpmath.factorial(scheme.ell + deg)
            res.append(float(abs(lhs - rhs)))
    return res


def _to_scalar(z):
    z = complex(z)
    return z.real if z.imag == 0 else z


@dataclass(frozen=True)
class PhiSplitOperator:
    """Precomputed per-direction φ-matrices of a splitting at a fixed step ``tau``."""

    d: int
    etas: tuple
    mats: tuple  # mats[i][mu - 1] = phi_{l_i}(tau alpha_{i,mu} A_mu)
    realify: bool = True

    @property
    def n_terms(self) -> int:
        return len(self.etas)


def precompute(scheme: SplitScheme, tau: float, As: Sequence, realify: bool = True,
               counter: OpCounter | None = None) -> PhiSplitOperator:
    if tau < 0:
        raise ValueError("tau must be non-negative")
    if len(As) != scheme.d:
        raise ValueError(f"scheme is {scheme.d}-dimensional but {len(As)} matrices were given")
    mats = []
    for t in scheme.terms:
        per_dir = []
        for alpha, A in zip(t.alphas, As):
            a = _to_scalar(alpha)
            per_dir.append(phi_matrix(t.inner_ell, (tau * a) * np.asarray(A)))
            if counter is not None:
                counter.phi_builds += 1
        mats.append(tuple(per_dir))
    etas = tuple(_to_scalar(t.eta) for t in scheme.terms)
    return PhiSplitOperator(scheme.d, etas, tuple(mats), realify)


def apply(op: PhiSplitOperator, T, counter: OpCounter | None = None) -> np.ndarray:
    """``sum_i eta_i T ×_1 P_i1 ... ×_d P_id``.

    With ``realify`` and a real ``T`` the imaginary part of the sum is
    dropped; its largest magnitude goes to ``counter.max_imag_residual``.
    """
    T = np.asarray(T)
    if T.ndim != op.d:
        raise ValueError(f"operator is {op.d}-dimensional, tensor has order {T.ndim}")
    out = None
    for eta, P in zip(op.etas, op.mats):
        term = eta * tucker(T, P, counter)
        out = term if out is None else out + term
    if op.realify and not np.iscomplexobj(T) and np.iscomplexobj(out):
        if counter is not None:
            counter.record_imag(np.max(np.abs(out.imag)) if out.size else 0.0)
        out = np.ascontiguousarray(out.real)
    return out


def coefficients_csv(schemes: Sequence[SplitScheme] | None = None, digits: int = 30) -> str:
    """Coefficient table with ``digits`` significant digits, one row per value."""
    if schemes is None:
        schemes = exposed_schemes()
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["variant", "branch", "ell", "d", "term", "inner_ell", "name", "real", "imag"])
    with mpmath.workdps(_DPS):
        for s in schemes:
            for i, t in enumerate(s.terms, start=1):
                rows = [(f"eta_{i}", t.eta)] + [(f"alpha_{i},{mu}", a) for mu, a in enumerate(t.alphas, start=1)]
                for name, z in rows:
                    w.writerow([s.variant.value, s.branch.name.lower(), s.ell, s.d, i, t.inner_ell, name,
                                mpmath.nstr(mpmath.re(z), digits, min_fixed=0, max_fixed=0),
                                mpmath.nstr(mpmath.im(z), digits, min_fixed=0, max_fixed=0)])
    return buf.getvalue()
