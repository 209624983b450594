import csv
import io
import math

import mpmath
import numpy as np
import pytest

from kronexp import splitting as S
from kronexp.phi import phi_matrix
from kronexp.splitting import Branch, SplitVariant
from kronexp.tensor import OpCounter, assemble_kronsum, vec

V2, VC, V3 = SplitVariant.TWO_TERM_REAL_2D, SplitVariant.TWO_TERM_COMPLEX, SplitVariant.THREE_TERM_REAL

# (variant, d) pairs with a coefficient table
TABLES = [(V2, 2), (VC, 2), (VC, 3), (VC, 4), (V3, 2), (V3, 3), (V3, 4)]


def _vals(scheme):
    """(eta, alpha_1) per term as Python complex numbers."""
    return [(complex(t.eta), complex(t.alphas[0])) for t in scheme.terms]


def _split_error(scheme, tau, As, T):
    out = S.apply(S.precompute(scheme, tau, As), T)
    ref = phi_matrix(scheme.ell, tau * assemble_kronsum(As)) @ vec(T)
    return np.linalg.norm(vec(out) - ref) / np.linalg.norm(ref)


# ---------------------------------------------------------------- tabulated values


def test_two_dimensional_real_ell1_values():
    r10 = math.sqrt(10)
    s = S.coefficients(V2, 1, 2, Branch.PLUS)
    (e1, a11), (e2, a21) = _vals(s)
    assert e1 == pytest.approx(-5 / 4, abs=1e-15)
    assert e2 == pytest.approx(9, abs=1e-15)
    assert a11 == pytest.approx(4 * r10 / 15 + 4 / 3, abs=1e-15)
    assert complex(s.terms[0].alphas[1]) == pytest.approx(-4 * r10 / 15 + 4 / 3, abs=1e-15)
    assert a21 == pytest.approx(2 * r10 / 9 + 16 / 9, abs=1e-15)
    assert [t.inner_ell for t in s.terms] == [1, 2]


def test_two_dimensional_real_ell2_minus_branch():
    r33 = math.sqrt(33)
    s = S.coefficients(V2, 2, 2, Branch.MINUS)
    assert complex(s.terms[0].eta) == pytest.approx(-4 / 3, abs=1e-15)
    assert complex(s.terms[1].eta) == pytest.approx(22 / 3, abs=1e-15)
    assert complex(s.terms[0].alphas[0]) == pytest.approx(-r33 / 8 + 9 / 8, abs=1e-15)
    assert complex(s.terms[1].alphas[1]) == pytest.approx(3 * r33 / 22 + 3 / 2, abs=1e-15)


def test_complex_ell2_d3_values():
    r3 = math.sqrt(3)
    s = S.coefficients(VC, 2, 3, Branch.PLUS)
    (e1, a1), (e2, a2) = _vals(s)
    assert e1 == pytest.approx(2 / 3 + 2j * r3 / 3, abs=1e-15)
    assert a1 == pytest.approx(3 / 4 - 1j * r3 / 4, abs=1e-15)
    assert e2 == pytest.approx(2 * (-2 / 3 - 8j * r3 / 3), abs=1e-14)
    assert a2 == pytest.approx(6 / 7 - 3j * r3 / 7, abs=1e-15)


def test_complex_ell1_conjugate_branches():
    p = _vals(S.coefficients(VC, 1, 4, Branch.PLUS))
    m = _vals(S.coefficients(VC, 1, 4, Branch.MINUS))
    for (ep, ap), (em, am) in zip(p, m):
        assert em == pytest.approx(ep.conjugate(), abs=1e-15)
        assert am == pytest.approx(ap.conjugate(), abs=1e-15)
    assert p[1][0] == pytest.approx(4 * (-3 - 6j * math.sqrt(2)), abs=1e-13)


def test_three_term_ell1_d3_values():
    s = S.coefficients(V3, 1, 3)
    r = math.sqrt(2991111)
    assert complex(s.terms[1].eta).real == pytest.approx(-12544 / 675, abs=1e-13)
    assert complex(s.terms[1].alphas[0]).real == pytest.approx(45 / 28, abs=1e-15)
    assert complex(s.terms[0].eta).real == pytest.approx(2243 / 1350 + 440521 / (675 * r), abs=1e-14)
    assert complex(s.terms[2].alphas[2]).real == pytest.approx(3 * (5161 - r) / 15869, abs=1e-15)
    assert [t.inner_ell for t in s.terms] == [1, 2, 1]
    assert s.is_real


def test_three_term_weight_scales_with_dimension():
    for d in (2, 3, 4, 5):
        eta2 = complex(S.coefficients(V3, 2, d).terms[1].eta).real
        assert eta2 == pytest.approx(-196 / 27 * 2.0 ** (d - 3), rel=1e-15)


def test_three_term_minus_branch_swaps_terms():
    p = S.coefficients(V3, 1, 3, Branch.PLUS)
    m = S.coefficients(V3, 1, 3, Branch.MINUS)
    assert p.terms[0] == m.terms[2] and p.terms[2] == m.terms[0]


def test_exposed_schemes():
    schemes = S.exposed_schemes()
    assert len(schemes) == 10
    assert len({s.label() for s in schemes}) == 10


# ---------------------------------------------------------------- order conditions


@pytest.mark.parametrize("variant,d", TABLES)
@pytest.mark.parametrize("ell", [1, 2])
@pytest.mark.parametrize("branch", list(Branch))
def test_order_conditions_hold(variant, d, ell, branch):
    s = S.coefficients(variant, ell, d, branch)
    assert max(S.order_condition_residuals(s)) <= 1e-12


def test_three_term_includes_cubic_conditions():
    labels = S.order_condition_labels(S.coefficients(V3, 1, 3))
    assert "deg3[111]" in labels and "deg3[123]" in labels
    assert "deg3[111]" not in S.order_condition_labels(S.coefficients(VC, 1, 3))


def test_perturbed_weight_is_detected():
    s = S.coefficients(V2, 1, 2)
    bad = s.with_eta(0, s.terms[0].eta + mpmath.mpf("1e-3"))
    res = S.order_condition_residuals(bad)
    assert res[0] == pytest.approx(1e-3, rel=1e-6)
    assert 1e-3 <= max(res) <= 1e-2


@pytest.mark.parametrize("ell,d", [(1, 2), (2, 3), (1, 4)])
def test_second_order_scheme_residual_pattern(ell, d):
    s = S.second_order_scheme(ell, d)
    labels = S.order_condition_labels(s)
    res = dict(zip(labels, S.order_condition_residuals(s)))
    for lab, r in res.items():
        if lab.startswith(("deg0", "deg1")):
            assert r <= 1e-30, lab
    assert max(r for lab, r in res.items() if lab.startswith("deg2")) > 1e-3


@pytest.mark.parametrize("ell,d,eta", [(1, 2, 1), (2, 3, 4), (2, 1, 1), (3, 2, 6)])
def test_second_order_weight(ell, d, eta):
    assert complex(S.second_order_scheme(ell, d).terms[0].eta) == eta


@pytest.mark.parametrize("variant,ell,d", [(V2, 1, 3), (VC, 1, 1), (V3, 3, 3), (SplitVariant.SECOND_ORDER, 1, 2)])
def test_unsupported_combinations(variant, ell, d):
    with pytest.raises(ValueError):
        S.coefficients(variant, ell, d)


# ---------------------------------------------------------------- numerical operators


def test_precompute_at_zero_step(rng):
    As = [rng.standard_normal((3, 3)) for _ in range(3)]
    op = S.precompute(S.coefficients(V3, 1, 3), 0.0, As)
    for t, mats in zip(S.coefficients(V3, 1, 3).terms, op.mats):
        for P in mats:
            np.testing.assert_allclose(P, np.eye(3) / math.factorial(t.inner_ell), atol=1e-15)


@pytest.mark.parametrize("variant,ell", [(VC, 1), (VC, 2), (V3, 1), (V3, 2)])
def test_zero_step_reproduces_phi_of_zero(rng, variant, ell):
    T = rng.standard_normal((3, 4, 2))
    As = [rng.standard_normal((n, n)) for n in T.shape]
    out = S.apply(S.precompute(S.coefficients(variant, ell, 3), 0.0, As), T)
    np.testing.assert_allclose(out, T / math.factorial(ell), atol=1e-13)


def test_second_order_single_term_is_phi_of_factor(rng):
    As = [rng.standard_normal((4, 4)) for _ in range(2)]
    op = S.precompute(S.second_order_scheme(1, 2), 0.1, As)
    np.testing.assert_allclose(op.mats[0][0], phi_matrix(1, 0.1 * As[0]), atol=1e-15)


def test_complex_terms_are_not_conjugate_pairs(rng):
    As = [rng.standard_normal((3, 3)) for _ in range(2)]
    op = S.precompute(S.coefficients(VC, 1, 2), 0.1, As)
    P1, P2 = op.mats[0][0], op.mats[1][0]
    assert np.max(np.abs(P2 - P1.conj())) > 1e-3


def test_zero_tensor_maps_to_zero(rng):
    As = [rng.standard_normal((3, 3)) for _ in range(3)]
    out = S.apply(S.precompute(S.coefficients(VC, 2, 3), 0.1, As), np.zeros((3, 3, 3)))
    assert out.dtype == np.float64 and not out.any()


def test_three_term_output_is_exactly_real(rng):
    As = [rng.standard_normal((4, 4)) for _ in range(3)]
    c = OpCounter()
    out = S.apply(S.precompute(S.coefficients(V3, 2, 3), 0.1, As), rng.standard_normal((4, 4, 4)), c)
    assert out.dtype == np.float64
    assert c.max_imag_residual == 0.0


@pytest.mark.parametrize("ell", [1, 2])
def test_complex_imaginary_residual_is_third_order(rng, ell):
    As = [rng.standard_normal((4, 4)) for _ in range(3)]
    T = rng.standard_normal((4, 4, 4))
    s = S.coefficients(VC, ell, 3)
    res = []
    for tau in (0.1, 0.05, 0.025):
        c = OpCounter()
        S.apply(S.precompute(s, tau, As), T, c)
        res.append(c.max_imag_residual)
    assert 6.5 <= res[0] / res[1] <= 9.5
    assert 6.5 <= res[1] / res[2] <= 9.5


def test_realify_off_keeps_complex(rng):
    As = [rng.standard_normal((3, 3)) for _ in range(2)]
    op = S.precompute(S.coefficients(VC, 1, 2), 0.1, As, realify=False)
    assert np.iscomplexobj(S.apply(op, rng.standard_normal((3, 3))))


@pytest.mark.parametrize("seed", range(3))
@pytest.mark.parametrize("variant,d", [t for t in TABLES if t[1] <= 3])
@pytest.mark.parametrize("ell", [1, 2])
def test_third_order_error_ratio(seed, variant, d, ell):
    rng = np.random.default_rng(seed)
    As = [rng.standard_normal((4, 4)) for _ in range(d)]
    T = rng.standard_normal((4,) * d)
    s = S.coefficients(variant, ell, d)
    e = [_split_error(s, tau, As, T) for tau in (0.1, 0.05, 0.025)]
    assert 6.5 <= e[0] / e[1] <= 9.5
    assert 6.5 <= e[1] / e[2] <= 9.5


@pytest.mark.parametrize("d", [2, 3])
@pytest.mark.parametrize("ell", [1, 2])
def test_second_order_error_ratio(rng, d, ell):
    As = [rng.standard_normal((4, 4)) for _ in range(d)]
    T = rng.standard_normal((4,) * d)
    s = S.second_order_scheme(ell, d)
    e = [_split_error(s, tau, As, T) for tau in (0.1, 0.05, 0.025)]
    assert 3.4 <= e[0] / e[1] <= 4.6
    assert 3.4 <= e[1] / e[2] <= 4.6


def test_one_dimensional_single_term_is_exact(rng):
    A = rng.standard_normal((5, 5))
    T = rng.standard_normal(5)
    assert _split_error(S.second_order_scheme(2, 1), 0.3, [A], T) <= 1e-14


# ---------------------------------------------------------------- export


def test_coefficients_csv_digits():
    text = S.coefficients_csv()
    rows = list(csv.DictReader(io.StringIO(text)))
    assert rows
    sample = next(r for r in rows if r["variant"] == V2.value and r["name"] == "alpha_1,1")
    mant = sample["real"].lstrip("-").split("e")[0].replace(".", "").lstrip("0")
    assert len(mant) >= 30
    with mpmath.workdps(40):
        exact = 4 * mpmath.sqrt(10) / 15 + mpmath.mpf(4) / 3
        assert abs(mpmath.mpf(sample["real"]) - exact) < mpmath.mpf("1e-29")
