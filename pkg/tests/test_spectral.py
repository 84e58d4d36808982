import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings, strategies as st

from oracles import FROZEN, bit_reverse, circulant_eig_oracle, e_alpha
from paralpha.collocation import radau_tableau
from paralpha.spectral import (
    NotDiagonalizable,
    bitrev_table,
    char_poly,
    circulant_matrix,
    diagonalize_circulant,
    dif_butterfly,
    discriminant_poly,
    factor_step,
    forbidden_alphas,
    forward_transform,
    inverse_transform,
    stage_combine,
    tree_sum,
)


def test_circulant_matrix_matches_definition():
    np.testing.assert_array_equal(circulant_matrix(4, 0.3), e_alpha(4, 0.3))


@pytest.mark.parametrize("L", [1, 2, 4, 8])
@pytest.mark.parametrize("alpha", [1e-3, 0.5])
def test_eigen_matrices_match_oracle(L, alpha):
    v, d, v_inv = diagonalize_circulant(L, alpha).eigen_matrices()
    ov, od, ov_inv = circulant_eig_oracle(L, alpha)
    np.testing.assert_allclose(v, ov, atol=1e-13)
    np.testing.assert_allclose(d, od, atol=1e-15)
    np.testing.assert_allclose(v_inv, ov_inv, atol=1e-13)


def test_alpha_one_is_plain_dft():
    factors = diagonalize_circulant(8, 1.0, strict=False)
    x = np.random.default_rng(1).standard_normal((8, 1, 3)) + 0j
    out = forward_transform(x, factors)
    fft = np.fft.fft(x, axis=0)
    np.testing.assert_allclose(out, fft[bitrev_table(8)], atol=1e-12)


def test_alpha_range_enforced():
    for a in (0.0, 1.0, 1.5, -0.1):
        with pytest.raises(ValueError):
            diagonalize_circulant(4, a)


def test_non_power_of_two_rejected():
    with pytest.raises(ValueError, match="power of two"):
        forward_transform(np.zeros((6, 1, 1)), diagonalize_circulant(6, 0.1))


def test_bitrev_table():
    assert list(bitrev_table(8)) == [0, 4, 2, 6, 1, 5, 3, 7]
    for n in (1, 2, 16, 64):
        assert [bit_reverse(p, n) for p in range(n)] == list(bitrev_table(n))


def test_two_point_butterfly():
    a, b = np.array([1.0 + 2j]), np.array([3.0 - 1j])
    assert dif_butterfly(True, a, b, 1.0) == a + b
    assert dif_butterfly(False, b, a, 1.0) == a - b


@settings(max_examples=25, deadline=None)
@given(st.sampled_from([2, 4, 8, 16]), st.floats(1e-4, 0.9), st.integers(0, 2**32 - 1))
def test_transform_roundtrip(L, alpha, seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((L, 2, 3)) + 1j * rng.standard_normal((L, 2, 3))
    f = diagonalize_circulant(L, alpha)
    back = inverse_transform(forward_transform(x, f), f)
    np.testing.assert_allclose(back, x, atol=1e-12 * alpha ** (-1.0))


def test_tree_sum_order():
    terms = [np.array([1e16]), np.array([1.0]), np.array([-1e16]), np.array([1.0])]
    # ((t0 + t1) + (t2 + t3))
    assert tree_sum(terms)[0] == (1e16 + 1.0) + (-1e16 + 1.0)
    assert tree_sum([np.array([2.0])])[0] == 2.0


def test_stage_combine_matches_matmul():
    rng = np.random.default_rng(3)
    mat = rng.standard_normal((3, 3))
    x = rng.standard_normal((3, 5))
    np.testing.assert_allclose(stage_combine(mat, x), mat @ x, atol=1e-14)


@pytest.mark.parametrize("m", [2, 3, 4])
def test_factor_step_reconstructs(m):
    tab = radau_tableau(m)
    d = -0.3 * np.exp(-0.7j)
    sf = factor_step(tab, d)
    r = d / (1 + d)
    target = tab.q_matrix - r * np.outer(tab.nodes, np.eye(m)[-1])
    np.testing.assert_allclose(sf.s_matrix @ np.diag(sf.d_inner) @ sf.s_inverse, target, atol=1e-12)
    g = np.eye(m) + d * np.outer(np.ones(m), np.eye(m)[-1])
    np.testing.assert_allclose(sf.g_inverse @ g, np.eye(m), atol=1e-14)


def test_factor_step_singular_g():
    with pytest.raises(ZeroDivisionError):
        factor_step(radau_tableau(2), -1.0)


def test_defective_shift_detected():
    r_star = FROZEN["r_star_m2_true"][0]
    d_star = r_star / (1 - r_star)
    with pytest.raises(NotDiagonalizable):
        factor_step(radau_tableau(2), d_star)
    factor_step(radau_tableau(2), d_star * 1.01)


@pytest.mark.parametrize("m", [2, 3, 4, 5])
def test_char_poly_roots_are_eigenvalues(m):
    tab = radau_tableau(m)
    rng = np.random.default_rng(m)
    for _ in range(10):
        r = np.sqrt(rng.uniform()) * np.exp(2j * np.pi * rng.uniform())
        eig = np.linalg.eigvals(tab.q_matrix - r * np.outer(tab.nodes, np.eye(m)[-1]))
        roots = char_poly(tab, r).roots()
        np.testing.assert_allclose(np.sort_complex(roots), np.sort_complex(eig), atol=1e-8)


def test_char_poly_r_zero_is_q():
    tab = radau_tableau(3)
    np.testing.assert_allclose(np.sort_complex(char_poly(tab, 0).roots()),
                               np.sort_complex(np.linalg.eigvals(tab.q_matrix)), atol=1e-10)


@pytest.mark.parametrize("m,key", [(2, "p2_flipped"), (3, "p3_flipped")])
def test_flipped_coefficients_frozen(m, key):
    r = 0.37 - 0.2j
    np.testing.assert_allclose(char_poly(radau_tableau(m), r, flip_r=True).coefficients, FROZEN[key](r), atol=1e-14)


def test_flipped_roots_are_eigenvalues_of_plus_r():
    tab = radau_tableau(3)
    r = 0.4 + 0.1j
    eig = np.linalg.eigvals(tab.q_matrix + r * np.outer(tab.nodes, np.eye(3)[-1]))
    np.testing.assert_allclose(np.sort_complex(char_poly(tab, r, flip_r=True).roots()), np.sort_complex(eig), atol=1e-10)


@pytest.mark.parametrize("m,key", [(2, "disc_m2_flipped"), (3, "disc_m3_flipped")])
def test_discriminant_frozen(m, key):
    poly = discriminant_poly(radau_tableau(m), flip_r=True)
    coeffs = [int(c) for c in poly.all_coeffs()]
    assert coeffs == FROZEN[key] or [-c for c in coeffs] == FROZEN[key]


def test_true_discriminant_m2():
    r = sp.Symbol("r")
    poly = discriminant_poly(radau_tableau(2))
    assert sp.expand(poly.as_expr() + (9 * r**2 - 6 * r - 2)) == 0 or sp.expand(poly.as_expr() - (9 * r**2 - 6 * r - 2)) == 0


def test_forbidden_m3_flipped_roots():
    found = forbidden_alphas(radau_tableau(3), 1, flip_r=True)
    got = np.sort_complex([f.r_star for f in found])
    np.testing.assert_allclose(got, np.sort_complex(FROZEN["r_star_m3_flipped"]), atol=1e-4)


def test_forbidden_scales_with_L():
    one = forbidden_alphas(radau_tableau(2), 1)
    four = forbidden_alphas(radau_tableau(2), 4)
    np.testing.assert_allclose([f.alpha_star ** 4 for f in one], [f.alpha_star for f in four], rtol=1e-12)


def test_forbidden_m1_empty():
    assert forbidden_alphas(radau_tableau(1), 8) == []


def test_forbidden_dict_shape():
    d = forbidden_alphas(radau_tableau(2), 1)[0].to_dict()
    assert set(d) == {"r_re", "r_im", "alpha_star"}
