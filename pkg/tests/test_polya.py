import math

import numpy as np
import pytest

from polycert import polya
from polycert.polycore import (
    MatrixPolynomial,
    exponents,
    multi_exponents,
    multihomogenize,
    sample_simplex,
)

rng = np.random.default_rng(1)


def simplex_sum(l, groups=None):
    groups = groups or (("a", l),)
    return MatrixPolynomial(groups, {tuple(int(i == k) for i in range(l)): 1.0 for k in range(l)})


def random_homogeneous(l, d, n, sym=False):
    terms = {}
    for e in exponents(l, d):
        M = rng.normal(size=(n, n))
        terms[e] = M + M.T if sym else M
    return MatrixPolynomial.single(l, terms)


def test_beta_worked_example():
    beta = polya.compute_beta(2, 1, 1)
    np.testing.assert_array_equal(beta, [[1, 1, 0], [0, 1, 1]])


def test_H_worked_example():
    A1, A2 = rng.normal(size=(2, 2, 2))
    A = MatrixPolynomial.single(2, {(1, 0): A1, (0, 1): A2})
    H = polya.compute_H(A, 2, 1, 1, 1)
    Z = np.zeros((2, 2))
    want = [[A1, A1 + A2, A2, Z], [Z, A1, A1 + A2, A2]]
    for h in range(2):
        for g in range(4):
            np.testing.assert_allclose(H[h, g], want[h][g], atol=1e-15)


def test_beta_identity_at_zero():
    np.testing.assert_array_equal(polya.compute_beta(3, 2, 0), np.eye(6))


def test_beta_column_sums():
    # sum over h of beta equals coefficients of (sum a)^2 * (sum a) when P is the all-ones pattern
    beta = polya.compute_beta(3, 1, 2)
    s = simplex_sum(3)
    target = s * s * s
    for j, g in enumerate(exponents(3, 3)):
        assert beta[:, j].sum() == pytest.approx(float(target.coef(g)))


def test_H_zero():
    A = MatrixPolynomial.single(2, {(1, 0): np.zeros((2, 2)), (0, 1): np.zeros((2, 2))})
    assert not np.any(polya.compute_H(A, 2, 2, 1, 2))


def test_H_degree_mismatch():
    A = random_homogeneous(2, 2, 2)
    with pytest.raises(ValueError):
        polya.compute_H(A, 2, 1, 1, 0)


def _reconstruct_instance(l, d_p, d_a, d1, d2, n):
    P = random_homogeneous(l, d_p, n, sym=True)
    A = random_homogeneous(l, d_a, n)
    beta = polya.compute_beta(l, d_p, d1)
    H = polya.compute_H(A, l, d_p, d_a, d2)
    hs = exponents(l, d_p)
    Ph = np.array([P.coef(h) for h in hs])
    s = simplex_sum(l)
    lhs = MatrixPolynomial.constant(s.groups, np.eye(n))
    for _ in range(d1):
        lhs = lhs * s
    left = (lhs * P) if d1 else P
    err = 0.0
    for j, g in enumerate(exponents(l, d_p + d1)):
        got = np.tensordot(beta[:, j], Ph, axes=(0, 0))
        err = max(err, np.abs(got - left.coef(g)).max())
    Q = A.lyapunov(P)
    for _ in range(d2):
        Q = Q * MatrixPolynomial(s.groups, {e: c * np.eye(n) for e, c in s.terms.items()})
    for j, g in enumerate(exponents(l, d_p + d_a + d2)):
        got = sum(H[i, j].T @ Ph[i] + Ph[i] @ H[i, j] for i in range(len(hs)))
        err = max(err, np.abs(got - Q.coef(g)).max() / max(1.0, np.abs(Q.coef(g)).max()))
    return err


@pytest.mark.parametrize("seed", range(10))
def test_reconstruction_random(seed):
    r = np.random.default_rng(seed)
    l, d_p, d_a = int(r.integers(1, 4)), int(r.integers(0, 3)), int(r.integers(1, 3))
    d1, d2, n = int(r.integers(0, 4)), int(r.integers(0, 4)), int(r.integers(1, 4))
    assert _reconstruct_instance(l, d_p, d_a, d1, d2, n) <= 1e-9


class TestAssembly:
    def test_sizes(self):
        A = MatrixPolynomial.single(2, {(1, 0): -np.eye(2), (0, 1): -np.eye(2)})
        prob, data = polya.assemble_sdp(A, 1, 1, 1)
        assert prob.K == 6
        assert (data.L, data.M) == (3, 4)
        assert prob.nb == 7 and prob.n == 2
        assert prob.check_symmetric()

    def test_C_blocks(self):
        A = random_homogeneous(3, 1, 2)
        delta = 0.05
        prob, data = polya.assemble_sdp(A, 2, 1, 1, delta)
        zeta = polya.zeta_weights((3,), (2,), 1)
        for j in range(data.L):
            np.testing.assert_allclose(prob.C[j], delta * zeta[j] * np.eye(2))
        assert not np.any(prob.C[data.L:])

    def test_zeta_is_multinomial_expansion(self):
        groups = (("a", 2), ("b", 2))
        s1 = MatrixPolynomial(groups, {(1, 0, 0, 0): 1.0, (0, 1, 0, 0): 1.0})
        s2 = MatrixPolynomial(groups, {(0, 0, 1, 0): 1.0, (0, 0, 0, 1): 1.0})
        target = s1 * s1 * s2 * s2
        z = polya.zeta_weights((2, 2), (1, 1), 1)
        for j, g in enumerate(multi_exponents((2, 2), (2, 2))):
            assert z[j] == pytest.approx(float(target.coef(g)))

    def test_bad_delta(self):
        A = random_homogeneous(2, 1, 2)
        with pytest.raises(ValueError):
            polya.assemble_sdp(A, 1, 0, 0, delta=0.0)

    def test_multi_reduces_to_single(self):
        A = random_homogeneous(3, 1, 2)
        p1, _ = polya.assemble_sdp(A, 1, 2, 1)
        p2, _ = polya.assemble_sdp_multi(A, (1,), 2, 1)
        np.testing.assert_array_equal(p1.C, p2.C)
        assert (p1.Bmat != p2.Bmat).nnz == 0

    def test_multi_block_counts(self):
        A = MatrixPolynomial((("a", 2), ("b", 2)), {(1, 0, 1, 0): -np.eye(2), (0, 1, 0, 1): -np.eye(2),
                                                    (1, 0, 0, 1): -np.eye(2), (0, 1, 1, 0): -np.eye(2)})
        _, data = polya.assemble_sdp_multi(A, (1, 1), 0, 0)
        assert data.L == 4
        d = polya.dims((2, 2, 2, 2), (2, 2, 2, 2), (1, 1, 1, 1), 1, 1, 4)
        assert d["L"] == 4 ** 4 and d["M"] == 5 ** 4 and d["K"] == 10 * 3 ** 4

    def test_beta_multi_oracle(self):
        groups = (("a", 2), ("b", 2))
        beta = polya.compute_beta_multi((2, 2), (1, 1), 1)
        s1 = MatrixPolynomial(groups, {(1, 0, 0, 0): 1.0, (0, 1, 0, 0): 1.0})
        s2 = MatrixPolynomial(groups, {(0, 0, 1, 0): 1.0, (0, 0, 0, 1): 1.0})
        hs = multi_exponents((2, 2), (1, 1))
        w = rng.normal(size=len(hs))
        P = MatrixPolynomial(groups, dict(zip(hs, w)))
        target = s1 * s2 * P
        for j, g in enumerate(multi_exponents((2, 2), (2, 2))):
            assert w @ beta[:, j] == pytest.approx(float(target.coef(g)))

    def test_H_multi_constant(self):
        A = MatrixPolynomial((("a", 2), ("b", 2)), {(0, 0, 0, 0): np.diag([1.0, 2.0])})
        H = polya.compute_H_multi(A, (2, 2), (1, 1), 0)
        for h in range(H.shape[0]):
            for g in range(H.shape[1]):
                np.testing.assert_array_equal(H[h, g], np.diag([1.0, 2.0]) if h == g else 0)

    def test_recover_P(self):
        A = random_homogeneous(2, 1, 2)
        _, data = polya.assemble_sdp(A, 1, 0, 0)
        y = np.arange(6.0)
        P = polya.recover_P(y, data, 2)
        np.testing.assert_array_equal(P.coef((1, 0)), [[0, 2], [2, 1]])
        np.testing.assert_array_equal(P.coef((0, 1)), [[3, 5], [5, 4]])


class TestScalarTools:
    def test_simplex_min_linear(self):
        f = MatrixPolynomial.single(2, {(1, 0): 1.0, (0, 1): 1.0})
        assert polya.min_poly_over_simplex(f) == pytest.approx(1.0, abs=1e-6)

    def test_simplex_min_quadratic(self):
        f = MatrixPolynomial.single(2, {(2, 0): 1.0, (0, 2): 1.0})
        b = polya.min_poly_over_simplex(f, e_max=40, b_max=30)
        assert 0.45 < b <= 0.5

    def test_interior_zero(self):
        f = MatrixPolynomial.single(2, {(2, 0): 1.0, (1, 1): -2.0, (0, 2): 1.0})
        assert polya.min_poly_over_simplex(f, e_max=10) < 0.0

    def test_bounds_monotone_in_e(self):
        r = np.random.default_rng(3)
        for _ in range(20):
            terms = {e: float(r.uniform(-0.5, 1.5)) for e in exponents(3, 3)}
            for i in range(3):
                terms[tuple(3 * int(k == i) for k in range(3))] = 1.0 + r.random()
            f = MatrixPolynomial.single(3, terms)
            X = sample_simplex(r, 3, 4000)
            true_min = f.evaluate_many(X).min()
            bounds = [polya.min_poly_over_simplex(f, e_max=e, b_max=20) for e in (0, 2, 6)]
            assert all(b2 >= b1 - 1e-9 for b1, b2 in zip(bounds, bounds[1:]))
            assert bounds[-1] <= true_min + 1e-9

    def test_habicht_sum_of_squares(self):
        f = MatrixPolynomial.single(3, {(2, 0, 0): 1.0, (0, 2, 0): 1.0, (0, 0, 2): 1.0})
        assert polya.habicht_test(f) == 0

    def test_habicht_cross_term_inconclusive(self):
        # positive definite, but the odd monomial x1 x2 survives every product with (x1^2 + x2^2)^e
        f = MatrixPolynomial.single(2, {(2, 0): 1.0, (1, 1): -1.0, (0, 2): 1.0})
        assert polya.habicht_test(f, e_max=6) is None

    def test_orthant(self):
        f = MatrixPolynomial.single(2, {(1, 1): 1.0})
        v = polya.global_nonnegativity_tests(f, e_max=3)
        assert v.habicht_e is None
        assert v.orthants[(1, 1)] == 0
        assert v.orthants[(1, -1)] is None


def test_setup_messages_formula():
    from polycert.parallel import setup_message_formula

    A = random_homogeneous(3, 1, 2)
    data = polya.polya_data(A, (2,), 2, 2)
    for N in (1, 2, 3, 5):
        got = polya.setup_messages(data, 2, N)
        want = setup_message_formula(data.L0, data.L, data.M, 2, N)
        assert all(abs(g - want) <= data.L0 * (1 + 4) for g in got)
        assert math.isclose(sum(got), data.L0 * (data.L + data.M * 4))
