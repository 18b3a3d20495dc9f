import itertools

import numpy as np
import pytest

from polycert.polycore import (
    MatrixPolynomial,
    count,
    exponent_at,
    exponents,
    homogenize_simplex,
    hypercube_to_multisimplex,
    lex_index,
    multihomogenize,
    multinomial,
    sample_multisimplex,
    sample_simplex,
)

rng = np.random.default_rng(0)


def mats(k, n=2):
    return [rng.normal(size=(n, n)) for _ in range(k)]


class TestLexIndex:
    def test_first_and_last(self):
        assert lex_index((2, 0, 0)) == 1
        assert lex_index((0, 0, 2)) == 6

    def test_count(self):
        assert count(2, 3) == 4
        assert len(exponents(2, 3)) == 4
        assert count(0, 3) == 0

    def test_matches_sorted_enumeration(self):
        for l, d in [(3, 2), (4, 3), (2, 5)]:
            members = [e for e in itertools.product(range(d + 1), repeat=l) if sum(e) == d]
            members.sort(reverse=True)  # left-most larger entry comes first
            assert exponents(l, d) == members
            assert [lex_index(e) for e in members] == list(range(1, len(members) + 1))

    def test_inverse_exhaustive(self):
        for l in range(1, 6):
            for d in range(0, 9):
                for i in range(1, count(l, d) + 1):
                    assert lex_index(exponent_at(l, d, i), d) == i

    def test_degree_mismatch(self):
        with pytest.raises(ValueError):
            lex_index((1, 1), 3)


def test_multinomial_identity():
    x = rng.random(3)
    for d in range(5):
        total = sum(multinomial(d, h) * np.prod(x ** np.array(h)) for h in exponents(3, d))
        assert total == pytest.approx(x.sum() ** d)


class TestHomogenize:
    def test_worked_example(self):
        C, D, E, F = mats(4)
        A = MatrixPolynomial.single(3, {(2, 0, 0): C, (0, 1, 0): D, (0, 0, 1): E, (0, 0, 0): F})
        B = homogenize_simplex(A)
        want = [C + F, D + 2 * F, E + 2 * F, D + F, D + E + 2 * F, E + F]
        for e, W in zip(exponents(3, 2), want):
            np.testing.assert_allclose(B.coef(e), W, atol=1e-14)

    def test_already_homogeneous(self):
        A = MatrixPolynomial.single(2, {(1, 1): np.eye(2), (2, 0): 2 * np.eye(2)})
        assert homogenize_simplex(A).allclose(A)

    def test_scalar_cases(self):
        a1 = MatrixPolynomial.single(2, {(1, 0): 1.0})
        assert homogenize_simplex(a1).allclose(a1)
        one = MatrixPolynomial.single(2, {(0, 0): 1.0})
        assert homogenize_simplex(one, 1).allclose(MatrixPolynomial.single(2, {(1, 0): 1.0, (0, 1): 1.0}))

    def test_pointwise_on_simplex(self):
        terms = {e: rng.normal(size=(2, 2)) for d in range(4) for e in exponents(3, d)}
        A = MatrixPolynomial.single(3, terms)
        B = homogenize_simplex(A)
        X = sample_simplex(rng, 3, 1000)
        a, b = A.evaluate_many(X), B.evaluate_many(X)
        assert np.max(np.abs(a - b)) <= 1e-10 * max(1.0, np.max(np.abs(a)))


class TestMultihomogenize:
    def test_claim_example(self):
        F1, F2, F3 = mats(3)
        g = (("a", 2), ("b", 2))
        # F1 (a11 + a12) a21 + F2 a12^2 + F3 a22
        F = MatrixPolynomial(g, {(1, 0, 1, 0): F1, (0, 1, 1, 0): F1, (0, 2, 0, 0): F2, (0, 0, 0, 1): F3})
        P = multihomogenize(F)
        want = {(2, 0, 1, 0): F1, (2, 0, 0, 1): F3, (1, 1, 1, 0): 2 * F1, (1, 1, 0, 1): 2 * F3,
                (0, 2, 1, 0): F1 + F2, (0, 2, 0, 1): F2 + F3}
        assert P.degree_vector() == (2, 1)
        assert set(P.terms) == set(want)
        for e, W in want.items():
            np.testing.assert_allclose(P.coef(e), W, atol=1e-14)

    def test_identity_and_hand_case(self):
        g = (("a", 2), ("b", 2))
        F = MatrixPolynomial(g, {(1, 0, 0, 0): 1.0, (0, 0, 1, 0): 1.0})
        P = multihomogenize(F)
        want = MatrixPolynomial(g, {(1, 0, 1, 0): 2.0, (1, 0, 0, 1): 1.0, (0, 1, 1, 0): 1.0})
        assert P.allclose(want)
        assert multihomogenize(P).allclose(P)
        X = sample_multisimplex(rng, (2, 2), 200)
        np.testing.assert_allclose(F.evaluate_many(X), P.evaluate_many(X), atol=1e-12)


class TestHypercube:
    def test_claim_example(self):
        F = MatrixPolynomial((("x", 2),), {(2, 0): 1.0, (0, 1): 1.0})
        P = hypercube_to_multisimplex(F, [2.0, 1.0])
        assert P.degree_vector() == (2, 1)
        # 16 a1^2 (a2+b2) - 16 a1 (a1+b1)(a2+b2) + 2 a2 (a1+b1)^2 + 3 (a1+b1)^2 (a2+b2)
        g = P.groups
        a1 = MatrixPolynomial.variable(g, 0)
        b1 = MatrixPolynomial.variable(g, 1)
        a2 = MatrixPolynomial.variable(g, 2)
        b2 = MatrixPolynomial.variable(g, 3)
        s1, s2 = a1 + b1, a2 + b2
        want = (a1 * a1 * s2).scale(16) - (a1 * s1 * s2).scale(16) + (a2 * s1 * s1).scale(2) + (s1 * s1 * s2).scale(3)
        assert P.allclose(want)

    def test_linear_and_constant(self):
        F = MatrixPolynomial((("x", 1),), {(1,): 1.0})
        P = hypercube_to_multisimplex(F, [1.0])
        assert P.allclose(MatrixPolynomial(P.groups, {(1, 0): 1.0, (0, 1): -1.0}))
        c = MatrixPolynomial((("x", 2),), {(0, 0): 3.0})
        Pc = hypercube_to_multisimplex(c, [1.0, 2.0])
        assert Pc.allclose(MatrixPolynomial(Pc.groups, {(0, 0, 0, 0): 3.0}))

    def test_bad_radius(self):
        F = MatrixPolynomial((("x", 1),), {(1,): 1.0})
        with pytest.raises(ValueError):
            hypercube_to_multisimplex(F, [0.0])

    def test_round_trip(self):
        terms = {(i, j): rng.normal(size=(2, 2)) for i in range(3) for j in range(2)}
        F = MatrixPolynomial((("x", 2),), terms)
        r = np.array([0.7, 1.3])
        P = hypercube_to_multisimplex(F, r)
        X = rng.uniform(-r, r, size=(1000, 2))
        a = (X + r) / (2 * r)
        AB = np.stack([a[:, 0], 1 - a[:, 0], a[:, 1], 1 - a[:, 1]], axis=1)
        f, p = F.evaluate_many(X), P.evaluate_many(AB)
        assert np.max(np.abs(f - p)) <= 1e-10 * max(1.0, np.max(np.abs(f)))


class TestArithmetic:
    def test_ring_ops(self):
        g = (("x", 1),)
        p = MatrixPolynomial(g, {(2,): 1.0})
        zero = MatrixPolynomial(g, {})
        assert (p + zero).allclose(p)
        assert (p * MatrixPolynomial(g, {(1,): 1.0})).allclose(MatrixPolynomial(g, {(3,): 1.0}))

    def test_lyapunov_expansion(self):
        A1, A2 = mats(2)
        P1, P2 = [m + m.T for m in mats(2)]
        A = MatrixPolynomial.single(2, {(1, 0): A1, (0, 1): A2})
        P = MatrixPolynomial.single(2, {(1, 0): P1, (0, 1): P2})
        Q = A.lyapunov(P)
        np.testing.assert_allclose(Q.coef((2, 0)), A1.T @ P1 + P1 @ A1)
        np.testing.assert_allclose(Q.coef((1, 1)), A1.T @ P2 + P2 @ A1 + A2.T @ P1 + P1 @ A2)
        np.testing.assert_allclose(Q.coef((0, 2)), A2.T @ P2 + P2 @ A2)

    def test_grad_contract(self):
        g = (("x", 2),)
        V = MatrixPolynomial(g, {(2, 0): 1.0, (0, 2): 1.0})
        f = [MatrixPolynomial(g, {(1, 0): -1.0}), MatrixPolynomial(g, {(0, 1): -1.0})]
        assert V.grad_contract(f).allclose(MatrixPolynomial(g, {(2, 0): -2.0, (0, 2): -2.0}))

    def test_symmetric_flag(self):
        with pytest.raises(ValueError):
            MatrixPolynomial.single(1, {(1,): np.array([[0, 1.0], [0, 0]])}, symmetric=True)

    def test_json_round_trip(self):
        A = MatrixPolynomial.single(2, {(1, 0): np.eye(2), (0, 1): -np.eye(2)})
        assert MatrixPolynomial.from_json(A.to_json()).allclose(A)
