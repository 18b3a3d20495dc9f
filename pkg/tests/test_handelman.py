import math

import numpy as np
import pytest

from polycert import handelman as hm
from polycert.polycore import MatrixPolynomial


def _poly(n, terms):
    return MatrixPolynomial((("x", n),), terms)


def affine_product(piece, a):
    """prod_k (h_k x + g_k)^a_k built with polycore arithmetic, independent of the maps."""
    n = piece.h.shape[1]
    out = _poly(n, {(0,) * n: 1.0})
    for k, ak in enumerate(a):
        lin = {(0,) * n: float(piece.g[k])}
        for j in range(n):
            if piece.h[k, j] != 0:
                lin[tuple(int(i == j) for i in range(n))] = float(piece.h[k, j])
        for _ in range(ak):
            out = out * _poly(n, lin)
    return out


def coeffs(poly, space):
    return np.array([float(poly.coef(e)) for e in space.exps])


def random_instance(seed):
    r = np.random.default_rng(seed)
    n, m, d = int(r.integers(1, 3)), int(r.integers(2, 4)), int(r.integers(2, 4))
    h = r.normal(size=(m, n))
    g = np.where(r.random(m) < 0.4, 0.0, r.uniform(0.2, 1.5, size=m))
    f = [{e: float(r.normal()) for e in hm.enumerate_basis(n, 2) if sum(e) > 0 and r.random() < 0.6}
         for _ in range(n)]
    return hm.Piece(h, g), d, f


def _b_poly(piece, d, b):
    n = piece.h.shape[1]
    P = _poly(n, {})
    for a, coef in zip(hm.enumerate_basis(piece.m, d), b):
        P = P + affine_product(piece, a).scale(float(coef))
    return P


@pytest.mark.parametrize("seed", range(30))
def test_maps_match_brute_force(seed):
    piece, d, f = random_instance(seed)
    n = piece.h.shape[1]
    r = np.random.default_rng(100 + seed)
    b = r.normal(size=hm.basis_size(piece.m, d))
    P = _b_poly(piece, d, b)
    space = hm.MonomialSpace(n, d)

    F = hm.map_F(piece, d)
    np.testing.assert_allclose(F(b), coeffs(P, space), atol=1e-9)

    H = hm.map_H(piece, d)
    sq = [float(P.coef(tuple(2 * int(i == j) for i in range(n)))) for j in range(n)]
    np.testing.assert_allclose(H(b), sq, atol=1e-9)

    for k in range(piece.m):
        # J drops every product containing facet k, so it agrees with P on that facet
        Jb = hm.map_J(piece, d, k)(b)
        keep = [a for a in hm.enumerate_basis(piece.m, d) if a[k] == 0]
        Pk = _b_poly(piece, d, [c if a in keep else 0.0 for a, c in zip(hm.enumerate_basis(piece.m, d), b)])
        np.testing.assert_allclose(Jb, coeffs(Pk, space), atol=1e-9)

    fpolys = [_poly(n, fi) for fi in f]
    Gpoly = P.grad_contract(fpolys)
    Gmap = hm.map_G(piece, d, f)
    big = hm.MonomialSpace(n, d + hm.vector_field_space(f, n) - 1)
    np.testing.assert_allclose(Gmap(b), coeffs(Gpoly, big), atol=1e-9)

    Rb = hm.map_R(piece, d)(b)
    at_zero = [i for i, a in enumerate(hm.enumerate_basis(piece.m, d))
               if abs(float(affine_product(piece, a).coef((0,) * n))) > 0]
    np.testing.assert_array_equal(Rb, b[at_zero])

    for M in (F, H, Gmap, hm.map_R(piece, d)):
        assert not np.any(M(np.zeros_like(b)))


@pytest.mark.parametrize("seed", range(5))
def test_map_consistency_pointwise(seed):
    piece, d, f = random_instance(seed)
    n = piece.h.shape[1]
    r = np.random.default_rng(seed)
    b = r.random(hm.basis_size(piece.m, d))
    X = r.uniform(-1, 1, size=(100, n))
    direct = sum(bi * np.prod((X @ piece.h.T + piece.g) ** np.array(a), axis=1)
                 for bi, a in zip(b, hm.enumerate_basis(piece.m, d)))
    space = hm.MonomialSpace(n, d)
    np.testing.assert_allclose(space.evaluate(hm.map_F(piece, d)(b), X), direct, atol=1e-9)
    # gradient by central differences
    big = hm.MonomialSpace(n, d + hm.vector_field_space(f, n) - 1)
    G = big.evaluate(hm.map_G(piece, d, f)(b), X)
    eps = 1e-6
    fx = np.stack([big.evaluate(hm.poly_vector(fi, big), X) for fi in f], axis=1)
    grad = np.stack([(space.evaluate(hm.map_F(piece, d)(b), X + eps * np.eye(n)[j])
                      - space.evaluate(hm.map_F(piece, d)(b), X - eps * np.eye(n)[j])) / (2 * eps)
                     for j in range(n)], axis=1)
    fd = np.sum(grad * fx, axis=1)
    assert np.max(np.abs(G - fd)) <= 1e-6 * max(1.0, np.abs(G).max())


class TestBasis:
    def test_examples(self):
        assert set(hm.enumerate_basis(2, 1)) == {(0, 0), (0, 1), (1, 0)}
        assert hm.basis_size(2, 2) == 6 == math.comb(4, 2)
        assert hm.basis_size(3, 2) == 10

    def test_unit_interval_maps(self):
        D = hm.Piece([[1.0], [-1.0]], [0.0, 1.0])
        basis = hm.enumerate_basis(2, 2)
        b = np.zeros(6)
        b[basis.index((1, 0))] = 1.0
        np.testing.assert_array_equal(hm.map_F(D, 2)(b), [0, 1, 0])
        kept = [basis[i] for i in hm.origin_support(D, 2)]
        assert kept == [(0, 0), (0, 1), (0, 2)]

    def test_G_of_x(self):
        D = hm.Piece([[1.0], [-1.0]], [0.0, 1.0])
        basis = hm.enumerate_basis(2, 2)
        b = np.zeros(6)
        b[basis.index((1, 0))] = 1.0
        np.testing.assert_allclose(hm.map_G(D, 2, [{(1,): -1.0}])(b), [0, -1, 0])

    def test_errors(self):
        D = hm.Piece([[1.0], [-1.0]], [0.0, 1.0])
        with pytest.raises(IndexError):
            hm.map_J(D, 2, 5)
        with pytest.raises(ValueError):
            hm.map_H(D, 1)


class TestDecomposition:
    def test_interval(self):
        dec = hm.d_decompose(hm.Polytope.box([1.0]))
        assert dec.L == 2
        got = sorted(sorted((float(h[0]), float(g)) for h, g in zip(p.h, p.g)) for p in dec.pieces)
        assert got == sorted([sorted([(1.0, 0.0), (-1.0, 1.0)]), sorted([(-1.0, 0.0), (1.0, 1.0)])])

    def test_square(self):
        gamma = hm.Polytope.box([1.0, 1.0])
        dec = hm.d_decompose(gamma)
        assert dec.L == 4 and all(p.m == 3 for p in dec.pieces)
        stats = hm.check_decomposition(gamma, dec)
        assert stats["ok"]

    def test_fan_of_triangle(self):
        gamma = hm.Polytope.from_vertices([(1.0, 0.0), (-1.0, 1.0), (-1.0, -1.0)])
        dec = hm.d_decompose(gamma)
        assert dec.L == 3
        assert hm.check_decomposition(gamma, dec)["ok"]

    def test_origin_outside(self):
        with pytest.raises(ValueError):
            hm.d_decompose(hm.Polytope.from_vertices([(1.0, 1.0), (2.0, 1.0), (1.0, 2.0)]))

    def test_unbounded(self):
        assert not hm.Polytope([[1.0, 0.0], [0.0, 1.0]], [1.0, 1.0]).is_bounded()


def test_square_counts_match_closed_form():
    dec = hm.d_decompose(hm.Polytope.box([1.0, 1.0]))
    assert hm.structural_counts(dec, 2, 3) == hm.closed_form_counts(2, 4, 3, 2, 3)


class TestLyapunovSearch:
    def test_stable_scalar(self):
        res = hm.find_lyapunov(hm.Polytope.box([1.0]), [{(1,): -1.0}], d_max=4)
        assert res.feasible and res.gamma > 0
        assert res.lp.d == 2
        v = res.certificate.validation
        assert v["ok"] and v["V0"] <= 1e-8 and v["continuity"] <= 1e-8

    def test_unstable_scalar(self):
        res = hm.find_lyapunov(hm.Polytope.box([1.0]), [{(1,): 1.0}], d_max=6)
        assert not res.feasible

    def test_off_origin_equilibrium(self):
        # x' = -(x - 0.5) has its equilibrium at 0.5, inside the box
        res = hm.find_lyapunov(hm.Polytope.box([1.0]), [{(0,): 0.5, (1,): -1.0}], d_max=4, validate=False)
        assert not res.feasible

    def test_degree_too_low(self):
        dec = hm.d_decompose(hm.Polytope.box([1.0]))
        with pytest.raises(ValueError):
            hm.assemble_lp(dec, [{(1,): -1.0}], 1)

    def test_linear_2d_certificate_properties(self):
        f = [{(1, 0): -1.0, (0, 1): 0.5}, {(1, 0): -0.5, (0, 1): -1.0}]
        res = hm.find_lyapunov(hm.Polytope.box([1.0, 1.0]), f, d_max=4)
        assert res.feasible
        cert = res.certificate
        assert all(np.all(b >= 0) for b in cert.b) and all(np.all(c <= 0) for c in cert.c)
        for p, b in zip(cert.dec.pieces, cert.b):
            assert np.allclose(hm.map_R(p, cert.d)(b), 0)
        stats = hm.validate_certificate(cert, f)
        assert stats["ok"]


@pytest.mark.parametrize("seed", range(10))
def test_lp_matches_highs(seed):
    from scipy.optimize import linprog

    r = np.random.default_rng(seed)
    A = r.normal(size=(2, 2)) - (1.0 + r.random()) * np.eye(2)
    f = [{(1, 0): A[i, 0], (0, 1): A[i, 1], (2, 0) if i else (0, 2): 0.2 * r.normal()} for i in range(2)]
    dec = hm.d_decompose(hm.Polytope.box([0.6, 0.6]))
    lp = hm.assemble_lp(dec, f, 2)
    p = lp.problem
    ours = hm.solve_lyapunov_lp(lp, f)
    G = p.Bmat.toarray()
    h = p.C.ravel()
    eq = {} if p.eq_A is None else {"A_eq": p.eq_A.toarray(), "b_eq": p.eq_b}
    ref = linprog(p.a, A_ub=-G, b_ub=-h, bounds=[(None, None)] * p.K, method="highs", **eq)
    if ref.status == 2:
        assert not ours.feasible
    else:
        assert ref.status == 0
        assert ours.gamma == pytest.approx(-ref.fun, abs=1e-6)
        assert ours.feasible == (-ref.fun > 1e-6)


def test_quintic_example():
    from polycert.stability import quintic_certificate

    rep = quintic_certificate(4)
    assert rep.verdict == "stable"
    assert rep.validation["ok"]


class TestPolytopeMin:
    def test_linear(self):
        unit = hm.Polytope([[1.0], [-1.0]], [0.0, 1.0])
        assert hm.min_poly_over_polytope({(1,): 1.0}, unit, 1) == pytest.approx(0.0, abs=1e-6)
        assert hm.min_poly_over_polytope({(0,): 1.0, (1,): 1.0}, unit, 1) == pytest.approx(1.0, abs=1e-6)

    def test_square_bounds(self):
        bounds = hm.min_poly_bounds({(2,): 1.0}, hm.Polytope.box([1.0]), 8)
        assert all(b2 >= b1 - 1e-7 for b1, b2 in zip(bounds, bounds[1:]))
        assert bounds[-1] <= 1e-9
        assert bounds[-1] > bounds[0]


class TestLevelSets:
    def test_circle_in_square(self):
        dec = hm.d_decompose(hm.Polytope.box([1.0, 1.0]))
        space = hm.MonomialSpace(2, 2)
        V = hm.PiecewisePolynomial(dec, [hm.poly_vector({(2, 0): 1.0, (0, 2): 1.0}, space)] * 4, 2)
        c = hm.largest_inscribed_sublevel(V, hm.Polytope.box([1.0, 1.0]), per_facet=2000)
        assert c == pytest.approx(1.0, abs=1e-6)

    def test_ellipse_in_square(self):
        dec = hm.d_decompose(hm.Polytope.box([1.0, 1.0]))
        space = hm.MonomialSpace(2, 2)
        V = hm.PiecewisePolynomial(dec, [hm.poly_vector({(2, 0): 1.0, (0, 2): 4.0}, space)] * 4, 2)
        c = hm.largest_inscribed_sublevel(V, hm.Polytope.box([1.0, 1.0]), per_facet=2000)
        assert c == pytest.approx(1.0, abs=1e-6)
        pts = hm.sublevel_boundary(V, hm.Polytope.box([1.0, 1.0]), c, rays=90)
        np.testing.assert_allclose(V(pts), c, rtol=1e-6)
