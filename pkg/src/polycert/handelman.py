"""Piecewise-polynomial Lyapunov functions on polytopes via Handelman representations.

A polytope is {x : W x + u >= 0}. A D-decomposition splits it into pieces
D_i = {x : h_ij^T x + g_ij >= 0} that meet only at the origin. On each piece
V_i = sum_a b_{i,a} prod_j (h_ij^T x + g_ij)^{a_j} with b >= 0, and the
Lie derivative is matched to sum_c c_{i,c} prod_j (...)^{c_j} with c <= 0.
Everything reduces to one linear program that is solved with the package's
interior-point method (1 x 1 blocks plus equality rows).
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from . import sdp

# ----------------------------------------------------------------------------
# monomial spaces
# ----------------------------------------------------------------------------


@lru_cache(maxsize=None)
def enumerate_basis(K: int, d: int) -> tuple[tuple[int, ...], ...]:
    """All a in N^K with |a|_1 <= d, by total degree then lexicographically descending."""
    if K < 1 or d < 0:
        raise ValueError("need K >= 1 and d >= 0")
    out = []
    for t in range(d + 1):
        out.extend(_compositions(K, t))
    return tuple(out)


def _compositions(K: int, t: int):
    if K == 1:
        return [(t,)]
    res = []
    for first in range(t, -1, -1):
        for rest in _compositions(K - 1, t - first):
            res.append((first,) + rest)
    return res


def basis_size(K: int, d: int) -> int:
    return math.comb(d + K, K)


class MonomialSpace:
    """Coefficient vectors over x-monomials of total degree <= D."""

    def __init__(self, n: int, D: int):
        self.n, self.D = n, D
        self.exps = enumerate_basis(n, D)
        self.index = {e: i for i, e in enumerate(self.exps)}
        self.size = len(self.exps)
        self.degree = np.array([sum(e) for e in self.exps])

    def unit(self, j: int) -> tuple[int, ...]:
        return tuple(int(k == j) for k in range(self.n))

    @lru_cache(maxsize=None)
    def shift_map(self, lam: tuple[int, ...]) -> tuple[np.ndarray, np.ndarray]:
        """(src, dst): monomial src times x^lam is monomial dst, when it stays in the space."""
        src, dst = [], []
        for i, e in enumerate(self.exps):
            t = tuple(a + b for a, b in zip(e, lam))
            j = self.index.get(t)
            if j is not None:
                src.append(i)
                dst.append(j)
        return np.array(src, dtype=int), np.array(dst, dtype=int)

    def times_monomial(self, V: np.ndarray, lam, coef: float = 1.0) -> np.ndarray:
        """V has the monomial index on axis 0; overflow beyond degree D must be zero."""
        src, dst = self.shift_map(tuple(lam))
        out = np.zeros_like(V)
        out[dst] = coef * V[src]
        return out

    def times_affine(self, V: np.ndarray, h: np.ndarray, g: float) -> np.ndarray:
        out = g * V
        for j in range(self.n):
            if h[j] != 0:
                out = out + self.times_monomial(V, self.unit(j), h[j])
        return out

    def derivative(self, V: np.ndarray, j: int) -> np.ndarray:
        out = np.zeros_like(V)
        for i, e in enumerate(self.exps):
            if e[j] > 0:
                t = list(e)
                t[j] -= 1
                out[self.index[tuple(t)]] += e[j] * V[i]
        return out

    def evaluate(self, V: np.ndarray, X: np.ndarray) -> np.ndarray:
        """V: (size, ...) coefficients; X: (npts, n)."""
        X = np.atleast_2d(X)
        mons = np.ones((X.shape[0], self.size))
        for i, e in enumerate(self.exps):
            for j, p in enumerate(e):
                if p:
                    mons[:, i] *= X[:, j] ** p
        return mons @ V

    def embed(self, V: np.ndarray, other: "MonomialSpace") -> np.ndarray:
        """Copy coefficients into a space of higher degree."""
        out = np.zeros((other.size,) + V.shape[1:])
        for i, e in enumerate(self.exps):
            out[other.index[e]] = V[i]
        return out


def poly_vector(terms: dict, space: MonomialSpace) -> np.ndarray:
    v = np.zeros(space.size)
    for e, c in terms.items():
        e = tuple(int(a) for a in e)
        if sum(e) > space.D:
            raise ValueError(f"monomial {e} exceeds degree {space.D}")
        v[space.index[e]] += float(c)
    return v


# ----------------------------------------------------------------------------
# polytopes and decompositions
# ----------------------------------------------------------------------------


@dataclass
class Polytope:
    W: np.ndarray   # (K, n) facet normals
    u: np.ndarray   # (K,) offsets; x in polytope iff W x + u >= 0

    def __post_init__(self):
        self.W = np.atleast_2d(np.asarray(self.W, dtype=float))
        self.u = np.asarray(self.u, dtype=float).ravel()
        if self.W.shape[0] != self.u.size:
            raise ValueError("one offset per facet required")

    @property
    def n(self) -> int:
        return self.W.shape[1]

    @property
    def K(self) -> int:
        return self.u.size

    def contains(self, X: np.ndarray, tol: float = 1e-9) -> np.ndarray:
        return np.all(np.atleast_2d(X) @ self.W.T + self.u >= -tol, axis=1)

    def vertices(self, tol: float = 1e-9) -> np.ndarray:
        n = self.n
        pts = []
        for rows in itertools.combinations(range(self.K), n):
            A = self.W[list(rows)]
            if abs(np.linalg.det(A)) < 1e-12:
                continue
            x = np.linalg.solve(A, -self.u[list(rows)])
            if self.contains(x[None], tol)[0]:
                if not any(np.allclose(x, p, atol=1e-9) for p in pts):
                    pts.append(x)
        return np.array(pts)

    def facet_vertices(self, k: int, tol: float = 1e-9) -> np.ndarray:
        V = self.vertices(tol)
        if len(V) == 0:
            return V
        on = np.abs(V @ self.W[k] + self.u[k]) <= tol * (1 + np.linalg.norm(self.W[k]))
        return V[on]

    def is_bounded(self) -> bool:
        # bounded iff the normals positively span R^n: no nonzero d with W d >= 0
        from scipy.optimize import linprog

        for j in range(self.n):
            for s in (1.0, -1.0):
                c = np.zeros(self.n)
                c[j] = -s
                r = linprog(c, A_ub=-self.W, b_ub=np.zeros(self.K), bounds=[(-1, 1)] * self.n, method="highs")
                if r.status == 0 and -r.fun > 1e-9:
                    return False
        return True

    def scaled(self, s: float) -> "Polytope":
        return Polytope(self.W, s * self.u)

    @classmethod
    def from_vertices(cls, points) -> "Polytope":
        from scipy.spatial import ConvexHull

        P = np.asarray(points, dtype=float)
        if P.shape[1] == 1:
            return cls([[1.0], [-1.0]], [-P.min(), P.max()])
        hull = ConvexHull(P)
        eq = hull.equations   # normal . x + offset <= 0 inside
        W, u = -eq[:, :-1], -eq[:, -1]
        # merge coplanar duplicates from triangulated faces
        keep = []
        for i in range(len(u)):
            if not any(np.allclose(W[i], W[j]) and np.isclose(u[i], u[j]) for j in keep):
                keep.append(i)
        return cls(W[keep], u[keep])

    @classmethod
    def box(cls, radii) -> "Polytope":
        r = np.asarray(radii, dtype=float)
        n = r.size
        W = np.vstack([-np.eye(n), np.eye(n)])
        return cls(W, np.concatenate([r, r]))

    def to_dict(self) -> dict:
        return {"W": self.W.tolist(), "u": self.u.tolist()}


@dataclass
class Piece:
    h: np.ndarray   # (m, n)
    g: np.ndarray   # (m,)

    def __post_init__(self):
        self.h = np.atleast_2d(np.asarray(self.h, dtype=float))
        self.g = np.asarray(self.g, dtype=float).ravel()

    @property
    def m(self) -> int:
        return self.g.size

    def as_polytope(self) -> Polytope:
        return Polytope(self.h, self.g)

    def zero_at_origin(self, tol: float = 1e-12) -> np.ndarray:
        return np.abs(self.g) <= tol


@dataclass
class DDecomposition:
    pieces: list[Piece]
    shared: list[tuple[int, int, int, int]] = field(default_factory=list)   # (i, k, j, l), i < j

    @property
    def L(self) -> int:
        return len(self.pieces)

    @property
    def n(self) -> int:
        return self.pieces[0].h.shape[1]

    def locate(self, X: np.ndarray, tol: float = 1e-9) -> np.ndarray:
        """Index of the first piece containing each point, -1 if none."""
        X = np.atleast_2d(X)
        out = np.full(len(X), -1)
        for i, p in reversed(list(enumerate(self.pieces))):
            inside = np.all(X @ p.h.T + p.g >= -tol, axis=1)
            out[inside] = i
        return out

    def to_dict(self) -> dict:
        return {"pieces": [{"h": p.h.tolist(), "g": p.g.tolist()} for p in self.pieces],
                "shared": [list(s) for s in self.shared]}

    @classmethod
    def from_dict(cls, d: dict) -> "DDecomposition":
        return with_adjacency([Piece(p["h"], p["g"]) for p in d["pieces"]])


def shared_facets(pieces: Sequence[Piece], tol: float = 1e-9) -> list[tuple[int, int, int, int]]:
    """All (i, k, j, l) with facet k of piece i equal to facet l of piece j (as vertex sets)."""
    n = pieces[0].h.shape[1]
    fv = []
    for p in pieces:
        poly = p.as_polytope()
        V = poly.vertices(tol)
        fv.append([_facet_set(poly, V, k, tol) for k in range(p.m)])
    out = []
    for i, j in itertools.combinations(range(len(pieces)), 2):
        for k, Fk in enumerate(fv[i]):
            if Fk is None or len(Fk) < n:
                continue
            for l, Fl in enumerate(fv[j]):
                if Fl is not None and len(Fl) == len(Fk) and _same_points(Fk, Fl, tol):
                    out.append((i, k, j, l))
    return out


def _facet_set(poly: Polytope, V: np.ndarray, k: int, tol: float):
    if len(V) == 0:
        return None
    on = np.abs(V @ poly.W[k] + poly.u[k]) <= tol * (1 + np.linalg.norm(poly.W[k]))
    return V[on]


def _same_points(A: np.ndarray, B: np.ndarray, tol: float) -> bool:
    return all(np.min(np.linalg.norm(B - a, axis=1)) <= 10 * tol for a in A)


def with_adjacency(pieces: Sequence[Piece]) -> DDecomposition:
    pieces = list(pieces)
    return DDecomposition(pieces, shared_facets(pieces))


def fan_decomposition(gamma: Polytope) -> DDecomposition:
    """Cone the origin over every facet.

    Works in the plane for any polygon and in any dimension for boxes; on a
    box this gives 2n pieces with 2n - 1 facets each.
    """
    _check_origin(gamma)
    n = gamma.n
    if n == 1:
        pieces = []
        for k in range(gamma.K):
            w, u = gamma.W[k, 0], gamma.u[k]
            pieces.append(Piece([[w], [-w]], [u, 0.0]))
        return with_adjacency(pieces)
    if n == 2:
        pieces = []
        for k in range(gamma.K):
            V = gamma.facet_vertices(k)
            if len(V) != 2:
                continue
            va, vb = V
            ha = np.array([-va[1], va[0]])
            ha = ha if ha @ vb > 0 else -ha
            hb = np.array([-vb[1], vb[0]])
            hb = hb if hb @ va > 0 else -hb
            pieces.append(Piece([gamma.W[k], ha, hb], [gamma.u[k], 0.0, 0.0]))
        return with_adjacency(pieces)
    r = _box_radii(gamma)
    if r is None:
        raise NotImplementedError("fan decomposition above two dimensions is implemented for boxes only")
    pieces = []
    for k in range(n):
        for s in (1.0, -1.0):
            h, g = [], []
            row = np.zeros(n)
            row[k] = -s
            h.append(row)
            g.append(r[k])
            for j in range(n):
                if j == k:
                    continue
                for t in (1.0, -1.0):
                    row = np.zeros(n)
                    row[k] = s * r[j]
                    row[j] = -t * r[k]
                    h.append(row)
                    g.append(0.0)
            pieces.append(Piece(h, g))
    return with_adjacency(pieces)


def orthant_decomposition(radii) -> DDecomposition:
    """Split a box into its 2^n orthant sub-boxes (2n facets each)."""
    r = np.asarray(radii, dtype=float)
    n = r.size
    pieces = []
    for signs in itertools.product((1.0, -1.0), repeat=n):
        h = np.vstack([np.diag(signs), -np.diag(signs)])
        g = np.concatenate([np.zeros(n), r])
        pieces.append(Piece(h, g))
    return with_adjacency(pieces)


def _box_radii(gamma: Polytope):
    n = gamma.n
    r = np.full(n, np.nan)
    lo = np.full(n, np.nan)
    for w, u in zip(gamma.W, gamma.u):
        nz = np.flatnonzero(np.abs(w) > 1e-12)
        if len(nz) != 1:
            return None
        j = nz[0]
        bound = u / abs(w[j])
        if w[j] < 0:
            r[j] = bound
        else:
            lo[j] = bound
    if np.any(np.isnan(r)) or np.any(np.isnan(lo)) or not np.allclose(r, lo):
        return None
    return r


def _check_origin(gamma: Polytope):
    if np.any(gamma.u <= 0):
        raise ValueError("the origin must lie strictly inside the polytope")


def d_decompose(gamma: Polytope, kind: str = "fan") -> DDecomposition:
    if kind == "fan":
        return fan_decomposition(gamma)
    if kind == "orthant":
        _check_origin(gamma)
        r = _box_radii(gamma)
        if r is None:
            raise ValueError("orthant decomposition needs a box centred at the origin")
        return orthant_decomposition(r)
    raise ValueError(f"unknown decomposition {kind!r}")


def check_decomposition(gamma: Polytope, dec: DDecomposition, samples: int = 4000, seed: int = 0) -> dict:
    """Sampled checks: pieces cover the polytope, stay inside it and do not overlap."""
    rng = np.random.default_rng(seed)
    V = gamma.vertices()
    lo, hi = V.min(axis=0), V.max(axis=0)
    X = rng.uniform(lo, hi, size=(samples, gamma.n))
    inG = gamma.contains(X, 0.0)
    member = np.array([np.all(X @ p.h.T + p.g > 1e-9, axis=1) for p in dec.pieces])
    closed = np.array([np.all(X @ p.h.T + p.g >= -1e-9, axis=1) for p in dec.pieces])
    out = {
        "covered": bool(np.all(closed[:, inG].any(axis=0))),
        "inside": bool(not np.any(closed[:, ~gamma.contains(X, 1e-7)])),
        "disjoint_interiors": bool(np.all(member.sum(axis=0) <= 1)),
        "origin_common": all(np.all(p.g >= -1e-12) and np.any(np.abs(p.g) < 1e-12) for p in dec.pieces),
    }
    out["ok"] = all(out.values())
    return out


# ----------------------------------------------------------------------------
# coefficient maps
# ----------------------------------------------------------------------------


@dataclass
class AffineMap:
    """x -> A @ x + offset."""

    A: np.ndarray
    offset: np.ndarray

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.A @ x + self.offset


def expansion_matrix(piece: Piece, d: int, space: MonomialSpace | None = None) -> np.ndarray:
    """Column a holds the x-coefficients of prod_j (h_j^T x + g_j)^{a_j}, a in E_{d,m}."""
    n = piece.h.shape[1]
    space = space or MonomialSpace(n, d)
    basis = enumerate_basis(piece.m, d)
    cols = {}
    one = np.zeros(space.size)
    one[space.index[(0,) * n]] = 1.0
    cols[(0,) * piece.m] = one
    out = np.zeros((space.size, len(basis)))
    for k, a in enumerate(basis):
        if a not in cols:
            j = next(i for i, v in enumerate(a) if v > 0)
            prev = list(a)
            prev[j] -= 1
            cols[a] = space.times_affine(cols[tuple(prev)], piece.h[j], piece.g[j])
        out[:, k] = cols[a]
    return out


def map_F(piece: Piece, d: int) -> AffineMap:
    A = expansion_matrix(piece, d)
    return AffineMap(A, np.zeros(A.shape[0]))


def map_H(piece: Piece, d: int) -> AffineMap:
    if d < 2:
        raise ValueError("square terms need degree >= 2")
    n = piece.h.shape[1]
    space = MonomialSpace(n, d)
    A = expansion_matrix(piece, d, space)
    rows = [space.index[tuple(2 * int(k == j) for k in range(n))] for j in range(n)]
    return AffineMap(A[rows], np.zeros(n))


def map_J(piece: Piece, d: int, k: int) -> AffineMap:
    if not 0 <= k < piece.m:
        raise IndexError(f"facet {k} out of range")
    A = expansion_matrix(piece, d).copy()
    basis = enumerate_basis(piece.m, d)
    drop = [i for i, a in enumerate(basis) if a[k] > 0]
    A[:, drop] = 0.0
    return AffineMap(A, np.zeros(A.shape[0]))


def vector_field_space(f: Sequence[dict], n: int) -> int:
    return max((sum(e) for fi in f for e, c in fi.items() if c != 0), default=0)


def map_G(piece: Piece, d: int, f: Sequence[dict]) -> AffineMap:
    """Coefficients (degree <= d + d_f - 1) of <grad P, f> as a function of b."""
    n = piece.h.shape[1]
    d_f = vector_field_space(f, n)
    D = d + d_f - 1
    small = MonomialSpace(n, d)
    big = MonomialSpace(n, max(D, d))
    F = small.embed(expansion_matrix(piece, d, small), big)
    out = np.zeros((big.size, F.shape[1]))
    for j in range(n):
        dP = big.derivative(F, j)
        for e, c in f[j].items():
            if c != 0:
                out += big.times_monomial(dP, tuple(int(v) for v in e), float(c))
    if D < big.D:
        keep = big.degree <= D
        out = out[keep]
    return AffineMap(out, np.zeros(out.shape[0]))


def origin_support(piece: Piece, d: int) -> list[int]:
    """Indices a in E_{d,m} whose basis product is nonzero at the origin."""
    zero = piece.zero_at_origin()
    return [i for i, a in enumerate(enumerate_basis(piece.m, d))
            if all(a[j] == 0 for j in range(piece.m) if zero[j])]


def map_R(piece: Piece, d: int) -> AffineMap:
    idx = origin_support(piece, d)
    A = np.zeros((len(idx), basis_size(piece.m, d)))
    A[np.arange(len(idx)), idx] = 1.0
    return AffineMap(A, np.zeros(len(idx)))


# ----------------------------------------------------------------------------
# the linear program
# ----------------------------------------------------------------------------


@dataclass
class LyapunovLp:
    problem: sdp.SdpProblem
    dec: DDecomposition
    d: int
    d_f: int
    b_slices: list[slice]
    c_slices: list[slice]
    b_index: list[np.ndarray]   # positions in E_{d,m_i} of the kept b variables
    c_index: list[np.ndarray]
    counts: dict


def _reduce_rows(A: np.ndarray, rhs: np.ndarray, tol: float = 1e-10):
    """Drop zero and linearly dependent equality rows; error if inconsistent."""
    if A.shape[0] == 0:
        return A, rhs
    nz = np.abs(A).max(axis=1) > 0
    if np.any(np.abs(rhs[~nz]) > tol):
        raise ValueError("inconsistent equality constraints")
    A, rhs = A[nz], rhs[nz]
    scale = np.abs(A).max(axis=1)
    A, rhs = A / scale[:, None], rhs / scale
    _, R, piv = sla.qr(A.T, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    rank = int(np.sum(diag > tol * max(diag.max(), 1.0) * max(A.shape)))
    keep = np.sort(piv[:rank])
    return A[keep], rhs[keep]


def closed_form_counts(n: int, L: int, m: int, d_V: int, d_f: int) -> dict:
    """Closed-form variable/constraint counts for the hypercube fan."""
    sm = lambda D, k: sum(math.comb(t + k - 1, k - 1) for t in range(D + 1))
    nv = L * (sm(d_V, m) + sm(d_V + d_f - 1, m) - (d_V + 1))
    nc = nv + L * (sm(d_V, n) + sm(d_V + d_f - 1, n))
    return {"vars": nv, "cons": nc}


def structural_counts(dec: DDecomposition, d: int, d_f: int) -> dict:
    """The same counts read off the actual decomposition (sign, continuity and Lie-derivative rows)."""
    n = dec.n
    nv = sum(basis_size(p.m, d) + basis_size(p.m, d + d_f - 1) - len(origin_support(p, d)) for p in dec.pieces)
    pairs = {(i, j) for i, _, j, _ in dec.shared}
    nc = nv + len(pairs) * basis_size(n, d) + dec.L * basis_size(n, d + d_f - 1)
    return {"vars": nv, "cons": nc}


def assemble_lp(dec: DDecomposition, f: Sequence[dict], d: int, gamma_cap: float = 1.0,
                decrease: str = "trace") -> LyapunovLp:
    """LP over y = (gamma, b_1, c_1, ..., b_L, c_L): minimize -gamma.

    b entries nonzero at the origin are removed (they must vanish), as are c
    entries nonzero at the origin (the constant term of the Lie derivative is
    zero and c <= 0 forces each of them to zero).
    """
    if d < 2:
        raise ValueError("degree must be at least 2")
    n = dec.n
    if len(f) != n:
        raise ValueError("vector field dimension mismatch")
    d_f = max(vector_field_space(f, n), 1)
    Dc = d + d_f - 1
    b_sl, c_sl, b_idx, c_idx = [], [], [], []
    Fb, Hb, Gb, Fc, Hc, Jb = [], [], [], [], [], []
    pos = 1
    for p in dec.pieces:
        kb = np.setdiff1d(np.arange(basis_size(p.m, d)), origin_support(p, d))
        kc = np.setdiff1d(np.arange(basis_size(p.m, Dc)), origin_support(p, Dc))
        b_idx.append(kb)
        c_idx.append(kc)
        b_sl.append(slice(pos, pos + len(kb)))
        pos += len(kb)
        c_sl.append(slice(pos, pos + len(kc)))
        pos += len(kc)
        Hb.append(map_H(p, d).A[:, kb])
        Gb.append(map_G(p, d, f).A[:, kb])
        Fc_full = map_F(p, Dc).A
        Fc.append(Fc_full[:, kc])
        Hc.append(map_H(p, Dc).A[:, kc])
        Jb.append(kb)
    K = pos
    # inequality rows G y >= h
    rows, cols, vals, h = [], [], [], []
    r = 0

    def add(row_entries, rhs):
        nonlocal r
        for c, v in row_entries:
            rows.append(r)
            cols.append(c)
            vals.append(v)
        h.append(rhs)
        r += 1

    for i in range(dec.L):
        for c in range(b_sl[i].start, b_sl[i].stop):
            add([(c, 1.0)], 0.0)
        for c in range(c_sl[i].start, c_sl[i].stop):
            add([(c, -1.0)], 0.0)
        for row in Hb[i]:
            add([(b_sl[i].start + k, v) for k, v in enumerate(row) if v != 0], 1.0)
        if decrease == "each":
            for row in Hc[i]:
                add([(c_sl[i].start + k, -v) for k, v in enumerate(row) if v != 0] + [(0, -1.0)], 0.0)
        elif decrease in ("trace", "hybrid"):
            if decrease == "hybrid":
                for row in Hc[i]:
                    add([(c_sl[i].start + k, -v) for k, v in enumerate(row) if v != 0], 0.0)
            row = Hc[i].sum(axis=0)
            add([(c_sl[i].start + k, -v) for k, v in enumerate(row) if v != 0] + [(0, -1.0)], 0.0)
        else:
            raise ValueError(f"unknown decrease rule {decrease!r}")
    add([(0, -1.0)], -gamma_cap)
    Gm = sp.csr_matrix((vals, (rows, cols)), shape=(r, K))
    # equality rows
    eq_blocks = []
    for i in range(dec.L):
        E = np.zeros((Gb[i].shape[0], K))
        E[:, b_sl[i]] = Gb[i]
        E[:, c_sl[i]] = -Fc[i]
        eq_blocks.append(E)
    for i, k, j, l in dec.shared:
        Ji = map_J(dec.pieces[i], d, k).A[:, b_idx[i]]
        Jj = map_J(dec.pieces[j], d, l).A[:, b_idx[j]]
        E = np.zeros((Ji.shape[0], K))
        E[:, b_sl[i]] = Ji
        E[:, b_sl[j]] -= Jj
        eq_blocks.append(E)
    Eq = np.vstack(eq_blocks) if eq_blocks else np.zeros((0, K))
    Eq, eq_rhs = _reduce_rows(Eq, np.zeros(Eq.shape[0]))
    a = np.zeros(K)
    a[0] = -1.0
    prob = sdp.SdpProblem.linear_program(Gm, np.array(h), a, sp.csr_matrix(Eq), eq_rhs)
    counts = structural_counts(dec, d, d_f)
    counts.update(lp_vars=K, lp_ineq=r, lp_eq=Eq.shape[0])
    return LyapunovLp(prob, dec, d, d_f, b_sl, c_sl, b_idx, c_idx, counts)


# ----------------------------------------------------------------------------
# certificates
# ----------------------------------------------------------------------------


@dataclass
class PiecewisePolynomial:
    dec: DDecomposition
    coeffs: list[np.ndarray]   # x-coefficients per piece over MonomialSpace(n, d)
    d: int

    def __post_init__(self):
        self.space = MonomialSpace(self.dec.n, self.d)

    def __call__(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(X)
        loc = self.dec.locate(X)
        if np.any(loc < 0):
            raise ValueError("point outside the decomposition")
        out = np.empty(len(X))
        for i in np.unique(loc):
            sel = loc == i
            out[sel] = self.space.evaluate(self.coeffs[i], X[sel])
        return out

    def piece_value(self, i: int, X: np.ndarray) -> np.ndarray:
        return self.space.evaluate(self.coeffs[i], X)

    def terms(self, i: int, tol: float = 0.0) -> dict:
        return {e: float(c) for e, c in zip(self.space.exps, self.coeffs[i]) if abs(c) > tol}


@dataclass
class HandelmanCertificate:
    dec: DDecomposition
    d: int
    b: list[np.ndarray]   # full vectors over E_{d, m_i}
    c: list[np.ndarray]   # full vectors over E_{d + d_f - 1, m_i}
    gamma: float
    V: PiecewisePolynomial
    Vdot: PiecewisePolynomial
    validation: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps({
            "d": self.d, "gamma": self.gamma,
            "decomposition": self.dec.to_dict(),
            "b": [x.tolist() for x in self.b], "c": [x.tolist() for x in self.c],
            "validation": self.validation,
        })


@dataclass
class LpResult:
    feasible: bool
    gamma: float
    status: str
    certificate: HandelmanCertificate | None
    lp: LyapunovLp


def solve_lyapunov_lp(lp: LyapunovLp, f: Sequence[dict], eps: float = 1e-8, max_iter: int = 150,
                      positive_tol: float = 1e-6) -> LpResult:
    sol = sdp.solve(lp.problem, eps=eps, max_iter=max_iter)
    y = sol.y
    gamma = float(y[0])
    if sol.status not in ("optimal", "max_iter", "stall"):
        return LpResult(False, -math.inf, sol.status, None, lp)
    dec = lp.dec
    b_full, c_full, Vc, Zc = [], [], [], []
    Dc = lp.d + lp.d_f - 1
    for i, p in enumerate(dec.pieces):
        b = np.zeros(basis_size(p.m, lp.d))
        b[lp.b_index[i]] = np.maximum(y[lp.b_slices[i]], 0.0)
        c = np.zeros(basis_size(p.m, Dc))
        c[lp.c_index[i]] = np.minimum(y[lp.c_slices[i]], 0.0)
        b_full.append(b)
        c_full.append(c)
        Vc.append(map_F(p, lp.d).A @ b)
        Zc.append(map_F(p, Dc).A @ c)
    V = PiecewisePolynomial(dec, Vc, lp.d)
    Vdot = PiecewisePolynomial(dec, Zc, Dc)
    cert = HandelmanCertificate(dec, lp.d, b_full, c_full, gamma, V, Vdot)
    ok = sol.status == "optimal" and gamma > positive_tol
    return LpResult(ok, gamma, sol.status, cert, lp)


def lie_derivative(V: PiecewisePolynomial, f: Sequence[dict]) -> PiecewisePolynomial:
    n = V.dec.n
    d_f = vector_field_space(f, n)
    big = MonomialSpace(n, V.d + d_f - 1 if d_f else V.d)
    out = []
    for coef in V.coeffs:
        C = V.space.embed(coef, big)
        acc = np.zeros(big.size)
        for j in range(n):
            dP = big.derivative(C, j)
            for e, c in f[j].items():
                if c != 0:
                    acc += big.times_monomial(dP, tuple(int(v) for v in e), float(c))
        out.append(acc)
    return PiecewisePolynomial(V.dec, out, big.D)


def sample_piece(p: Piece, count: int, rng) -> np.ndarray:
    V = p.as_polytope().vertices()
    lo, hi = V.min(axis=0), V.max(axis=0)
    pts = []
    while sum(len(q) for q in pts) < count:
        X = rng.uniform(lo, hi, size=(4 * count, len(lo)))
        pts.append(X[np.all(X @ p.h.T + p.g >= 0, axis=1)])
    return np.concatenate(pts)[:count]


def sample_facet(p: Piece, k: int, count: int, rng) -> np.ndarray:
    F = p.as_polytope().facet_vertices(k)
    w = rng.dirichlet(np.ones(len(F)), size=count)
    return w @ F


def validate_certificate(cert: HandelmanCertificate, f: Sequence[dict], grid: int = 1000, seed: int = 0) -> dict:
    """Grid checks of the Lyapunov conditions on every piece."""
    rng = np.random.default_rng(seed)
    n = cert.dec.n
    true_dot = lie_derivative(cert.V, f)
    stats = {"V0": 0.0, "min_V_over_r2": math.inf, "max_Vdot_over_r2": -math.inf,
             "continuity": 0.0, "lie_match": 0.0}
    origin = np.zeros((1, n))
    for i, p in enumerate(cert.dec.pieces):
        stats["V0"] = max(stats["V0"], abs(float(cert.V.piece_value(i, origin)[0])))
        X = sample_piece(p, grid, rng)
        r2 = np.sum(X ** 2, axis=1)
        keep = r2 > 1e-10
        X, r2 = X[keep], r2[keep]
        v = cert.V.piece_value(i, X)
        vd = true_dot.piece_value(i, X)
        zd = cert.Vdot.piece_value(i, X)
        stats["min_V_over_r2"] = min(stats["min_V_over_r2"], float(np.min(v / r2)))
        stats["max_Vdot_over_r2"] = max(stats["max_Vdot_over_r2"], float(np.max(vd / r2)))
        scale = 1 + np.abs(vd).max()
        stats["lie_match"] = max(stats["lie_match"], float(np.abs(vd - zd).max() / scale))
    for i, k, j, l in cert.dec.shared:
        X = sample_facet(cert.dec.pieces[i], k, 100, rng)
        gap = np.abs(cert.V.piece_value(i, X) - cert.V.piece_value(j, X))
        stats["continuity"] = max(stats["continuity"], float(gap.max()))
    vscale = max(1.0, max(np.abs(c).max() for c in cert.V.coeffs))
    stats["ok"] = bool(stats["V0"] <= 1e-8 * vscale and stats["continuity"] <= 1e-8 * vscale
                       and stats["min_V_over_r2"] > 0 and stats["max_Vdot_over_r2"] < 0
                       and stats["lie_match"] <= 1e-6)
    cert.validation = stats
    return stats


def find_lyapunov(dec_or_poly, f: Sequence[dict], d_max: int = 8, d_min: int | None = None,
                  validate: bool = True, kind: str = "fan", decrease: str = "trace") -> LpResult:
    """Raise the degree from max(2, d_f) until the LP certifies stability."""
    dec = d_decompose(dec_or_poly, kind) if isinstance(dec_or_poly, Polytope) else dec_or_poly
    n = dec.n
    d_f = max(vector_field_space(f, n), 1)
    start = d_min if d_min is not None else max(2, d_f)
    res = None
    for d in range(start, d_max + 1):
        lp = assemble_lp(dec, f, d, decrease=decrease)
        res = solve_lyapunov_lp(lp, f)
        if res.feasible:
            if validate:
                stats = validate_certificate(res.certificate, f)
                if not stats["ok"]:
                    res.feasible = False
                    res.status = "validation-failed"
                    continue
            return res
    if res is None:
        raise ValueError("empty degree range")
    return res


def max_certified_scaling(gamma: Polytope, f: Sequence[dict], d: int, kind: str = "fan",
                          decrease: str = "trace", lo: float = 0.05, hi: float = 4.0,
                          tol: float = 2e-3, validate: bool = True) -> tuple[float, LpResult | None]:
    """Bisect the largest s such that the LP certifies stability on s * gamma.

    ``lo`` must be certifiable. Returns the last certified scale and its result.
    """
    def attempt(s):
        dec = d_decompose(gamma.scaled(s), kind)
        res = solve_lyapunov_lp(assemble_lp(dec, f, d, decrease=decrease), f)
        if res.feasible and validate:
            res.feasible = validate_certificate(res.certificate, f, grid=400)["ok"]
        return res

    best = attempt(lo)
    if not best.feasible:
        return 0.0, None
    top = attempt(hi)
    if top.feasible:
        return hi, top
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        r = attempt(mid)
        if r.feasible:
            lo, best = mid, r
        else:
            hi = mid
    return lo, best


def largest_inscribed_sublevel(V: PiecewisePolynomial, gamma: Polytope, per_facet: int = 10000,
                               seed: int = 0) -> float:
    """Smallest value of V on the boundary of the polytope (sampled and refined)."""
    from scipy.optimize import minimize_scalar

    rng = np.random.default_rng(seed)
    best = math.inf
    for k in range(gamma.K):
        F = gamma.facet_vertices(k)
        if len(F) < gamma.n:
            continue
        if gamma.n == 2 and len(F) == 2:
            t = np.linspace(0, 1, per_facet)
            X = F[0] + t[:, None] * (F[1] - F[0])
            vals = V(X)
            i = int(np.argmin(vals))
            lo, hi = t[max(i - 1, 0)], t[min(i + 1, per_facet - 1)]
            r = minimize_scalar(lambda s: float(V((F[0] + s * (F[1] - F[0]))[None])[0]),
                                bounds=(lo, hi), method="bounded")
            best = min(best, float(vals[i]), float(r.fun))
        else:
            X = rng.dirichlet(np.ones(len(F)), size=per_facet) @ F
            best = min(best, float(V(X).min()))
    return best


def sublevel_boundary(V: PiecewisePolynomial, gamma: Polytope, level: float, rays: int = 360) -> np.ndarray:
    """Points on {V = level} along rays from the origin (planar case), for plotting."""
    if gamma.n != 2:
        raise ValueError("boundary tracing is planar")
    pts = []
    for th in np.linspace(0, 2 * np.pi, rays, endpoint=False):
        u = np.array([np.cos(th), np.sin(th)])
        Wu = gamma.W @ u
        tmax = np.min(gamma.u[Wu < 0] / -Wu[Wu < 0])
        lo, hi = 0.0, tmax
        if V((hi * u)[None])[0] < level:
            pts.append(hi * u)
            continue
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            if V((mid * u)[None])[0] < level:
                lo = mid
            else:
                hi = mid
        pts.append(lo * u)
    return np.array(pts)


# ----------------------------------------------------------------------------
# polynomial minimization over a polytope
# ----------------------------------------------------------------------------


def min_poly_over_polytope(f: dict, gamma: Polytope, d: int) -> float:
    """Largest t with f - t = sum_a b_a prod_i (w_i^T x + u_i)^{a_i}, b >= 0, |a| <= d."""
    n = gamma.n
    d_f = max((sum(e) for e in f), default=0)
    D = max(d, d_f)
    space = MonomialSpace(n, D)
    piece = Piece(gamma.W, gamma.u)
    F = expansion_matrix(piece, d, MonomialSpace(n, d))
    F = MonomialSpace(n, d).embed(F, space)
    rhs = poly_vector(f, space)
    nb = F.shape[1]
    # y = (t, b); f coefficients = t e_0 + F b
    E = np.zeros((space.size, nb + 1))
    E[:, 1:] = F
    E[space.index[(0,) * n], 0] = 1.0
    try:
        E, rhs = _reduce_rows(E, rhs)
    except ValueError:
        return -math.inf
    G = sp.hstack([sp.csr_matrix((nb, 1)), sp.identity(nb)]).tocsr()
    a = np.zeros(nb + 1)
    a[0] = -1.0
    prob = sdp.SdpProblem.linear_program(G, np.zeros(nb), a, sp.csr_matrix(E), rhs)
    sol = sdp.solve(prob, eps=1e-9, max_iter=200)
    if sol.status != "optimal":
        return -math.inf
    return float(sol.y[0])


def min_poly_bounds(f: dict, gamma: Polytope, d_max: int, eps: float = 1e-6,
                    stop_early: bool = True) -> list[float]:
    """Bounds for d = d_f .. d_max, optionally stopping once successive bounds differ by less than eps."""
    d_f = max((sum(e) for e in f), default=0)
    out = []
    for d in range(max(d_f, 1), d_max + 1):
        out.append(min_poly_over_polytope(f, gamma, d))
        if stop_early and len(out) > 1 and abs(out[-1] - out[-2]) < eps:
            break
    return out
