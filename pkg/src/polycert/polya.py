"""Polya coefficient tensors and the block-diagonal SDP they induce.

For P(a) = sum_h P_h a^h and a (multi-)homogeneous A(a):

* ``beta[h, g]`` is the scalar multiplying P_h in the coefficient of a^g of
  prod_i (sum of group i)^d1 * P(a);
* ``H[h, g]`` is the matrix with sum_h (H[h, g]^T P_h + P_h H[h, g]) equal to
  the coefficient of a^g of prod_i (sum of group i)^d2 * (A^T P + P A).

Both are built by repeated convolution with the unit-degree monomials (one
unit vector per group at once), which is exactly multiplication by the
product of the group sums.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np

from .polycore import (
    MatrixPolynomial,
    exponents,
    index_table,
    multi_count,
    multi_exponents,
    multi_index_table,
    multinomial,
    split_exponent,
)

# ----------------------------------------------------------------------------
# shift maps
# ----------------------------------------------------------------------------


@lru_cache(maxsize=None)
def shift_sources(sizes: tuple[int, ...], degrees: tuple[int, ...]) -> np.ndarray:
    """For each monomial of degree ``degrees + 1`` (per group), the indices of
    the degree-``degrees`` monomials that feed it, or -1.

    Shape (count(degrees + 1), prod(sizes)); the column order enumerates one
    unit vector per group, first group slowest.
    """
    new = multi_exponents(sizes, [d + 1 for d in degrees])
    old_idx = multi_index_table(sizes, degrees)
    units = []
    for combo in itertools.product(*[range(l) for l in sizes]):
        lam = []
        for l, k in zip(sizes, combo):
            u = [0] * l
            u[k] = 1
            lam += u
        units.append(np.array(lam))
    src = np.full((len(new), len(units)), -1, dtype=np.int64)
    for j, g in enumerate(new):
        ga = np.array(g)
        for k, lam in enumerate(units):
            prev = ga - lam
            if prev.min() >= 0:
                src[j, k] = old_idx[tuple(int(v) for v in prev)]
    return src


def _convolve(old: np.ndarray, src: np.ndarray, cols: slice | None = None) -> np.ndarray:
    """new[:, j] = sum_k old[:, src[j, k]] over valid k, summed in k order.

    ``old`` has the monomial index on axis 1. Restricting ``cols`` gives the
    same bits as computing everything and slicing, so work can be split over
    column ranges.
    """
    s = src if cols is None else src[cols]
    pad_shape = list(old.shape)
    pad_shape[1] += 1
    padded = np.zeros(pad_shape, dtype=old.dtype)
    padded[:, :-1] = old
    out = np.zeros((old.shape[0], s.shape[0]) + old.shape[2:], dtype=old.dtype)
    for k in range(s.shape[1]):
        out += padded[:, s[:, k]]
    return out


# ----------------------------------------------------------------------------
# beta and H
# ----------------------------------------------------------------------------


def _as_tuple(x, ngroups: int) -> tuple[int, ...]:
    if np.isscalar(x):
        return (int(x),) * ngroups
    return tuple(int(v) for v in x)


def compute_beta_multi(sizes: Sequence[int], Dp: Sequence[int], d1: int) -> np.ndarray:
    """beta of shape (L0, L) with L0 = prod f(l_i, Dp_i), L = prod f(l_i, Dp_i + d1)."""
    sizes = tuple(sizes)
    Dp = _as_tuple(Dp, len(sizes))
    if len(Dp) != len(sizes):
        raise ValueError("one degree per group required")
    if min(sizes) < 1:
        raise ValueError("group sizes must be positive")
    L0 = multi_count(sizes, Dp)
    beta = np.eye(L0)
    for step in range(d1):
        beta = _convolve(beta, shift_sources(sizes, tuple(d + step for d in Dp)))
    return beta


def compute_beta(l: int, d_p: int, d1: int) -> np.ndarray:
    return compute_beta_multi((l,), (d_p,), d1)


def initial_H(A: MatrixPolynomial, sizes: Sequence[int], Dp: Sequence[int]) -> np.ndarray:
    """H0[h, g] = A_{g - h} (zero when g - h is not an exponent of A)."""
    sizes = tuple(sizes)
    Da = A.degree_vector()
    if Da is None:
        raise ValueError("A must be (multi-)homogeneous")
    if A.sizes != sizes:
        raise ValueError("A's variable groups do not match")
    Dp = _as_tuple(Dp, len(sizes))
    hs = multi_exponents(sizes, Dp)
    tgt = multi_index_table(sizes, tuple(p + a for p, a in zip(Dp, Da)))
    n = A.n
    H0 = np.zeros((len(hs), len(tgt), n, n))
    for lam, c in A.terms.items():
        for i, h in enumerate(hs):
            g = tuple(a + b for a, b in zip(h, lam))
            H0[i, tgt[g]] += c
    return H0


def compute_H_multi(A: MatrixPolynomial, sizes: Sequence[int], Dp: Sequence[int], d2: int) -> np.ndarray:
    """H of shape (L0, M, n, n) with M = prod f(l_i, Dp_i + Da_i + d2)."""
    sizes = tuple(sizes)
    Dp = _as_tuple(Dp, len(sizes))
    Da = A.degree_vector()
    H = initial_H(A, sizes, Dp)
    base = tuple(p + a for p, a in zip(Dp, Da))
    for step in range(d2):
        H = _convolve(H, shift_sources(sizes, tuple(d + step for d in base)))
    return H


def compute_H(A: MatrixPolynomial, l: int, d_p: int, d_a: int | None, d2: int) -> np.ndarray:
    Da = A.degree_vector()
    if Da is None:
        raise ValueError("A must be homogeneous")
    if d_a is not None and Da[0] != d_a:
        raise ValueError(f"A has degree {Da[0]}, declared {d_a}")
    return compute_H_multi(A, (l,), (d_p,), d2)


def zeta_weights(sizes: Sequence[int], Dp: Sequence[int], d1: int, beta: np.ndarray | None = None) -> np.ndarray:
    """sum_h beta[h, g] * prod_i Dp_i! / h_i! for every g of degree Dp + d1.

    This equals the coefficient of a^g in prod_i (sum of group i)^(Dp_i + d1).
    """
    sizes = tuple(sizes)
    Dp = _as_tuple(Dp, len(sizes))
    if beta is None:
        beta = compute_beta_multi(sizes, Dp, d1)
    w = np.array([
        math.prod(multinomial(d, part) for d, part in zip(Dp, split_exponent(h, sizes)))
        for h in multi_exponents(sizes, Dp)
    ])
    return w @ beta


# ----------------------------------------------------------------------------
# SDP assembly
# ----------------------------------------------------------------------------


def sym_basis(n: int) -> np.ndarray:
    """Basis of symmetric n x n matrices: diagonal units, then (i, k) pairs for i < k."""
    out = []
    for i in range(n):
        E = np.zeros((n, n))
        E[i, i] = 1.0
        out.append(E)
    for i in range(n):
        for k in range(i + 1, n):
            E = np.zeros((n, n))
            E[i, k] = E[k, i] = 1.0
            out.append(E)
    return np.array(out)


def sym_to_vec(P: np.ndarray) -> np.ndarray:
    n = P.shape[0]
    iu = np.triu_indices(n, 1)
    return np.concatenate([np.diag(P), P[iu]])


def vec_to_sym(v: np.ndarray, n: int) -> np.ndarray:
    return np.tensordot(v, sym_basis(n), axes=(0, 0))


@dataclass
class PolyaData:
    sizes: tuple[int, ...]
    Dp: tuple[int, ...]
    Da: tuple[int, ...]
    d1: int
    d2: int
    beta: np.ndarray
    H: np.ndarray

    @property
    def L0(self) -> int:
        return self.beta.shape[0]

    @property
    def L(self) -> int:
        return self.beta.shape[1]

    @property
    def M(self) -> int:
        return self.H.shape[1]


def _raise_levels(T: np.ndarray, sizes, start, steps: int, pool, phase: str) -> np.ndarray:
    """Apply ``steps`` shifts, each worker producing its own range of new columns."""
    for step in range(steps):
        src = shift_sources(sizes, tuple(d + step for d in start))
        parts = pool.map_blocks(
            lambda rng: [_convolve(T, src, slice(rng.start, rng.stop))] if len(rng) else [],
            src.shape[0], phase)
        T = np.concatenate(parts, axis=1)
    return T


def polya_data(A: MatrixPolynomial, Dp, d1: int, d2: int, pool=None) -> PolyaData:
    sizes = A.sizes
    Dp = _as_tuple(Dp, len(sizes))
    Da = A.degree_vector()
    if Da is None:
        raise ValueError("A must be (multi-)homogeneous")
    if pool is None or pool.size == 1:
        beta = compute_beta_multi(sizes, Dp, d1)
        H = compute_H_multi(A, sizes, Dp, d2)
    else:
        beta = _raise_levels(np.eye(multi_count(sizes, Dp)), sizes, Dp, d1, pool, "setup-beta")
        H = _raise_levels(initial_H(A, sizes, Dp), sizes, tuple(p + a for p, a in zip(Dp, Da)),
                          d2, pool, "setup-H")
    data = PolyaData(sizes, Dp, tuple(Da), d1, d2, beta, H)
    if pool is not None:
        pool.count_messages("setup", setup_messages(data, A.n, pool.size))
    return data


def setup_messages(data: "PolyaData", n: int, N: int) -> list[int]:
    """Coefficients held by each worker after set-up: L0 per beta column, L0 n^2 per H column."""
    from .parallel import partition_blocks

    Lp = partition_blocks(data.L, N).sizes
    Mp = partition_blocks(data.M, N).sizes
    return [data.L0 * (lw + mw * n * n) for lw, mw in zip(Lp, Mp)]


def block_entries(data: PolyaData, n: int, delta: float, blocks: range | None = None):
    """Per-block SDP data (C_j and the nonzero B_{i,j}) for the requested blocks.

    Dual variable i = e + Nt * h (zero-based) multiplies basis element e of P_h.
    Returns a list of (C_j, idx_j, vals_j).
    """
    Nt = n * (n + 1) // 2
    E = sym_basis(n)
    L, M = data.L, data.M
    zeta = zeta_weights(data.sizes, data.Dp, data.d1, data.beta)
    out = []
    for j in (range(L + M) if blocks is None else blocks):
        if j < L:
            C = delta * zeta[j] * np.eye(n)
            hs = np.nonzero(data.beta[:, j])[0]
            idx = (hs[:, None] * Nt + np.arange(Nt)[None, :]).ravel()
            vals = (data.beta[hs, j][:, None, None, None] * E[None]).reshape(-1, n, n)
        else:
            C = np.zeros((n, n))
            Hj = data.H[:, j - L]
            hs = np.nonzero(np.abs(Hj).reshape(len(Hj), -1).max(axis=1))[0]
            idx = (hs[:, None] * Nt + np.arange(Nt)[None, :]).ravel()
            Hs = Hj[hs]
            prod = np.einsum("hba,ebc->heac", Hs, E)  # H^T E
            vals = -(prod + np.swapaxes(prod, -1, -2)).reshape(-1, n, n)
        out.append((C, idx.astype(np.int64), vals))
    return out


def assemble_from_data(data: PolyaData, n: int, delta: float = 1e-2, pool=None):
    from .sdp import SdpProblem

    if delta <= 0:
        raise ValueError("delta must be positive")
    K = n * (n + 1) // 2 * data.L0
    nb = data.L + data.M
    if pool is None:
        entries = block_entries(data, n, delta)
    else:
        entries = pool.map_blocks(lambda rng: block_entries(data, n, delta, rng), nb, "setup-sdp")
    return SdpProblem.from_block_entries(entries, K, n, structure=(data.L, data.M, n))


def assemble_sdp_multi(A: MatrixPolynomial, Dp, d1: int, d2: int, delta: float = 1e-2, pool=None):
    """SDP whose dual feasibility certifies P > 0 and A^T P + P A < 0 on the multi-simplex."""
    if delta <= 0:
        raise ValueError("delta must be positive")
    data = polya_data(A, Dp, d1, d2, pool)
    return assemble_from_data(data, A.n, delta, pool), data


def assemble_sdp(A: MatrixPolynomial, d_p: int, d1: int, d2: int, delta: float = 1e-2, pool=None):
    if len(A.groups) != 1:
        raise ValueError("single-simplex assembly needs one variable group")
    return assemble_sdp_multi(A, (d_p,), d1, d2, delta, pool)


def recover_P(y: np.ndarray, data: PolyaData, n: int, groups=None) -> MatrixPolynomial:
    """P_h = sum_e E_e y[e + Nt h] as a MatrixPolynomial."""
    Nt = n * (n + 1) // 2
    hs = multi_exponents(data.sizes, data.Dp)
    E = sym_basis(n)
    terms = {h: np.tensordot(y[i * Nt:(i + 1) * Nt], E, axes=(0, 0)) for i, h in enumerate(hs)}
    if groups is None:
        groups = tuple((f"g{i + 1}", s) for i, s in enumerate(data.sizes))
    return MatrixPolynomial(groups, terms, (n, n))


def dims(sizes: Sequence[int], Dp, Da, d1: int, d2: int, n: int) -> dict:
    """Block and variable counts without building anything."""
    sizes = tuple(sizes)
    Dp = _as_tuple(Dp, len(sizes))
    Da = _as_tuple(Da, len(sizes))
    L0 = multi_count(sizes, Dp)
    return {
        "L0": L0,
        "L": multi_count(sizes, [d + d1 for d in Dp]),
        "M": multi_count(sizes, [p + a + d2 for p, a in zip(Dp, Da)]),
        "K": n * (n + 1) // 2 * L0,
    }


# ----------------------------------------------------------------------------
# scalar positivity tools
# ----------------------------------------------------------------------------


def _coeff_vector(f: MatrixPolynomial) -> tuple[np.ndarray, int, int]:
    if len(f.groups) != 1 or f.shape not in ((), (1, 1)):
        raise ValueError("expected a scalar polynomial in one variable group")
    if not f.is_homogeneous():
        raise ValueError("polynomial must be homogeneous")
    l, d = f.nvars, f.degree()
    idx = index_table(l, d)
    v = np.zeros(len(idx))
    for e, c in f.terms.items():
        v[idx[e]] += float(np.asarray(c).reshape(()))
    return v, l, d


def polya_product(coeffs: np.ndarray, l: int, d: int, e: int) -> np.ndarray:
    """Coefficients (degree d + e, lexicographic) of (sum a)^e * f."""
    v = coeffs[None, :]
    for step in range(e):
        v = _convolve(v, shift_sources((l,), (d + step,)))
    return v[0]


def polya_certifies(coeffs: np.ndarray, l: int, d: int, e_max: int, tol: float = 0.0) -> int | None:
    """Smallest e <= e_max giving strictly positive coefficients, or None."""
    v = coeffs.copy()
    for e in range(e_max + 1):
        if e:
            v = _convolve(v[None, :], shift_sources((l,), (d + e - 1,)))[0]
        if np.all(v > tol):
            return e
    return None


def min_poly_over_simplex(f: MatrixPolynomial, e_max: int = 10, gamma_l: float | None = None,
                          gamma_u: float | None = None, b_max: int = 25) -> float:
    """Lower bound on min f over the unit simplex by bisection on Polya certificates.

    gamma is accepted when (sum a)^e (f - gamma (sum a)^d) has all positive
    coefficients for some e <= e_max.
    """
    v, l, d = _coeff_vector(f)
    mult = np.array([multinomial(d, h) for h in exponents(l, d)])
    if gamma_l is None:
        gamma_l = float(np.min(v / mult))
    if gamma_u is None:
        gamma_u = float(min(v[index_table(l, d)[tuple(d if k == i else 0 for k in range(l))]] for i in range(l)))
    if gamma_l > gamma_u:
        raise ValueError("gamma_l must not exceed gamma_u")
    lo, hi = gamma_l, gamma_u
    for _ in range(b_max):
        mid = 0.5 * (lo + hi)
        if polya_certifies(v - mid * mult, l, d, e_max) is not None:
            lo = mid
        else:
            hi = mid
    return lo


@dataclass
class NonnegVerdict:
    habicht_e: int | None
    orthants: dict[tuple[int, ...], int | None]

    @property
    def positive_definite(self) -> bool:
        return self.habicht_e is not None


def _scalar_terms(f: MatrixPolynomial) -> dict:
    return {e: float(np.asarray(c).reshape(())) for e, c in f.terms.items()}


def habicht_test(f: MatrixPolynomial, e_max: int = 10, tol: float = 1e-12) -> int | None:
    """First e with (sum x_i^2)^e f a positive combination of even monomials.

    Needs f homogeneous; pure powers x_i^(2k) must carry positive weight so
    the product is positive away from the origin.
    """
    if not f.is_homogeneous():
        raise ValueError("Habicht test needs a homogeneous polynomial")
    n = f.nvars
    sq_terms = {}
    for i in range(n):
        e = [0] * n
        e[i] = 2
        sq_terms[tuple(e)] = np.ones(())
    S = MatrixPolynomial(f.groups, sq_terms)
    g = MatrixPolynomial(f.groups, dict(f.terms))
    for e in range(e_max + 1):
        if e:
            g = g * S
        t = _scalar_terms(g)
        deg = g.degree()
        ok = all(c >= -tol for c in t.values())
        ok &= all(c <= tol or all(v % 2 == 0 for v in ex) for ex, c in t.items())
        for i in range(n):
            pure = tuple(deg if k == i else 0 for k in range(n))
            ok &= t.get(pure, 0.0) > tol
        if ok:
            return e
    return None


def orthant_test(f: MatrixPolynomial, signs: Sequence[int], lam_max: int = 10, tol: float = 1e-12) -> int | None:
    """First lambda with (1 + s^T x)^lambda f having sign(c_a) = prod s_i^a_i."""
    n = f.nvars
    s = np.asarray(signs)
    lin = {(0,) * n: np.ones(())}
    for i in range(n):
        e = [0] * n
        e[i] = 1
        lin[tuple(e)] = np.array(float(s[i]))
    mult = MatrixPolynomial(f.groups, lin)
    g = MatrixPolynomial(f.groups, dict(f.terms))
    for lam in range(lam_max + 1):
        if lam:
            g = g * mult
        ok = True
        for ex, c in _scalar_terms(g).items():
            want = float(np.prod(s ** np.asarray(ex)))
            if c * want < -tol:
                ok = False
                break
        if ok:
            return lam
    return None


def global_nonnegativity_tests(f: MatrixPolynomial, e_max: int = 10) -> NonnegVerdict:
    n = f.nvars
    habicht = habicht_test(f, e_max) if f.is_homogeneous() else None
    orth = {tuple(s): orthant_test(f, s, e_max) for s in itertools.product((1, -1), repeat=n)}
    return NonnegVerdict(habicht, orth)
