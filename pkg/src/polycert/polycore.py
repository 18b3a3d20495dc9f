"""Matrix-valued polynomials over groups of simplex variables.

Exponent vectors are plain tuples of ints, flattened across variable groups.
Monomials of a fixed degree are ordered lexicographically: ``g`` precedes ``h``
when the leftmost nonzero entry of ``g - h`` is positive, so ``(d, 0, ..., 0)``
comes first.
"""

from __future__ import annotations

import itertools
import json
import math
import warnings
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable, Mapping, Sequence

import numpy as np

Exponent = tuple[int, ...]

SYM_TOL = 1e-9


def count(l: int, d: int) -> int:
    """Number of l-variate monomials of degree d."""
    if l <= 0 or d < 0:
        return 0
    return math.comb(l + d - 1, l - 1)


@lru_cache(maxsize=None)
def _exponents(l: int, d: int) -> tuple[Exponent, ...]:
    if l == 0:
        return ((),) if d == 0 else ()
    if l == 1:
        return ((d,),)
    out = []
    for first in range(d, -1, -1):
        for rest in _exponents(l - 1, d - first):
            out.append((first,) + rest)
    return tuple(out)


def exponents(l: int, d: int) -> list[Exponent]:
    """All exponents of l-variate degree-d monomials, in lexicographic order."""
    return list(_exponents(l, d))


@lru_cache(maxsize=None)
def index_table(l: int, d: int) -> dict[Exponent, int]:
    """Zero-based position of each exponent in ``exponents(l, d)``."""
    return {g: i for i, g in enumerate(_exponents(l, d))}


def lex_index(gamma: Sequence[int], d: int | None = None) -> int:
    """One-based lexicographic position of ``gamma`` among degree-d exponents.

    Closed form: for each leading coordinate, count the members that share the
    prefix but carry a larger entry at that coordinate.
    """
    gamma = tuple(int(g) for g in gamma)
    if any(g < 0 for g in gamma):
        raise ValueError("negative exponent")
    total = sum(gamma)
    if d is None:
        d = total
    if total != d:
        raise ValueError(f"exponent {gamma} has degree {total}, expected {d}")
    l = len(gamma)
    idx = 1
    rem = d
    for j in range(l - 1):
        for v in range(gamma[j] + 1, rem + 1):
            idx += count(l - j - 1, rem - v)
        rem -= gamma[j]
    return idx


def exponent_at(l: int, d: int, index: int) -> Exponent:
    """Inverse of :func:`lex_index` (one-based)."""
    if not 1 <= index <= count(l, d):
        raise IndexError(f"index {index} outside 1..{count(l, d)}")
    out = []
    rem = d
    k = index - 1
    for j in range(l - 1):
        for v in range(rem, -1, -1):
            block = count(l - j - 1, rem - v)
            if k < block:
                out.append(v)
                rem -= v
                break
            k -= block
    out.append(rem)
    return tuple(out)


def multinomial(d: int, h: Sequence[int]) -> float:
    """d! / prod(h_i!) with log-gamma above 20 to stay in floating point range."""
    if sum(h) != d:
        raise ValueError("multinomial needs sum(h) == d")
    if d <= 20:
        v = math.factorial(d)
        for x in h:
            v //= math.factorial(x)
        return float(v)
    return math.exp(math.lgamma(d + 1) - sum(math.lgamma(x + 1) for x in h))


# ----------------------------------------------------------------------------
# multi-simplex monomial sets
# ----------------------------------------------------------------------------


@lru_cache(maxsize=None)
def _multi_exponents(sizes: tuple[int, ...], degrees: tuple[int, ...]) -> tuple[Exponent, ...]:
    parts = [_exponents(l, d) for l, d in zip(sizes, degrees)]
    return tuple(sum(combo, ()) for combo in itertools.product(*parts))


def multi_exponents(sizes: Sequence[int], degrees: Sequence[int]) -> list[Exponent]:
    """Exponents of a multi-homogeneous polynomial, lexicographic by group."""
    if len(sizes) != len(degrees):
        raise ValueError("one degree per group required")
    return list(_multi_exponents(tuple(sizes), tuple(degrees)))


@lru_cache(maxsize=None)
def multi_index_table(sizes: tuple[int, ...], degrees: tuple[int, ...]) -> dict[Exponent, int]:
    return {g: i for i, g in enumerate(_multi_exponents(sizes, degrees))}


def multi_count(sizes: Sequence[int], degrees: Sequence[int]) -> int:
    return math.prod(count(l, d) for l, d in zip(sizes, degrees))


def split_exponent(gamma: Sequence[int], sizes: Sequence[int]) -> list[Exponent]:
    out, pos = [], 0
    for l in sizes:
        out.append(tuple(gamma[pos:pos + l]))
        pos += l
    return out


# ----------------------------------------------------------------------------
# polynomial container
# ----------------------------------------------------------------------------


def _as_coef(c) -> np.ndarray:
    return np.array(c, dtype=float)


@dataclass
class MatrixPolynomial:
    """Sparse polynomial with array coefficients.

    ``groups`` is a tuple of ``(name, size)`` pairs; exponents are flattened
    over all groups. Coefficients share one shape: ``()`` for scalars or
    ``(r, c)`` for matrices.
    """

    groups: tuple[tuple[str, int], ...]
    terms: dict[Exponent, np.ndarray] = field(default_factory=dict)
    shape: tuple[int, ...] = ()
    symmetric: bool = False

    def __post_init__(self):
        self.groups = tuple((str(n), int(s)) for n, s in self.groups)
        nv = self.nvars
        clean: dict[Exponent, np.ndarray] = {}
        for e, c in self.terms.items():
            e = tuple(int(v) for v in e)
            if len(e) != nv:
                raise ValueError(f"exponent {e} has {len(e)} entries, expected {nv}")
            c = _as_coef(c)
            if not clean and not self.shape:
                self.shape = c.shape
            if c.shape != self.shape:
                raise ValueError("all coefficients must share one shape")
            if self.symmetric:
                if c.ndim != 2 or c.shape[0] != c.shape[1]:
                    raise ValueError("symmetric flag needs square coefficients")
                if np.max(np.abs(c - c.T), initial=0.0) > SYM_TOL * max(1.0, np.max(np.abs(c))):
                    raise ValueError("coefficient is not symmetric")
                c = 0.5 * (c + c.T)
            clean[e] = clean[e] + c if e in clean else c
        self.terms = clean
        self.shape = tuple(self.shape)

    # -- construction helpers ------------------------------------------------
    @classmethod
    def single(cls, l: int, terms: Mapping[Exponent, object], name: str = "a", **kw) -> "MatrixPolynomial":
        return cls(((name, l),), dict(terms), **kw)

    @classmethod
    def constant(cls, groups, value) -> "MatrixPolynomial":
        nv = sum(s for _, s in groups)
        return cls(tuple(groups), {(0,) * nv: _as_coef(value)})

    @classmethod
    def variable(cls, groups, k: int, shape: tuple[int, ...] = ()) -> "MatrixPolynomial":
        nv = sum(s for _, s in groups)
        e = [0] * nv
        e[k] = 1
        one = np.ones(()) if shape == () else np.eye(shape[0])
        return cls(tuple(groups), {tuple(e): one})

    # -- basic properties ----------------------------------------------------
    @property
    def nvars(self) -> int:
        return sum(s for _, s in self.groups)

    @property
    def sizes(self) -> tuple[int, ...]:
        return tuple(s for _, s in self.groups)

    @property
    def n(self) -> int:
        return self.shape[0] if self.shape else 1

    def group_degrees(self, e: Exponent) -> tuple[int, ...]:
        return tuple(sum(p) for p in split_exponent(e, self.sizes))

    def degree(self) -> int:
        return max((sum(e) for e in self.terms), default=0)

    def max_group_degrees(self) -> tuple[int, ...]:
        out = [0] * len(self.groups)
        for e in self.terms:
            for i, d in enumerate(self.group_degrees(e)):
                out[i] = max(out[i], d)
        return tuple(out)

    def degree_vector(self) -> tuple[int, ...] | None:
        """Per-group degrees if the polynomial is multi-homogeneous, else None."""
        degs = {self.group_degrees(e) for e in self.terms}
        if len(degs) == 1:
            return degs.pop()
        if not degs:
            return tuple(0 for _ in self.groups)
        return None

    def is_homogeneous(self) -> bool:
        return len({sum(e) for e in self.terms}) <= 1

    def zero_coef(self) -> np.ndarray:
        return np.zeros(self.shape)

    def coef(self, e: Sequence[int]) -> np.ndarray:
        return self.terms.get(tuple(e), self.zero_coef())

    def pruned(self, tol: float = 0.0) -> "MatrixPolynomial":
        keep = {e: c for e, c in self.terms.items() if np.max(np.abs(c), initial=0.0) > tol}
        return MatrixPolynomial(self.groups, keep, self.shape)

    # -- evaluation ----------------------------------------------------------
    def __call__(self, x: Sequence[float]) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = self.zero_coef().astype(float)
        for e, c in self.terms.items():
            out = out + c * np.prod(x ** np.asarray(e))
        return out

    def evaluate_many(self, pts: np.ndarray) -> np.ndarray:
        """Evaluate at each row of ``pts``; returns (npts, *shape)."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        if not self.terms:
            return np.zeros((len(pts),) + self.shape)
        E = np.array(list(self.terms.keys()))
        mon = np.prod(pts[:, None, :] ** E[None, :, :], axis=2)
        C = np.stack(list(self.terms.values()))
        return np.tensordot(mon, C, axes=(1, 0))

    # -- arithmetic ----------------------------------------------------------
    def _check(self, other: "MatrixPolynomial"):
        if self.sizes != other.sizes:
            raise ValueError("variable groups differ")

    def __add__(self, other: "MatrixPolynomial") -> "MatrixPolynomial":
        self._check(other)
        out = dict(self.terms)
        for e, c in other.terms.items():
            out[e] = out[e] + c if e in out else c
        return MatrixPolynomial(self.groups, out, self.shape or other.shape)

    def __neg__(self) -> "MatrixPolynomial":
        return self.scale(-1.0)

    def __sub__(self, other: "MatrixPolynomial") -> "MatrixPolynomial":
        return self + (-other)

    def scale(self, s) -> "MatrixPolynomial":
        return MatrixPolynomial(self.groups, {e: s * c for e, c in self.terms.items()}, self.shape)

    def __mul__(self, other: "MatrixPolynomial") -> "MatrixPolynomial":
        """Product; matrix-by-matrix coefficients use the matrix product."""
        if not isinstance(other, MatrixPolynomial):
            return self.scale(other)
        self._check(other)
        out: dict[Exponent, np.ndarray] = {}
        for e1, c1 in self.terms.items():
            for e2, c2 in other.terms.items():
                e = tuple(a + b for a, b in zip(e1, e2))
                c = c1 @ c2 if (c1.ndim == 2 and c2.ndim == 2) else c1 * c2
                out[e] = out[e] + c if e in out else c
        shape = next(iter(out.values())).shape if out else (self.shape or other.shape)
        return MatrixPolynomial(self.groups, out, shape)

    __rmul__ = scale

    def __pow__(self, k: int) -> "MatrixPolynomial":
        result = MatrixPolynomial.constant(self.groups, np.ones(()) if self.shape == () else np.eye(self.n))
        for _ in range(k):
            result = result * self
        return result

    def T(self) -> "MatrixPolynomial":
        return MatrixPolynomial(self.groups, {e: c.T for e, c in self.terms.items()}, self.shape[::-1])

    def lyapunov(self, P: "MatrixPolynomial") -> "MatrixPolynomial":
        """A^T P + P A with self as A."""
        return self.T() * P + P * self

    def derivative(self, k: int) -> "MatrixPolynomial":
        out = {}
        for e, c in self.terms.items():
            if e[k] > 0:
                ne = list(e)
                ne[k] -= 1
                out[tuple(ne)] = e[k] * c
        return MatrixPolynomial(self.groups, out, self.shape)

    def grad_contract(self, f: Sequence["MatrixPolynomial"]) -> "MatrixPolynomial":
        """<grad V, f> for scalar V and vector field f (one scalar poly per variable)."""
        if len(f) != self.nvars:
            raise ValueError("vector field length must equal variable count")
        out = MatrixPolynomial(self.groups, {}, self.shape)
        for k, fk in enumerate(f):
            out = out + self.derivative(k) * fk
        return out

    def substitute(self, images: Sequence["MatrixPolynomial"]) -> "MatrixPolynomial":
        """Replace variable k by the scalar polynomial images[k]."""
        if len(images) != self.nvars:
            raise ValueError("one image per variable required")
        groups = images[0].groups
        out = MatrixPolynomial(groups, {}, self.shape)
        cache: dict[tuple[int, int], MatrixPolynomial] = {}

        def power(k, p):
            if (k, p) not in cache:
                cache[(k, p)] = images[k] ** p
            return cache[(k, p)]

        for e, c in self.terms.items():
            term = MatrixPolynomial.constant(groups, c)
            for k, p in enumerate(e):
                if p:
                    term = power(k, p) * term
            out = out + term
        return out

    def allclose(self, other: "MatrixPolynomial", tol: float = 1e-10) -> bool:
        keys = set(self.terms) | set(other.terms)
        return all(np.allclose(self.coef(e), other.coef(e), atol=tol, rtol=0) for e in keys)

    # -- serialization -------------------------------------------------------
    def to_json(self) -> dict:
        return {
            "groups": [{"name": n, "size": s} for n, s in self.groups],
            "n": self.n,
            "terms": [{"exp": list(e), "coef": np.asarray(c).tolist()} for e, c in sorted(self.terms.items(), reverse=True)],
        }

    @classmethod
    def from_json(cls, obj: dict | str, symmetric: bool = False) -> "MatrixPolynomial":
        if isinstance(obj, str):
            obj = json.loads(obj)
        groups = tuple((g["name"], g["size"]) for g in obj["groups"])
        terms = {tuple(t["exp"]): np.array(t["coef"], dtype=float) for t in obj["terms"]}
        return cls(groups, terms, symmetric=symmetric)


def simplex_form(groups, which: int | None = None, shape=()) -> MatrixPolynomial:
    """Sum of the variables of one group (or of all groups when which is None)."""
    nv = sum(s for _, s in groups)
    sizes = [s for _, s in groups]
    starts = np.cumsum([0] + sizes)
    idx = range(nv) if which is None else range(starts[which], starts[which + 1])
    one = np.ones(()) if shape == () else np.eye(shape[0])
    terms = {}
    for k in idx:
        e = [0] * nv
        e[k] = 1
        terms[tuple(e)] = one
    return MatrixPolynomial(tuple(groups), terms)


# ----------------------------------------------------------------------------
# homogenization
# ----------------------------------------------------------------------------


def _multiply_by_simplex_powers(e: Exponent, c: np.ndarray, groups, powers: Sequence[int]) -> dict[Exponent, np.ndarray]:
    """Expand c * alpha^e * prod_i (sum of group i)^{powers[i]} into a term dict."""
    sizes = [s for _, s in groups]
    out: dict[Exponent, np.ndarray] = {}
    per_group = []
    for l, p in zip(sizes, powers):
        per_group.append([(h, multinomial(p, h)) for h in _exponents(l, p)])
    for combo in itertools.product(*per_group):
        h = sum((x[0] for x in combo), ())
        w = math.prod(x[1] for x in combo)
        ne = tuple(a + b for a, b in zip(e, h))
        out[ne] = out[ne] + w * c if ne in out else w * c
    return out


def homogenize_simplex(A: MatrixPolynomial, degree: int | None = None) -> MatrixPolynomial:
    """Homogeneous polynomial equal to A on the unit simplex.

    Each monomial of degree k is multiplied by (sum alpha)^(d_a - k), where d_a
    is the largest monomial degree (or ``degree`` if given).
    """
    if len(A.groups) != 1:
        raise ValueError("homogenize_simplex expects a single variable group")
    da = A.degree() if degree is None else degree
    if da < A.degree():
        raise ValueError("target degree below polynomial degree")
    out: dict[Exponent, np.ndarray] = {}
    for e, c in A.terms.items():
        for ne, nc in _multiply_by_simplex_powers(e, c, A.groups, [da - sum(e)]).items():
            out[ne] = out[ne] + nc if ne in out else nc
    return MatrixPolynomial(A.groups, out, A.shape, symmetric=A.symmetric)


def multihomogenize(F: MatrixPolynomial, sizes: Sequence[int] | None = None,
                    degrees: Sequence[int] | None = None) -> MatrixPolynomial:
    """Multi-homogeneous polynomial equal to F on the product of simplices.

    ``sizes`` regroups F's variables (flattened order kept). Monomial k with
    group degrees t_i is multiplied by prod_i (sum of group i)^(T_i - t_i).
    """
    if sizes is not None:
        if sum(sizes) != F.nvars:
            raise ValueError("group sizes must cover all variables")
        groups = tuple((f"g{i + 1}", s) for i, s in enumerate(sizes))
        F = MatrixPolynomial(groups, F.terms, F.shape)
    T = list(F.max_group_degrees()) if degrees is None else list(degrees)
    out: dict[Exponent, np.ndarray] = {}
    for e, c in F.terms.items():
        t = F.group_degrees(e)
        if any(ti > Ti for ti, Ti in zip(t, T)):
            raise ValueError("target degree vector below polynomial degree")
        for ne, nc in _multiply_by_simplex_powers(e, c, F.groups, [Ti - ti for Ti, ti in zip(T, t)]).items():
            out[ne] = out[ne] + nc if ne in out else nc
    return MatrixPolynomial(F.groups, out, F.shape, symmetric=F.symmetric)


def unit_interval_substitution(F: MatrixPolynomial, radii: Sequence[float]) -> MatrixPolynomial:
    """Q(a) = F(2 r a - r): maps |x_i| <= r_i onto a_i in [0, 1]."""
    r = np.asarray(radii, dtype=float)
    if r.shape != (F.nvars,):
        raise ValueError("one radius per variable required")
    if np.any(r <= 0):
        raise ValueError("radii must be positive")
    groups = tuple((f"a{i + 1}", 1) for i in range(F.nvars))
    images = []
    for i in range(F.nvars):
        e = [0] * F.nvars
        e[i] = 1
        images.append(MatrixPolynomial(groups, {tuple(e): 2 * r[i], (0,) * F.nvars: -r[i]}))
    return F.substitute(images)


def hypercube_to_multisimplex(F: MatrixPolynomial, radii: Sequence[float],
                              degrees: Sequence[int] | None = None) -> MatrixPolynomial:
    """Multi-homogeneous P(a, b) over products of 2-simplices.

    For a_i = (x_i + r_i) / (2 r_i) and b_i = 1 - a_i, P(a, b) = F(x). The
    result has groups ``(a_i, b_i)`` flattened as a1, b1, a2, b2, ...
    """
    Q = unit_interval_substitution(F, radii)
    nx = F.nvars
    groups = tuple((f"x{i + 1}", 2) for i in range(nx))
    lifted = {}
    for e, c in Q.terms.items():
        ne = []
        for v in e:
            ne += [v, 0]
        lifted[tuple(ne)] = c
    Q2 = MatrixPolynomial(groups, lifted, Q.shape)
    if degrees is None:
        degrees = F.max_group_degrees() if len(F.groups) == nx else _per_variable_degrees(F)
    return multihomogenize(Q2, degrees=degrees)


def _per_variable_degrees(F: MatrixPolynomial) -> tuple[int, ...]:
    out = [0] * F.nvars
    for e in F.terms:
        for i, v in enumerate(e):
            out[i] = max(out[i], v)
    return tuple(out)


def sample_simplex(rng: np.random.Generator, l: int, npts: int) -> np.ndarray:
    return rng.dirichlet(np.ones(l), size=npts)


def sample_multisimplex(rng: np.random.Generator, sizes: Sequence[int], npts: int) -> np.ndarray:
    return np.hstack([sample_simplex(rng, l, npts) for l in sizes])


def condition_warning(P: MatrixPolynomial, limit: float = 1e12) -> None:
    """Warn when coefficient magnitudes span more than ``limit``."""
    mags = [np.max(np.abs(c)) for c in P.terms.values() if np.max(np.abs(c)) > 0]
    if mags and max(mags) / min(mags) > limit:
        warnings.warn("polynomial coefficients span a very wide range; results may be ill-conditioned")


def affine_in_simplex(groups, coeffs: Iterable[np.ndarray], constant: np.ndarray | None = None) -> MatrixPolynomial:
    """A0 + sum_k A_k a_k as a MatrixPolynomial."""
    coeffs = list(coeffs)
    nv = sum(s for _, s in groups)
    terms = {}
    if constant is not None:
        terms[(0,) * nv] = np.asarray(constant, float)
    for k, c in enumerate(coeffs):
        e = [0] * nv
        e[k] = 1
        terms[tuple(e)] = np.asarray(c, float)
    return MatrixPolynomial(tuple(groups), terms)
