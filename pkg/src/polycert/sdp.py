"""Predictor-corrector primal-dual interior-point method for block-diagonal SDPs.

Problem pair (every block is n x n, there are nb blocks)::

    primal  max  tr(C X) + eq_b^T w   s.t.  B(X) + Eq^T w = a,  X >= 0
    dual    min  a^T y                s.t.  Z = sum_i y_i B_i - C >= 0,  Eq y = eq_b

with B(X)_i = tr(B_i X). The optional equality rows exist for linear programs
(n = 1), which reuse the same code path.

The operator is stored once as a sparse matrix ``Bmat`` of shape
(nb * n * n, K) whose column i is the row-major stack of the blocks of B_i.
Then sum_i y_i B_i = Bmat @ y, B(X) = Bmat^T vec(X) and the Schur complement
tr(B_i Z^-1 B_k X) = (Bmat^T blockdiag(Z_j^-1 kron X_j) Bmat)_{ik}.
X and Z live as (nb, n, n) arrays so off-block entries are never stored.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

log = logging.getLogger(__name__)

DENSE_LIMIT = 3000


class SolverError(RuntimeError):
    """Numerical failure that prevents a verdict (as opposed to infeasibility)."""


# ----------------------------------------------------------------------------
# problem data
# ----------------------------------------------------------------------------


@dataclass
class SdpProblem:
    C: np.ndarray                      # (nb, n, n)
    Bmat: sp.csr_matrix                # (nb*n*n, K)
    a: np.ndarray                      # (K,)
    structure: tuple[int, int, int] | None = None   # (L, M, n) when from the Polya set-up
    eq_A: sp.csr_matrix | None = None  # (p, K)
    eq_b: np.ndarray | None = None

    def __post_init__(self):
        self.C = np.asarray(self.C, dtype=float)
        if self.C.ndim != 3 or self.C.shape[1] != self.C.shape[2]:
            raise ValueError("C must be a stack of square blocks")
        self.Bmat = sp.csr_matrix(self.Bmat)
        self.a = np.asarray(self.a, dtype=float).ravel()
        nb, n, _ = self.C.shape
        if self.Bmat.shape != (nb * n * n, self.a.size):
            raise ValueError(f"B has shape {self.Bmat.shape}, expected {(nb * n * n, self.a.size)}")
        if not np.all(np.isfinite(self.a)):
            raise ValueError("a must be finite")
        if self.eq_A is not None:
            self.eq_A = sp.csr_matrix(self.eq_A)
            self.eq_b = np.asarray(self.eq_b, dtype=float).ravel()
            if self.eq_A.shape != (self.eq_b.size, self.K):
                raise ValueError("equality data has inconsistent shape")

    @property
    def nb(self) -> int:
        return self.C.shape[0]

    @property
    def n(self) -> int:
        return self.C.shape[1]

    @property
    def K(self) -> int:
        return self.a.size

    @property
    def n_eq(self) -> int:
        return 0 if self.eq_A is None else self.eq_A.shape[0]

    def sum_By(self, y: np.ndarray) -> np.ndarray:
        return (self.Bmat @ y).reshape(self.nb, self.n, self.n)

    def B_of(self, X: np.ndarray) -> np.ndarray:
        return self.Bmat.T @ X.reshape(-1)

    def B_blocks(self, i: int) -> np.ndarray:
        return self.Bmat[:, [i]].toarray().reshape(self.nb, self.n, self.n)

    def check_symmetric(self, tol: float = 1e-12) -> bool:
        Bt = self.Bmat.tocoo()
        nn = self.n * self.n
        j, r = np.divmod(Bt.row, nn)
        p, q = np.divmod(r, self.n)
        swapped = sp.csr_matrix((Bt.data, (j * nn + q * self.n + p, Bt.col)), shape=self.Bmat.shape)
        return abs(swapped - self.Bmat).max() <= tol if Bt.nnz else True

    # construction -----------------------------------------------------------

    @classmethod
    def from_block_entries(cls, entries, K: int, n: int, structure=None, a=None):
        """entries[j] = (C_j, idx, vals) where vals[k] is the block j part of B_{idx[k]}."""
        nn = n * n
        rows, cols, data = [], [], []
        C = np.zeros((len(entries), n, n))
        local = np.arange(nn)
        for j, (Cj, idx, vals) in enumerate(entries):
            C[j] = Cj
            if len(idx) == 0:
                continue
            v = np.asarray(vals).reshape(len(idx), nn)
            rr = np.broadcast_to(j * nn + local, v.shape)
            cc = np.broadcast_to(np.asarray(idx)[:, None], v.shape)
            keep = v != 0
            rows.append(rr[keep])
            cols.append(cc[keep])
            data.append(v[keep])
        if rows:
            Bmat = sp.csr_matrix((np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
                                 shape=(len(entries) * nn, K))
        else:
            Bmat = sp.csr_matrix((len(entries) * nn, K))
        Bmat.sum_duplicates()
        return cls(C, Bmat, np.ones(K) if a is None else a, structure)

    @classmethod
    def from_dense(cls, C_blocks, B_list, a, structure=None):
        """B_list[i] is a (nb, n, n) array with the blocks of B_i."""
        C = np.asarray(C_blocks, dtype=float)
        cols = [sp.csr_matrix(np.asarray(B, dtype=float).reshape(-1, 1)) for B in B_list]
        return cls(C, sp.hstack(cols).tocsr(), a, structure)

    @classmethod
    def linear_program(cls, G, h, c, eq_A=None, eq_b=None):
        """min c^T y  s.t.  G y >= h  (and eq_A y = eq_b) as 1 x 1 blocks."""
        G = sp.csr_matrix(G)
        h = np.asarray(h, dtype=float).reshape(-1, 1, 1)
        return cls(h, G, c, None, eq_A, eq_b)

    def to_json(self) -> str:
        Bc = self.Bmat.tocoo()
        nn = self.n * self.n
        L, M = (self.structure[:2] if self.structure else (self.nb, 0))
        return json.dumps({
            "L": int(L), "M": int(M), "n": int(self.n), "K": int(self.K),
            "C": self.C.tolist(),
            "B": [[int(i), int(r // nn), int(r % nn // self.n), int(r % self.n), float(v)]
                  for r, i, v in zip(Bc.row, Bc.col, Bc.data)],
            "a": self.a.tolist(),
        })

    @classmethod
    def from_json(cls, text: str) -> "SdpProblem":
        d = json.loads(text)
        n, K = d["n"], d["K"]
        C = np.asarray(d["C"], dtype=float)
        if C.shape != (d["L"] + d["M"], n, n):
            raise ValueError("C blocks do not match L + M")
        B = np.asarray(d["B"], dtype=float).reshape(-1, 5)
        rows = (B[:, 1] * n * n + B[:, 2] * n + B[:, 3]).astype(int)
        Bmat = sp.csr_matrix((B[:, 4], (rows, B[:, 0].astype(int))), shape=(C.shape[0] * n * n, K))
        return cls(C, Bmat, d["a"], (d["L"], d["M"], n))


# ----------------------------------------------------------------------------
# iterate and steps
# ----------------------------------------------------------------------------


@dataclass
class SdpState:
    X: np.ndarray
    Z: np.ndarray
    y: np.ndarray
    w: np.ndarray
    mu: float
    gap: float = 0.0


@dataclass
class Direction:
    dX: np.ndarray
    dy: np.ndarray
    dZ: np.ndarray
    dw: np.ndarray


def _sym(A: np.ndarray) -> np.ndarray:
    return 0.5 * (A + np.swapaxes(A, -1, -2))


def _trace_sum(A: np.ndarray, B: np.ndarray) -> float:
    """sum_j tr(A_j B_j) for symmetric stacks."""
    return float(np.einsum("jab,jba->", A, B))


def gap_of(problem: SdpProblem, state: SdpState) -> float:
    """a^T y - (tr(CX) + eq_b^T w); equals sum tr(Z X) at feasible points."""
    primal = _trace_sum(problem.C, state.X)
    if problem.n_eq:
        primal += float(problem.eq_b @ state.w)
    return float(problem.a @ state.y) - primal


def init_state(problem: SdpProblem, scale: float = 1.0) -> SdpState:
    nb, n = problem.nb, problem.n
    X = np.broadcast_to(scale * np.eye(n), (nb, n, n)).copy()
    Z = X.copy()
    st = SdpState(X, Z, np.zeros(problem.K), np.zeros(problem.n_eq), _trace_sum(Z, X) / 3.0)
    st.gap = gap_of(problem, st)
    return st


class _Blocks:
    """Per-block kernels; a pool splits block ranges, results are stacked in block order."""

    def __init__(self, problem: SdpProblem, pool=None):
        self.p = problem
        self.pool = pool

    def map(self, fn, *arrays):
        if self.pool is None or self.pool.size == 1:
            return fn(slice(0, self.p.nb), *arrays)
        parts = self.pool.map_blocks(
            lambda rng: [fn(slice(rng.start, rng.stop), *arrays)] if len(rng) else [], self.p.nb, "solver")
        if isinstance(parts[0], tuple):
            return tuple(_stack([q[k] for q in parts]) for k in range(len(parts[0])))
        return _stack(parts)


def _stack(parts):
    if sp.issparse(parts[0]):
        return sp.vstack(parts, format="csr")
    return np.concatenate(parts, axis=0)


def _schur_rows(problem: SdpProblem, Zinv: np.ndarray, X: np.ndarray):
    n, nn = problem.n, problem.n * problem.n

    def kern(s: slice, Zinv, X):
        Bj = problem.Bmat[s.start * nn:s.stop * nn]
        if n == 1:
            D = sp.diags((Zinv[s] * X[s]).ravel())
        else:
            D = sp.block_diag([np.kron(Zi, Xi) for Zi, Xi in zip(Zinv[s], X[s])], format="csr")
        return (D @ Bj).tocsr()

    return kern, (Zinv, X)


class _KKT:
    """Factorization of [[Lambda, Eq^T], [Eq, 0]] shared by predictor and corrector."""

    def __init__(self, Lam, eq_A, K: int):
        self.K = K
        self.neq = 0 if eq_A is None else eq_A.shape[0]
        self.Lam = Lam
        dense = K + self.neq <= DENSE_LIMIT
        if dense:
            Ld = Lam.toarray() if sp.issparse(Lam) else Lam
            asym = np.abs(Ld - Ld.T).max()
            if asym > 1e-9 * max(np.abs(Ld).max(), 1e-300):
                raise SolverError(f"Schur complement not symmetric ({asym:.2e})")
            Ld = 0.5 * (Ld + Ld.T)
            if self.neq == 0:
                self._chol(Ld)
            else:
                Ad = eq_A.toarray()
                KKT = np.block([[Ld, Ad.T], [Ad, np.zeros((self.neq, self.neq))]])
                self.kind = "lu"
                self.fac = sla.lu_factor(KKT, check_finite=False)
                if not np.all(np.isfinite(self.fac[0])):
                    raise SolverError("KKT factorization failed")
        else:
            Ls = sp.csr_matrix(Lam)
            if self.neq:
                KKT = sp.bmat([[Ls, eq_A.T], [eq_A, None]], format="csc")
            else:
                KKT = Ls.tocsc()
            self.kind = "splu"
            try:
                self.fac = spla.splu(KKT)
            except RuntimeError:
                d = Ls.diagonal()
                reg = 1e-12 * max(d.sum() / K, 1e-300)
                KKT = KKT + sp.diags(np.concatenate([np.full(K, reg), np.full(self.neq, -reg)]))
                try:
                    self.fac = spla.splu(KKT.tocsc())
                except RuntimeError as exc:
                    raise SolverError(f"KKT matrix singular: {exc}") from exc

    def _chol(self, Ld):
        self.kind = "chol"
        try:
            self.fac = sla.cho_factor(Ld, check_finite=False)
            return
        except np.linalg.LinAlgError:
            pass
        reg = 1e-12 * np.trace(Ld) / self.K
        try:
            self.fac = sla.cho_factor(Ld + reg * np.eye(self.K), check_finite=False)
            log.debug("Schur complement needed diagonal perturbation %.2e", reg)
        except np.linalg.LinAlgError as exc:
            cond = np.linalg.cond(Ld)
            raise SolverError(f"Schur complement not positive definite (cond {cond:.2e})") from exc

    def solve(self, r: np.ndarray, r_eq: np.ndarray | None = None):
        """Returns (dy, dw) solving Lambda dy - Eq^T dw = r, Eq dy = r_eq."""
        rhs = r if self.neq == 0 else np.concatenate([r, r_eq])
        if self.kind == "chol":
            sol = sla.cho_solve(self.fac, rhs, check_finite=False)
        elif self.kind == "lu":
            sol = sla.lu_solve(self.fac, rhs, check_finite=False)
        else:
            sol = self.fac.solve(rhs)
        return sol[:self.K], -sol[self.K:]


def _inv_spd(Z: np.ndarray) -> np.ndarray:
    Linv = np.linalg.inv(np.linalg.cholesky(Z))
    return np.swapaxes(Linv, -1, -2) @ Linv


@dataclass
class _Work:
    """Quantities shared by predictor and corrector at one iterate."""

    Zinv: np.ndarray
    T: np.ndarray
    kkt: _KKT


def prepare(problem: SdpProblem, state: SdpState, pool=None) -> _Work:
    try:
        Zinv = _Blocks(problem, pool).map(lambda s, Z: _inv_spd(Z[s]), state.Z)
    except np.linalg.LinAlgError as exc:
        raise SolverError("Z lost positive definiteness") from exc
    T = problem.C + state.Z - problem.sum_By(state.y)
    kern, args = _schur_rows(problem, Zinv, state.X)
    DB = _Blocks(problem, pool).map(kern, *args)
    Lam = problem.Bmat.T @ DB
    if problem.K + problem.n_eq <= DENSE_LIMIT:
        Lam = Lam.toarray()
    return _Work(Zinv, T, _KKT(Lam, problem.eq_A, problem.K))


def predictor(problem: SdpProblem, state: SdpState, work: _Work | None = None) -> Direction:
    """Newton step towards mu = 0."""
    if work is None:
        work = prepare(problem, state)
    X, Zinv, T = state.X, work.Zinv, work.T
    r = problem.B_of(Zinv @ T @ X) - problem.a
    r_eq = None
    if problem.n_eq:
        r = r + problem.eq_A.T @ state.w
        r_eq = problem.eq_b - problem.eq_A @ state.y
    dy, dw = work.kkt.solve(r, r_eq)
    dZ = problem.sum_By(dy) - T
    dX = -X - Zinv @ dZ @ X
    return Direction(dX, dy, dZ, dw)


def corrector(problem: SdpProblem, state: SdpState, pred: Direction, mu: float,
              work: _Work | None = None) -> Direction:
    """Centering step with the second-order term, reusing the predictor factorization."""
    if work is None:
        work = prepare(problem, state)
    Zinv = work.Zinv
    second = Zinv @ pred.dZ @ pred.dX
    r = mu * problem.B_of(Zinv) - problem.B_of(second)
    r_eq = np.zeros(problem.n_eq) if problem.n_eq else None
    dy, dw = work.kkt.solve(r, r_eq)
    dZ = problem.sum_By(dy)
    dX = mu * Zinv - second - Zinv @ dZ @ state.X
    return Direction(dX, dy, dZ, dw)


def combine(pred: Direction, corr: Direction) -> Direction:
    return Direction(_sym(pred.dX + corr.dX), pred.dy + corr.dy, _sym(pred.dZ + corr.dZ), pred.dw + corr.dw)


def max_step(S: np.ndarray, dS: np.ndarray, damping: float = 0.98) -> float:
    """Largest damped t in (0, 1] keeping every block of S + t dS positive definite."""
    if not np.any(dS):
        return 1.0
    try:
        Linv = np.linalg.inv(np.linalg.cholesky(S))
    except np.linalg.LinAlgError as exc:
        raise SolverError("iterate is not positive definite") from exc
    lam = np.linalg.eigvalsh(_sym(Linv @ dS @ np.swapaxes(Linv, -1, -2))).min()
    t = 1.0 if lam >= 0 else min(1.0, damping * (-1.0 / lam))
    # confirm by factorization, backing off if rounding put us on the boundary
    for _ in range(60):
        try:
            np.linalg.cholesky(S + t * dS)
            return t
        except np.linalg.LinAlgError:
            t *= 0.5
    return 0.0


def line_search(state: SdpState, direction: Direction, damping: float = 0.98) -> tuple[float, float]:
    return max_step(state.X, direction.dX, damping), max_step(state.Z, direction.dZ, damping)


# ----------------------------------------------------------------------------
# driver
# ----------------------------------------------------------------------------


@dataclass
class SdpSolution:
    status: str        # optimal | feasible | infeasible | unbounded | stall | max_iter
    X: np.ndarray
    y: np.ndarray
    Z: np.ndarray
    w: np.ndarray
    gap: float
    iterations: int
    primal_residual: float
    dual_residual: float
    history: list[dict] = field(default_factory=list)

    @property
    def objective(self) -> float:
        return float(self.history[-1]["dual_obj"]) if self.history else math.nan


def is_block_pd(Z: np.ndarray, tol: float = 0.0) -> bool:
    n = Z.shape[-1]
    try:
        np.linalg.cholesky(Z - tol * np.eye(n))
        return True
    except np.linalg.LinAlgError:
        return False


def dual_slack(problem: SdpProblem, y: np.ndarray) -> np.ndarray:
    """Z recomputed from y; positive definiteness of this is the certificate."""
    return problem.sum_By(y) - problem.C


def solve(problem: SdpProblem, eps: float = 1e-7, max_iter: int = 100, mu_rule: str = "adaptive",
          stop_on_feasible: bool = False, pool=None, feas_tol: float = 1e-8, damping: float = 0.98,
          stall_window: int = 20, init_scale: float = 1.0,
          callback: Callable[[int, SdpState], None] | None = None) -> SdpSolution:
    """Run the interior-point method.

    ``mu_rule``: "adaptive" centres at sigma * tr(ZX)/(nb n) with
    sigma = (mu_aff / mu)^3; "thirds" centres at tr(ZX)/3 (no dependence on size).
    ``stop_on_feasible`` returns as soon as sum y_i B_i - C is positive
    definite on every block (and equalities hold), which is all a
    stability certificate needs.
    """
    if mu_rule not in ("adaptive", "thirds"):
        raise ValueError(f"unknown mu rule {mu_rule!r}")
    state = init_state(problem, init_scale)
    dim = problem.nb * problem.n
    a_norm = 1.0 + np.linalg.norm(problem.a)
    c_norm = 1.0 + np.linalg.norm(problem.C)
    history: list[dict] = []
    best, since_best = math.inf, 0
    status = "max_iter"
    it = 0

    def residuals():
        rp = problem.a - problem.B_of(state.X)
        if problem.n_eq:
            rp = rp - problem.eq_A.T @ state.w
            req = np.linalg.norm(problem.eq_b - problem.eq_A @ state.y)
        else:
            req = 0.0
        rd = np.linalg.norm(problem.C + state.Z - problem.sum_By(state.y))
        return np.linalg.norm(rp) / a_norm, max(rd / c_norm, req / (1 + np.linalg.norm(problem.eq_b) if problem.n_eq else 1.0))

    for it in range(max_iter + 1):
        state.gap = gap_of(problem, state)
        pres, dres = residuals()
        dual_obj = float(problem.a @ state.y)
        history.append({"iter": it, "gap": state.gap, "mu": state.mu, "pres": pres, "dres": dres,
                        "dual_obj": dual_obj})
        if callback:
            callback(it, state)
        if stop_on_feasible and it > 0:
            eq_ok = not problem.n_eq or np.linalg.norm(problem.eq_b - problem.eq_A @ state.y) <= 1e-9 * (1 + np.linalg.norm(problem.eq_b))
            if eq_ok and is_block_pd(dual_slack(problem, state.y)):
                status = "feasible"
                break
        scale = max(1.0, abs(dual_obj))
        if abs(state.gap) <= eps * scale and pres <= feas_tol and dres <= feas_tol:
            status = "optimal"
            break
        # ray detection
        phi = _trace_sum(problem.C, state.X) + (float(problem.eq_b @ state.w) if problem.n_eq else 0.0)
        BX = problem.B_of(state.X) + (problem.eq_A.T @ state.w if problem.n_eq else 0.0)
        if phi > 0 and np.linalg.norm(BX) <= 1e-8 * phi:
            status = "infeasible"
            break
        if dres <= 1e-6 and -dual_obj > 1e9 * c_norm:
            status = "unbounded"
            break
        if it == max_iter:
            break
        merit = max(abs(state.gap) / scale, pres, dres)
        if merit < 0.99 * best:
            best, since_best = merit, 0
        else:
            since_best += 1
            if since_best >= stall_window:
                status = "infeasible"
                break

        work = prepare(problem, state, pool)
        pred = predictor(problem, state, work)
        trZX = _trace_sum(state.Z, state.X)
        if mu_rule == "thirds":
            mu = trZX / 3.0
        else:
            tp, td = line_search(state, pred, 1.0)
            aff = _trace_sum(state.Z + td * pred.dZ, state.X + tp * pred.dX)
            sigma = min(1.0, max(aff / trZX, 0.0) ** 3) if trZX > 0 else 0.0
            mu = sigma * trZX / dim
        corr = corrector(problem, state, pred, mu, work)
        d = combine(pred, corr)
        tp, td = line_search(state, d, damping)
        if max(tp, td) < 1e-12:
            status = "stall"
            break
        state.X = _sym(state.X + tp * d.dX)
        state.w = state.w + tp * d.dw
        state.y = state.y + td * d.dy
        state.Z = _sym(state.Z + td * d.dZ)
        state.mu = mu
        history[-1].update(tp=tp, td=td)

    pres, dres = residuals()
    return SdpSolution(status, state.X, state.y, state.Z, state.w, state.gap, it, pres, dres, history)
