"""Robust-stability and region-of-attraction drivers.

Each driver builds a certificate problem, solves it with the package's own
solvers and re-checks every "stable" verdict by dense eigenvalue sampling.
A certificate that fails the re-check raises :class:`CertificateError`.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import os
import time
from dataclasses import asdict, dataclass, field
from importlib import resources
from typing import Callable, Sequence

import numpy as np

from . import handelman, sdp
from .polya import assemble_sdp, assemble_sdp_multi, recover_P
from .polycore import (
    MatrixPolynomial,
    homogenize_simplex,
    hypercube_to_multisimplex,
    sample_simplex,
)


class CertificateError(RuntimeError):
    """A solver reported success but the certificate does not pass validation."""


class DataChecksumError(ValueError):
    pass


@dataclass
class StabilityReport:
    verdict: str                  # "stable", "infeasible" or "unstable"
    bound: float | None = None
    settings: dict = field(default_factory=dict)
    certificate: dict | None = None
    validation: dict = field(default_factory=dict)
    trials: list = field(default_factory=list)      # (parameter, feasible) in call order
    metadata: dict = field(default_factory=dict)
    sweep: list = field(default_factory=list)       # rows of dicts for plotting
    level_set: list = field(default_factory=list)   # polyline points
    timings: list = field(default_factory=list)

    @property
    def stable(self) -> bool:
        return self.verdict == "stable"

    def to_json(self) -> str:
        return json.dumps(asdict(self), default=_jsonable, indent=1)


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.bool_):
        return bool(o)
    raise TypeError(type(o))


# ----------------------------------------------------------------------------
# data files
# ----------------------------------------------------------------------------


def _data_dir():
    return resources.files("polycert") / "data"


def load_data(name: str, verify: bool = True, path: str | None = None) -> dict:
    """Load a bundled (or explicit) JSON data file, checking its SHA-256 against the manifest."""
    if path is None:
        raw = (_data_dir() / name).read_bytes()
    else:
        with open(path, "rb") as fh:
            raw = fh.read()
    if verify:
        manifest = json.loads((_data_dir() / "manifest.json").read_text())
        key = os.path.basename(path) if path else name
        want = manifest.get(key)
        if want is None:
            raise DataChecksumError(f"{key} is not listed in the data manifest")
        got = hashlib.sha256(raw).hexdigest()
        if got != want:
            raise DataChecksumError(f"checksum mismatch for {key}: {got} != {want}")
    return json.loads(raw)


def matrix_poly_from_terms(terms: Sequence[dict], nvars: int, per_variable_groups: bool = False) -> MatrixPolynomial:
    groups = tuple((f"x{i + 1}", 1) for i in range(nvars)) if per_variable_groups else (("a", nvars),)
    return MatrixPolynomial(groups, {tuple(t["exp"]): np.array(t["coef"], float) for t in terms})


# ----------------------------------------------------------------------------
# validation
# ----------------------------------------------------------------------------


def lyapunov_margins(P_vals: np.ndarray, A_vals: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-sample min eig(P) and max eig(A^T P + P A)."""
    P = 0.5 * (P_vals + np.swapaxes(P_vals, -1, -2))
    Q = np.swapaxes(A_vals, -1, -2) @ P + P @ A_vals
    Q = 0.5 * (Q + np.swapaxes(Q, -1, -2))
    return np.linalg.eigvalsh(P)[:, 0], np.linalg.eigvalsh(Q)[:, -1]


def _margin_stats(pmin, qmax) -> dict:
    return {"samples": int(len(pmin)), "min_eig_P": float(pmin.min()), "max_eig_AtP_PA": float(qmax.max()),
            "ok": bool(pmin.min() > 0 and qmax.max() < 0)}


def simplex_samples(l: int, count: int, seed: int = 0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    # vertices and edge midpoints first, then uniform points
    pts = [np.eye(l)]
    if l > 1:
        mids = [(np.eye(l)[i] + np.eye(l)[j]) / 2 for i in range(l) for j in range(i + 1, l)]
        pts.append(np.array(mids))
    pts.append(sample_simplex(rng, l, count))
    return np.vstack(pts)


def box_samples(radii: Sequence[float], count: int, seed: int = 0) -> np.ndarray:
    r = np.asarray(radii, float)
    rng = np.random.default_rng(seed)
    corners = np.array(np.meshgrid(*[[-v, v] for v in r], indexing="ij")).reshape(len(r), -1).T
    return np.vstack([corners, np.zeros((1, len(r))), rng.uniform(-r, r, size=(count, len(r)))])


def box_to_multisimplex(X: np.ndarray, radii: Sequence[float]) -> np.ndarray:
    """x -> (a1, b1, a2, b2, ...) with a = (x + r) / (2 r), b = 1 - a."""
    r = np.asarray(radii, float)
    a = (X + r) / (2 * r)
    out = np.empty((X.shape[0], 2 * X.shape[1]))
    out[:, 0::2] = a
    out[:, 1::2] = 1 - a
    return out


def max_real_eig(A: MatrixPolynomial, pts: np.ndarray) -> float:
    return float(np.linalg.eigvals(A.evaluate_many(pts)).real.max())


# ----------------------------------------------------------------------------
# simplex
# ----------------------------------------------------------------------------


def _solve_feasibility(problem, eps, max_iter, pool):
    return sdp.solve(problem, eps=eps, max_iter=max_iter, stop_on_feasible=True, pool=pool)


def robust_stability_simplex(A: MatrixPolynomial, d_p: int, d1: int, d2: int, delta: float = 1e-2,
                             eps: float = 1e-7, max_iter: int = 100, pool=None, samples: int = 1000,
                             seed: int = 0) -> StabilityReport:
    """Search for P(a) homogeneous of degree d_p with P > 0 and A^T P + P A < 0 on the simplex."""
    if A.shape[0] != A.shape[1]:
        raise ValueError("A must be square")
    if len(A.groups) != 1:
        raise ValueError("simplex analysis needs a single variable group")
    t0 = time.perf_counter()
    Ah = homogenize_simplex(A)
    problem, data = assemble_sdp(Ah, d_p, d1, d2, delta, pool)
    sol = _solve_feasibility(problem, eps, max_iter, pool)
    settings = {"d_p": d_p, "d1": d1, "d2": d2, "delta": delta, "K": problem.K, "blocks": problem.nb,
                "solver_status": sol.status, "iterations": sol.iterations}
    pts = simplex_samples(A.nvars, samples, seed)
    if not _certified(problem, sol):
        rep = StabilityReport("infeasible", settings=settings)
        rep.validation = {"max_real_eig": max_real_eig(A, pts)}
        if rep.validation["max_real_eig"] >= 0:
            rep.verdict = "unstable"
        rep.timings.append(("solve", time.perf_counter() - t0))
        return rep
    P = recover_P(sol.y, data, A.n, A.groups)
    pmin, qmax = lyapunov_margins(P.evaluate_many(pts), A.evaluate_many(pts))
    stats = _margin_stats(pmin, qmax)
    if not stats["ok"]:
        raise CertificateError(f"simplex certificate failed validation: {stats}")
    rep = StabilityReport("stable", settings=settings, certificate=P.to_json(), validation=stats)
    rep.timings.append(("solve", time.perf_counter() - t0))
    return rep


def _certified(problem, sol) -> bool:
    if sol.status not in ("feasible", "optimal"):
        return False
    return sdp.is_block_pd(sdp.dual_slack(problem, sol.y))


def simplex_scaling_map(L: float, l: int) -> list[MatrixPolynomial]:
    """g_i(a) = L * sum(a) + (1 - L) a_i: the unit simplex onto {sum = l L + 1 - L, L <= a_i <= 1}."""
    groups = (("a", l),)
    out = []
    for i in range(l):
        terms = {}
        for k in range(l):
            e = tuple(int(j == k) for j in range(l))
            terms[e] = L + (1 - L) * (k == i)
        out.append(MatrixPolynomial(groups, terms))
    return out


def symmetric_interval_map(rho: float, l: int) -> list[MatrixPolynomial]:
    """g_i(a) = 2|rho| (a_i - 0.5 sum(a)), homogeneous form of 2|rho|(a_i - 0.5) on the simplex."""
    groups = (("a", l),)
    r = abs(rho)
    out = []
    for i in range(l):
        terms = {}
        for k in range(l):
            e = tuple(int(j == k) for j in range(l))
            terms[e] = 2 * r * ((k == i) - 0.5)
        out.append(MatrixPolynomial(groups, terms))
    return out


def bisect(feasible: Callable[[float], bool], safe: float, risky: float, iters: int = 20,
           tol: float = 0.0, trials: list | None = None) -> float:
    """Largest certified step from ``safe`` toward ``risky``.

    ``safe`` must be feasible. Returns ``risky`` when that end is feasible too.
    Every trial is appended to ``trials`` as (value, feasible).
    """
    trials = [] if trials is None else trials

    def probe(v):
        ok = bool(feasible(v))
        trials.append((float(v), ok))
        return ok

    if not probe(safe):
        raise ValueError(f"bisection start {safe} is not certifiable")
    if probe(risky):
        return risky
    lo, hi = safe, risky
    for _ in range(iters):
        if tol and abs(hi - lo) <= tol:
            break
        mid = 0.5 * (lo + hi)
        if probe(mid):
            lo = mid
        else:
            hi = mid
    check_monotone(trials, increasing=risky > safe)
    return lo


def check_monotone(trials: Sequence[tuple[float, bool]], increasing: bool = True) -> None:
    """Every feasible trial must lie on the safe side of every infeasible one."""
    ok = [v for v, f in trials if f]
    bad = [v for v, f in trials if not f]
    if not ok or not bad:
        return
    flip = max(ok) >= min(bad) if increasing else min(ok) <= max(bad)
    if flip:
        raise AssertionError(f"feasibility flipped along the bisection: {trials}")


def max_uncertainty_simplex(family: Callable[[float], MatrixPolynomial], d_p: int, d1: int, d2: int,
                            safe: float, risky: float, iters: int = 20, tol: float = 1e-4,
                            **kw) -> StabilityReport:
    """Bisection on a scale parameter; ``family(t)`` is A(g_t(a)) on the unit simplex."""
    trials: list = []
    reports: dict[float, StabilityReport] = {}

    def feasible(t):
        rep = robust_stability_simplex(family(t), d_p, d1, d2, **kw)
        reports[t] = rep
        return rep.stable

    bound = bisect(feasible, safe, risky, iters, tol, trials)
    best = reports[bound]
    out = StabilityReport("stable", bound=bound, settings=dict(best.settings), certificate=best.certificate,
                          validation=best.validation, trials=trials)
    return out


def cubic_family(data: dict | None = None) -> Callable[[float], MatrixPolynomial]:
    """A(g_L(a)) for the bundled cubic 3x3 family on the scaled simplex S_L."""
    data = load_data("simplex_cubic3.json") if data is None else data
    A = matrix_poly_from_terms(data["terms"], data["l"])

    def family(L):
        return A.substitute(simplex_scaling_map(L, data["l"]))
    return family


def cubic_family_bound(d_p: int, d1: int, d2: int, safe: float = 0.3, risky: float = -0.3,
                       tol: float = 1e-4, **kw) -> StabilityReport:
    rep = max_uncertainty_simplex(cubic_family(), d_p, d1, d2, safe, risky, tol=tol, **kw)
    rep.metadata["reference"] = load_data("simplex_cubic3.json")["reference"]
    return rep


def bound_sweep(d_p: int, orders: Sequence[int], **kw) -> StabilityReport:
    """Bounds for d1 = d2 = k over ``orders``; rows go to the plotting sweep."""
    out = StabilityReport("stable")
    for k in orders:
        rep = cubic_family_bound(d_p, k, k, **kw)
        out.sweep.append({"d_p": d_p, "d1": k, "d2": k, "bound": rep.bound})
    out.bound = out.sweep[-1]["bound"] if out.sweep else None
    return out


# ----------------------------------------------------------------------------
# hypercube
# ----------------------------------------------------------------------------


def robust_stability_hypercube(A: MatrixPolynomial, radii: Sequence[float], D_p: Sequence[int], d1: int, d2: int,
                               delta: float = 1e-2, eps: float = 1e-7, max_iter: int = 100, pool=None,
                               samples: int = 1000, seed: int = 0, degrees: Sequence[int] | None = None
                               ) -> StabilityReport:
    """P(a, b) multi-homogeneous over products of 2-simplices, one per box coordinate."""
    if A.shape[0] != A.shape[1]:
        raise ValueError("A must be square")
    radii = [float(r) for r in radii]
    if len(radii) != A.nvars:
        raise ValueError("one radius per uncertain parameter required")
    if len(D_p) != len(radii):
        raise ValueError("degree vector length must match the number of parameters")
    t0 = time.perf_counter()
    B = hypercube_to_multisimplex(A, radii, degrees)
    problem, data = assemble_sdp_multi(B, tuple(D_p), d1, d2, delta, pool)
    sol = _solve_feasibility(problem, eps, max_iter, pool)
    settings = {"D_p": list(D_p), "d1": d1, "d2": d2, "delta": delta, "K": problem.K, "blocks": problem.nb,
                "degree_vector": list(data.Da), "solver_status": sol.status, "iterations": sol.iterations}
    X = box_samples(radii, samples, seed)
    if not _certified(problem, sol):
        rep = StabilityReport("infeasible", settings=settings)
        rep.validation = {"max_real_eig": max_real_eig(A, X)}
        if rep.validation["max_real_eig"] >= 0:
            rep.verdict = "unstable"
        rep.timings.append(("solve", time.perf_counter() - t0))
        return rep
    P = recover_P(sol.y, data, A.n, B.groups)
    pmin, qmax = lyapunov_margins(P.evaluate_many(box_to_multisimplex(X, radii)), A.evaluate_many(X))
    stats = _margin_stats(pmin, qmax)
    if not stats["ok"]:
        raise CertificateError(f"hypercube certificate failed validation: {stats}")
    rep = StabilityReport("stable", settings=settings, certificate=P.to_json(), validation=stats)
    rep.timings.append(("solve", time.perf_counter() - t0))
    return rep


def max_hypercube_radius(A: MatrixPolynomial, D_p: Sequence[int], d1: int = 0, d2: int = 0,
                         safe: float = 0.05, risky: float = 1.5, iters: int = 20, tol: float = 1e-4,
                         **kw) -> StabilityReport:
    """Largest r with the box |a_i| <= r certified."""
    trials: list = []
    reports: dict[float, StabilityReport] = {}
    m = A.nvars

    def feasible(r):
        rep = robust_stability_hypercube(A, [r] * m, D_p, d1, d2, **kw)
        reports[r] = rep
        return rep.stable

    bound = bisect(feasible, safe, risky, iters, tol, trials)
    best = reports[bound]
    return StabilityReport("stable", bound=bound, settings=dict(best.settings), certificate=best.certificate,
                           validation=best.validation, trials=trials)


def affine_box_family(data: dict | None = None) -> MatrixPolynomial:
    data = load_data("box_affine4.json") if data is None else data
    return matrix_poly_from_terms(data["terms"], len(data["terms"][0]["exp"]), per_variable_groups=True)


def box_poly_family(data: dict | None = None) -> tuple[MatrixPolynomial, list[float], list[int]]:
    data = load_data("box_poly4.json") if data is None else data
    A = matrix_poly_from_terms(data["terms"], len(data["radii"]), per_variable_groups=True)
    return A, data["radii"], data["degree_vector"]


# ----------------------------------------------------------------------------
# nonlinear region of attraction
# ----------------------------------------------------------------------------


def nonlinear_roa(f: Sequence[dict], gamma: handelman.Polytope, d: int = 8, kind: str = "fan",
                  s_min: float = 0.05, s_max: float = 4.0, tol: float = 2e-3,
                  decrease: str = "trace") -> StabilityReport:
    """Largest scaling s of ``gamma`` whose piecewise Lyapunov LP is feasible, plus a sublevel set."""
    t0 = time.perf_counter()
    s, res = handelman.max_certified_scaling(gamma, f, d, kind, decrease, lo=s_min, hi=s_max, tol=tol)
    settings = {"d": d, "kind": kind, "decrease": decrease, "s_max": s_max}
    if res is None:
        return StabilityReport("infeasible", settings=settings)
    cert = res.certificate
    stats = handelman.validate_certificate(cert, f)
    if not stats["ok"]:
        raise CertificateError(f"Lyapunov certificate failed validation: {stats}")
    region = gamma.scaled(s)
    level = handelman.largest_inscribed_sublevel(cert.V, region, per_facet=2000)
    rep = StabilityReport("stable", bound=s, settings=settings, validation=stats,
                          certificate=json.loads(cert.to_json()))
    rep.metadata.update(level=level, capped=bool(s >= s_max), gamma=res.gamma)
    if region.n == 2:
        rep.level_set = handelman.sublevel_boundary(cert.V, region, level).tolist()
    rep.timings.append(("roa", time.perf_counter() - t0))
    return rep


# planar quintic field with a user-supplied four-piece decomposition
QUINTIC_FIELD = [{(0, 1): 1.0},
                 {(1, 0): -2.0, (0, 1): -1.0, (1, 2): 1.0, (5, 0): -1.0, (1, 4): 1.0, (0, 5): 1.0}]


def quintic_decomposition(a: float = 1.428, c: float = 0.625) -> handelman.DDecomposition:
    """Four triangles meeting at the origin, split by the coordinate axes."""
    P = handelman.Piece
    pieces = [P([[-1, 0], [0, 1], [a, -1]], [0, 0, c]), P([[1, 0], [0, 1], [-a, -1]], [0, 0, c]),
              P([[1, 0], [0, -1], [-a, 1]], [0, 0, c]), P([[-1, 0], [0, -1], [a, 1]], [0, 0, c])]
    return handelman.with_adjacency(pieces)


def quintic_certificate(d: int = 4, decrease: str = "trace") -> StabilityReport:
    dec = quintic_decomposition()
    res = handelman.solve_lyapunov_lp(handelman.assemble_lp(dec, QUINTIC_FIELD, d, decrease=decrease),
                                      QUINTIC_FIELD)
    settings = {"d": d, "decrease": decrease, "lp_status": res.status}
    if not res.feasible:
        return StabilityReport("infeasible", settings=settings)
    stats = handelman.validate_certificate(res.certificate, QUINTIC_FIELD)
    if not stats["ok"]:
        raise CertificateError(f"Lyapunov certificate failed validation: {stats}")
    return StabilityReport("stable", bound=res.gamma, settings=settings, validation=stats,
                           certificate=json.loads(res.certificate.to_json()))


VAN_DER_POL_REVERSED = [{(0, 1): -1.0}, {(1, 0): 1.0, (0, 1): -1.0, (2, 1): 1.0}]

ROA_SHAPES = {
    "parallelogram": ([(-1.31, 0.18), (0.56, 1.92), (-0.56, -1.92), (1.31, -0.18)], "fan"),
    "square": ([(-1, 1), (1, 1), (1, -1), (-1, -1)], "orthant"),
    "diamond": ([(-1.41, 0), (0, 1.41), (1.41, 0), (0, -1.41)], "fan"),
}


def van_der_pol_roa(shape: str, d: int = 8, **kw) -> StabilityReport:
    verts, kind = ROA_SHAPES[shape]
    return nonlinear_roa(VAN_DER_POL_REVERSED, handelman.Polytope.from_vertices(verts), d, kind, **kw)


# ----------------------------------------------------------------------------
# tokamak (extended)
# ----------------------------------------------------------------------------


def tokamak_family(data: dict | None = None) -> tuple[MatrixPolynomial, list[MatrixPolynomial], float]:
    """Affine 7x7 model A0 + sum_k alpha_k D_k with the printed vertex matrices.

    The nominal matrix is not printed; the eighth printed matrix (the one
    with no modified entries) is taken as A0 and D_k = (A_k - A0) / eta_k so
    that alpha_k is a resistivity perturbation in physical units.
    """
    data = load_data("tokamak.json") if data is None else data
    As = [np.array(a, float) for a in data["A"]]
    eta = np.array(data["eta_hat"], float)
    A0 = As[-1]
    D = [(Ak - A0) / eta[k] for k, Ak in enumerate(As)]
    l = len(As)
    groups = (("a", l),)
    A = MatrixPolynomial.constant(groups, A0)
    terms = dict(A.terms)
    for k in range(l):
        e = tuple(int(j == k) for j in range(l))
        terms[e] = D[k]
    return MatrixPolynomial(groups, terms), D, float(eta[-1])


def tokamak_case_study(d_p: int = 1, d1: int = 1, d2: int = 1, iters: int = 20, data_path: str | None = None,
                       **kw) -> StabilityReport:
    data = load_data("tokamak.json", path=data_path)
    A, _, eta_ref = tokamak_family(data)
    l = A.nvars

    def family(rho):
        return A.substitute(symmetric_interval_map(rho, l))

    # work in units of the reference resistivity
    rep = max_uncertainty_simplex(lambda t: family(t * eta_ref), d_p, d1, d2, safe=0.0, risky=1.0,
                                  iters=iters, tol=1e-6, **kw)
    ref = data["reference"]["normalized_rho"]
    rep.metadata.update(reference=ref, normalized_rho=rep.bound)
    close = rep.bound is not None and abs(rep.bound - ref) <= 0.1 * ref
    rep.metadata["status"] = "match" if close else "data-transcription suspect"
    return rep


# ----------------------------------------------------------------------------
# plot data
# ----------------------------------------------------------------------------


def emit_plots(report: StabilityReport, outdir: str, prefix: str = "report") -> dict[str, str]:
    """Write sweep, level-set and timing CSVs; missing data gives header-only files."""
    os.makedirs(outdir, exist_ok=True)
    paths = {}
    p = os.path.join(outdir, f"{prefix}_sweep.csv")
    with open(p, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["d_p", "d1", "d2", "bound"])
        for row in report.sweep:
            w.writerow([row.get("d_p"), row.get("d1"), row.get("d2"), row.get("bound")])
    paths["sweep"] = p
    p = os.path.join(outdir, f"{prefix}_levelset.csv")
    with open(p, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x1", "x2"])
        pts = list(report.level_set)
        if pts:
            pts.append(pts[0])   # closed polyline
        for q in pts:
            w.writerow([f"{q[0]:.10g}", f"{q[1]:.10g}"])
    paths["levelset"] = p
    p = os.path.join(outdir, f"{prefix}_timing.csv")
    with open(p, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["phase", "seconds"])
        for name, sec in report.timings:
            w.writerow([name, f"{sec:.6f}"])
    paths["timing"] = p
    return paths
