"""Thermostat programming by dynamic programming and utility price optimization.

Units: temperatures in deg C, time in hours, power in kW, prices in $/kWh
(energy) and $/kW (demand). The wall model is the explicit finite-difference
heat equation with Dirichlet boundary u (interior air temperature).

The DP works on a quantized model: after every step the wall state is
snapped to the nearest point of a uniform grid over [T_min, T_max]^M. All
bills in this module are evaluated on that same model unless ``snap=False``
is requested, so every strategy is compared on equal terms.
"""

from __future__ import annotations

import csv
import itertools
import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

# ----------------------------------------------------------------------------
# model and prices
# ----------------------------------------------------------------------------


@dataclass
class ThermalModel:
    M: int = 3
    dx: float = 0.1            # m
    dt: float = 1.0            # hr
    alpha: float = 8.3e-7      # m^2/s
    R_e: float = 0.0015        # K/W
    C_in: float = 45.0         # W m / K
    L_in: float = 0.4          # m
    T_e: np.ndarray = field(default_factory=lambda: phoenix_profile(73))
    Q: np.ndarray | None = None   # local generation, kW

    def __post_init__(self):
        self.T_e = np.asarray(self.T_e, float)
        if self.Q is not None:
            self.Q = np.asarray(self.Q, float)
            if self.Q.shape != self.T_e.shape:
                raise ValueError("solar profile must match the temperature profile")
        if self.M < 1:
            raise ValueError("need at least one wall node")

    @property
    def N_f(self) -> int:
        return len(self.T_e)

    @property
    def courant(self) -> float:
        return self.alpha * self.dt * 3600.0 / self.dx ** 2

    def matrices(self) -> tuple[np.ndarray, np.ndarray]:
        """(I + A dt, B dt) of the explicit update."""
        c = self.courant
        M = self.M
        F = np.eye(M) * (1 - 2 * c)
        for i in range(M - 1):
            F[i, i + 1] = F[i + 1, i] = c
        G = np.zeros(M)
        G[0] += c
        G[-1] += c
        return F, G

    def check_stable(self) -> float:
        F, _ = self.matrices()
        rho = float(np.max(np.abs(np.linalg.eigvals(F))))
        if rho >= 1:
            raise ValueError(f"explicit update is unstable (spectral radius {rho:.3f}); reduce dt")
        return rho

    def with_profile(self, T_e, Q=None) -> "ThermalModel":
        return replace(self, T_e=np.asarray(T_e, float), Q=None if Q is None else np.asarray(Q, float))


@dataclass
class PricePlan:
    p_on: float
    p_off: float
    p_d: float
    t_on: float = 12.0
    t_off: float = 19.0
    divisor: float = 30.0       # demand proration

    def __post_init__(self):
        if not (0 <= self.t_on < self.t_off <= 24):
            raise ValueError("need 0 <= t_on < t_off <= 24")
        if min(self.p_on, self.p_off, self.p_d) < 0:
            raise ValueError("prices must be nonnegative")
        if self.divisor <= 0:
            raise ValueError("divisor must be positive")

    def vector(self) -> np.ndarray:
        return np.array([self.p_off, self.p_on, self.p_d])

    def scaled(self, c: float) -> "PricePlan":
        return replace(self, p_on=self.p_on * c, p_off=self.p_off * c, p_d=self.p_d * c)

    def on_peak(self, N_f: int, dt: float) -> np.ndarray:
        h = (np.arange(N_f) * dt) % 24.0
        return (h >= self.t_on) & (h <= self.t_off)

    def energy_prices(self, N_f: int, dt: float) -> np.ndarray:
        return np.where(self.on_peak(N_f, dt), self.p_on, self.p_off)


APS_PLAN = PricePlan(p_on=0.089, p_off=0.044, p_d=13.50)


@dataclass
class Schedule:
    u: np.ndarray
    g: np.ndarray          # kW per step
    T: np.ndarray          # (N_f + 1, M) wall temperatures
    energy_cost: float
    demand_cost: float
    peak: float
    gamma: float | None = None

    @property
    def bill(self) -> float:
        return self.energy_cost + self.demand_cost

    def to_csv(self, path: str):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["hour", "u", "g"] + [f"T{i + 1}" for i in range(self.T.shape[1])])
            for k in range(len(self.u)):
                w.writerow([k, f"{self.u[k]:.4f}", f"{self.g[k]:.6f}"] + [f"{v:.4f}" for v in self.T[k]])


# ----------------------------------------------------------------------------
# dynamics and consumption
# ----------------------------------------------------------------------------


def step_dynamics(model: ThermalModel, T: np.ndarray, u) -> np.ndarray:
    """T' = (I + A dt) T + B dt u; T may be (..., M) with u broadcast over the leading axes."""
    F, G = model.matrices()
    T = np.asarray(T, float)
    return T @ F.T + np.multiply.outer(np.asarray(u, float), G)


def consumption(model: ThermalModel, k: int, u, T1, Q: float | None = None):
    """HVAC power in kW at step k, net of local generation.

    The unit only cools, so the heat-flux term is clipped at zero before Q is subtracted.
    """
    q = (model.T_e[k] - np.asarray(u, float)) / model.R_e + 2 * model.C_in * (np.asarray(T1, float) - u) / model.dx
    q = np.maximum(q / 1000.0, 0.0)
    if Q is None and model.Q is not None:
        Q = model.Q[k]
    return q - (Q or 0.0)


class StateGrid:
    """Uniform n_s-point grid per wall node; states are flat indices into n_s^M."""

    def __init__(self, M: int, lo: float, hi: float, n_s: int):
        if n_s < 2:
            raise ValueError("need at least two grid points")
        self.M, self.lo, self.hi, self.n_s = M, lo, hi, n_s
        self.values = np.linspace(lo, hi, n_s)
        self.h = (hi - lo) / (n_s - 1)
        idx = np.array(list(itertools.product(range(n_s), repeat=M)), dtype=int).reshape(-1, M)
        self.points = self.values[idx]
        self.size = n_s ** M
        self._w = n_s ** np.arange(M - 1, -1, -1)

    def snap_index(self, T: np.ndarray) -> np.ndarray:
        i = np.clip(np.rint((np.asarray(T) - self.lo) / self.h), 0, self.n_s - 1).astype(int)
        return i @ self._w

    def snap(self, T: np.ndarray) -> np.ndarray:
        return self.points[self.snap_index(T)]


def simulate(model: ThermalModel, plan: PricePlan, u: Sequence[float], T0: np.ndarray,
             grid: StateGrid | None = None, gamma: float | None = None) -> Schedule:
    """Run a set-point sequence; with ``grid`` the state is snapped after each step."""
    u = np.asarray(u, float)
    N = model.N_f
    if u.shape != (N,):
        raise ValueError(f"need {N} set-points")
    T = np.zeros((N + 1, model.M))
    T[0] = grid.snap(T0) if grid is not None else T0
    g = np.zeros(N)
    for k in range(N):
        g[k] = consumption(model, k, u[k], T[k, 0])
        nxt = step_dynamics(model, T[k], u[k])
        T[k + 1] = grid.snap(nxt) if grid is not None else nxt
    return _bill(model, plan, u, g, T, gamma)


def _bill(model, plan, u, g, T, gamma=None) -> Schedule:
    on = plan.on_peak(model.N_f, model.dt)
    prices = plan.energy_prices(model.N_f, model.dt)
    Je = float(np.sum(prices * g) * model.dt)
    peak = float(g[on].max()) if on.any() else 0.0
    Jd = plan.p_d / plan.divisor * peak
    return Schedule(u, g, T, Je, Jd, peak, gamma)


# ----------------------------------------------------------------------------
# dynamic programming
# ----------------------------------------------------------------------------


@dataclass
class DpResult:
    feasible: bool
    V0: float
    policy: list[np.ndarray]         # per step: action index per state (-1 when inadmissible)
    values: list[np.ndarray]         # V_j on the grid, j = 0..N_f
    schedule: Schedule | None
    grid: StateGrid
    u_grid: np.ndarray


def default_grids(T_min: float, T_max: float, M: int, n_s: int = 13, n_u: int = 13):
    return StateGrid(M, T_min, T_max, n_s), np.linspace(T_min, T_max, n_u)


def dp_solve(model: ThermalModel, plan: PricePlan, gamma: float, T_min: float = 22.0, T_max: float = 28.0,
             n_s: int = 13, n_u: int = 13, T0: np.ndarray | None = None, pool=None) -> DpResult:
    """Backward recursion with the on-peak constraint g <= gamma; V_{N_f} = p_d / divisor * gamma."""
    grid, ugrid = default_grids(T_min, T_max, model.M, n_s, n_u)
    N = model.N_f
    on = plan.on_peak(N, model.dt)
    prices = plan.energy_prices(N, model.dt)
    terminal = plan.p_d / plan.divisor * (gamma if math.isfinite(gamma) else 0.0)
    V = np.full(grid.size, terminal)
    values = [V]
    policy: list[np.ndarray] = []
    # successor indices do not depend on time: precompute (states x actions)
    succ = grid.snap_index(step_dynamics(model, grid.points[:, None, :], ugrid[None, :]))
    T1 = grid.points[:, 0]
    for k in range(N - 1, -1, -1):
        def sweep(rng, k=k, Vn=V):
            s = slice(rng.start, rng.stop)
            g = consumption(model, k, ugrid[None, :], T1[s, None])
            cost = prices[k] * g * model.dt + Vn[succ[s]]
            if on[k]:
                cost = np.where(g <= gamma + 1e-12, cost, np.inf)
            a = np.argmin(cost, axis=1)
            best = cost[np.arange(cost.shape[0]), a]
            a = np.where(np.isfinite(best), a, -1)
            return [(best, a)]

        if pool is None:
            best, a = sweep(range(grid.size))[0]
        else:
            parts = pool.map_blocks(lambda rng: sweep(rng) if len(rng) else [], grid.size, "dp")
            best = np.concatenate([p[0] for p in parts])
            a = np.concatenate([p[1] for p in parts])
        V = best
        values.append(V)
        policy.append(a)
    values.reverse()
    policy.reverse()
    T0 = np.full(model.M, 0.5 * (T_min + T_max)) if T0 is None else np.asarray(T0, float)
    s0 = int(grid.snap_index(T0))
    V0 = float(values[0][s0])
    if not math.isfinite(V0):
        return DpResult(False, math.inf, policy, values, None, grid, ugrid)
    u = np.zeros(N)
    s = s0
    for k in range(N):
        u[k] = ugrid[policy[k][s]]
        s = int(succ[s, policy[k][s]])
    sched = simulate(model, plan, u, T0, grid, gamma)
    return DpResult(True, V0, policy, values, sched, grid, ugrid)


def bellman_residual(model: ThermalModel, plan: PricePlan, res: DpResult, gamma: float) -> float:
    """max_j |V_j - min_u (stage + V_{j+1}(f))| over states with finite values."""
    grid, ugrid = res.grid, res.u_grid
    N = model.N_f
    on = plan.on_peak(N, model.dt)
    prices = plan.energy_prices(N, model.dt)
    succ = grid.snap_index(step_dynamics(model, grid.points[:, None, :], ugrid[None, :]))
    worst = 0.0
    for k in range(N):
        g = consumption(model, k, ugrid[None, :], grid.points[:, 0, None])
        cost = prices[k] * g * model.dt + res.values[k + 1][succ]
        if on[k]:
            cost = np.where(g <= gamma + 1e-12, cost, np.inf)
        best = cost.min(axis=1)
        fin = np.isfinite(best)
        if np.any(fin != np.isfinite(res.values[k])):
            return math.inf
        if fin.any():
            worst = max(worst, float(np.abs(best[fin] - res.values[k][fin]).max()))
    return worst


def brute_force(model: ThermalModel, plan: PricePlan, gamma: float, T_min: float = 22.0, T_max: float = 28.0,
                n_s: int = 3, n_u: int = 3, T0: np.ndarray | None = None) -> tuple[float, np.ndarray | None]:
    """Exhaustive search over all n_u^N_f set-point sequences of the quantized model."""
    grid, ugrid = default_grids(T_min, T_max, model.M, n_s, n_u)
    T0 = np.full(model.M, 0.5 * (T_min + T_max)) if T0 is None else np.asarray(T0, float)
    on = plan.on_peak(model.N_f, model.dt)
    prices = plan.energy_prices(model.N_f, model.dt)
    seqs = np.array(list(itertools.product(range(len(ugrid)), repeat=model.N_f)))
    U = ugrid[seqs]
    T = np.repeat(grid.snap(T0)[None], len(U), axis=0)
    total = np.zeros(len(U))
    ok = np.ones(len(U), dtype=bool)
    for k in range(model.N_f):
        g = consumption(model, k, U[:, k], T[:, 0])
        total += prices[k] * g * model.dt
        if on[k]:
            ok &= g <= gamma + 1e-12
        T = grid.snap(step_dynamics(model, T, U[:, k]))
    total += plan.p_d / plan.divisor * (gamma if math.isfinite(gamma) else 0.0)
    if not ok.any():
        return math.inf, None
    total[~ok] = np.inf
    i = int(np.argmin(total))
    return float(total[i]), U[i]


# ----------------------------------------------------------------------------
# thermostat programming
# ----------------------------------------------------------------------------


@dataclass
class ThermostatConfig:
    T_min: float = 22.0
    T_max: float = 28.0
    n_s: int = 13
    n_u: int = 13
    b_max: int = 20
    sweep: int = 16
    T0: np.ndarray | None = None


def thermostat_optimize(model: ThermalModel, plan: PricePlan, cfg: ThermostatConfig | None = None,
                        pool=None, trials: list | None = None) -> Schedule:
    """Optimal set-points: bisection for the smallest feasible peak bound, then a search over the bound.

    The bisection (b_max steps) brackets the feasible bounds; the total bill
    V_0(gamma) is then minimized over [gamma_min, unconstrained peak] by a
    coarse sweep refined with golden-section steps.
    """
    cfg = cfg or ThermostatConfig()
    model.check_stable()
    trials = [] if trials is None else trials

    def run(gamma):
        return dp_solve(model, plan, gamma, cfg.T_min, cfg.T_max, cfg.n_s, cfg.n_u, cfg.T0, pool)

    free = run(math.inf)
    if not free.feasible:
        raise ValueError("temperature limits admit no schedule")
    g_hi = free.schedule.peak
    g_lo = float(np.min(free.schedule.g)) - 100.0
    if plan.p_d == 0:
        best = run(g_hi)
        trials.append((g_hi, True))
        return best.schedule
    # literal bisection on feasibility
    lo, hi = g_lo, g_hi
    trials.append((g_hi, True))
    for _ in range(cfg.b_max):
        mid = 0.5 * (lo + hi)
        ok = run(mid).feasible
        trials.append((mid, ok))
        if ok:
            hi = mid
        else:
            lo = mid
    _check_monotone(trials)
    gamma_min = hi
    cache: dict[float, DpResult] = {}

    def J(gamma):
        if gamma not in cache:
            cache[gamma] = run(gamma)
        r = cache[gamma]
        return r.V0 if r.feasible else math.inf

    grid = np.linspace(gamma_min, g_hi, max(cfg.sweep, 2))
    vals = [J(x) for x in grid]
    i = int(np.argmin(vals))
    a, b = grid[max(i - 1, 0)], grid[min(i + 1, len(grid) - 1)]
    phi = (math.sqrt(5) - 1) / 2
    c, d = b - phi * (b - a), a + phi * (b - a)
    for _ in range(cfg.b_max):
        if J(c) <= J(d):
            b, d = d, c
            c = b - phi * (b - a)
        else:
            a, c = c, d
            d = a + phi * (b - a)
    gbest = min(cache, key=lambda x: (J(x), x))
    return cache[gbest].schedule


def _check_monotone(trials):
    ok = [v for v, f in trials if f]
    bad = [v for v, f in trials if not f]
    if ok and bad and min(ok) <= max(bad):
        raise AssertionError("feasibility of the peak bound is not monotone")


def constant_schedule(model: ThermalModel, plan: PricePlan, value: float, T0=None, grid: StateGrid | None = None,
                      cfg: ThermostatConfig | None = None) -> Schedule:
    cfg = cfg or ThermostatConfig()
    grid = grid or StateGrid(model.M, cfg.T_min, cfg.T_max, cfg.n_s)
    T0 = _T0(model, cfg) if T0 is None else T0
    return simulate(model, plan, np.full(model.N_f, value), T0, grid)


def precool_schedule(model: ThermalModel, plan: PricePlan, cfg: ThermostatConfig | None = None) -> Schedule:
    """25 C overnight, T_min from 8 to 12, T_max from 12 to 20, 25 C after."""
    cfg = cfg or ThermostatConfig()
    h = (np.arange(model.N_f) * model.dt) % 24
    u = np.full(model.N_f, 25.0)
    u[(h >= 8) & (h < 12)] = cfg.T_min
    u[(h >= 12) & (h < 20)] = cfg.T_max
    grid = StateGrid(model.M, cfg.T_min, cfg.T_max, cfg.n_s)
    return simulate(model, plan, np.clip(u, cfg.T_min, cfg.T_max), _T0(model, cfg), grid)


def _T0(model, cfg):
    return np.full(model.M, 0.5 * (cfg.T_min + cfg.T_max)) if cfg.T0 is None else np.asarray(cfg.T0, float)


def four_setpoint_optimize(model: ThermalModel, plan: PricePlan, n_samples: int = 300, seed: int = 0,
                           cfg: ThermostatConfig | None = None) -> tuple[Schedule, tuple[int, int, int], np.ndarray]:
    """Best daily 4-period program over random switching hours.

    For each sampled t1 <= t2 <= t3 (whole hours, repeated every day) all
    n_u^4 set-point combinations are simulated together on the quantized
    model and the cheapest bill is kept. Returns (schedule, switching times, set-points).
    """
    cfg = cfg or ThermostatConfig()
    rng = np.random.default_rng(seed)
    grid = StateGrid(model.M, cfg.T_min, cfg.T_max, cfg.n_s)
    ugrid = np.linspace(cfg.T_min, cfg.T_max, cfg.n_u)
    combos = np.array(list(itertools.product(range(cfg.n_u), repeat=4)))
    setpts = ugrid[combos]                       # (C, 4)
    hours = (np.arange(model.N_f) * model.dt) % 24
    on = plan.on_peak(model.N_f, model.dt)
    prices = plan.energy_prices(model.N_f, model.dt)
    T0 = grid.snap(_T0(model, cfg))
    best = (math.inf, None, None)
    seen = set()
    attempts = 0
    while len(seen) < n_samples and attempts < 50 * n_samples:
        attempts += 1
        t = tuple(sorted(int(v) for v in rng.integers(0, 25, size=3)))
        if t in seen:
            continue
        seen.add(t)
        period = np.searchsorted(np.array(t), hours, side="right")   # 0..3
        U = setpts[:, period]                                       # (C, N_f)
        T = np.repeat(T0[None], len(U), axis=0)
        energy = np.zeros(len(U))
        peak = np.full(len(U), -np.inf)
        for k in range(model.N_f):
            g = consumption(model, k, U[:, k], T[:, 0])
            energy += prices[k] * g * model.dt
            if on[k]:
                peak = np.maximum(peak, g)
            T = grid.snap(step_dynamics(model, T, U[:, k]))
        bill = energy + plan.p_d / plan.divisor * np.where(np.isfinite(peak), peak, 0.0)
        i = int(np.argmin(bill))
        if bill[i] < best[0]:
            best = (float(bill[i]), t, setpts[i])
    _, t, sp = best
    period = np.searchsorted(np.array(t), hours, side="right")
    sched = simulate(model, plan, sp[period], _T0(model, cfg), grid)
    return sched, t, sp


# ----------------------------------------------------------------------------
# utility level
# ----------------------------------------------------------------------------


@dataclass
class CostModel:
    kind: str = "linear"       # "linear" or "quadratic"
    a: float = 0.0814          # $/kWh
    b: float = 59.76           # $/kW
    tau: float = 0.00401       # $/(MWh)^2
    nu: float = 4.54351        # $/MWh

    def __call__(self, s: np.ndarray, on: np.ndarray, dt: float) -> float:
        energy = float(np.sum(s) * dt)
        cap = self.b * float(s[on].max()) if on.any() else 0.0
        if self.kind == "linear":
            return self.a * energy + cap
        if self.kind == "quadratic":
            mwh = energy / 1000.0
            return self.tau * mwh ** 2 + self.nu * mwh + cap
        raise ValueError(f"unknown cost model {self.kind!r}")


@dataclass
class User:
    model: ThermalModel
    weight: float = 1.0
    name: str = "user"


@dataclass
class Evaluation:
    plan: PricePlan
    cost: float
    revenue: float
    schedules: list[Schedule]
    s: np.ndarray

    @property
    def residual(self) -> float:
        return abs(self.cost - self.revenue) / max(abs(self.cost), 1e-12)


@dataclass
class PricingResult:
    plan: PricePlan
    cost: float
    residual: float
    iterations: int
    converged: bool
    history: list[dict]
    evaluation: Evaluation


def evaluate_prices(users: Sequence[User], cost: CostModel, plan: PricePlan, lam: float = 1.0,
                    cfg: ThermostatConfig | None = None, cache: dict | None = None) -> Evaluation:
    """Users respond optimally; prices are then rescaled so that cost = lam * revenue.

    A uniform price scaling multiplies every user's objective by a constant,
    so the optimal schedules (and the utility cost) do not change.
    """
    key = tuple(np.round(plan.vector() / max(plan.vector().sum(), 1e-300), 12))
    if cache is not None and key in cache:
        scheds = cache[key]
    else:
        scheds = [thermostat_optimize(u.model, plan, cfg) for u in users]
        if cache is not None:
            cache[key] = scheds
    # re-bill at the given plan (cached schedules may come from a scaled plan)
    scheds = [simulate_bill(u.model, plan, s) for u, s in zip(users, scheds)]
    m0 = users[0].model
    on = plan.on_peak(m0.N_f, m0.dt)
    s = sum(u.weight * sc.g for u, sc in zip(users, scheds))
    C = cost(s, on, m0.dt)
    R = sum(u.weight * sc.bill for u, sc in zip(users, scheds))
    if R > 0 and C > 0:
        c = C / (lam * R)
        plan = plan.scaled(c)
        scheds = [simulate_bill(u.model, plan, sc) for u, sc in zip(users, scheds)]
        R = sum(u.weight * sc.bill for u, sc in zip(users, scheds))
    return Evaluation(plan, C, lam * R, scheds, s)


def simulate_bill(model: ThermalModel, plan: PricePlan, sched: Schedule) -> Schedule:
    return _bill(model, plan, sched.u, sched.g, sched.T, sched.gamma)


def marginal_plan(cost: CostModel, template: PricePlan = APS_PLAN) -> PricePlan:
    return replace(template, p_on=cost.a, p_off=cost.a, p_d=cost.b)


def nelder_mead(f: Callable[[np.ndarray], float], simplex: np.ndarray, theta: float = 1.0, kappa: float = 2.0,
                zeta: float = 0.5, tau: float = 0.5, eps: float = 1e-4, max_iter: int = 50,
                project: Callable[[np.ndarray], np.ndarray] | None = None,
                history: list | None = None) -> tuple[np.ndarray, float, int, bool]:
    """Standard Nelder-Mead with reflection, expansion, contraction and shrink steps."""
    proj = project or (lambda x: x)
    S = np.array([proj(x) for x in simplex], float)
    F = np.array([f(x) for x in S])
    n = S.shape[1]
    for it in range(1, max_iter + 1):
        order = np.argsort(F, kind="stable")
        S, F = S[order], F[order]
        if history is not None:
            history.append({"iter": it, "best": float(F[0]), "point": S[0].tolist()})
        diam = max(np.linalg.norm(S[i] - S[j]) for i in range(n + 1) for j in range(i))
        if diam < eps:
            return S[0], float(F[0]), it, True
        c = S[:-1].mean(axis=0)
        xr = proj(c + theta * (c - S[-1]))
        fr = f(xr)
        if F[0] <= fr < F[-2]:
            S[-1], F[-1] = xr, fr
            continue
        if fr < F[0]:
            xe = proj(c + kappa * (xr - c))
            fe = f(xe)
            S[-1], F[-1] = (xe, fe) if fe < fr else (xr, fr)
            continue
        xc = proj(c + zeta * (S[-1] - c))
        fc = f(xc)
        if fc < F[-1]:
            S[-1], F[-1] = xc, fc
            continue
        for i in range(1, n + 1):
            S[i] = proj(S[0] + tau * (S[i] - S[0]))
            F[i] = f(S[i])
    order = np.argsort(F, kind="stable")
    return S[order[0]], float(F[order[0]]), max_iter, False


def utility_optimize(users: Sequence[User], cost: CostModel | None = None, lam: float = 1.0,
                     start: PricePlan | None = None, cfg: ThermostatConfig | None = None,
                     eps: float = 1e-4, max_iter: int = 30, step: float = 0.25) -> PricingResult:
    """Minimize utility cost over (p_off, p_on, p_d) with the users' optimal responses.

    Vertices are price vectors normalized to unit sum (the cost is invariant
    to scaling); after each evaluation prices are rescaled to balance revenue.
    """
    cost = cost or CostModel()
    start = start or marginal_plan(cost)
    template = start
    cache: dict = {}
    evals: dict[tuple, Evaluation] = {}

    def to_plan(x):
        return replace(template, p_off=float(x[0]), p_on=float(x[1]), p_d=float(x[2]))

    def norm(x):
        x = np.maximum(np.asarray(x, float), 0.0)
        s = x.sum()
        return x / s if s > 0 else np.full(3, 1 / 3)

    scale = np.array([1.0, 1.0, 1.0 / max(start.p_d, 1e-9) * max(start.p_on, 1e-9)])
    # optimize in coordinates where demand and energy prices have comparable size
    def f(z):
        x = norm(z / scale)
        ev = evaluate_prices(users, cost, to_plan(x), lam, cfg, cache)
        evals[tuple(np.round(z, 12))] = ev
        return ev.cost

    z0 = norm(start.vector()) * scale
    z0 = z0 / z0.sum()
    simplex = [z0]
    for i in range(3):
        z = z0.copy()
        z[i] *= (1 + step)
        simplex.append(z / z.sum())
    history: list = []
    zbest, fbest, it, conv = nelder_mead(f, np.array(simplex), eps=eps, max_iter=max_iter,
                                         project=lambda z: np.maximum(z, 1e-9) / np.maximum(z, 1e-9).sum(),
                                         history=history)
    if not conv:
        warnings.warn("price optimization did not converge; returning the best prices found")
    ev = evals[tuple(np.round(zbest, 12))]
    return PricingResult(ev.plan, ev.cost, ev.residual, it, conv, history, ev)


# ----------------------------------------------------------------------------
# profiles and scenarios
# ----------------------------------------------------------------------------


def phoenix_profile(N_f: int = 73, dt: float = 1.0, peak: float = 45.0, low: float = 29.0,
                    peak_hour: float = 16.0) -> np.ndarray:
    """Synthetic summer exterior temperature: daily sinusoid peaking at ``peak`` at ``peak_hour``."""
    h = np.arange(N_f) * dt
    mid, amp = 0.5 * (peak + low), 0.5 * (peak - low)
    return mid + amp * np.cos(2 * np.pi * (h - peak_hour) / 24.0)


def solar_profile(N_f: int = 73, dt: float = 1.0, capacity: float = 13.0, sunrise: float = 6.0,
                  sunset: float = 19.5) -> np.ndarray:
    """Synthetic rooftop PV output in kW."""
    h = (np.arange(N_f) * dt) % 24
    x = np.clip((h - sunrise) / (sunset - sunrise), 0, 1)
    return 0.8 * capacity * np.sin(np.pi * x) ** 1.5


def load_temperature_csv(path: str) -> np.ndarray:
    """(hour, degC) rows; returns the temperature column."""
    rows = []
    with open(path) as fh:
        for row in csv.reader(fh):
            if not row or row[0].strip().lower() in ("hour", "#"):
                continue
            rows.append(float(row[1]))
    return np.array(rows)


@dataclass
class SolarReport:
    two_user: PricingResult
    single_nonsolar: PricingResult
    single_solar: PricingResult
    bills: dict

    @property
    def nonsolar_delta(self) -> float:
        return self.bills["two_user_nonsolar"] / self.bills["single_nonsolar"] - 1.0


def solar_scenario(base: ThermalModel, Q: np.ndarray, cost: CostModel | None = None, lam: float = 1.0,
                   cfg: ThermostatConfig | None = None, **kw) -> SolarReport:
    """Two equal-weight aggregate users (with and without local generation) against single-user networks."""
    cost = cost or CostModel()
    plain = User(base.with_profile(base.T_e), 0.5, "nonsolar")
    solar = User(base.with_profile(base.T_e, Q), 0.5, "solar")
    both = utility_optimize([plain, solar], cost, lam, cfg=cfg, **kw)
    one_plain = utility_optimize([User(plain.model, 1.0, "nonsolar")], cost, lam, cfg=cfg, **kw)
    one_solar = utility_optimize([User(solar.model, 1.0, "solar")], cost, lam, cfg=cfg, **kw)
    bills = {
        "two_user_nonsolar": both.evaluation.schedules[0].bill,
        "two_user_solar": both.evaluation.schedules[1].bill,
        "single_nonsolar": one_plain.evaluation.schedules[0].bill,
        "single_solar": one_solar.evaluation.schedules[0].bill,
    }
    return SolarReport(both, one_plain, one_solar, bills)
