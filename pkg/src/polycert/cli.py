"""Command-line entry point: ``polycert <analysis> --config file.json`` and ``polycert grid <task> ...``.

Exit codes: 0 when the analysis certifies stability (or a grid task
finishes), 2 when no certificate is found, 1 on errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from . import handelman, smartgrid, stability
from .parallel import WorkerPool

log = logging.getLogger("polycert")

EXIT_OK, EXIT_ERROR, EXIT_INFEASIBLE = 0, 1, 2


def _read_json(path: str) -> dict:
    with open(path) as fh:
        return json.load(fh)


def _system_from_config(cfg: dict, per_variable_groups: bool):
    """Matrix polynomial from ``data`` (bundled file), ``terms`` or affine ``vertices``."""
    if "data" in cfg:
        data = stability.load_data(cfg["data"])
        nv = len(data["terms"][0]["exp"])
        return stability.matrix_poly_from_terms(data["terms"], nv, per_variable_groups), data
    if "terms" in cfg:
        nv = len(cfg["terms"][0]["exp"])
        return stability.matrix_poly_from_terms(cfg["terms"], nv, per_variable_groups), cfg
    if "vertices" in cfg:
        l = len(cfg["vertices"])
        terms = [{"exp": [int(i == k) for i in range(l)], "coef": M} for k, M in enumerate(cfg["vertices"])]
        return stability.matrix_poly_from_terms(terms, l, per_variable_groups), cfg
    raise ValueError("config needs one of 'data', 'terms' or 'vertices'")


def _solver_kw(args, cfg) -> dict:
    return {"eps": args.eps if args.eps is not None else cfg.get("eps", 1e-7),
            "max_iter": args.max_iter if args.max_iter is not None else cfg.get("max_iter", 100),
            "delta": args.delta if args.delta is not None else cfg.get("delta", 1e-2)}


def run_simplex(cfg, args, pool):
    A, _ = _system_from_config(cfg, False)
    if "scale" in cfg:
        A = A.substitute(stability.simplex_scaling_map(float(cfg["scale"]), A.nvars))
    return stability.robust_stability_simplex(A, cfg.get("d_p", 0), cfg.get("d1", 0), cfg.get("d2", 0),
                                              pool=pool, **_solver_kw(args, cfg))


def run_hypercube(cfg, args, pool):
    A, data = _system_from_config(cfg, True)
    radii = cfg.get("radii", data.get("radii"))
    if radii is None:
        raise ValueError("hypercube config needs 'radii'")
    D_p = cfg.get("D_p", [0] * A.nvars)
    return stability.robust_stability_hypercube(A, radii, D_p, cfg.get("d1", 0), cfg.get("d2", 0), pool=pool,
                                                degrees=cfg.get("degrees"), **_solver_kw(args, cfg))


def _vector_field(cfg):
    return [{tuple(t["exp"]): float(t["coef"]) for t in comp} for comp in cfg["f"]]


def run_roa(cfg, args, pool):
    kw = {k: cfg[k] for k in ("s_min", "s_max", "tol", "decrease") if k in cfg}
    d = cfg.get("d", 8)
    if "shape" in cfg:
        return stability.van_der_pol_roa(cfg["shape"], d, **kw)
    gamma = handelman.Polytope.from_vertices([tuple(v) for v in cfg["vertices"]])
    return stability.nonlinear_roa(_vector_field(cfg), gamma, d, cfg.get("kind", "fan"), **kw)


def run_tokamak(cfg, args, pool):
    return stability.tokamak_case_study(cfg.get("d_p", 1), cfg.get("d1", 1), cfg.get("d2", 1),
                                        cfg.get("iters", 20), cfg.get("data_path"), pool=pool,
                                        **_solver_kw(args, cfg))


def run_optimize(cfg, args, pool):
    """Bisection on the uncertainty size for a simplex (scale L) or hypercube (radius r) family."""
    kw = dict(_solver_kw(args, cfg), pool=pool)
    iters, tol = cfg.get("iters", 20), cfg.get("tol", 1e-4)
    if cfg.get("set", "simplex") == "simplex":
        A, _ = _system_from_config(cfg, False)

        def family(L):
            return A.substitute(stability.simplex_scaling_map(L, A.nvars))
        return stability.max_uncertainty_simplex(family, cfg.get("d_p", 0), cfg.get("d1", 0), cfg.get("d2", 0),
                                                 cfg.get("safe", 0.3), cfg.get("risky", -0.3), iters, tol, **kw)
    A, data = _system_from_config(cfg, True)
    rep = stability.max_hypercube_radius(A, cfg.get("D_p", [0] * A.nvars), cfg.get("d1", 0), cfg.get("d2", 0),
                                         cfg.get("safe", 0.05), cfg.get("risky", 1.5), iters, tol, **kw)
    if "other_methods" in data:
        rep.metadata["other_methods"] = data["other_methods"]
    return rep


ANALYSES = {"simplex": run_simplex, "hypercube": run_hypercube, "roa": run_roa,
            "tokamak": run_tokamak, "optimize": run_optimize}


def _write_report(rep: stability.StabilityReport, out: str | None, name: str):
    text = rep.to_json()
    if out:
        os.makedirs(out, exist_ok=True)
        with open(os.path.join(out, f"{name}.json"), "w") as fh:
            fh.write(text)
        stability.emit_plots(rep, out, name)
    else:
        print(text)


# ----------------------------------------------------------------------------
# grid tasks
# ----------------------------------------------------------------------------


def _grid_inputs(args):
    mcfg = _read_json(args.model) if args.model else {}
    pcfg = _read_json(args.prices) if args.prices else {}
    T_e = smartgrid.load_temperature_csv(args.temps) if args.temps else smartgrid.phoenix_profile(
        mcfg.pop("N_f", 73))
    mcfg.pop("N_f", None)
    Q = smartgrid.load_temperature_csv(args.solar) if args.solar else None
    tcfg = smartgrid.ThermostatConfig(**mcfg.pop("thermostat", {}))
    model = smartgrid.ThermalModel(**mcfg, T_e=T_e, Q=Q)
    cost = smartgrid.CostModel(**pcfg.pop("cost", {}))
    plan = smartgrid.PricePlan(**{**vars(smartgrid.APS_PLAN), **pcfg})
    return model, plan, tcfg, cost


def run_grid(args) -> int:
    model, plan, tcfg, cost = _grid_inputs(args)
    out = args.out or "."
    os.makedirs(out, exist_ok=True)
    if args.task == "thermostat":
        sched = smartgrid.thermostat_optimize(model, plan, tcfg)
        summary = {"bill": sched.bill, "energy_cost": sched.energy_cost, "demand_cost": sched.demand_cost,
                   "peak": sched.peak, "gamma": sched.gamma}
    elif args.task == "fourset":
        sched, times, setpts = smartgrid.four_setpoint_optimize(model, plan, args.samples, args.seed, tcfg)
        summary = {"bill": sched.bill, "peak": sched.peak, "switch_hours": list(times),
                   "setpoints": np.asarray(setpts).tolist()}
    else:
        res = smartgrid.utility_optimize([smartgrid.User(model)], cost, args.lam, start=plan, cfg=tcfg,
                                         max_iter=args.max_iter or 30)
        sched = res.evaluation.schedules[0]
        summary = {"prices": {"p_off": res.plan.p_off, "p_on": res.plan.p_on, "p_d": res.plan.p_d},
                   "cost": res.cost, "balance_residual": res.residual, "iterations": res.iterations,
                   "converged": res.converged}
    sched.to_csv(os.path.join(out, f"{args.task}_schedule.csv"))
    with open(os.path.join(out, f"{args.task}_report.json"), "w") as fh:
        json.dump(summary, fh, indent=1)
    print(json.dumps(summary, indent=1))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="polycert", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--eps", type=float)
        sp.add_argument("--max-iter", type=int)
        sp.add_argument("--workers", type=int, default=None)
        sp.add_argument("--delta", type=float)
        sp.add_argument("--out", help="directory for the report JSON and CSVs (default: print JSON)")

    for name in ANALYSES:
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True)
        common(sp)
    g = sub.add_parser("grid")
    g.add_argument("task", choices=["thermostat", "fourset", "pricing"])
    g.add_argument("--model")
    g.add_argument("--prices")
    g.add_argument("--temps")
    g.add_argument("--solar")
    g.add_argument("--samples", type=int, default=300)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--lam", type=float, default=1.0)
    common(g)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        if args.command == "grid":
            return run_grid(args)
        cfg = _read_json(args.config)
        with WorkerPool(args.workers or cfg.get("workers", 1)) as pool:
            rep = ANALYSES[args.command](cfg, args, pool)
        _write_report(rep, args.out, args.command)
        return EXIT_OK if rep.stable else EXIT_INFEASIBLE
    except Exception as exc:       # reported, not raised, so scripts see exit code 1
        if args.verbose:
            raise
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
