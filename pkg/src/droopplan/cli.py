"""Command line interface.

Subcommands: ``plan`` runs one of the three study cases end to end,
``verify`` checks an explicit placement, ``cluster`` only reduces the
profiles to scenarios, ``make-fixture`` generates the bundled synthetic
34-bus dataset.  ``plan``/``verify`` exit 0 when verification passes,
2 when the optimization succeeded but verification found violations,
and 1 on errors.
"""

from __future__ import annotations

import argparse
import csv
import sys
import time

from . import bnb, builder, fixture, report
from .config import CASE_PRESETS, load_config
from .errors import DroopPlanError
from .scenarios import reduce_scenarios
from .verifier import verify_limits

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_VIOLATIONS = 2


def _scenario_set(cfg, profiles, args):
    k = args.k if getattr(args, "k", None) else int(cfg.scenarios.get("k", 24))
    seed = args.seed if args.seed is not None else int(cfg.scenarios.get("seed", 1))
    if getattr(args, "stratified", None):
        stratified = True
    else:
        stratified = bool(cfg.scenarios.get("stratified", False))
    return reduce_scenarios(profiles, k=k, seed=seed, stratified=stratified)


def run_case(cfg, case: int, args) -> tuple[report.CaseReport, object, object, object]:
    """Execute reduce -> build -> solve -> verify for one case preset."""
    droop_model, relaxation = CASE_PRESETS[case]
    net = cfg.load_net()
    profiles = cfg.load_profiles()
    scen = _scenario_set(cfg, profiles, args)
    controls = cfg.controls(net)
    costs = cfg.cost_params(net)

    t0 = time.perf_counter()
    prog = builder.build_program(
        net, scen, controls, costs, droop_model=droop_model, relaxation=relaxation
    )
    gap_tol = args.gap if args.gap else float(cfg.solver.get("gap_tol", 1e-3))
    limits = bnb.Limits(
        max_nodes=int(cfg.solver.get("max_nodes", 20000)),
        max_time=cfg.solver.get("max_time"),
    )
    solution = bnb.solve_misocp(prog, gap_tol=gap_tol, limits=limits)
    wall = time.perf_counter() - t0

    verification = verify_limits(
        net, scen, solution.placement, controls, workers=args.workers
    )
    rep = report.CaseReport(
        case=case,
        placement=solution.placement,
        objective=solution.objective,
        f_inv=solution.f_inv,
        f_op=solution.f_op,
        max_voltage=verification.overall_max_v,
        max_current=verification.overall_max_i,
        wall_time=wall,
        feasible=verification.feasible,
        gap=solution.gap,
        solver_status=solution.status,
    )
    return rep, net, solution, verification


def cmd_plan(args) -> int:
    cfg = load_config(args.config)
    cases = [args.case] if args.case else [1, 2, 3]
    reports = []
    worst = EXIT_OK
    for case in cases:
        rep, net, solution, verification = run_case(cfg, case, args)
        reports.append(rep)
        report.emit_profiles(
            args.out, net, verification, solution, prefix=f"case{case}_"
        )
        state = "feasible" if rep.feasible else "VIOLATIONS"
        print(
            f"case {case}: placement {{{', '.join(map(str, rep.placement))}}} "
            f"objective {rep.objective:.4f} max V {rep.max_voltage:.4f} "
            f"max I {rep.max_current:.4f} [{state}] ({rep.wall_time:.1f} s)"
        )
        if not rep.feasible:
            worst = EXIT_VIOLATIONS
    report.write_report_csv(reports, f"{args.out}/report.csv")
    return worst


def cmd_verify(args) -> int:
    cfg = load_config(args.config)
    net = cfg.load_net()
    profiles = cfg.load_profiles()
    scen = _scenario_set(cfg, profiles, args)
    controls = cfg.controls(net)
    placement = sorted(int(tok) for tok in args.placement.split(",") if tok.strip())
    verification = verify_limits(net, scen, placement, controls, workers=args.workers)
    report.emit_profiles(args.out, net, verification, None)
    print(
        f"placement {{{', '.join(map(str, placement))}}}: "
        f"max V {verification.overall_max_v:.4f} max I {verification.overall_max_i:.4f} "
        f"violations {len(verification.violations)}"
    )
    return EXIT_OK if verification.feasible else EXIT_VIOLATIONS


def cmd_cluster(args) -> int:
    cfg = load_config(args.config)
    profiles = cfg.load_profiles()
    scen = _scenario_set(cfg, profiles, args)
    out = f"{args.out}/scenarios.csv"
    buses = sorted(scen.scenarios[0].load_p)
    res = scen.res_buses
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(
            ["scenario", "rho", "price"]
            + [f"load_p.{b}" for b in buses]
            + [f"pv.{b}" for b in res]
        )
        for i, s in enumerate(scen.scenarios):
            w.writerow(
                [i, f"{s.rho:.9g}", f"{s.c_grid:.6g}"]
                + [f"{s.load_p[b]:.6g}" for b in buses]
                + [f"{s.p_ava[b]:.6g}" for b in res]
            )
    print(f"wrote {len(scen.scenarios)} scenarios to {out}")
    return EXIT_OK


def cmd_make_fixture(args) -> int:
    paths = fixture.make_fixture(
        args.out,
        seed=args.seed if args.seed is not None else 1,
        hours=args.hours,
        k=args.k or 24,
        stratified=not args.global_k,
    )
    for name, p in paths.items():
        print(f"{name}: {p}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="droopplan",
        description="Droop controller placement planning on radial feeders",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config=True):
        if config:
            p.add_argument("--config", required=True, help="TOML run configuration")
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--seed", type=int, default=None, help="scenario seed override")
        p.add_argument("--k", type=int, default=None, help="scenario count override")
        p.add_argument("--stratified", action="store_true", help="calendar-stratified reduction")
        p.add_argument("--workers", type=int, default=1, help="verification workers")

    p = sub.add_parser("plan", help="optimize and verify one or all cases")
    common(p)
    p.add_argument("--case", type=int, choices=(1, 2, 3), default=None)
    p.add_argument("--gap", type=float, default=None, help="relative optimality gap")
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("verify", help="verify an explicit placement")
    common(p)
    p.add_argument("--placement", required=True, help="comma-separated bus ids")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("cluster", help="scenario reduction only")
    common(p)
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("make-fixture", help="generate the synthetic 34-bus bundle")
    p.add_argument("--out", default="fixture", help="output directory")
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--hours", type=int, default=fixture.HOURS)
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--global-k", action="store_true", help="use one global k-means run")
    p.set_defaults(func=cmd_make_fixture)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    import os

    os.makedirs(args.out, exist_ok=True)
    try:
        return args.func(args)
    except DroopPlanError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
