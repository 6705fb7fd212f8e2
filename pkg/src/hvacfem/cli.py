"""Command-line surface: mesh/flow/heat inspection, gradient checks, the
comfort calculator, single estimation/control solves and the full
receding-horizon loop.

Exit codes: 0 success, 1 runtime failure (message on stderr), 2 usage.
"""

import argparse
import sys

import numpy as np

from . import __version__
from .errors import HvacFemError
from .export import fnum, write_trace, write_trajectory, write_vtk


def _load_scenario(arg):
    from .scenario import load_builtin, parse_scenario

    if arg.endswith(".scn"):
        return parse_scenario(arg)
    return load_builtin(arg)


def _scenario_arg(p):
    p.add_argument(
        "--scenario", required=True,
        help="scenario file path (*.scn) or builtin name (paper_apartment, two_room)",
    )


def cmd_mesh(args):
    from .geometry import build_mesh, save_mesh

    sc = _load_scenario(args.scenario)
    h = sc.plant_h if args.plant else sc.controller_h
    mesh = build_mesh(sc.outer, sc.regions, h)
    print(f"vertices:  {mesh.n_vertices}")
    print(f"triangles: {mesh.n_triangles}")
    print(f"h_max:     {fnum(mesh.h_max)}")
    print(f"area:      {fnum(mesh.domain_area())}")
    for name, _ in sc.regions.named_polygons():
        n = len(mesh.triangles_in(name))
        print(f"region {name}: {n} triangles")
    if args.out:
        save_mesh(mesh, args.out)
        print(f"wrote {args.out}")
    return 0


def cmd_flow(args):
    from .fem import Field, spaces_for
    from .flow import FlowProblem, solve_flow
    from .geometry import build_mesh, material_fields

    sc = _load_scenario(args.scenario)
    mesh = build_mesh(sc.outer, sc.regions, sc.controller_h)
    _, vspace, _ = spaces_for(mesh)
    theta = _parse_theta(args.theta, sc.regions.n_doors)
    alpha, _ = material_fields(
        mesh, sc.regions, theta, sc.kappa0, sc.kappa_wall, sc.alpha_wall
    )
    g = np.zeros(vspace.dof_count)
    nodes = vspace.node_coords()
    from .geometry import point_in_polygon

    for fan in sc.regions.fan_regions:
        inside = np.array([point_in_polygon(p, fan.polygon) for p in nodes])
        g[0::2][inside] = args.fan_force * fan.direction[0]
        g[1::2][inside] = args.fan_force * fan.direction[1]
    sol = solve_flow(FlowProblem(sc.reynolds, alpha, Field(vspace, g)))
    print(f"iterations:        {sol.iterations}")
    print(f"residual:          {fnum(sol.residual_norm)}")
    print(f"divergence:        {fnum(sol.divergence_norm)}")
    print(f"max |u|:           {fnum(np.abs(sol.u.coeffs).max())}")
    print(f"uniqueness margin: {fnum(sol.uniqueness_margin)}"
          + ("  (warning: negative, solution may be non-unique)"
             if sol.uniqueness_margin < 0 else ""))
    if args.vtk:
        p_out = sol.p.copy()
        p_out.coeffs += sc.p_ambient  # report gauge-fixed pressure about p_A
        write_vtk(args.vtk, mesh, scalars={"pressure": p_out}, vectors={"velocity": sol.u})
        print(f"wrote {args.vtk}")
    return 0


def cmd_heat(args):
    from .fem import Field, constant_transient, spaces_for
    from .geometry import build_mesh, material_fields
    from .heat import HeatProblem, solve_heat

    sc = _load_scenario(args.scenario)
    mesh = build_mesh(sc.outer, sc.regions, sc.controller_h)
    tspace, _, _ = spaces_for(mesh)
    theta = _parse_theta(args.theta, sc.regions.n_doors)
    _, kappa = material_fields(
        mesh, sc.regions, theta, sc.kappa0, sc.kappa_wall, sc.alpha_wall
    )
    times = np.linspace(0.0, args.duration, args.steps + 1)
    pi0 = Field(tspace, np.full(tspace.dof_count, args.initial))
    g = constant_transient(tspace, times, args.source)
    sol = solve_heat(HeatProblem(kappa, None, g, pi0, sc.t_ambient, times))
    Tend = sol.T.values[-1]
    print(f"steps:   {args.steps}  dt: {fnum(times[1] - times[0])}")
    print(f"T final: min {fnum(Tend.min())}  mean {fnum(Tend.mean())}  max {fnum(Tend.max())}")
    if args.vtk:
        write_vtk(args.vtk, mesh, scalars={"temperature": sol.T.snapshot(-1)})
        print(f"wrote {args.vtk}")
    return 0


def cmd_gradcheck(args):
    from .adjoint import gradient_check

    sc = _load_scenario(args.scenario)
    report = gradient_check(sc, variables=args.var, fd_step=args.fd_step,
                            seed=args.seed)
    worst = 0.0
    for name, (fd, adj, rel) in report.items():
        worst = max(worst, rel)
        print(f"{name:6s} fd={fnum(fd)}  adjoint={fnum(adj)}  rel_err={rel:.3e}")
    print(f"max rel err: {worst:.3e}  (tolerance {fnum(args.tolerance)})")
    return 0 if worst <= args.tolerance else 1


def cmd_pmv(args):
    from .comfort import (
        PersonalParams,
        compute_coefficients,
        humidity_steady,
        pmv_fanger_reference,
        pmv_simplified,
    )

    p = PersonalParams(
        metabolic_rate=args.M, external_work=args.W,
        clothing_insulation=args.Icl, h_convective=args.hc,
    )
    c = compute_coefficients(p)
    simplified = pmv_simplified(c, args.Te, args.flow, p.flow_floor)
    _, p_a = humidity_steady(p, args.flow)
    t_r = args.Te if args.Tr is None else args.Tr
    reference = pmv_fanger_reference(p, args.Te, t_r, p_a, args.vair)
    print(f"pmv (simplified): {fnum(simplified)}")
    print(f"pmv (reference):  {fnum(reference)}")
    print(f"vapor pressure:   {fnum(p_a)} Pa")
    return 0


def cmd_estimate(args):
    from .mpc import MPCRunner

    sc = _load_scenario(args.scenario)
    truth = _parse_theta(args.true_theta, sc.regions.n_doors)
    runner = MPCRunner(sc, theta_schedule=lambda t: truth)
    runner.spin_up(sc.lookback)
    res = runner.run_estimation_cycle(runner.plant.t)
    print(f"status:    {res.status}")
    print(f"J_e:       {fnum(res.value)}   V_e: {fnum(res.optimality)}")
    print("theta_hat: " + " ".join(fnum(v) for v in res.theta_hat))
    if args.trace:
        write_trace(args.trace, res.trace, timings=args.timings)
        print(f"wrote {args.trace}")
    return 0


def cmd_control(args):
    from .mpc import MPCRunner

    sc = _load_scenario(args.scenario)
    runner = MPCRunner(sc, theta_schedule=lambda t: np.zeros(sc.regions.n_doors))
    T0 = np.full(runner.tspace_c.dof_count, sc.t_ambient)
    res = runner.run_control_cycle(0.0, T0, np.zeros(sc.regions.n_doors))
    print(f"status: {res.status}")
    print(f"J_c:    {fnum(res.value)}   V_c: {fnum(res.optimality)}")
    print(f"predicted mean |pmv|: {fnum(res.mean_abs_pmv_predicted)}")
    if args.trace:
        write_trace(args.trace, res.trace, timings=args.timings)
        print(f"wrote {args.trace}")
    return 0


def cmd_mpc(args):
    from .mpc import run_mpc

    sc = _load_scenario(args.scenario)
    if args.coarse:
        sc.controller_h *= 1.6
        sc.plant_h *= 1.6
        sc.max_outer_estimation = min(sc.max_outer_estimation, 6)
        sc.max_outer_control = min(sc.max_outer_control, 6)
    n_d = sc.regions.n_doors
    if args.open_doors_at is not None:
        t_open = args.open_doors_at

        def schedule(t):
            return np.ones(n_d) if t >= t_open else np.zeros(n_d)
    else:
        def schedule(t):
            return np.zeros(n_d)

    log = run_mpc(
        sc, schedule, args.cycles, estimate_theta=not args.baseline,
        metric=args.metric, collect_fields=bool(args.vtk_dir),
    )
    for row in log.rows:
        theta = " ".join(fnum(v) for v in row.theta_hat)
        print(
            f"cycle {row.cycle}: t={fnum(row.t_i)} J_e={fnum(row.J_e)} "
            f"J_c={fnum(row.J_c)} theta=[{theta}] mean|pmv|={fnum(row.mean_abs_pmv)} "
            f"energy={fnum(row.energy_surrogate)}"
        )
    if args.out:
        write_trajectory(args.out, log, timings=args.timings)
        print(f"wrote {args.out}")
    if args.vtk_dir:
        import os

        from .mpc import MPCRunner  # noqa: F401  (mesh comes from snapshots)

        os.makedirs(args.vtk_dir, exist_ok=True)
        for cycle, fld in log.snapshots:
            path = os.path.join(args.vtk_dir, f"estimate_{cycle:04d}.vtk")
            write_vtk(path, fld.space.mesh, scalars={"temperature": fld})
        print(f"wrote {len(log.snapshots)} snapshots to {args.vtk_dir}")
    return 0


def cmd_export(args):
    from .geometry import build_mesh, save_mesh

    sc = _load_scenario(args.scenario)
    mesh = build_mesh(sc.outer, sc.regions, sc.controller_h)
    if args.what == "mesh":
        if args.out.endswith(".vtk"):
            indicators = {}
            for name, _ in sc.regions.named_polygons():
                vals = np.zeros(mesh.n_vertices)
                for t in mesh.triangles_in(name):
                    vals[mesh.triangles[t]] = 1.0
                indicators[name] = vals
            write_vtk(args.out, mesh, scalars=indicators, title="mesh regions")
        else:
            save_mesh(mesh, args.out)
        print(f"wrote {args.out}")
        return 0
    print(f"error: unknown export target {args.what!r}", file=sys.stderr)
    return 2


def _parse_theta(text, n_doors):
    if text is None:
        return np.zeros(n_doors)
    vals = np.array([float(v) for v in text.split(",")])
    if vals.size != n_doors:
        raise HvacFemError(f"theta needs {n_doors} entries, got {vals.size}")
    return vals


def build_parser():
    p = argparse.ArgumentParser(
        prog="hvacfem",
        description="FEM-based indoor climate estimation and control toolkit",
    )
    p.add_argument("--version", action="version", version=f"hvacfem {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    q = sub.add_parser("mesh", help="build and inspect a scenario mesh")
    _scenario_arg(q)
    q.add_argument("--plant", action="store_true", help="use the plant resolution")
    q.add_argument("--out", help="write the mesh in MESH2D text format")
    q.set_defaults(fn=cmd_mesh)

    q = sub.add_parser("flow", help="solve the stationary flow problem")
    _scenario_arg(q)
    q.add_argument("--theta", help="door parameters, comma separated (default closed)")
    q.add_argument("--fan-force", type=float, default=1.0, help="force amplitude on fan areas")
    q.add_argument("--vtk", help="write velocity/pressure snapshot")
    q.set_defaults(fn=cmd_flow)

    q = sub.add_parser("heat", help="run a transient temperature solve")
    _scenario_arg(q)
    q.add_argument("--theta", help="door parameters, comma separated")
    q.add_argument("--duration", type=float, default=100.0)
    q.add_argument("--steps", type=int, default=20)
    q.add_argument("--initial", type=float, default=5.0, help="initial temperature")
    q.add_argument("--source", type=float, default=0.0, help="uniform heat source")
    q.add_argument("--vtk", help="write final temperature snapshot")
    q.set_defaults(fn=cmd_heat)

    q = sub.add_parser("gradcheck", help="adjoint gradients vs finite differences")
    _scenario_arg(q)
    q.add_argument("--var", default="all", choices=["all", "theta", "pi0", "g_te", "g_u"])
    q.add_argument("--fd-step", type=float, default=1e-4)
    q.add_argument("--tolerance", type=float, default=1e-3)
    q.add_argument("--seed", type=int, default=0)
    q.set_defaults(fn=cmd_gradcheck)

    q = sub.add_parser("pmv", help="comfort index calculator")
    q.add_argument("--M", type=float, required=True, help="metabolic rate W/m^2")
    q.add_argument("--W", type=float, default=0.0, help="external work W/m^2")
    q.add_argument("--Icl", type=float, default=0.155, help="clothing insulation m^2C/W")
    q.add_argument("--hc", type=float, default=3.1, help="convective coefficient")
    q.add_argument("--Te", type=float, required=True, help="air temperature degC")
    q.add_argument("--Tr", type=float, default=None, help="radiant temperature (default Te)")
    q.add_argument("--flow", type=float, default=0.5, help="fan throughput m^3/s")
    q.add_argument("--vair", type=float, default=0.1, help="air speed for the reference index")
    q.set_defaults(fn=cmd_pmv)

    q = sub.add_parser("estimate", help="one estimation solve on synthetic data")
    _scenario_arg(q)
    q.add_argument("--true-theta", help="plant door parameters, comma separated")
    q.add_argument("--trace", help="write the optimizer trace CSV")
    q.add_argument("--timings", action="store_true", help="include wall-clock columns")
    q.set_defaults(fn=cmd_estimate)

    q = sub.add_parser("control", help="one control solve from the ambient state")
    _scenario_arg(q)
    q.add_argument("--trace", help="write the optimizer trace CSV")
    q.add_argument("--timings", action="store_true")
    q.set_defaults(fn=cmd_control)

    q = sub.add_parser("mpc", help="run the receding-horizon loop")
    _scenario_arg(q)
    q.add_argument("--cycles", type=int, default=3)
    q.add_argument("--baseline", action="store_true",
                   help="freeze doors closed instead of estimating them")
    q.add_argument("--open-doors-at", type=float, default=None,
                   help="plant opens all doors at this time (seconds)")
    q.add_argument("--coarse", action="store_true", help="faster, coarser meshes")
    q.add_argument("--metric", default="identity", choices=["identity", "bfgs"])
    q.add_argument("--out", help="trajectory CSV path")
    q.add_argument("--timings", action="store_true",
                   help="include wall-clock columns (breaks byte-reproducibility)")
    q.add_argument("--vtk-dir", help="write per-cycle temperature snapshots")
    q.set_defaults(fn=cmd_mpc)

    q = sub.add_parser("export", help="export scenario artifacts")
    _scenario_arg(q)
    q.add_argument("--what", default="mesh", choices=["mesh"])
    q.add_argument("--out", required=True, help=".vtk for regions, else MESH2D text")
    q.set_defaults(fn=cmd_export)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except HvacFemError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
