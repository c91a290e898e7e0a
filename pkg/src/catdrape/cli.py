"""Command line: ``catdrape run | check-gradients | export``.

Exit codes: 0 success, 1 configuration error, 2 input/output error.  Solver,
bridging and wrinkle flags are results, never failures.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .export import (
    FORMATS,
    IoError,
    export_trace,
    load_trace,
    save_trace,
    trace_record,
    write_timing,
)
from .scenario import ConfigError, build_simulation, parse_scenario

EXIT_OK, EXIT_CONFIG, EXIT_IO = 0, 1, 2


def _formats(text: str | None) -> tuple[str, ...] | None:
    if text is None:
        return None
    items = tuple(f.strip() for f in text.split(",") if f.strip())
    bad = [f for f in items if f not in FORMATS]
    if bad:
        raise ConfigError(f"unknown format(s) {', '.join(bad)}; choose from {', '.join(FORMATS)}")
    return items


def cmd_run(args) -> int:
    from .simulation import simulate

    scenario, base = parse_scenario(args.scenario)
    formats = _formats(args.formats)
    if formats is None:
        formats = tuple(scenario.output.formats)
    sim, trajectory = build_simulation(scenario, base)
    trace = simulate(sim, trajectory)
    record = trace_record(trace, scenario)
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoError(f"{out}: {exc}") from exc
    save_trace(record, out)
    write_timing(trace.timings, out / "timing.json")
    export_trace(record, out, formats, scenario.output.svg_iterations)

    final = trace.final.flags
    firsts = {}
    for s in trace.states:
        for name, on in s.flags.as_dict().items():
            if on and name not in firsts:
                firsts[name] = s.iteration
    print(f"{scenario.name}: {len(trace)} iterations, mean {np.mean(trace.timings):.3f} s/iteration")
    for name, on in final.as_dict().items():
        when = f" (first at iteration {firsts[name]})" if name in firsts else ""
        print(f"  {name:20s} {'yes' if on else 'no'}{when}")
    print(f"  output: {out}")
    return EXIT_OK


def cmd_check_gradients(args) -> int:
    from .contact import ContactRegistry
    from .solver import assemble_nlp, check_gradients, restore_feasibility, sqp_solve

    scenario, base = parse_scenario(args.scenario)
    sim, trajectory = build_simulation(scenario, base)
    positions = trajectory.positions(1)
    problem = assemble_nlp(
        sim.net,
        ContactRegistry(),
        positions,
        sim.material,
        n_pt=sim.settings.n_pt,
        taut_margin=sim.settings.taut_margin,
    )
    x_opt = sqp_solve(problem, restore_feasibility(problem, problem.initial_point()), sim.settings.sqp).x
    rng = np.random.default_rng(args.seed)
    points = [("optimum", x_opt)]
    for k in range(args.points):
        x = x_opt.copy()
        x[: problem.n_cat] *= rng.uniform(0.5, 2.0, problem.n_cat)
        x[problem.n_cat :] = rng.uniform(-0.3, 0.3, problem.n_shared)
        points.append((f"random {k + 1}", x))
    modes = ("objective", "jacobian") if args.mode == "both" else (args.mode,)
    print(f"{'mode':10s} {'point':10s} {'max error':>12s} {'tolerance':>10s} {'off-pattern':>12s}  result")
    for mode in modes:
        for label, x in points:
            rep = check_gradients(problem, x, mode)
            status = "pass" if rep.passed else f"FAIL ({len(rep.failing)} entries)"
            print(f"{mode:10s} {label:10s} {rep.max_error:12.3e} {rep.tolerance:10.0e} {rep.off_pattern_max:12.3e}  {status}")
    return EXIT_OK


def cmd_export(args) -> int:
    record = load_trace(args.trace_dir)
    formats = _formats(args.formats) or ()
    out = Path(args.out) if args.out else Path(args.trace_dir)
    its = tuple(int(v) for v in args.iterations.split(",")) if args.iterations else ()
    paths = export_trace(record, out, formats, its)
    print(f"wrote {len(paths)} file(s) to {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="catdrape", description="Catenary fabric draping simulator")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="simulate a scenario and export the trace")
    r.add_argument("scenario", help="scenario TOML file or bundled scenario name")
    r.add_argument("--out", default="out", help="output directory (default ./out)")
    r.add_argument("--formats", help=f"comma list from {','.join(FORMATS)} (default from the scenario)")
    r.set_defaults(func=cmd_run)

    g = sub.add_parser("check-gradients", help="compare derivatives against overall finite differences")
    g.add_argument("scenario")
    g.add_argument("--mode", choices=("objective", "jacobian", "both"), default="both")
    g.add_argument("--points", type=int, default=4, help="random points besides the optimum")
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_check_gradients)

    e = sub.add_parser("export", help="re-export a saved trace directory")
    e.add_argument("trace_dir")
    e.add_argument("--formats", required=True)
    e.add_argument("--out", help="output directory (default: the trace directory)")
    e.add_argument("--iterations", help="comma list of iterations for svg")
    e.set_defaults(func=cmd_export)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (IoError, OSError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
