"""Command line entry point.

Exit codes: 0 all checks passed, 1 a check failed, 2 configuration error,
3 solver failure.
"""

import argparse
import json
import logging
import os
import sys

import numpy as np
import yaml

from .errors import ConfigurationError, DomainError, SolverError

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_SOLVER = 0, 1, 2, 3

log = logging.getLogger("anisoflow")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(EXIT_CONFIG)


def _load(path, resolution=None, block_size=None, no_blocks=False):
    from .grid import GridSpec
    from .task import load_task

    task = load_task(path)
    if resolution is not None or block_size is not None:
        g = task.grid
        cells = g.cells if resolution is None else (int(resolution),) * g.dim
        bs = g.block_size if block_size is None else int(block_size)
        try:
            grid = GridSpec(g.dim, cells, bs)
        except DomainError as exc:
            raise ConfigurationError("invalid grid override", [str(exc)]) from exc
        task = task.with_(grid=grid)
    if no_blocks:
        task = task.with_(use_blocks=False)
    return task


def cmd_simulate(args):
    from .experiments import invariant_report
    from .io import write_fields, write_json
    from .solver import simulate

    task = _load(args.task, args.resolution, args.block_size, args.no_blocks)
    os.makedirs(args.out, exist_ok=True)
    design = task.initial_design()
    state, system = simulate(design, task)
    inv = invariant_report(state, system, task.grid)
    influx, outflux = task.fluxes(state.v)
    write_fields(os.path.join(args.out, "fields.vtk"), task.grid, state.v, design, task.hyper, task.weights,
                 binary=args.binary, title=task.name)
    ok = bool(inv["ok"] and inv["block_flux_ok"])
    summary = {"task": task.name, "passed": ok, "invariants": inv, "influx": influx, "outflux": outflux,
               "flux_ratio": outflux / influx if influx else None, "use_blocks": task.use_blocks}
    write_json(os.path.join(args.out, "summary.json"), summary)
    print(f"simulate {task.name}: influx {influx:.6g} outflux {outflux:.6g} residuals "
          f"{inv['primal']:.2e}/{inv['constraint']:.2e} -> {'PASS' if ok else 'FAIL'}")
    return EXIT_OK if ok else EXIT_CHECK


def cmd_optimize(args):
    from .io import write_fields, write_json
    from .optimize import OptimizationAborted, optimize, write_history_csv
    from .solver import simulate

    task = _load(args.task)
    os.makedirs(args.out, exist_ok=True)
    csv_path = os.path.join(args.out, "history.csv")
    if args.perturb is not None and args.seed is None and task.optimizer.perturb == 0:
        log.info("--perturb without --seed: using seed %d", task.optimizer.seed)
    try:
        result = optimize(task, iterations=args.iters, isotropic=args.isotropic or None, perturb=args.perturb,
                          seed=args.seed)
    except OptimizationAborted as exc:
        write_history_csv(exc.history.records, csv_path)
        raise
    hist = result.history
    hist.write_csv(csv_path)
    state, _ = simulate(result.design, task)
    write_fields(os.path.join(args.out, "best.vtk"), task.grid, state.v, result.design, task.hyper, hist.weights,
                 binary=args.binary, title=f"{task.name} best iteration {hist.best_index}")
    n = task.grid.n_cells
    best = hist.best
    ok = best.feasible(n)
    summary = {
        "task": task.name, "passed": bool(ok), "iterations": len(hist.records) - 1,
        "best_iteration": hist.best_index, "initial_L_f": hist.records[0].L_f, "best_L_f": best.L_f,
        "g_iso": best.g_iso, "g_all": best.g_all,
    }
    write_json(os.path.join(args.out, "summary.json"), summary)
    print(f"optimize {task.name}: L_f {hist.records[0].L_f:.6g} -> {best.L_f:.6g} "
          f"(iteration {hist.best_index}) -> {'PASS' if ok else 'FAIL'}")
    return EXIT_OK if ok else EXIT_CHECK


def random_interior_design(n_cells, dim, rng, margin=0.05):
    from .material import DesignField

    return DesignField(
        rho=rng.uniform(margin, 1 - margin, n_cells),
        eps=rng.uniform(margin, 1 - margin, n_cells),
        alpha=rng.uniform(-np.pi, np.pi, (n_cells, dim - 1)),
    )


def cmd_gradcheck(args):
    from .gradients import fd_check, sample_components

    task = _load(args.task)
    rng = np.random.default_rng(args.seed)
    if args.initial:
        design = task.initial_design()
    else:
        design = random_interior_design(task.grid.n_cells, task.grid.dim, rng)
    comps = sample_components(design, args.samples, rng)
    rep = fd_check(design, task, comps, step=args.step, rtol=args.rtol, atol=args.atol)
    for (param, cell), a, b, ok in zip(rep.components, rep.analytic, rep.numeric, rep.passed):
        log.debug("%s[%d] adjoint %.10e fd %.10e %s", param, cell, a, b, "ok" if ok else "MISMATCH")
    print(f"gradcheck {task.name}: {len(comps)} components, max relative error {rep.max_rel_error:.3e} "
          f"above the {rep.atol:g} floor ({np.max(rep.rel_error):.3e} raw), max absolute error "
          f"{np.max(rep.abs_error):.3e} -> {'PASS' if rep.ok else 'FAIL'}")
    return EXIT_OK if rep.ok else EXIT_CHECK


def _overrides(items):
    out = {}
    for item in items:
        if "=" not in item:
            raise ConfigurationError(f"override '{item}' is not key=value")
        key, value = item.split("=", 1)
        v = yaml.safe_load(value)
        if isinstance(v, str):
            try:
                v = float(v)
            except ValueError:
                pass
        out[key.strip().replace("-", "_")] = tuple(v) if isinstance(v, list) else v
    return out


def cmd_experiment(args):
    from .experiments import run_experiment

    verdict = run_experiment(args.name, out=args.out, **_overrides(args.overrides))
    for c in verdict["checks"]:
        print(f"  [{'PASS' if c['passed'] else 'FAIL'}] {c['name']}: {json.dumps(c['value'])} "
              f"(threshold {json.dumps(c['threshold'])})")
    print(f"experiment {args.name}: {'PASS' if verdict['passed'] else 'FAIL'} in {verdict['runtime_s']:.1f} s")
    return EXIT_OK if verdict["passed"] else EXIT_CHECK


def build_parser():
    p = _Parser(prog="anisoflow", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", help="solve the forward problem for a task's initial design")
    s.add_argument("--task", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--resolution", type=int)
    s.add_argument("--no-blocks", action="store_true")
    s.add_argument("--block-size", type=int)
    s.add_argument("--binary", action="store_true", help="binary VTK instead of ASCII")
    s.set_defaults(func=cmd_simulate)

    o = sub.add_parser("optimize", help="run the design optimization")
    o.add_argument("--task", required=True)
    o.add_argument("--out", required=True)
    o.add_argument("--iters", type=int)
    o.add_argument("--isotropic", action="store_true")
    o.add_argument("--perturb", type=float)
    o.add_argument("--seed", type=int)
    o.add_argument("--binary", action="store_true")
    o.set_defaults(func=cmd_optimize)

    g = sub.add_parser("gradcheck", help="compare adjoint gradients with finite differences")
    g.add_argument("--task", required=True)
    g.add_argument("--samples", type=int, default=20, help="components per parameter")
    g.add_argument("--step", type=float, default=1e-5)
    g.add_argument("--rtol", type=float, default=1e-4)
    g.add_argument("--atol", type=float, default=1e-8)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--initial", action="store_true", help="check at the task's initial design")
    g.set_defaults(func=cmd_gradcheck)

    e = sub.add_parser("experiment", help="run a named reproduction")
    e.add_argument("name")
    e.add_argument("--out")
    e.add_argument("overrides", nargs="*", help="key=value")
    e.set_defaults(func=cmd_experiment)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DomainError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SolverError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
