"""Command-line entry point: run, validate, oracle, report, make-scene."""
from __future__ import annotations

import argparse
import json
import sys

import numpy as np

EXIT_OK, EXIT_INVALID, EXIT_BUDGET = 0, 2, 3


def _load(path):
    from .scenario import ScenarioError, build_truth, check_starts, load_scenario
    from .world import SceneError

    try:
        sc = load_scenario(path)
        errs = check_starts(sc, build_truth(sc))
    except ScenarioError as e:
        return None, e.errors
    except SceneError as e:
        return None, [str(e)]
    return sc, errs


def cmd_validate(args) -> int:
    sc, errs = _load(args.scenario)
    if errs:
        for e in errs:
            print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID
    print(f"ok: {args.scenario} ({sc.scene}, {sc.n_photographers} photographers)")
    return EXIT_OK


def cmd_run(args) -> int:
    from .sim import run_scenario

    sc, errs = _load(args.scenario)
    if errs:
        for e in errs:
            print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID
    _, m = run_scenario(sc, seed=args.seed, out_dir=args.out, max_ticks=args.ticks)
    print(f"complete={m.complete} ticks={m.ticks} completion_time={m.completion_time:.1f}s "
          f"viewpoints={m.viewpoint_count} coverage={m.coverage_rate:.3f}")
    if args.out:
        print(f"results written to {args.out}")
    return EXIT_OK if m.complete else EXIT_BUDGET


def cmd_oracle(args) -> int:
    from . import oracles

    with open(args.input) as fh:
        data = json.load(fh)
    if args.which == "atsp-exhaustive":
        order, cost = oracles.atsp_exhaustive(data["cost"])
        out = {"order": order, "cost": cost}
    elif args.which == "mtsp-exhaustive":
        paths, fit = oracles.mtsp_exhaustive(data["c_d_vct"], data["c_vct"], data.get("eps", 1e-4),
                                             data.get("prev"), data.get("R", 0.0), data.get("alpha", 0.0))
        out = {"paths": paths, "fitness": fit}
    else:
        state = np.asarray(data["state"], dtype=np.uint8)
        out = {"cells": sorted(list(c) for c in oracles.frontier_bruteforce(state))}
    print(json.dumps(out))
    return EXIT_OK


def cmd_report(args) -> int:
    from .report import render_report

    rows, figs = render_report(args.dir)
    for r in rows:
        print("\t".join(str(v) for v in r))
    for f in figs:
        print(f"figure\t{f}", file=sys.stderr)
    return EXIT_OK


def cmd_make_scene(args) -> int:
    from . import scenes

    pts, bounds = scenes.BUILTIN[args.name](args.resolution)
    np.savetxt(args.out, pts, delimiter=",", fmt="%.4f", header="x,y,z", comments="")
    print(f"{len(pts)} points, bounds {bounds[0]} .. {bounds[1]} -> {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="soar", description="Explorer/photographer coverage simulator")
    sub = p.add_subparsers(dest="cmd", required=True)
    r = sub.add_parser("run", help="simulate a scenario")
    r.add_argument("scenario")
    r.add_argument("--seed", type=int, default=None)
    r.add_argument("--out", default=None, help="output directory")
    r.add_argument("--ticks", type=int, default=None, help="tick budget override")
    r.set_defaults(func=cmd_run)
    v = sub.add_parser("validate", help="check a scenario file")
    v.add_argument("scenario")
    v.set_defaults(func=cmd_validate)
    o = sub.add_parser("oracle", help="brute-force reference solvers")
    o.add_argument("which", choices=["mtsp-exhaustive", "atsp-exhaustive", "frontier-bruteforce"])
    o.add_argument("--input", required=True, help="JSON instance")
    o.set_defaults(func=cmd_oracle)
    rep = sub.add_parser("report", help="tabulate a results directory and render figures")
    rep.add_argument("dir")
    rep.set_defaults(func=cmd_report)
    m = sub.add_parser("make-scene", help="write a built-in scene as an x,y,z CSV")
    m.add_argument("name", choices=["box", "building", "corridor"])
    m.add_argument("out")
    m.add_argument("--resolution", type=float, default=0.5)
    m.set_defaults(func=cmd_make_scene)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
