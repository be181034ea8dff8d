"""Command-line driver.

    otformation run <scenario> [--set key=value ...] [--out DIR]
    otformation render <trajectory.csv> <scenario.json> <out.svg> [--stride N]
    otformation scenarios list | show <name>
    otformation verify {ot,gradients,lqr,all}

``run`` exits 0 when the optimizer converged, 2 when it hit ``max_iters``
(or stalled) first, and 1 on any error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

from . import artifacts
from .artifacts import RunArtifacts
from .ot import InvalidInputError
from .plotting import render_cost_history, render_formation
from .scenarios import CATALOG_NAMES, ScenarioError, ScenarioSpec, get_scenario, load_scenario, save_scenario
from .shooting import DivergenceError, optimize

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_NOT_CONVERGED = 2

log = logging.getLogger("otformation")


def parse_override(text: str) -> tuple[str, object]:
    """``key=value`` with the value read as JSON when possible, else a string."""
    key, sep, raw = text.partition("=")
    if not sep or not key:
        raise ScenarioError(f"override {text!r} must look like key=value", key or None)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip(), value


def apply_overrides(spec: ScenarioSpec, overrides) -> ScenarioSpec:
    pairs = dict(parse_override(o) for o in overrides or [])
    return spec.with_overrides(pairs) if pairs else spec


def run_scenario(spec: ScenarioSpec, out_dir, stride: int = 1) -> RunArtifacts:
    """Optimize ``spec`` and write every artifact into ``out_dir``."""
    out = Path(out_dir)
    t0 = time.perf_counter()
    result = optimize(spec)
    wall = time.perf_counter() - t0

    # all writes happen after the optimization finished
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "trajectory": out / artifacts.TRAJECTORY_FILE,
        "cost_history": out / artifacts.HISTORY_FILE,
        "summary_file": out / artifacts.SUMMARY_FILE,
        "scenario_file": out / artifacts.SCENARIO_FILE,
        "rendering": out / artifacts.FIGURE_FILE,
        "history_rendering": out / artifacts.HISTORY_FIGURE_FILE,
    }
    artifacts.write_trajectory_csv(result.trajectory, paths["trajectory"])
    artifacts.write_cost_history_csv(result.cost_history, spec.term_labels(), paths["cost_history"])
    save_scenario(spec, paths["scenario_file"])
    render_formation(result.trajectory.states, spec, paths["rendering"], stride=stride)
    render_cost_history(result.cost_history, paths["history_rendering"], title=spec.name)
    summary = artifacts.summary_dict(result, wall, spec)
    artifacts.write_summary(summary, paths["summary_file"])
    return RunArtifacts(out_dir=out, summary=summary, **paths)


def cmd_run(args) -> int:
    spec = apply_overrides(get_scenario(args.scenario), args.set)
    out_dir = args.out or Path("runs") / spec.name
    run = run_scenario(spec, out_dir, stride=args.stride)
    s = run.summary
    status = "converged" if s["converged"] else "NOT converged"
    print(f"{spec.name}: {status} after {s['iterations']} iterations, "
          f"final cost {s['final_cost']['total']:.6g}, {s['wall_time_s']:.1f} s")
    for p in run.paths():
        print(f"  wrote {p}")
    return EXIT_OK if s["converged"] else EXIT_NOT_CONVERGED


def cmd_render(args) -> int:
    states, _ = artifacts.read_trajectory_csv(args.trajectory)
    spec = load_scenario(args.scenario)
    render_formation(states, spec, args.out, stride=args.stride, opacity=args.opacity)
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_scenarios(args) -> int:
    if args.action == "list":
        for name in CATALOG_NAMES:
            spec = get_scenario(name)
            labels = ", ".join(spec.term_labels())
            print(f"{name:20s} N={spec.n_agents:<3d} T={spec.horizon:g} S={spec.steps:<4d} {labels}")
        return EXIT_OK
    if not args.name:
        raise ScenarioError("scenarios show needs a scenario name")
    sys.stdout.write(get_scenario(args.name).to_json())
    return EXIT_OK


def cmd_verify(args) -> int:
    from .verification import run_suite

    results = run_suite(args.suite)
    for r in results:
        print(r.line())
    failed = sum(not r.passed for r in results)
    print(f"{len(results) - failed}/{len(results)} checks passed")
    return EXIT_OK if failed == 0 else EXIT_ERROR


class _Parser(argparse.ArgumentParser):
    # usage errors exit 1; status 2 is reserved for "did not converge"
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="otformation", description="Optimal-transport formation control.")
    p.add_argument("-v", "--verbose", action="store_true", help="log optimizer progress")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="optimize a catalog or file scenario")
    r.add_argument("scenario", help="catalog name or path to a scenario JSON file")
    r.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a scenario field by dotted path, e.g. optimizer.max_iters=500")
    r.add_argument("--out", type=Path, help="output directory (default runs/<name>)")
    r.add_argument("--stride", type=int, default=1, help="draw every N-th intermediate step")
    r.set_defaults(func=cmd_run)

    d = sub.add_parser("render", help="draw a trajectory CSV as SVG")
    d.add_argument("trajectory", type=Path)
    d.add_argument("scenario", type=Path)
    d.add_argument("out", type=Path)
    d.add_argument("--stride", type=int, default=1)
    d.add_argument("--opacity", type=float, default=0.15, help="alpha of intermediate states")
    d.set_defaults(func=cmd_render)

    s = sub.add_parser("scenarios", help="list or print catalog scenarios")
    s.add_argument("action", choices=["list", "show"])
    s.add_argument("name", nargs="?")
    s.set_defaults(func=cmd_scenarios)

    v = sub.add_parser("verify", help="run the built-in oracle suites")
    v.add_argument("suite", choices=["ot", "gradients", "lqr", "all"])
    v.set_defaults(func=cmd_verify)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ScenarioError, InvalidInputError, DivergenceError, OSError, ValueError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
