"""Command line front end: ``run``, ``sweep`` and ``oracle``."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .engine import MODES, PLANTS, RunConfig, run
from .errors import ConfigError, DivergenceError, EtdoptError, ScenarioError
from .problem import kkt_solve, load_problem

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGENCE, EXIT_SCENARIO = 0, 2, 3, 4


def _eps(text: str):
    vals = [float(v) for v in text.split(",")]
    return vals[0] if len(vals) == 1 else vals


def _add_run_args(sp: argparse.ArgumentParser) -> None:
    src = sp.add_mutually_exclusive_group()
    src.add_argument("--scenario", choices=["case1", "case2"])
    src.add_argument("--problem", help="JSON problem file")
    sp.add_argument("--graph", help="edge list, one 1-based 'i j' pair per line")
    sp.add_argument("--mode", choices=MODES, default="decentralized")
    sp.add_argument("--plant", choices=PLANTS, default="ideal")
    sp.add_argument("--dt", type=float)
    sp.add_argument("--t-final", type=float)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--safety", type=float, default=0.9)
    sp.add_argument("--gain", type=float, help="time gain on the optimization layer")
    sp.add_argument("--stride", type=int, help="write every k-th tick to states.csv")
    sp.add_argument("--no-perturb", action="store_true", help="skip the scenario schedule")
    sp.add_argument("--raw-objective", action="store_true",
                    help="do not rescale costs to unit curvature")
    sp.add_argument("--out", required=True)


def _config(ns, **over) -> RunConfig:
    if ns.problem and not ns.graph:
        raise ConfigError("--problem needs --graph")
    cfg = RunConfig(
        mode=ns.mode, plant=ns.plant, dt=ns.dt, t_final=ns.t_final, seed=ns.seed,
        scenario=None if ns.problem else (ns.scenario or "case1"),
        problem_path=ns.problem, graph_path=ns.graph, safety=ns.safety, out=ns.out,
        gain=ns.gain, stride=ns.stride, perturb=not ns.no_perturb,
        normalize_objective=not ns.raw_objective)
    if getattr(ns, "eps", None) is not None:
        cfg = replace(cfg, eps=ns.eps)
    return replace(cfg, **over)


def cmd_run(ns) -> int:
    res = run(_config(ns))
    print(json.dumps(res.metrics.summary(), default=float))
    return EXIT_OK


def cmd_sweep(ns) -> int:
    eps_values = [float(v) for v in ns.eps.split(",")]
    root = Path(ns.out)
    root.mkdir(parents=True, exist_ok=True)
    ns.eps = None
    rows = []
    for e in eps_values:
        sub = root / f"eps_{e:g}"
        res = run(_config(ns, plant="uncertain", eps=e, out=str(sub)))
        m = res.metrics
        rows.append([e, m.steady_tracking_error, m.tracking_error, m.relative_primal_error, m.events])
        print(f"eps={e:g} steady_tracking_error={m.steady_tracking_error:.6g}")
    with open(root / "summary.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["eps", "steady_tracking_error", "final_tracking_error",
                    "relative_primal_error", "events"])
        w.writerows([[repr(float(v)) if isinstance(v, float) else v for v in r] for r in rows])
    return EXIT_OK


def cmd_oracle(ns) -> int:
    p = load_problem(ns.problem)
    sol = kkt_solve(p)
    print(json.dumps({"y_star": sol.y_star.tolist(), "mu_star": sol.mu_star.tolist(),
                      "residual": sol.residual, "multiplier_unique": sol.multiplier_unique}))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="etdopt", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("run", help="simulate one configuration")
    _add_run_args(sp)
    sp.add_argument("--eps", type=_eps, help="observer eps, scalar or comma list per agent")
    sp.set_defaults(func=cmd_run)

    sw = sub.add_parser("sweep", help="repeat an uncertain-plant run over several eps values")
    _add_run_args(sw)
    sw.add_argument("--eps", required=True, help="comma-separated values, e.g. 0.05,0.01,0.005")
    sw.set_defaults(func=cmd_sweep)

    op = sub.add_parser("oracle", help="print the KKT solution of a problem file")
    op.add_argument("--problem", required=True)
    op.set_defaults(func=cmd_oracle)
    return ap


def main(argv=None) -> int:
    ns = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if ns.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return ns.func(ns)
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except (ScenarioError, EtdoptError, OSError) as exc:
        print(f"scenario error: {exc}", file=sys.stderr)
        return EXIT_SCENARIO


if __name__ == "__main__":
    sys.exit(main())
