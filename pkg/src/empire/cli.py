"""Command-line entry point: exact solves, complexity functionals, single runs, batteries, figure data."""
from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .experiments import (
    FIGURES,
    FULL_GAMMAS,
    TRIALS_FILE,
    BatteryConfig,
    build_example,
    emit_plotdata,
    factor_savings_table,
    load_records,
    run_trials,
)
from .pe import exact_pe_complexity
from .protocol import TRACE_COLUMNS, empire_pe, empire_q
from .qopt import exact_optimal_q, exact_q_complexity, exact_q_diag, q_conservative_bound
from .sampling import GenerativeSampler, RewardModel, make_rng
from .solvers import VrqlSolver, vrql_guarantee
from .tabular import Mrp, load_model, solve_q_exact, solve_value_exact

EXIT_OK, EXIT_USAGE, EXIT_BUDGET = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _add_instance_args(p, mode_default="mdp"):
    p.add_argument("--model", type=Path, help="JSON model file; overrides --gamma/--lambda")
    p.add_argument("--gamma", type=float, default=0.9)
    p.add_argument("--lambda", dest="lam", type=float, default=1.0)
    p.add_argument("--mode", choices=["mdp", "mrp"], default=mode_default, help="example variant when no --model")
    p.add_argument("--reward-noise", type=float, default=0.0, help="half-width of uniform reward noise")


def _add_run_args(p, eps):
    p.add_argument("--eps", type=float, default=eps)
    p.add_argument("--delta", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-samples", type=int, default=10**8)


def _instance(args):
    return load_model(args.model) if args.model else build_example(args.gamma, args.lam, args.mode)


def _reward_model(args):
    return RewardModel.uniform(args.reward_noise) if args.reward_noise > 0 else RewardModel()


def _print_json(doc):
    print(json.dumps(doc, indent=2))


def cmd_solve(args) -> int:
    model = _instance(args)
    if isinstance(model, Mrp):
        _print_json({"kind": "mrp", "value": solve_value_exact(model).tolist()})
    else:
        _print_json({"kind": "mdp", "q": solve_q_exact(model, tol=args.tol).tolist()})
    return EXIT_OK


def cmd_complexity(args) -> int:
    model = _instance(args)
    rm = _reward_model(args)
    if isinstance(model, Mrp):
        _print_json({"kind": "mrp", "complexity": exact_pe_complexity(model, rm)})
    else:
        q_star = exact_optimal_q(model)
        diag = exact_q_diag(model, rm, q_star)
        _print_json(
            {
                "kind": "mdp",
                "complexity": exact_q_complexity(model, rm),
                "conservative_bound": q_conservative_bound(diag, model.discount),
                "bellman_variance": diag.tolist(),
            }
        )
    return EXIT_OK


def _single_run(args, kind) -> int:
    model = _instance(args)
    if kind == "pe" and not isinstance(model, Mrp):
        raise ValueError("empire-pe needs an MRP (use --mode mrp or a single-action model)")
    if kind == "q" and isinstance(model, Mrp):
        raise ValueError("empire-q needs an MDP")
    g = model.discount
    sampler = GenerativeSampler(model, _reward_model(args), make_rng(args.seed, 0))
    dims = model.num_states if kind == "pe" else model.dims
    guarantee = vrql_guarantee(dims, g, args.max_samples)
    run = empire_pe if kind == "pe" else empire_q
    res = run(sampler, VrqlSolver(g), guarantee, args.eps, args.delta, args.max_samples)
    w = csv.DictWriter(sys.stdout, TRACE_COLUMNS, lineterminator="\n")
    w.writeheader()
    w.writerows(res.trace_rows(0))
    _print_json(
        {
            "terminated": res.terminated,
            "epochs": res.epochs,
            "samples_used": res.samples_used,
            "predicted_error": res.predicted_error.total if res.predicted_error else None,
            "estimate": np.asarray(res.estimate).tolist(),
        }
    )
    return EXIT_OK if res.terminated else EXIT_BUDGET


def cmd_empire_pe(args) -> int:
    return _single_run(args, "pe")


def cmd_empire_q(args) -> int:
    return _single_run(args, "q")


def _battery_config(args) -> BatteryConfig:
    doc = json.loads(Path(args.config).read_text()) if args.config else {}
    overrides = {
        "mode": args.battery_mode,
        "eps": args.eps,
        "delta": args.delta,
        "trials": args.trials,
        "seed": args.seed,
        "max_samples": args.max_samples,
        "workers": args.workers,
        "reward_noise": args.reward_noise,
    }
    doc.update({k: v for k, v in overrides.items() if v is not None})
    if args.gamma:
        doc["gammas"] = args.gamma
    if args.lam:
        doc["lambdas"] = args.lam
    if args.full:
        doc["gammas"] = list(FULL_GAMMAS)
    config = BatteryConfig.from_dict(doc)
    if "eps" not in doc and config.mode == "q":
        config = replace(config, eps=0.05)
    return config


def cmd_battery(args) -> int:
    config = _battery_config(args)
    records = run_trials(config, args.out)
    table = factor_savings_table(records)
    print(f"config_hash={config.hash} trials={len(records)} out={args.out}")
    print(table.to_string(index=False))
    return EXIT_OK if all(r.terminated for r in records) else EXIT_BUDGET


def cmd_plotdata(args) -> int:
    records = load_records(Path(args.out) / TRIALS_FILE)
    mode = records[0].mode if records else None
    figures = [args.figure] if args.figure != "all" else [f for f, (m, _) in FIGURES.items() if m == mode]
    for fig in figures:
        print(emit_plotdata(records, fig, args.out))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="empire", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("solve", help="exact V* or Q*")
    _add_instance_args(p)
    p.add_argument("--tol", type=float, default=1e-10)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("complexity", help="exact instance complexity functionals")
    _add_instance_args(p)
    p.set_defaults(func=cmd_complexity)

    p = sub.add_parser("empire-pe", help="one early-stopped policy-evaluation run; prints the epoch trace")
    _add_instance_args(p, "mrp")
    _add_run_args(p, 0.1)
    p.set_defaults(func=cmd_empire_pe)

    p = sub.add_parser("empire-q", help="one early-stopped Q-function run; prints the epoch trace")
    _add_instance_args(p, "mdp")
    _add_run_args(p, 0.05)
    p.set_defaults(func=cmd_empire_q)

    p = sub.add_parser("battery", help="seeded trial battery on the two-state example family")
    p.add_argument("--config", type=Path, help="JSON file with BatteryConfig fields")
    p.add_argument("--mode", dest="battery_mode", choices=["pe", "q"])
    p.add_argument("--gamma", type=float, action="append", help="repeat for a grid")
    p.add_argument("--lambda", dest="lam", type=float, action="append", help="repeat for several values")
    p.add_argument("--eps", type=float)
    p.add_argument("--delta", type=float)
    p.add_argument("--trials", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--max-samples", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--reward-noise", type=float)
    p.add_argument("--full", action="store_true", help="discount grid up to 0.99 (hours, not minutes)")
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_battery)

    p = sub.add_parser("plotdata", help="figure CSVs from a battery's trials.csv")
    p.add_argument("--out", type=Path, required=True, help="battery output directory")
    p.add_argument("--figure", choices=sorted(FIGURES) + ["all"], default="all")
    p.set_defaults(func=cmd_plotdata)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError, KeyError) as exc:
        print(f"empire: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
