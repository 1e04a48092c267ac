"""Command-line front end: run experiments, solve movement problems from
JSON, evaluate the closed-form analyses, and sweep parameters to CSV.

Exit codes: 0 success, 2 bad configuration or I/O, 3 infeasible problem,
4 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys

import numpy as np

from . import analytics, optimizer, simulator
from .optimizer import InfeasibleMovementError, PreconditionError
from .simulator import ConfigError, SimConfig
from .topology import DegreeDistribution

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INFEASIBLE = 3
EXIT_RUNTIME = 4


def _g(x: float) -> str:
    return f"{x:.6g}"


def _load_json(path: str) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def _write_json(path: str, payload: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _print_ledger(ledger, accuracy: float | None = None) -> None:
    parts = [
        f"process={_g(ledger.process)}",
        f"transfer={_g(ledger.transfer)}",
        f"discard={_g(ledger.discard)}",
        f"total={_g(ledger.total)}",
        f"unit={_g(ledger.unit_cost)}",
    ]
    if accuracy is not None:
        parts.append(f"accuracy={_g(accuracy)}")
    print(" ".join(parts))


def _cmd_simulate(args: argparse.Namespace) -> int:
    cfg = SimConfig.from_dict(_load_json(args.config))
    if args.seed is not None:
        from dataclasses import replace

        cfg = replace(cfg, seed=args.seed)
    if args.dump_config:
        print(json.dumps(cfg.to_dict(), sort_keys=True, indent=2))
        return EXIT_OK
    result = simulator.run(cfg)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        _write_json(os.path.join(args.out, "summary.json"), result.summary_dict())
        with open(
            os.path.join(args.out, "timeseries.csv"), "w", newline="", encoding="utf-8"
        ) as fh:
            writer = csv.writer(fh)
            writer.writerow(["slot", "device", "metric", "value"])
            for row in result.timeseries_rows():
                writer.writerow(row)
    _print_ledger(result.ledger, result.final_accuracy)
    return EXIT_OK


def _cmd_optimize(args: argparse.Namespace) -> int:
    try:
        problem = optimizer.problem_from_dict(_load_json(args.problem))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    if args.mode == "greedy":
        plan = optimizer.greedy_unconstrained(problem)
        ledger = optimizer.CostLedger.from_plan(problem, plan)
    elif args.mode == "linear":
        plan, ledger = optimizer.solve_linear(problem)
    else:
        plan, ledger = optimizer.solve_sqrt(problem)
    plan.validate(problem)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        _write_json(os.path.join(args.out, "plan.json"), optimizer.plan_to_dict(plan))
        _write_json(os.path.join(args.out, "ledger.json"), ledger.to_dict())
    _print_ledger(ledger)
    return EXIT_OK


def _parse_floats(text: str, what: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip() != ""]
    except ValueError as exc:
        raise ConfigError(f"bad {what} list {text!r}: {exc}") from exc


def _cmd_analyze(args: argparse.Namespace) -> int:
    if args.analysis == "loss-bound":
        bound = analytics.local_loss_bound(
            analytics.BoundInputs(
                lipschitz=args.lipschitz,
                smoothness=args.smoothness,
                step_size=args.step_size,
                grad_divergence=args.grad_divergence,
                omega=args.omega,
                period=args.period,
                steps=args.steps,
                epsilon_floor=args.epsilon_floor,
            )
        )
        print(f"bound={_g(bound)}")
    elif args.analysis == "queue":
        params = analytics.QueueParams(
            service_rate=args.service_rate, max_wait=args.max_wait
        )
        capacity = analytics.capacity_for_wait(params)
        root = analytics.dm1_root(args.service_rate, capacity)
        wait = analytics.dm1_mean_wait(args.service_rate, capacity)
        print(f"capacity={_g(capacity)}")
        print(f"root={_g(root)}")
        print(f"wait={_g(wait)}")
    elif args.analysis == "hierarchy":
        split = analytics.hierarchical_optimum(
            error_scale=args.error_scale,
            leaf_cost=args.leaf_cost,
            hub_cost=args.hub_cost,
            transmit_cost=args.transmit_cost,
            leaves=args.leaves,
            batch=args.batch,
        )
        cost = analytics.hierarchical_cost(
            split.discard,
            split.offload,
            error_scale=args.error_scale,
            leaf_cost=args.leaf_cost,
            hub_cost=args.hub_cost,
            transmit_cost=args.transmit_cost,
            leaves=args.leaves,
            batch=args.batch,
        )
        print(f"offload={_g(split.offload)}")
        print(f"discard={_g(split.discard)}")
        print(f"in_regime={'true' if split.in_regime else 'false'}")
        print(f"cost={_g(cost)}")
    elif args.analysis == "savings":
        dist = DegreeDistribution(tuple(_parse_floats(args.degrees, "degrees")))
        saving = analytics.offloading_savings(dist, cost_scale=args.cost_scale)
        print(f"savings={_g(saving)}")
    else:  # violations
        dist = DegreeDistribution(tuple(_parse_floats(args.degrees, "degrees")))
        est = analytics.expected_capacity_violations(
            dist,
            capacity=args.capacity,
            batch=args.batch,
            n_devices=args.devices,
            trials=args.trials,
            seed=args.seed,
        )
        print(f"expected={_g(est.expected)}")
        print(f"stderr={_g(est.stderr)}")
        print(f"probability={_g(est.probability)}")
    return EXIT_OK


SWEEP_FIELDS = [
    "axis", "value", "seed", "unit_cost", "process_cost", "transfer_cost",
    "discard_cost", "total_cost", "accuracy", "loss", "movement_mean",
    "movement_min", "movement_max", "mean_active_per_window", "processed",
    "discarded", "error",
]


def _cmd_sweep(args: argparse.Namespace) -> int:
    cfg = SimConfig.from_dict(_load_json(args.config))
    values = _parse_floats(args.values, "values")
    seeds = [int(v) for v in _parse_floats(args.seeds, "seeds")]
    if not values or not seeds:
        raise ConfigError("sweep needs at least one value and one seed")
    rows = simulator.sweep(cfg, args.axis, values, seeds, jobs=args.jobs)
    out = open(args.out, "w", newline="", encoding="utf-8") if args.out else sys.stdout
    try:
        writer = csv.DictWriter(out, fieldnames=SWEEP_FIELDS, restval="")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row.get(k, "") for k in SWEEP_FIELDS})
    finally:
        if args.out:
            out.close()
    failures = sum(1 for r in rows if r.get("error"))
    if failures:
        print(f"{failures} of {len(rows)} sweep points failed", file=sys.stderr)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="foglearn",
        description="Simulate and optimize data movement for learning on fog networks.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="log at INFO")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run one experiment from a JSON config")
    sim.add_argument("--config", required=True, help="path to the experiment JSON")
    sim.add_argument("--seed", type=int, default=None, help="override config seed")
    sim.add_argument("--out", default=None, help="directory for summary + timeseries")
    sim.add_argument(
        "--dump-config",
        action="store_true",
        help="print the normalized config and exit without running",
    )
    sim.set_defaults(func=_cmd_simulate)

    opt = sub.add_parser("optimize", help="solve a movement problem from JSON")
    opt.add_argument("--problem", required=True, help="path to the problem JSON")
    opt.add_argument(
        "--mode", choices=("greedy", "linear", "sqrt"), default="linear"
    )
    opt.add_argument("--out", default=None, help="directory for plan + ledger JSON")
    opt.set_defaults(func=_cmd_optimize)

    ana = sub.add_parser("analyze", help="closed-form analyses")
    ana_sub = ana.add_subparsers(dest="analysis", required=True)

    lb = ana_sub.add_parser("loss-bound", help="federated deviation bound")
    lb.add_argument("--lipschitz", type=float, required=True)
    lb.add_argument("--smoothness", type=float, required=True)
    lb.add_argument("--step-size", type=float, required=True)
    lb.add_argument("--grad-divergence", type=float, required=True)
    lb.add_argument("--omega", type=float, required=True)
    lb.add_argument("--period", type=int, required=True)
    lb.add_argument("--steps", type=int, required=True)
    lb.add_argument("--epsilon-floor", type=float, default=None)
    lb.set_defaults(func=_cmd_analyze)

    qu = ana_sub.add_parser("queue", help="capacity meeting a mean-wait target")
    qu.add_argument("--service-rate", type=float, required=True)
    qu.add_argument("--max-wait", type=float, required=True)
    qu.set_defaults(func=_cmd_analyze)

    hi = ana_sub.add_parser("hierarchy", help="optimal split on a star network")
    hi.add_argument("--error-scale", type=float, required=True)
    hi.add_argument("--leaf-cost", type=float, required=True)
    hi.add_argument("--hub-cost", type=float, required=True)
    hi.add_argument("--transmit-cost", type=float, required=True)
    hi.add_argument("--leaves", type=int, required=True)
    hi.add_argument("--batch", type=float, required=True)
    hi.set_defaults(func=_cmd_analyze)

    sa = ana_sub.add_parser("savings", help="expected gain from one-hop offloading")
    sa.add_argument(
        "--degrees", required=True, help="comma list of degree weights for k=1.."
    )
    sa.add_argument("--cost-scale", type=float, default=1.0)
    sa.set_defaults(func=_cmd_analyze)

    vi = ana_sub.add_parser("violations", help="expected capacity violations")
    vi.add_argument("--degrees", required=True)
    vi.add_argument("--capacity", type=float, required=True)
    vi.add_argument("--batch", type=float, required=True)
    vi.add_argument("--devices", type=int, required=True)
    vi.add_argument("--trials", type=int, default=100_000)
    vi.add_argument("--seed", type=int, default=0)
    vi.set_defaults(func=_cmd_analyze)

    sw = sub.add_parser("sweep", help="run a config across one axis and seeds")
    sw.add_argument("--config", required=True)
    sw.add_argument("--axis", required=True, choices=simulator.SWEEP_AXES)
    sw.add_argument("--values", required=True, help="comma list of axis values")
    sw.add_argument("--seeds", required=True, help="comma list of seeds")
    sw.add_argument("--jobs", type=int, default=1)
    sw.add_argument("--out", default=None, help="CSV path (default stdout)")
    sw.set_defaults(func=_cmd_sweep)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except (InfeasibleMovementError, PreconditionError) as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (ConfigError, FileNotFoundError, json.JSONDecodeError, KeyError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
