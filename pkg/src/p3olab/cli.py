"""Command-line front end.

Exit codes: 0 success, 1 validation failure, 2 I/O or format error.
"""
from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from .bench import (ExperimentConfig, baseline_compare, emit_baseline_report,
                    emit_p3o_report, emit_rate_report, rate_bench,
                    resolve_instance)
from .errors import FormatError, P3OError, ValidationError
from .oracle import identification_check
from .pessimism import p3o
from .policies import BehaviorPolicy, policy_from_json
from .pomdp import load_model
from .simulate import generate, save

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_IO = 2


def _load_behavior(path) -> BehaviorPolicy:
    with open(path, "r", encoding="utf-8") as f:
        doc = json.load(f)
    behavior = BehaviorPolicy(np.asarray(doc["probs"], dtype=float))
    behavior.validate()
    return behavior


def _load_config(path) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as f:
        return ExperimentConfig.from_dict(json.load(f))


def _cmd_validate(args) -> int:
    load_model(args.model)
    print(f"{args.model}: valid")
    return EXIT_OK


def _cmd_simulate(args) -> int:
    model = load_model(args.model)
    behavior = _load_behavior(args.behavior)
    dataset = generate(model, behavior, args.n, args.seed)
    save(dataset, args.out)
    print(f"wrote {dataset.n} trajectories to {args.out}")
    return EXIT_OK


def _cmd_identify_check(args) -> int:
    model = load_model(args.model)
    behavior = _load_behavior(args.behavior)
    with open(args.policy, "r", encoding="utf-8") as f:
        policy = policy_from_json(json.load(f), n_obs=model.n_obs)
    chk = identification_check(model, behavior, policy)
    print(f"true value      : {chk.lhs:.12f}")
    print(f"identified value: {chk.rhs:.12f}")
    print(f"gap             : {chk.gap:.3e}")
    print(f"bridge residuals: {max(chk.value_residuals):.3e}")
    return EXIT_OK


def _cmd_p3o(args) -> int:
    config = _load_config(args.config)
    inst = resolve_instance(config)
    dataset = generate(inst.model, inst.behavior, config.compare_n,
                       config.seeds[0])
    report = p3o(dataset, inst.policy_set, inst.feature_map, inst.config,
                 gamma=inst.model.gamma, model=inst.model,
                 behavior=inst.behavior)
    emit_p3o_report(report, config)
    print(report.table())
    print(f"selected policy index: {report.selected}")
    return EXIT_OK


def _cmd_rate_bench(args) -> int:
    config = _load_config(args.config)
    result = rate_bench(config)
    emit_rate_report(result, config)
    for n, m in sorted(result.medians.items()):
        print(f"n={n:6d}  median subopt={m:.6f}")
    if result.rate_fit is not None:
        print(f"log-log slope: {result.rate_fit.slope:.3f} "
              f"(CI {result.rate_fit.slope_ci})")
    print(f"resolution floor {result.floor:.6f}; "
          f"reached: {result.floor_reached}")
    return EXIT_OK


def _cmd_baseline_compare(args) -> int:
    config = _load_config(args.config)
    result = baseline_compare(config)
    emit_baseline_report(result, config)
    print(f"median subopt  p3o: {result.median_p3o:.6f}")
    print(f"median subopt naive: {result.median_naive:.6f}")
    print(f"gap {result.median_gap:.6f} (bootstrap se {result.gap_se:.6f})")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="p3olab",
        description="Confounded-POMDP offline policy optimization laboratory")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="validate a model file")
    p.add_argument("model")
    p.set_defaults(func=_cmd_validate)

    p = sub.add_parser("simulate", help="generate a confounded dataset")
    p.add_argument("model")
    p.add_argument("behavior")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("identify-check",
                       help="exact identification check on a model")
    p.add_argument("model")
    p.add_argument("behavior")
    p.add_argument("policy")
    p.set_defaults(func=_cmd_identify_check)

    p = sub.add_parser("p3o", help="pessimistic selection on one dataset")
    p.add_argument("--config", required=True)
    p.set_defaults(func=_cmd_p3o)

    p = sub.add_parser("rate-bench", help="suboptimality rate sweep")
    p.add_argument("--config", required=True)
    p.set_defaults(func=_cmd_rate_bench)

    p = sub.add_parser("baseline-compare",
                       help="paired comparison against naive fitted-Q")
    p.add_argument("--config", required=True)
    p.set_defaults(func=_cmd_baseline_compare)
    return parser


def cli(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as e:
        print(f"validation error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except (FormatError, FileNotFoundError, IsADirectoryError,
            PermissionError, json.JSONDecodeError) as e:
        print(f"i/o error: {e}", file=sys.stderr)
        return EXIT_IO
    except P3OError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VALIDATION


def main() -> None:
    sys.exit(cli())


if __name__ == "__main__":
    main()
