"""Command-line interface: validate, precompute, simulate, verify, convergence.

Exit codes: 0 success, 1 model or invariant validation failure, 2 numerical
failure inside a recursion, 64 usage error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from datetime import datetime, timezone

import numpy as np

from . import __version__
from .errors import JointSizeError, RiccatiError, SingularInnovationError
from .filters import (
    global_schedule_from_json_dict,
    local_schedule_from_json_dict,
    precompute_global,
    precompute_local,
    schedule_to_json_dict,
)
from .model import TeamModel, load_model, validate
from .riccati import riccati_from_json_dict, riccati_to_json_dict, solve_riccati
from .sim import benchmark_convergence_model, convergence_experiment, run_rollouts
from .strategy import parse_strategy
from .verify import run_verification_suite

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_NUMERICAL = 2
EXIT_USAGE = 64

_NUMERICAL_ERRORS = (RiccatiError, SingularInnovationError, JointSizeError)


class _UsageError(Exception):
    pass


class _InvalidError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse variant whose own complaints use the usage exit code."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _fmt(value: float) -> str:
    return f"{value:.17g}"


def _utc_now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _load_validated_model(path: str) -> TeamModel:
    if not os.path.exists(path):
        raise _UsageError(f"model file not found: {path}")
    try:
        model = load_model(path)
    except ValueError as exc:
        raise _InvalidError(f"model file rejected: {exc}") from exc
    report = validate(model)
    if not report.ok:
        lines = "\n".join(f"  - {v}" for v in report.violations)
        raise _InvalidError(f"model failed validation:\n{lines}")
    return model


def _write_json(path: str, doc: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_manifest(out_dir: str, command: str, outputs: list[str],
                    **fields) -> None:
    doc = {
        "command": command,
        "version": __version__,
        "timestamp_utc": _utc_now(),
        "out_dir": out_dir,
        "outputs": outputs,
    }
    doc.update(fields)
    _write_json(os.path.join(out_dir, "manifest.json"), doc)


def _ensure_out(path: str) -> str:
    os.makedirs(path, exist_ok=True)
    return path


def cmd_validate(args) -> int:
    if not os.path.exists(args.model):
        raise _UsageError(f"model file not found: {args.model}")
    try:
        model = load_model(args.model)
    except ValueError as exc:
        print(f"model file rejected: {exc}")
        return EXIT_INVALID
    report = validate(model)
    if report.ok:
        print("0 violations")
        return EXIT_OK
    print(f"{len(report.violations)} violations")
    for violation in report.violations:
        print(f"  - {violation}")
    return EXIT_INVALID


def cmd_precompute(args) -> int:
    model = _load_validated_model(args.model)
    out = _ensure_out(args.out)
    gains = solve_riccati(model)
    local = precompute_local(model)
    glob = precompute_global(model)
    files = {
        "riccati.json": riccati_to_json_dict(gains),
        "local_filter.json": schedule_to_json_dict(local),
        "global_filter.json": schedule_to_json_dict(glob),
    }
    for name, doc in files.items():
        _write_json(os.path.join(out, name), doc)
    _write_manifest(out, "precompute", sorted(files),
                    model=os.path.abspath(args.model))
    print(f"wrote {', '.join(sorted(files))} to {out}")
    return EXIT_OK


def _parse_strategy_arg(text: str, model: TeamModel):
    try:
        return parse_strategy(text, model)
    except FileNotFoundError as exc:
        raise _UsageError(f"strategy file not found: {exc.filename}") from exc
    except ValueError as exc:
        if text.startswith("custom:"):
            raise _InvalidError(f"strategy file rejected: {exc}") from exc
        raise _UsageError(str(exc)) from exc


def cmd_simulate(args) -> int:
    model = _load_validated_model(args.model)
    kind = _parse_strategy_arg(args.strategy, model)
    out = _ensure_out(args.out)
    keep = args.trace_rollouts if args.record == "full" else 0
    batch = run_rollouts(model, kind, seed=args.seed, n_rollouts=args.rollouts,
                         workers=args.workers, keep_traces=keep)
    costs_path = os.path.join(out, "costs.csv")
    with open(costs_path, "w", encoding="utf-8") as fh:
        fh.write("rollout,strategy,cost\n")
        for index, cost in enumerate(batch.costs):
            fh.write(f"{index},{args.strategy},{_fmt(cost)}\n")
    outputs = ["costs.csv"]
    if keep:
        _write_trace_csv(os.path.join(out, "trace.csv"), batch.traces)
        outputs.append("trace.csv")
    _write_manifest(out, "simulate", sorted(outputs),
                    model=os.path.abspath(args.model), strategy=args.strategy,
                    seed=args.seed, rollouts=args.rollouts,
                    workers=args.workers, record=args.record)
    mean = float(batch.costs.mean())
    spread = float(batch.costs.std(ddof=1)) if batch.costs.size > 1 else 0.0
    stderr = spread / np.sqrt(batch.costs.size) if batch.costs.size > 1 else 0.0
    print(f"mean cost {_fmt(mean)} (stderr {_fmt(stderr)}, "
          f"{batch.costs.size} rollouts)")
    print(f"max cost-split residual {_fmt(batch.residual_max)}")
    return EXIT_OK


def _write_trace_csv(path: str, traces) -> None:
    """Long-format trace: one row per recorded component.

    Stage indices are 1-based; agents are numbered 1..n with -1 marking
    population-aggregate rows; components index into vectors, 1-based.
    """

    def emit(fh, rollout, name, array, aggregate):
        for t in range(array.shape[0]):
            if aggregate:
                for comp, value in enumerate(array[t].reshape(-1)):
                    fh.write(f"{rollout},{t + 1},-1,{name},{comp + 1},"
                             f"{_fmt(value)}\n")
            else:
                for agent in range(array.shape[1]):
                    for comp, value in enumerate(array[t, agent].reshape(-1)):
                        fh.write(f"{rollout},{t + 1},{agent + 1},{name},"
                                 f"{comp + 1},{_fmt(value)}\n")

    with open(path, "w", encoding="utf-8") as fh:
        fh.write("rollout,t,agent,variable,component,value\n")
        for rollout, trace in enumerate(traces):
            emit(fh, rollout, "x", trace.x, False)
            emit(fh, rollout, "u", trace.u, False)
            emit(fh, rollout, "y", trace.y, False)
            emit(fh, rollout, "x_bar", trace.x_bar, True)
            emit(fh, rollout, "u_bar", trace.u_bar, True)
            emit(fh, rollout, "y_bar", trace.y_bar, True)
            emit(fh, rollout, "stage_cost", trace.stage_cost[:, None], True)
            if trace.delta_xhat is not None:
                emit(fh, rollout, "delta_xhat", trace.delta_xhat, False)
                emit(fh, rollout, "combined_xhat", trace.combined_xhat, False)
                emit(fh, rollout, "est_err", trace.est_err, False)
                emit(fh, rollout, "agg_xhat", trace.agg_xhat, True)


def _check_precomputed(model: TeamModel, directory: str) -> bool:
    """Re-derive all schedules and compare with the stored JSON bit for bit."""
    gains = solve_riccati(model)
    local = precompute_local(model)
    glob = precompute_global(model)
    with open(os.path.join(directory, "riccati.json"), encoding="utf-8") as fh:
        stored_gains = riccati_from_json_dict(json.load(fh))
    with open(os.path.join(directory, "local_filter.json"),
              encoding="utf-8") as fh:
        stored_local = local_schedule_from_json_dict(json.load(fh))
    with open(os.path.join(directory, "global_filter.json"),
              encoding="utf-8") as fh:
        stored_glob = global_schedule_from_json_dict(json.load(fh))
    pairs = [
        (gains.P, stored_gains.P), (gains.P_agg, stored_gains.P_agg),
        (gains.gain, stored_gains.gain), (gains.gain_agg, stored_gains.gain_agg),
        (local.Sigma_pred, stored_local.Sigma_pred),
        (local.Sigma_post, stored_local.Sigma_post),
        (local.gain, stored_local.gain),
        (glob.Sigma_pred, stored_glob.Sigma_pred),
        (glob.Sigma_post, stored_glob.Sigma_post),
        (glob.gain, stored_glob.gain),
    ]
    return all(np.array_equal(a, b) for a, b in pairs)


def cmd_verify(args) -> int:
    report = run_verification_suite(n_models=args.models, seed=args.seed,
                                    mc_rollouts=args.rollouts,
                                    workers=args.workers)
    doc = report.to_json_dict()
    if args.precomputed:
        if not args.model:
            raise _UsageError("--precomputed requires --model")
        model = _load_validated_model(args.model)
        roundtrip_ok = _check_precomputed(model, args.precomputed)
        doc["precomputed_roundtrip_ok"] = roundtrip_ok
        doc["ok"] = doc["ok"] and roundtrip_ok
    if args.out:
        out = _ensure_out(args.out)
        _write_json(os.path.join(out, "verification.json"), doc)
        _write_manifest(out, "verify", ["verification.json"],
                        models=args.models, seed=args.seed,
                        rollouts=args.rollouts)
    print(json.dumps(doc, indent=2, sort_keys=True))
    return EXIT_OK if doc["ok"] else EXIT_INVALID


def _parse_n_list(text: str) -> tuple[int, ...]:
    try:
        values = tuple(int(part) for part in text.split(","))
    except ValueError as exc:
        raise _UsageError(f"bad n-list {text!r}: {exc}") from exc
    if len(values) < 2 or any(v < 2 for v in values):
        raise _UsageError("n-list needs at least two entries, each >= 2")
    return values


def cmd_convergence(args) -> int:
    if args.model:
        model = _load_validated_model(args.model)
        if not np.allclose(model.alpha, model.alpha[0]):
            raise _InvalidError(
                "convergence experiment needs uniform influence weights")
    else:
        model = benchmark_convergence_model()
    n_list = _parse_n_list(args.n_list)
    result = convergence_experiment(model, n_list, rollouts=args.rollouts,
                                    seed=args.seed, oracle_cap=args.oracle_cap,
                                    workers=args.workers)
    out = _ensure_out(args.out)
    csv_path = os.path.join(out, "convergence.csv")
    with open(csv_path, "w", encoding="utf-8") as fh:
        fh.write("n,max_sigma_bar,ms_correction,cost_gap,gap_se,exact_gap\n")
        for row in result.rows:
            fh.write(",".join([
                str(row.n), _fmt(row.max_sigma_bar), _fmt(row.ms_correction),
                _fmt(row.cost_gap), _fmt(row.gap_se), _fmt(row.exact_gap),
            ]) + "\n")
    summary = {
        "slope_sigma": result.slope_sigma,
        "slope_correction": result.slope_correction,
        "slope_gap": result.slope_gap,
        "rows": [row.__dict__ for row in result.rows],
    }
    _write_json(os.path.join(out, "convergence_summary.json"), summary)
    _write_manifest(out, "convergence",
                    ["convergence.csv", "convergence_summary.json"],
                    model=(os.path.abspath(args.model) if args.model
                           else "builtin:benchmark"),
                    n_list=list(n_list), seed=args.seed,
                    rollouts=args.rollouts, oracle_cap=args.oracle_cap)
    print(f"slopes: sigma {_fmt(result.slope_sigma)}, "
          f"correction {_fmt(result.slope_correction)}, "
          f"gap {_fmt(result.slope_gap)}")
    return EXIT_OK


def build_parser() -> _Parser:
    parser = _Parser(prog="teamlqg",
                     description="Decentralized control and estimation for "
                                 "influence-coupled teams")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check a model file")
    p.add_argument("--model", required=True)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("precompute", help="write gain and filter schedules")
    p.add_argument("--model", required=True)
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_precompute)

    p = sub.add_parser("simulate", help="Monte Carlo rollouts of one strategy")
    p.add_argument("--model", required=True)
    p.add_argument("--strategy", default="optimal",
                   help="optimal | meanfield | zero | custom:<file>")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--rollouts", type=int, default=1000)
    p.add_argument("--workers", type=int, default=os.cpu_count() or 1)
    p.add_argument("--out", default=".")
    p.add_argument("--record", choices=("costs", "full"), default="costs")
    p.add_argument("--trace-rollouts", type=int, default=10,
                   help="rollouts recorded in trace.csv under --record full")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("verify", help="run the randomized oracle suite")
    p.add_argument("--models", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--rollouts", type=int, default=100_000,
                   help="Monte Carlo rollouts for the cost cross-checks")
    p.add_argument("--workers", type=int, default=os.cpu_count() or 1)
    p.add_argument("--out", default=None)
    p.add_argument("--model", default=None,
                   help="model for the --precomputed round-trip check")
    p.add_argument("--precomputed", default=None,
                   help="directory of schedules to re-derive and compare")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("convergence", help="population-size scaling study")
    p.add_argument("--model", default=None,
                   help="uniform-influence model file (default: built-in)")
    p.add_argument("--n-list", default="4,16,64,256")
    p.add_argument("--rollouts", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--oracle-cap", type=int, default=256)
    p.add_argument("--workers", type=int, default=os.cpu_count() or 1)
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_convergence)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except _InvalidError as exc:
        print(f"validation failure: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except _NUMERICAL_ERRORS as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
