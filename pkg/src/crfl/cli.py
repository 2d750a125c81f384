"""Operator entry point: config-driven subcommands for training, certifying,
sweeping, the coupled closeness experiment, and a standalone radius
evaluator.  Exit codes: 0 success, 2 configuration/input error, 3 numerical
divergence."""

from __future__ import annotations

import argparse
import os
import sys

from . import csvio, plot
from .analysis import (
    AttackerProfile,
    RadiusContext,
    post_attack_slope,
    radius_detail,
)
from .certify import critical_radius
from .config import load_run_config
from .errors import ConfigurationError, DataConsistencyError, DataFormatError, DivergenceError
from .model import data_lipschitz_constant, save_params
from .numerics import format_number
from .pipeline import (
    certify_from_checkpoint,
    load_run_meta,
    run_closeness,
    run_sweep,
    run_train,
    save_run_meta,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGED = 3

CHECKPOINT_NAME = "checkpoint.bin"
TRACE_NAME = "trace.csv"
META_NAME = "run_meta.json"


def _out_dir(cfg) -> str:
    os.makedirs(cfg.output.dir, exist_ok=True)
    return cfg.output.dir


def cmd_train(args) -> int:
    cfg = load_run_config(args.config)
    out = _out_dir(cfg)
    artifacts = run_train(cfg)

    checkpoint = os.path.join(out, CHECKPOINT_NAME)
    save_params(checkpoint, artifacts.result.params)
    trace_path = os.path.join(out, TRACE_NAME)
    csvio.write_trace_csv(trace_path, artifacts.result.traces)
    csvio.read_trace_csv(trace_path)
    save_run_meta(os.path.join(out, META_NAME), artifacts)

    line = f"clean_test_accuracy={format_number(artifacts.clean_accuracy)}"
    if artifacts.asr is not None:
        line += f" attack_success_rate={format_number(artifacts.asr)}"
    print(line)
    print(f"checkpoint={checkpoint}")
    return EXIT_OK


def cmd_certify(args) -> int:
    cfg = load_run_config(args.config)
    out = _out_dir(cfg)
    checkpoint = args.checkpoint or os.path.join(out, CHECKPOINT_NAME)
    effective = None
    meta_path = os.path.join(out, META_NAME)
    if os.path.exists(meta_path):
        effective = load_run_meta(meta_path).get("attacker_effective_weights")
    results, curve = certify_from_checkpoint(cfg, checkpoint, effective)

    samples_path = os.path.join(out, "samples.csv")
    curve_path = os.path.join(out, "curve.csv")
    csvio.write_samples_csv(samples_path, results)
    csvio.read_samples_csv(samples_path)
    csvio.write_curve_csv(curve_path, curve)
    csvio.read_curve_csv(curve_path)
    if cfg.output.emit_svg:
        rs = [row[0] for row in curve]
        plot.write_line_svg(
            os.path.join(out, "curve.svg"),
            [("certified accuracy", rs, [row[1] for row in curve]),
             ("certified rate", rs, [row[2] for row in curve])],
            title="certified accuracy / rate",
            x_label="radius r",
            y_label="fraction of test set",
        )
        plot.write_dat(os.path.join(out, "curve.dat"), ["r", "acc", "rate"], curve)

    abstained = sum(1 for r in results if r.abstained)
    print(
        f"certified={len(results)} abstained={abstained} "
        f"critical_radius={format_number(critical_radius(results))}"
    )
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = load_run_config(args.config)
    out = _out_dir(cfg)
    try:
        values = [float(v) for v in args.values.split(",") if v.strip() != ""]
    except ValueError as exc:
        raise ConfigurationError(f"--values must be a comma-separated number list: {exc}") from exc
    points = run_sweep(cfg, args.axis, values)

    rows = []
    for point in points:
        for r, acc, rate in point.curve:
            rows.append((point.value, r, acc, rate))
    path = os.path.join(out, f"sweep_{args.axis}.csv")
    csvio.write_sweep_csv(path, args.axis, rows)
    csvio.read_sweep_csv(path)
    for point in points:
        print(
            f"{args.axis}={format_number(point.value)} "
            f"critical_radius={format_number(point.critical_radius)}"
        )
    return EXIT_OK


def cmd_closeness(args) -> int:
    cfg = load_run_config(args.config)
    out = _out_dir(cfg)
    trace, _, attack = run_closeness(cfg)

    path = os.path.join(out, "closeness.csv")
    csvio.write_closeness_csv(path, trace)
    csvio.read_closeness_csv(path)
    if cfg.output.emit_svg:
        rounds = [r.round for r in trace.records]
        dists = [r.distance for r in trace.records]
        plot.write_line_svg(
            os.path.join(out, "closeness.svg"),
            [("l2 distance", rounds, dists)],
            title="coupled clean/poisoned model distance",
            x_label="round",
            y_label="l2 distance",
        )
        plot.write_dat(os.path.join(out, "closeness.dat"), ["round", "distance"],
                       list(zip(rounds, dists)))

    slope = post_attack_slope(trace, attack.t_adv)
    print(
        f"post_attack_slope={format_number(slope)} "
        f"non_increasing={'true' if slope <= 0 else 'false'}"
    )
    return EXIT_OK


def cmd_radius_calc(args) -> int:
    if not args.p_a > args.p_b:
        raise ConfigurationError("radius needs p_a > p_b (no certification possible otherwise)")
    lipschitz = args.lipschitz
    if lipschitz is None:
        lipschitz = data_lipschitz_constant(args.rho_a * args.t_adv + args.rho_b)
    sigma_smoothing = args.sigma_smoothing if args.sigma_smoothing is not None else args.sigma
    profile = AttackerProfile(
        weight=args.weight,
        scale=args.gamma,
        local_iters=args.tau,
        learning_rate=args.eta,
        poison_ratio=args.poison_ratio,
    )
    schedule = tuple(
        (
            args.rho_a * t + args.rho_b,
            args.sigma if t < args.rounds else sigma_smoothing,
        )
        for t in range(args.t_adv + 1, args.rounds + 1)
    )
    ctx = RadiusContext(
        sigma_t_adv=args.sigma_tadv if args.sigma_tadv is not None else args.sigma,
        attackers=(profile,) * args.num_attackers,
        data_lipschitz=lipschitz,
        t_adv=args.t_adv,
        schedule=schedule,
    )
    outcome = radius_detail(args.p_a, args.p_b, ctx)
    print(
        f"RAD={format_number(outcome.value)} "
        f"saturated={'true' if outcome.saturated else 'false'}"
    )
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="crfl",
        description="Deterministic federated training with clipping/noising, "
        "backdoor injection, and parameter-smoothing certification.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train and write a checkpoint + round trace")
    p_train.add_argument("--config", required=True)
    p_train.set_defaults(func=cmd_train)

    p_cert = sub.add_parser("certify", help="certify test samples from a checkpoint")
    p_cert.add_argument("--config", required=True)
    p_cert.add_argument("--checkpoint", default=None)
    p_cert.set_defaults(func=cmd_certify)

    p_sweep = sub.add_parser("sweep", help="train+certify across one varied parameter")
    p_sweep.add_argument("--config", required=True)
    p_sweep.add_argument(
        "--axis", required=True, choices=["sigma", "R", "gamma", "poison_ratio", "N", "T"]
    )
    p_sweep.add_argument("--values", required=True, help="comma-separated values")
    p_sweep.set_defaults(func=cmd_sweep)

    p_close = sub.add_parser("closeness", help="coupled clean-vs-poisoned distance trace")
    p_close.add_argument("--config", required=True)
    p_close.set_defaults(func=cmd_closeness)

    p_rad = sub.add_parser("radius-calc", help="evaluate the certified radius formula")
    p_rad.add_argument("--p-a", type=float, required=True, dest="p_a")
    p_rad.add_argument("--p-b", type=float, required=True, dest="p_b")
    p_rad.add_argument("--sigma-tadv", type=float, default=None, dest="sigma_tadv")
    p_rad.add_argument("--num-attackers", type=int, default=1, dest="num_attackers")
    p_rad.add_argument("--weight", type=float, default=0.05)
    p_rad.add_argument("--gamma", type=float, default=10.0)
    p_rad.add_argument("--tau", type=int, default=30)
    p_rad.add_argument("--eta", type=float, default=0.001)
    p_rad.add_argument("--poison-ratio", type=float, default=0.05, dest="poison_ratio")
    p_rad.add_argument("--lipschitz", type=float, default=None)
    p_rad.add_argument("--t-adv", type=int, default=10, dest="t_adv")
    p_rad.add_argument("--rounds", type=int, default=100)
    p_rad.add_argument("--rho-a", type=float, default=0.1, dest="rho_a")
    p_rad.add_argument("--rho-b", type=float, default=2.0, dest="rho_b")
    p_rad.add_argument("--sigma", type=float, default=0.01)
    p_rad.add_argument("--sigma-smoothing", type=float, default=None, dest="sigma_smoothing")
    p_rad.set_defaults(func=cmd_radius_calc)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigurationError, DataFormatError, DataConsistencyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
