"""Command-line front end: run scenarios, paired ablations, response-model
fitting, metric recomputation, and config validation.

Exit codes: 0 success, 2 configuration errors, 3 simulation faults.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import metrics as metrics_mod
from .config import ConfigError, load_scenario, validate
from .engine import SimulationFault, run_scenario, read_log, write_log
from .velocity_inference import FitError, fit_response_model


def _load(path: str):
    try:
        return load_scenario(path)
    except ConfigError as exc:
        print(f"invalid config {path}:", file=sys.stderr)
        for error in exc.errors:
            print(f"  - {error}", file=sys.stderr)
        raise SystemExit(2)


def _summary_line(summary) -> str:
    nd_mean = summary.neighbor_distance_mean
    nd_std = summary.neighbor_distance_std
    return (
        f"cvr={summary.cvr_mean:.3f} "
        f"d_n={nd_mean:.2f} " if nd_mean is not None else "d_n=n/a "
    ) + (
        f"sigma_d={nd_std:.2f} " if nd_std is not None else ""
    ) + (
        f"collisions={summary.collisions} "
        f"min_gap={summary.min_pairwise_distance:.2f} "
        f"v_g={summary.group_velocity:.2f}"
    )


def cmd_run(args) -> int:
    config = _load(args.config)
    if args.seed is not None:
        config = dataclasses.replace(config, seed=args.seed)
    if args.no_comm:
        config = dataclasses.replace(config, comm=False)
    out_dir = Path(args.out) if args.out else None
    log_path = out_dir / "log.jsonl" if out_dir else None
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)
    try:
        artifacts = run_scenario(config, parallel=args.parallel,
                                 log_path=log_path)
    except SimulationFault as exc:
        print(f"simulation fault: {exc}", file=sys.stderr)
        return 3
    if out_dir:
        with open(out_dir / "summary.json", "w") as handle:
            json.dump(artifacts.summary.as_dict(), handle, sort_keys=True,
                      indent=2)
        metrics_mod.export_plot_data(artifacts.records, out_dir)
        print(f"artifacts written to {out_dir}")
    print(_summary_line(artifacts.summary))
    return 0


def cmd_ablate(args) -> int:
    config = _load(args.config)
    rows = []
    for k in range(args.pairs):
        paired = dataclasses.replace(config, seed=config.seed + k)
        try:
            result = metrics_mod.run_ablation(paired)
        except SimulationFault as exc:
            print(f"simulation fault: {exc}", file=sys.stderr)
            return 3
        rows.append((paired.seed, result))
    print("seed   d_n(comm) sigma(comm)   d_n(no)  sigma(no)   dCVR")
    for seed, result in rows:
        print(
            f"{seed:4d}   {result.comm.neighbor_distance_mean:9.2f} "
            f"{result.comm.neighbor_distance_std:11.2f} "
            f"{result.no_comm.neighbor_distance_mean:9.2f} "
            f"{result.no_comm.neighbor_distance_std:10.2f} "
            f"{result.cvr_delta:6.3f}"
        )
    wins = sum(
        1 for _, r in rows
        if r.no_comm.neighbor_distance_std > r.comm.neighbor_distance_std
    )
    print(f"sigma_d(no-comm) > sigma_d(comm) in {wins}/{len(rows)} pairs")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        payload = [
            {"seed": seed, "comm": r.comm.as_dict(),
             "no_comm": r.no_comm.as_dict()}
            for seed, r in rows
        ]
        with open(out / "ablation.json", "w") as handle:
            json.dump(payload, handle, sort_keys=True, indent=2)
        print(f"ablation data written to {out}")
    return 0


def command_profiles(duration: float, dt: float, top_speed: float):
    """Step, ramp, and sinusoid lateral-velocity commands for model fitting."""
    n = int(round(duration / dt))
    profiles = []
    steps = np.zeros((n, 2))
    steps[n // 8:, 0] = 0.6 * top_speed
    steps[n // 2:, 1] = -0.4 * top_speed
    steps[3 * n // 4:, 0] = 0.2 * top_speed
    profiles.append(steps)
    t = np.arange(n) * dt
    ramp = np.stack(
        [np.clip(0.08 * top_speed * t, 0, top_speed),
         np.clip(-0.05 * top_speed * t, -top_speed, 0)],
        axis=1,
    )
    profiles.append(ramp)
    sine = np.stack(
        [0.5 * top_speed * np.sin(0.8 * t),
         0.35 * top_speed * np.cos(1.3 * t)],
        axis=1,
    )
    profiles.append(sine)
    return profiles


def fit_from_plant(config) -> tuple:
    """Drive the plant model with the training profiles and fit the
    first-order response coefficients to the recorded velocities."""
    from .engine import AgentPlant

    samples = []
    for profile in command_profiles(20.0, config.dt, config.gains.cruise_speed):
        plant = AgentPlant(
            config.plant.tau, config.plant.v_max, config.plant.a_max,
            np.zeros(2),
        )
        v_prev = plant.velocity.copy()
        for command in profile:
            plant.advance(command, config.dt)
            samples.append((v_prev, command.copy(), plant.velocity.copy()))
            v_prev = plant.velocity.copy()
    model = fit_response_model(samples)
    return model, len(samples)


def cmd_fit_model(args) -> int:
    config = _load(args.config)
    try:
        model, n = fit_from_plant(config)
    except FitError as exc:
        print(f"fit failed: {exc}", file=sys.stderr)
        return 3
    print(f"fitted on {n} samples: a={model.a!r} b={model.b!r} "
          f"residual={model.residual:.3e}")
    print("config fragment:")
    print(f"response_model:\n  a: {model.a!r}\n  b: {model.b!r}")
    if args.out:
        with open(args.out, "w") as handle:
            json.dump({"a": model.a, "b": model.b,
                       "residual": model.residual}, handle, indent=2)
        print(f"model written to {args.out}")
    return 0


def cmd_metrics(args) -> int:
    records = read_log(args.log)
    body = [r for r in records if r.get("record") != "summary"]
    summary = metrics_mod.summarize(body)
    print(json.dumps(summary.as_dict(), sort_keys=True, indent=2))
    return 0


def cmd_validate(args) -> int:
    try:
        config = load_scenario(args.config)
    except ConfigError as exc:
        print(f"{args.config}: INVALID", file=sys.stderr)
        for error in exc.errors:
            print(f"  - {error}", file=sys.stderr)
        return 2
    print(f"{args.config}: OK ({config.n_agents} agents, "
          f"{config.duration:.0f} s at dt={config.dt})")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fastflock",
        description="Decentralized fast-flocking simulator",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one scenario")
    p_run.add_argument("config")
    p_run.add_argument("--seed", type=int, default=None)
    p_run.add_argument("--no-comm", action="store_true",
                       help="disable the communication channel")
    p_run.add_argument("--out", default=None, metavar="DIR",
                       help="write log, summary, and plot data here")
    p_run.add_argument("--parallel", action="store_true",
                       help="run agent stages in a thread pool")
    p_run.set_defaults(func=cmd_run)

    p_ablate = sub.add_parser("ablate", help="paired comm vs no-comm runs")
    p_ablate.add_argument("config")
    p_ablate.add_argument("--pairs", type=int, default=4)
    p_ablate.add_argument("--out", default=None, metavar="DIR")
    p_ablate.set_defaults(func=cmd_ablate)

    p_fit = sub.add_parser(
        "fit-model",
        help="fit the first-order response model from training profiles",
    )
    p_fit.add_argument("config")
    p_fit.add_argument("--out", default=None, metavar="FILE")
    p_fit.set_defaults(func=cmd_fit_model)

    p_metrics = sub.add_parser("metrics", help="recompute metrics from a log")
    p_metrics.add_argument("log")
    p_metrics.set_defaults(func=cmd_metrics)

    p_validate = sub.add_parser("validate", help="validate a scenario config")
    p_validate.add_argument("config")
    p_validate.set_defaults(func=cmd_validate)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
