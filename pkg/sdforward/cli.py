"""
Command-line entry point: ``sdforward <subcommand> --scenario FILE``.

Subcommands read a scenario document, run the matching library
operation and write their artifacts under the output directory
(``--out``, else ``outputs.dir``, else ``config.OUTPUT_DIR``).
Module errors end the process with the error's exit code and a JSON
error record on stderr.
"""

import argparse
import json
import logging
import os
import sys

from sdforward.config import config
from sdforward.design.builtin import chain3_stage_feasible
from sdforward.design.certify import GridSpec, certify_condition_33, certify_condition_34, certify_condition_35
from sdforward.controller import bound_check
from sdforward.errors import ForwardingError, ValidationError
from sdforward.predictor import simulate_delayed_loop, ugas_statistic
from sdforward.scenario import (
    Scenario,
    build_certify_stage,
    build_controller,
    build_delays,
    build_disturbances,
    build_system,
    load_scenario,
    with_overrides,
)
from sdforward.simulator.masp import masp_search
from sdforward.simulator.integrate import simulate_many
from sdforward.simulator.metrics import stability_metrics, stage_invariants, time_to_ball
from sdforward.simulator.schedule import make_schedule
from sdforward.utils.export import write_columns, write_json, write_predictions_csv, write_trajectory_csv
from sdforward.utils.logger import RunLogger, setup_logging

logger = logging.getLogger(__name__)

SUBCOMMANDS = ("synthesize", "certify", "simulate", "delayed", "masp", "report")


def _out_dir(scenario: Scenario) -> str:
    return scenario.outputs.dir or config.OUTPUT_DIR


def _require_states(scenario: Scenario) -> list:
    states = [x0 for x0 in scenario.initial.states() if x0]
    if not states:
        raise ValidationError("this subcommand needs initial.x0 or initial.grid")
    return states


def _terminal_stage(controller):
    if controller.kind == "recursive_forwarding":
        return controller.schedule.stages[-1]
    if controller.kind == "single_stage":
        return controller.stage
    return None


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def _synthesize(scenario: Scenario, out: str, args) -> int:
    controller = build_controller(scenario)
    record = {"controller": controller.to_dict()}
    if controller.kind == "recursive_forwarding":
        record["schedule"] = controller.schedule.to_dict()
        bound, _ = bound_check(controller.schedule, float("inf"))
        record["input_bound"] = bound
    path = write_json(record, os.path.join(out, "gain_schedule.json"))
    logger.info(f"gain schedule written to {path}")
    return config.EXIT_CODES["success"]


def _certify(scenario: Scenario, out: str, args) -> int:
    stage, nl = build_certify_stage(scenario)
    grid = GridSpec.parse(args.grid) if args.grid else GridSpec()
    checks = [certify_condition_33, certify_condition_34]
    if stage.M is not None:
        checks.append(certify_condition_35)
    else:
        logger.warning(f"stage {stage.i} has no M; skipping the dissipation certificate")
    failed = []
    for check in checks:
        cert = check(stage, nl, grid)
        write_json(cert.to_json(), os.path.join(out, f"certificate_{cert.condition}.json"))
        if not cert.passed:
            failed.append(cert.condition)
    if failed:
        logger.error(f"certificates failed: {', '.join(failed)}")
        return config.EXIT_CODES["infeasible"]
    return config.EXIT_CODES["success"]


def _run_simulation(scenario: Scenario, run_logger: RunLogger):
    system = build_system(scenario)
    controller = build_controller(scenario)
    sched = scenario.schedule
    schedule = make_schedule(sched.r, sched.w, sched.horizon)
    disturbances = build_disturbances(scenario)
    trajs = simulate_many(
        system, controller, _require_states(scenario), schedule, disturbances, scenario.integration.step
    )
    eps = config.SIMULATION["ball_epsilon"]
    for k, traj in enumerate(trajs):
        t_ball = time_to_ball(traj, eps)
        run_logger.log_run(
            label=f"{system.name} run {k}",
            r=sched.r,
            seed=disturbances[k % len(disturbances)].seed,
            converged=t_ball < float("inf"),
            sup_norm=float(traj.norms.max()),
            time_to_ball=t_ball,
            reason="" if t_ball < float("inf") else "no convergence",
        )
    return controller, trajs


def _simulate(scenario: Scenario, out: str, args, run_logger: RunLogger) -> int:
    controller, trajs = _run_simulation(scenario, run_logger)
    for k, traj in enumerate(trajs):
        name = "trajectory.csv" if k == 0 else f"trajectory_{k}.csv"
        write_trajectory_csv(traj, os.path.join(out, name))
    stage = _terminal_stage(controller)
    report = stability_metrics(trajs, stage)
    if stage is not None:
        report.invariants = stage_invariants(trajs[0], stage, chain3_stage_feasible(stage))
    write_json(report.to_json(), os.path.join(out, "report.json"))
    return config.EXIT_CODES["success"]


def _delayed(scenario: Scenario, out: str, args, run_logger: RunLogger) -> int:
    delays = build_delays(scenario)
    controller = build_controller(scenario)
    x0 = _require_states(scenario)[0]
    run = simulate_delayed_loop(
        controller, delays, x0, scenario.initial.u0, scenario.schedule.horizon, scenario.integration.step
    )
    write_trajectory_csv(run.trajectory, os.path.join(out, "trajectory.csv"))
    write_predictions_csv(run, os.path.join(out, "predictions.csv"))
    errors = run.prediction_errors()
    end = float(run.trajectory.times[-1])
    report = stability_metrics([run.trajectory], _terminal_stage(controller)).to_json()
    report["delays"] = {"tau": delays.tau, "T": delays.T, "r": delays.r, "l": delays.l}
    report["max_prediction_error"] = float(errors.max()) if len(errors) else None
    report["ugas_initial"] = ugas_statistic(run, delays.T)
    report["ugas_final"] = ugas_statistic(run, end)
    write_json(report, os.path.join(out, "report.json"))
    t_ball = time_to_ball(run.trajectory, config.SIMULATION["ball_epsilon"])
    run_logger.log_run(
        label=f"delayed tau={delays.tau}",
        r=delays.r,
        seed=scenario.disturbance.seed,
        converged=t_ball < float("inf"),
        sup_norm=float(run.trajectory.norms.max()),
        time_to_ball=t_ball,
        reason="" if t_ball < float("inf") else "no convergence",
    )
    return config.EXIT_CODES["success"]


def _masp(scenario: Scenario, out: str, args, run_logger: RunLogger) -> int:
    if scenario.masp is None:
        raise ValidationError("masp needs a masp section")
    masp = scenario.masp
    estimate = masp_search(
        build_system(scenario),
        build_controller(scenario),
        _require_states(scenario),
        list(masp.w_bank),
        build_disturbances(scenario),
        masp.r_hi,
        horizon=scenario.schedule.horizon,
        step=scenario.integration.step,
        probe_divisor=masp.probe_divisor,
        run_logger=run_logger,
    )
    write_json(
        {
            "masp": estimate,
            "r_hi": masp.r_hi,
            "probe_divisor": masp.probe_divisor,
            "w_bank": list(masp.w_bank),
            "disturbance_seeds": [d.seed for d in build_disturbances(scenario)],
            "horizon": scenario.schedule.horizon,
        },
        os.path.join(out, "masp.json"),
    )
    logger.info(f"MASP estimate: {estimate:.6g}")
    return config.EXIT_CODES["success"]


def _report(scenario: Scenario, out: str, args, run_logger: RunLogger) -> int:
    _, trajs = _run_simulation(scenario, run_logger)
    columns = os.path.join(out, "columns")
    for k, traj in enumerate(trajs):
        write_columns(traj, columns, prefix="" if k == 0 else f"run{k}_")
    logger.info(f"plot columns written to {columns}")
    return config.EXIT_CODES["success"]


def run_subcommand(name: str, scenario: Scenario, args=None, run_logger: RunLogger | None = None) -> int:
    """Run one subcommand; returns the exit status. Module errors propagate."""
    args = args or argparse.Namespace(grid=None)
    out = _out_dir(scenario)
    os.makedirs(out, exist_ok=True)
    run_logger = run_logger or RunLogger()
    if name == "synthesize":
        return _synthesize(scenario, out, args)
    if name == "certify":
        return _certify(scenario, out, args)
    handlers = {"simulate": _simulate, "delayed": _delayed, "masp": _masp, "report": _report}
    if name not in handlers:
        raise ValidationError(f"unknown subcommand {name!r}")
    return handlers[name](scenario, out, args, run_logger)


def _error_record(error: Exception) -> dict:
    if isinstance(error, ForwardingError):
        return error.to_record()
    return {"error": type(error).__name__, "message": str(error)}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sdforward",
        description="Sampled-data forwarding design, certification and simulation.",
    )
    parser.add_argument("subcommand", choices=SUBCOMMANDS)
    parser.add_argument("--scenario", required=True, help="Scenario document to run")
    parser.add_argument("--out", help="Output directory (overrides outputs.dir)")
    parser.add_argument("--seed", type=int, help="Disturbance seed (overrides disturbance.seed)")
    parser.add_argument("--grid", help="Certificate grid overrides, e.g. 'angular=32,interior=2000'")
    parser.add_argument("--horizon", type=float, help="Simulation horizon (overrides schedule.horizon)")
    parser.add_argument("--step", type=float, help="Integration step (overrides integration.step)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        scenario = with_overrides(
            load_scenario(args.scenario), horizon=args.horizon, step=args.step, seed=args.seed, out=args.out
        )
        out = _out_dir(scenario)
        os.makedirs(out, exist_ok=True)
        setup_logging(log_file=os.path.join(out, os.path.basename(config.RUN_LOG)))
        run_logger = RunLogger(os.path.join(out, os.path.basename(config.RUN_STATS_CSV)))
        status = run_subcommand(args.subcommand, scenario, args, run_logger)
        if args.subcommand in ("simulate", "delayed", "masp", "report"):
            logger.info(run_logger.get_summary())
    except ForwardingError as e:
        logger.error(f"{args.subcommand} failed: {e}")
        print(json.dumps(_error_record(e)), file=sys.stderr)
        status = e.exit_code
    except OSError as e:
        logger.error(f"{args.subcommand} failed on I/O: {e}")
        print(json.dumps(_error_record(e)), file=sys.stderr)
        status = config.EXIT_CODES["io"]
    if argv is None:
        sys.exit(status)
    return status


if __name__ == "__main__":
    main()
