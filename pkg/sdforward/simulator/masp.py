"""
Empirical maximum allowable sampling period.

A candidate r passes when every (x0, w, d) combination of the probe bank
converges: time_to_ball(eps) is finite within the horizon and no run
diverges. Combinations run concurrently through the batch runner.
"""

import logging
import math
from dataclasses import dataclass, field
from itertools import product
from typing import Callable, Sequence

import numpy as np

from sdforward.config import config
from sdforward.errors import Divergence, NoStabilizingRate
from sdforward.simulator.integrate import DisturbanceSpec, simulate_closed_loop
from sdforward.simulator.metrics import time_to_ball
from sdforward.simulator.schedule import make_schedule
from sdforward.simulator.systems import SystemModel
from sdforward.utils.batch import run_batch

logger = logging.getLogger(__name__)


@dataclass
class ProbeResult:
    r: float
    passed: bool
    runs: int
    failures: list = field(default_factory=list)


def probe_rate(
    system: SystemModel,
    controller: Callable,
    r: float,
    x0_set: Sequence,
    w_samples: Sequence,
    d_bank: Sequence[DisturbanceSpec],
    horizon: float,
    step: float | None = None,
    eps: float | None = None,
    threads: int | None = None,
    run_logger=None,
) -> ProbeResult:
    """Simulate every bank combination at sampling period r."""
    eps = eps or config.SIMULATION["ball_epsilon"]
    base_step = step or config.SIMULATION["step"]
    d_bank = list(d_bank) or [DisturbanceSpec()]
    combos = list(product(range(len(x0_set)), range(len(w_samples)), range(len(d_bank))))

    def job(ix, iw, idist):
        def run():
            schedule = make_schedule(r, w_samples[iw], horizon)
            h = min(base_step, config.SIMULATION["max_step_fraction"] * schedule.min_gap)
            try:
                traj = simulate_closed_loop(system, controller, x0_set[ix], schedule, d_bank[idist], h)
            except Divergence as e:
                return False, math.inf, f"divergence at t={e.time:.6g}"
            t_ball = time_to_ball(traj, eps)
            return math.isfinite(t_ball), t_ball, "" if math.isfinite(t_ball) else "no convergence"

        return run

    outcomes = run_batch([(combo, job(*combo)) for combo in combos], threads=threads)
    failures = []
    for outcome in outcomes:
        if not outcome.ok:
            raise outcome.error
        converged, t_ball, reason = outcome.value
        if run_logger is not None:
            ix, iw, idist = outcome.key
            run_logger.log_run(
                label=f"masp x0={ix} w={iw} d={idist}",
                r=r,
                seed=d_bank[idist].seed,
                converged=converged,
                sup_norm=None,
                time_to_ball=t_ball,
                reason=reason,
            )
        if not converged:
            failures.append({"combo": list(outcome.key), "reason": reason})
    passed = not failures
    logger.info(f"probe r={r:.6g}: {len(combos) - len(failures)}/{len(combos)} converged")
    return ProbeResult(r=r, passed=passed, runs=len(combos), failures=failures)


def masp_search(
    system: SystemModel,
    controller: Callable,
    x0_set: Sequence,
    w_samples: Sequence,
    d_bank: Sequence[DisturbanceSpec],
    r_hi: float,
    horizon: float = config.SIMULATION["horizon_fast"],
    step: float | None = None,
    probe_divisor: float | None = None,
    eps: float | None = None,
    threads: int | None = None,
    run_logger=None,
) -> float:
    """
    Largest passing r in [r_hi / probe_divisor, r_hi] found by bisection
    (relative tolerance from config). The lower end is probed first and
    must pass; r_hi is returned as-is when it passes.
    """
    if not r_hi > 0.0:
        raise ValueError(f"r_hi must be positive, got {r_hi}")
    divisor = probe_divisor or config.SIMULATION["masp_probe_divisor"]
    x0_set = [np.asarray(x, dtype=float) for x in x0_set]

    def passes(r: float) -> bool:
        return probe_rate(
            system, controller, r, x0_set, w_samples, d_bank, horizon, step, eps, threads, run_logger
        ).passed

    lo = r_hi / divisor
    if not passes(lo):
        raise NoStabilizingRate(f"no convergence even at r = {lo:.4g}")
    if passes(r_hi):
        return float(r_hi)
    hi = r_hi
    while hi - lo > config.TOLERANCES["masp_rel"] * hi:
        mid = 0.5 * (lo + hi)
        if passes(mid):
            lo = mid
        else:
            hi = mid
    logger.info(f"MASP estimate {lo:.6g} (bracket [{lo:.6g}, {hi:.6g}])")
    return float(lo)
