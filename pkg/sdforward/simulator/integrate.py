"""
Zero-order-hold closed-loop integration.

The input is computed from the state at each sampling instant and held
until the next one; in between, the plant is integrated with classical
fixed-step RK4 on a grid refined so every sampling instant is hit exactly.
"""

import logging
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from sdforward.config import config
from sdforward.errors import Divergence, InvalidPerturbation, ValidationError
from sdforward.simulator.schedule import Schedule
from sdforward.simulator.systems import SystemModel
from sdforward.utils.batch import run_batch

logger = logging.getLogger(__name__)

DISTURBANCE_MODES = ("none", "constant", "function", "uniform")


@dataclass(frozen=True)
class DisturbanceSpec:
    """
    How d(t) is realized: zero (``none``), a fixed vector, a user function
    of time, or seeded uniform draws from the box refreshed every step.
    """

    mode: str = "none"
    value: tuple = ()
    func: Callable[[float], np.ndarray] | None = None
    seed: int = 0

    def __post_init__(self):
        if self.mode not in DISTURBANCE_MODES:
            raise ValidationError(f"unknown disturbance mode {self.mode!r}")
        if self.mode == "function" and self.func is None:
            raise ValidationError("function disturbance needs a callable")

    def realizer(self, D_box: tuple) -> Callable[[float], np.ndarray]:
        l = len(D_box)
        if self.mode == "none" or l == 0:
            zero = np.zeros(l)
            return lambda t: zero
        if self.mode == "constant":
            value = np.asarray(self.value, dtype=float)
            if value.shape != (l,):
                raise ValidationError(f"constant disturbance needs {l} entries, got {value.shape}")
            return lambda t: value
        if self.mode == "function":
            return lambda t: np.asarray(self.func(t), dtype=float)
        rng = np.random.default_rng(self.seed)
        lo = np.array([b[0] for b in D_box], dtype=float)
        hi = np.array([b[1] for b in D_box], dtype=float)
        return lambda t: lo + (hi - lo) * rng.random(l)


@dataclass(frozen=True)
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    inputs: np.ndarray
    sample_flags: np.ndarray
    disturbance: np.ndarray

    @property
    def n(self) -> int:
        return self.states.shape[1]

    @property
    def norms(self) -> np.ndarray:
        return np.linalg.norm(self.states, axis=1)

    @property
    def sample_times(self) -> np.ndarray:
        return self.times[self.sample_flags]

    @property
    def sample_states(self) -> np.ndarray:
        return self.states[self.sample_flags]

    def segment(self, a: float, b: float) -> "Trajectory":
        """Grid points with a <= t <= b."""
        mask = (self.times >= a) & (self.times <= b)
        return Trajectory(
            times=self.times[mask],
            states=self.states[mask],
            inputs=self.inputs[mask],
            sample_flags=self.sample_flags[mask],
            disturbance=self.disturbance[mask],
        )


def rk4_step(rhs, d, x: np.ndarray, u: float, h: float) -> np.ndarray:
    k1 = rhs(d, x, u)
    k2 = rhs(d, x + 0.5 * h * k1, u)
    k3 = rhs(d, x + 0.5 * h * k2, u)
    k4 = rhs(d, x + h * k3, u)
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def integrate_held(rhs, d, x: np.ndarray, u: float, duration: float, step: float) -> np.ndarray:
    """State after ``duration`` with u held, using ceil(duration/step) equal RK4 steps."""
    m = max(1, math.ceil(duration / step - 1e-9))
    h = duration / m
    for _ in range(m):
        x = rk4_step(rhs, d, x, u, h)
    return x


def _check_state(x: np.ndarray, t: float) -> None:
    norm = float(np.linalg.norm(x))
    if not math.isfinite(norm) or norm > config.TOLERANCES["overflow_guard"]:
        raise Divergence(t, norm)


def simulate_closed_loop(
    system: SystemModel,
    controller: Callable[[np.ndarray], float],
    x0,
    schedule: Schedule,
    disturbance: DisturbanceSpec | None = None,
    step: float | None = None,
) -> Trajectory:
    """
    Integrate the sampled-data loop u(t) = k(x(tau_i)) on [tau_i, tau_{i+1})
    over every interval of ``schedule``.
    """
    step = float(step or config.SIMULATION["step"])
    x = np.array(x0, dtype=float).reshape(-1)
    if x.shape != (system.n,):
        raise ValidationError(f"{system.name} has {system.n} states, x0 has {x.shape[0]}")
    if not np.all(np.isfinite(x)):
        raise ValidationError("x0 has non-finite entries")
    limit = config.SIMULATION["max_step_fraction"] * schedule.min_gap
    if step > limit * (1.0 + 1e-9):
        raise InvalidPerturbation(
            f"integration step {step:.3e} exceeds {config.SIMULATION['max_step_fraction']} "
            f"of the smallest sampling gap ({schedule.min_gap:.3e})"
        )

    tau = schedule.tau
    substeps = [max(1, math.ceil((tau[k + 1] - tau[k]) / step - 1e-9)) for k in range(len(tau) - 1)]
    total = sum(substeps) + 1
    l = system.l
    times = np.empty(total)
    states = np.empty((total, system.n))
    inputs = np.empty(total)
    flags = np.zeros(total, dtype=bool)
    dist = np.zeros((total, l))
    realize = (disturbance or DisturbanceSpec()).realizer(system.D_box)

    row = 0
    u = 0.0
    for k, m in enumerate(substeps):
        t0, t1 = float(tau[k]), float(tau[k + 1])
        u = float(controller(x))
        h = (t1 - t0) / m
        for j in range(m):
            t = t0 + j * h
            d = realize(t)
            times[row], states[row], inputs[row], dist[row] = t, x, u, d
            flags[row] = j == 0
            row += 1
            x = rk4_step(system.rhs, d, x, u, h)
            _check_state(x, t + h)
    times[row], states[row], inputs[row] = float(tau[-1]), x, float(controller(x))
    flags[row] = True
    dist[row] = realize(float(tau[-1]))

    for arr in (times, states, inputs, flags, dist):
        arr.setflags(write=False)
    return Trajectory(times=times, states=states, inputs=inputs, sample_flags=flags, disturbance=dist)


def simulate_many(
    system: SystemModel,
    controller: Callable[[np.ndarray], float],
    x0_list,
    schedule: Schedule,
    disturbances=None,
    step: float | None = None,
    threads: int | None = None,
) -> list[Trajectory]:
    """
    One trajectory per (x0, disturbance) pair, run concurrently and
    returned in x0-major order. Any failure is re-raised.
    """
    disturbances = list(disturbances or [DisturbanceSpec()])
    jobs = []
    for i, x0 in enumerate(x0_list):
        for j, dist in enumerate(disturbances):
            jobs.append(
                ((i, j), lambda x0=x0, dist=dist: simulate_closed_loop(system, controller, x0, schedule, dist, step))
            )
    outcomes = run_batch(jobs, threads=threads)
    for outcome in outcomes:
        if not outcome.ok:
            raise outcome.error
    return [o.value for o in outcomes]
