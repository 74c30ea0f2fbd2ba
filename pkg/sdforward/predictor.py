"""
Predictor-based compensation of input and measurement delays for the
three-state chain x1' = u(t - tau), x2' = x1 + x1 u(t - tau), x3' = x2 + x1^2.

At each sampling instant tau_i = i r the controller only sees the delayed
measurement x(tau_i - T). The predictor maps it forward over the window
[tau_i - T - tau, tau_i] of past inputs to the state x(tau_i + tau) at
which the new input will take effect. The maps are the exact flow of the
chain, evaluated with closed-form integrals of the piecewise-constant input.
"""

import logging
import math
from bisect import bisect_right
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np

from sdforward.config import config
from sdforward.errors import Divergence, ValidationError, WindowNotCovered
from sdforward.simulator.integrate import Trajectory, rk4_step
from sdforward.simulator.systems import example41_rhs

logger = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# Input history
# ---------------------------------------------------------------------------


class InputHistory:
    """Piecewise-constant record: ``values[k]`` is held on [breakpoints[k], breakpoints[k+1])."""

    def __init__(self, breakpoints, values):
        breakpoints = [float(t) for t in breakpoints]
        values = [float(v) for v in values]
        if len(breakpoints) != len(values) + 1:
            raise ValidationError("history needs one more breakpoint than values")
        if any(b >= a for a, b in zip(breakpoints[1:], breakpoints[:-1])):
            raise ValidationError("history breakpoints must be strictly increasing")
        self.breakpoints = breakpoints
        self.values = values

    @classmethod
    def constant(cls, start: float, end: float, value: float) -> "InputHistory":
        return cls([start, end], [value])

    @property
    def start(self) -> float:
        return self.breakpoints[0]

    @property
    def end(self) -> float:
        return self.breakpoints[-1]

    def copy(self) -> "InputHistory":
        return InputHistory(list(self.breakpoints), list(self.values))

    def extend(self, until: float, value: float) -> None:
        """Hold ``value`` from the current end up to ``until``."""
        if until <= self.end:
            raise ValidationError(f"cannot extend history ending at {self.end} to {until}")
        self.breakpoints.append(float(until))
        self.values.append(float(value))

    def _tol(self, t: float) -> float:
        return 1e-9 * max(1.0, abs(t))

    def covers(self, a: float, b: float) -> bool:
        return a >= self.start - self._tol(a) and b <= self.end + self._tol(b)

    def value_at(self, t: float) -> float:
        if not self.covers(t, t):
            raise WindowNotCovered((t, t), (self.start, self.end))
        k = bisect_right(self.breakpoints, t) - 1
        return self.values[min(max(k, 0), len(self.values) - 1)]

    def segments(self, a: float, b: float) -> list[tuple[float, float]]:
        """(value, length) pieces of the record clipped to [a, b]."""
        if not self.covers(a, b):
            raise WindowNotCovered((a, b), (self.start, self.end))
        pieces = []
        for k, value in enumerate(self.values):
            lo = max(a, self.breakpoints[k])
            hi = min(b, self.breakpoints[k + 1])
            if hi > lo:
                pieces.append((value, hi - lo))
        return pieces

    def sup_abs(self, a: float, b: float) -> float:
        """sup |u| over the overlap of [a, b) with the record."""
        return max(
            (abs(v) for k, v in enumerate(self.values) if self.breakpoints[k] < b and self.breakpoints[k + 1] > a),
            default=0.0,
        )

    def prune(self, before: float) -> None:
        """Drop segments that end at or before ``before``."""
        drop = 0
        while drop < len(self.values) - 1 and self.breakpoints[drop + 1] <= before:
            drop += 1
        if drop:
            del self.breakpoints[:drop]
            del self.values[:drop]


class HistoryIntegrals(NamedTuple):
    """With U(s) = int_a^s u and W(s) = int_a^s (1 + u) U over the window [a, b]."""

    single: float  # int u
    double: float  # int U
    weighted: float  # int (1 + u) U
    triple: float  # int W
    squared: float  # int U^2


def history_integrals(history: InputHistory, a: float, b: float) -> HistoryIntegrals:
    """Exact integrals of the piecewise-constant record over [a, b]."""
    U = W = 0.0
    double = weighted = triple = squared = 0.0
    for v, h in history.segments(a, b):
        seg_U = U * h + v * h**2 / 2.0
        double += seg_U
        weighted += (1.0 + v) * seg_U
        triple += W * h + (1.0 + v) * (U * h**2 / 2.0 + v * h**3 / 6.0)
        squared += U**2 * h + U * v * h**2 + v**2 * h**3 / 3.0
        W += (1.0 + v) * seg_U
        U += v * h
    return HistoryIntegrals(single=U, double=double, weighted=weighted, triple=triple, squared=squared)


# ---------------------------------------------------------------------------
# Delays and prediction
# ---------------------------------------------------------------------------


def choose_sampling(tau: float, r_max: float | None = None) -> tuple[float, int]:
    """r = tau / l with l = max(ceil(5 tau), ceil(tau / r_max)), so r <= r_max."""
    if not tau > 0.0:
        raise ValidationError(f"input delay must be positive, got {tau}")
    r_max = r_max or config.SIMULATION["delay_r_max"]
    l = max(1, math.ceil(5.0 * tau - 1e-9), math.ceil(tau / r_max - 1e-9))
    return tau / l, l


@dataclass(frozen=True)
class DelaySpec:
    tau: float
    T: float
    r: float

    def __post_init__(self):
        if not (self.tau > 0.0 and self.T > 0.0 and self.r > 0.0):
            raise ValidationError(f"delays and sampling period must be positive: {self}")
        ratio = self.tau / self.r
        if abs(ratio - round(ratio)) > 1e-9 * max(1.0, ratio):
            raise ValidationError(f"tau / r = {ratio:.9g} is not an integer")
        if self.r > config.SIMULATION["delay_r_max"] * (1.0 + 1e-12):
            raise ValidationError(f"sampling period {self.r} above {config.SIMULATION['delay_r_max']}")

    @property
    def l(self) -> int:
        return int(round(self.tau / self.r))

    @property
    def window(self) -> float:
        return self.tau + self.T

    @classmethod
    def from_delays(cls, tau: float, T: float, r_max: float | None = None) -> "DelaySpec":
        r, l = choose_sampling(tau, r_max)
        logger.debug(f"tau={tau}: l={l}, r={r:.6g}")
        return cls(tau=tau, T=T, r=r)


def predict_state(x_meas, history: InputHistory, delays: DelaySpec, t: float | None = None) -> np.ndarray:
    """
    Predicted x(t + tau) from the measurement x(t - T) and the inputs
    recorded over [t - T - tau, t]; t defaults to the end of the record.
    """
    t = history.end if t is None else float(t)
    x1, x2, x3 = (float(v) for v in x_meas)
    h = delays.window
    ints = history_integrals(history, t - h, t)
    return np.array(
        [
            x1 + ints.single,
            x2 + h * x1 + x1 * ints.single + ints.weighted,
            x3 + h * (x2 + x1**2) + 0.5 * h**2 * x1 + 3.0 * x1 * ints.double + ints.triple + ints.squared,
        ]
    )


# ---------------------------------------------------------------------------
# Delayed closed loop
# ---------------------------------------------------------------------------


class PredictionRecord(NamedTuple):
    tau_i: float
    predicted: np.ndarray
    actual: np.ndarray | None  # x(tau_i + tau) when inside the horizon


@dataclass
class DelayedRun:
    trajectory: Trajectory
    predictions: list
    inputs: InputHistory
    delays: DelaySpec
    x0_history: Callable[[float], np.ndarray] = field(repr=False)

    def prediction_errors(self, after: float | None = None) -> np.ndarray:
        """|X(tau_i) - x(tau_i + tau)| for tau_i >= after (default T + tau)."""
        after = self.delays.window if after is None else after
        errs = [
            float(np.linalg.norm(rec.predicted - rec.actual))
            for rec in self.predictions
            if rec.actual is not None and rec.tau_i >= after - 1e-9
        ]
        return np.array(errs)


def _as_state_history(x0_history) -> Callable[[float], np.ndarray]:
    if callable(x0_history):
        return lambda s: np.asarray(x0_history(s), dtype=float)
    value = np.asarray(x0_history, dtype=float)
    if value.shape != (3,):
        raise ValidationError(f"initial state history must have 3 entries, got {value.shape}")
    return lambda s: value


def _as_input_history(u0_history, delays: DelaySpec) -> InputHistory:
    start = -delays.window
    if isinstance(u0_history, InputHistory):
        if not u0_history.covers(start, 0.0):
            raise WindowNotCovered((start, 0.0), (u0_history.start, u0_history.end))
        hist = u0_history.copy()
        hist.prune(start)
        return hist
    return InputHistory.constant(start, 0.0, float(u0_history))


def _merge_times(times, end: float) -> list[float]:
    merged = []
    for t in sorted(t for t in times if 0.0 <= t <= end + 1e-9 * max(1.0, end)):
        if not merged or t - merged[-1] > 1e-9 * max(1.0, abs(t)):
            merged.append(t)
    return merged


def _lookup(times: list[float], t: float) -> int:
    k = bisect_right(times, t + 1e-9 * max(1.0, abs(t))) - 1
    if k < 0 or abs(times[k] - t) > 1e-9 * max(1.0, abs(t)):
        raise ValidationError(f"time {t:.9g} is not on the event grid")
    return k


def simulate_delayed_loop(
    controller: Callable[[np.ndarray], float],
    delays: DelaySpec,
    x0_history,
    u0_history,
    horizon: float,
    step: float | None = None,
) -> DelayedRun:
    """
    Integrate the delayed chain under u(tau_i) = k(X(tau_i)) held on
    [tau_i, tau_i + r), with X the predicted state.
    The trajectory records the input reaching the plant, u(t - tau).
    """
    step = float(step or config.SIMULATION["step"])
    r, tau, T = delays.r, delays.tau, delays.T
    x_hist = _as_state_history(x0_history)
    record = _as_input_history(u0_history, delays)
    working = record.copy()

    n_samples = max(1, math.ceil(horizon / r - 1e-9))
    end = n_samples * r
    sample_times = [i * r for i in range(n_samples + 1)]
    events = _merge_times(
        sample_times
        + [t - T for t in sample_times]
        + [b + tau for b in record.breakpoints if b + tau > 0.0],
        end,
    )
    sample_idx = {_lookup(events, t) for t in sample_times}

    x = x_hist(0.0).copy()
    event_states = [None] * len(events)
    times, states, inputs, flags = [], [], [], []
    predictions: list[tuple[float, np.ndarray]] = []

    for k, t0 in enumerate(events):
        event_states[k] = x.copy()
        if k in sample_idx:
            t_meas = t0 - T
            if t_meas < -1e-9 * max(1.0, T):
                x_meas = x_hist(t_meas)
            else:
                x_meas = event_states[_lookup(events, max(t_meas, 0.0))]
            X = predict_state(x_meas, working, delays, t=t0)
            u_now = float(controller(X))
            predictions.append((t0, X))
            if t0 < end - 1e-9 * max(1.0, end):
                record.extend(t0 + r, u_now)
                working.extend(t0 + r, u_now)
                working.prune(t0 - T - tau - r)
        if k == len(events) - 1:
            times.append(t0)
            states.append(x.copy())
            inputs.append(record.value_at(t0 - tau))
            flags.append(k in sample_idx)
            break
        t1 = events[k + 1]
        applied = record.value_at(0.5 * (t0 + t1) - tau)
        m = max(1, math.ceil((t1 - t0) / step - 1e-9))
        h = (t1 - t0) / m
        for j in range(m):
            times.append(t0 + j * h)
            states.append(x.copy())
            inputs.append(applied)
            flags.append(j == 0 and k in sample_idx)
            x = rk4_step(example41_rhs, None, x, applied, h)
            norm = float(np.linalg.norm(x))
            if not math.isfinite(norm) or norm > config.TOLERANCES["overflow_guard"]:
                raise Divergence(t0 + (j + 1) * h, norm)

    records = []
    for t_i, X in predictions:
        target = t_i + tau
        actual = None
        if target <= end + 1e-9 * max(1.0, end):
            actual = event_states[_lookup(events, target)]
        records.append(PredictionRecord(tau_i=t_i, predicted=X, actual=actual))

    traj = Trajectory(
        times=np.array(times),
        states=np.array(states),
        inputs=np.array(inputs),
        sample_flags=np.array(flags, dtype=bool),
        disturbance=np.zeros((len(times), 0)),
    )
    logger.info(f"delayed loop tau={tau} T={T} r={r:.4g}: {len(records)} predictions, final |x|={norm_of(x):.3e}")
    return DelayedRun(trajectory=traj, predictions=records, inputs=record, delays=delays, x0_history=x_hist)


def norm_of(x) -> float:
    return float(np.linalg.norm(x))


def ugas_statistic(run: DelayedRun, t: float) -> float:
    """max_{s in [t-T, t]} |x(s)| + sup_{s in [t-T-tau, t)} |u(s)|."""
    T, tau = run.delays.T, run.delays.tau
    traj = run.trajectory
    lo = t - T
    mask = (traj.times >= lo - 1e-12) & (traj.times <= t + 1e-12)
    x_part = float(traj.norms[mask].max()) if mask.any() else 0.0
    if lo < 0.0:
        probes = np.linspace(lo, min(0.0, t), 33)
        x_part = max(x_part, max(norm_of(run.x0_history(s)) for s in probes))
    return x_part + run.inputs.sup_abs(t - T - tau, t)
