"""
Feedback laws of the sampled-data forwarding design.

All laws are pure functions of the sampled state; the simulator applies
them with zero-order hold between sampling instants.
"""

import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np

from sdforward.design.stage import DesignStage, GainSchedule
from sdforward.errors import DimensionMismatch, ValidationError

logger = logging.getLogger(__name__)

Feedback = Callable[[np.ndarray], float]


def sat(x: float) -> float:
    """x / max(1, |x|)."""
    return x / max(1.0, abs(x))


def scalar_saturated_feedback(x, K0: float, omega0: float) -> float:
    """-K0 sat(omega0 x1), the outer law of the recursive design."""
    return -K0 * sat(omega0 * float(x[0]))


def linear_feedback(p) -> Feedback:
    p = np.asarray(p, dtype=float)
    return lambda x: float(p @ np.asarray(x, dtype=float)[: p.shape[0]])


def forwarding_feedback(x, y: float, stage: DesignStage, fallback: Feedback) -> float:
    """
    fallback(x) when x'Px >= R^2, otherwise
    p'x - K c'b sat(omega (y + c'x)).
    """
    x = np.asarray(x, dtype=float)
    if x.shape != (stage.i,):
        raise DimensionMismatch(f"stage {stage.i} law evaluated on a state of shape {x.shape}")
    if not stage.inside(x):
        return float(fallback(x))
    return float(stage.p @ x) - stage.K * stage.cb * sat(stage.omega * (y + float(stage.c @ x)))


def recursive_feedback(x, schedule: GainSchedule) -> float:
    """
    Stage law of the largest i with x_1..x_i inside its region, or the
    outer law -K0 sat(omega0 x1) when no region contains the state.
    """
    x = np.asarray(x, dtype=float)
    if x.shape != (schedule.n,):
        raise DimensionMismatch(f"{schedule.n}-state law evaluated on a state of shape {x.shape}")
    for stage in reversed(schedule.stages):
        head = x[: stage.i]
        if stage.inside(head):
            if logger.isEnabledFor(logging.DEBUG):
                _flag_unnested(head, stage.i, schedule)
            return float(stage.p @ head) - stage.K * stage.cb * sat(
                stage.omega * (x[stage.i] + float(stage.c @ head))
            )
    return scalar_saturated_feedback(x, schedule.K0, schedule.omega0)


def _flag_unnested(head: np.ndarray, i: int, schedule: GainSchedule) -> None:
    outside = [s.i for s in schedule.stages[: i - 1] if not s.inside(head[: s.i])]
    if outside:
        logger.debug(f"state selects stage {i} but lies outside stage regions {outside}")


def bound_check(schedule: GainSchedule, G: float) -> tuple[float, bool]:
    """max{K0, max_i R_i(|p_i|/a_i + |c_i'b_i|)} and whether it is <= G."""
    bound = max([schedule.K0] + [stage.bound_term() for stage in schedule.stages])
    return bound, bound <= G


def example41_direct(x, gains: str = "fast") -> float:
    """
    Hand-simplified law of the three-state chain, written out branch by
    branch; used to cross-check ``recursive_feedback``.
    """
    x1, x2, x3 = (float(v) for v in x)
    if gains == "conservative":
        R2, inner = 0.05, 1.0 / 40.0
    elif gains == "fast":
        R2, inner = 1.0, 0.5
    else:
        raise ValueError(f"unknown gain set {gains!r}")
    if x2**2 + (x1 + x2) ** 2 < R2**2:
        return -2.0 * (x1 + x2) - inner * sat(x3 + x2 + 0.5 * x1)
    if x1**2 < (3.0 / 8.0) ** 2:
        return -x1 - 0.25 * sat(x2 + x1)
    return -sat(x1)


def example42_feedback(x, stage: DesignStage) -> float:
    """Single-stage law on (x1, x2, y) with the linear law p'x outside."""
    x = np.asarray(x, dtype=float)
    return forwarding_feedback(x[:2], float(x[2]), stage, linear_feedback(stage.p))


# ---------------------------------------------------------------------------
# ControllerSpec
# ---------------------------------------------------------------------------

CONTROLLER_KINDS = ("single_stage", "recursive_forwarding", "linear_outer", "saturated_outer")


@dataclass(frozen=True)
class ControllerSpec:
    """
    Serializable description of a feedback law.

    * recursive_forwarding: ``schedule``
    * single_stage: ``stage`` plus ``fallback`` (itself a ControllerSpec on x)
    * linear_outer: u = gain'x
    * saturated_outer: u = -K0 sat(omega0 x1)
    """

    kind: str
    schedule: GainSchedule | None = None
    stage: DesignStage | None = None
    fallback: "ControllerSpec | None" = None
    gain: tuple = ()
    K0: float = 1.0
    omega0: float = 1.0

    def __post_init__(self):
        if self.kind not in CONTROLLER_KINDS:
            raise ValidationError(f"unknown controller kind {self.kind!r}")
        if self.kind == "recursive_forwarding" and self.schedule is None:
            raise ValidationError("recursive_forwarding needs a gain schedule")
        if self.kind == "single_stage" and (self.stage is None or self.fallback is None):
            raise ValidationError("single_stage needs a stage and a fallback law")
        if self.kind == "linear_outer" and not self.gain:
            raise ValidationError("linear_outer needs a gain vector")

    @property
    def dimension(self) -> int | None:
        """State dimension the law expects, or None when any length works."""
        if self.kind == "recursive_forwarding":
            return self.schedule.n
        if self.kind == "single_stage":
            return self.stage.i + 1
        if self.kind == "linear_outer":
            return len(self.gain)
        return None

    def __call__(self, state) -> float:
        state = np.asarray(state, dtype=float)
        if self.kind == "recursive_forwarding":
            return recursive_feedback(state, self.schedule)
        if self.kind == "single_stage":
            i = self.stage.i
            return forwarding_feedback(state[:i], float(state[i]), self.stage, self.fallback)
        if self.kind == "linear_outer":
            return float(np.dot(self.gain, state[: len(self.gain)]))
        return scalar_saturated_feedback(state, self.K0, self.omega0)

    def to_dict(self) -> dict:
        data = {"kind": self.kind}
        if self.schedule is not None:
            data["schedule"] = self.schedule.to_dict()
        if self.stage is not None:
            data["stage"] = self.stage.to_dict()
        if self.fallback is not None:
            data["fallback"] = self.fallback.to_dict()
        if self.gain:
            data["gain"] = list(self.gain)
        if self.kind == "saturated_outer":
            data["K0"], data["omega0"] = self.K0, self.omega0
        return data

    @classmethod
    def from_dict(cls, data: dict) -> "ControllerSpec":
        return cls(
            kind=data["kind"],
            schedule=GainSchedule.from_dict(data["schedule"]) if "schedule" in data else None,
            stage=DesignStage.from_dict(data["stage"]) if "stage" in data else None,
            fallback=cls.from_dict(data["fallback"]) if "fallback" in data else None,
            gain=tuple(float(v) for v in data.get("gain", ())),
            K0=float(data.get("K0", 1.0)),
            omega0=float(data.get("omega0", 1.0)),
        )

    @classmethod
    def recursive(cls, schedule: GainSchedule) -> "ControllerSpec":
        return cls(kind="recursive_forwarding", schedule=schedule)

    @classmethod
    def single(cls, stage: DesignStage, fallback: "ControllerSpec | None" = None) -> "ControllerSpec":
        fallback = fallback or cls(kind="linear_outer", gain=tuple(stage.p.tolist()))
        return cls(kind="single_stage", stage=stage, fallback=fallback)
