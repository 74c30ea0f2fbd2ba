"""
Perturbed sampling schedules tau_{i+1} = tau_i + r exp(-w(tau_i)), tau_0 = 0.
"""

import logging
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from sdforward.errors import InvalidPerturbation

logger = logging.getLogger(__name__)

LN2 = math.log(2.0)


def paper_sine(t: float) -> float:
    """ln(2 / (1 + |sin t|)), taking values in [0, ln 2]."""
    return math.log(2.0 / (1.0 + abs(math.sin(t))))


@dataclass(frozen=True)
class Perturbation:
    """
    w as a function of time or as a per-sample sequence.

    A sequence holds its last value past its end.
    """

    label: str
    func: Callable[[float], float] | None = None
    values: tuple = ()

    def __call__(self, t: float, index: int) -> float:
        if self.func is not None:
            return float(self.func(t))
        return float(self.values[min(index, len(self.values) - 1)])


def parse_perturbation(spec) -> Perturbation:
    """
    Named specs: ``zero``, ``const:v``, ``paper_sine``, ``random:seed``
    (w uniform on [0, ln 4], constant on cells of 1/8 time unit); also callables and sequences.
    """
    if isinstance(spec, Perturbation):
        return spec
    if callable(spec):
        return Perturbation(label=getattr(spec, "__name__", "function"), func=spec)
    if isinstance(spec, (list, tuple, np.ndarray)):
        if len(spec) == 0:
            raise InvalidPerturbation("empty w sequence")
        return Perturbation(label="sequence", values=tuple(float(v) for v in spec))
    if not isinstance(spec, str):
        raise InvalidPerturbation(f"unsupported w spec {spec!r}")
    name, _, arg = spec.partition(":")
    if name == "zero" and not arg:
        return Perturbation(label="zero", func=lambda t: 0.0)
    if name == "paper_sine" and not arg:
        return Perturbation(label="paper_sine", func=paper_sine)
    if name == "const":
        try:
            value = float(arg)
        except ValueError as e:
            raise InvalidPerturbation(f"bad constant in w spec {spec!r}") from e
        if value < 0.0:
            raise InvalidPerturbation(f"w must be non-negative, got {value}")
        return Perturbation(label=spec, func=lambda t: value)
    if name == "random":
        try:
            seed = int(arg)
        except ValueError as e:
            raise InvalidPerturbation(f"bad seed in w spec {spec!r}") from e
        return Perturbation(label=spec, func=_RandomBank(seed))
    raise InvalidPerturbation(f"unknown w spec {spec!r}")


class _RandomBank:
    """Seeded piecewise-constant w on cells of 1/8 time unit; stable under repeated calls."""

    def __init__(self, seed: int, high: float = 2.0 * LN2):
        self.seed = seed
        self.high = high
        self._cache: dict[int, float] = {}

    def __call__(self, t: float) -> float:
        cell = int(math.floor(8.0 * t))
        if cell not in self._cache:
            rng = np.random.default_rng([self.seed, max(cell, 0)])
            self._cache[cell] = float(rng.uniform(0.0, self.high))
        return self._cache[cell]


def perturbation_label(spec) -> str:
    return parse_perturbation(spec).label


@dataclass(frozen=True)
class Schedule:
    r: float
    w: Perturbation
    tau: np.ndarray
    horizon: float

    @property
    def gaps(self) -> np.ndarray:
        return np.diff(self.tau)

    @property
    def min_gap(self) -> float:
        return float(self.gaps.min()) if len(self.tau) > 1 else self.r


def make_schedule(r: float, w, horizon: float) -> Schedule:
    """Sampling instants up to and including the first tau_i >= horizon."""
    if not r > 0.0:
        raise InvalidPerturbation(f"sampling period must be positive, got {r}")
    if not horizon > 0.0:
        raise InvalidPerturbation(f"horizon must be positive, got {horizon}")
    pert = parse_perturbation(w)
    tau = [0.0]
    while tau[-1] < horizon:
        wi = pert(tau[-1], len(tau) - 1)
        if not (wi >= 0.0 and math.isfinite(wi)):
            raise InvalidPerturbation(f"w({tau[-1]:.6g}) = {wi} is not a non-negative number")
        gap = r * math.exp(-wi)
        if tau[-1] + gap == tau[-1]:
            raise InvalidPerturbation(f"sampling gap {gap:.3e} vanishes at t={tau[-1]:.6g}")
        tau.append(tau[-1] + gap)
    arr = np.array(tau)
    arr.setflags(write=False)
    logger.debug(f"schedule r={r} w={pert.label}: {len(arr)} instants up to {arr[-1]:.6g}")
    return Schedule(r=float(r), w=pert, tau=arr, horizon=float(horizon))
