"""
Design data for the recursive forwarding controller.

A DesignStage holds the constants used while the first ``i`` states are
inside the ellipsoid x'P_i x < R_i^2; a GainSchedule stacks the stages
for i = 1 .. n-1 together with the outer saturated law.
"""

import logging
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from sdforward.errors import DimensionMismatch, NotNegativeDefinite, NotPositiveDefinite
from sdforward.linalg_core import (
    as_matrix,
    as_vector,
    c_vector,
    chain_matrices,
    closed_loop_sum,
    is_neg_definite,
    is_pos_definite,
    sandwich_constants,
    selection_matrix,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class NonlinearityBound:
    """Non-decreasing envelope L(s) >= 0 bounding the drift nonlinearities."""

    func: Callable[[float], float]
    label: str = "custom"

    def __call__(self, s: float) -> float:
        return float(self.func(s))

    @classmethod
    def constant(cls, value: float) -> "NonlinearityBound":
        value = float(value)
        return cls(lambda s: value, label=f"const:{value!r}")

    @classmethod
    def zero(cls) -> "NonlinearityBound":
        return cls.constant(0.0)

    def is_zero(self) -> bool:
        return self.label in ("const:0.0", "const:-0.0")

    def scaled(self, factor: float) -> "NonlinearityBound":
        """L_j(s) = j L(s), the envelope used at forwarding stage j."""
        base = self.func
        if self.label.startswith("const:"):
            return NonlinearityBound.constant(factor * float(self.label[6:]))
        return NonlinearityBound(lambda s: factor * base(s), label=f"{factor!r}*{self.label}")

    def spot_check(self, upper: float = 10.0, points: int = 200) -> bool:
        """Non-negative and non-decreasing on a grid of [0, upper]."""
        values = np.array([self(s) for s in np.linspace(0.0, upper, points)])
        return bool(np.all(values >= 0.0) and np.all(np.diff(values) >= -1e-12))


@dataclass(frozen=True)
class DesignStage:
    """Constants of one forwarding stage (state dimension i, added state x_{i+1})."""

    i: int
    P: np.ndarray
    p: np.ndarray
    c: np.ndarray
    K: float
    R: float
    omega: float
    M: float | None = None
    delta: float | None = None

    @property
    def A(self) -> np.ndarray:
        return chain_matrices(self.i)[0]

    @property
    def b(self) -> np.ndarray:
        return chain_matrices(self.i)[1]

    @property
    def cb(self) -> float:
        return float(self.c @ self.b)

    def quadratic(self, x) -> float:
        x = np.asarray(x, dtype=float)
        return float(x @ self.P @ x)

    def inside(self, x) -> bool:
        """Strict membership x'Px < R^2 of the stage region."""
        return self.quadratic(x) < self.R**2

    def bound_term(self) -> float:
        """R_i (|p_i| / a_i + |c_i'b_i|) with a_i^2 = lambda_min(P_i)."""
        _, a2 = sandwich_constants(self.P)
        return self.R * (float(np.linalg.norm(self.p)) * a2 + abs(self.cb))

    def with_constants(self, **changes) -> "DesignStage":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        return {
            "i": self.i,
            "P": self.P.tolist(),
            "p": self.p.tolist(),
            "c": self.c.tolist(),
            "K": self.K,
            "R": self.R,
            "omega": self.omega,
            "M": self.M,
            "delta": self.delta,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "DesignStage":
        return make_stage(
            int(data["i"]),
            data["P"],
            data["p"],
            K=data["K"],
            R=data["R"],
            omega=data["omega"],
            M=data.get("M"),
            delta=data.get("delta"),
        )


def make_stage(i, P, p, K, R, omega, M=None, delta=None) -> DesignStage:
    """Validate a stage and derive its c-vector."""
    P = as_matrix(P, "P")
    p = as_vector(p, "p")
    if P.shape != (i, i) or p.shape != (i,):
        raise DimensionMismatch(f"stage {i}: P is {P.shape}, p has length {p.shape[0]}")
    if not np.allclose(P, P.T, atol=1e-12):
        raise NotPositiveDefinite(f"stage {i}: P is not symmetric")
    pos, lam = is_pos_definite(P)
    if not pos:
        raise NotPositiveDefinite(f"stage {i}: P has eigenvalue {lam:.3e}")
    A, b = chain_matrices(i)
    neg, margin = is_neg_definite(closed_loop_sum(P, A, b, p))
    if not neg:
        raise NotNegativeDefinite(f"stage {i}: closed-loop Lyapunov sum has eigenvalue {margin:.3e}")
    for name, value in (("K", K), ("R", R), ("omega", omega)):
        if not float(value) > 0.0:
            raise ValueError(f"stage {i}: {name} must be positive, got {value}")
    return DesignStage(
        i=i,
        P=P,
        p=p,
        c=c_vector(A, b, p),
        K=float(K),
        R=float(R),
        omega=float(omega),
        M=None if M is None else float(M),
        delta=None if delta is None else float(delta),
    )


@dataclass(frozen=True)
class GainSchedule:
    """Outer gains plus stages i = 1 .. n-1 of the recursive law."""

    n: int
    K0: float
    omega0: float
    stages: tuple = field(default_factory=tuple)

    def __post_init__(self):
        if self.n < 1:
            raise DimensionMismatch(f"system dimension must be >= 1, got {self.n}")
        if len(self.stages) != self.n - 1:
            raise DimensionMismatch(f"{self.n}-state schedule needs {self.n - 1} stages, got {len(self.stages)}")
        for expected, stage in enumerate(self.stages, start=1):
            if stage.i != expected:
                raise DimensionMismatch(f"stage index {stage.i} found where {expected} was expected")
        if not (self.K0 > 0.0 and self.omega0 > 0.0):
            raise ValueError("K0 and omega0 must be positive")

    def stage(self, i: int) -> DesignStage:
        return self.stages[i - 1]

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "K0": self.K0,
            "omega0": self.omega0,
            "stages": [s.to_dict() for s in self.stages],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "GainSchedule":
        return cls(
            n=int(data["n"]),
            K0=float(data["K0"]),
            omega0=float(data["omega0"]),
            stages=tuple(DesignStage.from_dict(s) for s in data["stages"]),
        )


@dataclass(frozen=True)
class ChainData:
    """Chain matrices A_i, b_i and selections Q_i of an n-state chain."""

    n: int
    A: tuple
    b: tuple
    Q: tuple

    @classmethod
    def build(cls, n: int) -> "ChainData":
        pairs = [chain_matrices(i) for i in range(1, n)]
        return cls(
            n=n,
            A=tuple(a for a, _ in pairs),
            b=tuple(b for _, b in pairs),
            Q=tuple(selection_matrix(i, n) for i in range(1, n)),
        )

    def c(self, i: int, p) -> np.ndarray:
        return c_vector(self.A[i - 1], self.b[i - 1], p)
