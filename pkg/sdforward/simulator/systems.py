"""
Plant models for the closed-loop simulator.

Right-hand sides accept either a single state (x: (n,), u: float,
d: (l,)) or row-stacked batches (x: (N, n), u: (N,), d: (N, l)), so the
same function feeds the integrator and the grid certificates.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from sdforward.design.stage import NonlinearityBound
from sdforward.errors import ValidationError

logger = logging.getLogger(__name__)

RHS = Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class SystemModel:
    name: str
    n: int
    rhs: RHS
    D_box: tuple = ()
    L_envelope: NonlinearityBound | None = None
    params: dict = field(default_factory=dict)

    @property
    def l(self) -> int:
        return len(self.D_box)

    def __call__(self, d, x, u) -> np.ndarray:
        return self.rhs(d, x, u)

    def spot_check(self, samples: int = 64, seed: int = 0, radius: float = 1.0) -> bool:
        """
        F(d, 0, 0) = 0 on sampled disturbances and a bounded finite-difference
        slope in x on a ball; logs and returns False on the first failure.
        """
        rng = np.random.default_rng(seed)
        lo = np.array([b[0] for b in self.D_box], dtype=float)
        hi = np.array([b[1] for b in self.D_box], dtype=float)
        for _ in range(samples):
            d = lo + (hi - lo) * rng.random(self.l)
            if not np.allclose(self.rhs(d, np.zeros(self.n), 0.0), 0.0, atol=1e-12):
                logger.warning(f"{self.name}: F(d, 0, 0) != 0 at d={d}")
                return False
            x = rng.uniform(-radius, radius, self.n)
            dx = 1e-6 * rng.standard_normal(self.n)
            u = float(rng.uniform(-radius, radius))
            slope = np.linalg.norm(self.rhs(d, x + dx, u) - self.rhs(d, x, u)) / np.linalg.norm(dx)
            if not np.isfinite(slope):
                logger.warning(f"{self.name}: unbounded slope near x={x}")
                return False
        return True


def _cols(x: np.ndarray):
    return tuple(x[..., k] for k in range(x.shape[-1]))


def _stack(*cols) -> np.ndarray:
    return np.stack(np.broadcast_arrays(*cols), axis=-1)


# ---------------------------------------------------------------------------
# Builtins
# ---------------------------------------------------------------------------


def example41_rhs(d, x, u):
    x1, x2, _ = _cols(np.asarray(x, dtype=float))
    u = np.asarray(u, dtype=float)
    return _stack(u, x1 + x1 * u, x2 + x1**2)


def example41_system() -> SystemModel:
    """x1' = u, x2' = x1 + x1 u, x3' = x2 + x1^2."""
    return SystemModel(
        name="example41",
        n=3,
        rhs=example41_rhs,
        L_envelope=NonlinearityBound.constant(1.0),
    )


def example42_system(k1: float = 0.5, k2: float = 0.5, gamma: float = 0.05) -> SystemModel:
    """
    x1' = k1 d1 x1 + u, x2' = k2 d2 x2 + x1, y' = x2 + d3 gamma sin(x1),
    with d in [-1, 1]^3.
    """

    def rhs(d, x, u):
        d1, d2, d3 = _cols(np.asarray(d, dtype=float))
        x1, x2, _ = _cols(np.asarray(x, dtype=float))
        return _stack(k1 * d1 * x1 + u, k2 * d2 * x2 + x1, x2 + d3 * gamma * np.sin(x1))

    return SystemModel(
        name="example42",
        n=3,
        rhs=rhs,
        D_box=((-1.0, 1.0),) * 3,
        params={"k1": k1, "k2": k2, "gamma": gamma},
    )


def scalar_chain_system() -> SystemModel:
    """x' = u."""
    return SystemModel(
        name="scalar_chain",
        n=1,
        rhs=lambda d, x, u: _stack(np.asarray(u, dtype=float)),
    )


def decay_system() -> SystemModel:
    """x' = -x, ignoring the input."""
    return SystemModel(name="decay", n=1, rhs=lambda d, x, u: -np.asarray(x, dtype=float))


BUILTIN_SYSTEMS = {
    "example41": example41_system,
    "example42": example42_system,
    "scalar_chain": scalar_chain_system,
    "decay": decay_system,
}


def builtin_system(name: str, **params) -> SystemModel:
    try:
        factory = BUILTIN_SYSTEMS[name]
    except KeyError as e:
        raise ValidationError(f"unknown builtin system {name!r}") from e
    return factory(**params)
