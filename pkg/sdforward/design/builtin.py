"""
Closed-form designs for the two worked systems.

* The three-state chain x1' = u, x2' = x1 + x1 u, x3' = x2 + x1^2: analytic
  feasibility windows for the stage radii/gains and the two published
  gain sets (a conservative one meeting the windows and a faster one).
* The two-state uncertain plant x1' = k1 d1 x1 + u, x2' = k2 d2 x2 + x1
  with an integrator y' = x2 + d3 g(x): P, p, q in closed form, the
  decay check over the disturbance box and the (K, M) window.
"""

import logging
import math
from typing import NamedTuple

import numpy as np

from sdforward.design.stage import DesignStage, GainSchedule, make_stage
from sdforward.errors import SmallGainViolated
from sdforward.linalg_core import as_matrix, as_vector, chain_matrices

logger = logging.getLogger(__name__)

SQRT2 = math.sqrt(2.0)

# Stage data shared by both gain sets of the three-state chain.
CHAIN3_P1 = [[1.0]]
CHAIN3_P1_GAIN = [-1.0]
CHAIN3_P2 = [[1.0, 1.0], [1.0, 2.0]]
CHAIN3_P2_GAIN = [-2.0, -2.0]


# ---------------------------------------------------------------------------
# Three-state chain
# ---------------------------------------------------------------------------


def example41_stage1_feasible(R: float, K: float) -> bool:
    """R^2/(1-R) < K < R and R + K < 1."""
    if not 0.0 < R < 1.0:
        return False
    return R**2 / (1.0 - R) < K < R and R + K < 1.0


def example41_stage2_feasible(R: float, K: float) -> bool:
    """
    4R^2/(1 - 2 sqrt2 R) < K < 2R(1 - 2(2 + sqrt2)R)/(R + 1) and
    (4 + 2 sqrt2)R + (3 - 2 sqrt2)R^2 < 1.
    """
    if R <= 0.0 or 1.0 - 2.0 * SQRT2 * R <= 0.0:
        return False
    lower = 4.0 * R**2 / (1.0 - 2.0 * SQRT2 * R)
    upper = 2.0 * R * (1.0 - 2.0 * (2.0 + SQRT2) * R) / (R + 1.0)
    growth = (4.0 + 2.0 * SQRT2) * R + (3.0 - 2.0 * SQRT2) * R**2
    return lower < K < upper and growth < 1.0


def chain3_stage_feasible(stage: DesignStage) -> bool | None:
    """
    Feasibility window check for a stage built on the three-state chain data;
    None when the stage does not use that data.
    """
    data = {1: (CHAIN3_P1, CHAIN3_P1_GAIN), 2: (CHAIN3_P2, CHAIN3_P2_GAIN)}.get(stage.i)
    if data is None or not (np.allclose(stage.P, data[0]) and np.allclose(stage.p, data[1])):
        return None
    window = example41_stage1_feasible if stage.i == 1 else example41_stage2_feasible
    return window(stage.R, stage.K)


def stage1_dissipation_weight(R: float, K: float) -> float:
    return K / (R + K)


def stage2_dissipation_weight(R: float, K: float) -> float:
    return K * (2.0 + (3.0 + 2.0 * SQRT2) * R) / (4.0 * R)


def chain3_schedule(R1, K1, R2, K2, K0=1.0, omega=1.0) -> GainSchedule:
    stage1 = make_stage(
        1, CHAIN3_P1, CHAIN3_P1_GAIN, K=K1, R=R1, omega=omega, M=stage1_dissipation_weight(R1, K1)
    )
    stage2 = make_stage(
        2, CHAIN3_P2, CHAIN3_P2_GAIN, K=K2, R=R2, omega=omega, M=stage2_dissipation_weight(R2, K2)
    )
    return GainSchedule(n=3, K0=K0, omega0=omega, stages=(stage1, stage2))


def conservative_gains() -> GainSchedule:
    """R1 = 3/8, K1 = 1/4, R2 = K2 = 1/20: inside both feasibility windows."""
    return chain3_schedule(3.0 / 8.0, 0.25, 0.05, 0.05)


def fast_gains() -> GainSchedule:
    """Same stage 1, with R2 = K2 = 1 for a much faster x3 transient."""
    return chain3_schedule(3.0 / 8.0, 0.25, 1.0, 1.0)


# ---------------------------------------------------------------------------
# Two-state uncertain plant
# ---------------------------------------------------------------------------


class Example42Design(NamedTuple):
    P: np.ndarray
    p: np.ndarray
    S: float
    q: float


class GainWindow(NamedTuple):
    K_lo: float
    K_hi: float
    M: float


def example42_design(k1: float, k2: float) -> Example42Design:
    if k1 < 0.0 or k2 < 0.0:
        raise ValueError(f"k1, k2 must be non-negative, got ({k1}, {k2})")
    a = 1.0 + k2
    P = as_matrix([[1.0, a], [a, a**2 + 1.0]], "P")
    S = 0.5 + k1 + 0.5 * a**2 * (k2 + k1) ** 2
    p = as_vector([-(1.0 + S + k2), -(1.0 + S * a)], "p")
    root = math.sqrt(a**2 + 4.0)
    q = (root - 1.0 - k2) / (2.0 + 2.0 * k2 + 2.0 * root)
    return Example42Design(P=P, p=p, S=S, q=q)


def example42_decay_check(k1: float, k2: float, samples: int = 10_000, seed: int = 0) -> tuple[bool, float]:
    """
    Check x'P(A+bp')x + x'P f(d, x) <= -q|x|^2 with f = (k1 d1 x1, k2 d2 x2).

    The form is affine in d, so only the corners of [-1, 1]^2 are scanned,
    on ``samples`` random unit directions. Returns (holds, worst value of
    the left side plus q, per unit |x|^2).
    """
    design = example42_design(k1, k2)
    A, b = chain_matrices(2)
    Acl = A + np.outer(b, design.p)
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((samples, 2))
    X /= np.linalg.norm(X, axis=1)[:, None]
    worst = -math.inf
    for d1 in (-1.0, 1.0):
        for d2 in (-1.0, 1.0):
            drift = Acl + np.diag([k1 * d1, k2 * d2])
            values = np.einsum("ij,ij->i", X @ design.P, X @ drift.T) + design.q
            worst = max(worst, float(values.max()))
    holds = worst <= 0.0
    logger.debug(f"decay check k1={k1} k2={k2}: worst={worst:.3e} holds={holds}")
    return holds, worst


def example42_threshold(P, p, c, q: float, a1: float, a2: float) -> float:
    """Upper limit on the linear growth L1 of f and g near the origin."""
    b = chain_matrices(2)[1]
    cb = abs(float(np.dot(c, b)))
    Pb = float(np.linalg.norm(np.asarray(P) @ b))
    return q * a1 * cb / ((1.0 + float(np.linalg.norm(c))) * a2 * Pb)


def example42_gain_window(L1, P, p, c, q, R, a1, a2, omega) -> GainWindow:
    """Open interval (K_lo, K_hi) for K and M at its midpoint."""
    if not L1 > 0.0:
        raise ValueError(f"L1 must be positive, got {L1}")
    threshold = example42_threshold(P, p, c, q, a1, a2)
    b = chain_matrices(2)[1]
    cb = abs(float(np.dot(c, b)))
    Pb = float(np.linalg.norm(np.asarray(P) @ b))
    norm_c = float(np.linalg.norm(c))
    K_lo = (1.0 + norm_c) * L1 * a2 * R / cb**2
    K_hi = q * a1 * R / (Pb * cb)
    if L1 >= threshold or K_lo >= K_hi:
        raise SmallGainViolated(f"L1 = {L1:.4e} is not below the small-gain threshold {threshold:.4e}")
    K = 0.5 * (K_lo + K_hi)
    M = K * cb * omega * Pb / ((1.0 + norm_c) * L1)
    return GainWindow(K_lo=K_lo, K_hi=K_hi, M=M)


def example42_stage(k1, k2, R, K, omega, M=None, delta=None) -> DesignStage:
    design = example42_design(k1, k2)
    return make_stage(2, design.P, design.p, K=K, R=R, omega=omega, M=M, delta=delta)
