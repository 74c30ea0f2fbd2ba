"""
Constructive choice of the stage constants (C, R, K, M, delta) from a
growth envelope L, plus the schedule-level helpers built on it.
"""

import logging
import math
from typing import NamedTuple, Sequence

import numpy as np

from sdforward.config import config
from sdforward.design.stage import DesignStage, GainSchedule, NonlinearityBound, make_stage
from sdforward.errors import InfeasibleDesign
from sdforward.linalg_core import (
    as_matrix,
    as_vector,
    c_vector,
    chain_matrices,
    decay_constant_q,
    induced_norm,
    sandwich_constants,
)

logger = logging.getLogger(__name__)


class ForwardingConstants(NamedTuple):
    C: float
    R_star: float
    R: float
    K: float
    M: float
    delta_hint: float
    q: float


class _StageGeometry(NamedTuple):
    a1: float
    a2: float
    q: float
    cb: float
    Pb: float
    norm_P: float
    norm_p: float
    norm_c: float
    lam_max: float


def _geometry(P: np.ndarray, p: np.ndarray) -> _StageGeometry:
    n = P.shape[0]
    A, b = chain_matrices(n)
    c = c_vector(A, b, p)
    a1, a2 = sandwich_constants(P)
    return _StageGeometry(
        a1=a1,
        a2=a2,
        q=decay_constant_q(P, A, b, p),
        cb=abs(float(c @ b)),
        Pb=float(np.linalg.norm(P @ b)),
        norm_P=induced_norm(P),
        norm_p=float(np.linalg.norm(p)),
        norm_c=float(np.linalg.norm(c)),
        lam_max=float(np.linalg.eigvalsh(P)[-1]),
    )


def _radius_bound(g: _StageGeometry, C: float) -> float:
    """Smallest of the three upper bounds that Q(R) a2 R must stay under."""
    lam = config.DESIGN["lambda_a20"]
    one_p = 1.0 + g.norm_p
    one_c = 1.0 + g.norm_c
    boundary = (g.q * g.cb) / (
        one_c * (lam * g.q / one_p + g.Pb) * (one_p + C * g.cb / g.a2) + one_p * g.norm_P * g.cb
    )
    slab = C * g.cb**2 / (one_c * (one_p * g.a2 + C * g.cb))
    dissipation = (g.q * g.a1 - C * g.Pb * g.cb) / (one_p * g.norm_P * g.a2 + g.norm_P * C * g.cb)
    logger.debug(f"radius bounds: boundary={boundary:.4e} slab={slab:.4e} dissipation={dissipation:.4e}")
    return min(boundary, slab, dissipation)


def _find_r_star(h, bound: float) -> float:
    """sup{R : h(R) < bound} for non-decreasing h with h(0) = 0."""
    tol = config.TOLERANCES
    cap = tol["r_star_cap"]
    hi = 1.0
    while h(hi) < bound:
        if hi >= cap:
            return math.inf
        hi *= 2.0
    lo = 0.0
    while hi - lo > tol["bisection_rel"] * hi:
        mid = 0.5 * (lo + hi)
        if h(mid) < bound:
            lo = mid
        else:
            hi = mid
    return lo


def lemma36_constants(
    L: NonlinearityBound,
    P,
    p,
    omega: float,
    R_requested: float,
) -> ForwardingConstants:
    """
    Pick C, R, K = CR, M and a delta hint for one stage so that the three
    stage conditions hold whenever |f|, |g| are bounded by
    L(|(x, u)|) (|x|^2 + |x||u|).
    """
    if not R_requested > 0.0:
        raise InfeasibleDesign(f"requested radius must be positive, got {R_requested}")
    P = as_matrix(P, "P")
    p = as_vector(p, "p")
    omega = float(omega)
    g = _geometry(P, p)

    c_upper = min(1.0, g.q * g.a1 / (g.Pb * g.cb))
    C = config.DESIGN["c_fraction"] * c_upper
    if g.q * g.a1 <= C * g.Pb * g.cb:
        raise InfeasibleDesign("no admissible C for this P and p")

    def Q(R: float) -> float:
        return L((1.0 + g.norm_p) * g.a2 * R + R * C * g.cb)

    bound = _radius_bound(g, C)
    if bound <= 0.0:
        raise InfeasibleDesign(f"radius bound {bound:.3e} is not positive")
    R_star = _find_r_star(lambda R: Q(R) * g.a2 * R, bound)

    if math.isinf(R_star):
        R = float(R_requested)
    else:
        R = min(float(R_requested), R_star * (1.0 - config.DESIGN["r_shrink"]))
    if not R > 0.0:
        raise InfeasibleDesign(f"R* = {R_star:.3e} leaves no admissible radius")
    K = C * R

    QR = Q(R)
    if QR > config.TOLERANCES["q_threshold"]:
        M = (C * g.cb * omega / ((1.0 + g.norm_c) * QR)) * (
            (g.norm_P * QR * g.a2 * R + g.Pb) / ((1.0 + g.norm_p) * g.a2 + C * g.cb)
        )
    else:
        M = C * R * g.Pb**2 * omega / (4.0 * g.q) + 1.0

    one_c, one_p = 1.0 + g.norm_c, 1.0 + g.norm_p
    alpha = (
        M * one_c * one_p * QR * g.a2 * R
        + K * g.norm_P * g.cb * omega * QR * g.a2 * R
        + K * g.cb * g.Pb * omega
        + M * one_c * QR * K * g.cb
    )
    beta = M * K * g.cb**2 * omega
    gamma = g.q - one_p * g.norm_P * QR * g.a2 * R
    delta_max = float(np.linalg.eigvalsh(np.array([[gamma, -0.5 * alpha], [-0.5 * alpha, beta]]))[0])
    if delta_max <= 0.0:
        raise InfeasibleDesign(f"no dissipation slack left (delta_max = {delta_max:.3e})")
    # x'P(delta I)x enters the dissipation check, hence the lambda_max(P) scaling
    delta_hint = 0.5 * delta_max / max(1.0, g.lam_max)

    logger.debug(
        f"stage constants: C={C:.4e} R*={R_star:.4e} R={R:.4e} K={K:.4e} M={M:.4e} delta={delta_hint:.3e}"
    )
    return ForwardingConstants(C=C, R_star=R_star, R=R, K=K, M=M, delta_hint=delta_hint, q=g.q)


def stage_from_constants(i: int, P, p, omega: float, consts: ForwardingConstants) -> DesignStage:
    return make_stage(i, P, p, K=consts.K, R=consts.R, omega=omega, M=consts.M, delta=consts.delta_hint)


def synthesize_schedule(
    n: int,
    P_list: Sequence,
    p_list: Sequence,
    L: NonlinearityBound,
    K0: float,
    omega0: float,
    omegas: Sequence[float],
    R_requested: Sequence[float],
) -> GainSchedule:
    """Run the constant construction for each stage with envelope L_j = j L."""
    if not (len(P_list) == len(p_list) == len(omegas) == len(R_requested) == n - 1):
        raise InfeasibleDesign(f"{n}-state chain needs {n - 1} entries per stage list")
    stages = []
    for j in range(1, n):
        P, p, omega = P_list[j - 1], p_list[j - 1], omegas[j - 1]
        consts = lemma36_constants(L.scaled(j), P, p, omega, R_requested[j - 1])
        stages.append(stage_from_constants(j, P, p, omega, consts))
        logger.info(f"stage {j}: R={consts.R:.4e} K={consts.K:.4e} M={consts.M:.4e}")
    return GainSchedule(n=n, K0=float(K0), omega0=float(omega0), stages=tuple(stages))


def bounded_schedule(
    schedule: GainSchedule,
    G: float,
    L: NonlinearityBound | None = None,
) -> GainSchedule:
    """
    Shrink radii until every branch of the recursive law is bounded by G.

    With an envelope the shrunk stage is re-derived (so M and delta stay
    valid); without one R and K are scaled together and M, delta dropped.
    """
    if not G > 0.0:
        raise InfeasibleDesign(f"input bound must be positive, got {G}")
    stages = []
    for stage in schedule.stages:
        term = stage.bound_term()
        if term <= G:
            stages.append(stage)
            continue
        R_new = stage.R * (G / term) * (1.0 - 1e-12)
        if L is not None:
            consts = lemma36_constants(L.scaled(stage.i), stage.P, stage.p, stage.omega, R_new)
            stage = stage_from_constants(stage.i, stage.P, stage.p, stage.omega, consts)
        else:
            factor = R_new / stage.R
            stage = stage.with_constants(R=R_new, K=stage.K * factor, M=None, delta=None)
        logger.info(f"stage {stage.i}: radius shrunk to {stage.R:.4e} for input bound {G}")
        stages.append(stage)
    return GainSchedule(
        n=schedule.n,
        K0=min(schedule.K0, float(G)),
        omega0=schedule.omega0,
        stages=tuple(stages),
    )
