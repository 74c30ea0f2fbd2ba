"""
Stability diagnostics computed from simulated trajectories: Lagrange and
attractivity statistics, the inter-sample Gronwall bound, the fitted
terminal decay rate and the per-stage invariants of the forwarding design.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from sdforward.config import config
from sdforward.design.stage import DesignStage
from sdforward.simulator.integrate import Trajectory

logger = logging.getLogger(__name__)

DEFAULT_EPSILONS = (1e-1, 1e-2, 1e-3)


@dataclass
class StabilityReport:
    sup_norm: float
    time_to_ball: dict
    lyapunov_ratio: float
    decay_rate_mu: float | None = None
    invariants: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "sup_norm": self.sup_norm,
            "time_to_ball": {repr(eps): _finite_or_none(t) for eps, t in self.time_to_ball.items()},
            "lyapunov_ratio": self.lyapunov_ratio,
            "decay_rate_mu": self.decay_rate_mu,
            "invariants": self.invariants,
        }


def _finite_or_none(value: float) -> float | None:
    return value if math.isfinite(value) else None


def time_to_ball(traj: Trajectory, eps: float) -> float:
    """First grid time after which |x| stays within eps (1 + slack); inf if never."""
    limit = eps * (1.0 + config.TOLERANCES["ball_slack"])
    outside = np.nonzero(traj.norms > limit)[0]
    if len(outside) == 0:
        return float(traj.times[0])
    last = int(outside[-1])
    if last == len(traj.times) - 1:
        return math.inf
    return float(traj.times[last + 1])


def entry_time(traj: Trajectory, eps: float) -> float:
    """First grid time with |x| <= eps, without requiring it to stay."""
    inside = np.nonzero(traj.norms <= eps)[0]
    return float(traj.times[inside[0]]) if len(inside) else math.inf


def stage_z(states: np.ndarray, stage: DesignStage) -> np.ndarray:
    """z = x_{i+1} + c'x for every row."""
    return states[:, stage.i] + states[:, : stage.i] @ stage.c


def stage_lyapunov(states: np.ndarray, stage: DesignStage, M: float) -> np.ndarray:
    x = states[:, : stage.i]
    return 0.5 * M * stage_z(states, stage) ** 2 + 0.5 * np.einsum("ij,jk,ik->i", x, stage.P, x)


def _terminal_mask(states: np.ndarray, stage: DesignStage) -> np.ndarray:
    x = states[:, : stage.i]
    quad = np.einsum("ij,jk,ik->i", x, stage.P, x)
    return (quad < stage.R**2) & (np.abs(stage_z(states, stage)) <= 1.0 / stage.omega)


def fit_decay_rate(traj: Trajectory, stage: DesignStage) -> float | None:
    """
    Least-squares rate mu of log V(t) = a - mu t on the longest final stretch
    inside the terminal region; None when the stretch is too short.
    """
    M = stage.M
    if M is None:
        logger.debug(f"stage {stage.i} has no M; fitting the decay rate with M = 1")
        M = 1.0
    mask = _terminal_mask(traj.states, stage)
    if not mask[-1]:
        return None
    outside = np.nonzero(~mask)[0]
    start = int(outside[-1]) + 1 if len(outside) else 0
    V = stage_lyapunov(traj.states[start:], stage, M)
    t = traj.times[start:]
    keep = V > 0.0
    if keep.sum() < 3:
        return None
    slope = np.polyfit(t[keep], np.log(V[keep]), 1)[0]
    return float(-slope)


def stability_metrics(
    trajs: Sequence[Trajectory],
    stage: DesignStage | None = None,
    epsilons: Sequence[float] = DEFAULT_EPSILONS,
) -> StabilityReport:
    if not trajs:
        raise ValueError("no trajectories to summarize")
    sup_norm = max(float(tr.norms.max()) for tr in trajs)
    ttb = {float(eps): max(time_to_ball(tr, eps) for tr in trajs) for eps in epsilons}
    ratios = [float(tr.norms.max()) / float(tr.norms[0]) for tr in trajs if tr.norms[0] > 0.0]
    mu = None
    if stage is not None:
        rates = [fit_decay_rate(tr, stage) for tr in trajs]
        rates = [r for r in rates if r is not None]
        mu = min(rates) if rates else None
    return StabilityReport(
        sup_norm=sup_norm,
        time_to_ball=ttb,
        lyapunov_ratio=max(ratios) if ratios else 0.0,
        decay_rate_mu=mu,
    )


# ---------------------------------------------------------------------------
# Inter-sample bound
# ---------------------------------------------------------------------------


def gronwall_check(traj: Trajectory, Q: float, G: float) -> tuple[bool, bool, float]:
    """
    (applicable, holds, worst_ratio) for |x(t) - x(a)| <= theta/(1-theta) |x(t)|
    with theta = (G + Q)(b - a) exp(Q (b - a)) on the segment [a, b] of
    ``traj``. Applicable needs theta < 1 and the derivative bound
    |x'| <= Q|x| + G|x(a)| along the segment (finite differences).
    """
    times, states = traj.times, traj.states
    a, b = float(times[0]), float(times[-1])
    theta = (G + Q) * (b - a) * math.exp(Q * (b - a))
    if theta >= 1.0:
        return False, False, math.inf

    norms = np.linalg.norm(states, axis=1)
    x_a = states[0]
    if len(times) > 1:
        rates = np.linalg.norm(np.diff(states, axis=0), axis=1) / np.diff(times)
        allowed = Q * np.maximum(norms[:-1], norms[1:]) + G * norms[0]
        if np.any(rates > allowed * (1.0 + config.TOLERANCES["monotone_slack"]) + 1e-15):
            return False, False, math.inf

    lhs = np.linalg.norm(states - x_a, axis=1)
    rhs = theta / (1.0 - theta) * norms
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(lhs == 0.0, 0.0, np.where(rhs > 0.0, lhs / rhs, math.inf))
    worst = float(ratio.max())
    return True, worst <= 1.0, worst


# ---------------------------------------------------------------------------
# Stage invariants
# ---------------------------------------------------------------------------


def _entry_index(traj: Trajectory, stage: DesignStage) -> int | None:
    x = traj.states[:, : stage.i]
    quad = np.einsum("ij,jk,ik->i", x, stage.P, x)
    hits = np.nonzero(traj.sample_flags & (quad < stage.R**2))[0]
    return int(hits[0]) if len(hits) else None


def positive_invariance(traj: Trajectory, stage: DesignStage) -> dict:
    """Once x'Px < R^2 at a sampling instant, it stays so at every later grid point."""
    idx = _entry_index(traj, stage)
    if idx is None:
        return {"entered": False, "holds": True, "entry_time": None, "violation_time": None}
    x = traj.states[idx:, : stage.i]
    quad = np.einsum("ij,jk,ik->i", x, stage.P, x)
    bad = np.nonzero(quad >= stage.R**2)[0]
    return {
        "entered": True,
        "holds": len(bad) == 0,
        "entry_time": float(traj.times[idx]),
        "violation_time": float(traj.times[idx + bad[0]]) if len(bad) else None,
    }


def z_peak_bound(traj: Trajectory, stage: DesignStage) -> dict:
    """|z(t)| <= max(|z at entry|, 1/omega) + slack after entering the stage region."""
    idx = _entry_index(traj, stage)
    if idx is None:
        return {"entered": False, "holds": True, "peak": None, "limit": None}
    z = np.abs(stage_z(traj.states[idx:], stage))
    limit = max(float(z[0]), 1.0 / stage.omega) + config.TOLERANCES["peak_slack"]
    peak = float(z.max())
    return {"entered": True, "holds": peak <= limit, "peak": peak, "limit": limit}


def lyapunov_nonincrease(traj: Trajectory, stage: DesignStage) -> dict:
    """V(t_{k+1}) <= V(t_k) for consecutive sampling instants both in the terminal region."""
    M = stage.M if stage.M is not None else 1.0
    states = traj.sample_states
    inside = _terminal_mask(states, stage)
    V = stage_lyapunov(states, stage, M)
    pairs = inside[:-1] & inside[1:]
    slack = config.TOLERANCES["monotone_slack"]
    rises = pairs & (V[1:] > V[:-1] * (1.0 + slack) + 1e-300)
    bad = np.nonzero(rises)[0]
    return {
        "pairs": int(pairs.sum()),
        "holds": len(bad) == 0,
        "first_rise_time": float(traj.sample_times[bad[0] + 1]) if len(bad) else None,
    }


def stage_invariants(traj: Trajectory, stage: DesignStage, certified: bool | None = None) -> dict:
    """
    Run the three monitors. They are guaranteed only for a stage that meets
    its conditions; with ``certified=False`` each record carries
    ``applicable: False`` and a failure is informational.
    """
    checks = {
        "positive_invariance": positive_invariance(traj, stage),
        "z_peak_bound": z_peak_bound(traj, stage),
        "lyapunov_nonincrease": lyapunov_nonincrease(traj, stage),
    }
    applicable = certified is not False
    for name, result in checks.items():
        result["applicable"] = applicable
        if applicable and not result["holds"]:
            logger.warning(f"stage {stage.i} {name} violated: {result}")
    return checks
