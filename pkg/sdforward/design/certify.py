"""
Grid certificates for the three per-stage conditions.

Each certificate scans a deterministic grid (ellipsoid shell or solid
ellipsoid, input slab, disturbance box) plus a seeded batch of random
points, evaluates the condition in vectorized numpy, and reports the worst
point found. Grid chunks are evaluated concurrently and reduced in chunk
order, so the result does not depend on scheduling.
"""

import logging
from dataclasses import dataclass, field
from itertools import product
from typing import Callable, Sequence

import numpy as np

from sdforward.config import config
from sdforward.design.stage import DesignStage
from sdforward.errors import DimensionMismatch, InfeasibleDesign, ValidationError
from sdforward.linalg_core import chain_matrices, shell_factor
from sdforward.utils.batch import run_batch

logger = logging.getLogger(__name__)

CHUNK_POINTS = 2048

# f(d, x, u) -> (N, i), g(d, x, u) -> (N,) for row-stacked d, x, u
Evaluator = Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class GridSpec:
    angular: int = config.GRID["angular"]
    radial: int = config.GRID["radial"]
    slab: int = config.GRID["slab"]
    disturbance: int = config.GRID["disturbance"]
    interior: int = config.GRID["interior"]
    seed: int = config.GRID["seed"]

    @classmethod
    def parse(cls, text: str) -> "GridSpec":
        """Parse ``angular=32,interior=2000`` style overrides."""
        values = {}
        for item in filter(None, (s.strip() for s in text.split(","))):
            key, sep, raw = item.partition("=")
            key = key.strip()
            if not sep or key not in cls.__dataclass_fields__:
                raise ValidationError(f"bad grid setting {item!r}")
            try:
                values[key] = int(raw)
            except ValueError as e:
                raise ValidationError(f"grid setting {key} must be an integer") from e
            if values[key] < (0 if key in ("interior", "seed") else 1):
                raise ValidationError(f"grid setting {key} out of range: {values[key]}")
        return cls(**values)

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


@dataclass(frozen=True)
class StageNonlinearities:
    """Drift terms of one stage: x' = A x + b u + f, y' = c_{i+1}'x + g."""

    f: Evaluator
    g: Evaluator
    D_box: tuple = ()


@dataclass
class Certificate:
    condition: str
    passed: bool
    margin: float
    grid: dict
    worst_point: dict
    grid_points: int
    extra: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        record = {
            "condition": self.condition,
            "pass": self.passed,
            "margin": self.margin,
            "grid": self.grid,
            "worst_point": self.worst_point,
            "grid_points": self.grid_points,
        }
        record.update(self.extra)
        return record


# ---------------------------------------------------------------------------
# Point sets
# ---------------------------------------------------------------------------


def unit_sphere(n: int, angular: int) -> np.ndarray:
    """Deterministic points on the unit sphere in R^n via spherical angles."""
    if n == 1:
        return np.array([[1.0], [-1.0]])
    if n == 2:
        theta = np.linspace(0.0, 2.0 * np.pi, angular, endpoint=False)
        return np.column_stack([np.cos(theta), np.sin(theta)])
    rows = [np.eye(n)[0], -np.eye(n)[0]]
    inner = unit_sphere(n - 1, angular)
    for phi in np.linspace(0.0, np.pi, max(3, angular // 2 + 1))[1:-1]:
        rows.extend(np.column_stack([np.full(len(inner), np.cos(phi)), np.sin(phi) * inner]))
    return np.array(rows)


def _random_directions(rng: np.random.Generator, count: int, n: int) -> np.ndarray:
    v = rng.standard_normal((count, n))
    norms = np.linalg.norm(v, axis=1)
    norms[norms == 0.0] = 1.0
    return v / norms[:, None]


def shell_points(P, R: float, grid: GridSpec) -> np.ndarray:
    """Points with x'Px = R^2."""
    n = P.shape[0]
    rng = np.random.default_rng(grid.seed)
    v = np.vstack([unit_sphere(n, grid.angular), _random_directions(rng, grid.interior, n)])
    return R * v @ shell_factor(P).T


def solid_points(P, R: float, grid: GridSpec) -> np.ndarray:
    """Points with x'Px <= R^2: radial layers of the shell grid plus random interior."""
    n = P.shape[0]
    rng = np.random.default_rng(grid.seed)
    sphere = unit_sphere(n, grid.angular)
    layers = [np.zeros((1, n))]
    for rho in np.linspace(0.0, 1.0, max(2, grid.radial))[1:]:
        layers.append(rho * sphere)
    dirs = _random_directions(rng, grid.interior, n)
    radii = rng.random(grid.interior) ** (1.0 / n)
    layers.append(dirs * radii[:, None])
    return R * np.vstack(layers) @ shell_factor(P).T


def disturbance_points(D_box: Sequence, count: int) -> np.ndarray:
    if not D_box:
        return np.zeros((1, 0))
    axes = [np.linspace(lo, hi, count) if hi > lo else np.array([lo]) for lo, hi in D_box]
    return np.array(list(product(*axes)))


def _cartesian(x: np.ndarray, s: np.ndarray, d: np.ndarray):
    nx, ns, nd = len(x), len(s), len(d)
    X = np.repeat(x, ns * nd, axis=0)
    S = np.tile(np.repeat(s, nd), nx)
    D = np.tile(d, (nx * ns, 1))
    return X, S, D


# ---------------------------------------------------------------------------
# Scan / reduce
# ---------------------------------------------------------------------------


def _scan(x_points, s_points, d_points, score_fn, threads=None):
    """
    Evaluate ``score_fn(X, S, D)`` (larger is worse) on the Cartesian grid
    and return (worst score, x, s, d, total points).
    """
    chunks = [x_points[k : k + CHUNK_POINTS] for k in range(0, len(x_points), CHUNK_POINTS)]

    def job(chunk):
        def run():
            X, S, D = _cartesian(chunk, s_points, d_points)
            scores = score_fn(X, S, D)
            idx = int(np.argmax(scores))
            return float(scores[idx]), X[idx].copy(), float(S[idx]), D[idx].copy(), len(scores)

        return run

    outcomes = run_batch([(k, job(c)) for k, c in enumerate(chunks)], threads=threads)
    best = None
    total = 0
    for outcome in outcomes:
        if not outcome.ok:
            raise outcome.error
        score, x, s, d, count = outcome.value
        total += count
        if best is None or score > best[0]:
            best = (score, x, s, d)
    return best[0], best[1], best[2], best[3], total


def _point(x, u, d, **more) -> dict:
    point = {"x": [float(v) for v in x], "u": float(u), "d": [float(v) for v in d]}
    point.update({k: float(v) for k, v in more.items()})
    return point


def _rows_quadratic(Px: np.ndarray, Y: np.ndarray) -> np.ndarray:
    return np.einsum("ij,ij->i", Px, Y)


def check_dimensions(stage: DesignStage, nl: StageNonlinearities) -> None:
    """f must return (N, i) and g must return (N,) for a stage of dimension i."""
    X = np.zeros((2, stage.i))
    U = np.zeros(2)
    D = np.repeat(disturbance_points(nl.D_box, 1)[:1], 2, axis=0)
    try:
        f_shape = np.shape(nl.f(D, X, U))
        g_shape = np.shape(nl.g(D, X, U))
    except (ValueError, IndexError) as e:
        raise DimensionMismatch(f"stage {stage.i}: nonlinearities reject {stage.i}-state points: {e}") from e
    if f_shape != (2, stage.i):
        raise DimensionMismatch(f"stage {stage.i}: f returns shape {f_shape}, expected (N, {stage.i})")
    if g_shape != (2,):
        raise DimensionMismatch(f"stage {stage.i}: g returns shape {g_shape}, expected (N,)")


# ---------------------------------------------------------------------------
# Conditions
# ---------------------------------------------------------------------------


def certify_condition_33(
    stage: DesignStage,
    nl: StageNonlinearities,
    grid: GridSpec | None = None,
    threads: int | None = None,
) -> Certificate:
    """
    Strict decrease of x'Px on the shell x'Px = R^2 for every input in the
    slab |u - p'x| <= K|c'b| and every disturbance.
    """
    grid = grid or GridSpec()
    check_dimensions(stage, nl)
    A, b = chain_matrices(stage.i)
    P, p = stage.P, stage.p
    width = stage.K * abs(stage.cb)
    x_points = shell_points(P, stage.R, grid)
    v_points = np.linspace(-width, width, grid.slab)
    d_points = disturbance_points(nl.D_box, grid.disturbance)

    def score(X, V, D):
        U = X @ p + V
        drift = X @ A.T + nl.f(D, X, U) + np.outer(U, b)
        return _rows_quadratic(X @ P, drift)

    worst, x, v, d, total = _scan(x_points, v_points, d_points, score, threads)
    margin = -worst
    cert = Certificate(
        condition="3.3",
        passed=margin > 0.0,
        margin=margin,
        grid=grid.to_dict(),
        worst_point=_point(x, float(x @ p) + v, d),
        grid_points=total,
    )
    logger.info(f"stage {stage.i} shell decrease: margin={margin:.4e} pass={cert.passed}")
    return cert


def certify_condition_34(
    stage: DesignStage,
    nl: StageNonlinearities,
    grid: GridSpec | None = None,
    threads: int | None = None,
) -> Certificate:
    """|g + c'f| < K (c'b)^2 on the solid ellipsoid and slab."""
    grid = grid or GridSpec()
    check_dimensions(stage, nl)
    P, p, c = stage.P, stage.p, stage.c
    width = stage.K * abs(stage.cb)
    x_points = solid_points(P, stage.R, grid)
    v_points = np.linspace(-width, width, grid.slab)
    d_points = disturbance_points(nl.D_box, grid.disturbance)

    def score(X, V, D):
        U = X @ p + V
        return np.abs(nl.g(D, X, U) + nl.f(D, X, U) @ c)

    worst, x, v, d, total = _scan(x_points, v_points, d_points, score, threads)
    margin = stage.K * stage.cb**2 - worst
    cert = Certificate(
        condition="3.4",
        passed=margin > 0.0,
        margin=margin,
        grid=grid.to_dict(),
        worst_point=_point(x, float(x @ p) + v, d),
        grid_points=total,
    )
    logger.info(f"stage {stage.i} drift bound: margin={margin:.4e} pass={cert.passed}")
    return cert


def default_delta(stage: DesignStage) -> float:
    return config.DESIGN["delta_scale"] * float(np.linalg.eigvalsh(stage.P)[-1])


def certify_condition_35(
    stage: DesignStage,
    nl: StageNonlinearities,
    grid: GridSpec | None = None,
    threads: int | None = None,
) -> Certificate:
    """
    Dissipation inequality in (x, z) on the solid ellipsoid times
    |z| <= 1/omega, with u = p'x - K c'b omega z.

    The margin is min (RHS - LHS) / (|x|^2 + z^2) over the grid without
    the origin, where both sides vanish.
    """
    if stage.M is None:
        raise InfeasibleDesign(f"stage {stage.i}: dissipation check needs M")
    grid = grid or GridSpec()
    check_dimensions(stage, nl)
    A, b = chain_matrices(stage.i)
    P, p, c = stage.P, stage.p, stage.c
    M, K, omega, cb = stage.M, stage.K, stage.omega, stage.cb
    delta = stage.delta if stage.delta is not None else default_delta(stage)
    Acl = A + np.outer(b, p) + delta * np.eye(stage.i)

    x_points = solid_points(P, stage.R, grid)
    z_points = np.linspace(-1.0 / omega, 1.0 / omega, grid.slab)
    d_points = disturbance_points(nl.D_box, grid.disturbance)

    def score(X, Z, D):
        U = X @ p - K * cb * omega * Z
        F = nl.f(D, X, U)
        Px = X @ P
        lhs = Z * (M * nl.g(D, X, U) + M * (F @ c) - K * cb * omega * (Px @ b))
        rhs = (M * K * cb**2 * omega - delta) * Z**2 - _rows_quadratic(Px, X @ Acl.T + F)
        weight = np.einsum("ij,ij->i", X, X) + Z**2
        out = np.full(len(Z), -np.inf)
        nz = weight > 0.0
        out[nz] = -(rhs[nz] - lhs[nz]) / weight[nz]
        return out

    worst, x, z, d, total = _scan(x_points, z_points, d_points, score, threads)
    margin = -worst
    cert = Certificate(
        condition="3.5",
        passed=margin > 0.0,
        margin=margin,
        grid=grid.to_dict(),
        worst_point=_point(x, float(x @ p) - K * cb * omega * z, d, z=z),
        grid_points=total,
        extra={"delta": delta, "M": M},
    )
    logger.info(f"stage {stage.i} dissipation: margin={margin:.4e} delta={delta:.3e} pass={cert.passed}")
    return cert


def certify_stage(stage, nl, grid=None, threads=None) -> list[Certificate]:
    certs = [
        certify_condition_33(stage, nl, grid, threads),
        certify_condition_34(stage, nl, grid, threads),
    ]
    if stage.M is not None:
        certs.append(certify_condition_35(stage, nl, grid, threads))
    return certs


# ---------------------------------------------------------------------------
# Chain systems
# ---------------------------------------------------------------------------


def chain_stage_nonlinearities(rhs: Callable, n: int, j: int, D_box: Sequence = ()) -> StageNonlinearities:
    """
    Split a feedforward chain x' = A_n x + b_n u + phi(d, x, u) into the
    stage-j drift terms: f = phi_1..j and g = phi_{j+1}, evaluated with the
    states beyond x_j set to zero.

    ``rhs`` must accept row-stacked arrays (d: (N, l), x: (N, n), u: (N,)).
    """
    if not 1 <= j < n:
        raise ValidationError(f"stage {j} does not exist in a {n}-state chain")
    A, b = chain_matrices(n)

    def phi(D, X, U):
        full = np.zeros((X.shape[0], n))
        full[:, :j] = X
        return rhs(D, full, U) - full @ A.T - np.outer(U, b)

    return StageNonlinearities(
        f=lambda D, X, U: phi(D, X, U)[:, :j],
        g=lambda D, X, U: phi(D, X, U)[:, j],
        D_box=tuple(D_box),
    )
