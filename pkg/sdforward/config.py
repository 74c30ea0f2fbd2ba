"""
Centralized configuration for sdforward.

All tunables are consolidated here. Individual modules should import from
this file instead of defining their own tolerances or paths.

Supports environment-based overrides via the FWD_ENV environment variable:
  - "development" (default): DEBUG logging
  - "production": INFO logging

Usage:
    from sdforward.config import config
    tol = config.TOLERANCES["residual"]
"""

import os


# ---------------------------------------------------------------------------
# Helpers
# ---------------------------------------------------------------------------


def _env(key: str, default: str = "") -> str:
    """Read an environment variable with a fallback default."""
    return os.environ.get(key, default)


def _env_bool(key: str, default: bool = False) -> bool:
    """Read a boolean environment variable (truthy: 1, true, yes)."""
    val = os.environ.get(key, "")
    if not val:
        return default
    return val.strip().lower() in ("1", "true", "yes")


def _env_int(key: str, default: int = 0) -> int:
    """Read an integer environment variable with a fallback."""
    val = os.environ.get(key, "")
    if not val:
        return default
    try:
        return int(val)
    except ValueError:
        return default


def _env_float(key: str, default: float = 0.0) -> float:
    """Read a float environment variable with a fallback."""
    val = os.environ.get(key, "")
    if not val:
        return default
    try:
        return float(val)
    except ValueError:
        return default


# ---------------------------------------------------------------------------
# Base Configuration
# ---------------------------------------------------------------------------


class _BaseConfig:
    """
    All settings live as class attributes for easy dot-access.
    Subclasses override per-environment values.
    """

    # ── Environment ───────────────────────────────────────────────────────
    ENV: str = _env("FWD_ENV", "development")
    LOG_LEVEL: str = _env("FWD_LOG_LEVEL", "DEBUG")

    # ── File Paths ────────────────────────────────────────────────────────
    _PROJECT_ROOT: str = os.path.abspath(os.path.join(os.path.dirname(__file__), ".."))

    OUTPUT_DIR: str = _env("FWD_OUT_DIR", os.path.join(_PROJECT_ROOT, "out"))
    SCENARIO_DIR: str = os.path.join(_PROJECT_ROOT, "scenarios")
    RUN_LOG: str = os.path.join(OUTPUT_DIR, "runs.log")
    RUN_STATS_CSV: str = os.path.join(OUTPUT_DIR, "run_stats.csv")

    # ── Batch Execution ───────────────────────────────────────────────────
    BATCH_THREADS: int = max(1, _env_int("FWD_THREADS", 4))
    SLOW_TESTS: bool = _env_bool("FWD_SLOW_TESTS", False)

    # ── Numerical Tolerances ──────────────────────────────────────────────
    TOLERANCES: dict = {
        "singular_pivot": 1e-12,  # relative pivot floor for linear solves
        "condition_max": 1e12,  # condition number above which a matrix is singular
        "residual": 1e-10,
        "bisection_rel": 1e-10,  # R* bisection
        "q_threshold": 1e-14,  # Q(R) below this selects the linear M formula
        "r_star_cap": 1e12,  # R* search stops here and reports +inf
        "masp_rel": 1e-3,
        "ball_slack": 1e-9,  # "remains in B(0, eps)" uses eps * (1 + slack)
        "overflow_guard": 1e12,
        "peak_slack": 1e-6,
        "monotone_slack": 1e-9,
    }

    # ── Certification Grids ───────────────────────────────────────────────
    GRID: dict = {
        "angular": 64,
        "radial": 16,
        "slab": 9,
        "disturbance": 5,
        "interior": 10000,
        "seed": 0,
    }

    # ── Simulation Defaults ───────────────────────────────────────────────
    SIMULATION: dict = {
        "step": 1e-3,
        "ball_epsilon": 1e-3,
        "horizon_fast": 100.0,
        "horizon_conservative": 1500.0,
        "max_step_fraction": 0.25,  # step <= min sampling gap * this
        "masp_probe_divisor": 1024,
        "delay_r_max": 0.2,
    }

    # ── Design Constants ──────────────────────────────────────────────────
    DESIGN: dict = {
        "c_fraction": 0.5,  # C = fraction * upper bound
        "r_shrink": 1e-3,  # R = R* (1 - shrink) when R* is the binding value
        "lambda_a20": 1.0,  # weight of q/(1+|p|) in the first R* bound
        "delta_scale": 1e-4,  # default delta relative to lambda_max(P)
    }

    # ── Exit Codes ────────────────────────────────────────────────────────
    EXIT_CODES: dict = {
        "success": 0,
        "error": 1,
        "validation": 2,
        "divergence": 3,
        "infeasible": 4,
        "io": 5,
    }


# ---------------------------------------------------------------------------
# Environment-Specific Overrides
# ---------------------------------------------------------------------------


class _DevelopmentConfig(_BaseConfig):
    """Development-specific overrides (default)."""

    ENV = "development"
    LOG_LEVEL: str = _env("FWD_LOG_LEVEL", "DEBUG")


class _ProductionConfig(_BaseConfig):
    """Production-specific overrides."""

    ENV = "production"
    LOG_LEVEL: str = _env("FWD_LOG_LEVEL", "INFO")


# ---------------------------------------------------------------------------
# Active Config Instance
# ---------------------------------------------------------------------------

_CONFIGS = {
    "development": _DevelopmentConfig,
    "production": _ProductionConfig,
}

_active_env = _env("FWD_ENV", "development").lower()
config: _BaseConfig = _CONFIGS.get(_active_env, _DevelopmentConfig)()

# Backward-compatible module-level aliases
TOLERANCES = config.TOLERANCES
GRID = config.GRID
SIMULATION = config.SIMULATION
