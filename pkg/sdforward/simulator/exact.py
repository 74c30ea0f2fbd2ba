"""Closed-form one-period map of the three-state chain under a held input."""

import numpy as np


def exact_step_example41(x, u: float, r: float) -> np.ndarray:
    """
    x1+ = x1 + u r
    x2+ = x2 + (x1 + u x1) r + (u + u^2) r^2 / 2
    x3+ = x3 + (x2 + x1^2) r + (x1 + 3 u x1) r^2 / 2 + (u + 3 u^2) r^3 / 6
    """
    if r < 0.0:
        raise ValueError(f"r must be non-negative, got {r}")
    x1, x2, x3 = (float(v) for v in x)
    return np.array(
        [
            x1 + u * r,
            x2 + (x1 + u * x1) * r + (u + u**2) * r**2 / 2.0,
            x3 + (x2 + x1**2) * r + (x1 + 3.0 * u * x1) * r**2 / 2.0 + (u + 3.0 * u**2) * r**3 / 6.0,
        ]
    )


def compose_exact_steps(x, segments) -> np.ndarray:
    """Apply ``exact_step_example41`` over consecutive (u, duration) segments."""
    x = np.asarray(x, dtype=float)
    for u, duration in segments:
        x = exact_step_example41(x, u, duration)
    return x
