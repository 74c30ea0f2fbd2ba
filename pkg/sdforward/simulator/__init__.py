from sdforward.simulator.exact import compose_exact_steps, exact_step_example41
from sdforward.simulator.integrate import (
    DisturbanceSpec,
    Trajectory,
    integrate_held,
    rk4_step,
    simulate_closed_loop,
    simulate_many,
)
from sdforward.simulator.masp import masp_search, probe_rate
from sdforward.simulator.metrics import (
    StabilityReport,
    gronwall_check,
    lyapunov_nonincrease,
    positive_invariance,
    stability_metrics,
    stage_invariants,
    time_to_ball,
    z_peak_bound,
)
from sdforward.simulator.schedule import Schedule, make_schedule, paper_sine, parse_perturbation
from sdforward.simulator.systems import (
    SystemModel,
    builtin_system,
    example41_system,
    example42_system,
    scalar_chain_system,
)

__all__ = [
    "DisturbanceSpec",
    "Schedule",
    "StabilityReport",
    "SystemModel",
    "Trajectory",
    "builtin_system",
    "compose_exact_steps",
    "exact_step_example41",
    "example41_system",
    "example42_system",
    "gronwall_check",
    "integrate_held",
    "lyapunov_nonincrease",
    "make_schedule",
    "masp_search",
    "paper_sine",
    "parse_perturbation",
    "positive_invariance",
    "probe_rate",
    "rk4_step",
    "scalar_chain_system",
    "simulate_closed_loop",
    "simulate_many",
    "stability_metrics",
    "stage_invariants",
    "time_to_ball",
    "z_peak_bound",
]
