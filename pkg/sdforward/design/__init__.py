from sdforward.design.builtin import (
    chain3_stage_feasible,
    conservative_gains,
    example41_stage1_feasible,
    example41_stage2_feasible,
    example42_decay_check,
    example42_design,
    example42_gain_window,
    example42_stage,
    fast_gains,
)
from sdforward.design.certify import (
    Certificate,
    GridSpec,
    StageNonlinearities,
    certify_condition_33,
    certify_condition_34,
    certify_condition_35,
    certify_stage,
    chain_stage_nonlinearities,
)
from sdforward.design.constants import (
    ForwardingConstants,
    bounded_schedule,
    lemma36_constants,
    synthesize_schedule,
)
from sdforward.design.stage import (
    ChainData,
    DesignStage,
    GainSchedule,
    NonlinearityBound,
    make_stage,
)

__all__ = [
    "Certificate",
    "ChainData",
    "DesignStage",
    "ForwardingConstants",
    "GainSchedule",
    "GridSpec",
    "NonlinearityBound",
    "StageNonlinearities",
    "bounded_schedule",
    "certify_condition_33",
    "certify_condition_34",
    "certify_condition_35",
    "certify_stage",
    "chain3_stage_feasible",
    "chain_stage_nonlinearities",
    "conservative_gains",
    "example41_stage1_feasible",
    "example41_stage2_feasible",
    "example42_decay_check",
    "example42_design",
    "example42_gain_window",
    "example42_stage",
    "fast_gains",
    "lemma36_constants",
    "make_stage",
    "synthesize_schedule",
]
