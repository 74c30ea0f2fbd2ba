"""
sdforward: sampled-data forwarding controllers for feedforward nonlinear systems.
"""

from sdforward.config import config
from sdforward.controller import ControllerSpec, recursive_feedback
from sdforward.design import GainSchedule, certify_stage, lemma36_constants, synthesize_schedule
from sdforward.predictor import DelaySpec, predict_state, simulate_delayed_loop
from sdforward.scenario import Scenario, parse_scenario, serialize_scenario
from sdforward.simulator import make_schedule, masp_search, simulate_closed_loop

__all__ = [
    "config",
    "ControllerSpec",
    "recursive_feedback",
    "GainSchedule",
    "certify_stage",
    "lemma36_constants",
    "synthesize_schedule",
    "DelaySpec",
    "predict_state",
    "simulate_delayed_loop",
    "Scenario",
    "parse_scenario",
    "serialize_scenario",
    "make_schedule",
    "masp_search",
    "simulate_closed_loop",
]
