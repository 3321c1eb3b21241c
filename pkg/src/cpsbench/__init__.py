"""Co-simulation of cart-pole plants closed over a round-based low-power wireless bus."""
from .config import ScenarioConfig, parse_config, write_config
from .control import (ConsensusController, LinearModel, LqrDesign, LQRController,
                      build_augmented_sync_design, consensus_input, discretize, linearize,
                      lqr_gain, predict_state, solve_dare, stabilizing_inputs, sync_error)
from .engine import loop_delay, playback_trace, run_scenario
from .metrics import MetricsReport, compute_metrics, sync_metric
from .network import min_hop_delay, radio_duty_cycle, run_round, sample_loss
from .plant import (Disturbance, PlantParams, PlantState, SensorConfig, StateEstimator,
                    apply_actuation, cartpole_derivative, estimate_state, integrate_step, measure)

__all__ = [
    "ConsensusController", "Disturbance", "LQRController", "LinearModel", "LqrDesign",
    "MetricsReport", "PlantParams", "PlantState", "ScenarioConfig", "SensorConfig",
    "StateEstimator", "apply_actuation", "build_augmented_sync_design", "cartpole_derivative",
    "compute_metrics", "consensus_input", "discretize", "estimate_state", "integrate_step",
    "linearize", "loop_delay", "lqr_gain", "measure", "min_hop_delay", "parse_config",
    "playback_trace", "predict_state", "radio_duty_cycle", "run_round", "run_scenario",
    "sample_loss", "solve_dare", "stabilizing_inputs", "sync_error", "sync_metric",
    "write_config",
]
__version__ = "0.1.0"
