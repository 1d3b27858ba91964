"""Koopman-based secure terminal-voltage estimation for Li-ion batteries under sensor attack."""

from .attack import AttackSpec, apply_attack, attack_active
from .battery import BatteryParams, BatteryState, TimeSeriesTrace, age_params, ocv_lookup, run_cccv, step_ecm, terminal_voltage
from .config import ScenarioConfig, load_config
from .estimator import SecureEstimator
from .koopman import KoopmanModel, WindowConfig, build_hankel, fit_koopman, predict_horizon
from .scenario import compute_metrics, emit_outputs, run_scenario

__version__ = "0.1.0"
