"""Model-based baseline observers: open loop and constant-gain output injection."""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from .battery import BatteryParams, BatteryState, TimeSeriesTrace, step_ecm, terminal_voltage

DEFAULT_GAIN = (0.1, 0.05, 0.05)
DIVERGENCE_BOUND = 100.0  # volts


class ObserverDivergence(ArithmeticError):
    pass


def open_loop_observe(
    params: BatteryParams,
    trace: TimeSeriesTrace,
    soc0: Optional[float] = None,
) -> np.ndarray:
    """Run the ECM on the trusted current alone; ``v_meas`` is never touched."""
    return closed_loop_observe(params, trace, (0.0, 0.0, 0.0), soc0=soc0, _use_meas=False)


def closed_loop_observe(
    params: BatteryParams,
    trace: TimeSeriesTrace,
    gain: Sequence[float] = DEFAULT_GAIN,
    soc0: Optional[float] = None,
    _use_meas: bool = True,
) -> np.ndarray:
    """Luenberger-style observer on ``(soc, v_rc1, v_rc2)``.

    The reported voltage at sample k is the a-priori estimate; the innovation
    ``v_meas[k] - v_hat[k]`` then corrects the state before propagation.
    """
    g = np.asarray(gain, dtype=float)
    use_meas = _use_meas and np.any(g != 0.0)
    state = BatteryState(float(trace.soc_true[0] if soc0 is None else soc0))
    out = np.empty(len(trace))
    for k in range(len(trace)):
        i_k = trace.current[k]
        v_hat = terminal_voltage(state, i_k, params)
        if not abs(v_hat) < DIVERGENCE_BOUND:
            raise ObserverDivergence(f"closed-loop observer diverged at t={trace.t[k]:g} s (v_hat={v_hat:g})")
        out[k] = v_hat
        if use_meas:
            innov = trace.v_meas[k] - v_hat
            state = BatteryState(
                min(max(state.soc + g[0] * innov, 0.0), 1.0),
                state.v_rc1 + g[1] * innov,
                state.v_rc2 + g[2] * innov,
            )
        state = step_ecm(state, i_k, params, trace.dt)
    return out


def check_gain(params: BatteryParams, gain: Sequence[float], soc0: float = 0.5, dt: float = 1.0, n: int = 600) -> float:
    """Steady error of the observer started 5% SOC off on a clean CC segment.

    Used as the config-time stabilisation check; ``inf`` on divergence.
    """
    from .battery import run_cccv

    tr = run_cccv(params, 1.0, soc0, dt, n * dt)
    try:
        est = closed_loop_observe(params, tr, gain, soc0=max(soc0 - 0.05, 0.0))
    except ObserverDivergence:
        return float("inf")
    return float(np.max(np.abs(est[-n // 10 :] - tr.v_true[-n // 10 :])))
