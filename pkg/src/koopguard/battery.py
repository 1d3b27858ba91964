"""Second-order RC equivalent-circuit battery model and CCCV charging.

State is ``(soc, v_rc1, v_rc2)``. Each RC branch is discretised with an exact
zero-order hold, so results do not depend on the step size beyond the
piecewise-constant current assumption.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.interpolate import PchipInterpolator

# Stand-in OCV curve for a prismatic NMC cell: steep below 0.4, flatter in the
# middle, steep again towards full charge. Knots include the SOC region
# boundaries used by the empirical corrector.
DEFAULT_OCV_TABLE: tuple[tuple[float, float], ...] = (
    (0.00, 3.000),
    (0.05, 3.300),
    (0.10, 3.430),
    (0.20, 3.540),
    (0.30, 3.610),
    (0.40, 3.665),
    (0.50, 3.700),
    (0.66, 3.780),
    (0.73, 3.840),
    (0.75, 3.862),
    (0.86, 3.975),
    (0.95, 4.090),
    (1.00, 4.200),
)


class BatteryDomainError(ValueError):
    """Raised for physically meaningless battery inputs."""


@dataclass(frozen=True)
class BatteryParams:
    capacity: float = 7.0  # Ah
    r0: float = 0.010
    r1: float = 0.015
    c1: float = 2000.0
    r2: float = 0.025
    c2: float = 20000.0
    ocv_table: tuple[tuple[float, float], ...] = DEFAULT_OCV_TABLE
    v_max: float = 4.2
    i_cutoff: float = 0.25

    def __post_init__(self):
        if self.capacity <= 0:
            raise BatteryDomainError(f"capacity must be positive, got {self.capacity}")
        for name in ("r0", "r1", "r2", "c1", "c2"):
            if getattr(self, name) <= 0:
                raise BatteryDomainError(f"{name} must be positive, got {getattr(self, name)}")
        table = tuple((float(s), float(v)) for s, v in self.ocv_table)
        if len(table) < 2:
            raise BatteryDomainError("ocv_table needs at least two anchor points")
        soc = np.array([s for s, _ in table])
        ocv = np.array([v for _, v in table])
        if soc[0] != 0.0 or soc[-1] != 1.0:
            raise BatteryDomainError("ocv_table must span soc 0 to 1")
        if np.any(np.diff(soc) <= 0) or np.any(np.diff(ocv) <= 0):
            raise BatteryDomainError("ocv_table must be strictly increasing in soc and ocv")
        object.__setattr__(self, "ocv_table", table)

    @property
    def tau1(self) -> float:
        return self.r1 * self.c1

    @property
    def tau2(self) -> float:
        return self.r2 * self.c2


@dataclass(frozen=True)
class BatteryState:
    soc: float
    v_rc1: float = 0.0
    v_rc2: float = 0.0


@dataclass
class TimeSeriesTrace:
    """Equally spaced samples; estimator columns are added by the harness."""

    dt: float
    t: np.ndarray
    current: np.ndarray
    soc_true: np.ndarray
    v_true: np.ndarray
    v_meas: np.ndarray
    columns: dict[str, np.ndarray] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.t)

    def copy(self) -> "TimeSeriesTrace":
        return TimeSeriesTrace(
            dt=self.dt,
            t=self.t.copy(),
            current=self.current.copy(),
            soc_true=self.soc_true.copy(),
            v_true=self.v_true.copy(),
            v_meas=self.v_meas.copy(),
            columns={k: v.copy() for k, v in self.columns.items()},
        )


_OCV_CACHE: dict[tuple, PchipInterpolator] = {}


def _ocv_interpolator(table: tuple[tuple[float, float], ...]) -> PchipInterpolator:
    interp = _OCV_CACHE.get(table)
    if interp is None:
        soc, ocv = zip(*table)
        interp = PchipInterpolator(np.array(soc), np.array(ocv), extrapolate=False)
        _OCV_CACHE[table] = interp
    return interp


def ocv_lookup(params: BatteryParams, soc):
    """Monotone piecewise-cubic (PCHIP) OCV at ``soc``; accepts scalars or arrays."""
    s = np.asarray(soc, dtype=float)
    if np.any(~np.isfinite(s)) or np.any(s < 0.0) or np.any(s > 1.0):
        raise BatteryDomainError(f"soc outside [0, 1]: {soc}")
    out = _ocv_interpolator(params.ocv_table)(s)
    return float(out) if out.ndim == 0 else out


def step_ecm(state: BatteryState, current: float, params: BatteryParams, dt: float) -> BatteryState:
    """Advance one sample with ``current`` held constant (positive = charging)."""
    if not dt > 0:
        raise BatteryDomainError(f"dt must be positive, got {dt}")
    soc = state.soc + dt * current / (3600.0 * params.capacity)
    soc = min(max(soc, 0.0), 1.0)
    a1 = np.exp(-dt / params.tau1)
    a2 = np.exp(-dt / params.tau2)
    v1 = state.v_rc1 * a1 + params.r1 * (1.0 - a1) * current
    v2 = state.v_rc2 * a2 + params.r2 * (1.0 - a2) * current
    return BatteryState(soc, float(v1), float(v2))


def terminal_voltage(state: BatteryState, current: float, params: BatteryParams) -> float:
    return ocv_lookup(params, state.soc) + state.v_rc1 + state.v_rc2 + params.r0 * current


def age_params(params: BatteryParams, aging_factor: float, scale_rc: bool = False) -> BatteryParams:
    """Scale the series resistance (and optionally the RC resistances) for aging."""
    if aging_factor < 1.0:
        raise BatteryDomainError(f"aging_factor must be >= 1, got {aging_factor}")
    changes = {"r0": params.r0 * aging_factor}
    if scale_rc:
        changes["r1"] = params.r1 * aging_factor
        changes["r2"] = params.r2 * aging_factor
    return dataclasses.replace(params, **changes)


def _cv_current(state: BatteryState, params: BatteryParams, v_target: float) -> float:
    # terminal voltage is affine in current once the RC states are propagated
    return (v_target - ocv_lookup(params, state.soc) - state.v_rc1 - state.v_rc2) / params.r0


def run_cccv(
    params: BatteryParams,
    i_cc: float,
    soc0: float,
    dt: float = 1.0,
    t_end: float = 3600.0,
    sensed_offset: Optional[Callable[[int, float], float]] = None,
    on_sample: Optional[Callable[[int, float, float, float], None]] = None,
) -> TimeSeriesTrace:
    """Charge at ``i_cc`` until the terminal voltage hits ``v_max``, then hold it.

    The CV phase ends when the holding current drops below ``i_cutoff``; one
    final row with zero current marks termination.

    ``sensed_offset(k, v_true)`` lets the charger see a corrupted voltage
    ``v_true + offset`` when deciding to leave the CC phase and when pinning the
    voltage in CV. ``None`` means the charger sees the true voltage.
    ``on_sample(k, current, soc, v_true)`` is called after each emitted row, so
    a co-simulated estimator can feed ``sensed_offset`` for the next step.
    """
    if not 0.0 <= soc0 <= 1.0:
        raise BatteryDomainError(f"soc0 outside [0, 1]: {soc0}")
    if i_cc <= 0:
        raise BatteryDomainError(f"i_cc must be positive, got {i_cc}")
    if not dt > 0:
        raise BatteryDomainError(f"dt must be positive, got {dt}")

    n_max = int(np.floor(t_end / dt + 1e-9)) + 1
    t, cur, soc, v = [], [], [], []
    state = BatteryState(soc0)
    in_cv = False
    for k in range(n_max):
        offset = 0.0
        if sensed_offset is not None:
            offset = sensed_offset(k, terminal_voltage(state, i_cc, params))
        if not in_cv:
            v_cc = terminal_voltage(state, i_cc, params)
            if v_cc + offset >= params.v_max or state.soc >= 1.0:
                in_cv = True
        if in_cv:
            i_k = min(_cv_current(state, params, params.v_max - offset), i_cc)
            if i_k < params.i_cutoff or state.soc >= 1.0:
                t.append(k * dt)
                cur.append(0.0)
                soc.append(state.soc)
                v.append(terminal_voltage(state, 0.0, params))
                if on_sample is not None:
                    on_sample(k, 0.0, soc[-1], v[-1])
                break
        else:
            i_k = i_cc
        t.append(k * dt)
        cur.append(i_k)
        soc.append(state.soc)
        v.append(terminal_voltage(state, i_k, params))
        if on_sample is not None:
            on_sample(k, i_k, soc[-1], v[-1])
        state = step_ecm(state, i_k, params, dt)

    v_true = np.array(v)
    return TimeSeriesTrace(
        dt=dt,
        t=np.array(t),
        current=np.array(cur),
        soc_true=np.array(soc),
        v_true=v_true,
        v_meas=v_true.copy(),
    )


def simulate_voltage(
    params: BatteryParams,
    currents: Sequence[float],
    soc0: float,
    dt: float,
    state0: Optional[BatteryState] = None,
) -> np.ndarray:
    """Terminal voltage of the ECM driven by a known current sequence."""
    state = state0 if state0 is not None else BatteryState(soc0)
    out = np.empty(len(currents))
    for k, i_k in enumerate(currents):
        out[k] = terminal_voltage(state, i_k, params)
        state = step_ecm(state, i_k, params, dt)
    return out
