"""Sensor attack channel between the battery and the estimators."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .battery import TimeSeriesTrace

ATTACK_KINDS = ("none", "dos_hold", "fdi_bias")


class AttackSpecError(ValueError):
    pass


@dataclass(frozen=True)
class AttackSpec:
    kind: str = "none"
    t_start: float = 0.0
    t_end: Optional[float] = None  # None: open-ended
    bias: float = 0.0
    detection_delay: float = 0.0

    def __post_init__(self):
        if self.kind not in ATTACK_KINDS:
            raise AttackSpecError(f"unknown attack kind {self.kind!r}; expected one of {ATTACK_KINDS}")
        if self.t_end is not None and not self.t_start < self.t_end:
            raise AttackSpecError(f"t_start ({self.t_start}) must precede t_end ({self.t_end})")
        if self.detection_delay < 0:
            raise AttackSpecError("detection_delay must be nonnegative")

    @property
    def stop(self) -> float:
        return math.inf if self.t_end is None else self.t_end


def in_interval(t, spec: AttackSpec):
    """Elementwise membership of ``t`` in the half-open attack interval."""
    t = np.asarray(t, dtype=float)
    if spec.kind == "none":
        return np.zeros(t.shape, dtype=bool)
    return (t >= spec.t_start) & (t < spec.stop)


def attack_active(t: float, spec: AttackSpec) -> bool:
    """Detector oracle: flag raised ``detection_delay`` after onset, lowered at ``t_end``."""
    if spec.kind == "none":
        return False
    return spec.t_start + spec.detection_delay <= t < spec.stop


def apply_attack(trace: TimeSeriesTrace, spec: AttackSpec) -> TimeSeriesTrace:
    """Return a copy of ``trace`` whose ``v_meas`` column carries the attack.

    ``v_meas`` is rebuilt from ``v_true`` outside the interval. Inside it a DoS
    hold repeats the last clean sample before onset; a bias FDI adds ``bias`` to
    whatever ``v_meas`` held, so applying it twice doubles the bias.
    """
    if len(trace) == 0:
        raise AttackSpecError("cannot attack an empty trace")
    if spec.kind != "none" and spec.t_start < trace.t[0]:
        raise AttackSpecError(f"attack starts at {spec.t_start} s, before the trace ({trace.t[0]} s)")
    out = trace.copy()
    mask = in_interval(out.t, spec)
    if spec.kind == "none":
        out.v_meas = out.v_true.copy()
    elif spec.kind == "dos_hold":
        before = np.flatnonzero(out.t < spec.t_start)
        held = out.v_true[before[-1]] if before.size else out.v_true[0]
        out.v_meas = np.where(mask, held, out.v_true)
    else:
        out.v_meas = np.where(mask, out.v_meas + spec.bias, out.v_true)
    return out


def sensed_offset_fn(spec: AttackSpec, dt: float):
    """Offset seen by a charger that trusts the corrupted channel, for ``run_cccv``."""
    held: list[float] = []

    def offset(k: int, v_true: float) -> float:
        t = k * dt
        if spec.kind == "none" or not in_interval(t, spec):
            if spec.kind == "dos_hold" and t < spec.t_start:
                held[:] = [v_true]
            return 0.0
        if spec.kind == "fdi_bias":
            return spec.bias
        return (held[0] if held else v_true) - v_true

    return offset
