"""Two-stage error compensation for the self-learning predictor.

Stage I estimates the Koopman approximation error ``e1`` from the last clean
prediction window. Stage II adds a higher-order term ``e2`` built either from
OCV differences over six SOC regions (empirical) or from per-region GP models.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

BOUNDARIES: tuple[float, ...] = (0.4, 0.66, 0.73, 0.75, 0.86)

Triple = tuple[Callable[[float], float], Callable[[float], float], Callable[[float], float]]


def _soc(s):
    return s


def _one_minus(s):
    return 1.0 - s


def _zero(s):
    return 0.0


def _one(s):
    return 1.0


def _soc_minus_one(s):
    return s - 1.0


# gains on (e1, docv, d2ocv) inside region j
L_FUNCS: dict[int, Triple] = {
    1: (_one_minus, _zero, _zero),
    2: (_soc, _one_minus, _soc),
    3: (_one_minus, _one_minus, _soc),
    4: (_soc, _one_minus, _soc),
    5: (_one_minus, _one_minus, _soc),
    6: (_soc, _one_minus, _soc),
}

# e1 carried into region j from region j-1, keyed by j
M_FUNCS: dict[int, Triple] = {
    2: (_soc, _soc, _soc),
    3: (_one, _one_minus, _soc),
    4: (_soc_minus_one, _one_minus, _soc),
    5: (_one, _zero, _zero),
    6: (_one_minus, _soc, _soc),
}


class CorrectionError(ValueError):
    pass


class CorrectorConfigError(CorrectionError):
    pass


@dataclass(frozen=True)
class RegionTable:
    boundaries: tuple[float, ...] = BOUNDARIES
    l_funcs: Mapping[int, Triple] = dataclasses.field(default_factory=lambda: dict(L_FUNCS))
    m_funcs: Mapping[int, Triple] = dataclasses.field(default_factory=lambda: dict(M_FUNCS))

    @property
    def n_regions(self) -> int:
        return len(self.boundaries) + 1

    def region(self, soc: float) -> int:
        return soc_region(soc, self.boundaries)


DEFAULT_TABLE = RegionTable()


@dataclass
class CorrectionState:
    e1: float
    region: int
    ocv_prev: Optional[float] = None
    docv_prev: Optional[float] = None
    mode: str = "empirical"
    switches: list = dataclasses.field(default_factory=list)


def soc_region(soc: float, boundaries: Sequence[float] = BOUNDARIES) -> int:
    """1-based region index; intervals are lower-inclusive and soc=1 is in the last one."""
    j = 1
    for b in boundaries:
        if soc >= b:
            j += 1
    return j


def ocv_differences(state: CorrectionState, ocv_now: float) -> tuple[float, float, CorrectionState]:
    """One-step OCV difference and its change, zero until enough history exists."""
    docv = 0.0 if state.ocv_prev is None else ocv_now - state.ocv_prev
    if state.ocv_prev is None or state.docv_prev is None:
        d2ocv = 0.0
    else:
        d2ocv = docv - state.docv_prev
    new = dataclasses.replace(state, ocv_prev=ocv_now, docv_prev=None if state.ocv_prev is None else docv)
    return docv, d2ocv, new


class OcvTracker:
    """Streaming version of :func:`ocv_differences` used inside the estimator loop."""

    def __init__(self):
        self.ocv_prev: Optional[float] = None
        self.docv_prev: Optional[float] = None

    def update(self, ocv_now: float) -> tuple[float, float]:
        docv = 0.0 if self.ocv_prev is None else ocv_now - self.ocv_prev
        d2ocv = 0.0 if self.docv_prev is None else docv - self.docv_prev
        if self.ocv_prev is not None:
            self.docv_prev = docv
        self.ocv_prev = ocv_now
        return docv, d2ocv


def stage1_error(nominal_residuals: Sequence[float]) -> float:
    r = np.asarray(nominal_residuals, dtype=float)
    if r.size == 0:
        raise CorrectionError("no nominal residuals to estimate the Stage I error from")
    return float(np.mean(r))


def empirical_e2(e1: float, soc: float, docv: float, d2ocv: float, table: RegionTable = DEFAULT_TABLE) -> float:
    l1, l2, l3 = table.l_funcs[table.region(soc)]
    return l1(soc) * e1 + l2(soc) * docv + l3(soc) * d2ocv


def region_switch_update(
    e1_prev: float,
    soc: float,
    docv: float,
    d2ocv: float,
    j_prev: int,
    j_new: int,
    table: RegionTable = DEFAULT_TABLE,
) -> float:
    if j_new != j_prev + 1 or j_new not in table.m_funcs:
        raise CorrectionError(f"only forward switches between adjacent regions are defined, got {j_prev}->{j_new}")
    m1, m2, m3 = table.m_funcs[j_new]
    return m1(soc) * e1_prev + m2(soc) * docv + m3(soc) * d2ocv


def secure_estimate_step(
    v_p: float,
    ctx: CorrectionState,
    soc: float,
    docv: float,
    d2ocv: float,
    table: RegionTable = DEFAULT_TABLE,
    gpr_bank=None,
    current: float = 0.0,
) -> tuple[float, CorrectionState]:
    """Stage II corrected estimate ``v_p + e2`` for one attacked sample."""
    if ctx.mode == "empirical":
        j_new = table.region(soc)
        e1 = ctx.e1
        switches = ctx.switches
        if j_new > ctx.region:
            for j in range(ctx.region + 1, j_new + 1):
                e1 = region_switch_update(e1, soc, docv, d2ocv, j - 1, j, table)
            switches = switches + [(j_new, soc)]
        elif j_new < ctx.region:
            raise CorrectionError(f"SOC region moved backwards ({ctx.region}->{j_new}); discharge is not supported")
        ctx = dataclasses.replace(ctx, e1=e1, region=j_new, switches=switches)
        return v_p + empirical_e2(e1, soc, docv, d2ocv, table), ctx
    if ctx.mode == "gpr":
        if not gpr_bank:
            raise CorrectorConfigError("GPR corrector selected but no model bank was loaded")
        from .gpr import gpr_e2

        v_bar = v_p + ctx.e1
        e2 = gpr_e2(gpr_bank, (current, soc, v_bar, ctx.e1), table)
        return v_p + e2, dataclasses.replace(ctx, region=table.region(soc))
    raise CorrectorConfigError(f"unknown corrector {ctx.mode!r}")
