"""Causal sliding-window secure estimator (the outer loop of the secure scheme).

The estimator consumes one sample per call. A new Koopman model is fitted each
time a learning window fills; it then serves the next ``slide`` samples by
rolling its own state forward. While the attack flag is raised the measured
voltage is never read, and the learning data becomes the estimator's own
(corrected) output.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .correction import (
    DEFAULT_TABLE,
    CorrectionError,
    CorrectionState,
    CorrectorConfigError,
    OcvTracker,
    RegionTable,
    secure_estimate_step,
    stage1_error,
)
from .koopman import FeedbackStacks, KoopmanModel, WindowConfig, coulomb_count, fit_koopman

MODES = ("stage1", "empirical", "gpr")


class EstimatorError(RuntimeError):
    def __init__(self, message: str, t: Optional[float] = None):
        super().__init__(message if t is None else f"t={t:g} s: {message}")
        self.t = t


@dataclass(frozen=True)
class StepOutput:
    soc: float
    v_pred: Optional[float]
    v_bar: Optional[float] = None
    v_hat: Optional[float] = None
    e1: Optional[float] = None
    region: Optional[int] = None
    attack: bool = False


class SecureEstimator:
    """Online Koopman predictor with Stage I / Stage II corrected self-learning.

    ``mode`` picks what is fed back and reported under attack:

    * ``stage1``: feedback and estimate are ``v_p + e1``.
    * ``empirical``: feedback and estimate are ``v_p + e2`` from the OCV-based
      corrector.
    * ``gpr``: feedback is ``v_p + e1``; the estimate is ``v_p + e2`` from the
      per-region GP bank.
    """

    def __init__(
        self,
        cfg: WindowConfig,
        capacity: float,
        dt: float,
        soc0: float,
        mode: str = "empirical",
        table: RegionTable = DEFAULT_TABLE,
        ocv: Optional[Callable[[float], float]] = None,
        gpr_bank=None,
    ):
        if mode not in MODES:
            raise CorrectorConfigError(f"unknown corrector {mode!r}; expected one of {MODES}")
        if mode == "empirical" and ocv is None:
            raise CorrectorConfigError("the empirical corrector needs the OCV-SOC map")
        if mode == "gpr" and not gpr_bank:
            raise CorrectorConfigError("GPR corrector selected but no model bank was given")
        self.cfg = cfg
        self.capacity = capacity
        self.dt = dt
        self.mode = mode
        self.table = table
        self.ocv = ocv
        self.gpr_bank = gpr_bank

        self.k = -1
        self._soc = soc0
        self._u_prev: Optional[np.ndarray] = None
        self._feedback: list[float] = []
        self._inputs: list[tuple[float, float]] = []
        self._window_start = 0
        self.model: Optional[KoopmanModel] = None
        self._z: Optional[np.ndarray] = None
        self._ocv_tracker = OcvTracker()

        self._residuals: list[float] = []
        self._last_complete: Optional[list[float]] = None
        self._last_partial: Optional[list[float]] = None
        self.in_attack = False
        self.ctx: Optional[CorrectionState] = None
        self.n_fits = 0

    @property
    def window_start(self) -> int:
        return self._window_start

    def step(self, current: float, v_meas, attack: bool) -> StepOutput:
        """Process sample ``k``.

        ``v_meas`` is a number or a zero-argument callable; the callable is only
        invoked when ``attack`` is false.
        """
        self.k += 1
        k = self.k
        t = k * self.dt
        if k > 0:
            self._soc = coulomb_count(self._soc, self._u_prev[0], self.dt, self.capacity)
        soc = self._soc
        u = np.array([float(current), soc])

        docv = d2ocv = 0.0
        if self.ocv is not None:
            docv, d2ocv = self._ocv_tracker.update(self.ocv(soc))

        v_pred = None
        if self.model is not None:
            self._z = self.model.step(self._z, self._u_prev)
            v_pred = self.model.output(self._z)

        if attack:
            out = self._secure(t, soc, float(current), v_pred, docv, d2ocv)
            fb = out.v_hat if self.mode == "empirical" else out.v_bar
        else:
            self.in_attack = False
            meas = float(v_meas() if callable(v_meas) else v_meas)
            fb = meas
            if v_pred is not None:
                self._residuals.append(meas - v_pred)
            out = StepOutput(soc=soc, v_pred=v_pred, region=self.table.region(soc))

        self._feedback.append(fb)
        self._inputs.append((float(current), soc))
        self._u_prev = u
        if k == self._window_start + self.cfg.s_learn - 1:
            self._refit(k)
        return out

    def _secure(self, t, soc, current, v_pred, docv, d2ocv) -> StepOutput:
        if v_pred is None:
            raise EstimatorError("attack flagged before the first prediction window", t)
        if not self.in_attack:
            self._start_attack(t, soc)
        e1 = self.ctx.e1
        v_bar = v_pred + e1
        if self.mode == "stage1":
            v_hat = v_bar
        elif self.mode == "empirical":
            try:
                v_hat, self.ctx = secure_estimate_step(v_pred, self.ctx, soc, docv, d2ocv, self.table)
            except CorrectionError as err:
                raise EstimatorError(str(err), t) from err
        else:
            v_hat, self.ctx = secure_estimate_step(
                v_pred, self.ctx, soc, docv, d2ocv, self.table, gpr_bank=self.gpr_bank, current=current
            )
        return StepOutput(
            soc=soc, v_pred=v_pred, v_bar=v_bar, v_hat=v_hat, e1=self.ctx.e1, region=self.ctx.region, attack=True
        )

    def _start_attack(self, t: float, soc: float) -> None:
        residuals = self._last_complete
        if self._residuals and residuals is None:
            residuals = self._residuals
        if residuals is None:
            residuals = self._last_partial
        if not residuals:
            raise EstimatorError("no clean prediction residuals before attack onset", t)
        corrector = "gpr" if self.mode == "gpr" else "empirical"
        self.ctx = CorrectionState(e1=stage1_error(residuals), region=self.table.region(soc), mode=corrector)
        self.in_attack = True

    def _refit(self, k: int) -> None:
        start = self._window_start
        stacks = FeedbackStacks(
            voltage_stack=np.array(self._feedback[start : k + 1]),
            input_stack=np.array(self._inputs[start : k + 1]),
        )
        self.model = fit_koopman(stacks, self.cfg)
        d = self.cfg.embed_depth
        self._z = stacks.voltage_stack[-d:].copy()
        self.n_fits += 1
        if self._residuals:
            if len(self._residuals) == self.cfg.slide:
                self._last_complete = self._residuals
            self._last_partial = self._residuals
        self._residuals = []
        self._window_start += self.cfg.slide
