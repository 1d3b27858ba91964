"""Sliding-window Koopman (Hankel DMD with control) voltage predictor.

Observables are delay-embedded voltages ``z(k) = [V(k-d+1), ..., V(k)]``.
Inputs are ``u(k) = [I(k), SOC(k)]``. The readout is a fixed selector of the
most recent delay coordinate.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np


class KoopmanError(ValueError):
    pass


@dataclass(frozen=True)
class WindowConfig:
    s_total: int = 51
    s_learn: int = 40
    embed_depth: int = 5
    ridge: float = 1e-8

    def __post_init__(self):
        if self.embed_depth < 1:
            raise KoopmanError("embed_depth must be >= 1")
        if not self.s_learn < self.s_total:
            raise KoopmanError("s_learn must be smaller than s_total")
        if self.s_learn - self.embed_depth < self.embed_depth + 2:
            raise KoopmanError(
                f"learning window of {self.s_learn} gives too few snapshot pairs for depth {self.embed_depth}"
            )
        if self.slide < 1:
            raise KoopmanError("s_total - s_learn - 1 must be >= 1")
        if self.ridge < 0:
            raise KoopmanError("ridge must be nonnegative")

    @property
    def slide(self) -> int:
        return self.s_total - self.s_learn - 1

    @property
    def horizon(self) -> int:
        return self.s_total - self.s_learn


@dataclass(frozen=True)
class KoopmanModel:
    a_mat: np.ndarray
    b_mat: np.ndarray
    c_row: np.ndarray

    @property
    def depth(self) -> int:
        return self.a_mat.shape[0]

    def step(self, z: np.ndarray, u: np.ndarray) -> np.ndarray:
        return self.a_mat @ z + self.b_mat @ u

    def output(self, z: np.ndarray) -> float:
        return float(self.c_row @ z)


@dataclass
class FeedbackStacks:
    voltage_stack: np.ndarray  # learning window, (S~,)
    input_stack: np.ndarray  # (S~, 2) or longer; only the learning part is used by the fit


def coulomb_count(soc_prev: float, current: float, dt: float, capacity: float) -> float:
    soc = soc_prev + dt * current / (3600.0 * capacity)
    return min(max(soc, 0.0), 1.0)


def build_hankel(voltages: Sequence[float], embed_depth: int) -> tuple[np.ndarray, np.ndarray]:
    """Paired delay-embedding snapshot matrices, one column per time step."""
    v = np.asarray(voltages, dtype=float)
    n = v.shape[0]
    if embed_depth < 1 or n < embed_depth + 1:
        raise KoopmanError(f"need at least {embed_depth + 1} samples for depth {embed_depth}, got {n}")
    cols = n - embed_depth
    idx = np.arange(embed_depth)[:, None] + np.arange(cols)[None, :]
    return v[idx], v[idx + 1]


def selector_row(depth: int) -> np.ndarray:
    c = np.zeros(depth)
    c[-1] = 1.0
    return c


def fit_koopman(stacks: FeedbackStacks, cfg: WindowConfig) -> KoopmanModel:
    """Ridge least squares for ``[A B]`` over the learning window.

    ``u(k)`` paired with the snapshot ``z(k) -> z(k+1)`` is the input sample at
    the time of the last delay coordinate of ``z(k)``. The ridge problem is
    solved as an augmented ordinary least squares through numpy's SVD-based
    ``lstsq`` with relative cutoff 1e-10.
    """
    d = cfg.embed_depth
    v = np.asarray(stacks.voltage_stack, dtype=float)
    u = np.asarray(stacks.input_stack, dtype=float)
    z_now, z_next = build_hankel(v, d)
    n_pairs = z_now.shape[1]
    if n_pairs < d + 2:
        raise KoopmanError(f"{n_pairs} snapshot pairs cannot determine {d + 2} regressors")
    if u.shape[0] < v.shape[0] - 1:
        raise KoopmanError("input stack shorter than the learning window")
    u_cols = u[d - 1 : d - 1 + n_pairs].T  # (2, n_pairs)
    omega = np.vstack([z_now, u_cols])  # (d+2, n_pairs)
    # min ||Z' - G Omega||^2 + ridge ||G||^2  <=>  lstsq on [Omega^T; sqrt(ridge) I]
    lhs = omega.T
    rhs = z_next.T
    if cfg.ridge > 0:
        lhs = np.vstack([lhs, np.sqrt(cfg.ridge) * np.eye(d + 2)])
        rhs = np.vstack([rhs, np.zeros((d + 2, d))])
    g, *_ = np.linalg.lstsq(lhs, rhs, rcond=1e-10)
    g = g.T
    return KoopmanModel(a_mat=g[:, :d].copy(), b_mat=g[:, d:].copy(), c_row=selector_row(d))


def predict_horizon(
    model: KoopmanModel,
    init_embedding: Sequence[float],
    inputs: Sequence[Sequence[float]],
    horizon: int,
) -> np.ndarray:
    """Roll ``z <- A z + B u`` forward, emitting ``C z`` after each step."""
    if horizon <= 0:
        return np.empty(0)
    u = np.asarray(inputs, dtype=float)
    if u.shape[0] < horizon:
        raise KoopmanError(f"{u.shape[0]} inputs cannot drive a horizon of {horizon}")
    z = np.asarray(init_embedding, dtype=float)
    out = np.empty(horizon)
    for k in range(horizon):
        z = model.step(z, u[k])
        out[k] = model.output(z)
    return out


def advance_window(window_start: int, cfg: WindowConfig) -> int:
    return window_start + cfg.slide


def select_feedback(attack_flags: Sequence[bool], measurements: Sequence[float], secure_estimates: Sequence[float]) -> np.ndarray:
    """Per-sample choice of learning data: measurements while clean, estimates under attack.

    ``attack_flags`` may be a single bool applied to the whole window.
    """
    m = np.asarray(measurements, dtype=float)
    s = np.asarray(secure_estimates, dtype=float)
    if m.shape != s.shape:
        raise KoopmanError(f"misaligned stacks: {m.shape} vs {s.shape}")
    flags = np.broadcast_to(np.asarray(attack_flags, dtype=bool), m.shape)
    return np.where(flags, s, m)
