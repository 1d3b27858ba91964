import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from koopguard.battery import (
    DEFAULT_OCV_TABLE,
    BatteryDomainError,
    BatteryParams,
    BatteryState,
    age_params,
    ocv_lookup,
    run_cccv,
    simulate_voltage,
    step_ecm,
    terminal_voltage,
)
from oracles import pchip_oracle, rc_branch_rk4

P = BatteryParams()
SOC_K = [s for s, _ in DEFAULT_OCV_TABLE]
OCV_K = [v for _, v in DEFAULT_OCV_TABLE]


def test_ocv_anchor_points_exact():
    for s, v in DEFAULT_OCV_TABLE:
        assert ocv_lookup(P, s) == pytest.approx(v, abs=1e-15)
    assert ocv_lookup(P, 0.0) == pytest.approx(OCV_K[0], abs=1e-15)
    assert ocv_lookup(P, 1.0) == pytest.approx(OCV_K[-1], abs=1e-15)


def test_ocv_midpoints_match_independent_pchip():
    mids = [(a + b) / 2 for a, b in zip(SOC_K[:-1], SOC_K[1:])]
    grid = np.concatenate([mids, np.linspace(0, 1, 257)])
    ref = pchip_oracle(SOC_K, OCV_K, grid)
    got = ocv_lookup(P, grid)
    assert np.max(np.abs(got - ref)) < 1e-12


def test_ocv_strictly_increasing_on_dense_grid():
    v = ocv_lookup(P, np.linspace(0, 1, 10_000))
    assert np.all(np.diff(v) > 0)


@pytest.mark.parametrize("soc", [-1e-9, 1.0 + 1e-9, 2.0])
def test_ocv_domain_error(soc):
    with pytest.raises(BatteryDomainError):
        ocv_lookup(P, soc)


def test_params_validation():
    with pytest.raises(BatteryDomainError):
        BatteryParams(capacity=0)
    with pytest.raises(BatteryDomainError):
        BatteryParams(r1=-0.1)
    with pytest.raises(BatteryDomainError):
        BatteryParams(ocv_table=((0.0, 3.0), (0.5, 2.9), (1.0, 4.2)))
    with pytest.raises(BatteryDomainError):
        BatteryParams(ocv_table=((0.1, 3.0), (1.0, 4.2)))


def test_step_zero_input_fixed_point():
    s = BatteryState(0.5)
    assert step_ecm(s, 0.0, P, 1.0) == s


def test_step_soc_increment():
    s = step_ecm(BatteryState(0.35), 5.0, P, 1.0)
    assert s.soc - 0.35 == pytest.approx(5 / 25200, abs=1e-15)


def test_step_rc_matches_ode_oracle():
    s = step_ecm(BatteryState(0.5), 5.0, P, 1.0)
    assert s.v_rc1 == pytest.approx(0.015 * (1 - math.exp(-1 / 30)) * 5, abs=1e-15)
    assert abs(s.v_rc1 - rc_branch_rk4(0.0, P.r1, P.c1, 5.0, 1.0)) < 1e-9
    assert abs(s.v_rc2 - rc_branch_rk4(0.0, P.r2, P.c2, 5.0, 1.0)) < 1e-9


def test_step_rejects_nonpositive_dt():
    with pytest.raises(BatteryDomainError):
        step_ecm(BatteryState(0.5), 1.0, P, 0.0)


def test_step_clamps_soc():
    assert step_ecm(BatteryState(0.9999), 100.0, P, 100.0).soc == 1.0
    assert step_ecm(BatteryState(0.0001), -100.0, P, 100.0).soc == 0.0


@settings(max_examples=60, deadline=None)
@given(
    soc0=st.floats(0.0, 0.5),
    current=st.floats(-5.0, 5.0),
    n=st.integers(1, 200),
)
def test_soc_conservation(soc0, current, n):
    soc0 = max(soc0, 0.2)
    s = BatteryState(soc0)
    for _ in range(n):
        s = step_ecm(s, current, P, 1.0)
    assert s.soc - soc0 == pytest.approx(current * n / (3600 * P.capacity), abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(v1=st.floats(-0.5, 0.5), v2=st.floats(-0.5, 0.5), dt=st.floats(0.1, 10.0))
def test_rc_relaxation(v1, v2, dt):
    s = BatteryState(0.5, v1, v2)
    for _ in range(5):
        n = step_ecm(s, 0.0, P, dt)
        assert n.v_rc1 == pytest.approx(s.v_rc1 * math.exp(-dt / P.tau1), abs=1e-15)
        assert n.v_rc2 == pytest.approx(s.v_rc2 * math.exp(-dt / P.tau2), abs=1e-15)
        assert abs(n.v_rc1) <= abs(s.v_rc1) and abs(n.v_rc2) <= abs(s.v_rc2)
        s = n


def test_terminal_voltage_terms():
    assert terminal_voltage(BatteryState(0.5), 0.0, P) == ocv_lookup(P, 0.5)
    assert terminal_voltage(BatteryState(0.5), 5.0, P) == pytest.approx(ocv_lookup(P, 0.5) + 0.05, abs=1e-15)
    assert terminal_voltage(BatteryState(0.5, 0.01, 0.02), 0.0, P) == pytest.approx(ocv_lookup(P, 0.5) + 0.03)


@pytest.fixture(scope="module")
def full_charge():
    return run_cccv(P, 5.0, 0.35, 1.0, 10_000.0)


def test_cccv_phases(full_charge):
    tr = full_charge
    assert np.all(np.diff(tr.t) == 1.0)
    assert np.all(np.diff(tr.soc_true) >= 0)
    cc = tr.current == 5.0
    n_cc = int(np.argmin(cc))
    assert cc[:n_cc].all() and not cc[n_cc:].any()
    assert np.all(np.diff(tr.v_true[:n_cc]) > 0)
    assert np.all(tr.v_true[:n_cc] < P.v_max + P.r0 * 5.0)
    cv = (tr.current > P.i_cutoff) & ~cc
    assert cv.sum() > 100
    assert np.max(np.abs(tr.v_true[cv] - P.v_max)) < 1e-9
    assert tr.current[-1] == 0.0
    assert np.all(np.diff(tr.current[n_cc:-1]) <= 1e-12)
    assert np.array_equal(tr.v_meas, tr.v_true)


def test_cccv_cc_only_when_short():
    tr = run_cccv(P, 5.0, 0.35, 1.0, 600.0)
    assert len(tr) == 601
    assert np.all(tr.current == 5.0)


def test_cccv_full_soc_terminates_immediately():
    tr = run_cccv(P, 5.0, 1.0, 1.0, 600.0)
    assert len(tr) == 1 and tr.current[0] == 0.0


def test_cccv_domain_errors():
    with pytest.raises(BatteryDomainError):
        run_cccv(P, 5.0, 1.2)
    with pytest.raises(BatteryDomainError):
        run_cccv(P, 0.0, 0.5)


def test_age_params():
    assert age_params(P, 1.0) == P
    aged = age_params(P, 1.5)
    assert aged.r0 == pytest.approx(0.015)
    assert (aged.r1, aged.r2, aged.capacity, aged.ocv_table) == (P.r1, P.r2, P.capacity, P.ocv_table)
    aged_rc = age_params(P, 1.5, scale_rc=True)
    assert aged_rc.r1 == pytest.approx(1.5 * P.r1) and aged_rc.r2 == pytest.approx(1.5 * P.r2)
    with pytest.raises(BatteryDomainError):
        age_params(P, 0.9)


def test_aged_battery_has_higher_voltage_at_equal_state():
    aged = age_params(P, 1.5)
    currents = np.full(300, 5.0)
    fresh_v = simulate_voltage(P, currents, 0.4, 1.0)
    aged_v = simulate_voltage(aged, currents, 0.4, 1.0)
    assert np.all(aged_v > fresh_v)
    assert np.allclose(aged_v - fresh_v, (aged.r0 - P.r0) * 5.0, atol=1e-12)
