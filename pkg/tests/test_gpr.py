import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from koopguard import gpr as gp
from koopguard.correction import CorrectorConfigError
from koopguard.gpr import GprHyper, GprNumericalError
from oracles import gp_direct_inverse

SIN_X = np.linspace(0, math.pi, 20)[:, None]
SIN_Y = np.sin(SIN_X[:, 0])
SIN_HYPER = GprHyper(length_scales=(0.5,), signal_var=1.0, noise_var=1e-10, jitter=1e-12)


def test_hyper_validation():
    with pytest.raises(ValueError):
        GprHyper(length_scales=(1.0, 0.0, 1.0, 1.0))
    with pytest.raises(ValueError):
        GprHyper(noise_var=-1.0)


def test_kernel_basics():
    h = GprHyper(signal_var=2.5)
    a = np.array([1.0, 0.5, 3.7, 0.01])
    assert gp.kernel(a, a, h) == 2.5
    rng = np.random.default_rng(0)
    ray = rng.standard_normal(4)
    vals = [gp.kernel(a, a + t * ray, h) for t in np.linspace(0, 20, 50)]
    assert all(x > y for x, y in zip(vals, vals[1:]) if y > 0) and vals[-1] < 1e-12
    with pytest.raises(ValueError):
        gp.kernel(a, a[:3], h)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-10, 10), min_size=8, max_size=8))
def test_kernel_symmetric(xs):
    h = GprHyper(length_scales=(0.3, 1.0, 3.0, 2.0))
    a, b = np.array(xs[:4]), np.array(xs[4:])
    assert gp.kernel(a, b, h) == gp.kernel(b, a, h)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(1, 60))
def test_gram_psd_and_factor_reconstructs(seed, n):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, 4))
    y = rng.standard_normal(n)
    h = GprHyper(noise_var=1e-6)
    m = gp.fit(x, y, h)
    k = gp._gram(m.xs_train, m.xs_train, h)
    assert np.allclose(k, k.T)
    target = k + (h.noise_var + m.jitter_used) * np.eye(n)
    err = np.max(np.abs(m.chol_factor @ m.chol_factor.T - target)) / np.max(np.abs(target))
    assert err < 1e-8


def test_single_point_alpha():
    h = GprHyper(length_scales=(1.0,), signal_var=2.0, noise_var=1e-300, jitter=1e-10)
    m = gp.fit([[0.3]], [0.7], h)
    assert m.alpha[0] == pytest.approx(0.7 / (2.0 + 1e-10), rel=1e-14)
    mean, var = gp.predict(m, [0.3])
    assert mean == pytest.approx(0.7, abs=1e-9) and var == pytest.approx(0.0, abs=1e-9)
    far_mean, far_var = gp.predict(m, [1e6])
    assert abs(far_mean) < 1e-12 and far_var == pytest.approx(2.0)


def test_duplicate_points_with_noise():
    x = np.array([[1.0, 2.0, 3.0, 4.0]] * 5)
    m = gp.fit(x, np.arange(5.0), GprHyper(noise_var=1e-3, jitter=1e-300))
    assert np.isfinite(m.alpha).all()


def test_jitter_escalation_then_failure():
    x = np.array([[1.0, 2.0, 3.0, 4.0]] * 30)
    m = gp.fit(x, np.zeros(30), GprHyper(noise_var=1e-300, jitter=1e-17), max_escalations=3)
    assert m.jitter_used > 1e-17
    with pytest.raises(GprNumericalError, match="region 4"):
        gp.fit(x, np.zeros(30), GprHyper(noise_var=1e-300, jitter=1e-300), region=4)


def test_sin_interpolation():
    m = gp.fit(SIN_X, SIN_Y, SIN_HYPER)
    mean, var = gp.predict_batch(m, SIN_X)
    assert np.max(np.abs(mean - SIN_Y)) <= 1e-6
    assert np.all(var <= SIN_HYPER.noise_var + 10 * m.jitter_used + 1e-15)


def test_matches_direct_inverse_oracle():
    h = GprHyper(length_scales=(0.8,), signal_var=1.0, noise_var=1e-6, jitter=1e-12)
    m = gp.fit(SIN_X, SIN_Y, h)
    xs_train = (SIN_X - SIN_X.mean(0)) / SIN_X.std(0)
    grid = np.linspace(0, math.pi, 201)[:, None]
    xs_grid = (grid - SIN_X.mean(0)) / SIN_X.std(0)
    ref_mean, ref_var = gp_direct_inverse(xs_train, SIN_Y, xs_grid, h.length_scales, h.signal_var, h.noise_var + m.jitter_used)
    mean, var = gp.predict_batch(m, grid)
    assert np.max(np.abs(mean - ref_mean)) < 1e-8
    assert np.max(np.abs(var - np.maximum(ref_var, 0))) < 1e-8


def test_variance_bound_at_training_inputs_4d():
    rng = np.random.default_rng(5)
    x = rng.uniform(0, 1, (80, 4))
    h = GprHyper(noise_var=1e-6, jitter=1e-10)
    m = gp.fit(x, np.sin(x.sum(1)), h)
    _, var = gp.predict_batch(m, x)
    assert np.all(var <= h.noise_var + 10 * h.jitter)


def test_lml_closed_form_and_permutation():
    h = GprHyper(length_scales=(1.0,), signal_var=1.5, noise_var=0.01, jitter=1e-300)
    m = gp.fit([[0.0]], [0.0], h)
    assert gp.log_marginal_likelihood(m) == pytest.approx(-0.5 * math.log(1.51) - 0.5 * math.log(2 * math.pi), abs=1e-12)
    rng = np.random.default_rng(2)
    x = rng.standard_normal((30, 4))
    y = rng.standard_normal(30)
    p = rng.permutation(30)
    h = GprHyper(noise_var=1e-3)
    a = gp.fit(x, y, h)
    b = gp.fit(x[p], y[p], h)
    assert gp.log_marginal_likelihood(a) == pytest.approx(gp.log_marginal_likelihood(b), abs=1e-9)
    xq = rng.standard_normal((10, 4))
    assert np.allclose(gp.predict_batch(a, xq)[0], gp.predict_batch(b, xq)[0], atol=1e-10)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_mean_superposition(seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((25, 4))
    y1, y2 = rng.standard_normal((2, 25))
    h = GprHyper(noise_var=1e-4)
    xq = rng.standard_normal((7, 4))
    m1 = gp.predict_batch(gp.fit(x, y1, h), xq)[0]
    m2 = gp.predict_batch(gp.fit(x, y2, h), xq)[0]
    m12 = gp.predict_batch(gp.fit(x, y1 + y2, h), xq)[0]
    assert np.allclose(m12, m1 + m2, atol=1e-9)


def _sample_gp(length_scale, n=150, seed=11):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, 1))
    xs = (x - x.mean(0)) / x.std(0)
    h = GprHyper(length_scales=(length_scale,), signal_var=1.0)
    k = gp._gram(xs, xs, h) + 1e-6 * np.eye(n)
    y = np.linalg.cholesky(k) @ rng.standard_normal(n)
    return x, y


@pytest.mark.parametrize("true_ls", [0.3, 1.0, 3.0])
def test_grid_search_recovers_length_scale(true_ls):
    x, y = _sample_gp(true_ls)
    base = GprHyper(length_scales=(1.0,), signal_var=1.0, noise_var=1e-6)
    best = gp.grid_search(x, y, base=base)
    assert best.hyper.length_scales == (true_ls,)


def test_gpr_e2_and_missing_region():
    h = GprHyper(noise_var=1e-8)
    x = np.array([[5.0, 0.45, 3.7, 0.001], [5.0, 0.5, 3.72, 0.001], [5.0, 0.55, 3.74, 0.001]])
    zero = gp.fit(x, np.zeros(3), h, region=2)
    assert gp.gpr_e2({2: zero}, (5.0, 0.5, 3.72, 0.001)) == pytest.approx(0.001, abs=1e-12)
    same = gp.fit(x, np.full(3, 0.001), h, region=2)
    assert gp.gpr_e2({2: same}, (5.0, 0.5, 3.72, 0.001)) == pytest.approx(0.0, abs=1e-6)
    with pytest.raises(CorrectorConfigError, match=r"region 1.*\[2\]"):
        gp.gpr_e2({2: zero}, (5.0, 0.3, 3.6, 0.0))


def test_serialisation_round_trip(tmp_path):
    rng = np.random.default_rng(9)
    x = rng.standard_normal((40, 4))
    m = gp.fit(x, rng.standard_normal(40), GprHyper(length_scales=(0.3, 1.0, 3.0, 1.0), noise_var=1e-5), region=3)
    gp.save_model(m, tmp_path / "m.json")
    back = gp.load_model(tmp_path / "m.json")
    xq = rng.standard_normal((20, 4))
    a, b = gp.predict_batch(m, xq), gp.predict_batch(back, xq)
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])
    assert back.region == 3 and back.hyper == m.hyper
    paths = gp.save_bank({3: m, 5: m}, tmp_path / "bank")
    assert [p.name for p in paths] == ["region_3.json", "region_5.json"]
    with pytest.raises(FileNotFoundError):
        gp.load_bank(tmp_path / "empty")


def test_training_set_partition_and_cap(dos_cfg):
    from koopguard.scenario import nominal_training_trace

    trace = nominal_training_trace(dos_cfg)
    ds = gp.build_training_set(trace, dos_cfg.koopman, capacity=7.0, onsets=(50.0, 1500.0), horizon=1500.0, n_max=300)
    assert set(ds) >= {1, 2, 3}
    for j, d in ds.items():
        assert len(d.y) <= 300
        assert all(gp.DEFAULT_TABLE.region(s) == j for s in d.x[:, 1])
        assert np.all(np.diff(d.t) >= 0)
    with pytest.raises(ValueError):
        gp.build_training_set(trace.copy().__class__(1.0, trace.t[:20], trace.current[:20], trace.soc_true[:20],
                                                     trace.v_true[:20], trace.v_meas[:20], {}), dos_cfg.koopman, capacity=7.0)


def test_training_targets_vanish_on_linear_plant():
    from koopguard.battery import TimeSeriesTrace
    from koopguard.koopman import WindowConfig

    # a plant that the delay-embedded model represents exactly: stage-I self-learning stays exact
    n = 600
    t = np.arange(n, dtype=float)
    cur = np.full(n, 5.0)
    soc = 0.35 + 5.0 * t / 25200
    v = 3.6 + 0.5 * (soc - 0.35)
    tr = TimeSeriesTrace(1.0, t, cur, soc, v, v.copy(), {})
    ds = gp.build_training_set(tr, WindowConfig(ridge=1e-12), capacity=7.0, onsets=(100.0,))
    y = np.concatenate([d.y for d in ds.values()])
    assert np.max(np.abs(y)) < 1e-6


def test_dataset_round_trip(tmp_path):
    ds = gp.RegionDataset(2, np.array([[5.0, 0.41, 3.7, 1e-4], [5.0, 0.42, 3.71, 1e-4]]), np.array([1e-3, 2e-3]),
                          np.array([10.0, 11.0]), (0.41, 0.42))
    gp.save_dataset(ds, tmp_path / "r.csv")
    back = gp.load_dataset(tmp_path / "r.csv")
    assert back.region == 2 and np.array_equal(back.x, ds.x) and np.array_equal(back.y, ds.y)


def test_gpr_beats_stage1_on_holdout(gpr_models_dir, dos_cfg):
    """Bank trained on onsets 50+250i; held-out onset at 175 s on the same clean charge."""
    from koopguard.scenario import nominal_training_trace

    bank = gp.load_bank(gpr_models_dir)
    trace = nominal_training_trace(dos_cfg)
    hold = gp.build_training_set(trace, dos_cfg.koopman, capacity=7.0, onsets=(175.0,), horizon=1200.0)
    vbar_err, vhat_err = [], []
    for j, d in hold.items():
        for x, y in zip(d.x, d.y):
            vbar_err.append(y)
            vhat_err.append(y - gp.predict_mean(bank[j], x))
    rm = lambda e: float(np.sqrt(np.mean(np.square(e))))
    assert rm(vhat_err) <= rm(vbar_err)
