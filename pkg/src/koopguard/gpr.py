"""Gaussian process regression for the data-driven Stage II corrector.

Exact GP with a squared-exponential kernel and per-feature length scales on
standardised inputs. One model per SOC region.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np
from scipy.linalg import cho_solve, solve_triangular

from .correction import DEFAULT_TABLE, CorrectorConfigError, RegionTable

FEATURES = ("current", "soc", "v_bar", "e1")
FORMAT_VERSION = 1


class GprNumericalError(ArithmeticError):
    pass


@dataclass(frozen=True)
class GprHyper:
    length_scales: tuple[float, ...] = (1.0, 1.0, 1.0, 1.0)
    signal_var: float = 1.0
    noise_var: float = 1e-6
    jitter: float = 1e-10

    def __post_init__(self):
        vals = list(self.length_scales) + [self.signal_var, self.noise_var, self.jitter]
        if any(not (v > 0 and math.isfinite(v)) for v in vals):
            raise ValueError(f"GP hyperparameters must be positive and finite: {self}")


@dataclass
class GprModel:
    x_train: np.ndarray  # raw features, (n, p)
    y_train: np.ndarray
    hyper: GprHyper
    chol_factor: np.ndarray
    alpha: np.ndarray
    x_mean: np.ndarray
    x_scale: np.ndarray
    region: int = 0
    jitter_used: float = 0.0

    @property
    def n(self) -> int:
        return self.y_train.shape[0]

    @property
    def xs_train(self) -> np.ndarray:
        cached = self.__dict__.get("_xs")
        if cached is None:
            cached = (self.x_train - self.x_mean) / self.x_scale
            self.__dict__["_xs"] = cached
        return cached


def kernel(x1, x2, hyper: GprHyper) -> float:
    """Squared-exponential covariance between two feature vectors."""
    a = np.asarray(x1, dtype=float)
    b = np.asarray(x2, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"feature dimension mismatch: {a.shape} vs {b.shape}")
    r = (a - b) / np.asarray(hyper.length_scales, dtype=float)[: a.shape[-1]]
    return float(hyper.signal_var * np.exp(-0.5 * np.dot(r, r)))


def _gram(xa: np.ndarray, xb: np.ndarray, hyper: GprHyper) -> np.ndarray:
    ls = np.asarray(hyper.length_scales, dtype=float)[: xa.shape[1]]
    a = xa / ls
    b = xb / ls
    sq = (a * a).sum(1)[:, None] + (b * b).sum(1)[None, :] - 2.0 * a @ b.T
    np.maximum(sq, 0.0, out=sq)
    return hyper.signal_var * np.exp(-0.5 * sq)


def _standardise(model: GprModel, x) -> np.ndarray:
    return (np.atleast_2d(np.asarray(x, dtype=float)) - model.x_mean) / model.x_scale


def fit(
    x_train,
    y_train,
    hyper: GprHyper,
    region: int = 0,
    standardise: bool = True,
    max_escalations: int = 3,
) -> GprModel:
    """Factorise ``K + noise_var I`` and solve for the weights.

    On a failed Cholesky the diagonal jitter is multiplied by 100, up to
    ``max_escalations`` times.
    """
    x = np.atleast_2d(np.asarray(x_train, dtype=float))
    y = np.asarray(y_train, dtype=float).ravel()
    n = y.shape[0]
    if n < 1 or x.shape[0] != n:
        raise ValueError(f"need matching nonempty x ({x.shape}) and y ({y.shape})")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ValueError("training data contains non-finite values")
    if standardise:
        x_mean = x.mean(0)
        x_scale = x.std(0)
        x_scale[x_scale <= 0] = 1.0
    else:
        x_mean = np.zeros(x.shape[1])
        x_scale = np.ones(x.shape[1])
    xs = (x - x_mean) / x_scale
    k = _gram(xs, xs, hyper)
    k[np.diag_indices(n)] += hyper.noise_var
    jitter = hyper.jitter
    last_err = None
    for _ in range(max_escalations + 1):
        try:
            kj = k.copy()
            kj[np.diag_indices(n)] += jitter
            chol = np.linalg.cholesky(kj)
            break
        except np.linalg.LinAlgError as err:
            last_err = err
            jitter *= 100.0
    else:
        raise GprNumericalError(
            f"Cholesky failed for region {region}: n={n}, signal_var={hyper.signal_var:g}, "
            f"noise_var={hyper.noise_var:g}, final jitter={jitter / 100.0:g} ({last_err})"
        )
    alpha = cho_solve((chol, True), y)
    return GprModel(
        x_train=x,
        y_train=y,
        hyper=hyper,
        chol_factor=chol,
        alpha=alpha,
        x_mean=x_mean,
        x_scale=x_scale,
        region=region,
        jitter_used=jitter,
    )


def predict(model: GprModel, x_star) -> tuple[float, float]:
    mean, var = predict_batch(model, np.atleast_2d(np.asarray(x_star, dtype=float)))
    return float(mean[0]), float(var[0])


def predict_batch(model: GprModel, x_star: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    xs = _standardise(model, x_star)
    k_star = _gram(model.xs_train, xs, model.hyper)  # (n, m)
    mean = k_star.T @ model.alpha
    v = solve_triangular(model.chol_factor, k_star, lower=True)
    var = model.hyper.signal_var - (v * v).sum(0)
    return mean, np.maximum(var, 0.0)


def predict_mean(model: GprModel, x_star) -> float:
    xs = _standardise(model, x_star)
    return float((_gram(model.xs_train, xs, model.hyper)[:, 0]) @ model.alpha)


def log_marginal_likelihood(model: GprModel) -> float:
    return float(
        -0.5 * model.y_train @ model.alpha
        - np.log(np.diag(model.chol_factor)).sum()
        - 0.5 * model.n * np.log(2.0 * np.pi)
    )


def default_hyper(y: np.ndarray, length_scales: Sequence[float] = (1.0, 1.0, 1.0, 1.0)) -> GprHyper:
    var = float(np.var(y)) if len(y) > 1 else 0.0
    return GprHyper(length_scales=tuple(length_scales), signal_var=var if var > 0 else 1e-6)


def grid_search(
    x_train,
    y_train,
    grid: Sequence[float] = (0.3, 1.0, 3.0),
    base: Optional[GprHyper] = None,
    region: int = 0,
    shared: bool = False,
) -> GprModel:
    """Pick length scales from ``grid`` by log marginal likelihood.

    ``shared=True`` ties all features to one length scale (len(grid) fits);
    otherwise the full product grid is searched.
    """
    import itertools

    y = np.asarray(y_train, dtype=float).ravel()
    base = base or default_hyper(y)
    p = np.atleast_2d(np.asarray(x_train)).shape[1]
    if shared:
        candidates = [(g,) * p for g in grid]
    else:
        candidates = list(itertools.product(grid, repeat=p))
    best, best_lml = None, -np.inf
    for ls in candidates:
        hyper = GprHyper(tuple(ls), base.signal_var, base.noise_var, base.jitter)
        model = fit(x_train, y, hyper, region=region)
        lml = log_marginal_likelihood(model)
        if lml > best_lml:
            best, best_lml = model, lml
    return best


def gpr_e2(models: Mapping[int, GprModel], features: Sequence[float], table: RegionTable = DEFAULT_TABLE) -> float:
    """``e1 - mean`` of the region model, so that ``v_p + e2 = v_bar - mean``."""
    current, soc, v_bar, e1 = features
    j = table.region(soc)
    model = models.get(j)
    if model is None:
        raise CorrectorConfigError(f"no GPR model for SOC region {j}; available regions: {sorted(models)}")
    return e1 - predict_mean(model, features)


# ---- training data -------------------------------------------------------------


@dataclass
class RegionDataset:
    region: int
    x: np.ndarray
    y: np.ndarray
    t: np.ndarray
    coverage: tuple[float, float] = (math.nan, math.nan)


def build_training_set(
    nominal_trace,
    koopman_cfg,
    regions: RegionTable = DEFAULT_TABLE,
    *,
    capacity: float,
    soc0: Optional[float] = None,
    onsets: Sequence[float] = (50.0,),
    horizon: Optional[float] = None,
    n_max: int = 2000,
) -> dict[int, RegionDataset]:
    """Stage-I-only self-learning runs over a clean trace, partitioned by region.

    Each onset starts a forced self-learning run (feedback ``v_p + e1``) that
    lasts ``horizon`` seconds or to the end of the trace. Rows are
    ``(current, soc, v_bar, e1) -> v_bar - v_nom``.
    """
    from .estimator import SecureEstimator

    n = len(nominal_trace)
    if n < koopman_cfg.s_total:
        raise ValueError(f"trace of {n} samples is shorter than one sliding window ({koopman_cfg.s_total})")
    dt = nominal_trace.dt
    soc_start = nominal_trace.soc_true[0] if soc0 is None else soc0
    rows: dict[int, list] = {}
    for onset in onsets:
        stop = math.inf if horizon is None else onset + horizon
        est = SecureEstimator(koopman_cfg, capacity=capacity, dt=dt, soc0=soc_start, mode="stage1", table=regions)
        for k in range(n):
            t = nominal_trace.t[k]
            if t >= stop:
                break
            out = est.step(nominal_trace.current[k], nominal_trace.v_meas[k], attack=t >= onset)
            if t >= onset and out.v_bar is not None:
                row = (nominal_trace.current[k], out.soc, out.v_bar, out.e1, out.v_bar - nominal_trace.v_true[k], t)
                rows.setdefault(regions.region(out.soc), []).append(row)
    out: dict[int, RegionDataset] = {}
    for j, rr in sorted(rows.items()):
        arr = np.array(rr)
        arr = arr[np.lexsort((arr[:, 5],))]  # stable time order for stratified subsampling
        if arr.shape[0] > n_max:
            keep = np.unique(np.linspace(0, arr.shape[0] - 1, n_max).round().astype(int))
            arr = arr[keep]
        out[j] = RegionDataset(
            region=j,
            x=arr[:, :4].copy(),
            y=arr[:, 4].copy(),
            t=arr[:, 5].copy(),
            coverage=(float(arr[:, 1].min()), float(arr[:, 1].max())),
        )
    return out


# ---- persistence ----------------------------------------------------------------


def save_dataset(ds: RegionDataset, path: Path) -> None:
    header = "# region={} coverage_soc={!r},{!r}\n".format(ds.region, *ds.coverage)
    with open(path, "w") as fh:
        fh.write(header)
        fh.write("t,current,soc,v_bar,e1,target\n")
        for t, x, y in zip(ds.t, ds.x, ds.y):
            fh.write(",".join(repr(float(v)) for v in (t, *x, y)) + "\n")


def load_dataset(path: Path) -> RegionDataset:
    with open(path) as fh:
        first = fh.readline()
    region = int(first.split("region=")[1].split()[0])
    arr = np.loadtxt(path, delimiter=",", skiprows=2, ndmin=2)
    return RegionDataset(
        region=region,
        x=arr[:, 1:5].copy(),
        y=arr[:, 5].copy(),
        t=arr[:, 0].copy(),
        coverage=(float(arr[:, 2].min()), float(arr[:, 2].max())),
    )


def save_model(model: GprModel, path: Path) -> None:
    """JSON text; floats are written with ``repr`` so reloads are bit-exact."""
    payload = {
        "format": FORMAT_VERSION,
        "features": list(FEATURES),
        "region": model.region,
        "hyper": asdict(model.hyper),
        "x_mean": model.x_mean.tolist(),
        "x_scale": model.x_scale.tolist(),
        "x_train": model.x_train.tolist(),
        "y_train": model.y_train.tolist(),
    }
    Path(path).write_text(json.dumps(payload))


def load_model(path: Path) -> GprModel:
    payload = json.loads(Path(path).read_text())
    if payload.get("format") != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported model format {payload.get('format')!r}")
    h = payload["hyper"]
    hyper = GprHyper(tuple(h["length_scales"]), h["signal_var"], h["noise_var"], h["jitter"])
    x = np.array(payload["x_train"], dtype=float)
    y = np.array(payload["y_train"], dtype=float)
    model = fit(x, y, hyper, region=payload["region"])
    # keep the stored standardisation so predictions match the saved model exactly
    if not (np.array_equal(model.x_mean, payload["x_mean"]) and np.array_equal(model.x_scale, payload["x_scale"])):
        raise ValueError(f"{path}: standardisation statistics do not match the stored training data")
    return model


def model_filename(region: int) -> str:
    return f"region_{region}.json"


def save_bank(models: Mapping[int, GprModel], directory: Path) -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for j, m in sorted(models.items()):
        p = directory / model_filename(j)
        save_model(m, p)
        paths.append(p)
    return paths


def load_bank(directory: Path) -> dict[int, GprModel]:
    directory = Path(directory)
    files = sorted(directory.glob("region_*.json"))
    if not files:
        raise FileNotFoundError(f"no region_*.json model files in {directory}")
    bank = {}
    for f in files:
        m = load_model(f)
        bank[m.region] = m
    return bank
