"""End-to-end scenario runs: plant, attack, estimators, baselines, metrics, files."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import gpr as gp
from .attack import AttackSpec, apply_attack, attack_active, in_interval, sensed_offset_fn
from .battery import TimeSeriesTrace, age_params, ocv_lookup, run_cccv
from .config import ConfigError, ScenarioConfig
from .correction import DEFAULT_TABLE
from .estimator import SecureEstimator
from .observers import check_gain, closed_loop_observe, open_loop_observe

log = logging.getLogger(__name__)

CSV_COLUMNS = (
    "t",
    "current",
    "soc_true",
    "soc_cc",
    "v_true",
    "v_meas",
    "v_pred",
    "e1",
    "v_hat",
    "v_openloop",
    "v_closedloop",
    "region",
    "attack_active",
)

# estimator column -> label used in reports
ESTIMATOR_COLUMNS = {
    "v_meas": "corrupt_measurement",
    "v_pred": "koopman_nominal",
    "v_hat": "secure",
    "v_stage1": "stage1_only",
    "v_openloop": "open_loop",
    "v_closedloop": "closed_loop",
}


@dataclass
class ErrorStats:
    rmse: float
    max_abs: float
    mean: float
    n: int


@dataclass
class MetricsReport:
    whole: dict[str, ErrorStats] = field(default_factory=dict)
    attack: dict[str, ErrorStats] = field(default_factory=dict)
    soc_at_onset: Optional[float] = None
    region_switches: list[tuple[float, int]] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)
    label: str = ""

    def format(self) -> str:
        lines = [f"scenario: {self.label}" if self.label else "scenario report"]
        if self.soc_at_onset is not None:
            lines.append(f"soc_at_attack_onset: {self.soc_at_onset:.6f}")
        for t, j in self.region_switches:
            lines.append(f"region_switch: t={t:g} s -> region {j}")
        for title, table in (("whole trace", self.whole), ("attack interval", self.attack)):
            lines.append(f"[{title}]")
            if not table:
                lines.append("  (empty)")
            for name, s in table.items():
                lines.append(
                    f"  {name:20s} rmse={s.rmse:.6e} max_abs={s.max_abs:.6e} mean={s.mean:+.6e} n={s.n}"
                )
        for w in self.warnings:
            lines.append(f"warning: {w}")
        return "\n".join(lines) + "\n"


def _stats(err: np.ndarray) -> ErrorStats:
    return ErrorStats(
        rmse=float(np.sqrt(np.mean(err * err))),
        max_abs=float(np.max(np.abs(err))),
        mean=float(np.mean(err)),
        n=int(err.size),
    )


def compute_metrics(trace: TimeSeriesTrace, attack: AttackSpec, label: str = "") -> MetricsReport:
    """RMSE / max-abs / mean error of every estimator column against ``v_true``.

    Rows where an estimator is undefined (NaN) are skipped. ``v_pred`` is scored
    only outside the attack interval, where it is a nominal prediction.
    """
    report = MetricsReport(label=label)
    mask_att = in_interval(trace.t, attack)
    cols = dict(trace.columns)
    cols["v_meas"] = trace.v_meas
    for col, name in ESTIMATOR_COLUMNS.items():
        if col not in cols:
            if col != "v_meas":
                report.warnings.append(f"estimator column {col} missing; {name} omitted")
            continue
        err = np.asarray(cols[col], dtype=float) - trace.v_true
        ok = ~np.isnan(err)
        if col == "v_pred":
            ok &= ~mask_att
        if ok.any():
            report.whole[name] = _stats(err[ok])
        if attack.kind != "none" and (ok & mask_att).any():
            report.attack[name] = _stats(err[ok & mask_att])
    if attack.kind != "none" and mask_att.any():
        k = int(np.argmax(mask_att))
        soc = cols.get("soc_cc", trace.soc_true)
        report.soc_at_onset = float(soc[k])
    region = cols.get("region")
    if region is not None:
        r = np.asarray(region, dtype=float)
        for k in range(1, len(r)):
            if r[k] != r[k - 1] and not (np.isnan(r[k]) or np.isnan(r[k - 1])):
                report.region_switches.append((float(trace.t[k]), int(r[k])))
    return report


def primary_mode(cfg: ScenarioConfig) -> str:
    """Corrector of the estimator that fills ``v_pred``/``v_hat``; stage-I when no secure run is requested."""
    secure = cfg.attack.kind != "none" and "secure" in cfg.estimators
    return cfg.corrector if secure else "stage1"


def make_estimator(cfg: ScenarioConfig, mode: str, bank=None) -> SecureEstimator:
    params = cfg.battery
    return SecureEstimator(
        cfg.koopman,
        capacity=params.capacity,
        dt=cfg.dt,
        soc0=cfg.soc0,
        mode=mode,
        table=DEFAULT_TABLE,
        ocv=lambda s: ocv_lookup(params, s),
        gpr_bank=bank,
    )


def run_estimator(cfg: ScenarioConfig, trace: TimeSeriesTrace, flags: np.ndarray, mode: str, bank=None) -> dict:
    est = make_estimator(cfg, mode, bank)
    n = len(trace)
    out = {name: np.full(n, np.nan) for name in ("soc_cc", "v_pred", "v_bar", "v_hat", "e1", "region")}
    v_meas = trace.v_meas
    for k in range(n):
        o = est.step(trace.current[k], v_meas[k], bool(flags[k]))
        out["soc_cc"][k] = o.soc
        out["region"][k] = o.region
        if o.v_pred is not None:
            out["v_pred"][k] = o.v_pred
        if o.attack:
            out["v_bar"][k] = o.v_bar
            out["v_hat"][k] = o.v_hat
            out["e1"][k] = o.e1
    return out


class _SecureChargerLink:
    """Co-simulates the estimator with the plant so the charger can act on it.

    The charger senses the measurement while the attack flag is down and the
    secure estimate while it is up, one sample late: the offset applied at step
    k is the sensing error of step k-1.
    """

    def __init__(self, cfg: ScenarioConfig, est: SecureEstimator, noise: Optional[np.ndarray]):
        self.cfg = cfg
        self.est = est
        self.noise = noise
        self.held: Optional[float] = None
        self.err = 0.0

    def observe(self, k: int, current: float, soc: float, v_true: float) -> None:
        spec = self.cfg.attack
        t = k * self.cfg.dt
        inside = bool(in_interval(t, spec))
        meas = v_true
        if spec.kind == "dos_hold":
            if not inside and t < spec.t_start:
                self.held = v_true
            if inside:
                if self.held is None:
                    self.held = v_true
                meas = self.held
        elif inside:
            meas = v_true + spec.bias
        if self.noise is not None and not (inside and spec.kind == "dos_hold"):
            meas += self.noise[k]
        flag = attack_active(t, spec)
        out = self.est.step(current, meas, flag)
        self.err = (out.v_hat if flag else meas) - v_true

    def offset(self, k: int, v_cc: float) -> float:
        return self.err


def _sensor_noise(cfg: ScenarioConfig) -> Optional[np.ndarray]:
    if cfg.noise_std <= 0:
        return None
    n = int(np.floor(cfg.t_end / cfg.dt + 1e-9)) + 1
    return np.random.default_rng(cfg.seed).normal(0.0, cfg.noise_std, n)


def simulate_plant(cfg: ScenarioConfig, bank=None) -> TimeSeriesTrace:
    """Aged plant under CCCV, then the attack channel and sensor noise.

    ``bank`` is only needed when the charger follows a GPR secure estimate.
    """
    plant = age_params(cfg.battery, cfg.aging_factor, scale_rc=cfg.age_rc)
    noise = _sensor_noise(cfg)
    offset = hook = None
    if cfg.charger_feedback == "corrupt":
        offset = sensed_offset_fn(cfg.attack, cfg.dt)
    elif cfg.charger_feedback == "secure":
        link = _SecureChargerLink(cfg, make_estimator(cfg, primary_mode(cfg), bank), noise)
        offset, hook = link.offset, link.observe
    trace = run_cccv(plant, cfg.i_cc, cfg.soc0, cfg.dt, cfg.t_end, sensed_offset=offset, on_sample=hook)
    trace = apply_attack(trace, cfg.attack)
    if noise is not None:
        held = in_interval(trace.t, cfg.attack) if cfg.attack.kind == "dos_hold" else np.zeros(len(trace), bool)
        trace.v_meas = np.where(held, trace.v_meas, trace.v_meas + noise[: len(trace)])
    return trace


def run_scenario(cfg: ScenarioConfig, bank=None) -> tuple[TimeSeriesTrace, MetricsReport]:
    """Plant, attack channel, Koopman estimators and baselines for one config."""
    cfg.validate()
    if cfg.corrector == "gpr" and "secure" in cfg.estimators and bank is None:
        bank = gp.load_bank(cfg.models_dir)
    if "closed_loop" in cfg.estimators:
        err = check_gain(cfg.battery, cfg.closed_loop_gain)
        if not err < 1e-3:
            raise ConfigError(f"estimators.closed_loop_gain {cfg.closed_loop_gain} does not stabilise the observer")
    trace = simulate_plant(cfg, bank)
    if len(trace) < cfg.koopman.s_total:
        raise ConfigError(f"trace of {len(trace)} samples is shorter than one sliding window")
    flags = np.array([attack_active(t, cfg.attack) for t in trace.t])
    attacked = cfg.attack.kind != "none"

    secure = attacked and "secure" in cfg.estimators
    primary = run_estimator(cfg, trace, flags, primary_mode(cfg), bank)
    cols = trace.columns
    cols["soc_cc"] = primary["soc_cc"]
    cols["v_pred"] = primary["v_pred"]
    cols["region"] = primary["region"]
    cols["attack_active"] = flags.astype(float)
    if secure:
        cols["e1"] = primary["e1"]
        cols["v_hat"] = primary["v_hat"]
    if attacked and "stage1_only" in cfg.estimators:
        if cfg.corrector == "gpr" or not secure:
            # GPR mode feeds back v_p + e1, so its v_bar is the stage-I-only estimate
            cols["v_stage1"] = primary["v_bar"]
        else:
            cols["v_stage1"] = run_estimator(cfg, trace, flags, "stage1")["v_hat"]
    if "open_loop" in cfg.estimators:
        cols["v_openloop"] = open_loop_observe(cfg.battery, trace, soc0=cfg.soc0)
    if "closed_loop" in cfg.estimators:
        cols["v_closedloop"] = closed_loop_observe(cfg.battery, trace, cfg.closed_loop_gain, soc0=cfg.soc0)
    report = compute_metrics(trace, cfg.attack, label=f"{cfg.name} (corrector={cfg.corrector})")
    return trace, report


# ---- files ----------------------------------------------------------------------


def _fmt(x) -> str:
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return ""
    return repr(float(x))


def write_trace_csv(trace: TimeSeriesTrace, path: Path) -> None:
    cols = trace.columns
    base = {
        "t": trace.t,
        "current": trace.current,
        "soc_true": trace.soc_true,
        "v_true": trace.v_true,
        "v_meas": trace.v_meas,
    }
    with open(path, "w", newline="") as fh:
        fh.write(",".join(CSV_COLUMNS) + "\n")
        for k in range(len(trace)):
            row = []
            for c in CSV_COLUMNS:
                arr = base.get(c, cols.get(c))
                if arr is None:
                    row.append("")
                elif c == "region":
                    row.append("" if np.isnan(arr[k]) else str(int(arr[k])))
                elif c == "attack_active":
                    row.append(str(int(arr[k])))
                else:
                    row.append(_fmt(arr[k]))
            fh.write(",".join(row) + "\n")


def read_trace_csv(path: Path) -> TimeSeriesTrace:
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        rows = [line.rstrip("\n").split(",") for line in fh if line.strip()]
    data = {
        name: np.array([float(r[i]) if r[i] != "" else np.nan for r in rows]) for i, name in enumerate(header)
    }
    missing = [c for c in ("t", "current", "soc_true", "v_true", "v_meas") if c not in data]
    if missing:
        raise ValueError(f"{path}: missing required columns {missing}")
    t = data["t"]
    dt = float(t[1] - t[0]) if len(t) > 1 else 1.0
    extra = {k: v for k, v in data.items() if k not in ("t", "current", "soc_true", "v_true", "v_meas")}
    extra = {k: v for k, v in extra.items() if not np.all(np.isnan(v))}
    return TimeSeriesTrace(dt, t, data["current"], data["soc_true"], data["v_true"], data["v_meas"], extra)


def attack_from_flags(trace: TimeSeriesTrace) -> AttackSpec:
    """Reconstruct the attack interval from the ``attack_active`` column."""
    flags = trace.columns.get("attack_active")
    if flags is None or not np.any(flags > 0):
        return AttackSpec()
    idx = np.flatnonzero(flags > 0)
    t_end = None if idx[-1] == len(trace) - 1 else float(trace.t[idx[-1]] + trace.dt)
    return AttackSpec("fdi_bias", float(trace.t[idx[0]]), t_end)


def emit_outputs(trace: TimeSeriesTrace, report: MetricsReport, out_dir: Path, plot: bool = False) -> list[Path]:
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        paths = [out_dir / "trace.csv", out_dir / "report.txt"]
        write_trace_csv(trace, paths[0])
        paths[1].write_text(report.format())
        if plot:
            paths.append(plot_trace(trace, out_dir / "voltage.png"))
    except OSError as err:
        raise OSError(f"cannot write outputs to {out_dir}: {err}") from err
    return paths


def plot_trace(trace: TimeSeriesTrace, path: Path) -> Path:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(9, 4.5))
    ax.plot(trace.t, trace.v_true, "k", lw=1.5, label="true")
    ax.plot(trace.t, trace.v_meas, "r", lw=1.0, label="measured (attacked)")
    styles = {
        "v_openloop": ("open-loop", "--"),
        "v_closedloop": ("closed-loop", ":"),
        "v_stage1": ("stage I only", "-."),
        "v_hat": ("secure", "-"),
    }
    for col, (lab, ls) in styles.items():
        if col in trace.columns:
            ax.plot(trace.t, trace.columns[col], ls, lw=1.0, label=lab)
    ax.set_xlabel("time [s]")
    ax.set_ylabel("terminal voltage [V]")
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path


# ---- GPR pipeline -----------------------------------------------------------------


def nominal_training_trace(cfg: ScenarioConfig) -> TimeSeriesTrace:
    """Clean charge of the un-aged battery used to generate GPR training data."""
    soc0 = cfg.soc0 if cfg.gpr.soc0 is None else cfg.gpr.soc0
    t_end = cfg.t_end if cfg.gpr.t_end is None else cfg.gpr.t_end
    return run_cccv(cfg.battery, cfg.i_cc, soc0, cfg.dt, t_end)


def generate_gpr_data(cfg: ScenarioConfig) -> dict[int, gp.RegionDataset]:
    trace = nominal_training_trace(cfg)
    return gp.build_training_set(
        trace,
        cfg.koopman,
        DEFAULT_TABLE,
        capacity=cfg.battery.capacity,
        onsets=cfg.gpr.onsets,
        horizon=cfg.gpr.horizon,
        n_max=cfg.gpr.n_max,
    )


def write_gpr_data(datasets: dict[int, gp.RegionDataset], out_dir: Path) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    lines = ["region,rows,soc_min,soc_max"]
    for j, ds in sorted(datasets.items()):
        p = out_dir / f"region_{j}.csv"
        gp.save_dataset(ds, p)
        paths.append(p)
        lines.append(f"{j},{len(ds.y)},{ds.coverage[0]!r},{ds.coverage[1]!r}")
    (out_dir / "coverage.csv").write_text("\n".join(lines) + "\n")
    return paths


def train_gpr_bank(
    data_dir: Path,
    noise_var: float = 1e-6,
    jitter: float = 1e-10,
    grid_search: bool = False,
) -> dict[int, gp.GprModel]:
    files = sorted(Path(data_dir).glob("region_*.csv"))
    if not files:
        raise FileNotFoundError(f"no region_*.csv datasets in {data_dir}")
    bank = {}
    for f in files:
        ds = gp.load_dataset(f)
        base = gp.default_hyper(ds.y)
        base = gp.GprHyper(base.length_scales, base.signal_var, noise_var, jitter)
        if grid_search:
            model = gp.grid_search(ds.x, ds.y, base=base, region=ds.region)
        else:
            model = gp.fit(ds.x, ds.y, base, region=ds.region)
        log.info("region %d: n=%d lml=%.3f", ds.region, model.n, gp.log_marginal_likelihood(model))
        bank[ds.region] = model
    return bank
