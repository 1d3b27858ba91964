"""Scenario configuration: INI-style files with ``section.key`` addressing.

See ``configs/dos.cfg`` for the full annotated schema. All values are decimal
text in SI units, except battery capacity (ampere-hours). Relative paths are
resolved against the working directory.
"""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .attack import AttackSpec, AttackSpecError
from .battery import DEFAULT_OCV_TABLE, BatteryDomainError, BatteryParams
from .koopman import KoopmanError, WindowConfig
from .observers import DEFAULT_GAIN

ESTIMATORS = ("secure", "stage1_only", "open_loop", "closed_loop")
CORRECTORS = ("empirical", "gpr")
CHARGER_FEEDBACK = ("true", "corrupt", "secure")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class GprTrainingConfig:
    soc0: Optional[float] = None  # defaults to charge.soc0
    t_end: Optional[float] = 6000.0  # None: charge.t_end
    onsets: tuple[float, ...] = tuple(50.0 + 250.0 * i for i in range(19))
    horizon: Optional[float] = 1200.0
    n_max: int = 2000
    noise_var: float = 1e-6
    jitter: float = 1e-10
    grid_search: bool = False


@dataclass(frozen=True)
class ScenarioConfig:
    name: str = "scenario"
    battery: BatteryParams = field(default_factory=BatteryParams)
    aging_factor: float = 1.0
    age_rc: bool = False
    i_cc: float = 5.0
    soc0: float = 0.35
    dt: float = 1.0
    t_end: float = 1200.0
    charger_feedback: str = "true"
    attack: AttackSpec = field(default_factory=AttackSpec)
    koopman: WindowConfig = field(default_factory=WindowConfig)
    corrector: str = "empirical"
    models_dir: Optional[Path] = None
    estimators: frozenset = frozenset(ESTIMATORS)
    closed_loop_gain: tuple[float, float, float] = DEFAULT_GAIN
    noise_std: float = 0.0
    seed: int = 0
    output_dir: Path = Path("out")
    gpr: GprTrainingConfig = field(default_factory=GprTrainingConfig)

    def validate(self, check_files: bool = True) -> "ScenarioConfig":
        if self.aging_factor < 1.0:
            raise ConfigError(f"battery.aging_factor must be >= 1, got {self.aging_factor}")
        if not 0.0 <= self.soc0 <= 1.0:
            raise ConfigError(f"charge.soc0 must lie in [0, 1], got {self.soc0}")
        if self.i_cc <= 0 or self.dt <= 0 or self.t_end <= 0:
            raise ConfigError("charge.i_cc, charge.dt and charge.t_end must be positive")
        if self.charger_feedback not in CHARGER_FEEDBACK:
            raise ConfigError(f"charge.feedback must be one of {CHARGER_FEEDBACK}, got {self.charger_feedback!r}")
        if self.corrector not in CORRECTORS:
            raise ConfigError(f"corrector.kind must be one of {CORRECTORS}, got {self.corrector!r}")
        unknown = set(self.estimators) - set(ESTIMATORS)
        if unknown:
            raise ConfigError(f"unknown estimators {sorted(unknown)}; expected a subset of {ESTIMATORS}")
        if self.noise_std < 0:
            raise ConfigError("sensor.noise_std must be nonnegative")
        if self.attack.kind != "none" and self.attack.t_start < 0:
            raise ConfigError("attack.t_start must be nonnegative")
        if self.corrector == "gpr" and "secure" in self.estimators:
            if self.models_dir is None:
                raise ConfigError("corrector.kind = gpr requires a model directory (corrector.models or --models)")
            if check_files and not Path(self.models_dir).is_dir():
                raise ConfigError(f"GPR model directory {self.models_dir} does not exist")
        return self

    def replace(self, **changes) -> "ScenarioConfig":
        return dataclasses.replace(self, **changes)


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(x) for x in text.replace(";", ",").split(",") if x.strip())


def _opt_float(text: Optional[str]) -> Optional[float]:
    if text is None or not text.strip() or text.strip().lower() in ("none", "inf", "open"):
        return None
    return float(text)


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def load_config(path) -> ScenarioConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {path} not found")
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        cp.read(path)
        return _from_parser(cp)
    except ConfigError:
        raise
    except (ValueError, KeyError, configparser.Error, BatteryDomainError, AttackSpecError, KoopmanError) as err:
        raise ConfigError(f"{path}: {err}") from err


def parse_config(text: str) -> ScenarioConfig:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        cp.read_string(text)
        return _from_parser(cp)
    except ConfigError:
        raise
    except (ValueError, KeyError, configparser.Error, BatteryDomainError, AttackSpecError, KoopmanError) as err:
        raise ConfigError(str(err)) from err


def _from_parser(cp: configparser.ConfigParser) -> ScenarioConfig:
    def get(section, key, default=None):
        if cp.has_option(section, key):
            return cp.get(section, key)
        return default

    d = BatteryParams()
    ocv_soc = get("battery", "ocv_soc")
    ocv_v = get("battery", "ocv_v")
    if (ocv_soc is None) != (ocv_v is None):
        raise ConfigError("battery.ocv_soc and battery.ocv_v must be given together")
    table = DEFAULT_OCV_TABLE
    if ocv_soc is not None:
        s, v = _floats(ocv_soc), _floats(ocv_v)
        if len(s) != len(v):
            raise ConfigError(f"battery.ocv_soc has {len(s)} entries but battery.ocv_v has {len(v)}")
        table = tuple(zip(s, v))
    battery = BatteryParams(
        capacity=float(get("battery", "capacity", d.capacity)),
        r0=float(get("battery", "r0", d.r0)),
        r1=float(get("battery", "r1", d.r1)),
        c1=float(get("battery", "c1", d.c1)),
        r2=float(get("battery", "r2", d.r2)),
        c2=float(get("battery", "c2", d.c2)),
        ocv_table=table,
        v_max=float(get("battery", "v_max", d.v_max)),
        i_cutoff=float(get("battery", "i_cutoff", d.i_cutoff)),
    )
    attack = AttackSpec(
        kind=get("attack", "kind", "none").strip(),
        t_start=float(get("attack", "t_start", 0.0)),
        t_end=_opt_float(get("attack", "t_end")),
        bias=float(get("attack", "bias", 0.0)),
        detection_delay=float(get("attack", "detection_delay", 0.0)),
    )
    w = WindowConfig()
    koopman = WindowConfig(
        s_total=int(get("koopman", "s_total", w.s_total)),
        s_learn=int(get("koopman", "s_learn", w.s_learn)),
        embed_depth=int(get("koopman", "embed_depth", w.embed_depth)),
        ridge=float(get("koopman", "ridge", w.ridge)),
    )
    models = get("corrector", "models")
    models_dir = None if not models or not models.strip() else Path(models.strip())
    enabled = get("estimators", "enabled")
    estimators = frozenset(ESTIMATORS) if enabled is None else frozenset(
        x.strip() for x in enabled.split(",") if x.strip()
    )
    gain = _floats(get("estimators", "closed_loop_gain", ",".join(map(str, DEFAULT_GAIN))))
    if len(gain) != 3:
        raise ConfigError(f"estimators.closed_loop_gain needs 3 entries, got {len(gain)}")
    g = GprTrainingConfig()
    gpr = GprTrainingConfig(
        soc0=_opt_float(get("gpr", "train_soc0")),
        t_end=_opt_float(get("gpr", "train_t_end")),
        onsets=_floats(get("gpr", "onsets")) if get("gpr", "onsets") else g.onsets,
        horizon=_opt_float(get("gpr", "horizon", str(g.horizon))),
        n_max=int(get("gpr", "n_max", g.n_max)),
        noise_var=float(get("gpr", "noise_var", g.noise_var)),
        jitter=float(get("gpr", "jitter", g.jitter)),
        grid_search=_bool(get("gpr", "grid_search", "false")),
    )
    out = get("output", "dir", "out")
    cfg = ScenarioConfig(
        name=get("scenario", "name", "scenario"),
        battery=battery,
        aging_factor=float(get("battery", "aging_factor", 1.0)),
        age_rc=_bool(get("battery", "age_rc", "false")),
        i_cc=float(get("charge", "i_cc", 5.0)),
        soc0=float(get("charge", "soc0", 0.35)),
        dt=float(get("charge", "dt", 1.0)),
        t_end=float(get("charge", "t_end", 1200.0)),
        charger_feedback=get("charge", "feedback", "true").strip(),
        attack=attack,
        koopman=koopman,
        corrector=get("corrector", "kind", "empirical").strip(),
        models_dir=models_dir,
        estimators=estimators,
        closed_loop_gain=tuple(gain),
        noise_std=float(get("sensor", "noise_std", 0.0)),
        seed=int(get("scenario", "seed", 0)),
        output_dir=Path(out.strip()),
        gpr=gpr,
    )
    return cfg.validate(check_files=False)
