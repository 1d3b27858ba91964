"""Command line entry point: ``koopguard <subcommand> ...``.

Exit codes: 0 success, 2 configuration error, 3 numerical error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import gpr as gp
from .attack import AttackSpec
from .config import ConfigError, load_config
from .correction import CorrectionError
from .estimator import EstimatorError
from .koopman import KoopmanError
from .observers import ObserverDivergence
from .scenario import (
    attack_from_flags,
    compute_metrics,
    emit_outputs,
    generate_gpr_data,
    read_trace_csv,
    run_scenario,
    simulate_plant,
    train_gpr_bank,
    write_gpr_data,
)

EXIT_CONFIG = 2
EXIT_NUMERICAL = 3

log = logging.getLogger("koopguard")


def _cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    cfg = cfg.replace(attack=AttackSpec())
    trace = simulate_plant(cfg)
    out = Path(args.out) if args.out else cfg.output_dir / "nominal.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w") as fh:
        fh.write("t,current,soc_true,v_true,v_meas\n")
        for row in zip(trace.t, trace.current, trace.soc_true, trace.v_true, trace.v_meas):
            fh.write(",".join(repr(float(x)) for x in row) + "\n")
    print(f"wrote {len(trace)} samples to {out}")
    return 0


def _cmd_gen_gpr_data(args) -> int:
    cfg = load_config(args.config)
    datasets = generate_gpr_data(cfg)
    paths = write_gpr_data(datasets, Path(args.out))
    for j, ds in sorted(datasets.items()):
        print(f"region {j}: {len(ds.y)} rows, soc {ds.coverage[0]:.4f}..{ds.coverage[1]:.4f}")
    print(f"wrote {len(paths)} datasets to {args.out}")
    return 0


def _cmd_train_gpr(args) -> int:
    bank = train_gpr_bank(Path(args.data), args.noise_var, args.jitter, args.grid_search)
    paths = gp.save_bank(bank, Path(args.out))
    for j, m in sorted(bank.items()):
        print(f"region {j}: n={m.n} length_scales={m.hyper.length_scales} lml={gp.log_marginal_likelihood(m):.2f}")
    print(f"wrote {len(paths)} models to {args.out}")
    return 0


def _cmd_run_scenario(args) -> int:
    cfg = load_config(args.config)
    changes = {}
    if args.corrector:
        changes["corrector"] = args.corrector
    if args.models:
        changes["models_dir"] = Path(args.models)
    if args.out:
        changes["output_dir"] = Path(args.out)
    cfg = cfg.replace(**changes).validate()
    trace, report = run_scenario(cfg)
    paths = emit_outputs(trace, report, cfg.output_dir, plot=args.plot)
    sys.stdout.write(report.format())
    print("outputs: " + ", ".join(str(p) for p in paths))
    return 0


def _cmd_report(args) -> int:
    trace = read_trace_csv(Path(args.trace))
    report = compute_metrics(trace, attack_from_flags(trace), label=str(args.trace))
    sys.stdout.write(report.format())
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="koopguard", description="Secure battery terminal-voltage estimation")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="nominal CCCV trace only")
    p.add_argument("--config", required=True)
    p.add_argument("--out", help="CSV path (default: <output.dir>/nominal.csv)")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("gen-gpr-data", help="stage-I self-learning training data per SOC region")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_gen_gpr_data)

    p = sub.add_parser("train-gpr", help="fit one GP per region from gen-gpr-data output")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--noise-var", type=float, default=1e-6)
    p.add_argument("--jitter", type=float, default=1e-10)
    p.add_argument("--grid-search", action="store_true", help="pick length scales from {0.3, 1, 3}")
    p.set_defaults(func=_cmd_train_gpr)

    p = sub.add_parser("run-scenario", help="attack scenario with secure estimator and baselines")
    p.add_argument("--config", required=True)
    p.add_argument("--corrector", choices=("empirical", "gpr"))
    p.add_argument("--models", help="GPR model directory")
    p.add_argument("--out", help="output directory (overrides output.dir)")
    p.add_argument("--plot", action="store_true")
    p.set_defaults(func=_cmd_run_scenario)

    p = sub.add_parser("report", help="recompute metrics from a trace.csv")
    p.add_argument("--trace", required=True)
    p.set_defaults(func=_cmd_report)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError, gp.CorrectorConfigError) as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except (
        EstimatorError,
        gp.GprNumericalError,
        ObserverDivergence,
        KoopmanError,
        CorrectionError,
        np.linalg.LinAlgError,
        FloatingPointError,
    ) as err:
        print(f"numerical error: {err}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
