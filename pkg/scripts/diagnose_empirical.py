#!/usr/bin/env python3
"""Where does the empirical Stage II error come from?

Runs the DoS and FDI-aging scenarios and compares, over the attack interval:

* stage-I only (feedback and output ``v_p + e1``),
* empirical, as shipped (feedback and output ``v_p + e2``),
* empirical applied to the stage-I run's output only (no feedback of e2).

The third variant separates the size of the correction from its
amplification through the self-learning loop.
"""

from pathlib import Path

import numpy as np

from koopguard.attack import attack_active
from koopguard.battery import ocv_lookup
from koopguard.config import load_config
from koopguard.correction import DEFAULT_TABLE, CorrectionState, OcvTracker, secure_estimate_step
from koopguard.scenario import run_estimator, simulate_plant

ROOT = Path(__file__).resolve().parent.parent


def rmse(e):
    return float(np.sqrt(np.mean(np.square(e))))


def output_only_empirical(c, att, cfg):
    tracker = OcvTracker()
    ctx = None
    out = np.full(len(att), np.nan)
    for k in range(len(att)):
        soc = c["soc_cc"][k]
        docv, d2 = tracker.update(float(ocv_lookup(cfg.battery, soc)))
        if not att[k]:
            continue
        if ctx is None:
            ctx = CorrectionState(e1=c["e1"][k], region=DEFAULT_TABLE.region(soc))
        out[k], ctx = secure_estimate_step(c["v_pred"][k], ctx, soc, docv, d2)
    return out


def main():
    for name in ("dos", "fdi_aging"):
        cfg = load_config(ROOT / "configs" / f"{name}.cfg")
        trace = simulate_plant(cfg)
        att = np.array([attack_active(t, cfg.attack) for t in trace.t])
        s1 = run_estimator(cfg, trace, att, "stage1")
        emp = run_estimator(cfg, trace, att, "empirical")
        v = trace.v_true[att]
        e_s1 = s1["v_hat"][att] - v
        e_emp = emp["v_hat"][att] - v
        e_oo = output_only_empirical(s1, att, cfg)[att] - v
        e1 = emp["e1"][att]
        print(f"{name}: attack samples {att.sum()}, soc {s1['soc_cc'][att][0]:.4f}..{s1['soc_cc'][att][-1]:.4f}")
        print(f"  e1 at onset {e1[0]:+.3e} V, after last region switch {e1[-1]:+.3e} V")
        print(f"  RMSE stage-I only              {rmse(e_s1):.4e}  (mean {np.mean(e_s1):+.4e})")
        print(f"  RMSE empirical, fed back       {rmse(e_emp):.4e}  (mean {np.mean(e_emp):+.4e})")
        print(f"  RMSE empirical, output only    {rmse(e_oo):.4e}  (mean {np.mean(e_oo):+.4e})")


if __name__ == "__main__":
    main()
