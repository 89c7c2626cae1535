"""Probability-of-correct-selection curves from the macro-replication harness.

Runs a small seeded experiment (coin policy against equal allocation),
prints the aggregated metric curves, and writes the CSV that ``cttts run``
would produce. Takes roughly half a minute.
"""

import time
from pathlib import Path

from cttts import ExperimentConfig, PolicySpec, export_csv, generate_gaussian_instance, run_experiment


def main():
    inst = generate_gaussian_instance(11, 3, 5, 1)
    cfg = ExperimentConfig(
        instance=inst,
        policies=(
            PolicySpec(name="coin", kind="tttsc-coin", gamma=0.5, resample_cap=100),
            PolicySpec(name="ea", kind="ea"),
        ),
        budget=2_000,
        macro_reps=30,
        base_seed=0,
        init_per_design=10,
        checkpoints=(200, 500, 1_000, 2_000),
    )
    cfg.validate()
    t0 = time.perf_counter()
    curve = run_experiment(cfg)
    print(f"{cfg.macro_reps} replications x {len(cfg.policies)} policies in {time.perf_counter() - t0:.1f}s\n")

    print(f"{'policy':>6} {'budget':>7} {'pcs':>6} {'+-se':>6} {'pcsw':>6} {'pcse':>6}")
    for row in curve.rows:
        print(
            f"{row['policy']:>6} {row['checkpoint']:>7} {row['pcs']:>6.3f}"
            f" {row['pcs_se']:>6.3f} {row['pcsw']:>6.3f} {row['pcse']:>6.3f}"
        )

    out = Path(__file__).with_name("pcs_demo.csv")
    export_csv(curve, out)
    print(f"\nwrote {out}")


if __name__ == "__main__":
    main()
