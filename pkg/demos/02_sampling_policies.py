"""Sampling policies: the exact one-step law and a live replication.

First prints the closed-form one-step distribution of the coin policy for a
hand-sized posterior-probability table, then runs one full replication and
shows the empirical allocation landing on the coin's target share.
"""

import numpy as np

from cttts import (
    ExperimentConfig,
    PolicySpec,
    analytic_policy_prob,
    generate_gaussian_instance,
    run_replication,
    true_top_m,
)


def main():
    pi = [(0.6, 0.3, 0.1), (0.2, 0.5, 0.3)]
    psi, alpha, beta = analytic_policy_prob(pi, 0.5)
    print("one-step law for pi =", pi, "gamma = 0.5")
    for c, row in enumerate(psi):
        print(
            f"  context {c}: psi = {np.round(row, 4).tolist()}  (context mass {alpha[c]:.4f},"
            f" conditional law {np.round(beta[c], 4).tolist()})"
        )

    inst = generate_gaussian_instance(11, 2, 5, 1)
    spec = PolicySpec(name="coin", kind="tttsc-coin", gamma=0.5, resample_cap=100)
    cfg = ExperimentConfig(
        instance=inst,
        policies=(spec,),
        budget=8_000,
        macro_reps=1,
        base_seed=0,
        init_per_design=10,
        checkpoints=(8_000,),
        record_counts=True,
    )
    cfg.validate()
    rec = run_replication(inst, spec, cfg, (0, 0, 0))
    counts = rec.count_snapshots[-1]
    print(f"\none replication, budget {cfg.budget}, gamma = 0.5:")
    for ci, ctx in enumerate(inst.contexts):
        sl = inst.context_slices[ci]
        best_local = int(np.argmax(inst.mu[sl]))
        share = counts[sl][best_local] / counts[sl].sum()
        print(
            f"  {ctx}: counts {counts[sl].tolist()}  best-design share {share:.3f}"
            f"  true top set {sorted(true_top_m(inst, ctx))}"
        )
    print("  correct at final checkpoint per context:", rec.correct[-1].tolist())
    print("  fallback steps:", rec.fallback_steps)


if __name__ == "__main__":
    main()
