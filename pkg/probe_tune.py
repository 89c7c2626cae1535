"""Measure c11 for the tune policy under its standalone acceptance config."""
import time

import numpy as np

from cttts.harness import ExperimentConfig, PolicySpec, run_replication
from probe_c67 import crit6_instance

R = 100
inst = crit6_instance()
spec = PolicySpec(name="tune", kind="tttsc-tune", gamma=0.5, resample_cap=100)
cfg = ExperimentConfig(
    instance=inst,
    policies=(spec,),
    budget=20_000,
    macro_reps=R,
    base_seed=0,
    init_per_design=10,
    checkpoints=(2_000, 20_000),
    record_counts=True,
)
cfg.validate()
slices = inst.context_slices

t0 = time.perf_counter()
ok_c6, ok_c11 = [], []
for rep in range(R):
    rec = run_replication(inst, spec, cfg, (0, 0, rep))
    n20 = rec.count_snapshots[-1]
    betas = [n20[sl][0] / n20[sl].sum() for sl in slices]
    ok_c6.append(all(abs(b - 0.5) <= 0.1 for b in betas))
    ok_c11.append(n20.min() >= 20)
wall = time.perf_counter() - t0
print(
    f"tune standalone: wall {wall:.0f}s  c6-style frac {np.mean(ok_c6):.3f}  "
    f"c11 frac {np.mean(ok_c11):.3f}"
)
