"""Criterion-7 clause-1 sensitivity to the resample cap under the current code."""
import sys
import time

import numpy as np

from cttts.allocation import empirical_rate_trajectory
from cttts.harness import ExperimentConfig, PolicySpec, run_replication
from cttts.instances import GAUSSIAN, ProblemInstance

R = 100
T = 20_000
CKS = (2_000, 20_000)


def crit6_instance():
    contexts = tuple(f"c{i}" for i in range(3))
    designs, params = [], {}
    for ci in range(3):
        ids = tuple(f"c{ci}_d{j}" for j in range(5))
        designs.append(ids)
        for j, d in enumerate(ids):
            params[d] = (float(4 - j), 25.0)
    return ProblemInstance(
        family=GAUSSIAN,
        contexts=contexts,
        designs_per_context=tuple(designs),
        true_params=params,
        m=(1, 1, 1),
        tau=None,
        theta_box=((-60.0, 60.0), (25e-4, 25e4)),
    )


inst = crit6_instance()
slices = inst.context_slices
for cap in (int(v) for v in sys.argv[1].split(",")):
    spec = PolicySpec(name="coin", kind="tttsc-coin", gamma=0.5, resample_cap=cap)
    cfg = ExperimentConfig(
        instance=inst, policies=(spec,), budget=T, macro_reps=R, base_seed=0,
        init_per_design=10, checkpoints=CKS, record_counts=True,
    )
    cfg.validate()
    t0 = time.perf_counter()
    c6_pass, s20_all, clause2, c11_pass, fb = [], [], [], [], []
    for rep in range(R):
        rec = run_replication(inst, spec, cfg, (0, 0, rep))
        n2, n20 = rec.count_snapshots
        beta_best = [n20[sl][0] / n20[sl].sum() for sl in slices]
        c6_pass.append(all(abs(b - 0.5) <= 0.1 for b in beta_best))
        rows = empirical_rate_trajectory([(2000, n2), (20000, n20)], inst, 0.5)
        s2 = [rows[c]["spread"] for c in range(3)]
        s20 = [rows[3 + c]["spread"] for c in range(3)]
        s20_all.append(s20)
        clause2.append([a < b for a, b in zip(s20, s2)])
        c11_pass.append(n20.min() >= 20)
        fb.append(rec.fallback_steps)
    wall = time.perf_counter() - t0
    print(
        f"cap {cap:4d}: wall {wall:.0f}s  c6 {np.mean(c6_pass):.3f}  "
        f"spread20k {np.round(np.mean(np.asarray(s20_all, float), axis=0), 4)}  "
        f"clause2 {np.round(np.mean(np.asarray(clause2, float), axis=0), 3)}  "
        f"c11 {np.mean(c11_pass):.3f}  fallback/rep {np.mean(fb):.0f}",
        flush=True,
    )
