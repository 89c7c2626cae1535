"""Measure criteria 6/7/11 statistics under the frozen protocol."""
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
specs = (
    PolicySpec(name="coin", kind="tttsc-coin", gamma=0.5, resample_cap=100),
    PolicySpec(name="tune", kind="tttsc-tune", gamma=0.5, resample_cap=100),
)
cfg = ExperimentConfig(
    instance=inst,
    policies=specs,
    budget=T,
    macro_reps=R,
    base_seed=0,
    init_per_design=10,
    checkpoints=CKS,
    record_counts=True,
)
cfg.validate()

slices = inst.context_slices
results = {}
for pol_idx, spec in enumerate(specs):
    t0 = time.perf_counter()
    c6_pass = []
    spreads_20k = []  # (rep, ctx)
    clause2 = []  # (rep, ctx) bool
    c11_pass = []
    for rep in range(R):
        rec = run_replication(inst, spec, cfg, (cfg.base_seed, pol_idx, rep))
        n2, n20 = rec.count_snapshots
        beta_best = [n20[sl][0] / n20[sl].sum() for sl in slices]
        c6_pass.append(all(abs(b - 0.5) <= 0.1 for b in beta_best))
        rows = empirical_rate_trajectory([(2000, n2), (20000, n20)], inst, 0.5)
        s2 = [rows[c]["spread"] for c in range(3)]
        s20 = [rows[3 + c]["spread"] for c in range(3)]
        spreads_20k.append(s20)
        clause2.append([a < b for a, b in zip(s20, s2)])
        c11_pass.append(n20.min() >= 20)
    wall = time.perf_counter() - t0
    results[spec.name] = dict(
        c6=float(np.mean(c6_pass)),
        spread_mean=np.mean(np.asarray(spreads_20k, dtype=float), axis=0),
        clause2=np.mean(np.asarray(clause2, dtype=float), axis=0),
        c11=float(np.mean(c11_pass)),
        wall=wall,
    )
    r = results[spec.name]
    print(f"{spec.name}: wall {wall:.0f}s  c6 frac {r['c6']:.3f}  "
          f"spread20k mean {np.round(r['spread_mean'], 4)}  "
          f"clause2 frac {np.round(r['clause2'], 3)}  c11 frac {r['c11']:.3f}", flush=True)

print("criterion 6 (coin): need >= 0.90:", results["coin"]["c6"])
print("criterion 7 clause1 (coin, all <= 0.5):", np.round(results["coin"]["spread_mean"], 4))
print("criterion 7 clause2 (coin, all >= 0.80):", np.round(results["coin"]["clause2"], 3))
print("criterion 11 (>=0.95 both):", results["coin"]["c11"], results["tune"]["c11"])
