"""Re-time per-replication cost for the two budget-bound experiments."""
import time

from cttts.harness import ExperimentConfig, PolicySpec, run_replication
from cttts.instances import generate_gaussian_instance, generate_weibull_instance


def time_policy(instance, spec, budget, reps, base_seed=0):
    cfg = ExperimentConfig(
        instance=instance,
        policies=(spec,),
        budget=budget,
        macro_reps=reps,
        base_seed=base_seed,
        init_per_design=10,
        checkpoints=None,
    )
    cfg.validate()
    t0 = time.perf_counter()
    for rep in range(reps):
        run_replication(instance, spec, cfg, (base_seed, 0, rep))
    dt = time.perf_counter() - t0
    return dt / reps


g_inst = generate_gaussian_instance(0, 5, 10, 1)
w_inst = generate_weibull_instance(0)

print("criterion 8 (gaussian 5x10, T=10000):")
for spec in (
    PolicySpec(name="coin", kind="tttsc-coin", gamma=0.5, resample_cap=100),
    PolicySpec(name="ea", kind="ea"),
    PolicySpec(name="boldmc", kind="boldmc"),
):
    per = time_policy(g_inst, spec, 10_000, 5)
    print(f"  {spec.name:8s} {per:7.3f} s/rep -> 500 reps = {per * 500 / 60:6.1f} min")

print("criterion 9 (weibull, T=5000):")
for spec in (
    PolicySpec(name="cw", kind="tttsc-coin", gamma=0.5, resample_cap=100),
    PolicySpec(name="cn", kind="tttsc-coin", gamma=0.5, resample_cap=100, posterior_family="gaussian"),
    PolicySpec(name="ea-grid", kind="ea"),
    PolicySpec(name="ea-gauss", kind="ea", posterior_family="gaussian"),
):
    per = time_policy(w_inst, spec, 5_000, 3)
    print(f"  {spec.name:8s} {per:7.3f} s/rep -> 1000 reps = {per * 1000 / 60:6.1f} min")
