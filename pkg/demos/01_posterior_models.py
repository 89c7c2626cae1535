"""Posterior models: conjugate normal-gamma updates and the censored grid.

Feeds simulated observations to both posterior engines and watches the
posterior mean of each design's mu walk toward the truth, then evaluates the
two divergences that drive the large-deviations rates.
"""

import numpy as np

from cttts import (
    AllocationHistory,
    generate_gaussian_instance,
    generate_weibull_instance,
    kl_gaussian,
    kl_weibull_censored,
    posterior_set_for,
    simulate,
)


def feed(instance, posteriors, n_per_design, rng):
    history = AllocationHistory(instance)
    for r in range(n_per_design):
        for j, design in enumerate(instance.flat_ids):
            obs = simulate(instance, design, rng)
            history.record(j, obs.value)
            posteriors.update(j, obs.value, history)
    return history


def main():
    rng = np.random.default_rng(7)

    inst = generate_gaussian_instance(3, 1, 4, 1)
    posts = posterior_set_for(inst)
    print("gaussian instance, 4 designs, true mu:", np.round(inst.mu, 3).tolist())
    total = 0
    for n in (10, 100, 1000):
        feed(inst, posts, n - total, rng)
        total = n
        print(f"  posterior mean after {total:4d} obs/design:", np.round(posts.mean_mu(), 3).tolist())

    winst = generate_weibull_instance(2)
    wposts = posterior_set_for(winst)
    sl = winst.context_slices[0]
    print(f"\ncensored instance, context {winst.contexts[0]!r}, true mu:", np.round(winst.mu[sl], 1).tolist())
    total = 0
    for n in (20, 200):
        feed(winst, wposts, n - total, rng)
        total = n
        print(f"  grid posterior mean after {total:3d} obs/design:", np.round(wposts.mean_mu()[sl], 1).tolist())

    print("\ndivergences:")
    print("  kl_gaussian((0,1), (1,1))          =", kl_gaussian((0.0, 1.0), (1.0, 1.0)))
    print("  kl_gaussian((0,1), (0,4))          =", round(kl_gaussian((0.0, 1.0), (0.0, 4.0)), 6))
    v = kl_weibull_censored((100.0, 2.0), (80.0, 3.0), 150.0)
    print("  kl_weibull_censored((100,2),(80,3), tau=150) =", round(v, 6))


if __name__ == "__main__":
    main()
