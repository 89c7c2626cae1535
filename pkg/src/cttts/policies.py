"""Sequential sampling policies.

The headline policy samples two parameter vectors from the posterior,
proposes a top set per context under each, re-draws the second until the
proposals disagree somewhere, picks a disagreeing context uniformly, and then
exploits or explores according to a per-context coin. Its adaptive variant
re-solves the static allocation at budget checkpoints and resets each coin to
the solved target-set share.

Baselines: equal allocation (deterministic sweeps), a KKT-balance follower,
and a one-step look-ahead rate maximizer. All argmax/argmin ties across the
module break toward the lowest design index, then the lowest context index,
so replays are deterministic.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import log_ndtr

from .allocation import (
    KNOWN_VAR,
    WEIBULL_CENSORED,
    context_rates_from_instance,
    optimize_gamma,
    solve_topm_allocation,
)
from .instances import GAUSSIAN, AllocationHistory, ProblemInstance, top_m_indices

POLICY_KINDS = ("tttsc-coin", "tttsc-tune", "ea", "boldmc", "aoamc")
DEFAULT_TUNE_SCHEDULE = (10, 100, 1000, 10000)
DEFAULT_RESAMPLE_CAP = 1000


@dataclass
class PolicyState:
    """Mutable per-replication state owned by exactly one run."""

    kind: str
    gamma: np.ndarray  # per context, strictly inside (0, 1)
    tune_schedule: tuple = ()
    resample_cap: int = DEFAULT_RESAMPLE_CAP
    history: AllocationHistory | None = None
    ea_order: tuple | None = None
    ea_cursor: int = 0
    warnings: list = field(default_factory=list)
    # Once a step exhausts the cap, later steps draw the whole cap in one
    # block (the posterior is concentrated, re-draws almost never disagree);
    # a quickly-found disagreement flips the schedule back to growing blocks.
    hot: bool = False

    def __post_init__(self):
        if self.kind not in POLICY_KINDS:
            raise ValueError(f"unknown policy kind {self.kind!r}; valid: {', '.join(POLICY_KINDS)}")
        self.gamma = np.atleast_1d(np.asarray(self.gamma, dtype=float)).copy()
        if np.any((self.gamma <= 0) | (self.gamma >= 1)):
            raise ValueError("gamma coordinates must be strictly inside (0, 1)")
        sched = tuple(int(t) for t in self.tune_schedule)
        if any(b >= a for a, b in zip(sched[1:], sched)):
            raise ValueError("tune_schedule must be strictly increasing")
        self.tune_schedule = sched
        if self.resample_cap < 1:
            raise ValueError("resample_cap must be at least 1")


@dataclass(frozen=True)
class StepDecision:
    """One sampling decision: which design of which context to simulate."""

    context: str
    design: str
    resamples_used: int = 0
    context_index: int = -1
    design_index: int = -1  # flat index into the instance's design list
    fallback: bool = False


def make_policy_state(
    kind: str,
    instance: ProblemInstance,
    gamma=0.5,
    tune_schedule=DEFAULT_TUNE_SCHEDULE,
    resample_cap: int = DEFAULT_RESAMPLE_CAP,
    history: AllocationHistory | None = None,
) -> PolicyState:
    g = np.broadcast_to(np.asarray(gamma, dtype=float), (instance.n_contexts,)).copy()
    return PolicyState(
        kind=kind,
        gamma=g,
        tune_schedule=tuple(tune_schedule) if kind == "tttsc-tune" else (),
        resample_cap=resample_cap,
        history=history,
        ea_order=_ea_sweep_order(instance) if kind == "ea" else None,
    )


def _decision(instance: ProblemInstance, flat: int, resamples: int = 0, fallback: bool = False) -> StepDecision:
    ci = int(instance.context_of_design[flat])
    return StepDecision(
        context=instance.contexts[ci],
        design=instance.flat_ids[flat],
        resamples_used=resamples,
        context_index=ci,
        design_index=flat,
        fallback=fallback,
    )


def _topm_rows(block: np.ndarray, m: int) -> np.ndarray:
    """Per-row top-m index sets (sorted), ties to the lowest index. (k,n)->(k,m)."""
    if m == 1:
        return np.argmax(block, axis=1)[:, None]
    order = np.argsort(-block, axis=1, kind="stable")
    return np.sort(order[:, :m], axis=1)


def tttsc_step(posteriors, state: PolicyState, instance: ProblemInstance, rng: np.random.Generator) -> StepDecision:
    """One top-two posterior-sampling decision.

    Draws a joint block whose first row is the proposal vector (each context's
    top set comes from it), then scans the remaining rows — re-drawing in
    growing blocks, counted against ``state.resample_cap`` — for a challenger
    whose set differs somewhere. A disagreeing context is chosen uniformly,
    one design from each set difference uniformly, and the coin
    gamma(context) picks between them. Instances where every context selects
    a single design from equally many candidates take a flat argmax path;
    ragged or top-m instances go through per-context set comparison.

    Once the posterior concentrates, the disagreement probability vanishes
    and the cap binds on essentially every step, so the fallback must keep
    the policy's stationary behavior rather than replace it: a uniform
    context is drawn and the same coin decides exploit or explore. Exploit
    samples the proposed top set. Explore approximates the conditional
    challenger draw the re-draw loop would produce if it could afford to
    finish: each challenger is weighted by its posterior probability of
    beating the proposal's boundary member (a normal tail in the posterior
    means, evaluated in log space). Under-sampled challengers get
    exponentially larger weight, so challenger effort keeps following the
    balance condition instead of freezing at the cap.
    """
    slices = instance.context_slices
    ms = instance.m
    n_ctx = instance.n_contexts
    cap = state.resample_cap
    w0 = slices[0].stop - slices[0].start
    flat_m1 = all(m == 1 for m in ms) and all(sl.stop - sl.start == w0 for sl in slices)

    first_k = cap if state.hot else 1
    draw = posteriors.sample_mu(rng, size=first_k + 1)
    mu1 = draw[0]
    chal = draw[1:]
    prop = mu1.reshape(n_ctx, w0).argmax(axis=1) if flat_m1 else None
    sets1 = None if flat_m1 else [_topm_rows(mu1[None, sl], ms[ci])[0] for ci, sl in enumerate(slices)]

    used = 0
    hit = None  # (challenger sets per context, disagreement mask per context)
    block = 8
    while True:
        k = chal.shape[0]
        if flat_m1:
            cand = chal.reshape(k, n_ctx, w0).argmax(axis=2)
            diff = cand != prop[None, :]
            rows = np.flatnonzero(diff.any(axis=1))
            if rows.size:
                r = int(rows[0])
                used += r + 1
                hit = (cand[r], diff[r])
                break
        else:
            diff_any = np.zeros(k, dtype=bool)
            sets2 = []
            for ci, sl in enumerate(slices):
                s2 = _topm_rows(chal[:, sl], ms[ci])
                sets2.append(s2)
                diff_any |= np.any(s2 != sets1[ci][None, :], axis=1)
            rows = np.flatnonzero(diff_any)
            if rows.size:
                r = int(rows[0])
                used += r + 1
                row_sets = [s2[r] for s2 in sets2]
                hit = (row_sets, None)
                break
        used += k
        if used >= cap:
            break
        chal = posteriors.sample_mu(rng, size=min(block, cap - used))
        block = min(block * 8, 64)
    state.hot = hit is None or used > 8

    if hit is None:
        ci = int(rng.integers(n_ctx))
        sl = slices[ci]
        s1 = np.array([prop[ci]]) if flat_m1 else sets1[ci]
        if rng.random() < state.gamma[ci] or s1.size == sl.stop - sl.start:
            local = int(s1[int(rng.integers(s1.size))])
            return _decision(instance, sl.start + local, resamples=used, fallback=True)
        local = _tail_mass_challenger(posteriors, sl, s1, rng)
        return _decision(instance, sl.start + local, resamples=used, fallback=True)

    if flat_m1:
        cand_row, diff_row = hit
        differing = np.flatnonzero(diff_row)
        ci = int(differing[int(rng.integers(differing.size))])
        local = int(prop[ci]) if rng.random() < state.gamma[ci] else int(cand_row[ci])
        return _decision(instance, slices[ci].start + local, resamples=used)

    row_sets, _ = hit
    lists1 = [s.tolist() for s in sets1]
    lists2 = [s.tolist() for s in row_sets]
    differing = [ci for ci in range(n_ctx) if lists1[ci] != lists2[ci]]
    ci = differing[int(rng.integers(len(differing)))]
    s1, s2 = lists1[ci], lists2[ci]
    # The sets are tiny sorted lists, so plain membership beats array setdiff.
    exploit_pool = [v for v in s1 if v not in s2]
    explore_pool = [v for v in s2 if v not in s1]
    d_exploit = exploit_pool[int(rng.integers(len(exploit_pool)))]
    d_explore = explore_pool[int(rng.integers(len(explore_pool)))]
    local = d_exploit if rng.random() < state.gamma[ci] else d_explore
    return _decision(instance, slices[ci].start + local, resamples=used)


def _posterior_mean_variance(posteriors) -> np.ndarray:
    """Variance of each design's posterior mean (not the predictive variance)."""
    if hasattr(posteriors, "pseudo_n"):
        a = posteriors.shape_a
        with np.errstate(divide="ignore"):
            ev = np.where(a > 1.0, posteriors.rate_b / (a - 1.0), posteriors.rate_b / a)
        return ev / posteriors.pseudo_n
    return np.maximum(posteriors.mu_var, 1e-12)


def _tail_mass_challenger(posteriors, sl: slice, s1: np.ndarray, rng: np.random.Generator) -> int:
    """Challenger drawn by approximate posterior probability of entering the top set.

    A challenger enters by beating the proposal's weakest member, so each
    design outside the proposal gets weight Phi(-z) with z the normalized gap
    of posterior means; the weights live in log space (the tails underflow
    long before the ratios stop mattering).
    """
    mu_mean = posteriors.mean_mu()[sl]
    var_mean = _posterior_mean_variance(posteriors)[sl]
    in_s1 = np.zeros(mu_mean.shape[0], dtype=bool)
    in_s1[s1] = True
    outside = np.flatnonzero(~in_s1)
    ref = s1[int(np.argmin(mu_mean[s1]))]
    z = (mu_mean[ref] - mu_mean[outside]) / np.sqrt(var_mean[ref] + var_mean[outside])
    logw = np.asarray(log_ndtr(-z), dtype=float)
    w = np.exp(logw - logw.max())
    cdf = np.cumsum(w)
    pick = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
    return int(outside[min(pick, outside.size - 1)])


def gamma_tune(posteriors, state: PolicyState, instance: ProblemInstance, solver=None) -> np.ndarray:
    """Re-solve the static allocation at plug-in posterior means; update gamma.

    The plug-in rate family follows the posterior model: Gaussian posteriors
    use the known-variance closed form with the posterior mean variance,
    grid posteriors use the censored family (exact but much slower; the
    adaptive variant is intended for Gaussian runs). Solver failure leaves
    gamma unchanged and records a warning on the state.
    """
    mu = posteriors.mean_mu()
    eta = posteriors.mean_eta()
    grid_model = hasattr(posteriors, "grid")
    family = WEIBULL_CENSORED if grid_model else KNOWN_VAR
    try:
        specs = context_rates_from_instance(instance, family=family, mu=mu, eta=eta)
        if solver is not None:
            allocation = solver(specs)
        elif all(s.m == 1 for s in specs):
            _, allocation = optimize_gamma(specs)
        else:
            allocation = solve_topm_allocation(specs)
        new_gamma = np.clip(np.asarray(allocation.gamma, dtype=float), 1e-3, 1.0 - 1e-3)
    except Exception as exc:  # solver failure must not kill the replication
        state.warnings.append(f"gamma tune failed, keeping gamma: {exc}")
        return state.gamma
    state.gamma[:] = new_gamma
    return state.gamma


def _ea_sweep_order(instance: ProblemInstance) -> tuple:
    """Static sweep: rounds over contexts, one new design per visited context.

    Contexts whose designs are exhausted within the sweep are skipped, so one
    full sweep of |D| steps samples every design exactly once while context
    visits stay interleaved.
    """
    order = []
    for round_idx in range(max(len(d) for d in instance.designs_per_context)):
        for ci, sl in enumerate(instance.context_slices):
            if round_idx < sl.stop - sl.start:
                order.append(sl.start + round_idx)
    return tuple(order)


def ea_step(state: PolicyState, instance: ProblemInstance) -> StepDecision:
    """Deterministic equal allocation; no randomness, no estimates."""
    if state.ea_order is None:
        state.ea_order = _ea_sweep_order(instance)
    flat = state.ea_order[state.ea_cursor % len(state.ea_order)]
    state.ea_cursor += 1
    return _decision(instance, flat)


def _min_ratio_triple(instance: ProblemInstance, means: np.ndarray, variances: np.ndarray, counts: np.ndarray):
    """Global argmin of the pairwise discrimination ratio.

    Returns (context index, target flat index, challenger flat index, per-
    context argmin table). Ties break toward lower design then context index
    via strict-less scanning in canonical order.
    """
    slices = instance.context_slices
    w0 = slices[0].stop - slices[0].start
    if w0 > 1 and all(m == 1 for m in instance.m) and all(sl.stop - sl.start == w0 for sl in slices):
        # Equal-width single-selection contexts: one pair table for the whole
        # instance instead of per-context numpy round trips. Masking the
        # leader with +inf leaves the same (lowest challenger, then lowest
        # context) tie-breaks as the generic scan.
        n_ctx = len(slices)
        mu = means.reshape(n_ctx, w0)
        var_n = (variances / counts).reshape(n_ctx, w0)
        rows = np.arange(n_ctx)
        top = mu.argmax(axis=1)
        gap = mu[rows, top][:, None] - mu
        ratio = gap * gap / (var_n[rows, top][:, None] + var_n)
        ratio[rows, top] = np.inf
        j_best = ratio.argmin(axis=1)
        vals = ratio[rows, j_best]
        ci = int(vals.argmin())
        per_context = [
            (float(vals[c]), slices[c].start + int(top[c]), slices[c].start + int(j_best[c]))
            for c in range(n_ctx)
        ]
        _, i, j = per_context[ci]
        return ci, i, j, per_context
    best = None
    per_context = []
    for ci, sl in enumerate(instance.context_slices):
        mu_c = means[sl]
        var_n = variances[sl] / counts[sl]
        top = np.sort(top_m_indices(mu_c, instance.m[ci]))
        in_top = np.zeros(mu_c.shape[0], dtype=bool)
        in_top[top] = True
        chal = np.flatnonzero(~in_top)
        if chal.size == 0:
            per_context.append(None)
            continue
        # Pair table in (target ascending, challenger ascending) order; the
        # row-major argmin therefore breaks ties toward lower design indices.
        ratio = (mu_c[top, None] - mu_c[None, chal]) ** 2 / (var_n[top, None] + var_n[None, chal])
        flat = int(np.argmin(ratio))
        val = float(ratio.flat[flat])
        i = sl.start + int(top[flat // chal.size])
        j = sl.start + int(chal[flat % chal.size])
        per_context.append((val, i, j))
        if best is None or val < best[0]:
            best = (val, ci, i, j)
    if best is None:
        raise ValueError("no (target, challenger) pair exists; every context has m = |D_c|")
    _, ci, i, j = best
    return ci, i, j, per_context


def boldmc_step(history: AllocationHistory, instance: ProblemInstance) -> StepDecision:
    """Balance-following baseline on sample means and variances.

    Finds the globally least-separated (target, challenger) pair, then samples
    the side whose summed squared relative effort (psi_bar^2 / sigma^2 over
    the context's targets vs challengers) is currently behind; the strict
    test sends ties to the challenger.
    """
    if history.total <= 0 or np.any(history.counts < 2):
        raise ValueError("boldmc_step needs at least 2 samples per design (sample variance)")
    means = history.mean
    variances = history.sample_variance()
    counts = history.counts.astype(float)
    ci, i, j, _ = _min_ratio_triple(instance, means, variances, counts)
    sl = instance.context_slices[ci]
    psi_bar = counts / history.total
    mu_c = means[sl]
    top = set(int(t) for t in top_m_indices(mu_c, instance.m[ci]))
    target_side = sum((psi_bar[sl.start + d]) ** 2 / variances[sl.start + d] for d in top)
    challenger_side = sum(
        (psi_bar[sl.start + d]) ** 2 / variances[sl.start + d]
        for d in range(sl.stop - sl.start)
        if d not in top
    )
    flat = i if target_side < challenger_side else j
    return _decision(instance, flat)


def aoamc_step(posteriors, history: AllocationHistory, instance: ProblemInstance) -> StepDecision:
    """One-step look-ahead baseline on posterior means and variances.

    Same candidate triple search as the balance follower, but the choice
    between the two candidates maximizes the context's smallest ratio after a
    hypothetical extra sample; ties explore the challenger.
    """
    if history.total <= 0 or np.any(history.counts < 1):
        raise ValueError("aoamc_step needs at least one sample per design")
    means = posteriors.mean_mu()
    variances = _posterior_predictive_variance(posteriors)
    counts = history.counts.astype(float)
    ci, i, j, _ = _min_ratio_triple(instance, means, variances, counts)
    sl = instance.context_slices[ci]
    mu_c = means[sl]
    top = set(int(t) for t in top_m_indices(mu_c, instance.m[ci]))
    pairs = [
        (sl.start + d, sl.start + dp)
        for d in sorted(top)
        for dp in range(sl.stop - sl.start)
        if dp not in top
    ]

    def min_ratio_with_bonus(extra_at: int) -> float:
        vals = []
        for a, b in pairs:
            na = counts[a] + (1.0 if a == extra_at else 0.0)
            nb = counts[b] + (1.0 if b == extra_at else 0.0)
            vals.append((means[a] - means[b]) ** 2 / (variances[a] / na + variances[b] / nb))
        return min(vals)

    flat = i if min_ratio_with_bonus(i) > min_ratio_with_bonus(j) else j
    return _decision(instance, flat)


def _posterior_predictive_variance(posteriors) -> np.ndarray:
    if hasattr(posteriors, "pseudo_n"):
        a = posteriors.shape_a
        with np.errstate(divide="ignore"):
            base = np.where(a > 1.0, posteriors.rate_b / (a - 1.0), posteriors.rate_b / a)
        return base * (posteriors.pseudo_n + 1.0) / posteriors.pseudo_n
    # Grid posteriors: plug-in variance of mu under the node distribution.
    d = posteriors.log_weights.shape[0]
    out = np.empty(d)
    mu_nodes = posteriors.grid.mu_flat
    for jj in range(d):
        p = np.diff(posteriors.cdf[jj], prepend=0.0)
        m1 = p @ mu_nodes
        out[jj] = max(p @ (mu_nodes - m1) ** 2, 1e-12)
    return out


def select_final(posteriors, instance: ProblemInstance, mode: str = "plugin", *, rng=None, draws: int = 200) -> dict:
    """Final per-context selected sets.

    ``plugin`` takes the posterior-mean top sets. ``bayes`` estimates each
    candidate set's posterior mass by frequency over joint posterior draws
    (valid because the posterior factorizes across contexts) and returns the
    per-context argmax; ties prefer the plugin set, then lexicographic order.
    """
    plugin_sets = {}
    mu = posteriors.mean_mu()
    for ci, sl in enumerate(instance.context_slices):
        top = top_m_indices(mu[sl], instance.m[ci])
        plugin_sets[instance.contexts[ci]] = frozenset(instance.flat_ids[sl.start + int(t)] for t in top)
    if mode == "plugin":
        return plugin_sets
    if mode != "bayes":
        raise ValueError("mode must be 'plugin' or 'bayes'")
    if rng is None:
        rng = np.random.default_rng(0)
    sample = posteriors.sample_mu(rng, size=draws)
    out = {}
    for ci, sl in enumerate(instance.context_slices):
        rows = _topm_rows(sample[:, sl], instance.m[ci])
        freq = {}
        for r in range(rows.shape[0]):
            key = tuple(int(v) for v in rows[r])
            freq[key] = freq.get(key, 0) + 1
        best_count = max(freq.values())
        tied = sorted(k for k, v in freq.items() if v == best_count)
        plugin_key = tuple(
            sorted(
                int(t) for t in top_m_indices(mu[sl], instance.m[ci])
            )
        )
        chosen = plugin_key if plugin_key in tied else tied[0]
        out[instance.contexts[ci]] = frozenset(instance.flat_ids[sl.start + v] for v in chosen)
    return out


# Exact step distribution ------------------------------------------------------

ANALYTIC_FUNCTION_CAP = 10**6
ANALYTIC_CONTEXT_CAP = 12


def analytic_policy_prob(pi, gamma):
    """Exact marginal step distribution of the coin policy (m=1 contexts).

    ``pi`` is a list of per-context probability vectors (each design's
    posterior probability of being that context's best), ``gamma`` a scalar
    or per-context coin. Enumerates every first-draw best-design function;
    the subset sum over disagreeing-context sets is collapsed exactly with an
    elementary-symmetric-polynomial recursion, so cost is linear in the
    function count rather than exponential in contexts. Sizes are capped
    (product of design counts <= 1e6, contexts <= 12): this is a test oracle,
    not a production path.

    Returns (psi, alpha, beta): per-context arrays of global design
    probabilities, the per-context probability vector, and their ratio.
    """
    pis = [np.asarray(p, dtype=float) for p in pi]
    n_ctx = len(pis)
    if n_ctx == 0:
        raise ValueError("need at least one context")
    if n_ctx > ANALYTIC_CONTEXT_CAP:
        raise ValueError(f"context count {n_ctx} exceeds the cap {ANALYTIC_CONTEXT_CAP}")
    sizes = [p.shape[0] for p in pis]
    if math.prod(sizes) > ANALYTIC_FUNCTION_CAP:
        raise ValueError("instance too large to enumerate first-draw functions")
    for p in pis:
        if p.ndim != 1 or p.shape[0] < 2:
            raise ValueError("each context needs a probability vector over >= 2 designs")
        if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
            raise ValueError("each pi vector must be a probability distribution")
        if p.max() >= 1.0:
            raise ValueError("degenerate pi: a design has posterior probability 1")
    gammas = np.broadcast_to(np.asarray(gamma, dtype=float), (n_ctx,))
    if np.any((gammas < 0) | (gammas > 1)):
        raise ValueError("gamma must lie in [0, 1]")

    psi = [np.zeros(s) for s in sizes]
    alpha = np.zeros(n_ctx)
    for combo in itertools.product(*(range(s) for s in sizes)):
        p_sel = np.array([pis[c][combo[c]] for c in range(n_ctx)])
        q_sel = 1.0 - p_sel
        w = float(np.prod(p_sel))
        if w >= 1.0:
            raise ValueError("degenerate pi: the first draw is deterministic")
        denom = 1.0 - w
        for c in range(n_ctx):
            # Sum over subsets containing c of prod(q in subset) * prod(p outside)
            # / |subset|, via coefficients of prod_{c' != c} (p_c' + q_c' x).
            coeffs = np.array([1.0])
            for cp in range(n_ctx):
                if cp == c:
                    continue
                nxt = np.zeros(coeffs.shape[0] + 1)
                nxt[: coeffs.shape[0]] += coeffs * p_sel[cp]
                nxt[1:] += coeffs * q_sel[cp]
                coeffs = nxt
            inner = q_sel[c] * float(np.sum(coeffs / (np.arange(coeffs.shape[0]) + 1.0)))
            base = w * inner / denom
            alpha[c] += base
            d1c = combo[c]
            psi[c][d1c] += gammas[c] * base
            explore = (1.0 - gammas[c]) * base / (1.0 - pis[c][d1c])
            for d in range(sizes[c]):
                if d != d1c:
                    psi[c][d] += explore * pis[c][d]
    beta = [psi[c] / alpha[c] for c in range(n_ctx)]
    return psi, alpha, beta
