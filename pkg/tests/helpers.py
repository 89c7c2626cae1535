"""Shared simulation helpers used by both the unit and acceptance suites."""

import numpy as np


def mc_policy_law(pi, gamma, n_draws: int, rng: np.random.Generator):
    """Monte-Carlo sample of the coin policy's one-step law on categorical draws.

    Simulates ``n_draws`` independent steps of the top-two procedure for m=1
    contexts whose posterior "best design" laws are the categorical vectors in
    ``pi``: draw a best-design function, redraw a challenger function until
    some context disagrees, pick a disagreeing context uniformly, and let the
    per-context coin choose between the two designs. Everything is vectorized
    across draws; the rejection loop only touches still-agreeing rows.

    Returns ``(ctx, design)`` integer arrays of shape (n_draws,): the chosen
    context index and the chosen design's local index within that context.
    """
    pis = [np.asarray(p, dtype=float) for p in pi]
    n_ctx = len(pis)
    gammas = np.broadcast_to(np.asarray(gamma, dtype=float), (n_ctx,))
    cdfs = [np.cumsum(p) for p in pis]

    def draw(k):
        cols = [np.searchsorted(cdf, rng.random(k), side="right") for cdf in cdfs]
        return np.column_stack(cols)

    first = draw(n_draws)
    second = draw(n_draws)
    agree = np.all(second == first, axis=1)
    while agree.any():
        idx = np.flatnonzero(agree)
        second[idx] = draw(idx.size)
        agree[idx] = np.all(second[idx] == first[idx], axis=1)

    diff = first != second
    n_diff = diff.sum(axis=1)
    pick = np.minimum((rng.random(n_draws) * n_diff).astype(np.int64), n_diff - 1)
    ctx = np.argmax(np.cumsum(diff, axis=1) == (pick + 1)[:, None], axis=1)

    rows = np.arange(n_draws)
    exploit = rng.random(n_draws) < gammas[ctx]
    design = np.where(exploit, first[rows, ctx], second[rows, ctx])
    return ctx, design


def law_frequencies(ctx, design, sizes):
    """Empirical (psi_hat, alpha_hat) tables from mc_policy_law output."""
    n = ctx.shape[0]
    psi_hat = []
    alpha_hat = np.zeros(len(sizes))
    for c, size in enumerate(sizes):
        mask = ctx == c
        alpha_hat[c] = mask.mean()
        psi_hat.append(np.bincount(design[mask], minlength=size) / n)
    return psi_hat, alpha_hat
