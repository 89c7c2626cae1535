"""Problem instances: contexts, designs, true sampling distributions, targets.

An instance fixes the ground truth being simulated: a finite set of contexts,
a disjoint design set per context, a distribution family tag with per-design
true parameters, and the per-context target set size. Instances are immutable
after construction and safe to share across workers; sampling takes an
externally owned random stream.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

GAUSSIAN = "gaussian"
WEIBULL = "weibull-censored"
FAMILIES = (GAUSSIAN, WEIBULL)


def _weibull_scale(mu: float, k: float) -> float:
    # mean = scale * Gamma(1 + 1/k), so scale = mu / Gamma(1 + 1/k)
    return mu / math.gamma(1.0 + 1.0 / k)


@dataclass(frozen=True)
class ProblemInstance:
    """Ground truth for one ranking-and-selection problem.

    Fields
    ------
    family : distribution family tag, one of ``FAMILIES``.
    contexts : ordered context identifiers.
    designs_per_context : per context, ordered design identifiers; design ids
        are globally unique.
    true_params : design id -> (mu, eta). For the Gaussian family eta is the
        observation variance; for censored Weibull eta is the shape k and the
        scale is derived from mu = scale * Gamma(1 + 1/k).
    m : per context, target set size (the m_c designs with largest mu).
    tau : censoring horizon (censored Weibull only).
    theta_box : ((mu_lo, mu_hi), (eta_lo, eta_hi)) compact parameter box used
        by posterior samplers. For the Weibull grid posterior the box is read
        in native (scale, shape) coordinates.
    """

    family: str
    contexts: tuple[str, ...]
    designs_per_context: tuple[tuple[str, ...], ...]
    true_params: dict = field(repr=False)
    m: tuple[int, ...]
    tau: float | None
    theta_box: tuple[tuple[float, float], tuple[float, float]]

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}; expected one of {FAMILIES}")
        if len(self.contexts) != len(self.designs_per_context) or len(self.contexts) != len(self.m):
            raise ValueError("contexts, designs_per_context and m must be aligned")
        if len(set(self.contexts)) != len(self.contexts):
            raise ValueError("duplicate context ids")
        seen = set()
        for ids in self.designs_per_context:
            for d in ids:
                if d in seen:
                    raise ValueError(f"design id {d!r} appears in more than one context")
                seen.add(d)
        if seen != set(self.true_params):
            raise ValueError("true_params keys must match the design ids exactly")
        for ci, ids in enumerate(self.designs_per_context):
            if not 1 <= self.m[ci] <= len(ids):
                raise ValueError(f"m[{ci}]={self.m[ci]} outside 1..{len(ids)}")
            mus = [self.true_params[d][0] for d in ids]
            if len(set(mus)) != len(mus):
                raise ValueError(f"context {self.contexts[ci]!r} has tied mu values; top-m ill defined")
        if self.family == WEIBULL:
            if self.tau is None or not self.tau > 0:
                raise ValueError("censored Weibull instances need tau > 0")
        (mu_lo, mu_hi), (eta_lo, eta_hi) = self.theta_box
        if not (mu_lo < mu_hi and eta_lo < eta_hi):
            raise ValueError("theta_box bounds must be strictly ordered")
        if self.family == GAUSSIAN:
            # The box truncates posterior draws, so the truth must sit strictly inside.
            for d, (mu, eta) in self.true_params.items():
                if not (mu_lo < mu < mu_hi and eta_lo < eta < eta_hi):
                    raise ValueError(f"true parameters of {d!r} not strictly inside theta_box")

    # Flat views used by the sequential policies; design order is context-major.

    @cached_property
    def flat_ids(self) -> tuple[str, ...]:
        return tuple(d for ids in self.designs_per_context for d in ids)

    @cached_property
    def design_index(self) -> dict:
        return {d: j for j, d in enumerate(self.flat_ids)}

    @cached_property
    def context_index(self) -> dict:
        return {c: i for i, c in enumerate(self.contexts)}

    @cached_property
    def context_slices(self) -> tuple[slice, ...]:
        out, start = [], 0
        for ids in self.designs_per_context:
            out.append(slice(start, start + len(ids)))
            start += len(ids)
        return tuple(out)

    @cached_property
    def context_of_design(self) -> np.ndarray:
        out = np.empty(self.n_designs, dtype=np.int64)
        for ci, sl in enumerate(self.context_slices):
            out[sl] = ci
        return out

    @cached_property
    def mu(self) -> np.ndarray:
        return np.array([self.true_params[d][0] for d in self.flat_ids], dtype=float)

    @cached_property
    def eta(self) -> np.ndarray:
        return np.array([self.true_params[d][1] for d in self.flat_ids], dtype=float)

    @property
    def n_contexts(self) -> int:
        return len(self.contexts)

    @property
    def n_designs(self) -> int:
        return len(self.flat_ids)

    def m_of(self, context: str) -> int:
        return self.m[self._context_pos(context)]

    def _context_pos(self, context: str) -> int:
        try:
            return self.context_index[context]
        except KeyError:
            raise KeyError(f"unknown context id {context!r}") from None


@dataclass(frozen=True)
class Observation:
    """One simulation output: the sampled design and its real-valued outcome."""

    design: str
    value: float


def top_m_indices(mu: np.ndarray, m: int) -> np.ndarray:
    """Indices of the m largest entries, ties broken toward the lowest index.

    Returns a sorted index array so callers can compare selections as sets.
    """
    if m == 1:
        return np.array([int(np.argmax(mu))])
    order = np.lexsort((np.arange(len(mu)), -mu))
    return np.sort(order[:m])


def true_top_m(instance: ProblemInstance, context: str) -> frozenset:
    """Target set P_c: the m_c design ids of ``context`` with largest true mu."""
    ci = instance._context_pos(context)
    sl = instance.context_slices[ci]
    ids = instance.designs_per_context[ci]
    idx = top_m_indices(instance.mu[sl], instance.m[ci])
    return frozenset(ids[j] for j in idx)


def simulate(instance: ProblemInstance, design: str, rng: np.random.Generator) -> Observation:
    """Draw one observation from the true distribution of ``design``.

    Gaussian family: N(mu, eta) with eta the variance. Censored Weibull:
    inverse-CDF draw scale * (-ln U)^(1/k), censored at tau.
    """
    j = instance.design_index.get(design)
    if j is None:
        raise KeyError(f"unknown design id {design!r}")
    mu = instance.mu[j]
    eta = instance.eta[j]
    if instance.family == GAUSSIAN:
        value = mu + math.sqrt(eta) * rng.standard_normal()
    else:
        value = simulate_weibull_value(mu, eta, instance.tau, rng)
    return Observation(design=design, value=float(value))


def simulate_weibull_value(mu: float, k: float, tau: float, rng: np.random.Generator) -> float:
    scale = _weibull_scale(mu, k)
    u = rng.random()
    if u <= 0.0:
        return float(tau)
    w = scale * (-math.log(u)) ** (1.0 / k)
    return float(min(w, tau))


class AllocationHistory:
    """Per-design sample counts and running sufficient statistics.

    Tracks, for every design, the count N_T(d), the running mean, and the sum
    of squared deviations (one-pass update, numerically stable). Exposes the
    empirical ratios psi_bar (global), alpha_bar (per context) and beta_bar
    (within context).
    """

    def __init__(self, instance: ProblemInstance):
        self.instance = instance
        n = instance.n_designs
        self.counts = np.zeros(n, dtype=np.int64)
        self.mean = np.zeros(n, dtype=float)
        self.m2 = np.zeros(n, dtype=float)
        self.context_counts = np.zeros(instance.n_contexts, dtype=np.int64)
        self.total = 0

    def record(self, design_index: int, value: float) -> None:
        c = self.counts[design_index] + 1
        self.counts[design_index] = c
        delta = value - self.mean[design_index]
        self.mean[design_index] += delta / c
        self.m2[design_index] += delta * (value - self.mean[design_index])
        self.context_counts[self.instance.context_of_design[design_index]] += 1
        self.total += 1

    def psi_bar(self) -> np.ndarray:
        if self.total == 0:
            raise ValueError("no samples recorded")
        return self.counts / self.total

    def alpha_bar(self) -> np.ndarray:
        if self.total == 0:
            raise ValueError("no samples recorded")
        return self.context_counts / self.total

    def beta_bar(self) -> np.ndarray:
        """Within-context ratios; NaN for designs of unvisited contexts."""
        denom = self.context_counts[self.instance.context_of_design].astype(float)
        with np.errstate(invalid="ignore", divide="ignore"):
            out = np.where(denom > 0, self.counts / denom, np.nan)
        return out

    def biased_variance(self) -> np.ndarray:
        """Per-design 1/N variance (the form the conjugate update consumes)."""
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(self.counts > 0, self.m2 / np.maximum(self.counts, 1), 0.0)

    def sample_variance(self) -> np.ndarray:
        """Per-design unbiased 1/(N-1) variance; NaN below two samples."""
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(self.counts > 1, self.m2 / np.maximum(self.counts - 1, 1), np.nan)


def generate_gaussian_instance(seed: int, n_contexts: int, n_designs: int, m) -> ProblemInstance:
    """Synthetic Gaussian instance: mu ~ N(0, variance 10), sd ~ Unif[4, 6].

    ``m`` may be a single int (shared by all contexts) or a per-context
    sequence. Deterministic given ``seed``; contexts whose mu values collide
    exactly are redrawn.
    """
    if n_contexts < 1 or n_designs < 1:
        raise ValueError("need at least one context and one design")
    m_vec = _as_m_vector(m, n_contexts, n_designs)
    rng = np.random.default_rng(np.random.SeedSequence((int(seed), 0x67A55)))
    contexts = tuple(f"c{i}" for i in range(n_contexts))
    designs, params = [], {}
    for ci in range(n_contexts):
        while True:
            mus = math.sqrt(10.0) * rng.standard_normal(n_designs)
            if len(set(mus.tolist())) == n_designs:
                break
        sds = rng.uniform(4.0, 6.0, size=n_designs)
        ids = tuple(f"c{ci}_d{j}" for j in range(n_designs))
        designs.append(ids)
        for j, d in enumerate(ids):
            params[d] = (float(mus[j]), float(sds[j] ** 2))
    all_mu = [p[0] for p in params.values()]
    all_eta = [p[1] for p in params.values()]
    span = max(all_mu) - min(all_mu) + 1.0
    box = (
        (min(all_mu) - 40.0 * max(all_eta) ** 0.5 - span, max(all_mu) + 40.0 * max(all_eta) ** 0.5 + span),
        (min(all_eta) / 1e4, max(all_eta) * 1e4),
    )
    return ProblemInstance(
        family=GAUSSIAN,
        contexts=contexts,
        designs_per_context=tuple(designs),
        true_params=params,
        m=m_vec,
        tau=None,
        theta_box=box,
    )


WEIBULL_SIZES = (5, 5, 7, 6, 7)
WEIBULL_M = (1, 1, 1, 2, 2)


def generate_weibull_instance(seed: int, tau: float = 150.0) -> ProblemInstance:
    """Synthetic censored-Weibull instance: 5 contexts sized (5,5,7,6,7).

    Targets m = (1,1,1,2,2); mu ~ Unif[90, 110], shape k ~ Unif[2, 4];
    parameter box [0, 200] x [0, 20]. The censoring horizon defaults to 150,
    above every generated mean so censoring occurs without dominating, and is
    exposed as a configuration knob.
    """
    rng = np.random.default_rng(np.random.SeedSequence((int(seed), 0x3E1B)))
    contexts = tuple(f"c{i}" for i in range(len(WEIBULL_SIZES)))
    designs, params = [], {}
    for ci, size in enumerate(WEIBULL_SIZES):
        while True:
            mus = rng.uniform(90.0, 110.0, size=size)
            if len(set(mus.tolist())) == size:
                break
        ks = rng.uniform(2.0, 4.0, size=size)
        ids = tuple(f"c{ci}_d{j}" for j in range(size))
        designs.append(ids)
        for j, d in enumerate(ids):
            params[d] = (float(mus[j]), float(ks[j]))
    return ProblemInstance(
        family=WEIBULL,
        contexts=contexts,
        designs_per_context=tuple(designs),
        true_params=params,
        m=WEIBULL_M,
        tau=float(tau),
        theta_box=((0.0, 200.0), (0.0, 20.0)),
    )


def _as_m_vector(m, n_contexts: int, n_designs: int) -> tuple[int, ...]:
    if isinstance(m, (int, np.integer)):
        vec = (int(m),) * n_contexts
    else:
        vec = tuple(int(v) for v in m)
        if len(vec) != n_contexts:
            raise ValueError("m sequence length must equal n_contexts")
    for v in vec:
        if not 1 <= v <= n_designs:
            raise ValueError(f"m={v} outside 1..{n_designs}")
    return vec


# JSON serialization. Floats go through repr (shortest round-trip form), so a
# dump/load cycle reproduces the instance bit for bit.


def instance_to_dict(instance: ProblemInstance) -> dict:
    return {
        "family": instance.family,
        "contexts": list(instance.contexts),
        "designs": [
            {
                "context": instance.contexts[ci],
                "id": d,
                "mu": instance.true_params[d][0],
                "eta": instance.true_params[d][1],
            }
            for ci, ids in enumerate(instance.designs_per_context)
            for d in ids
        ],
        "m": list(instance.m),
        "tau": instance.tau,
        "theta_box": [list(instance.theta_box[0]), list(instance.theta_box[1])],
    }


def instance_from_dict(doc: dict) -> ProblemInstance:
    required = {"family", "contexts", "designs", "m", "tau", "theta_box"}
    unknown = set(doc) - required
    if unknown:
        raise ValueError(f"unknown instance keys: {sorted(unknown)}")
    missing = required - set(doc)
    if missing:
        raise ValueError(f"missing instance keys: {sorted(missing)}")
    contexts = tuple(str(c) for c in doc["contexts"])
    per_context = {c: [] for c in contexts}
    params = {}
    for row in doc["designs"]:
        c = row["context"]
        if c not in per_context:
            raise ValueError(f"design {row['id']!r} references unknown context {c!r}")
        per_context[c].append(row["id"])
        params[row["id"]] = (float(row["mu"]), float(row["eta"]))
    box = doc["theta_box"]
    return ProblemInstance(
        family=doc["family"],
        contexts=contexts,
        designs_per_context=tuple(tuple(per_context[c]) for c in contexts),
        true_params=params,
        m=tuple(int(v) for v in doc["m"]),
        tau=None if doc["tau"] is None else float(doc["tau"]),
        theta_box=((float(box[0][0]), float(box[0][1])), (float(box[1][0]), float(box[1][1]))),
    )


def instance_to_json(instance: ProblemInstance) -> str:
    return json.dumps(instance_to_dict(instance), indent=2)


def instance_from_json(text: str) -> ProblemInstance:
    return instance_from_dict(json.loads(text))


def save_instance(instance: ProblemInstance, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(instance_to_json(instance))
        fh.write("\n")


def load_instance(path) -> ProblemInstance:
    with open(path, "r", encoding="utf-8") as fh:
        return instance_from_json(fh.read())
