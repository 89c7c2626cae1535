"""Seeded macro-replication harness producing correct-selection curves.

A replication runs one policy on one instance with a private rng stream:
round-robin initialization, then policy steps to the budget, recording at
each checkpoint whether the plug-in selection matches the true top set per
context. The experiment layer fans replications out over processes, joins
them in (policy, replication) order, and aggregates three metrics:

- pcs:  fraction of replications correct in every context at once,
- pcsw: worst per-context correct fraction,
- pcse: weighted average of per-context correct fractions.

Determinism: replication r of policy p draws every random number from a
generator seeded with the entropy tuple (base_seed, p, r), so results do not
depend on the parallelism degree or on completion order, and the CSV emitted
for a config is byte-identical at any worker count.
"""

from __future__ import annotations

import json
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .instances import (
    GAUSSIAN,
    WEIBULL,
    AllocationHistory,
    ProblemInstance,
    generate_gaussian_instance,
    generate_weibull_instance,
    instance_from_dict,
    instance_to_dict,
    load_instance,
    simulate,
    true_top_m,
)
from .policies import (
    DEFAULT_RESAMPLE_CAP,
    DEFAULT_TUNE_SCHEDULE,
    POLICY_KINDS,
    aoamc_step,
    boldmc_step,
    ea_step,
    gamma_tune,
    make_policy_state,
    select_final,
    tttsc_step,
)
from .posteriors import DEFAULT_NG_PRIOR, posterior_set_for

DEFAULT_INIT_PER_DESIGN = 10
DEFAULT_CHECKPOINT_COUNT = 20
CSV_HEADER = "policy,checkpoint,pcs,pcs_se,pcsw,pcsw_se,pcse,pcse_se,reps"

_POLICY_KEYS = {"name", "kind", "gamma", "tune_schedule", "resample_cap", "posterior_family", "prior"}
_CONFIG_KEYS = {
    "instance",
    "policies",
    "budget",
    "macro_reps",
    "base_seed",
    "init_per_design",
    "checkpoints",
    "weights",
    "parallelism",
    "select_mode",
    "bayes_draws",
    "record_counts",
}


@dataclass(frozen=True)
class PolicySpec:
    """One policy entry of an experiment: kind plus its tunables.

    ``posterior_family`` defaults to the instance's own family; setting it to
    "gaussian" on censored data runs the misspecified-model baseline. The
    ``prior`` quadruple (m, n, a, b) only affects conjugate posteriors.
    """

    name: str
    kind: str
    gamma: float | tuple = 0.5
    tune_schedule: tuple = DEFAULT_TUNE_SCHEDULE
    resample_cap: int = DEFAULT_RESAMPLE_CAP
    posterior_family: str | None = None
    prior: tuple = DEFAULT_NG_PRIOR

    def __post_init__(self):
        if self.kind not in POLICY_KINDS:
            raise ValueError(f"unknown policy kind {self.kind!r}; valid: {', '.join(POLICY_KINDS)}")
        if not self.name or not isinstance(self.name, str):
            raise ValueError("policy name must be a non-empty string")
        if any(ch in self.name for ch in ",\n\r"):
            raise ValueError(f"policy name {self.name!r} may not contain commas or newlines")

    @classmethod
    def from_dict(cls, doc: dict) -> "PolicySpec":
        if not isinstance(doc, dict):
            raise ValueError("each policy entry must be an object")
        unknown = sorted(set(doc) - _POLICY_KEYS)
        if unknown:
            raise ValueError(f"unknown policy keys {unknown}; valid: {sorted(_POLICY_KEYS)}")
        if "kind" not in doc:
            raise ValueError("policy entry needs a 'kind'")
        kwargs = dict(doc)
        kwargs.setdefault("name", kwargs["kind"])
        for key in ("tune_schedule", "prior"):
            if key in kwargs:
                kwargs[key] = tuple(kwargs[key])
        if isinstance(kwargs.get("gamma"), list):
            kwargs["gamma"] = tuple(float(g) for g in kwargs["gamma"])
        return cls(**kwargs)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "kind": self.kind,
            "gamma": list(self.gamma) if isinstance(self.gamma, tuple) else self.gamma,
            "tune_schedule": list(self.tune_schedule),
            "resample_cap": self.resample_cap,
            "posterior_family": self.posterior_family,
            "prior": list(self.prior),
        }


@dataclass
class ExperimentConfig:
    """Everything one experiment needs; validate() before running."""

    instance: ProblemInstance
    policies: tuple
    budget: int
    macro_reps: int
    base_seed: int = 0
    init_per_design: int = DEFAULT_INIT_PER_DESIGN
    checkpoints: tuple | None = None
    weights: tuple | None = None
    parallelism: int = 1
    select_mode: str = "plugin"
    bayes_draws: int = 200
    record_counts: bool = False

    def validate(self) -> None:
        inst = self.instance
        if not isinstance(inst, ProblemInstance):
            raise ValueError("config.instance must be a ProblemInstance")
        names = [p.name for p in self.policies]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate policy names: {sorted(n for n in set(names) if names.count(n) > 1)}")
        if self.init_per_design < 1:
            raise ValueError("init_per_design must be >= 1")
        if any(p.kind == "boldmc" for p in self.policies) and self.init_per_design < 2:
            raise ValueError("boldmc needs init_per_design >= 2 (sample variances)")
        init_total = self.init_per_design * inst.n_designs
        if int(self.budget) != self.budget or self.budget < init_total:
            raise ValueError(f"budget must be an integer >= init_per_design * n_designs = {init_total}")
        if self.macro_reps < 1:
            raise ValueError("macro_reps must be >= 1")
        if not isinstance(self.base_seed, int) or self.base_seed < 0:
            raise ValueError("base_seed must be a nonnegative integer")
        if self.parallelism < 1:
            raise ValueError("parallelism must be >= 1")
        if self.select_mode not in ("plugin", "bayes"):
            raise ValueError("select_mode must be 'plugin' or 'bayes'")
        if self.bayes_draws < 1:
            raise ValueError("bayes_draws must be >= 1")
        if self.checkpoints is not None:
            cks = tuple(int(c) for c in self.checkpoints)
            if not cks:
                raise ValueError("checkpoints must be non-empty when given")
            if any(b <= a for a, b in zip(cks, cks[1:])) or cks[0] < 1 or cks[-1] > self.budget:
                raise ValueError("checkpoints must be strictly increasing integers in [1, budget]")
        if self.weights is not None:
            w = np.asarray(self.weights, dtype=float)
            if w.shape != (inst.n_contexts,):
                raise ValueError(f"weights must have one entry per context ({inst.n_contexts})")
            if np.any(w < 0) or not np.any(w > 0):
                raise ValueError("weights must be nonnegative with a positive total")
            if abs(float(w.sum()) - 1.0) > 1e-9:
                raise ValueError("weights must sum to 1")

    def resolved_checkpoints(self) -> tuple:
        if self.checkpoints is not None:
            return tuple(int(c) for c in self.checkpoints)
        lo = self.init_per_design * self.instance.n_designs
        hi = int(self.budget)
        if lo >= hi:
            return (hi,)
        pts = np.rint(np.geomspace(lo, hi, DEFAULT_CHECKPOINT_COUNT)).astype(int)
        pts = np.unique(np.clip(pts, lo, hi))
        pts[-1] = hi
        return tuple(int(p) for p in np.unique(pts))

    def resolved_weights(self) -> np.ndarray:
        if self.weights is None:
            n = self.instance.n_contexts
            return np.full(n, 1.0 / n)
        return np.asarray(self.weights, dtype=float)

    def to_dict(self) -> dict:
        return {
            "instance": instance_to_dict(self.instance),
            "policies": [p.to_dict() for p in self.policies],
            "budget": int(self.budget),
            "macro_reps": int(self.macro_reps),
            "base_seed": int(self.base_seed),
            "init_per_design": int(self.init_per_design),
            "checkpoints": list(self.resolved_checkpoints()),
            "weights": [float(w) for w in self.resolved_weights()],
            "parallelism": int(self.parallelism),
            "select_mode": self.select_mode,
            "bayes_draws": int(self.bayes_draws),
            "record_counts": bool(self.record_counts),
        }


def _instance_from_source(src, base_dir=None) -> ProblemInstance:
    if not isinstance(src, dict):
        raise ValueError("instance source must be an object with one of: generator, file, inline")
    keys = set(src)
    if len(keys) != 1 or not keys <= {"generator", "file", "inline"}:
        raise ValueError(f"instance source must have exactly one of generator/file/inline, got {sorted(keys)}")
    if "inline" in src:
        return instance_from_dict(src["inline"])
    if "file" in src:
        path = Path(src["file"])
        if not path.is_absolute() and base_dir is not None:
            path = Path(base_dir) / path
        return load_instance(path)
    gen = dict(src["generator"])
    family = gen.pop("family", None)
    if family == GAUSSIAN:
        allowed = {"seed", "n_contexts", "n_designs", "m"}
        unknown = sorted(set(gen) - allowed)
        if unknown:
            raise ValueError(f"unknown gaussian generator keys {unknown}; valid: {sorted(allowed)}")
        missing = sorted(k for k in ("seed", "n_contexts", "n_designs") if k not in gen)
        if missing:
            raise ValueError(f"gaussian generator needs keys {missing}")
        return generate_gaussian_instance(
            int(gen["seed"]), int(gen["n_contexts"]), int(gen["n_designs"]), gen.get("m", 1)
        )
    if family == WEIBULL:
        allowed = {"seed", "tau"}
        unknown = sorted(set(gen) - allowed)
        if unknown:
            raise ValueError(f"unknown weibull generator keys {unknown}; valid: {sorted(allowed)}")
        if "seed" not in gen:
            raise ValueError("weibull generator needs a 'seed'")
        return generate_weibull_instance(int(gen["seed"]), tau=float(gen.get("tau", 150.0)))
    raise ValueError(f"unknown generator family {family!r}; valid: {GAUSSIAN}, {WEIBULL}")


def experiment_config_from_dict(doc: dict, base_dir=None) -> ExperimentConfig:
    """Build and validate an ExperimentConfig from parsed JSON; unknown keys are errors."""
    if not isinstance(doc, dict):
        raise ValueError("config must be a JSON object")
    unknown = sorted(set(doc) - _CONFIG_KEYS)
    if unknown:
        raise ValueError(f"unknown config keys {unknown}; valid: {sorted(_CONFIG_KEYS)}")
    missing = sorted(k for k in ("instance", "policies", "budget", "macro_reps") if k not in doc)
    if missing:
        raise ValueError(f"config needs keys {missing}")
    policies = doc["policies"]
    if not isinstance(policies, list):
        raise ValueError("policies must be a list")
    config = ExperimentConfig(
        instance=_instance_from_source(doc["instance"], base_dir),
        policies=tuple(PolicySpec.from_dict(p) for p in policies),
        budget=int(doc["budget"]),
        macro_reps=int(doc["macro_reps"]),
        base_seed=int(doc.get("base_seed", 0)),
        init_per_design=int(doc.get("init_per_design", DEFAULT_INIT_PER_DESIGN)),
        checkpoints=tuple(doc["checkpoints"]) if doc.get("checkpoints") is not None else None,
        weights=tuple(doc["weights"]) if doc.get("weights") is not None else None,
        parallelism=int(doc.get("parallelism", 1)),
        select_mode=doc.get("select_mode", "plugin"),
        bayes_draws=int(doc.get("bayes_draws", 200)),
        record_counts=bool(doc.get("record_counts", False)),
    )
    config.validate()
    return config


@dataclass
class ReplicationRecord:
    """Per-checkpoint correctness plus the final allocation of one replication."""

    policy: str
    checkpoints: tuple
    correct: np.ndarray  # (n_checkpoints, n_contexts) bool
    history: AllocationHistory
    gamma_final: np.ndarray
    fallback_steps: int
    rep: int = -1
    count_snapshots: tuple | None = None
    warnings: tuple = ()


def run_replication(instance: ProblemInstance, policy: PolicySpec, config: ExperimentConfig, seed) -> ReplicationRecord:
    """One seeded run of one policy: init round-robin, step to the budget.

    ``seed`` is any rng seed accepted by numpy (the experiment layer passes
    the entropy tuple (base_seed, policy_index, rep_index)). Checkpoints fire
    exactly when the running total hits the checkpoint value; the adaptive
    variant re-tunes once whenever the total has crossed one or more schedule
    entries since the last step. Everything (simulation, policy, selection)
    draws from the single ``rng``, so the record is a pure function of seed.
    """
    rng = np.random.default_rng(seed)
    cks = config.resolved_checkpoints()
    truth = [true_top_m(instance, c) for c in instance.contexts]
    history = AllocationHistory(instance)
    posteriors = posterior_set_for(instance, family=policy.posterior_family, prior=policy.prior)
    state = make_policy_state(
        policy.kind,
        instance,
        gamma=policy.gamma,
        tune_schedule=policy.tune_schedule,
        resample_cap=policy.resample_cap,
        history=history,
    )
    correct = np.zeros((len(cks), instance.n_contexts), dtype=bool)
    snapshots = [] if config.record_counts else None
    ck_idx = 0
    tune_idx = 0
    fallback_steps = 0

    def after_record() -> None:
        nonlocal ck_idx, tune_idx
        while ck_idx < len(cks) and history.total == cks[ck_idx]:
            sel = select_final(posteriors, instance, mode=config.select_mode, rng=rng, draws=config.bayes_draws)
            for ci, ctx in enumerate(instance.contexts):
                correct[ck_idx, ci] = sel[ctx] == truth[ci]
            if snapshots is not None:
                snapshots.append(history.counts.copy())
            ck_idx += 1
        if state.tune_schedule:
            crossed = False
            while tune_idx < len(state.tune_schedule) and history.total >= state.tune_schedule[tune_idx]:
                tune_idx += 1
                crossed = True
            if crossed:
                gamma_tune(posteriors, state, instance)

    for _ in range(config.init_per_design):
        for j in range(instance.n_designs):
            obs = simulate(instance, instance.flat_ids[j], rng)
            history.record(j, obs.value)
            posteriors.update(j, obs.value, history)
            after_record()

    kind = policy.kind
    try:
        while history.total < config.budget:
            if kind in ("tttsc-coin", "tttsc-tune"):
                dec = tttsc_step(posteriors, state, instance, rng)
            elif kind == "ea":
                dec = ea_step(state, instance)
            elif kind == "boldmc":
                dec = boldmc_step(history, instance)
            else:
                dec = aoamc_step(posteriors, history, instance)
            obs = simulate(instance, dec.design, rng)
            history.record(dec.design_index, obs.value)
            posteriors.update(dec.design_index, obs.value, history)
            if dec.fallback:
                fallback_steps += 1
            after_record()
    except Exception as exc:
        raise RuntimeError(f"policy {policy.name!r} step failed at budget {history.total}: {exc}") from exc

    if ck_idx != len(cks):  # all checkpoints are <= budget, so this cannot be left hanging
        raise RuntimeError(f"internal error: {len(cks) - ck_idx} checkpoints never fired")
    return ReplicationRecord(
        policy=policy.name,
        checkpoints=cks,
        correct=correct,
        history=history,
        gamma_final=state.gamma.copy(),
        fallback_steps=fallback_steps,
        count_snapshots=tuple(snapshots) if snapshots is not None else None,
        warnings=tuple(state.warnings),
    )


def _replication_task(payload):
    config, pol_idx, rep = payload
    policy = config.policies[pol_idx]
    try:
        rec = run_replication(config.instance, policy, config, (config.base_seed, pol_idx, rep))
    except Exception as exc:
        raise RuntimeError(f"replication {rep} of policy {policy.name!r} failed: {exc}") from exc
    rec.rep = rep
    return pol_idx, rep, rec


@dataclass
class MetricsCurve:
    """Aggregated metric rows (one per policy and checkpoint) plus raw records.

    ``pcs_se`` and ``pcsw_se`` are binomial standard errors of the point
    estimate; ``pcse_se`` is the sample standard error of the per-replication
    weighted indicator. With a single replication every SE degenerates to 0
    and ``degenerate_se`` is flagged.
    """

    policies: tuple
    checkpoints: tuple
    rows: tuple
    reps: int
    degenerate_se: bool
    records: tuple = ()

    def __post_init__(self):
        for row in self.rows:
            for key in ("pcs", "pcsw", "pcse"):
                v = row[key]
                if not 0.0 <= v <= 1.0:
                    raise ValueError(f"{key}={v} outside [0, 1]")
                if row[key + "_se"] < 0.0:
                    raise ValueError(f"{key}_se negative")
            if row["pcs"] > min(row["pcsw"], row["pcse"]) + 1e-12:
                raise ValueError("pcs exceeds min(pcsw, pcse); metric aggregation is inconsistent")

    def row_for(self, policy: str, checkpoint: int) -> dict:
        for row in self.rows:
            if row["policy"] == policy and row["checkpoint"] == checkpoint:
                return row
        raise KeyError(f"no row for policy {policy!r} at checkpoint {checkpoint}")

    def records_for(self, policy: str) -> tuple:
        return tuple(r for r in self.records if r.policy == policy)


def _binom_se(p: float, reps: int) -> float:
    return math.sqrt(max(p * (1.0 - p), 0.0) / reps)


def _aggregate(config: ExperimentConfig, records_by_policy: dict) -> MetricsCurve:
    cks = config.resolved_checkpoints()
    w = config.resolved_weights()
    wsum = math.fsum(float(v) for v in w)
    reps = config.macro_reps
    rows = []
    for policy in config.policies:
        recs = records_by_policy[policy.name]
        stacked = np.stack([r.correct for r in recs])  # (R, n_ck, n_ctx)
        for k, ck in enumerate(cks):
            block = stacked[:, k, :]
            pcs = float(block.all(axis=1).mean())
            f = block.mean(axis=0)
            pcsw = float(f.min())
            pcse = math.fsum(float(wi * fi) for wi, fi in zip(w, f)) / wsum
            pcse = min(max(pcse, pcs), 1.0)
            if reps > 1:
                per_rep = block.astype(float) @ (w / wsum)
                pcse_se = float(np.std(per_rep, ddof=1) / math.sqrt(reps))
            else:
                pcse_se = 0.0
            rows.append(
                {
                    "policy": policy.name,
                    "checkpoint": int(ck),
                    "pcs": pcs,
                    "pcs_se": _binom_se(pcs, reps),
                    "pcsw": pcsw,
                    "pcsw_se": _binom_se(pcsw, reps),
                    "pcse": pcse,
                    "pcse_se": pcse_se,
                    "reps": reps,
                }
            )
    ordered_records = []
    for policy in config.policies:
        ordered_records.extend(records_by_policy[policy.name])
    return MetricsCurve(
        policies=tuple(p.name for p in config.policies),
        checkpoints=cks,
        rows=tuple(rows),
        reps=reps,
        degenerate_se=reps == 1,
        records=tuple(ordered_records),
    )


def run_experiment(config: ExperimentConfig) -> MetricsCurve:
    """Run every (policy, replication) pair and aggregate the metric curves.

    Replications are independent (no shared mutable state); with
    ``config.parallelism > 1`` they run on a process pool. Aggregation always
    happens over a join ordered by (policy index, replication index), so the
    output is identical at every parallelism degree.
    """
    config.validate()
    tasks = [
        (config, pol_idx, rep)
        for pol_idx in range(len(config.policies))
        for rep in range(config.macro_reps)
    ]
    if config.parallelism > 1 and len(tasks) > 1:
        chunk = max(1, len(tasks) // (config.parallelism * 8))
        with ProcessPoolExecutor(max_workers=config.parallelism) as pool:
            results = list(pool.map(_replication_task, tasks, chunksize=chunk))
    else:
        results = [_replication_task(t) for t in tasks]
    by_key = {(pol_idx, rep): rec for pol_idx, rep, rec in results}
    records_by_policy = {
        policy.name: [by_key[(pol_idx, rep)] for rep in range(config.macro_reps)]
        for pol_idx, policy in enumerate(config.policies)
    }
    return _aggregate(config, records_by_policy)


def export_csv(curve: MetricsCurve, path) -> Path:
    """Write the metric rows as CSV with 10-significant-digit decimals."""
    out = Path(path)
    lines = [CSV_HEADER]
    for row in curve.rows:
        lines.append(
            ",".join(
                [
                    row["policy"],
                    str(row["checkpoint"]),
                    format(row["pcs"], ".10g"),
                    format(row["pcs_se"], ".10g"),
                    format(row["pcsw"], ".10g"),
                    format(row["pcsw_se"], ".10g"),
                    format(row["pcse"], ".10g"),
                    format(row["pcse_se"], ".10g"),
                    str(row["reps"]),
                ]
            )
        )
    out.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return out


def write_metadata(config: ExperimentConfig, curve: MetricsCurve, csv_path, wall_time_s: float, path=None) -> Path:
    """Write the run's config echo, timings, and versions next to the CSV."""
    import numpy
    import scipy

    from . import __version__

    out = Path(path) if path is not None else Path(csv_path).with_suffix(".meta.json")
    doc = {
        "config": config.to_dict(),
        "csv": str(csv_path),
        "wall_time_s": float(wall_time_s),
        "degenerate_se": curve.degenerate_se,
        "versions": {
            "package": __version__,
            "python": sys.version.split()[0],
            "numpy": numpy.__version__,
            "scipy": scipy.__version__,
        },
    }
    out.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return out
