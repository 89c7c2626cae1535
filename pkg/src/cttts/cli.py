"""Command-line entry point: experiment runs, allocation solving, rate evaluation.

Subcommands: run (experiment -> CSV + metadata), solve-allocation (static
allocation -> JSON on stdout), rates (single rate/divergence evaluations),
policy-prob (exact one-step distribution of the coin policy). Configuration
and results are JSON; only curve data is CSV. Exit codes: 0 success, 1
configuration/input error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from .allocation import (
    HARMONIC,
    KNOWN_VAR,
    MIN_RATE,
    RATE_FAMILIES,
    UNKNOWN_VAR,
    WEIBULL_CENSORED,
    ContextRates,
    RatePair,
    balance_residual_topm,
    context_rates_from_instance,
    kkt_residual_best,
    optimize_gamma,
    rate_gaussian_known_var,
    rate_generic,
    solve_best_fixed_gamma,
    solve_topm_allocation,
)
from .harness import experiment_config_from_dict, export_csv, run_experiment, write_metadata
from .instances import instance_from_dict
from .policies import analytic_policy_prob
from .posteriors import kl_gaussian, kl_weibull_censored

_KL_GAUSSIAN = "kl-gaussian"
_KL_WEIBULL = "kl-weibull-censored"
_RATES_FAMILIES = (KNOWN_VAR, UNKNOWN_VAR, WEIBULL_CENSORED, _KL_GAUSSIAN, _KL_WEIBULL)


def _fail(message: str, code: int) -> int:
    print(message, file=sys.stderr)
    return code


def _load_json(path: Path):
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ValueError(f"cannot read {path}: {exc}") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValueError(f"malformed JSON in {path} at line {exc.lineno} column {exc.colno}: {exc.msg}") from exc


def _print_json(doc) -> None:
    print(json.dumps(doc, indent=2, sort_keys=True))


def cmd_run(args) -> int:
    config_path = Path(args.config)
    try:
        doc = _load_json(config_path)
    except ValueError as exc:
        return _fail(f"config error: {exc}", 1)
    if not isinstance(doc, dict):
        return _fail("config error: top level must be a JSON object", 1)
    out_in_config = doc.pop("out", None)
    if args.seed is not None:
        doc["base_seed"] = args.seed
    if args.reps is not None:
        doc["macro_reps"] = args.reps
    if args.budget is not None:
        doc["budget"] = args.budget
    if args.parallelism is not None:
        doc["parallelism"] = args.parallelism
    elif os.environ.get("CTTTS_THREADS"):
        try:
            doc["parallelism"] = int(os.environ["CTTTS_THREADS"])
        except ValueError:
            return _fail("config error: CTTTS_THREADS must be an integer", 1)
    try:
        config = experiment_config_from_dict(doc, base_dir=config_path.parent)
    except (ValueError, TypeError, KeyError) as exc:
        return _fail(f"config error: {exc}", 1)
    if args.out is not None:
        out_path = Path(args.out)
    elif out_in_config is not None:
        out_path = Path(out_in_config)
        if not out_path.is_absolute():
            out_path = config_path.parent / out_path
    else:
        out_path = config_path.with_suffix(".csv")
    started = time.perf_counter()
    try:
        curve = run_experiment(config)
    except Exception as exc:
        return _fail(f"runtime failure: {exc}", 2)
    wall = time.perf_counter() - started
    try:
        csv_path = export_csv(curve, out_path)
        meta_path = write_metadata(config, curve, csv_path, wall)
    except OSError as exc:
        return _fail(f"runtime failure: cannot write output: {exc}", 2)
    print(f"wrote {csv_path} ({len(curve.rows)} rows) and {meta_path} in {wall:.1f}s")
    return 0


def _specs_from_rates_doc(doc: dict):
    """Synthetic rate input: per-context designs (mu for ranking) plus pair overrides."""
    entries = doc["rates"]
    if not isinstance(entries, list) or not entries:
        raise ValueError("'rates' must be a non-empty list of context objects")
    specs = []
    for entry in entries:
        unknown = sorted(set(entry) - {"context", "m", "designs", "family", "pairs", "tau", "eta_bounds"})
        if unknown:
            raise ValueError(f"unknown rates keys {unknown}")
        designs = entry.get("designs")
        if not designs:
            raise ValueError("each rates entry needs a 'designs' list")
        ids = tuple(str(d["id"]) for d in designs)
        mu = np.array([float(d["mu"]) for d in designs])
        eta = np.array([float(d.get("eta", 1.0)) for d in designs])
        by_id = {i: (float(m), float(e)) for i, m, e in zip(ids, mu, eta)}
        overrides = {}
        for p in entry.get("pairs", ()):
            unknown = sorted(set(p) - {"top", "bot", "family", "coef", "tau", "eta_bounds"})
            if unknown:
                raise ValueError(f"unknown pair keys {unknown}")
            top, bot = str(p["top"]), str(p["bot"])
            if top not in by_id or bot not in by_id:
                raise ValueError(f"pair ({top!r}, {bot!r}) references unknown design ids")
            fam = p.get("family", entry.get("family", KNOWN_VAR))
            overrides[(top, bot)] = RatePair(
                family=fam,
                mu_top=by_id[top][0],
                eta_top=by_id[top][1],
                mu_bot=by_id[bot][0],
                eta_bot=by_id[bot][1],
                tau=p.get("tau", entry.get("tau")),
                eta_bounds=tuple(p["eta_bounds"]) if "eta_bounds" in p else None,
                coef=float(p.get("coef", 2.0)),
            )
        specs.append(
            ContextRates(
                context=str(entry.get("context", f"c{len(specs)}")),
                design_ids=ids,
                mu=mu,
                eta=eta,
                m=int(entry.get("m", 1)),
                family=entry.get("family", KNOWN_VAR),
                tau=entry.get("tau"),
                eta_bounds=tuple(entry["eta_bounds"]) if "eta_bounds" in entry else None,
                overrides=overrides,
            )
        )
    return specs


def cmd_solve(args) -> int:
    try:
        doc = _load_json(Path(args.instance))
    except ValueError as exc:
        return _fail(f"input error: {exc}", 1)
    try:
        if isinstance(doc, dict) and "rates" in doc:
            specs = _specs_from_rates_doc(doc)
        else:
            specs = context_rates_from_instance(instance_from_dict(doc))
        if args.m is not None:
            if args.m < 1:
                raise ValueError("--m must be >= 1")
            specs = [
                ContextRates(
                    context=s.context, design_ids=s.design_ids, mu=s.mu, eta=s.eta,
                    m=args.m, family=s.family, tau=s.tau, eta_bounds=s.eta_bounds,
                    overrides=s.overrides,
                )
                for s in specs
            ]
        modes = [name for name, on in (
            ("fixed", args.gamma is not None), ("optimize", args.optimize_gamma), ("topm", args.topm),
        ) if on]
        if len(modes) > 1:
            raise ValueError("pick one of --gamma, --optimize-gamma, --topm")
        mode = modes[0] if modes else ("optimize" if all(s.m == 1 for s in specs) else "topm")
        if mode in ("fixed", "optimize") and any(s.m != 1 for s in specs):
            raise ValueError(f"--{'gamma' if mode == 'fixed' else 'optimize-gamma'} requires m=1 contexts; use --topm")
    except ValueError as exc:
        return _fail(f"input error: {exc}", 1)

    try:
        if mode == "fixed":
            allocation = solve_best_fixed_gamma(specs, args.gamma)
        elif mode == "optimize":
            _, allocation = optimize_gamma(specs)
        else:
            allocation = solve_topm_allocation(specs)
        if mode == "topm":
            residuals = {"balance_spread": balance_residual_topm(allocation, specs)}
        else:
            kkt = kkt_residual_best(allocation, specs)
            residuals = {
                "stationarity": kkt["stationarity"],
                "value_spread": kkt["value_spread"],
                "kinks": [list(k) for k in kkt["kinks"]],
            }
    except Exception as exc:
        return _fail(f"runtime failure: {exc}", 2)

    result = allocation.to_dict()
    result["mode"] = mode
    result["residuals"] = residuals
    warnings = []
    if allocation.diagnostics.get("degraded"):
        warnings.append(
            f"solver balance residual {allocation.diagnostics.get('balance_residual'):.3g} above threshold; "
            "allocation quality degraded"
        )
    result["warnings"] = warnings
    _print_json(result)
    return 0


def _pair_args(args, name) -> tuple:
    vals = getattr(args, name)
    if vals is None:
        raise ValueError(f"--{name} A B is required for this family")
    return float(vals[0]), float(vals[1])


def cmd_rates(args) -> int:
    try:
        family = args.family
        if family not in _RATES_FAMILIES:
            raise ValueError(f"unknown family {family!r}; valid: {', '.join(_RATES_FAMILIES)}")
        mu = _pair_args(args, "mu")
        eta = _pair_args(args, "eta")
        result = {"family": family, "mu": list(mu), "eta": list(eta)}
        if family == _KL_GAUSSIAN:
            result["value"] = kl_gaussian((mu[0], eta[0]), (mu[1], eta[1]))
        elif family == _KL_WEIBULL:
            if args.tau is None:
                raise ValueError("--tau is required for the censored family")
            result["tau"] = args.tau
            result["value"] = kl_weibull_censored((mu[0], eta[0]), (mu[1], eta[1]), args.tau)
        else:
            psi = _pair_args(args, "psi")
            result["psi"] = list(psi)
            if family == KNOWN_VAR:
                result["value"] = float(rate_gaussian_known_var(psi[0], psi[1], mu[0], mu[1], eta[0], eta[1]))
            else:
                if family == WEIBULL_CENSORED and args.tau is None:
                    raise ValueError("--tau is required for the censored family")
                result["tau"] = args.tau
                info = rate_generic(
                    psi[0], psi[1], (mu[0], eta[0]), (mu[1], eta[1]), family,
                    tau=args.tau,
                    eta_bounds=tuple(args.eta_bounds) if args.eta_bounds else None,
                    full=True,
                )
                result["value"] = info["value"]
                result["crossing_mu"] = info["crossing_mu"]
                result["divergence_target"] = info["div_d"]
                result["divergence_challenger"] = info["div_dp"]
    except ValueError as exc:
        return _fail(f"input error: {exc}", 1)
    _print_json(result)
    return 0


def cmd_policy_prob(args) -> int:
    try:
        pi = json.loads(args.pi)
        gamma = json.loads(args.gamma)
        psi, alpha, beta = analytic_policy_prob(pi, gamma)
    except json.JSONDecodeError as exc:
        return _fail(f"input error: malformed JSON at line {exc.lineno} column {exc.colno}: {exc.msg}", 1)
    except (ValueError, TypeError) as exc:
        return _fail(f"input error: {exc}", 1)
    _print_json(
        {
            "psi": [p.tolist() for p in psi],
            "alpha": alpha.tolist(),
            "beta": [b.tolist() for b in beta],
        }
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cttts",
        description="Contextual top-m selection: experiments, static allocations, rate evaluations.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a macro-replication experiment from a JSON config")
    run.add_argument("--config", required=True, help="JSON experiment config")
    run.add_argument("--out", help="CSV output path (default: config path with .csv; metadata lands beside it)")
    run.add_argument("--seed", type=int, help="override base_seed")
    run.add_argument("--reps", type=int, help="override macro_reps")
    run.add_argument("--budget", type=int, help="override budget")
    run.add_argument(
        "--parallelism", type=int, help="worker processes (beats CTTTS_THREADS, which beats the config value)"
    )
    run.set_defaults(func=cmd_run)

    solve = sub.add_parser("solve-allocation", help="solve the static allocation for an instance or rates file")
    solve.add_argument("instance", help="instance JSON, or a synthetic rates JSON ({'rates': [...]})")
    solve.add_argument("--gamma", type=float, help="fixed per-context target share (m=1)")
    solve.add_argument("--optimize-gamma", action="store_true", help="optimize the target share (m=1)")
    solve.add_argument("--topm", action="store_true", help="use the general top-m solver")
    solve.add_argument("--m", type=int, help="override every context's m")
    solve.set_defaults(func=cmd_solve)

    rates = sub.add_parser("rates", help="evaluate one rate or divergence")
    rates.add_argument("--family", required=True, help=f"one of: {', '.join(_RATES_FAMILIES)}")
    rates.add_argument("--psi", nargs=2, metavar=("PSI_D", "PSI_DP"), help="allocation ratios of the pair")
    rates.add_argument("--mu", nargs=2, required=True, metavar=("MU_D", "MU_DP"), help="means (target, challenger)")
    rates.add_argument(
        "--eta",
        nargs=2,
        required=True,
        metavar=("ETA_D", "ETA_DP"),
        help="second parameters: variances for gaussian families, shapes for the censored family",
    )
    rates.add_argument("--tau", type=float, help="censoring threshold (censored family)")
    rates.add_argument("--eta-bounds", nargs=2, type=float, metavar=("LO", "HI"), help="crossing shape bounds")
    rates.set_defaults(func=cmd_rates)

    prob = sub.add_parser("policy-prob", help="exact one-step distribution of the coin policy")
    prob.add_argument("--pi", required=True, help="JSON list of per-context probability vectors")
    prob.add_argument("--gamma", default="0.5", help="coin parameter: JSON scalar or per-context list")
    prob.set_defaults(func=cmd_policy_prob)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
