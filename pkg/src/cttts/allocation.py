"""Rate functions and the static allocation solver.

The misselection probability of a static sampling ratio decays exponentially;
each pair of designs (a target-set member d and a challenger d') contributes a
concave, monotone, degree-1 homogeneous rate G_{d,d'}(psi_d, psi_d'). The
solver maximizes the smallest weighted rate over contexts by exploiting the
problem's separability: per-context balance conditions pin the conditional
ratios beta, a one-dimensional search tunes the target-set share gamma, and
the cross-context ratios alpha follow from inverse per-context rates.

Pair families:

- ``gaussian-known-var``: closed form delta^2 / (v_d/psi_d + v_d'/psi_d').
- ``gaussian-unknown-var``: 1-D minimization over the crossing mean of
  0.5 psi ln(1 + (mu* - mu)^2 / v*) terms (nuisance variance minimized out in
  closed form).
- ``weibull-censored``: crossing-mean minimization with an inner golden
  search over the shape nuisance, divergences by quadrature.
- ``harmonic`` and ``min``: synthetic rate shapes used to exercise solver
  behavior on flat regions and non-unique optima.

Within any rate family the divergence is used consistently, so allocations
are family-internally comparable; the known-variance family follows the
conventional closed form above, which fixes its scale.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field, replace

import numpy as np

from .instances import GAUSSIAN, WEIBULL, ProblemInstance, top_m_indices
from .posteriors import kl_weibull_censored

KNOWN_VAR = "gaussian-known-var"
UNKNOWN_VAR = "gaussian-unknown-var"
WEIBULL_CENSORED = "weibull-censored"
HARMONIC = "harmonic"
MIN_RATE = "min"
RATE_FAMILIES = (KNOWN_VAR, UNKNOWN_VAR, WEIBULL_CENSORED, HARMONIC, MIN_RATE)

_INVPHI = (math.sqrt(5.0) - 1.0) / 2.0


def natural_id_key(design_id):
    """Sort key treating digit runs numerically, so d2 < d10."""
    return tuple(
        (0, int(tok)) if tok.isdigit() else (1, tok)
        for tok in re.split(r"(\d+)", str(design_id))
        if tok != ""
    )


def _golden_min(f, lo: float, hi: float, xtol: float, pre_grid: int = 0):
    """Scalar golden-section minimize with an optional coarse-grid bracket."""
    if hi <= lo:
        return lo, f(lo)
    if pre_grid >= 3:
        xs = [lo + (hi - lo) * i / (pre_grid - 1) for i in range(pre_grid)]
        vals = [f(x) for x in xs]
        i = min(range(pre_grid), key=lambda t: (vals[t], t))
        lo, hi = xs[max(i - 1, 0)], xs[min(i + 1, pre_grid - 1)]
    x1 = hi - _INVPHI * (hi - lo)
    x2 = lo + _INVPHI * (hi - lo)
    f1, f2 = f(x1), f(x2)
    while hi - lo > xtol:
        if f1 <= f2:
            hi, x2, f2 = x2, x1, f1
            x1 = hi - _INVPHI * (hi - lo)
            f1 = f(x1)
        else:
            lo, x1, f1 = x1, x2, f2
            x2 = lo + _INVPHI * (hi - lo)
            f2 = f(x2)
    xm = 0.5 * (lo + hi)
    return xm, f(xm)


def rate_gaussian_known_var(psi_d, psi_dp, mu_d, mu_dp, var_d, var_dp):
    """Closed-form pairwise rate for Gaussian observations with known variance.

    Accepts scalars or broadcastable arrays; returns 0 wherever either ratio
    is 0 (no sampling effort, no discrimination).
    """
    psi_d = np.asarray(psi_d, dtype=float)
    psi_dp = np.asarray(psi_dp, dtype=float)
    num = (np.asarray(mu_d, float) - np.asarray(mu_dp, float)) ** 2
    with np.errstate(divide="ignore", invalid="ignore"):
        denom = np.asarray(var_d, float) / psi_d + np.asarray(var_dp, float) / psi_dp
        out = np.where((psi_d > 0) & (psi_dp > 0), num / denom, 0.0)
    if out.ndim == 0:
        return float(out)
    return out


def _div_known_var(mu_star, var, mu):
    # Scaled divergence consistent with the closed form (twice the fixed-variance KL).
    return (mu_star - mu) ** 2 / var


def _div_unknown_var(mu_star, var_star, mu):
    return 0.5 * math.log(1.0 + (mu_star - mu) ** 2 / var_star)


def _div_weibull(mu_star, k_star, mu, tau, eta_bounds, xtol):
    if mu == mu_star:
        return 0.0, k_star
    lo, hi = eta_bounds

    def f(k):
        # Quadrature can diverge at extreme shape mismatches (k near the box
        # edge); those shapes cannot carry the minimizing divergence, so they
        # drop out of the search as +inf.
        try:
            return kl_weibull_censored((mu_star, k_star), (mu, k), tau)
        except RuntimeError:
            return math.inf

    k_min, val = _golden_min(f, lo, hi, xtol=max(xtol, 1e-4), pre_grid=9)
    return val, k_min


def rate_generic(
    psi_d,
    psi_dp,
    theta_star_d,
    theta_star_dp,
    family: str,
    *,
    tau: float | None = None,
    eta_bounds: tuple | None = None,
    tol: float = 1e-6,
    full: bool = False,
):
    """Pairwise rate by direct minimization over the crossing mean.

    ``theta_star_d`` and ``theta_star_dp`` are (mu, eta) with mu_d > mu_d'.
    The crossing mean is restricted to [mu_d', mu_d]: outside that interval
    one divergence term grows with no compensation. A coarse grid brackets the
    minimum before golden-section refinement (the objective need not be
    unimodal for every family), tolerance ``tol`` on the crossing mean.

    With ``full=True`` returns a dict carrying the value, the minimizing
    crossing mean, and the two per-design divergences at the minimum (the
    envelope gradient of the rate in its two ratio arguments).
    """
    x = float(psi_d)
    y = float(psi_dp)
    if x < 0 or y < 0:
        raise ValueError("sampling ratios must be nonnegative")
    mu_t, eta_t = (float(v) for v in theta_star_d)
    mu_b, eta_b = (float(v) for v in theta_star_dp)
    if not mu_t > mu_b:
        raise ValueError("the pair requires mu_d > mu_d'")

    if family == KNOWN_VAR:
        div_t = lambda mu: _div_known_var(mu_t, eta_t, mu)
        div_b = lambda mu: _div_known_var(mu_b, eta_b, mu)
        pre = 5  # quadratic objective, bracket only
    elif family == UNKNOWN_VAR:
        div_t = lambda mu: _div_unknown_var(mu_t, eta_t, mu)
        div_b = lambda mu: _div_unknown_var(mu_b, eta_b, mu)
        pre = 33
    elif family == WEIBULL_CENSORED:
        if tau is None:
            raise ValueError("weibull-censored rate needs tau")
        bounds = eta_bounds if eta_bounds is not None else (0.1, 20.0)
        div_t = lambda mu: _div_weibull(mu_t, eta_t, mu, tau, bounds, tol)[0]
        div_b = lambda mu: _div_weibull(mu_b, eta_b, mu, tau, bounds, tol)[0]
        pre = 9
    else:
        raise ValueError(f"unknown rate family {family!r}")

    if x == 0.0 and y == 0.0:
        result = {"value": 0.0, "crossing_mu": mu_b, "div_d": div_t(mu_b), "div_dp": 0.0}
        return result if full else 0.0
    if x == 0.0:
        result = {"value": 0.0, "crossing_mu": mu_t, "div_d": 0.0, "div_dp": div_b(mu_t)}
        return result if full else 0.0
    if y == 0.0:
        result = {"value": 0.0, "crossing_mu": mu_b, "div_d": div_t(mu_b), "div_dp": 0.0}
        return result if full else 0.0

    objective = lambda mu: x * div_t(mu) + y * div_b(mu)
    mu_min, val = _golden_min(objective, mu_b, mu_t, xtol=tol, pre_grid=pre)
    if not full:
        return max(0.0, val)
    return {
        "value": max(0.0, val),
        "crossing_mu": mu_min,
        "div_d": div_t(mu_min),
        "div_dp": div_b(mu_min),
    }


@dataclass(frozen=True)
class RatePair:
    """One (target design, challenger) rate, with solver helpers.

    ``value(x, y)`` evaluates the rate at ratios (x, y) of the pair;
    ``grad`` returns a supergradient; ``invert_bot`` finds the smallest
    challenger ratio reaching a given rate level at fixed x, in closed form
    where the family allows and by bisection otherwise.
    """

    family: str
    mu_top: float = 1.0
    eta_top: float = 1.0
    mu_bot: float = 0.0
    eta_bot: float = 1.0
    tau: float | None = None
    eta_bounds: tuple | None = None
    coef: float = 2.0
    tol: float = 1e-6

    def __post_init__(self):
        if self.family not in RATE_FAMILIES:
            raise ValueError(f"unknown rate family {self.family!r}")
        if self.family in (KNOWN_VAR, UNKNOWN_VAR, WEIBULL_CENSORED) and not self.mu_top > self.mu_bot:
            raise ValueError("rate pair requires mu_top > mu_bot")

    def value(self, x: float, y: float) -> float:
        if x <= 0.0 or y <= 0.0:
            return 0.0
        if self.family == KNOWN_VAR:
            return (self.mu_top - self.mu_bot) ** 2 / (self.eta_top / x + self.eta_bot / y)
        if self.family == HARMONIC:
            return self.coef * x * y / (x + y)
        if self.family == MIN_RATE:
            return min(x, y)
        return rate_generic(
            x, y, (self.mu_top, self.eta_top), (self.mu_bot, self.eta_bot),
            self.family, tau=self.tau, eta_bounds=self.eta_bounds, tol=self.tol,
        )

    def value_and_grad(self, x: float, y: float):
        """Rate value and a supergradient in (x, y)."""
        if self.family == KNOWN_VAR:
            if x <= 0.0 or y <= 0.0:
                return 0.0, _div_known_var(self.mu_top, self.eta_top, self.mu_bot), 0.0
            s = self.eta_top / x + self.eta_bot / y
            v = (self.mu_top - self.mu_bot) ** 2 / s
            gx = v / s * self.eta_top / (x * x)
            gy = v / s * self.eta_bot / (y * y)
            return v, gx, gy
        if self.family == HARMONIC:
            if x + y <= 0.0:
                return 0.0, self.coef, self.coef
            t = x + y
            return self.coef * x * y / t, self.coef * (y / t) ** 2, self.coef * (x / t) ** 2
        if self.family == MIN_RATE:
            if x < y:
                return x, 1.0, 0.0
            if y < x:
                return y, 0.0, 1.0
            return x, 0.5, 0.5
        info = rate_generic(
            x, y, (self.mu_top, self.eta_top), (self.mu_bot, self.eta_bot),
            self.family, tau=self.tau, eta_bounds=self.eta_bounds, tol=self.tol, full=True,
        )
        return info["value"], info["div_d"], info["div_dp"]

    def invert_bot(self, x: float, z: float, y_hi: float):
        """Smallest y in [0, y_hi] with value(x, y) >= z; None if unreachable."""
        if z <= 0.0:
            return 0.0
        if x <= 0.0:
            return None
        if self.family == KNOWN_VAR:
            cap = x * (self.mu_top - self.mu_bot) ** 2 / self.eta_top
            if z >= cap:
                return None if self.value(x, y_hi) < z else y_hi
            y = self.eta_bot / ((self.mu_top - self.mu_bot) ** 2 / z - self.eta_top / x)
            return y if y <= y_hi else None
        if self.family == HARMONIC:
            if z >= self.coef * x:
                return None if self.value(x, y_hi) < z else y_hi
            y = 1.0 / (self.coef / z - 1.0 / x)
            return y if y <= y_hi else None
        if self.family == MIN_RATE:
            if z > min(x, y_hi):
                return None
            return z
        # Generic monotone families: bisection on y.
        if self.value(x, y_hi) < z * (1.0 - 1e-12):
            return None
        lo, hi = 0.0, y_hi
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            if self.value(x, mid) >= z:
                hi = mid
            else:
                lo = mid
        return hi


@dataclass
class ContextRates:
    """All rate pairs of one context, in canonical design order.

    Designs are sorted by natural id order on construction, so results do not
    depend on the order the caller listed them in. ``overrides`` replaces the
    family-derived pair for specific (target, challenger) id pairs, which is
    how synthetic rate shapes enter the solver.
    """

    context: str
    design_ids: tuple
    mu: np.ndarray
    eta: np.ndarray
    m: int
    family: str
    tau: float | None = None
    eta_bounds: tuple | None = None
    overrides: dict = field(default_factory=dict)

    def __post_init__(self):
        order = sorted(range(len(self.design_ids)), key=lambda i: natural_id_key(self.design_ids[i]))
        self.design_ids = tuple(self.design_ids[i] for i in order)
        self.mu = np.asarray(self.mu, dtype=float)[order]
        self.eta = np.asarray(self.eta, dtype=float)[order]
        if not 1 <= self.m <= len(self.design_ids) - 1:
            raise ValueError("need 1 <= m < number of designs (at least one challenger)")
        top = top_m_indices(self.mu, self.m)
        self.p_idx = tuple(int(i) for i in top)
        self.u_idx = tuple(i for i in range(len(self.design_ids)) if i not in set(self.p_idx))
        self._pairs = {}
        for i in self.p_idx:
            for j in self.u_idx:
                key = (self.design_ids[i], self.design_ids[j])
                if key in self.overrides:
                    self._pairs[(i, j)] = self.overrides[key]
                else:
                    self._pairs[(i, j)] = RatePair(
                        family=self.family,
                        mu_top=float(self.mu[i]),
                        eta_top=float(self.eta[i]),
                        mu_bot=float(self.mu[j]),
                        eta_bot=float(self.eta[j]),
                        tau=self.tau,
                        eta_bounds=self.eta_bounds,
                    )

    @property
    def n_designs(self) -> int:
        return len(self.design_ids)

    @property
    def p_ids(self) -> tuple:
        return tuple(self.design_ids[i] for i in self.p_idx)

    @property
    def u_ids(self) -> tuple:
        return tuple(self.design_ids[j] for j in self.u_idx)

    def pair(self, i: int, j: int) -> RatePair:
        return self._pairs[(i, j)]

    def best_pairs(self):
        """(challenger id, pair) list for the m=1 problem, canonical order."""
        if self.m != 1:
            raise ValueError("best_pairs applies to m=1 contexts")
        i = self.p_idx[0]
        return [(self.design_ids[j], self._pairs[(i, j)]) for j in self.u_idx]

    def all_known_var(self) -> bool:
        return all(p.family == KNOWN_VAR for p in self._pairs.values())


def context_rates_from_instance(
    instance: ProblemInstance,
    family: str | None = None,
    mu=None,
    eta=None,
    eta_bounds=None,
) -> list[ContextRates]:
    """Rate specs per context from true or plug-in parameters.

    ``mu``/``eta`` override the instance's true parameters with flat arrays
    (plug-in estimates). Family defaults to the closed form for Gaussian
    instances and the censored family for Weibull instances.
    """
    if family is None:
        family = KNOWN_VAR if instance.family == GAUSSIAN else WEIBULL_CENSORED
    mu = instance.mu if mu is None else np.asarray(mu, dtype=float)
    eta = instance.eta if eta is None else np.asarray(eta, dtype=float)
    if family == WEIBULL_CENSORED and eta_bounds is None:
        lo, hi = instance.theta_box[1]
        eta_bounds = (max(lo, 0.1), hi)
    out = []
    for ci, cid in enumerate(instance.contexts):
        sl = instance.context_slices[ci]
        out.append(
            ContextRates(
                context=cid,
                design_ids=instance.designs_per_context[ci],
                mu=mu[sl],
                eta=eta[sl],
                m=instance.m[ci],
                family=family,
                tau=instance.tau,
                eta_bounds=eta_bounds,
            )
        )
    return out


# Balance solver for the best-design problem ---------------------------------


def solve_balance_best(gamma_c: float, rates, *, tol: float = 1e-10):
    """Equalize challenger rates at fixed target share ``gamma_c``.

    ``rates`` is a sequence of (design_id, RatePair) for the challengers.
    Bisects on the common rate level z, inverting each pair's monotone map
    from challenger ratio to rate; the challenger ratios must spend exactly
    1 - gamma_c. Where a pair's rate plateaus before z can rise further, the
    remaining mass cannot raise the objective, so the leftover is assigned to
    the last challenger in id order.

    Returns (beta array aligned with ``rates`` order, z).
    """
    if not 0.0 < gamma_c < 1.0:
        raise ValueError("gamma_c must be strictly inside (0, 1)")
    items = list(rates)
    if not items:
        raise ValueError("need at least one challenger")
    order = sorted(range(len(items)), key=lambda i: natural_id_key(items[i][0]))
    pairs = [items[i][1] for i in order]
    budget = 1.0 - gamma_c

    caps = np.array([p.value(gamma_c, budget) for p in pairs])
    z_hi = float(caps.min())
    if not z_hi > 0.0:
        raise ValueError("degenerate rate spec: a challenger rate is 0 at full budget")

    def invert_all(z: float) -> np.ndarray:
        out = np.empty(len(pairs))
        for idx, p in enumerate(pairs):
            y = p.invert_bot(gamma_c, z, budget)
            out[idx] = budget if y is None else min(y, budget)
        return out

    beta_hi = invert_all(z_hi)
    if beta_hi.sum() <= budget + tol:
        z_star, beta = z_hi, beta_hi
    else:
        lo_z, hi_z = 0.0, z_hi
        beta = np.zeros(len(pairs))
        for _ in range(200):
            mid = 0.5 * (lo_z + hi_z)
            b = invert_all(mid)
            if b.sum() > budget:
                hi_z = mid
            else:
                lo_z, beta = mid, b
            if abs(b.sum() - budget) <= tol:
                lo_z, beta = mid, b
                break
        z_star = lo_z
        if z_star == 0.0:
            z_star, beta = hi_z, invert_all(hi_z)
            np.minimum(beta, budget, out=beta)
    slack = budget - beta.sum()
    if slack > 0:
        beta[-1] += slack
    # Undo the canonical ordering for the caller.
    out = np.empty(len(items))
    for pos, i in enumerate(order):
        out[i] = beta[pos]
    return out, float(z_star)


def _solve_balance_knownvar_grid(gammas: np.ndarray, delta2: np.ndarray, v_top: np.ndarray, v_bot: np.ndarray, iters: int = 120):
    """Vectorized balance values over a grid of gamma (known-variance pairs).

    Returns z per gamma. Used to make the 1-D gamma search cheap enough to run
    inside sequential tuning.
    """
    g = gammas[:, None]
    budget = 1.0 - gammas
    caps = delta2[None, :] / (v_top[None, :] / g + v_bot[None, :] / budget[:, None])
    z_hi = caps.min(axis=1)
    lo = np.zeros_like(z_hi)
    hi = z_hi.copy()

    def beta_sum(z):
        with np.errstate(divide="ignore"):
            denom = delta2[None, :] / z[:, None] - v_top[None, :] / g
            beta = v_bot[None, :] / denom
        np.clip(beta, 0.0, budget[:, None], out=beta)
        return beta.sum(axis=1)

    if beta_sum(z_hi).max() <= 0:  # pragma: no cover - defensive
        return z_hi
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        over = beta_sum(mid) > budget
        hi = np.where(over, mid, hi)
        lo = np.where(over, lo, mid)
    # A single challenger spends the whole budget at z_hi exactly.
    single = beta_sum(z_hi) <= budget + 1e-12
    return np.where(single, z_hi, lo)


def alpha_star(gamma_star_per_context):
    """Cross-context ratios from per-context optimal rates.

    alpha(c) is proportional to the inverse rate; returns (alpha, overall
    rate), where the overall rate is the harmonic-style composition
    1 / sum_c 1/rate_c. Slower contexts get more effort.
    """
    rates = np.asarray(gamma_star_per_context, dtype=float)
    if np.any(rates <= 0):
        raise ValueError("all per-context rates must be positive")
    inv = 1.0 / rates
    total = inv.sum()
    return inv / total, float(1.0 / total)


@dataclass
class AllocationVector:
    """A static allocation: context ratios, within-context ratios, summary."""

    contexts: tuple
    design_ids: tuple  # per context, canonical order
    alpha: np.ndarray
    beta: tuple  # per context, arrays aligned with design_ids
    gamma: np.ndarray  # per context, mass on the target set
    value: float
    per_context_value: np.ndarray
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        if not math.isclose(float(np.sum(self.alpha)), 1.0, abs_tol=1e-9):
            raise ValueError("alpha must sum to 1")
        for ci, b in enumerate(self.beta):
            if np.any(np.asarray(b) < -1e-12):
                raise ValueError("beta must be nonnegative")
            if not math.isclose(float(np.sum(b)), 1.0, abs_tol=1e-9):
                raise ValueError(f"beta for context {self.contexts[ci]!r} must sum to 1")
        if np.any((self.gamma <= 0) | (self.gamma >= 1)):
            raise ValueError("gamma must be strictly inside (0, 1)")

    def beta_of(self, context: str) -> dict:
        ci = self.contexts.index(context)
        return {d: float(v) for d, v in zip(self.design_ids[ci], self.beta[ci])}

    def psi(self) -> dict:
        """Global per-design ratios alpha(c) * beta(c, d)."""
        out = {}
        for ci in range(len(self.contexts)):
            for d, v in zip(self.design_ids[ci], self.beta[ci]):
                out[d] = float(self.alpha[ci] * v)
        return out

    def to_dict(self) -> dict:
        return {
            "alpha": {c: float(a) for c, a in zip(self.contexts, self.alpha)},
            "beta": {c: self.beta_of(c) for c in self.contexts},
            "gamma": {c: float(g) for c, g in zip(self.contexts, self.gamma)},
            "value": self.value,
            "per_context_value": {c: float(v) for c, v in zip(self.contexts, self.per_context_value)},
            "diagnostics": self.diagnostics,
        }


def _assemble_best(specs, gammas, betas_u, values, diagnostics=None) -> AllocationVector:
    alpha, overall = alpha_star(values)
    beta_full = []
    for spec, g, bu in zip(specs, gammas, betas_u):
        b = np.zeros(spec.n_designs)
        b[spec.p_idx[0]] = g
        for pos, j in enumerate(spec.u_idx):
            b[j] = bu[pos]
        beta_full.append(b)
    return AllocationVector(
        contexts=tuple(s.context for s in specs),
        design_ids=tuple(s.design_ids for s in specs),
        alpha=alpha,
        beta=tuple(beta_full),
        gamma=np.asarray(gammas, dtype=float),
        value=overall,
        per_context_value=np.asarray(values, dtype=float),
        diagnostics=diagnostics or {},
    )


def solve_best_fixed_gamma(context_rate_specs, gamma) -> AllocationVector:
    """Balance each context at a fixed target share (m=1 contexts only)."""
    specs = list(context_rate_specs)
    gammas = np.broadcast_to(np.asarray(gamma, dtype=float), (len(specs),))
    betas, values = [], []
    for spec, g in zip(specs, gammas):
        beta_u, z = solve_balance_best(float(g), spec.best_pairs())
        betas.append(beta_u)
        values.append(z)
    return _assemble_best(specs, gammas, betas, values)


def optimize_gamma(context_rate_specs, *, grid_points: int = 50, xtol: float = 1e-7):
    """Per-context 1-D maximization of the balanced rate over the target share.

    A coarse grid over [1e-3, 1-1e-3] guards against non-unimodality, then
    golden-section refines the best bracket. Returns (gamma array,
    AllocationVector).
    """
    specs = list(context_rate_specs)
    gammas, betas, values = [], [], []
    lo_g, hi_g = 1e-3, 1.0 - 1e-3
    grid = np.linspace(lo_g, hi_g, grid_points)
    for spec in specs:
        if spec.m != 1:
            raise ValueError("optimize_gamma handles single-target contexts; use solve_topm_allocation")
        pairs = spec.best_pairs()
        if spec.all_known_var():
            i = spec.p_idx[0]
            delta2 = np.array([(spec.mu[i] - spec.mu[j]) ** 2 for j in spec.u_idx])
            v_top = np.full(len(spec.u_idx), spec.eta[i])
            v_bot = np.array([spec.eta[j] for j in spec.u_idx])
            zs = _solve_balance_knownvar_grid(grid, delta2, v_top, v_bot)
            value_at = lambda g: float(
                _solve_balance_knownvar_grid(np.array([g]), delta2, v_top, v_bot)[0]
            )
        else:
            zs = np.array([solve_balance_best(float(g), pairs)[1] for g in grid])
            value_at = lambda g: solve_balance_best(float(g), pairs)[1]
        k = int(np.argmax(zs))
        b_lo, b_hi = grid[max(k - 1, 0)], grid[min(k + 1, grid_points - 1)]
        g_star, neg = _golden_min(lambda g: -value_at(g), b_lo, b_hi, xtol=xtol)
        beta_u, z = solve_balance_best(float(g_star), pairs)
        gammas.append(float(g_star))
        betas.append(beta_u)
        values.append(z)
    allocation = _assemble_best(specs, gammas, betas, values)
    return np.asarray(gammas), allocation


# Top-m solver ----------------------------------------------------------------


def _respecified(specs, m):
    """Rebuild rate specs with an overriding per-context target size."""
    if m is None:
        return list(specs)
    specs = list(specs)
    ms = np.broadcast_to(np.asarray(m, dtype=int), (len(specs),))
    return [
        ContextRates(
            context=s.context, design_ids=s.design_ids, mu=s.mu, eta=s.eta,
            m=int(mc), family=s.family, tau=s.tau, eta_bounds=s.eta_bounds,
            overrides=s.overrides,
        )
        for s, mc in zip(specs, ms)
    ]


def solve_topm_allocation(
    context_rate_specs,
    m=None,
    *,
    iterations: int = 5000,
    step_scale: float = 0.5,
    residual_threshold: float = 1e-3,
) -> AllocationVector:
    """Maximize the smallest pair rate per context over the design simplex.

    Exponentiated-gradient ascent with step ``step_scale/sqrt(iter)``; the
    supergradient at each iterate is the gradient of the currently smallest
    pair. The reported solution averages the second half of the iterates
    (early iterates carry the uniform start); the objective along that
    running average is recorded in ``diagnostics['objective_trajectory']``.
    Cross-context ratios follow the inverse-rate composition. The balance
    residual of the necessary condition is reported; a large residual sets
    ``diagnostics['degraded']`` rather than failing, since the problem can
    have a continuum of optima. ``m`` optionally overrides the specs' target
    sizes (scalar or per-context).
    """
    specs = _respecified(context_rate_specs, m)
    betas, values, trajectories = [], [], []
    for spec in specs:
        pair_list = [(i, j, spec.pair(i, j)) for i in spec.p_idx for j in spec.u_idx]
        n = spec.n_designs
        objective = lambda b: min(p.value(b[i], b[j]) for (i, j, p) in pair_list)
        beta = np.full(n, 1.0 / n)
        half = iterations // 2
        tail = np.zeros(n)
        kept = 0
        marks = {int(v) for v in np.geomspace(half + 1, iterations, 16).astype(int)}
        trajectory = []
        for it in range(1, iterations + 1):
            best = None
            for (i, j, pair) in pair_list:
                v, gx, gy = pair.value_and_grad(beta[i], beta[j])
                if best is None or v < best[0]:
                    best = (v, i, j, gx, gy)
            _, bi, bj, gx, gy = best
            step = step_scale / math.sqrt(it)
            grad = np.zeros(n)
            grad[bi] = gx
            grad[bj] = gy
            scale = max(abs(gx), abs(gy), 1e-12)
            beta = beta * np.exp(step * grad / scale)
            beta /= beta.sum()
            if it > half:
                tail += beta
                kept += 1
                if it in marks:
                    trajectory.append((it, objective(tail / kept)))
        beta_bar = tail / kept
        value = objective(beta_bar)
        betas.append(beta_bar)
        values.append(value)
        trajectories.append(trajectory)

    alpha, overall = alpha_star(values)
    gammas = np.array([float(b[list(spec.p_idx)].sum()) for spec, b in zip(specs, betas)])
    allocation = AllocationVector(
        contexts=tuple(s.context for s in specs),
        design_ids=tuple(s.design_ids for s in specs),
        alpha=alpha,
        beta=tuple(betas),
        gamma=gammas,
        value=overall,
        per_context_value=np.asarray(values),
        diagnostics={},
    )
    residual = balance_residual_topm(allocation, specs)
    allocation.diagnostics["balance_residual"] = residual
    allocation.diagnostics["degraded"] = bool(residual > residual_threshold)
    allocation.diagnostics["objective_trajectory"] = {
        spec.context: traj for spec, traj in zip(specs, trajectories)
    }
    return allocation


# Residual checkers -----------------------------------------------------------


_FD_REL_STEP = 1e-6


def _pair_partials(pair: RatePair, x: float, y: float):
    """Partial derivatives of the pair rate; analytic closed form where known.

    Returns (gx, gy, kink) with ``kink`` set when one-sided finite differences
    disagree, which happens on flat rate regions.
    """
    if pair.family in (KNOWN_VAR, HARMONIC):
        _, gx, gy = pair.value_and_grad(x, y)
        return gx, gy, False

    def fd(along_y: bool):
        if along_y:
            f = lambda t: pair.value(x, t)
            base = y
        else:
            f = lambda t: pair.value(t, y)
            base = x
        step = _FD_REL_STEP * max(abs(base), 1e-3)
        up = (f(base + step) - f(base)) / step
        down = (f(base) - f(base - step)) / step
        central = (f(base + step) - f(base - step)) / (2 * step)
        kink = abs(up - down) > 1e-2 * max(abs(up), abs(down), 1e-9)
        return central, kink

    gx, kx = fd(along_y=False)
    gy, ky = fd(along_y=True)
    return gx, gy, kx or ky


def kkt_residual_best(allocation: AllocationVector, context_rate_specs) -> dict:
    """First-order optimality residuals for a solved best-design allocation.

    ``stationarity`` per context: the partial-derivative ratios of the
    challenger rates must sum to one at an optimum; reported as the absolute
    deviation. ``value_spread``: all weighted challenger rates alpha(c) *
    G(gamma_c, beta_cd) must share a common level; reported as relative
    (max - min)/mean across every context and challenger. Entries where a
    derivative sits on a kink are excluded from the sums and listed.
    """
    specs = list(context_rate_specs)
    stationarity = {}
    weighted = []
    kinks = []
    for ci, spec in enumerate(specs):
        if spec.m != 1:
            raise ValueError("kkt_residual_best applies to m=1 contexts")
        i = spec.p_idx[0]
        g = float(allocation.gamma[ci])
        ratios = []
        for j in spec.u_idx:
            pair = spec.pair(i, j)
            b = float(allocation.beta[ci][j])
            gx, gy, kink = _pair_partials(pair, g, b)
            if kink or gy == 0.0:
                kinks.append((spec.context, spec.design_ids[j]))
            else:
                ratios.append(gx / gy)
            weighted.append(float(allocation.alpha[ci]) * pair.value(g, b))
        stationarity[spec.context] = abs(sum(ratios) - 1.0) if ratios else float("nan")
    weighted = np.asarray(weighted)
    mean = weighted.mean()
    spread = float((weighted.max() - weighted.min()) / mean) if mean > 0 else float("inf")
    return {"stationarity": stationarity, "value_spread": spread, "kinks": kinks}


def balance_residual_topm(allocation: AllocationVector, context_rate_specs, m=None) -> float:
    """Deviation from the top-m necessary condition at a candidate allocation.

    For each context, every target design's worst weighted rate against the
    challengers and every challenger's worst weighted rate against the targets
    must agree on a common level; returns the largest relative spread. ``m``
    optionally overrides the specs' target sizes.
    """
    specs = _respecified(context_rate_specs, m)
    worst = 0.0
    for ci, spec in enumerate(specs):
        a = float(allocation.alpha[ci])
        beta = allocation.beta[ci]
        values = {}
        for i in spec.p_idx:
            for j in spec.u_idx:
                values[(i, j)] = a * spec.pair(i, j).value(float(beta[i]), float(beta[j]))
        mins = []
        for i in spec.p_idx:
            mins.append(min(values[(i, j)] for j in spec.u_idx))
        for j in spec.u_idx:
            mins.append(min(values[(i, j)] for i in spec.p_idx))
        mins = np.asarray(mins)
        mean = mins.mean()
        if mean <= 0:
            return float("inf")
        worst = max(worst, float((mins.max() - mins.min()) / mean))
    return worst


def active_class_balance_check(psi, mu, sigma2, m: int, active, *, tol: float = 1e-6) -> dict:
    """Verify the equal-squared-effort condition on one context's allocation.

    For Gaussian known-variance pairs, an optimal within-context allocation
    partitions the designs into classes chained by active (rate-minimal)
    pairs; inside each class the target-side and challenger-side sums of
    (psi/sigma)^2 must match, and a pair's rate equals the common minimum
    exactly when the pair is active. ``active`` is a binary matrix indexed
    [target position][challenger position] (targets and challengers in
    design order). This is a checker, never a solver.
    """
    psi = np.asarray(psi, dtype=float)
    mu = np.asarray(mu, dtype=float)
    sigma2 = np.asarray(sigma2, dtype=float)
    n = psi.shape[0]
    p_idx = [int(i) for i in top_m_indices(mu, m)]
    u_idx = [i for i in range(n) if i not in set(p_idx)]
    active = np.asarray(active, dtype=int)
    if active.shape != (len(p_idx), len(u_idx)):
        raise ValueError("active pattern shape must be (|P|, |U|)")
    if np.any(active.sum(axis=1) == 0) or np.any(active.sum(axis=0) == 0):
        raise ValueError("every target and every challenger needs at least one active pair")

    rate = np.empty_like(active, dtype=float)
    for a, i in enumerate(p_idx):
        for b, j in enumerate(u_idx):
            rate[a, b] = rate_gaussian_known_var(psi[i], psi[j], mu[i], mu[j], sigma2[i], sigma2[j])
    z = float(rate.min())
    active_dev = float(np.max(np.abs(rate[active == 1] - z))) if np.any(active == 1) else 0.0
    inactive_ok = bool(np.all(rate[active == 0] > z + tol)) if np.any(active == 0) else True
    if np.any((active == 0) & (np.abs(rate - z) <= tol)):
        raise ValueError("active pattern inconsistent with the rate minima")

    # Union-find over designs chained by active pairs.
    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    def union(i, j):
        ri, rj = find(i), find(j)
        if ri != rj:
            parent[ri] = rj

    for a, i in enumerate(p_idx):
        for b, j in enumerate(u_idx):
            if active[a, b] == 1:
                union(i, j)
    classes = {}
    for i in p_idx + u_idx:
        classes.setdefault(find(i), []).append(i)

    effort = (psi / np.sqrt(sigma2)) ** 2
    balance = []
    for members in classes.values():
        top_sum = sum(effort[i] for i in members if i in set(p_idx))
        bot_sum = sum(effort[i] for i in members if i in set(u_idx))
        balance.append({"members": sorted(members), "target_sum": top_sum, "challenger_sum": bot_sum,
                        "ok": bool(abs(top_sum - bot_sum) <= tol)})
    ok = all(entry["ok"] for entry in balance) and active_dev <= tol and inactive_ok
    return {
        "ok": bool(ok),
        "common_value": z,
        "active_deviation": active_dev,
        "inactive_strictly_above": inactive_ok,
        "classes": balance,
    }


def empirical_rate_trajectory(history, instance: ProblemInstance, gamma) -> list[dict]:
    """Weighted challenger rates implied by realized counts, per checkpoint.

    ``history`` is either an AllocationHistory (evaluated at its current
    total) or a sequence of (budget, per-design count array) snapshots from
    a run. For single-target contexts the table holds
    alpha_bar(c) * G_d(gamma(c), beta_bar(c, d)) for every challenger d using
    the true parameters; for top-m contexts it holds the per-design minima of
    the pairwise condition. Entries for unvisited contexts or zero ratios are
    None. At an allocation-converging run the per-context spread of these
    values shrinks.
    """
    gamma = np.broadcast_to(np.asarray(gamma, dtype=float), (instance.n_contexts,))
    if np.any((gamma <= 0) | (gamma >= 1)):
        raise ValueError("gamma must be strictly inside (0, 1)")
    if hasattr(history, "counts") and hasattr(history, "total"):
        count_snapshots = [(history.total, np.asarray(history.counts, dtype=float))]
    else:
        count_snapshots = list(history)
    specs = context_rates_from_instance(instance)
    spec_order = []  # map canonical spec positions back to flat indices
    for ci, spec in enumerate(specs):
        sl = instance.context_slices[ci]
        id_to_flat = {d: k for k, d in zip(range(sl.start, sl.stop), instance.designs_per_context[ci])}
        spec_order.append([id_to_flat[d] for d in spec.design_ids])
    rows = []
    for budget, counts in count_snapshots:
        counts = np.asarray(counts, dtype=float)
        total = counts.sum()
        for ci, spec in enumerate(specs):
            flat = spec_order[ci]
            c_count = counts[flat].sum()
            alpha_bar = c_count / total if total > 0 else 0.0
            values = {}
            if c_count == 0:
                values = {d: None for d in spec.design_ids}
                spread = None
            else:
                beta_bar = counts[flat] / c_count
                if spec.m == 1:
                    i = spec.p_idx[0]
                    for j in spec.u_idx:
                        b = beta_bar[j]
                        values[spec.design_ids[j]] = (
                            None if b <= 0 else alpha_bar * spec.pair(i, j).value(float(gamma[ci]), float(b))
                        )
                else:
                    for i in spec.p_idx:
                        vals = [spec.pair(i, j).value(float(beta_bar[i]), float(beta_bar[j])) for j in spec.u_idx]
                        values[spec.design_ids[i]] = alpha_bar * min(vals)
                    for j in spec.u_idx:
                        vals = [spec.pair(i, j).value(float(beta_bar[i]), float(beta_bar[j])) for i in spec.p_idx]
                        values[spec.design_ids[j]] = alpha_bar * min(vals)
                defined = [v for v in values.values() if v is not None]
                if defined and min(defined) >= 0 and np.mean(defined) > 0:
                    spread = float((max(defined) - min(defined)) / np.mean(defined))
                else:
                    spread = None
            rows.append({"budget": int(budget), "context": spec.context, "values": values, "spread": spread})
    return rows
