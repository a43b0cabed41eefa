"""Constrained frontier projections of observed portfolios.

Three projections are solved per account: the minimum-variance book at the
account's expected return, the maximum-return book at the account's risk,
and the maximum-Sharpe book. All share the same constraint set: fully
invested, long-only, a per-asset cap, and support restricted to the assets
the account already holds. A brute-force simplex-grid oracle provides an
independent check on the smooth solver.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from enum import Enum
from typing import Mapping, Sequence

import numpy as np
from scipy.optimize import minimize

from .marketdata import MomentEstimates
from .metrics import l1_distance

DAYS_PER_YEAR = 365.0


class Strategy(Enum):
    MIN_VAR = "min_var"
    MAX_RET = "max_ret"
    MAX_SR = "max_sr"


class NaiveStrategy(Enum):
    EQUAL = "equal_weight"
    MCAP = "mcap_weight"


@dataclass(frozen=True)
class ConstraintSet:
    """Shared feasible set for every strategy.

    ``support`` holds indices into the weight vector; None derives it from
    the strictly positive entries of the observed weights.
    """

    w_max: float = 0.9
    support: tuple[int, ...] | None = None


@dataclass(frozen=True, eq=False)
class FrontierSolution:
    """Solver output: weights over the full asset ordering plus moments.

    ``distance`` is the ℓ₁ weight distance back to the observed book.
    Non-converged solutions keep their best-effort weights and say why in
    ``reason``.
    """

    strategy: Strategy
    weights: np.ndarray
    mu: float
    sigma: float
    distance: float
    converged: bool
    iterations: int
    reason: str = ""


def sharpe(mu: float, sigma: float, rf_daily: float = 0.0) -> float:
    """Sharpe ratio, with the zero-volatility convention ±inf.

    A riskless book earning more than the risk-free rate has unbounded
    Sharpe; one earning less, unboundedly bad; exactly the rate, zero.
    """
    excess = mu - rf_daily
    if sigma > 0.0:
        return excess / sigma
    if excess > 0.0:
        return math.inf
    if excess < 0.0:
        return -math.inf
    return 0.0


def project_capped_simplex(v, cap: float) -> np.ndarray:
    """Euclidean projection onto {0 <= w <= cap, sum w = 1}.

    Solved by bisection on the shift tau in w_i = clip(v_i - tau, 0, cap);
    the constrained mass is monotone in tau.
    """
    v = np.asarray(v, dtype=float)
    n = v.size
    if n * cap < 1.0 - 1e-12:
        raise ValueError(f"cap {cap} with {n} assets cannot reach full investment")
    lo = float(v.min()) - cap - 1.0
    hi = float(v.max())
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        mass = float(np.clip(v - mid, 0.0, cap).sum())
        if mass > 1.0:
            lo = mid
        else:
            hi = mid
    w = np.clip(v - 0.5 * (lo + hi), 0.0, cap)
    total = w.sum()
    if total > 0:
        w = w / total
    return np.minimum(w, cap)


def _moments_of(w: np.ndarray, mu: np.ndarray, cov: np.ndarray) -> tuple[float, float]:
    m = float(w @ mu)
    var = float(w @ cov @ w)
    return m, math.sqrt(max(var, 0.0))


def _mu_extreme(mu: np.ndarray, cap: float, maximize: bool) -> float:
    """Exact extreme of w·mu over the capped simplex, by greedy filling."""
    order = np.argsort(-mu, kind="stable") if maximize else np.argsort(mu, kind="stable")
    left = 1.0
    total = 0.0
    for i in order:
        take = min(cap, left)
        total += take * float(mu[i])
        left -= take
        if left <= 1e-15:
            break
    return total


@dataclass(frozen=True)
class _Instance:
    """Unpacked sub-problem on the support."""

    support: np.ndarray
    mu: np.ndarray
    cov: np.ndarray
    w0: np.ndarray
    cap: float
    anchor_mu: float
    anchor_sigma: float
    n_full: int


def _unpack(
    w0, m: MomentEstimates, constraints: ConstraintSet | None
) -> tuple[_Instance, str]:
    """Validate inputs and cut the problem down to the support.

    Returns the instance and an error reason ('' when solvable).
    """
    w0 = np.asarray(w0, dtype=float)
    mu_all = np.asarray(m.shrunk_means, dtype=float)
    cov_all = np.asarray(m.cov, dtype=float)
    if w0.shape != mu_all.shape:
        raise ValueError(
            f"w0 has {w0.size} entries for {mu_all.size} eligible assets"
        )
    if np.any(w0 < -1e-9):
        raise ValueError("observed weights must be long-only")
    if abs(float(w0.sum()) - 1.0) > 1e-6:
        raise ValueError(f"observed weights sum to {float(w0.sum())}, not 1")

    c = constraints if constraints is not None else ConstraintSet()
    if not 0.0 < c.w_max <= 1.0:
        raise ValueError(f"w_max must be in (0, 1], got {c.w_max}")
    if c.support is not None:
        support = np.asarray(sorted(set(c.support)), dtype=int)
        if support.size and (support[0] < 0 or support[-1] >= w0.size):
            raise ValueError("support indices out of range")
    else:
        support = np.flatnonzero(w0 > 0.0)
    if support.size < 2:
        raise ValueError("need at least 2 assets in the support")
    off = np.delete(np.arange(w0.size), support)
    if off.size and float(np.abs(w0[off]).sum()) > 1e-9:
        raise ValueError("observed weights carry mass outside the support")

    mu = mu_all[support]
    cov = cov_all[np.ix_(support, support)]
    w0s = w0[support]
    anchor_mu, anchor_sigma = _moments_of(w0s, mu, cov)
    inst = _Instance(support, mu, cov, w0s, c.w_max, anchor_mu, anchor_sigma, w0.size)
    reason = ""
    if support.size * c.w_max < 1.0 - 1e-12:
        reason = "cap excludes every fully-invested portfolio on this support"
    return inst, reason


def _embed(inst: _Instance, w_sub: np.ndarray) -> np.ndarray:
    w = np.zeros(inst.n_full)
    w[inst.support] = w_sub
    return w


def _finish(
    strategy: Strategy,
    inst: _Instance,
    w_sub: np.ndarray,
    ok: bool,
    iterations: int,
    reason: str,
    anchor_check,
    solver_tol: float,
) -> FrontierSolution:
    """Clean up solver output, verify constraints, embed into full space."""
    w = np.array(w_sub, dtype=float)
    w[(w < 0.0) & (w > -1e-10)] = 0.0
    w = w + 0.0  # normalize -0.0
    total = float(w.sum())
    if abs(total - 1.0) <= 1e-6 and total > 0:
        w = w / total

    feasible = (
        abs(float(w.sum()) - 1.0) <= solver_tol
        and float(w.min()) >= -solver_tol
        and float(w.max()) <= inst.cap + solver_tol
    )
    mu_p, sigma_p = _moments_of(w, inst.mu, inst.cov)
    anchored = anchor_check(mu_p, sigma_p) if anchor_check is not None else True
    converged = bool(ok and feasible and anchored)
    if not converged and not reason:
        if not feasible:
            reason = "constraint violation above tolerance"
        elif not anchored:
            reason = "anchor violation above tolerance"
        else:
            reason = "solver did not converge"
    full = _embed(inst, w)
    full_w0 = _embed(inst, inst.w0)
    return FrontierSolution(
        strategy=strategy,
        weights=full,
        mu=mu_p,
        sigma=sigma_p,
        distance=l1_distance(full_w0, full),
        converged=converged,
        iterations=iterations,
        reason=reason,
    )


def _slsqp(objective, jac, start, constraints, bounds, max_iter):
    with warnings.catch_warnings():
        # the line search routinely probes outside the box and clips;
        # convergence is judged from the result status, not this chatter
        warnings.filterwarnings(
            "ignore", message="Values in x were outside bounds"
        )
        res = minimize(
            objective,
            start,
            jac=jac,
            method="SLSQP",
            bounds=bounds,
            constraints=constraints,
            options={"maxiter": max_iter, "ftol": 1e-12},
        )
    return res


def solve(
    strategy: Strategy,
    w0,
    m: MomentEstimates,
    constraints: ConstraintSet | None = None,
    rf_annual: float = 0.0,
    *,
    solver_tol: float = 1e-8,
    max_iter: int = 500,
) -> FrontierSolution:
    """Project an observed weight vector onto one frontier strategy.

    ``w0`` aligns with ``m.eligible_ids``. Anchored strategies hold the
    account's own expected return (min-variance) or risk (max-return)
    fixed: the return anchor binds as an equality whenever the observed
    return is reachable under the cap and relaxes to at-least-as-much when
    the observed book itself violates the cap; the risk anchor is an
    at-most budget, which the optimum exhausts whenever doing so pays. The
    max-Sharpe projection ignores the anchors entirely and is started
    independently of ``w0``, so identical moments give identical tangency
    books no matter the observed weights.

    Infeasible anchors come back as non-converged solutions with a reason
    rather than exceptions; malformed inputs raise ValueError.
    """
    inst, reason = _unpack(w0, m, constraints)
    if reason:
        return _finish(strategy, inst, inst.w0, False, 0, reason, None, solver_tol)

    n = inst.support.size
    bounds = [(0.0, inst.cap)] * n
    ones = np.ones(n)
    sum_con = {"type": "eq", "fun": lambda w: float(w.sum()) - 1.0, "jac": lambda w: ones}

    if strategy is Strategy.MIN_VAR:
        return _solve_min_var(inst, bounds, sum_con, solver_tol, max_iter)
    if strategy is Strategy.MAX_RET:
        return _solve_max_ret(inst, bounds, sum_con, solver_tol, max_iter)
    if strategy is Strategy.MAX_SR:
        return _solve_max_sr(inst, bounds, sum_con, rf_annual, solver_tol, max_iter)
    raise ValueError(f"unknown strategy {strategy!r}")


def _solve_min_var(inst, bounds, sum_con, solver_tol, max_iter):
    mu, cov = inst.mu, inst.cov
    mu_lo = _mu_extreme(mu, inst.cap, maximize=False)
    mu_hi = _mu_extreme(mu, inst.cap, maximize=True)
    if inst.anchor_mu > mu_hi + solver_tol:
        return _finish(
            Strategy.MIN_VAR, inst, inst.w0, False, 0,
            "anchor return unreachable under the cap", None, solver_tol,
        )
    # reachable anchors bind exactly; an anchor below the reachable range
    # (cap-violating observed book) relaxes to an at-least constraint; a
    # flat mean vector makes the anchor redundant with full investment and
    # would degenerate the constraint system, so it is dropped
    cons = [sum_con]
    if float(mu.max() - mu.min()) > 1e-12:
        kind = "eq" if inst.anchor_mu >= mu_lo - solver_tol else "ineq"
        cons.append(
            {
                "type": kind,
                "fun": lambda w: float(w @ mu) - inst.anchor_mu,
                "jac": lambda w: mu,
            }
        )
    start = project_capped_simplex(inst.w0, inst.cap)
    res = _slsqp(
        lambda w: float(w @ cov @ w),
        lambda w: 2.0 * (cov @ w),
        start,
        cons,
        bounds,
        max_iter,
    )
    check = lambda mu_p, sigma_p: mu_p >= inst.anchor_mu - solver_tol
    return _finish(
        Strategy.MIN_VAR, inst, res.x, res.success, res.nit, "", check, solver_tol
    )


def _solve_max_ret(inst, bounds, sum_con, solver_tol, max_iter):
    mu, cov = inst.mu, inst.cov
    target_var = inst.anchor_sigma**2
    anchor_con = {
        "type": "ineq",
        "fun": lambda w: target_var - float(w @ cov @ w),
        "jac": lambda w: -2.0 * (cov @ w),
    }
    start = project_capped_simplex(inst.w0, inst.cap)
    res = _slsqp(
        lambda w: -float(w @ mu),
        lambda w: -mu,
        start,
        [sum_con, anchor_con],
        bounds,
        max_iter,
    )
    check = lambda mu_p, sigma_p: sigma_p <= inst.anchor_sigma + solver_tol
    out = _finish(
        Strategy.MAX_RET, inst, res.x, res.success, res.nit, "", check, solver_tol
    )
    if out.converged:
        return out
    # distinguish an infeasible risk budget from a solver failure: compare
    # the anchor against the smallest reachable variance
    aux = _slsqp(
        lambda w: float(w @ cov @ w),
        lambda w: 2.0 * (cov @ w),
        project_capped_simplex(np.full(inst.support.size, 1.0 / inst.support.size), inst.cap),
        [sum_con],
        bounds,
        max_iter,
    )
    if aux.success and float(aux.x @ cov @ aux.x) > target_var + solver_tol:
        return _finish(
            Strategy.MAX_RET, inst, inst.w0, False, res.nit + aux.nit,
            "risk budget below the feasible minimum", None, solver_tol,
        )
    return out


def _stationary_enough(x, grad, cap, rel_tol=1e-6) -> bool:
    """Projected KKT residual test for min f over the capped simplex.

    SLSQP can stall in its line search right at the optimum when the
    objective leaves no float headroom below ``ftol`` (status 8). A small
    projected-gradient residual certifies such a point rather than
    discarding a correct answer.
    """
    free = (x > 1e-9) & (x < cap - 1e-9)
    lam = float(grad[free].mean()) if free.any() else float(np.median(grad))
    r = grad - lam
    viol = 0.0
    for xi, ri, is_free in zip(x, r, free):
        if is_free:
            viol = max(viol, abs(ri))
        elif xi <= 1e-9:
            viol = max(viol, -ri if ri < 0.0 else 0.0)  # lower bound: r >= 0
        else:
            viol = max(viol, ri if ri > 0.0 else 0.0)  # at cap: r <= 0
    return viol <= rel_tol * max(1.0, float(np.abs(grad).max()))


def _solve_max_sr(inst, bounds, sum_con, rf_annual, solver_tol, max_iter):
    mu, cov = inst.mu, inst.cov
    n = inst.support.size
    rf_daily = rf_annual / DAYS_PER_YEAR
    eps = 1e-12

    def objective(w):
        excess = float(w @ mu) - rf_daily
        sig = max(math.sqrt(max(float(w @ cov @ w), 0.0)), eps)
        return -excess / sig

    def jac(w):
        excess = float(w @ mu) - rf_daily
        var = max(float(w @ cov @ w), 0.0)
        sig = max(math.sqrt(var), eps)
        grad_sigma = (cov @ w) / sig if sig > eps else np.zeros(n)
        return -(mu * sig - excess * grad_sigma) / (sig * sig)

    # w0-independent starts: uniform plus a tilt toward the single asset
    # with the best standalone Sharpe, so the solver sees each likely basin
    single = np.array(
        [sharpe(float(mu[i]), math.sqrt(max(float(cov[i, i]), 0.0)), rf_daily) for i in range(n)]
    )
    best_single = int(np.argmax(single))
    tilt = np.full(n, (1.0 - inst.cap) / (n - 1))
    tilt[best_single] = inst.cap
    starts = [np.full(n, 1.0 / n), project_capped_simplex(tilt, inst.cap)]

    best = None
    best_key = None
    iterations = 0
    for start in starts:
        res = _slsqp(objective, jac, start, [sum_con], bounds, max_iter)
        iterations += res.nit
        key = (not res.success, objective(res.x))  # prefer success, then value
        if best is None or key < best_key:
            best, best_key = res, key
    converged = best.success or _stationary_enough(best.x, jac(best.x), inst.cap)
    return _finish(
        Strategy.MAX_SR, inst, best.x, converged, iterations, "", None, solver_tol
    )


def naive_weights(
    kind: NaiveStrategy,
    token_ids: Sequence[str],
    mcaps: Mapping[str, float] | None = None,
) -> np.ndarray:
    """Benchmark weights over a support: equal or market-cap proportional.

    No per-asset cap applies here; a single-asset support is legal and
    yields the degenerate weight 1.
    """
    n = len(token_ids)
    if n == 0:
        raise ValueError("empty support")
    if kind is NaiveStrategy.EQUAL:
        return np.full(n, 1.0 / n)
    if kind is NaiveStrategy.MCAP:
        if mcaps is None:
            raise ValueError("market-cap weighting needs market caps")
        values = np.empty(n)
        for i, tid in enumerate(token_ids):
            cap = mcaps.get(tid)
            if cap is None:
                raise ValueError(f"missing market cap for {tid!r}")
            if not (np.isfinite(cap) and cap > 0):
                raise ValueError(f"market cap for {tid!r} must be positive")
            values[i] = cap
        return values / values.sum()
    raise ValueError(f"unknown naive strategy {kind!r}")


def _compositions(total: int, parts: int, cap_units: int) -> np.ndarray:
    """All integer compositions of ``total`` into ``parts`` entries <= cap."""
    if parts == 1:
        if total <= cap_units:
            return np.array([[total]], dtype=np.int64)
        return np.empty((0, 1), dtype=np.int64)
    blocks = []
    for first in range(min(total, cap_units) + 1):
        tail = _compositions(total - first, parts - 1, cap_units)
        if len(tail):
            blocks.append(
                np.column_stack([np.full(len(tail), first, dtype=np.int64), tail])
            )
    if not blocks:
        return np.empty((0, parts), dtype=np.int64)
    return np.concatenate(blocks)


def grid_oracle(
    strategy: Strategy,
    w0,
    m: MomentEstimates,
    constraints: ConstraintSet | None = None,
    step: float = 0.01,
    rf_annual: float = 0.0,
) -> FrontierSolution:
    """Brute-force reference solver on the simplex grid with spacing ``step``.

    Enumerates every grid weight vector inside the constraint set and picks
    the best objective directly, so it shares no code path with the smooth
    solver. The return anchor admits only the grid points that match the
    anchor as closely as the grid can at all (a grid rarely hits an anchor
    exactly); the risk anchor is a budget, so only grid points at or under
    the anchor volatility count, falling back to the nearest-risk shell
    when nothing fits under it. Ties break toward the smallest ℓ₁ distance
    from the observed book, then lexicographically.

    Supports up to 4 assets; the candidate count explodes beyond that.
    """
    inst, reason = _unpack(w0, m, constraints)
    if reason:
        raise ValueError(reason)
    n = inst.support.size
    if n > 4:
        raise ValueError("grid oracle supports at most 4 assets")
    M = round(1.0 / step)
    if M < 1 or abs(M * step - 1.0) > 1e-9:
        raise ValueError("step must divide 1 evenly")
    cap_units = int(math.floor(inst.cap * M + 1e-9))
    comps = _compositions(M, n, cap_units)
    if not len(comps):
        raise ValueError("no grid point satisfies the constraints")
    W = comps.astype(float) / M
    mus = W @ inst.mu
    variances = np.einsum("ij,jk,ik->i", W, inst.cov, W)
    sigmas = np.sqrt(np.clip(variances, 0.0, None))

    rf_daily = rf_annual / DAYS_PER_YEAR
    if strategy is Strategy.MIN_VAR:
        # admit only points that meet the return anchor as closely as the
        # grid can at all; a wider band would let the oracle trade anchor
        # error for variance and overstate the attainable minimum
        dev = np.abs(mus - inst.anchor_mu)
        mask = dev <= dev.min() + 1e-12
        objective = -sigmas
    elif strategy is Strategy.MAX_RET:
        # mirror the solver's risk-budget semantics: at most the anchor
        # volatility, falling back to the nearest-risk shell off grid
        over = sigmas - inst.anchor_sigma
        mask = over <= 1e-12
        if not mask.any():
            dev = np.abs(over)
            mask = dev <= dev.min() + 1e-12
        objective = mus
    elif strategy is Strategy.MAX_SR:
        mask = np.ones(len(W), dtype=bool)
        excess = mus - rf_daily
        with np.errstate(divide="ignore", invalid="ignore"):
            objective = np.where(
                sigmas > 0.0,
                excess / np.where(sigmas > 0.0, sigmas, 1.0),
                np.where(excess > 0.0, math.inf, np.where(excess < 0.0, -math.inf, 0.0)),
            )
    else:
        raise ValueError(f"unknown strategy {strategy!r}")

    candidates = np.flatnonzero(mask)
    best_val = float(np.max(objective[candidates]))
    tie_tol = 1e-12 if math.isfinite(best_val) else 0.0
    ties = [i for i in candidates if objective[i] >= best_val - tie_tol]
    dists = {i: float(0.5 * np.abs(W[i] - inst.w0).sum()) for i in ties}
    pick = min(ties, key=lambda i: (dists[i], tuple(W[i])))

    w = W[pick]
    full = _embed(inst, w)
    full_w0 = _embed(inst, inst.w0)
    mu_p, sigma_p = float(mus[pick]), float(sigmas[pick])
    return FrontierSolution(
        strategy=strategy,
        weights=full,
        mu=mu_p,
        sigma=sigma_p,
        distance=l1_distance(full_w0, full),
        converged=True,
        iterations=len(W),
        reason="",
    )
