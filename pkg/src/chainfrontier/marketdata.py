"""Daily price handling and return-moment estimation.

Price series live on a consecutive daily calendar with explicit gaps.
Returns are daily log-returns; expected returns get cross-sectional
shrinkage toward the universe mean, covariances get constant-correlation
shrinkage with a data-driven intensity.
"""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

ONE_DAY = dt.timedelta(days=1)


@dataclass(frozen=True)
class PriceSeries:
    """Daily USD closes for one token.

    ``closes[i]`` belongs to ``start + i days``; ``None`` marks a day with
    no observation. The grid is consecutive, so day arithmetic is pure
    index arithmetic.
    """

    token_id: str
    start: dt.date
    closes: tuple[float | None, ...]

    @property
    def end(self) -> dt.date:
        return self.start + (len(self.closes) - 1) * ONE_DAY

    def close_on(self, day: dt.date) -> float | None:
        i = (day - self.start).days
        if 0 <= i < len(self.closes):
            return self.closes[i]
        return None

    @classmethod
    def from_observations(
        cls,
        token_id: str,
        observations: Mapping[dt.date, float],
        end: dt.date | None = None,
    ) -> "PriceSeries":
        """Build a gapped daily series from sparse (date, close) pairs."""
        if not observations:
            raise ValueError(f"no price observations for {token_id!r}")
        days = sorted(observations)
        last = max(days[-1], end) if end is not None else days[-1]
        start = days[0]
        closes: list[float | None] = [None] * ((last - start).days + 1)
        for day, close in observations.items():
            close = float(close)
            if not np.isfinite(close) or close <= 0:
                raise ValueError(f"nonpositive close {close} for {token_id!r} on {day}")
            closes[(day - start).days] = close
        return cls(token_id, start, tuple(closes))


@dataclass(frozen=True, eq=False)
class ReturnWindow:
    """Daily log-returns for one token over a lookback window.

    ``dates[k]`` is the day of ``returns[k]``; a return exists only where
    the day and its predecessor both have prices.
    """

    token_id: str
    end_date: dt.date
    dates: tuple[dt.date, ...]
    returns: np.ndarray

    def __len__(self) -> int:
        return len(self.dates)


@dataclass(frozen=True, eq=False)
class MarketIndex:
    """Equal-weighted two-asset benchmark return series."""

    dates: tuple[dt.date, ...]
    returns: np.ndarray


@dataclass(frozen=True, eq=False)
class MomentEstimates:
    """Shrunk return moments for one asset universe.

    Arrays cover only the eligible assets (``eligible_ids`` order);
    ``eligible`` maps back onto the full input ordering in ``asset_ids``.
    """

    asset_ids: tuple[str, ...]
    eligible: np.ndarray
    eligible_ids: tuple[str, ...]
    raw_means: np.ndarray
    shrunk_means: np.ndarray
    cross_mean: float
    cov: np.ndarray
    lw_intensity: float
    n_obs: int


def forward_fill(series: PriceSeries, through: dt.date | None = None) -> PriceSeries:
    """Fill gaps with the last observed close.

    Days before the first observation stay absent. ``through`` extends the
    calendar past the last observation so stale prices keep carrying
    forward (positions are valued at the last known close). Idempotent.
    """
    closes = list(series.closes)
    if through is not None and through > series.end:
        closes.extend([None] * (through - series.end).days)
    last: float | None = None
    for i, c in enumerate(closes):
        if c is None:
            closes[i] = last
        else:
            last = c
    return PriceSeries(series.token_id, series.start, tuple(closes))


def log_returns(
    series: PriceSeries, end_date: dt.date, window: int = 60
) -> ReturnWindow:
    """Daily log-returns over the ``window`` days ending at ``end_date``.

    A day contributes ln(p_t / p_{t-1}) only when both closes exist, so a
    gapped series yields fewer than ``window`` observations rather than
    fabricated ones.
    """
    if window < 1:
        raise ValueError("window must be >= 1")
    dates: list[dt.date] = []
    rets: list[float] = []
    day = end_date - (window - 1) * ONE_DAY
    for _ in range(window):
        cur = series.close_on(day)
        prev = series.close_on(day - ONE_DAY)
        if cur is not None and prev is not None:
            if cur <= 0 or prev <= 0:
                raise ValueError(
                    f"nonpositive close for {series.token_id!r} near {day}"
                )
            dates.append(day)
            rets.append(float(np.log(cur / prev)))
        day += ONE_DAY
    return ReturnWindow(
        series.token_id, end_date, tuple(dates), np.asarray(rets, dtype=float)
    )


def estimate_moments(
    windows: Sequence[ReturnWindow],
    shrink_lambda: float = 0.5,
    min_obs: int = 45,
) -> MomentEstimates:
    """Estimate shrunk mean vector and covariance matrix for a universe.

    Assets with fewer than ``min_obs`` return observations are flagged
    ineligible and excluded from every statistic. Means are per-asset
    sample means pulled halfway (``shrink_lambda``) toward the equal-weighted
    cross-asset mean of the eligible universe. The covariance is the sample
    covariance over the dates all eligible assets share, shrunk toward a
    constant-correlation target with the Ledoit-Wolf optimal intensity.

    Raises ValueError when no asset is eligible or asset ids repeat.
    """
    if not 0.0 <= shrink_lambda <= 1.0:
        raise ValueError("shrink_lambda must be in [0, 1]")
    ids = tuple(w.token_id for w in windows)
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate asset ids in moment estimation")

    eligible = np.array([len(w) >= min_obs for w in windows], dtype=bool)
    kept = [w for w, ok in zip(windows, eligible) if ok]
    if not kept:
        raise ValueError(f"no eligible assets (need >= {min_obs} observations)")

    raw = np.array([float(np.mean(w.returns)) for w in kept])
    cross = float(np.mean(raw))
    shrunk = shrink_lambda * cross + (1.0 - shrink_lambda) * raw

    common = set(kept[0].dates)
    for w in kept[1:]:
        common &= set(w.dates)
    if len(common) < 2:
        raise ValueError("fewer than 2 shared return dates across eligible assets")
    order = sorted(common)
    cols = []
    for w in kept:
        pos = {d: k for k, d in enumerate(w.dates)}
        cols.append(w.returns[[pos[d] for d in order]])
    X = np.column_stack(cols)

    cov, intensity = _shrink_constant_correlation(X)
    return MomentEstimates(
        asset_ids=ids,
        eligible=eligible,
        eligible_ids=tuple(w.token_id for w in kept),
        raw_means=raw,
        shrunk_means=shrunk,
        cross_mean=cross,
        cov=cov,
        lw_intensity=intensity,
        n_obs=len(order),
    )


def _shrink_constant_correlation(X: np.ndarray) -> tuple[np.ndarray, float]:
    """Constant-correlation covariance shrinkage.

    Returns (covariance, intensity). The target keeps sample variances and
    replaces every correlation with the average sample correlation; the
    intensity is the plug-in optimal weight clipped to [0, 1]. Degenerate
    inputs (one asset, a zero-variance asset, or a sample that already
    equals the target) shrink by 0.
    """
    t, n = X.shape
    Xc = X - X.mean(axis=0)
    sample = (Xc.T @ Xc) / t
    sample = (sample + sample.T) / 2.0
    if n == 1:
        return sample, 0.0

    var = np.diag(sample).copy()
    if np.any(var <= 0):
        return _psd_floor(sample), 0.0
    sqrtvar = np.sqrt(var)
    denom = np.outer(sqrtvar, sqrtvar)
    rbar = float((np.sum(sample / denom) - n) / (n * (n - 1)))
    prior = rbar * denom
    np.fill_diagonal(prior, var)

    gamma = float(np.linalg.norm(sample - prior, "fro") ** 2)
    if gamma <= 1e-30:
        return _psd_floor(sample), 0.0

    # pi-hat: Var[x_i x_j] summed over all pairs
    Y = Xc**2
    phi_mat = (Y.T @ Y) / t - sample**2
    phi = float(np.sum(phi_mat))

    # rho-hat: diagonal part plus the constant-correlation cross terms
    theta = (Xc**3).T @ Xc / t - var[:, None] * sample
    np.fill_diagonal(theta, 0.0)
    rho = float(np.sum(np.diag(phi_mat))) + rbar * float(
        np.sum(np.outer(1.0 / sqrtvar, sqrtvar) * theta)
    )

    kappa = (phi - rho) / gamma
    intensity = float(min(1.0, max(0.0, kappa / t)))
    cov = intensity * prior + (1.0 - intensity) * sample
    return _psd_floor((cov + cov.T) / 2.0), intensity


def _psd_floor(cov: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """Clip tiny negative eigenvalues so downstream solvers see a PSD matrix."""
    eigvals = np.linalg.eigvalsh(cov)
    if eigvals[0] >= -tol:
        return cov
    vals, vecs = np.linalg.eigh(cov)
    vals = np.clip(vals, 0.0, None)
    fixed = vecs @ np.diag(vals) @ vecs.T
    return (fixed + fixed.T) / 2.0


def market_index(weth: ReturnWindow, wbtc: ReturnWindow) -> MarketIndex:
    """Equal-weighted mean of the two benchmark assets' daily log-returns."""
    if weth.dates != wbtc.dates:
        raise ValueError("benchmark return series are not date-aligned")
    return MarketIndex(weth.dates, (weth.returns + wbtc.returns) / 2.0)


def asset_beta(asset: ReturnWindow, market: MarketIndex) -> float:
    """Regression slope of asset returns on market returns.

    Uses the dates both series share; needs at least two and a moving
    market (zero market variance has no defined beta).
    """
    pos_m = {d: k for k, d in enumerate(market.dates)}
    pairs = [(r, pos_m[d]) for d, r in zip(asset.dates, asset.returns) if d in pos_m]
    if len(pairs) < 2:
        raise ValueError(
            f"fewer than 2 aligned observations for beta of {asset.token_id!r}"
        )
    a = np.array([p[0] for p in pairs])
    m = market.returns[[p[1] for p in pairs]]
    var_m = float(np.var(m))
    if var_m <= 0:
        raise ValueError("market variance is zero over the aligned window")
    cov_am = float(np.mean((a - a.mean()) * (m - m.mean())))
    return cov_am / var_m


def market_forward_return(market: MarketIndex, start: dt.date, days: int) -> float:
    """Simple market return over the ``days`` days after ``start``.

    Compounds the daily index log-returns across (start, start + days] and
    converts to a simple return. Every day in the span must be present.
    """
    if days < 1:
        raise ValueError("days must be >= 1")
    pos = {d: k for k, d in enumerate(market.dates)}
    total = 0.0
    day = start + ONE_DAY
    for _ in range(days):
        k = pos.get(day)
        if k is None:
            raise ValueError(f"market index missing {day}")
        total += float(market.returns[k])
        day += ONE_DAY
    return float(np.expm1(total))
