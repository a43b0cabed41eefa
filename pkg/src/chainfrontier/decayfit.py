"""Power-decay model of mean rebalancing distance versus portfolio size.

Mean distances are bucketed by portfolio size and fitted with the
saturating curve d(n) = delta_inf * (1 - psi * n**-gamma), which rises
toward the asymptote ``delta_inf`` as books get larger. The fit is a
weighted nonlinear least squares where each size bin counts by the square
root of its observation count.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy.optimize import least_squares

from .errors import UnidentifiableFitError

__all__ = ["DecayFit", "SizeBin", "bin_by_size", "fit_power_decay", "weighted_sse"]

# parameters move through unconstrained space; cap the exponentials so a
# wild trust-region step cannot overflow to inf mid-iteration
_EXP_CAP = 60.0


@dataclass(frozen=True)
class SizeBin:
    """Aggregated distances for one portfolio size.

    ``mean_d`` is in percent (a raw distance of 0.2 becomes 20.0).
    """

    n: int
    mean_d: float
    count: int


@dataclass(frozen=True)
class DecayFit:
    """Fitted decay curve for one strategy with goodness-of-fit numbers.

    ``mae`` is the unweighted mean absolute error against bin means, in
    percent points. A fit that hit the iteration cap is returned with
    ``converged`` False and the best parameters found.
    """

    strategy: str
    delta_inf: float
    psi: float
    gamma: float
    r_squared: float
    mae: float
    converged: bool
    n_bins: int

    def predict(self, n):
        """Model value d(n) in percent for scalar or array sizes."""
        arr = np.asarray(n, dtype=float)
        out = self.delta_inf * (1.0 - self.psi * arr ** (-self.gamma))
        return float(out) if np.isscalar(n) else out


def bin_by_size(
    records: Iterable[tuple[int, float]],
    n_range: tuple[int, int] = (2, 50),
    min_count: int = 30,
) -> tuple[SizeBin, ...]:
    """Group (portfolio size, distance) pairs into qualifying size bins.

    Distances are raw fractions in [0, 1] and come out as percent means.
    Sizes outside ``n_range`` are dropped, and bins with fewer than
    ``min_count`` observations are omitted entirely.
    """
    lo, hi = n_range
    if lo < 2:
        raise ValueError("portfolio size bins start at 2")
    sums: dict[int, float] = {}
    counts: dict[int, int] = {}
    for n, d in records:
        if not lo <= n <= hi:
            continue
        if not 0.0 <= d <= 1.0 + 1e-9:
            raise ValueError(f"distance {d} outside [0, 1]")
        sums[n] = sums.get(n, 0.0) + d
        counts[n] = counts.get(n, 0) + 1
    bins = tuple(
        SizeBin(n=n, mean_d=100.0 * sums[n] / counts[n], count=counts[n])
        for n in sorted(counts)
        if counts[n] >= min_count
    )
    if not bins:
        raise ValueError("no size bin reaches the minimum observation count")
    return bins


def _curve(n: np.ndarray, delta_inf: float, psi: float, gamma: float) -> np.ndarray:
    return delta_inf * (1.0 - psi * n ** (-gamma))


def _from_theta(theta: np.ndarray) -> tuple[float, float, float]:
    a, b, c = (float(v) for v in theta)
    delta_inf = 100.0 / (1.0 + math.exp(-min(max(a, -_EXP_CAP), _EXP_CAP)))
    psi = math.exp(min(b, _EXP_CAP))
    gamma = math.exp(min(c, _EXP_CAP))
    return delta_inf, psi, gamma


def weighted_sse(
    bins: Sequence[SizeBin], delta_inf: float, psi: float, gamma: float
) -> float:
    """Objective the fit minimises: sum of sqrt(count)-weighted squares."""
    n = np.array([b.n for b in bins], dtype=float)
    means = np.array([b.mean_d for b in bins])
    counts = np.array([b.count for b in bins], dtype=float)
    resid = means - _curve(n, delta_inf, psi, gamma)
    return float(np.sum(np.sqrt(counts) * resid * resid))


def fit_power_decay(
    bins: Sequence[SizeBin],
    strategy: str = "",
    start: tuple[float, float, float] | None = None,
) -> DecayFit:
    """Fit the three-parameter decay curve to size-bin means.

    Needs at least four bins. The asymptote is capped at 100 percent and
    psi and gamma stay positive via parameter transforms, so the inner
    least-squares loop runs unconstrained. ``start`` overrides the
    deterministic default initialisation with explicit
    (delta_inf, psi, gamma) values, e.g. to refit from a previous answer.
    """
    if len(bins) < 4:
        raise ValueError(f"need at least 4 bins to fit 3 parameters, got {len(bins)}")
    bins = sorted(bins, key=lambda b: b.n)
    n = np.array([b.n for b in bins], dtype=float)
    means = np.array([b.mean_d for b in bins])
    counts = np.array([b.count for b in bins], dtype=float)
    if float(np.ptp(means)) < 1e-12:
        raise UnidentifiableFitError(
            "bin means are constant; the decay exponent is unidentifiable"
        )

    if start is None:
        delta0 = min(max(float(means.max()), 1e-3), 100.0 - 1e-9)
        gamma0 = 1.0
        # solve the smallest bin for psi under the starting asymptote
        n_min = float(n[0])
        psi0 = max((1.0 - means[0] / delta0) * n_min**gamma0, 1e-6)
    else:
        delta0, psi0, gamma0 = start
        if not (0.0 < delta0 <= 100.0 and psi0 > 0.0 and gamma0 > 0.0):
            raise ValueError("start parameters outside the feasible region")
        delta0 = min(delta0, 100.0 - 1e-12)
    p0 = min(max(delta0 / 100.0, 1e-12), 1.0 - 1e-12)
    theta0 = np.array([math.log(p0 / (1.0 - p0)), math.log(psi0), math.log(gamma0)])

    quarter_weights = counts**0.25

    def residuals(theta: np.ndarray) -> np.ndarray:
        delta_inf, psi, gamma = _from_theta(theta)
        return quarter_weights * (means - _curve(n, delta_inf, psi, gamma))

    result = least_squares(
        residuals,
        theta0,
        method="lm",
        ftol=1e-14,
        xtol=1e-14,
        gtol=1e-14,
        max_nfev=5000,
    )
    delta_inf, psi, gamma = _from_theta(result.x)
    pred = _curve(n, delta_inf, psi, gamma)
    ss_res = float(np.sum((means - pred) ** 2))
    ss_tot = float(np.sum((means - means.mean()) ** 2))
    return DecayFit(
        strategy=strategy,
        delta_inf=delta_inf,
        psi=psi,
        gamma=gamma,
        r_squared=1.0 - ss_res / ss_tot,
        mae=float(np.mean(np.abs(means - pred))),
        converged=bool(result.status > 0),
        n_bins=len(bins),
    )
