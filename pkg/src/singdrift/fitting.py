"""Log-log scaling regressions."""
from __future__ import annotations

from dataclasses import dataclass, asdict
from typing import Sequence

import numpy as np
from scipy import stats

from .errors import DomainError


@dataclass(frozen=True)
class ExponentFit:
    slope: float
    intercept: float
    r_squared: float
    ci_half_width: float
    n_points: int

    def to_dict(self) -> dict:
        return asdict(self)

    def agrees_with(self, prediction: float, tolerance: float) -> bool:
        """Gate used by the acceptance checks: |slope - prediction| <= max(ci, tolerance)."""
        return abs(self.slope - prediction) <= max(self.ci_half_width, tolerance)


def _ols(x: np.ndarray, y: np.ndarray) -> tuple[float, float, float, float]:
    n = x.size
    xm, ym = x.mean(), y.mean()
    sxx = np.sum((x - xm) ** 2)
    slope = float(np.sum((x - xm) * (y - ym)) / sxx)
    intercept = float(ym - slope * xm)
    resid = y - (intercept + slope * x)
    ss_tot = float(np.sum((y - ym) ** 2))
    ss_res = float(np.sum(resid**2))
    if ss_tot <= 1e-300:
        r2 = 1.0
    else:
        r2 = min(1.0, max(0.0, 1.0 - ss_res / ss_tot))
    if n > 2:
        se = np.sqrt(ss_res / (n - 2) / sxx)
        ci = float(stats.t.ppf(0.975, n - 2) * se)
    else:
        ci = float("inf")
    return slope, intercept, r2, ci


def fit_scaling_exponent(
    scales: Sequence[float],
    statistics: Sequence[float] | None = None,
    *,
    ensembles: Sequence[np.ndarray] | None = None,
    reducer=np.mean,
    n_boot: int = 200,
    seed: int = 0,
) -> ExponentFit:
    """Fit ``statistic ~ C * scale**slope`` by least squares on logs.

    Either pass the reduced ``statistics`` directly or raw per-scale samples as
    ``ensembles`` (one 1-d array per scale, same length, sample ``k`` of every
    scale coming from the same realisation). With ensembles the statistic is
    ``reducer(sample)`` and the confidence half-width is the larger of the OLS
    interval and a 95% bootstrap interval over realisations.
    """
    x = np.asarray(scales, dtype=float)
    if ensembles is not None:
        ens = [np.asarray(e, dtype=float) for e in ensembles]
        y = np.array([reducer(e) for e in ens], dtype=float)
    else:
        if statistics is None:
            raise DomainError("need statistics or ensembles")
        y = np.asarray(statistics, dtype=float)
        ens = None
    if x.shape != y.shape:
        raise DomainError("scales and statistics differ in length")
    if x.size < 4:
        raise DomainError(f"need at least 4 points, got {x.size}")
    if np.any(~np.isfinite(y)) or np.any(x <= 0) or np.any(y <= 0):
        raise DomainError("scaling fit needs finite positive scales and statistics")
    lx, ly = np.log(x), np.log(y)
    slope, intercept, r2, ci = _ols(lx, ly)
    if ens is not None and n_boot > 0:
        m = min(e.size for e in ens)
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0xB007]))
        boots = np.empty(n_boot)
        stacked = np.stack([e[:m] for e in ens])
        for b in range(n_boot):
            idx = rng.integers(0, m, m)
            yb = np.array([reducer(row[idx]) for row in stacked])
            if np.any(yb <= 0):
                boots[b] = np.nan
                continue
            boots[b] = _ols(lx, np.log(yb))[0]
        boots = boots[np.isfinite(boots)]
        if boots.size > 10:
            lo, hi = np.percentile(boots, [2.5, 97.5])
            ci = max(ci, float(hi - lo) / 2.0)
    return ExponentFit(slope, intercept, r2, ci, int(x.size))


def trimmed_mean(a: np.ndarray, proportion: float = 0.1) -> float:
    """Mean with ``proportion`` cut from each tail."""
    return float(stats.trim_mean(np.asarray(a, dtype=float), proportion))
