"""Conditional-Gaussian germs, dyadic sewing sums, integral moment scaling, Young integrals.

Germs live on the discrete Volterra model ``W_i = sum_{j<i} K[i, j] dB_j`` of
:mod:`singdrift.fbm`: the conditional mean ``E^u W_r`` keeps the Brownian
increments before ``u`` and the conditional variance is the matching row sum
of squared kernel entries. This makes every germ an exact conditional
expectation of the sampled model.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy import special

from .errors import DomainError, NumericalError, RegimeError
from .fbm import FbmPath, TimeGrid, check_hurst, conditional_variance, sample_fbm, sample_fbm_array, volterra_matrix
from .fitting import ExponentFit, fit_scaling_exponent
from .mollify import CallableDrift, GridFunction

__all__ = [
    "ConditionalGerm",
    "DyadicSum",
    "GermEvaluator",
    "heat_at",
    "conditional_germ_mean",
    "dyadic_sewing_sum",
    "dyadic_trace",
    "write_trace_csv",
    "DyadicDecay",
    "dyadic_decay",
    "moment_exponent_prediction",
    "check_moment_parameters",
    "integral_moment_scaling",
    "YoungIntegral",
    "young_integral",
    "young_ode_solve",
]


# ---------------------------------------------------------------------------
# Heat semigroup at scattered points
# ---------------------------------------------------------------------------


def _interp_1d(f: GridFunction, y: np.ndarray) -> np.ndarray:
    return np.interp(y, f.grid.axis, f.values.reshape(-1), left=0.0, right=0.0)


def heat_at(f: GridFunction, var, y) -> np.ndarray:
    """``P_var f(y)`` for a 1-d grid function, elementwise in ``(var, y)``.

    ``f`` is read as piecewise constant on its cells and convolved exactly
    with the Gaussian. When ``sqrt(var) < dx/2`` the heat time is treated as
    zero and ``f`` is interpolated linearly at ``y``.
    """
    if f.grid.d != 1 or f.vector:
        raise DomainError("heat_at supports scalar 1-d grid functions")
    var = np.asarray(var, dtype=float)
    y = np.asarray(y, dtype=float)
    var, y = np.broadcast_arrays(var, y)
    if np.any(var < 0):
        raise DomainError("negative heat time")
    out = np.empty(y.shape)
    sig = np.sqrt(var)
    small = sig < 0.5 * f.grid.dx
    out[small] = _interp_1d(f, y[small])
    big = ~small
    if np.any(big):
        edges = f.grid.axis[0] - 0.5 * f.grid.dx + np.arange(f.grid.n_cells + 1) * f.grid.dx
        vals = f.values.reshape(-1)
        yb, sb = y[big], sig[big]
        res = np.empty(yb.shape)
        step = max(1, 2_000_000 // (f.grid.n_cells + 1))
        for a in range(0, yb.size, step):
            z = (edges[None, :] - yb[a:a + step, None]) / (math.sqrt(2.0) * sb[a:a + step, None])
            cdf = 0.5 * special.erf(z)
            res[a:a + step] = np.diff(cdf, axis=1) @ vals
        out[big] = res
    return out


# ---------------------------------------------------------------------------
# Germs
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ConditionalGerm:
    s: float
    t: float
    u: float
    mean: float
    variance: float
    value: float


class GermEvaluator:
    """Germs ``A_{s,t} = int_s^t P_{sigma^2(s,r)} f(E^s W_r) dr`` for one Brownian driver.

    The time integral is the right-endpoint sum over grid points in ``(s, t]``.
    Grid indices are used throughout; :attr:`grid` converts to times.
    """

    def __init__(self, f: GridFunction, h: float, b_path: FbmPath):
        if b_path.h != 0.5 or b_path.d != 1:
            raise DomainError("the driver must be a 1-d Brownian path")
        self.f = f
        self.h = check_hurst(h)
        self.grid = b_path.grid
        self.dB = np.diff(b_path.values[:, 0])
        self.K = volterra_matrix(self.h, self.grid).entries
        self.calls = 0

    @property
    def w(self) -> np.ndarray:
        """The fBM path of the discrete model."""
        return np.concatenate(([0.0], self.K[1:] @ self.dB))

    def conditional(self, a: int, b: int):
        """``(E^{t_a} W_r, sigma^2(t_a, r))`` for ``r = t_{a+1} .. t_b``."""
        rows = self.K[a + 1:b + 1, :a]
        mean = rows @ self.dB[:a]
        # rows are normalised to sum(K^2) dt = t^(2h)
        t = (np.arange(a + 1, b + 1) * self.grid.dt) ** (2.0 * self.h)
        var = np.maximum(t - np.einsum("ij,ij->i", rows, rows) * self.grid.dt, 0.0)
        return mean, var

    def germ(self, a: int, b: int) -> float:
        if not 0 <= a < b <= self.grid.n_steps:
            raise DomainError(f"bad germ interval [{a}, {b}]")
        self.calls += 1
        mean, var = self.conditional(a, b)
        vals = heat_at(self.f, var, mean)
        out = float(np.sum(vals) * self.grid.dt)
        if not math.isfinite(out):
            raise NumericalError(f"non-finite germ on [{a}, {b}]")
        return out

    def direct_integral(self, a: int, b: int) -> float:
        """``sum_{r in (a, b]} f(W_r) dt`` by pointwise interpolation."""
        return float(np.sum(_interp_1d(self.f, self.w[a + 1:b + 1])) * self.grid.dt)


def conditional_germ_mean(f: GridFunction, h: float, s: float, u: float, t: float,
                          b_path: FbmPath | None = None, *, variance: str = "quadrature") -> ConditionalGerm:
    """``E^u f(V_{s,t}) = P_{sigma^2(u,t)} f(E^u V_{s,t})`` with ``V_{s,t} = W_t - E^s W_t``.

    ``b_path`` is the Brownian driver of the discrete Volterra model; the
    conditional means are ``E^u W_t = sum_{j<u} K[t, j] dB_j``. ``variance``
    selects ``sigma^2(u,t)`` by kernel quadrature (``"quadrature"``) or from
    the discrete model (``"discrete"``). At ``u = t`` no smoothing happens.
    """
    if not 0 <= s <= u <= t:
        raise DomainError("need 0 <= s <= u <= t")
    h = check_hurst(h)
    if b_path is None:
        mean_u = mean_s = 0.0
        if u > 0:
            raise DomainError("a driver path is needed to condition on a non-trivial past")
    else:
        grid = b_path.grid
        iu, is_, it = grid.index(u), grid.index(s), grid.index(t)
        K = volterra_matrix(h, grid).entries
        dB = np.diff(b_path.values[:, 0])
        mean_u = float(K[it, :iu] @ dB[:iu])
        mean_s = float(K[it, :is_] @ dB[:is_])
    if variance == "quadrature":
        var = conditional_variance(h, u, t)
    elif variance == "discrete":
        if b_path is None:
            raise DomainError("discrete variance needs a driver path")
        var = volterra_matrix(h, b_path.grid).conditional_variance(b_path.grid.index(u), b_path.grid.index(t))
    else:
        raise DomainError(f"unknown variance mode {variance!r}")
    mean = mean_u - mean_s
    value = float(heat_at(f, var, mean))
    return ConditionalGerm(float(s), float(t), float(u), mean, float(var), value)


# ---------------------------------------------------------------------------
# Dyadic sums
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DyadicSum:
    k: int
    value: float
    s: float
    t: float
    defect: float = float("nan")


def _dyadic_indices(ev: GermEvaluator, s: float, t: float, k: int):
    if not 0 <= k <= 14:
        raise DomainError("dyadic level must lie in 0..14")
    a, b = ev.grid.index(s), ev.grid.index(t)
    if not a < b:
        raise DomainError("need s < t")
    if (b - a) % (2**k):
        raise DomainError(f"[{s}, {t}] spans {b - a} steps, not divisible by 2^{k}")
    return a, b


def dyadic_sewing_sum(ev: GermEvaluator, s: float, t: float, k: int) -> DyadicSum:
    """``A^k_{s,t} = sum_i A_{t_i, t_{i+1}}`` over the level-``k`` dyadic partition of ``[s, t]``."""
    a, b = _dyadic_indices(ev, s, t, k)
    step = (b - a) // 2**k
    total = 0.0
    for i in range(2**k):
        lo = a + i * step
        try:
            total += ev.germ(lo, lo + step)
        except (NumericalError, DomainError) as exc:
            raise NumericalError(f"germ failure at level {k}, index {i}: {exc}") from exc
    return DyadicSum(k, total, float(s), float(t))


def dyadic_trace(ev: GermEvaluator, s: float, t: float, k_max: int) -> list[DyadicSum]:
    """Levels ``0..k_max`` with ``defect_k = sum_i delta A_{t_i, m_i, t_{i+1}}``.

    ``delta A_{s,u,t} = A_{s,t} - A_{s,u} - A_{u,t}``; the defect of level ``k``
    equals ``A^k - A^{k+1}`` up to rounding. Each germ is evaluated once.
    """
    a, b = _dyadic_indices(ev, s, t, k_max)
    cache = {}

    def germ(lo, hi):
        if (lo, hi) not in cache:
            cache[(lo, hi)] = ev.germ(lo, hi)
        return cache[(lo, hi)]

    out = []
    for k in range(k_max + 1):
        step = (b - a) // 2**k
        parts = [(a + i * step, a + (i + 1) * step) for i in range(2**k)]
        value = sum(germ(lo, hi) for lo, hi in parts)
        defect = float("nan")
        if k < k_max:
            half = step // 2
            defect = sum(germ(lo, hi) - germ(lo, lo + half) - germ(lo + half, hi) for lo, hi in parts)
        out.append(DyadicSum(k, value, float(s), float(t), defect))
    return out


def write_trace_csv(trace: Sequence[DyadicSum], target=None) -> str:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(["k", "value", "defect"])
    for row in trace:
        wr.writerow([row.k, repr(row.value), repr(row.defect)])
    text = buf.getvalue()
    if target is not None:
        Path(target).write_text(text)
    return text


@dataclass(frozen=True)
class DyadicDecay:
    """Successive dyadic differences ``|A^{k+1} - A^k|`` over an ensemble of drivers.

    ``ratio`` is ``exp`` of the fitted slope of ``log median_k`` over the fit
    levels, i.e. the geometric decay factor per level; ``pooled_ratio`` is the
    median of per-path ratios over the same levels.
    """

    medians: np.ndarray
    ratio: float
    pooled_ratio: float
    k_fit: tuple


def dyadic_decay(f: GridFunction, h: float, n_paths: int, n_steps: int, k_max: int = 11,
                 seed: int = 0, k_fit: tuple = (2, 10)) -> DyadicDecay:
    """Geometric decay of dyadic differences on ``[0, 1]`` for ``n_paths`` Brownian drivers."""
    if not 0 <= k_fit[0] < k_fit[1] < k_max:
        raise DomainError("fit levels must lie inside 0..k_max-1")
    if n_paths < 1:
        raise DomainError("need at least one driver")
    diffs = []
    for b in sample_fbm(0.5, TimeGrid(n_steps), n_paths, seed=seed):
        tr = dyadic_trace(GermEvaluator(f, h, b), 0.0, 1.0, k_max)
        diffs.append(np.abs(np.diff([r.value for r in tr])))
    diffs = np.array(diffs)
    med = np.median(diffs, axis=0)
    k = np.arange(k_fit[0], k_fit[1] + 1)
    if np.any(med[k] <= 0):
        raise NumericalError("vanishing dyadic differences; the integrand is additive")
    slope = np.polyfit(k, np.log(med[k]), 1)[0]
    with np.errstate(divide="ignore", invalid="ignore"):
        per = diffs[:, k] / diffs[:, k - 1]
    pooled = float(np.median(per[np.isfinite(per)]))
    return DyadicDecay(med, float(np.exp(slope)), pooled, tuple(k_fit))


# ---------------------------------------------------------------------------
# Integral moment scaling
# ---------------------------------------------------------------------------


def moment_exponent_prediction(h: float, alpha: float, d: int, q: float) -> float:
    """``1 + alpha h - h d / q``."""
    return 1.0 + alpha * h - h * d / q


def check_moment_parameters(h: float, alpha: float, d: int, q: float) -> None:
    """Refuse unless ``alpha < 0``, ``alpha > -1/(2h)`` and ``alpha - d/q > -1/h``."""
    h = check_hurst(h)
    if not alpha < 0:
        raise RegimeError(f"the moment bound is stated for alpha < 0, got {alpha}")
    if not alpha > -1.0 / (2.0 * h):
        raise RegimeError(f"need alpha > -1/(2h) = {-1 / (2 * h):g}, got {alpha}")
    if not alpha - d / q > -1.0 / h:
        raise RegimeError(f"need alpha - d/q > -1/h, got {alpha - d / q:g} vs {-1 / h:g}")


def _pointwise(f) -> Callable[[np.ndarray], np.ndarray]:
    if isinstance(f, GridFunction):
        if f.grid.d != 1:
            raise DomainError("moment scaling is implemented for d = 1")
        return lambda x: _interp_1d(f, x)
    if isinstance(f, CallableDrift):
        return lambda x: np.asarray(f(x[..., None]), dtype=float)
    if isinstance(f, (int, float)):
        c = float(f)
        return lambda x: np.full(x.shape, c)
    if callable(f):
        return f
    raise DomainError(f"unsupported integrand {type(f).__name__}")


def integral_moment_scaling(f, h: float, m: float, T_list: Sequence[float], *, alpha: float | None = None,
                            q: float = 2.0, n_paths: int = 4000, steps_per_unit: int = 1024,
                            seed: int = 0, chunk: int = 250, n_boot: int = 200):
    """Fit ``log ||int_0^T f(W_r) dr||_{L_m}`` against ``log T`` (``d = 1``).

    All horizons come from one path per realisation on ``[0, max(T_list)]``
    (right-endpoint sums), so the ensemble is coupled across ``T``. When
    ``alpha`` is given the parameter conditions are enforced first. Returns
    ``(fit, samples)`` with ``samples`` of shape ``(n_paths, len(T_list))``.
    """
    h = check_hurst(h)
    if alpha is not None:
        check_moment_parameters(h, alpha, 1, q)
    if m < 1:
        raise DomainError("moment order must be >= 1")
    T = np.asarray(sorted(T_list), dtype=float)
    n_steps = int(round(T[-1] * steps_per_unit))
    tg = TimeGrid(n_steps, float(T[-1]))
    idx = np.array([tg.index(x) for x in T])
    fx = _pointwise(f)
    out = np.zeros((n_paths, len(T)))
    for start in range(0, n_paths, chunk):
        k = min(chunk, n_paths - start)
        w = sample_fbm_array(h, tg, k, 1, seed, start)[:, 1:, 0]
        cum = np.cumsum(fx(w), axis=1) * tg.dt
        out[start:start + k] = cum[:, idx - 1]
    reducer = lambda a: float(np.mean(np.abs(a) ** m) ** (1.0 / m))  # noqa: E731
    fit = fit_scaling_exponent(T, ensembles=out.T, reducer=reducer, n_boot=n_boot, seed=seed)
    return fit, out


# ---------------------------------------------------------------------------
# Young integral
# ---------------------------------------------------------------------------


@dataclass
class YoungIntegral:
    values: np.ndarray
    error_estimate: float
    p: float
    q: float
    meta: dict = field(default_factory=dict)


def _young_sum(y: np.ndarray, x: np.ndarray) -> np.ndarray:
    return np.concatenate(([0.0], np.cumsum(y[:-1] * np.diff(x))))


def young_integral(Y, X, p: float, q: float) -> YoungIntegral:
    """Left-point Riemann-Stieltjes sums ``int_0^t Y dX`` on the common grid.

    ``p`` and ``q`` are the declared variation exponents of ``X`` and ``Y``;
    they are not certified. The error estimate is the end-point difference
    to the same sum on every second grid point.
    """
    if not 1.0 / p + 1.0 / q > 1.0:
        raise RegimeError(f"Young integration needs 1/p + 1/q > 1, got {1 / p + 1 / q:g}")
    y = np.asarray(getattr(Y, "values", Y), dtype=float).reshape(-1)
    x = np.asarray(getattr(X, "values", X), dtype=float).reshape(-1)
    if y.shape != x.shape:
        raise DomainError("paths must share the grid")
    fine = _young_sum(y, x)
    err = float("nan")
    if x.size >= 5:
        coarse = _young_sum(y[::2], x[::2])
        n_c = (x.size - 1) // 2
        err = float(abs(fine[2 * n_c] - coarse[n_c]))
    return YoungIntegral(fine, err, float(p), float(q))


def young_ode_solve(X, y0: float = 0.0) -> np.ndarray:
    """Left-point scheme for ``Y_t = y0 + int_0^t Y dX``."""
    x = np.asarray(getattr(X, "values", X), dtype=float).reshape(-1)
    y = np.empty_like(x)
    y[0] = y0
    for i in range(x.size - 1):
        y[i + 1] = y[i] + y[i] * (x[i + 1] - x[i])
    return y
