"""Euler simulation of ``dX = b(X) dt + dW^H`` with mollified singular drifts.

Singular drifts (measures, ``L_p`` functions) are never evaluated pointwise:
they are first smoothed with the heat semigroup ``P_{1/n}`` and the level
``n`` is an explicit argument everywhere. The noise is sampled exactly, so
the only discretisation error is in the drift integral.
"""
from __future__ import annotations

import csv
import io
import logging
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import _kernels
from .errors import DomainError, RegimeError
from .fbm import FbmPath, TimeGrid, check_hurst, path_rng, sample_fbm_array
from .fitting import ExponentFit, fit_scaling_exponent, trimmed_mean
from .mollify import CallableDrift, DriftSpec, GridFunction, Measure, SpatialGrid, heat_mollify

log = logging.getLogger(__name__)

__all__ = [
    "RegimeClassification",
    "SolutionPath",
    "VariationStatistic",
    "RegularizedSolution",
    "classify_regime",
    "euler_solve",
    "euler_batch",
    "drift_grid",
    "regularized_solution",
    "cauchy_trend",
    "drift_variation",
    "variation_exponent",
    "skew_fbm",
    "skew_parameter",
    "legall_probability",
    "skew_walk_probability",
    "measure_drift_residual",
]

BOUNDARY_TOL = 1e-12


# ---------------------------------------------------------------------------
# Regime
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RegimeClassification:
    h: float
    d: int
    p: float
    verdict: str
    margin: float

    @property
    def exists(self) -> bool:
        return self.verdict == "weak_existence"

    def to_dict(self) -> dict:
        return {"h": self.h, "d": self.d, "p": self.p, "verdict": self.verdict, "margin": self.margin}


def classify_regime(h: float, d: int, p: float) -> RegimeClassification:
    """Compare ``d/p`` with ``1/h - 1``.

    ``margin = (1/h - 1) - d/p``; positive margin is the weak existence regime,
    negative the counterexample regime, ``|margin| <= 1e-12`` the boundary.
    """
    h = check_hurst(h)
    if int(d) != d or d < 1:
        raise DomainError("dimension must be a positive integer")
    p = float(p)
    if not p >= 1.0:
        raise DomainError("integrability p must lie in [1, inf]")
    margin = (1.0 / h - 1.0) - (0.0 if math.isinf(p) else d / p)
    if abs(margin) <= BOUNDARY_TOL:
        verdict = "boundary"
    elif margin > 0:
        verdict = "weak_existence"
    else:
        verdict = "counterexample_regime"
    return RegimeClassification(h, int(d), p, verdict, margin)


def drift_integrability(b: DriftSpec) -> float:
    """The ``p`` used for regime checks; measures count as ``p = 1``."""
    if isinstance(b, Measure):
        return 1.0
    return float(b.p)


# ---------------------------------------------------------------------------
# Solutions
# ---------------------------------------------------------------------------


@dataclass
class SolutionPath:
    """``x = x0 + w + psi`` on the grid of the driving path ``w``."""

    w: FbmPath
    x0: np.ndarray
    psi: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.x0 = np.atleast_1d(np.asarray(self.x0, dtype=float))
        psi = np.asarray(self.psi, dtype=float)
        if psi.ndim == 1:
            psi = psi[:, None]
        if psi.shape != self.w.values.shape:
            raise DomainError("drift part does not match the noise path")
        self.psi = psi

    @property
    def grid(self) -> TimeGrid:
        return self.w.grid

    @property
    def x(self) -> np.ndarray:
        return self.x0 + self.w.values + self.psi

    @property
    def d(self) -> int:
        return self.psi.shape[1]

    def to_csv(self, target=None) -> str:
        buf = io.StringIO()
        for k in sorted(self.meta):
            buf.write(f"# {k}={self.meta[k]}\n")
        cols = ["t"]
        for name in ("x", "w", "psi"):
            cols += [name] if self.d == 1 else [f"{name}_{i + 1}" for i in range(self.d)]
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(cols)
        x = self.x
        for i, t in enumerate(self.grid.points):
            row = [t, *x[i], *self.w.values[i], *self.psi[i]]
            wr.writerow([repr(float(v)) for v in row])
        text = buf.getvalue()
        if target is not None:
            Path(target).write_text(text)
        return text


def _interp_multilinear(values: np.ndarray, grid: SpatialGrid, pts: np.ndarray):
    """Multilinear interpolation between cell centres, zero outside; returns ``(vals, n_outside)``."""
    d = grid.d
    m = grid.n_cells
    u = (pts - grid.axis[0]) / grid.dx
    inside = np.all((u >= 0) & (u <= m - 1), axis=-1)
    k = np.clip(np.floor(u), 0, m - 2).astype(np.int64)
    fr = u - k
    out = 0.0
    for corner in np.ndindex(*([2] * d)):
        c = np.array(corner)
        wgt = np.prod(np.where(c, fr, 1.0 - fr), axis=-1)
        val = values[tuple((k + c).T)]
        out = out + (wgt[:, None] * val if val.ndim > 1 else wgt * val)
    mask = inside if np.ndim(out) == 1 else inside[:, None]
    return np.where(mask, out, 0.0), int(pts.shape[0] - np.count_nonzero(inside))


def _drift_values(out: np.ndarray, n: int, d: int) -> np.ndarray:
    out = np.asarray(out, dtype=float)
    if out.shape == (n,) and d == 1:
        return out[:, None]
    if out.shape == (n, d):
        return out
    if out.ndim == 0:
        return np.full((n, d), float(out))
    raise DomainError(f"drift returned shape {out.shape}, expected ({n}, {d})")


def euler_batch(drift, w: np.ndarray, dt: float, x0=0.0):
    """Drift parts ``psi`` for a batch of noise paths ``w`` of shape ``(paths, n+1, d)``.

    ``x_{i+1} = x0 + w_{i+1} + psi_{i+1}`` with ``psi_{i+1} = psi_i + b(x_i) dt``;
    so a zero drift gives ``x = x0 + w`` bit for bit and a nonnegative drift a
    nondecreasing ``psi``. Returns ``(psi, n_outside)`` where ``n_outside``
    counts drift evaluations that fell off the spatial grid (taken as zero).
    """
    w = np.asarray(w, dtype=float)
    if w.ndim == 2:
        w = w[:, :, None]
    n_paths, n1, d = w.shape
    x0v = np.broadcast_to(np.asarray(x0, dtype=float), (d,)).copy() if np.ndim(x0) <= 1 else None
    if x0v is None:
        raise DomainError("x0 must be a point")
    if isinstance(drift, Measure):
        raise DomainError("measure drifts must be mollified before evaluation")
    if isinstance(drift, (int, float)):
        const = float(drift)
        drift = CallableDrift(lambda x: np.full(x.shape[:-1] + (d,), const), d=d)
    if isinstance(drift, GridFunction):
        g = drift.grid
        if g.d != d:
            raise DomainError("drift grid dimension does not match the noise")
        vals = drift.values
        if d == 1:
            vals = vals.reshape(g.n_cells)
            psi, outside = _kernels.euler_grid_1d(np.full(n_paths, x0v[0]), w[:, :, 0], dt, g.axis[0], g.dx, vals)
            return psi[:, :, None], outside
        if vals.shape != g.shape + (d,):
            raise DomainError("vector drift on a d >= 2 grid needs shape grid.shape + (d,)")
        evaluate = lambda x: _interp_multilinear(vals, g, x)  # noqa: E731
    elif callable(drift):
        evaluate = lambda x: (drift(x), 0)  # noqa: E731
    else:
        raise DomainError(f"unsupported drift type {type(drift).__name__}")
    psi = np.zeros_like(w)
    acc = np.zeros((n_paths, d))
    outside = 0
    x = np.broadcast_to(x0v, (n_paths, d)).copy()
    for i in range(n1 - 1):
        b, off = evaluate(x)
        outside += off
        acc = acc + _drift_values(b, n_paths, d) * dt
        psi[:, i + 1] = acc
        x = x0v + w[:, i + 1] + acc
    return psi, outside


def euler_solve(drift, w: FbmPath, x0=0.0) -> SolutionPath:
    """Left-point Euler scheme for ``dX = b(X) dt + dW`` driven by an exact noise path.

    ``drift`` may be a :class:`GridFunction` (multilinear interpolation, zero
    off the grid), a :class:`CallableDrift` or any vectorised callable, or a
    number for a constant drift.
    """
    psi, outside = euler_batch(drift, w.values[None], w.grid.dt, x0)
    if outside:
        log.warning("drift evaluated off the spatial grid %d times (extended by zero)", outside)
    meta = {"h": w.h, "seed": w.seed, "index": w.index, "n_steps": w.grid.n_steps, "n_outside": outside}
    return SolutionPath(w, x0, psi[0], meta)


# ---------------------------------------------------------------------------
# Regularised solutions
# ---------------------------------------------------------------------------


def _drift_extent(b: DriftSpec, d: int) -> float:
    if isinstance(b, Measure):
        reach = max([float(np.max(np.abs(np.asarray(loc, dtype=float)))) for loc, _ in b.atoms] or [0.0])
        if b.density is not None:
            reach = max(reach, b.density.grid.extent)
        return reach + 4.0
    if isinstance(b, GridFunction):
        return b.grid.extent
    return 4.0


def drift_grid(b: DriftSpec, n_max: int, d: int = 1, extent: float | None = None) -> SpatialGrid:
    """Spatial grid with ``dx <= sqrt(1/n_max)/8`` covering the drift's support plus margin."""
    if isinstance(b, GridFunction):
        return b.grid
    extent = extent or _drift_extent(b, d)
    need = 2.0 * extent * 8.0 * math.sqrt(n_max)
    n_cells = int(2 ** math.ceil(math.log2(max(need, 16))))
    return SpatialGrid(d, extent, n_cells)


def _mollified(b: DriftSpec, n_list: Sequence[int], d: int, grid: SpatialGrid | None):
    grid = grid or drift_grid(b, max(n_list), d)
    out = []
    for n in n_list:
        if n < 1:
            raise DomainError("mollification level must be >= 1")
        g = heat_mollify(b, 1.0 / n, grid)
        if d > 1 and g.values.shape == grid.shape:
            raise DomainError("drift in d >= 2 must be vector valued")
        g.meta["n"] = int(n)
        out.append(g)
    return out


def _require_regime(b: DriftSpec, h: float, d: int) -> RegimeClassification:
    cls = classify_regime(h, d, drift_integrability(b))
    if not cls.exists:
        raise RegimeError(
            f"no weak existence guarantee: d/p={d / cls.p:g} vs 1/h-1={1 / h - 1:g} ({cls.verdict})",
            classification=cls,
        )
    return cls


@dataclass
class RegularizedSolution:
    n_list: list
    solutions: list
    sup_distance: np.ndarray

    @property
    def consecutive(self) -> np.ndarray:
        k = len(self.n_list)
        return np.array([self.sup_distance[i, i + 1] for i in range(k - 1)])


def regularized_solution(b: DriftSpec, h: float, x0, n_list: Sequence[int], w: FbmPath,
                         grid: SpatialGrid | None = None) -> RegularizedSolution:
    """Solutions with drifts ``P_{1/n} b`` for each ``n``, all driven by the same path ``w``.

    Refuses (``RegimeError``) outside the weak existence regime.
    """
    _require_regime(b, h, w.d)
    drifts = _mollified(b, n_list, w.d, grid)
    sols = [euler_solve(g, w, x0) for g in drifts]
    for s, n in zip(sols, n_list):
        s.meta["n"] = int(n)
    k = len(sols)
    dist = np.zeros((k, k))
    for i in range(k):
        for j in range(i + 1, k):
            diff = sols[i].psi - sols[j].psi
            dist[i, j] = dist[j, i] = float(np.max(np.sqrt(np.sum(diff * diff, axis=1))))
    return RegularizedSolution(list(n_list), sols, dist)


def cauchy_trend(b: DriftSpec, h: float, n_list: Sequence[int], n_paths: int, n_steps: int,
                 seed: int = 0, x0=0.0, horizon: float = 1.0, d: int = 1, chunk: int = 200,
                 grid: SpatialGrid | None = None):
    """Ensemble of consecutive sup-distances ``sup_t |X^(n_k) - X^(n_{k+1})|``.

    Returns ``(medians, distances)`` with ``distances`` of shape ``(n_paths, len(n_list) - 1)``.
    """
    _require_regime(b, h, d)
    drifts = _mollified(b, n_list, d, grid)
    tg = TimeGrid(n_steps, horizon)
    out = np.zeros((n_paths, len(n_list) - 1))
    for start in range(0, n_paths, chunk):
        m = min(chunk, n_paths - start)
        w = sample_fbm_array(h, tg, m, d, seed, start)
        prev = None
        for k, g in enumerate(drifts):
            psi, _ = euler_batch(g, w, tg.dt, x0)
            if prev is not None:
                diff = psi - prev
                out[start:start + m, k - 1] = np.max(np.sqrt(np.sum(diff * diff, axis=2)), axis=1)
            prev = psi
    return np.median(out, axis=0), out


# ---------------------------------------------------------------------------
# Variation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class VariationStatistic:
    ell: float
    s: float
    t: float
    value: float
    lower_bound: bool = False


def _variation(psi: np.ndarray, i0: int, i1: int, ell: float) -> np.ndarray:
    """Finest-grid ``ell``-variation along axis 1 of ``(paths, n+1, d)``."""
    inc = np.diff(psi[:, i0:i1 + 1], axis=1)
    norms = np.sqrt(np.sum(inc * inc, axis=2))
    if ell == 1:
        return norms.sum(axis=1)
    return np.sum(norms**ell, axis=1) ** (1.0 / ell)


def drift_variation(sol: SolutionPath, s: float, t: float, ell: float = 1.0) -> VariationStatistic:
    """``ell``-variation of the drift part on ``[s, t]``.

    For ``ell = 1`` the grid sum is the supremum over grid partitions. For
    ``ell > 1`` the finest-grid sum is only a lower bound and is flagged.
    """
    if not s < t:
        raise DomainError("need s < t")
    if ell < 1:
        raise DomainError("ell must be >= 1")
    i0, i1 = sol.grid.index(s), sol.grid.index(t)
    val = float(_variation(sol.psi[None], i0, i1, ell)[0])
    return VariationStatistic(float(ell), float(s), float(t), val, lower_bound=ell > 1)


def variation_exponent(b: DriftSpec, h: float, n: int, deltas: Sequence[float], n_paths: int,
                       n_steps: int, seed: int = 0, chunk: int = 200, trim: float = 0.1,
                       grid: SpatialGrid | None = None):
    """Scaling of ``E ||psi||_{1-var; [0, delta]}`` in ``delta`` for ``d = 1``, ``x0 = 0``.

    The grid spans ``[0, max(deltas)]`` and intervals are anchored at the start,
    where the self-similar scaling of the singular drift is not masked by the
    smooth behaviour of the law of ``X`` at positive times. Returns
    ``(fit, samples)`` where ``samples`` is ``(n_paths, len(deltas))``.
    """
    deltas = np.asarray(sorted(deltas), dtype=float)
    tg = TimeGrid(n_steps, float(deltas[-1]))
    idx = [tg.index(dl) for dl in deltas]
    (g,) = _mollified(b, [n], 1, grid)
    out = np.zeros((n_paths, len(deltas)))
    for start in range(0, n_paths, chunk):
        m = min(chunk, n_paths - start)
        w = sample_fbm_array(h, tg, m, 1, seed, start)
        psi, _ = euler_batch(g, w, tg.dt, 0.0)
        for k, i1 in enumerate(idx):
            out[start:start + m, k] = _variation(psi, 0, i1, 1.0)
    reducer = lambda a: trimmed_mean(a, trim)  # noqa: E731
    fit = fit_scaling_exponent(deltas, ensembles=out.T, reducer=reducer, seed=seed)
    return fit, out


# ---------------------------------------------------------------------------
# Skew fBM
# ---------------------------------------------------------------------------


def skew_parameter(beta: float) -> float:
    """Effective weight ``(1 - e^{-2 beta}) / (1 + e^{-2 beta}) = tanh(beta)``."""
    return math.tanh(beta)


def skew_fbm(h: float, beta: float, n: int, w: FbmPath, x0=0.0, grid: SpatialGrid | None = None) -> SolutionPath:
    """Solution with drift ``beta * P_{1/n} delta_0`` in ``d = 1``.

    Simulates outside ``h < 1/2`` too (with a warning) for boundary studies.
    """
    if w.d != 1:
        raise DomainError("skew fBM is one dimensional")
    h = check_hurst(h)
    if not h < 0.5:
        warnings.warn(f"h={h} is outside h < 1/2 where existence is guaranteed", RuntimeWarning, stacklevel=2)
    b = Measure([(0.0, float(beta))], d=1)
    (g,) = _mollified(b, [n], 1, grid)
    sol = euler_solve(g, w, x0)
    sol.meta.update({"beta": beta, "n": n})
    return sol


def legall_probability(beta: float, n: int, n_paths: int, n_steps: int, seed: int = 0,
                       h: float = 0.5, chunk: int = 1000):
    """Monte Carlo ``P(X_1 > 0)`` for the mollified skew equation started at 0.

    Returns ``(estimate, standard_error)``.
    """
    b = Measure([(0.0, float(beta))], d=1)
    (g,) = _mollified(b, [n], 1, None)
    tg = TimeGrid(n_steps)
    vals = g.values.reshape(-1)
    pos = 0
    for start in range(0, n_paths, chunk):
        m = min(chunk, n_paths - start)
        w = sample_fbm_array(h, tg, m, 1, seed, start)[:, :, 0]
        psi, _ = _kernels.euler_grid_1d(np.zeros(m), w, tg.dt, g.grid.axis[0], g.grid.dx, vals)
        pos += int(np.count_nonzero(w[:, -1] + psi[:, -1] > 0))
    p = pos / n_paths
    return p, math.sqrt(p * (1 - p) / n_paths)


def skew_walk_probability(beta: float, n_paths: int, n_steps: int = 1025, seed: int = 0):
    """Oracle: ``P(S_n > 0)`` for the skew simple random walk from 0.

    At 0 the walk steps up with probability ``(1 + tanh beta)/2``; elsewhere it
    is symmetric. Each excursion is positive with that probability, so for odd
    ``n`` the answer equals it exactly and the estimate carries only sampling
    noise. Returns ``(estimate, standard_error)``.
    """
    if n_steps % 2 == 0:
        raise DomainError("use an odd number of steps so that S_n != 0")
    up = 0.5 * (1.0 + skew_parameter(beta))
    rng = path_rng(seed, 0)
    s = np.zeros(n_paths, dtype=np.int64)
    for _ in range(n_steps):
        u = rng.random(n_paths)
        thresh = np.where(s == 0, up, 0.5)
        s += np.where(u < thresh, 1, -1)
    p = float(np.mean(s > 0))
    return p, math.sqrt(p * (1 - p) / n_paths)


# ---------------------------------------------------------------------------
# Measure equation residual
# ---------------------------------------------------------------------------


def measure_drift_residual(sol: SolutionPath, b: Measure, L) -> float:
    """``sup_t |psi_t - sum_atoms w L(t, y) - int L(t, y) rho(y) dy|`` over the field's times.

    ``L`` is a :class:`~singdrift.localtime.LocalTimeField` of ``sol``.
    """
    tg = sol.grid
    try:
        idx = [tg.index(t) for t in L.t_list]
    except DomainError as exc:
        raise DomainError("local-time field times are not on the solution grid") from exc
    if sol.d != 1 or L.points.shape[1] != 1:
        raise DomainError("residual is implemented for d = 1")
    xs = L.points[:, 0]
    pred = np.zeros(len(idx))
    for loc, wgt in b.atoms:
        y = float(np.asarray(loc).reshape(-1)[0])
        at = np.array([np.interp(y, xs, L.values[k], left=0.0, right=0.0) for k in range(len(idx))])
        pred += float(np.asarray(wgt).reshape(-1)[0]) * at
    if b.density is not None:
        rho = b.density
        dens = np.interp(xs, rho.grid.axis, rho.values.reshape(-1), left=0.0, right=0.0)
        dxs = np.gradient(xs) if xs.size > 1 else np.ones(1)
        pred += L.values @ (dens * dxs)
    return float(np.max(np.abs(sol.psi[idx, 0] - pred)))
