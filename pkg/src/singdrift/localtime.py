"""Occupation measures, bandwidth local-time estimates and their Hölder exponents.

Occupation times are those of the piecewise-linear interpolant of the sampled
path, integrated exactly segment by segment.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import _kernels
from .errors import DomainError, GridResolutionError, RegimeError
from .fbm import FbmPath, TimeGrid, check_hurst, sample_fbm_array
from .fitting import ExponentFit, fit_scaling_exponent, trimmed_mean
from .mollify import SpatialGrid, unit_ball_volume

__all__ = [
    "OccupationMeasure",
    "LocalTimeField",
    "occupation_measure",
    "local_time",
    "local_time_batch",
    "time_holder_exponent",
    "space_holder_exponent",
    "localtime_time_exponent",
    "localtime_space_exponent",
    "perturbed_local_time",
    "reflected_bm_negative_test",
]


def _path_data(path):
    """``(values (n+1, d), TimeGrid, h or None, id)`` for FbmPath / SolutionPath / arrays."""
    if isinstance(path, FbmPath):
        return path.values, path.grid, path.h, f"seed={path.seed}/index={path.index}"
    if hasattr(path, "psi") and hasattr(path, "w"):
        w = path.w
        return path.x, w.grid, w.h, f"solution seed={w.seed}/index={w.index}"
    raise DomainError("expected an FbmPath or SolutionPath")


# ---------------------------------------------------------------------------
# Occupation measure
# ---------------------------------------------------------------------------


@dataclass
class OccupationMeasure:
    t: float
    grid: SpatialGrid
    mass: np.ndarray

    @property
    def total(self) -> float:
        return float(self.mass.sum())


def _covering_grid(grid: SpatialGrid, values: np.ndarray) -> SpatialGrid:
    reach = float(np.max(np.abs(values))) if values.size else 0.0
    if reach < grid.extent:
        return grid
    # keep dx, grow symmetrically by whole cells
    extra = int(math.ceil((reach - grid.extent) / grid.dx)) + 1
    n = grid.n_cells + 2 * extra
    return SpatialGrid(grid.d, grid.extent + extra * grid.dx, n)


def occupation_measure(path, t: float, grid: SpatialGrid) -> OccupationMeasure:
    """Time spent in each cell up to ``t``; every step of length ``dt`` goes to the cell of its left point.

    The grid is enlarged (same ``dx``) when the path leaves it, so the total
    mass is ``t`` up to rounding.
    """
    values, tg, _, _ = _path_data(path)
    if values.shape[1] != grid.d:
        raise DomainError("grid dimension does not match the path")
    k = tg.index(t)
    pts = values[:k]
    grid = _covering_grid(grid, pts)
    cells = np.floor((pts + grid.extent) / grid.dx).astype(np.int64)
    cells = np.clip(cells, 0, grid.n_cells - 1)
    mass = np.zeros(grid.shape)
    np.add.at(mass, tuple(cells.T), tg.dt)
    return OccupationMeasure(float(t), grid, mass)


# ---------------------------------------------------------------------------
# Local time fields
# ---------------------------------------------------------------------------


@dataclass
class LocalTimeField:
    """``values[k, j] = L(t_list[k], points[j])`` at bandwidth ``R``."""

    t_list: np.ndarray
    points: np.ndarray
    values: np.ndarray
    R: float
    path_id: str = ""
    meta: dict = field(default_factory=dict)

    def at(self, x) -> np.ndarray:
        """Column for the evaluation point nearest to ``x``."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        j = int(np.argmin(np.sum((self.points - x) ** 2, axis=1)))
        return self.values[:, j]

    def spatial_integral(self) -> np.ndarray:
        """``int L(t, x) dx`` per time (uniform 1-d points)."""
        if self.points.shape[1] != 1 or len(self.points) < 2:
            raise DomainError("spatial integral needs at least two 1-d points")
        dx = float(self.points[1, 0] - self.points[0, 0])
        return self.values.sum(axis=1) * dx

    def to_csv(self, target=None) -> str:
        buf = io.StringIO()
        buf.write(f"# R={self.R!r}\n# path={self.path_id}\n")
        d = self.points.shape[1]
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(["t"] + (["x"] if d == 1 else [f"x_{i + 1}" for i in range(d)]) + ["L"])
        for k, t in enumerate(self.t_list):
            for j, pt in enumerate(self.points):
                wr.writerow([repr(float(t))] + [repr(float(c)) for c in pt] + [repr(float(self.values[k, j]))])
        text = buf.getvalue()
        if target is not None:
            Path(target).write_text(text)
        return text


def _uniform_1d(points: np.ndarray) -> bool:
    if points.shape[1] != 1 or len(points) < 2:
        return False
    step = np.diff(points[:, 0])
    return bool(np.all(np.abs(step - step[0]) <= 1e-9 * max(1.0, abs(step[0]))) and step[0] > 0)


def local_time_batch(paths: np.ndarray, dt: float, points: np.ndarray, R: float, t_idx) -> np.ndarray:
    """``L(t_k, x_j)`` for a batch ``(paths, n+1, d)``; returns ``(paths, K, J)``."""
    paths = np.asarray(paths, dtype=float)
    if paths.ndim == 2:
        paths = paths[:, :, None]
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if points.shape[1] != paths.shape[2]:
        points = points.reshape(-1, paths.shape[2])
    d = paths.shape[2]
    norm = 1.0 / (unit_ball_volume(d) * R**d)
    t_idx = np.asarray(t_idx, dtype=np.int64)
    if np.any(np.diff(t_idx) < 0):
        raise DomainError("times must be sorted")
    if d == 1 and _uniform_1d(points):
        dx = float(points[1, 0] - points[0, 0])
        occ = _kernels.occupation_1d(paths[:, :, 0], dt, points[0, 0], dx, len(points), R, t_idx)
    elif d == 1 and len(points) == 1:
        occ = _kernels.occupation_1d(paths[:, :, 0], dt, points[0, 0], 1.0, 1, R, t_idx)
    else:
        occ = _kernels.occupation_ball(paths, dt, points, R, t_idx)
    return occ * norm


def _check_fbm_regime(h: float | None, d: int, perturbed: bool = False):
    if h is None:
        return
    if perturbed:
        if not h * (d + 1) < 1:
            raise RegimeError(f"joint continuity needs h(d+1) < 1, got {h * (d + 1):g}")
    elif not h * d < 1:
        raise RegimeError(f"local time of fBM needs hd < 1, got {h * d:g}")


def local_time(path, R: float | None = None, grid: SpatialGrid | None = None,
               t_list: Sequence[float] | None = None) -> LocalTimeField:
    """``L(t, x) = (1/(v_d R^d)) int_0^t 1(|X_s - x| < R) ds`` at the cell centres of ``grid``.

    Defaults: ``grid`` covers the path range with 256 cells per axis,
    ``R = max(dx * sqrt(n_cells) / 8, 2 dx)``, ``t_list`` the right end point. Refuses
    fBM paths with ``hd >= 1`` and bandwidths below ``2 dx``.
    """
    values, tg, h, pid = _path_data(path)
    d = values.shape[1]
    _check_fbm_regime(h, d)
    if grid is None:
        reach = float(np.max(np.abs(values))) + 0.5
        grid = SpatialGrid(d, reach, 256 if d == 1 else 32)
    if grid.d != d:
        raise DomainError("grid dimension does not match the path")
    if R is None:
        R = max(grid.dx * math.sqrt(grid.n_cells) / 8.0, 2.0 * grid.dx)
    if R < 2.0 * grid.dx * (1 - 1e-12):
        raise GridResolutionError(f"bandwidth {R:g} below 2 dx = {2 * grid.dx:g}", required=2 * grid.dx)
    t_list = np.asarray([tg.horizon] if t_list is None else t_list, dtype=float)
    t_idx = np.array([tg.index(t) for t in t_list])
    pts = grid.centers().reshape(-1, d)
    vals = local_time_batch(values[None], tg.dt, pts, R, t_idx)[0]
    return LocalTimeField(t_list, pts, vals, float(R), pid, {"h": h, "n_steps": tg.n_steps})


# ---------------------------------------------------------------------------
# Exponents
# ---------------------------------------------------------------------------


def _field_stack(fields) -> list:
    if isinstance(fields, LocalTimeField):
        return [fields]
    fields = list(fields)
    if not fields:
        raise DomainError("empty ensemble")
    return fields


def time_holder_exponent(fields, x=0.0, intervals: Sequence[tuple] | None = None,
                         trim: float = 0.1, seed: int = 0) -> ExponentFit:
    """Fit ``E|L(t, x) - L(s, x)|`` against ``t - s`` over an ensemble of fields.

    ``intervals`` default to ``[0, t_k]`` for every positive ``t_k`` of the
    fields. Ensemble means are 10% trimmed by default.
    """
    fields = _field_stack(fields)
    t_list = fields[0].t_list
    cols = np.stack([f.at(x) for f in fields])
    if intervals is None:
        intervals = [(0.0, t) for t in t_list if t > 0]
    lookup = {float(t): k for k, t in enumerate(t_list)}
    samples, scales = [], []
    for s, t in intervals:
        if not s < t:
            raise DomainError("intervals need s < t")
        lt = cols[:, lookup[float(t)]]
        ls = 0.0 if s == 0 and float(s) not in lookup else cols[:, lookup[float(s)]]
        samples.append(np.abs(lt - ls))
        scales.append(t - s)
    if np.all(np.concatenate(samples) == 0):
        raise DomainError("degenerate field: all increments vanish")
    return fit_scaling_exponent(scales, ensembles=samples, reducer=lambda a: trimmed_mean(a, trim), seed=seed)


def space_holder_exponent(fields, t: float, pairs: Sequence[tuple], trim: float = 0.1,
                          seed: int = 0) -> ExponentFit:
    """Fit ``E|L(t, x) - L(t, y)|`` against ``|x - y|`` for the given point pairs."""
    fields = _field_stack(fields)
    k = int(np.argmin(np.abs(fields[0].t_list - t)))
    samples, scales = [], []
    for x, y in pairs:
        a = np.array([f.at(x)[k] for f in fields])
        b = np.array([f.at(y)[k] for f in fields])
        samples.append(np.abs(a - b))
        scales.append(float(np.linalg.norm(np.atleast_1d(np.subtract(x, y)))))
    return fit_scaling_exponent(scales, ensembles=samples, reducer=lambda a: trimmed_mean(a, trim), seed=seed)


def near_critical(h: float, d: int) -> bool:
    """Spatial regularity index ``1/(2h) - d/2`` below 0.2."""
    return (1.0 / (2.0 * h) - d / 2.0) < 0.2


def localtime_time_exponent(h: float, d: int = 1, deltas: Sequence[float] | None = None,
                            n_paths: int = 1000, n_steps: int = 4096, R: float | None = None,
                            seed: int = 0, chunk: int = 250, psi=None, trim: float = 0.1):
    """Monte Carlo time exponent of ``L([0, delta], 0)`` for fBM started at 0.

    Anchoring at the start point makes ``E L`` exactly self-similar in
    ``delta``; the bandwidth must stay well below ``delta_min**h``. ``psi`` is
    an optional callable ``(w_batch, dt) -> psi_batch`` adding a drift part.
    Returns ``(fit, samples)``.
    """
    h = check_hurst(h)
    _check_fbm_regime(h, d, perturbed=psi is not None)
    deltas = np.asarray(sorted(deltas if deltas is not None else 2.0 ** -np.arange(9, 2, -1)), dtype=float)
    R = R if R is not None else 0.1 * deltas[0] ** h
    tg = TimeGrid(n_steps, float(deltas[-1]))
    t_idx = [tg.index(dl) for dl in deltas]
    out = np.zeros((n_paths, len(deltas)))
    origin = np.zeros((1, d))
    for start in range(0, n_paths, chunk):
        m = min(chunk, n_paths - start)
        w = sample_fbm_array(h, tg, m, d, seed, start)
        if psi is not None:
            w = w + psi(w, tg.dt)
        out[start:start + m] = local_time_batch(w, tg.dt, origin, R, t_idx)[:, :, 0]
    fit = fit_scaling_exponent(deltas, ensembles=out.T, reducer=lambda a: trimmed_mean(a, trim), seed=seed)
    return fit, out


def localtime_space_exponent(paths: np.ndarray, dt: float, center: float, offsets: Sequence[float],
                             frac: float = 0.25, trim: float = 0.1, seed: int = 0):
    """Spatial exponent of ``L(T, .)`` from pairs ``center -/+ rho/2`` (``d = 1``).

    Each offset uses its own bandwidth ``R = frac * rho`` so that the windows
    of a pair never overlap. Returns ``(fit, samples)``.
    """
    paths = np.asarray(paths, dtype=float)
    if paths.ndim == 3:
        paths = paths[:, :, 0]
    n = paths.shape[1] - 1
    samples = []
    for rho in offsets:
        R = frac * rho
        pts = np.array([[center - rho / 2], [center + rho / 2]])
        L = local_time_batch(paths, dt, pts, R, [n])[:, 0, :]
        samples.append(np.abs(L[:, 1] - L[:, 0]))
    fit = fit_scaling_exponent(offsets, ensembles=samples, reducer=lambda a: trimmed_mean(a, trim), seed=seed)
    return fit, np.stack(samples, axis=1)


def perturbed_local_time(w: FbmPath, psi: np.ndarray | None = None, R: float | None = None,
                         grid: SpatialGrid | None = None, t_list: Sequence[float] | None = None) -> LocalTimeField:
    """Local time of ``W + psi`` for an adapted finite-variation ``psi``.

    Refuses unless ``h(d+1) < 1``. With ``psi`` zero the result coincides
    with :func:`local_time` of ``w``.
    """
    _check_fbm_regime(w.h, w.d, perturbed=True)
    if psi is None:
        return local_time(w, R, grid, t_list)
    psi = np.asarray(psi, dtype=float).reshape(w.values.shape)
    shifted = FbmPath(w.grid, w.values + psi, w.h, w.seed, w.index, dict(w.meta, perturbed=True))
    field_ = local_time(shifted, R, grid, t_list)
    field_.meta["perturbed"] = True
    return field_


def reflected_bm_negative_test(n_paths: int = 300, n_steps: int = 16384, seed: int = 0,
                               offsets: Sequence[float] | None = None, away: float = 0.5,
                               h: float = 0.5, reflect: bool = True) -> dict:
    """Spatial exponents of the local time of ``|W|`` straddling 0 and away from 0.

    For ``h = 1/2`` the field of ``|W|`` jumps at 0, so the straddling exponent
    collapses while the one away from 0 stays near 1/2. With ``reflect=False``
    and ``h < 1/2`` the same statistics of plain fBM show no such gap.
    """
    offsets = np.asarray(offsets if offsets is not None else 2.0 ** -np.arange(2, 7), dtype=float)
    tg = TimeGrid(n_steps)
    paths = sample_fbm_array(h, tg, n_paths, 1, seed)[:, :, 0]
    if reflect:
        paths = np.abs(paths)
    straddle, _ = localtime_space_exponent(paths, tg.dt, 0.0, offsets, seed=seed)
    far, _ = localtime_space_exponent(paths, tg.dt, away, offsets, seed=seed)
    return {
        "h": h,
        "reflect": reflect,
        "n_paths": n_paths,
        "n_steps": n_steps,
        "min_value": float(paths.min()),
        "straddle": straddle,
        "away": far,
        "gap": far.slope - straddle.slope,
    }
