"""Deterministic non-existence laboratory.

The equation ``X^i_t = -int_0^t sign(X^i) |X|^-alpha 1(|X| < 1) ds + f^i_t``
has no continuous solution when ``alpha > (1 - gamma)/gamma`` and ``f`` is a
nonzero ``gamma``-Hölder forcing. A solution escaping the ball of radius
``d eps`` must spend an excursion ``[t', t'']`` pushing one coordinate from 0
to ``eps`` against the drift, which costs the forcing a Hölder quotient of at
least ``K_min(eps) = gamma^-gamma d^(-alpha gamma) eps^(1 - gamma - alpha gamma)``.
:func:`attempt_solve` turns this into an estimator.
"""
from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import _kernels
from .errors import DomainError, RegimeError
from .fbm import FbmPath, TimeGrid, sample_fbm_array
from .mollify import CallableDrift, SpatialGrid, lp_norm, unit_ball_volume
from .sde import classify_regime

log = logging.getLogger(__name__)

__all__ = [
    "CeParams",
    "EscapeCheck",
    "ExcursionRow",
    "ExcursionReport",
    "ce_drift",
    "required_k_exponent",
    "escape_inequality_check",
    "attempt_solve",
    "ce_sweep",
    "bad_drift_alpha",
    "construct_bad_drift",
    "grid_lp_norms",
    "exact_lp_norm",
]


@dataclass(frozen=True)
class CeParams:
    gamma: float
    alpha: float
    d: int = 1

    def __post_init__(self):
        if not 0 < self.gamma < 1:
            raise DomainError("gamma must lie in (0, 1)")
        if not self.alpha > 0:
            raise DomainError("alpha must be positive")
        if int(self.d) != self.d or self.d < 1:
            raise DomainError("d must be a positive integer")

    @property
    def supercritical(self) -> bool:
        return self.alpha > (1.0 - self.gamma) / self.gamma


def ce_drift(x, alpha: float, d: int | None = None, floor: float | None = None) -> np.ndarray:
    """``-sign(x_i) |x|^-alpha 1(|x| < 1)`` coordinatewise; ``x`` has shape ``(..., d)``.

    A point at the origin is singular: it raises unless ``floor`` is given, in
    which case ``|x|`` is floored there (the drift at exactly 0 is then 0).
    """
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        x = x[None]
    if d is not None and x.shape[-1] != d:
        raise DomainError(f"expected points of dimension {d}")
    r = np.sqrt(np.sum(x * x, axis=-1, keepdims=True))
    inside = r < 1.0
    if np.any(inside & (r == 0.0)):
        if floor is None:
            raise DomainError("drift is singular at 0; pass a floor to regularise")
        log.info("flooring |x| at %g for points at the origin", floor)
    if floor is not None:
        r = np.maximum(r, floor)
    with np.errstate(divide="ignore"):
        mag = np.where(inside, r ** (-alpha), 0.0)
    return -np.sign(x) * mag


# ---------------------------------------------------------------------------
# Escape inequality
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EscapeCheck:
    holds: bool
    margin: float
    k_min: float


def required_k_exponent(gamma: float, alpha: float) -> float:
    """Power of ``eps`` in the smallest Hölder constant allowing an escape."""
    return 1.0 - gamma - alpha * gamma


def k_min(eps, gamma: float, alpha: float, d: int = 1):
    """``gamma^-gamma d^(-alpha gamma) eps^(1 - gamma - alpha gamma)``."""
    eps = np.asarray(eps, dtype=float)
    return gamma ** (-gamma) * d ** (-alpha * gamma) * eps ** required_k_exponent(gamma, alpha)


def escape_inequality_check(eps: float, gamma: float, alpha: float, d: int, K: float) -> EscapeCheck:
    """Evaluate ``eps <= gamma^(gamma/(1-gamma)) K^(1/(1-gamma)) (eps d)^(alpha gamma/(1-gamma))``.

    ``margin`` is right side minus left side; ``k_min`` the smallest ``K``
    for which the inequality holds.
    """
    if not 0 < eps < 1.0 / d:
        raise DomainError("eps must lie in (0, 1/d)")
    if not 0 < gamma < 1:
        raise DomainError("gamma must lie in (0, 1)")
    if K < 0:
        raise DomainError("K must be nonnegative")
    e = 1.0 / (1.0 - gamma)
    rhs = gamma ** (gamma * e) * K**e * (eps * d) ** (alpha * gamma * e)
    return EscapeCheck(bool(eps <= rhs), float(rhs - eps), float(k_min(eps, gamma, alpha, d)))


# ---------------------------------------------------------------------------
# Excursions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ExcursionRow:
    floor: float
    eps: float
    t_prime: float
    t_doubleprime: float
    k_hat: float
    k_forcing: float
    n_excursions: int


@dataclass
class ExcursionReport:
    params: CeParams
    rows: list
    verdicts: dict
    strictly_increasing: dict
    degenerate: bool = False
    meta: dict = field(default_factory=dict)

    def k_hat(self, floor: float) -> np.ndarray:
        """``K_hat`` ordered by decreasing ``eps`` for one floor."""
        rows = sorted((r for r in self.rows if r.floor == floor), key=lambda r: -r.eps)
        return np.array([r.k_hat for r in rows])

    def to_csv(self, target=None) -> str:
        buf = io.StringIO()
        p = self.params
        buf.write(f"# gamma={p.gamma!r}\n# alpha={p.alpha!r}\n# d={p.d}\n")
        for k in sorted(self.meta):
            buf.write(f"# {k}={self.meta[k]}\n")
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(["floor", "eps", "t_prime", "t_doubleprime", "K_hat", "K_forcing", "n_excursions", "verdict"])
        for r in self.rows:
            wr.writerow([repr(r.floor), repr(r.eps), repr(r.t_prime), repr(r.t_doubleprime),
                         repr(r.k_hat), repr(r.k_forcing), r.n_excursions, self.verdicts[r.floor]])
        text = buf.getvalue()
        if target is not None:
            Path(target).write_text(text)
        return text


def _excursions(x: np.ndarray, f: np.ndarray, dt: float, eps: float, params: CeParams):
    """Escape data of every excursion of ``x`` reaching the sphere of radius ``d eps``.

    Returns arrays ``(t', t'', K_need, K_forcing)`` (possibly empty).
    """
    d = params.d
    r = np.sqrt(np.sum(x * x, axis=1))
    level = d * eps
    above = r >= level
    up = np.nonzero(above[1:] & ~above[:-1])[0] + 1
    if above[0]:
        up = np.concatenate(([0], up))
    t1s, t2s, need, forced = [], [], [], []
    seen = set()
    a = (d * eps) ** (-params.alpha)
    for tau in up:
        i = int(np.argmax(np.abs(x[tau])))
        sgn = np.sign(x[tau, i])
        back = np.nonzero(sgn * x[:tau, i] <= 0)[0]
        t1 = int(back[-1]) if back.size else 0
        if t1 in seen:
            continue
        seen.add(t1)
        span = (tau - t1) * dt
        if span <= 0:
            continue
        t1s.append(t1 * dt)
        t2s.append(tau * dt)
        need.append((eps + span * a) / span**params.gamma)
        forced.append(abs(f[tau, i] - f[t1, i]) / span**params.gamma)
    return np.array(t1s), np.array(t2s), np.array(need), np.array(forced)


def _increasing(values: np.ndarray, inversions: int = 0) -> bool:
    steps = np.diff(values)
    if not np.all(np.isfinite(values)):
        return False
    return int(np.sum(~(steps > 0))) <= inversions


def attempt_solve(forcing, params: CeParams, floors: Sequence[float] = (2.0**-20,),
                  eps_list: Sequence[float] | None = None, horizon: float = 1.0) -> ExcursionReport:
    """Euler integration with singularity floors and the escape statistic per floor.

    ``K_hat(eps)`` is the largest Hölder quotient the forcing would need to
    drive any observed excursion from 0 to the sphere of radius ``d eps``
    against the drift, ``(eps + (t'' - t') (d eps)^-alpha) / (t'' - t')^gamma``,
    and never less than ``K_min(eps)``, the least any escape needs. The
    verdict is ``non-existence signature`` when ``K_hat`` increases as ``eps``
    decreases (one inversion allowed). A zero forcing is flagged degenerate.
    """
    if isinstance(forcing, FbmPath):
        f, tg = forcing.values, forcing.grid
    else:
        f = np.asarray(forcing, dtype=float)
        if f.ndim == 1:
            f = f[:, None]
        tg = TimeGrid(f.shape[0] - 1, horizon)
    if tg.horizon < horizon * (1 - 1e-12):
        raise DomainError(f"forcing covers [0, {tg.horizon}], shorter than the horizon {horizon}")
    if f.shape[1] != params.d:
        raise DomainError("forcing dimension does not match params.d")
    if np.any(f[0] != 0):
        raise DomainError("forcing must start at 0")
    eps_list = sorted(eps_list if eps_list is not None else [2.0**-j for j in range(2, 6)], reverse=True)
    if any(not 0 < e < 1.0 / params.d for e in eps_list):
        raise DomainError("eps must lie in (0, 1/d)")
    degenerate = bool(np.all(f == 0))
    rows, verdicts, strict = [], {}, {}
    for floor in floors:
        if not floor > 0:
            raise DomainError("floors must be positive")
        x = _kernels.ce_euler(f[None], tg.dt, params.alpha, floor)[0]
        khat = []
        for eps in eps_list:
            t1, t2, need, forced = _excursions(x, f, tg.dt, eps, params)
            base = float(k_min(eps, params.gamma, params.alpha, params.d))
            if degenerate:
                row = ExcursionRow(floor, eps, math.nan, math.nan, math.inf, 0.0, 0)
            elif need.size:
                j = int(np.argmax(need))
                row = ExcursionRow(floor, eps, float(t1[j]), float(t2[j]), max(base, float(need[j])),
                                   float(forced[j]), int(need.size))
            else:
                row = ExcursionRow(floor, eps, math.nan, math.nan, base, math.nan, 0)
            rows.append(row)
            khat.append(row.k_hat)
        khat = np.array(khat)
        strict[floor] = (not degenerate) and _increasing(khat)
        if degenerate:
            verdicts[floor] = "degenerate"
        elif _increasing(khat, inversions=1):
            verdicts[floor] = "non-existence signature"
        else:
            verdicts[floor] = "no signature"
    meta = {"n_steps": tg.n_steps, "supercritical": params.supercritical}
    return ExcursionReport(params, rows, verdicts, strict, degenerate, meta)


def ce_sweep(h: float, params: CeParams, n_paths: int, n_steps: int, seed: int = 0,
             floors: Sequence[float] = (2.0**-20,), eps_list: Sequence[float] | None = None,
             scale: float = 1.0, chunk: int = 50) -> dict:
    """Run :func:`attempt_solve` on sampled fBM forcings; fraction of strictly increasing ``K_hat`` per floor."""
    tg = TimeGrid(n_steps)
    hits = {fl: 0 for fl in floors}
    reports = []
    for start in range(0, n_paths, chunk):
        m = min(chunk, n_paths - start)
        arr = scale * sample_fbm_array(h, tg, m, params.d, seed, start)
        for k in range(m):
            rep = attempt_solve(arr[k], params, floors, eps_list)
            # gamma is declared (h - 0.05 by convention), not measured from the path
            rep.meta.update({"forcing_h": h, "gamma_declared": params.gamma, "index": start + k})
            reports.append(rep)
            for fl in floors:
                hits[fl] += int(rep.strictly_increasing[fl])
    return {"fraction_increasing": {fl: hits[fl] / n_paths for fl in floors}, "reports": reports}


# ---------------------------------------------------------------------------
# Bad L_p drifts
# ---------------------------------------------------------------------------


def bad_drift_alpha(h: float, d: int, p: float) -> float:
    """Midpoint ``alpha = (d/p + 1/h - 1)/2``; requires ``d/p > 1/h - 1``."""
    cls = classify_regime(h, d, p)
    if cls.verdict != "counterexample_regime":
        raise RegimeError(f"d/p > 1/h - 1 is required, regime is {cls.verdict}", classification=cls)
    lo, hi = 1.0 / h - 1.0, d / p
    alpha = 0.5 * (lo + hi)
    return float(min(max(alpha, math.nextafter(lo, hi)), math.nextafter(hi, lo)))


def construct_bad_drift(h: float, d: int, p: float) -> CallableDrift:
    """``x -> -sign(x_i)|x|^-alpha 1(|x| < 1)`` in ``L_p`` with ``1/h - 1 < alpha < d/p``."""
    alpha = bad_drift_alpha(h, d, p)

    def f(x):
        return ce_drift(x, alpha, d, floor=np.finfo(float).tiny)

    drift = CallableDrift(f, d=d, p=float(p), label=f"counterexample alpha={alpha!r}")
    drift.alpha = alpha
    return drift


def exact_lp_norm(alpha: float, d: int, p: float) -> float:
    """``|| |x|^-alpha 1(|x|<1) ||_{L_p}`` per coordinate-free magnitude: ``(d v_d / (d - alpha p))^(1/p)``."""
    if not alpha * p < d:
        return math.inf
    return (d * unit_ball_volume(d) / (d - alpha * p)) ** (1.0 / p)


def grid_lp_norms(drift: CallableDrift, p: float, n_cells_list: Sequence[int], extent: float = 1.25) -> np.ndarray:
    """Grid ``L_p`` norms of ``|b|`` from cell averages at increasing resolution."""
    out = []
    for n in n_cells_list:
        grid = SpatialGrid(drift.d, extent, int(n))
        vals = drift.sample(grid, order=6).values
        if vals.ndim == drift.d and drift.d > 1:
            raise DomainError("expected a vector valued drift")
        out.append(lp_norm(vals, grid, p))
    return np.array(out)
