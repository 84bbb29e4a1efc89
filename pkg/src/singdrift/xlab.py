"""Experiment orchestration: configuration, seeding, report emission.

An experiment is described by a YAML file::

    kind: variation_scaling
    seed: 1
    n_paths: 1000
    n_steps: 4096
    h: [0.3]
    d: 1
    drift: {type: power, alpha: 0.4, p: 2}
    params: {n: 256, deltas: [0.125, 0.0625, 0.03125, 0.015625]}
    out: results/variation
    n_jobs: 1

Regimes referenced by the config are classified when it is loaded, so a
config outside the regime of its experiment is refused before any sampling.
Every CSV written starts with ``# key=value`` lines carrying the kind, the
config hash, the seed and the package version. ``out`` and ``n_jobs`` do not
enter the hash: they cannot change the bytes of any report.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import yaml

from . import __version__
from .counterexample import CeParams, ce_sweep, construct_bad_drift
from .errors import DomainError, RegimeError
from .fbm import TimeGrid, check_hurst, fbm_covariance, holder_exponent_estimate, sample_fbm_array
from .fitting import ExponentFit, trimmed_mean
from .localtime import _check_fbm_regime, localtime_space_exponent, localtime_time_exponent
from .mollify import CallableDrift, Measure, SpatialGrid, gaussian_density
from .sde import (
    RegimeClassification,
    cauchy_trend,
    classify_regime,
    drift_integrability,
    legall_probability,
    skew_parameter,
    skew_walk_probability,
    variation_exponent,
)
from .sewing import check_moment_parameters, dyadic_decay, integral_moment_scaling, moment_exponent_prediction

log = logging.getLogger(__name__)

__all__ = [
    "KINDS",
    "ExperimentConfig",
    "ExperimentResult",
    "build_drift",
    "regime_table",
    "run_experiment",
]

KINDS = (
    "fbm_validate",
    "regime_table",
    "variation_scaling",
    "localtime_exponents",
    "skew_legall",
    "sewing_rates",
    "counterexample_sweep",
)

# keys that never change report bytes
_UNHASHED = ("out", "n_jobs")


def _listify(x) -> list:
    if x is None:
        return []
    if isinstance(x, (list, tuple)):
        return list(x)
    return [x]


def _plain(obj):
    """YAML/JSON friendly copy (tuples to lists, numpy scalars to Python)."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


# ---------------------------------------------------------------------------
# Drift specs
# ---------------------------------------------------------------------------


def build_drift(spec: dict, d: int = 1, h: float | None = None):
    """DriftSpec from a config mapping.

    ``{type: delta, weight: w, at: y}``, ``{type: power, alpha: a, p: p}``
    (``|x|^-a 1(|x| < 1)``), ``{type: bump, var: v}`` (Gaussian density),
    ``{type: zero}`` and ``{type: bad, p: p}`` (needs ``h``).
    """
    if not spec:
        raise DomainError("missing drift spec")
    kind = spec.get("type")
    if kind == "delta":
        at = spec.get("at", 0.0)
        loc = float(at) if d == 1 else np.asarray(_listify(at) if _listify(at) else [0.0] * d, dtype=float)
        return Measure([(loc, float(spec.get("weight", 1.0)))], d=d)
    if kind == "power":
        alpha, p = float(spec["alpha"]), float(spec.get("p", 1.0))
        if not alpha * p < d:
            raise DomainError(f"|x|^-{alpha} is not in L_{p} near 0 in dimension {d}")

        def f(x, alpha=alpha):
            r = np.sqrt(np.sum(np.asarray(x) ** 2, axis=-1))
            with np.errstate(divide="ignore"):
                return np.where(r < 1.0, r ** (-alpha), 0.0)

        return CallableDrift(f, d=d, p=p, label=f"power alpha={alpha!r}")
    if kind == "bump":
        var = float(spec.get("var", 0.01))
        return CallableDrift(lambda x: gaussian_density(x, var), d=d, p=float(spec.get("p", 1.0)),
                             label=f"bump var={var!r}")
    if kind == "zero":
        return CallableDrift(lambda x: np.zeros(np.shape(x)[:-1]), d=d, p=math.inf, label="zero")
    if kind == "bad":
        if h is None:
            raise DomainError("the bad drift needs h")
        return construct_bad_drift(h, d, float(spec["p"]))
    raise DomainError(f"unknown drift type {kind!r}")


# ---------------------------------------------------------------------------
# Config
# ---------------------------------------------------------------------------


@dataclass
class ExperimentConfig:
    kind: str
    seed: int = 0
    n_paths: int = 100
    n_steps: int = 1024
    h: list = field(default_factory=lambda: [0.3])
    d: int = 1
    drift: dict = field(default_factory=dict)
    params: dict = field(default_factory=dict)
    out: str = "results"
    n_jobs: int = 1
    regimes: list = field(default_factory=list, compare=False, repr=False)

    def __post_init__(self):
        self.h = [float(x) for x in _listify(self.h)]
        self.regimes = self.validate()

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        data = dict(data)
        unknown = set(data) - {f for f in cls.__dataclass_fields__ if f != "regimes"}
        if unknown:
            raise DomainError(f"unknown config keys: {sorted(unknown)}")
        if "kind" not in data:
            raise DomainError("config needs a kind")
        return cls(**data)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            data = yaml.safe_load(fh)
        if not isinstance(data, dict):
            raise DomainError(f"{path}: expected a mapping")
        return cls.from_dict(data)

    def with_overrides(self, **kw) -> "ExperimentConfig":
        """Copy with the non-``None`` keyword values replaced (and re-validated)."""
        kw = {k: v for k, v in kw.items() if v is not None}
        return replace(self, **kw)

    def to_dict(self) -> dict:
        data = asdict(self)
        data.pop("regimes")
        return _plain(data)

    def canonical(self) -> str:
        data = {k: v for k, v in self.to_dict().items() if k not in _UNHASHED}
        return json.dumps(data, sort_keys=True, separators=(",", ":"))

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()[:16]

    # -- validation ---------------------------------------------------------

    def validate(self) -> list[RegimeClassification]:
        if self.kind not in KINDS:
            raise DomainError(f"unknown experiment kind {self.kind!r}; expected one of {KINDS}")
        if int(self.seed) != self.seed or self.seed < 0:
            raise DomainError("seed must be a nonnegative integer")
        if int(self.d) != self.d or self.d < 1:
            raise DomainError("d must be a positive integer")
        if int(self.n_jobs) != self.n_jobs or self.n_jobs < 1:
            raise DomainError("n_jobs must be a positive integer")
        if self.kind != "regime_table":
            if int(self.n_paths) != self.n_paths or self.n_paths < 1:
                raise DomainError("empty path list: n_paths must be at least 1")
            if int(self.n_steps) != self.n_steps or self.n_steps < 1:
                raise DomainError("n_steps must be a positive integer")
            if not self.h:
                raise DomainError("no Hurst parameter given")
        for x in self.h:
            check_hurst(x)
        return getattr(self, f"_validate_{self.kind}")()

    def _check_scales(self, *keys):
        # every exponent fit needs four scales
        for key in keys:
            if key in self.params and len(_listify(self.params[key])) < 4:
                raise DomainError(f"params.{key} needs at least 4 values for a fit")

    def _validate_fbm_validate(self):
        self._check_scales("lags")
        return []

    def _validate_regime_table(self):
        p = self.params
        if "d_list" in p and not all(int(d) == d and d >= 1 for d in p["d_list"]):
            raise DomainError("d_list must hold positive integers")
        return []

    def _validate_variation_scaling(self):
        self._check_scales("deltas")
        out = []
        for h in self.h:
            b = build_drift(self.drift, self.d, h)
            cls = classify_regime(h, self.d, drift_integrability(b))
            if cls.verdict != "weak_existence":
                raise RegimeError(
                    f"h={h}, d={self.d}, p={cls.p}: {cls.verdict}; the drift part needs d/p < 1/h - 1",
                    classification=cls)
            out.append(cls)
        if self.d != 1:
            raise DomainError("variation scaling is implemented for d = 1")
        return out

    def _validate_localtime_exponents(self):
        self._check_scales("deltas", "space_offsets")
        perturbed = bool(self.params.get("perturbed", False))
        for h in self.h:
            _check_fbm_regime(h, self.d, perturbed)
        # the measure drift of a perturbation has p = 1
        return [classify_regime(h, self.d, 1.0) for h in self.h] if perturbed else []

    def _validate_skew_legall(self):
        out = []
        for h in self.h:
            cls = classify_regime(h, 1, 1.0)
            if cls.verdict == "counterexample_regime":
                raise RegimeError(f"h={h}: a point mass drift has no weak solution here", classification=cls)
            if cls.verdict == "boundary":
                log.info("h=%g sits on the regime boundary; simulating the mollified equation", h)
            out.append(cls)
        return out

    def _validate_sewing_rates(self):
        self._check_scales("T_list")
        alpha = float(self.params.get("alpha", -0.5))
        q = float(self.params.get("q", 2.0))
        for h in self.h:
            check_moment_parameters(h, alpha, self.d, q)
        if self.d != 1:
            raise DomainError("sewing rates are implemented for d = 1")
        return []

    def _validate_counterexample_sweep(self):
        out = []
        for h in self.h:
            gamma = float(self.params.get("gamma", h - 0.05))
            for alpha in _listify(self.params.get("alpha", [1.0, 0.5])):
                CeParams(gamma, float(alpha), self.d)
            if "p" in self.params:
                out.append(classify_regime(h, self.d, float(self.params["p"])))
        return out


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------


@dataclass
class Table:
    columns: list
    rows: list = field(default_factory=list)

    def add(self, *row):
        if len(row) != len(self.columns):
            raise ValueError("row length does not match the columns")
        self.rows.append(row)


def _cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


def _render(table: Table, header: dict) -> str:
    buf = io.StringIO()
    for k, v in header.items():
        buf.write(f"# {k}={v}\n")
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(table.columns)
    for row in table.rows:
        wr.writerow([_cell(v) for v in row])
    return buf.getvalue()


FIT_COLUMNS = ["label", "slope", "intercept", "r_squared", "ci_half_width", "n_points",
               "prediction", "tolerance", "agrees"]


def _fit_row(label: str, fit: ExponentFit, prediction: float, tolerance: float) -> tuple:
    return (label, fit.slope, fit.intercept, fit.r_squared, fit.ci_half_width, fit.n_points,
            prediction, tolerance, fit.agrees_with(prediction, tolerance))


@dataclass
class ExperimentResult:
    kind: str
    config_hash: str
    seed: int
    tables: dict
    summary: dict
    files: dict = field(default_factory=dict)

    def text(self, name: str) -> str:
        """CSV bytes of one table as written to disk."""
        header = {"kind": self.kind, "config_hash": self.config_hash, "seed": self.seed,
                  "version": __version__, "table": name}
        return _render(self.tables[name], header)

    def write(self, out_dir) -> dict:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        files = {}
        for name in sorted(self.tables):
            target = out_dir / f"{name}.csv"
            target.write_text(self.text(name))
            files[name] = str(target)
        self.files = files
        return files


def _pmap(cfg: ExperimentConfig, fn: Callable, items: Sequence) -> list:
    """Ordered map; tasks are pure, so the thread count never changes results."""
    items = list(items)
    if cfg.n_jobs == 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=cfg.n_jobs) as ex:
        return list(ex.map(fn, items))


# ---------------------------------------------------------------------------
# Experiment kinds
# ---------------------------------------------------------------------------


def _run_fbm_validate(cfg: ExperimentConfig):
    sub = int(cfg.params.get("subgrid", 8))
    lags = [int(x) for x in cfg.params.get("lags", [1, 2, 4, 8, 16])]
    if cfg.n_steps % sub:
        raise DomainError("n_steps must be a multiple of the subgrid size")
    tg = TimeGrid(cfg.n_steps)

    def task(h):
        w = sample_fbm_array(h, tg, cfg.n_paths, cfg.d, cfg.seed)
        idx = [tg.n_steps * (k + 1) // sub for k in range(sub)]
        rows = []
        for c in range(cfg.d):
            for i in idx:
                for j in idx:
                    prod = w[:, i, c] * w[:, j, c]
                    emp = float(prod.mean())
                    se = float(prod.std(ddof=1) / math.sqrt(cfg.n_paths)) if cfg.n_paths > 1 else math.inf
                    exact = float(fbm_covariance(h, tg.points[i], tg.points[j]))
                    z = (emp - exact) / se if se > 0 else 0.0
                    rows.append((h, c + 1, tg.points[i], tg.points[j], emp, exact, se, z, abs(z) <= 4.0))
        fit = holder_exponent_estimate(w, lags)
        return rows, _fit_row(f"holder h={h!r}", fit, h, 0.05)

    cov = Table(["h", "coord", "s", "t", "empirical", "exact", "se", "z", "within_4se"])
    fits = Table(FIT_COLUMNS)
    for rows, fr in _pmap(cfg, task, cfg.h):
        for r in rows:
            cov.add(*r)
        fits.add(*fr)
    frac = float(np.mean([r[-1] for r in cov.rows]))
    return {"covariance": cov, "fits": fits}, {"fraction_within_4se": frac}


def regime_table(h_values: Sequence[float], p_values: Sequence[float], d_list: Sequence[int]) -> Table:
    """Verdict per ``(d, h, p)`` with the curve ``d/p = 1/h - 1`` marked.

    ``straddles_curve`` flags cells whose verdict differs from a grid neighbour.
    """
    tab = Table(["d", "h", "p", "d_over_p", "threshold", "margin", "verdict", "straddles_curve"])
    h_values, p_values = list(h_values), list(p_values)
    for d in d_list:
        grid = [[classify_regime(h, d, p) for p in p_values] for h in h_values]
        sign = {"weak_existence": 1, "boundary": 0, "counterexample_regime": -1}
        for i, h in enumerate(h_values):
            for j, p in enumerate(p_values):
                c = grid[i][j]
                s = sign[c.verdict]
                nb = [grid[a][b] for a, b in ((i - 1, j), (i + 1, j), (i, j - 1), (i, j + 1))
                      if 0 <= a < len(h_values) and 0 <= b < len(p_values)]
                straddle = c.verdict == "boundary" or any(sign[n.verdict] != s for n in nb)
                tab.add(d, float(h), float(p), d / float(p), 1.0 / h - 1.0, c.margin, c.verdict, straddle)
    return tab


def _grid_values(spec, default: list) -> list[float]:
    if spec is None:
        return default
    if isinstance(spec, dict):
        if "fractions" in spec:
            n = int(spec["fractions"])
            return [i / (n + 1) for i in range(1, n + 1)]
        lo, hi, n = float(spec["min"]), float(spec["max"]), int(spec["n"])
        return list(np.linspace(lo, hi, n))
    return [float(x) for x in spec]


def _run_regime_table(cfg: ExperimentConfig):
    p = cfg.params
    hs = _grid_values(p.get("h_grid"), [i / 51 for i in range(1, 51)])
    ps = _grid_values(p.get("p_grid"), [float(j) for j in range(1, 51)])
    ds = [int(d) for d in p.get("d_list", [cfg.d])]
    tab = regime_table(hs, ps, ds)
    counts = {}
    for row in tab.rows:
        counts[row[6]] = counts.get(row[6], 0) + 1
    return {"regimes": tab}, {"counts": counts, "cells": len(tab.rows)}


def _run_variation_scaling(cfg: ExperimentConfig):
    p = cfg.params
    n = int(p.get("n", 256))
    deltas = [float(x) for x in p.get("deltas", [2.0**-j for j in range(3, 10)])]
    trim = float(p.get("trim", 0.1))
    tol = float(p.get("tolerance", 0.1))
    n_list = [int(x) for x in p.get("n_list", [])]

    def task(h):
        b = build_drift(cfg.drift, cfg.d, h)
        fit, samples = variation_exponent(b, h, n, deltas, cfg.n_paths, cfg.n_steps, seed=cfg.seed, trim=trim)
        pred = 1.0 - h * cfg.d / drift_integrability(b)
        med = None
        if n_list:
            med, _ = cauchy_trend(b, h, n_list, cfg.n_paths, cfg.n_steps, seed=cfg.seed)
        return h, fit, pred, samples, med

    var = Table(["h", "delta", "trimmed_mean_1var", "median_1var"])
    fits = Table(FIT_COLUMNS)
    cauchy = Table(["h", "n_from", "n_to", "median_sup_distance"])
    summary = {}
    for h, fit, pred, samples, med in _pmap(cfg, task, cfg.h):
        for k, dl in enumerate(sorted(deltas)):
            var.add(h, dl, trimmed_mean(samples[:, k], trim), float(np.median(samples[:, k])))
        fits.add(*_fit_row(f"variation h={h!r}", fit, pred, tol))
        summary[f"h={h!r}"] = {"slope": fit.slope, "prediction": pred}
        if med is not None:
            for k in range(len(n_list) - 1):
                cauchy.add(h, n_list[k], n_list[k + 1], float(med[k]))
            summary[f"h={h!r}"]["cauchy_decreasing"] = bool(np.all(np.diff(med) < 0))
    tables = {"variation": var, "fits": fits}
    if n_list:
        tables["cauchy"] = cauchy
    return tables, summary


def _run_localtime_exponents(cfg: ExperimentConfig):
    p = cfg.params
    deltas = [float(x) for x in p.get("deltas", [2.0**-j for j in range(3, 10)])]
    offsets = [float(x) for x in p.get("space_offsets", [])]
    tol = float(p.get("tolerance", 0.1))
    trim = float(p.get("trim", 0.1))
    R = p.get("R")

    def task(h):
        fit, samples = localtime_time_exponent(h, cfg.d, deltas, cfg.n_paths, cfg.n_steps,
                                               R=None if R is None else float(R), seed=cfg.seed, trim=trim)
        space = None
        if offsets and cfg.d == 1:
            tg = TimeGrid(cfg.n_steps)
            w = sample_fbm_array(h, tg, cfg.n_paths, 1, cfg.seed)[:, :, 0]
            space = localtime_space_exponent(w, tg.dt, float(p.get("center", 0.0)), offsets, trim=trim,
                                             seed=cfg.seed)
        return h, fit, samples, space

    stats = Table(["h", "direction", "scale", "statistic"])
    fits = Table(FIT_COLUMNS)
    summary = {}
    for h, fit, samples, space in _pmap(cfg, task, cfg.h):
        for k, dl in enumerate(sorted(deltas)):
            stats.add(h, "time", dl, trimmed_mean(samples[:, k], trim))
        pred = 1.0 - h * cfg.d
        fits.add(*_fit_row(f"time h={h!r}", fit, pred, tol))
        summary[f"h={h!r}"] = {"time_slope": fit.slope, "prediction": pred}
        if space is not None:
            sfit, ss = space
            for k, rho in enumerate(offsets):
                stats.add(h, "space", rho, trimmed_mean(ss[:, k], trim))
            cap = min(1.0 / (2.0 * h) - cfg.d / 2.0, 1.0)
            fits.add(*_fit_row(f"space h={h!r}", sfit, cap, tol))
            summary[f"h={h!r}"]["space_slope"] = sfit.slope
    return {"statistics": stats, "fits": fits}, summary


def _run_skew_legall(cfg: ExperimentConfig):
    p = cfg.params
    betas = [float(b) for b in _listify(p.get("beta", [1.0]))]
    n = int(p.get("n", 256))
    walk_steps = int(p.get("walk_steps", 1025))
    tasks = [(h, beta) for h in cfg.h for beta in betas]

    def task(item):
        h, beta = item
        est, se = legall_probability(beta, n, cfg.n_paths, cfg.n_steps, seed=cfg.seed, h=h)
        wp, wse = skew_walk_probability(beta, cfg.n_paths, walk_steps, seed=cfg.seed)
        return h, beta, est, se, wp, wse

    tab = Table(["h", "beta", "n", "p_hat", "se", "ci_low", "ci_high", "walk_p", "walk_se", "limit"])
    summary = {}
    for h, beta, est, se, wp, wse in _pmap(cfg, task, tasks):
        limit = 0.5 * (1.0 + skew_parameter(beta))
        tab.add(h, beta, n, est, se, est - 1.96 * se, est + 1.96 * se, wp, wse, limit)
        summary[f"h={h!r},beta={beta!r}"] = {"p_hat": est, "se": se, "limit": limit}
    return {"legall": tab}, summary


def _run_sewing_rates(cfg: ExperimentConfig):
    p = cfg.params
    alpha = float(p.get("alpha", -0.5))
    q = float(p.get("q", 2.0))
    m = float(p.get("m", 2.0))
    T_list = [float(x) for x in p.get("T_list", [2.0**j for j in range(7)])]
    spu = int(p.get("steps_per_unit", 256))
    tol = float(p.get("tolerance", 0.1))
    f = build_drift(cfg.drift or {"type": "bump", "var": 0.01}, 1)
    dy = p.get("dyadic")
    if dy:
        k_max = int(dy.get("k_max", 11))
        k_fit = tuple(int(k) for k in dy.get("k_fit", (2, min(10, k_max - 1))))

    def task(h):
        fit, samples = integral_moment_scaling(f, h, m, T_list, alpha=alpha, q=q, n_paths=cfg.n_paths,
                                               steps_per_unit=spu, seed=cfg.seed)
        decay = None
        if dy:
            grid = SpatialGrid(1, float(dy.get("extent", 4.0)), int(dy.get("n_cells", 512)))
            decay = dyadic_decay(f.sample(grid), h, int(dy.get("n_paths", 40)), int(dy.get("n_steps", 4096)),
                                 k_max=k_max, seed=cfg.seed, k_fit=k_fit)
        return h, fit, samples, decay

    norms = Table(["h", "T", "lm_norm"])
    fits = Table(FIT_COLUMNS)
    dyad = Table(["h", "k", "median_abs_difference", "fitted_ratio", "pooled_ratio"])
    summary = {}
    for h, fit, samples, decay in _pmap(cfg, task, cfg.h):
        for k, T in enumerate(sorted(T_list)):
            norms.add(h, T, float(np.mean(np.abs(samples[:, k]) ** m) ** (1.0 / m)))
        pred = moment_exponent_prediction(h, alpha, 1, q)
        fits.add(*_fit_row(f"moment h={h!r}", fit, pred, tol))
        summary[f"h={h!r}"] = {"slope": fit.slope, "prediction": pred}
        if decay is not None:
            for k, v in enumerate(decay.medians):
                dyad.add(h, k, float(v), decay.ratio, decay.pooled_ratio)
            summary[f"h={h!r}"]["dyadic_ratio"] = decay.ratio
    tables = {"norms": norms, "fits": fits}
    if dy:
        tables["dyadic"] = dyad
    return tables, summary


def _run_counterexample_sweep(cfg: ExperimentConfig):
    p = cfg.params
    alphas = [float(a) for a in _listify(p.get("alpha", [1.0, 0.5]))]
    floors = [float(x) for x in _listify(p.get("floors", [2.0**-20]))]
    eps_list = [float(x) for x in p.get("eps_list", [2.0**-j for j in range(2, 6)])]
    scale = float(p.get("scale", 1.0))
    tasks = [(h, a) for h in cfg.h for a in alphas]

    def task(item):
        h, alpha = item
        params = CeParams(float(p.get("gamma", h - 0.05)), alpha, cfg.d)
        res = ce_sweep(h, params, cfg.n_paths, cfg.n_steps, seed=cfg.seed, floors=floors,
                       eps_list=eps_list, scale=scale)
        return h, params, res

    frac = Table(["h", "gamma", "alpha", "supercritical", "floor", "fraction_increasing", "n_paths"])
    khat = Table(["h", "alpha", "floor", "path", "eps", "t_prime", "t_doubleprime", "K_hat", "verdict"])
    summary = {}
    for h, params, res in _pmap(cfg, task, tasks):
        for fl in floors:
            fr = res["fraction_increasing"][fl]
            frac.add(h, params.gamma, params.alpha, params.supercritical, fl, fr, cfg.n_paths)
            summary[f"h={h!r},alpha={params.alpha!r},floor={fl!r}"] = fr
        for i, rep in enumerate(res["reports"]):
            for r in rep.rows:
                khat.add(h, params.alpha, r.floor, i, r.eps, r.t_prime, r.t_doubleprime, r.k_hat,
                         rep.verdicts[r.floor])
    return {"fractions": frac, "k_hat": khat}, summary


_RUNNERS = {kind: globals()[f"_run_{kind}"] for kind in KINDS}


def run_experiment(cfg: ExperimentConfig, out: str | Path | None = None, write: bool = True) -> ExperimentResult:
    """Run one experiment; writes ``<out>/<table>.csv`` and ``manifest.json`` unless ``write`` is false."""
    tables, summary = _RUNNERS[cfg.kind](cfg)
    regimes = [c.to_dict() for c in cfg.regimes]
    if regimes:
        summary = dict(summary, regimes=regimes)
    res = ExperimentResult(cfg.kind, cfg.config_hash(), int(cfg.seed), tables, _plain(summary))
    if write:
        out_dir = Path(out if out is not None else cfg.out)
        res.write(out_dir)
        manifest = {"config": {k: v for k, v in cfg.to_dict().items() if k not in _UNHASHED},
                    "config_hash": res.config_hash, "version": __version__, "tables": sorted(tables),
                    "summary": res.summary}
        text = json.dumps(_plain(manifest), sort_keys=True, indent=2) + "\n"
        (out_dir / "manifest.json").write_text(text)
        res.files["manifest"] = str(out_dir / "manifest.json")
    return res

