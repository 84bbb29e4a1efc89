"""Heat-semigroup mollification, grid Besov norms and delta approximation.

Grid conventions: ``L_p`` norms are ``(sum |f|^p dx^d)^(1/p)`` and the
``L_inf`` norm is the max over cells. Convolutions are zero-extended at the
boundary of the grid.
"""
from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence, Union

import numpy as np
from scipy import ndimage, special
from scipy.signal import fftconvolve

from .errors import DomainError, GridResolutionError
from .fitting import ExponentFit, fit_scaling_exponent

log = logging.getLogger(__name__)

__all__ = [
    "SpatialGrid",
    "GridFunction",
    "CallableDrift",
    "Measure",
    "BesovIndex",
    "BallIndicator",
    "unit_ball_volume",
    "gaussian_density",
    "heat_mollify",
    "empirical_besov_norm",
    "delta_approx_error",
    "delta_approx_slope",
    "mollified_sequence",
    "lp_norm",
]


def unit_ball_volume(d: int) -> float:
    return math.pi ** (d / 2) / math.gamma(d / 2 + 1)


def gaussian_density(x: np.ndarray, t: float) -> np.ndarray:
    """``p_t(x)`` with ``x`` of shape ``(..., d)``."""
    x = np.asarray(x, dtype=float)
    d = x.shape[-1]
    r2 = np.sum(x * x, axis=-1)
    return (2 * np.pi * t) ** (-d / 2) * np.exp(-r2 / (2 * t))


@dataclass(frozen=True)
class SpatialGrid:
    """``n_cells`` uniform cells per axis on ``[-extent, extent]^d``."""

    d: int
    extent: float
    n_cells: int

    def __post_init__(self):
        if self.d < 1:
            raise DomainError("dimension must be >= 1")
        if not self.extent > 0:
            raise DomainError("extent must be positive")
        if self.n_cells < 16:
            raise DomainError("need at least 16 cells per axis")

    @property
    def dx(self) -> float:
        return 2.0 * self.extent / self.n_cells

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n_cells,) * self.d

    @property
    def axis(self) -> np.ndarray:
        """Cell centres along one axis."""
        return -self.extent + (np.arange(self.n_cells) + 0.5) * self.dx

    @property
    def cell_volume(self) -> float:
        return self.dx**self.d

    def centers(self) -> np.ndarray:
        """All cell centres, shape ``shape + (d,)``."""
        mesh = np.meshgrid(*([self.axis] * self.d), indexing="ij")
        return np.stack(mesh, axis=-1)

    def require_resolution(self, t: float) -> None:
        if self.dx > math.sqrt(t) / 2:
            need = int(math.ceil(4 * self.extent / math.sqrt(t)))
            raise GridResolutionError(
                f"grid too coarse for heat time {t:g}: dx={self.dx:g} > sqrt(t)/2; "
                f"need n_cells >= {need}",
                required=need,
            )


@dataclass
class GridFunction:
    """Values on a :class:`SpatialGrid`; shape ``grid.shape`` or ``grid.shape + (m,)``."""

    grid: SpatialGrid
    values: np.ndarray
    p: float = 1.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape[: self.grid.d] != self.grid.shape:
            raise DomainError(f"values shape {v.shape} does not match grid {self.grid.shape}")
        if not np.all(np.isfinite(v)):
            raise DomainError("grid function has non-finite values")
        self.values = v

    @property
    def vector(self) -> bool:
        return self.values.ndim > self.grid.d

    def integral(self) -> np.ndarray | float:
        s = self.values.sum(axis=tuple(range(self.grid.d))) * self.grid.cell_volume
        return float(s) if np.ndim(s) == 0 else s

    def norm(self, p: float) -> float:
        return lp_norm(self.values, self.grid, p)

    def __add__(self, other: "GridFunction") -> "GridFunction":
        return GridFunction(self.grid, self.values + other.values, self.p)

    def __sub__(self, other: "GridFunction") -> "GridFunction":
        return GridFunction(self.grid, self.values - other.values, self.p)

    def __mul__(self, c: float) -> "GridFunction":
        return GridFunction(self.grid, self.values * c, self.p)

    __rmul__ = __mul__

    def to_csv(self, target=None) -> str:
        """Cell centres then values (one column per component)."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        g = self.grid
        cols = [f"x_{k + 1}" for k in range(g.d)]
        vals = self.values.reshape(int(np.prod(g.shape)), -1)
        cols += ["value"] if vals.shape[1] == 1 else [f"value_{k + 1}" for k in range(vals.shape[1])]
        buf.write(f"# d={g.d}\n# extent={g.extent!r}\n# n_cells={g.n_cells}\n# p={self.p!r}\n")
        w.writerow(cols)
        centers = g.centers().reshape(-1, g.d)
        for c, v in zip(centers, vals):
            w.writerow([repr(float(x)) for x in c] + [repr(float(x)) for x in v])
        text = buf.getvalue()
        if target is not None:
            Path(target).write_text(text)
        return text

    @classmethod
    def from_csv(cls, source) -> "GridFunction":
        text = Path(source).read_text()
        header, rows = {}, []
        for line in text.splitlines():
            if line.startswith("#"):
                k, _, v = line[1:].strip().partition("=")
                header[k] = v
            elif line and not line.startswith("x_"):
                rows.append([float(x) for x in line.split(",")])
        g = SpatialGrid(int(header["d"]), float(header["extent"]), int(header["n_cells"]))
        data = np.array(rows)[:, g.d :]
        vals = data.reshape(g.shape + (data.shape[1],))
        if data.shape[1] == 1:
            vals = vals[..., 0]
        return cls(g, vals, float(header.get("p", "1.0")))


@dataclass
class CallableDrift:
    """Pointwise drift ``f(x)``; ``x`` has shape ``(..., d)``, output ``(...)`` or ``(..., m)``."""

    f: Callable[[np.ndarray], np.ndarray]
    d: int = 1
    p: float = float("inf")
    label: str = ""

    def __call__(self, x):
        return self.f(np.asarray(x, dtype=float))

    def sample(self, grid: SpatialGrid, order: int = 4) -> GridFunction:
        """Cell averages by tensor Gauss-Legendre (copes with integrable point singularities off-node)."""
        xg, wg = np.polynomial.legendre.leggauss(order)
        offs = 0.5 * grid.dx * xg
        acc = None
        for idx in np.ndindex(*([order] * grid.d)):
            shift = np.array([offs[i] for i in idx])
            wt = np.prod([wg[i] for i in idx]) / 2**grid.d
            val = wt * np.asarray(self(grid.centers() + shift), dtype=float)
            acc = val if acc is None else acc + val
        return GridFunction(grid, acc, self.p, {"label": self.label})


@dataclass
class Measure:
    """Signed measure: weighted atoms plus an optional density on a grid.

    ``atoms`` is a list of ``(location, weight)``; ``weight`` is a scalar or a
    vector of drift components.
    """

    atoms: list = field(default_factory=list)
    density: GridFunction | None = None
    d: int = 1

    def total_variation(self) -> float:
        tv = sum(float(np.sum(np.abs(w))) for _, w in self.atoms)
        if self.density is not None:
            tv += float(np.sum(np.abs(self.density.values)) * self.density.grid.cell_volume)
        return tv

    def scaled(self, c: float) -> "Measure":
        return Measure(
            [(loc, np.asarray(w) * c) for loc, w in self.atoms],
            None if self.density is None else self.density * c,
            self.d,
        )


DriftSpec = Union[CallableDrift, GridFunction, Measure]


@dataclass(frozen=True)
class BesovIndex:
    alpha: float
    p: float

    def __post_init__(self):
        if not (1.0 <= self.p <= math.inf):
            raise DomainError("integrability p must lie in [1, inf]")


@dataclass(frozen=True)
class BallIndicator:
    """``1(|z - x| < R) / (v_d R^d)``."""

    center: tuple
    radius: float

    def on_grid(self, grid: SpatialGrid, supersample: int = 8) -> GridFunction:
        """Cell averages of the normalised indicator (exact overlap in 1-d)."""
        if self.radius <= 0:
            raise DomainError("radius must be positive")
        c = np.asarray(self.center, dtype=float).reshape(grid.d)
        norm = 1.0 / (unit_ball_volume(grid.d) * self.radius**grid.d)
        if grid.d == 1:
            lo = grid.axis - grid.dx / 2
            hi = lo + grid.dx
            frac = np.clip(np.minimum(hi, c[0] + self.radius) - np.maximum(lo, c[0] - self.radius), 0, None) / grid.dx
            return GridFunction(grid, frac * norm)
        sub = (np.arange(supersample) + 0.5) / supersample - 0.5
        acc = np.zeros(grid.shape)
        centers = grid.centers()
        for idx in np.ndindex(*([supersample] * grid.d)):
            z = centers + grid.dx * np.array([sub[i] for i in idx])
            acc += np.sum((z - c) ** 2, axis=-1) < self.radius**2
        return GridFunction(grid, acc / supersample**grid.d * norm)


# ---------------------------------------------------------------------------
# Convolution
# ---------------------------------------------------------------------------


def _gauss_taps(t: float, dx: float) -> np.ndarray:
    half = int(math.ceil(8.0 * math.sqrt(t) / dx))
    m = np.arange(-half, half + 1) * dx
    return np.exp(-m * m / (2 * t)) / math.sqrt(2 * math.pi * t) * dx


def _convolve_grid(values: np.ndarray, d: int, t: float, dx: float, method: str) -> np.ndarray:
    taps = _gauss_taps(t, dx)
    out = values
    for ax in range(d):
        if method == "direct":
            out = ndimage.convolve1d(out, taps, axis=ax, mode="constant", cval=0.0)
        elif method == "fft":
            shape = [1] * out.ndim
            shape[ax] = taps.size
            full = fftconvolve(out, taps.reshape(shape), mode="same", axes=ax)
            out = full
        else:
            raise DomainError(f"unknown convolution method {method!r}")
    return out


def _atoms_on_grid(measure: Measure, t: float, grid: SpatialGrid) -> np.ndarray | None:
    if not measure.atoms:
        return None
    centers = grid.centers()
    acc = None
    for loc, w in measure.atoms:
        loc = np.asarray(loc, dtype=float).reshape(grid.d)
        dens = gaussian_density(centers - loc, t)
        w = np.asarray(w, dtype=float)
        term = dens * w if w.ndim == 0 else dens[..., None] * w
        acc = term if acc is None else acc + term
    return acc


def heat_mollify(drift: DriftSpec, t: float, grid: SpatialGrid | None = None, method: str = "direct") -> GridFunction:
    """``P_t`` applied to a drift, returned on ``grid``.

    Atoms are mollified analytically (sums of Gaussians); densities and grid
    functions by discrete convolution with the tabulated Gaussian, ``direct``
    summation by default or ``fft``.
    """
    if not t > 0:
        raise DomainError("heat time must be positive")
    if isinstance(drift, GridFunction):
        grid = grid or drift.grid
        if grid != drift.grid:
            raise DomainError("grid function lives on a different grid")
        grid.require_resolution(t)
        vals = _convolve_grid(drift.values, grid.d, t, grid.dx, method)
        return GridFunction(grid, vals, drift.p, {"heat_time": t})
    if grid is None:
        raise DomainError("a spatial grid is required")
    grid.require_resolution(t)
    if isinstance(drift, CallableDrift):
        sampled = drift.sample(grid)
        vals = _convolve_grid(sampled.values, grid.d, t, grid.dx, method)
        return GridFunction(grid, vals, drift.p, {"heat_time": t})
    if isinstance(drift, Measure):
        acc = _atoms_on_grid(drift, t, grid)
        if drift.density is not None:
            dens = heat_mollify(drift.density, t, method=method).values
            acc = dens if acc is None else acc + dens
        if acc is None:
            acc = np.zeros(grid.shape)
        return GridFunction(grid, acc, 1.0, {"heat_time": t})
    raise DomainError(f"unsupported drift type {type(drift).__name__}")


def lp_norm(values: np.ndarray, grid: SpatialGrid, p: float) -> float:
    v = np.abs(np.asarray(values, dtype=float))
    if v.ndim > grid.d:
        v = np.sqrt(np.sum(v * v, axis=tuple(range(grid.d, v.ndim))))
    if math.isinf(p):
        return float(v.max())
    return float((np.sum(v**p) * grid.cell_volume) ** (1.0 / p))


def default_t_samples(grid: SpatialGrid, n: int = 25) -> np.ndarray:
    """Log-spaced heat times from the finest resolvable ``(2 dx)^2`` up to 1."""
    t_min = (2.0 * grid.dx) ** 2
    if t_min * 1e3 > 1.0:
        raise GridResolutionError("grid cannot resolve three decades of heat times", required=None)
    return np.geomspace(t_min, 1.0, n)


def empirical_besov_norm(
    f: GridFunction | Measure,
    idx: BesovIndex,
    t_samples: Sequence[float] | None = None,
    grid: SpatialGrid | None = None,
) -> float:
    """``max_t t^(-alpha/2) ||P_t f||_{L_p}`` over the sampled heat times.

    Comparable across runs only for identical ``t_samples``.
    """
    if idx.alpha >= 0:
        raise DomainError("heat characterisation is only implemented for alpha < 0")
    if grid is None:
        if isinstance(f, GridFunction):
            grid = f.grid
        elif isinstance(f, Measure) and f.density is not None:
            grid = f.density.grid
        else:
            raise DomainError("a spatial grid is required")
    ts = np.asarray(default_t_samples(grid) if t_samples is None else t_samples, dtype=float)
    if ts.size < 8 or ts.min() <= 0 or ts.max() > 1.0 or ts.max() / ts.min() < 1e3 * (1 - 1e-12):
        raise DomainError("need >= 8 heat times in (0, 1] spanning >= 3 decades")
    best = 0.0
    for t in ts:
        val = t ** (-idx.alpha / 2) * lp_norm(heat_mollify(f, t, grid).values, grid, idx.p)
        best = max(best, val)
    return best


def _delta_grid(R: float, d: int) -> SpatialGrid:
    if d == 1:
        n = int(2 ** math.ceil(math.log2(max(2048, 64.0 / R))))
        return SpatialGrid(1, 4.0, n)
    return SpatialGrid(d, 1.0, 512 if d == 2 else 64)


def delta_approx_error(R: float, eps: float, d: int = 1, grid: SpatialGrid | None = None,
                       t_samples: Sequence[float] | None = None) -> float:
    """Empirical ``B^{-eps}_1`` distance between the normalised ball ``l^{R,0}`` and ``delta_0``."""
    if not (0 < R <= 1) or not eps > 0:
        raise DomainError("need R in (0, 1] and eps > 0")
    grid = grid or _delta_grid(R, d)
    ball = BallIndicator((0.0,) * d, R).on_grid(grid)
    diff = Measure([(np.zeros(d), -1.0)], ball, d)
    return empirical_besov_norm(diff, BesovIndex(-eps, 1.0), t_samples, grid)


def delta_approx_slope(Rs: Sequence[float], eps: float, d: int = 1, grid: SpatialGrid | None = None):
    """Errors along ``Rs`` (common grid and heat times) and their log-log fit."""
    grid = grid or _delta_grid(min(Rs), d)
    ts = default_t_samples(grid, 30)
    errs = [delta_approx_error(R, eps, d, grid, ts) for R in Rs]
    return np.array(errs), fit_scaling_exponent(Rs, errs)


def mollified_sequence(b: DriftSpec, n_list: Sequence[int], grid: SpatialGrid | None = None) -> list[GridFunction]:
    """``P_{1/n} b`` for each ``n``."""
    out = []
    for n in n_list:
        if n < 1:
            raise DomainError("mollification level must be >= 1")
        g = heat_mollify(b, 1.0 / n, grid)
        g.meta["n"] = int(n)
        out.append(g)
    return out
