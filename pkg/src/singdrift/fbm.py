"""Fractional Brownian motion: exact sampling and Volterra transforms.

The Volterra kernel is normalised so that ``Var(W_t) = t**(2h)``; the
constant is computed once per ``h`` by quadrature and exposed through
:func:`kernel_constant` so that output metadata can record it.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import special
from scipy.integrate import quad
from scipy.linalg import cholesky, toeplitz
from scipy.signal import fftconvolve

from .errors import DomainError, NumericalError
from .fitting import ExponentFit, fit_scaling_exponent

__all__ = [
    "TimeGrid",
    "FbmPath",
    "VolterraKernelMatrix",
    "check_hurst",
    "kernel_value",
    "kernel_constant",
    "conditional_variance",
    "fbm_covariance",
    "sample_fbm",
    "sample_fbm_array",
    "sample_brownian_array",
    "volterra_matrix",
    "volterra_forward",
    "inverse_transform",
    "roundtrip_error",
    "holder_exponent_estimate",
    "path_rng",
    "write_path_csv",
    "read_path_csv",
]

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(20)


def check_hurst(h: float) -> float:
    h = float(h)
    if not 0.0 < h < 1.0:
        raise DomainError(f"Hurst parameter must lie in (0, 1), got {h}")
    return h


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid ``t_i = i * horizon / n_steps`` on ``[0, horizon]``."""

    n_steps: int
    horizon: float = 1.0

    def __post_init__(self):
        if int(self.n_steps) < 1:
            raise DomainError("n_steps must be positive")
        if not self.horizon > 0:
            raise DomainError("horizon must be positive")

    @property
    def dt(self) -> float:
        return self.horizon / self.n_steps

    @property
    def points(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) * self.dt

    def index(self, t: float) -> int:
        """Grid index of ``t``; raises if ``t`` is not (numerically) on the grid."""
        i = int(round(t / self.dt))
        if i < 0 or i > self.n_steps or abs(i * self.dt - t) > 1e-9 * max(1.0, self.horizon):
            raise DomainError(f"time {t} is not a grid point")
        return i


@dataclass
class FbmPath:
    """A sampled ``d``-dimensional path; ``values`` has shape ``(n_steps + 1, d)``."""

    grid: TimeGrid
    values: np.ndarray
    h: float
    seed: int = 0
    index: int = 0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if v.shape[0] != self.grid.n_steps + 1:
            raise DomainError("path length does not match grid")
        self.values = v

    @property
    def d(self) -> int:
        return self.values.shape[1]

    @property
    def increments(self) -> np.ndarray:
        return np.diff(self.values, axis=0)


# ---------------------------------------------------------------------------
# Kernel
# ---------------------------------------------------------------------------


def _gl(f, a: float, b: float) -> float:
    x = 0.5 * (b - a) * _GL_NODES + 0.5 * (b + a)
    return 0.5 * (b - a) * float(np.dot(_GL_WEIGHTS, f(x)))


def _graded_gl(f, upper: float, knee: float, tol: float = 1e-12) -> float:
    """Integrate ``f`` on ``[0, upper]`` where ``f`` varies on scale ``knee`` near 0.

    Composite Gauss-Legendre on geometrically graded panels; panels are halved
    until two successive estimates agree to ``tol``.
    """
    if upper <= 0.0:
        return 0.0
    ratio = max(knee / upper, 1e-300)
    n_levels = int(np.clip(np.ceil(-np.log2(ratio)) + 4, 4, 1100))
    prev = None
    for refine in (1, 2, 4, 8):
        k = np.arange(n_levels * refine, -1, -1, dtype=float)
        edges = np.concatenate(([0.0], upper * np.exp2(-k / refine)))
        total = sum(_gl(f, a, b) for a, b in zip(edges[:-1], edges[1:]))
        if prev is not None and abs(total - prev) <= tol * max(abs(total), 1e-300):
            return total
        prev = total
    return total


def _raw_kernel(h: float, t: float, s: float) -> float:
    """Kernel with unit constant, via singularity-removing substitution."""
    if h > 0.5:
        a = h - 0.5
        p = 1.0 / a
        upper = (t - s) ** a
        # (r - s)^(h - 3/2) dr = du / a with u = (r - s)^a; integrand smooth in u
        inner = _graded_gl(lambda u: (s + u**p) ** a, upper, s**a) / a
        return s ** (-a) * inner
    a = h + 0.5
    q = 1.0 / a
    upper = (t - s) ** a
    inner = _graded_gl(lambda u: (s + u**q) ** (h - 1.5), upper, s**a) / a
    return t ** (h - 0.5) * s ** (0.5 - h) * (t - s) ** (h - 0.5) + (0.5 - h) * s ** (0.5 - h) * inner


def _raw_kernel_closed(h: float, t: np.ndarray, s: np.ndarray) -> np.ndarray:
    """Vectorised raw kernel through the Gauss hypergeometric closed form."""
    t = np.asarray(t, dtype=float)
    s = np.asarray(s, dtype=float)
    z = (t - s) / t
    if h > 0.5:
        a, b = h - 1.5, h - 0.5
        inner = (t - s) ** (a + 1) * t**b * special.hyp2f1(-b, 1.0, a + 2, z) / (a + 1)
        return s ** (0.5 - h) * inner
    a, b = h - 0.5, h - 1.5
    inner = (t - s) ** (a + 1) * t**b * special.hyp2f1(-b, 1.0, a + 2, z) / (a + 1)
    return t ** (h - 0.5) * s ** (0.5 - h) * (t - s) ** (h - 0.5) + (0.5 - h) * s ** (0.5 - h) * inner


@lru_cache(maxsize=256)
def kernel_constant(h: float) -> float:
    """Constant making ``int_0^t K(t, s)^2 ds = t**(2h)``.

    For ``h = 1/2`` it is 1. The raw kernel squared behaves like
    ``s**(1-2h)`` / ``s**(2h-1)`` at 0 and ``(1-s)**(2h-1)`` at 1; both are
    absorbed into the algebraic weight of QUADPACK's ``qawse``.
    """
    h = check_hurst(h)
    if h == 0.5:
        return 1.0
    w0 = 1.0 - 2.0 * h if h > 0.5 else 2.0 * h - 1.0
    w1 = 2.0 * h - 1.0 if h < 0.5 else 0.0

    def g(s):
        # the weighted integrand is flat at both ends
        s = min(max(s, 1e-13), 1.0 - 1e-15)
        if s < 1e-3:
            # hyp2f1 loses digits as z -> 1, where the weight puts much of the mass for small h
            k = _raw_kernel(h, 1.0, s)
        else:
            k = float(_raw_kernel_closed(h, np.array(1.0), np.array(s)))
        return k * k / (s**w0 * (1.0 - s) ** w1)

    var, err = quad(g, 0.0, 1.0, weight="alg", wvar=(w0, w1), limit=400, epsabs=0, epsrel=1e-10)
    if not np.isfinite(var) or var <= 0:
        raise NumericalError(f"kernel normalisation failed for h={h}")
    return float(1.0 / np.sqrt(var))


def kernel_value(h: float, t: float, s: float) -> float:
    """Volterra kernel ``K_h(t, s)`` for ``0 < s < t``."""
    h = check_hurst(h)
    t, s = float(t), float(s)
    if not (0.0 < s < t):
        raise DomainError(f"kernel needs 0 < s < t, got s={s}, t={t}")
    if h == 0.5:
        return 1.0
    return kernel_constant(h) * _raw_kernel(h, t, s)


def kernel_values(h: float, t, s) -> np.ndarray:
    """Vectorised :func:`kernel_value` (closed form); no domain checks."""
    h = check_hurst(h)
    if h == 0.5:
        return np.ones(np.broadcast(np.asarray(t), np.asarray(s)).shape)
    return kernel_constant(h) * _raw_kernel_closed(h, t, s)


def conditional_variance(h: float, u: float, t: float) -> float:
    """``sigma^2(u, t) = int_u^t K_h(t, r)^2 dr``: variance of ``W_t`` given the past up to ``u``."""
    h = check_hurst(h)
    if not 0.0 <= u <= t:
        raise DomainError("need 0 <= u <= t")
    if u == t:
        return 0.0
    if h == 0.5:
        return t - u
    if u == 0.0:
        return t ** (2 * h)
    c = kernel_constant(h)
    wa = 2.0 * h - 1.0  # K^2 ~ (t - r)^(2h-1) at r = t
    mid = 0.5 * (u + t)

    def g_end(r):
        r = min(r, t * (1 - 1e-16))
        k = c * float(_raw_kernel_closed(h, np.array(t), np.array(r)))
        return k * k / (t - r) ** wa

    def g_mid(r):
        k = c * float(_raw_kernel_closed(h, np.array(t), np.array(r)))
        return k * k

    right = quad(g_end, mid, t, weight="alg", wvar=(0.0, wa), limit=200, epsrel=1e-11)[0]
    left = quad(g_mid, u, mid, limit=200, epsrel=1e-11)[0]
    return left + right


# ---------------------------------------------------------------------------
# Covariance and exact sampling
# ---------------------------------------------------------------------------


def fbm_covariance(h: float, s, t):
    """``Cov(W_s, W_t) = (s^2h + t^2h - |t - s|^2h) / 2``."""
    h = check_hurst(h)
    s = np.asarray(s, dtype=float)
    t = np.asarray(t, dtype=float)
    if np.any(s < 0) or np.any(t < 0):
        raise DomainError("fbm covariance needs nonnegative times")
    two = 2.0 * h
    out = 0.5 * (s**two + t**two - np.abs(t - s) ** two)
    return float(out) if out.ndim == 0 else out


def path_rng(seed: int, index: int) -> np.random.Generator:
    """Independent substream for path ``index`` of an ensemble seeded by ``seed``."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), int(index)])))


def _fgn_autocov(h: float, n: int) -> np.ndarray:
    k = np.arange(n + 1, dtype=float)
    two = 2.0 * h
    return 0.5 * ((k + 1) ** two - 2 * k**two + np.abs(k - 1) ** two)


@lru_cache(maxsize=32)
def _circulant_sqrt_eigs(h: float, n: int) -> np.ndarray | None:
    gamma = _fgn_autocov(h, n)
    row = np.concatenate((gamma, gamma[-2:0:-1]))
    eig = np.fft.fft(row).real
    if eig.min() < -1e-10 * eig.max():
        return None
    return np.sqrt(np.clip(eig, 0.0, None) / row.size)


@lru_cache(maxsize=8)
def _cholesky_factor(h: float, n: int) -> np.ndarray:
    gamma = _fgn_autocov(h, n)[:n]
    try:
        return cholesky(toeplitz(gamma), lower=True)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(
            f"circulant embedding not nonnegative-definite and Cholesky fallback failed (h={h}, n={n})"
        ) from exc


def _fgn_increments(h: float, n: int, rng: np.random.Generator, d: int) -> np.ndarray:
    """``(n, d)`` unit-step fractional Gaussian noise."""
    if h == 0.5:
        return rng.standard_normal((d, n)).T
    lam = _circulant_sqrt_eigs(h, n)
    if lam is None:
        z = rng.standard_normal((d, n))
        return (_cholesky_factor(h, n) @ z.T)
    m = lam.size
    z = rng.standard_normal((d, 2, m))
    spec = lam * (z[:, 0] + 1j * z[:, 1])
    return np.fft.fft(spec, axis=-1).real[:, :n].T


def sample_fbm_array(
    h: float, grid: TimeGrid, n_paths: int, d: int = 1, seed: int = 0, start: int = 0
) -> np.ndarray:
    """Paths ``start .. start + n_paths - 1`` of the ensemble as ``(n_paths, n_steps + 1, d)``.

    Path ``i`` only depends on ``(seed, i)``, so chunked or parallel generation
    reproduces the same ensemble bit for bit.
    """
    h = check_hurst(h)
    n = grid.n_steps
    if n < 2:
        raise DomainError("need at least 2 steps")
    if n_paths < 1:
        raise DomainError("need at least one path")
    scale = grid.dt**h
    out = np.zeros((n_paths, n + 1, d))
    for k in range(n_paths):
        rng = path_rng(seed, start + k)
        out[k, 1:] = np.cumsum(_fgn_increments(h, n, rng, d), axis=0) * scale
    return out


def sample_brownian_array(grid: TimeGrid, n_paths: int, d: int = 1, seed: int = 0, start: int = 0):
    return sample_fbm_array(0.5, grid, n_paths, d, seed, start)


def sample_fbm(h: float, grid: TimeGrid, n_paths: int, d: int = 1, seed: int = 0) -> list[FbmPath]:
    """Exact fBM samples (circulant embedding, dense Cholesky fallback)."""
    arr = sample_fbm_array(h, grid, n_paths, d, seed)
    return [FbmPath(grid, arr[k], h, seed, k) for k in range(n_paths)]


# ---------------------------------------------------------------------------
# Volterra transforms
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class VolterraKernelMatrix:
    """Lower-triangular ``K[i, j]``: average of ``K_h(t_i, .)`` over cell ``j``, rows scaled to variance ``t_i**(2h)``."""

    h: float
    grid: TimeGrid
    entries: np.ndarray

    def conditional_variance(self, i: int, k: int) -> float:
        """Discrete ``sigma^2(t_i, t_k)`` of the model ``W_k = sum_j K[k, j] dB_j``."""
        if i >= k:
            return 0.0
        row = self.entries[k, i:k]
        return float(np.dot(row, row) * self.grid.dt)


_CELL_GL = np.polynomial.legendre.leggauss(3)


@lru_cache(maxsize=16)
def _jacobi_rule(alpha: float, beta: float, n: int = 8):
    """Nodes/weights on [0, 1] for weight ``(1 - x)**alpha * x**beta``."""
    x, w = special.roots_jacobi(n, alpha, beta)
    return 0.5 * (x + 1.0), w / 2.0 ** (1.0 + alpha + beta)


@lru_cache(maxsize=4)
def _volterra_entries(h: float, n: int, horizon: float) -> np.ndarray:
    """Cell averages of the kernel, rows rescaled to the exact variance.

    Interior cells use 3-point Gauss-Legendre; the cell touching the diagonal
    carries the ``(t - s)**(h - 1/2)`` factor and the first cell the power of
    ``s`` at the origin, both integrated with Gauss-Jacobi rules.
    """
    dt = horizon / n
    K = np.zeros((n + 1, n))
    if h == 0.5:
        K[np.tril_indices(n + 1, -1, n)] = 1.0
        K.setflags(write=False)
        return K
    a_diag = h - 0.5
    b0 = 0.5 - h if h > 0.5 else h - 0.5
    xd, wd = _jacobi_rule(a_diag, 0.0)
    x0, w0 = _jacobi_rule(0.0, b0)
    xb, wb = _jacobi_rule(a_diag, b0)
    gx = 0.5 * (_CELL_GL[0] + 1.0)
    gw = 0.5 * _CELL_GL[1]
    left = np.arange(n) * dt
    for i in range(1, n + 1):
        t = i * dt
        if i == 1:
            s = xb * dt
            K[1, 0] = np.dot(wb, kernel_values(h, t, s) / ((t - s) ** a_diag * s**b0)) * dt**(a_diag + b0)
        else:
            s = left[1 : i - 1, None] + gx[None, :] * dt
            K[i, 1 : i - 1] = kernel_values(h, t, s) @ gw
            s = xd * dt + left[i - 1]
            K[i, i - 1] = np.dot(wd, kernel_values(h, t, s) / (t - s) ** a_diag) * dt**a_diag
            s = x0 * dt
            K[i, 0] = np.dot(w0, kernel_values(h, t, s) / s**b0) * dt**b0
        row = K[i, :i]
        K[i, :i] = row * np.sqrt(t ** (2 * h) / (np.dot(row, row) * dt))
    K.setflags(write=False)
    return K


def volterra_matrix(h: float, grid: TimeGrid) -> VolterraKernelMatrix:
    """Cell-averaged kernel matrix, cached per ``(h, grid)``."""
    h = check_hurst(h)
    return VolterraKernelMatrix(h, grid, _volterra_entries(h, grid.n_steps, float(grid.horizon)))


def volterra_forward(b_path, h_target: float, grid: TimeGrid | None = None):
    """Map Brownian path(s) to fBM via ``W_i = sum_{j<i} K[i, j] (B_{j+1} - B_j)``.

    Accepts an :class:`FbmPath` with ``h = 1/2`` or a raw array whose second
    to last axis is time (``(n+1,)``, ``(n+1, d)`` or ``(paths, n+1, d)``).
    """
    h_target = check_hurst(h_target)
    if isinstance(b_path, FbmPath):
        if b_path.h != 0.5:
            raise DomainError("volterra_forward expects a Brownian path (h = 1/2)")
        if grid is not None and grid != b_path.grid:
            raise DomainError("grid mismatch")
        out = volterra_forward(b_path.values, h_target, b_path.grid)
        return FbmPath(b_path.grid, out, h_target, b_path.seed, b_path.index,
                       {"kernel_constant": kernel_constant(h_target)})
    if grid is None:
        raise DomainError("grid required for raw arrays")
    arr = np.asarray(b_path, dtype=float)
    squeeze = arr.ndim == 1
    if squeeze:
        arr = arr[:, None]
    time_axis = arr.ndim - 2
    if arr.shape[time_axis] != grid.n_steps + 1:
        raise DomainError("grid mismatch")
    if h_target == 0.5:
        out = arr.copy()
    else:
        K = _volterra_entries(h_target, grid.n_steps, float(grid.horizon))
        inc = np.diff(arr, axis=time_axis)
        out = np.einsum("ij,...jd->...id", K, inc)
    return out[:, 0] if squeeze else out


def _cell_power_avg(a: float, n: int, dt: float) -> np.ndarray:
    """Average of ``s**a`` over each grid cell ``[j dt, (j+1) dt]``."""
    j = np.arange(n + 1, dtype=float)
    edges = (j * dt) ** (a + 1.0)
    return np.diff(edges) / ((a + 1.0) * dt)


def _frac_stieltjes(dg: np.ndarray, order: float, dt: float) -> np.ndarray:
    """``I^order g`` on grid points from increments of a piecewise-linear ``g`` (``g(0) = 0``).

    Uses ``I^a g(t) = int_0^t (t - s)^a / Gamma(a + 1) dg(s)`` for ``a > -1``; for
    ``a <= 0`` this is ``d/dt I^(a+1) g`` evaluated exactly on the interpolant.
    """
    n = dg.shape[0]
    k = np.arange(1, n + 1, dtype=float)
    w = dt**order * (k ** (order + 1) - (k - 1) ** (order + 1)) / special.gamma(order + 2)
    out = np.zeros((n + 1,) + dg.shape[1:])
    if dg.ndim == 1:
        out[1:] = fftconvolve(w, dg)[:n]
    else:
        out[1:] = fftconvolve(w[:, None], dg, axes=0)[:n]
    return out


def _pi_tilde(g: np.ndarray, a: float, dt: float) -> np.ndarray:
    """``t^a g(t) - a int_0^t s^(a-1) g(s) ds = int_0^t s^a dg(s)`` for ``g(0) = 0``."""
    dg = np.diff(g, axis=0)
    w = _cell_power_avg(a, dg.shape[0], dt)
    if dg.ndim > 1:
        w = w[:, None]
    out = np.zeros_like(g)
    out[1:] = np.cumsum(w * dg, axis=0)
    return out


def _picard_scale(h: float) -> float:
    # the normalised kernel equals this multiple of the Riemann-Liouville operator chain
    return kernel_constant(h) * special.gamma(h - 0.5 if h > 0.5 else h + 0.5)


def inverse_transform(w_path: FbmPath, refine: int = 1) -> FbmPath:
    """Recover the driving Brownian motion ``B`` from ``W`` by the operator chain.

    ``B = Pi^(h-1/2) I^(1/2-h) Pi^(1/2-h) W`` with ``Pi^a g = int s^a dg`` and
    Riemann-Liouville ``I``, divided by the kernel normalisation. The input is
    treated as piecewise linear; ``refine > 1`` evaluates the chain on a grid
    ``refine`` times finer and subsamples.
    """
    h = w_path.h
    if h == 0.5:
        return FbmPath(w_path.grid, w_path.values.copy(), 0.5, w_path.seed, w_path.index)
    grid = w_path.grid
    v = w_path.values
    if refine > 1:
        n_f = grid.n_steps * refine
        tf = np.arange(n_f + 1) * (grid.horizon / n_f)
        v = np.stack([np.interp(tf, grid.points, v[:, c]) for c in range(v.shape[1])], axis=1)
        dt = grid.horizon / n_f
    else:
        dt = grid.dt
    g1 = _pi_tilde(v, 0.5 - h, dt)
    g2 = _frac_stieltjes(np.diff(g1, axis=0), 0.5 - h, dt)
    b = _pi_tilde(g2, h - 0.5, dt) / _picard_scale(h)
    if refine > 1:
        b = b[::refine]
    if not np.all(np.isfinite(b)):
        raise NumericalError("singular quadrature near t=0 produced non-finite values")
    meta = {"refine": refine, "conditioning_note": "continuity of the inverse map is only known for h<1/2"}
    return FbmPath(grid, b, 0.5, w_path.seed, w_path.index, meta)


def roundtrip_error(w_path: FbmPath, refine: int = 1) -> float:
    """``sup|Psi(Phi(W)) - W| / sup|W|``."""
    b = inverse_transform(w_path, refine)
    w2 = volterra_forward(b.values, w_path.h, w_path.grid)
    return float(np.max(np.abs(w2 - w_path.values)) / np.max(np.abs(w_path.values)))


# ---------------------------------------------------------------------------
# Holder exponent
# ---------------------------------------------------------------------------


def holder_exponent_estimate(paths, lags: Sequence[int]) -> ExponentFit:
    """Slope of log median |increment| against log lag (lags in grid steps).

    ``paths`` is an :class:`FbmPath`, a list of them, or an array
    ``(paths, n+1, d)``; increments from all paths and coordinates are pooled.
    """
    if isinstance(paths, FbmPath):
        arr, dt = paths.values[None], paths.grid.dt
    elif isinstance(paths, (list, tuple)):
        arr, dt = np.stack([p.values for p in paths]), paths[0].grid.dt
    else:
        arr = np.asarray(paths, dtype=float)
        if arr.ndim == 2:
            arr = arr[None]
        dt = 1.0 / (arr.shape[1] - 1)
    lags = [int(l) for l in lags]
    if len(lags) < 4:
        raise DomainError("need at least 4 lags")
    med = []
    for lag in lags:
        inc = np.abs(arr[:, lag:] - arr[:, :-lag])
        med.append(float(np.median(inc)))
    if max(med) == 0.0:
        raise DomainError("degenerate (constant) path")
    return fit_scaling_exponent(np.array(lags) * dt, med)


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------


def write_path_csv(path: FbmPath, target) -> str:
    """Write ``t, x_1..x_d`` with a ``# key=value`` header; returns the text."""
    buf = io.StringIO()
    buf.write(f"# h={path.h!r}\n# seed={path.seed}\n# n_steps={path.grid.n_steps}\n")
    buf.write(f"# horizon={path.grid.horizon!r}\n# index={path.index}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t"] + [f"x_{k + 1}" for k in range(path.d)])
    for t, row in zip(path.grid.points, path.values):
        w.writerow([repr(float(t))] + [repr(float(x)) for x in row])
    text = buf.getvalue()
    if target is not None:
        Path(target).write_text(text)
    return text


def read_path_csv(source) -> FbmPath:
    text = Path(source).read_text() if not isinstance(source, io.StringIO) else source.getvalue()
    header = {}
    rows = []
    for line in text.splitlines():
        if line.startswith("#"):
            k, _, v = line[1:].strip().partition("=")
            header[k] = v
        elif line and not line.startswith("t,"):
            rows.append([float(x) for x in line.split(",")])
    data = np.array(rows)
    grid = TimeGrid(int(header["n_steps"]), float(header.get("horizon", "1.0")))
    return FbmPath(grid, data[:, 1:], float(header["h"]), int(header["seed"]), int(header.get("index", 0)))
