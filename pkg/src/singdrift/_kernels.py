"""Hot loops: numba kernels with pure-numpy fallbacks.

Each public name is bound to the numba version when numba is importable and
``SINGDRIFT_DISABLE_NUMBA`` is unset, otherwise to the numpy version. Both
versions are kept importable (``*_nb`` / ``*_np``) for the benchmark and for
the equivalence tests.
"""
from __future__ import annotations

import math

import numpy as np

from ._accel import HAS_NUMBA, njit

__all__ = [
    "HAS_NUMBA",
    "euler_grid_1d",
    "occupation_1d",
    "occupation_ball",
    "ce_euler",
]


# ---------------------------------------------------------------------------
# Euler scheme, drift tabulated on a 1-d grid, linear interpolation
# ---------------------------------------------------------------------------


@njit
def _euler_grid_1d_nb(x0, w, dt, first, dx, vals):
    n_paths, n1 = w.shape
    m = vals.shape[0]
    psi = np.zeros((n_paths, n1))
    outside = 0
    for p in range(n_paths):
        acc = 0.0
        x = x0[p]
        for i in range(n1 - 1):
            u = (x - first) / dx
            b = 0.0
            if u >= 0.0 and u <= m - 1:
                k = int(u)
                if k >= m - 1:
                    k = m - 2
                fr = u - k
                b = vals[k] * (1.0 - fr) + vals[k + 1] * fr
            else:
                outside += 1
            acc += b * dt
            psi[p, i + 1] = acc
            x = x0[p] + w[p, i + 1] + acc
    return psi, outside


def _euler_grid_1d_np(x0, w, dt, first, dx, vals):
    n_paths, n1 = w.shape
    m = vals.shape[0]
    psi = np.zeros((n_paths, n1))
    outside = 0
    x = x0.astype(float).copy()
    acc = np.zeros(n_paths)
    for i in range(n1 - 1):
        u = (x - first) / dx
        inside = (u >= 0.0) & (u <= m - 1)
        k = np.clip(np.floor(u), 0, m - 2).astype(np.int64)
        fr = u - k
        b = np.where(inside, vals[k] * (1.0 - fr) + vals[k + 1] * fr, 0.0)
        outside += int(n_paths - np.count_nonzero(inside))
        acc = acc + b * dt
        psi[:, i + 1] = acc
        x = x0 + w[:, i + 1] + acc
    return psi, outside


def euler_grid_1d(x0, w, dt, first, dx, vals):
    """Drift part ``psi`` of the left-point Euler scheme for ``dX = b(X) dt + dW``.

    ``w`` is ``(paths, n+1)`` noise with ``w[:, 0] = 0``; ``b`` is the linear
    interpolant of ``vals`` at nodes ``first + k dx`` and zero outside. Returns
    ``(psi, n_outside)`` with ``X = x0 + w + psi``.
    """
    x0 = np.ascontiguousarray(x0, dtype=np.float64)
    w = np.ascontiguousarray(w, dtype=np.float64)
    vals = np.ascontiguousarray(vals, dtype=np.float64)
    fn = _euler_grid_1d_nb if HAS_NUMBA else _euler_grid_1d_np
    psi, outside = fn(x0, w, float(dt), float(first), float(dx), vals)
    return psi, int(outside)


# ---------------------------------------------------------------------------
# Occupation of linearly interpolated 1-d paths in windows (x - R, x + R)
# ---------------------------------------------------------------------------


@njit
def _occupation_1d_nb(paths, dt, first, dx, n_x, R, t_idx):
    n_paths, n1 = paths.shape
    n_t = t_idx.shape[0]
    out = np.zeros((n_paths, n_t, n_x))
    acc = np.zeros(n_x)
    for p in range(n_paths):
        acc[:] = 0.0
        k = 0
        while k < n_t and t_idx[k] == 0:
            k += 1
        for i in range(n1 - 1):
            a = paths[p, i]
            b = paths[p, i + 1]
            lo = min(a, b)
            hi = max(a, b)
            span = hi - lo
            j0 = int(math.ceil((lo - R - first) / dx))
            j1 = int(math.floor((hi + R - first) / dx))
            if j0 < 0:
                j0 = 0
            if j1 > n_x - 1:
                j1 = n_x - 1
            for j in range(j0, j1 + 1):
                x = first + j * dx
                if span <= 0.0:
                    if abs(a - x) < R:
                        acc[j] += dt
                else:
                    ov = min(hi, x + R) - max(lo, x - R)
                    if ov > 0.0:
                        acc[j] += dt * ov / span
            while k < n_t and t_idx[k] == i + 1:
                out[p, k, :] = acc
                k += 1
    return out


def _occupation_1d_np(paths, dt, first, dx, n_x, R, t_idx):
    n_paths, n1 = paths.shape
    a = paths[:, :-1]
    b = paths[:, 1:]
    lo = np.minimum(a, b)
    hi = np.maximum(a, b)
    span = hi - lo
    flat = span <= 0.0
    safe = np.where(flat, 1.0, span)
    out = np.zeros((n_paths, len(t_idx), n_x))
    t_idx = np.asarray(t_idx)
    for j in range(n_x):
        x = first + j * dx
        ov = np.clip(np.minimum(hi, x + R) - np.maximum(lo, x - R), 0.0, None)
        occ = np.where(flat, np.where(np.abs(a - x) < R, dt, 0.0), dt * ov / safe)
        cum = np.concatenate((np.zeros((n_paths, 1)), np.cumsum(occ, axis=1)), axis=1)
        out[:, :, j] = cum[:, t_idx]
    return out


def occupation_1d(paths, dt, first, dx, n_x, R, t_idx):
    """Time spent by each linearly interpolated path in ``(x_j - R, x_j + R)`` up to ``t_idx``.

    ``x_j = first + j dx``; returns ``(paths, len(t_idx), n_x)``; ``t_idx`` must be sorted.
    """
    paths = np.ascontiguousarray(paths, dtype=np.float64)
    t_idx = np.ascontiguousarray(t_idx, dtype=np.int64)
    fn = _occupation_1d_nb if HAS_NUMBA else _occupation_1d_np
    return fn(paths, float(dt), float(first), float(dx), int(n_x), float(R), t_idx)


@njit
def _occupation_ball_nb(paths, dt, points, R, t_idx):
    n_paths, n1, d = paths.shape
    n_pts = points.shape[0]
    n_t = t_idx.shape[0]
    out = np.zeros((n_paths, n_t, n_pts))
    acc = np.zeros(n_pts)
    r2 = R * R
    for p in range(n_paths):
        acc[:] = 0.0
        k = 0
        while k < n_t and t_idx[k] == 0:
            k += 1
        for i in range(n1 - 1):
            for j in range(n_pts):
                # |a - x + u (b - a)|^2 < R^2 for u in [0, 1]
                qa = 0.0
                qb = 0.0
                qc = -r2
                for c in range(d):
                    e = paths[p, i + 1, c] - paths[p, i, c]
                    f = paths[p, i, c] - points[j, c]
                    qa += e * e
                    qb += 2.0 * e * f
                    qc += f * f
                if qa <= 0.0:
                    if qc < 0.0:
                        acc[j] += dt
                    continue
                disc = qb * qb - 4.0 * qa * qc
                if disc <= 0.0:
                    continue
                sq = math.sqrt(disc)
                u0 = (-qb - sq) / (2.0 * qa)
                u1 = (-qb + sq) / (2.0 * qa)
                if u0 < 0.0:
                    u0 = 0.0
                if u1 > 1.0:
                    u1 = 1.0
                if u1 > u0:
                    acc[j] += dt * (u1 - u0)
            while k < n_t and t_idx[k] == i + 1:
                out[p, k, :] = acc
                k += 1
    return out


def _occupation_ball_np(paths, dt, points, R, t_idx):
    n_paths = paths.shape[0]
    a = paths[:, :-1, :]
    e = paths[:, 1:, :] - a
    qa = np.sum(e * e, axis=-1)
    out = np.zeros((n_paths, len(t_idx), points.shape[0]))
    for j, x in enumerate(points):
        f = a - x
        qb = 2.0 * np.sum(e * f, axis=-1)
        qc = np.sum(f * f, axis=-1) - R * R
        disc = qb * qb - 4.0 * qa * qc
        safe_a = np.where(qa > 0, qa, 1.0)
        sq = np.sqrt(np.clip(disc, 0.0, None))
        u0 = np.clip((-qb - sq) / (2 * safe_a), 0.0, None)
        u1 = np.clip((-qb + sq) / (2 * safe_a), None, 1.0)
        frac = np.where(disc > 0, np.clip(u1 - u0, 0.0, None), 0.0)
        frac = np.where(qa > 0, frac, (qc < 0).astype(float))
        cum = np.concatenate((np.zeros((n_paths, 1)), np.cumsum(dt * frac, axis=1)), axis=1)
        out[:, :, j] = cum[:, t_idx]
    return out


def occupation_ball(paths, dt, points, R, t_idx):
    """Time spent by ``(paths, n+1, d)`` linear interpolants in balls ``B(points[j], R)``."""
    paths = np.ascontiguousarray(paths, dtype=np.float64)
    points = np.ascontiguousarray(points, dtype=np.float64)
    t_idx = np.ascontiguousarray(t_idx, dtype=np.int64)
    fn = _occupation_ball_nb if HAS_NUMBA else _occupation_ball_np
    return fn(paths, float(dt), points, float(R), t_idx)


# ---------------------------------------------------------------------------
# Counterexample dynamics: dX^i = -sign(X^i) |X|^-alpha 1(|X|<1) dt + df^i
# ---------------------------------------------------------------------------


@njit
def _ce_euler_nb(forcing, dt, alpha, floor):
    n_paths, n1, d = forcing.shape
    x = np.zeros((n_paths, n1, d))
    y = np.zeros(d)
    for p in range(n_paths):
        for i in range(n1 - 1):
            r = 0.0
            for c in range(d):
                r += x[p, i, c] * x[p, i, c]
            r = math.sqrt(r)
            for c in range(d):
                xi = x[p, i, c]
                step = 0.0
                if r < 1.0 and xi != 0.0:
                    rr = r if r > floor else floor
                    step = -math.copysign(1.0, xi) * rr ** (-alpha) * dt
                    # the drift only pulls towards zero; never past it
                    if abs(step) > abs(xi):
                        step = -xi
                y[c] = xi + step
            for c in range(d):
                x[p, i + 1, c] = y[c] + forcing[p, i + 1, c] - forcing[p, i, c]
    return x


def _ce_euler_np(forcing, dt, alpha, floor):
    n_paths, n1, d = forcing.shape
    x = np.zeros((n_paths, n1, d))
    df = np.diff(forcing, axis=1)
    for i in range(n1 - 1):
        xi = x[:, i, :]
        r = np.sqrt(np.sum(xi * xi, axis=1))
        rr = np.maximum(r, floor)
        mag = np.where(r < 1.0, rr ** (-alpha) * dt, 0.0)[:, None]
        step = -np.sign(xi) * mag
        step = np.where(np.abs(step) > np.abs(xi), -xi, step)
        x[:, i + 1, :] = xi + step + df[:, i, :]
    return x


def ce_euler(forcing, dt, alpha, floor):
    """Euler scheme with singularity floor; the drift step is clipped so no coordinate crosses 0."""
    forcing = np.ascontiguousarray(forcing, dtype=np.float64)
    fn = _ce_euler_nb if HAS_NUMBA else _ce_euler_np
    return fn(forcing, float(dt), float(alpha), float(floor))
