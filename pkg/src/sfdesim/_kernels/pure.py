"""Pure Python fallback kernels for the hot recursion loops.

These mirror the compiled kernels in `_speedups` operation for operation:
same evaluation order, same projection branches, same update sequence
(drift, then Brownian columns in order, then jumps).  For scalar equations
with one Brownian component a float-only loop avoids per-step numpy
overhead; it computes the identical sequence of floating point operations.

Both kernels return the index of the first step whose state is non-finite,
or -1 when the whole path is finite.  Callers turn a nonnegative index into
a diagnostic error.
"""

from __future__ import annotations

import math

import numpy as np

from ..coefficients import (
    KIND_LOG_GROWTH,
    BoundPlan,
    plan_diffusion,
    plan_drift,
    plan_jump,
)

__all__ = ["em_discrete", "em_dense"]


def _scalar_atom(v, i, fr, radius):
    # Projection applies to the bracketing nodes before interpolation,
    # matching node-wise truncation of the segment.
    if radius == math.inf:
        if fr == 0.0:
            return v[i]
        return (1.0 - fr) * v[i] + fr * v[i + 1]
    if fr == 0.0:
        x = v[i]
        nr = math.sqrt(x * x)
        return x if nr <= radius else x * (radius / nr)
    x0 = v[i]
    nr = math.sqrt(x0 * x0)
    if nr > radius:
        x0 = x0 * (radius / nr)
    x1 = v[i + 1]
    nr = math.sqrt(x1 * x1)
    if nr > radius:
        x1 = x1 * (radius / nr)
    return (1.0 - fr) * x0 + fr * x1


def _scalar_coeffs(bound: BoundPlan, v, offset):
    node, frac, radius = bound.node, bound.frac, bound.radius
    q = node.shape[0]
    if bound.kind == KIND_LOG_GROWTH:
        x_now = _scalar_atom(v, offset + int(node[q - 1]), float(frac[q - 1]), radius)
        x_lag = _scalar_atom(v, offset + int(node[0]), float(frac[0]), radius)
        psi_now = x_now * (1.0 + math.log1p(math.sqrt(x_now * x_now))) ** 0.25
        psi_lag = x_lag * (1.0 + math.log1p(math.sqrt(x_lag * x_lag))) ** 0.25
        s = bound.scales
        return s[0] * psi_now, s[1] * psi_now, s[2] * psi_lag
    wf, wg, wh = bound.drift_w, bound.diff_w, bound.jump_w
    x0 = _scalar_atom(v, offset + int(node[0]), float(frac[0]), radius)
    f = wf[0, 0, 0] * x0
    g = wg[0, 0, 0, 0] * x0
    h = wh[0, 0, 0] * x0
    for a in range(1, q):
        xa = _scalar_atom(v, offset + int(node[a]), float(frac[a]), radius)
        f = f + wf[a, 0, 0] * xa
        g = g + wg[a, 0, 0, 0] * xa
        h = h + wh[a, 0, 0] * xa
    return f, g, h


def _em_discrete_scalar(bound, nodes, n_lags, dt, db, dn):
    v = nodes.ravel()
    dbf = db.ravel()
    steps = dn.shape[0]
    for k in range(steps):
        f, g, h = _scalar_coeffs(bound, v, k)
        y = v[n_lags + k] + f * dt
        y = y + g * dbf[k]
        y = y + h * float(dn[k])
        if not math.isfinite(y):
            return k
        v[n_lags + k + 1] = y
    return -1


def _em_dense_scalar(bound, coarse, n_lags, r, dt, fine_step, bcum, pcum, out):
    v = coarse.ravel()
    bc = bcum.ravel()
    oc = out.ravel()
    cells = (out.shape[0] - 1) // r
    oc[0] = v[n_lags]
    for k in range(cells):
        f, g, h = _scalar_coeffs(bound, v, k)
        y0 = v[n_lags + k]
        kr = k * r
        b0 = bc[kr]
        p0 = pcum[kr]
        for j in range(1, r + 1):
            elapsed = dt if j == r else j * fine_step
            y = y0 + f * elapsed
            y = y + g * (bc[kr + j] - b0)
            y = y + h * float(pcum[kr + j] - p0)
            if not math.isfinite(y):
                return k
            oc[kr + j] = y
    return -1


def em_discrete(
    bound: BoundPlan,
    nodes: np.ndarray,
    n_lags: int,
    dt: float,
    db: np.ndarray,
    dn: np.ndarray,
) -> int:
    """Fill nodes[n_lags+1:] with the one-step recursion.

    nodes holds n_lags+1 prefilled history rows followed by len(dn) rows to
    compute.  db is (steps, m), dn (steps,) int64 jump counts per cell.
    """
    # overflow is reported through the returned step index, not a warning
    with np.errstate(over="ignore", invalid="ignore"):
        if bound.dim == 1 and bound.brownian_dim == 1:
            return _em_discrete_scalar(bound, nodes, n_lags, dt, db, dn)
        steps = dn.shape[0]
        m = db.shape[1]
        for k in range(steps):
            f = plan_drift(bound, nodes, k)
            g = plan_diffusion(bound, nodes, k)
            h = plan_jump(bound, nodes, k)
            y = nodes[n_lags + k] + f * dt
            for l in range(m):
                y = y + g[:, l] * db[k, l]
            y = y + h * float(dn[k])
            if not np.all(np.isfinite(y)):
                return k
            nodes[n_lags + k + 1] = y
        return -1


def em_dense(
    bound: BoundPlan,
    coarse_nodes: np.ndarray,
    n_lags: int,
    r: int,
    dt: float,
    fine_step: float,
    brownian_cum: np.ndarray,
    poisson_cum: np.ndarray,
    out: np.ndarray,
) -> int:
    """Evaluate the continuous-time extension of a coarse path on the fine
    lattice, writing the (fine_cells + 1) rows of out.

    Within coarse cell k the coefficients stay frozen at the cell's left
    segment and the path follows the fine noise exactly:

        y(t) = y(k dt) + f (t - k dt) + g (B(t) - B(k dt)) + h (N(t) - N(k dt))

    The final fine node of each coarse cell reproduces the discrete
    recursion bit for bit: the elapsed time is taken as dt itself there and
    cumulative differences equal the coarse increments by construction.
    """
    with np.errstate(over="ignore", invalid="ignore"):
        if bound.dim == 1 and bound.brownian_dim == 1:
            return _em_dense_scalar(
                bound, coarse_nodes, n_lags, r, dt, fine_step,
                brownian_cum, poisson_cum, out,
            )
        cells = (out.shape[0] - 1) // r
        m = brownian_cum.shape[1]
        out[0] = coarse_nodes[n_lags]
        for k in range(cells):
            f = plan_drift(bound, coarse_nodes, k)
            g = plan_diffusion(bound, coarse_nodes, k)
            h = plan_jump(bound, coarse_nodes, k)
            y0 = coarse_nodes[n_lags + k]
            kr = k * r
            for j in range(1, r + 1):
                elapsed = dt if j == r else j * fine_step
                y = y0 + f * elapsed
                for l in range(m):
                    y = y + g[:, l] * (
                        brownian_cum[kr + j, l] - brownian_cum[kr, l]
                    )
                y = y + h * float(poisson_cum[kr + j] - poisson_cum[kr])
                if not np.all(np.isfinite(y)):
                    return k
                out[kr + j] = y
        return -1
