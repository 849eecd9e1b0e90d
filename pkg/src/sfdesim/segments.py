"""Finite-memory state segments on a uniform delay grid.

A segment is the sliding window of solution values over the delay interval
[-tau, 0], stored as N+1 nodes spaced delta = tau/N apart.  Coefficient
functionals read the segment through linear interpolation between nodes;
node positions themselves are reproduced exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "SegmentGrid",
    "Segment",
    "segment_eval",
    "segment_sup_norm",
    "segment_advance",
]

# Snap width, in units of the grid coordinate s = N + theta/delta.  Fractions
# within _SNAP_EPS * max(N, 1) of an integer collapse onto the node so that
# grid points are read back exactly despite rounding in theta arithmetic.
_SNAP_EPS = 16.0 * float(np.finfo(np.float64).eps)


@dataclass(frozen=True)
class SegmentGrid:
    """Geometry of a segment: delay span, node count and state dimension.

    Attributes:
        tau: length of the delay window, strictly positive.
        n_lags: number of cells N; the segment holds N+1 nodes.
        dim: state dimension n.
        delta: node spacing tau / n_lags, derived.
    """

    tau: float
    n_lags: int
    dim: int
    delta: float = 0.0

    def __post_init__(self) -> None:
        if not (self.tau > 0.0 and math.isfinite(self.tau)):
            raise ValueError(f"tau must be positive and finite, got {self.tau}")
        if self.n_lags < 1:
            raise ValueError(f"n_lags must be at least 1, got {self.n_lags}")
        if self.dim < 1:
            raise ValueError(f"dim must be at least 1, got {self.dim}")
        object.__setattr__(self, "delta", self.tau / self.n_lags)


class Segment:
    """Immutable window of N+1 state nodes over [-tau, 0].

    ``values[i]`` is the state at theta = (i - N) * delta, so ``values[0]``
    sits at -tau and ``values[N]`` at 0 (the current state).
    """

    __slots__ = ("grid", "values")

    def __init__(self, grid: SegmentGrid, values: np.ndarray) -> None:
        arr = np.asarray(values, dtype=np.float64)
        if arr.ndim == 1:
            arr = arr[:, np.newaxis]
        if arr.shape != (grid.n_lags + 1, grid.dim):
            raise ValueError(
                f"segment values must have shape ({grid.n_lags + 1}, {grid.dim}), "
                f"got {arr.shape}"
            )
        if not np.all(np.isfinite(arr)):
            raise ValueError("segment values must be finite")
        arr = arr.copy()
        arr.flags.writeable = False
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "values", arr)

    def __setattr__(self, name: str, value: object) -> None:
        raise AttributeError("Segment is immutable")

    @classmethod
    def _wrap(cls, grid: SegmentGrid, values: np.ndarray) -> "Segment":
        # Trusted internal constructor: no copy, no validation.  The caller
        # guarantees shape (n_lags+1, dim) float64 and finiteness.
        seg = object.__new__(cls)
        object.__setattr__(seg, "grid", grid)
        object.__setattr__(seg, "values", values)
        return seg

    def __repr__(self) -> str:
        g = self.grid
        return f"Segment(tau={g.tau}, n_lags={g.n_lags}, dim={g.dim})"


def _locate(pos: float, n_lags: int) -> tuple[int, float]:
    """Map grid coordinate pos = N + theta/delta to a node index and fraction.

    Returns (i, frac) with value = (1-frac)*v[i] + frac*v[i+1].  frac == 0.0
    means the position coincides with node i and the value must be returned
    without interpolation arithmetic.  Positions within the snap tolerance of
    an integer are collapsed onto it; out-of-range positions are clamped.
    """
    tol = _SNAP_EPS * max(n_lags, 1)
    i = math.floor(pos)
    if i < 0:
        i = 0
    elif i > n_lags - 1:
        i = n_lags - 1
    frac = pos - i
    if frac <= tol:
        return i, 0.0
    if frac >= 1.0 - tol:
        return i + 1, 0.0
    return i, frac


def segment_eval(seg: Segment, theta: float) -> np.ndarray:
    """Evaluate the segment at lag theta in [-tau, 0].

    Node positions return the stored node exactly; interior positions use
    linear interpolation between the two bracketing nodes.

    Raises:
        ValueError: if theta lies outside [-tau, 0] beyond rounding slack.
    """
    grid = seg.grid
    slack = 32.0 * float(np.finfo(np.float64).eps) * grid.tau
    if theta < -grid.tau - slack or theta > slack:
        raise ValueError(
            f"theta={theta} outside the delay window [{-grid.tau}, 0]"
        )
    pos = grid.n_lags + theta / grid.delta
    i, frac = _locate(pos, grid.n_lags)
    if frac == 0.0:
        return seg.values[i].copy()
    return (1.0 - frac) * seg.values[i] + frac * seg.values[i + 1]


def segment_sup_norm(seg: Segment) -> float:
    """Sup of the Euclidean norm over the window.

    For piecewise linear segments the norm is convex on each cell, so the
    supremum is attained at a node and equals the max over node norms.
    """
    norms = np.sqrt(np.einsum("ij,ij->i", seg.values, seg.values))
    return float(norms.max())


def segment_advance(seg: Segment, new_value: np.ndarray) -> Segment:
    """Shift the window one cell forward, appending new_value at theta = 0.

    The oldest node drops off; all other nodes move one slot toward -tau.
    """
    new_value = np.asarray(new_value, dtype=np.float64).reshape(-1)
    if new_value.shape != (seg.grid.dim,):
        raise ValueError(
            f"new_value must have shape ({seg.grid.dim},), got {new_value.shape}"
        )
    if not np.all(np.isfinite(new_value)):
        raise ValueError("new_value must be finite")
    rolled = np.empty_like(seg.values)
    rolled[:-1] = seg.values[1:]
    rolled[-1] = new_value
    rolled.flags.writeable = False
    return Segment._wrap(seg.grid, rolled)
