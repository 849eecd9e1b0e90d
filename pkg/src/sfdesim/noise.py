"""Pre-generated driving noise on a fine time lattice.

A lattice fixes one realization of the Brownian and Poisson drivers: cell
increments of B over a uniform grid plus the raw jump times of N.  Paths at
coarser step sizes reuse the same realization through coarsen, which is what
couples the step sizes in a convergence study (common random numbers).

Increments are canonically defined as differences of stored cumulative
arrays.  Coarsening subsamples the cumulatives, so coarsening twice equals
coarsening once by the product factor with identical bits, and a coarse
increment always equals the sum of its fine sub-increments.

Streams are counter-based (Philox) and keyed by (master_seed, path, channel),
so any path of any study can be regenerated in isolation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "NoiseLattice",
    "generate_lattice",
    "lattice_from_increments",
    "coarsen",
    "poisson_increment_moment",
    "gaussian_abs_moment",
    "MomentCheck",
    "check_brownian_moments",
    "check_poisson_moments",
    "save_lattice",
    "load_lattice",
]

CHANNEL_BROWNIAN = 0
CHANNEL_POISSON = 1
CHANNEL_AUX = 2

_MAX_PATH_INDEX = 2**61


def stream_generator(master_seed: int, path_index: int, channel: int) -> np.random.Generator:
    """Counter-based generator for one (path, channel) pair.

    Distinct keys give statistically independent streams, and a stream is
    fully determined by its key, independent of draw order elsewhere.
    """
    if not 0 <= master_seed < 2**64:
        raise ValueError(f"master_seed must fit in 64 bits, got {master_seed}")
    if not 0 <= path_index < _MAX_PATH_INDEX:
        raise ValueError(f"path_index out of range: {path_index}")
    if not 0 <= channel < 4:
        raise ValueError(f"channel must be in 0..3, got {channel}")
    key = np.array([master_seed, path_index * 4 + channel], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


@dataclass(frozen=True)
class NoiseLattice:
    """One noise realization sampled on a uniform lattice.

    Attributes:
        horizon: right endpoint T of the covered interval (0, T].
        fine_step: lattice cell width of this lattice.
        brownian_dim: number of Brownian components m.
        intensity: Poisson rate lambda used to generate the jumps.
        brownian_increments: (K, m) cell increments of B.
        poisson_counts: (K,) jumps per cell, counting times in
            (k fine_step, (k+1) fine_step].
        jump_times: (J,) ascending raw jump times in (0, T].
        brownian_cum: (K+1, m) cumulative B at the lattice nodes, row 0 zero.
        poisson_cum: (K+1,) cumulative jump counts at the lattice nodes.
        base_step: cell width of the original finest lattice.
        coarsen_factor: product of coarsening factors applied so far.
    """

    horizon: float
    fine_step: float
    brownian_dim: int
    intensity: float
    brownian_increments: np.ndarray
    poisson_counts: np.ndarray
    jump_times: np.ndarray
    brownian_cum: np.ndarray
    poisson_cum: np.ndarray
    base_step: float
    coarsen_factor: int

    @property
    def num_cells(self) -> int:
        return self.brownian_increments.shape[0]


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr.flags.writeable = False
    return arr


def _build(horizon, fine_step, brownian_dim, intensity, brownian_cum, jump_times,
           base_step, coarsen_factor) -> NoiseLattice:
    """Assemble a lattice from cumulative Brownian values and jump times."""
    k = brownian_cum.shape[0] - 1
    edges = np.arange(k + 1) * fine_step
    poisson_cum = np.searchsorted(jump_times, edges, side="right").astype(np.int64)
    if poisson_cum[-1] != jump_times.shape[0]:
        raise ValueError("jump times extend past the lattice horizon")
    return NoiseLattice(
        horizon=horizon,
        fine_step=fine_step,
        brownian_dim=brownian_dim,
        intensity=intensity,
        brownian_increments=_freeze(np.diff(brownian_cum, axis=0)),
        poisson_counts=_freeze(np.diff(poisson_cum)),
        jump_times=_freeze(jump_times),
        brownian_cum=_freeze(brownian_cum),
        poisson_cum=_freeze(poisson_cum),
        base_step=base_step,
        coarsen_factor=coarsen_factor,
    )


def generate_lattice(
    master_seed: int,
    path_index: int,
    horizon: float,
    fine_step: float,
    brownian_dim: int = 1,
    intensity: float = 0.0,
) -> NoiseLattice:
    """Sample a fresh noise realization for one path.

    horizon must be an integer multiple of fine_step (relative tolerance
    1e-9); the effective horizon is num_cells * fine_step.

    Raises:
        ValueError: on inconsistent grid geometry or invalid parameters.
    """
    if not (fine_step > 0.0 and math.isfinite(fine_step)):
        raise ValueError(f"fine_step must be positive and finite, got {fine_step}")
    if not (horizon > 0.0 and math.isfinite(horizon)):
        raise ValueError(f"horizon must be positive and finite, got {horizon}")
    if brownian_dim < 0:
        raise ValueError(f"brownian_dim must be nonnegative, got {brownian_dim}")
    if not (intensity >= 0.0 and math.isfinite(intensity)):
        raise ValueError(f"intensity must be nonnegative, got {intensity}")
    k = int(round(horizon / fine_step))
    if k < 1 or abs(k * fine_step - horizon) > 1e-9 * max(horizon, 1.0):
        raise ValueError(
            f"horizon {horizon} is not an integer multiple of fine_step {fine_step}"
        )
    t_eff = k * fine_step

    rng_b = stream_generator(master_seed, path_index, CHANNEL_BROWNIAN)
    raw = rng_b.standard_normal((k, brownian_dim)) * math.sqrt(fine_step)
    brownian_cum = np.vstack([np.zeros((1, brownian_dim)), np.cumsum(raw, axis=0)])

    if intensity > 0.0:
        rng_p = stream_generator(master_seed, path_index, CHANNEL_POISSON)
        batch = max(8, int(2.0 * intensity * t_eff) + 8)
        collected = []
        t = 0.0
        while True:
            gaps = rng_p.standard_exponential(batch) / intensity
            arrivals = t + np.cumsum(gaps)
            stop = int(np.searchsorted(arrivals, t_eff, side="right"))
            collected.append(arrivals[:stop])
            if stop < batch:
                break
            t = float(arrivals[-1])
        jump_times = np.concatenate(collected)
    else:
        jump_times = np.empty(0)

    return _build(t_eff, fine_step, brownian_dim, intensity,
                  brownian_cum, jump_times, fine_step, 1)


def lattice_from_increments(
    brownian_increments: np.ndarray,
    jump_times: np.ndarray,
    fine_step: float,
    intensity: float = 0.0,
) -> NoiseLattice:
    """Build a lattice from explicit increments and jump times.

    Intended for tests and replay.  The stored increments are re-derived
    from their cumulative sums, the canonical form used everywhere else.
    """
    inc = np.asarray(brownian_increments, dtype=np.float64)
    if inc.ndim == 1:
        inc = inc[:, np.newaxis]
    if inc.ndim != 2 or inc.shape[0] < 1:
        raise ValueError("brownian_increments must be a nonempty (K, m) array")
    if not (fine_step > 0.0 and math.isfinite(fine_step)):
        raise ValueError(f"fine_step must be positive and finite, got {fine_step}")
    times = np.asarray(jump_times, dtype=np.float64).reshape(-1)
    if times.size and (np.any(np.diff(times) < 0) or times[0] <= 0.0):
        raise ValueError("jump_times must be ascending and positive")
    k, m = inc.shape
    cum = np.vstack([np.zeros((1, m)), np.cumsum(inc, axis=0)])
    return _build(k * fine_step, fine_step, m, intensity, cum, times, fine_step, 1)


def coarsen(lattice: NoiseLattice, r: int) -> NoiseLattice:
    """The same noise realization viewed on a lattice r times coarser.

    Coarse Brownian increments are the exact sums of their fine
    sub-increments, coarse jump counts the exact integer sums, and the jump
    times are unchanged.  coarsen(coarsen(L, r1), r2) is bit-identical to
    coarsen(L, r1 * r2); r = 1 returns the lattice itself.
    """
    if r < 1:
        raise ValueError(f"coarsening factor must be at least 1, got {r}")
    k = lattice.num_cells
    if k % r != 0:
        raise ValueError(f"factor {r} does not divide the cell count {k}")
    if r == 1:
        return lattice
    factor = lattice.coarsen_factor * r
    step = lattice.base_step * factor
    brownian_cum = np.ascontiguousarray(lattice.brownian_cum[::r])
    return _build(
        lattice.horizon, step, lattice.brownian_dim, lattice.intensity,
        brownian_cum, lattice.jump_times, lattice.base_step, factor,
    )


def poisson_increment_moment(mean: float, p: int) -> float:
    """E[X^p] for X ~ Poisson(mean), via Stirling numbers.

    E[X^p] = sum_i S(p, i) mean^i.  Every moment is O(mean) as mean -> 0,
    which is the structural reason jump-driven schemes converge at order
    1/p in the p-th moment rather than 1/2.
    """
    if not (mean >= 0.0 and math.isfinite(mean)):
        raise ValueError(f"mean must be nonnegative and finite, got {mean}")
    if p < 0:
        raise ValueError(f"moment order must be nonnegative, got {p}")
    if p == 0:
        return 1.0
    # stirling[i] = S(row, i), built row by row.
    stirling = [0.0] * (p + 1)
    stirling[0] = 1.0  # S(0, 0)
    for row in range(1, p + 1):
        nxt = [0.0] * (p + 1)
        for i in range(1, row + 1):
            nxt[i] = stirling[i - 1] + i * stirling[i]
        stirling = nxt
    return math.fsum(stirling[i] * mean**i for i in range(1, p + 1))


def gaussian_abs_moment(p: float, variance: float) -> float:
    """E|X|^p for X ~ N(0, variance)."""
    if not (variance >= 0.0 and math.isfinite(variance)):
        raise ValueError(f"variance must be nonnegative, got {variance}")
    if p < 0:
        raise ValueError(f"moment order must be nonnegative, got {p}")
    if variance == 0.0:
        return 0.0 if p > 0 else 1.0
    return variance ** (p / 2.0) * 2.0 ** (p / 2.0) * math.gamma((p + 1.0) / 2.0) / math.sqrt(math.pi)


@dataclass(frozen=True)
class MomentCheck:
    """One empirical-versus-exact moment comparison."""

    label: str
    p: float
    empirical: float
    expected: float
    std_error: float
    z_score: float
    passed: bool


def _moment_row(label: str, p: float, samples: np.ndarray, expected: float,
                gate: float) -> MomentCheck:
    n = samples.size
    emp = float(np.mean(samples))
    se = float(np.std(samples, ddof=1) / math.sqrt(n)) if n > 1 else math.inf
    z = (emp - expected) / se if se > 0 else 0.0
    return MomentCheck(label, p, emp, expected, se, z, abs(z) <= gate)


def check_brownian_moments(
    lattice: NoiseLattice, orders=(1, 2, 3, 4), gate: float = 4.0
) -> list[MomentCheck]:
    """Compare empirical absolute moments of the Brownian increments with
    the exact Gaussian values, all components pooled.

    Includes a signed-mean row; each row passes when the empirical value is
    within gate standard errors of the exact one.
    """
    x = lattice.brownian_increments.reshape(-1)
    rows = [_moment_row("brownian_signed_mean", 1, x, 0.0, gate)]
    for p in orders:
        rows.append(
            _moment_row(
                f"brownian_abs_p{p}", p, np.abs(x) ** p,
                gaussian_abs_moment(p, lattice.fine_step), gate,
            )
        )
    return rows


def check_poisson_moments(
    lattice: NoiseLattice, orders=(1, 2, 3, 4), gate: float = 4.0
) -> list[MomentCheck]:
    """Compare empirical moments of the per-cell jump counts with the exact
    Poisson values at mean intensity * fine_step."""
    mean = lattice.intensity * lattice.fine_step
    counts = lattice.poisson_counts.astype(np.float64)
    rows = []
    for p in orders:
        rows.append(
            _moment_row(
                f"poisson_p{p}", p, counts**p,
                poisson_increment_moment(mean, p), gate,
            )
        )
    return rows


_DUMP_VERSION = 1


def save_lattice(lattice: NoiseLattice, path) -> None:
    """Binary debug dump of a lattice.  Layout is implementation-defined
    and versioned; not a stability surface."""
    np.savez(
        path,
        version=np.int64(_DUMP_VERSION),
        horizon=lattice.horizon,
        fine_step=lattice.fine_step,
        base_step=lattice.base_step,
        coarsen_factor=np.int64(lattice.coarsen_factor),
        brownian_dim=np.int64(lattice.brownian_dim),
        intensity=lattice.intensity,
        brownian_cum=lattice.brownian_cum,
        jump_times=lattice.jump_times,
    )


def load_lattice(path) -> NoiseLattice:
    """Rebuild a lattice from a save_lattice dump."""
    with np.load(path) as data:
        if int(data["version"]) != _DUMP_VERSION:
            raise ValueError(f"unsupported lattice dump version {int(data['version'])}")
        return _build(
            float(data["horizon"]),
            float(data["fine_step"]),
            int(data["brownian_dim"]),
            float(data["intensity"]),
            np.ascontiguousarray(data["brownian_cum"]),
            np.ascontiguousarray(data["jump_times"]),
            float(data["base_step"]),
            int(data["coarsen_factor"]),
        )
