"""Euler-Maruyama scheme for stochastic delay equations with jumps.

The discrete scheme advances the state one lattice cell at a time:

    y((k+1) dt) = y(k dt) + f(y_k) dt + g(y_k) dB_k + h(y_k) dN_k

where y_k is the piecewise linear segment built from the stored nodes over
[k dt - tau, k dt].  The dense (continuous-time) extension freezes the
coefficients of cell k at that same segment and follows the driving noise
exactly inside the cell, so it coincides with the discrete values at every
coarse node, bit for bit, and can be compared against a reference path on
an arbitrarily finer lattice.
"""

from __future__ import annotations

import math
import os
import tempfile
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

from . import _kernels
from .coefficients import CoefficientSet, bind_plan
from .noise import NoiseLattice
from .segments import Segment, SegmentGrid, segment_sup_norm

__all__ = [
    "NumericalError",
    "InitialData",
    "InitialSpec",
    "constant_initial",
    "cosine_initial",
    "EmConfig",
    "PathGrid",
    "em_discrete",
    "em_dense_eval",
    "exact_linear_jump_path",
    "PicardResult",
    "picard_solve",
    "initial_modulus",
]

_REL_TOL = 1e-9


class NumericalError(RuntimeError):
    """The recursion produced a non-finite state (overflow or NaN)."""


@dataclass(frozen=True)
class InitialData:
    """Deterministic initial segment on [-tau, 0].

    Attributes:
        dim: state dimension.
        sampler: vectorized map from an array of times (k,) in [-tau, 0]
            to states (k, dim).  Must be a pure pointwise function of t so
            that grids of different resolution sample consistent values.
        description: short human-readable label used in manifests.
    """

    dim: int
    sampler: Callable[[np.ndarray], np.ndarray]
    description: str = ""


def constant_initial(value) -> InitialData:
    """Initial segment frozen at a constant state."""
    vec = np.atleast_1d(np.asarray(value, dtype=np.float64))
    if vec.ndim != 1 or not np.all(np.isfinite(vec)):
        raise ValueError("constant initial value must be a finite vector")

    def sampler(times: np.ndarray) -> np.ndarray:
        return np.broadcast_to(vec, (times.shape[0], vec.shape[0])).copy()

    return InitialData(vec.shape[0], sampler, f"constant {vec.tolist()}")


def cosine_initial(base, amplitude, frequency) -> InitialData:
    """Smooth oscillating initial segment base + amplitude * cos(frequency t).

    Componentwise; scalar arguments broadcast.  Being Lipschitz in t it
    satisfies the usual p-th moment continuity requirement on the initial
    data with exponent 1 (hence any exponent down to 1/2).
    """
    b = np.atleast_1d(np.asarray(base, dtype=np.float64))
    a = np.atleast_1d(np.asarray(amplitude, dtype=np.float64))
    w = np.atleast_1d(np.asarray(frequency, dtype=np.float64))
    dim = max(b.shape[0], a.shape[0], w.shape[0])
    b, a, w = (np.broadcast_to(x, (dim,)) for x in (b, a, w))
    if not all(np.all(np.isfinite(x)) for x in (b, a, w)):
        raise ValueError("cosine initial parameters must be finite")

    def sampler(times: np.ndarray) -> np.ndarray:
        return b + a * np.cos(w * times[:, np.newaxis])

    return InitialData(dim, sampler, f"cosine base={b.tolist()} amp={a.tolist()}")


@dataclass(frozen=True, eq=False)
class InitialSpec:
    """Picklable recipe for an InitialData, mirroring EquationSpec."""

    kind: str
    dim: int
    params: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.kind not in ("constant", "cosine", "factory"):
            raise ValueError(f"unknown initial data kind {self.kind!r}")

    def build(self) -> InitialData:
        if self.kind == "constant":
            data = constant_initial(self.params["value"])
        elif self.kind == "cosine":
            data = cosine_initial(
                self.params.get("base", 0.0),
                self.params.get("amplitude", 1.0),
                self.params.get("frequency", 1.0),
            )
        else:
            data = self.params["build"]()
        if data.dim != self.dim:
            raise ValueError(f"initial data dim {data.dim} != spec dim {self.dim}")
        return data


@dataclass(frozen=True)
class EmConfig:
    """One solver run: coefficients, initial data and grid geometry.

    The delay tau must span an integer number n_lags of cells and the
    horizon T an integer number steps of the same cells, i.e.
    tau / n_lags == T / steps up to relative tolerance 1e-9.
    """

    coefficients: CoefficientSet
    initial: InitialData
    horizon: float
    tau: float
    n_lags: int
    steps: int

    def __post_init__(self) -> None:
        if not (self.horizon > 0.0 and math.isfinite(self.horizon)):
            raise ValueError(f"horizon must be positive and finite, got {self.horizon}")
        if not (self.tau > 0.0 and math.isfinite(self.tau)):
            raise ValueError(f"tau must be positive and finite, got {self.tau}")
        if self.n_lags < 1 or self.steps < 1:
            raise ValueError("n_lags and steps must be at least 1")
        lhs = self.tau * self.steps
        rhs = self.horizon * self.n_lags
        if abs(lhs - rhs) > _REL_TOL * max(abs(lhs), abs(rhs)):
            raise ValueError(
                f"grid mismatch: tau/n_lags = {self.tau / self.n_lags} but "
                f"horizon/steps = {self.horizon / self.steps}"
            )
        if self.initial.dim != self.coefficients.dim:
            raise ValueError(
                f"initial data dim {self.initial.dim} != "
                f"coefficient dim {self.coefficients.dim}"
            )

    @property
    def delta(self) -> float:
        return self.horizon / self.steps


@dataclass(frozen=True)
class PathGrid:
    """A path sampled on a uniform grid, including its initial history.

    values[i] is the state at time (i - n_history) * step; row n_history
    sits at time 0 and the last row at the horizon.
    """

    step: float
    n_history: int
    values: np.ndarray

    def __post_init__(self) -> None:
        if not (self.step > 0.0 and math.isfinite(self.step)):
            raise ValueError(f"step must be positive and finite, got {self.step}")
        if self.values.ndim != 2 or self.values.shape[0] < self.n_history + 2:
            raise ValueError("values must be (n_history + steps + 1, dim) with steps >= 1")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("path values must be finite")
        if self.values.flags.writeable:
            self.values.flags.writeable = False

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    @property
    def n_steps(self) -> int:
        return self.values.shape[0] - self.n_history - 1

    def times(self) -> np.ndarray:
        return (np.arange(self.values.shape[0]) - self.n_history) * self.step

    def values_from_zero(self) -> np.ndarray:
        """View of the rows covering [0, horizon]."""
        return self.values[self.n_history:]

    def sup_norm(self) -> float:
        """Largest Euclidean node norm over the whole grid, history included."""
        v = self.values
        return float(np.sqrt(np.einsum("ij,ij->i", v, v).max()))

    def write_csv(self, path) -> None:
        """Write t, x_1..x_n rows with 17 significant digits, atomically."""
        dim = self.dim
        header = "t," + ",".join(f"x_{i + 1}" for i in range(dim))
        times = self.times()
        lines = [header]
        for i in range(self.values.shape[0]):
            row = ",".join(format(v, ".17g") for v in self.values[i])
            lines.append(f"{times[i]:.17g},{row}")
        _atomic_write(path, "\n".join(lines) + "\n")


def _atomic_write(path, text: str) -> None:
    path = os.fspath(path)
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(path) or ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as handle:
            handle.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _history_nodes(initial: InitialData, n_lags: int, step: float) -> np.ndarray:
    times = (np.arange(n_lags + 1) - n_lags) * step
    hist = np.asarray(initial.sampler(times), dtype=np.float64)
    if hist.shape != (n_lags + 1, initial.dim):
        raise ValueError(
            f"initial sampler returned shape {hist.shape}, "
            f"expected ({n_lags + 1}, {initial.dim})"
        )
    if not np.all(np.isfinite(hist)):
        raise ValueError("initial data must be finite")
    return hist


def _check_lattice(cfg: EmConfig, lattice: NoiseLattice) -> None:
    if lattice.num_cells != cfg.steps:
        raise ValueError(
            f"lattice has {lattice.num_cells} cells, config expects {cfg.steps}"
        )
    if abs(lattice.fine_step - cfg.delta) > _REL_TOL * cfg.delta:
        raise ValueError(
            f"lattice step {lattice.fine_step} != config step {cfg.delta}"
        )
    if lattice.brownian_dim != cfg.coefficients.brownian_dim:
        raise ValueError(
            f"lattice has {lattice.brownian_dim} Brownian components, "
            f"coefficients expect {cfg.coefficients.brownian_dim}"
        )


def _coeff_values(coeffs: CoefficientSet, seg: Segment) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    n, m = coeffs.dim, coeffs.brownian_dim
    f = np.asarray(coeffs.drift(seg), dtype=np.float64).reshape(n)
    g = np.asarray(coeffs.diffusion(seg), dtype=np.float64).reshape(n, m)
    h = np.asarray(coeffs.jump(seg), dtype=np.float64).reshape(n)
    return f, g, h


def _em_discrete_generic(cfg: EmConfig, lattice: NoiseLattice, nodes: np.ndarray,
                         debug: bool) -> int:
    """Callable-path recursion used when coefficients carry no plan."""
    n_lags, steps = cfg.n_lags, cfg.steps
    dt = lattice.fine_step
    db = lattice.brownian_increments
    dn = lattice.poisson_counts
    grid = SegmentGrid(n_lags * dt, n_lags, cfg.coefficients.dim)
    running_sup = float(np.sqrt(np.einsum("ij,ij->i", nodes[: n_lags + 1],
                                          nodes[: n_lags + 1]).max()))
    for k in range(steps):
        seg = Segment._wrap(grid, nodes[k: k + n_lags + 1])
        if debug:
            # The segment sup never exceeds the running sup of the whole
            # path up to the current node.
            assert segment_sup_norm(seg) <= running_sup * (1.0 + 1e-12) + 1e-300
        f, g, h = _coeff_values(cfg.coefficients, seg)
        y = nodes[n_lags + k] + f * dt
        y = y + g @ db[k]
        y = y + h * float(dn[k])
        if not np.all(np.isfinite(y)):
            return k
        nodes[n_lags + k + 1] = y
        if debug:
            running_sup = max(running_sup, float(np.sqrt(np.dot(y, y))))
    return -1


def em_discrete(cfg: EmConfig, lattice: NoiseLattice, debug: bool = False) -> PathGrid:
    """Run the one-step scheme over the lattice and return the node path.

    The lattice must match the config geometry (same step, steps cells).
    Coefficient families with a plan run through the selected kernel
    backend; opaque callables run through the Python loop.

    Raises:
        NumericalError: when a step produces a non-finite state; the
            message names the offending step and time.
        ValueError: on geometry mismatches.
    """
    _check_lattice(cfg, lattice)
    n = cfg.coefficients.dim
    n_lags, steps = cfg.n_lags, cfg.steps
    dt = lattice.fine_step
    nodes = np.empty((n_lags + steps + 1, n))
    nodes[: n_lags + 1] = _history_nodes(cfg.initial, n_lags, dt)

    plan = cfg.coefficients.plan
    if plan is not None and not debug:
        bound = bind_plan(plan, n_lags, dt)
        bad = _kernels.em_discrete(
            bound, nodes, n_lags, dt,
            lattice.brownian_increments, lattice.poisson_counts,
        )
    else:
        bad = _em_discrete_generic(cfg, lattice, nodes, debug)
    if bad >= 0:
        raise NumericalError(
            f"non-finite state at step {bad} (t = {bad * dt:.6g}); "
            "the scheme overflowed or produced NaN"
        )
    return PathGrid(step=dt, n_history=n_lags, values=nodes)


def _em_dense_generic(cfg: EmConfig, coarse: PathGrid, fine: NoiseLattice,
                      r: int, out: np.ndarray) -> int:
    n_lags = cfg.n_lags
    dt = coarse.step
    fine_step = fine.fine_step
    bcum, pcum = fine.brownian_cum, fine.poisson_cum
    grid = SegmentGrid(n_lags * dt, n_lags, cfg.coefficients.dim)
    nodes = coarse.values
    out[0] = nodes[n_lags]
    for k in range(coarse.n_steps):
        seg = Segment._wrap(grid, nodes[k: k + n_lags + 1])
        f, g, h = _coeff_values(cfg.coefficients, seg)
        y0 = nodes[n_lags + k]
        kr = k * r
        for j in range(1, r + 1):
            elapsed = dt if j == r else j * fine_step
            y = y0 + f * elapsed
            y = y + g @ (bcum[kr + j] - bcum[kr])
            y = y + h * float(pcum[kr + j] - pcum[kr])
            if not np.all(np.isfinite(y)):
                return k
            out[kr + j] = y
    return -1


def em_dense_eval(coarse: PathGrid, cfg: EmConfig, fine_noise: NoiseLattice) -> PathGrid:
    """Evaluate the continuous-time extension of a coarse path on the fine
    lattice underlying fine_noise.

    The coarse path must have been produced by em_discrete under cfg from a
    coarsening of fine_noise.  At times shared with the coarse grid the
    result reproduces the coarse values bit for bit; in between, the path
    follows the fine Brownian and Poisson cumulatives with the coefficients
    frozen at each coarse cell's segment.  The returned grid includes the
    initial history resampled at the fine step.
    """
    if abs(coarse.step - cfg.delta) > _REL_TOL * cfg.delta:
        raise ValueError(f"coarse path step {coarse.step} != config step {cfg.delta}")
    r = int(round(coarse.step / fine_noise.fine_step))
    if r < 1 or abs(r * fine_noise.fine_step - coarse.step) > _REL_TOL * coarse.step:
        raise ValueError(
            f"coarse step {coarse.step} is not an integer multiple of the "
            f"fine step {fine_noise.fine_step}"
        )
    if fine_noise.num_cells != r * coarse.n_steps:
        raise ValueError(
            f"fine lattice covers {fine_noise.num_cells} cells, expected "
            f"{r * coarse.n_steps}"
        )
    if coarse.n_history != cfg.n_lags or coarse.dim != cfg.coefficients.dim:
        raise ValueError("coarse path does not match the config geometry")

    n = cfg.coefficients.dim
    fine_lags = cfg.n_lags * r
    k_cells = fine_noise.num_cells
    values = np.empty((fine_lags + k_cells + 1, n))
    values[: fine_lags + 1] = _history_nodes(cfg.initial, fine_lags, fine_noise.fine_step)
    out = values[fine_lags:]

    plan = cfg.coefficients.plan
    if plan is not None:
        bound = bind_plan(plan, cfg.n_lags, coarse.step)
        bad = _kernels.em_dense(
            bound, coarse.values, cfg.n_lags, r,
            coarse.step, fine_noise.fine_step,
            fine_noise.brownian_cum, fine_noise.poisson_cum, out,
        )
    else:
        bad = _em_dense_generic(cfg, coarse, fine_noise, r, out)
    if bad >= 0:
        raise NumericalError(
            f"non-finite state inside coarse cell {bad} "
            f"(t in [{bad * coarse.step:.6g}, {(bad + 1) * coarse.step:.6g}])"
        )
    return PathGrid(step=fine_noise.fine_step, n_history=fine_lags, values=values)


def exact_linear_jump_path(x0: float, a: float, b: float, c: float,
                           lattice: NoiseLattice) -> PathGrid:
    """Closed-form strong solution of the scalar delay-free equation

        dx = a x dt + b x dB + c x dN,    x(0) = x0,

    evaluated at the lattice nodes:

        x(t) = x0 exp((a - b^2/2) t + b B(t)) (1 + c)^N(t).

    With c = -1 the path absorbs at zero after the first jump.  Used as the
    exact reference in convergence studies.
    """
    for name, val in (("x0", x0), ("a", a), ("b", b), ("c", c)):
        if not math.isfinite(val):
            raise ValueError(f"{name} must be finite, got {val}")
    if b != 0.0 and lattice.brownian_dim < 1:
        raise ValueError("b != 0 requires a Brownian component on the lattice")
    k = lattice.num_cells
    t = np.arange(k + 1) * lattice.fine_step
    if lattice.brownian_dim >= 1:
        brownian = lattice.brownian_cum[:, 0]
    else:
        brownian = np.zeros(k + 1)
    counts = lattice.poisson_cum.astype(np.float64)
    x = x0 * np.exp((a - 0.5 * b * b) * t + b * brownian) * np.power(1.0 + c, counts)
    return PathGrid(step=lattice.fine_step, n_history=0, values=x[:, np.newaxis])


@dataclass(frozen=True)
class PicardResult:
    """Successive approximations and their sup-distances.

    Attributes:
        iterates: x^0 .. x^n as paths on the fine grid (history included).
        sup_diffs: d_k = sup over [0, T] nodes of |x^(k+1) - x^k|.
        diverged: True when d_k increased three times in a row, the
            heuristic divergence flag.
    """

    iterates: list[PathGrid]
    sup_diffs: list[float]
    diverged: bool


def picard_solve(cfg: EmConfig, fine_noise: NoiseLattice, iterations: int) -> PicardResult:
    """Picard iteration for the integral form of the equation, with
    left-endpoint quadrature on the fine grid.

    x^0 is frozen at xi(0) on [0, T]; each further iterate integrates the
    coefficients along the previous one.  On the grid the fixed point of
    this map is exactly the one-step scheme's path, and for globally
    Lipschitz coefficients the sup-distances d_k contract factorially.

    Note the contraction claim needs globally Lipschitz coefficients; for
    others the iteration still runs and the diverged flag reports runaway.
    """
    if iterations < 0:
        raise ValueError(f"iterations must be nonnegative, got {iterations}")
    _check_lattice(cfg, fine_noise)
    n = cfg.coefficients.dim
    n_lags, steps = cfg.n_lags, cfg.steps
    dt = fine_noise.fine_step
    db = fine_noise.brownian_increments
    dn = fine_noise.poisson_counts
    grid = SegmentGrid(n_lags * dt, n_lags, n)

    history = _history_nodes(cfg.initial, n_lags, dt)
    first = np.empty((n_lags + steps + 1, n))
    first[: n_lags + 1] = history
    first[n_lags + 1:] = history[-1]
    iterates = [PathGrid(step=dt, n_history=n_lags, values=first)]
    sup_diffs: list[float] = []
    increases = 0
    diverged = False

    for _ in range(iterations):
        prev = iterates[-1].values
        nxt = np.empty_like(prev)
        nxt[: n_lags + 1] = history
        acc = history[-1].copy()
        for k in range(steps):
            seg = Segment._wrap(grid, prev[k: k + n_lags + 1])
            f, g, h = _coeff_values(cfg.coefficients, seg)
            acc = acc + f * dt
            acc = acc + g @ db[k]
            acc = acc + h * float(dn[k])
            if not np.all(np.isfinite(acc)):
                raise NumericalError(
                    f"Picard iterate diverged to non-finite values at step {k}"
                )
            nxt[n_lags + k + 1] = acc
        diff = nxt[n_lags:] - prev[n_lags:]
        d = float(np.sqrt(np.einsum("ij,ij->i", diff, diff).max()))
        if sup_diffs and d > sup_diffs[-1]:
            increases += 1
            if increases >= 3:
                diverged = True
        else:
            increases = 0
        sup_diffs.append(d)
        iterates.append(PathGrid(step=dt, n_history=n_lags, values=nxt))
    return PicardResult(iterates=iterates, sup_diffs=sup_diffs, diverged=diverged)


def initial_modulus(initial: InitialData, tau: float, p: float = 2.0,
                    n_offsets: int = 32, n_origins: int = 128) -> float:
    """Empirical continuity modulus of the initial data.

    Returns the largest sampled ratio |xi(u) - xi(v)|^p / |u - v|^(p/2)
    over pairs in [-tau, 0].  A finite, stable value as the offset shrinks
    indicates the p-th moment Hoelder-1/2 continuity the convergence
    theory assumes for the initial segment.
    """
    if not (tau > 0.0):
        raise ValueError(f"tau must be positive, got {tau}")
    worst = 0.0
    for k in range(1, n_offsets + 1):
        w = tau * k / (2.0 * n_offsets)
        u = np.linspace(-tau + w, 0.0, n_origins)
        xu = np.asarray(initial.sampler(u), dtype=np.float64)
        xv = np.asarray(initial.sampler(u - w), dtype=np.float64)
        diff = xu - xv
        norms = np.sqrt(np.einsum("ij,ij->i", diff, diff))
        worst = max(worst, float((norms.max() ** p) / w ** (p / 2.0)))
    return worst
