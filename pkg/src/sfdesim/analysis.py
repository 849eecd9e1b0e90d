"""Coupled-path Monte Carlo convergence studies.

Every path of a study lives on one fine noise lattice; all coarser step
sizes reuse that lattice through coarsening, so the step sizes are coupled
by common random numbers and the measured errors decay smoothly enough to
fit a rate.  The per-path work is a pure function of (master seed, path
index), and results are reduced in fixed path order with exact summation,
which makes study outputs byte-identical for any worker count.

The central quantity is the p-th moment of the pathwise sup error

    E sup_{t in [0, T]} |x(t) - y(t)|^p

between a reference path x (closed form, or the scheme on the fine lattice)
and the dense extension y of the coarse-step scheme, evaluated at the fine
nodes.  Fitting log root-error against log step size estimates the strong
order: 1/2 without jumps, 1/p with jumps.
"""

from __future__ import annotations

import math
import multiprocessing
from dataclasses import dataclass, field

import numpy as np

from .coefficients import EquationSpec
from .noise import (
    CHANNEL_AUX,
    NoiseLattice,
    coarsen,
    generate_lattice,
    stream_generator,
)
from .segments import _locate
from .solver import (
    EmConfig,
    InitialSpec,
    PathGrid,
    _atomic_write,
    em_dense_eval,
    em_discrete,
    exact_linear_jump_path,
)
from . import _kernels

__all__ = [
    "ErrorStat",
    "RateEstimate",
    "ReferenceSpec",
    "StudyConfig",
    "StudyReport",
    "strong_error",
    "moment_bound_estimate",
    "segment_interp_error",
    "fit_rate",
    "convergence_study",
    "write_study_csvs",
]

_CHUNK = 64


@dataclass(frozen=True)
class ErrorStat:
    """Monte Carlo estimate of a p-th moment of a pathwise supremum.

    mean_sup_p estimates E sup^p, std_error its standard error, and
    root_error = mean_sup_p^(1/p) the L^p-style error the rates are fit on.
    """

    p: float
    num_paths: int
    mean_sup_p: float
    root_error: float
    std_error: float

    def __post_init__(self) -> None:
        if self.p < 2.0:
            raise ValueError(f"moment order must be at least 2, got {self.p}")
        if self.num_paths < 2:
            raise ValueError("need at least 2 paths for a standard error")
        if not (self.mean_sup_p >= 0.0):
            raise ValueError("mean_sup_p must be nonnegative")


def _stat(sups: np.ndarray, p: float) -> ErrorStat:
    vals = [float(v) for v in np.power(sups, p)]
    n = len(vals)
    mean = math.fsum(vals) / n
    var = math.fsum((v - mean) ** 2 for v in vals) / (n - 1)
    return ErrorStat(
        p=p,
        num_paths=n,
        mean_sup_p=mean,
        root_error=mean ** (1.0 / p) if mean > 0.0 else 0.0,
        std_error=math.sqrt(var / n),
    )


@dataclass(frozen=True)
class RateEstimate:
    """Least-squares fit of log(error) = slope * log(delta) + intercept."""

    p: float
    slope: float
    intercept: float
    residual_norm: float


def fit_rate(points, p: float = 2.0) -> RateEstimate:
    """Fit a convergence order from (step size, error) pairs.

    Requires at least two points with positive steps and errors; raises
    ValueError otherwise (a study with a single step size or an exactly
    zero error has no rate to fit).
    """
    pts = [(float(d), float(e)) for d, e in points]
    if len(pts) < 2:
        raise ValueError(f"rate fit needs at least 2 points, got {len(pts)}")
    for d, e in pts:
        if not (d > 0.0 and math.isfinite(d)):
            raise ValueError(f"step sizes must be positive and finite, got {d}")
        if not (e > 0.0 and math.isfinite(e)):
            raise ValueError(
                f"errors must be positive and finite, got {e}; a zero error "
                "is usually below the Monte Carlo noise floor, increase the "
                "number of paths"
            )
    if len({d for d, _ in pts}) < 2:
        raise ValueError("rate fit needs at least two distinct step sizes")
    xs = [math.log(d) for d, _ in pts]
    ys = [math.log(e) for _, e in pts]
    n = len(pts)
    mx = math.fsum(xs) / n
    my = math.fsum(ys) / n
    sxx = math.fsum((x - mx) ** 2 for x in xs)
    sxy = math.fsum((x - mx) * (y - my) for x, y in zip(xs, ys))
    slope = sxy / sxx
    intercept = my - slope * mx
    residual = math.sqrt(
        math.fsum((y - slope * x - intercept) ** 2 for x, y in zip(xs, ys))
    )
    return RateEstimate(p=p, slope=slope, intercept=intercept, residual_norm=residual)


def strong_error(reference: PathGrid, approx: PathGrid, p: float) -> float:
    """Pathwise sup error over [0, T], raised to the p-th power.

    Both paths must share the same step and horizon; the sup runs over
    their common nodes from time 0 on.
    """
    if p < 2.0:
        raise ValueError(f"moment order must be at least 2, got {p}")
    if abs(reference.step - approx.step) > 1e-9 * reference.step:
        raise ValueError(
            f"paths live on different steps: {reference.step} vs {approx.step}"
        )
    a = reference.values_from_zero()
    b = approx.values_from_zero()
    if a.shape != b.shape:
        raise ValueError(f"paths cover different grids: {a.shape} vs {b.shape}")
    diff = a - b
    sup = math.sqrt(float(np.einsum("ij,ij->i", diff, diff).max()))
    return sup**p


def moment_bound_estimate(paths, p: float) -> float:
    """Mean over paths of the p-th power of the sup norm over [-tau, T].

    Stability of this quantity under step refinement is the empirical
    footprint of the scheme's uniform moment bound.
    """
    if p < 2.0:
        raise ValueError(f"moment order must be at least 2, got {p}")
    paths = list(paths)
    if not paths:
        raise ValueError("need at least one path")
    return math.fsum(pg.sup_norm() ** p for pg in paths) / len(paths)


@dataclass(frozen=True)
class ReferenceSpec:
    """How a study obtains its reference path.

    kind "exact" uses the closed-form solution (scalar linear delay-free
    equations only); kind "fine_em" runs the scheme itself on the fine
    lattice, ratio times finer than the smallest study step.
    """

    kind: str
    ratio: int

    def __post_init__(self) -> None:
        if self.kind not in ("exact", "fine_em"):
            raise ValueError(f"reference kind must be exact or fine_em, got {self.kind!r}")
        if self.ratio < 1 or (self.ratio & (self.ratio - 1)) != 0:
            raise ValueError(f"reference ratio must be a power of two, got {self.ratio}")
        if self.kind == "fine_em" and self.ratio < 8:
            raise ValueError(
                f"fine_em reference needs ratio at least 8, got {self.ratio}"
            )


@dataclass(frozen=True, eq=False)
class StudyConfig:
    """Declarative description of one convergence study.

    steps lists the cell counts of the coarse grids; each step size
    T / M must divide the delay consistently and be a dyadic multiple of
    the finest one.  All randomness derives from master_seed.
    """

    equation: EquationSpec
    initial: InitialSpec
    horizon: float
    steps: tuple[int, ...]
    reference: ReferenceSpec
    p_values: tuple[float, ...]
    num_paths: int
    master_seed: int
    workers: int = 1
    interp_samples: int = 0
    interp_p: float = 2.0

    def __post_init__(self) -> None:
        t, tau = self.horizon, self.equation.tau
        if not (t > 0.0 and math.isfinite(t)):
            raise ValueError(f"horizon must be positive and finite, got {t}")
        if not self.steps:
            raise ValueError("steps must be nonempty")
        m_max = max(self.steps)
        for m in self.steps:
            if m < 1:
                raise ValueError(f"step cell count must be at least 1, got {m}")
            if t / m >= 1.0:
                raise ValueError(
                    f"step size {t / m} is not below 1; the rate claims assume "
                    "delta in (0, 1)"
                )
            ratio = m_max // m
            if m_max % m != 0 or (ratio & (ratio - 1)) != 0:
                raise ValueError(
                    f"steps must be dyadic multiples of the finest: {m} vs {m_max}"
                )
            n_k = round(tau * m / t)
            if n_k < 1 or abs(n_k * t - tau * m) > 1e-9 * max(tau * m, t):
                raise ValueError(
                    f"delay {tau} does not align with step size {t / m}"
                )
        if not self.p_values:
            raise ValueError("p_values must be nonempty")
        for p in self.p_values:
            if p < 2.0:
                raise ValueError(f"moment orders must be at least 2, got {p}")
        if self.num_paths < 2:
            raise ValueError(f"num_paths must be at least 2, got {self.num_paths}")
        if self.workers < 1:
            raise ValueError(f"workers must be at least 1, got {self.workers}")
        if not 0 <= self.master_seed < 2**64:
            raise ValueError("master_seed must be a 64-bit unsigned integer")
        if self.interp_samples < 0:
            raise ValueError("interp_samples must be nonnegative")
        if self.interp_samples and self.interp_p < 2.0:
            raise ValueError(f"interp_p must be at least 2, got {self.interp_p}")
        if self.reference.kind == "exact" and self.equation.exact_params() is None:
            raise ValueError(
                "exact reference requires a scalar linear equation without "
                "delay terms (a1 = b1 = c1 = 0)"
            )
        if self.reference.kind == "exact" and self.initial.kind != "constant":
            raise ValueError("exact reference requires constant initial data")


@dataclass(frozen=True)
class StudyReport:
    """All numbers produced by one study.

    error_rows and moment_rows hold (delta, stat) pairs in (p, step) order;
    rate_rows one fit per moment order (absent when fitting was skipped);
    interp_rows the segment interpolation defect when sampled.
    """

    error_rows: tuple[tuple[float, ErrorStat], ...]
    rate_rows: tuple[RateEstimate, ...]
    moment_rows: tuple[tuple[float, ErrorStat], ...]
    interp_rows: tuple[tuple[float, ErrorStat], ...]
    max_sup_norm: float
    num_paths: int
    master_seed: int
    backend: str
    warnings: tuple[str, ...]


@dataclass(frozen=True)
class _Geometry:
    """Derived grid quantities shared by all paths of a study."""

    fine_cells: int
    fine_step: float
    fine_lags: int
    ratios: tuple[int, ...]
    n_lags: tuple[int, ...]


def _geometry(study: StudyConfig) -> _Geometry:
    t, tau = study.horizon, study.equation.tau
    m_fine = max(study.steps) * study.reference.ratio
    fine_step = t / m_fine
    return _Geometry(
        fine_cells=m_fine,
        fine_step=fine_step,
        fine_lags=round(tau * m_fine / t),
        ratios=tuple(m_fine // m for m in study.steps),
        n_lags=tuple(round(tau * m / t) for m in study.steps),
    )


def _interp_ticks(study: StudyConfig, geo: _Geometry):
    """Shared (s, theta) sample ticks on the fine grid, one set per study."""
    rng = stream_generator(study.master_seed, 0, CHANNEL_AUX)
    s_ticks = rng.integers(0, geo.fine_cells + 1, size=study.interp_samples)
    theta_ticks = rng.integers(-geo.fine_lags, 1, size=study.interp_samples)
    return s_ticks.astype(np.int64), theta_ticks.astype(np.int64)


def _sample_tables(n_lags: int, delta: float, r: int, s_ticks, theta_ticks,
                   fine_step: float):
    """Resolve fine-grid sample ticks against one coarse grid.

    Returns (cell, node, frac) arrays: cell is the coarse segment index
    floor(s / delta), (node, frac) locate theta inside that segment with
    the same rule as segment evaluation.
    """
    cells = s_ticks // r
    count = s_ticks.shape[0]
    node = np.empty(count, dtype=np.int64)
    frac = np.empty(count)
    for i in range(count):
        theta = float(theta_ticks[i]) * fine_step
        node[i], frac[i] = _locate(n_lags + theta / delta, n_lags)
    return cells, node, frac


def _interp_defects(coarse: PathGrid, dense: PathGrid, cells, node, frac,
                    s_ticks, theta_ticks) -> np.ndarray:
    """Euclidean defect |y(s + theta) - ybar_s(theta)| per sample."""
    cv = coarse.values
    last = cv.shape[0] - 1
    rows = cells + node
    a = cv[rows]
    b = cv[np.minimum(rows + 1, last)]
    w = frac[:, np.newaxis]
    seg_vals = np.where(w == 0.0, a, (1.0 - w) * a + w * b)
    y = dense.values[dense.n_history + s_ticks + theta_ticks]
    diff = y - seg_vals
    return np.sqrt(np.einsum("ij,ij->i", diff, diff))


def segment_interp_error(cfg: EmConfig, lattices, p: float, samples) -> float:
    """Mean p-th power defect between the dense path and its piecewise
    linear segment representation.

    samples holds (s, theta) pairs with s in [0, T] and theta in [-tau, 0],
    both aligned to the fine lattice ticks (tolerance 1e-9).  For every
    lattice the coarse scheme runs at the config step; y(s + theta) comes
    from the dense extension and ybar_s(theta) from the stored segment.
    Returns the average of defect^p over all (path, sample) pairs.
    """
    if p < 2.0:
        raise ValueError(f"moment order must be at least 2, got {p}")
    lattices = list(lattices)
    if not lattices:
        raise ValueError("need at least one lattice")
    first = lattices[0]
    fine_step = first.fine_step
    r = int(round(cfg.delta / fine_step))
    if r < 1 or abs(r * fine_step - cfg.delta) > 1e-9 * cfg.delta:
        raise ValueError("config step is not an integer multiple of the fine step")

    samples = list(samples)
    if not samples:
        raise ValueError("need at least one (s, theta) sample")
    s_ticks = np.empty(len(samples), dtype=np.int64)
    theta_ticks = np.empty(len(samples), dtype=np.int64)
    for i, (s, theta) in enumerate(samples):
        st = round(s / fine_step)
        tt = round(theta / fine_step)
        if abs(st * fine_step - s) > 1e-9 * max(abs(s), fine_step):
            raise ValueError(f"sample time {s} is not aligned to the fine lattice")
        if abs(tt * fine_step - theta) > 1e-9 * max(abs(theta), fine_step):
            raise ValueError(f"sample lag {theta} is not aligned to the fine lattice")
        if not 0 <= st <= first.num_cells:
            raise ValueError(f"sample time {s} outside [0, {cfg.horizon}]")
        if not -cfg.n_lags * r <= tt <= 0:
            raise ValueError(f"sample lag {theta} outside [-{cfg.tau}, 0]")
        s_ticks[i], theta_ticks[i] = st, tt

    cells, node, frac = _sample_tables(cfg.n_lags, cfg.delta, r, s_ticks,
                                       theta_ticks, fine_step)
    totals = []
    for lattice in lattices:
        if lattice.num_cells != first.num_cells:
            raise ValueError("all lattices must share the same fine grid")
        coarse = em_discrete(cfg, coarsen(lattice, r))
        dense = em_dense_eval(coarse, cfg, lattice)
        defects = _interp_defects(coarse, dense, cells, node, frac,
                                  s_ticks, theta_ticks)
        totals.extend(float(d) ** p for d in defects)
    return math.fsum(totals) / len(totals)


def _build_configs(study: StudyConfig, geo: _Geometry):
    coeffs = study.equation.build()
    initial = study.initial.build()
    tau = study.equation.tau
    cfgs = [
        EmConfig(coeffs, initial, study.horizon, tau, n, m)
        for n, m in zip(geo.n_lags, study.steps)
    ]
    fine_cfg = EmConfig(coeffs, initial, study.horizon, tau,
                        geo.fine_lags, geo.fine_cells)
    return coeffs, initial, cfgs, fine_cfg


def _run_chunk(study: StudyConfig, start: int, stop: int):
    """Simulate paths [start, stop); returns per-path summary arrays.

    The result depends only on (study, path index), never on how paths are
    grouped into chunks or distributed over workers.
    """
    geo = _geometry(study)
    coeffs, initial, cfgs, fine_cfg = _build_configs(study, geo)
    exact = study.equation.exact_params() if study.reference.kind == "exact" else None
    if exact is not None:
        x0 = float(np.atleast_1d(study.initial.params["value"])[0])
    n_steps = len(study.steps)
    count = stop - start
    sup_err = np.empty((count, n_steps))
    sup_norm = np.empty((count, n_steps))
    ref_sup = np.empty(count)
    interp = None
    if study.interp_samples:
        interp = np.empty((count, n_steps))
        s_ticks, theta_ticks = _interp_ticks(study, geo)
        tables = [
            _sample_tables(cfgs[k].n_lags, cfgs[k].delta, geo.ratios[k],
                           s_ticks, theta_ticks, geo.fine_step)
            for k in range(n_steps)
        ]

    for row, path_index in enumerate(range(start, stop)):
        lattice = generate_lattice(
            study.master_seed, path_index, study.horizon, geo.fine_step,
            brownian_dim=coeffs.brownian_dim,
            intensity=study.equation.intensity,
        )
        if exact is not None:
            a, b, c = exact
            ref = exact_linear_jump_path(x0, a, b, c, lattice)
        else:
            ref = em_discrete(fine_cfg, lattice)
        ref_vals = ref.values_from_zero()
        ref_sup[row] = ref.sup_norm()

        for k in range(n_steps):
            coarse_lat = coarsen(lattice, geo.ratios[k])
            coarse = em_discrete(cfgs[k], coarse_lat)
            dense = em_dense_eval(coarse, cfgs[k], lattice)
            diff = ref_vals - dense.values_from_zero()
            sup_err[row, k] = math.sqrt(
                float(np.einsum("ij,ij->i", diff, diff).max())
            )
            sup_norm[row, k] = coarse.sup_norm()
            if interp is not None:
                cells, node, frac = tables[k]
                defects = _interp_defects(coarse, dense, cells, node, frac,
                                          s_ticks, theta_ticks)
                interp[row, k] = (
                    math.fsum(float(d) ** study.interp_p for d in defects)
                    / defects.shape[0]
                )
    return sup_err, sup_norm, ref_sup, interp


def _chunk_worker(args):
    study, start, stop = args
    return start, _run_chunk(study, start, stop)


def convergence_study(study: StudyConfig) -> StudyReport:
    """Run the full coupled-path study described by study.

    Paths are distributed over a process pool when workers > 1; the report
    is byte-identical for any worker count.

    Raises:
        NumericalError: if any path overflows (propagated from the solver).
    """
    geo = _geometry(study)
    n = study.num_paths
    tasks = [
        (study, start, min(start + _CHUNK, n)) for start in range(0, n, _CHUNK)
    ]
    if study.workers == 1 or len(tasks) == 1:
        pieces = [_chunk_worker(t) for t in tasks]
    else:
        with multiprocessing.Pool(processes=study.workers) as pool:
            pieces = pool.map(_chunk_worker, tasks)
    pieces.sort(key=lambda item: item[0])

    n_steps = len(study.steps)
    sup_err = np.vstack([p[1][0] for p in pieces])
    sup_norm = np.vstack([p[1][1] for p in pieces])
    ref_sup = np.concatenate([p[1][2] for p in pieces])
    interp = (
        np.vstack([p[1][3] for p in pieces]) if study.interp_samples else None
    )

    deltas = [study.horizon / m for m in study.steps]
    warnings: list[str] = []
    error_rows = []
    moment_rows = []
    for p in study.p_values:
        for k in range(n_steps):
            error_rows.append((deltas[k], _stat(sup_err[:, k], p)))
            moment_rows.append((deltas[k], _stat(sup_norm[:, k], p)))

    rate_rows = []
    if n_steps < 2:
        warnings.append("single step size: rate fit skipped")
    else:
        for p in study.p_values:
            stats = [s for d, s in error_rows if s.p == p]
            if any(s.root_error == 0.0 for s in stats):
                warnings.append(f"zero error at p={p:g}: rate fit skipped")
                continue
            points = [(deltas[k], stats[k].root_error) for k in range(n_steps)]
            rate_rows.append(fit_rate(points, p))

    interp_rows = []
    if interp is not None:
        for k in range(n_steps):
            # interp[:, k] holds per-path mean defect^p; reuse the moment
            # machinery on the p-th root so the stat row reports the same
            # mean with a path-level standard error.
            vals = [float(v) for v in interp[:, k]]
            mean = math.fsum(vals) / len(vals)
            var = math.fsum((v - mean) ** 2 for v in vals) / (len(vals) - 1)
            interp_rows.append(
                (
                    deltas[k],
                    ErrorStat(
                        p=study.interp_p,
                        num_paths=len(vals),
                        mean_sup_p=mean,
                        root_error=mean ** (1.0 / study.interp_p) if mean > 0 else 0.0,
                        std_error=math.sqrt(var / len(vals)),
                    ),
                )
            )

    return StudyReport(
        error_rows=tuple(error_rows),
        rate_rows=tuple(rate_rows),
        moment_rows=tuple(moment_rows),
        interp_rows=tuple(interp_rows),
        max_sup_norm=float(max(ref_sup.max(), sup_norm.max())),
        num_paths=n,
        master_seed=study.master_seed,
        backend=_kernels.BACKEND,
        warnings=tuple(warnings),
    )


def _csv_text(header: str, rows) -> str:
    lines = [header]
    for row in rows:
        lines.append(",".join(
            format(v, ".17g") if isinstance(v, float) else str(v) for v in row
        ))
    return "\n".join(lines) + "\n"


def write_study_csvs(report: StudyReport, out_dir) -> dict[str, str]:
    """Write errors.csv, rates.csv, moments.csv and, when sampled,
    interp.csv under out_dir.  Returns the paths written, keyed by name."""
    import os

    os.makedirs(out_dir, exist_ok=True)
    paths = {}

    def emit(name: str, header: str, rows) -> None:
        path = os.path.join(out_dir, name)
        _atomic_write(path, _csv_text(header, rows))
        paths[name] = path

    emit(
        "errors.csv",
        "p,delta,num_paths,mean_sup_p,std_error,root_error",
        [
            (s.p, d, s.num_paths, s.mean_sup_p, s.std_error, s.root_error)
            for d, s in report.error_rows
        ],
    )
    emit(
        "rates.csv",
        "p,slope,intercept,residual_norm",
        [(r.p, r.slope, r.intercept, r.residual_norm) for r in report.rate_rows],
    )
    emit(
        "moments.csv",
        "p,delta,num_paths,mean_sup_p,std_error,root_error",
        [
            (s.p, d, s.num_paths, s.mean_sup_p, s.std_error, s.root_error)
            for d, s in report.moment_rows
        ],
    )
    if report.interp_rows:
        emit(
            "interp.csv",
            "p,delta,num_paths,mean_defect_p,std_error,root_defect",
            [
                (s.p, d, s.num_paths, s.mean_sup_p, s.std_error, s.root_error)
                for d, s in report.interp_rows
            ],
        )
    return paths
