"""Coefficient functionals on segments, built-in families and truncation.

A coefficient set bundles the drift, diffusion and jump functionals of the
equation

    dx(t) = f(x_t) dt + g(x_t) dB(t) + h(x_t) dN(t),

each mapping a segment to a vector (drift, jump) or an n x m matrix
(diffusion).  Built-in families additionally carry a declarative plan, a
list of lag atoms with weight matrices, which lets the solver run them
through the compiled kernel.  Arbitrary Python callables are supported
without a plan at reduced speed.

Truncation replaces a functional f by f composed with node-wise radial
projection onto the ball of radius j.  Inside the ball this is the exact
identity, bit for bit, which the convergence studies rely on.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Any, Callable

import numpy as np

from .segments import Segment, SegmentGrid, _locate

__all__ = [
    "CoefficientSet",
    "CoefficientPlan",
    "BoundPlan",
    "DelayMeasure",
    "EquationSpec",
    "project",
    "truncate_segment",
    "make_truncated",
    "linear_delay_coefficients",
    "distributed_delay_drift",
    "log_growth_coefficients",
    "bind_plan",
    "plan_drift",
    "plan_diffusion",
    "plan_jump",
]

KIND_LINEAR = 0
KIND_LOG_GROWTH = 1

_KIND_CODES = {"linear": KIND_LINEAR, "log_growth": KIND_LOG_GROWTH}


def project(x: np.ndarray, j: float) -> np.ndarray:
    """Radial projection onto the closed ball of radius j.

    Points inside the ball are returned unchanged (a copy with identical
    bits); points outside are scaled back onto the sphere.  The origin maps
    to itself.
    """
    if not (j > 0.0):
        raise ValueError(f"radius must be positive, got {j}")
    x = np.asarray(x, dtype=np.float64)
    nrm = math.sqrt(float(np.dot(x, x)))
    if nrm <= j:
        return x.copy()
    return x * (j / nrm)


def truncate_segment(seg: Segment, j: float) -> Segment:
    """Project every node of the segment onto the ball of radius j.

    Nodes already inside the ball keep their exact floating point values.
    """
    if not (j > 0.0):
        raise ValueError(f"radius must be positive, got {j}")
    out = np.empty_like(seg.values)
    for i in range(out.shape[0]):
        out[i] = project(seg.values[i], j)
    out.flags.writeable = False
    return Segment._wrap(seg.grid, out)


@dataclass(frozen=True)
class CoefficientPlan:
    """Declarative description of a built-in coefficient family.

    Attributes:
        kind: "linear" (atom values combined through weight matrices) or
            "log_growth" (scalar multiples of psi(x) = x (1+ln(1+|x|))^(1/4),
            drift and diffusion reading lag 0 and the jump reading lag -tau).
        thetas: lag atoms in [-tau, 0], strictly ascending.
        drift_w: (q, n, n) weight matrices, one per atom.
        diff_w: (q, m, n, n) weight matrices per atom and Brownian column.
        jump_w: (q, n, n) weight matrices per atom.
        scales: (3,) multipliers for the log_growth kind, else zeros.
        radius: truncation radius, infinity when untruncated.
    """

    kind: str
    dim: int
    brownian_dim: int
    thetas: np.ndarray
    drift_w: np.ndarray
    diff_w: np.ndarray
    jump_w: np.ndarray
    scales: np.ndarray
    radius: float = math.inf


@dataclass(frozen=True)
class BoundPlan:
    """A plan bound to a concrete segment grid: lags resolved to nodes."""

    kind: int
    dim: int
    brownian_dim: int
    node: np.ndarray
    frac: np.ndarray
    drift_w: np.ndarray
    diff_w: np.ndarray
    jump_w: np.ndarray
    scales: np.ndarray
    radius: float


def bind_plan(plan: CoefficientPlan, n_lags: int, delta: float) -> BoundPlan:
    """Resolve the plan's lag atoms to (node, fraction) pairs on a grid.

    The same locate rule as segment evaluation is used, so plan execution
    and direct segment evaluation agree bit for bit.
    """
    q = plan.thetas.shape[0]
    node = np.empty(q, dtype=np.int64)
    frac = np.empty(q, dtype=np.float64)
    tau = n_lags * delta
    slack = 32.0 * float(np.finfo(np.float64).eps) * tau
    for a in range(q):
        theta = float(plan.thetas[a])
        if theta < -tau - slack or theta > slack:
            raise ValueError(
                f"lag atom {theta} outside the delay window [{-tau}, 0]"
            )
        node[a], frac[a] = _locate(n_lags + theta / delta, n_lags)
    return BoundPlan(
        kind=_KIND_CODES[plan.kind],
        dim=plan.dim,
        brownian_dim=plan.brownian_dim,
        node=node,
        frac=frac,
        drift_w=np.ascontiguousarray(plan.drift_w, dtype=np.float64),
        diff_w=np.ascontiguousarray(plan.diff_w, dtype=np.float64),
        jump_w=np.ascontiguousarray(plan.jump_w, dtype=np.float64),
        scales=np.ascontiguousarray(plan.scales, dtype=np.float64),
        radius=plan.radius,
    )


def _atom_value(bound: BoundPlan, a: int, values: np.ndarray, offset: int) -> np.ndarray:
    """Value the a-th lag atom reads from the node window starting at offset.

    With a finite truncation radius the two bracketing nodes are projected
    before interpolation, matching node-wise truncation of the segment.
    """
    i = offset + int(bound.node[a])
    fr = float(bound.frac[a])
    if bound.radius == math.inf:
        if fr == 0.0:
            return values[i]
        return (1.0 - fr) * values[i] + fr * values[i + 1]
    if fr == 0.0:
        return project(values[i], bound.radius)
    return (1.0 - fr) * project(values[i], bound.radius) + fr * project(
        values[i + 1], bound.radius
    )


def _psi(x: np.ndarray) -> np.ndarray:
    # x * (1 + ln(1 + |x|))^(1/4), the slowly superlinear growth profile.
    nrm = math.sqrt(float(np.dot(x, x)))
    return x * (1.0 + math.log1p(nrm)) ** 0.25


def plan_drift(bound: BoundPlan, values: np.ndarray, offset: int = 0) -> np.ndarray:
    """Drift vector of a bound plan read from a node window."""
    if bound.kind == KIND_LOG_GROWTH:
        x = _atom_value(bound, bound.node.shape[0] - 1, values, offset)
        return float(bound.scales[0]) * _psi(x)
    acc = bound.drift_w[0] @ _atom_value(bound, 0, values, offset)
    for a in range(1, bound.node.shape[0]):
        acc = acc + bound.drift_w[a] @ _atom_value(bound, a, values, offset)
    return acc


def plan_diffusion(bound: BoundPlan, values: np.ndarray, offset: int = 0) -> np.ndarray:
    """Diffusion matrix (n, m) of a bound plan read from a node window."""
    n, m = bound.dim, bound.brownian_dim
    if bound.kind == KIND_LOG_GROWTH:
        x = _atom_value(bound, bound.node.shape[0] - 1, values, offset)
        out = np.empty((n, m))
        out[:, 0] = float(bound.scales[1]) * _psi(x)
        return out
    atoms = [
        _atom_value(bound, a, values, offset) for a in range(bound.node.shape[0])
    ]
    out = np.empty((n, m))
    for l in range(m):
        acc = bound.diff_w[0, l] @ atoms[0]
        for a in range(1, len(atoms)):
            acc = acc + bound.diff_w[a, l] @ atoms[a]
        out[:, l] = acc
    return out


def plan_jump(bound: BoundPlan, values: np.ndarray, offset: int = 0) -> np.ndarray:
    """Jump vector of a bound plan read from a node window."""
    if bound.kind == KIND_LOG_GROWTH:
        x = _atom_value(bound, 0, values, offset)
        return float(bound.scales[2]) * _psi(x)
    acc = bound.jump_w[0] @ _atom_value(bound, 0, values, offset)
    for a in range(1, bound.node.shape[0]):
        acc = acc + bound.jump_w[a] @ _atom_value(bound, a, values, offset)
    return acc


@dataclass(frozen=True)
class CoefficientSet:
    """Drift, diffusion and jump functionals plus analytic metadata.

    Attributes:
        dim: state dimension n.
        brownian_dim: number of Brownian components m.
        drift: segment -> (n,) vector.
        diffusion: segment -> (n, m) matrix.
        jump: segment -> (n,) vector.
        lipschitz_global: global sup-norm Lipschitz constant L in
            |f(phi)-f(psi)|^2 <= L ||phi-psi||^2 (and likewise for g, h),
            or None when the family is only locally Lipschitz.
        growth_const: linear growth constant K in
            |f(phi)|^2 <= K (1 + ||phi||^2), or None when unavailable.
        plan: declarative family description enabling the compiled kernel,
            or None for opaque callables.
    """

    dim: int
    brownian_dim: int
    drift: Callable[[Segment], np.ndarray]
    diffusion: Callable[[Segment], np.ndarray]
    jump: Callable[[Segment], np.ndarray]
    lipschitz_global: float | None = None
    growth_const: float | None = None
    plan: CoefficientPlan | None = None


def _plan_callables(plan: CoefficientPlan):
    """Segment-facing callables that execute the plan.

    Binding is cached per segment grid, so repeated evaluation on the same
    grid reuses the resolved atom table and matches kernel output exactly.
    """
    cache: dict[SegmentGrid, BoundPlan] = {}

    def bound_for(grid: SegmentGrid) -> BoundPlan:
        bp = cache.get(grid)
        if bp is None:
            bp = bind_plan(plan, grid.n_lags, grid.delta)
            cache[grid] = bp
        return bp

    def drift(seg: Segment) -> np.ndarray:
        return plan_drift(bound_for(seg.grid), seg.values)

    def diffusion(seg: Segment) -> np.ndarray:
        return plan_diffusion(bound_for(seg.grid), seg.values)

    def jump(seg: Segment) -> np.ndarray:
        return plan_jump(bound_for(seg.grid), seg.values)

    return drift, diffusion, jump


def _as_matrix(value: Any, dim: int, name: str) -> np.ndarray:
    arr = np.asarray(value, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr * np.eye(dim)
    if arr.shape != (dim, dim):
        raise ValueError(f"{name} must be scalar or ({dim}, {dim}), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be finite")
    return arr


def _pair_lipschitz(w_now: np.ndarray, w_lag: np.ndarray) -> float:
    # |W0 u + W1 v| <= (s(W0) + s(W1)) sup over the segment, s = spectral norm.
    return (
        float(np.linalg.norm(w_now, 2)) + float(np.linalg.norm(w_lag, 2))
    ) ** 2


def linear_delay_coefficients(
    a0: Any,
    a1: Any,
    b0: Any,
    b1: Any,
    c0: Any,
    c1: Any,
    tau: float,
    dim: int = 1,
) -> CoefficientSet:
    """Linear two-lag family reading the segment at lags 0 and -tau.

        f(phi) = a0 phi(0) + a1 phi(-tau)
        g(phi) = (b0 phi(0) + b1 phi(-tau))   as the single Brownian column
        h(phi) = c0 phi(0) + c1 phi(-tau)

    Matrix arguments may be scalars (interpreted as multiples of the
    identity) or (dim, dim) arrays.  The family is globally Lipschitz; the
    exact constant and the induced linear growth constant are attached.
    """
    if not (tau > 0.0 and math.isfinite(tau)):
        raise ValueError(f"tau must be positive and finite, got {tau}")
    a0m, a1m = _as_matrix(a0, dim, "a0"), _as_matrix(a1, dim, "a1")
    b0m, b1m = _as_matrix(b0, dim, "b0"), _as_matrix(b1, dim, "b1")
    c0m, c1m = _as_matrix(c0, dim, "c0"), _as_matrix(c1, dim, "c1")
    lip = max(
        _pair_lipschitz(a0m, a1m),
        _pair_lipschitz(b0m, b1m),
        _pair_lipschitz(c0m, c1m),
    )
    plan = CoefficientPlan(
        kind="linear",
        dim=dim,
        brownian_dim=1,
        thetas=np.array([-tau, 0.0]),
        drift_w=np.stack([a1m, a0m]),
        diff_w=np.stack([b1m, b0m])[:, np.newaxis, :, :],
        jump_w=np.stack([c1m, c0m]),
        scales=np.zeros(3),
    )
    drift, diffusion, jump = _plan_callables(plan)
    return CoefficientSet(
        dim=dim,
        brownian_dim=1,
        drift=drift,
        diffusion=diffusion,
        jump=jump,
        lipschitz_global=lip,
        growth_const=2.0 * lip,
        plan=plan,
    )


@dataclass(frozen=True)
class DelayMeasure:
    """Finite atomic measure on [-tau, 0]: atoms (theta_k, w_k), w_k >= 0.

    Atoms must be strictly ascending in theta.  total_weight is the mass.
    """

    atoms: tuple[tuple[float, float], ...]

    def __post_init__(self) -> None:
        if not self.atoms:
            raise ValueError("measure needs at least one atom")
        prev = -math.inf
        for theta, w in self.atoms:
            if theta > 0.0:
                raise ValueError(f"atom lag {theta} must be nonpositive")
            if theta <= prev:
                raise ValueError("atom lags must be strictly ascending")
            if not (w >= 0.0 and math.isfinite(w)):
                raise ValueError(f"atom weight {w} must be finite and nonnegative")
            prev = theta

    @property
    def total_weight(self) -> float:
        return math.fsum(w for _, w in self.atoms)


def distributed_delay_drift(measure: DelayMeasure, base: CoefficientSet) -> CoefficientSet:
    """Replace the drift of base by the distributed delay functional.

        f(phi) = sum_k w_k phi(theta_k)

    Diffusion and jump are inherited from base.  When base carries a linear
    plan the result keeps a merged plan (atom union), so the compiled kernel
    still applies; otherwise the result runs through callables only.
    """
    dim = base.dim

    def drift(seg: Segment) -> np.ndarray:
        from .segments import segment_eval

        acc = np.zeros(dim)
        for theta, w in measure.atoms:
            acc = acc + w * segment_eval(seg, theta)
        return acc

    lip_f = measure.total_weight ** 2
    lip = None
    growth = None
    if base.lipschitz_global is not None:
        lip = max(lip_f, base.lipschitz_global)
        growth = 2.0 * lip

    plan = None
    if base.plan is not None and base.plan.kind == "linear":
        old = base.plan
        thetas = sorted(
            {float(t) for t, _ in measure.atoms} | {float(t) for t in old.thetas}
        )
        q, n, m = len(thetas), dim, old.brownian_dim
        drift_w = np.zeros((q, n, n))
        diff_w = np.zeros((q, m, n, n))
        jump_w = np.zeros((q, n, n))
        index = {t: a for a, t in enumerate(thetas)}
        for theta, w in measure.atoms:
            drift_w[index[float(theta)]] += w * np.eye(n)
        for a, t in enumerate(old.thetas):
            diff_w[index[float(t)]] += old.diff_w[a]
            jump_w[index[float(t)]] += old.jump_w[a]
        plan = CoefficientPlan(
            kind="linear",
            dim=n,
            brownian_dim=m,
            thetas=np.array(thetas),
            drift_w=drift_w,
            diff_w=diff_w,
            jump_w=jump_w,
            scales=np.zeros(3),
            radius=old.radius,
        )
        drift_p, diffusion_p, jump_p = _plan_callables(plan)
        return CoefficientSet(
            dim=dim,
            brownian_dim=m,
            drift=drift_p,
            diffusion=diffusion_p,
            jump=jump_p,
            lipschitz_global=lip,
            growth_const=growth,
            plan=plan,
        )

    return CoefficientSet(
        dim=dim,
        brownian_dim=base.brownian_dim,
        drift=drift,
        diffusion=base.diffusion,
        jump=base.jump,
        lipschitz_global=lip,
        growth_const=growth,
        plan=None,
    )


def log_growth_coefficients(
    drift_scale: float,
    diffusion_scale: float,
    jump_scale: float,
    tau: float,
    dim: int = 1,
) -> CoefficientSet:
    """Locally Lipschitz family with slowly growing local constants.

    With psi(x) = x (1 + ln(1 + |x|))^(1/4):

        f(phi) = drift_scale * psi(phi(0))
        g(phi) = diffusion_scale * psi(phi(0))   (single Brownian column)
        h(phi) = jump_scale * psi(phi(-tau))

    The local Lipschitz constant on the ball of radius j grows like
    (log j)^(1/2), so the family sits inside the regime where truncated
    schemes retain a polynomial rate.  No global constants are attached.
    """
    if not (tau > 0.0 and math.isfinite(tau)):
        raise ValueError(f"tau must be positive and finite, got {tau}")
    plan = CoefficientPlan(
        kind="log_growth",
        dim=dim,
        brownian_dim=1,
        thetas=np.array([-tau, 0.0]),
        drift_w=np.zeros((2, dim, dim)),
        diff_w=np.zeros((2, 1, dim, dim)),
        jump_w=np.zeros((2, dim, dim)),
        scales=np.array([drift_scale, diffusion_scale, jump_scale]),
    )
    drift, diffusion, jump = _plan_callables(plan)
    return CoefficientSet(
        dim=dim,
        brownian_dim=1,
        drift=drift,
        diffusion=diffusion,
        jump=jump,
        lipschitz_global=None,
        growth_const=None,
        plan=plan,
    )


def make_truncated(base: CoefficientSet, j: float) -> CoefficientSet:
    """Compose every functional of base with node-wise projection at radius j.

    Inside the ball of radius j the result is the exact identity on base,
    returning bit-identical values.  Global Lipschitz and growth constants
    are preserved since projection is non-expansive and fixes the origin.
    """
    if not (j > 0.0):
        raise ValueError(f"radius must be positive, got {j}")

    plan = None
    if base.plan is not None:
        plan = replace(base.plan, radius=min(j, base.plan.radius))
        drift, diffusion, jump = _plan_callables(plan)
    else:
        base_drift, base_diffusion, base_jump = base.drift, base.diffusion, base.jump

        def drift(seg: Segment) -> np.ndarray:
            return base_drift(truncate_segment(seg, j))

        def diffusion(seg: Segment) -> np.ndarray:
            return base_diffusion(truncate_segment(seg, j))

        def jump(seg: Segment) -> np.ndarray:
            return base_jump(truncate_segment(seg, j))

    return CoefficientSet(
        dim=base.dim,
        brownian_dim=base.brownian_dim,
        drift=drift,
        diffusion=diffusion,
        jump=jump,
        lipschitz_global=base.lipschitz_global,
        growth_const=base.growth_const,
        plan=plan,
    )


@dataclass(frozen=True, eq=False)
class EquationSpec:
    """Picklable recipe for a coefficient set plus noise parameters.

    Worker processes rebuild coefficient sets from this description, which
    keeps Monte Carlo studies independent of how tasks are distributed.

    Families:
        "linear": params a0, a1, b0, b1, c0, c1 (scalars or (dim, dim)).
        "log_growth": params drift_scale, diffusion_scale, jump_scale.
        "distributed": params atoms [(theta, w), ...] plus b0, b1, c0, c1.
        "factory": params build (module-level callable returning a
            CoefficientSet); library use only, not reachable from config
            files.
    """

    family: str
    dim: int
    tau: float
    intensity: float
    params: dict[str, Any] = field(default_factory=dict)
    truncation: float | None = None

    def __post_init__(self) -> None:
        if self.family not in ("linear", "log_growth", "distributed", "factory"):
            raise ValueError(f"unknown coefficient family {self.family!r}")
        if not (self.tau > 0.0 and math.isfinite(self.tau)):
            raise ValueError(f"tau must be positive and finite, got {self.tau}")
        if not (self.intensity >= 0.0 and math.isfinite(self.intensity)):
            raise ValueError(f"intensity must be nonnegative, got {self.intensity}")
        if self.truncation is not None and not (self.truncation > 0.0):
            raise ValueError(f"truncation radius must be positive, got {self.truncation}")

    def build(self) -> CoefficientSet:
        p = self.params
        if self.family == "linear":
            base = linear_delay_coefficients(
                p.get("a0", 0.0), p.get("a1", 0.0),
                p.get("b0", 0.0), p.get("b1", 0.0),
                p.get("c0", 0.0), p.get("c1", 0.0),
                tau=self.tau, dim=self.dim,
            )
        elif self.family == "log_growth":
            base = log_growth_coefficients(
                p["drift_scale"], p["diffusion_scale"], p["jump_scale"],
                tau=self.tau, dim=self.dim,
            )
        elif self.family == "distributed":
            inner = linear_delay_coefficients(
                0.0, 0.0,
                p.get("b0", 0.0), p.get("b1", 0.0),
                p.get("c0", 0.0), p.get("c1", 0.0),
                tau=self.tau, dim=self.dim,
            )
            measure = DelayMeasure(tuple((float(t), float(w)) for t, w in p["atoms"]))
            base = distributed_delay_drift(measure, inner)
        else:
            base = p["build"]()
            if base.dim != self.dim:
                raise ValueError(
                    f"factory produced dim {base.dim}, spec says {self.dim}"
                )
        if self.truncation is not None:
            base = make_truncated(base, self.truncation)
        return base

    def exact_params(self) -> tuple[float, float, float] | None:
        """Coefficients (a, b, c) when the equation is scalar, linear and
        delay-free, so that a closed-form strong solution exists."""
        if self.family != "linear" or self.dim != 1:
            return None
        p = self.params

        def scalar(name: str) -> float:
            return float(np.asarray(p.get(name, 0.0)).reshape(-1)[0])

        if scalar("a1") != 0.0 or scalar("b1") != 0.0 or scalar("c1") != 0.0:
            return None
        return scalar("a0"), scalar("b0"), scalar("c0")

    def is_global_lipschitz(self) -> bool:
        if self.family in ("linear", "distributed"):
            return True
        if self.family == "log_growth":
            return False
        return self.build().lipschitz_global is not None
