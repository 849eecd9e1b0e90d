"""Compare the compiled and pure-Python integration kernels.

Runs the same batch of coupled discrete/dense integrations through both
backends and reports wall time per path plus the speedup.  The two
backends produce bit-identical output, so the timing is the only thing
being compared; a mismatch is reported as a hard error.

Usage: python benchmarks/kernel_bench.py [--paths 200] [--steps 512]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from sfdesim import EquationSpec, generate_lattice, coarsen
from sfdesim._kernels import pure
from sfdesim.coefficients import bind_plan
from sfdesim.solver import EmConfig, InitialSpec, _history_nodes

try:
    from sfdesim._kernels import _speedups
except ImportError:
    _speedups = None


def _run_backend(kernel, cfg: EmConfig, lattices, dense_ratio: int) -> tuple[float, float]:
    """Integrate every lattice; returns (seconds, checksum)."""
    n_lags, steps = cfg.n_lags, cfg.steps
    dt = cfg.delta
    bound = bind_plan(cfg.coefficients.plan, n_lags, dt)
    history = _history_nodes(cfg.initial, n_lags, dt)
    checksum = 0.0
    started = time.perf_counter()
    for fine in lattices:
        coarse = coarsen(fine, dense_ratio)
        nodes = np.empty((n_lags + steps + 1, cfg.coefficients.dim))
        nodes[: n_lags + 1] = history
        bad = kernel.em_discrete(bound, nodes, n_lags, dt,
                                 coarse.brownian_increments, coarse.poisson_counts)
        if bad != -1:
            raise RuntimeError(f"integration blew up at step {bad}")
        out = np.empty((steps * dense_ratio + 1, cfg.coefficients.dim))
        bad = kernel.em_dense(bound, nodes, n_lags, dense_ratio, dt,
                              fine.fine_step, fine.brownian_cum,
                              fine.poisson_cum, out)
        if bad != -1:
            raise RuntimeError(f"dense evaluation blew up in cell {bad}")
        checksum += float(nodes[-1, 0]) + float(out[-1, 0])
    return time.perf_counter() - started, checksum


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--paths", type=int, default=200)
    parser.add_argument("--steps", type=int, default=512)
    parser.add_argument("--ratio", type=int, default=8,
                        help="dense refinement ratio")
    parser.add_argument("--seed", type=int, default=20240901)
    args = parser.parse_args()

    eq = EquationSpec(
        family="linear", dim=1, tau=0.25, intensity=2.0,
        params=dict(a0=-1.0, a1=0.5, b0=0.4, b1=0.1, c1=0.3),
    )
    cfg = EmConfig(
        coefficients=eq.build(),
        initial=InitialSpec(kind="constant", dim=1, params=dict(value=1.0)).build(),
        horizon=1.0, tau=eq.tau,
        n_lags=round(eq.tau * args.steps), steps=args.steps,
    )
    fine_step = cfg.delta / args.ratio
    lattices = [
        generate_lattice(master_seed=args.seed, path_index=i, horizon=1.0,
                         fine_step=fine_step, brownian_dim=1,
                         intensity=eq.intensity)
        for i in range(args.paths)
    ]

    print(f"{args.paths} paths, {args.steps} coarse steps, "
          f"dense ratio {args.ratio}")
    pure_time, pure_sum = _run_backend(pure, cfg, lattices, args.ratio)
    print(f"pure python: {pure_time:8.3f}s "
          f"({1e3 * pure_time / args.paths:7.3f} ms/path)")
    if _speedups is None:
        print("compiled:    not built")
        return
    comp_time, comp_sum = _run_backend(_speedups, cfg, lattices, args.ratio)
    print(f"compiled:    {comp_time:8.3f}s "
          f"({1e3 * comp_time / args.paths:7.3f} ms/path)")
    if pure_sum != comp_sum:
        raise SystemExit("FAIL: backends disagree bit-for-bit")
    print(f"speedup:     {pure_time / comp_time:8.1f}x  "
          "(outputs bit-identical)")


if __name__ == "__main__":
    main()
