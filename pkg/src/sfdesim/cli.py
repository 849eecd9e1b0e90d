"""Command line interface.

Four subcommands, all driven by one TOML config file:

    simulate     integrate sample paths, write one CSV per path
    study        coupled-path convergence study, write errors/rates CSVs
    picard-check successive-approximation diagnostic against the same grid
    noise-check  moment checks on the driving noise generators

Exit codes: 0 success, 2 bad configuration, 3 numerical failure,
4 a diagnostic check failed.  Every run writes manifest.json recording
the command, seed, backend and the normalized config echo.
"""

from __future__ import annotations

import json
import logging
import os
import sys
import time

import click
import numpy as np

from . import __version__
from ._kernels import BACKEND
from .analysis import convergence_study, write_study_csvs
from .config import (
    ConfigError,
    RunConfig,
    build_em_config,
    build_study,
    canonical,
    dump_toml,
    parse_config,
)
from .noise import (
    check_brownian_moments,
    check_poisson_moments,
    generate_lattice,
)
from .solver import NumericalError, em_discrete, picard_solve

log = logging.getLogger("sfdesim")

EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_CHECK_FAILED = 4


def _atomic_write(path: str, text: str) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as handle:
        handle.write(text)
    os.replace(tmp, path)


def _write_manifest(out_dir: str, command: str, rc: RunConfig,
                    outputs: list[str], extra: dict | None = None) -> None:
    manifest = {
        "command": command,
        "package_version": __version__,
        "kernel_backend": BACKEND,
        "seed": rc.seed,
        "workers": rc.workers,
        "config": canonical(rc),
        "outputs": sorted(outputs),
    }
    if extra:
        manifest.update(extra)
    _atomic_write(
        os.path.join(out_dir, "manifest.json"),
        json.dumps(manifest, indent=2, sort_keys=True) + "\n",
    )


def _load(config_path: str, seed: int | None, workers: int | None) -> RunConfig:
    try:
        return parse_config(config_path, seed=seed, workers=workers)
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)


def _common(fn):
    fn = click.option("--config", "config_path", required=True,
                      type=click.Path(exists=False, dir_okay=False),
                      help="TOML run configuration.")(fn)
    fn = click.option("--seed", type=int, default=None,
                      help="Override the config's master seed.")(fn)
    fn = click.option("--workers", type=int, default=None,
                      help="Override the config's worker count.")(fn)
    fn = click.option("--out", "out_dir", default="sfdesim-out",
                      type=click.Path(file_okay=False),
                      help="Output directory (created if needed).")(fn)
    fn = click.option("--dump-config", is_flag=True,
                      help="Print the normalized config echo and exit.")(fn)
    return fn


def _start(config_path, seed, workers, out_dir, dump_config) -> RunConfig | None:
    rc = _load(config_path, seed, workers)
    if dump_config:
        click.echo(dump_toml(rc), nl=False)
        return None
    os.makedirs(out_dir, exist_ok=True)
    return rc


@click.group()
@click.version_option(version=__version__, prog_name="sfdesim")
def main() -> None:
    """Strong simulation and convergence diagnostics for delayed
    jump-diffusion equations."""
    logging.basicConfig(
        level=logging.INFO, stream=sys.stderr,
        format="%(levelname)s %(message)s",
    )


@main.command()
@_common
def simulate(config_path, seed, workers, out_dir, dump_config):
    """Integrate sample paths on the [simulate] grid."""
    rc = _start(config_path, seed, workers, out_dir, dump_config)
    if rc is None:
        return
    if rc.simulate is None:
        click.echo("config error: [simulate]: required section is missing",
                   err=True)
        sys.exit(EXIT_CONFIG)
    s = rc.simulate
    cfg = build_em_config(rc, s.horizon, s.steps)
    delta = cfg.delta
    outputs = []
    started = time.monotonic()
    try:
        for index in range(s.paths):
            lattice = generate_lattice(
                master_seed=rc.seed, path_index=index, horizon=s.horizon,
                fine_step=delta, brownian_dim=cfg.coefficients.brownian_dim,
                intensity=rc.equation.intensity,
            )
            path = em_discrete(cfg, lattice)
            name = f"path_{index:04d}.csv"
            path.write_csv(os.path.join(out_dir, name))
            outputs.append(name)
            log.info("path %d of %d written (%d jumps)", index + 1, s.paths,
                     int(lattice.poisson_counts.sum()))
    except NumericalError as exc:
        click.echo(f"numerical failure: {exc}", err=True)
        sys.exit(EXIT_NUMERICAL)
    _write_manifest(out_dir, "simulate", rc, outputs)
    log.info("simulate finished in %.2fs", time.monotonic() - started)
    click.echo(f"wrote {len(outputs)} paths to {out_dir}")


@main.command()
@_common
def study(config_path, seed, workers, out_dir, dump_config):
    """Run the coupled-path convergence study from [study]."""
    rc = _start(config_path, seed, workers, out_dir, dump_config)
    if rc is None:
        return
    try:
        study_cfg = build_study(rc)
    except (ConfigError, ValueError) as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    started = time.monotonic()
    log.info("study: %d paths, steps %s, backend %s",
             study_cfg.num_paths, list(study_cfg.steps), BACKEND)
    try:
        report = convergence_study(study_cfg)
    except NumericalError as exc:
        click.echo(f"numerical failure: {exc}", err=True)
        sys.exit(EXIT_NUMERICAL)
    for message in report.warnings:
        log.warning("%s", message)
    outputs = write_study_csvs(report, out_dir)
    _write_manifest(out_dir, "study", rc, [os.path.basename(p) for p in outputs],
                    extra={"max_sup_norm": report.max_sup_norm})
    for rate in report.rate_rows:
        click.echo(
            f"p={rate.p:g} slope {rate.slope:.4f} "
            f"intercept {rate.intercept:.4f} "
            f"residual {rate.residual_norm:.3e}"
        )
    log.info("study finished in %.2fs", time.monotonic() - started)


@main.command(name="picard-check")
@_common
def picard_check(config_path, seed, workers, out_dir, dump_config):
    """Compare successive approximations with the same-grid solution."""
    rc = _start(config_path, seed, workers, out_dir, dump_config)
    if rc is None:
        return
    if rc.picard is None:
        click.echo("config error: [picard]: required section is missing",
                   err=True)
        sys.exit(EXIT_CONFIG)
    p = rc.picard
    cfg = build_em_config(rc, p.horizon, p.steps)
    lattice = generate_lattice(
        master_seed=rc.seed, path_index=0, horizon=p.horizon,
        fine_step=cfg.delta, brownian_dim=cfg.coefficients.brownian_dim,
        intensity=rc.equation.intensity,
    )
    try:
        result = picard_solve(cfg, lattice, iterations=p.iterations)
        reference = em_discrete(cfg, lattice)
    except NumericalError as exc:
        click.echo(f"numerical failure: {exc}", err=True)
        sys.exit(EXIT_NUMERICAL)

    last = result.iterates[-1]
    start = last.n_history
    gap = float(
        np.sqrt(
            np.einsum(
                "ij,ij->i",
                last.values[start:] - reference.values[start:],
                last.values[start:] - reference.values[start:],
            )
        ).max()
    )

    rows = ["n,sup_diff,ratio"]
    diffs = result.sup_diffs
    for n, d in enumerate(diffs, start=1):
        # ratio of the NEXT difference to this one; empty on the last row
        ratio = f"{diffs[n] / d:.17g}" if n < len(diffs) and d > 0 else ""
        rows.append(f"{n},{d:.17g},{ratio}")
    _atomic_write(os.path.join(out_dir, "picard.csv"), "\n".join(rows) + "\n")
    summary = (
        "iterations,final_diff,em_gap,diverged\n"
        f"{p.iterations},{result.sup_diffs[-1]:.17g},{gap:.17g},"
        f"{int(result.diverged)}\n"
    )
    _atomic_write(os.path.join(out_dir, "picard_summary.csv"), summary)
    _write_manifest(out_dir, "picard-check", rc,
                    ["picard.csv", "picard_summary.csv"])

    for n, d in enumerate(result.sup_diffs, start=1):
        click.echo(f"iteration {n:3d}  sup diff {d:.6e}")
    click.echo(f"gap to same-grid solution: {gap:.6e}")
    if result.diverged:
        click.echo("iteration diverged: successive differences grew", err=True)
        sys.exit(EXIT_NUMERICAL)


@main.command(name="noise-check")
@_common
def noise_check(config_path, seed, workers, out_dir, dump_config):
    """Check empirical moments of the generated noise increments."""
    rc = _start(config_path, seed, workers, out_dir, dump_config)
    if rc is None:
        return
    settings = rc.noise_check
    if settings is None:
        click.echo("config error: [noise_check]: required section is missing",
                   err=True)
        sys.exit(EXIT_CONFIG)
    horizon = settings.step * settings.cells
    lattice = generate_lattice(
        master_seed=rc.seed, path_index=0, horizon=horizon,
        fine_step=settings.step, brownian_dim=1,
        intensity=rc.equation.intensity,
    )
    checks = check_brownian_moments(lattice, settings.orders)
    checks += check_poisson_moments(lattice, settings.orders)

    rows = ["label,p,empirical,expected,std_error,z_score,passed"]
    failures = 0
    for c in checks:
        rows.append(
            f"{c.label},{c.p:.17g},{c.empirical:.17g},{c.expected:.17g},"
            f"{c.std_error:.17g},{c.z_score:.17g},{int(c.passed)}"
        )
        status = "PASS" if c.passed else "FAIL"
        click.echo(
            f"{status} {c.label} p={c.p:g}: empirical {c.empirical:.6e} "
            f"expected {c.expected:.6e} (z = {c.z_score:.2f})"
        )
        failures += not c.passed
    _atomic_write(os.path.join(out_dir, "noise_check.csv"),
                  "\n".join(rows) + "\n")
    _write_manifest(out_dir, "noise-check", rc, ["noise_check.csv"])
    if failures:
        click.echo(f"{failures} moment checks failed", err=True)
        sys.exit(EXIT_CHECK_FAILED)


if __name__ == "__main__":
    main()
