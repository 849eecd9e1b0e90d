"""TOML run configuration: parsing, validation and canonical dump.

A config file fully determines a run: equation, initial data, grid
geometry, seed.  Validation failures raise ConfigError with the offending
key named; the CLI maps that to exit code 2.  dump_toml writes a normalized
echo of the parsed config that parses back to the identical configuration.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Any

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from .analysis import ReferenceSpec, StudyConfig
from .coefficients import EquationSpec
from .solver import EmConfig, InitialSpec

__all__ = ["ConfigError", "RunConfig", "parse_config", "dump_toml"]


class ConfigError(Exception):
    """Invalid or inconsistent run configuration."""


@dataclass(frozen=True)
class SimulateSettings:
    horizon: float
    steps: int
    paths: int


@dataclass(frozen=True)
class StudySettings:
    horizon: float
    steps: tuple[int, ...]
    reference: str
    ref_ratio: int
    p_values: tuple[float, ...]
    paths: int
    interp_samples: int
    interp_p: float


@dataclass(frozen=True)
class PicardSettings:
    horizon: float
    steps: int
    iterations: int


@dataclass(frozen=True)
class NoiseCheckSettings:
    step: float
    cells: int
    orders: tuple[int, ...]


@dataclass(frozen=True, eq=False)
class RunConfig:
    """Parsed and validated configuration for one CLI invocation."""

    seed: int
    workers: int
    equation: EquationSpec
    initial: InitialSpec
    simulate: SimulateSettings | None
    study: StudySettings | None
    picard: PicardSettings | None
    noise_check: NoiseCheckSettings | None


def _get(table: dict, key: str, kind, where: str, default=None, required: bool = False):
    if key not in table:
        if required:
            raise ConfigError(f"{where}.{key}: required key is missing")
        return default
    value = table[key]
    if kind is float and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    if kind is not None and (not isinstance(value, kind) or isinstance(value, bool) and kind is not bool):
        raise ConfigError(
            f"{where}.{key}: expected {getattr(kind, '__name__', kind)}, "
            f"got {type(value).__name__}"
        )
    return value


def _positive(value: float, where: str) -> float:
    if not (isinstance(value, (int, float)) and value > 0 and math.isfinite(value)):
        raise ConfigError(f"{where}: must be positive and finite, got {value}")
    return float(value)


def _matrix_param(table: dict, key: str, dim: int, where: str):
    """Scalar or (dim, dim) nested list; returned as written (build
    normalizes).  Missing keys default to 0."""
    if key not in table:
        return 0.0
    value = table[key]
    if isinstance(value, bool):
        raise ConfigError(f"{where}.{key}: expected a number or matrix")
    if isinstance(value, (int, float)):
        return float(value)
    if isinstance(value, list):
        if len(value) != dim or any(
            not isinstance(r, list) or len(r) != dim for r in value
        ):
            raise ConfigError(f"{where}.{key}: matrix must be {dim} rows of {dim}")
        try:
            return [[float(x) for x in row] for row in value]
        except (TypeError, ValueError):
            raise ConfigError(f"{where}.{key}: matrix entries must be numbers")
    raise ConfigError(f"{where}.{key}: expected a number or matrix")


def _check_alignment(tau: float, horizon: float, steps: int, where: str) -> None:
    """tau must span a whole positive number of cells of width horizon/steps.

    Decimal-exact check through Fraction of the literal values, so configs
    like tau = 0.25, horizon = 1.0, steps = 4 validate exactly."""
    try:
        lags = Fraction(str(tau)) * steps / Fraction(str(horizon))
    except (ValueError, ZeroDivisionError):
        raise ConfigError(f"{where}: cannot relate tau {tau} to horizon {horizon}")
    if lags.denominator != 1 or lags < 1:
        raise ConfigError(
            f"{where}: delay tau = {tau} does not span a whole number of "
            f"cells of width {horizon}/{steps}"
        )


def _parse_equation(table: dict) -> EquationSpec:
    where = "[equation]"
    family = _get(table, "family", str, where, required=True)
    dim = _get(table, "dim", int, where, default=1)
    if dim < 1:
        raise ConfigError(f"{where}.dim: must be at least 1, got {dim}")
    tau = _positive(_get(table, "tau", float, where, required=True), f"{where}.tau")
    intensity = _get(table, "intensity", float, where, default=0.0)
    if not (intensity >= 0.0 and math.isfinite(intensity)):
        raise ConfigError(f"{where}.intensity: must be nonnegative, got {intensity}")
    truncation = _get(table, "truncation", float, where)
    if truncation is not None:
        truncation = _positive(truncation, f"{where}.truncation")

    params: dict[str, Any] = {}
    if family == "linear":
        for key in ("a0", "a1", "b0", "b1", "c0", "c1"):
            params[key] = _matrix_param(table, key, dim, where)
    elif family == "log_growth":
        for key in ("drift_scale", "diffusion_scale", "jump_scale"):
            params[key] = float(_get(table, key, float, where, required=True))
    elif family == "distributed":
        atoms = _get(table, "atoms", list, where, required=True)
        parsed = []
        for i, atom in enumerate(atoms):
            if (
                not isinstance(atom, list)
                or len(atom) != 2
                or not all(isinstance(x, (int, float)) for x in atom)
            ):
                raise ConfigError(
                    f"{where}.atoms[{i}]: expected a [theta, weight] pair"
                )
            parsed.append([float(atom[0]), float(atom[1])])
        params["atoms"] = parsed
        for key in ("b0", "b1", "c0", "c1"):
            params[key] = _matrix_param(table, key, dim, where)
    else:
        raise ConfigError(
            f"{where}.family: unknown family {family!r} "
            "(expected linear, log_growth or distributed)"
        )
    try:
        return EquationSpec(
            family=family, dim=dim, tau=tau, intensity=intensity,
            params=params, truncation=truncation,
        )
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}")


def _parse_initial(table: dict, dim: int) -> InitialSpec:
    where = "[initial]"
    kind = _get(table, "kind", str, where, required=True)
    if kind not in ("constant", "cosine"):
        raise ConfigError(
            f"{where}.kind: unknown kind {kind!r} (expected constant or cosine)"
        )

    def vector(key: str, default=None, required=False):
        if key not in table:
            if required:
                raise ConfigError(f"{where}.{key}: required key is missing")
            return default
        value = table[key]
        if isinstance(value, bool):
            raise ConfigError(f"{where}.{key}: expected a number or list")
        if isinstance(value, (int, float)):
            return float(value)
        if isinstance(value, list) and all(
            isinstance(x, (int, float)) and not isinstance(x, bool) for x in value
        ):
            if len(value) != dim:
                raise ConfigError(f"{where}.{key}: expected {dim} components")
            return [float(x) for x in value]
        raise ConfigError(f"{where}.{key}: expected a number or list")

    params: dict[str, Any] = {}
    if kind == "constant":
        params["value"] = vector("value", required=True)
    else:
        params["base"] = vector("base", default=0.0)
        params["amplitude"] = vector("amplitude", default=1.0)
        params["frequency"] = vector("frequency", default=1.0)
    try:
        return InitialSpec(kind=kind, dim=dim, params=params)
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}")


def parse_config(path, seed: int | None = None, workers: int | None = None) -> RunConfig:
    """Parse and validate a TOML config file.

    seed and workers given here (CLI flags) override the file's values.
    A seed must be present in one of the two places: runs never fall back
    to nondeterministic seeding.
    """
    try:
        with open(path, "rb") as handle:
            raw = tomllib.load(handle)
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}")
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML in {path}: {exc}")

    if seed is None:
        seed = _get(raw, "seed", int, "top level")
    if seed is None:
        raise ConfigError(
            "top level.seed: required (set it in the file or pass --seed)"
        )
    if not 0 <= seed < 2**64:
        raise ConfigError(f"top level.seed: must be a 64-bit unsigned integer")
    if workers is None:
        workers = _get(raw, "workers", int, "top level", default=1)
    if workers < 1:
        raise ConfigError(f"top level.workers: must be at least 1, got {workers}")

    if "equation" not in raw:
        raise ConfigError("[equation]: required section is missing")
    equation = _parse_equation(raw["equation"])
    if "initial" not in raw:
        raise ConfigError("[initial]: required section is missing")
    initial = _parse_initial(raw["initial"], equation.dim)

    simulate = None
    if "simulate" in raw:
        t = raw["simulate"]
        where = "[simulate]"
        horizon = _positive(_get(t, "horizon", float, where, required=True),
                            f"{where}.horizon")
        steps = _get(t, "steps", int, where, required=True)
        if steps < 1:
            raise ConfigError(f"{where}.steps: must be at least 1, got {steps}")
        paths = _get(t, "paths", int, where, default=1)
        if paths < 1:
            raise ConfigError(f"{where}.paths: must be at least 1, got {paths}")
        _check_alignment(equation.tau, horizon, steps, f"{where}.steps")
        simulate = SimulateSettings(horizon=horizon, steps=steps, paths=paths)

    study = None
    if "study" in raw:
        t = raw["study"]
        where = "[study]"
        horizon = _positive(_get(t, "horizon", float, where, required=True),
                            f"{where}.horizon")
        steps_raw = _get(t, "steps", list, where, required=True)
        if not steps_raw or not all(
            isinstance(m, int) and not isinstance(m, bool) and m >= 1
            for m in steps_raw
        ):
            raise ConfigError(f"{where}.steps: expected a list of positive integers")
        for i, m in enumerate(steps_raw):
            _check_alignment(equation.tau, horizon, m, f"{where}.steps[{i}]")
        reference = _get(t, "reference", str, where, default="fine_em")
        if reference not in ("exact", "fine_em"):
            raise ConfigError(
                f"{where}.reference: expected exact or fine_em, got {reference!r}"
            )
        ref_ratio = _get(t, "ref_ratio", int, where,
                         default=8 if reference == "exact" else 32)
        p_raw = _get(t, "p", list, where, default=[2.0])
        if not p_raw or not all(
            isinstance(p, (int, float)) and not isinstance(p, bool) for p in p_raw
        ):
            raise ConfigError(f"{where}.p: expected a list of moment orders")
        paths = _get(t, "paths", int, where, required=True)
        interp_samples = _get(t, "interp_samples", int, where, default=0)
        interp_p = _get(t, "interp_p", float, where, default=2.0)
        study = StudySettings(
            horizon=horizon, steps=tuple(steps_raw), reference=reference,
            ref_ratio=ref_ratio, p_values=tuple(float(p) for p in p_raw),
            paths=paths, interp_samples=interp_samples, interp_p=interp_p,
        )
        try:
            build_study(RunConfig(seed, workers, equation, initial,
                                  None, study, None, None))
        except ValueError as exc:
            raise ConfigError(f"{where}: {exc}")

    picard = None
    if "picard" in raw:
        t = raw["picard"]
        where = "[picard]"
        horizon = _positive(_get(t, "horizon", float, where, required=True),
                            f"{where}.horizon")
        steps = _get(t, "steps", int, where, required=True)
        if steps < 1:
            raise ConfigError(f"{where}.steps: must be at least 1, got {steps}")
        _check_alignment(equation.tau, horizon, steps, f"{where}.steps")
        iterations = _get(t, "iterations", int, where, default=20)
        if iterations < 1:
            raise ConfigError(f"{where}.iterations: must be at least 1")
        if not equation.is_global_lipschitz():
            raise ConfigError(
                f"{where}: the {equation.family} family is not globally "
                "Lipschitz; the iteration's contraction guarantee does not "
                "apply, refusing to run"
            )
        picard = PicardSettings(horizon=horizon, steps=steps, iterations=iterations)

    noise_check = None
    if "noise_check" in raw:
        t = raw["noise_check"]
        where = "[noise_check]"
        step = _positive(_get(t, "step", float, where, default=0.001),
                         f"{where}.step")
        cells = _get(t, "cells", int, where, default=100_000)
        if cells < 2:
            raise ConfigError(f"{where}.cells: must be at least 2, got {cells}")
        orders_raw = _get(t, "orders", list, where, default=[1, 2, 3, 4])
        if not orders_raw or not all(
            isinstance(p, int) and not isinstance(p, bool) and p >= 1
            for p in orders_raw
        ):
            raise ConfigError(f"{where}.orders: expected a list of integers >= 1")
        noise_check = NoiseCheckSettings(
            step=step, cells=cells, orders=tuple(orders_raw)
        )

    return RunConfig(
        seed=seed, workers=workers, equation=equation, initial=initial,
        simulate=simulate, study=study, picard=picard, noise_check=noise_check,
    )


def build_em_config(rc: RunConfig, horizon: float, steps: int) -> EmConfig:
    """EmConfig for the run's equation on a (horizon, steps) grid."""
    lags = round(rc.equation.tau * steps / horizon)
    return EmConfig(
        coefficients=rc.equation.build(),
        initial=rc.initial.build(),
        horizon=horizon,
        tau=rc.equation.tau,
        n_lags=lags,
        steps=steps,
    )


def build_study(rc: RunConfig) -> StudyConfig:
    """StudyConfig from the parsed [study] section."""
    if rc.study is None:
        raise ConfigError("[study]: required section is missing")
    s = rc.study
    return StudyConfig(
        equation=rc.equation,
        initial=rc.initial,
        horizon=s.horizon,
        steps=s.steps,
        reference=ReferenceSpec(kind=s.reference, ratio=s.ref_ratio),
        p_values=s.p_values,
        num_paths=s.paths,
        master_seed=rc.seed,
        workers=rc.workers,
        interp_samples=s.interp_samples,
        interp_p=s.interp_p,
    )


def canonical(rc: RunConfig) -> dict:
    """Plain nested-dict form of the config: stable key order, matrices as
    nested lists.  Used for the TOML echo and run manifests."""

    def norm_matrix(value):
        if isinstance(value, (int, float)):
            return float(value)
        return [[float(x) for x in row] for row in value]

    eq: dict[str, Any] = {
        "family": rc.equation.family,
        "dim": rc.equation.dim,
        "tau": rc.equation.tau,
        "intensity": rc.equation.intensity,
    }
    if rc.equation.truncation is not None:
        eq["truncation"] = rc.equation.truncation
    if rc.equation.family == "linear":
        for key in ("a0", "a1", "b0", "b1", "c0", "c1"):
            eq[key] = norm_matrix(rc.equation.params[key])
    elif rc.equation.family == "log_growth":
        for key in ("drift_scale", "diffusion_scale", "jump_scale"):
            eq[key] = float(rc.equation.params[key])
    else:
        eq["atoms"] = [[float(t), float(w)] for t, w in rc.equation.params["atoms"]]
        for key in ("b0", "b1", "c0", "c1"):
            eq[key] = norm_matrix(rc.equation.params[key])

    def norm_vector(value):
        if isinstance(value, (int, float)):
            return float(value)
        return [float(x) for x in value]

    init: dict[str, Any] = {"kind": rc.initial.kind}
    for key, value in sorted(rc.initial.params.items()):
        init[key] = norm_vector(value)

    out: dict[str, Any] = {"seed": rc.seed, "workers": rc.workers,
                           "equation": eq, "initial": init}
    if rc.simulate is not None:
        out["simulate"] = {
            "horizon": rc.simulate.horizon,
            "steps": rc.simulate.steps,
            "paths": rc.simulate.paths,
        }
    if rc.study is not None:
        out["study"] = {
            "horizon": rc.study.horizon,
            "steps": list(rc.study.steps),
            "reference": rc.study.reference,
            "ref_ratio": rc.study.ref_ratio,
            "p": list(rc.study.p_values),
            "paths": rc.study.paths,
            "interp_samples": rc.study.interp_samples,
            "interp_p": rc.study.interp_p,
        }
    if rc.picard is not None:
        out["picard"] = {
            "horizon": rc.picard.horizon,
            "steps": rc.picard.steps,
            "iterations": rc.picard.iterations,
        }
    if rc.noise_check is not None:
        out["noise_check"] = {
            "step": rc.noise_check.step,
            "cells": rc.noise_check.cells,
            "orders": list(rc.noise_check.orders),
        }
    return out


def _toml_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        if value == math.inf:
            return "inf"
        if value == -math.inf:
            return "-inf"
        text = repr(value)
        # Bare integral floats need a decimal marker to parse back as float.
        if "." not in text and "e" not in text and "E" not in text:
            text += ".0"
        return text
    if isinstance(value, str):
        escaped = value.replace("\\", "\\\\").replace('"', '\\"')
        return f'"{escaped}"'
    if isinstance(value, list):
        return "[" + ", ".join(_toml_value(v) for v in value) + "]"
    raise TypeError(f"cannot serialize {type(value).__name__} to TOML")


def dump_toml(rc: RunConfig) -> str:
    """Normalized TOML echo of the config.

    parse_config(dump_toml(rc)) reproduces rc exactly: floats are written
    with round-tripping precision and all defaults are materialized.
    """
    data = canonical(rc)
    lines = []
    for key, value in data.items():
        if not isinstance(value, dict):
            lines.append(f"{key} = {_toml_value(value)}")
    for section, table in data.items():
        if isinstance(table, dict):
            lines.append("")
            lines.append(f"[{section}]")
            for key, value in table.items():
                lines.append(f"{key} = {_toml_value(value)}")
    return "\n".join(lines) + "\n"
