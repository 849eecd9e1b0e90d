"""Config parsing, validation messages, and the canonical TOML echo."""

import textwrap

import pytest

from sfdesim.config import (
    ConfigError,
    build_em_config,
    build_study,
    canonical,
    dump_toml,
    parse_config,
)

BASE = """
seed = 42

[equation]
family = "linear"
tau = 0.25
intensity = 2.0
a0 = -1.0
b0 = 0.3
c1 = 0.5

[initial]
kind = "constant"
value = 1.0
"""


def write(tmp_path, text, name="run.toml"):
    path = tmp_path / name
    path.write_text(textwrap.dedent(text))
    return path


def parse(tmp_path, text, **kwargs):
    return parse_config(write(tmp_path, text), **kwargs)


class TestTopLevel:
    def test_minimal_file_parses(self, tmp_path):
        rc = parse(tmp_path, BASE)
        assert rc.seed == 42
        assert rc.workers == 1
        assert rc.equation.family == "linear"
        assert rc.equation.tau == 0.25
        assert rc.equation.params["a0"] == -1.0
        assert rc.equation.params["a1"] == 0.0
        assert rc.initial.params["value"] == 1.0
        assert rc.simulate is None and rc.study is None

    def test_seed_required_somewhere(self, tmp_path):
        text = BASE.replace("seed = 42\n", "")
        with pytest.raises(ConfigError, match="seed"):
            parse(tmp_path, text)

    def test_seed_flag_overrides_file(self, tmp_path):
        rc = parse(tmp_path, BASE, seed=7)
        assert rc.seed == 7

    def test_seed_flag_fills_missing(self, tmp_path):
        text = BASE.replace("seed = 42\n", "")
        rc = parse(tmp_path, text, seed=11)
        assert rc.seed == 11

    def test_seed_range_checked(self, tmp_path):
        with pytest.raises(ConfigError, match="64-bit"):
            parse(tmp_path, BASE, seed=2**64)

    def test_workers_flag_overrides_file(self, tmp_path):
        rc = parse(tmp_path, BASE.replace("seed = 42", "seed = 42\nworkers = 3"))
        assert rc.workers == 3
        assert parse(tmp_path, BASE, workers=2).workers == 2

    def test_workers_must_be_positive(self, tmp_path):
        with pytest.raises(ConfigError, match="workers"):
            parse(tmp_path, BASE, workers=0)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="cannot read"):
            parse_config(tmp_path / "absent.toml")

    def test_invalid_toml(self, tmp_path):
        with pytest.raises(ConfigError, match="invalid TOML"):
            parse(tmp_path, "seed = [unclosed\n")

    def test_equation_section_required(self, tmp_path):
        with pytest.raises(ConfigError, match=r"\[equation\]"):
            parse(tmp_path, "seed = 1\n[initial]\nkind='constant'\nvalue=1.0\n")

    def test_initial_section_required(self, tmp_path):
        with pytest.raises(ConfigError, match=r"\[initial\]"):
            parse(tmp_path, "seed = 1\n[equation]\nfamily='linear'\ntau=0.25\n")


class TestEquationSection:
    def test_unknown_family_names_options(self, tmp_path):
        text = BASE.replace('family = "linear"', 'family = "cubic"')
        with pytest.raises(ConfigError, match="linear, log_growth or distributed"):
            parse(tmp_path, text)

    def test_tau_required(self, tmp_path):
        text = BASE.replace("tau = 0.25\n", "")
        with pytest.raises(ConfigError, match=r"\[equation\].tau"):
            parse(tmp_path, text)

    def test_tau_type_checked(self, tmp_path):
        text = BASE.replace("tau = 0.25", 'tau = "soon"')
        with pytest.raises(ConfigError, match="expected float, got str"):
            parse(tmp_path, text)

    def test_negative_intensity_rejected(self, tmp_path):
        text = BASE.replace("intensity = 2.0", "intensity = -1.0")
        with pytest.raises(ConfigError, match="intensity"):
            parse(tmp_path, text)

    def test_matrix_coefficients(self, tmp_path):
        text = """
        seed = 1
        [equation]
        family = "linear"
        dim = 2
        tau = 0.25
        a0 = [[-1.0, 0.1], [0.0, -0.5]]
        [initial]
        kind = "constant"
        value = [1.0, 2.0]
        """
        rc = parse(tmp_path, text)
        assert rc.equation.params["a0"] == [[-1.0, 0.1], [0.0, -0.5]]
        assert rc.initial.params["value"] == [1.0, 2.0]

    def test_ragged_matrix_rejected(self, tmp_path):
        text = BASE.replace("b0 = 0.3", "b0 = [[0.3]]").replace(
            'family = "linear"', 'family = "linear"\ndim = 2'
        )
        with pytest.raises(ConfigError, match=r"\[equation\].b0"):
            parse(tmp_path, text)

    def test_log_growth_scales_required(self, tmp_path):
        text = """
        seed = 1
        [equation]
        family = "log_growth"
        tau = 0.25
        drift_scale = -0.5
        diffusion_scale = 0.4
        [initial]
        kind = "constant"
        value = 1.0
        """
        with pytest.raises(ConfigError, match="jump_scale"):
            parse(tmp_path, text)

    def test_distributed_atoms_validated(self, tmp_path):
        text = """
        seed = 1
        [equation]
        family = "distributed"
        tau = 0.5
        atoms = [[-0.25, 1.0], [-0.5]]
        [initial]
        kind = "constant"
        value = 1.0
        """
        with pytest.raises(ConfigError, match=r"atoms\[1\]"):
            parse(tmp_path, text)

    def test_truncation_must_be_positive(self, tmp_path):
        text = BASE + "\n"
        text = text.replace("intensity = 2.0", "intensity = 2.0\ntruncation = 0.0")
        with pytest.raises(ConfigError, match="truncation"):
            parse(tmp_path, text)


class TestInitialSection:
    def test_unknown_kind(self, tmp_path):
        text = BASE.replace('kind = "constant"', 'kind = "ramp"')
        with pytest.raises(ConfigError, match="constant or cosine"):
            parse(tmp_path, text)

    def test_constant_value_required(self, tmp_path):
        text = BASE.replace("value = 1.0\n", "")
        with pytest.raises(ConfigError, match=r"\[initial\].value"):
            parse(tmp_path, text)

    def test_vector_length_must_match_dim(self, tmp_path):
        text = BASE.replace("value = 1.0", "value = [1.0, 2.0]")
        with pytest.raises(ConfigError, match="1 components"):
            parse(tmp_path, text)

    def test_cosine_defaults(self, tmp_path):
        text = BASE.replace(
            'kind = "constant"\nvalue = 1.0', 'kind = "cosine"\namplitude = 0.5'
        )
        rc = parse(tmp_path, text)
        assert rc.initial.params == {"base": 0.0, "amplitude": 0.5,
                                     "frequency": 1.0}


SIMULATE = BASE + """
[simulate]
horizon = 1.0
steps = 16
paths = 3
"""


class TestSections:
    def test_simulate_parses(self, tmp_path):
        rc = parse(tmp_path, SIMULATE)
        assert rc.simulate.steps == 16
        assert rc.simulate.paths == 3

    def test_simulate_alignment_names_key(self, tmp_path):
        text = SIMULATE.replace("steps = 16", "steps = 10")
        with pytest.raises(ConfigError, match=r"\[simulate\].steps"):
            parse(tmp_path, text)

    def test_alignment_is_decimal_exact(self, tmp_path):
        # 0.25 * 4 / 1.0 is exactly 1 lag; float slop must not creep in
        text = SIMULATE.replace("steps = 16", "steps = 4")
        assert parse(tmp_path, text).simulate.steps == 4

    def test_study_parses_with_defaults(self, tmp_path):
        text = BASE + """
        [study]
        horizon = 1.0
        steps = [8, 16]
        paths = 100
        """
        rc = parse(tmp_path, text)
        assert rc.study.reference == "fine_em"
        assert rc.study.ref_ratio == 32
        assert rc.study.p_values == (2.0,)

    def test_study_step_alignment_names_index(self, tmp_path):
        text = BASE + """
        [study]
        horizon = 1.0
        steps = [8, 10]
        paths = 100
        """
        with pytest.raises(ConfigError, match=r"steps\[1\]"):
            parse(tmp_path, text)

    def test_study_exact_reference_needs_delay_free(self, tmp_path):
        text = BASE + """
        [study]
        horizon = 1.0
        steps = [8, 16]
        reference = "exact"
        ref_ratio = 1
        paths = 100
        """
        with pytest.raises(ConfigError, match=r"\[study\]"):
            parse(tmp_path, text)

    def test_picard_refuses_log_growth(self, tmp_path):
        text = """
        seed = 1
        [equation]
        family = "log_growth"
        tau = 0.25
        intensity = 1.0
        drift_scale = -0.5
        diffusion_scale = 0.4
        jump_scale = 0.3
        [initial]
        kind = "constant"
        value = 1.0
        [picard]
        horizon = 1.0
        steps = 64
        """
        with pytest.raises(ConfigError, match="refusing to run"):
            parse(tmp_path, text)

    def test_picard_parses_for_linear(self, tmp_path):
        text = BASE + """
        [picard]
        horizon = 1.0
        steps = 64
        iterations = 10
        """
        rc = parse(tmp_path, text)
        assert rc.picard.iterations == 10

    def test_noise_check_defaults(self, tmp_path):
        rc = parse(tmp_path, BASE + "[noise_check]\n")
        assert rc.noise_check.step == 0.001
        assert rc.noise_check.cells == 100_000
        assert rc.noise_check.orders == (1, 2, 3, 4)

    def test_noise_check_orders_validated(self, tmp_path):
        text = BASE + "[noise_check]\norders = [1, 0]\n"
        with pytest.raises(ConfigError, match="orders"):
            parse(tmp_path, text)


class TestBuilders:
    def test_build_em_config_lags(self, tmp_path):
        rc = parse(tmp_path, SIMULATE)
        cfg = build_em_config(rc, rc.simulate.horizon, rc.simulate.steps)
        assert cfg.n_lags == 4
        assert cfg.steps == 16

    def test_build_study_requires_section(self, tmp_path):
        rc = parse(tmp_path, BASE)
        with pytest.raises(ConfigError, match=r"\[study\]"):
            build_study(rc)

    def test_build_study_carries_seed_and_workers(self, tmp_path):
        text = BASE + """
        [study]
        horizon = 1.0
        steps = [8, 16]
        paths = 100
        """
        study = build_study(parse(tmp_path, text, workers=4))
        assert study.master_seed == 42
        assert study.workers == 4
        assert study.reference.ratio == 32


FULL = BASE.replace("seed = 42", "seed = 42\nworkers = 2") + """
[simulate]
horizon = 1.0
steps = 16
paths = 3

[study]
horizon = 1.0
steps = [8, 16]
p = [2, 4]
paths = 100
interp_samples = 32

[picard]
horizon = 1.0
steps = 64

[noise_check]
step = 0.001
cells = 50000
orders = [1, 2]
"""


class TestDumpToml:
    def test_round_trip_is_identity(self, tmp_path):
        rc = parse(tmp_path, FULL)
        echoed = write(tmp_path, dump_toml(rc), name="echo.toml")
        rc2 = parse_config(echoed)
        assert canonical(rc2) == canonical(rc)

    def test_dump_is_idempotent(self, tmp_path):
        rc = parse(tmp_path, FULL)
        text = dump_toml(rc)
        rc2 = parse_config(write(tmp_path, text, name="echo.toml"))
        assert dump_toml(rc2) == text

    def test_defaults_are_materialized(self, tmp_path):
        rc = parse(tmp_path, BASE + "[noise_check]\n")
        text = dump_toml(rc)
        assert "cells = 100000" in text
        assert "orders = [1, 2, 3, 4]" in text

    def test_floats_round_trip_exactly(self, tmp_path):
        text = BASE.replace("b0 = 0.3", "b0 = 0.1000000000000001")
        rc = parse(tmp_path, text)
        rc2 = parse_config(write(tmp_path, dump_toml(rc), name="echo.toml"))
        assert rc2.equation.params["b0"] == rc.equation.params["b0"]

    def test_integral_floats_stay_floats(self, tmp_path):
        text = BASE.replace("intensity = 2.0", "intensity = 2")
        rc = parse(tmp_path, text)
        assert "intensity = 2.0" in dump_toml(rc)

    def test_matrices_dump_as_nested_lists(self, tmp_path):
        text = """
        seed = 1
        [equation]
        family = "linear"
        dim = 2
        tau = 0.25
        a0 = [[-1.0, 0.0], [0.0, -1.0]]
        [initial]
        kind = "constant"
        value = [1.0, 1.0]
        """
        rc = parse(tmp_path, text)
        dump = dump_toml(rc)
        assert "a0 = [[-1.0, 0.0], [0.0, -1.0]]" in dump
        rc2 = parse_config(write(tmp_path, dump, name="echo.toml"))
        assert canonical(rc2) == canonical(rc)
