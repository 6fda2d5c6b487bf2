"""Tests for the key=value experiment configuration layer."""

import numpy as np
import pytest

from pempc.config import (
    EPSILON_RANGE,
    ExperimentConfig,
    default_epsilons,
    parse_config,
    serialize_config,
    to_controller_config,
    validate_config,
)
from pempc.controller import DEFAULT_CONTROLLER_RTOL
from pempc.errors import ConfigError


def write(tmp_path, text):
    path = tmp_path / "run.cfg"
    path.write_text(text)
    return path


class TestParsing:
    def test_none_gives_benchmark_defaults(self):
        cfg = parse_config(None)
        assert cfg == ExperimentConfig()
        assert cfg.N == 30 and cfg.n == 4 and cfg.T == 150
        assert cfg.total_steps == 750
        assert cfg.m == 2 and cfg.p == 2
        assert cfg.epsilon == 0.05518
        assert cfg.seeds == [0, 1, 2, 3, 4]
        assert cfg.seed == 1
        assert cfg.u_setpoint == [1.0, 1.0]
        assert cfg.y_setpoint == [0.65, 0.77]
        assert cfg.input_lower == [-1.0, -1.0]
        assert cfg.input_upper == [1.5, 1.5]
        assert cfg.output_lower is None and cfg.output_upper is None
        assert cfg.mode == "p1" and cfg.case == 1
        assert cfg.rel_tol == DEFAULT_CONTROLLER_RTOL

    def test_empty_file_equals_defaults(self, tmp_path):
        assert parse_config(write(tmp_path, "")) == ExperimentConfig()

    def test_comments_and_blank_lines_ignored(self, tmp_path):
        cfg = parse_config(
            write(tmp_path, "# benchmark tweaks\n\nseed = 3  # inline note\n")
        )
        assert cfg.seed == 3
        assert cfg.N == 30

    def test_overrides_and_vectors(self, tmp_path):
        text = (
            "case = 2\nmode = p0\nepsilon = 0.3\n"
            "seeds = 5, 6, 7\ny_setpoint = 0.6, 0.8\nepsilons = 0.1, 0.2\n"
        )
        cfg = parse_config(write(tmp_path, text))
        assert cfg.case == 2
        assert cfg.mode == "p0"
        assert cfg.epsilon == 0.3
        assert cfg.seeds == [5, 6, 7]
        assert cfg.y_setpoint == [0.6, 0.8]
        assert cfg.epsilons == [0.1, 0.2]

    def test_unknown_key_named_in_error(self, tmp_path):
        with pytest.raises(ConfigError, match="window_len"):
            parse_config(write(tmp_path, "window_len = 5\n"))

    def test_unparsable_value_named_in_error(self, tmp_path):
        with pytest.raises(ConfigError, match="'N'"):
            parse_config(write(tmp_path, "N = thirty\n"))

    def test_missing_equals_reports_line_number(self, tmp_path):
        with pytest.raises(ConfigError, match=":2:"):
            parse_config(write(tmp_path, "seed = 1\njust words\n"))

    def test_missing_file_rejected(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            parse_config(tmp_path / "absent.cfg")


class TestRoundTrip:
    def test_serialize_parse_identity(self, tmp_path):
        original = parse_config(
            write(tmp_path, "seed = 9\nepsilon = 0.007\nr_weight = 3.5e-5\n")
        )
        rendered = serialize_config(original)
        reparsed = parse_config(write(tmp_path, rendered))
        assert reparsed == original

    def test_defaults_round_trip(self, tmp_path):
        original = ExperimentConfig()
        reparsed = parse_config(write(tmp_path, serialize_config(original)))
        assert reparsed == original


class TestValidation:
    def test_window_too_short_for_horizon(self, tmp_path):
        with pytest.raises(ConfigError, match="controller"):
            parse_config(write(tmp_path, "T = 10\n"))

    def test_negative_epsilon(self, tmp_path):
        with pytest.raises(ConfigError, match="epsilon"):
            parse_config(write(tmp_path, "epsilon = -0.1\n"))

    def test_case_and_mode_restricted(self, tmp_path):
        with pytest.raises(ConfigError, match="case"):
            parse_config(write(tmp_path, "case = 3\n"))
        with pytest.raises(ConfigError, match="mode"):
            parse_config(write(tmp_path, "mode = p2\n"))

    def test_total_steps_must_cover_window(self, tmp_path):
        with pytest.raises(ConfigError, match="total_steps"):
            parse_config(write(tmp_path, "total_steps = 100\n"))

    def test_seeds_must_be_nonempty(self, tmp_path):
        with pytest.raises(ConfigError, match="seeds"):
            parse_config(write(tmp_path, "seeds =\n"))

    def test_workers_positive(self, tmp_path):
        with pytest.raises(ConfigError, match="workers"):
            parse_config(write(tmp_path, "workers = 0\n"))

    def test_init_range_ordered(self, tmp_path):
        with pytest.raises(ConfigError, match="init_high"):
            parse_config(write(tmp_path, "init_low = 1.0\ninit_high = 0.0\n"))

    def test_validate_accepts_defaults(self):
        validate_config(ExperimentConfig())


class TestControllerView:
    def test_weights_and_boxes(self):
        cc = to_controller_config(ExperimentConfig())
        assert np.array_equal(cc.Q, 3.0 * np.eye(2))
        assert np.array_equal(cc.R, 1e-4 * np.eye(2))
        assert np.array_equal(cc.input_box.lower, [-1.0, -1.0])
        assert np.array_equal(cc.input_box.upper, [1.5, 1.5])
        assert cc.output_box is None
        assert cc.pe_order == 38
        assert cc.epsilon == 0.05518

    def test_epsilon_override(self):
        cc = to_controller_config(ExperimentConfig(), epsilon=0.25)
        assert cc.epsilon == 0.25

    def test_one_sided_output_box_fills_infinite_side(self):
        exp = ExperimentConfig(output_lower=[0.0, 0.0])
        cc = to_controller_config(exp)
        assert np.array_equal(cc.output_box.lower, [0.0, 0.0])
        assert np.all(np.isinf(cc.output_box.upper))


class TestEpsilonGrid:
    def test_default_epsilons_span_the_range(self):
        eps = default_epsilons(8)
        assert len(eps) == 8
        assert eps[0] == EPSILON_RANGE[0]
        assert eps[-1] == EPSILON_RANGE[1]
        assert all(a < b for a, b in zip(eps, eps[1:]))
