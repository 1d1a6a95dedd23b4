import json
import math

import numpy as np
import pytest
import yaml
from hypothesis import given, settings, strategies as st

from zrpeq.config import RunConfig, load_config
from zrpeq.errors import ConfigError, InvalidParam
from zrpeq.expression import expression_weight, load_weight, parse_expression
from zrpeq.weights import builtin

EH = "factorial(k1) / pochhammer(1 + b, k1) * ((k1 + 1) / (k1 + 2))^k2"
SF = "factorial(k1) / pochhammer(1 + b, k1) * (k1 + 1)^k2 / factorial(k2)"


class TestExpression:
    @pytest.mark.parametrize("text,name", [(EH, "evans-hanney"), (SF, "slowed-free")])
    def test_matches_builtin(self, text, name):
        w = expression_weight(text, {"b": 4})
        ref = builtin(name, b=4)
        np.testing.assert_allclose(w.log_box(40, 40), ref.log_box(40, 40), atol=1e-11, rtol=1e-13)

    @given(st.integers(0, 400), st.integers(0, 400))
    @settings(max_examples=50, deadline=None)
    def test_large_arguments_stay_finite(self, k1, k2):
        w = expression_weight(SF, {"b": 3})
        assert math.isfinite(float(w.log_eval(k1, k2)))

    @pytest.mark.parametrize("bad", ["__import__('os')", "k1.real", "open(1)", "k3 + 1", "[k1]",
                                     "k1 if k2 else 1", "pochhammer(1)"])
    def test_rejects_unsafe_or_unknown(self, bad):
        with pytest.raises(InvalidParam):
            parse_expression(bad)

    def test_rejects_nonpositive(self):
        with pytest.raises(InvalidParam):
            expression_weight("k1 - 1")

    def test_xi_estimate(self):
        w = expression_weight("exp(k1 + k2)")
        assert w.exp_bound_xi == pytest.approx(math.exp(math.sqrt(2)), rel=1e-6)

    def test_yaml_file(self, tmp_path):
        f = tmp_path / "w.yaml"
        f.write_text(yaml.safe_dump({"name": "mine", "expression": EH, "params": {"b": 4},
                                     "tail_exponent": [4, None]}))
        w = load_weight(f)
        assert w.name == "mine" and w.tail_exponent == (4.0, None)
        assert w.eval(1, 0) == pytest.approx(0.2)

    def test_table_file(self, tmp_path):
        f = tmp_path / "t.json"
        f.write_text(json.dumps({"log_weights": [[0.0, -1.0], [-2.0, -3.0]]}))
        assert load_weight(f).eval(1, 1) == pytest.approx(math.exp(-3.0))

    def test_bad_files(self, tmp_path):
        f = tmp_path / "x.json"
        f.write_text(json.dumps({"expression": "1", "log_weights": [[0.0]]}))
        with pytest.raises(ConfigError):
            load_weight(f)
        f.write_text("{not json")
        with pytest.raises(ConfigError):
            load_weight(f)
        with pytest.raises(ConfigError):
            load_weight(tmp_path / "missing.json")


class TestRunConfig:
    def test_round_trip(self):
        cfg = RunConfig("solve", weight="slowed-free", params={"b": 4.0}, rho=[2.0, 3.0], seed=5)
        again = RunConfig.from_dict(json.loads(cfg.dumps()))
        assert again == cfg

    def test_unknown_key(self):
        with pytest.raises(ConfigError):
            RunConfig.from_dict({"subcommand": "solve", "colour": "red"})

    def test_unknown_subcommand(self):
        with pytest.raises(ConfigError):
            RunConfig("plot")

    def test_bad_tolerance(self):
        with pytest.raises(ConfigError):
            RunConfig("solve", tol=0.0)

    def test_load_yaml(self, tmp_path):
        f = tmp_path / "c.yaml"
        f.write_text("subcommand: gc-eval\nweight: evans-hanney\nparams: {b: 4}\npsi: [1, 1]\n")
        assert RunConfig.from_dict(load_config(f)).psi == [1, 1]
