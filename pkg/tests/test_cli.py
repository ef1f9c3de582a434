import json

import numpy as np
import pytest

from unitalloc import ConfigError
from unitalloc.cli import (
    RunManifest,
    build_preset,
    load_config,
    main,
    run_experiment,
)


def tiny_config_doc():
    return {
        "n": 2,
        "m": 1,
        "steps": 5,
        "seed": 1,
        "resources": [{"capacity": 1.0, "tau": 0.1, "omega0": 0.5}],
        "population": {
            "kind": "explicit",
            "costs": [
                {"linear": [0.0], "monomials": [{"resource": 0, "coeff": 1.0, "exp": 2.0}]},
                {"linear": [0.0], "monomials": [{"resource": 0, "coeff": 2.0, "exp": 2.0}]},
            ],
        },
    }


def write_config(tmp_path, doc, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return path


class TestPresets:
    def test_ev_charging_parameters(self):
        cfg = build_preset("ev-charging")
        assert cfg.n == 1200 and cfg.m == 2 and cfg.steps == 2000
        assert [s.capacity for s in cfg.resources] == [400.0, 500.0]
        assert [s.tau for s in cfg.resources] == [0.0002275, 0.0002125]
        assert [s.omega0 for s in cfg.resources] == [0.328, 0.35]
        assert cfg.include_linear is False
        assert cfg.population.class_sizes == (300, 300, 300, 300)

    def test_theorem2_parameters(self):
        cfg = build_preset("single-resource-theorem2")
        assert cfg.n == 100 and cfg.constant_omega
        assert cfg.resources[0].omega0 == 0.5
        cfg.ensure_valid()

    def test_unknown_preset(self):
        with pytest.raises(ConfigError):
            build_preset("nope")


class TestLoadConfig:
    def test_valid_config(self, tmp_path):
        cfg = load_config(write_config(tmp_path, tiny_config_doc()))
        assert cfg.n == 2 and cfg.m == 1 and cfg.steps == 5
        assert cfg.resources[0].capacity == 1.0

    def test_zero_agents_rejected(self, tmp_path):
        doc = tiny_config_doc()
        doc["n"] = 0
        with pytest.raises(ConfigError, match="n must be"):
            load_config(write_config(tmp_path, doc))

    def test_resource_length_mismatch(self, tmp_path):
        doc = tiny_config_doc()
        doc["m"] = 2
        with pytest.raises(ConfigError, match="resources"):
            load_config(write_config(tmp_path, doc))

    def test_unknown_field_rejected(self, tmp_path):
        doc = tiny_config_doc()
        doc["surprise"] = 1
        with pytest.raises(ConfigError, match="unknown"):
            load_config(write_config(tmp_path, doc))

    def test_unknown_resource_field_rejected(self, tmp_path):
        doc = tiny_config_doc()
        doc["resources"][0]["color"] = "red"
        with pytest.raises(ConfigError, match="resources\\[0\\]"):
            load_config(write_config(tmp_path, doc))

    def test_parse_error_reports_position(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text('{"n": 2,,}')
        with pytest.raises(ConfigError, match="line 1"):
            load_config(path)

    def test_ev_population_config(self, tmp_path):
        doc = {
            "n": 8, "m": 2, "steps": 10, "seed": 0,
            "resources": [
                {"capacity": 3.0, "tau": 0.01, "omega0": 0.328},
                {"capacity": 4.0, "tau": 0.01, "omega0": 0.35},
            ],
            "population": {"kind": "ev", "class_sizes": [2, 2, 2, 2]},
            "include_linear": False,
        }
        cfg = load_config(write_config(tmp_path, doc))
        assert cfg.population.class_sizes == (2, 2, 2, 2)


class TestRunExperiment:
    def test_artifacts_and_exit_code(self, tmp_path):
        path = write_config(tmp_path, tiny_config_doc())
        manifest = RunManifest(preset="custom", config_path=str(path),
                               out_dir=str(tmp_path / "out"), oracle=True,
                               emit_snapshots=True)
        assert run_experiment(manifest) == 0
        out = tmp_path / "out"
        assert (out / "trace.csv").exists()
        assert (out / "snapshots.csv").exists()
        assert (out / "oracle.json").exists()
        summary = json.loads((out / "summary.json").read_text())
        assert summary["schema"] == "unitalloc-summary/1"
        assert summary["status"] == "ok"
        assert summary["preset"] == "custom"
        assert summary["oracle"]["kind"] == "social-optimum"

    def test_fixed_point_oracle_for_constant_omega(self, tmp_path):
        manifest = RunManifest(preset="single-resource-theorem2",
                               steps=2000, out_dir=str(tmp_path / "o"),
                               oracle=True, emit_trace=False)
        assert run_experiment(manifest) == 0
        summary = json.loads((tmp_path / "o" / "summary.json").read_text())
        assert summary["oracle"]["kind"] == "fixed-point"
        assert summary["oracle"]["max_abs_err"] < 0.2

    def test_reruns_are_byte_identical(self, tmp_path):
        path = write_config(tmp_path, tiny_config_doc())
        blobs = []
        for name in ("a", "b"):
            manifest = RunManifest(preset="custom", config_path=str(path),
                                   out_dir=str(tmp_path / name))
            assert run_experiment(manifest) == 0
            blobs.append((tmp_path / name / "trace.csv").read_bytes())
        assert blobs[0] == blobs[1]

    def test_golden_trace_head(self, tmp_path):
        # first data row is fully hand-checkable: all agents hold the
        # resource at k=0, gradients are 2 and 4, sigma needs no clamping;
        # omega(1) = 0.5 - 0.1 * (2 - 1) = 0.4
        path = write_config(tmp_path, tiny_config_doc())
        manifest = RunManifest(preset="custom", config_path=str(path),
                               out_dir=str(tmp_path / "g"))
        assert run_experiment(manifest) == 0
        lines = (tmp_path / "g" / "trace.csv").read_text().splitlines()
        assert lines[0] == "k,omega_1,sum_xi_1,sum_y_1,grad_min_1,grad_max_1,clamps_1"
        assert lines[1] == "0,0.5,2,2,2,4,0"
        assert lines[2].startswith("1,0.40000000000000002,")
        assert len(lines) == 7    # header + steps 0..5

    def test_bad_config_exit_code(self, tmp_path):
        doc = tiny_config_doc()
        doc["n"] = -3
        path = write_config(tmp_path, doc)
        manifest = RunManifest(preset="custom", config_path=str(path),
                               out_dir=str(tmp_path / "bad"))
        assert run_experiment(manifest) == 2

    def test_gamma_override(self, tmp_path):
        path = write_config(tmp_path, tiny_config_doc())
        manifest = RunManifest(preset="custom", config_path=str(path),
                               out_dir=str(tmp_path / "gm"), gamma=(0.9,))
        assert run_experiment(manifest) == 0
        summary = json.loads((tmp_path / "gm" / "summary.json").read_text())
        assert summary["config"]["resources"][0]["gamma"] == 0.9

    def test_gamma_arity_mismatch(self, tmp_path):
        path = write_config(tmp_path, tiny_config_doc())
        manifest = RunManifest(preset="custom", config_path=str(path),
                               out_dir=str(tmp_path / "gm2"), gamma=(0.9, 0.8))
        assert run_experiment(manifest) == 2


class TestMainCli:
    def test_preset_run(self, tmp_path):
        code = main(["--preset", "single-resource-theorem2",
                     "--steps", "500", "--out", str(tmp_path / "m"),
                     "--snapshot-every", "100"])
        assert code == 0
        assert (tmp_path / "m" / "trace.csv").exists()

    def test_flag_overrides_take_precedence(self, tmp_path):
        code = main(["--preset", "single-resource-theorem2", "--steps", "123",
                     "--seed", "9", "--mode", "loop",
                     "--out", str(tmp_path / "p")])
        assert code == 0
        summary = json.loads((tmp_path / "p" / "summary.json").read_text())
        assert summary["config"]["steps"] == 123
        assert summary["config"]["seed"] == 9
        assert summary["config"]["mode"] == "loop"

    def test_custom_without_config_is_an_error(self):
        with pytest.raises(SystemExit):
            main(["--preset", "custom"])

    def test_config_with_conflicting_preset_is_an_error(self, tmp_path):
        path = write_config(tmp_path, tiny_config_doc())
        with pytest.raises(SystemExit):
            main(["--preset", "ev-charging", "--config", str(path)])

    def test_missing_source_is_an_error(self):
        with pytest.raises(SystemExit):
            main([])

    def test_bad_gamma_string(self, tmp_path):
        with pytest.raises(SystemExit):
            main(["--preset", "ev-charging", "--gamma", "a,b",
                  "--out", str(tmp_path / "x")])
