import json
from pathlib import Path

import pytest

from shapeopt.core.exceptions import ConfigurationException
from shapeopt.schemas.run_config import PRESETS, build_run_config, deep_merge, load_run_config

CONFIG_DIR = Path(__file__).resolve().parents[2] / "configs"


def test_defaults():
    config = build_run_config({})
    assert config.problem.n_s == 32
    assert config.problem.layers == 4
    assert config.smoothing.eps1 == 1.0
    assert config.smoothing.eps2 == 0.0625
    assert config.optimizer.algorithm == "sqp_mixed"
    assert config.output.record_time is False


def test_preset_is_applied_under_explicit_values():
    config = build_run_config({"preset": "onera-analogue-surface", "smoothing": {"eps3": 0.5}})
    assert config.smoothing.eps1 == 56.9
    assert config.smoothing.eps2 == 0.9
    assert config.smoothing.eps3 == 0.5
    assert config.problem.r_min == 0.9


@pytest.mark.parametrize("name", sorted(PRESETS))
def test_every_preset_validates(name):
    config = build_run_config({"preset": name})
    assert config.preset == name


def test_unknown_preset():
    with pytest.raises(ConfigurationException) as exc_info:
        build_run_config({"preset": "rae2822"})
    assert exc_info.value.setting == "preset"


@pytest.mark.parametrize("data, setting", [
    ({"smoothing": {"eps2": -1.0}}, "smoothing.eps2"),
    ({"problem": {"n_s": 2}}, "problem.n_s"),
    ({"optimizer": {"algorithm": "bfgs"}}, "optimizer.algorithm"),
    ({"problem": {"unknown": 1}}, "problem.unknown"),
])
def test_invalid_fields_name_their_path(data, setting):
    with pytest.raises(ConfigurationException) as exc_info:
        build_run_config(data)
    assert exc_info.value.setting == setting
    assert exc_info.value.code == "CONFIGURATION_ERROR"
    assert setting in exc_info.value.message


def test_model_level_checks():
    with pytest.raises(ConfigurationException):
        build_run_config({"smoothing": {"eps1": 0.0, "eps2": 0.0, "eps3": 0.0}})
    with pytest.raises(ConfigurationException):
        build_run_config({"problem": {"radius": 2.0, "outer_radius": 1.5}})
    with pytest.raises(ConfigurationException):
        build_run_config({"parameterization": {"peaks": [0.5]}})


def test_non_mapping_is_rejected():
    with pytest.raises(ConfigurationException):
        build_run_config(["not", "a", "mapping"])


def test_deep_merge_keeps_base_untouched():
    base = {"a": {"b": 1, "c": 2}}
    merged = deep_merge(base, {"a": {"c": 3}, "d": 4})
    assert merged == {"a": {"b": 1, "c": 3}, "d": 4}
    assert base == {"a": {"b": 1, "c": 2}}


def test_yaml_and_json_files(tmp_path):
    yaml_path = tmp_path / "run.yaml"
    yaml_path.write_text("name: demo\nproblem:\n  n_s: 16\n", encoding="utf-8")
    json_path = tmp_path / "run.json"
    json_path.write_text(json.dumps({"name": "demo", "problem": {"n_s": 16}}), encoding="utf-8")
    assert load_run_config(yaml_path) == load_run_config(json_path)


def test_empty_yaml_gives_defaults(tmp_path):
    path = tmp_path / "empty.yaml"
    path.write_text("", encoding="utf-8")
    assert load_run_config(path) == build_run_config({})


def test_unreadable_or_malformed_files(tmp_path):
    with pytest.raises(ConfigurationException):
        load_run_config(tmp_path / "missing.yaml")
    broken = tmp_path / "broken.json"
    broken.write_text("{", encoding="utf-8")
    with pytest.raises(ConfigurationException) as exc_info:
        load_run_config(broken)
    assert "cannot parse" in exc_info.value.message


@pytest.mark.parametrize("path", sorted(CONFIG_DIR.glob("*.*")), ids=lambda p: p.name)
def test_shipped_configs_load(path):
    config = load_run_config(path)
    assert config.name


def test_initial_modes_need_the_nodal_radial_basis():
    modes = {"p0_modes": {2: 0.05}}
    with pytest.raises(ConfigurationException):
        build_run_config({"parameterization": modes})
    with pytest.raises(ConfigurationException):
        build_run_config({"parameterization": {"kind": "radial", "basis": "fourier", **modes}})
    with pytest.raises(ConfigurationException):
        build_run_config({"parameterization": {"kind": "radial", "basis": "nodal", "p0": [0.0], **modes}})
    config = build_run_config({"parameterization": {"kind": "radial", "basis": "nodal", "p0_modes": {"2": 0.05}}})
    assert config.parameterization.p0_modes == {2: 0.05}


def test_perimeter_presets_share_the_problem():
    sobolev = build_run_config({"preset": "perimeter-sobolev"})
    descent = build_run_config({"preset": "perimeter-descent"})
    assert sobolev.problem == descent.problem
    assert sobolev.problem.state_weight == 0.0
    assert sobolev.parameterization.p0_modes == {2: 0.05, 4: 0.02}
    assert descent.optimizer.hessian == "identity"
