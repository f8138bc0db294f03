import json

import pytest

from posenas.config import (PipelineConfig, SynthSection, config_to_dict, dump_config, parse_config,
                            parse_config_dict)
from posenas.errors import ConfigError

MINIMAL = {"data": {"synthetic": {}}}


def test_minimal_config_fills_documented_defaults(tmp_path):
    cfg = parse_config_dict(MINIMAL, str(tmp_path))
    assert isinstance(cfg, PipelineConfig)
    assert cfg.data.synthetic == SynthSection()
    assert cfg.lifter.hidden_width == 1024 and cfg.lifter.dropout == 0.25
    assert cfg.search.nodes_per_cell == 5 and cfg.search.controller_lr == 0.00035
    assert cfg.recognizer.cells_per_stage == 2 and cfg.recognizer.augment.crop_padding == 4
    assert cfg.output_dir == str(tmp_path / "runs" / "default")


@pytest.mark.parametrize("raw,key", [
    ({"data": {"synthetic": {}}, "lifterr": {}}, "lifterr"),
    ({"data": {"synthetic": {"frame": 3}}}, "data.synthetic.frame"),
    ({"data": {"synthetic": {}}, "recognizer": {"augment": {"flip": 1}}}, "recognizer.augment.flip"),
])
def test_unknown_keys_are_named(raw, key):
    with pytest.raises(ConfigError, match=f"unknown config key '{key}'"):
        parse_config_dict(raw, ".")


@pytest.mark.parametrize("section,key,value", [
    ("lifter", "epochs", 2.5), ("lifter", "epochs", True), ("encoder", "enhance", 1),
    ("search", "lr_max", "fast"), ("encoder", "colormap", 3),
])
def test_bad_types_are_rejected(section, key, value):
    raw = {"data": {"synthetic": {}}, section: {key: value}}
    with pytest.raises(ConfigError, match=f"{section}.{key}"):
        parse_config_dict(raw, ".")


def test_integers_are_accepted_as_floats():
    cfg = parse_config_dict({"data": {"synthetic": {}}, "lifter": {"lr": 1}}, ".")
    assert cfg.lifter.lr == 1.0 and isinstance(cfg.lifter.lr, float)


@pytest.mark.parametrize("raw,msg", [
    ({"data": {}}, "either data.synthetic"),
    ({}, "missing required config key 'data'"),
    ({"data": {"synthetic": {}, "protocol": "cv"}}, "unknown protocol"),
    ({"data": {"synthetic": {}}, "lifter": {"objective": "both"}}, "lifter.objective"),
    ({"data": {"synthetic": {}}, "encoder": {"source": "video"}}, "encoder.source"),
    ({"data": {"actions_3d": "nope.txt"}}, "does not exist"),
])
def test_semantic_errors(raw, msg):
    with pytest.raises(ConfigError, match=msg):
        parse_config_dict(raw, "/nonexistent-dir")


def test_relative_paths_resolve_against_config_dir(tmp_path):
    (tmp_path / "a.txt").write_text("x")
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"data": {"actions_3d": "a.txt"}, "output_dir": "out"}))
    cfg = parse_config(str(path))
    assert cfg.data.actions_3d == str(tmp_path / "a.txt")
    assert cfg.output_dir == str(tmp_path / "out")


def test_invalid_json_and_missing_file(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError, match="invalid JSON"):
        parse_config(str(bad))
    with pytest.raises(ConfigError, match="not found"):
        parse_config(str(tmp_path / "none.json"))


def test_dump_is_a_fixed_point(tmp_path):
    cfg = parse_config_dict({"data": {"synthetic": {"num_classes": 4}}, "lifter": {"epochs": 7}},
                            str(tmp_path))
    first = tmp_path / "one.json"
    dump_config(cfg, first)
    again = parse_config(str(first))
    assert config_to_dict(again) == config_to_dict(cfg)
    second = tmp_path / "two.json"
    dump_config(again, second)
    assert first.read_bytes() == second.read_bytes()


def test_shipped_config_parses():
    import os
    root = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
    cfg = parse_config(os.path.join(root, "configs", "synthetic.json"))
    assert cfg.search.nodes_per_cell == 3 and cfg.search.stem_channels == 4
