from dataclasses import fields

import pytest

from saot.config import (
    DEFAULTS,
    SECTIONS,
    build_config,
    coerce,
    format_defaults,
    load_config,
    parse_config_text,
    parse_value,
)
from saot.errors import ConfigurationError, EvenDimensionError

FITTED = {"input_shift", "input_scale", "output_scale"}


@pytest.mark.parametrize("section", sorted(SECTIONS))
def test_table_matches_dataclass_defaults(section):
    cls = SECTIONS[section]
    table = {s.key: s.default for s in DEFAULTS if s.section == section}
    declared = {f.name: f.default for f in fields(cls) if f.name not in FITTED | {"seed"}}
    assert table == declared


def test_every_setting_documented():
    keys = [s.key for s in DEFAULTS]
    assert len(keys) == len(set(keys))
    assert all(s.unit and s.doc for s in DEFAULTS)


def test_format_defaults_round_trips():
    parsed = parse_config_text(format_defaults())
    assert parsed == {s.key: s.default for s in DEFAULTS}


@pytest.mark.parametrize("text, value", [
    ("true", True), ("false", False), ("3", 3), ("1e-3", 1e-3), ('"sa"', "sa"),
    ("sa", "sa"), ("[16, 32]", [16, 32]), (" 2.5 ", 2.5),
])
def test_parse_value(text, value):
    assert parse_value(text) == value


def test_parse_comments_and_blank_lines():
    text = '# header\n\nvariant = "w#a"  # quoted hash kept\nepochs = 5 # trailing\n'
    assert parse_config_text(text) == {"variant": "w#a", "epochs": 5}


@pytest.mark.parametrize("text", [
    "nonsense = 1", "epochs = 1\nepochs = 2", "epochs", "= 3", "epochs = five words",
    "epochs = 2.5", "use_locality_conv = 1", "test_resolutions = [16, true]", "width = \"8\"",
])
def test_parse_rejects(text):
    with pytest.raises(ConfigurationError):
        parse_config_text(text)


def test_coerce():
    assert coerce("learning_rate", 1) == 1.0 and isinstance(coerce("learning_rate", 1), float)
    assert coerce("epochs", 4.0) == 4
    assert coerce("test_resolutions", 32) == (32,)
    with pytest.raises(ConfigurationError):
        coerce("nope", 1)


def test_build_config_spreads_seed():
    cfg = build_config({"seed": 9, "variant": "fa", "n_train": 8})
    assert cfg.data.seed == cfg.model.seed == cfg.train.seed == 9
    assert cfg.model.variant == "fa" and cfg.data.n_train == 8
    flat = cfg.to_flat()
    assert list(flat) == [s.key for s in DEFAULTS]
    assert flat["seed"] == 9


def test_build_config_validates():
    with pytest.raises(EvenDimensionError):
        build_config({"resolution": 33})
    with pytest.raises(ConfigurationError):
        build_config({"variant": "sa", "width": 30})


def test_load_config(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("epochs = 3\nvariant = wa\n")
    cfg = load_config(path, {"variant": "fa", "seed": None})
    assert cfg.train.epochs == 3 and cfg.model.variant == "fa" and cfg.model.seed == 0
    with pytest.raises(ConfigurationError):
        load_config(tmp_path / "missing.cfg")
