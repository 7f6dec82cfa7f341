"""Flat key=value config parsing and train-config construction."""

import pytest

from pconv.config import (DEFAULT_CONFIG_TEXT, get_bool, get_float, get_int,
                          load_config, parse_config_text,
                          train_config_from_values)
from pconv.errors import UserInputError


def test_parse_basic_lines():
    values = parse_config_text(
        "a = 1\n\n# comment\n  b=hello world \nc = x = y\n")
    assert values == {"a": "1", "b": "hello world", "c": "x = y"}


def test_parse_rejects_bad_lines():
    with pytest.raises(UserInputError):
        parse_config_text("no equals sign")
    with pytest.raises(UserInputError):
        parse_config_text("= value")
    with pytest.raises(UserInputError):
        parse_config_text("a = 1\na = 2\n")


def test_typed_accessors():
    values = parse_config_text("n = 7\nx = 0.5\nflag = true\noff = no\n")
    assert get_int(values, "n") == 7
    assert get_float(values, "x") == 0.5
    assert get_bool(values, "flag") is True
    assert get_bool(values, "off") is False
    assert get_int(values, "missing", 3) == 3
    with pytest.raises(UserInputError):
        get_int(values, "x")
    with pytest.raises(UserInputError):
        get_bool(values, "n")


def test_load_config_missing_file(tmp_path):
    with pytest.raises(UserInputError):
        load_config(tmp_path / "absent.cfg")


def test_train_config_requires_dirs():
    with pytest.raises(UserInputError):
        train_config_from_values({"images": "x"})
    with pytest.raises(UserInputError):
        train_config_from_values({"masks": "y"})


def test_train_config_rejects_unknown_keys():
    values = {"images": "i", "masks": "m", "learning_rte": "0.01"}
    with pytest.raises(UserInputError) as info:
        train_config_from_values(values)
    assert "learning_rte" in str(info.value)


def test_train_config_defaults():
    cfg = train_config_from_values({"images": "i", "masks": "m"})
    assert cfg.phase == "initial"
    assert cfg.batch_size == 6
    assert cfg.effective_learning_rate == 0.0002
    assert cfg.loss_weights.valid == 1.0
    assert cfg.loss_weights.hole == 6.0
    assert cfg.loss_weights.perceptual == 0.05
    assert cfg.loss_weights.style == 120.0
    assert cfg.loss_weights.tv == 0.1
    assert cfg.feature_widths == ((8,), (12,), (16,))


def test_train_config_full_override():
    values = parse_config_text("""
images = imgs
masks = msks
phase = finetune
resume = ck.pcnv
learning_rate = 0.001
batch_size = 2
iterations = 10
seed = 5
net.depth = 4
net.width = 16
net.per_channel_mask = true
features.widths = 4,4;8;16
features.seed = 9
loss.hole = 3.0
loss.tv_element = cross
loss.style_channel_norm = false
""")
    cfg = train_config_from_values(values)
    assert cfg.phase == "finetune"
    assert cfg.resume == "ck.pcnv"
    assert cfg.learning_rate == 0.001
    assert cfg.net_depth == 4 and cfg.net_width == 16
    assert cfg.per_channel_mask is True
    assert cfg.feature_widths == ((4, 4), (8,), (16,))
    assert cfg.feature_seed == 9
    assert cfg.loss_weights.hole == 3.0
    assert cfg.tv_element == "cross"
    assert cfg.style_channel_norm is False


def test_train_config_bad_widths():
    values = {"images": "i", "masks": "m", "features.widths": "4;;x"}
    with pytest.raises(UserInputError):
        train_config_from_values(values)


def test_train_config_bad_tv_element():
    values = {"images": "i", "masks": "m", "loss.tv_element": "diag"}
    with pytest.raises(UserInputError):
        train_config_from_values(values)


def test_default_config_text_round_trips():
    values = parse_config_text(DEFAULT_CONFIG_TEXT)
    cfg = train_config_from_values(values)
    assert cfg.net_depth == 8
    assert cfg.net_width == 64
    assert cfg.iterations == 1000
    assert cfg.feature_widths == ((8,), (12,), (16,))
