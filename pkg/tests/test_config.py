from __future__ import annotations

import json
import logging

import pytest

from logging_config import LOG_LEVEL_ENV, resolve_level
from models.attention import AblationMode
from run_config import (
    ConfigError,
    RunConfig,
    parse_config_text,
    parse_value,
    read_config_file,
    resolve_config,
)


def test_values_parse_as_json_with_text_fallback() -> None:
    assert parse_value(" 32 ") == 32
    assert parse_value("1e-3") == pytest.approx(1e-3)
    assert parse_value("true") is True
    assert parse_value("[2, 3]") == [2, 3]
    assert parse_value('"kinship"') == "kinship"
    assert parse_value("value_ablation") == "value_ablation"


def test_config_text_skips_comments_and_blank_lines() -> None:
    text = "# a small run\n\nseed = 7\nmodel.d = 16\nmodel.mode = attention_ablation\n"
    assert parse_config_text(text) == {"seed": 7, "model.d": 16, "model.mode": "attention_ablation"}


def test_duplicate_key_names_the_line() -> None:
    with pytest.raises(ConfigError, match="cfg:3"):
        parse_config_text("seed = 1\nmodel.d = 8\nseed = 2\n", "cfg")


def test_line_without_assignment_is_rejected() -> None:
    with pytest.raises(ConfigError, match="cfg:1"):
        parse_config_text("model.d 8\n", "cfg")


def test_flat_values_build_nested_sections() -> None:
    config = RunConfig.from_flat(
        {"seed": 3, "model.d": 16, "model.heads": 2, "model.mode": "value_ablation", "data.test_sizes": [6, 4]}
    )
    assert config.seed == 3
    assert config.model.d == 16
    assert config.model.mode is AblationMode.VALUE_ABLATION
    assert config.data.test_sizes == [4, 6]
    assert config.optimizer.clip_norm == 1.0
    assert config.model.ffn_residual is False


def test_unknown_key_lists_the_valid_keys() -> None:
    with pytest.raises(ConfigError) as excinfo:
        RunConfig.from_flat({"model.depth": 3})
    message = str(excinfo.value)
    assert "model.depth" in message
    assert "model.num_layers" in message
    assert "optimizer.lr" in message


def test_invalid_value_is_a_config_error() -> None:
    with pytest.raises(ConfigError):
        RunConfig.from_flat({"model.d": 10, "model.heads": 4})
    with pytest.raises(ConfigError):
        RunConfig.from_flat({"optimizer.lr": -1.0})


def test_flatten_materializes_every_key_sorted() -> None:
    flat = RunConfig().flatten()
    assert list(flat) == sorted(flat)
    assert list(flat) == RunConfig.valid_keys()
    assert flat["model.mode"] == "base"
    assert RunConfig.from_flat(flat) == RunConfig()


def test_text_form_reparses_to_the_same_config() -> None:
    config = RunConfig.from_flat({"seed": 9, "model.tied": False, "data.table": "kinship"})
    assert RunConfig.from_flat(parse_config_text(config.to_text())) == config


def test_overrides_then_seed_take_precedence(tmp_path) -> None:
    path = tmp_path / "run.cfg"
    path.write_text("seed = 1\noptimizer.lr = 0.01\nmodel.d = 16\n", encoding="utf-8")
    config = resolve_config(path, ["optimizer.lr=0", "model.heads = 8"], seed=5)
    assert config.optimizer.lr == 0.0
    assert config.model.heads == 8
    assert config.model.d == 16
    assert config.seed == 5


def test_manifest_config_block_is_replayed(tmp_path) -> None:
    original = RunConfig.from_flat({"seed": 4, "model.d": 32, "train.epochs": 3})
    path = tmp_path / "manifest.json"
    path.write_text(json.dumps({"command": "train", "config": original.flatten()}), encoding="utf-8")
    assert resolve_config(path) == original


def test_manifest_without_config_block(tmp_path) -> None:
    path = tmp_path / "manifest.json"
    path.write_text(json.dumps({"command": "train"}), encoding="utf-8")
    with pytest.raises(ConfigError, match="config block"):
        read_config_file(path)


def test_missing_config_file(tmp_path) -> None:
    with pytest.raises(ConfigError, match="cannot read"):
        read_config_file(tmp_path / "absent.cfg")


def test_log_level_resolution(monkeypatch) -> None:
    assert resolve_level("debug") == logging.DEBUG
    assert resolve_level(logging.WARNING) == logging.WARNING
    monkeypatch.setenv(LOG_LEVEL_ENV, "ERROR")
    assert resolve_level() == logging.ERROR
    with pytest.raises(ValueError):
        resolve_level("chatty")
