"""Tests for configuration loading and precedence."""

from pathlib import Path

import pytest

from core.errors import ConfigError
from core.label_parser import LexicalCategory as C
from utils.config import DATA_DIR, PipelineConfig, load_config


def test_defaults_point_at_bundled_data():
    config = load_config(environ={})
    assert config.threads == 1
    assert config.thresholds.get(C.BEH) == 5
    assert config.alias_params.E == 0.6
    assert config.split.mode == "temporal"
    assert Path(config.rules) == DATA_DIR / "default.rules"
    config.require("rules", "wordlist", "affixes", "aliases", "correlations")


def test_precedence_file_environment_flags(write_file):
    path = write_file("run.env", "AVTAG_THREADS=2\nAVTAG_SEED=5\nAVTAG_THRESHOLD_BEH=3\n")
    config = load_config(path, environ={})
    assert (config.threads, config.seed, config.thresholds.beh) == (2, 5, 3)
    assert config.split.rng_seed == 5

    config = load_config(path, environ={"AVTAG_THREADS": "3", "OTHER": "x"})
    assert config.threads == 3

    config = load_config(path, overrides={"threads": 4, "seed": None}, environ={"AVTAG_THREADS": "3"})
    assert config.threads == 4
    assert config.seed == 5


def test_relative_paths_resolve_against_config_file(write_file, tmp_path):
    path = write_file("conf/run.env", "AVTAG_RULES=my.rules\nAVTAG_OUTPUT_DIR=/abs/out\n")
    config = load_config(path, environ={})
    assert config.rules == str((tmp_path / "conf").resolve() / "my.rules")
    assert config.output_dir == "/abs/out"


def test_split_and_alias_settings(write_file):
    path = write_file(
        "run.env",
        "AVTAG_SPLIT_MODE=stratified\nAVTAG_FLOOR_PACK=7\nAVTAG_TEST_FRACTION=0.25\nAVTAG_ALIAS_C=0.4\n",
    )
    config = load_config(path, environ={})
    assert config.split.mode == "stratified"
    assert config.split.floor(C.PACK) == 7
    assert config.split.cap(C.PACK, "test") == 7 * 25
    assert config.split.test_fraction == 0.25
    assert config.alias_params.C == 0.4


@pytest.mark.parametrize(
    "environ",
    [
        {"AVTAG_THREADS": "0"},
        {"AVTAG_THREADS": "many"},
        {"AVTAG_THRESHOLD_VULN": "0"},
        {"AVTAG_ALIAS_E": "1.5"},
        {"AVTAG_SPLIT_MODE": "random"},
        {"AVTAG_TEST_FRACTION": "0"},
        {"AVTAG_FLOOR_BEH": "0"},
        {"AVTAG_STRICT": "maybe"},
        {"AVTAG_BATCH_SIZE": "0"},
    ],
)
def test_invalid_values(environ):
    with pytest.raises(ConfigError) as excinfo:
        load_config(environ=environ)
    assert excinfo.value.exit_code == 2


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(str(tmp_path / "nope.env"), environ={})


def test_require_reports_missing_paths(tmp_path):
    with pytest.raises(ConfigError):
        PipelineConfig().require("reports")
    with pytest.raises(ConfigError):
        PipelineConfig(rules=str(tmp_path / "missing.rules")).require("rules")


def test_strict_flag_parsing():
    assert load_config(environ={"AVTAG_STRICT": "yes"}).strict is True
    assert load_config(environ={"AVTAG_STRICT": "0"}).strict is False


def test_bundled_example_env_is_valid():
    config = load_config(str(DATA_DIR / "example.env"), environ={})
    assert config.threads >= 1
