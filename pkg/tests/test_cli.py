import logging
from pathlib import Path

import pytest

from app import sim
from app.cli import EXIT_FAILURE, EXIT_OK, EXIT_USAGE, cli_main
from app.config import configure_logging, load_config, read_config_file
from app.errors import ConfigError

REFERENCE_CONFIG = Path(__file__).resolve().parent.parent / "configs" / "reference.env"

SMALL_CONFIG = """\
# Experimento corto para tests
DEVICE_COUNT=4
SAMPLE_COUNT=200
FEATURE_DIM=5
NUM_CLASSES=3
ROUNDS=3
master_seed=2   # claves insensibles a mayúsculas
"""


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "small.env"
    path.write_text(SMALL_CONFIG)
    return path


## ---- configuración ---- ##

def test_read_config_file_lowercases_and_strips_comments(config_file):
    values = read_config_file(config_file)
    assert values["device_count"] == "4"
    assert values["master_seed"] == "2"


def test_load_config_applies_overrides(config_file):
    config = load_config(config_file, rounds=7, policy=None)
    assert config.rounds == 7
    assert config.policy == "proposed"
    assert config.device_count == 4


def test_unknown_key_is_rejected(tmp_path):
    path = tmp_path / "bad.env"
    path.write_text("DEVICES=4\n")
    with pytest.raises(ConfigError, match="devices"):
        load_config(path)


@pytest.mark.parametrize("overrides", [{"rounds": 0}, {"inner_radius": 300.0}, {"policy": "greedy"}])
def test_invalid_values_are_rejected(overrides):
    with pytest.raises(ConfigError):
        load_config(**overrides)


def test_missing_config_file():
    with pytest.raises(ConfigError):
        load_config("/no/such/file.env")


def test_reference_config_loads():
    config = load_config(REFERENCE_CONFIG)
    assert config.device_count == 10
    assert config.rounds == 200
    assert config.sample_count == 2000


## ---- CLI ---- ##

def test_zero_rounds_is_a_validation_error(config_file, capsys):
    assert cli_main(["--config", str(config_file), "--rounds", "0"]) == EXIT_FAILURE
    assert "✖" in capsys.readouterr().err


def test_unknown_policy_is_a_usage_error():
    assert cli_main(["--policy", "greedy"]) == EXIT_USAGE


def test_help_exits_cleanly(capsys):
    assert cli_main(["--help"]) == EXIT_OK
    assert "--compare" in capsys.readouterr().out


def test_full_policy_run_writes_file(config_file, tmp_path):
    output = tmp_path / "out.csv"
    code = cli_main([
        "--config", str(config_file), "--policy", "full", "--rounds", "10", "--seed", "1", "--output", str(output),
    ])
    assert code == EXIT_OK
    assert output.exists()
    rows, summary = sim.read_metrics(output)
    assert len(rows) == 10
    assert set(summary) == {"full"}


def test_compare_writes_three_blocks(config_file, tmp_path):
    output = tmp_path / "compare.csv"
    assert cli_main(["--config", str(config_file), "--compare", "--output", str(output)]) == EXIT_OK
    rows, summary = sim.read_metrics(output)
    assert len(rows) == 3 * 3
    assert [row.policy for row in rows[::3]] == ["proposed", "random", "full"]
    assert set(summary) == {"proposed", "random", "full"}


def test_missing_dataset_is_reported(config_file, tmp_path):
    config_file.write_text(SMALL_CONFIG + f"DATASET_PATH={tmp_path / 'missing.csv'}\n")
    assert cli_main(["--config", str(config_file)]) == EXIT_FAILURE


def test_malformed_dataset_is_reported(config_file, tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("1.0,2.0,0\na,b,c\n")
    config_file.write_text(SMALL_CONFIG + f"DATASET_PATH={bad}\n")
    assert cli_main(["--config", str(config_file)]) == EXIT_FAILURE
    assert "DomainError" in capsys.readouterr().err


def test_configure_logging_sets_package_level():
    package = logging.getLogger("app")
    previous = package.level
    try:
        configure_logging("WARNING")
        assert logging.getLogger("app.sim").getEffectiveLevel() == logging.WARNING
        configure_logging("DEBUG")
        assert logging.getLogger("app.scheduler").isEnabledFor(logging.DEBUG)
    finally:
        package.setLevel(previous)
