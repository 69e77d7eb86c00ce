import logging
import os
import tempfile

import pytest

from src.configuration import Configuration
from src.errors import ConfigError


def test_defaults(monkeypatch: pytest.MonkeyPatch) -> None:
    """Test that unset variables fall back to the documented defaults."""
    for name in ("NOF1_OUTPUT_DIR", "NOF1_WORKERS", "NOF1_MC_BLOCK", "NOF1_CI_LEVEL", "NOF1_LOG_LEVEL",
                 "NOF1_LOG_FILE"):
        monkeypatch.delenv(name, raising=False)
    config = Configuration()
    assert config.output_dir == "nof1_out"
    assert config.workers == 1
    assert config.mc_block_size == 5000
    assert config.ci_level == 0.95
    assert config.log_level == "INFO"
    assert config.log_file is None


def test_environment_overrides(monkeypatch: pytest.MonkeyPatch) -> None:
    """Test that environment variables override defaults."""
    monkeypatch.setenv("NOF1_WORKERS", "4")
    monkeypatch.setenv("NOF1_MC_BLOCK", "250")
    monkeypatch.setenv("NOF1_CI_LEVEL", "0.9")
    monkeypatch.setenv("NOF1_LOG_LEVEL", "debug")
    config = Configuration()
    assert config.workers == 4
    assert config.mc_block_size == 250
    assert config.ci_level == 0.9
    assert logging.getLogger("nof1").level == logging.DEBUG


def test_invalid_values(monkeypatch: pytest.MonkeyPatch) -> None:
    """Test that malformed settings name the offending variable."""
    monkeypatch.setenv("NOF1_WORKERS", "many")
    with pytest.raises(ConfigError, match="NOF1_WORKERS: expected an integer"):
        Configuration()

    monkeypatch.setenv("NOF1_WORKERS", "0")
    with pytest.raises(ConfigError, match="NOF1_WORKERS: must be >= 1"):
        Configuration()

    monkeypatch.delenv("NOF1_WORKERS")
    monkeypatch.setenv("NOF1_CI_LEVEL", "1.5")
    with pytest.raises(ConfigError, match="NOF1_CI_LEVEL: must lie in"):
        Configuration()


def test_log_file_handler(monkeypatch: pytest.MonkeyPatch) -> None:
    """Test that a log file receives records and handlers are not duplicated."""
    with tempfile.TemporaryDirectory() as tmpdir:
        path = os.path.join(tmpdir, "nof1.log")
        monkeypatch.setenv("NOF1_LOG_FILE", path)
        Configuration()
        Configuration()
        root = logging.getLogger("nof1")
        assert len(root.handlers) == 2

        logging.getLogger("nof1.test").warning("hello from the test")
        for handler in root.handlers:
            handler.flush()
        with open(path) as f:
            assert "hello from the test" in f.read()
        for handler in root.handlers[:]:
            handler.close()
            root.removeHandler(handler)
