import os

import pytest

from config import PipelineConfig
from pipeline_processor import PipelineProcessor

FIXTURES_DIR = os.path.join(os.path.dirname(__file__), "fixtures")


@pytest.fixture
def fixtures_dir() -> str:
    return FIXTURES_DIR


@pytest.fixture
def golden_messages_path() -> str:
    return os.path.join(FIXTURES_DIR, "golden_messages.csv")


@pytest.fixture(scope="session")
def small_synth() -> dict:
    """Generator settings small enough for end-to-end pipeline tests."""
    return {
        "n_stocks": 12,
        "session_ms": 600_000,
        "trade_rate": 60.0,
        "quote_rate": 600.0,
        "impacts": [{"source": 0, "target": 1, "delta": 1e-3}],
        "low_entropy_stock": 5,
    }


@pytest.fixture(scope="session")
def completed_run(tmp_path_factory, small_synth):
    """A full synthetic run: (base directory, config, run_all result)."""
    tmp_path = tmp_path_factory.mktemp("pipeline")
    config = PipelineConfig(
        synth=small_synth,
        output_dir=str(tmp_path / "first"),
        progress_dir=str(tmp_path / "progress"),
        seed=7,
        groups=4,
    )
    result = PipelineProcessor(config).run_all()
    return tmp_path, config, result
