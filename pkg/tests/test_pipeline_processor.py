import json
import os

import pandas as pd
import pytest

from config import PipelineConfig
from errors import StageError
from main import run
from pipeline_processor import MANIFEST_NAME, PipelineProcessor


def make_config(tmp_path, name, synth, **extra) -> PipelineConfig:
    return PipelineConfig(
        synth=synth,
        output_dir=str(tmp_path / name),
        progress_dir=str(tmp_path / "progress"),
        seed=7,
        groups=4,
        **extra,
    )


def read_manifest(output_dir: str) -> dict:
    with open(os.path.join(output_dir, MANIFEST_NAME)) as f:
        return json.load(f)


class TestStageErrors:
    def test_missing_input_fails_ingest_with_validation_code(self, tmp_path):
        # Arrange
        config = PipelineConfig(
            input_path=str(tmp_path / "absent.csv"),
            output_dir=str(tmp_path / "out"),
            progress_dir=str(tmp_path / "progress"),
        )

        # Act
        with pytest.raises(StageError) as info:
            PipelineProcessor(config).run_stages(["ingest"])

        # Assert
        assert info.value.stage == "ingest"
        assert info.value.exit_code == 2
        assert "absent.csv" in info.value.artifact

    def test_fit_without_responses_names_missing_matrix(self, tmp_path):
        # Arrange
        config = make_config(tmp_path, "out", {"n_stocks": 4}, cases=["all"])

        # Act
        with pytest.raises(StageError) as info:
            PipelineProcessor(config).run_stages(["fit"])

        # Assert
        assert info.value.stage == "fit"
        assert info.value.artifact.endswith("responses_all.csv")

    def test_cli_returns_exit_code(self, tmp_path, capsys):
        # Arrange
        argv = ["ingest", "--input", str(tmp_path / "absent.csv"), "--out", str(tmp_path / "out")]

        # Act
        code = run(argv)

        # Assert
        assert code == 2
        assert "✗ Error:" in capsys.readouterr().out

    def test_golden_file_ingests_through_cli(self, golden_messages_path, tmp_path):
        # Arrange
        argv = ["ingest", "--input", golden_messages_path, "--out", str(tmp_path / "out")]

        # Act
        code = run(argv)

        # Assert
        assert code == 0
        assert os.path.exists(tmp_path / "out" / "tapes" / "quotes_ABC.csv")
        assert read_manifest(str(tmp_path / "out"))["stages"] == ["ingest"]


@pytest.mark.slow
class TestFullRun:
    def test_all_artifacts_are_written(self, completed_run):
        # Arrange
        _, config, result = completed_run

        # Act
        artifacts = read_manifest(config.output_dir)["artifacts"]

        # Assert
        assert result["success"]
        for case in config.cases:
            assert f"responses/responses_{case}.csv" in artifacts
            assert f"fits/histogram_{case}.csv" in artifacts
            assert f"asymmetry/asymmetry_{case}.csv" in artifacts
            assert f"spectra/spectrum_{case}.csv" in artifacts
            assert f"entropy/entropies_{case}.csv" in artifacts
            assert f"networks/{case}_range.dot" in artifacts
            assert f"networks/{case}_q004_edges.csv" in artifacts
        for name in ("synth/messages.csv", "stock_metadata.csv", "summary.json", "summary.txt"):
            assert name in artifacts

    def test_manifest_records_run(self, completed_run):
        # Arrange
        _, config, _ = completed_run

        # Act
        manifest = read_manifest(config.output_dir)

        # Assert
        assert manifest["metadata"]["config_hash"] == config.config_hash
        assert manifest["stages"] == [
            "synth", "ingest", "respond", "fit", "asym", "spectra", "entropy", "network", "report"
        ]
        assert manifest["seeds"] == config.stage_seeds()
        assert "seconds" not in json.dumps(manifest)
        assert manifest["metadata"]["timings_file"] == f"progress_{config.config_hash[:16]}.json"

    def test_stage_timings_live_in_progress_file(self, completed_run):
        # Arrange
        _, config, result = completed_run

        # Act
        manifest = read_manifest(config.output_dir)
        progress_file = os.path.join(config.progress_dir, manifest["metadata"]["timings_file"])

        # Assert
        assert os.path.exists(progress_file)
        assert list(result["timings"]) == manifest["stages"]

    def test_synthetic_run_stays_within_a_minute(self, completed_run):
        # Arrange
        _, _, result = completed_run

        # Act
        total = sum(result["timings"].values())

        # Assert
        assert total < 60.0

    def test_rerun_reproduces_manifest(self, completed_run, small_synth):
        # Arrange
        tmp_path, config, _ = completed_run
        again = make_config(tmp_path, "second", small_synth)

        # Act
        PipelineProcessor(again).run_all()

        # Assert
        assert read_manifest(again.output_dir) == read_manifest(config.output_dir)

    def test_single_stage_rerun_is_byte_identical(self, completed_run):
        # Arrange
        _, config, _ = completed_run
        before = read_manifest(config.output_dir)["artifacts"]

        # Act
        PipelineProcessor(config).run_stages(["asym", "entropy"])

        # Assert
        assert read_manifest(config.output_dir)["artifacts"] == before

    def test_summary_is_complete(self, completed_run):
        # Arrange
        _, config, _ = completed_run

        # Act
        with open(os.path.join(config.output_dir, "summary.json")) as f:
            summary = json.load(f)

        # Assert
        assert summary["columns"] == ["All", "Single", "Multiple", "Weighted", "Random"]
        assert summary["complete"]

    def test_low_entropy_stock_has_smallest_self_entropy(self, completed_run):
        # Arrange
        _, config, _ = completed_run

        # Act
        frame = pd.read_csv(os.path.join(config.output_dir, "entropy", "entropies_all.csv"), dtype={"symbol": str})

        # Assert
        assert frame.loc[frame["i_ii"].idxmin(), "symbol"] == "S06"
