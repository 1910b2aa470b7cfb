from progress_tracker import ProgressTracker, get_session_progress, progress_path


class TestProgressTracker:
    def test_stage_progress_is_persisted(self, tmp_path):
        # Arrange
        tracker = ProgressTracker("run1", str(tmp_path))

        # Act
        tracker.start_stage(3, 4, "fit")
        progress = get_session_progress("run1", str(tmp_path))

        # Assert
        assert progress["percentage"] == 50
        assert progress["message"] == "Stage 3/4: fit"
        assert progress["extra_data"]["stage"] == "fit"

    def test_finish_records_timing(self, tmp_path):
        # Arrange
        tracker = ProgressTracker("run2", str(tmp_path))
        tracker.start_stage(1, 1, "asym")

        # Act
        elapsed = tracker.finish_stage("asym")
        tracker.set_complete(True)

        # Assert
        assert elapsed >= 0.0
        assert tracker.timings == {"asym": elapsed}
        assert get_session_progress("run2", str(tmp_path))["timings"] == {"asym": elapsed}

    def test_unstarted_stage_takes_no_time(self, tmp_path):
        # Arrange
        tracker = ProgressTracker("run3", str(tmp_path))

        # Act, Assert
        assert tracker.finish_stage("report") == 0.0

    def test_failed_run_resets_percentage(self, tmp_path):
        # Arrange
        tracker = ProgressTracker("run4", str(tmp_path))
        tracker.start_stage(2, 2, "report")

        # Act
        tracker.set_complete(False)
        failed = get_session_progress("run4", str(tmp_path))

        # Assert
        assert tracker.progress_file == progress_path("run4", str(tmp_path))
        assert failed["percentage"] == 0
        assert "failed" in failed["message"]

    def test_unknown_run_has_no_progress(self, tmp_path):
        # Arrange, Act, Assert
        assert get_session_progress("absent", str(tmp_path)) is None
