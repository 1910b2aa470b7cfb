#!/usr/bin/env python3
"""
Progress Tracker for the Impact Pipeline

Stage progress and wall-clock timings of a run go to a JSON file kept outside
the run's output tree. Output directories therefore carry no timing data and
reruns of one configuration stay byte-identical.
"""

import json
import logging
import os
import tempfile
import time
from typing import Any, Dict, Optional

logger = logging.getLogger(__name__)

DEFAULT_PROGRESS_DIR = os.path.join(tempfile.gettempdir(), "impact_progress")


def progress_path(run_id: str, progress_dir: str = None) -> str:
    return os.path.join(progress_dir or DEFAULT_PROGRESS_DIR, f"progress_{run_id}.json")


class ProgressTracker:
    """Stage-level progress and timings of one pipeline run."""

    def __init__(self, session_id: str = None, output_dir: str = None):
        """
        Args:
            session_id (str): Run identifier; the pipeline passes a config-hash prefix
            output_dir (str): Directory holding progress files (default: system temp dir)
        """
        self.session_id = session_id or f"run_{int(time.time())}"
        self.output_dir = output_dir or DEFAULT_PROGRESS_DIR
        self.progress_file = progress_path(self.session_id, self.output_dir)
        self.timings: Dict[str, float] = {}
        self._stage_started: Dict[str, float] = {}

        os.makedirs(self.output_dir, exist_ok=True)
        self.update_progress(0, "Waiting for first stage")

    def update_progress(self, percentage: int, message: str, extra_data: Dict[str, Any] = None):
        record = {
            "session_id": self.session_id,
            "percentage": max(0, min(100, int(percentage))),
            "message": message,
            "timings": dict(self.timings),
            "extra_data": extra_data or {},
            "updated_at": time.strftime("%Y-%m-%d %H:%M:%S"),
        }
        try:
            with open(self.progress_file, "w") as f:
                json.dump(record, f, indent=2)
        except OSError as e:
            logger.warning("Progress file %s not writable: %s", self.progress_file, e)

    def start_stage(self, stage_index: int, total_stages: int, stage: str):
        """
        Mark a stage as running and report the share of stages already done.

        Args:
            stage_index (int): 1-based position of the stage in this run
            total_stages (int): Number of stages in this run
            stage (str): Stage name
        """
        self._stage_started[stage] = time.perf_counter()
        done = (stage_index - 1) / total_stages * 100
        self.update_progress(
            done,
            f"Stage {stage_index}/{total_stages}: {stage}",
            {"stage": stage, "stage_index": stage_index, "total_stages": total_stages},
        )

    def finish_stage(self, stage: str) -> float:
        """Store and return the stage's elapsed seconds; 0.0 if it never started."""
        started = self._stage_started.pop(stage, None)
        elapsed = 0.0 if started is None else time.perf_counter() - started
        self.timings[stage] = elapsed
        logger.debug("Stage %s took %.3fs", stage, elapsed)
        return elapsed

    def set_complete(self, success: bool = True, final_message: str = None):
        if success:
            self.update_progress(100, final_message or "✅ Pipeline completed successfully!")
        else:
            self.update_progress(0, final_message or "❌ Pipeline failed")


def get_session_progress(session_id: str, output_dir: str = None) -> Optional[Dict[str, Any]]:
    """Read the progress record of a run, or None when there is none."""
    try:
        with open(progress_path(session_id, output_dir)) as f:
            return json.load(f)
    except (OSError, json.JSONDecodeError):
        return None
