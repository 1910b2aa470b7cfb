"""
Pipeline Configuration

Loads the run configuration from a JSON file, applies IMPACT_* environment
overrides (main.py loads a .env file into the environment first) and derives
per-stage seeds from the root seed.
"""

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field, fields
from typing import Any, Dict, List, Optional

import numpy as np

from errors import ConfigError
from response_analyzer import CASES
from synth_flow import SynthConfig

# Order matters: seeds are spawned in this order from the root seed.
STAGES = ("ingest", "synth", "respond", "fit", "asym", "spectra", "entropy", "network", "report")

ENV_OUTPUT_DIR = "IMPACT_OUTPUT_DIR"
ENV_SEED = "IMPACT_SEED"
ENV_WORKERS = "IMPACT_WORKERS"


@dataclass
class PipelineConfig:
    """Everything a run needs; serializes to and from plain JSON."""

    input_path: Optional[str] = None
    synth: Optional[Dict[str, Any]] = None
    session_start_ms: Optional[int] = None
    session_end_ms: Optional[int] = None
    cases: List[str] = field(default_factory=lambda: list(CASES))
    bins: int = 50
    groups: int = 4
    random_length: Optional[int] = None
    seed: int = 0
    output_dir: str = "impact_outputs"
    has_header: bool = False
    lo_frac: float = 0.6
    hi_frac: float = 0.75
    include_diagonal_mean: bool = False
    hist_bins: Optional[int] = None
    workers: int = 1
    n_days: int = 1
    progress_dir: Optional[str] = None

    def __post_init__(self):
        self.validate()

    def validate(self):
        if (self.input_path is None) == (self.synth is None):
            raise ConfigError("exactly one of input_path and synth must be set")
        unknown = [c for c in self.cases if c not in CASES]
        if unknown or not self.cases:
            raise ConfigError(f"cases must be a non-empty subset of {CASES}, got {self.cases}")
        if self.bins < 2:
            raise ConfigError(f"bins must be at least 2, got {self.bins}")
        if self.groups < 1:
            raise ConfigError(f"groups must be at least 1, got {self.groups}")
        if self.random_length is not None and self.random_length < 1:
            raise ConfigError(f"random_length must be at least 1, got {self.random_length}")
        if not 0 <= self.lo_frac < self.hi_frac:
            raise ConfigError(f"need 0 <= lo_frac < hi_frac, got {self.lo_frac}, {self.hi_frac}")
        if (self.session_start_ms is None) != (self.session_end_ms is None):
            raise ConfigError("session_start_ms and session_end_ms must be given together")
        if self.session_start_ms is not None and self.session_start_ms >= self.session_end_ms:
            raise ConfigError("session start must precede session end")
        if self.workers < 1 or self.n_days < 1:
            raise ConfigError("workers and n_days must be positive")
        if self.seed < 0:
            raise ConfigError(f"seed must be non-negative, got {self.seed}")
        if self.synth is not None:
            self.synth_config()

    def synth_config(self) -> SynthConfig:
        """Generator configuration; its seed defaults to the synth stage seed."""
        data = dict(self.synth)
        data.setdefault("seed", self.stage_seeds()["synth"])
        return SynthConfig.from_dict(data)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "PipelineConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown configuration keys: {', '.join(unknown)}")
        return cls(**data)

    def canonical_json(self) -> str:
        """Configuration as sorted-key JSON; run-location fields are left out."""
        data = self.to_dict()
        for key in ("output_dir", "progress_dir", "workers"):
            data.pop(key)
        return json.dumps(data, sort_keys=True, separators=(",", ":"))

    @property
    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode("utf-8")).hexdigest()

    def stage_seeds(self) -> Dict[str, int]:
        children = np.random.SeedSequence(self.seed).spawn(len(STAGES))
        return {stage: int(child.generate_state(1)[0]) for stage, child in zip(STAGES, children)}


def load_config(path: Optional[str] = None, overrides: Optional[Dict[str, Any]] = None) -> PipelineConfig:
    """
    Build the configuration from a JSON file, the environment and explicit overrides.

    Args:
        path (str, optional): JSON configuration file
        overrides (Dict, optional): Values that win over file and environment
            (typically CLI flags); None values are ignored

    Returns:
        PipelineConfig: Validated configuration
    """
    data: Dict[str, Any] = {}
    if path is not None:
        if not os.path.exists(path):
            raise ConfigError(f"configuration file not found: {path}")
        try:
            with open(path, "r", encoding="utf-8") as f:
                data = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: invalid JSON ({e})")
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: top level must be an object")

    env_values = {
        "output_dir": os.getenv(ENV_OUTPUT_DIR),
        "seed": os.getenv(ENV_SEED),
        "workers": os.getenv(ENV_WORKERS),
    }
    for key, value in env_values.items():
        if value is None:
            continue
        try:
            data[key] = int(value) if key in ("seed", "workers") else value
        except ValueError:
            raise ConfigError(f"environment override for {key} is not an integer: {value!r}")

    for key, value in (overrides or {}).items():
        if value is not None:
            data[key] = value

    if "input_path" not in data and "synth" not in data:
        data["synth"] = {}
    return PipelineConfig.from_dict(data)


def save_config(config: PipelineConfig, path: str) -> str:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(config.to_dict(), f, indent=2, sort_keys=True)
        f.write("\n")
    return path
