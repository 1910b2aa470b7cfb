#!/usr/bin/env python3
"""
Pipeline Processor

This module runs the analysis stages in order (ingest or synth, respond, fit,
asym, spectra, entropy, network, report). Every stage reads the persisted
outputs of the stages before it, so any stage can be rerun on its own.
"""

import glob
import hashlib
import json
import logging
import math
import os
import platform
import time
from importlib import metadata as importlib_metadata
from typing import Any, Callable, Dict, List, Optional

import numpy as np
import pandas as pd

from asymmetry_analyzer import asymmetry_report, impute_missing, write_asymmetry_csv
from config import PipelineConfig
from entropy_analyzer import (
    connectivity_by_group,
    export_network,
    group_networks,
    impact_entropy_matrix,
    mean_incident_connectivity,
    peak_connectivity,
    probability_matrix,
    row_col_entropies,
    scatter_export,
    spectrum_entropy,
    threshold_network,
)
from errors import ConfigError, ImpactError, StageError
from itch_utils import (
    dedupe_millisecond_trades,
    filter_session,
    read_messages,
    read_quote_tape,
    read_stock_metadata,
    read_trade_tape,
    reconstruct_universe,
    split_by_stock,
    stock_metadata,
    write_quote_tape,
    write_stock_metadata,
    write_trade_tape,
)
from progress_tracker import ProgressTracker, progress_path
from report_utils import format_duration, render_text_summary, report_summary, save_summary
from response_analyzer import (
    OBSERVED_CASES,
    ObservationStore,
    RandomResponseConfig,
    build_observations,
    cross_responses,
    default_random_length,
    multiple_fraction,
    random_response,
    read_matrix_csv,
    response_matrix,
    response_standard_errors,
    weight_matrix,
    weighted_response_matrix,
    write_matrix_csv,
)
from spectrum_utils import ks_distance, spectrum_analysis, tail_mass
from stable_utils import StableFit, dist_stats, fit_stable, histogram_table
from synth_flow import generate, synth_manifest, write_streams, write_synth_manifest

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"
VERSIONED_PACKAGES = ("numpy", "pandas", "scipy", "networkx", "pydot", "sortedcontainers")


def _clean(value: Any) -> Any:
    """JSON-safe copy: NaN and inf become None, numpy scalars become Python numbers."""
    if isinstance(value, dict):
        return {str(k): _clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_clean(v) for v in value]
    if isinstance(value, np.generic):
        value = value.item()
    if isinstance(value, float) and not math.isfinite(value):
        return None
    return value


def write_json(path: str, data: Any) -> str:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(_clean(data), f, indent=2, sort_keys=True)
        f.write("\n")
    return path


def read_json(path: str) -> Any:
    if not os.path.exists(path):
        raise ConfigError(f"missing stage input: {path}")
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


def file_sha256(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def package_versions() -> Dict[str, str]:
    versions = {"python": platform.python_version()}
    for name in VERSIONED_PACKAGES:
        try:
            versions[name] = importlib_metadata.version(name)
        except importlib_metadata.PackageNotFoundError:
            versions[name] = "unknown"
    return versions


class PipelineProcessor:
    """
    A class to run the impact analysis stages over one output directory.
    """

    STAGE_BANNERS = {
        "synth": "🎲",
        "ingest": "📥",
        "respond": "🔍",
        "fit": "📈",
        "asym": "⚖️",
        "spectra": "🌀",
        "entropy": "🔗",
        "network": "🕸️",
        "report": "📋",
    }

    def __init__(self, config: PipelineConfig, show_progress: bool = False):
        """
        Initialize the pipeline processor.

        Args:
            config (PipelineConfig): Validated run configuration
            show_progress (bool): Show tqdm bars inside long stages
        """
        self.config = config
        self.output_dir = config.output_dir
        self.show_progress = show_progress
        self.seeds = config.stage_seeds()
        self.warnings: List[str] = []
        self.tracker: Optional[ProgressTracker] = None

        # Setup output directories
        self.setup_output_directories()

    def setup_output_directories(self):
        """Setup all necessary output directories."""
        os.makedirs(self.output_dir, exist_ok=True)

        self.synth_dir = os.path.join(self.output_dir, "synth")
        self.tapes_dir = os.path.join(self.output_dir, "tapes")
        self.responses_dir = os.path.join(self.output_dir, "responses")
        self.fits_dir = os.path.join(self.output_dir, "fits")
        self.asymmetry_dir = os.path.join(self.output_dir, "asymmetry")
        self.spectra_dir = os.path.join(self.output_dir, "spectra")
        self.entropy_dir = os.path.join(self.output_dir, "entropy")
        self.networks_dir = os.path.join(self.output_dir, "networks")

        for directory in [
            self.tapes_dir,
            self.responses_dir,
            self.fits_dir,
            self.asymmetry_dir,
            self.spectra_dir,
            self.entropy_dir,
            self.networks_dir,
        ]:
            os.makedirs(directory, exist_ok=True)
        if self.config.synth is not None:
            os.makedirs(self.synth_dir, exist_ok=True)

    # ----------------------
    # Stage plumbing
    # ----------------------
    @property
    def stage_order(self) -> List[str]:
        first = ["synth", "ingest"] if self.config.synth is not None else ["ingest"]
        return first + ["respond", "fit", "asym", "spectra", "entropy", "network", "report"]

    def _stage_method(self, stage: str) -> Callable[[], Dict[str, Any]]:
        return getattr(self, f"stage_{stage}")

    def _warn(self, message: str):
        logger.warning(message)
        self.warnings.append(message)

    @property
    def run_id(self) -> str:
        return self.config.config_hash[:16]

    def _tracker(self) -> ProgressTracker:
        if self.tracker is None:
            self.tracker = ProgressTracker(self.run_id, self.config.progress_dir)
        return self.tracker

    def run_stage(self, stage: str, index: int = 1, total: int = 1) -> Dict[str, Any]:
        """
        Run one stage, wrapping any failure with the stage name and artifact path.

        Returns:
            Dict: {'success': True, 'stage', 'artifacts', 'seconds', ...stage details}
        """
        tracker = self._tracker()
        tracker.start_stage(index, total, stage)
        print(f"\n{self.STAGE_BANNERS[stage]} Step {index}/{total}: {stage}...")
        self._artifact = self.output_dir
        try:
            result = self._stage_method(stage)()
        except ImpactError as e:
            tracker.finish_stage(stage)
            print(f"  ✗ {stage} failed: {e}")
            raise StageError(stage, self._artifact, e) from e
        except (OSError, ValueError, KeyError) as e:
            tracker.finish_stage(stage)
            print(f"  ✗ {stage} failed: {e}")
            raise StageError(stage, self._artifact, ConfigError(str(e))) from e
        seconds = tracker.finish_stage(stage)
        print(f"  ✓ {stage} complete ({format_duration(seconds)})")
        result.update({"success": True, "stage": stage, "seconds": seconds})
        return result

    def run_stages(self, stages: List[str]) -> Dict[str, Any]:
        """Run the given stages in order, then refresh the run manifest."""
        results = {}
        for index, stage in enumerate(stages, 1):
            results[stage] = self.run_stage(stage, index, len(stages))
        manifest = self.write_manifest(stages)
        return {"success": True, "stages": results, "manifest": manifest}

    def run_all(self) -> Dict[str, Any]:
        """
        Run every stage of the configuration in order.

        Returns:
            Dict[str, Any]: {'success', 'stages', 'manifest', 'timings'}
        """
        start_time = time.time()
        print(f"🎬 Starting impact pipeline ({'synthetic' if self.config.synth is not None else 'recorded'} flow)")
        print(f"📊 Settings: cases {', '.join(self.config.cases)}, K={self.config.bins}, Q={self.config.groups}, seed {self.config.seed}")
        print(f"📁 Output directory: {self.output_dir}")

        try:
            result = self.run_stages(self.stage_order)
        except StageError:
            self._tracker().set_complete(False)
            raise
        self._tracker().set_complete(True)
        result["timings"] = dict(self._tracker().timings)

        print(f"\n✅ Pipeline complete!")
        print(f"⏱️  Total time: {time.time() - start_time:.1f} seconds")
        print(f"📁 Results saved in: {self.output_dir}")
        print(f"📋 Manifest: {os.path.join(self.output_dir, MANIFEST_NAME)}")
        return result

    # ----------------------
    # Stages
    # ----------------------
    def stage_synth(self) -> Dict[str, Any]:
        if self.config.synth is None:
            raise ConfigError("synth stage needs a synth configuration")
        os.makedirs(self.synth_dir, exist_ok=True)
        synth_config = self.config.synth_config()
        messages_path = os.path.join(self.synth_dir, "messages.csv")
        self._artifact = messages_path

        print(f"  🎲 Generating {synth_config.n_stocks} stocks over {synth_config.n_rounds} rounds...")
        streams = generate(synth_config)
        write_streams(messages_path, streams)
        manifest_path = write_synth_manifest(
            os.path.join(self.synth_dir, "synth_manifest.json"), synth_manifest(synth_config, streams)
        )
        print(f"  ✓ {sum(len(s) for s in streams.values())} messages written")
        return {"artifacts": [messages_path, manifest_path]}

    def _input_files(self) -> List[str]:
        path = self.config.input_path
        if path is None:
            path = os.path.join(self.synth_dir, "messages.csv")
        self._artifact = path
        if os.path.isdir(path):
            files = sorted(glob.glob(os.path.join(path, "*.csv")))
            if not files:
                raise ConfigError(f"no message files in input directory {path}")
            return files
        if not os.path.exists(path):
            raise ConfigError(f"input path not found: {path}")
        return [path]

    def stage_ingest(self) -> Dict[str, Any]:
        messages = []
        has_header = self.config.has_header and self.config.input_path is not None
        for path in self._input_files():
            self._artifact = path
            messages.extend(read_messages(path, has_header=has_header))
        streams = split_by_stock(messages)
        print(f"  📥 {len(messages)} messages for {len(streams)} stocks")

        self._artifact = self.tapes_dir
        tapes = reconstruct_universe(streams, workers=self.config.workers, show_progress=self.show_progress)
        if self.config.session_start_ms is not None:
            start, end = self.config.session_start_ms, self.config.session_end_ms
            tapes = {
                symbol: (filter_session(quotes, start, end), filter_session(trades, start, end))
                for symbol, (quotes, trades) in tapes.items()
            }

        artifacts = []
        for symbol, (quotes, trades) in tapes.items():
            artifacts.append(write_quote_tape(os.path.join(self.tapes_dir, f"quotes_{symbol}.csv"), quotes))
            artifacts.append(write_trade_tape(os.path.join(self.tapes_dir, f"trades_{symbol}.csv"), trades))
        metadata_path = os.path.join(self.output_dir, "stock_metadata.csv")
        artifacts.append(write_stock_metadata(metadata_path, stock_metadata(tapes, self.config.n_days)))
        print(f"  ✓ Tapes written for {len(tapes)} stocks")
        return {"artifacts": artifacts, "stocks": len(tapes)}

    def _load_tapes(self) -> Dict[str, tuple]:
        metadata_path = os.path.join(self.output_dir, "stock_metadata.csv")
        self._artifact = metadata_path
        if not os.path.exists(metadata_path):
            raise ConfigError(f"missing stage input: {metadata_path}")
        symbols = list(read_stock_metadata(metadata_path)["symbol"])
        tapes = {}
        for symbol in symbols:
            quotes_path = os.path.join(self.tapes_dir, f"quotes_{symbol}.csv")
            trades_path = os.path.join(self.tapes_dir, f"trades_{symbol}.csv")
            self._artifact = trades_path
            tapes[symbol] = (read_quote_tape(quotes_path), read_trade_tape(trades_path))
        return tapes

    def _matrix_path(self, case: str) -> str:
        return os.path.join(self.responses_dir, f"responses_{case}.csv")

    def stage_respond(self) -> Dict[str, Any]:
        tapes = self._load_tapes()
        deduped = {}
        excluded = {}
        for symbol, (quotes, trades) in tapes.items():
            kept, fraction = dedupe_millisecond_trades(trades)
            deduped[symbol] = (quotes, kept)
            excluded[symbol] = fraction
            if fraction > 0:
                self._warn(f"{symbol}: excluded {fraction:.2%} of trades sharing a millisecond")

        self._artifact = os.path.join(self.responses_dir, "observations.csv")
        store = build_observations(deduped, workers=self.config.workers, show_progress=self.show_progress)
        store.to_frame().to_csv(self._artifact, index=False, float_format="%.17g", lineterminator="\n")
        return self._write_responses(store, excluded)

    def _write_responses(self, store: ObservationStore, excluded: Dict[str, float]) -> Dict[str, Any]:
        symbols = store.symbols
        artifacts = [self._artifact]
        matrices = {case: response_matrix(store, case) for case in OBSERVED_CASES}
        matrices["weighted"] = weighted_response_matrix(store)
        for case, matrix in matrices.items():
            self._artifact = self._matrix_path(case)
            artifacts.append(write_matrix_csv(self._artifact, matrix.values, symbols))
            artifacts.append(write_matrix_csv(
                os.path.join(self.responses_dir, f"counts_{case}.csv"), matrix.counts, symbols, "%d"
            ))
        for case in OBSERVED_CASES:
            artifacts.append(write_matrix_csv(
                os.path.join(self.responses_dir, f"standard_errors_{case}.csv"),
                response_standard_errors(store, case),
                symbols,
            ))
        artifacts.append(write_matrix_csv(os.path.join(self.responses_dir, "weights.csv"), weight_matrix(store), symbols))

        summary = {"multiple_fraction": multiple_fraction(store), "excluded_trade_fraction": excluded}
        if "random" in self.config.cases:
            length = self.config.random_length or default_random_length(store)
            self._artifact = self._matrix_path("random")
            random_matrix = random_response(
                RandomResponseConfig(n=store.n, length=length, seed=self.seeds["respond"]), symbols=symbols
            )
            artifacts.append(write_matrix_csv(self._artifact, random_matrix.values, symbols))
            summary["random_length"] = length
            print(f"  🎲 Random baseline with L={length}")

        summary_path = write_json(os.path.join(self.responses_dir, "respond_summary.json"), summary)
        artifacts.append(summary_path)
        print(f"  ✓ {len(symbols)}x{len(symbols)} responses, multiple fraction {summary['multiple_fraction']:.3f}")
        return {"artifacts": artifacts, "multiple_fraction": summary["multiple_fraction"]}

    def _load_matrix(self, case: str):
        path = self._matrix_path(case)
        self._artifact = path
        if not os.path.exists(path):
            raise ConfigError(f"missing stage input: {path}")
        return read_matrix_csv(path)

    def stage_fit(self) -> Dict[str, Any]:
        fits = {}
        artifacts = []
        for case in self.config.cases:
            values, _ = self._load_matrix(case)
            samples = cross_responses(values)
            print(f"  📈 Fitting {case} ({len(samples)} responses)...")
            fit = fit_stable(samples)
            stats = dist_stats(samples, fit.params)
            for name, flagged in fit.boundary_flags.items():
                if flagged:
                    self._warn(f"{case}: fitted {name} at its bound")
            if not fit.converged:
                self._warn(f"{case}: stable fit did not converge")
            record = fit.to_dict()
            record["stats"] = stats.to_dict()
            fits[case] = record
            self._artifact = os.path.join(self.fits_dir, f"histogram_{case}.csv")
            histogram_table(samples, fit.params).to_csv(
                self._artifact, index=False, float_format="%.17g", lineterminator="\n"
            )
            artifacts.append(self._artifact)
            print(f"  ✓ alpha={fit.params.alpha:.4f} beta={fit.params.beta:.4f} gamma={fit.params.gamma:.4e}")
        self._artifact = os.path.join(self.fits_dir, "stable_fits.json")
        artifacts.append(write_json(self._artifact, fits))
        return {"artifacts": artifacts}

    def stage_asym(self) -> Dict[str, Any]:
        overall = {}
        artifacts = []
        for case in self.config.cases:
            values, _ = self._load_matrix(case)
            report = asymmetry_report(values, case)
            if report.imputed:
                self._warn(f"{case}: imputed {report.imputed} missing cells with 0")
            self._artifact = os.path.join(self.asymmetry_dir, f"asymmetry_{case}.csv")
            artifacts.append(write_asymmetry_csv(self._artifact, report))
            overall[case] = {"overall": report.overall, "imputed": report.imputed}
            print(f"  ✓ {case}: overall asymmetry {report.overall:.4f}")
        self._artifact = os.path.join(self.asymmetry_dir, "asymmetry.json")
        artifacts.append(write_json(self._artifact, overall))
        return {"artifacts": artifacts}

    def stage_spectra(self) -> Dict[str, Any]:
        rescaled = {}
        artifacts = []
        for case in self.config.cases:
            values, _ = self._load_matrix(case)
            filled, _ = impute_missing(values)
            result = spectrum_analysis(filled, case, self.config.hist_bins)
            record = {"entropy": spectrum_entropy(result.values, self.config.bins), "b": result.b}
            if result.b is None:
                self._warn(f"{case}: semicircle radius could not be rescaled")
            else:
                record["ks_distance"] = ks_distance(result.values, result.b)
                record["tail_mass"] = tail_mass(result.values, result.b)
            rescaled[case] = record

            self._artifact = os.path.join(self.spectra_dir, f"spectrum_{case}.csv")
            result.values_frame().to_csv(self._artifact, index=False, float_format="%.17g", lineterminator="\n")
            hist_path = os.path.join(self.spectra_dir, f"spectrum_hist_{case}.csv")
            result.histogram_frame().to_csv(hist_path, index=False, float_format="%.17g", lineterminator="\n")
            artifacts += [self._artifact, hist_path]
            print(f"  ✓ {case}: H(Im lambda)={record['entropy']:.4f}")
        self._artifact = os.path.join(self.spectra_dir, "b_rescaled.json")
        artifacts.append(write_json(self._artifact, rescaled))
        return {"artifacts": artifacts}

    def _load_fits(self) -> Dict[str, Any]:
        path = os.path.join(self.fits_dir, "stable_fits.json")
        self._artifact = path
        return read_json(path)

    def stage_entropy(self) -> Dict[str, Any]:
        fits = self._load_fits()
        self._artifact = os.path.join(self.output_dir, "stock_metadata.csv")
        metadata = read_stock_metadata(self._artifact)
        avg_trades = dict(zip(metadata["symbol"], metadata["n_trades"]))
        artifacts = []
        summary = {}
        for case in self.config.cases:
            if case not in fits:
                raise ConfigError(f"no stable fit for case {case}; run the fit stage first")
            values, symbols = self._load_matrix(case)
            fit = StableFit.from_dict(fits[case])
            probabilities = probability_matrix(values, fit.params, bins=self.config.bins, symbols=symbols)
            if probabilities.clamped:
                self._warn(f"{case}: {probabilities.clamped} responses clamped into the outer bins")
            hu, hv = row_col_entropies(probabilities)
            entropy = impact_entropy_matrix(hu, hv, symbols)

            self._artifact = os.path.join(self.entropy_dir, f"entropy_matrix_{case}.csv")
            artifacts.append(write_matrix_csv(self._artifact, entropy.values, symbols))
            artifacts.append(write_matrix_csv(
                os.path.join(self.entropy_dir, f"probabilities_{case}.csv"), probabilities.values, symbols
            ))
            scatter = scatter_export(hu, hv, symbols, [avg_trades.get(s, np.nan) for s in symbols])
            entropies_path = os.path.join(self.entropy_dir, f"entropies_{case}.csv")
            scatter.frame.to_csv(entropies_path, index=False, float_format="%.17g", lineterminator="\n")
            artifacts.append(entropies_path)
            summary[case] = {"references": scatter.references, "clamped": probabilities.clamped}
            print(f"  ✓ {case}: mean I_ii {scatter.references['mean_i_ii']:.4f}")
        self._artifact = os.path.join(self.entropy_dir, "entropy_summary.json")
        artifacts.append(write_json(self._artifact, summary))
        return {"artifacts": artifacts}

    def stage_network(self) -> Dict[str, Any]:
        artifacts = []
        structure = {}
        for case in self.config.cases:
            entropy = self._load_entropy(case)

            network = threshold_network(
                entropy, self.config.lo_frac, self.config.hi_frac, self.config.include_diagonal_mean
            )
            self._artifact = os.path.join(self.networks_dir, f"{case}_range")
            paths = export_network(network, self._artifact)
            artifacts += list(paths.values())

            groups = group_networks(entropy, self.config.groups)
            group_rows = []
            for group in groups:
                paths = export_network(group.network, os.path.join(self.networks_dir, f"{case}_q{group.q:03d}"))
                artifacts += list(paths.values())
                group_rows.append({
                    "q": group.q,
                    "edges": group.network.edge_count,
                    "lower": group.network.lower,
                    "upper": group.network.upper,
                    "peak_connectivity": peak_connectivity(group.network),
                    "mean_incident_connectivity": mean_incident_connectivity(group.network),
                })
            connectivity_path = os.path.join(self.networks_dir, f"connectivity_by_group_{case}.csv")
            connectivity_by_group(groups).to_csv(connectivity_path, index=False, lineterminator="\n")
            artifacts.append(connectivity_path)
            structure[case] = {"range_edges": network.edge_count, "groups": group_rows}
            print(f"  ✓ {case}: {network.edge_count} edges in range, {len(groups)} groups")
        self._artifact = os.path.join(self.networks_dir, "network_summary.json")
        artifacts.append(write_json(self._artifact, structure))
        return {"artifacts": artifacts}

    def _load_entropy(self, case: str):
        """Entropy of impacts rebuilt from the persisted per-stock H(u), H(v)."""
        path = os.path.join(self.entropy_dir, f"entropies_{case}.csv")
        self._artifact = path
        if not os.path.exists(path):
            raise ConfigError(f"missing stage input: {path}")
        frame = pd.read_csv(path, dtype={"symbol": str})
        hu = frame["h_u"].to_numpy(dtype=float)
        hv = frame["h_v"].to_numpy(dtype=float)
        return impact_entropy_matrix(hu, hv, list(frame["symbol"]))

    def stage_report(self) -> Dict[str, Any]:
        self._artifact = os.path.join(self.output_dir, "summary.json")
        summary = report_summary(self.output_dir, self.config.cases)
        paths = save_summary(summary, self.output_dir)
        if summary["gaps"]:
            self._warn(f"summary incomplete: {len(summary['gaps'])} values missing")
        timings = self.tracker.timings if self.tracker is not None else None
        print(render_text_summary(summary, timings))
        return {"artifacts": list(paths.values()), "complete": summary["complete"]}

    # ----------------------
    # Manifest
    # ----------------------
    def artifact_hashes(self) -> Dict[str, str]:
        hashes = {}
        for root, _, files in os.walk(self.output_dir):
            for name in files:
                path = os.path.join(root, name)
                relative = os.path.relpath(path, self.output_dir).replace(os.sep, "/")
                if relative != MANIFEST_NAME:
                    hashes[relative] = file_sha256(path)
        return dict(sorted(hashes.items()))

    def write_manifest(self, stages: List[str]) -> Dict[str, Any]:
        """
        Write manifest.json: config, config hash, seeds, versions, stages, warnings
        and the SHA-256 of every artifact. Wall-clock timings stay in the progress file
        named under metadata.timings_file, inside the configured progress directory.
        """
        path = os.path.join(self.output_dir, MANIFEST_NAME)
        previous = read_json(path) if os.path.exists(path) else {}
        completed = list(dict.fromkeys(previous.get("stages", []) + list(stages)))
        completed.sort(key=lambda s: self.stage_order.index(s) if s in self.stage_order else len(self.stage_order))
        warnings = list(dict.fromkeys(previous.get("warnings", []) + self.warnings))

        manifest = {
            "metadata": {
                "generated_by": "impact-pipeline",
                "config_hash": self.config.config_hash,
                "timings_file": os.path.basename(progress_path(self.run_id, self.config.progress_dir)),
            },
            "config": json.loads(self.config.canonical_json()),
            "seeds": self.seeds,
            "versions": package_versions(),
            "stages": completed,
            "warnings": warnings,
            "artifacts": self.artifact_hashes(),
        }
        write_json(path, manifest)
        return manifest
