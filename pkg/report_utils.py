#!/usr/bin/env python3
"""
Report Utilities

Builds the per-case summary of a completed run (distribution statistics,
overall asymmetry and spectrum entropy, plus the stable-fit parameters) from the
persisted stage outputs, and renders it as JSON and as a plain-text table.
"""

import json
import math
import os
from typing import Any, Dict, List, Optional

import pandas as pd

CASE_LABELS = {
    "all": "All",
    "single": "Single",
    "multiple": "Multiple",
    "weighted": "Weighted",
    "random": "Random",
}

MEASUREMENT_ROWS = [
    ("mode", "Mode"),
    ("mean", "Mean"),
    ("median", "Median"),
    ("skewness", "Skewness"),
    ("overall_asymmetry", "Overall asymmetry"),
    ("spectrum_entropy", "H(Im(lambda))"),
]
FIT_ROWS = [("alpha", "alpha"), ("beta", "beta"), ("gamma", "gamma"), ("mu0", "mu0")]


def format_duration(seconds: float) -> str:
    """Stage wall-clock time: milliseconds below a second, then s, m+s and h+m."""
    if seconds < 1:
        return f"{seconds * 1000:.0f}ms"
    if seconds < 60:
        return f"{seconds:.1f}s"
    minutes, secs = divmod(int(round(seconds)), 60)
    if minutes < 60:
        return f"{minutes}m{secs:02d}s"
    hours, minutes = divmod(minutes, 60)
    return f"{hours}h{minutes:02d}m"


def format_value(value: Optional[float]) -> str:
    """Scientific notation with four significant decimals; gaps render as '-'."""
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return "-"
    return f"{value:.4e}"


def _read_json(path: str) -> Optional[Dict[str, Any]]:
    if not os.path.exists(path):
        return None
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


def report_summary(output_dir: str, cases: Optional[List[str]] = None) -> Dict[str, Any]:
    """
    Collect the summary tables of a run.

    Args:
        output_dir (str): Output directory of the run
        cases (List[str], optional): Cases to report; defaults to every case with a fit

    Returns:
        Dict: {'columns', 'measurements', 'fits', 'gaps', 'complete'}; missing
        values are None and listed under 'gaps'
    """
    fits = _read_json(os.path.join(output_dir, "fits", "stable_fits.json")) or {}
    asymmetry = _read_json(os.path.join(output_dir, "asymmetry", "asymmetry.json")) or {}
    spectra = _read_json(os.path.join(output_dir, "spectra", "b_rescaled.json")) or {}

    if cases is None:
        found = set(fits) | set(asymmetry) | set(spectra)
        cases = [c for c in CASE_LABELS if c in found]
    columns = [CASE_LABELS[c] for c in cases]

    measurements: Dict[str, Dict[str, Optional[float]]] = {}
    parameters: Dict[str, Dict[str, Optional[float]]] = {}
    gaps: List[str] = []

    for case in cases:
        label = CASE_LABELS[case]
        fit = fits.get(case)
        stats = (fit or {}).get("stats", {})
        values = {
            "mode": stats.get("mode"),
            "mean": stats.get("mean"),
            "median": stats.get("median"),
            "skewness": stats.get("skewness"),
            "overall_asymmetry": (asymmetry.get(case) or {}).get("overall"),
            "spectrum_entropy": (spectra.get(case) or {}).get("entropy"),
        }
        measurements[label] = values
        parameters[label] = {key: (fit or {}).get(key) for key, _ in FIT_ROWS}
        parameters[label]["boundary_flags"] = (fit or {}).get("boundary_flags", {})
        gaps.extend(f"{label}.{key}" for key, value in values.items() if value is None)
        gaps.extend(f"{label}.{key}" for key, _ in FIT_ROWS if parameters[label][key] is None)

    return {
        "columns": columns,
        "measurements": measurements,
        "fits": parameters,
        "gaps": gaps,
        "complete": not gaps,
    }


def _table(summary: Dict[str, Any], section: str, rows) -> pd.DataFrame:
    data = {
        column: [format_value(summary[section][column].get(key)) for key, _ in rows]
        for column in summary["columns"]
    }
    return pd.DataFrame(data, index=[label for _, label in rows])


def render_text_summary(summary: Dict[str, Any], timings: Optional[Dict[str, float]] = None) -> str:
    """Plain-text rendering of `report_summary` output."""
    lines = ["Measurements of asymmetries", "=" * 27]
    lines.append(_table(summary, "measurements", MEASUREMENT_ROWS).to_string())
    lines += ["", "Fit parameters of stable distributions", "=" * 38]
    lines.append(_table(summary, "fits", FIT_ROWS).to_string())

    flagged = [
        f"{column}: {', '.join(k for k, v in summary['fits'][column]['boundary_flags'].items() if v)}"
        for column in summary["columns"]
        if any(summary["fits"][column]["boundary_flags"].values())
    ]
    if flagged:
        lines += ["", "Fits at a parameter bound:"] + [f"  {item}" for item in flagged]
    if summary["gaps"]:
        lines += ["", f"Incomplete run, missing: {', '.join(summary['gaps'])}"]
    if timings:
        lines += ["", "Stage timings:"]
        lines += [f"  {stage:<10} {format_duration(seconds)}" for stage, seconds in timings.items()]
    return "\n".join(lines) + "\n"


def save_summary(summary: Dict[str, Any], output_dir: str) -> Dict[str, str]:
    """Write summary.json and summary.txt; returns both paths."""
    json_path = os.path.join(output_dir, "summary.json")
    text_path = os.path.join(output_dir, "summary.txt")
    with open(json_path, "w", encoding="utf-8") as f:
        json.dump(summary, f, indent=2, sort_keys=True)
        f.write("\n")
    with open(text_path, "w", encoding="utf-8") as f:
        f.write(render_text_summary(summary))
    return {"json": json_path, "text": text_path}
