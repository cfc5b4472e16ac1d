"""
Report files for an evaluation run, and the loaders the Streamlit viewer
uses to read them back.

Layout of an output directory:
    summary.csv                 one aggregate row per grid cell
    folds.csv                   per-fold confusion counts and metrics
    baseline.csv                nearest-centroid reference per fold
    published_reference.csv     reference numbers for the same grid cells
    traces/<features>__<model>__fold<i>.csv

Every file starts with a `# config_hash=... master_seed=...` line. Nothing
time-dependent is written, so identical runs produce identical bytes.
"""

import csv
import logging
import os
from typing import Dict, List, Optional

import config
from utilities.evaluate import ConfusionMatrix, EvaluationReport, Metrics, metrics
from utilities.neural import write_trace

logger = logging.getLogger(__name__)

SUMMARY_FILE = "summary.csv"
FOLDS_FILE = "folds.csv"
BASELINE_FILE = "baseline.csv"
REFERENCE_FILE = "published_reference.csv"
TRACE_DIR = "traces"

SUMMARY_FIELDS = ["features", "classifier", "accuracy", "tpr", "tnr", "ppv", "undefined"]
FOLD_FIELDS = ["features", "classifier", "fold", "tp", "fn", "tn", "fp", "accuracy", "tpr", "tnr", "ppv"]
BASELINE_FIELDS = ["fold", "tp", "fn", "tn", "fp", "accuracy", "tpr", "tnr", "ppv"]
REFERENCE_FIELDS = ["features", "classifier", "accuracy", "tpr", "tnr", "ppv"]


def _percent(m: Metrics) -> Dict[str, str]:
    acc, tpr, tnr, ppv = m.as_percent()
    return {"accuracy": f"{acc:.2f}", "tpr": f"{tpr:.2f}", "tnr": f"{tnr:.2f}", "ppv": f"{ppv:.2f}"}


def _counts(cm: ConfusionMatrix) -> Dict[str, int]:
    return {"tp": cm.tp, "fn": cm.fn, "tn": cm.tn, "fp": cm.fp}


def _write_rows(path: str, fieldnames: List[str], rows: List[Dict], header: Optional[str]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        if header:
            f.write(header + "\n")
        writer = csv.DictWriter(f, fieldnames=fieldnames, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


def trace_filename(features: str, model: str, fold: int) -> str:
    return f"{features}__{model}__fold{fold}.csv"


def write_report(report: EvaluationReport, out_dir: str, header: Optional[str] = None) -> List[str]:
    """
    Write every report file for an evaluation run.

    Args:
        report: Result of run_experiment
        out_dir: Output directory (created if missing)
        header: Provenance comment line placed first in each file

    Returns:
        Paths written, in write order
    """
    os.makedirs(os.path.join(out_dir, TRACE_DIR), exist_ok=True)
    written = []

    summary_rows = []
    for cell in report.aggregates:
        summary_rows.append({
            "features": config.REDUCER_LABELS[cell.reducer],
            "classifier": config.CLASSIFIER_LABELS[cell.classifier],
            **_percent(cell.metrics),
            "undefined": ";".join(cell.metrics.undefined),
        })
    path = os.path.join(out_dir, SUMMARY_FILE)
    _write_rows(path, SUMMARY_FIELDS, summary_rows, header)
    written.append(path)

    fold_rows = []
    for result in report.folds:
        fold_rows.append({
            "features": config.REDUCER_LABELS[result.reducer],
            "classifier": config.CLASSIFIER_LABELS[result.classifier],
            "fold": result.fold,
            **_counts(result.confusion),
            **_percent(result.metrics),
        })
    path = os.path.join(out_dir, FOLDS_FILE)
    _write_rows(path, FOLD_FIELDS, fold_rows, header)
    written.append(path)

    baseline_rows = [
        {"fold": i, **_counts(cm), **_percent(metrics(cm))} for i, cm in enumerate(report.baseline_folds)
    ]
    total = ConfusionMatrix()
    for cm in report.baseline_folds:
        total = total + cm
    baseline_rows.append({"fold": "all", **_counts(total), **_percent(report.baseline)})
    path = os.path.join(out_dir, BASELINE_FILE)
    _write_rows(path, BASELINE_FIELDS, baseline_rows, header)
    written.append(path)

    reference_rows = []
    for reducer in report.reducers:
        for clf in report.classifiers:
            acc, tpr, tnr, ppv = config.PUBLISHED_RESULTS[(reducer, clf)]
            reference_rows.append({
                "features": config.REDUCER_LABELS[reducer],
                "classifier": config.CLASSIFIER_LABELS[clf],
                "accuracy": f"{acc:.2f}",
                "tpr": f"{tpr:.2f}",
                "tnr": f"{tnr:.2f}",
                "ppv": f"{ppv:.2f}",
            })
    path = os.path.join(out_dir, REFERENCE_FILE)
    _write_rows(path, REFERENCE_FIELDS, reference_rows, header)
    written.append(path)

    for (features, model, fold), trace in sorted(report.traces.items()):
        path = os.path.join(out_dir, TRACE_DIR, trace_filename(features, model, fold))
        write_trace(trace, path, header)
        written.append(path)

    logger.info(f"[EVAL] Wrote {len(written)} report files to {out_dir}")
    return written


# ============================================================================
# Loaders (Streamlit viewer)
# ============================================================================

def _read_rows(path: str) -> List[Dict[str, str]]:
    if not os.path.exists(path):
        return []
    with open(path, "r", newline="", encoding="utf-8") as f:
        lines = [line for line in f if not line.startswith("#")]
    return list(csv.DictReader(lines))


def read_provenance(path: str) -> Dict[str, str]:
    """Parse the `# key=value ...` line at the top of a report file."""
    if not os.path.exists(path):
        return {}
    with open(path, "r", encoding="utf-8") as f:
        first = f.readline().strip()
    if not first.startswith("#"):
        return {}
    pairs = (token.split("=", 1) for token in first.lstrip("#").split() if "=" in token)
    return {key: value for key, value in pairs}


def load_summary(out_dir: str) -> List[Dict[str, str]]:
    return _read_rows(os.path.join(out_dir, SUMMARY_FILE))


def load_folds(out_dir: str) -> List[Dict[str, str]]:
    return _read_rows(os.path.join(out_dir, FOLDS_FILE))


def load_baseline(out_dir: str) -> List[Dict[str, str]]:
    return _read_rows(os.path.join(out_dir, BASELINE_FILE))


def load_reference(out_dir: str) -> List[Dict[str, str]]:
    return _read_rows(os.path.join(out_dir, REFERENCE_FILE))


def list_traces(out_dir: str) -> List[str]:
    """Trace file names under out_dir/traces, sorted."""
    trace_dir = os.path.join(out_dir, TRACE_DIR)
    if not os.path.isdir(trace_dir):
        return []
    return sorted(name for name in os.listdir(trace_dir) if name.endswith(".csv"))


def load_trace(out_dir: str, name: str) -> Dict[str, List[float]]:
    """
    Read one loss trace.

    Returns:
        {"epoch": [...], "train_loss": [...], "val_loss": [...]}
    """
    rows = _read_rows(os.path.join(out_dir, TRACE_DIR, name))
    return {
        "epoch": [int(r["epoch"]) for r in rows],
        "train_loss": [float(r["train_loss"]) for r in rows],
        "val_loss": [float(r["val_loss"]) for r in rows],
    }
