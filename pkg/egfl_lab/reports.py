"""Tables behind each figure, read back from a finished run directory."""
from __future__ import annotations

import logging
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import artifacts
from .slices import FEATURE_NAMES, SLICE_ORDER
from .theory import variant_dirs

log = logging.getLogger(__name__)

Table = Tuple[Sequence[str], List[tuple]]
SPLITS = ("test", "train")


def _round_rows(vdir: Path) -> List[Dict[str, str]]:
    return artifacts.read_csv_dicts(vdir / "round_reports.csv")


def loss_table(run_dir: Path) -> Table:
    rows = []
    for vdir in variant_dirs(run_dir):
        for r in _round_rows(vdir):
            rows.append((vdir.name, r["slice"], int(r["round"]), float(r["loss"]), float(r["normalized_loss"])))
    return ("variant", "slice", "round", "loss", "normalized_loss"), rows


def recall_table(run_dir: Path) -> Table:
    rows = []
    for vdir in variant_dirs(run_dir):
        gamma = {s["kind"]: s["gamma"] for s in artifacts.read_json(vdir / "metrics.json")["slices"]}
        for r in _round_rows(vdir):
            rows.append((vdir.name, r["slice"], int(r["round"]), float(r["train_recall"]),
                         float(r["test_recall"]), gamma[r["slice"]]))
    return ("variant", "slice", "round", "train_recall", "test_recall", "gamma"), rows


def comprehensiveness_table(run_dir: Path) -> Table:
    """Final faithfulness scores, one row per variant, slice and split."""
    rows = []
    for vdir in variant_dirs(run_dir):
        for s in artifacts.read_json(vdir / "metrics.json")["slices"]:
            for split in SPLITS:
                rows.append((vdir.name, s["kind"], split, s[f"{split}_js"],
                             s[f"{split}_comprehensiveness"], s[f"{split}_total_variation"]))
    return ("variant", "slice", "split", "js", "comprehensiveness", "total_variation"), rows


def sweep_table(run_dir: Path) -> Table:
    rows = []
    for vdir in variant_dirs(run_dir):
        metrics = artifacts.read_json(vdir / "metrics.json")
        for s in metrics["slices"]:
            for point in s["sweep"]:
                rows.append((s["kind"], vdir.name, point["p_percent"], point["comprehensiveness"],
                             metrics["faithfulness_split"]))
    return ("slice", "variant", "p_percent", "comprehensiveness", "split"), rows


def _attribution_files(vdir: Path):
    for kind in SLICE_ORDER:
        path = vdir / f"attributions_{kind}.csv"
        if path.is_file():
            raw = artifacts.read_csv_dicts(path)
            values = np.array([[float(r[f]) for f in FEATURE_NAMES] for r in raw])
            y_hat = np.array([float(r["y_hat"]) for r in raw])
            yield kind, values, y_hat


def attribution_summary(values: np.ndarray) -> List[Dict[str, float]]:
    """Per-column distribution of attribution scores."""
    values = np.asarray(values, dtype=float)
    q25, median, q75 = np.percentile(values, [25, 50, 75], axis=0)
    return [{
        "mean": float(values[:, j].mean()),
        "mean_abs": float(np.abs(values[:, j]).mean()),
        "std": float(values[:, j].std()),
        "min": float(values[:, j].min()),
        "q25": float(q25[j]),
        "median": float(median[j]),
        "q75": float(q75[j]),
        "max": float(values[:, j].max()),
        "negative_fraction": float(np.mean(values[:, j] < 0)),
    } for j in range(values.shape[1])]


_SUMMARY_KEYS = ("mean", "mean_abs", "std", "min", "q25", "median", "q75", "max", "negative_fraction")


def attributions_table(run_dir: Path) -> Table:
    rows = []
    for vdir in variant_dirs(run_dir):
        for kind, values, _ in _attribution_files(vdir):
            for feature, stats in zip(FEATURE_NAMES, attribution_summary(values)):
                rows.append((vdir.name, kind, feature, *(stats[k] for k in _SUMMARY_KEYS)))
    return ("variant", "slice", "feature") + _SUMMARY_KEYS, rows


def correlation_matrix(columns: np.ndarray) -> np.ndarray:
    """Pearson matrix of the columns; entries touching a constant column are 0 (diagonal 1)."""
    R = np.asarray(columns, dtype=float)
    centred = R - R.mean(axis=0)
    std = np.sqrt(np.mean(centred ** 2, axis=0))
    live = std > 1e-15
    safe = np.where(live, std, 1.0)
    corr = (centred.T @ centred) / R.shape[0] / np.outer(safe, safe)
    corr = np.where(np.outer(live, live), corr, 0.0)
    np.fill_diagonal(corr, np.where(live, 1.0, 0.0))
    return np.clip(corr, -1.0, 1.0)


def feature_correlations(values: np.ndarray, y_hat: np.ndarray) -> np.ndarray:
    """Correlation of each attribution column with the prediction."""
    R = np.column_stack([np.asarray(values, dtype=float), np.asarray(y_hat, dtype=float)])
    return correlation_matrix(R)[:-1, -1]


def correlation_table(run_dir: Path) -> Table:
    rows = []
    for vdir in variant_dirs(run_dir):
        for kind, values, y_hat in _attribution_files(vdir):
            for feature, c in zip(FEATURE_NAMES, feature_correlations(values, y_hat)):
                rows.append((vdir.name, kind, feature, float(c)))
    return ("variant", "slice", "feature", "correlation"), rows


def correlation_matrices(run_dir: Path) -> Dict:
    labels = list(FEATURE_NAMES) + ["y_hat"]
    out: Dict = {"labels": labels, "matrices": {}}
    for vdir in variant_dirs(run_dir):
        for kind, values, y_hat in _attribution_files(vdir):
            out["matrices"].setdefault(vdir.name, {})[kind] = correlation_matrix(
                np.column_stack([values, y_hat])).tolist()
    return out


FIGURES: Dict[str, Callable[[Path], Table]] = {
    "loss": loss_table,
    "recall": recall_table,
    "comprehensiveness": comprehensiveness_table,
    "sweep": sweep_table,
    "attributions": attributions_table,
    "correlation": correlation_table,
}


def figure_table(run_dir: Path, figure: str) -> Table:
    try:
        build = FIGURES[figure]
    except KeyError:
        raise ValueError(f"unknown figure {figure!r}; expected one of {sorted(FIGURES)}") from None
    return build(Path(run_dir))


def write_figure(run_dir: Path, figure: str, out_dir: Optional[Path] = None) -> List[Path]:
    """Write ``figures/<figure>.csv`` (plus the full matrices for ``correlation``)."""
    out_dir = Path(out_dir) if out_dir is not None else Path(run_dir) / "figures"
    header, rows = figure_table(run_dir, figure)
    written = [artifacts.write_csv(out_dir / f"{figure}.csv", header, rows)]
    if figure == "correlation":
        written.append(artifacts.write_json(out_dir / "correlation_matrix.json", correlation_matrices(run_dir)))
    log.info("wrote %s figure data (%d rows) to %s", figure, len(rows), out_dir)
    return written
