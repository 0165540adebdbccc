"""Integrated-gradients attribution of drop predictions onto input features."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import artifacts
from .model import Model, grad_input_batch

DEFAULT_STEPS = 50


@dataclass(frozen=True, eq=False)
class AttributionMatrix:
    values: np.ndarray      # (D, Q), row i explains sample i
    baseline: np.ndarray
    steps: int

    @property
    def shape(self):
        return self.values.shape

    def to_csv(self, path: Path, feature_names: Sequence[str],
               predictions: Optional[np.ndarray] = None, inputs: Optional[np.ndarray] = None) -> Path:
        """One row per sample.

        ``inputs`` adds the explained feature values as ``<name>_value``
        columns; a trailing ``y_hat`` column holds the prediction.
        """
        header = list(feature_names)
        rows = self.values.tolist()
        if inputs is not None:
            header += [f"{name}_value" for name in feature_names]
            rows = [r + x for r, x in zip(rows, np.asarray(inputs, dtype=float).tolist())]
        if predictions is not None:
            header.append("y_hat")
            rows = [r + [p] for r, p in zip(rows, np.asarray(predictions).tolist())]
        return artifacts.write_csv(path, header, rows)


def _check(model: Model, steps: int, baseline: Optional[np.ndarray]) -> np.ndarray:
    if steps < 1:
        raise ValueError(f"integration steps must be >= 1, got {steps}")
    if baseline is None:
        return np.zeros(model.n_features)
    baseline = np.asarray(baseline, dtype=float)
    if baseline.shape != (model.n_features,) or not np.all(np.isfinite(baseline)):
        raise ValueError(f"baseline must be a finite vector of {model.n_features} entries")
    return baseline


def integrated_gradients(model: Model, x, baseline=None, steps: int = DEFAULT_STEPS) -> np.ndarray:
    """Right-Riemann integrated gradients of ``forward`` along the straight path."""
    return attribution_matrix(model, np.asarray(x, dtype=float)[None, :], baseline, steps).values[0]


def attribution_matrix(model: Model, batch, baseline=None, steps: int = DEFAULT_STEPS) -> AttributionMatrix:
    X = np.asarray(batch, dtype=float)
    if X.ndim != 2 or X.shape[0] < 1:
        raise ValueError(f"attribution needs a non-empty (D, Q) batch, got shape {X.shape}")
    baseline = _check(model, steps, baseline)
    diff = X - baseline
    alphas = np.arange(1, steps + 1) / steps
    # (D, m, Q) path points, evaluated in one backward pass
    points = baseline + alphas[None, :, None] * diff[:, None, :]
    grads = grad_input_batch(model, points.reshape(-1, X.shape[1])).reshape(points.shape)
    values = diff * grads.mean(axis=1)
    return AttributionMatrix(values, baseline, steps)
