"""Explanation-guided masking, divergences and faithfulness scores.

Divergences compare per-sample Bernoulli distributions over {drop, no drop}
and average over the batch.  All logarithms are natural.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import rel_entr

from .errors import InputShapeError
from .explain import AttributionMatrix, attribution_matrix
from .model import PROB_EPS, Model, Outputs, TermGrad, clamp_probs, forward_batch


class DivergenceKind(str, enum.Enum):
    JS = "JS"
    KL = "KL"
    NONE = "NONE"

    @classmethod
    def parse(cls, value) -> "DivergenceKind":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).upper())
        except ValueError:
            raise ValueError(f"unknown divergence kind {value!r}; expected one of JS, KL, NONE") from None


@dataclass(frozen=True, eq=False)
class MaskPlan:
    masked_indices: np.ndarray          # (D, count) feature indices
    fraction: Optional[float] = None    # None when driven by a fixed count

    @property
    def count(self) -> int:
        return self.masked_indices.shape[1]


def mask_count(n_features: int, count: Optional[int] = None, fraction: Optional[float] = None) -> int:
    if (count is None) == (fraction is None):
        raise ValueError("give exactly one of count or fraction")
    if fraction is not None:
        if not 0.0 <= fraction <= 1.0:
            raise ValueError(f"mask fraction must be in [0, 1], got {fraction}")
        # tolerance keeps exact ratios j/Q from rounding up
        count = max(1, math.ceil(fraction * n_features - 1e-9))
    if count < 0:
        raise ValueError(f"mask count must be non-negative, got {count}")
    if count >= n_features:
        raise ValueError(f"cannot mask {count} of {n_features} features")
    return count


def select_mask(attr: AttributionMatrix, count: Optional[int] = 1, fraction: Optional[float] = None,
                most_important: bool = False) -> MaskPlan:
    """Per sample, the ``count`` features of smallest |attribution| (largest with
    ``most_important``); ties go to the lower index."""
    values = np.asarray(attr.values if isinstance(attr, AttributionMatrix) else attr, dtype=float)
    if values.ndim != 2 or values.shape[0] < 1:
        raise ValueError("attribution matrix is empty")
    if fraction is not None:
        count = None
    n = mask_count(values.shape[1], count, fraction)
    ranking = -np.abs(values) if most_important else np.abs(values)
    order = np.argsort(ranking, axis=1, kind="stable")
    return MaskPlan(order[:, :n], fraction)


def apply_mask(batch, plan: MaskPlan) -> np.ndarray:
    """Copy of ``batch`` with the planned entries zero-padded."""
    X = np.array(batch, dtype=float)
    idx = np.asarray(plan.masked_indices)
    if X.ndim != 2 or idx.shape[0] != X.shape[0]:
        raise InputShapeError(f"mask plan for {idx.shape[0]} rows does not fit batch of shape {X.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= X.shape[1]):
        raise InputShapeError(f"mask indices outside 0..{X.shape[1] - 1}")
    if idx.size:
        np.put_along_axis(X, idx.astype(int), 0.0, axis=1)
    return X


def masked_predictions(model: Model, masked_batch) -> np.ndarray:
    return forward_batch(model, masked_batch)


def _pair(p, q) -> Tuple[np.ndarray, np.ndarray]:
    p = np.atleast_1d(np.asarray(p, dtype=float))
    q = np.atleast_1d(np.asarray(q, dtype=float))
    if p.shape != q.shape or p.ndim != 1 or p.size < 1:
        raise InputShapeError(f"probability vectors differ: {p.shape} vs {q.shape}")
    return clamp_probs(p), clamp_probs(q)


def _bernoulli_kl(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    return rel_entr(p, q) + rel_entr(1.0 - p, 1.0 - q)


def _js_terms(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    m = 0.5 * (p + q)
    return 0.5 * (_bernoulli_kl(p, m) + _bernoulli_kl(q, m))


def js_divergence(p, q) -> float:
    """Mean per-sample Jensen-Shannon divergence; bounded by ln 2."""
    p, q = _pair(p, q)
    return float(np.mean(_js_terms(p, q)))


def kl_divergence(p, q) -> float:
    """Mean per-sample KL(B(p) || B(q)); not symmetric."""
    p, q = _pair(p, q)
    return float(np.mean(_bernoulli_kl(p, q)))


def total_variation(p, q) -> float:
    """Mean per-sample |p - q|, the Bernoulli total variation."""
    p, q = _pair(p, q)
    return float(np.mean(np.abs(p - q)))


def divergence(kind: DivergenceKind, p, q) -> float:
    kind = DivergenceKind.parse(kind)
    if kind is DivergenceKind.JS:
        return js_divergence(p, q)
    if kind is DivergenceKind.KL:
        return kl_divergence(p, q)
    return 0.0


def divergence_grad(kind: DivergenceKind, p, q) -> Tuple[np.ndarray, np.ndarray]:
    """Gradient of the batch-mean divergence w.r.t. both operands (zero where clamped)."""
    kind = DivergenceKind.parse(kind)
    raw_p = np.asarray(p, dtype=float)
    raw_q = np.asarray(q, dtype=float)
    p, q = _pair(raw_p, raw_q)
    n = p.size
    if kind is DivergenceKind.JS:
        m = 0.5 * (p + q)
        dp = 0.5 * (np.log(p / m) - np.log((1.0 - p) / (1.0 - m)))
        dq = 0.5 * (np.log(q / m) - np.log((1.0 - q) / (1.0 - m)))
    elif kind is DivergenceKind.KL:
        dp = np.log(p / q) - np.log((1.0 - p) / (1.0 - q))
        dq = (q - p) / (q * (1.0 - q))
    else:
        return np.zeros(n), np.zeros(n)
    inside_p = (raw_p > PROB_EPS) & (raw_p < 1.0 - PROB_EPS)
    inside_q = (raw_q > PROB_EPS) & (raw_q < 1.0 - PROB_EPS)
    return np.where(inside_p, dp, 0.0) / n, np.where(inside_q, dq, 0.0) / n


class DivergenceTerm:
    """Divergence between original and masked tester predictions."""

    needs_tester = True

    def __init__(self, kind: DivergenceKind, coef: float = 1.0):
        self.kind = DivergenceKind.parse(kind)
        self.coef = float(coef)

    def value(self, out: Outputs) -> float:
        return divergence(self.kind, out.tester, out.tester_masked)

    def grad(self, out: Outputs) -> TermGrad:
        dp, dq = divergence_grad(self.kind, out.tester, out.tester_masked)
        return TermGrad(tester=dp, tester_masked=dq)


def _predictions(p_hat, p_masked) -> Tuple[np.ndarray, np.ndarray]:
    p_hat = np.atleast_1d(np.asarray(p_hat, dtype=float))
    p_masked = np.atleast_1d(np.asarray(p_masked, dtype=float))
    if p_hat.shape != p_masked.shape or p_hat.size < 1:
        raise InputShapeError(f"prediction vectors differ: {p_hat.shape} vs {p_masked.shape}")
    return p_hat, p_masked


def comprehensiveness(p_hat, p_masked) -> float:
    """Mean drop in predicted probability once features are removed; may be negative."""
    p_hat, p_masked = _predictions(p_hat, p_masked)
    return float(np.mean(p_hat - p_masked))


def class_confidence(probs, reference, threshold: float = 0.5) -> np.ndarray:
    """Probability each sample gives to the class ``reference`` predicts for it."""
    probs = np.asarray(probs, dtype=float)
    return np.where(np.asarray(reference, dtype=float) >= threshold, probs, 1.0 - probs)


def class_comprehensiveness(p_hat, p_masked, threshold: float = 0.5) -> float:
    """Comprehensiveness on the predicted class of each unmasked sample.

    For drops this is ``p_hat - p_masked``; for non-drops the sign flips, so
    a removal that pulls any prediction towards the boundary scores positive.
    """
    p_hat, p_masked = _predictions(p_hat, p_masked)
    return comprehensiveness(class_confidence(p_hat, p_hat, threshold),
                             class_confidence(p_masked, p_hat, threshold))


def faithfulness_scores(model: Model, batch, attr: Optional[AttributionMatrix] = None,
                        threshold: float = 0.5, ig_steps: int = 50) -> Dict[str, float]:
    """Masking scores of one batch.

    ``js`` and ``total_variation`` compare predictions before and after the
    least important feature is zeroed, the quantity local training pulls
    together.  ``comprehensiveness`` zeroes the most important feature.
    """
    X = np.asarray(batch, dtype=float)
    if attr is None:
        attr = attribution_matrix(model, X, steps=ig_steps)
    p_hat = forward_batch(model, X)
    p_low = masked_predictions(model, apply_mask(X, select_mask(attr, count=1)))
    p_top = masked_predictions(model, apply_mask(X, select_mask(attr, count=1, most_important=True)))
    return {
        "js": js_divergence(p_hat, p_low),
        "total_variation": total_variation(p_hat, p_low),
        "comprehensiveness": class_comprehensiveness(p_hat, p_top, threshold),
    }


def sweep_fractions(n_features: int) -> List[float]:
    """Exact ratios j/Q for j = 1..Q-1."""
    return [j / n_features for j in range(1, n_features)]


def comprehensiveness_sweep(model: Model, batch, attr: Optional[AttributionMatrix] = None,
                            fractions: Optional[Sequence[float]] = None,
                            ig_steps: int = 50, threshold: float = 0.5) -> List[Tuple[float, float]]:
    """(p_percent, comprehensiveness) with the top ``p`` share of features removed."""
    X = np.asarray(batch, dtype=float)
    if attr is None:
        attr = attribution_matrix(model, X, steps=ig_steps)
    if fractions is None:
        fractions = sweep_fractions(X.shape[1])
    p_hat = forward_batch(model, X)
    rows = []
    for fraction in fractions:
        plan = select_mask(attr, fraction=fraction, most_important=True)
        score = class_comprehensiveness(p_hat, masked_predictions(model, apply_mask(X, plan)), threshold)
        rows.append((round(100.0 * fraction, 1), score))
    return rows
