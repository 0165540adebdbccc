"""Recall constraint and the proxy-Lagrangian game played in each local epoch.

The weight player minimises ``BCE + divergence + lambda_eff * Psi`` where
``Psi = gamma - surrogate`` is the smooth recall surrogate in violation
form (positive when the constraint is violated).  The multiplier player
only sees the original, non-smooth violation ``Phi = gamma - recall`` and
performs exponentiated-gradient ascent on a column-stochastic matrix
whose stationary distribution gives the multipliers.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import List, NamedTuple, Optional

import numpy as np

from . import artifacts
from .egl import DivergenceKind, DivergenceTerm, apply_mask, divergence, select_mask
from .errors import MultiplierOverflowError, NonStochasticMatrixError, UndefinedRecallError
from .explain import attribution_matrix
from .model import (
    MONOTONE_TARGET,
    BinaryCrossEntropy,
    Model,
    Objective,
    Outputs,
    TermGrad,
    forward_batch,
    run_oracle,
    weighted_average,
)

log = logging.getLogger(__name__)

STOCHASTIC_TOL = 1e-9
POWER_TOL = 1e-12
POWER_MAX_ITER = 10_000


def _labels_probs(labels, probs):
    y = np.asarray(labels, dtype=float).reshape(-1)
    p = np.asarray(probs, dtype=float).reshape(-1)
    if y.shape != p.shape:
        raise ValueError(f"{y.size} labels but {p.size} predictions")
    positives = y.sum()
    if positives <= 0:
        raise UndefinedRecallError("recall is undefined without positive labels")
    return y, p, positives


def recall(labels, probs, threshold: float = 0.5) -> float:
    y, p, positives = _labels_probs(labels, probs)
    return float(np.sum(y * (p >= threshold)) / positives)


class Surrogate(NamedTuple):
    value: float   # s, smooth recall estimate
    psi: float     # gamma - s, positive when violated


def recall_surrogate(labels, probs, gamma: float) -> Surrogate:
    y, p, positives = _labels_probs(labels, probs)
    s = float(np.sum(y * np.minimum(p, 1.0)) / positives)
    return Surrogate(s, gamma - s)


def constraint_violation(labels, probs, gamma: float, threshold: float = 0.5) -> float:
    return gamma - recall(labels, probs, threshold)


class RecallSurrogateTerm:
    """``Psi = gamma - surrogate`` on the training rows."""

    needs_tester = False

    def __init__(self, gamma: float, coef: float):
        self.gamma = float(gamma)
        self.coef = float(coef)

    def value(self, out: Outputs) -> float:
        return recall_surrogate(out.labels, out.probs, self.gamma).psi

    def grad(self, out: Outputs) -> TermGrad:
        y, p = out.labels, out.probs
        return TermGrad(probs=-(y * (p < 1.0)) / y.sum())


# --- multiplier player -----------------------------------------------------

def _check_stochastic(A: np.ndarray) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise NonStochasticMatrixError(f"expected a square matrix, got shape {A.shape}")
    if not np.all(np.isfinite(A)) or np.any(A < 0):
        raise NonStochasticMatrixError("matrix entries must be finite and non-negative")
    sums = A.sum(axis=0)
    if np.any(np.abs(sums - 1.0) > STOCHASTIC_TOL):
        raise NonStochasticMatrixError(f"column sums {sums.tolist()} are not 1")
    return A


def lambda_from_matrix(A) -> np.ndarray:
    """Stationary distribution of a column-stochastic matrix by power iteration from uniform."""
    A = _check_stochastic(A)
    v = np.full(A.shape[0], 1.0 / A.shape[0])
    for _ in range(POWER_MAX_ITER):
        nxt = A @ v
        nxt = nxt / nxt.sum()
        if np.max(np.abs(nxt - v)) < POWER_TOL:
            v = nxt
            break
        v = nxt
    return np.clip(v, 0.0, None) / np.clip(v, 0.0, None).sum()


def lambda_gradient(violations) -> np.ndarray:
    """Gradient of ``sum_m lambda_m Phi_m`` w.r.t. lambda; the objective row gets 0."""
    return np.concatenate([[0.0], np.atleast_1d(np.asarray(violations, dtype=float))])


def update_matrix(A, grad_lambda, eta: float) -> np.ndarray:
    """Row-wise exponentiated-gradient step followed by column normalisation."""
    A = np.asarray(A, dtype=float)
    grad_lambda = np.asarray(grad_lambda, dtype=float)
    if grad_lambda.shape != (A.shape[0],):
        raise ValueError(f"gradient of length {grad_lambda.size} does not fit {A.shape} matrix")
    if not eta > 0:
        raise ValueError(f"eta must be positive, got {eta}")
    scaled = A * np.exp(eta * grad_lambda)[:, None]
    updated = scaled / scaled.sum(axis=0, keepdims=True)
    if not np.all(np.isfinite(updated)):
        raise MultiplierOverflowError(f"multiplier matrix update overflowed (eta={eta})")
    return updated


@dataclass
class GameState:
    A: np.ndarray
    lam: np.ndarray
    R_lambda: float
    eta_lambda: float
    M: int = 1

    @classmethod
    def initial(cls, R_lambda: float, eta_lambda: float, M: int = 1) -> "GameState":
        A = np.full((M + 1, M + 1), 1.0 / (M + 1))
        return cls(A, lambda_from_matrix(A), R_lambda, eta_lambda, M)

    def multipliers(self) -> np.ndarray:
        """Constraint coordinates of lambda scaled into the R_lambda ball."""
        self.lam = lambda_from_matrix(self.A)
        return self.R_lambda * self.lam[1:] / self.lam.sum()

    def ascend(self, violations) -> None:
        self.A = update_matrix(self.A, lambda_gradient(violations), self.eta_lambda)


# --- local training --------------------------------------------------------

@dataclass(frozen=True)
class LocalTrainConfig:
    epochs: int = 10
    gamma: float = 0.85
    eta_lambda: float = 0.12
    R_lambda: float = 1e-5
    divergence: DivergenceKind = DivergenceKind.JS
    divergence_coef: float = 1.0
    oracle_steps: int = 20
    oracle_lr: float = 0.12
    ig_steps: int = 50
    threshold: float = 0.5

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if not 0 < self.gamma < 1:
            raise ValueError(f"gamma must be in (0, 1), got {self.gamma}")
        if self.R_lambda < 0 or self.eta_lambda <= 0:
            raise ValueError("R_lambda must be >= 0 and eta_lambda > 0")
        object.__setattr__(self, "divergence", DivergenceKind.parse(self.divergence))

    @property
    def explains(self) -> bool:
        return self.divergence is not DivergenceKind.NONE and self.divergence_coef != 0


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    js: Optional[float]
    recall: float
    psi: float
    phi: float
    lambda0: float
    lambda1: float
    grad_norm_max: float
    oracle_monotone: float


@dataclass
class TrainLog:
    records: List[EpochRecord] = field(default_factory=list)

    @property
    def grad_norm_max(self) -> float:
        return self.records[-1].grad_norm_max if self.records else 0.0

    @property
    def final(self) -> EpochRecord:
        return self.records[-1]

    def to_records(self, **tags) -> List[dict]:
        return [{**tags, **asdict(r)} for r in self.records]

    def write_jsonl(self, path, **tags):
        return artifacts.write_jsonl(path, self.to_records(**tags))


def build_objective(model: Model, features, labels, cfg: LocalTrainConfig, multiplier: float,
                    tester: Optional[np.ndarray] = None) -> Objective:
    """Assemble ``L_W`` for one epoch, freezing the mask chosen at the current weights.

    Terms with a zero coefficient are left out so that switching every extra
    term off yields exactly the plain cross-entropy objective.
    """
    terms = [BinaryCrossEntropy()]
    tester_masked = None
    if cfg.explains:
        attr = attribution_matrix(model, tester, steps=cfg.ig_steps)
        tester_masked = apply_mask(tester, select_mask(attr, count=1))
        terms.append(DivergenceTerm(cfg.divergence, cfg.divergence_coef))
    if multiplier != 0:
        terms.append(RecallSurrogateTerm(cfg.gamma, multiplier))
    return Objective(features, labels, tuple(terms),
                     tester if cfg.explains else None, tester_masked)


def local_train(model: Model, dataset, cfg: LocalTrainConfig, tester: Optional[np.ndarray] = None,
                name: str = "client"):
    """One client's L epochs of the explanation-guided constrained loop.

    ``tester`` is the batch used for attribution and the divergence
    term (defaults to the training features).  Returns the average of the
    epoch-end iterates and the per-epoch log.  Epochs whose oracle run was
    not mostly descending are reported in one warning naming ``name``.
    """
    features, labels = dataset.features, dataset.labels
    if labels.sum() <= 0:
        raise UndefinedRecallError("local dataset has no positive labels")
    tester = features if tester is None else np.asarray(tester, dtype=float)
    game = GameState.initial(cfg.R_lambda, cfg.eta_lambda)
    current = model
    iterates: List[Model] = []
    train_log = TrainLog()
    grad_norm_max = 0.0
    rough = []
    for epoch in range(cfg.epochs):
        multiplier = float(game.multipliers()[0])
        lam = game.lam.copy()
        objective = build_objective(current, features, labels, cfg, multiplier, tester)
        result = run_oracle(current, objective, cfg.oracle_steps, cfg.oracle_lr)
        current = result.model
        iterates.append(current)
        grad_norm_max = max(grad_norm_max, result.max_grad_norm)
        if not result.monotone:
            rough.append(epoch)

        probs = forward_batch(current, features)
        rec = recall(labels, probs, cfg.threshold)
        phi = cfg.gamma - rec
        game.ascend([phi])
        js = None
        if objective.needs_tester:
            js = divergence(cfg.divergence, forward_batch(current, objective.tester),
                            forward_batch(current, objective.tester_masked))
        record = EpochRecord(
            epoch=epoch,
            loss=result.losses[-1],
            js=js,
            recall=rec,
            psi=recall_surrogate(labels, probs, cfg.gamma).psi,
            phi=phi,
            lambda0=float(lam[0]),
            lambda1=float(lam[1]),
            grad_norm_max=grad_norm_max,
            oracle_monotone=result.monotone_fraction,
        )
        train_log.records.append(record)
        log.debug("epoch %d: loss=%.5f recall=%.3f phi=%+.3f lambda_eff=%.3g",
                  epoch, record.loss, record.recall, phi, multiplier)
    if rough:
        log.warning("%s: oracle objective rose in more than %.0f%% of steps in %d of %d epochs (lr=%g)",
                    name, 100 * (1 - MONOTONE_TARGET), len(rough), cfg.epochs, cfg.oracle_lr)
    averaged = weighted_average(iterates, [1.0 / len(iterates)] * len(iterates))
    return averaged, train_log
