"""Shallow feedforward drop classifier with hand-written backpropagation.

The network is a stack of affine layers with rectifier hidden units and a
logistic output ``S_mu(z) = 1 / (1 + exp(-mu z))``.  Gradients are
computed analytically both with respect to the parameters (for the
local optimisation oracle) and with respect to the inputs (for
integrated-gradients attribution).
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from scipy.special import expit

from .errors import (
    ArchitectureMismatchError,
    InputShapeError,
    NumericOverflowError,
    OracleDivergenceError,
)

log = logging.getLogger(__name__)

PROB_EPS = 1e-7
DEFAULT_HIDDEN = (16, 8)
DIVERGENCE_LIMIT = 1e6
MONOTONE_TARGET = 0.9
OUTPUT_ACTIVATIONS = ("logistic", "identity")


def clamp_probs(p: np.ndarray) -> np.ndarray:
    return np.clip(p, PROB_EPS, 1.0 - PROB_EPS)


def _frozen(a) -> np.ndarray:
    arr = np.array(a, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Model:
    """Immutable parameter snapshot; training always produces new instances.

    ``weights[i]`` has shape ``(layer_dims[i + 1], layer_dims[i])``.  The
    ``identity`` output activation exists for attribution checks on purely
    linear models; trained classifiers always use ``logistic``.
    """

    layer_dims: Tuple[int, ...]
    weights: Tuple[np.ndarray, ...]
    biases: Tuple[np.ndarray, ...]
    mu: float = 1.0
    output_activation: str = "logistic"

    def __post_init__(self):
        dims = tuple(int(d) for d in self.layer_dims)
        if len(dims) < 2 or any(d < 1 for d in dims) or dims[-1] != 1:
            raise ArchitectureMismatchError(f"invalid layer_dims {dims}: need >= 2 positive sizes ending in 1")
        if len(self.weights) != len(dims) - 1 or len(self.biases) != len(dims) - 1:
            raise ArchitectureMismatchError(f"expected {len(dims) - 1} layers of parameters")
        weights = tuple(_frozen(w) for w in self.weights)
        biases = tuple(_frozen(b) for b in self.biases)
        for i, (w, b) in enumerate(zip(weights, biases)):
            if w.shape != (dims[i + 1], dims[i]) or b.shape != (dims[i + 1],):
                raise ArchitectureMismatchError(
                    f"layer {i}: got weight {w.shape} / bias {b.shape} for dims {dims[i]}->{dims[i + 1]}"
                )
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise NumericOverflowError(i, "non-finite parameter")
        if not (math.isfinite(self.mu) and self.mu > 0):
            raise ValueError(f"steepness mu must be positive and finite, got {self.mu}")
        if self.output_activation not in OUTPUT_ACTIVATIONS:
            raise ValueError(f"unknown output activation: {self.output_activation}")
        object.__setattr__(self, "layer_dims", dims)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "biases", biases)
        object.__setattr__(self, "mu", float(self.mu))

    @classmethod
    def initialize(cls, layer_dims: Sequence[int], rng: np.random.Generator,
                   mu: float = 1.0, output_activation: str = "logistic") -> "Model":
        """Uniform fan-in initialisation in [-1/sqrt(fan_in), 1/sqrt(fan_in)]."""
        dims = tuple(int(d) for d in layer_dims)
        weights, biases = [], []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            bound = 1.0 / math.sqrt(fan_in)
            weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
            biases.append(rng.uniform(-bound, bound, size=fan_out))
        return cls(dims, tuple(weights), tuple(biases), mu, output_activation)

    @classmethod
    def zeros(cls, layer_dims: Sequence[int], mu: float = 1.0, output_activation: str = "logistic") -> "Model":
        dims = tuple(int(d) for d in layer_dims)
        weights = tuple(np.zeros((o, i)) for i, o in zip(dims[:-1], dims[1:]))
        biases = tuple(np.zeros(o) for o in dims[1:])
        return cls(dims, weights, biases, mu, output_activation)

    @property
    def n_features(self) -> int:
        return self.layer_dims[0]

    def same_architecture(self, other: "Model") -> bool:
        return (self.layer_dims == other.layer_dims and self.mu == other.mu
                and self.output_activation == other.output_activation)

    def replace(self, weights: Sequence[np.ndarray], biases: Sequence[np.ndarray]) -> "Model":
        return Model(self.layer_dims, tuple(weights), tuple(biases), self.mu, self.output_activation)

    def descend(self, grad: "Gradient", lr: float) -> "Model":
        return self.replace(
            [w - lr * g for w, g in zip(self.weights, grad.weights)],
            [b - lr * g for b, g in zip(self.biases, grad.biases)],
        )

    def flat(self) -> np.ndarray:
        """Parameters as one vector, layer by layer (weights row-major, then bias)."""
        parts: List[np.ndarray] = []
        for w, b in zip(self.weights, self.biases):
            parts.extend([w.ravel(), b])
        return np.concatenate(parts)

    def with_flat(self, vector: np.ndarray) -> "Model":
        vector = np.asarray(vector, dtype=float)
        weights, biases, offset = [], [], 0
        for w, b in zip(self.weights, self.biases):
            weights.append(vector[offset:offset + w.size].reshape(w.shape))
            offset += w.size
            biases.append(vector[offset:offset + b.size])
            offset += b.size
        if offset != vector.size:
            raise ArchitectureMismatchError(f"vector of {vector.size} entries does not fit {offset} parameters")
        return self.replace(weights, biases)

    def to_dict(self) -> Dict:
        return {
            "layer_dims": list(self.layer_dims),
            "weights": [w.ravel().tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
            "mu": self.mu,
            "output_activation": self.output_activation,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, raw: Dict) -> "Model":
        dims = tuple(int(d) for d in raw["layer_dims"])
        weights = tuple(np.array(w, dtype=float).reshape(o, i)
                        for w, i, o in zip(raw["weights"], dims[:-1], dims[1:]))
        biases = tuple(np.array(b, dtype=float) for b in raw["biases"])
        return cls(dims, weights, biases, raw.get("mu", 1.0), raw.get("output_activation", "logistic"))

    @classmethod
    def from_json(cls, text: str) -> "Model":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True, eq=False)
class Gradient:
    weights: Tuple[np.ndarray, ...]
    biases: Tuple[np.ndarray, ...]

    @classmethod
    def zeros_like(cls, model: Model) -> "Gradient":
        return cls(tuple(np.zeros_like(w) for w in model.weights),
                   tuple(np.zeros_like(b) for b in model.biases))

    @property
    def euclidean_norm(self) -> float:
        total = sum(float(np.sum(g * g)) for g in self.weights + self.biases)
        return math.sqrt(total)

    def flat(self) -> np.ndarray:
        parts: List[np.ndarray] = []
        for w, b in zip(self.weights, self.biases):
            parts.extend([w.ravel(), b])
        return np.concatenate(parts)

    def __add__(self, other: "Gradient") -> "Gradient":
        return Gradient(tuple(a + b for a, b in zip(self.weights, other.weights)),
                        tuple(a + b for a, b in zip(self.biases, other.biases)))

    def scaled(self, factor: float) -> "Gradient":
        return Gradient(tuple(factor * w for w in self.weights), tuple(factor * b for b in self.biases))


class _Cache(NamedTuple):
    activations: List[np.ndarray]
    pre_activations: List[np.ndarray]
    output: np.ndarray


def _as_batch(model: Model, X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != model.n_features:
        raise InputShapeError(f"expected a batch of shape (D, {model.n_features}), got {X.shape}")
    if not np.all(np.isfinite(X)):
        raise InputShapeError("input contains non-finite entries")
    return X


def _as_vector(model: Model, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.shape[0] != model.n_features:
        raise InputShapeError(f"expected {model.n_features} features, got shape {x.shape}")
    return x


def _forward(model: Model, X: np.ndarray) -> _Cache:
    activations, pre = [X], []
    a = X
    last = len(model.weights) - 1
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = a @ w.T + b
        if not np.all(np.isfinite(z)):
            raise NumericOverflowError(i)
        pre.append(z)
        if i < last:
            a = np.maximum(z, 0.0)
            activations.append(a)
    z_out = pre[-1][:, 0]
    if model.output_activation == "logistic":
        out = expit(model.mu * z_out)
    else:
        out = z_out
    return _Cache(activations, pre, out)


def _backward(model: Model, cache: _Cache, d_out: np.ndarray) -> Tuple[Gradient, np.ndarray]:
    """Chain ``dL/d output`` back to parameter and input gradients."""
    if model.output_activation == "logistic":
        p = cache.output
        dz = (d_out * model.mu * p * (1.0 - p))[:, None]
    else:
        dz = d_out[:, None]
    n_layers = len(model.weights)
    d_weights: List[np.ndarray] = [None] * n_layers
    d_biases: List[np.ndarray] = [None] * n_layers
    for i in reversed(range(n_layers)):
        d_weights[i] = dz.T @ cache.activations[i]
        d_biases[i] = dz.sum(axis=0)
        da = dz @ model.weights[i]
        if i > 0:
            dz = da * (cache.pre_activations[i - 1] > 0)
    return Gradient(tuple(d_weights), tuple(d_biases)), da


def forward(model: Model, x) -> float:
    """Predicted drop probability for one feature vector."""
    return float(_forward(model, _as_batch(model, _as_vector(model, x)[None, :])).output[0])


def forward_batch(model: Model, X) -> np.ndarray:
    return _forward(model, _as_batch(model, X)).output


def grad_input(model: Model, x) -> np.ndarray:
    return grad_input_batch(model, _as_vector(model, x)[None, :])[0]


def grad_input_batch(model: Model, X) -> np.ndarray:
    """Row i holds d forward(X[i]) / d X[i]."""
    X = _as_batch(model, X)
    cache = _forward(model, X)
    _, dx = _backward(model, cache, np.ones(X.shape[0]))
    return dx


def bce_loss(y, p):
    """Binary cross-entropy on clamped probabilities; vectorises over arrays."""
    p = clamp_probs(np.asarray(p, dtype=float))
    y = np.asarray(y, dtype=float)
    loss = -(y * np.log(p) + (1.0 - y) * np.log1p(-p))
    return float(loss) if loss.ndim == 0 else loss


# --- composite objectives -------------------------------------------------

class Outputs(NamedTuple):
    """Predictions an objective term may depend on.

    ``probs`` are on the training rows; ``tester`` / ``tester_masked`` are the
    tester batch before and after masking (``None`` when no term needs them).
    """

    labels: np.ndarray
    probs: np.ndarray
    tester: Optional[np.ndarray]
    tester_masked: Optional[np.ndarray]


class TermGrad(NamedTuple):
    probs: Optional[np.ndarray] = None
    tester: Optional[np.ndarray] = None
    tester_masked: Optional[np.ndarray] = None


class BinaryCrossEntropy:
    needs_tester = False

    def __init__(self, coef: float = 1.0):
        self.coef = float(coef)

    def value(self, out: Outputs) -> float:
        return float(np.mean(bce_loss(out.labels, out.probs)))

    def grad(self, out: Outputs) -> TermGrad:
        p, y = out.probs, out.labels
        inside = (p > PROB_EPS) & (p < 1.0 - PROB_EPS)
        safe = clamp_probs(p)
        dp = np.where(inside, (safe - y) / (safe * (1.0 - safe)), 0.0) / p.size
        return TermGrad(probs=dp)


@dataclass(frozen=True, eq=False)
class Objective:
    """Weighted sum of terms evaluated on one fixed training batch.

    Masked tester inputs are frozen: gradients flow through both forward
    passes but the mask itself is not differentiated.
    """

    features: np.ndarray
    labels: np.ndarray
    terms: Tuple = ()
    tester: Optional[np.ndarray] = None
    tester_masked: Optional[np.ndarray] = None

    def __post_init__(self):
        for term in self.terms:
            if not math.isfinite(term.coef):
                raise ValueError(f"{type(term).__name__} has non-finite coefficient {term.coef}")
        if self.needs_tester and (self.tester is None or self.tester_masked is None):
            raise ValueError("objective has a divergence term but no tester batch")
        if self.needs_tester and np.shape(self.tester) != np.shape(self.tester_masked):
            raise InputShapeError("tester and masked tester batches differ in shape")

    @property
    def needs_tester(self) -> bool:
        return any(term.needs_tester for term in self.terms)


def _evaluate(model: Model, objective: Objective, with_grad: bool) -> Tuple[float, Optional[Gradient]]:
    main = _forward(model, _as_batch(model, objective.features))
    tester = masked = None
    if objective.needs_tester:
        tester = _forward(model, _as_batch(model, objective.tester))
        masked = _forward(model, _as_batch(model, objective.tester_masked))
    out = Outputs(np.asarray(objective.labels, dtype=float), main.output,
                  tester.output if tester is not None else None,
                  masked.output if masked is not None else None)
    value = sum(term.coef * term.value(out) for term in objective.terms)
    if not with_grad:
        return float(value), None
    d_main = np.zeros_like(main.output)
    d_tester = np.zeros_like(tester.output) if tester is not None else None
    d_masked = np.zeros_like(masked.output) if masked is not None else None
    for term in objective.terms:
        g = term.grad(out)
        if g.probs is not None:
            d_main = d_main + term.coef * g.probs
        if g.tester is not None:
            d_tester = d_tester + term.coef * g.tester
        if g.tester_masked is not None:
            d_masked = d_masked + term.coef * g.tester_masked
    grad, _ = _backward(model, main, d_main)
    if tester is not None:
        grad = grad + _backward(model, tester, d_tester)[0]
        grad = grad + _backward(model, masked, d_masked)[0]
    for i, (w, b) in enumerate(zip(grad.weights, grad.biases)):
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise NumericOverflowError(i, "non-finite gradient")
    return float(value), grad


def objective_value(model: Model, objective: Objective) -> float:
    return _evaluate(model, objective, with_grad=False)[0]


def grad_weights(model: Model, objective: Objective) -> Gradient:
    return _evaluate(model, objective, with_grad=True)[1]


# --- optimisation oracle ---------------------------------------------------

@dataclass
class OracleResult:
    model: Model
    losses: List[float]
    max_grad_norm: float
    monotone_fraction: float

    @property
    def monotone(self) -> bool:
        return self.monotone_fraction >= MONOTONE_TARGET


def run_oracle(model: Model, objective: Objective, steps: int, lr: float) -> OracleResult:
    """Fixed-step gradient descent standing in for the delta-approximate oracle."""
    if steps < 1:
        raise ValueError(f"oracle steps must be >= 1, got {steps}")
    if not lr > 0:
        raise ValueError(f"oracle learning rate must be positive, got {lr}")
    current = model
    losses: List[float] = []
    max_norm = 0.0
    for step in range(steps):
        value, grad = _evaluate(current, objective, with_grad=True)
        losses.append(value)
        max_norm = max(max_norm, grad.euclidean_norm)
        current = current.descend(grad, lr)
    final = objective_value(current, objective)
    if not math.isfinite(final) or final > DIVERGENCE_LIMIT:
        raise OracleDivergenceError(f"objective reached {final!r} after {steps} steps (lr={lr})")
    losses.append(final)
    monotone = sum(b <= a for a, b in zip(losses, losses[1:])) / steps
    log.debug("oracle: %d steps, loss %.6f -> %.6f, non-increasing in %.0f%% of steps",
              steps, losses[0], final, 100 * monotone)
    return OracleResult(current, losses, max_norm, monotone)


def oracle_minimize(model: Model, objective: Objective, steps: int, lr: float) -> Model:
    return run_oracle(model, objective, steps, lr).model


def weighted_average(models: Sequence[Model], weights: Sequence[float]) -> Model:
    """Parameter-wise sum of ``weights[i] * models[i]``."""
    if not models or len(models) != len(weights):
        raise ArchitectureMismatchError("need one weight per model and at least one model")
    first = models[0]
    for other in models[1:]:
        if not first.same_architecture(other):
            raise ArchitectureMismatchError(f"cannot combine {first.layer_dims} with {other.layer_dims}")
    layers = range(len(first.weights))
    new_w = [sum(c * m.weights[i] for c, m in zip(weights, models)) for i in layers]
    new_b = [sum(c * m.biases[i] for c, m in zip(weights, models)) for i in layers]
    return first.replace(new_w, new_b)


# Symmetric (x, y) <-> (-x, 1 - y) toy set: the convex optimum has zero bias.
_TOY_X = np.array([-2.0, -1.0, -0.5, 0.5, 1.0, 2.0])
_TOY_Y = np.array([0.0, 0.0, 1.0, 0.0, 1.0, 1.0])


def oracle_self_test(steps: int, lr: float, grid_points: int = 20001, grid_limit: float = 10.0) -> float:
    """Gap between the oracle and a dense grid search over the 1-D weight.

    This is the delta reported for the convergence bound.
    """
    objective = Objective(_TOY_X[:, None], _TOY_Y, (BinaryCrossEntropy(),))
    found = run_oracle(Model.zeros((1, 1)), objective, steps, lr)
    grid = np.linspace(-grid_limit, grid_limit, grid_points)
    probs = expit(grid[:, None] * _TOY_X[None, :])
    grid_losses = np.mean(bce_loss(_TOY_Y[None, :], probs), axis=1)
    return max(0.0, found.losses[-1] - float(grid_losses.min()))
