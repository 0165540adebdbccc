"""Convergence-probability bound for the recall-constrained federated loop.

With ``q = exp(-(D_n eps)^2 / (2 C^2))`` and
``C = 2 R_lambda sum_k D_k B_k + D_n alpha`` the probability is

    Delta = 1 - nu / (1 + (nu - 1) q)

It is evaluated in the rearranged form ``(1 - nu)(1 - q) / (1 - (1 - nu) q)``,
which is exactly zero at ``eps = 0``.  ``alpha = delta + ln(1 - V^2/4)`` as
printed; the ``alt`` convention flips the sign of the log term.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import artifacts
from .config import VARIANT_ORDER
from .errors import BoundDomainError

log = logging.getLogger(__name__)

CONVENTIONS = ("printed", "alt")
SERIES_TOL = 1e-17
SERIES_MAX_TERMS = 10_000_000
BOUND_REPORT_HEADER = ("variant", "slice", "epsilon", "delta_printed", "delta_alt_sign",
                       "nu", "V", "B_max", "nu_flagged")


@dataclass(frozen=True)
class BoundInputs:
    nu: float
    epsilon: float
    R_lambda: float
    B: Tuple[float, ...]
    D: Tuple[float, ...]
    delta: float
    V: float

    def __post_init__(self):
        object.__setattr__(self, "B", tuple(float(b) for b in self.B))
        object.__setattr__(self, "D", tuple(float(d) for d in self.D))
        if not 0 < self.nu < 1:
            raise BoundDomainError(f"violation rate must lie in (0, 1), got {self.nu}")
        if not self.epsilon >= 0:
            raise BoundDomainError(f"epsilon must be >= 0, got {self.epsilon}")
        if self.R_lambda < 0 or self.delta < 0:
            raise BoundDomainError("R_lambda and delta must be non-negative")
        if not 0 <= self.V <= 1:
            raise BoundDomainError(f"total variation must lie in [0, 1], got {self.V}")
        if not self.D or len(self.B) != len(self.D):
            raise BoundDomainError(f"{len(self.B)} gradient bounds for {len(self.D)} dataset sizes")
        if any(d <= 0 for d in self.D) or any(b < 0 for b in self.B):
            raise BoundDomainError("dataset sizes must be positive and gradient bounds non-negative")

    @property
    def D_n(self) -> float:
        return float(sum(self.D))

    def at(self, epsilon: float) -> "BoundInputs":
        return replace(self, epsilon=float(epsilon))


def js_lower_bound(V: float) -> float:
    """``-ln(1 - V^2/4)``, the floor of the Bernoulli JS divergence at total variation V."""
    if not 0 <= V <= 1:
        raise BoundDomainError(f"total variation must lie in [0, 1], got {V}")
    return -math.log1p(-V * V / 4.0)


def alpha(inputs: BoundInputs, convention: str = "printed") -> float:
    if convention not in CONVENTIONS:
        raise ValueError(f"unknown alpha convention {convention!r}; expected one of {CONVENTIONS}")
    log_term = math.log1p(-inputs.V ** 2 / 4.0)
    return inputs.delta + log_term if convention == "printed" else inputs.delta - log_term


def bound_constant(inputs: BoundInputs, convention: str = "printed") -> float:
    """``C = 2 R_lambda sum_k D_k B_k + D_n alpha``."""
    weighted = sum(d * b for d, b in zip(inputs.D, inputs.B))
    C = 2.0 * inputs.R_lambda * weighted + inputs.D_n * alpha(inputs, convention)
    if C == 0 or not math.isfinite(C):
        raise BoundDomainError(f"bound denominator is {C!r} ({convention} convention)")
    return C


def _decay(inputs: BoundInputs, convention: str) -> float:
    """Exponent ``(D_n eps)^2 / (2 C^2)``."""
    C = bound_constant(inputs, convention)
    return (inputs.D_n * inputs.epsilon) ** 2 / (2.0 * C * C)


def convergence_probability(inputs: BoundInputs, convention: str = "printed") -> float:
    x = _decay(inputs, convention)
    one_minus_q = -math.expm1(-x)
    q = math.exp(-x)
    nu = inputs.nu
    value = (1.0 - nu) * one_minus_q / (1.0 - (1.0 - nu) * q)
    if not 0.0 <= value <= 1.0:
        raise BoundDomainError(f"convergence probability {value!r} outside [0, 1]")
    return value


def series_probability(inputs: BoundInputs, convention: str = "printed", tol: float = SERIES_TOL) -> float:
    """Geometric failure model summed term by term.

    ``sum_tau nu (1 - nu)^tau (1 - q^tau)``, truncated once the remaining
    mass ``nu (1 - nu)^tau`` falls below ``tol``.
    """
    x = _decay(inputs, convention)
    nu = inputs.nu
    n_terms = min(SERIES_MAX_TERMS, int(math.ceil(math.log(tol / nu) / math.log1p(-nu))) + 1)
    tau = np.arange(max(n_terms, 1), dtype=float)
    terms = nu * np.exp(tau * math.log1p(-nu)) * -np.expm1(-tau * x)
    return float(np.sum(terms))


def delta_curve(inputs: BoundInputs, epsilons: Sequence[float], convention: str = "printed") -> List[float]:
    return [convergence_probability(inputs.at(e), convention) for e in epsilons]


# --- estimates from a finished run ------------------------------------------

@dataclass(frozen=True)
class Estimate:
    kind: str
    inputs: BoundInputs
    violating_rounds: int
    rounds: int
    nu_flagged: bool

    @property
    def B_max(self) -> float:
        return max(self.inputs.B)


def violation_rate(violating: int, rounds: int) -> Tuple[float, bool]:
    """Empirical nu kept inside (0, 1) by a 1/(T+1) floor and T/(T+1) ceiling."""
    if rounds < 1:
        raise BoundDomainError("no rounds to estimate a violation rate from")
    if violating <= 0:
        return 1.0 / (rounds + 1), True
    if violating >= rounds:
        return rounds / (rounds + 1), True
    return violating / rounds, False


def count_violations(records: Sequence[Dict], n: int) -> Tuple[int, int]:
    """(violating rounds, rounds) for slice ``n``; a round violates when the
    clients' mean final-epoch Phi is positive."""
    final: Dict[Tuple[int, int], Dict] = {}
    for rec in records:
        if rec["n"] != n:
            continue
        key = (rec["round"], rec["k"])
        if key not in final or rec["epoch"] > final[key]["epoch"]:
            final[key] = rec
    if not final:
        raise BoundDomainError(f"no training records for slice {n}")
    by_round: Dict[int, List[float]] = {}
    for (t, _), rec in final.items():
        by_round.setdefault(t, []).append(rec["phi"])
    violating = sum(1 for phis in by_round.values() if np.mean(phis) > 0)
    return violating, len(by_round)


def empirical_estimates(variant_dir: Path, n: int, epsilon: float = 0.0,
                        records: Optional[Sequence[Dict]] = None) -> Estimate:
    variant_dir = Path(variant_dir)
    metrics = artifacts.read_json(variant_dir / "metrics.json")
    if records is None:
        records = artifacts.read_jsonl(variant_dir / "trainlogs.jsonl")
    if not records:
        raise BoundDomainError(f"empty training log in {variant_dir}")
    slice_metrics = next((s for s in metrics["slices"] if s["n"] == n), None)
    if slice_metrics is None:
        raise BoundDomainError(f"{variant_dir} has no metrics for slice {n}")
    violating, rounds = count_violations(records, n)
    nu, flagged = violation_rate(violating, rounds)
    if flagged:
        log.info("%s slice %s: %d of %d rounds violate; nu clamped to %.4f",
                 metrics["variant"], slice_metrics["kind"], violating, rounds, nu)
    inputs = BoundInputs(
        nu=nu,
        epsilon=epsilon,
        R_lambda=float(metrics["R_lambda"]),
        B=slice_metrics["grad_norm_max"],
        D=slice_metrics["client_sizes"],
        delta=float(metrics["oracle_delta"]),
        V=float(slice_metrics["test_total_variation"]),
    )
    return Estimate(slice_metrics["kind"], inputs, violating, rounds, flagged)


def variant_dirs(run_dir: Path) -> List[Path]:
    """Variant subdirectories of a run, known variants first."""
    run_dir = Path(run_dir)
    if not run_dir.is_dir():
        raise FileNotFoundError(f"run directory {run_dir} does not exist")
    found = {p.name: p for p in run_dir.iterdir() if (p / "metrics.json").is_file()}
    if not found:
        raise FileNotFoundError(f"no variant results under {run_dir}")
    order = [v for v in VARIANT_ORDER if v in found] + sorted(set(found) - set(VARIANT_ORDER))
    return [found[v] for v in order]


def bound_rows(run_dir: Path, epsilons: Sequence[float]):
    rows = []
    for vdir in variant_dirs(run_dir):
        records = artifacts.read_jsonl(vdir / "trainlogs.jsonl")
        metrics = artifacts.read_json(vdir / "metrics.json")
        for slice_metrics in metrics["slices"]:
            est = empirical_estimates(vdir, slice_metrics["n"], records=records)
            for eps in epsilons:
                point = est.inputs.at(eps)
                rows.append((vdir.name, est.kind, float(eps),
                             convergence_probability(point, "printed"),
                             convergence_probability(point, "alt"),
                             est.inputs.nu, est.inputs.V, est.B_max, est.nu_flagged))
    return rows


def write_bound_report(run_dir: Path, epsilons: Sequence[float], out: Optional[Path] = None) -> Path:
    out = Path(out) if out is not None else Path(run_dir) / "bound" / "bound_report.csv"
    return artifacts.write_csv(out, BOUND_REPORT_HEADER, bound_rows(run_dir, epsilons))
