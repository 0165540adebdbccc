"""Synchronous per-slice FedAvg over the K x N client grid.

Every round broadcasts the slice's global model, runs ``local_train`` on
each client (concurrently, capped by ``threads``), aggregates with
weights proportional to local training-set size and evaluates the new
global models on the pooled slice data.  Each variant gets its own
directory of artifacts.
"""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import artifacts
from .config import VARIANTS, ExperimentConfig
from .datagen import DatasetGrid, LocalDataset
from .egl import comprehensiveness_sweep, faithfulness_scores
from .errors import ArchitectureMismatchError, ClientTrainingError, ConfigError
from .explain import AttributionMatrix, attribution_matrix
from .fairness import LocalTrainConfig, TrainLog, local_train, recall
from .model import Model, bce_loss, forward_batch, oracle_self_test, weighted_average
from .slices import FEATURE_NAMES, SLICE_ORDER, profile_for

log = logging.getLogger(__name__)

# independent rng streams derived from the experiment seed
SPLIT_STREAM = 1
INIT_STREAM = 2

ROUND_REPORT_HEADER = (
    "round", "slice", "n", "loss", "normalized_loss", "train_recall", "test_recall",
    "test_js", "test_comprehensiveness", "test_total_variation", "weight_sum", "weights",
)

# split the masking sweep and the faithfulness figure are computed on
FAITHFULNESS_SPLIT = "test"


@dataclass(frozen=True, eq=False)
class Client:
    k: int
    n: int
    train: LocalDataset
    test: LocalDataset

    @property
    def size(self) -> int:
        return self.train.size


@dataclass(frozen=True, eq=False)
class SlicePool:
    """All clients of one slice stacked together, for global-model evaluation."""

    train: LocalDataset
    test: LocalDataset

    @classmethod
    def of(cls, clients: Sequence[Client]) -> "SlicePool":
        def stack(parts: Sequence[LocalDataset]) -> LocalDataset:
            return LocalDataset(np.vstack([p.features for p in parts]),
                                np.concatenate([p.labels for p in parts]))
        return cls(stack([c.train for c in clients]), stack([c.test for c in clients]))


@dataclass
class SliceStats:
    n: int
    kind: str
    loss: float
    train_recall: float
    test_recall: float
    test_js: float
    test_comprehensiveness: float
    test_total_variation: float
    weights: List[float]
    normalized_loss: Optional[float] = None


@dataclass
class RoundReport:
    t: int
    slices: List[SliceStats]

    def rows(self):
        for s in self.slices:
            yield (self.t, s.kind, s.n, s.loss, s.normalized_loss, s.train_recall, s.test_recall,
                   s.test_js, s.test_comprehensiveness, s.test_total_variation, sum(s.weights),
                   ";".join(repr(w) for w in s.weights))


@dataclass
class RoundResult:
    models: List[Model]
    report: RoundReport
    logs: Dict[Tuple[int, int], TrainLog]


@dataclass
class VariantResult:
    variant: str
    models: List[Model]
    rounds: List[RoundReport] = field(default_factory=list)
    trainlog: List[Dict] = field(default_factory=list)
    attributions: List[AttributionMatrix] = field(default_factory=list)
    predictions: List[np.ndarray] = field(default_factory=list)
    inputs: List[np.ndarray] = field(default_factory=list)   # tester batch in physical units
    metrics: Dict = field(default_factory=dict)


def aggregate(models: Sequence[Model], sizes: Sequence[float]) -> Model:
    """FedAvg: parameter-wise mean weighted by local dataset size."""
    sizes = np.asarray(sizes, dtype=float)
    if len(models) != sizes.size or sizes.size == 0:
        raise ArchitectureMismatchError(f"{len(models)} models but {sizes.size} dataset sizes")
    if np.any(sizes <= 0):
        raise ValueError(f"dataset sizes must be positive, got {sizes.tolist()}")
    return weighted_average(models, (sizes / sizes.sum()).tolist())


def aggregation_weights(sizes: Sequence[float]) -> List[float]:
    sizes = np.asarray(sizes, dtype=float)
    return (sizes / sizes.sum()).tolist()


def prepare_clients(grid: DatasetGrid, test_fraction: float, seed: int) -> List[List[Client]]:
    """Standardised train/test splits, ``clients[n][k]``."""
    clients = []
    for n in range(grid.N):
        row = []
        for k in range(grid.K):
            rng = np.random.default_rng([seed, n, k, SPLIT_STREAM])
            train, test = grid.standardized(k, n).split(test_fraction, rng)
            row.append(Client(k, n, train, test))
        clients.append(row)
    return clients


def initial_models(cfg: ExperimentConfig) -> List[Model]:
    """One seeded starting model per slice, shared by every variant."""
    return [Model.initialize(cfg.layer_dims, np.random.default_rng([cfg.seed, n, INIT_STREAM]), mu=cfg.mu)
            for n in range(cfg.N)]


def _train_client(model: Model, client: Client, cfg: LocalTrainConfig) -> Tuple[Model, TrainLog]:
    try:
        return local_train(model, client.train, cfg, tester=client.test.features,
                           name=f"client (k={client.k}, {profile_for(client.n).kind})")
    except Exception as e:
        raise ClientTrainingError(client.k, client.n, e) from e


def pooled_loss(model: Model, data: LocalDataset) -> float:
    """Size-weighted mean of the clients' training BCE, i.e. the pooled mean."""
    return float(np.mean(bce_loss(data.labels, forward_batch(model, data.features))))


def evaluate_slice(model: Model, pool: SlicePool, threshold: float, ig_steps: int,
                   attr: Optional[AttributionMatrix] = None) -> Dict[str, float]:
    """Global-model metrics: train loss, recall on both splits and test-split faithfulness."""
    scores = faithfulness_scores(model, pool.test.features, attr, threshold, ig_steps)
    return {
        "loss": pooled_loss(model, pool.train),
        "train_recall": recall(pool.train.labels, forward_batch(model, pool.train.features), threshold),
        "test_recall": recall(pool.test.labels, forward_batch(model, pool.test.features), threshold),
        **{f"test_{key}": value for key, value in scores.items()},
    }


def run_round(global_models: Sequence[Model], clients: Sequence[Sequence[Client]],
              local_configs: Sequence[LocalTrainConfig], t: int = 0, threads: int = 1,
              pools: Optional[Sequence[SlicePool]] = None) -> RoundResult:
    """Broadcast, train every client, aggregate per slice and report."""
    if len(global_models) != len(clients) or len(local_configs) != len(clients):
        raise ValueError("need one global model and one local config per slice")
    jobs = [(n, client) for n, row in enumerate(clients) for client in row]
    if threads > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            futures = [pool.submit(_train_client, global_models[n], c, local_configs[n]) for n, c in jobs]
            outcomes = [f.result() for f in futures]
    else:
        outcomes = [_train_client(global_models[n], c, local_configs[n]) for n, c in jobs]

    trained: Dict[Tuple[int, int], Tuple[Model, TrainLog]] = {
        (c.k, n): outcome for (n, c), outcome in zip(jobs, outcomes)
    }
    if pools is None:
        pools = [SlicePool.of(row) for row in clients]
    new_models, stats = [], []
    for n, row in enumerate(clients):
        sizes = [c.size for c in row]
        merged = aggregate([trained[(c.k, n)][0] for c in row], sizes)
        new_models.append(merged)
        cfg = local_configs[n]
        metrics = evaluate_slice(merged, pools[n], cfg.threshold, cfg.ig_steps)
        stats.append(SliceStats(n=n, kind=profile_for(n).kind, weights=aggregation_weights(sizes), **metrics))
    logs = {(k, n): outcome[1] for (k, n), outcome in trained.items()}
    return RoundResult(new_models, RoundReport(t, stats), logs)


def _normalize(rounds: Sequence[RoundReport], initial_losses: Sequence[float]) -> None:
    for n, initial in enumerate(initial_losses):
        scale = max(initial, rounds[0].slices[n].loss)
        for report in rounds:
            stats = report.slices[n]
            value = stats.loss / scale
            if value > 1.0:
                log.warning("normalized loss %.4f for slice %s in round %d exceeds 1; clipped",
                            value, stats.kind, report.t)
                value = 1.0
            stats.normalized_loss = value


def run_variant(cfg: ExperimentConfig, variant: str, clients: Sequence[Sequence[Client]],
                starting: Sequence[Model], oracle_delta: float, threads: Optional[int] = None,
                pools: Optional[Sequence[SlicePool]] = None) -> VariantResult:
    local_configs = [cfg.local_config(variant, n) for n in range(cfg.N)]
    pools = pools or [SlicePool.of(row) for row in clients]
    threads = cfg.threads if threads is None else threads
    initial_losses = [pooled_loss(m, pools[n].train) for n, m in enumerate(starting)]

    result = VariantResult(variant, list(starting))
    grad_norm_max = [[0.0] * len(row) for row in clients]
    for t in range(cfg.T):
        outcome = run_round(result.models, clients, local_configs, t, threads, pools)
        result.models = outcome.models
        result.rounds.append(outcome.report)
        for (k, n), train_log in sorted(outcome.logs.items(), key=lambda item: (item[0][1], item[0][0])):
            result.trainlog.extend(train_log.to_records(
                variant=variant, round=t, slice=profile_for(n).kind, n=n, k=k))
            grad_norm_max[n][k] = max(grad_norm_max[n][k], train_log.grad_norm_max)
        log.info("%s round %d/%d: %s", variant, t + 1, cfg.T, ", ".join(
            f"{s.kind} loss={s.loss:.4f} recall={s.test_recall:.3f}" for s in outcome.report.slices))
    _normalize(result.rounds, initial_losses)

    variant_spec = VARIANTS[variant]
    slices = []
    for n, model in enumerate(result.models):
        X = pools[n].test.features
        attr = attribution_matrix(model, X, steps=cfg.ig_steps)
        result.attributions.append(attr)
        result.predictions.append(forward_batch(model, X))
        final = evaluate_slice(model, pools[n], cfg.threshold, cfg.ig_steps, attr)
        train_scores = faithfulness_scores(model, pools[n].train.features, threshold=cfg.threshold,
                                           ig_steps=cfg.ig_steps)
        sweep = comprehensiveness_sweep(model, X, attr, threshold=cfg.threshold)
        slices.append({
            "n": n,
            "kind": profile_for(n).kind,
            "gamma": cfg.gamma[n],
            **final,
            **{f"train_{key}": value for key, value in train_scores.items()},
            "feasible": final["test_recall"] >= cfg.gamma[n],
            "sweep": [{"p_percent": p, "comprehensiveness": score} for p, score in sweep],
            "client_sizes": [c.size for c in clients[n]],
            "grad_norm_max": grad_norm_max[n],
        })
    result.metrics = {
        "variant": variant,
        "divergence": variant_spec.divergence.value,
        "constrained": variant_spec.constrained,
        "R_lambda": local_configs[0].R_lambda,
        "T": cfg.T,
        "L": cfg.L,
        "oracle_delta": oracle_delta,
        "faithfulness_split": FAITHFULNESS_SPLIT,
        "slices": slices,
    }
    return result


def check_grid(cfg: ExperimentConfig, grid: DatasetGrid) -> None:
    for key in ("K", "N", "D"):
        expected, found = getattr(cfg, key), getattr(grid, key)
        if expected != found:
            raise ConfigError(key, f"config asks for {expected} but the dataset has {found}")


def run_experiment(cfg: ExperimentConfig, grid: DatasetGrid, out_dir: Optional[Path] = None,
                   threads: Optional[int] = None) -> Dict[str, VariantResult]:
    """Run every configured variant on the same clients and starting models."""
    check_grid(cfg, grid)
    clients = prepare_clients(grid, cfg.test_fraction, cfg.seed)
    pools = [SlicePool.of(row) for row in clients]
    starting = initial_models(cfg)
    oracle_delta = oracle_self_test(cfg.oracle_steps, cfg.oracle_lr)
    log.info("oracle self-test gap (delta) = %.6g", oracle_delta)
    results = {}
    for variant in cfg.variants:
        log.info("running %s: K=%d N=%d T=%d L=%d", variant, cfg.K, cfg.N, cfg.T, cfg.L)
        results[variant] = run_variant(cfg, variant, clients, starting, oracle_delta, threads, pools)
        results[variant].inputs = [grid.standardizers[n].inverse(pool.test.features)
                                   for n, pool in enumerate(pools)]
        if out_dir is not None:
            write_variant(Path(out_dir) / variant, results[variant])
    return results


def model_filename(n: int) -> str:
    return f"slice_{profile_for(n).kind}.json"


def attribution_filename(n: int) -> str:
    return f"attributions_{profile_for(n).kind}.csv"


def write_variant(out_dir: Path, result: VariantResult) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    artifacts.write_csv(out_dir / "round_reports.csv", ROUND_REPORT_HEADER,
                        (row for report in result.rounds for row in report.rows()))
    artifacts.write_jsonl(out_dir / "trainlogs.jsonl", result.trainlog)
    for n, model in enumerate(result.models):
        path = out_dir / "models" / model_filename(n)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(model.to_json() + "\n", encoding="utf-8")
    for n, attr in enumerate(result.attributions):
        inputs = result.inputs[n] if result.inputs else None
        attr.to_csv(out_dir / attribution_filename(n), FEATURE_NAMES, result.predictions[n], inputs)
    artifacts.write_json(out_dir / "metrics.json", result.metrics)
    return out_dir


def load_models(variant_dir: Path) -> List[Model]:
    """Final global models of a written variant, in slice order."""
    models = []
    for n in range(len(SLICE_ORDER)):
        path = Path(variant_dir) / "models" / model_filename(n)
        if not path.is_file():
            break
        models.append(Model.from_json(path.read_text(encoding="utf-8")))
    return models
