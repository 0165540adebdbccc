"""Synthetic non-IID traffic-drop datasets, one per (BS, slice) pair.

Per sample ``i`` of client ``(k, n)``:

    demand   ~ Poisson(lambda_kn * (1 + 0.5 sin(2 pi i / D)))
    capacity = prb * log2(1 + 10^(snr/10)) * kappa_n
    latency  = base_n + coef_n * demand / capacity + N(0, (0.05 base_n)^2)
    drop     = demand > capacity * tau_n

``tau_n`` is calibrated by bisection on the pooled slice samples so the
slice hits its profile's target positive rate.  Features are z-scored
with per-slice statistics pooled over every BS.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Tuple

import numpy as np

from . import artifacts
from .errors import DataParseError, GenerationError
from .slices import FEATURE_NAMES, LABEL_NAME, SLICE_PROFILES, describe, profile_for

log = logging.getLogger(__name__)

MAX_ATTEMPTS = 100
BISECTION_STEPS = 200
LATENCY_NOISE_SHARE = 0.05
INTENSITY_SWING = 0.5
CSV_HEADER = FEATURE_NAMES + (LABEL_NAME,)
MANIFEST_KEYS = ("seed", "K", "N", "D", "slices")


@dataclass(frozen=True, eq=False)
class LocalDataset:
    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        X = np.array(self.features, dtype=float)
        y = np.array(self.labels, dtype=float).reshape(-1)
        if X.ndim != 2 or X.shape[0] < 1:
            raise ValueError(f"features must be a non-empty 2-D matrix, got shape {X.shape}")
        if y.shape[0] != X.shape[0]:
            raise ValueError(f"{X.shape[0]} feature rows but {y.shape[0]} labels")
        if not np.all(np.isfinite(X)):
            raise ValueError("features contain non-finite entries")
        if not np.all((y == 0.0) | (y == 1.0)):
            raise ValueError("labels must be 0 or 1")
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", y)

    @property
    def size(self) -> int:
        return self.features.shape[0]

    @property
    def positive_rate(self) -> float:
        return float(self.labels.mean())

    @property
    def has_both_classes(self) -> bool:
        return 0 < self.labels.sum() < self.size

    def subset(self, index: np.ndarray) -> "LocalDataset":
        return LocalDataset(self.features[index], self.labels[index])

    def split(self, test_fraction: float, rng: np.random.Generator) -> Tuple["LocalDataset", "LocalDataset"]:
        """Stratified train/test split; both sides keep a positive when there are two or more."""
        if not 0 < test_fraction < 1:
            raise ValueError(f"test fraction must be in (0, 1), got {test_fraction}")
        train_idx, test_idx = [], []
        for cls in (0.0, 1.0):
            idx = np.flatnonzero(self.labels == cls)
            idx = idx[rng.permutation(idx.size)]
            n_test = int(round(test_fraction * idx.size))
            if idx.size >= 2:
                n_test = min(max(n_test, 1), idx.size - 1)
            else:
                n_test = 0
            test_idx.append(idx[:n_test])
            train_idx.append(idx[n_test:])
        train = np.sort(np.concatenate(train_idx))
        test = np.sort(np.concatenate(test_idx))
        if test.size == 0:
            raise ValueError(f"dataset of {self.size} rows is too small to split")
        return self.subset(train), self.subset(test)


@dataclass(frozen=True, eq=False)
class Standardizer:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, X: np.ndarray) -> "Standardizer":
        std = X.std(axis=0)
        return cls(X.mean(axis=0), np.where(std > 0, std, 1.0))

    def transform(self, X: np.ndarray) -> np.ndarray:
        return (np.asarray(X, dtype=float) - self.mean) / self.std

    def inverse(self, Z: np.ndarray) -> np.ndarray:
        return np.asarray(Z, dtype=float) * self.std + self.mean

    def to_dict(self) -> Dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, raw: Dict) -> "Standardizer":
        return cls(np.array(raw["mean"], dtype=float), np.array(raw["std"], dtype=float))


@dataclass
class SliceCalibration:
    kind: str
    kappa: float
    tau: float
    positive_rate: float
    attempts: int

    def to_dict(self) -> Dict:
        return {"kind": self.kind, "kappa": self.kappa, "tau": self.tau,
                "positive_rate": self.positive_rate, "attempts": self.attempts}


@dataclass
class DatasetGrid:
    """K x N datasets in physical units plus per-slice standardisation."""

    seed: int
    K: int
    N: int
    D: int
    raw: Dict[Tuple[int, int], LocalDataset]
    standardizers: List[Standardizer]
    calibration: List[SliceCalibration] = field(default_factory=list)

    def keys(self) -> List[Tuple[int, int]]:
        return sorted(self.raw)

    def standardized(self, k: int, n: int) -> LocalDataset:
        ds = self.raw[(k, n)]
        return LocalDataset(self.standardizers[n].transform(ds.features), ds.labels)

    def slice_positive_rate(self, n: int) -> float:
        labels = np.concatenate([self.raw[(k, n)].labels for k in range(self.K)])
        return float(labels.mean())


def capacity(prb, snr_db, kappa: float):
    """Shannon-style slice capacity in the same units as demand."""
    return np.asarray(prb, dtype=float) * np.log2(1.0 + 10.0 ** (np.asarray(snr_db, dtype=float) / 10.0)) * kappa


def drop_label(demand, cap, tau: float) -> np.ndarray:
    return (np.asarray(demand, dtype=float) > np.asarray(cap, dtype=float) * tau).astype(float)


def calibrate_tau(load: np.ndarray, target_rate: float) -> float:
    """Bisection for the smallest tau whose drop rate does not exceed the target."""
    lo, hi = 0.0, float(load.max()) + 1.0
    for _ in range(BISECTION_STEPS):
        mid = 0.5 * (lo + hi)
        if np.mean(load > mid) > target_rate:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-12 * max(1.0, hi):
            break
    return hi


def _sample_client(rng: np.random.Generator, profile, D: int):
    intensity = rng.uniform(*profile.intensity)
    i = np.arange(D)
    demand = rng.poisson(intensity * (1.0 + INTENSITY_SWING * np.sin(2.0 * np.pi * i / D))).astype(float)
    prb = rng.uniform(*profile.prb, size=D)
    snr = rng.uniform(*profile.snr_db, size=D)
    cap = capacity(prb, snr, profile.kappa)
    noise = rng.normal(0.0, LATENCY_NOISE_SHARE * profile.latency_base_ms, size=D)
    latency = profile.latency_base_ms + profile.latency_coef_ms * demand / cap + noise
    return np.column_stack([prb, latency, snr]), demand, cap


def _generate_slice(seed: int, n: int, K: int, D: int):
    profile = profile_for(n)
    for attempt in range(MAX_ATTEMPTS):
        draws = [_sample_client(np.random.default_rng([seed, n, k, attempt]), profile, D) for k in range(K)]
        load = np.concatenate([demand / cap for _, demand, cap in draws])
        tau = calibrate_tau(load, profile.target_rate)
        datasets = [LocalDataset(X, drop_label(demand, cap, tau)) for X, demand, cap in draws]
        rate = float(np.mean(np.concatenate([ds.labels for ds in datasets])))
        if all(ds.has_both_classes for ds in datasets) and 0.05 <= rate <= 0.35:
            calib = SliceCalibration(profile.kind, profile.kappa, tau, rate, attempt + 1)
            log.debug("slice %s calibrated: tau=%.6g rate=%.3f after %d attempt(s)",
                      describe(profile.kind), tau, rate, attempt + 1)
            return datasets, calib
        log.debug("slice %s attempt %d rejected (rate=%.3f)", profile.kind, attempt, rate)
    raise GenerationError(
        f"slice {profile.kind}: no non-degenerate dataset after {MAX_ATTEMPTS} attempts (K={K}, D={D})"
    )


def generate(seed: int, K: int, N: int, D: int) -> DatasetGrid:
    """Generate the K x N dataset grid and its per-slice standardisation."""
    for name, value in (("K", K), ("N", N), ("D", D)):
        if value < 1:
            raise GenerationError(f"{name} must be >= 1, got {value}")
    if N > len(SLICE_PROFILES):
        raise GenerationError(f"N={N} exceeds the {len(SLICE_PROFILES)} available slice profiles")
    raw: Dict[Tuple[int, int], LocalDataset] = {}
    standardizers, calibration = [], []
    for n in range(N):
        datasets, calib = _generate_slice(seed, n, K, D)
        for k, ds in enumerate(datasets):
            raw[(k, n)] = ds
        standardizers.append(Standardizer.fit(np.vstack([ds.features for ds in datasets])))
        calibration.append(calib)
    log.info("generated %d datasets (K=%d, N=%d, D=%d, seed=%d)", len(raw), K, N, D, seed)
    return DatasetGrid(seed, K, N, D, raw, standardizers, calibration)


# --- CSV import / export ----------------------------------------------------

def dataset_filename(k: int, n: int) -> str:
    return f"bs{k:03d}_{profile_for(n).kind}.csv"


def write_local_csv(path: Path, ds: LocalDataset) -> Path:
    rows = ([*row, int(label)] for row, label in zip(ds.features.tolist(), ds.labels.tolist()))
    return artifacts.write_csv(path, CSV_HEADER, rows)


def read_local_csv(path: Path) -> LocalDataset:
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != CSV_HEADER:
            missing = [c for c in CSV_HEADER if header is None or c not in header]
            raise DataParseError(str(path), 1, f"expected header {','.join(CSV_HEADER)}; missing {missing}")
        features, labels = [], []
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(CSV_HEADER):
                raise DataParseError(str(path), line_no, f"expected {len(CSV_HEADER)} fields, got {len(row)}")
            try:
                values = [float(v) for v in row[:-1]]
                label = float(row[-1])
            except ValueError as e:
                raise DataParseError(str(path), line_no, str(e)) from e
            if not all(math.isfinite(v) for v in values) or label not in (0.0, 1.0):
                raise DataParseError(str(path), line_no, "non-finite feature or label outside {0, 1}")
            features.append(values)
            labels.append(label)
    if not features:
        raise DataParseError(str(path), None, "no data rows")
    return LocalDataset(np.array(features), np.array(labels))


def manifest_payload(grid: DatasetGrid) -> Dict:
    slices = []
    for n in range(grid.N):
        profile = profile_for(n)
        slices.append({
            "index": n,
            "profile": asdict(profile),
            "calibration": grid.calibration[n].to_dict() if grid.calibration else None,
            "standardizer": grid.standardizers[n].to_dict(),
        })
    return {"kind": "dataset", "seed": grid.seed, "K": grid.K, "N": grid.N, "D": grid.D, "slices": slices}


def export_grid(grid: DatasetGrid, out_dir: Path) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for k, n in grid.keys():
        write_local_csv(out_dir / dataset_filename(k, n), grid.raw[(k, n)])
    return artifacts.write_manifest(out_dir, manifest_payload(grid))


def _manifest_fields(manifest, path: str):
    if not isinstance(manifest, dict):
        raise DataParseError(path, None, "manifest is not a JSON object")
    missing = [key for key in MANIFEST_KEYS if key not in manifest]
    if missing:
        raise DataParseError(path, None, f"manifest lacks {missing}")
    try:
        seed, K, N, D = (int(manifest[key]) for key in ("seed", "K", "N", "D"))
    except (TypeError, ValueError) as e:
        raise DataParseError(path, None, f"manifest sizes must be integers: {e}") from e
    slices = manifest["slices"]
    if not isinstance(slices, list) or len(slices) != N:
        raise DataParseError(path, None, f"expected {N} slice entries in the manifest")
    return seed, K, N, D, slices


def import_grid(data_dir: Path) -> DatasetGrid:
    data_dir = Path(data_dir)
    manifest_path = data_dir / artifacts.MANIFEST_NAME
    if not manifest_path.is_file():
        raise FileNotFoundError(f"no dataset manifest at {manifest_path}")
    manifest = artifacts.read_json(manifest_path)
    seed, K, N, D, slices = _manifest_fields(manifest, str(manifest_path))
    raw = {(k, n): read_local_csv(data_dir / dataset_filename(k, n)) for n in range(N) for k in range(K)}
    try:
        standardizers = [Standardizer.from_dict(s["standardizer"]) for s in slices]
        calibration = [SliceCalibration(**s["calibration"]) for s in slices if s.get("calibration")]
    except (KeyError, TypeError, AttributeError) as e:
        raise DataParseError(str(manifest_path), None, f"malformed slice entry: {e!r}") from e
    return DatasetGrid(seed, K, N, D, raw, standardizers, calibration)
