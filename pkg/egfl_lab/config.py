"""Experiment configuration: defaults, variant registry and the flat key=value format.

Keys follow the simulation parameter names (``K``, ``N``, ``D``,
``T``, ``L``, ``R_lambda``, ``eta_lambda``) plus the lab's own tunables.
"""
from __future__ import annotations

import logging
import os
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Dict, Mapping, NamedTuple, Optional, Tuple

from .egl import DivergenceKind
from .errors import ConfigError
from .fairness import LocalTrainConfig
from .slices import FEATURE_NAMES, SLICE_PROFILES

log = logging.getLogger(__name__)

SEED_ENV = "EGFL_SEED"

# Full-scale defaults; desk runs override K, D, T and L.
DEFAULT_K = 50
DEFAULT_N = 3
DEFAULT_D = 1500
DEFAULT_T = 40
DEFAULT_L = 40
DEFAULT_R_LAMBDA = 1e-5
DEFAULT_ETA_LAMBDA = 0.12
DEFAULT_GAMMA = (0.82, 0.85, 0.84)
DEFAULT_SEED = 0


class Variant(NamedTuple):
    divergence: DivergenceKind
    constrained: bool


VARIANTS: Dict[str, Variant] = {
    "EGFL-JS": Variant(DivergenceKind.JS, True),
    "EGFL-KL": Variant(DivergenceKind.KL, True),
    "EGFL-unconstrained": Variant(DivergenceKind.JS, False),
    "FL-constrained": Variant(DivergenceKind.NONE, True),
    "FL-vanilla": Variant(DivergenceKind.NONE, False),
}
VARIANT_ORDER = tuple(VARIANTS)


@dataclass(frozen=True)
class ExperimentConfig:
    K: int = DEFAULT_K
    N: int = DEFAULT_N
    D: int = DEFAULT_D
    T: int = DEFAULT_T
    L: int = DEFAULT_L
    R_lambda: float = DEFAULT_R_LAMBDA
    eta_lambda: float = DEFAULT_ETA_LAMBDA
    gamma: Tuple[float, ...] = DEFAULT_GAMMA
    seed: int = DEFAULT_SEED
    oracle_steps: int = 20
    oracle_lr: float = 0.12
    ig_steps: int = 50
    hidden: Tuple[int, ...] = (16, 8)
    mu: float = 1.0
    threshold: float = 0.5
    divergence_coef: float = 1.0
    test_fraction: float = 0.2
    threads: int = 4
    variants: Tuple[str, ...] = field(default=VARIANT_ORDER)

    def __post_init__(self):
        for key in ("gamma", "hidden", "variants"):
            object.__setattr__(self, key, tuple(getattr(self, key)))
        if self.gamma == DEFAULT_GAMMA and 1 <= self.N < len(DEFAULT_GAMMA):
            object.__setattr__(self, "gamma", DEFAULT_GAMMA[: self.N])
        for key in ("K", "N", "D", "T", "L", "oracle_steps", "ig_steps", "threads"):
            if getattr(self, key) < 1:
                raise ConfigError(key, f"must be >= 1, got {getattr(self, key)}")
        if self.N > len(SLICE_PROFILES):
            raise ConfigError("N", f"at most {len(SLICE_PROFILES)} slices are available, got {self.N}")
        if len(self.gamma) != self.N:
            raise ConfigError("gamma", f"expected {self.N} values (one per slice), got {len(self.gamma)}")
        if not all(0 < g < 1 for g in self.gamma):
            raise ConfigError("gamma", f"every value must lie in (0, 1), got {list(self.gamma)}")
        if self.R_lambda < 0:
            raise ConfigError("R_lambda", f"must be >= 0, got {self.R_lambda}")
        for key in ("eta_lambda", "oracle_lr", "mu"):
            if not getattr(self, key) > 0:
                raise ConfigError(key, f"must be positive, got {getattr(self, key)}")
        if not 0 < self.threshold < 1:
            raise ConfigError("threshold", f"must lie in (0, 1), got {self.threshold}")
        if not 0 < self.test_fraction < 1:
            raise ConfigError("test_fraction", f"must lie in (0, 1), got {self.test_fraction}")
        if self.divergence_coef < 0:
            raise ConfigError("divergence_coef", f"must be >= 0, got {self.divergence_coef}")
        if not self.hidden or any(h < 1 for h in self.hidden):
            raise ConfigError("hidden", f"layer widths must be >= 1, got {list(self.hidden)}")
        if not self.variants:
            raise ConfigError("variants", "at least one variant is required")
        unknown = [v for v in self.variants if v not in VARIANTS]
        if unknown:
            raise ConfigError("variants", f"unknown {unknown}; expected some of {list(VARIANT_ORDER)}")

    @property
    def layer_dims(self) -> Tuple[int, ...]:
        return (len(FEATURE_NAMES),) + tuple(self.hidden) + (1,)

    def local_config(self, variant: str, n: int) -> LocalTrainConfig:
        variant_spec = VARIANTS[variant]
        return LocalTrainConfig(
            epochs=self.L,
            gamma=self.gamma[n],
            eta_lambda=self.eta_lambda,
            R_lambda=self.R_lambda if variant_spec.constrained else 0.0,
            divergence=variant_spec.divergence,
            divergence_coef=self.divergence_coef,
            oracle_steps=self.oracle_steps,
            oracle_lr=self.oracle_lr,
            ig_steps=self.ig_steps,
            threshold=self.threshold,
        )

    def with_overrides(self, **changes) -> "ExperimentConfig":
        return replace(self, **changes)

    def to_dict(self) -> Dict:
        raw = asdict(self)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in raw.items()}


# --- key=value parsing ------------------------------------------------------

def _parse_int(key: str, text: str) -> int:
    try:
        return int(text)
    except ValueError:
        raise ConfigError(key, f"expected an integer, got {text!r}") from None


def _parse_float(key: str, text: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise ConfigError(key, f"expected a number, got {text!r}") from None


def _split(text: str):
    return [part.strip() for part in text.split(",") if part.strip()]


_FIELD_TYPES = {f.name: f.type for f in fields(ExperimentConfig)}


def parse_value(key: str, text: str):
    kind = _FIELD_TYPES.get(key)
    if kind is None:
        raise ConfigError(key, f"unknown key; expected one of {sorted(_FIELD_TYPES)}")
    if kind == "int":
        return _parse_int(key, text)
    if kind == "float":
        return _parse_float(key, text)
    if key == "gamma":
        return tuple(_parse_float(key, part) for part in _split(text))
    if key == "hidden":
        return tuple(_parse_int(key, part) for part in _split(text))
    return tuple(_split(text))


def parse_config_text(text: str, source: str = "<config>") -> Dict[str, object]:
    values: Dict[str, object] = {}
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{line_no}", f"expected 'key = value', got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key in values:
            raise ConfigError(key, f"set twice (line {line_no})")
        values[key] = parse_value(key, value)
    return values


def resolve_seed(seed: Optional[int] = None, file_seed: Optional[int] = None) -> int:
    """Explicit ``seed``, then the config file, then ``EGFL_SEED``, then the default."""
    if seed is not None:
        return seed
    if file_seed is not None:
        return file_seed
    if os.environ.get(SEED_ENV):
        return _parse_int(SEED_ENV, os.environ[SEED_ENV])
    return DEFAULT_SEED


def build_config(values: Mapping[str, object], seed: Optional[int] = None) -> ExperimentConfig:
    """Merge parsed values over the defaults; the seed follows ``resolve_seed``."""
    values = dict(values)
    values["seed"] = resolve_seed(seed, values.get("seed"))
    return ExperimentConfig(**values)


def load_config(path: Path, seed: Optional[int] = None) -> ExperimentConfig:
    path = Path(path)
    cfg = build_config(parse_config_text(path.read_text(encoding="utf-8"), str(path)), seed)
    log.debug("loaded config from %s: %s", path, cfg)
    return cfg


def dump_config(cfg: ExperimentConfig) -> str:
    lines = []
    for key, value in cfg.to_dict().items():
        if isinstance(value, list):
            value = ",".join(str(v) for v in value)
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"
