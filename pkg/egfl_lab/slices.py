# -*- coding: utf-8 -*-
# RAN slice traffic profiles used by the synthetic dataset generator.
# Ranges are per-sample draws except intensity, which is drawn once per BS.
from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

FEATURE_NAMES = ("prb", "latency_ms", "channel_quality_db")
LABEL_NAME = "drop"


@dataclass(frozen=True)
class SliceProfile:
    kind: str
    name: str
    intensity: Tuple[float, float]      # Poisson arrivals/s, per-BS draw
    prb: Tuple[float, float]            # allocated resource blocks
    snr_db: Tuple[float, float]         # channel quality
    latency_base_ms: float
    latency_coef_ms: float              # ms per unit of demand/capacity
    kappa: float                        # capacity scale
    target_rate: float                  # desired share of drop events

    def __post_init__(self):
        for label, (lo, hi) in (("intensity", self.intensity), ("prb", self.prb), ("snr_db", self.snr_db)):
            if not lo < hi:
                raise ValueError(f"{self.kind}: degenerate {label} range {lo}..{hi}")
        if self.intensity[0] <= 0 or self.prb[0] <= 0:
            raise ValueError(f"{self.kind}: intensities and PRB counts must be positive")
        if not 0.05 <= self.target_rate <= 0.35:
            raise ValueError(f"{self.kind}: target positive rate {self.target_rate} outside [0.05, 0.35]")


SLICE_PROFILES = {
    "eMBB": SliceProfile(
        kind="eMBB", name="Enhanced Mobile Broadband",
        intensity=(60.0, 120.0), prb=(20.0, 60.0), snr_db=(5.0, 25.0),
        latency_base_ms=20.0, latency_coef_ms=1.0, kappa=1.0, target_rate=0.15,
    ),
    "uRLLC": SliceProfile(
        kind="uRLLC", name="Ultra-Reliable Low-Latency Communications",
        intensity=(10.0, 30.0), prb=(5.0, 25.0), snr_db=(10.0, 30.0),
        latency_base_ms=2.0, latency_coef_ms=0.1, kappa=1.0, target_rate=0.10,
    ),
    "mMTC": SliceProfile(
        kind="mMTC", name="Massive Machine-Type Communications",
        intensity=(100.0, 200.0), prb=(5.0, 20.0), snr_db=(-5.0, 15.0),
        latency_base_ms=100.0, latency_coef_ms=5.0, kappa=5.0, target_rate=0.20,
    ),
}

# Slice index n maps onto this order.
SLICE_ORDER = ("eMBB", "uRLLC", "mMTC")


def profile_for(n: int) -> SliceProfile:
    if not 0 <= n < len(SLICE_ORDER):
        raise ValueError(f"slice index {n} outside 0..{len(SLICE_ORDER) - 1}")
    return SLICE_PROFILES[SLICE_ORDER[n]]


def describe(kind: str) -> str:
    """Get slice description"""
    profile = SLICE_PROFILES.get(kind)
    if profile:
        return f"{kind} - {profile.name}"
    return kind
