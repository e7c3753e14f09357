"""First date in a window at which change against a reference becomes significant.

The reference image and every window image are each replicated to the
model's sequence length, encoded, and compared pixel by pixel. The share of
changed pixels per date is then compared with a threshold, either a fixed
percentage or the median of the window's percentages.
"""
from __future__ import annotations

import datetime as dt
import json
import statistics
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import divergence as dv
from .inference import BinaryChangeMap, encode_stack
from .model import CLVAE
from .patching import replicate_post
from .raster_io import SarTile

DEFAULT_FIXED_THRESHOLD = 5.0


@dataclass(frozen=True)
class ChangeRecord:
    date: dt.date | None
    percentage_change: float


@dataclass
class ChangePointResult:
    records: list[ChangeRecord]
    threshold_used: float
    change_point: dt.date | None
    mode: str = "fixed"
    kind: str = "cosd"
    extra: dict = field(default_factory=dict)

    @property
    def change_index(self) -> int | None:
        for i, r in enumerate(self.records):
            if r.date == self.change_point and self.change_point is not None:
                return i
        return None

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "kind": self.kind,
            "threshold_used": self.threshold_used,
            "change_point": self.change_point.isoformat() if self.change_point else None,
            "records": [{"date": r.date.isoformat() if r.date else None,
                         "percentage_change": r.percentage_change} for r in self.records],
            **self.extra,
        }


def percentage_change(mask: BinaryChangeMap | np.ndarray) -> float:
    m = np.asarray(getattr(mask, "mask", mask), dtype=bool)
    if m.size == 0:
        raise ValueError("empty mask")
    return 100.0 * float(np.count_nonzero(m)) / m.size


def first_exceedance(percentages, dates=None, mode: str = "median",
                     threshold: float = DEFAULT_FIXED_THRESHOLD) -> tuple[float, int | None]:
    """Apply the threshold rule to a percentage series.

    Returns the threshold used and the index of the earliest entry strictly
    above it, or None.
    """
    pct = [float(p) for p in percentages]
    if not pct:
        raise ValueError("window is empty")
    if mode == "median":
        threshold = float(statistics.median(pct))
    elif mode != "fixed":
        raise ValueError(f"unknown threshold mode {mode!r}; use 'median' or 'fixed'")
    for i, p in enumerate(pct):
        if p > threshold:
            return float(threshold), i
    return float(threshold), None


def detect_change_point(x_ref: SarTile, window: list[SarTile], model: CLVAE,
                        kind: dv.DivergenceKind | str = "cosd", threshold_mode: str = "fixed",
                        threshold: float = DEFAULT_FIXED_THRESHOLD,
                        map_threshold: float | None = None,
                        batch_size: int = 512) -> ChangePointResult:
    kind = dv.DivergenceKind(kind)
    if threshold_mode not in ("median", "fixed"):
        raise ValueError(f"unknown threshold mode {threshold_mode!r}; use 'median' or 'fixed'")
    if not window:
        raise ValueError("window is empty")
    dates = [t.acquisition_date for t in window]
    if all(d is not None for d in dates):
        if any(b <= a for a, b in zip(dates, dates[1:])):
            raise ValueError("window dates must be strictly increasing")
        if x_ref.acquisition_date is not None and x_ref.acquisition_date >= dates[0]:
            raise ValueError("reference must predate the window")
    for t in window:
        if t.shape != x_ref.shape:
            raise ValueError(f"window image {t.shape} does not match reference {x_ref.shape}")
    if map_threshold is None:
        map_threshold = kind.default_threshold

    T = model.config.timesteps
    ref = encode_stack(model, replicate_post(x_ref, T), batch_size)
    records = []
    for tile in window:
        values = dv.divergence(kind, ref, encode_stack(model, replicate_post(tile, T), batch_size))
        records.append(ChangeRecord(tile.acquisition_date, percentage_change(values > map_threshold)))

    used, idx = first_exceedance([r.percentage_change for r in records], mode=threshold_mode,
                                 threshold=threshold)
    return ChangePointResult(records, used, None if idx is None else records[idx].date,
                             threshold_mode, kind.value)


def write_report(result: ChangePointResult, path) -> None:
    Path(path).write_text(json.dumps(result.to_dict(), indent=2) + "\n")
