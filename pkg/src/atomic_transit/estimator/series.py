"""Time-series harvesting from broker history."""

from __future__ import annotations

import dataclasses
import math
import time
from typing import Callable

DEFAULT_STEP_SECONDS = 3600
DEFAULT_SEASON_LENGTH = 24  # steps per season: one day at hourly sampling
MAX_FILL_STEPS = 3


class InsufficientData(Exception):
    """Fewer regularized samples than the model needs to fit."""


@dataclasses.dataclass(frozen=True)
class TimeSeries:
    entity_id: str
    attr_name: str
    samples: tuple  # ((epoch, value), ...) strictly increasing epochs
    step_seconds: int

    def __post_init__(self):
        if not self.samples:
            raise ValueError("a series needs at least one sample")
        previous = None
        for epoch, value in self.samples:
            if previous is not None and epoch <= previous:
                raise ValueError("sample timestamps must be strictly increasing")
            if not math.isfinite(value):
                raise ValueError(f"non-finite value at epoch {epoch}")
            previous = epoch

    def values(self) -> list:
        return [v for _, v in self.samples]

    def last_epoch(self) -> float:
        return self.samples[-1][0]

    def map_values(self, fn) -> "TimeSeries":
        return dataclasses.replace(
            self, samples=tuple((t, fn(v)) for t, v in self.samples))


@dataclasses.dataclass(frozen=True)
class GapReport:
    filled: tuple = ()   # (epoch, steps) holes bridged by forward fill
    dropped: tuple = ()  # (epoch, steps) holes too long to bridge; series cut


def regularize(records, step_seconds: int):
    """Snap (epoch, value) records onto a uniform grid.

    The grid is anchored at the newest record and extends back to the
    oldest. Each slot takes the latest record at or before its tick.
    Holes of up to MAX_FILL_STEPS slots are forward-filled; a longer hole
    cuts the series, keeping only the newer side.
    """
    if not records:
        return [], GapReport()
    newest = records[-1][0]
    oldest = records[0][0]
    slots = int((newest - oldest) // step_seconds)
    ticks = [newest - k * step_seconds for k in range(slots, -1, -1)]

    samples = []
    filled = []
    dropped = []
    idx = 0
    last_value = None
    hole_run = 0
    for tick in ticks:
        advanced = False
        while idx < len(records) and records[idx][0] <= tick:
            last_value = records[idx][1]
            idx += 1
            advanced = True
        if advanced:
            if 0 < hole_run <= MAX_FILL_STEPS:
                filled.append((tick - hole_run * step_seconds, hole_run))
            elif hole_run > MAX_FILL_STEPS:
                dropped.append((tick - hole_run * step_seconds, hole_run))
                samples = []  # cut: keep only the newer side of the hole
            hole_run = 0
            samples.append((tick, last_value))
        else:
            hole_run += 1
            if hole_run <= MAX_FILL_STEPS and last_value is not None:
                samples.append((tick, last_value))
            # beyond the fill limit the slots stay empty until real data
            # returns, at which point the series is cut
    # the grid is anchored at the newest record, so the final tick always
    # carries data and no hole can trail
    return samples, GapReport(filled=tuple(filled), dropped=tuple(dropped))


def harvest(
    broker,
    entity_id: str,
    attr_name: str,
    window_seconds: float,
    step_seconds: int = DEFAULT_STEP_SECONDS,
    season_length: int = DEFAULT_SEASON_LENGTH,
    now_fn: Callable[[], float] = time.time,
) -> tuple[TimeSeries, GapReport]:
    """History records from the last window, regularized to the step grid.

    Raises UnknownEntity (from the broker) when the entity does not
    exist, and InsufficientData when fewer than two seasons of samples
    survive regularization.
    """
    if window_seconds <= 0:
        raise ValueError("window_seconds must be positive")
    now = now_fn()
    records = broker.query_history(entity_id, attr_name,
                                   from_epoch=now - window_seconds, to_epoch=now)
    pairs = [(float(r.observed_at), float(r.value)) for r in records]
    samples, report = regularize(pairs, step_seconds)
    if len(samples) < 2 * season_length:
        raise InsufficientData(
            f"{entity_id}.{attr_name}: {len(samples)} samples after "
            f"regularization, need {2 * season_length}")
    series = TimeSeries(entity_id=entity_id, attr_name=attr_name,
                        samples=tuple(samples), step_seconds=step_seconds)
    return series, report
