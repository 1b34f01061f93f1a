"""Filtering: replicas, outliers and invalid observations, driven by temporal statistics."""

from __future__ import annotations

import math
from collections import defaultdict, deque
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Sequence

from .model import LogRecord, dedup_key, validate_record

STD_FLOOR = 1e-9


@dataclass(frozen=True)
class FilterConfig:
    window_n: int = 50
    z_threshold: float = 3.0
    replica_horizon: int = 60_000_000_000

    def __post_init__(self) -> None:
        if self.window_n < 2:
            raise ValueError("window_n must be >= 2")
        if not self.z_threshold > 0:
            raise ValueError("z_threshold must be > 0")
        if self.replica_horizon < 0:
            raise ValueError("replica_horizon must be >= 0")


class RollingStat(NamedTuple):
    mean: float
    std: float
    warmup: bool


def _window_stat(window: Sequence[float], window_n: int) -> RollingStat:
    n = len(window)
    if n == 0:
        return RollingStat(math.nan, math.nan, True)
    mean = math.fsum(window) / n
    std = math.sqrt(math.fsum((x - mean) ** 2 for x in window) / (n - 1)) if n > 1 else 0.0
    return RollingStat(mean, std, n < window_n)


def rolling_stats(stream: Iterable[LogRecord], window_n: int) -> list[RollingStat]:
    """Mean/std (n-1 divisor) of the previous ``window_n`` values per (stage, tool)."""
    windows: dict[tuple, deque[float]] = defaultdict(lambda: deque(maxlen=window_n))
    out = []
    for r in stream:
        w = windows[(r.stage, r.tool)]
        out.append(_window_stat(w, window_n))
        w.append(r.numeric_value)
    return out


class OutlierFilter:
    """Streaming z-score filter.

    The per-key history holds only kept values, so a burst of outliers
    cannot inflate the baseline it is judged against.
    """

    def __init__(self, cfg: FilterConfig) -> None:
        self.cfg = cfg
        self._windows: dict[tuple, deque[float]] = defaultdict(lambda: deque(maxlen=cfg.window_n))

    def is_outlier(self, record: LogRecord) -> bool:
        w = self._windows[(record.stage, record.tool)]
        stat = _window_stat(w, self.cfg.window_n)
        drop = (
            not stat.warmup
            and stat.std > STD_FLOOR
            and abs(record.numeric_value - stat.mean) > self.cfg.z_threshold * stat.std
        )
        if not drop:
            w.append(record.numeric_value)
        return drop


class ReplicaFilter:
    """Drops records whose dedup key matches a kept record within the horizon."""

    def __init__(self, cfg: FilterConfig) -> None:
        self.horizon = cfg.replica_horizon
        self._last_kept: dict[bytes, int] = {}

    def is_replica(self, record: LogRecord) -> bool:
        key = dedup_key(record)
        seen = self._last_kept.get(key)
        if seen is not None and record.ts - seen <= self.horizon:
            return True
        self._last_kept[key] = record.ts
        return False

    def expire(self, now: int) -> None:
        """Forget keys older than the horizon; bounded memory on long streams."""
        cutoff = now - self.horizon
        stale = [k for k, ts in self._last_kept.items() if ts < cutoff]
        for k in stale:
            del self._last_kept[k]


def filter_outliers(
    stream: Iterable[LogRecord], cfg: FilterConfig
) -> tuple[list[LogRecord], list[LogRecord]]:
    f = OutlierFilter(cfg)
    kept, dropped = [], []
    for r in stream:
        (dropped if f.is_outlier(r) else kept).append(r)
    return kept, dropped


def drop_replicas(
    stream: Iterable[LogRecord], cfg: FilterConfig
) -> tuple[list[LogRecord], list[LogRecord]]:
    f = ReplicaFilter(cfg)
    kept, dropped = [], []
    for r in stream:
        (dropped if f.is_replica(r) else kept).append(r)
    return kept, dropped


def drop_invalid(stream: Iterable[LogRecord]) -> tuple[list[LogRecord], list[LogRecord]]:
    kept, dropped = [], []
    for r in stream:
        (dropped if validate_record(r) else kept).append(r)
    return kept, dropped


@dataclass
class FilterCounts:
    invalid: int = 0
    replicas: int = 0
    outliers: int = 0

    @property
    def total(self) -> int:
        return self.invalid + self.replicas + self.outliers


class RecordFilter:
    """Invalid -> replica -> outlier chain with state carried across windows."""

    def __init__(self, cfg: FilterConfig) -> None:
        self.replicas = ReplicaFilter(cfg)
        self.outliers = OutlierFilter(cfg)
        self.counts = FilterCounts()

    def apply(self, records: Iterable[LogRecord]) -> tuple[list[LogRecord], list[tuple[str, LogRecord]]]:
        kept: list[LogRecord] = []
        dropped: list[tuple[str, LogRecord]] = []
        for r in records:
            if validate_record(r):
                self.counts.invalid += 1
                dropped.append(("invalid", r))
            elif self.replicas.is_replica(r):
                self.counts.replicas += 1
                dropped.append(("replica", r))
            elif self.outliers.is_outlier(r):
                self.counts.outliers += 1
                dropped.append(("outlier", r))
            else:
                kept.append(r)
        if kept:
            self.replicas.expire(kept[-1].ts)
        return kept, dropped
