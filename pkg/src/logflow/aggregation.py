"""Summary-form compression of snapshots with mergeable streaming moments."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

from .model import LogRecord, Severity, Snapshot, StageId, Structuredness


@dataclass(frozen=True)
class Moments:
    """Count, mean and sum of squared deviations (M2), plus extrema."""

    n: int = 0
    mean: float = 0.0
    m2: float = 0.0
    min: float = float("inf")
    max: float = float("-inf")

    @property
    def variance(self) -> float:
        return self.m2 / (self.n - 1) if self.n > 1 else 0.0

    def push(self, x: float) -> Moments:
        n = self.n + 1
        delta = x - self.mean
        mean = self.mean + delta / n
        m2 = self.m2 + delta * (x - mean)
        return Moments(n, mean, m2, min(self.min, x), max(self.max, x))

    def merge(self, other: Moments) -> Moments:
        if other.n == 0:
            return self
        if self.n == 0:
            return other
        n = self.n + other.n
        delta = other.mean - self.mean
        mean = self.mean + delta * other.n / n
        m2 = self.m2 + other.m2 + delta * delta * self.n * other.n / n
        return Moments(n, mean, m2, min(self.min, other.min), max(self.max, other.max))

    @classmethod
    def of(cls, values) -> Moments:
        m = cls()
        for x in values:
            m = m.push(x)
        return m


class KeyCount(NamedTuple):
    count: int
    payload_bytes: int


CountKey = tuple[StageId, str, Severity]
MomentKey = tuple[StageId, str]


@dataclass(frozen=True)
class AggregateSummary:
    window_start: int
    window_len: int
    counts: dict[CountKey, KeyCount] = field(default_factory=dict)
    moments: dict[MomentKey, Moments] = field(default_factory=dict)
    total_raw_bytes: int = 0
    structuredness: dict[Structuredness, int] = field(default_factory=dict)

    @classmethod
    def empty(cls) -> AggregateSummary:
        """Merge identity: no window, no data."""
        return cls(window_start=0, window_len=0)

    @property
    def is_identity(self) -> bool:
        return self.window_len == 0 and not self.counts

    @property
    def record_count(self) -> int:
        return sum(c.count for c in self.counts.values())

    @property
    def window_end(self) -> int:
        return self.window_start + self.window_len

    def violations(self) -> list[str]:
        out = []
        if sum(self.structuredness.values()) != self.record_count:
            out.append("structuredness histogram does not sum to record count")
        for key, m in self.moments.items():
            if m.m2 < 0:
                out.append(f"{key}: negative M2")
            if m.n >= 1 and not m.min <= m.mean <= m.max:
                out.append(f"{key}: mean outside [min, max]")
        return out


def aggregate_records(window_start: int, window_len: int, records: list[LogRecord] | tuple[LogRecord, ...]) -> AggregateSummary:
    counts: dict[CountKey, list[int]] = {}
    moments: dict[MomentKey, Moments] = {}
    hist: dict[Structuredness, int] = {}
    total = 0
    for r in records:
        c = counts.setdefault((r.stage, r.tool, r.severity), [0, 0])
        c[0] += 1
        c[1] += r.payload_size
        key = (r.stage, r.tool)
        moments[key] = moments.get(key, Moments()).push(r.numeric_value)
        hist[r.structuredness] = hist.get(r.structuredness, 0) + 1
        total += r.payload_size
    return AggregateSummary(
        window_start=window_start,
        window_len=window_len,
        counts={k: KeyCount(*v) for k, v in counts.items()},
        moments=moments,
        total_raw_bytes=total,
        structuredness=hist,
    )


def aggregate(snapshot: Snapshot) -> AggregateSummary:
    return aggregate_records(snapshot.window_start, snapshot.window_len, snapshot.records)


def merge_summaries(a: AggregateSummary, b: AggregateSummary) -> AggregateSummary:
    """Combine two summaries of disjoint windows; the result spans both."""
    if a.is_identity:
        return b
    if b.is_identity:
        return a
    if a.window_start < b.window_end and b.window_start < a.window_end:
        raise ValueError(
            f"overlapping windows [{a.window_start}, {a.window_end}) and "
            f"[{b.window_start}, {b.window_end}) would double-count"
        )
    counts = dict(a.counts)
    for k, v in b.counts.items():
        if k in counts:
            counts[k] = KeyCount(counts[k].count + v.count, counts[k].payload_bytes + v.payload_bytes)
        else:
            counts[k] = v
    moments = dict(a.moments)
    for k, m in b.moments.items():
        moments[k] = moments[k].merge(m) if k in moments else m
    hist = dict(a.structuredness)
    for k, v in b.structuredness.items():
        hist[k] = hist.get(k, 0) + v
    start = min(a.window_start, b.window_start)
    end = max(a.window_end, b.window_end)
    return AggregateSummary(
        window_start=start,
        window_len=end - start,
        counts=counts,
        moments=moments,
        total_raw_bytes=a.total_raw_bytes + b.total_raw_bytes,
        structuredness=hist,
    )


def compression_ratio(summary: AggregateSummary) -> float:
    from .codec import encode

    if summary.total_raw_bytes <= 0:
        raise ValueError("empty window: no raw bytes to compress")
    return summary.total_raw_bytes / len(encode([summary]))
