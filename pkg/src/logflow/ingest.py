"""Collection: merge emission sequences, restore ts order under bounded lateness, window."""

from __future__ import annotations

import enum
import heapq
from dataclasses import dataclass
from typing import Iterable, Iterator, Sequence

from .model import LogRecord, Snapshot
from .workload import Emission, multiplex


class LatePolicy(enum.Enum):
    DROP = "Drop"
    SIDE_CHANNEL = "SideChannel"


@dataclass(frozen=True)
class CollectorConfig:
    watermark_lag: int
    window_len: int
    late_policy: LatePolicy = LatePolicy.SIDE_CHANNEL

    def __post_init__(self) -> None:
        if self.watermark_lag < 0:
            raise ValueError("watermark_lag must be >= 0")
        if self.window_len <= 0:
            raise ValueError("window_len must be > 0")


class Reorderer:
    """Streaming bounded-lateness reorder buffer.

    The watermark is the largest emit_time seen (including the arriving
    record) minus ``watermark_lag``.  Records with ts below the watermark
    are late; buffered records below it are released in (ts, stage, tool)
    order, since no later on-time record can precede them.
    """

    def __init__(self, watermark_lag: int) -> None:
        self.watermark_lag = watermark_lag
        self._max_emit: int | None = None
        self._heap: list[tuple[tuple[int, int, str], int, LogRecord]] = []
        self._seq = 0

    @property
    def watermark(self) -> int | None:
        if self._max_emit is None:
            return None
        return self._max_emit - self.watermark_lag

    def push(self, record: LogRecord, emit_time: int) -> tuple[list[LogRecord], LogRecord | None]:
        """Returns (released records, the record itself if it arrived late)."""
        if self._max_emit is None or emit_time > self._max_emit:
            self._max_emit = emit_time
        wm = self._max_emit - self.watermark_lag
        if record.ts < wm:
            return self._release(wm), record
        heapq.heappush(self._heap, (record.order_key, self._seq, record))
        self._seq += 1
        return self._release(wm), None

    def _release(self, wm: int) -> list[LogRecord]:
        out = []
        heap = self._heap
        while heap and heap[0][0][0] < wm:
            out.append(heapq.heappop(heap)[2])
        return out

    def flush(self) -> list[LogRecord]:
        heap = self._heap
        out = [heapq.heappop(heap)[2] for _ in range(len(heap))]
        return out

    def __len__(self) -> int:
        return len(self._heap)


def merge_and_reorder(
    inputs: Iterable[Sequence[Emission]], cfg: CollectorConfig
) -> tuple[list[LogRecord], list[LogRecord]]:
    """Merge emission sequences into one ts-ordered stream plus the late list.

    The late list is returned under both policies; the caller decides
    whether it is discarded (Drop) or forwarded (SideChannel).
    """
    reorderer = Reorderer(cfg.watermark_lag)
    ordered: list[LogRecord] = []
    late: list[LogRecord] = []
    for record, emit_time in multiplex(inputs):
        released, was_late = reorderer.push(record, emit_time)
        ordered.extend(released)
        if was_late is not None:
            late.append(was_late)
    ordered.extend(reorderer.flush())
    return ordered, late


def window_start_for(ts: int, window_len: int) -> int:
    return (ts // window_len) * window_len


class Windower:
    """Groups a ts-ordered record stream into contiguous half-open windows."""

    def __init__(self, window_len: int) -> None:
        self.window_len = window_len
        self._start: int | None = None
        self._buf: list[LogRecord] = []

    def push(self, record: LogRecord) -> list[Snapshot]:
        start = window_start_for(record.ts, self.window_len)
        closed: list[Snapshot] = []
        if self._start is None:
            self._start = start
        elif start < self._start:
            raise ValueError(f"record ts {record.ts} precedes open window {self._start}")
        while start > self._start:
            closed.append(Snapshot(self._start, self.window_len, tuple(self._buf)))
            self._buf = []
            self._start += self.window_len
        self._buf.append(record)
        return closed

    def flush(self) -> list[Snapshot]:
        if self._start is None:
            return []
        snap = Snapshot(self._start, self.window_len, tuple(self._buf))
        self._start = None
        self._buf = []
        return [snap]


def snapshot_windows(stream: Iterable[LogRecord], cfg: CollectorConfig) -> list[Snapshot]:
    windower = Windower(cfg.window_len)
    out: list[Snapshot] = []
    for record in stream:
        out.extend(windower.push(record))
    out.extend(windower.flush())
    return out


def iter_snapshots(stream: Iterable[LogRecord], window_len: int) -> Iterator[Snapshot]:
    windower = Windower(window_len)
    for record in stream:
        yield from windower.push(record)
    yield from windower.flush()
