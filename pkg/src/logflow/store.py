"""Storage, update and archiving of unified records.

The hot store is an in-process time index persisted through a write-ahead
NDJSON log.  Records older than their stage's retention TTL move to
append-only NDJSON archive segments named ``archive-<stage>-<window_start>.ndjson``.
"""

from __future__ import annotations

import bisect
import os
import threading
from collections import defaultdict
from pathlib import Path
from typing import Iterable, NamedTuple

from .codec import decode, encode
from .model import CATALOG, NS_PER_S, Severity, StageId, dedup_key
from .preprocess import UnifiedRecord

WAL_NAME = "wal.ndjson"
ARCHIVE_DIR = "archive"

Ident = tuple[bytes, int]


class ArchiveError(OSError):
    pass


class TickResult(NamedTuple):
    archived: int
    segments: list[str]


def default_retention() -> dict[StageId, int]:
    """Per-stage TTL in ns, from the catalog's volatility."""
    return {stage: p.volatility_ttl * NS_PER_S for stage, p in CATALOG.items()}


def _ident(u: UnifiedRecord) -> Ident:
    return (dedup_key(u.record), u.ts)


def _matches(u: UnifiedRecord, t_from: int, t_to: int, stages, min_severity) -> bool:
    return (
        t_from <= u.ts < t_to
        and (stages is None or u.stage in stages)
        and (min_severity is None or u.severity >= min_severity)
    )


class Store:
    """Hot store + archive with one writer and many readers.

    With ``root=None`` nothing touches disk: WAL and segments are kept as
    in-memory byte buffers with the same encoding.
    """

    def __init__(
        self,
        root: str | os.PathLike | None = None,
        *,
        retention: dict[StageId, int] | None = None,
        segment_len: int = 3600 * NS_PER_S,
    ) -> None:
        if segment_len <= 0:
            raise ValueError("segment_len must be > 0")
        self.root = Path(root) if root is not None else None
        self.retention = retention or default_retention()
        self.segment_len = segment_len
        self._lock = threading.RLock()
        self._hot: dict[Ident, UnifiedRecord] = {}
        self._index: list[tuple[int, int, str, int, Ident]] = []
        self._seq = 0
        self._mem_segments: dict[str, bytearray] = {}
        self._mem_wal = bytearray()
        if self.root is not None:
            self.root.mkdir(parents=True, exist_ok=True)
            (self.root / ARCHIVE_DIR).mkdir(exist_ok=True)

    # -- writes --------------------------------------------------------

    def _wal_append(self, data: bytes) -> None:
        if self.root is None:
            self._mem_wal += data
        else:
            with open(self.root / WAL_NAME, "ab") as f:
                f.write(data)

    def _apply(self, records: Iterable[UnifiedRecord]) -> int:
        updates = 0
        for u in records:
            ident = _ident(u)
            if ident in self._hot:
                updates += 1
            else:
                bisect.insort(self._index, (u.ts, int(u.stage), u.record.tool, self._seq, ident))
                self._seq += 1
            self._hot[ident] = u
        return updates

    def store(self, records: Iterable[UnifiedRecord]) -> int:
        """Append or update (same dedup key and ts); returns the update count."""
        records = list(records)
        if not records:
            return 0
        with self._lock:
            self._wal_append(encode(records))
            return self._apply(records)

    # -- reads ---------------------------------------------------------

    def __len__(self) -> int:
        with self._lock:
            return len(self._hot)

    def query(
        self,
        t_from: int,
        t_to: int,
        stages: Iterable[StageId] | None = None,
        min_severity: Severity | None = None,
        *,
        include_archive: bool = False,
    ) -> list[UnifiedRecord]:
        """Records with ``t_from <= ts < t_to`` matching the filters, ts-ordered."""
        if t_from > t_to:
            raise ValueError(f"inverted range [{t_from}, {t_to})")
        stage_set = None if stages is None else frozenset(stages)
        with self._lock:
            lo = bisect.bisect_left(self._index, (t_from,))
            hi = bisect.bisect_left(self._index, (t_to,))
            out = [
                u
                for *_, ident in self._index[lo:hi]
                if _matches(u := self._hot[ident], t_from, t_to, stage_set, min_severity)
            ]
            if include_archive:
                out.extend(self.query_archive(t_from, t_to, stage_set, min_severity))
                out.sort(key=lambda u: u.order_key)
        return out

    def hot_records(self) -> list[UnifiedRecord]:
        with self._lock:
            return [self._hot[ident] for *_, ident in self._index]

    def time_span(self, *, include_archive: bool = True) -> tuple[int, int] | None:
        records = self.hot_records() + (self.archived_records() if include_archive else [])
        if not records:
            return None
        return min(u.ts for u in records), max(u.ts for u in records)

    # -- archive -------------------------------------------------------

    def segment_ids(self) -> list[str]:
        with self._lock:
            if self.root is None:
                return sorted(self._mem_segments)
            return sorted(p.stem for p in (self.root / ARCHIVE_DIR).glob("archive-*.ndjson"))

    def _read_segment(self, seg: str) -> bytes:
        if self.root is None:
            return bytes(self._mem_segments.get(seg, b""))
        return (self.root / ARCHIVE_DIR / f"{seg}.ndjson").read_bytes()

    def archived_records(self) -> list[UnifiedRecord]:
        with self._lock:
            out = [u for seg in self.segment_ids() for u in decode(self._read_segment(seg))]
        out.sort(key=lambda u: u.order_key)
        return out

    def query_archive(
        self,
        t_from: int,
        t_to: int,
        stages: Iterable[StageId] | None = None,
        min_severity: Severity | None = None,
    ) -> list[UnifiedRecord]:
        if t_from > t_to:
            raise ValueError(f"inverted range [{t_from}, {t_to})")
        stage_set = None if stages is None else frozenset(stages)
        return [
            u for u in self.archived_records() if _matches(u, t_from, t_to, stage_set, min_severity)
        ]

    def archive_tick(self, now: int) -> TickResult:
        """Move every hot record with ``now - ts > TTL(stage)`` into archive segments.

        All-or-nothing: if any segment write fails, segments written so far
        are truncated back and the hot store is left untouched.
        """
        with self._lock:
            expired = [
                (key, ident)
                for *key, ident in self._index
                if now - key[0] > self.retention[StageId(key[1])]
            ]
            if not expired:
                return TickResult(0, [])
            groups: dict[str, list[UnifiedRecord]] = defaultdict(list)
            for key, ident in expired:
                u = self._hot[ident]
                start = (u.ts // self.segment_len) * self.segment_len
                groups[f"archive-{u.stage.label}-{start}"].append(u)
            self._write_segments(groups)
            gone = {ident for _, ident in expired}
            for ident in gone:
                del self._hot[ident]
            self._index = [entry for entry in self._index if entry[4] not in gone]
            return TickResult(len(gone), sorted(groups))

    def _write_segments(self, groups: dict[str, list[UnifiedRecord]]) -> None:
        if self.root is None:
            for seg in sorted(groups):
                self._mem_segments.setdefault(seg, bytearray()).extend(encode(groups[seg]))
            return
        written: list[tuple[Path, int]] = []
        try:
            for seg in sorted(groups):
                path = self.root / ARCHIVE_DIR / f"{seg}.ndjson"
                with open(path, "ab") as f:
                    written.append((path, f.tell()))
                    f.write(encode(groups[seg]))
        except OSError as exc:
            for path, size in written:
                try:
                    with open(path, "r+b") as f:
                        f.truncate(size)
                except OSError:
                    pass
            raise ArchiveError(f"archive write failed, hot store unchanged: {exc}") from exc

    # -- persistence ---------------------------------------------------

    def wal_bytes(self) -> bytes:
        if self.root is None:
            return bytes(self._mem_wal)
        path = self.root / WAL_NAME
        return path.read_bytes() if path.exists() else b""

    @classmethod
    def open(cls, root: str | os.PathLike, **kwargs) -> Store:
        """Rebuild a store from its WAL, excluding records already archived."""
        store = cls(root, **kwargs)
        wal = store.wal_bytes()
        store._apply(decode(wal))
        archived = {_ident(u) for u in store.archived_records()}
        for ident in archived:
            store._hot.pop(ident, None)
        store._index = [e for e in store._index if e[4] not in archived]
        return store
