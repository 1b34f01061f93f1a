"""Preprocessing: ordering check, cleansing, schema unification and fusion."""

from __future__ import annotations

import enum
import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Sequence

from .model import LogRecord, Severity, StageId, dedup_key, validate_record


class QualityFlag(enum.Enum):
    DEDUPLICATED = "Deduplicated"
    FUSED = "Fused"
    LATE_ARRIVAL = "LateArrival"


class InvalidRecordError(ValueError):
    def __init__(self, violations: list[str]) -> None:
        super().__init__("invalid record: " + "; ".join(violations))
        self.violations = violations


@dataclass(frozen=True)
class UnifiedRecord:
    """A record in the storage schema: the original fields plus provenance."""

    record: LogRecord
    source_format: str
    ingest_ts: int
    quality_flags: frozenset[QualityFlag] = frozenset()

    @property
    def ts(self) -> int:
        return self.record.ts

    @property
    def stage(self) -> StageId:
        return self.record.stage

    @property
    def severity(self) -> Severity:
        return self.record.severity

    @property
    def correlation_id(self) -> str:
        return self.record.correlation_id

    @property
    def order_key(self) -> tuple[int, int, str]:
        return self.record.order_key


def unify(
    record: LogRecord,
    source_format: str,
    *,
    ingest_ts: int | None = None,
    flags: Iterable[QualityFlag] = (),
) -> UnifiedRecord:
    violations = validate_record(record)
    if violations:
        raise InvalidRecordError(violations)
    return UnifiedRecord(
        record=record,
        source_format=source_format,
        ingest_ts=record.ts if ingest_ts is None else ingest_ts,
        quality_flags=frozenset(flags),
    )


class Outcome(enum.Enum):
    SUCCESS = "Success"
    FAILURE = "Failure"
    MIXED = "Mixed"
    UNKNOWN = "Unknown"


GATE_STAGES = frozenset({StageId.BUILD, StageId.TEST, StageId.DEPLOY})


class StageStats(NamedTuple):
    n: int
    mean: float
    min: float
    max: float


@dataclass(frozen=True)
class FusedRecord:
    correlation_id: str
    stages: frozenset[StageId]
    per_stage: dict[StageId, StageStats] = field(default_factory=dict)
    first_ts: int = 0
    last_ts: int = 0
    outcome: Outcome = Outcome.UNKNOWN

    @property
    def record_count(self) -> int:
        return sum(s.n for s in self.per_stage.values())


def fuse(records: Sequence[UnifiedRecord]) -> FusedRecord:
    """Consolidate records of one release/build into a single view.

    Outcome: Failure if any record is error-class; Unknown if no gate stage
    (Build, Test, Deploy) contributed; Mixed if warnings but no errors;
    otherwise Success.
    """
    if len(records) < 2:
        raise ValueError("fusion needs at least 2 records")
    ids = {r.correlation_id for r in records}
    if len(ids) != 1:
        raise ValueError(f"mixed correlation ids: {sorted(ids)}")
    values: dict[StageId, list[float]] = defaultdict(list)
    for r in records:
        values[r.stage].append(r.record.numeric_value)
    per_stage = {
        stage: StageStats(len(v), math.fsum(v) / len(v), min(v), max(v))
        for stage, v in sorted(values.items())
    }
    severities = {r.severity for r in records}
    if any(s.is_error_class for s in severities):
        outcome = Outcome.FAILURE
    elif not GATE_STAGES & values.keys():
        outcome = Outcome.UNKNOWN
    elif Severity.WARNING in severities:
        outcome = Outcome.MIXED
    else:
        outcome = Outcome.SUCCESS
    return FusedRecord(
        correlation_id=ids.pop(),
        stages=frozenset(values),
        per_stage=per_stage,
        first_ts=min(r.ts for r in records),
        last_ts=max(r.ts for r in records),
        outcome=outcome,
    )


def fuse_all(records: Iterable[UnifiedRecord]) -> list[FusedRecord]:
    groups: dict[str, list[UnifiedRecord]] = defaultdict(list)
    for r in records:
        groups[r.correlation_id].append(r)
    return [fuse(g) for cid, g in sorted(groups.items()) if len(g) >= 2]


class Preprocessor:
    """Streaming cleanse + unify stage.

    Cleansing removes invalid records and exact redundancies (same content
    and same ts).  Late side-channel records are unified with the
    LateArrival flag.  A record whose correlation id was already seen is
    flagged Fused, since it joins an existing fusion group.
    """

    def __init__(self, source_format: str = "logflow/v1") -> None:
        self.source_format = source_format
        self._seen: set[tuple[bytes, int]] = set()
        self._correlations: set[str] = set()
        self._groups: dict[str, list[UnifiedRecord]] = defaultdict(list)
        self.invalid = 0
        self.redundant = 0

    def process(
        self,
        records: Sequence[LogRecord],
        late: Sequence[LogRecord] = (),
        *,
        ingest_ts: int,
        deduplicated: bool = False,
    ) -> list[UnifiedRecord]:
        ordered = sorted(records, key=lambda r: r.order_key)
        out: list[UnifiedRecord] = []
        for rec, is_late in [(r, False) for r in ordered] + [(r, True) for r in late]:
            if validate_record(rec):
                self.invalid += 1
                continue
            ident = (dedup_key(rec), rec.ts)
            if ident in self._seen:
                self.redundant += 1
                continue
            self._seen.add(ident)
            flags = set()
            if is_late:
                flags.add(QualityFlag.LATE_ARRIVAL)
            elif deduplicated:
                flags.add(QualityFlag.DEDUPLICATED)
            if rec.correlation_id in self._correlations:
                flags.add(QualityFlag.FUSED)
            self._correlations.add(rec.correlation_id)
            u = unify(rec, self.source_format, ingest_ts=ingest_ts, flags=flags)
            self._groups[rec.correlation_id].append(u)
            out.append(u)
        return out

    @property
    def dropped(self) -> int:
        return self.invalid + self.redundant

    def fused(self) -> list[FusedRecord]:
        return [fuse(g) for cid, g in sorted(self._groups.items()) if len(g) >= 2]
