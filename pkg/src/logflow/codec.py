"""NDJSON wire format for records, unified records, summaries, alerts and fused records.

One JSON object per line, UTF-8, fixed key order, ``kind`` discriminator
first, then ``schema_version``.  Timestamps are integer nanoseconds and
payload bytes are base64.  Field-by-field layout lives in docs/ndjson-schema.md.
"""

from __future__ import annotations

import base64
import binascii
import json
from typing import Any, Callable, Iterable, NamedTuple

from .aggregation import AggregateSummary, KeyCount, Moments
from .alerting import AlertEvent
from .model import LogRecord, Severity, StageId, Structuredness
from .preprocess import FusedRecord, Outcome, QualityFlag, StageStats, UnifiedRecord

SCHEMA_VERSION = 1


class DecodeError(ValueError):
    def __init__(self, line_no: int, message: str) -> None:
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class Decoded(NamedTuple):
    items: list[Any]
    errors: list[DecodeError]


def _record_fields(r: LogRecord) -> dict[str, Any]:
    return {
        "ts": r.ts,
        "stage": r.stage.label,
        "tool": r.tool,
        "severity": r.severity.label,
        "structuredness": r.structuredness.value,
        "correlation_id": r.correlation_id,
        "payload_size": r.payload_size,
        "numeric_value": r.numeric_value,
        "payload": base64.b64encode(r.payload).decode("ascii"),
    }


def _record_from(d: dict[str, Any]) -> LogRecord:
    return LogRecord(
        ts=int(d["ts"]),
        stage=StageId.parse(d["stage"]),
        tool=d["tool"],
        severity=Severity.parse(d["severity"]),
        structuredness=Structuredness(d["structuredness"]),
        correlation_id=d["correlation_id"],
        payload_size=int(d["payload_size"]),
        numeric_value=float(d["numeric_value"]),
        payload=base64.b64decode(d["payload"], validate=True),
    )


def _unified_fields(u: UnifiedRecord) -> dict[str, Any]:
    out = _record_fields(u.record)
    out["source_format"] = u.source_format
    out["ingest_ts"] = u.ingest_ts
    out["quality_flags"] = sorted(f.value for f in u.quality_flags)
    return out


def _unified_from(d: dict[str, Any]) -> UnifiedRecord:
    return UnifiedRecord(
        record=_record_from(d),
        source_format=d["source_format"],
        ingest_ts=int(d["ingest_ts"]),
        quality_flags=frozenset(QualityFlag(f) for f in d["quality_flags"]),
    )


_STRUCT_ORDER = list(Structuredness)


def _summary_fields(s: AggregateSummary) -> dict[str, Any]:
    counts = sorted(
        ((int(k[0]), k[1], int(k[2])), [k[0].label, k[1], k[2].label, v.count, v.payload_bytes])
        for k, v in s.counts.items()
    )
    moments = sorted(
        ((int(k[0]), k[1]), [k[0].label, k[1], m.n, m.mean, m.m2, m.min, m.max])
        for k, m in s.moments.items()
    )
    return {
        "window_start": s.window_start,
        "window_len": s.window_len,
        "total_raw_bytes": s.total_raw_bytes,
        "counts": [row for _, row in counts],
        "moments": [row for _, row in moments],
        "structuredness": {st.value: s.structuredness.get(st, 0) for st in _STRUCT_ORDER},
    }


def _summary_from(d: dict[str, Any]) -> AggregateSummary:
    counts = {
        (StageId.parse(st), tool, Severity.parse(sev)): KeyCount(int(c), int(b))
        for st, tool, sev, c, b in d["counts"]
    }
    moments = {
        (StageId.parse(st), tool): Moments(int(n), float(mean), float(m2), float(lo), float(hi))
        for st, tool, n, mean, m2, lo, hi in d["moments"]
    }
    hist = {Structuredness(k): int(v) for k, v in d["structuredness"].items() if v}
    return AggregateSummary(
        window_start=int(d["window_start"]),
        window_len=int(d["window_len"]),
        counts=counts,
        moments=moments,
        total_raw_bytes=int(d["total_raw_bytes"]),
        structuredness=hist,
    )


def _alert_fields(a: AlertEvent) -> dict[str, Any]:
    return {
        "rule_id": a.rule_id,
        "condition": a.kind,
        "window_start": a.window_start,
        "window_len": a.window_len,
        "stage": a.stage.label,
        "observed": a.observed,
        "threshold": a.threshold,
        "severity": a.severity.label,
        "trigger_ts": a.trigger_ts,
    }


def _alert_from(d: dict[str, Any]) -> AlertEvent:
    return AlertEvent(
        rule_id=d["rule_id"],
        kind=d["condition"],
        window_start=int(d["window_start"]),
        window_len=int(d["window_len"]),
        stage=StageId.parse(d["stage"]),
        observed=float(d["observed"]),
        threshold=float(d["threshold"]),
        severity=Severity.parse(d["severity"]),
        trigger_ts=int(d["trigger_ts"]),
    )


def _fused_fields(f: FusedRecord) -> dict[str, Any]:
    return {
        "correlation_id": f.correlation_id,
        "stages": [s.label for s in sorted(f.stages)],
        "per_stage": [[s.label, *f.per_stage[s]] for s in sorted(f.per_stage)],
        "first_ts": f.first_ts,
        "last_ts": f.last_ts,
        "outcome": f.outcome.value,
    }


def _fused_from(d: dict[str, Any]) -> FusedRecord:
    return FusedRecord(
        correlation_id=d["correlation_id"],
        stages=frozenset(StageId.parse(s) for s in d["stages"]),
        per_stage={
            StageId.parse(st): StageStats(int(n), float(mean), float(lo), float(hi))
            for st, n, mean, lo, hi in d["per_stage"]
        },
        first_ts=int(d["first_ts"]),
        last_ts=int(d["last_ts"]),
        outcome=Outcome(d["outcome"]),
    )


_ENCODERS: list[tuple[type, str, Callable[[Any], dict[str, Any]]]] = [
    (UnifiedRecord, "unified", _unified_fields),
    (LogRecord, "record", _record_fields),
    (AggregateSummary, "summary", _summary_fields),
    (AlertEvent, "alert", _alert_fields),
    (FusedRecord, "fused", _fused_fields),
]

_DECODERS: dict[str, Callable[[dict[str, Any]], Any]] = {
    "unified": _unified_from,
    "record": _record_from,
    "summary": _summary_from,
    "alert": _alert_from,
    "fused": _fused_from,
}


def to_dict(item: Any) -> dict[str, Any]:
    for cls, kind, fields in _ENCODERS:
        if isinstance(item, cls):
            return {"kind": kind, "schema_version": SCHEMA_VERSION, **fields(item)}
    raise TypeError(f"cannot encode {type(item).__name__}")


def dumps_line(obj: dict[str, Any]) -> bytes:
    return json.dumps(obj, separators=(",", ":"), ensure_ascii=False, allow_nan=False).encode("utf-8") + b"\n"


def encode(items: Iterable[Any]) -> bytes:
    return b"".join(dumps_line(to_dict(item)) for item in items)


def from_dict(d: dict[str, Any]) -> Any:
    kind = d.get("kind")
    if kind not in _DECODERS:
        raise ValueError(f"unknown kind {kind!r}")
    version = d.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ValueError(f"unsupported schema_version {version!r}")
    return _DECODERS[kind](d)


def decode(data: bytes, *, lenient: bool = False) -> list[Any] | Decoded:
    """Decode NDJSON bytes.

    Strict mode raises :class:`DecodeError` on the first bad line.  Lenient
    mode returns ``Decoded(items, errors)`` with every good line decoded.
    """
    items: list[Any] = []
    errors: list[DecodeError] = []
    for line_no, raw in enumerate(data.split(b"\n"), start=1):
        if not raw.strip():
            continue
        try:
            obj = json.loads(raw.decode("utf-8"))
            if not isinstance(obj, dict):
                raise ValueError("line is not a JSON object")
            items.append(from_dict(obj))
        except KeyError as exc:
            err = DecodeError(line_no, f"missing field {exc}")
            if not lenient:
                raise err from exc
            errors.append(err)
        except (ValueError, TypeError, binascii.Error) as exc:
            err = DecodeError(line_no, str(exc) or type(exc).__name__)
            if not lenient:
                raise err from exc
            errors.append(err)
    if lenient:
        return Decoded(items, errors)
    return items
