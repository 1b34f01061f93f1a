"""Per-window rule evaluation producing alert events at window close."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, NamedTuple, Sequence, Union

import numpy as np

from .model import LogRecord, Severity, Snapshot, StageId


@dataclass(frozen=True)
class ErrorRateOver:
    threshold: float
    kind = "ErrorRateOver"

    def __post_init__(self) -> None:
        if not self.threshold > 0:
            raise ValueError("ErrorRateOver threshold must be > 0")


@dataclass(frozen=True)
class SeverityAtLeast:
    level: Severity
    kind = "SeverityAtLeast"


@dataclass(frozen=True)
class ValueOver:
    bound: float
    kind = "ValueOver"


@dataclass(frozen=True)
class Silence:
    max_gap: int
    kind = "Silence"

    def __post_init__(self) -> None:
        if not self.max_gap > 0:
            raise ValueError("Silence max_gap must be > 0")


Condition = Union[ErrorRateOver, SeverityAtLeast, ValueOver, Silence]


@dataclass(frozen=True)
class AlertRule:
    id: str
    condition: Condition
    scope: StageId | None = None  # None means every stage
    severity_out: Severity = Severity.WARNING


@dataclass(frozen=True)
class AlertEvent:
    rule_id: str
    kind: str
    window_start: int
    window_len: int
    stage: StageId
    observed: float
    threshold: float
    severity: Severity
    trigger_ts: int

    @property
    def emitted_at(self) -> int:
        return self.window_start + self.window_len


def check_rule_ids(rules: Sequence[AlertRule]) -> None:
    seen = set()
    for rule in rules:
        if rule.id in seen:
            raise ValueError(f"duplicate alert rule id {rule.id!r}")
        seen.add(rule.id)


def _evaluate(
    rule: AlertRule, records: Sequence[LogRecord], last_seen: int | None
) -> tuple[float, float, int] | None:
    """Returns (observed, threshold, trigger_ts) when the condition is violated."""
    cond = rule.condition
    if isinstance(cond, ErrorRateOver):
        if not records:
            return None
        errors = [r for r in records if r.severity.is_error_class]
        rate = len(errors) / len(records)
        if rate > cond.threshold:
            return rate, cond.threshold, errors[0].ts
        return None
    if isinstance(cond, SeverityAtLeast):
        hits = [r for r in records if r.severity >= cond.level]
        if hits:
            return float(max(r.severity for r in hits)), float(cond.level), hits[0].ts
        return None
    if isinstance(cond, ValueOver):
        hits = [r for r in records if r.numeric_value > cond.bound]
        if hits:
            return max(r.numeric_value for r in hits), cond.bound, hits[0].ts
        return None
    if isinstance(cond, Silence):
        prev = last_seen
        worst: tuple[int, int] | None = None
        for r in records:
            if prev is not None:
                gap = r.ts - prev
                if gap > cond.max_gap and (worst is None or gap > worst[0]):
                    worst = (gap, r.ts)
            prev = r.ts
        if worst is not None:
            return float(worst[0]), float(cond.max_gap), worst[1]
        return None
    raise TypeError(f"unknown condition {cond!r}")


class AlertEvaluator:
    """Evaluates a static rule set window by window.

    Only state carried across windows: each stage's last-seen ts, for Silence.
    """

    def __init__(self, rules: Sequence[AlertRule]) -> None:
        check_rule_ids(rules)
        self.rules = sorted(rules, key=lambda r: r.id)
        self.last_seen: dict[StageId, int] = {}

    def evaluate(self, snapshot: Snapshot) -> list[AlertEvent]:
        by_stage: dict[StageId, list[LogRecord]] = {}
        for r in snapshot.records:
            by_stage.setdefault(r.stage, []).append(r)
        events = []
        for rule in self.rules:
            stages = [rule.scope] if rule.scope is not None else sorted(by_stage)
            for stage in stages:
                hit = _evaluate(rule, by_stage.get(stage, []), self.last_seen.get(stage))
                if hit is None:
                    continue
                observed, threshold, trigger_ts = hit
                events.append(
                    AlertEvent(
                        rule_id=rule.id,
                        kind=rule.condition.kind,
                        window_start=snapshot.window_start,
                        window_len=snapshot.window_len,
                        stage=stage,
                        observed=observed,
                        threshold=threshold,
                        severity=rule.severity_out,
                        trigger_ts=trigger_ts,
                    )
                )
        for stage, recs in by_stage.items():
            self.last_seen[stage] = recs[-1].ts
        return events


def evaluate_window(
    snapshot: Snapshot,
    rules: Sequence[AlertRule],
    last_seen: dict[StageId, int] | None = None,
) -> list[AlertEvent]:
    """Stateless single-window evaluation; pass ``last_seen`` to carry Silence state."""
    ev = AlertEvaluator(rules)
    if last_seen:
        ev.last_seen.update(last_seen)
    return ev.evaluate(snapshot)


def evaluate_stream(snapshots: Iterable[Snapshot], rules: Sequence[AlertRule]) -> list[AlertEvent]:
    ev = AlertEvaluator(rules)
    out: list[AlertEvent] = []
    for snap in snapshots:
        out.extend(ev.evaluate(snap))
    return out


class LatencyStats(NamedTuple):
    p50: float
    p95: float


def alert_latency(alerts: Sequence[AlertEvent], slack: int = 0) -> LatencyStats:
    """p50/p95 event-time delay from triggering record to alert emission (ns).

    ``slack`` adds a fixed emission delay, e.g. the collector's watermark lag.
    """
    if not alerts:
        raise ValueError("no alerts")
    delays = [a.emitted_at + slack - a.trigger_ts for a in alerts]
    p50, p95 = np.percentile(delays, [50, 95])
    return LatencyStats(float(p50), float(p95))
