"""Analytics over stored data: descriptive, diagnostic, predictive, prescriptive."""

from __future__ import annotations

import enum
import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Sequence

from .aggregation import Moments
from .alerting import AlertEvent
from .model import Severity, StageId
from .preprocess import GATE_STAGES, UnifiedRecord
from .store import Store


class AnalyticsLevel(enum.Enum):
    DESCRIPTIVE = "Descriptive"
    DIAGNOSTIC = "Diagnostic"
    PREDICTIVE = "Predictive"
    PRESCRIPTIVE = "Prescriptive"


# --- descriptive ----------------------------------------------------------


@dataclass(frozen=True)
class StageFigures:
    records: int
    errors: int
    volume: int
    moments: Moments
    top_tools: tuple[tuple[str, int], ...]

    @property
    def error_rate(self) -> float:
        return self.errors / self.records if self.records else 0.0


@dataclass(frozen=True)
class DescriptiveReport:
    t_from: int
    t_to: int
    stages: dict[StageId, StageFigures] = field(default_factory=dict)

    @property
    def total_records(self) -> int:
        return sum(s.records for s in self.stages.values())

    @property
    def total_errors(self) -> int:
        return sum(s.errors for s in self.stages.values())

    @property
    def total_volume(self) -> int:
        return sum(s.volume for s in self.stages.values())

    @property
    def error_rate(self) -> float:
        return self.total_errors / self.total_records if self.total_records else 0.0

    def to_dict(self) -> dict[str, Any]:
        return {
            "kind": "describe",
            "t_from": self.t_from,
            "t_to": self.t_to,
            "total_records": self.total_records,
            "total_errors": self.total_errors,
            "total_volume": self.total_volume,
            "error_rate": self.error_rate,
            "stages": [
                {
                    "stage": stage.label,
                    "records": f.records,
                    "errors": f.errors,
                    "error_rate": f.error_rate,
                    "volume": f.volume,
                    "mean": f.moments.mean,
                    "std": math.sqrt(f.moments.variance),
                    "min": f.moments.min,
                    "max": f.moments.max,
                    "top_tools": [list(t) for t in f.top_tools],
                }
                for stage, f in sorted(self.stages.items())
            ],
        }

    def to_text(self) -> str:
        lines = [
            f"records {self.total_records}  errors {self.total_errors}  "
            f"error_rate {self.error_rate:.4f}  volume {self.total_volume} B"
        ]
        for stage, f in sorted(self.stages.items()):
            tools = ", ".join(f"{t}={b}" for t, b in f.top_tools)
            lines.append(
                f"  {stage.label:<8} n={f.records:<7} err={f.error_rate:.4f} vol={f.volume:<9} "
                f"mean={f.moments.mean:.3f} std={math.sqrt(f.moments.variance):.3f}  [{tools}]"
            )
        return "\n".join(lines)


def describe_records(
    records: Iterable[UnifiedRecord], t_from: int, t_to: int, *, top_k: int = 3
) -> DescriptiveReport:
    counts: dict[StageId, list[int]] = defaultdict(lambda: [0, 0, 0])
    moments: dict[StageId, Moments] = defaultdict(Moments)
    tool_bytes: dict[StageId, dict[str, int]] = defaultdict(lambda: defaultdict(int))
    for u in records:
        c = counts[u.stage]
        c[0] += 1
        c[1] += u.severity.is_error_class
        c[2] += u.record.payload_size
        moments[u.stage] = moments[u.stage].push(u.record.numeric_value)
        tool_bytes[u.stage][u.record.tool] += u.record.payload_size
    stages = {}
    for stage, (n, errors, volume) in counts.items():
        top = sorted(tool_bytes[stage].items(), key=lambda kv: (-kv[1], kv[0]))[:top_k]
        stages[stage] = StageFigures(n, errors, volume, moments[stage], tuple(top))
    return DescriptiveReport(t_from, t_to, stages)


def describe(store: Store, t_from: int, t_to: int, *, top_k: int = 3) -> DescriptiveReport:
    records = store.query(t_from, t_to, include_archive=True)
    return describe_records(records, t_from, t_to, top_k=top_k)


# --- diagnostic -----------------------------------------------------------


def pearson(x: Sequence[float], y: Sequence[float]) -> float | None:
    """Single-pass (co-moment update) Pearson r; None when either series is constant."""
    if len(x) != len(y):
        raise ValueError("series lengths differ")
    n = 0
    mx = my = 0.0
    sxx = syy = sxy = 0.0
    for a, b in zip(x, y):
        n += 1
        dx = a - mx
        mx += dx / n
        dy = b - my
        my += dy / n
        sxx += dx * (a - mx)
        syy += dy * (b - my)
        sxy += dx * (b - my)
    if n < 2 or sxx <= 0 or syy <= 0:
        return None
    r = sxy / math.sqrt(sxx * syy)
    return max(-1.0, min(1.0, r))


@dataclass(frozen=True)
class CorrelationResult:
    stage_a: StageId
    stage_b: StageId
    r: float | None
    best_lag: int
    r_by_lag: dict[int, float | None] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {
            "kind": "correlation",
            "stage_a": self.stage_a.label,
            "stage_b": self.stage_b.label,
            "r": self.r,
            "best_lag": self.best_lag,
            "r_by_lag": {str(k): v for k, v in sorted(self.r_by_lag.items())},
        }


def lagged_correlation(
    a: Sequence[float], b: Sequence[float], max_lag: int
) -> tuple[float | None, int, dict[int, float | None]]:
    """Pearson r of ``a[t]`` against ``b[t + lag]`` for lag in [-max_lag, max_lag].

    Returns (r at best lag, best lag, r per lag).  The best lag maximises
    |r|; ties go to the smaller |lag|, then to the positive lag.
    """
    if len(a) != len(b):
        raise ValueError("series lengths differ")
    if len(a) < 3:
        raise ValueError("need at least 3 overlapping windows")
    by_lag: dict[int, float | None] = {}
    for lag in range(-max_lag, max_lag + 1):
        if lag >= 0:
            xs, ys = a[: len(a) - lag], b[lag:]
        else:
            xs, ys = a[-lag:], b[: len(b) + lag]
        if len(xs) < 3:
            continue
        by_lag[lag] = pearson(xs, ys)
    defined = [(lag, r) for lag, r in by_lag.items() if r is not None]
    if not defined:
        return None, 0, by_lag
    lag, r = min(defined, key=lambda lr: (-abs(lr[1]), abs(lr[0]), -lr[0]))
    return r, lag, by_lag


def error_series(
    records: Iterable[UnifiedRecord], stage: StageId, t_from: int, t_to: int, window_len: int
) -> list[int]:
    n = -(-(t_to - t_from) // window_len)
    series = [0] * n
    for u in records:
        if u.stage == stage and u.severity.is_error_class and t_from <= u.ts < t_to:
            series[(u.ts - t_from) // window_len] += 1
    return series


def correlate_stages(
    store: Store,
    stage_a: StageId,
    stage_b: StageId,
    t_from: int,
    t_to: int,
    window_len: int,
    *,
    max_lag: int = 3,
) -> CorrelationResult:
    """Lagged correlation of per-window error counts between two stages."""
    records = store.query(t_from, t_to, stages=(stage_a, stage_b), include_archive=True)
    sa = error_series(records, stage_a, t_from, t_to, window_len)
    sb = error_series(records, stage_b, t_from, t_to, window_len)
    r, lag, by_lag = lagged_correlation(sa, sb, max_lag)
    return CorrelationResult(stage_a, stage_b, r, lag, by_lag)


# --- predictive -----------------------------------------------------------


def ewma(series: Sequence[float], alpha: float) -> list[float]:
    if not 0 < alpha <= 1:
        raise ValueError("alpha must be in (0, 1]")
    if not series:
        raise ValueError("empty series")
    s = [float(series[0])]
    for x in series[1:]:
        s.append(alpha * x + (1 - alpha) * s[-1])
    return s


def forecast_rate(series: Sequence[float], alpha: float, horizon: int) -> list[float]:
    """Flat EWMA forecast of the next ``horizon`` windows."""
    if horizon < 0:
        raise ValueError("horizon must be >= 0")
    last = ewma(series, alpha)[-1]
    return [last] * horizon


# --- release success ------------------------------------------------------


@dataclass(frozen=True)
class ReleaseOutcome:
    correlation_id: str
    error_counts: dict[StageId, int]
    success: bool


def release_outcomes(
    records: Iterable[UnifiedRecord], gate_stages: Iterable[StageId] = GATE_STAGES
) -> list[ReleaseOutcome]:
    """A release succeeds when none of its gate-stage records is error-class."""
    gates = frozenset(gate_stages)
    errors: dict[str, dict[StageId, int]] = defaultdict(dict)
    for u in records:
        per = errors[u.correlation_id]
        per[u.stage] = per.get(u.stage, 0) + int(u.severity.is_error_class)
    return [
        ReleaseOutcome(cid, dict(sorted(per.items())), not any(per.get(s, 0) for s in gates))
        for cid, per in sorted(errors.items())
    ]


def release_success_probability(outcomes: Sequence[ReleaseOutcome]) -> float:
    """Laplace-smoothed success frequency (s + 1) / (n + 2)."""
    successes = sum(o.success for o in outcomes)
    return (successes + 1) / (len(outcomes) + 2)


# --- prescriptive ---------------------------------------------------------


@dataclass(frozen=True)
class PrescriptionEntry:
    id: str
    condition: str
    action: str
    rationale: str
    stage: StageId | None = None
    correlated_stage: StageId | None = None
    lag: int | None = None
    min_abs_r: float = 0.5

    @property
    def needs_evidence(self) -> bool:
        return self.correlated_stage is not None


DEFAULT_PRESCRIPTIONS: tuple[PrescriptionEntry, ...] = (
    PrescriptionEntry(
        "T1", "ErrorRateOver", "review recent {stage} error logs",
        "error rate above threshold in {stage}",
    ),
    PrescriptionEntry(
        "T2", "Silence", "check health of {stage} log sources",
        "{stage} stopped reporting for longer than allowed",
    ),
    PrescriptionEntry(
        "T3", "ErrorRateOver", "inspect Build artifacts of correlated windows",
        "Test errors follow Build errors with lag {lag} (r={r:.2f})",
        stage=StageId.TEST, correlated_stage=StageId.BUILD, lag=1,
    ),
    PrescriptionEntry(
        "T4", "ValueOver", "investigate {stage} metric spike",
        "{stage} reading exceeded its bound",
    ),
    PrescriptionEntry(
        "T5", "SeverityAtLeast", "escalate {stage} high-severity events",
        "{stage} emitted records at or above the alert level",
    ),
    PrescriptionEntry(
        "T6", "ErrorRateOver", "roll back the latest Deploy",
        "Deploy errors follow Release errors with lag {lag} (r={r:.2f})",
        stage=StageId.DEPLOY, correlated_stage=StageId.RELEASE, lag=1,
    ),
)


@dataclass(frozen=True)
class Recommendation:
    entry_id: str
    stage: StageId
    severity: Severity
    action: str
    rationale: str

    def to_dict(self) -> dict[str, Any]:
        return {
            "kind": "recommendation",
            "entry": self.entry_id,
            "stage": self.stage.label,
            "severity": self.severity.label,
            "action": self.action,
            "rationale": self.rationale,
        }


def _evidence(entry: PrescriptionEntry, stage: StageId, diagnostics: Sequence[CorrelationResult]):
    for d in diagnostics:
        if d.r is None or abs(d.r) < entry.min_abs_r:
            continue
        if d.stage_a == entry.correlated_stage and d.stage_b == stage:
            if entry.lag is None or d.best_lag == entry.lag:
                return d
    return None


def prescribe(
    alerts: Sequence[AlertEvent],
    diagnostics: Sequence[CorrelationResult] = (),
    table: Sequence[PrescriptionEntry] = DEFAULT_PRESCRIPTIONS,
) -> list[Recommendation]:
    """Map alerts (plus correlation evidence) to coalesced, ordered actions.

    Entries requiring correlation evidence take precedence over generic ones
    for the same condition and stage; otherwise table order decides.
    """
    ranked = sorted(table, key=lambda e: (not e.needs_evidence, e.stage is None))
    chosen: dict[tuple[str, StageId], Recommendation] = {}
    for alert in alerts:
        for entry in ranked:
            if entry.condition != alert.kind:
                continue
            if entry.stage is not None and entry.stage != alert.stage:
                continue
            fmt: dict[str, Any] = {"stage": alert.stage.label, "lag": entry.lag, "r": 0.0}
            if entry.needs_evidence:
                ev = _evidence(entry, alert.stage, diagnostics)
                if ev is None:
                    continue
                fmt.update(lag=ev.best_lag, r=ev.r)
            key = (entry.id, alert.stage)
            prev = chosen.get(key)
            if prev is None or alert.severity > prev.severity:
                chosen[key] = Recommendation(
                    entry.id,
                    alert.stage,
                    alert.severity if prev is None else max(alert.severity, prev.severity),
                    entry.action.format(**fmt),
                    entry.rationale.format(**fmt),
                )
            break
    return sorted(chosen.values(), key=lambda r: (-r.severity, r.stage, r.entry_id))


def prescription_from_dict(d: Mapping[str, Any]) -> PrescriptionEntry:
    return PrescriptionEntry(
        id=d["id"],
        condition=d["condition"],
        action=d["action"],
        rationale=d.get("rationale", ""),
        stage=StageId.parse(d["stage"]) if d.get("stage") else None,
        correlated_stage=StageId.parse(d["correlated_stage"]) if d.get("correlated_stage") else None,
        lag=d.get("lag"),
        min_abs_r=float(d.get("min_abs_r", 0.5)),
    )
