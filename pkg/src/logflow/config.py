"""Pipeline configuration: one JSON document, validated with field-path errors."""

from __future__ import annotations

import enum
import json
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable

from .alerting import AlertRule, ErrorRateOver, SeverityAtLeast, Silence, ValueOver
from .analytics import DEFAULT_PRESCRIPTIONS, PrescriptionEntry, prescription_from_dict
from .filtering import FilterConfig
from .ingest import CollectorConfig, LatePolicy
from .model import NS_PER_S, Severity, StageId
from .workload import AnomalyKind, AnomalySpec, GenConfig


class Step(enum.Enum):
    COLLECTION = "Collection"
    FILTERING = "Filtering"
    STREAM_ALERTING = "StreamAlerting"
    AGGREGATION = "Aggregation"
    DELIVERY = "Delivery"
    PREPROCESSING = "Preprocessing"
    STORAGE = "Storage"
    ANALYTICS = "Analytics"


STEP_ORDER: tuple[Step, ...] = tuple(Step)
OPTIONAL_STEPS: tuple[Step, ...] = STEP_ORDER[1:]


class ConfigError(ValueError):
    """Carries every problem found, each as (field path, message)."""

    def __init__(self, problems: list[tuple[str, str]]) -> None:
        self.problems = problems
        super().__init__("; ".join(f"{path}: {msg}" for path, msg in problems))


@dataclass(frozen=True)
class AnalyticsJob:
    job: str
    params: dict[str, Any] = field(default_factory=dict)


@dataclass(frozen=True)
class PipelineConfig:
    enabled_steps: frozenset[Step] = frozenset({Step.COLLECTION})
    gen: GenConfig = field(default_factory=GenConfig)
    anomalies: dict[StageId, tuple[AnomalySpec, ...]] = field(default_factory=dict)
    collector: CollectorConfig = field(
        default_factory=lambda: CollectorConfig(watermark_lag=5 * NS_PER_S, window_len=60 * NS_PER_S)
    )
    filter: FilterConfig = field(default_factory=FilterConfig)
    rules: tuple[AlertRule, ...] = ()
    sinks: tuple[str, ...] = ()
    delivery_attempts: int = 3
    delivery_backoff: float = 0.05
    analytics: tuple[AnalyticsJob, ...] = ()
    prescriptions: tuple[PrescriptionEntry, ...] = DEFAULT_PRESCRIPTIONS
    queue_capacity: int = 16
    raw_passthrough: bool = False
    segment_len: int = 3600 * NS_PER_S
    watchdog_timeout: float = 30.0
    dropped_sink: bool = False

    def enabled(self, step: Step) -> bool:
        return step in self.enabled_steps

    def with_steps(self, steps) -> PipelineConfig:
        return replace(self, enabled_steps=frozenset(steps))

    def problems(self) -> list[tuple[str, str]]:
        out = []
        if Step.COLLECTION not in self.enabled_steps:
            out.append(("enabled_steps", "Collection must always be enabled (pipeline entry point)"))
        if Step.ANALYTICS in self.enabled_steps and Step.STORAGE not in self.enabled_steps:
            out.append(("enabled_steps", "Analytics requires Storage"))
        if (
            Step.DELIVERY in self.enabled_steps
            and Step.AGGREGATION not in self.enabled_steps
            and not self.raw_passthrough
        ):
            out.append(("enabled_steps", "Delivery requires Aggregation or raw_passthrough"))
        if self.queue_capacity < 1:
            out.append(("queue_capacity", "must be a positive integer"))
        if self.watchdog_timeout <= 0:
            out.append(("watchdog_timeout_s", "must be > 0"))
        if self.delivery_attempts < 1:
            out.append(("delivery.attempts", "must be >= 1"))
        ids = [r.id for r in self.rules]
        for rid in sorted({i for i in ids if ids.count(i) > 1}):
            out.append(("rules", f"duplicate rule id {rid!r}"))
        return out

    def validate(self) -> PipelineConfig:
        problems = self.problems()
        if problems:
            raise ConfigError(problems)
        return self


# --- parsing --------------------------------------------------------------


def _ns(seconds: Any) -> int:
    return int(round(float(seconds) * NS_PER_S))


class _Reader:
    """Collects problems instead of failing on the first one."""

    def __init__(self) -> None:
        self.problems: list[tuple[str, str]] = []

    def get(self, obj: dict, key: str, path: str, conv: Callable[[Any], Any], default: Any = ...) -> Any:
        if key not in obj:
            if default is ...:
                self.problems.append((f"{path}{key}", "required field missing"))
                return None
            return default
        try:
            return conv(obj[key])
        except (ValueError, TypeError, KeyError) as exc:
            self.problems.append((f"{path}{key}", str(exc) or "invalid value"))
            return default if default is not ... else None

    def build(self, path: str, factory: Callable[..., Any], **kwargs) -> Any:
        if any(v is None for v in kwargs.values()):
            return None
        try:
            return factory(**kwargs)
        except (ValueError, TypeError) as exc:
            self.problems.append((path, str(exc)))
            return None


def _stage(text: Any) -> StageId:
    return StageId.parse(str(text))


def _condition(d: dict) -> Any:
    kind = d.get("type")
    if kind == "ErrorRateOver":
        return ErrorRateOver(float(d["threshold"]))
    if kind == "SeverityAtLeast":
        return SeverityAtLeast(Severity.parse(d["level"]))
    if kind == "ValueOver":
        return ValueOver(float(d["bound"]))
    if kind == "Silence":
        return Silence(_ns(d["max_gap_s"]))
    raise ValueError(f"unknown condition type {kind!r}")


def parse_config(doc: Any) -> PipelineConfig:
    if not isinstance(doc, dict):
        raise ConfigError([("$", "config must be a JSON object")])
    rd = _Reader()

    def steps(v):
        out = set()
        for s in v:
            try:
                out.add(Step(s))
            except ValueError:
                raise ValueError(f"unknown step {s!r}") from None
        return frozenset(out)

    enabled = rd.get(doc, "enabled_steps", "", steps, frozenset({Step.COLLECTION}))

    g = doc.get("generator", {})
    gen = rd.build(
        "generator",
        GenConfig,
        seed=rd.get(g, "seed", "generator.", int, 0),
        scale=rd.get(g, "scale", "generator.", float, 1e-6),
        duration=rd.get(g, "duration_s", "generator.", _ns, 3600 * NS_PER_S),
        stages=rd.get(g, "stages", "generator.", lambda v: frozenset(_stage(s) for s in v), frozenset(StageId)),
        error_rate=rd.get(g, "error_rate", "generator.", float, 0.01),
        replica_rate=rd.get(g, "replica_rate", "generator.", float, 0.0),
        start_ns=rd.get(g, "start_s", "generator.", _ns, 0),
        release_interval=rd.get(g, "release_interval_s", "generator.", _ns, 3600 * NS_PER_S),
        max_lateness=rd.get(g, "max_lateness_s", "generator.", _ns, 0),
    )

    anomalies: dict[StageId, list[AnomalySpec]] = {}
    for i, a in enumerate(doc.get("anomalies", [])):
        p = f"anomalies[{i}]."
        stage = rd.get(a, "stage", p, _stage)
        spec = rd.build(
            f"anomalies[{i}]",
            AnomalySpec,
            kind=rd.get(a, "kind", p, AnomalyKind),
            start=rd.get(a, "start_s", p, _ns),
            count=rd.get(a, "count", p, int),
            magnitude=rd.get(a, "magnitude", p, float, 0.0),
        )
        if stage is not None and spec is not None:
            anomalies.setdefault(stage, []).append(spec)

    c = doc.get("collector", {})
    collector = rd.build(
        "collector",
        CollectorConfig,
        watermark_lag=rd.get(c, "watermark_lag_s", "collector.", _ns, 5 * NS_PER_S),
        window_len=rd.get(c, "window_len_s", "collector.", _ns, 60 * NS_PER_S),
        late_policy=rd.get(c, "late_policy", "collector.", LatePolicy, LatePolicy.SIDE_CHANNEL),
    )

    f = doc.get("filter", {})
    default_horizon = collector.window_len if collector else 60 * NS_PER_S
    filt = rd.build(
        "filter",
        FilterConfig,
        window_n=rd.get(f, "window_n", "filter.", int, 50),
        z_threshold=rd.get(f, "z_threshold", "filter.", float, 3.0),
        replica_horizon=rd.get(f, "replica_horizon_s", "filter.", _ns, default_horizon),
    )

    rules = []
    for i, r in enumerate(doc.get("rules", [])):
        p = f"rules[{i}]."
        scope = rd.get(r, "scope", p, lambda v: None if v in (None, "All") else _stage(v), None)
        rule = rd.build(
            f"rules[{i}]",
            AlertRule,
            id=rd.get(r, "id", p, str),
            condition=rd.get(r, "condition", p, _condition),
            severity_out=rd.get(r, "severity_out", p, Severity.parse, Severity.WARNING),
        )
        if rule is not None:
            rules.append(replace(rule, scope=scope))

    sinks = []
    for i, s in enumerate(doc.get("sinks", [])):
        kind = s.get("type")
        if kind == "file":
            sinks.append(rd.get(s, "path", f"sinks[{i}].", str))
        elif kind == "tcp":
            sinks.append(f"tcp://{s.get('host', '127.0.0.1')}:{int(s.get('port', 0))}")
        else:
            rd.problems.append((f"sinks[{i}].type", f"unknown sink type {kind!r}"))

    d = doc.get("delivery", {})
    jobs = []
    for i, j in enumerate(doc.get("analytics", [])):
        name = j.get("job")
        if name not in {"describe", "correlate", "forecast", "release_probability", "prescribe"}:
            rd.problems.append((f"analytics[{i}].job", f"unknown analytics job {name!r}"))
            continue
        jobs.append(AnalyticsJob(name, {k: v for k, v in j.items() if k != "job"}))

    prescriptions = DEFAULT_PRESCRIPTIONS
    if "prescriptions" in doc:
        entries = []
        for i, e in enumerate(doc["prescriptions"]):
            entry = rd.get({"e": e}, "e", f"prescriptions[{i}]", prescription_from_dict)
            if entry is not None:
                entries.append(entry)
        prescriptions = tuple(entries)

    cfg = PipelineConfig(
        enabled_steps=enabled or frozenset(),
        gen=gen or GenConfig(),
        anomalies={k: tuple(v) for k, v in anomalies.items()},
        collector=collector or PipelineConfig().collector,
        filter=filt or FilterConfig(),
        rules=tuple(rules),
        sinks=tuple(s for s in sinks if s),
        delivery_attempts=rd.get(d, "attempts", "delivery.", int, 3),
        delivery_backoff=rd.get(d, "backoff_s", "delivery.", float, 0.05),
        analytics=tuple(jobs),
        prescriptions=prescriptions,
        queue_capacity=rd.get(doc, "queue_capacity", "", int, 16),
        raw_passthrough=rd.get(doc, "raw_passthrough", "", bool, False),
        segment_len=rd.get(doc.get("store", {}), "segment_len_s", "store.", _ns, 3600 * NS_PER_S),
        watchdog_timeout=rd.get(doc, "watchdog_timeout_s", "", float, 30.0),
        dropped_sink=rd.get(doc, "dropped_sink", "", bool, False),
    )
    problems = rd.problems + cfg.problems()
    if problems:
        raise ConfigError(problems)
    return cfg


def load_config(path: str | os.PathLike) -> PipelineConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError([("$", f"config file not found: {path}")])
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError([("$", f"malformed JSON at line {exc.lineno} column {exc.colno}: {exc.msg}")]) from exc
    return parse_config(doc)
