"""Orchestration of the full dataflow: generation through analytics.

Steps run in a fixed order.  Disabled steps pass batches through untouched.
In concurrent mode every step is a thread joined to its neighbours by a
bounded queue (producers block when it is full); sequential mode calls the
same step objects in a loop and must produce identical content.
"""

from __future__ import annotations

import hashlib
import json
import logging
import queue
import threading
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Iterable, Iterator, Sequence

import numpy as np

from . import analytics as an
from .aggregation import AggregateSummary, aggregate_records
from .alerting import AlertEvaluator, AlertEvent
from .codec import dumps_line, encode
from .config import OPTIONAL_STEPS, STEP_ORDER, PipelineConfig, Step
from .delivery import deliver
from .filtering import RecordFilter
from .ingest import LatePolicy, Reorderer, Windower
from .model import LogRecord, Snapshot, StageId, dedup_key
from .preprocess import Preprocessor, QualityFlag, UnifiedRecord, unify
from .store import Store
from .workload import AnomalyKind, Emission, GroundTruth, emit_streams, generate_stream, measure_conformance

log = logging.getLogger(__name__)

_MASK64 = (1 << 64) - 1


class PipelineError(RuntimeError):
    pass


class WatchdogError(PipelineError):
    pass


def _record_hash(r: LogRecord) -> int:
    h = hashlib.blake2b(dedup_key(r) + r.ts.to_bytes(8, "big", signed=True), digest_size=8)
    return int.from_bytes(h.digest(), "big")


@dataclass
class Digest:
    """Order-independent multiset digest of records."""

    value: int = 0
    count: int = 0

    def add(self, records: Iterable[LogRecord]) -> None:
        for r in records:
            self.value = (self.value + _record_hash(r)) & _MASK64
            self.count += 1

    def hex(self) -> str:
        return f"{self.value:016x}"


@dataclass
class Batch:
    """One window's worth of data moving between steps."""

    window_start: int
    window_len: int
    records: list[LogRecord]
    late: list[LogRecord] = field(default_factory=list)
    alerts: list[AlertEvent] = field(default_factory=list)
    summary: AggregateSummary | None = None
    unified: list[UnifiedRecord] | None = None

    @property
    def window_end(self) -> int:
        return self.window_start + self.window_len

    def current(self) -> list[LogRecord]:
        if self.unified is not None:
            return [u.record for u in self.unified]
        return self.records


@dataclass
class StepMetrics:
    step: str
    enabled: bool
    records_in: int = 0
    records_out: int = 0
    dropped: int = 0
    diverted: int = 0
    in_digest: Digest = field(default_factory=Digest)
    out_digest: Digest = field(default_factory=Digest)
    durations: list[int] = field(default_factory=list)
    block_times: list[int] = field(default_factory=list)

    @property
    def conserved(self) -> bool:
        return self.records_in == self.records_out + self.dropped + self.diverted

    def latency(self, q: float) -> float:
        return float(np.percentile(self.durations, q)) if self.durations else 0.0

    def block(self, q: float) -> float:
        return float(np.percentile(self.block_times, q)) if self.block_times else 0.0

    def to_dict(self) -> dict[str, Any]:
        return {
            "step": self.step,
            "enabled": self.enabled,
            "in": self.records_in,
            "out": self.records_out,
            "dropped": self.dropped,
            "diverted": self.diverted,
            "in_digest": self.in_digest.hex(),
            "out_digest": self.out_digest.hex(),
            "p50_ns": self.latency(50),
            "p95_ns": self.latency(95),
            "block_p95_ns": self.block(95),
        }


TIMING_FIELDS = ("p50_ns", "p95_ns", "block_p95_ns", "wall_clock_ns", "block_p95_max_ns")


@dataclass
class PipelineReport:
    steps: dict[str, StepMetrics]
    generated: dict[str, int]
    ground_truth: dict[str, int]
    filter_drops: dict[str, int]
    late: int
    alert_count: int
    compression_ratio: float | None
    v_conformance: list[dict[str, Any]]
    fused_count: int
    stored: int
    archived: int
    empty_windows: int
    windows: int
    wall_clock_ns: int = 0
    analytics: list[dict[str, Any]] = field(default_factory=list)

    @property
    def block_p95_max_ns(self) -> float:
        return max((m.block(95) for m in self.steps.values()), default=0.0)

    @property
    def conservation_ok(self) -> bool:
        return all(m.conserved for m in self.steps.values())

    def to_dict(self) -> dict[str, Any]:
        return {
            "kind": "report",
            "schema_version": 1,
            "steps": [m.to_dict() for m in self.steps.values()],
            "generated": self.generated,
            "ground_truth": self.ground_truth,
            "filter_drops": self.filter_drops,
            "late": self.late,
            "alert_count": self.alert_count,
            "compression_ratio": self.compression_ratio,
            "v_conformance": self.v_conformance,
            "fused_count": self.fused_count,
            "stored": self.stored,
            "archived": self.archived,
            "windows": self.windows,
            "empty_windows": self.empty_windows,
            "conservation_ok": self.conservation_ok,
            "wall_clock_ns": self.wall_clock_ns,
            "block_p95_max_ns": self.block_p95_max_ns,
        }

    def content(self) -> dict[str, Any]:
        """Report with timing fields removed; equal across runs of a seeded config."""
        d = self.to_dict()
        for k in TIMING_FIELDS:
            d.pop(k, None)
        d["steps"] = [{k: v for k, v in s.items() if k not in TIMING_FIELDS} for s in d["steps"]]
        return d

    def to_text(self) -> str:
        lines = [f"{'step':<15}{'on':<4}{'in':>9}{'out':>9}{'dropped':>9}{'diverted':>9}{'p50 ms':>10}{'p95 ms':>10}"]
        for m in self.steps.values():
            lines.append(
                f"{m.step:<15}{'y' if m.enabled else 'n':<4}{m.records_in:>9}{m.records_out:>9}"
                f"{m.dropped:>9}{m.diverted:>9}{m.latency(50) / 1e6:>10.3f}{m.latency(95) / 1e6:>10.3f}"
            )
        ratio = "n/a" if self.compression_ratio is None else f"{self.compression_ratio:.1f}"
        lines += [
            f"generated {sum(self.generated.values())}  late {self.late}  alerts {self.alert_count}  "
            f"stored {self.stored}  archived {self.archived}  fused {self.fused_count}",
            f"filter drops {self.filter_drops}  compression ratio {ratio}",
            f"windows {self.windows} ({self.empty_windows} empty)  conservation "
            f"{'ok' if self.conservation_ok else 'VIOLATED'}  wall {self.wall_clock_ns / 1e9:.3f} s",
            "V-conformance:",
        ]
        for v in self.v_conformance:
            if not v["batches"]:
                lines.append(f"  {v['stage']:<8} batches=0      (run shorter than one batch period)")
                continue
            lines.append(
                f"  {v['stage']:<8} batches={v['batches']:<6} mean_volume={v['mean_volume']:.1f} "
                f"band=[{v['volume_band'][0]}, {v['volume_band'][1]}] volume_ok={v['volume_ok']} "
                f"spacing_ok={v['spacing_ok']}"
            )
        return "\n".join(lines)


# --- steps ----------------------------------------------------------------


class StepWorker:
    step: Step

    def __init__(self, enabled: bool) -> None:
        self.enabled = enabled
        self.metrics = StepMetrics(self.step.value, enabled)

    def handle(self, batch: Batch) -> Batch:
        started = time.perf_counter_ns()
        before = batch.current()
        self.metrics.in_digest.add(before)
        if self.enabled:
            batch = self.process(batch)
        else:
            self.metrics.records_in += len(before)
            self.metrics.records_out += len(before)
        self.metrics.out_digest.add(batch.current())
        self.metrics.durations.append(time.perf_counter_ns() - started)
        return batch

    def process(self, batch: Batch) -> Batch:
        self.metrics.records_in += len(batch.current())
        self.metrics.records_out += len(batch.current())
        return batch

    def finish(self) -> None:
        pass


class FilteringStep(StepWorker):
    step = Step.FILTERING

    def __init__(self, enabled: bool, cfg: PipelineConfig, out_dir: Path | None) -> None:
        super().__init__(enabled)
        self.filter = RecordFilter(cfg.filter)
        self.dropped_path = out_dir / "dropped.ndjson" if out_dir and cfg.dropped_sink else None

    def process(self, batch: Batch) -> Batch:
        kept, dropped = self.filter.apply(batch.records)
        self.metrics.records_in += len(batch.records)
        self.metrics.records_out += len(kept)
        self.metrics.dropped += len(dropped)
        if dropped and self.dropped_path is not None:
            with open(self.dropped_path, "ab") as f:
                f.write(encode(r for _, r in dropped))
        batch.records = kept
        return batch


class AlertingStep(StepWorker):
    step = Step.STREAM_ALERTING

    def __init__(self, enabled: bool, cfg: PipelineConfig, out_dir: Path | None) -> None:
        super().__init__(enabled)
        self.evaluator = AlertEvaluator(cfg.rules)
        self.alert_log = out_dir / "alerts.ndjson" if out_dir else None
        self.alerts: list[AlertEvent] = []

    def process(self, batch: Batch) -> Batch:
        snap = Snapshot(batch.window_start, batch.window_len, tuple(batch.records))
        events = self.evaluator.evaluate(snap)
        if events:
            self.alerts.extend(events)
            if self.alert_log is not None:
                with open(self.alert_log, "ab") as f:
                    f.write(encode(events))
        batch.alerts = events
        return super().process(batch)


class AggregationStep(StepWorker):
    step = Step.AGGREGATION

    def __init__(self, enabled: bool) -> None:
        super().__init__(enabled)
        self.raw_bytes = 0
        self.encoded_bytes = 0

    def process(self, batch: Batch) -> Batch:
        summary = aggregate_records(batch.window_start, batch.window_len, batch.records)
        batch.summary = summary
        if summary.total_raw_bytes:
            self.raw_bytes += summary.total_raw_bytes
            self.encoded_bytes += len(encode([summary]))
        return super().process(batch)

    @property
    def ratio(self) -> float | None:
        return self.raw_bytes / self.encoded_bytes if self.encoded_bytes else None


class DeliveryStep(StepWorker):
    step = Step.DELIVERY

    def __init__(self, enabled: bool, cfg: PipelineConfig, out_dir: Path | None) -> None:
        super().__init__(enabled)
        self.cfg = cfg
        # file sinks live under out_dir; an in-memory run (no out_dir) writes nothing to disk
        self.sinks = [
            s if s.startswith("tcp://") else str(out_dir / s) for s in cfg.sinks if out_dir is not None or s.startswith("tcp://")
        ]
        self.delivered = 0

    def process(self, batch: Batch) -> Batch:
        items: list[Any] = []
        if batch.summary is not None and batch.summary.record_count:
            items.append(batch.summary)
        elif batch.summary is None and self.cfg.raw_passthrough:
            items.extend(batch.records)
        items.extend(batch.alerts)
        if items:
            payload = encode(items)
            for sink in self.sinks:
                self.delivered += deliver(
                    sink, payload, attempts=self.cfg.delivery_attempts, backoff=self.cfg.delivery_backoff
                )
        return super().process(batch)


class PreprocessingStep(StepWorker):
    step = Step.PREPROCESSING

    def __init__(self, enabled: bool, filtering_enabled: bool, out_dir: Path | None) -> None:
        super().__init__(enabled)
        self.pre = Preprocessor()
        self.deduplicated = filtering_enabled
        self.fused_path = out_dir / "fused.ndjson" if out_dir else None
        self.fused_count = 0

    def handle(self, batch: Batch) -> Batch:
        if not self.enabled:
            return super().handle(batch)
        started = time.perf_counter_ns()
        self.metrics.in_digest.add(batch.records)
        self.metrics.in_digest.add(batch.late)
        batch = self.process(batch)
        self.metrics.out_digest.add(batch.current())
        self.metrics.durations.append(time.perf_counter_ns() - started)
        return batch

    def process(self, batch: Batch) -> Batch:
        n_in = len(batch.records) + len(batch.late)
        before = self.pre.dropped
        batch.unified = self.pre.process(
            batch.records, batch.late, ingest_ts=batch.window_end, deduplicated=self.deduplicated
        )
        batch.late = []
        self.metrics.records_in += n_in
        self.metrics.records_out += len(batch.unified)
        self.metrics.dropped += self.pre.dropped - before
        return batch

    def finish(self) -> None:
        if not self.enabled:
            return
        fused = self.pre.fused()
        self.fused_count = len(fused)
        if self.fused_path is not None:
            self.fused_path.write_bytes(encode(fused))


class StorageStep(StepWorker):
    step = Step.STORAGE

    def __init__(self, enabled: bool, cfg: PipelineConfig, out_dir: Path | None) -> None:
        super().__init__(enabled)
        self.store = Store(out_dir / "store" if out_dir else None, segment_len=cfg.segment_len)
        self.archived = 0

    def handle(self, batch: Batch) -> Batch:
        if not self.enabled or batch.unified is not None:
            return super().handle(batch)
        # no preprocessing upstream: storage consumes the late side channel itself
        started = time.perf_counter_ns()
        self.metrics.in_digest.add(batch.records)
        self.metrics.in_digest.add(batch.late)
        batch = self.process(batch)
        self.metrics.out_digest.add(batch.current())
        self.metrics.durations.append(time.perf_counter_ns() - started)
        return batch

    def process(self, batch: Batch) -> Batch:
        if batch.unified is None:
            n_in = len(batch.records) + len(batch.late)
            unified = []
            for rec, flags in [(r, ()) for r in batch.records] + [
                (r, (QualityFlag.LATE_ARRIVAL,)) for r in batch.late
            ]:
                try:
                    unified.append(unify(rec, "logflow/v1", ingest_ts=batch.window_end, flags=flags))
                except ValueError:
                    self.metrics.dropped += 1
            batch.unified = unified
            batch.late = []
        else:
            n_in = len(batch.unified)
        self.store.store(batch.unified)
        self.archived += self.store.archive_tick(batch.window_end).archived
        self.metrics.records_in += n_in
        self.metrics.records_out += len(batch.unified)
        return batch


class AnalyticsStep(StepWorker):
    step = Step.ANALYTICS

    def __init__(self, enabled: bool, cfg: PipelineConfig, storage: StorageStep, out_dir: Path | None) -> None:
        super().__init__(enabled)
        self.cfg = cfg
        self.storage = storage
        self.out_path = out_dir / "analytics.ndjson" if out_dir else None
        self.alerts: list[AlertEvent] = []
        self.results: list[dict[str, Any]] = []

    def process(self, batch: Batch) -> Batch:
        self.alerts.extend(batch.alerts)
        return super().process(batch)

    def finish(self) -> None:
        if not self.enabled:
            return
        self.results = run_analytics(self.storage.store, self.cfg, self.alerts)
        if self.out_path is not None:
            self.out_path.write_bytes(b"".join(dumps_line(r) for r in self.results))


def run_analytics(store: Store, cfg: PipelineConfig, alerts: Sequence[AlertEvent]) -> list[dict[str, Any]]:
    span = store.time_span()
    results: list[dict[str, Any]] = []
    if span is None:
        t_from, t_to = 0, 0
    else:
        t_from, t_to = span[0], span[1] + 1
    correlations: list[an.CorrelationResult] = []
    window_len = cfg.collector.window_len
    records = store.query(t_from, t_to, include_archive=True)
    for job in cfg.analytics:
        p = job.params
        if job.job == "describe":
            results.append(an.describe_records(records, t_from, t_to, top_k=int(p.get("top_k", 3))).to_dict())
        elif job.job == "correlate":
            wl = int(round(float(p.get("window_len_s", window_len / 1e9)) * 1e9))
            a, b = StageId.parse(p["stage_a"]), StageId.parse(p["stage_b"])
            try:
                sa = an.error_series(records, a, t_from, t_to, wl)
                sb = an.error_series(records, b, t_from, t_to, wl)
                r, lag, by_lag = an.lagged_correlation(sa, sb, int(p.get("max_lag", 3)))
            except ValueError as exc:
                results.append({"kind": "correlation", "stage_a": a.label, "stage_b": b.label, "error": str(exc)})
                continue
            res = an.CorrelationResult(a, b, r, lag, by_lag)
            correlations.append(res)
            results.append(res.to_dict())
        elif job.job == "forecast":
            stage = StageId.parse(p["stage"])
            wl = int(round(float(p.get("window_len_s", window_len / 1e9)) * 1e9))
            series = an.error_series(records, stage, t_from, t_to, wl) if t_to > t_from else []
            alpha, horizon = float(p.get("alpha", 0.5)), int(p.get("horizon", 5))
            results.append(
                {
                    "kind": "forecast",
                    "stage": stage.label,
                    "alpha": alpha,
                    "forecast": an.forecast_rate(series, alpha, horizon) if series else [],
                }
            )
        elif job.job == "release_probability":
            outcomes = an.release_outcomes(records)
            results.append(
                {
                    "kind": "release_probability",
                    "releases": len(outcomes),
                    "successes": sum(o.success for o in outcomes),
                    "probability": an.release_success_probability(outcomes),
                }
            )
        elif job.job == "prescribe":
            for rec in an.prescribe(alerts, correlations, cfg.prescriptions):
                results.append(rec.to_dict())
    return results


# --- collection -----------------------------------------------------------


class Collector:
    """Merges emissions, reorders, windows, and attaches late records to batches."""

    def __init__(self, cfg: PipelineConfig) -> None:
        self.cfg = cfg
        self.reorderer = Reorderer(cfg.collector.watermark_lag)
        self.windower = Windower(cfg.collector.window_len)
        self.metrics = StepMetrics(Step.COLLECTION.value, True)
        self._late: list[LogRecord] = []
        self.late_total = 0
        self.windows = 0
        self.empty_windows = 0

    def _batches(self, snaps: list[Snapshot]) -> list[Batch]:
        out = []
        for s in snaps:
            late = self._late if self.cfg.collector.late_policy is LatePolicy.SIDE_CHANNEL else []
            self._late = []
            out.append(Batch(s.window_start, s.window_len, list(s.records), late))
            self.metrics.records_out += len(s.records)
            self.metrics.out_digest.add(s.records)
            self.windows += 1
            self.empty_windows += not s.records
        return out

    def push(self, emission: Emission) -> list[Batch]:
        record, emit_time = emission
        self.metrics.records_in += 1
        self.metrics.in_digest.add([record])
        released, late = self.reorderer.push(record, emit_time)
        if late is not None:
            self.late_total += 1
            self._late.append(late)
            if self.cfg.collector.late_policy is LatePolicy.SIDE_CHANNEL:
                self.metrics.diverted += 1
            else:
                self.metrics.dropped += 1
        snaps = []
        for r in released:
            snaps.extend(self.windower.push(r))
        return self._batches(snaps)

    def finish(self) -> list[Batch]:
        snaps = []
        for r in self.reorderer.flush():
            snaps.extend(self.windower.push(r))
        snaps.extend(self.windower.flush())
        batches = self._batches(snaps)
        if self._late and self.cfg.collector.late_policy is LatePolicy.SIDE_CHANNEL:
            if batches:
                batches[-1].late.extend(self._late)
            else:
                w = self.cfg.collector.window_len
                batches.append(Batch(0, w, [], list(self._late)))
        self._late = []
        return batches


# --- wiring ---------------------------------------------------------------


@dataclass
class _Run:
    cfg: PipelineConfig
    out_dir: Path | None
    streams: dict[StageId, list[Emission]]
    truth: GroundTruth
    collector: Collector
    steps: list[StepWorker]

    @property
    def storage(self) -> StorageStep:
        return next(s for s in self.steps if isinstance(s, StorageStep))


def _prepare(cfg: PipelineConfig, out_dir: Path | None) -> _Run:
    cfg.validate()
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        for name in ("alerts.ndjson", "dropped.ndjson", "fused.ndjson", "analytics.ndjson"):
            (out_dir / name).unlink(missing_ok=True)
        for sink in cfg.sinks:
            if not sink.startswith("tcp://"):
                (out_dir / sink).unlink(missing_ok=True)
        store_dir = out_dir / "store"
        if store_dir.exists():
            for p in sorted(store_dir.rglob("*.ndjson")):
                p.unlink()
    streams, truth = emit_streams(cfg.gen, cfg.anomalies, window_n=cfg.filter.window_n)
    on = cfg.enabled
    storage = StorageStep(on(Step.STORAGE), cfg, out_dir)
    steps: list[StepWorker] = [
        FilteringStep(on(Step.FILTERING), cfg, out_dir),
        AlertingStep(on(Step.STREAM_ALERTING), cfg, out_dir),
        AggregationStep(on(Step.AGGREGATION)),
        DeliveryStep(on(Step.DELIVERY), cfg, out_dir),
        PreprocessingStep(on(Step.PREPROCESSING), on(Step.FILTERING), out_dir),
        storage,
        AnalyticsStep(on(Step.ANALYTICS), cfg, storage, out_dir),
    ]
    return _Run(cfg, out_dir, streams, truth, Collector(cfg), steps)


def _merged(streams: dict[StageId, list[Emission]]) -> Iterator[Emission]:
    import heapq

    return heapq.merge(*streams.values(), key=lambda e: (e.emit_time, e.record.order_key))


def _run_sequential(run: _Run) -> None:
    def push_through(batches: list[Batch]) -> None:
        for batch in batches:
            for step in run.steps:
                batch = step.handle(batch)

    for emission in _merged(run.streams):
        push_through(run.collector.push(emission))
    push_through(run.collector.finish())
    for step in run.steps:
        step.finish()


_STOP = object()


class _Watchdog:
    def __init__(self, timeout: float) -> None:
        self.timeout = timeout
        self.last_progress = time.monotonic()
        self.abort = threading.Event()
        self.lock = threading.Lock()

    def tick(self) -> None:
        self.last_progress = time.monotonic()

    def stalled(self) -> bool:
        return time.monotonic() - self.last_progress > self.timeout


class _Aborted(Exception):
    pass


def _put(q: queue.Queue, item: Any, dog: _Watchdog, blocks: list[int] | None = None) -> None:
    started = time.perf_counter_ns()
    while True:
        if dog.abort.is_set():
            raise _Aborted
        try:
            q.put(item, timeout=0.05)
            break
        except queue.Full:
            continue
    if blocks is not None:
        blocks.append(time.perf_counter_ns() - started)
    dog.tick()


def _get(q: queue.Queue, dog: _Watchdog) -> Any:
    while True:
        if dog.abort.is_set():
            raise _Aborted
        try:
            item = q.get(timeout=0.05)
        except queue.Empty:
            continue
        dog.tick()
        return item


def _run_concurrent(run: _Run) -> None:
    cap = run.cfg.queue_capacity
    dog = _Watchdog(run.cfg.watchdog_timeout)
    errors: list[BaseException] = []
    stage_queues = {stage: queue.Queue(maxsize=cap) for stage in run.streams}
    step_queues = [queue.Queue(maxsize=cap) for _ in range(len(run.steps) + 1)]
    source_blocks: list[int] = []

    def guarded(fn: Callable[[], None]) -> Callable[[], None]:
        def inner() -> None:
            try:
                fn()
            except _Aborted:
                pass
            except BaseException as exc:  # noqa: BLE001 - surfaced to the caller
                errors.append(exc)
                dog.abort.set()

        return inner

    def producer(stage: StageId) -> Callable[[], None]:
        def body() -> None:
            q = stage_queues[stage]
            for e in run.streams[stage]:
                _put(q, e, dog, source_blocks)
            _put(q, _STOP, dog)

        return body

    def drain(stage: StageId) -> Iterator[Emission]:
        q = stage_queues[stage]
        while True:
            item = _get(q, dog)
            if item is _STOP:
                return
            yield item

    def collect() -> None:
        import heapq

        out = step_queues[0]
        merged = heapq.merge(
            *(drain(s) for s in run.streams), key=lambda e: (e.emit_time, e.record.order_key)
        )
        for emission in merged:
            for batch in run.collector.push(emission):
                _put(out, batch, dog, run.collector.metrics.block_times)
        for batch in run.collector.finish():
            _put(out, batch, dog, run.collector.metrics.block_times)
        _put(out, _STOP, dog)

    def worker(i: int) -> Callable[[], None]:
        step = run.steps[i]

        def body() -> None:
            inq, outq = step_queues[i], step_queues[i + 1]
            while True:
                item = _get(inq, dog)
                if item is _STOP:
                    step.finish()
                    _put(outq, _STOP, dog)
                    return
                _put(outq, step.handle(item), dog, step.metrics.block_times)

        return body

    def sink() -> None:
        q = step_queues[-1]
        while _get(q, dog) is not _STOP:
            pass

    threads = [threading.Thread(target=guarded(producer(s)), name=f"gen-{s.label}", daemon=True) for s in run.streams]
    threads.append(threading.Thread(target=guarded(collect), name="collection", daemon=True))
    threads += [
        threading.Thread(target=guarded(worker(i)), name=step.step.value, daemon=True)
        for i, step in enumerate(run.steps)
    ]
    threads.append(threading.Thread(target=guarded(sink), name="sink", daemon=True))
    for t in threads:
        t.start()
    while any(t.is_alive() for t in threads):
        for t in threads:
            t.join(timeout=0.05)
        if errors:
            break
        if dog.stalled():
            dog.abort.set()
            state = ", ".join(
                f"{t.name}={'alive' if t.is_alive() else 'done'}" for t in threads
            )
            sizes = ", ".join(f"q{i}={q.qsize()}" for i, q in enumerate(step_queues))
            raise WatchdogError(
                f"no progress for {run.cfg.watchdog_timeout:.1f} s; threads: {state}; queues: {sizes}"
            )
    dog.abort.set()
    for t in threads:
        t.join(timeout=1.0)
    if errors:
        raise PipelineError(f"step failed: {errors[0]!r}") from errors[0]
    run.collector.metrics.block_times.extend(source_blocks)


def run(cfg: PipelineConfig, out_dir: str | Path | None = None, *, mode: str = "concurrent") -> PipelineReport:
    """Execute the pipeline once and return its report."""
    if mode not in ("concurrent", "sequential"):
        raise ValueError(f"unknown mode {mode!r}")
    started = time.perf_counter_ns()
    out = Path(out_dir) if out_dir is not None else None
    r = _prepare(cfg, out)
    if mode == "sequential":
        try:
            _run_sequential(r)
        except Exception as exc:
            raise PipelineError(f"step failed: {exc!r}") from exc
    else:
        _run_concurrent(r)
    report = _report(r, time.perf_counter_ns() - started)
    if out is not None:
        (out / "report.ndjson").write_bytes(dumps_line(report.to_dict()))
        (out / "report.txt").write_text(report.to_text() + "\n", encoding="utf-8")
    return report


def _report(r: _Run, wall: int) -> PipelineReport:
    steps = {r.collector.metrics.step: r.collector.metrics}
    for s in r.steps:
        steps[s.metrics.step] = s.metrics
    by_name = {type(s): s for s in r.steps}
    filt: FilteringStep = by_name[FilteringStep]  # type: ignore[assignment]
    agg: AggregationStep = by_name[AggregationStep]  # type: ignore[assignment]
    alerting: AlertingStep = by_name[AlertingStep]  # type: ignore[assignment]
    pre: PreprocessingStep = by_name[PreprocessingStep]  # type: ignore[assignment]
    analytics_step: AnalyticsStep = by_name[AnalyticsStep]  # type: ignore[assignment]
    conformance = [
        measure_conformance(generate_stream(stage, r.cfg.gen), stage, r.cfg.gen).to_dict()
        for stage in sorted(r.streams)
    ]
    counts = filt.filter.counts
    return PipelineReport(
        steps=steps,
        generated={stage.label: len(s) for stage, s in sorted(r.streams.items())},
        ground_truth={k.value: r.truth.total(k) for k in AnomalyKind},
        filter_drops={"invalid": counts.invalid, "replicas": counts.replicas, "outliers": counts.outliers},
        late=r.collector.late_total,
        alert_count=len(alerting.alerts),
        compression_ratio=agg.ratio,
        v_conformance=conformance,
        fused_count=pre.fused_count,
        stored=len(r.storage.store) if r.storage.enabled else 0,
        archived=r.storage.archived,
        empty_windows=r.collector.empty_windows,
        windows=r.collector.windows,
        wall_clock_ns=wall,
        analytics=analytics_step.results,
    )


def stored_bytes(out_dir: str | Path) -> dict[str, bytes]:
    """Every stored NDJSON file under ``out_dir/store``, keyed by relative path."""
    root = Path(out_dir) / "store"
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*.ndjson"))}


# --- operate loop ---------------------------------------------------------


TuningRule = Callable[[PipelineReport, PipelineConfig], tuple[PipelineConfig, list[str]]]


def never_adjust(report: PipelineReport, cfg: PipelineConfig) -> tuple[PipelineConfig, list[str]]:
    return cfg, []


@dataclass(frozen=True)
class ScaleUpRule:
    """Grow resources when demand grows; never shrinks.

    Doubles queue capacity when the p95 producer block time of any step
    exceeds ``block_bound_ns``; doubles window_len when more than
    ``max_empty_fraction`` of windows were empty.
    """

    block_bound_ns: float = 1e6
    max_empty_fraction: float | None = None
    max_queue_capacity: int = 1 << 16

    def __call__(self, report: PipelineReport, cfg: PipelineConfig) -> tuple[PipelineConfig, list[str]]:
        notes = []
        if report.block_p95_max_ns > self.block_bound_ns and cfg.queue_capacity < self.max_queue_capacity:
            new_cap = min(cfg.queue_capacity * 2, self.max_queue_capacity)
            notes.append(
                f"queue_capacity {cfg.queue_capacity} -> {new_cap} "
                f"(block p95 {report.block_p95_max_ns:.0f} ns > {self.block_bound_ns:.0f} ns)"
            )
            cfg = replace(cfg, queue_capacity=new_cap)
        if (
            self.max_empty_fraction is not None
            and report.windows
            and report.empty_windows / report.windows > self.max_empty_fraction
        ):
            wl = cfg.collector.window_len * 2
            notes.append(f"window_len {cfg.collector.window_len} -> {wl} ns (sparse windows)")
            cfg = replace(cfg, collector=replace(cfg.collector, window_len=wl))
        return cfg, notes


def operate_loop(
    cfg: PipelineConfig,
    runs: int,
    rule: TuningRule = never_adjust,
    *,
    out_dir: str | Path | None = None,
    mode: str = "concurrent",
) -> list[tuple[PipelineReport, PipelineConfig]]:
    """Run, measure, tune, repeat.  Each entry pairs a run's report with the config for the next run."""
    if runs < 1:
        raise ValueError("runs must be >= 1")
    history = []
    for i in range(runs):
        run_dir = Path(out_dir) / f"run-{i}" if out_dir is not None else None
        report = run(cfg, run_dir, mode=mode)
        cfg, notes = rule(report, cfg)
        for note in notes:
            log.info("operate run %d: %s", i, note)
        history.append((report, cfg))
    return history
