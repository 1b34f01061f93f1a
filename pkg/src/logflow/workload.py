"""Simulated toolchain: seeded per-stage log streams shaped by the V-profile catalog.

Each stage emits one batch per characteristic period.  Batch volumes are drawn
log-uniformly from the scaled volume band, split into records whose payload
sizes follow a log-normal shape, and stamped with Gaussian numeric readings.
"""

from __future__ import annotations

import enum
import heapq
import math
from collections import defaultdict
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, NamedTuple, Sequence

import numpy as np

from .model import (
    HOUR,
    NS_PER_S,
    LogRecord,
    Severity,
    StageId,
    vprofile_for_stage,
)

PAYLOAD_MEDIAN = 256
PAYLOAD_SIGMA = 0.5
MEAN_PAYLOAD = PAYLOAD_MEDIAN * math.exp(PAYLOAD_SIGMA**2 / 2)
MIN_PAYLOAD = 16
VALUE_MEAN = 100.0
VALUE_STD = 10.0
STD_FLOOR = 1e-9
BURST_FRACTION = 100  # a batch spans 1/100 of the lower velocity bound

STAGE_TOOLS: dict[StageId, tuple[str, str]] = {
    StageId.PLAN: ("plan-board", "plan-tracker"),
    StageId.CODE: ("code-vcs", "code-review"),
    StageId.BUILD: ("build-ci", "build-pkg"),
    StageId.TEST: ("test-unit", "test-integ"),
    StageId.RELEASE: ("release-mgr", "release-repo"),
    StageId.DEPLOY: ("deploy-orch", "deploy-cfg"),
    StageId.OPERATE: ("operate-infra", "operate-ctl"),
    StageId.MONITOR: ("monitor-metrics", "monitor-probe"),
}

_LETTERS = np.frombuffer(b"abcdefghijklmnopqrstuvwxyz", dtype=np.uint8)


@dataclass(frozen=True)
class GenConfig:
    seed: int = 0
    scale: float = 1e-6
    duration: int = HOUR * NS_PER_S
    stages: frozenset[StageId] = frozenset(StageId)
    error_rate: float = 0.01
    replica_rate: float = 0.0
    start_ns: int = 0
    release_interval: int = HOUR * NS_PER_S
    max_lateness: int = 0

    def __post_init__(self) -> None:
        if not self.scale > 0:
            raise ValueError("scale must be > 0")
        if self.duration <= 0:
            raise ValueError("duration must be > 0")
        for name in ("error_rate", "replica_rate"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must be in [0, 1]")
        if self.release_interval <= 0:
            raise ValueError("release_interval must be > 0")
        if self.max_lateness < 0:
            raise ValueError("max_lateness must be >= 0")
        object.__setattr__(self, "stages", frozenset(StageId(s) for s in self.stages))


class AnomalyKind(enum.Enum):
    OUTLIER_BURST = "OutlierBurst"
    ERROR_BURST = "ErrorBurst"
    REPLICAS = "Replicas"
    LATE_ARRIVAL = "LateArrival"


@dataclass(frozen=True)
class AnomalySpec:
    """One controlled disturbance.

    ``magnitude`` is the z-multiplier for outliers, the lateness in ns for
    late arrivals, and the maximum re-emission delay in ns for replicas
    (values below 1 mean one second).
    """

    kind: AnomalyKind
    start: int
    count: int
    magnitude: float = 0.0

    def __post_init__(self) -> None:
        if self.count < 1:
            raise ValueError("count must be >= 1")
        if self.start < 0:
            raise ValueError("start must be >= 0")


class Emission(NamedTuple):
    record: LogRecord
    emit_time: int


def stage_rng(seed: int, stage: StageId, *extra: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed & (2**64 - 1), int(stage), *extra]))


def volume_band(stage: StageId, scale: float) -> tuple[int, int]:
    """Integer per-period byte band for a stage at a given scale."""
    p = vprofile_for_stage(stage)
    lo = max(1, math.ceil(p.volume_min * scale - 1e-9))
    hi = math.floor(p.volume_max * scale + 1e-9)
    if hi < lo:
        raise ValueError(
            f"scale {scale} too small for {stage.label}: "
            f"per-period volume band [{p.volume_min * scale}, {p.volume_max * scale}] holds no whole byte"
        )
    return lo, hi


def batch_schedule(stage: StageId, cfg: GenConfig, rng: np.random.Generator) -> np.ndarray:
    """Batch start offsets (ns from cfg.start_ns), one per characteristic period."""
    p = vprofile_for_stage(stage)
    period = int(round(p.velocity_period * NS_PER_S))
    lo = int(p.velocity_band[0] * NS_PER_S)
    hi = int(p.velocity_band[1] * NS_PER_S)
    jitter = min(period - lo, hi - period)
    n = -(-cfg.duration // period)
    offsets = np.arange(n, dtype=np.int64) * period
    if jitter > 0:
        offsets = offsets + rng.integers(0, jitter, size=n)
    return offsets[offsets < cfg.duration]


def _batch_volumes(stage: StageId, cfg: GenConfig, n: int, rng: np.random.Generator) -> np.ndarray:
    lo, hi = volume_band(stage, cfg.scale)
    p = vprofile_for_stage(stage)
    # stratified log-uniform draw: one uniform per stratum, strata shuffled
    u = (rng.permutation(n) + rng.random(n)) / max(n, 1)
    log_lo, log_hi = math.log(p.volume_min), math.log(p.volume_max)
    raw = np.exp(log_lo + u * (log_hi - log_lo)) * cfg.scale
    floor = max(lo, min(MIN_PAYLOAD, hi))
    return np.clip(np.rint(raw), floor, hi).astype(np.int64)


def _split_volume(volume: int, rng: np.random.Generator) -> list[int]:
    n = max(1, int(round(volume / MEAN_PAYLOAD)))
    n = min(n, max(1, volume // MIN_PAYLOAD))
    if n == 1:
        return [volume]
    weights = rng.lognormal(math.log(PAYLOAD_MEDIAN), PAYLOAD_SIGMA, size=n)
    extra = volume - n * MIN_PAYLOAD
    shares = extra * weights / weights.sum()
    sizes = np.floor(shares).astype(np.int64)
    short = extra - int(sizes.sum())
    if short:
        order = np.argsort(-(shares - sizes), kind="stable")
        sizes[order[:short]] += 1
    return [int(s) + MIN_PAYLOAD for s in sizes]


def _payload(seq: int, size: int, rng: np.random.Generator) -> bytes:
    head = f"{seq:08x}".encode()
    if size <= len(head):
        return head[-size:] if size else b""
    body = _LETTERS[rng.integers(0, 26, size=size - len(head))].tobytes()
    return head + body


def _severity(rng: np.random.Generator, error_rate: float) -> Severity:
    if rng.random() < error_rate:
        return Severity.FATAL if rng.random() < 0.1 else Severity.ERROR
    x = rng.random()
    if x < 0.15:
        return Severity.DEBUG
    if x < 0.9:
        return Severity.INFO
    return Severity.WARNING


def correlation_id_for(ts: int, cfg: GenConfig) -> str:
    return f"rel-{ts // cfg.release_interval:06d}"


def generate_stream(stage: StageId, cfg: GenConfig) -> list[LogRecord]:
    stage = StageId(stage)
    if stage not in cfg.stages:
        raise ValueError(f"{stage.label} not enabled in config")
    profile = vprofile_for_stage(stage)
    volume_band(stage, cfg.scale)
    rng = stage_rng(cfg.seed, stage)
    offsets = batch_schedule(stage, cfg, rng)
    volumes = _batch_volumes(stage, cfg, len(offsets), rng)
    burst = max(1, int(profile.velocity_band[0] * NS_PER_S) // BURST_FRACTION)
    tools = STAGE_TOOLS[stage]

    records: list[LogRecord] = []
    seq = 0
    for offset, volume in zip(offsets.tolist(), volumes.tolist()):
        sizes = _split_volume(volume, rng)
        batch_ts = cfg.start_ns + offset
        for i, size in enumerate(sizes):
            ts = batch_ts + (i * burst) // len(sizes)
            payload = _payload(seq, size, rng)
            seq += 1
            rec = LogRecord(
                ts=ts,
                stage=stage,
                tool=tools[int(rng.integers(0, len(tools)))],
                severity=_severity(rng, cfg.error_rate),
                structuredness=profile.variety,
                correlation_id=correlation_id_for(ts, cfg),
                payload_size=len(payload),
                numeric_value=float(rng.normal(VALUE_MEAN, VALUE_STD)),
                payload=payload,
            )
            records.append(rec)
            if cfg.replica_rate and rng.random() < cfg.replica_rate:
                delay = int(rng.integers(1, burst + 1))
                records.append(replace(rec, ts=ts + delay))
    records.sort(key=lambda r: r.order_key)
    return records


# --- anomaly injection ---------------------------------------------------


def _key(r: LogRecord) -> tuple[StageId, str]:
    return (r.stage, r.tool)


def _inject(
    stream: Sequence[LogRecord], spec: AnomalySpec, seed: int, window_n: int
) -> tuple[list[LogRecord], list[int], list[int]]:
    """Returns (output, labels, origin) where origin[i] is the input index or -1."""
    if not stream:
        raise ValueError("cannot inject anomalies into an empty stream")
    if not stream[0].ts <= spec.start <= stream[-1].ts:
        raise ValueError(
            f"anomaly start {spec.start} outside stream span [{stream[0].ts}, {stream[-1].ts}]"
        )
    rng = np.random.default_rng(np.random.SeedSequence([seed & (2**64 - 1), 0xA5, list(AnomalyKind).index(spec.kind)]))
    out = list(stream)
    origin = list(range(len(stream)))

    if spec.kind is AnomalyKind.OUTLIER_BURST:
        history: dict[tuple, list[float]] = defaultdict(list)
        labels = []
        for i, r in enumerate(stream):
            hist = history[_key(r)]
            if r.ts >= spec.start and len(labels) < spec.count and len(hist) >= 2 * window_n:
                window = hist[-window_n:]
                mean = math.fsum(window) / window_n
                std = math.sqrt(math.fsum((x - mean) ** 2 for x in window) / (window_n - 1))
                value = mean + spec.magnitude * max(std, STD_FLOOR)
                out[i] = replace(r, numeric_value=value)
                labels.append(i)
            hist.append(r.numeric_value)
        if len(labels) < spec.count:
            raise ValueError(
                f"only {len(labels)} records eligible for OutlierBurst (need {spec.count}; "
                f"eligibility requires {2 * window_n} prior values in the same stage/tool)"
            )
        return out, labels, origin

    if spec.kind is AnomalyKind.ERROR_BURST:
        labels = []
        for i, r in enumerate(stream):
            if len(labels) == spec.count:
                break
            if r.ts >= spec.start and not r.severity.is_error_class:
                out[i] = replace(r, severity=Severity.ERROR)
                labels.append(i)
        if len(labels) < spec.count:
            raise ValueError(f"only {len(labels)} records eligible for ErrorBurst")
        return out, labels, origin

    if spec.kind is AnomalyKind.REPLICAS:
        candidates = [i for i, r in enumerate(stream) if r.ts >= spec.start]
        if len(candidates) < spec.count:
            raise ValueError(f"only {len(candidates)} records eligible for Replicas")
        picked = sorted(rng.choice(candidates, size=spec.count, replace=False).tolist())
        max_delay = int(spec.magnitude) if spec.magnitude >= 1 else NS_PER_S
        delays = rng.integers(1, max_delay + 1, size=spec.count).tolist()
        tagged = [(r.order_key, 0, i, r) for i, r in enumerate(stream)]
        for j, (i, d) in enumerate(zip(picked, delays)):
            rep = replace(stream[i], ts=stream[i].ts + d)
            tagged.append((rep.order_key, 1, len(stream) + j, rep))
        tagged.sort(key=lambda t: t[:3])
        out = [t[3] for t in tagged]
        origin = [t[2] if t[1] == 0 else -1 for t in tagged]
        labels = [k for k, t in enumerate(tagged) if t[1] == 1]
        return out, labels, origin

    # LateArrival: move a record behind everything with ts <= ts + lateness
    lateness = int(spec.magnitude)
    if lateness <= 0:
        raise ValueError("LateArrival magnitude (lateness ns) must be > 0")
    moved: list[int] = []
    protected: set[int] = set()
    n = len(stream)
    for i, r in enumerate(stream):
        if len(moved) == spec.count:
            break
        if r.ts < spec.start or i in protected:
            continue
        # first strictly later record; it must stay put so the move creates an inversion
        witness = next((j for j in range(i + 1, n) if stream[j].ts > r.ts), None)
        if witness is None or stream[witness].ts > r.ts + lateness:
            continue
        moved.append(i)
        protected.add(witness)
    if len(moved) < spec.count:
        raise ValueError(f"only {len(moved)} records can be made late by {lateness} ns")
    moved_set = set(moved)
    keyed = [
        ((r.ts + lateness, 1) if i in moved_set else (r.ts, 0), i) for i, r in enumerate(stream)
    ]
    keyed.sort()
    origin = [i for _, i in keyed]
    out = [stream[i] for i in origin]
    labels = [k for k, i in enumerate(origin) if i in moved_set]
    return out, labels, origin


def inject_anomalies(
    stream: Sequence[LogRecord], spec: AnomalySpec, seed: int, *, window_n: int = 50
) -> tuple[list[LogRecord], list[int]]:
    """Apply one anomaly; returns the modified stream and the indices of touched records."""
    out, labels, _ = _inject(stream, spec, seed, window_n)
    return out, labels


# --- multiplexing --------------------------------------------------------


@dataclass
class GroundTruth:
    """Injected-anomaly counts per stage, keyed by anomaly kind."""

    counts: dict[StageId, dict[AnomalyKind, int]] = field(default_factory=dict)

    def total(self, kind: AnomalyKind) -> int:
        return sum(c.get(kind, 0) for c in self.counts.values())


def emit_stage(
    stage: StageId,
    cfg: GenConfig,
    anomalies: Sequence[AnomalySpec] = (),
    *,
    window_n: int = 50,
    truth: GroundTruth | None = None,
) -> list[Emission]:
    """One stage's emission sequence, nondecreasing in emit_time."""
    stream = generate_stream(stage, cfg)
    lateness = [0] * len(stream)
    for j, spec in enumerate(anomalies):
        stream, labels, origin = _inject(stream, spec, cfg.seed ^ (int(stage) << 8) ^ j, window_n)
        lateness = [lateness[o] if o >= 0 else 0 for o in origin]
        if spec.kind is AnomalyKind.LATE_ARRIVAL:
            for k in labels:
                lateness[k] = int(spec.magnitude)
        if truth is not None:
            per = truth.counts.setdefault(StageId(stage), {})
            per[spec.kind] = per.get(spec.kind, 0) + len(labels)
    if cfg.max_lateness:
        jitter = stage_rng(cfg.seed, stage, 0x1A7E).integers(0, cfg.max_lateness + 1, size=len(stream))
        lateness = [a + int(b) for a, b in zip(lateness, jitter)]
    keyed = sorted(range(len(stream)), key=lambda i: (stream[i].ts + lateness[i], i))
    return [Emission(stream[i], stream[i].ts + lateness[i]) for i in keyed]


def emit_streams(
    cfg: GenConfig,
    anomalies: Mapping[StageId, Sequence[AnomalySpec]] | None = None,
    *,
    window_n: int = 50,
) -> tuple[dict[StageId, list[Emission]], GroundTruth]:
    anomalies = anomalies or {}
    truth = GroundTruth()
    streams = {
        stage: emit_stage(stage, cfg, anomalies.get(stage, ()), window_n=window_n, truth=truth)
        for stage in sorted(cfg.stages)
    }
    return streams, truth


def multiplex(sequences: Iterable[Sequence[Emission]]) -> list[Emission]:
    """Interleave emission sequences by emit_time; ties by (ts, stage, tool)."""
    return list(
        heapq.merge(*sequences, key=lambda e: (e.emit_time, e.record.order_key))
    )


def emit_multiplexed(
    cfg: GenConfig,
    anomalies: Mapping[StageId, Sequence[AnomalySpec]] | None = None,
) -> list[Emission]:
    if not cfg.stages:
        raise ValueError("no stages enabled")
    streams, _ = emit_streams(cfg, anomalies)
    return multiplex(streams.values())


# --- conformance ---------------------------------------------------------


@dataclass(frozen=True)
class VConformance:
    """Measured per-period volume and batch spacing against the scaled profile."""

    stage: StageId
    batches: int
    mean_volume: float
    volume_band: tuple[int, int]
    spacing_min: float | None
    spacing_max: float | None
    velocity_band: tuple[float, float]
    tolerance: float = 0.2

    @property
    def volume_ok(self) -> bool:
        lo, hi = self.volume_band
        return self.batches > 0 and (1 - self.tolerance) * lo <= self.mean_volume <= (1 + self.tolerance) * hi

    @property
    def spacing_ok(self) -> bool:
        if self.spacing_min is None:
            return True
        lo, hi = self.velocity_band
        return lo <= self.spacing_min and self.spacing_max <= hi

    def to_dict(self) -> dict:
        return {
            "stage": self.stage.label,
            "batches": self.batches,
            "mean_volume": self.mean_volume,
            "volume_band": list(self.volume_band),
            "spacing_min_s": self.spacing_min,
            "spacing_max_s": self.spacing_max,
            "velocity_band_s": list(self.velocity_band),
            "volume_ok": self.volume_ok,
            "spacing_ok": self.spacing_ok,
        }


def measure_conformance(records: Sequence[LogRecord], stage: StageId, cfg: GenConfig) -> VConformance:
    """Split a stage's records into batches at gaps of at least half the minimum
    period, then compare mean batch volume and batch spacing (seconds) with the profile."""
    p = vprofile_for_stage(stage)
    band = volume_band(stage, cfg.scale)
    gap = p.velocity_band[0] * NS_PER_S / 2
    starts: list[int] = []
    volumes: list[int] = []
    prev = None
    for r in sorted(records, key=lambda r: r.ts):
        if prev is None or r.ts - prev >= gap:
            starts.append(r.ts)
            volumes.append(0)
        volumes[-1] += r.payload_size
        prev = r.ts
    spacing = np.diff(starts) / NS_PER_S
    return VConformance(
        stage=StageId(stage),
        batches=len(volumes),
        mean_volume=float(np.mean(volumes)) if volumes else 0.0,
        volume_band=band,
        spacing_min=float(spacing.min()) if len(spacing) else None,
        spacing_max=float(spacing.max()) if len(spacing) else None,
        velocity_band=(float(p.velocity_band[0]), float(p.velocity_band[1])),
    )
