"""Domain types shared by every pipeline step, plus the per-stage V-profile catalog."""

from __future__ import annotations

import enum
import functools
import hashlib
from dataclasses import dataclass

NS_PER_S = 1_000_000_000

KB = 1_000
MB = 1_000_000
GB = 1_000_000_000

MINUTE = 60
HOUR = 3600
DAY = 86400
WEEK = 604800
MONTH = 2592000


class StageId(enum.IntEnum):
    PLAN = 0
    CODE = 1
    BUILD = 2
    TEST = 3
    RELEASE = 4
    DEPLOY = 5
    OPERATE = 6
    MONITOR = 7

    @property
    def label(self) -> str:
        return self.name.capitalize()

    @classmethod
    def parse(cls, text: str) -> StageId:
        try:
            return cls[text.upper()]
        except KeyError:
            raise ValueError(f"unknown stage {text!r}") from None


class Severity(enum.IntEnum):
    DEBUG = 1
    INFO = 2
    WARNING = 3
    ERROR = 4
    FATAL = 5

    @property
    def is_error_class(self) -> bool:
        return self >= Severity.ERROR

    @property
    def label(self) -> str:
        return self.name.capitalize()

    @classmethod
    def parse(cls, text: str) -> Severity:
        try:
            return cls[text.upper()]
        except KeyError:
            raise ValueError(f"unknown severity {text!r}") from None


class Structuredness(enum.Enum):
    STRUCTURED = "Structured"
    SEMI_STRUCTURED = "SemiStructured"
    UNSTRUCTURED = "Unstructured"


@functools.total_ordering
class Rating(enum.Enum):
    """Qualitative rating quantized onto [0, 1]."""

    LOW = 0.25
    MEDIUM = 0.5
    MEDIUM_HIGH = 0.625
    HIGH = 0.75
    POOR = 0.25  # alias of LOW

    @property
    def weight(self) -> float:
        return self.value

    def __lt__(self, other: object) -> bool:
        if not isinstance(other, Rating):
            return NotImplemented
        return self.value < other.value


# Textual velocity -> inter-batch period band in seconds.
VELOCITY_BANDS: dict[str, tuple[int, int]] = {
    "Seconds/Minutes": (1, MINUTE),
    "Minutes": (MINUTE, HOUR),
    "Hours": (HOUR, DAY),
    "Week/Days": (DAY, WEEK),
    "Week": (WEEK, WEEK),
}

# Textual volatility -> retention TTL in seconds.
VOLATILITY_TTLS: dict[str, int] = {
    "Hours": DAY,
    "Days": WEEK,
    "Week/Days": WEEK,
    "Week/Month": MONTH,
}


@dataclass(frozen=True)
class VProfile:
    """Ten V-metric ratings of one stage, made computable."""

    stage: StageId
    volume_min: int
    volume_max: int
    velocity_band: tuple[float, float]
    variety: Structuredness
    variability: Rating
    veracity: Rating
    validity: Rating
    vulnerability: Rating
    volatility_ttl: int
    visualization: Rating
    value: Rating

    @property
    def velocity_period(self) -> float:
        lo, hi = self.velocity_band
        return (lo + hi) / 2

    def __post_init__(self) -> None:
        if self.volume_min > self.volume_max:
            raise ValueError("volume_min > volume_max")
        if self.velocity_period <= 0:
            raise ValueError("velocity_period must be positive")
        if self.volatility_ttl <= 0:
            raise ValueError("volatility_ttl must be positive")


_S, _SS, _U = Structuredness.STRUCTURED, Structuredness.SEMI_STRUCTURED, Structuredness.UNSTRUCTURED
_L, _M, _MH, _H, _P = Rating.LOW, Rating.MEDIUM, Rating.MEDIUM_HIGH, Rating.HIGH, Rating.POOR

# stage: (volume, velocity, variety, variability, veracity, validity,
#         vulnerability, volatility, visualization, value)
_TABLE = {
    StageId.PLAN: ((10 * KB, 1 * GB), "Week", _U, _MH, _H, _L, _L, "Week/Days", _P, _H),
    StageId.CODE: ((1 * MB, 100 * MB), "Hours", _SS, _H, _H, _H, _M, "Hours", _P, _H),
    StageId.BUILD: ((1 * GB, 10 * GB), "Hours", _SS, _M, _L, _L, _M, "Hours", _H, _H),
    StageId.TEST: ((10 * KB, 1 * GB), "Minutes", _S, _M, _H, _H, _M, "Days", _H, _M),
    StageId.RELEASE: ((1 * GB, 10 * GB), "Week", _U, _H, _M, _M, _M, "Week/Month", _M, _H),
    StageId.DEPLOY: ((1 * MB, 100 * MB), "Week", _U, _H, _M, _M, _M, "Week/Month", _M, _H),
    StageId.OPERATE: ((10 * KB, 1 * GB), "Hours", _SS, _H, _H, _H, _M, "Hours", _M, _H),
    StageId.MONITOR: ((10 * KB, 1 * GB), "Seconds/Minutes", _SS, _H, _H, _H, _H, "Hours", _H, _H),
}


def _build_catalog() -> dict[StageId, VProfile]:
    catalog = {}
    for stage, row in _TABLE.items():
        (vmin, vmax), velocity, variety, variab, verac, valid, vuln, volat, vis, value = row
        catalog[stage] = VProfile(
            stage=stage,
            volume_min=vmin,
            volume_max=vmax,
            velocity_band=VELOCITY_BANDS[velocity],
            variety=variety,
            variability=variab,
            veracity=verac,
            validity=valid,
            vulnerability=vuln,
            volatility_ttl=VOLATILITY_TTLS[volat],
            visualization=vis,
            value=value,
        )
    return catalog


CATALOG: dict[StageId, VProfile] = _build_catalog()


def vprofile_for_stage(stage: StageId) -> VProfile:
    return CATALOG[StageId(stage)]


@dataclass(frozen=True)
class LogRecord:
    """One timestamped telemetry event emitted by one toolchain tool.

    Construction does not enforce the invariants; use :func:`validate_record`
    so that malformed input can be observed and filtered instead of crashing.
    """

    ts: int
    stage: StageId
    tool: str
    severity: Severity
    structuredness: Structuredness
    correlation_id: str
    payload_size: int
    numeric_value: float
    payload: bytes

    @property
    def order_key(self) -> tuple[int, int, str]:
        return (self.ts, int(self.stage), self.tool)


def dedup_key(record: LogRecord) -> bytes:
    """Content identity of a record, excluding its timestamp."""
    h = hashlib.blake2b(digest_size=16)
    for part in (
        str(int(record.stage)).encode(),
        record.tool.encode("utf-8"),
        str(int(record.severity)).encode(),
        record.correlation_id.encode("utf-8"),
    ):
        h.update(len(part).to_bytes(4, "big"))
        h.update(part)
    h.update(len(record.payload).to_bytes(8, "big"))
    h.update(record.payload)
    return h.digest()


def validate_record(record: LogRecord) -> list[str]:
    violations = []
    if record.payload_size != len(record.payload):
        violations.append(
            f"payload_size: {record.payload_size} != len(payload) {len(record.payload)}"
        )
    if record.ts < 0:
        violations.append(f"ts: negative timestamp {record.ts}")
    if not record.tool:
        violations.append("tool: empty tool name")
    return violations


@dataclass(frozen=True)
class Snapshot:
    """All records with ``window_start <= ts < window_start + window_len``."""

    window_start: int
    window_len: int
    records: tuple[LogRecord, ...] = ()

    @property
    def window_end(self) -> int:
        return self.window_start + self.window_len

    def violations(self) -> list[str]:
        out = []
        for i, r in enumerate(self.records):
            if not self.window_start <= r.ts < self.window_end:
                out.append(f"records[{i}]: ts {r.ts} outside window")
        for i in range(1, len(self.records)):
            if self.records[i].order_key < self.records[i - 1].order_key:
                out.append(f"records[{i}]: out of order")
        return out
