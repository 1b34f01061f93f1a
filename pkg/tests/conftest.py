from __future__ import annotations

import hypothesis.strategies as st
import pytest
from hypothesis import settings

from logflow.model import LogRecord, Severity, StageId, Structuredness

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


def rec(
    ts: int = 0,
    stage: StageId = StageId.MONITOR,
    tool: str = "t",
    severity: Severity = Severity.INFO,
    value: float = 100.0,
    payload: bytes | None = None,
    cid: str = "rel-000000",
    size: int | None = None,
) -> LogRecord:
    if payload is None:
        payload = f"p{ts}".encode()
    return LogRecord(
        ts=ts,
        stage=stage,
        tool=tool,
        severity=severity,
        structuredness=Structuredness.SEMI_STRUCTURED,
        correlation_id=cid,
        payload_size=len(payload) if size is None else size,
        numeric_value=value,
        payload=payload,
    )


finite = st.floats(allow_nan=False, allow_infinity=False, min_value=-1e12, max_value=1e12)

records = st.builds(
    LogRecord,
    ts=st.integers(0, 2**62),
    stage=st.sampled_from(list(StageId)),
    tool=st.text(min_size=1, max_size=12),
    severity=st.sampled_from(list(Severity)),
    structuredness=st.sampled_from(list(Structuredness)),
    correlation_id=st.text(max_size=12),
    payload_size=st.just(0),
    numeric_value=finite,
    payload=st.binary(max_size=64),
).map(lambda r: LogRecord(**{**r.__dict__, "payload_size": len(r.payload)}))


# acceptance results, printed at the end of the session
ACCEPTANCE: dict[str, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(ACCEPTANCE, key=lambda s: int(s[2:])):
        ok, detail = ACCEPTANCE[name]
        terminalreporter.write_line(f"{name} {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture
def acceptance():
    return ACCEPTANCE
