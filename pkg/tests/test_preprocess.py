import pytest
from hypothesis import given
from hypothesis import strategies as st

from logflow.model import Severity, StageId
from logflow.preprocess import (
    InvalidRecordError,
    Outcome,
    Preprocessor,
    QualityFlag,
    fuse,
    fuse_all,
    unify,
)

from conftest import rec, records


def u(ts, stage=StageId.BUILD, severity=Severity.INFO, cid="rel-1", value=1.0):
    return unify(rec(ts, stage=stage, severity=severity, cid=cid, value=value, payload=f"{ts}".encode()), "logflow/v1")


def test_unify_valid():
    r = rec(3)
    out = unify(r, "logflow/v1")
    assert out.quality_flags == frozenset() and out.record == r and out.ingest_ts == 3


def test_unify_invalid():
    with pytest.raises(InvalidRecordError) as exc:
        unify(rec(-1, tool=""), "logflow/v1")
    assert len(exc.value.violations) == 2


def test_late_flag_from_side_channel():
    p = Preprocessor()
    out = p.process([rec(1)], late=[rec(0, payload=b"late")], ingest_ts=10)
    assert [QualityFlag.LATE_ARRIVAL in x.quality_flags for x in out] == [False, True]


def test_fuse_success():
    f = fuse([u(1, StageId.BUILD), u(2, StageId.TEST)])
    assert f.outcome is Outcome.SUCCESS
    assert f.stages == {StageId.BUILD, StageId.TEST}


def test_fuse_failure():
    f = fuse([u(1, StageId.BUILD), u(2, StageId.TEST, severity=Severity.ERROR)])
    assert f.outcome is Outcome.FAILURE


def test_fuse_mixed_and_unknown():
    assert fuse([u(1, StageId.BUILD), u(2, StageId.TEST, severity=Severity.WARNING)]).outcome is Outcome.MIXED
    assert fuse([u(1, StageId.PLAN), u(2, StageId.CODE)]).outcome is Outcome.UNKNOWN


def test_fuse_ten_records_four_stages():
    stages = [StageId.BUILD, StageId.TEST, StageId.DEPLOY, StageId.MONITOR]
    rs = [u(100 - 7 * i, stages[i % 4], value=float(i)) for i in range(10)]
    f = fuse(rs)
    assert f.record_count == 10
    assert sum(s.n for s in f.per_stage.values()) == 10
    assert (f.first_ts, f.last_ts) == (min(r.ts for r in rs), max(r.ts for r in rs))
    for stage in stages:
        vals = [r.record.numeric_value for r in rs if r.stage == stage]
        st_ = f.per_stage[stage]
        assert (st_.n, st_.min, st_.max) == (len(vals), min(vals), max(vals))
        assert st_.mean == pytest.approx(sum(vals) / len(vals))


def test_fuse_errors():
    with pytest.raises(ValueError):
        fuse([u(1)])
    with pytest.raises(ValueError, match="mixed"):
        fuse([u(1, cid="a"), u(2, cid="b")])


def test_fuse_order_independent():
    rs = [u(i, [StageId.BUILD, StageId.TEST][i % 2], value=0.1 * i) for i in range(9)]
    assert fuse(rs) == fuse(rs[::-1])


def test_preprocessor_cleansing_and_flags():
    p = Preprocessor()
    a = rec(1, cid="rel-1")
    out1 = p.process([a, a, rec(2, size=9)], ingest_ts=5, deduplicated=True)
    assert out1 == [unify(a, "logflow/v1", ingest_ts=5, flags={QualityFlag.DEDUPLICATED})]
    assert p.dropped == 2
    out2 = p.process([rec(3, cid="rel-1")], ingest_ts=6)
    assert out2[0].quality_flags == {QualityFlag.FUSED}
    assert [f.correlation_id for f in p.fused()] == ["rel-1"]


def test_fuse_all_skips_singletons():
    rs = [u(1, cid="a"), u(2, cid="a"), u(3, cid="b")]
    assert [f.correlation_id for f in fuse_all(rs)] == ["a"]


@given(st.lists(records, unique_by=lambda r: (r.ts, r.stage, r.tool, r.severity, r.correlation_id, r.payload), max_size=30))
def test_property_unify_injective(rs):
    unified = [unify(r, "logflow/v1") for r in rs]
    assert len(set(unified)) == len(set(rs))
