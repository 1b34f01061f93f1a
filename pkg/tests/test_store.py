import os

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from logflow.model import DAY, MONTH, NS_PER_S, WEEK, Severity, StageId
from logflow.preprocess import unify
from logflow.store import ArchiveError, Store, default_retention

from conftest import rec

H = 3600 * NS_PER_S


def u(ts, stage=StageId.MONITOR, severity=Severity.INFO, payload=None):
    return unify(rec(ts, stage=stage, severity=severity, payload=payload), "logflow/v1")


def random_unified(n, seed):
    rng = np.random.default_rng(seed)
    return [
        u(int(rng.integers(0, 10**6)), StageId(int(rng.integers(0, 8))), Severity(int(rng.integers(1, 6))), payload=str(i).encode())
        for i in range(n)
    ]


@pytest.fixture(params=["memory", "disk"])
def store(request, tmp_path):
    return Store(None if request.param == "memory" else tmp_path / "store")


def test_store_and_query_full_range(store):
    rs = random_unified(100, 0)
    store.store(rs)
    assert len(store.query(0, 10**6)) == 100


def test_query_matches_linear_scan(store):
    rs = random_unified(500, 1)
    store.store(rs)
    for t1, t2 in [(0, 10), (1000, 500_000), (250_000, 250_001), (0, 10**6)]:
        for stages in (None, {StageId.BUILD, StageId.TEST}):
            for level in (None, Severity.ERROR):
                got = store.query(t1, t2, stages, level)
                want = sorted(
                    (r for r in rs if t1 <= r.ts < t2 and (stages is None or r.stage in stages)
                     and (level is None or r.severity >= level)),
                    key=lambda r: (r.order_key, r.record.payload),
                )
                assert sorted(got, key=lambda r: (r.order_key, r.record.payload)) == want


def test_inverted_range(store):
    with pytest.raises(ValueError):
        store.query(10, 5)


def test_restore_is_update(store):
    r = u(5)
    assert store.store([r]) == 0
    assert store.store([r]) == 1
    assert len(store) == 1


def test_retention_from_volatility():
    ret = default_retention()
    assert ret[StageId.BUILD] == DAY * NS_PER_S
    assert ret[StageId.PLAN] == WEEK * NS_PER_S
    assert ret[StageId.TEST] == WEEK * NS_PER_S
    assert ret[StageId.RELEASE] == MONTH * NS_PER_S


def test_nothing_expired(store):
    store.store(random_unified(50, 2))
    assert store.archive_tick(10**6).archived == 0


def test_build_archived_plan_kept(store):
    build = [u(i * H, StageId.BUILD, payload=b"b%d" % i) for i in range(3)]
    plan = [u(i * H, StageId.PLAN, payload=b"p%d" % i) for i in range(3)]
    store.store(build + plan)
    now = 2 * DAY * NS_PER_S + 5 * H  # Build TTL (1 day) exceeded, Plan TTL (1 week) not
    result = store.archive_tick(now)
    assert result.archived == 3
    assert all(s.startswith("archive-Build-") for s in result.segments)
    hot = store.query(0, now)
    assert sorted(hot, key=lambda r: r.order_key) == sorted(plan, key=lambda r: r.order_key)
    assert store.query_archive(0, now) == sorted(build, key=lambda r: r.order_key)
    assert len(store.query(0, now, include_archive=True)) == 6


def test_partition_after_tick(store):
    rs = random_unified(300, 3)
    store.store(rs)
    store.retention = {s: 400_000 for s in StageId}
    store.archive_tick(10**6)
    hot = {(r.record.payload, r.ts) for r in store.hot_records()}
    arch = {(r.record.payload, r.ts) for r in store.archived_records()}
    assert not hot & arch
    assert hot | arch == {(r.record.payload, r.ts) for r in rs}


def test_archive_unwritable_is_atomic(tmp_path):
    s = Store(tmp_path / "st", segment_len=H)
    rs = [u(i * H, StageId.BUILD, payload=b"%d" % i) for i in range(4)]
    s.store(rs)
    # first segment writes fine; second segment path is a directory -> write fails
    first = tmp_path / "st" / "archive" / "archive-Build-0.ndjson"
    (tmp_path / "st" / "archive" / f"archive-Build-{H}.ndjson").mkdir()
    before = s.hot_records()
    with pytest.raises(ArchiveError):
        s.archive_tick(10 * DAY * NS_PER_S)
    assert s.hot_records() == before
    assert not first.exists() or first.read_bytes() == b""


def test_archive_dir_replaced_by_file(tmp_path):
    s = Store(tmp_path / "st")
    s.store([u(0, StageId.BUILD)])
    arch = tmp_path / "st" / "archive"
    arch.rmdir()
    arch.write_text("not a dir")
    with pytest.raises(ArchiveError):
        s.archive_tick(10 * DAY * NS_PER_S)
    assert len(s) == 1


def test_reopen_from_wal(tmp_path):
    s = Store(tmp_path / "st")
    rs = random_unified(100, 4)
    s.store(rs)
    s.retention = {st_: 500_000 for st_ in StageId}
    s.archive_tick(10**6)
    hot = s.hot_records()
    again = Store.open(tmp_path / "st")
    assert again.hot_records() == hot
    assert again.archived_records() == s.archived_records()


def test_segment_len_validation():
    with pytest.raises(ValueError):
        Store(segment_len=0)


@given(st.lists(st.integers(0, 1000), max_size=40), st.integers(0, 1000), st.integers(0, 1000))
def test_property_query_window(ts, a, b):
    s = Store()
    rs = [u(t, payload=str(i).encode()) for i, t in enumerate(ts)]
    s.store(rs)
    lo, hi = min(a, b), max(a, b)
    assert len(s.query(lo, hi)) == sum(lo <= t < hi for t in ts)
