import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from logflow.filtering import (
    FilterConfig,
    RecordFilter,
    drop_invalid,
    drop_replicas,
    filter_outliers,
    rolling_stats,
)
from logflow.workload import AnomalyKind, AnomalySpec, inject_anomalies

from conftest import rec
from oracles import filter_chain


def gaussian(n, seed=0, tools=("a",)):
    rng = np.random.default_rng(seed)
    return [
        rec(i * 1000, tool=tools[i % len(tools)], value=float(rng.normal(100, 10)), payload=f"{seed}-{i}".encode())
        for i in range(n)
    ]


def test_rolling_constant():
    stats = rolling_stats([rec(i, value=5.0) for i in range(10)], window_n=4)
    for s in stats[4:]:
        assert (s.mean, s.std, s.warmup) == (5.0, 0.0, False)


def test_rolling_one_to_ten():
    stats = rolling_stats([rec(i, value=float(i + 1)) for i in range(10)], window_n=3)
    s = stats[3]  # value 4, window {1, 2, 3}
    assert s.mean == 2 and s.std == 1 and not s.warmup


def test_rolling_warmup_flags():
    stats = rolling_stats([rec(i, value=float(i)) for i in range(10)], window_n=4)
    assert [s.warmup for s in stats] == [True] * 4 + [False] * 6


def test_rolling_per_key():
    stream = [rec(i, tool="ab"[i % 2], value=float(i % 2)) for i in range(20)]
    stats = rolling_stats(stream, window_n=3)
    assert all(s.mean == r.numeric_value for s, r in zip(stats[6:], stream[6:]))


def test_no_outliers_identity():
    stream = [rec(i, value=100.0 + (i % 3)) for i in range(200)]
    kept, dropped = filter_outliers(stream, FilterConfig())
    assert dropped == [] and kept == stream


def test_injected_outliers_dropped():
    stream = gaussian(500)
    out, labels = inject_anomalies(stream, AnomalySpec(AnomalyKind.OUTLIER_BURST, 0, 8, magnitude=6), seed=0)
    _, dropped = filter_outliers(out, FilterConfig(z_threshold=3))
    assert {out[i] for i in labels} <= set(dropped)


def test_huge_threshold_keeps_all():
    stream = gaussian(500)
    out, _ = inject_anomalies(stream, AnomalySpec(AnomalyKind.OUTLIER_BURST, 0, 8, magnitude=6), seed=0)
    _, dropped = filter_outliers(out, FilterConfig(z_threshold=1e300))
    assert dropped == []


def test_burst_does_not_mask_itself():
    # 30 consecutive outliers: each judged against kept history only
    stream = gaussian(300)
    out, labels = inject_anomalies(stream, AnomalySpec(AnomalyKind.OUTLIER_BURST, 0, 30, magnitude=6), seed=0)
    _, dropped = filter_outliers(out, FilterConfig())
    assert {out[i] for i in labels} <= set(dropped)


def test_distinct_keys_no_replicas():
    stream = gaussian(100)
    kept, dropped = drop_replicas(stream, FilterConfig())
    assert dropped == []


def test_five_replicas_dropped():
    stream = gaussian(300)
    out, labels = inject_anomalies(stream, AnomalySpec(AnomalyKind.REPLICAS, 0, 5, magnitude=5000), seed=3)
    _, dropped = drop_replicas(out, FilterConfig(replica_horizon=5000))
    assert dropped == [out[i] for i in labels]


def test_replica_after_horizon_kept():
    a = rec(0, payload=b"x")
    b = rec(61, payload=b"x")
    kept, dropped = drop_replicas([a, b], FilterConfig(replica_horizon=60))
    assert kept == [a, b] and dropped == []
    kept, dropped = drop_replicas([a, rec(60, payload=b"x")], FilterConfig(replica_horizon=60))
    assert len(dropped) == 1


def test_drop_invalid():
    good, bad = rec(1), rec(2, size=99)
    assert drop_invalid([good, bad]) == ([good], [bad])


def test_config_validation():
    with pytest.raises(ValueError):
        FilterConfig(window_n=1)
    with pytest.raises(ValueError):
        FilterConfig(z_threshold=0)


def test_chain_counts_and_state_across_batches():
    stream = gaussian(600, tools=("a", "b"))
    out, _ = inject_anomalies(stream, AnomalySpec(AnomalyKind.OUTLIER_BURST, 0, 6, magnitude=8), seed=1)
    out, _ = inject_anomalies(out, AnomalySpec(AnomalyKind.REPLICAS, 0, 6, magnitude=900), seed=2)
    cfg = FilterConfig(replica_horizon=1000)
    whole = RecordFilter(cfg)
    kept_whole, dropped_whole = whole.apply(out)
    chunked = RecordFilter(cfg)
    kept_chunks, dropped_chunks = [], []
    for k in range(0, len(out), 37):
        kept, dropped = chunked.apply(out[k : k + 37])
        kept_chunks += kept
        dropped_chunks += dropped
    assert kept_whole == kept_chunks and dropped_whole == dropped_chunks
    assert whole.counts.total == len(dropped_whole)


def test_filter_idempotent():
    stream = gaussian(500)
    out, _ = inject_anomalies(stream, AnomalySpec(AnomalyKind.OUTLIER_BURST, 0, 5, magnitude=6), seed=0)
    kept, _ = RecordFilter(FilterConfig()).apply(out)
    again, dropped = RecordFilter(FilterConfig()).apply(kept)
    assert again == kept and dropped == []


@pytest.mark.parametrize("seed", range(10))
def test_chain_matches_oracle(seed):
    stream = gaussian(400, seed=seed, tools=("a", "b", "c"))
    stream[7] = rec(stream[7].ts, size=3)
    out, _ = inject_anomalies(stream, AnomalySpec(AnomalyKind.OUTLIER_BURST, 0, 4, magnitude=6), seed=seed)
    out, _ = inject_anomalies(out, AnomalySpec(AnomalyKind.REPLICAS, 0, 4, magnitude=2000), seed=seed)
    cfg = FilterConfig(window_n=20, z_threshold=3, replica_horizon=2000)
    _, dropped = RecordFilter(cfg).apply(out)
    want = filter_chain(out, 20, 3, 2000)
    assert [(reason, r) for reason, r in dropped] == [(want[i], out[i]) for i in sorted(want)]


@given(
    st.lists(st.floats(-1e6, 1e6, allow_nan=False), min_size=0, max_size=120),
    st.integers(2, 10),
    st.floats(0.5, 5),
)
def test_property_outlier_matches_oracle(values, window_n, z):
    stream = [rec(i, value=v, payload=str(i).encode()) for i, v in enumerate(values)]
    _, dropped = filter_outliers(stream, FilterConfig(window_n=window_n, z_threshold=z))
    want = filter_chain(stream, window_n, z, horizon=0)
    assert [r.ts for r in dropped] == sorted(want)


@given(st.lists(st.tuples(st.integers(0, 4), st.integers(0, 50)), max_size=80), st.integers(0, 100))
def test_property_replicas_match_oracle(items, horizon):
    ts = 0
    stream = []
    for content, gap in items:
        ts += gap
        stream.append(rec(ts, payload=bytes([content])))
    _, dropped = drop_replicas(stream, FilterConfig(replica_horizon=horizon))
    want = filter_chain(stream, 10**9, math.inf, horizon)
    assert dropped == [stream[i] for i in sorted(want)]
