import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from logflow.alerting import AlertEvent
from logflow.analytics import (
    DEFAULT_PRESCRIPTIONS,
    CorrelationResult,
    correlate_stages,
    describe,
    ewma,
    forecast_rate,
    lagged_correlation,
    pearson,
    prescribe,
    prescription_from_dict,
    release_outcomes,
    release_success_probability,
)
from logflow.model import Severity, StageId
from logflow.preprocess import unify
from logflow.store import Store

from conftest import rec
from oracles import ewma_closed_form, pearson_two_pass, rel_close

W = 1000


def u(ts, stage, severity=Severity.INFO, cid="rel-0", i=0):
    return unify(rec(ts, stage=stage, severity=severity, cid=cid, payload=f"{ts}-{i}".encode()), "logflow/v1")


def test_describe_empty():
    rep = describe(Store(), 0, 100)
    assert (rep.total_records, rep.total_errors, rep.total_volume, rep.error_rate) == (0, 0, 0, 0.0)


def test_describe_error_rate():
    s = Store()
    s.store([u(i, StageId.TEST, Severity.ERROR if i % 10 == 0 else Severity.INFO) for i in range(50)])
    rep = describe(s, 0, 50)
    assert rep.total_records == 50 and rep.total_errors == 5
    assert rep.error_rate == pytest.approx(0.10)
    assert "Test" in rep.to_text()


def test_pearson_identical_and_negated():
    x = [1.0, 3.0, 2.0, 5.0, 4.0]
    r, lag, _ = lagged_correlation(x, x, 2)
    assert r == pytest.approx(1.0) and lag == 0
    assert pearson(x, [-v for v in x]) == pytest.approx(-1.0)


def test_pearson_constant_is_undefined():
    assert pearson([1, 1, 1], [1, 2, 3]) is None


def test_too_few_windows():
    with pytest.raises(ValueError):
        lagged_correlation([1, 2], [1, 2], 1)


@pytest.mark.parametrize("seed", range(10))
def test_pearson_matches_two_pass(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(3, 500))
    x = (rng.normal(size=n) * 10 ** rng.uniform(-3, 6) + rng.normal() * 1e3).tolist()
    y = (0.3 * np.array(x) + rng.normal(size=n) * 10).tolist()
    assert abs(pearson(x, y) - pearson_two_pass(x, y)) <= 1e-9


@given(st.lists(st.tuples(st.floats(-1e6, 1e6), st.floats(-1e6, 1e6)), min_size=3, max_size=60))
def test_property_pearson_bounded_and_matches(pairs):
    x, y = zip(*pairs)
    r = pearson(x, y)
    if r is None:
        return
    assert -1 <= r <= 1
    sxx = sum((a - sum(x) / len(x)) ** 2 for a in x)
    syy = sum((b - sum(y) / len(y)) ** 2 for b in y)
    if sxx > 1e-6 and syy > 1e-6:
        assert abs(r - pearson_two_pass(x, y)) <= 1e-6


def lag_fixture(seed=0, windows=40):
    """Build error bursts at random windows; Test bursts one window later."""
    rng = np.random.default_rng(seed)
    bursts = sorted(rng.choice(np.arange(1, windows - 2), size=8, replace=False).tolist())
    rs = []
    for k in range(windows):
        rs += [u(k * W + j, StageId.BUILD, i=j) for j in range(5)]
        rs += [u(k * W + j, StageId.TEST, i=j) for j in range(5)]
    for k in bursts:
        rs += [u(k * W + 100 + j, StageId.BUILD, Severity.ERROR, i=j) for j in range(4)]
        rs += [u((k + 1) * W + 100 + j, StageId.TEST, Severity.ERROR, i=j) for j in range(4)]
    # noise so lag 0 is not exactly zero
    rs += [u(int(t) * W + 500, StageId.TEST, Severity.ERROR, i=99) for t in rng.integers(0, windows, 3)]
    return rs


def test_lag_one_recovered():
    s = Store()
    s.store(lag_fixture())
    res = correlate_stages(s, StageId.BUILD, StageId.TEST, 0, 40 * W, W, max_lag=3)
    assert res.best_lag == 1
    assert res.r > 0.8
    # brute force over all lags with the two-pass formula
    recs = s.query(0, 40 * W)
    series = {
        st_: [sum(1 for r in recs if r.stage == st_ and r.severity >= Severity.ERROR and k * W <= r.ts < (k + 1) * W) for k in range(40)]
        for st_ in (StageId.BUILD, StageId.TEST)
    }
    a, b = series[StageId.BUILD], series[StageId.TEST]
    brute = {lag: pearson_two_pass(a[: 40 - lag] if lag >= 0 else a[-lag:], b[lag:] if lag >= 0 else b[: 40 + lag]) for lag in range(-3, 4)}
    assert max(brute, key=lambda k: abs(brute[k])) == 1
    for lag, r in res.r_by_lag.items():
        assert abs(r - brute[lag]) <= 1e-9


def test_lag_tie_break():
    # period 2: |r| = 1 at lags 0 and +-2, smaller |lag| wins
    a = [1, 0, 1, 0, 1, 0, 1, 0, 1, 0]
    r, lag, by = lagged_correlation(a, a, 2)
    assert lag == 0 and abs(by[2]) == abs(by[-2]) == 1
    # period 4 shifted by half: only lags +-2 reach 1, positive wins
    a, b = [1, 0, 0, 0] * 5, [0, 0, 1, 0] * 5
    r, lag, by = lagged_correlation(a, b, 2)
    assert by[2] == pytest.approx(1) and by[-2] == pytest.approx(1)
    assert lag == 2


def test_ewma_examples():
    assert ewma([1, 2, 3], 0.5) == [1, 1.5, 2.25]
    assert forecast_rate([1, 2, 3], 0.5, 1) == [2.25]
    assert forecast_rate([4.0] * 7, 0.3, 3) == [4.0] * 3
    assert forecast_rate([1, 9, 2, 7], 1.0, 2) == [7, 7]


def test_ewma_alpha_range():
    for alpha in (0, -0.1, 1.5):
        with pytest.raises(ValueError):
            ewma([1, 2], alpha)


@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=40), st.floats(0.01, 1.0))
def test_property_ewma_closed_form(series, alpha):
    got = ewma(series, alpha)
    want = ewma_closed_form(series, alpha)
    scale = max(1.0, max(abs(v) for v in series))
    assert all(abs(g - w) <= 1e-9 * scale for g, w in zip(got, want))


def test_release_probability_examples():
    assert release_success_probability([]) == 0.5
    ok = [u(i, StageId.BUILD, cid=f"r{i}") for i in range(8)]
    assert release_success_probability(release_outcomes(ok)) == 9 / 10
    bad = [u(i, StageId.TEST, Severity.ERROR, cid=f"r{i}") for i in range(3)]
    assert release_success_probability(release_outcomes(bad)) == 1 / 5


def test_release_ignores_non_gate_errors():
    rs = [u(1, StageId.MONITOR, Severity.ERROR, cid="a"), u(2, StageId.BUILD, cid="a")]
    (o,) = release_outcomes(rs)
    assert o.success


def alert(kind="ErrorRateOver", stage=StageId.TEST, severity=Severity.ERROR, start=0):
    return AlertEvent("r", kind, start, W, stage, 0.5, 0.2, severity, start)


def test_prescribe_empty():
    assert prescribe([]) == []


def test_prescribe_t3_with_evidence():
    ev = CorrelationResult(StageId.BUILD, StageId.TEST, 0.9, 1, {1: 0.9})
    (rec_,) = prescribe([alert()], [ev])
    assert rec_.entry_id == "T3"
    assert rec_.action == "inspect Build artifacts of correlated windows"


def test_prescribe_without_evidence_falls_back():
    (rec_,) = prescribe([alert()], [CorrelationResult(StageId.BUILD, StageId.TEST, 0.9, 2, {})])
    assert rec_.entry_id == "T1"


def test_prescribe_coalesces_and_orders():
    alerts = [alert(), alert(start=W), alert("Silence", StageId.MONITOR, Severity.FATAL), alert(stage=StageId.BUILD, severity=Severity.WARNING)]
    recs = prescribe(alerts)
    assert [(r.entry_id, r.stage) for r in recs] == [
        ("T2", StageId.MONITOR),
        ("T1", StageId.TEST),
        ("T1", StageId.BUILD),
    ]


def test_prescription_from_dict_round():
    e = prescription_from_dict({"id": "X", "condition": "Silence", "action": "a", "stage": "Test"})
    assert e.stage is StageId.TEST and not e.needs_evidence
    assert {p.id for p in DEFAULT_PRESCRIPTIONS} == {f"T{i}" for i in range(1, 7)}
