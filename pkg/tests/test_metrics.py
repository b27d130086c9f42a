import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nictr.metrics import (EvalReport, auc, cold_start_report, format_table, logloss, parse_table)
from nictr.train import bce_loss


def pairwise_auc(scores, labels):
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    total = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p in pos for n in neg)
    return total / (len(pos) * len(neg))


def test_auc_examples():
    assert auc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0
    assert auc([0.3] * 6, [0, 1, 0, 1, 1, 0]) == 0.5
    rng = np.random.default_rng(20)
    s, y = rng.random(20), np.array([0, 1] * 10)
    assert abs(auc(s, y) - pairwise_auc(s, y)) <= 1e-12
    with pytest.raises(ValueError):
        auc([0.1, 0.2], [1, 1])
    with pytest.raises(ValueError):
        auc([0.1, 0.2], [0, 2])


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31))
def test_auc_properties(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 60))
    s = rng.random(n)
    y = rng.integers(2, size=n)
    y[0], y[1] = 0, 1
    a = auc(s, y)
    assert 0.0 <= a <= 1.0
    assert auc(np.exp(3 * s) - 7, y) == pytest.approx(a, abs=1e-12)
    assert a + auc(-s, y) == pytest.approx(1.0, abs=1e-12)


def test_logloss_examples():
    assert logloss([0.5, 0.5, 0.5], [0, 1, 1]) == pytest.approx(np.log(2), abs=1e-15)
    rep = EvalReport.from_scores([0.0, 1.0, 1.0], [0, 1, 1])
    assert rep.logloss < 1e-11
    s, y = [0.2, 0.7, 0.9, 0.35, 0.6], [0, 1, 1, 0, 0]
    assert logloss(s, y) == pytest.approx(np.mean([bce_loss(p, t) for p, t in zip(s, y)]), abs=1e-15)
    with pytest.raises(ValueError):
        logloss([0.0, 0.5], [0, 1])


def test_cold_start_buckets():
    rng = np.random.default_rng(3)
    n = 300
    s, y, h = rng.random(n), rng.integers(2, size=n), rng.integers(0, 10, size=n)
    single = cold_start_report(s, y, h, boundaries=(0,))
    (only,) = single.buckets.values()
    assert only.auc == single.auc == auc(s, y)
    rep = cold_start_report(s, y, h, boundaries=(0, 3))
    assert set(rep.buckets) == {"0-2", ">2"}
    assert rep.buckets["0-2"].auc == auc(s[h < 3], y[h < 3])
    assert rep.buckets[">2"].auc == auc(s[h >= 3], y[h >= 3])
    assert rep.buckets["0-2"].count + rep.buckets[">2"].count == n
    default = cold_start_report(s, y, h)
    assert list(default.buckets) == ["0", "1-5", "6-20", ">20"]
    assert default.buckets[">20"].count == 0 and default.buckets[">20"].auc is None
    with pytest.raises(ValueError):
        cold_start_report(s, y, h, boundaries=(0, 5, 5))


def test_report_table_round_trip():
    rep = cold_start_report([0.1, 0.9, 0.4, 0.6], [0, 1, 0, 1], [0, 0, 3, 9], boundaries=(0, 1))
    rows = parse_table(format_table(rep.rows()))
    assert rows[0]["name"] == "all" and float(rows[0]["auc"]) == 1.0
    assert [r["name"] for r in rows[1:]] == ["bucket:0", "bucket:>0"]
