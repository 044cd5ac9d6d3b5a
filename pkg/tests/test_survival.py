import math

import numpy as np
import pytest

from graftml.metrics import PredictionSet
from graftml.survival import (
    KmCurve,
    SurvivalError,
    SurvivalSample,
    km_estimate,
    log_rank,
    split_by_prediction,
)


def sample(times, events):
    return SurvivalSample(times=np.asarray(times, dtype=float),
                          events=np.asarray(events, dtype=bool))


def random_sample(rng, n=None):
    n = n or int(rng.integers(5, 60))
    return sample(rng.uniform(0, 100, size=n), rng.random(n) < 0.6)


class TestKmEstimate:
    def test_all_censored_is_flat_one(self):
        curve = km_estimate(sample([3, 8, 20], [False, False, False]))
        assert len(curve.times) == 0  # no event steps; S identically 1

    def test_three_events_no_censoring(self):
        curve = km_estimate(sample([5, 10, 15], [True, True, True]))
        assert list(curve.times) == [5.0, 10.0, 15.0]
        assert list(curve.n_at_risk) == [3, 2, 1]
        assert curve.survival == pytest.approx([2 / 3, 1 / 3, 0.0])

    def test_censoring_shrinks_risk_set(self):
        curve = km_estimate(sample([5, 10], [False, True]))
        assert list(curve.times) == [10.0]
        assert list(curve.n_at_risk) == [1]
        assert curve.survival == pytest.approx([0.0])

    def test_event_before_censor_at_same_time(self):
        # The record censored at 10 stays in the risk set for the event at 10.
        curve = km_estimate(sample([10, 10], [True, False]))
        assert list(curve.n_at_risk) == [2]
        assert curve.survival == pytest.approx([0.5])

    def test_empty_rejected(self):
        with pytest.raises(SurvivalError):
            km_estimate(sample([], []))

    def test_monotone_nonincreasing(self, rng):
        for _ in range(30):
            curve = km_estimate(random_sample(rng))
            assert (np.diff(curve.survival) <= 1e-15).all()
            assert ((curve.survival >= 0) & (curve.survival <= 1)).all()

    def test_no_censoring_equals_empirical_survival(self, rng):
        times = rng.uniform(0, 50, size=40)
        curve = km_estimate(sample(times, np.ones(40, dtype=bool)))
        for t, s in zip(curve.times, curve.survival):
            assert s == pytest.approx(np.mean(times > t), abs=1e-12)


class TestLogRank:
    def test_identical_groups(self):
        g = sample([5, 8, 12, 20], [True, False, True, True])
        result = log_rank(g, g)
        assert result.chi_square == pytest.approx(0.0, abs=1e-12)
        assert result.p == pytest.approx(1.0)

    def test_hand_worked_table(self):
        # a = {5 event, 7 censored}, b = {6 event, 8 event}
        # t=5: n=4 (2,2), d=1 -> E_a=0.5,  V=(2/4)(2/4)(3)/(3)=0.25
        # t=6: n=3 (1,2), d=1 -> E_a=1/3,  V=(1/3)(2/3)(2)/(2)=2/9
        # t=8: n=1 (0,1), d=1 -> E_a=0, variance term skipped (n=1)
        # O_a=1, E_a=5/6, V=17/36, chi2=(1/36)/(17/36)=1/17
        a = sample([5, 7], [True, False])
        b = sample([6, 8], [True, True])
        result = log_rank(a, b)
        assert result.observed_a == 1.0
        assert result.expected_a == pytest.approx(5 / 6, abs=1e-12)
        assert result.chi_square == pytest.approx(1 / 17, abs=1e-12)
        assert result.p == pytest.approx(math.erfc(math.sqrt(1 / 34)), abs=1e-15)

    def test_symmetry(self, rng):
        for _ in range(30):
            a, b = random_sample(rng), random_sample(rng)
            try:
                fwd = log_rank(a, b)
            except SurvivalError:
                continue
            rev = log_rank(b, a)
            assert fwd.chi_square == pytest.approx(rev.chi_square, abs=1e-10)
            assert fwd.p == pytest.approx(rev.p, abs=1e-10)
            assert (fwd.observed_a - fwd.expected_a) == pytest.approx(
                -(rev.observed_a - rev.expected_a), abs=1e-10)

    def test_chi_square_95th_percentile(self):
        # p(chi2=3.841, 1 df) must come out at 0.05 within 1e-4.
        assert math.erfc(math.sqrt(3.841 / 2.0)) == pytest.approx(0.05, abs=1e-4)

    def test_planted_hazard_ratio_detected(self, rng):
        n = 500
        t_a = rng.exponential(30.0, size=n)
        t_b = rng.exponential(10.0, size=n)  # hazard ratio 3
        censor = rng.uniform(5, 120, size=(2, n))
        a = sample(np.minimum(t_a, censor[0]), t_a <= censor[0])
        b = sample(np.minimum(t_b, censor[1]), t_b <= censor[1])
        assert log_rank(a, b).p < 0.001

    def test_no_events_rejected(self):
        a = sample([5, 6], [False, False])
        b = sample([7, 8], [False, False])
        with pytest.raises(SurvivalError, match="no events"):
            log_rank(a, b)

    def test_empty_group_rejected(self):
        with pytest.raises(SurvivalError, match="non-empty"):
            log_rank(sample([], []), sample([5], [True]))

    def test_zero_variance_rejected(self):
        # The only event happens after group a has left the risk set.
        a = sample([0.5], [False])
        b = sample([10], [True])
        with pytest.raises(SurvivalError, match="zero"):
            log_rank(a, b)


class TestSplitByPrediction:
    def _preds(self):
        return PredictionSet.from_rows(
            ids=np.arange(10),
            scores=np.array([0.9, 0.8, 0.7, 0.65, 0.5, 0.4, 0.3, 0.2, 0.15, 0.1]),
            labels=np.array([1, 1, 0, 1, 0, 0, 0, 0, 0, 0]),
            months=np.arange(10, dtype=float) * 10 + 5,
            events=np.array([1, 1, 0, 1, 0, 0, 0, 1, 0, 0], dtype=bool),
        )

    def test_infinite_threshold_puts_all_in_success_group(self):
        fail, success = split_by_prediction(self._preds(), np.inf)
        assert len(fail) == 0
        assert len(success) == 10

    def test_partition_sizes(self, rng):
        preds = self._preds()
        for threshold in [-1.0, 0.3, 0.65, 2.0]:
            fail, success = split_by_prediction(preds, threshold)
            assert len(fail) + len(success) == len(preds)

    def test_hand_membership(self):
        fail, success = split_by_prediction(self._preds(), 0.5)
        assert len(fail) == 5  # scores 0.9, 0.8, 0.7, 0.65, 0.5
        assert set(fail.times) == {5.0, 15.0, 25.0, 35.0, 45.0}
        assert set(success.times) == {55.0, 65.0, 75.0, 85.0, 95.0}


def test_km_csv_export(tmp_path, rng):
    curve = km_estimate(random_sample(rng))
    path = tmp_path / "km.csv"
    curve.to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "time,n_at_risk,events,survival"
    assert len(lines) == len(curve.times) + 1
