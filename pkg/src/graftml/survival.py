"""Right-censored survival statistics: Kaplan-Meier curves and the two-group
log-rank test, applied to predicted-failure vs predicted-success groups."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np


class SurvivalError(ValueError):
    pass


@dataclass(frozen=True)
class SurvivalSample:
    times: np.ndarray
    events: np.ndarray  # True = failure observed, False = censored

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        e = np.asarray(self.events, dtype=bool)
        if len(t) != len(e):
            raise SurvivalError("times and events have unequal lengths")
        if len(t) and (not np.all(np.isfinite(t)) or t.min() < 0):
            raise SurvivalError("times must be finite and >= 0")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "events", e)

    def __len__(self):
        return len(self.times)


@dataclass(frozen=True)
class KmCurve:
    times: np.ndarray      # distinct event times, ascending
    n_at_risk: np.ndarray
    n_events: np.ndarray
    survival: np.ndarray   # S(t) just after each event time

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["time", "n_at_risk", "events", "survival"])
            for t, n, d, s in zip(self.times, self.n_at_risk, self.n_events, self.survival):
                w.writerow([repr(float(t)), int(n), int(d), repr(float(s))])


@dataclass(frozen=True)
class LogRankResult:
    chi_square: float
    p: float
    observed_a: float
    expected_a: float
    observed_b: float
    expected_b: float


def km_estimate(sample: SurvivalSample) -> KmCurve:
    """Product-limit estimator.  The risk set at t is everyone with time >= t,
    so a censoring tied with an event still counts at risk (events first)."""
    if len(sample) == 0:
        raise SurvivalError("empty survival sample")
    order = np.argsort(sample.times, kind="stable")
    t = sample.times[order]
    e = sample.events[order]
    n = len(t)

    times, at_risk, events, survival = [], [], [], []
    s = 1.0
    i = 0
    while i < n:
        j = i
        while j < n and t[j] == t[i]:
            j += 1
        d = int(e[i:j].sum())
        if d > 0:
            n_i = n - i
            s *= 1.0 - d / n_i
            times.append(float(t[i]))
            at_risk.append(n_i)
            events.append(d)
            survival.append(s)
        i = j
    return KmCurve(
        times=np.asarray(times),
        n_at_risk=np.asarray(at_risk, dtype=np.int64),
        n_events=np.asarray(events, dtype=np.int64),
        survival=np.asarray(survival),
    )


def _risk_counts(sample: SurvivalSample, event_times: np.ndarray):
    """Per pooled event time: size of risk set and events in this group."""
    t_sorted = np.sort(sample.times)
    at_risk = len(sample) - np.searchsorted(t_sorted, event_times, side="left")
    ev_times = np.sort(sample.times[sample.events])
    deaths = (np.searchsorted(ev_times, event_times, side="right")
              - np.searchsorted(ev_times, event_times, side="left"))
    return at_risk.astype(float), deaths.astype(float)


def log_rank(group_a: SurvivalSample, group_b: SurvivalSample) -> LogRankResult:
    """Two-group log-rank test; p from the 1-df chi-square closed form."""
    if len(group_a) == 0 or len(group_b) == 0:
        raise SurvivalError("both groups must be non-empty")
    pooled_times = np.concatenate([group_a.times[group_a.events], group_b.times[group_b.events]])
    if len(pooled_times) == 0:
        raise SurvivalError("no events in either group")
    event_times = np.unique(pooled_times)

    na, da = _risk_counts(group_a, event_times)
    nb, db = _risk_counts(group_b, event_times)
    n = na + nb
    d = da + db

    expected_a = float(np.sum(d * na / n))
    multi = n > 1  # a risk set of one record carries no information
    v = np.zeros_like(n)
    v[multi] = (d[multi] * (na[multi] / n[multi]) * (nb[multi] / n[multi])
                * (n[multi] - d[multi]) / (n[multi] - 1))
    variance = float(v.sum())
    if variance == 0.0:
        raise SurvivalError("zero log-rank variance: groups never share a risk set")

    observed_a = float(da.sum())
    chi_square = (observed_a - expected_a) ** 2 / variance
    p = math.erfc(math.sqrt(chi_square / 2.0))
    return LogRankResult(
        chi_square=chi_square, p=p,
        observed_a=observed_a, expected_a=expected_a,
        observed_b=float(db.sum()), expected_b=float(np.sum(d * nb / n)),
    )


def split_by_prediction(preds, threshold: float) -> tuple[SurvivalSample, SurvivalSample]:
    """Split scored records into (predicted-failure, predicted-success)
    survival samples at a score threshold.  Accepts any container with
    scores/months/events columns (e.g. a PredictionSet)."""
    scores = np.asarray(preds.scores, dtype=float)
    months = np.asarray(preds.months, dtype=float)
    events = np.asarray(preds.events, dtype=bool)
    mask = scores >= threshold
    return (
        SurvivalSample(times=months[mask], events=events[mask]),
        SurvivalSample(times=months[~mask], events=events[~mask]),
    )
