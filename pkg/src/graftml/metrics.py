"""Classification evaluation on pooled out-of-fold predictions.

ROC/AUC with Mann-Whitney tie handling, DeLong's test for paired ROC curves,
operating points at a fixed false-negative rate, confusion-matrix deltas
between models, and a stratified deterministic k-fold harness.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .cohort import Cohort, HorizonLabel, derive_label
from . import forest as forest_mod


class MetricsError(ValueError):
    pass


def normal_cdf(x: float) -> float:
    return 0.5 * math.erfc(-x / math.sqrt(2.0))


@dataclass(frozen=True)
class PredictionSet:
    ids: np.ndarray
    scores: np.ndarray
    labels: np.ndarray  # 1 = positive (graft failure), 0 = negative
    months: np.ndarray
    events: np.ndarray

    def __post_init__(self):
        n = len(self.ids)
        if n < 1:
            raise MetricsError("prediction set must be non-empty")
        if len(np.unique(self.ids)) != n:
            raise MetricsError("duplicate record ids in prediction set")
        for arr in (self.scores, self.labels, self.months, self.events):
            if len(arr) != n:
                raise MetricsError("prediction set columns have unequal lengths")

    def __len__(self):
        return len(self.ids)

    @classmethod
    def from_rows(cls, ids, scores, labels, months, events) -> "PredictionSet":
        return cls(
            ids=np.asarray(ids, dtype=np.int64),
            scores=np.asarray(scores, dtype=float),
            labels=np.asarray(labels, dtype=np.int8),
            months=np.asarray(months, dtype=float),
            events=np.asarray(events, dtype=bool),
        )

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["record_id", "score", "label", "survival_months", "event"])
            for i in range(len(self)):
                w.writerow([
                    int(self.ids[i]), repr(float(self.scores[i])), int(self.labels[i]),
                    repr(float(self.months[i])), int(self.events[i]),
                ])

    @classmethod
    def from_csv(cls, path) -> "PredictionSet":
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            rows = list(reader)
        return cls.from_rows(
            [int(r["record_id"]) for r in rows],
            [float(r["score"]) for r in rows],
            [int(r["label"]) for r in rows],
            [float(r["survival_months"]) for r in rows],
            [bool(int(r["event"])) for r in rows],
        )


@dataclass(frozen=True)
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray  # threshold producing each point; +inf at (0,0)

    def trapezoid_area(self) -> float:
        return float(np.trapezoid(self.tpr, self.fpr))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["fpr", "tpr", "threshold"])
            for f, t, th in zip(self.fpr, self.tpr, self.thresholds):
                w.writerow([repr(float(f)), repr(float(t)), repr(float(th))])


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    tn: int
    fp: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn

    @property
    def sensitivity(self) -> float:
        return self.tp / (self.tp + self.fn)


@dataclass(frozen=True)
class DeLongResult:
    auc_a: float
    auc_b: float
    var_a: float
    var_b: float
    covariance: float
    z: float
    p: float


def _check_two_classes(labels) -> None:
    if labels.min() == labels.max():
        raise MetricsError("both classes required")


def midrank(x: np.ndarray) -> np.ndarray:
    """1-based ranks with ties sharing their average rank."""
    order = np.argsort(x, kind="stable")
    xs = x[order]
    n = len(x)
    ranks = np.empty(n)
    i = 0
    while i < n:
        j = i
        while j < n and xs[j] == xs[i]:
            j += 1
        ranks[i:j] = 0.5 * (i + j + 1)
        i = j
    out = np.empty(n)
    out[order] = ranks
    return out


def auc(preds: PredictionSet) -> float:
    """Mann-Whitney AUC with half credit for ties, via midranks."""
    labels = preds.labels
    _check_two_classes(labels)
    pos = labels == 1
    m = int(pos.sum())
    n = len(labels) - m
    ranks = midrank(preds.scores)
    return float((ranks[pos].sum() - m * (m + 1) / 2.0) / (m * n))


def roc_curve(preds: PredictionSet) -> RocCurve:
    """Staircase ROC; tied scores are grouped into diagonal segments."""
    _check_two_classes(preds.labels)
    order = np.argsort(-preds.scores, kind="stable")
    scores = preds.scores[order]
    labels = preds.labels[order]
    distinct = np.flatnonzero(np.diff(scores) < 0)
    ends = np.append(distinct, len(scores) - 1)  # last index of each tie group
    tps = np.cumsum(labels)[ends].astype(float)
    fps = np.cumsum(1 - labels)[ends].astype(float)
    n_pos = tps[-1]
    n_neg = fps[-1]
    fpr = np.concatenate([[0.0], fps / n_neg])
    tpr = np.concatenate([[0.0], tps / n_pos])
    thresholds = np.concatenate([[np.inf], scores[ends]])
    return RocCurve(fpr=fpr, tpr=tpr, thresholds=thresholds)


def _placements(labels: np.ndarray, scores: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """DeLong placement values (V10 per positive, V01 per negative)."""
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    m, n = len(pos), len(neg)
    all_ranks = midrank(np.concatenate([pos, neg]))
    v10 = (all_ranks[:m] - midrank(pos)) / n
    v01 = 1.0 - (all_ranks[m:] - midrank(neg)) / m
    return v10, v01


def _pairwise(a: PredictionSet, b: PredictionSet) -> tuple[PredictionSet, PredictionSet]:
    if len(a) != len(b):
        raise MetricsError("prediction sets are not paired")
    oa = np.argsort(a.ids)
    ob = np.argsort(b.ids)
    if not np.array_equal(a.ids[oa], b.ids[ob]):
        raise MetricsError("prediction sets cover different record ids")
    if not np.array_equal(a.labels[oa], b.labels[ob]):
        raise MetricsError("paired prediction sets disagree on labels")
    take = lambda p, o: PredictionSet(ids=p.ids[o], scores=p.scores[o], labels=p.labels[o],
                                      months=p.months[o], events=p.events[o])
    return take(a, oa), take(b, ob)


def _sample_cov(u: np.ndarray, v: np.ndarray) -> float:
    if len(u) < 2:
        return 0.0
    return float(np.dot(u - u.mean(), v - v.mean()) / (len(u) - 1))


def delong_test(preds_a: PredictionSet, preds_b: PredictionSet) -> DeLongResult:
    """DeLong's test for two correlated ROC curves on one test population."""
    a, b = _pairwise(preds_a, preds_b)
    _check_two_classes(a.labels)
    v10a, v01a = _placements(a.labels, a.scores)
    v10b, v01b = _placements(b.labels, b.scores)
    m, n = len(v10a), len(v01a)

    auc_a = float(v10a.mean())
    auc_b = float(v10b.mean())
    var_a = _sample_cov(v10a, v10a) / m + _sample_cov(v01a, v01a) / n
    var_b = _sample_cov(v10b, v10b) / m + _sample_cov(v01b, v01b) / n
    cov = _sample_cov(v10a, v10b) / m + _sample_cov(v01a, v01b) / n

    var_diff = var_a + var_b - 2.0 * cov
    if var_diff <= 0.0:
        if auc_a == auc_b:
            z, p = 0.0, 1.0
        else:
            z = math.inf if auc_a > auc_b else -math.inf
            p = 0.0
    else:
        z = (auc_a - auc_b) / math.sqrt(var_diff)
        p = math.erfc(abs(z) / math.sqrt(2.0))
    return DeLongResult(auc_a=auc_a, auc_b=auc_b, var_a=var_a, var_b=var_b,
                        covariance=cov, z=z, p=p)


def threshold_at_fnr(preds: PredictionSet, target_fnr: float = 0.10) -> tuple[float, float]:
    """Largest threshold (score >= threshold predicts failure) whose
    sensitivity is at least 1 - target_fnr; maximizes true negatives."""
    pos_scores = preds.scores[preds.labels == 1]
    if len(pos_scores) == 0:
        raise MetricsError("no positive records")
    required = 1.0 - target_fnr
    pos_sorted = np.sort(pos_scores)
    for threshold in np.unique(preds.scores)[::-1]:
        covered = len(pos_scores) - np.searchsorted(pos_sorted, threshold, side="left")
        sens = covered / len(pos_scores)
        if sens >= required:
            return float(threshold), float(sens)
    raise MetricsError("unreachable: minimum score always yields sensitivity 1")


def confusion_at(preds: PredictionSet, threshold: float) -> ConfusionMatrix:
    pred_pos = preds.scores >= threshold
    actual_pos = preds.labels == 1
    return ConfusionMatrix(
        tp=int(np.sum(pred_pos & actual_pos)),
        tn=int(np.sum(~pred_pos & ~actual_pos)),
        fp=int(np.sum(pred_pos & ~actual_pos)),
        fn=int(np.sum(~pred_pos & actual_pos)),
    )


@dataclass(frozen=True)
class DeltaReport:
    threshold_a: float
    threshold_b: float
    confusion_a: ConfusionMatrix
    confusion_b: ConfusionMatrix
    delta_tn: int
    delta_fp: int
    pct_tn: float  # TN gain of b relative to a, in percent


def compare_models_at_fnr(preds_a: PredictionSet, preds_b: PredictionSet,
                          target_fnr: float = 0.10) -> DeltaReport:
    """Threshold both models at the same FNR and report TN/FP deltas of b
    relative to the baseline a."""
    a, b = _pairwise(preds_a, preds_b)
    th_a, _ = threshold_at_fnr(a, target_fnr)
    th_b, _ = threshold_at_fnr(b, target_fnr)
    cm_a = confusion_at(a, th_a)
    cm_b = confusion_at(b, th_b)
    delta_tn = cm_b.tn - cm_a.tn
    pct = 100.0 * delta_tn / cm_a.tn if cm_a.tn else math.inf
    return DeltaReport(threshold_a=th_a, threshold_b=th_b, confusion_a=cm_a,
                       confusion_b=cm_b, delta_tn=delta_tn,
                       delta_fp=cm_b.fp - cm_a.fp, pct_tn=pct)


# --------------------------------------------------------------------------
# Cross-validation
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ForestSpec:
    params: forest_mod.ForestParams
    features: tuple[str, ...] = forest_mod.DEFAULT_FEATURES


@dataclass(frozen=True)
class KdriSpec:
    coeffs: object  # kdri.RiskCoefficientSet


def _stratified_folds(labels: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """Fold id per row; within each class, fold sizes differ by at most 1."""
    fold = np.empty(len(labels), dtype=np.int64)
    for cls in (1, 0):
        idx = np.flatnonzero(labels == cls)
        rng.shuffle(idx)
        fold[idx] = np.arange(len(idx)) % k
    return fold


def cross_validate(cohort: Cohort, spec, horizon_months: int, k: int = 10,
                   seed: int = 0, n_jobs: int = 1, extended: bool = False):
    """Pooled out-of-fold predictions, stratified by horizon label.

    With extended=True, also returns a second PredictionSet-shaped container
    covering censored-at-horizon records (label column is meaningless there;
    scores come from the same fold model the record was held out of).
    """
    records = cohort.records
    label_of = {}
    labeled_idx = []
    censored_idx = []
    for i, r in enumerate(records):
        lab = derive_label(r, horizon_months)
        if lab is HorizonLabel.CENSORED:
            censored_idx.append(i)
        else:
            labeled_idx.append(i)
            label_of[i] = 1 if lab is HorizonLabel.POSITIVE else 0
    if len(labeled_idx) < k:
        raise MetricsError(f"need at least k={k} labeled records, have {len(labeled_idx)}")

    labeled_idx = np.asarray(labeled_idx, dtype=np.int64)
    y = np.asarray([label_of[i] for i in labeled_idx], dtype=np.int8)
    rng = np.random.default_rng(seed)
    fold = _stratified_folds(y, k, rng)
    censored_idx = np.asarray(censored_idx, dtype=np.int64)
    censored_fold = np.arange(len(censored_idx)) % k if len(censored_idx) else np.empty(0, dtype=int)

    is_kdri = isinstance(spec, KdriSpec)
    if is_kdri:
        from .kdri import kdri_score
    scores = np.empty(len(labeled_idx))
    ext_scores = np.empty(len(censored_idx))

    for f in range(k):
        test_mask = fold == f
        test_rows = labeled_idx[test_mask]
        ext_rows = censored_idx[censored_fold == f] if len(censored_idx) else censored_idx
        if is_kdri:
            scorer = lambda rows: np.asarray([kdri_score(records[i], spec.coeffs) for i in rows])
        else:
            train_rows = labeled_idx[~test_mask]
            y_train = y[~test_mask]
            if y_train.min() == y_train.max():
                raise MetricsError(f"fold {f}: training data has a single class")
            X_train = forest_mod.feature_matrix([records[i] for i in train_rows], spec.features)
            params = forest_mod.ForestParams(
                n_trees=spec.params.n_trees, mtry=spec.params.mtry,
                min_node=spec.params.min_node,
                seed=forest_mod.mix_seed(spec.params.seed, 1 + f),
            )
            model = forest_mod.train_forest(X_train, y_train, params, spec.features, n_jobs=n_jobs)
            scorer = lambda rows: forest_mod.predict_proba(
                model, forest_mod.feature_matrix([records[i] for i in rows], spec.features))
        scores[test_mask] = scorer(test_rows)
        if len(ext_rows):
            ext_scores[censored_fold == f] = scorer(ext_rows)

    def build(rows, row_scores, row_labels):
        order = np.argsort(rows)
        return PredictionSet.from_rows(
            [records[i].record_id for i in rows[order]],
            row_scores[order],
            row_labels[order],
            [records[i].graft_survival_months for i in rows[order]],
            [records[i].graft_failed for i in rows[order]],
        )

    preds = build(labeled_idx, scores, y)
    if not extended:
        return preds
    all_rows = np.concatenate([labeled_idx, censored_idx])
    all_scores = np.concatenate([scores, ext_scores])
    all_labels = np.concatenate([y, np.zeros(len(censored_idx), dtype=np.int8)])
    return preds, build(all_rows, all_scores, all_labels)
