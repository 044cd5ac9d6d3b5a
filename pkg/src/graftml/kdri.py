"""Piecewise-linear Cox-style relative-risk scoring.

The score is exp(sum of terms); each term is a linear, hinge, or indicator
contribution on one record feature.  Coefficients come from a JSON file, so
any published piecewise-linear risk index can be expressed without code
changes.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

from .cohort import FIELD_NAMES, BOOL_FIELDS, TransplantRecord, derive_label, HorizonLabel

TERM_KINDS = ("linear", "hinge_above", "hinge_below", "indicator")

# Fields a coefficient file may reference.
SCORABLE_FIELDS = tuple(
    n for n in FIELD_NAMES
    if n not in ("record_id", "transplant_date", "graft_survival_months", "graft_failed")
)


class CoefficientError(ValueError):
    """Raised for malformed or inconsistent coefficient files."""


@dataclass(frozen=True)
class RiskTerm:
    feature: str
    kind: str
    beta: float
    knot: float | None = None
    level: float | None = None

    def contribution(self, x: float) -> float:
        if self.kind == "linear":
            return self.beta * (x - (self.knot or 0.0))
        if self.kind == "hinge_above":
            return self.beta * max(0.0, x - self.knot)
        if self.kind == "hinge_below":
            return self.beta * max(0.0, self.knot - x)
        return self.beta if x == self.level else 0.0


@dataclass(frozen=True)
class RiskCoefficientSet:
    terms: tuple[RiskTerm, ...]

    def __post_init__(self):
        seen = set()
        for t in self.terms:
            if t.feature not in SCORABLE_FIELDS:
                raise CoefficientError(f"unknown feature {t.feature!r}")
            if t.kind not in TERM_KINDS:
                raise CoefficientError(f"unknown term kind {t.kind!r} on {t.feature!r}")
            if t.kind in ("hinge_above", "hinge_below") and (t.knot is None or not math.isfinite(t.knot)):
                raise CoefficientError(f"hinge term on {t.feature!r} needs a finite knot")
            if not math.isfinite(t.beta):
                raise CoefficientError(f"non-finite beta on {t.feature!r}")
            key = (t.feature, t.kind, t.knot, t.level)
            if key in seen:
                raise CoefficientError(f"duplicate term {key}")
            seen.add(key)

    def features(self) -> set[str]:
        return {t.feature for t in self.terms}


def _number(entry: dict, key: str, feature: str) -> float:
    value = entry[key]
    if not isinstance(value, (int, float)) or isinstance(value, bool):
        raise CoefficientError(f"term on {feature!r}: {key} must be a number, got {value!r}")
    return float(value)


def load_coefficients(path) -> RiskCoefficientSet:
    """Load and validate a coefficient file.

    Format: {"terms": [{"feature":..., "kind":..., "beta":..., "knot":...,
    "level":...}, ...]}.  knot doubles as the centering constant for linear
    terms; level selects the matching value for indicator terms.
    """
    with open(path) as fh:
        doc = json.load(fh)
    if not isinstance(doc, dict) or "terms" not in doc or not isinstance(doc["terms"], list):
        raise CoefficientError(f"{path}: expected an object with a 'terms' list")
    terms = []
    for entry in doc["terms"]:
        feature = entry.get("feature", "<missing>")
        term = RiskTerm(
            feature=feature,
            kind=entry.get("kind", "<missing>"),
            beta=_number(entry, "beta", feature),
            knot=_number(entry, "knot", feature) if "knot" in entry else None,
            level=_number(entry, "level", feature) if "level" in entry else None,
        )
        terms.append(term)
    return RiskCoefficientSet(terms=tuple(terms))


def _feature_value(record: TransplantRecord, name: str) -> float:
    value = getattr(record, name)
    if name in BOOL_FIELDS:
        return 1.0 if value else 0.0
    return float(value)


def kdri_score(record: TransplantRecord, coeffs: RiskCoefficientSet) -> float:
    """Relative hazard exp(sum of term contributions); 1.0 for an empty set."""
    total = math.fsum(t.contribution(_feature_value(record, t.feature)) for t in coeffs.terms)
    return math.exp(total)


def kdri_as_classifier(cohort, coeffs: RiskCoefficientSet, horizon_months: int):
    """Score a filtered cohort as a ranker at one horizon.

    Censored-at-horizon records are omitted; higher score = predicted riskier.
    """
    from .metrics import PredictionSet

    ids, scores, labels, months, events = [], [], [], [], []
    for r in cohort.records:
        label = derive_label(r, horizon_months)
        if label is HorizonLabel.CENSORED:
            continue
        ids.append(r.record_id)
        scores.append(kdri_score(r, coeffs))
        labels.append(1 if label is HorizonLabel.POSITIVE else 0)
        months.append(r.graft_survival_months)
        events.append(r.graft_failed)
    return PredictionSet.from_rows(ids, scores, labels, months, events)
