"""Transplant cohort data model: record schema, exclusion filters, horizon
labels, CSV parsing/serialization, and a seeded synthetic cohort generator.
"""

from __future__ import annotations

import csv
import datetime
import json
import math
from dataclasses import dataclass, fields
from enum import Enum

import numpy as np

# Valid ranges for the exclusion filters (endpoints are valid values).
HEIGHT_CM_RANGE = (50.0, 213.0)
WEIGHT_KG_RANGE = (10.0, 175.0)
CREATININE_RANGE = (0.1, 8.0)
ADULT_AGE = 18
DEFAULT_DATE_RANGE = (datetime.date(1995, 1, 1), datetime.date(2005, 12, 31))

DONOR_RACE_LEVELS = tuple(range(8))


class CohortError(ValueError):
    """Raised on schema, parse, or configuration problems."""


class HorizonLabel(Enum):
    POSITIVE = "positive"
    NEGATIVE = "negative"
    CENSORED = "censored"


@dataclass(frozen=True)
class TransplantRecord:
    record_id: int
    donor_age: int
    donor_race: int
    donor_hypertension: bool
    donor_diabetes: bool
    donor_creatinine: float
    donor_cod_cva: bool
    donor_height: float
    donor_weight: float
    dcd: bool
    donor_hcv: bool
    hla_b_mismatch: int
    hla_dr_mismatch: int
    en_bloc: bool
    double_kidney: bool
    cold_ischemia_hours: float
    recipient_age: int
    recipient_age_at_waitlisting: int
    recipient_diabetes: bool
    recipient_dialysis_years: float
    recipient_prior_transplant: bool
    multi_organ: bool
    abo_incompatible: bool
    transplant_date: datetime.date
    graft_survival_months: float
    graft_failed: bool


FIELD_NAMES = tuple(f.name for f in fields(TransplantRecord))
_FIELD_TYPES = {f.name: f.type for f in fields(TransplantRecord)}

BOOL_FIELDS = tuple(n for n, t in _FIELD_TYPES.items() if t == "bool")
INT_FIELDS = tuple(n for n, t in _FIELD_TYPES.items() if t == "int")
FLOAT_FIELDS = tuple(n for n, t in _FIELD_TYPES.items() if t == "float")
DATE_FIELDS = ("transplant_date",)


@dataclass(frozen=True)
class Cohort:
    records: tuple[TransplantRecord, ...]
    provenance: str

    def __post_init__(self):
        ids = [r.record_id for r in self.records]
        if len(ids) != len(set(ids)):
            raise CohortError("duplicate record_id in cohort")

    def __len__(self):
        return len(self.records)


# Exclusion rules in application order.  A record is counted against the
# first rule it violates.
FILTER_RULES = (
    "date_out_of_range",
    "pediatric",
    "prior_transplant",
    "multi_organ",
    "abo_incompatible",
    "invalid_height",
    "invalid_weight",
    "invalid_creatinine",
)


@dataclass(frozen=True)
class FilterReport:
    initial_count: int
    final_count: int
    counts: dict[str, int]

    def __post_init__(self):
        if set(self.counts) != set(FILTER_RULES):
            raise CohortError("filter report must cover every rule")
        if self.initial_count - sum(self.counts.values()) != self.final_count:
            raise CohortError("filter report does not reconcile")

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["rule", "count"])
            w.writerow(["initial", self.initial_count])
            for rule in FILTER_RULES:
                w.writerow([rule, self.counts[rule]])
            w.writerow(["final", self.final_count])

    def as_table(self) -> str:
        width = max(len(r) for r in FILTER_RULES) + 2
        lines = [f"{'initial':<{width}}{self.initial_count:>8}"]
        for rule in FILTER_RULES:
            lines.append(f"{rule:<{width}}{self.counts[rule]:>8}")
        lines.append(f"{'final':<{width}}{self.final_count:>8}")
        return "\n".join(lines)


def _parse_bool(text: str) -> bool:
    if text == "0":
        return False
    if text == "1":
        return True
    raise ValueError(f"expected 0 or 1, got {text!r}")


def validate_record(raw_row: dict[str, str]) -> TransplantRecord:
    """Parse one raw CSV row into a typed record.

    Type and invariant checks only; range filtering is apply_filters' job.
    """
    values = {}
    for name in FIELD_NAMES:
        if name not in raw_row or raw_row[name] is None or raw_row[name] == "":
            raise CohortError(f"missing value for column {name!r}")
        text = raw_row[name].strip()
        try:
            if name in BOOL_FIELDS:
                values[name] = _parse_bool(text)
            elif name in INT_FIELDS:
                values[name] = int(text)
            elif name in FLOAT_FIELDS:
                values[name] = float(text)
                if not math.isfinite(values[name]):
                    raise ValueError("not finite")
            else:
                values[name] = datetime.date.fromisoformat(text)
        except ValueError as exc:
            raise CohortError(f"unparseable value for column {name!r}: {text!r}") from exc

    if values["donor_age"] < 0:
        raise CohortError("donor_age must be >= 0")
    for name in ("hla_b_mismatch", "hla_dr_mismatch"):
        if values[name] not in (0, 1, 2):
            raise CohortError(f"{name} must be 0, 1, or 2")
    for name in ("graft_survival_months", "cold_ischemia_hours", "recipient_dialysis_years"):
        if values[name] < 0:
            raise CohortError(f"{name} must be >= 0")
    return TransplantRecord(**values)


def _first_violated_rule(r: TransplantRecord, date_range) -> str | None:
    start, end = date_range
    if not (start <= r.transplant_date <= end):
        return "date_out_of_range"
    if r.recipient_age < ADULT_AGE:
        return "pediatric"
    if r.recipient_prior_transplant:
        return "prior_transplant"
    if r.multi_organ:
        return "multi_organ"
    if r.abo_incompatible:
        return "abo_incompatible"
    if not (HEIGHT_CM_RANGE[0] <= r.donor_height <= HEIGHT_CM_RANGE[1]):
        return "invalid_height"
    if not (WEIGHT_KG_RANGE[0] <= r.donor_weight <= WEIGHT_KG_RANGE[1]):
        return "invalid_weight"
    if not (CREATININE_RANGE[0] <= r.donor_creatinine <= CREATININE_RANGE[1]):
        return "invalid_creatinine"
    return None


def apply_filters(cohort: Cohort, date_range=DEFAULT_DATE_RANGE) -> tuple[Cohort, FilterReport]:
    """Apply the exclusion rules in sequence, keeping source order."""
    counts = {rule: 0 for rule in FILTER_RULES}
    kept = []
    for r in cohort.records:
        rule = _first_violated_rule(r, date_range)
        if rule is None:
            kept.append(r)
        else:
            counts[rule] += 1
    report = FilterReport(initial_count=len(cohort), final_count=len(kept), counts=counts)
    return Cohort(records=tuple(kept), provenance=cohort.provenance + " [filtered]"), report


def derive_label(record: TransplantRecord, horizon_months: int) -> HorizonLabel:
    """Classify one record at a fixed follow-up horizon.

    A graft that fails after the horizon counts as negative for that horizon;
    follow-up ending before the horizon without failure gives no label.
    """
    if horizon_months not in (12, 24, 36):
        raise CohortError("horizon must be 12, 24, or 36 months")
    if record.graft_failed and record.graft_survival_months <= horizon_months:
        return HorizonLabel.POSITIVE
    if record.graft_survival_months >= horizon_months:
        return HorizonLabel.NEGATIVE
    return HorizonLabel.CENSORED


def _format_value(name: str, value) -> str:
    if name in BOOL_FIELDS:
        return "1" if value else "0"
    if name in DATE_FIELDS:
        return value.isoformat()
    return repr(value) if isinstance(value, float) else str(value)


def parse_cohort(path, provenance: str | None = None) -> Cohort:
    """Read a cohort CSV.  Header must match the record schema exactly."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CohortError(f"{path}: empty file, expected a header row")
        if tuple(header) != FIELD_NAMES:
            raise CohortError(f"{path}: header mismatch, expected {list(FIELD_NAMES)}")
        records = []
        errors = []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(FIELD_NAMES):
                errors.append(f"row {lineno}: expected {len(FIELD_NAMES)} columns, got {len(row)}")
                continue
            try:
                records.append(validate_record(dict(zip(FIELD_NAMES, row))))
            except CohortError as exc:
                errors.append(f"row {lineno}: {exc}")
        if errors:
            raise CohortError(f"{path}: " + "; ".join(errors))
    return Cohort(records=tuple(records), provenance=provenance or str(path))


def write_cohort(cohort: Cohort, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(FIELD_NAMES)
        for r in cohort.records:
            w.writerow([_format_value(n, getattr(r, n)) for n in FIELD_NAMES])


# --------------------------------------------------------------------------
# Synthetic cohorts
# --------------------------------------------------------------------------

# Distributions used when a feature is absent from the config.  Draw order is
# fixed by this listing, which makes generation reproducible.
DEFAULT_FEATURE_DISTS = {
    "donor_age": {"dist": "normal", "mean": 40.0, "sd": 12.0, "min": 10.0, "max": 80.0, "round": True},
    "donor_race": {"dist": "categorical", "levels": [0, 1, 2, 3, 4], "probs": [0.6, 0.15, 0.12, 0.08, 0.05]},
    "donor_hypertension": {"dist": "bernoulli", "p": 0.25},
    "donor_diabetes": {"dist": "bernoulli", "p": 0.08},
    "donor_creatinine": {"dist": "normal", "mean": 1.2, "sd": 0.5, "min": 0.2, "max": 7.5},
    "donor_cod_cva": {"dist": "bernoulli", "p": 0.4},
    "donor_height": {"dist": "normal", "mean": 170.0, "sd": 10.0, "min": 55.0, "max": 210.0},
    "donor_weight": {"dist": "normal", "mean": 80.0, "sd": 18.0, "min": 12.0, "max": 170.0},
    "dcd": {"dist": "bernoulli", "p": 0.07},
    "donor_hcv": {"dist": "bernoulli", "p": 0.03},
    "hla_b_mismatch": {"dist": "categorical", "levels": [0, 1, 2], "probs": [0.15, 0.35, 0.5]},
    "hla_dr_mismatch": {"dist": "categorical", "levels": [0, 1, 2], "probs": [0.2, 0.45, 0.35]},
    "en_bloc": {"dist": "bernoulli", "p": 0.01},
    "double_kidney": {"dist": "bernoulli", "p": 0.02},
    "cold_ischemia_hours": {"dist": "uniform", "low": 2.0, "high": 42.0},
    "recipient_age": {"dist": "normal", "mean": 50.0, "sd": 13.0, "min": 18.0, "max": 80.0, "round": True},
    "recipient_age_at_waitlisting": {"dist": "normal", "mean": 47.0, "sd": 13.0, "min": 18.0, "max": 79.0, "round": True},
    "recipient_diabetes": {"dist": "bernoulli", "p": 0.3},
    "recipient_dialysis_years": {"dist": "uniform", "low": 0.0, "high": 9.0},
    "recipient_prior_transplant": {"dist": "bernoulli", "p": 0.0},
    "multi_organ": {"dist": "bernoulli", "p": 0.0},
    "abo_incompatible": {"dist": "bernoulli", "p": 0.0},
}

_DIST_KINDS = ("normal", "uniform", "bernoulli", "categorical", "constant")


@dataclass(frozen=True)
class SyntheticConfig:
    """Parameters for the exponential proportional-hazards generator.

    hazard_terms maps feature name -> {"beta": per-unit log-hazard,
    "center": value subtracted before scaling}.  baseline_rate_36m is the
    36-month failure probability of a record sitting at every center.
    """

    n: int
    baseline_rate_36m: float = 0.10
    hazard_terms: dict = None
    features: dict = None
    censor_min_months: float = 12.0
    censor_max_months: float = 240.0
    date_range: tuple[datetime.date, datetime.date] = DEFAULT_DATE_RANGE

    def __post_init__(self):
        if self.n < 1:
            raise CohortError("synthetic cohort size must be >= 1")
        if not (0.0 < self.baseline_rate_36m < 1.0):
            raise CohortError("baseline_rate_36m must be in (0, 1)")
        if not (0.0 <= self.censor_min_months < self.censor_max_months):
            raise CohortError("censoring window must satisfy 0 <= min < max")
        object.__setattr__(self, "hazard_terms", dict(self.hazard_terms or {}))
        feats = dict(DEFAULT_FEATURE_DISTS)
        for name, spec in (self.features or {}).items():
            if name not in feats:
                raise CohortError(f"unknown synthetic feature {name!r}")
            feats[name] = spec
        for name, spec in feats.items():
            _check_dist(name, spec)
        for name in self.hazard_terms:
            if name not in feats:
                raise CohortError(f"hazard term references unknown feature {name!r}")
        object.__setattr__(self, "features", feats)

    @classmethod
    def from_file(cls, path) -> "SyntheticConfig":
        with open(path) as fh:
            doc = json.load(fh)
        kwargs = {
            "n": doc["n"],
            "baseline_rate_36m": doc.get("baseline_rate_36m", 0.10),
            "hazard_terms": doc.get("hazard", {}),
            "features": doc.get("features", {}),
        }
        cens = doc.get("censoring", {})
        kwargs["censor_min_months"] = cens.get("min_months", 12.0)
        kwargs["censor_max_months"] = cens.get("max_months", 240.0)
        if "date_range" in doc:
            lo, hi = doc["date_range"]
            kwargs["date_range"] = (datetime.date.fromisoformat(lo), datetime.date.fromisoformat(hi))
        return cls(**kwargs)


def _check_dist(name: str, spec: dict) -> None:
    kind = spec.get("dist")
    if kind not in _DIST_KINDS:
        raise CohortError(f"feature {name!r}: unknown distribution {kind!r}")
    if kind == "normal" and not (spec.get("sd", 0) > 0):
        raise CohortError(f"feature {name!r}: normal sd must be > 0")
    if kind == "uniform" and not (spec["low"] <= spec["high"]):
        raise CohortError(f"feature {name!r}: uniform low > high")
    if kind == "bernoulli" and not (0.0 <= spec["p"] <= 1.0):
        raise CohortError(f"feature {name!r}: bernoulli p outside [0, 1]")
    if kind == "categorical":
        probs = spec["probs"]
        if len(probs) != len(spec["levels"]) or any(p < 0 for p in probs) or abs(sum(probs) - 1.0) > 1e-9:
            raise CohortError(f"feature {name!r}: categorical probs must be a distribution over levels")


def _draw_feature(rng: np.random.Generator, spec: dict, n: int) -> np.ndarray:
    kind = spec["dist"]
    if kind == "normal":
        x = rng.normal(spec["mean"], spec["sd"], size=n)
        if "min" in spec or "max" in spec:
            x = np.clip(x, spec.get("min", -np.inf), spec.get("max", np.inf))
        if spec.get("round"):
            x = np.rint(x)
        return x
    if kind == "uniform":
        return rng.uniform(spec["low"], spec["high"], size=n)
    if kind == "bernoulli":
        return (rng.random(n) < spec["p"]).astype(float)
    if kind == "categorical":
        return rng.choice(np.asarray(spec["levels"], dtype=float), size=n, p=spec["probs"])
    return np.full(n, float(spec["value"]))


def generate_synthetic_cohort(config: SyntheticConfig, seed: int) -> Cohort:
    """Draw a cohort whose survival times follow exp(beta'x) hazards."""
    rng = np.random.default_rng(seed)
    n = config.n

    draws = {}
    for name in FIELD_NAMES:
        if name in config.features:
            draws[name] = _draw_feature(rng, config.features[name], n)

    lp = np.zeros(n)
    for name, term in sorted(config.hazard_terms.items()):
        lp += term["beta"] * (draws[name] - term.get("center", 0.0))

    # Monthly baseline hazard from the configured 36-month failure rate.
    lam0 = -math.log(1.0 - config.baseline_rate_36m) / 36.0
    event_time = rng.exponential(1.0, size=n) / (lam0 * np.exp(lp))
    censor_time = rng.uniform(config.censor_min_months, config.censor_max_months, size=n)
    failed = event_time <= censor_time
    months = np.minimum(event_time, censor_time)

    start, end = config.date_range
    span = (end - start).days
    date_offsets = rng.integers(0, span + 1, size=n)

    records = []
    for i in range(n):
        values = {"record_id": i + 1}
        for name in FIELD_NAMES:
            if name == "record_id":
                continue
            if name == "transplant_date":
                values[name] = start + datetime.timedelta(days=int(date_offsets[i]))
            elif name == "graft_survival_months":
                values[name] = float(months[i])
            elif name == "graft_failed":
                values[name] = bool(failed[i])
            elif name in BOOL_FIELDS:
                values[name] = bool(draws[name][i])
            elif name in INT_FIELDS:
                values[name] = int(draws[name][i])
            else:
                values[name] = float(draws[name][i])
        records.append(TransplantRecord(**values))
    return Cohort(records=tuple(records), provenance=f"synthetic(seed={seed}, n={n})")
