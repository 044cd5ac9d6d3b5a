import datetime
from pathlib import Path

import numpy as np
import pytest

from graftml.cohort import Cohort, SyntheticConfig, TransplantRecord, generate_synthetic_cohort

CONFIGS = Path(__file__).resolve().parent.parent / "configs"
FIXTURES = Path(__file__).resolve().parent / "fixtures"

CLEAN_DEFAULTS = dict(
    record_id=1,
    donor_age=40,
    donor_race=0,
    donor_hypertension=False,
    donor_diabetes=False,
    donor_creatinine=1.1,
    donor_cod_cva=False,
    donor_height=172.0,
    donor_weight=78.0,
    dcd=False,
    donor_hcv=False,
    hla_b_mismatch=1,
    hla_dr_mismatch=1,
    en_bloc=False,
    double_kidney=False,
    cold_ischemia_hours=18.0,
    recipient_age=50,
    recipient_age_at_waitlisting=48,
    recipient_diabetes=False,
    recipient_dialysis_years=3.0,
    recipient_prior_transplant=False,
    multi_organ=False,
    abo_incompatible=False,
    transplant_date=datetime.date(2000, 6, 15),
    graft_survival_months=60.0,
    graft_failed=False,
)


def make_record(**overrides) -> TransplantRecord:
    values = dict(CLEAN_DEFAULTS)
    values.update(overrides)
    return TransplantRecord(**values)


def make_cohort(records, provenance="test") -> Cohort:
    return Cohort(records=tuple(records), provenance=provenance)


@pytest.fixture(scope="session")
def planted_config() -> SyntheticConfig:
    return SyntheticConfig.from_file(CONFIGS / "synth_planted.json")


@pytest.fixture(scope="session")
def planted_cohort(planted_config):
    return generate_synthetic_cohort(planted_config, 11)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
