"""
Checks against the published 1722×77 deer cohort, skipped unless ERVMIX_PAPER_DATA names a
directory holding its counts.csv and meta.csv
"""
import os
from pathlib import Path

import numpy as np
import pytest

from erv_mixture.analysis import fit_summary_tables
from erv_mixture.config import FitCfg, PiModel, ReplicateMode
from erv_mixture.dataset import load_count_matrix, load_metadata, summarize_counts
from erv_mixture.diagnostics import replicate_consistency
from erv_mixture.fitter import fit
from erv_mixture.selection import select_model

DATA_ENV = "ERVMIX_PAPER_DATA"

pytestmark = pytest.mark.skipif(
    not os.environ.get(DATA_ENV), reason=f"{DATA_ENV} is not set"
)


@pytest.fixture(scope="module")
def cohort():
    data_dir = Path(os.environ[DATA_ENV])
    cm = load_count_matrix(data_dir / "counts.csv")
    return cm, load_metadata(data_dir / "meta.csv", cm)


@pytest.fixture(scope="module")
def identical_fit(cohort):
    cm, meta = cohort
    return fit(cm, meta, FitCfg(pi_model=PiModel.PER_VIRUS, replicate_mode=ReplicateMode.IDENTICAL))


def test_count_summary(cohort):
    cm, _ = cohort
    summary = summarize_counts(cm)
    assert summary.zero_fraction == pytest.approx(0.826, abs=0.005)
    assert summary.low_fraction == pytest.approx(0.063, abs=0.005)
    assert summary.mean_nonzero == pytest.approx(98.6, abs=0.05)


def test_case_partition(cohort):
    cm, meta = cohort
    result = fit(cm, meta, FitCfg(pi_model=PiModel.PER_VIRUS, replicate_mode=ReplicateMode.INDEPENDENT))
    partition = replicate_consistency(cm, meta, result.posterior).partition
    assert partition.always_inconsistent == 251
    assert partition.sensitive == 2691
    assert partition.total == cm.m * 11


def test_posterior_fractions(cohort, identical_fit):
    cm, meta = cohort
    tables = fit_summary_tables(cm, identical_fit, meta)
    assert tables.fraction_low == pytest.approx(0.524, abs=0.01)
    assert tables.fraction_high == pytest.approx(0.146, abs=0.01)


def test_background_probabilities(identical_fit):
    np.testing.assert_allclose(
        np.sort(identical_fit.params.p), np.sort([0.979, 0.963, 0.981]), atol=0.01
    )


def test_model_ranking(cohort):
    cm, meta = cohort
    selection = select_model(cm, meta, FitCfg(), replicate_modes=(ReplicateMode.IDENTICAL,), threads=None)
    ranked = [s.pi_model for s in selection.scores[ReplicateMode.IDENTICAL]]
    assert ranked == [PiModel.PER_VIRUS, PiModel.SHARED, PiModel.PER_ANIMAL]
