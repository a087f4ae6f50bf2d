import numpy as np
import pytest

from erv_mixture.config import FitCfg, ReplicateMode, SweepCfg
from erv_mixture.dataset import CohortMetadata, CountMatrix
from erv_mixture.diagnostics import (
    ModelTag,
    dispersion_summary,
    fit_nb_rowcol,
    fit_poisson_rowcol,
    pearson_residuals,
    posterior_classify,
    replicate_consistency,
    threshold_classify,
)
from erv_mixture.distributions import poisson_log_pmf
from erv_mixture.fitter import PosteriorMatrix, fit
from erv_mixture.simulator import default_spec, simulate
from erv_mixture.utils.errors import ValidationError


def _cm(counts) -> CountMatrix:
    counts = np.asarray(counts)
    m, n = counts.shape
    return CountMatrix(
        tuple(f"v{i}" for i in range(m)), tuple(f"c{j}" for j in range(n)), counts
    )


def _rng(seed):
    return np.random.Generator(np.random.Philox(seed))


def _poisson_counts(seed, m=30, n=30):
    rng = _rng(seed)
    a = rng.uniform(40, 80, m)
    b = rng.uniform(1, 2, n)
    return _cm(rng.poisson(np.outer(a, b)))


def _nb_counts(seed, alpha, r):
    rng = _rng(seed)
    alpha = np.asarray(alpha)[:, None]
    r = np.asarray(r)[None, :]
    shape = np.broadcast_shapes(alpha.shape, r.shape)
    lam = rng.gamma(np.broadcast_to(r, shape), np.broadcast_to((1 - alpha) / alpha, shape))
    return _cm(rng.poisson(lam))


def test_threshold_classify():
    cm = _cm([[0, 1, 5, 10]])
    assert threshold_classify(cm, 1).tolist() == [[0, 1, 1, 1]]
    assert threshold_classify(cm, 5).tolist() == [[0, 0, 1, 1]]
    assert threshold_classify(cm, 11).tolist() == [[0, 0, 0, 0]]


def test_threshold_classify_is_monotone():
    rng = _rng(0)
    cm = _cm(rng.integers(0, 15, size=(20, 10)))
    calls = [threshold_classify(cm, t) for t in range(1, 12)]
    for low, high in zip(calls, calls[1:]):
        assert np.all(high <= low)


def test_threshold_classify_rejects_bad_threshold():
    cm = _cm([[1]])
    with pytest.raises(ValidationError):
        threshold_classify(cm, 0)
    with pytest.raises(ValidationError):
        threshold_classify(cm, 2.5)


def test_posterior_classify():
    z = np.array([[0.0, 0.3, 0.5, 1.0]])
    assert posterior_classify(z, 0.0).tolist() == [[0, 1, 1, 1]]
    assert posterior_classify(z, 0.5).tolist() == [[0, 0, 0, 1]]
    assert posterior_classify(PosteriorMatrix(z), 1.0).tolist() == [[0, 0, 0, 0]]
    with pytest.raises(ValidationError):
        posterior_classify(z, 1.5)


def test_posterior_classify_is_monotone():
    z = _rng(1).uniform(size=(10, 10))
    calls = [posterior_classify(z, c) for c in np.linspace(0, 1, 21)]
    for low, high in zip(calls, calls[1:]):
        assert np.all(high <= low)


def test_poisson_single_cell():
    result = fit_poisson_rowcol(_cm([[20]]))
    assert result.row_params[0] * result.col_params[0] == pytest.approx(20.0)
    report = pearson_residuals(_cm([[20]]), result)
    assert report.residuals.tolist() == pytest.approx([0.0])


def test_poisson_rank_one_is_exact():
    x = np.outer([10, 20, 30], [1, 2, 3])
    result = fit_poisson_rowcol(_cm(x))
    mean, _ = result.moments()
    np.testing.assert_allclose(mean, x, rtol=1e-8)
    assert result.col_params.sum() == pytest.approx(3.0)


def test_poisson_fit_is_a_maximum():
    rng = _rng(2)
    cm = _cm(rng.integers(10, 60, size=(5, 4)))
    result = fit_poisson_rowcol(cm)
    x = cm.counts.astype(float)
    best = poisson_log_pmf(x, np.outer(result.row_params, result.col_params)).sum()
    for _ in range(1000):
        a = result.row_params * np.exp(rng.normal(0, 0.05, 5))
        b = result.col_params * np.exp(rng.normal(0, 0.05, 4))
        assert poisson_log_pmf(x, np.outer(a, b)).sum() <= best + 1e-9


def test_rowcol_drops_small_counts():
    cm = _cm([[20, 3, 0], [4, 5, 6], [12, 0, 15]])
    result = fit_poisson_rowcol(cm, cutoff=9)
    assert result.rows.tolist() == [0, 2]
    assert result.cols.tolist() == [0, 2]
    assert (result.dropped_rows, result.dropped_cols) == (1, 1)
    assert result.mask.sum() == 3
    assert len(pearson_residuals(cm, result).residuals) == 3

    with pytest.raises(ValidationError, match="no cell"):
        fit_poisson_rowcol(_cm([[1, 2], [3, 4]]))


def test_nb_saturated_fit():
    x = np.diag([15, 30, 50])
    result = fit_nb_rowcol(_cm(x))
    mean, _ = result.moments()
    np.testing.assert_allclose(mean[result.mask], [15, 30, 50], rtol=1e-6)


def test_nb_recovers_means():
    rng = _rng(3)
    alpha = rng.uniform(0.1, 0.3, 40)
    r = rng.uniform(50, 100, 40)
    cm = _nb_counts(4, alpha, r)
    result = fit_nb_rowcol(cm)
    assert result.mask.all()

    mean, _ = result.moments()
    truth = r[None, :] * (1 - alpha[:, None]) / alpha[:, None]
    rel = np.abs(mean - truth) / truth
    assert np.median(rel) < 0.05
    assert np.mean(rel < 0.1) >= 0.95


def test_nb_loglik_never_decreases():
    rng = _rng(5)
    cm = _nb_counts(6, rng.uniform(0.05, 0.2, 15), rng.uniform(5, 30, 12))
    result = fit_nb_rowcol(cm)
    trace = np.array(result.loglik_trace)
    assert np.all(np.diff(trace) >= -1e-8 * np.abs(trace[:-1]))


def test_residuals_on_poisson_counts():
    cm = _poisson_counts(7)
    for fitter in (fit_poisson_rowcol, fit_nb_rowcol):
        summary = dispersion_summary(pearson_residuals(cm, fitter(cm)))
        assert summary.count >= 500
        assert 0.8 <= summary.variance <= 1.2


def test_residuals_on_overdispersed_counts():
    rng = _rng(8)
    cm = _nb_counts(9, np.full(30, 0.2), rng.uniform(10, 30, 30))

    poisson = dispersion_summary(pearson_residuals(cm, fit_poisson_rowcol(cm)))
    nb = dispersion_summary(pearson_residuals(cm, fit_nb_rowcol(cm)))
    assert poisson.count >= 500
    assert poisson.variance > 1.5
    assert 0.8 <= nb.variance <= 1.2


def test_residuals_do_not_depend_on_order():
    cm = _poisson_counts(10, m=12, n=9)
    rng = _rng(11)
    rows = rng.permutation(cm.m)
    cols = rng.permutation(cm.n)
    shuffled = CountMatrix(
        tuple(np.asarray(cm.virus_ids)[rows]),
        tuple(np.asarray(cm.animal_column_ids)[cols]),
        cm.counts[np.ix_(rows, cols)],
    )
    a = pearson_residuals(cm, fit_poisson_rowcol(cm))
    b = pearson_residuals(shuffled, fit_poisson_rowcol(shuffled))
    np.testing.assert_allclose(np.sort(a.residuals), np.sort(b.residuals), atol=1e-8)
    assert a.model_tag == ModelTag.POISSON_ROWCOL


def test_qq_pairs():
    cm = _poisson_counts(12, m=10, n=10)
    report = pearson_residuals(cm, fit_poisson_rowcol(cm))
    n = len(report.residuals)
    assert report.qq_pairs.shape == (n, 2)
    assert np.all(np.diff(report.qq_pairs[:, 0]) > 0)
    assert np.all(np.diff(report.qq_pairs[:, 1]) >= 0)
    assert report.qq_pairs[:, 0].mean() == pytest.approx(0.0, abs=1e-10)


def _replicate_meta() -> CohortMetadata:
    # columns 0 and 1 are the same animal, column 2 is another one
    return CohortMetadata(
        experiment_of_column=np.array([0, 1, 0]),
        replicate_groups=((0, 1), (2,)),
        unique_set=(0, 2),
        animal_labels=("A1", "A1", "A2"),
        experiment_labels=("E1", "E2"),
    )


def test_replicate_case_partition():
    cm = _cm([[0, 0, 7], [3, 0, 1], [20, 25, 0]])
    zhat = PosteriorMatrix(np.zeros((3, 3)), ReplicateMode.INDEPENDENT)
    validation = replicate_consistency(cm, _replicate_meta(), zhat)

    partition = validation.partition
    assert (partition.always_consistent, partition.always_inconsistent, partition.sensitive) == (2, 0, 1)
    assert partition.total == 3

    # the sensitive case (3, 0) is split up to threshold 3 and agrees from 4 on
    points = validation.threshold_curve.points
    np.testing.assert_allclose(points[:3], [[0.5, 0.0]] * 3)
    np.testing.assert_allclose(points[3:], [[0.0, 1.0]] * 7)
    assert validation.threshold_curve.sensitive_case_count == 1


def test_replicate_curves_stay_in_unit_square():
    sim = simulate(default_spec(seed=2))
    result = fit(sim.cm, sim.meta, FitCfg(replicate_mode=ReplicateMode.INDEPENDENT))
    validation = replicate_consistency(sim.cm, sim.meta, result.posterior, SweepCfg())

    assert validation.partition.total == sim.cm.m * sim.spec.n_replicated
    for curve in (validation.threshold_curve, validation.cutoff_curve):
        assert np.all((curve.points >= 0) & (curve.points <= 1))
    assert len(validation.threshold_curve.points) <= 10
    assert len(validation.gaps) == len(validation.threshold_curve.points)

    # posterior calls are at least as consistent as count calls with the same positive rate
    assert np.all(validation.gaps >= -0.05)
    assert validation.gaps.mean() > 0


def test_replicate_validation_refuses_identical_posterior():
    cm = _cm([[0, 0, 7]])
    zhat = PosteriorMatrix(np.zeros((1, 3)), ReplicateMode.IDENTICAL)
    with pytest.raises(ValidationError, match="identical"):
        replicate_consistency(cm, _replicate_meta(), zhat)


def test_replicate_validation_needs_replicates():
    cm = _cm([[0, 4]])
    meta = CohortMetadata(
        experiment_of_column=np.array([0, 0]),
        replicate_groups=((0,), (1,)),
        unique_set=(0, 1),
        animal_labels=("A1", "A2"),
        experiment_labels=("E1",),
    )
    zhat = PosteriorMatrix(np.zeros((1, 2)), ReplicateMode.INDEPENDENT)
    with pytest.raises(ValidationError, match="no replicate group"):
        replicate_consistency(cm, meta, zhat)
