import numpy as np
import pytest
from scipy import stats
from scipy.optimize import minimize_scalar
from scipy.special import gammaln

from erv_mixture.config import FitCfg, PiModel, ReplicateMode
from erv_mixture.dataset import CohortMetadata, CountMatrix
from erv_mixture.fitter import (
    MixtureParams,
    cm_step_alpha,
    cm_step_p,
    cm_step_pi,
    cm_step_r,
    e_step,
    init_state,
    observed_log_likelihood,
    r_objective,
)


def _cm(counts) -> CountMatrix:
    counts = np.asarray(counts)
    m, n = counts.shape
    return CountMatrix(
        tuple(f"v{i}" for i in range(m)), tuple(f"c{j}" for j in range(n)), counts
    )


def _meta(n, experiments=None, groups=None) -> CohortMetadata:
    experiments = np.zeros(n, dtype=int) if experiments is None else np.asarray(experiments)
    groups = tuple((j,) for j in range(n)) if groups is None else tuple(groups)
    animal_of_column = {j: g for g, group in enumerate(groups) for j in group}
    return CohortMetadata(
        experiment_of_column=experiments,
        replicate_groups=groups,
        unique_set=tuple(group[0] for group in groups),
        animal_labels=tuple(f"A{animal_of_column[j]}" for j in range(n)),
        experiment_labels=tuple(f"E{k}" for k in range(int(experiments.max()) + 1)),
    )


def _params(m, n, pi, r=2.0, alpha=0.2, p=0.9, pi_model=PiModel.SHARED, mode=ReplicateMode.IDENTICAL, K=1):
    return MixtureParams(
        pi_model=pi_model,
        pi=np.asarray(pi, dtype=float),
        r=np.broadcast_to(np.asarray(r, dtype=float), (n,)).copy(),
        alpha=np.broadcast_to(np.asarray(alpha, dtype=float), (m,)).copy(),
        p=np.broadcast_to(np.asarray(p, dtype=float), (K,)).copy(),
        replicate_mode=mode,
    )


def _random_instance(rng, m=6, n=5, K=2):
    counts = rng.integers(0, 30, size=(m, n))
    experiments = np.arange(n) % K
    return _cm(counts), _meta(n, experiments)


def test_init_posterior():
    cm = _cm([[0, 25, 4]])
    _, posterior = init_state(cm, _meta(3), FitCfg(init_c=10.0))
    np.testing.assert_allclose(posterior.z, [[0.0, 1.0, 0.4]])


def test_init_posterior_averages_replicates():
    cm = _cm([[0, 10, 5]])
    meta = _meta(3, groups=((0, 1), (2,)))
    _, posterior = init_state(cm, meta, FitCfg(init_c=10.0))
    np.testing.assert_allclose(posterior.z, [[0.5, 0.5, 0.5]])

    _, posterior = init_state(cm, meta, FitCfg(init_c=10.0, replicate_mode=ReplicateMode.INDEPENDENT))
    np.testing.assert_allclose(posterior.z, [[0.0, 1.0, 0.5]])


def test_e_step_prior_extremes():
    cm = _cm([[0, 3, 50], [7, 0, 1]])
    meta = _meta(3)
    assert np.all(e_step(cm, meta, _params(2, 3, 0.0)).z == 0.0)
    assert np.all(e_step(cm, meta, _params(2, 3, 1.0)).z == 1.0)


def test_e_step_equal_components():
    cm = _cm([[0, 3, 50]])
    z = e_step(cm, _meta(3), _params(1, 3, 0.5, alpha=0.4, p=0.4)).z
    np.testing.assert_allclose(z, 0.5)


def test_e_step_matches_direct_formula():
    rng = np.random.Generator(np.random.Philox(3))
    cm, meta = _random_instance(rng)
    params = MixtureParams(
        pi_model=PiModel.PER_VIRUS,
        pi=rng.uniform(0.1, 0.9, cm.m),
        r=rng.uniform(1, 10, cm.n),
        alpha=rng.uniform(0.05, 0.3, cm.m),
        p=np.array([0.8, 0.9]),
        replicate_mode=ReplicateMode.IDENTICAL,
    )
    f = stats.nbinom.pmf(cm.counts, params.r[None, :], params.alpha[:, None])
    g = stats.nbinom.pmf(cm.counts, params.r[None, :], params.p[meta.experiment_of_column][None, :])
    pi = params.pi[:, None]
    expected = pi * f / (pi * f + (1 - pi) * g)
    np.testing.assert_allclose(e_step(cm, meta, params).z, expected, rtol=1e-10)


def test_e_step_replicate_columns_share_posterior():
    cm = _cm([[0, 12, 3], [9, 0, 1], [2, 2, 0], [15, 1, 4]])
    meta = _meta(3, groups=((0, 1), (2,)))
    z = e_step(cm, meta, _params(4, 3, 0.3)).z
    np.testing.assert_array_equal(z[:, 0], z[:, 1])

    independent = _params(4, 3, 0.3, mode=ReplicateMode.INDEPENDENT)
    z = e_step(cm, meta, independent).z
    assert not np.allclose(z[:, 0], z[:, 1])


def test_alpha_update_example():
    update = cm_step_alpha(_cm([[2]]), np.array([[1.0]]), np.array([2.0]))
    assert update.exact[0] == pytest.approx(0.5)
    assert update.smoothed[0] == pytest.approx(2.05 / 4.1)


def test_alpha_update_without_carrier_weight():
    update = cm_step_alpha(_cm([[2, 9]]), np.zeros((1, 2)), np.array([2.0, 3.0]))
    assert update.smoothed[0] == pytest.approx(0.5)


def _bernoulli_rate_oracle(weight_r: float, weight_x: float) -> float:
    res = minimize_scalar(
        lambda t: -(weight_r * np.log(t) + weight_x * np.log1p(-t)),
        bounds=(1e-9, 1 - 1e-9),
        method="bounded",
        options={"xatol": 1e-12},
    )
    return res.x


def test_alpha_update_maximizes_objective():
    rng = np.random.Generator(np.random.Philox(5))
    a, b = 0.05, 0.1
    for _ in range(100):
        n = int(rng.integers(1, 8))
        cm = _cm(rng.integers(0, 40, size=(1, n)))
        z = rng.uniform(size=(1, n))
        r = rng.uniform(0.5, 20, n)
        weight_r = float((z * r).sum()) + a
        weight_x = float((z * cm.counts).sum()) + b - a
        expected = _bernoulli_rate_oracle(weight_r, weight_x)
        assert cm_step_alpha(cm, z, r, (a, b)).smoothed[0] == pytest.approx(expected, abs=1e-6)


def test_p_update_example():
    p, clamps = cm_step_p(_cm([[1]]), np.array([[0.0]]), np.array([3.0]), _meta(1))
    assert p[0] == pytest.approx(0.75)
    assert clamps == 0


def test_p_update_without_background_weight():
    p, clamps = cm_step_p(_cm([[1, 2]]), np.ones((1, 2)), np.array([3.0, 1.0]), _meta(2))
    assert p[0] == pytest.approx(1 - 1e-12)
    assert clamps >= 1


def test_p_update_maximizes_objective():
    rng = np.random.Generator(np.random.Philox(6))
    for _ in range(100):
        K = int(rng.integers(1, 4))
        cm, meta = _random_instance(rng, m=int(rng.integers(1, 8)), n=int(rng.integers(K, 9)), K=K)
        z = rng.uniform(size=(cm.m, cm.n))
        r = rng.uniform(0.5, 20, cm.n)
        p, _ = cm_step_p(cm, z, r, meta)

        for k in range(K):
            cols = meta.experiment_of_column == k
            w = 1 - z[:, cols]
            weight_r = float((w * r[cols][None, :]).sum())
            weight_x = float((w * cm.counts[:, cols]).sum())
            assert p[k] == pytest.approx(_bernoulli_rate_oracle(weight_r, weight_x), abs=1e-6)


def test_r_all_zero_column_goes_to_bracket_end():
    cm = _cm([[0], [0], [0]])
    r, hits = cm_step_r(cm, np.zeros((3, 1)), np.full(3, 0.2), np.array([0.9]), _meta(1))
    assert r[0] == pytest.approx(1e-6)
    assert hits == 1


def _r_objective_grid(x: np.ndarray, slope: float, grid: np.ndarray) -> np.ndarray:
    x = x[x > 0][:, None]
    return (gammaln(x + grid) - gammaln(grid) - gammaln(x + 1.0)).sum(axis=0) + grid * slope


def test_r_update_matches_grid():
    rng = np.random.Generator(np.random.Philox(8))
    coarse = np.geomspace(1e-6, 1e7, 4001)
    step = np.log(coarse[1] / coarse[0])
    for _ in range(100):
        cm, meta = _random_instance(rng, m=int(rng.integers(1, 10)), n=1, K=1)
        z = rng.uniform(size=(cm.m, 1))
        alpha = rng.uniform(0.01, 0.4, cm.m)
        p = np.array([rng.uniform(0.5, 0.99)])
        r, _ = cm_step_r(cm, z, alpha, p, meta)

        x = cm.counts[:, 0].astype(float)
        slope = float(np.sum(z[:, 0] * np.log(alpha) + (1 - z[:, 0]) * np.log(p[0])))
        best = coarse[np.argmax(_r_objective_grid(x, slope, coarse))]
        fine = np.clip(best * np.exp(np.linspace(-step, step, 4001)), 1e-6, 1e7)
        oracle = float(_r_objective_grid(x, slope, fine).max())

        found = r_objective(x, z[:, 0], alpha, p[0], r[0])
        assert found >= oracle - 1e-7 * max(1.0, abs(oracle))
        assert found <= oracle + 1e-6 * max(1.0, abs(oracle))


def test_r_update_never_decreases_objective():
    rng = np.random.Generator(np.random.Philox(7))
    for _ in range(100):
        cm, meta = _random_instance(rng, m=6, n=3, K=1)
        z = rng.uniform(size=(6, 3))
        alpha = rng.uniform(0.01, 0.4, 6)
        p = np.array([rng.uniform(0.5, 0.99)])
        r_old = rng.uniform(0.1, 100, 3)
        r_new, _ = cm_step_r(cm, z, alpha, p, meta, r_init=r_old)
        for j in range(3):
            x = cm.counts[:, j].astype(float)
            before = r_objective(x, z[:, j], alpha, p[0], r_old[j])
            after = r_objective(x, z[:, j], alpha, p[0], r_new[j])
            assert after >= before - 1e-9


@pytest.mark.parametrize("pi_model", list(PiModel))
def test_pi_update_uniform_posterior(pi_model):
    z = np.full((3, 4), 0.5)
    pi = cm_step_pi(z, _meta(4), FitCfg(pi_model=pi_model))
    np.testing.assert_allclose(pi, 0.5)


def test_pi_update_identity_posterior():
    pi = cm_step_pi(np.eye(2), _meta(2), FitCfg(pi_model=PiModel.PER_VIRUS))
    np.testing.assert_allclose(pi, [0.5, 0.5])
    pi = cm_step_pi(np.eye(2), _meta(2), FitCfg(pi_model=PiModel.PER_ANIMAL))
    np.testing.assert_allclose(pi, [0.5, 0.5])


def test_pi_update_counts_replicates_once():
    z = np.array([[1.0, 1.0, 0.0]])
    meta = _meta(3, groups=((0, 1), (2,)))
    identical = FitCfg(pi_model=PiModel.PER_VIRUS, replicate_mode=ReplicateMode.IDENTICAL)
    independent = FitCfg(pi_model=PiModel.PER_VIRUS, replicate_mode=ReplicateMode.INDEPENDENT)
    assert cm_step_pi(z, meta, identical)[0] == pytest.approx(0.5)
    assert cm_step_pi(z, meta, independent)[0] == pytest.approx(2 / 3)

    pi = cm_step_pi(np.array([[1.0, 1.0, 0.0]]), meta, identical.replace(pi_model=PiModel.PER_ANIMAL))
    np.testing.assert_allclose(pi, [1.0, 1.0, 0.0])


def test_loglik_single_cell():
    cm = _cm([[0]])
    params = _params(1, 1, 0.5, r=1.0, alpha=0.3, p=0.7)
    assert observed_log_likelihood(cm, _meta(1), params) == pytest.approx(np.log(0.5))


def test_loglik_carrier_only():
    cm = _cm([[0, 4, 11]])
    params = _params(1, 3, 1.0, r=2.0, alpha=0.3, p=0.9)
    expected = stats.nbinom.logpmf(cm.counts[0], 2.0, 0.3).sum()
    assert observed_log_likelihood(cm, _meta(3), params) == pytest.approx(expected, rel=1e-12)


def test_loglik_matches_direct_product():
    rng = np.random.Generator(np.random.Philox(8))
    cm = _cm(rng.integers(0, 15, size=(3, 3)))
    meta = _meta(3, experiments=[0, 1, 0], groups=((0, 2), (1,)))
    params = MixtureParams(
        pi_model=PiModel.PER_VIRUS,
        pi=np.array([0.2, 0.5, 0.8]),
        r=np.array([3.0, 1.5, 6.0]),
        alpha=np.array([0.1, 0.2, 0.3]),
        p=np.array([0.85, 0.95]),
    )
    f = stats.nbinom.pmf(cm.counts, params.r[None, :], params.alpha[:, None])
    g = stats.nbinom.pmf(cm.counts, params.r[None, :], params.p[meta.experiment_of_column][None, :])
    expected = 0.0
    for group in meta.replicate_groups:
        cols = list(group)
        carrier = f[:, cols].prod(axis=1)
        background = g[:, cols].prod(axis=1)
        expected += np.log(params.pi * carrier + (1 - params.pi) * background).sum()
    assert observed_log_likelihood(cm, meta, params) == pytest.approx(expected, rel=1e-10)
