import numpy as np
import pytest

from koopman_rds.domain.enums import (
    DivergencePolicy,
    HankelEstimator,
    Layout,
    ModelKind,
    ObservableKind,
    Scheme,
)
from koopman_rds.domain.models import HankelSpec, ModelSpec, ObservableSet
from koopman_rds.errors import IntegrationDivergedError, InvalidArgumentError, is_usage_error
from koopman_rds.services.dmd import SnapshotMoments
from koopman_rds.services.integrators import integrate, iterate_map
from koopman_rds.services.noise import RngStream
from koopman_rds.services.observables import evaluate_along
from koopman_rds.services.pipeline import (
    accumulate_time_delayed_moments,
    assemble_ensemble_pairs,
    assemble_ensemble_pairs_series,
    assemble_normalized_pairs,
    assemble_stochastic_hankel,
    assemble_time_delayed,
    empirical_gram,
    ensemble_pair_estimates,
    estimate_expectation,
    sample_initial_points,
)
from koopman_rds.utils import loglog_slope

LINEAR = ObservableSet(kind=ObservableKind.MONOMIALS, max_degree=1)


def test_estimate_expectation():
    est = estimate_expectation(np.array([[1.0], [3.0]]))
    np.testing.assert_allclose(est.values, [2.0])
    np.testing.assert_allclose(est.standard_error, [1.0])
    single = estimate_expectation(np.array([[5.0, 6.0]]))
    np.testing.assert_array_equal(single.standard_error, [0.0, 0.0])


def test_grid_points_are_cell_midpoints():
    np.testing.assert_allclose(
        sample_initial_points([(0.0, 1.0)], 4)[:, 0], [0.125, 0.375, 0.625, 0.875]
    )
    grid = sample_initial_points([(-1.0, 1.0), (-1.0, 1.0)], 4)
    np.testing.assert_allclose(grid, [[-0.5, -0.5], [-0.5, 0.5], [0.5, -0.5], [0.5, 0.5]])


def test_random_points_stay_in_box_and_repeat():
    a = sample_initial_points([(0.0, 1.0), (2.0, 3.0)], 50, mode="random", stream=RngStream(4))
    b = sample_initial_points([(0.0, 1.0), (2.0, 3.0)], 50, mode="random", stream=RngStream(4))
    np.testing.assert_array_equal(a, b)
    assert np.all((a[:, 0] >= 0) & (a[:, 0] <= 1) & (a[:, 1] >= 2) & (a[:, 1] <= 3))
    with pytest.raises(InvalidArgumentError):
        sample_initial_points([(0.0, 1.0)], 5, mode="random")
    with pytest.raises(InvalidArgumentError):
        sample_initial_points([(1.0, 0.0)], 5)


def test_deterministic_ensemble_pairs_are_exact():
    model = ModelSpec(kind=ModelKind.OU_LINEAR_SDE, params={"sigma": 0.0})
    obs = ObservableSet(kind=ObservableKind.MONOMIALS, max_degree=3)
    points = sample_initial_points([(-1.0, 1.0)], 10)
    data = assemble_ensemble_pairs(model, points, obs, 10, 0.01, 5, RngStream(0))
    assert data.layout == Layout.ENSEMBLE_PAIRS
    assert data.dt == pytest.approx(0.1)
    expected = (np.exp(-0.05) * points[:, 0]) ** np.arange(1, 4)[:, None]
    np.testing.assert_allclose(data.Y, expected, atol=1e-10)
    np.testing.assert_allclose(data.X, points[:, 0] ** np.arange(1, 4)[:, None])


def test_ensemble_standard_error_scales_with_inverse_root_n(ou_model):
    points = sample_initial_points([(-1.0, 1.0)], 20)
    sizes = [100, 400, 1600]
    errors = []
    for N in sizes:
        _, (est,) = ensemble_pair_estimates(
            ou_model.with_params(sigma=0.1), points, LINEAR, [10], 0.01, N, RngStream(8)
        )
        errors.append(est.standard_error.mean())
    assert loglog_slope(sizes, errors) == pytest.approx(-0.5, abs=0.1)


def test_ensemble_series_shares_paths(ou_model):
    points = sample_initial_points([(-1.0, 1.0)], 5)
    series = assemble_ensemble_pairs_series(ou_model, points, LINEAR, [2, 4], 0.01, 10, RngStream(2))
    last = assemble_ensemble_pairs(ou_model, points, LINEAR, 4, 0.01, 10, RngStream(2))
    assert [d.dt for d in series] == pytest.approx([0.02, 0.04])
    np.testing.assert_allclose(series[1].Y, last.Y, atol=1e-14)


def test_single_realization_time_delayed_matches_trajectory(ou_model):
    data = assemble_time_delayed(ou_model, [1.0], LINEAR, 50, 0.01, 1, RngStream(6))
    traj = integrate(ou_model, [1.0], 0.01, 50, RngStream(6))
    f = evaluate_along(LINEAR, traj)
    np.testing.assert_allclose(data.X, f[:, :50], atol=1e-14)
    np.testing.assert_allclose(data.Y, f[:, 1:], atol=1e-14)


def test_trajectory_moments_extend_the_single_realization(ou_model):
    single = assemble_time_delayed(ou_model, [1.0], LINEAR, 50, 0.01, 1, RngStream(6))
    one = accumulate_time_delayed_moments(ou_model, [1.0], LINEAR, 50, 0.01, 1, RngStream(6))
    expected = SnapshotMoments.from_snapshots(single)
    np.testing.assert_allclose(one.gram, expected.gram, atol=1e-12)
    np.testing.assert_allclose(one.cross, expected.cross, atol=1e-12)

    three = accumulate_time_delayed_moments(ou_model, [1.0], LINEAR, 50, 0.01, 3, RngStream(6))
    assert three.count == 150
    # column scaling leaves each snapshot a unit vector, so trace(G) counts them
    assert np.trace(three.gram).real == pytest.approx(150.0)
    with pytest.raises(InvalidArgumentError):
        accumulate_time_delayed_moments(ou_model, [1.0], LINEAR, 50, 0.01, 0, RngStream(6))


@pytest.mark.parametrize("estimator", list(HankelEstimator))
def test_hankel_estimators_agree_without_noise(estimator):
    model = ModelSpec(kind=ModelKind.OU_LINEAR_SDE, params={"sigma": 0.0})
    spec = HankelSpec(n_rows=8, m_cols=4, observable=LINEAR, averaging_N=3, estimator=estimator)
    data = assemble_stochastic_hankel(model, [1.0], spec, 0.1, RngStream(1))
    assert data.X.shape == (8, 4)
    lags = np.arange(8)[:, None] + np.arange(5)[None, :]
    H = np.exp(-0.05 * lags)
    np.testing.assert_allclose(data.X, H[:, :4], atol=1e-9)
    np.testing.assert_allclose(data.Y, H[:, 1:], atol=1e-9)


def _row_differences(ou_model, estimator):
    spec = HankelSpec(n_rows=10, m_cols=6, observable=LINEAR, averaging_N=20, estimator=estimator)
    data = assemble_stochastic_hankel(ou_model, [1.0], spec, 0.1, RngStream(3))
    H = np.column_stack([data.X, data.Y[:, -1]]).real
    return H[1:] - H[0]


def test_shared_noise_rows_differ_by_the_linear_flow_only(ou_model):
    # for additive noise and linear drift the continuation noise cancels between rows
    s = np.linalg.svd(_row_differences(ou_model, HankelEstimator.SHARED_NOISE), compute_uv=False)
    assert s[1] < 1e-10 * s[0]
    s = np.linalg.svd(_row_differences(ou_model, HankelEstimator.CONTINUATION), compute_uv=False)
    assert s[1] > 1e-3 * s[0]


def test_stochastic_hankel_shape(ou_model):
    spec = HankelSpec(n_rows=6, m_cols=3, observable=LINEAR, averaging_N=4)
    data = assemble_stochastic_hankel(ou_model, [1.0], spec, 0.1, RngStream(1))
    assert data.X.shape == data.Y.shape == (6, 3)
    np.testing.assert_allclose(data.X[:, 1:], data.Y[:, :-1])


def test_rotation_fourier_gram_is_near_identity():
    model = ModelSpec(kind=ModelKind.NOISY_ROTATION)
    obs = ObservableSet(kind=ObservableKind.FOURIER_EXP, n1=3)
    traj = iterate_map(model, [0.1], 20_000, RngStream(12))
    gram = empirical_gram(evaluate_along(obs, traj))
    assert np.max(np.abs(gram - np.eye(6))) < 5e-2


def test_normalized_pairs_follow_one_step_map():
    model = ModelSpec(kind=ModelKind.DISCRETE_LINEAR)
    points = sample_initial_points([(0.0, 1.0), (0.0, 1.0)], 3, mode="random", stream=RngStream(3))
    pairs = assemble_normalized_pairs(model, points, 40, RngStream(4))
    assert len(pairs) == 3
    for data in pairs:
        assert data.X.shape == (2, 40)
        np.testing.assert_allclose(np.linalg.norm(data.X, axis=0), 1.0)
        norms = np.linalg.norm(data.Y, axis=0)
        assert np.all(np.isclose(norms, 1.0) | np.isclose(norms, 2.0))


def test_divergence_names_the_initial_point():
    model = ModelSpec(kind=ModelKind.OU_LINEAR_SDE, params={"mu": 1000.0, "sigma": 0.0})
    with pytest.raises(IntegrationDivergedError, match="point 0"):
        assemble_ensemble_pairs(
            model, [[0.5], [1.0]], LINEAR, 200, 1.0, 1, RngStream(0), scheme=Scheme.EULER_MARUYAMA
        )


def test_point_with_no_surviving_path_is_a_numerical_failure():
    model = ModelSpec(kind=ModelKind.OU_LINEAR_SDE, params={"mu": 1000.0, "sigma": 0.0})
    with pytest.raises(IntegrationDivergedError, match="every path from point 1") as info:
        ensemble_pair_estimates(
            model,
            [[0.0], [1.0]],
            LINEAR,
            [200],
            1.0,
            2,
            RngStream(0),
            scheme=Scheme.EULER_MARUYAMA,
            on_divergence=DivergencePolicy.DROP,
        )
    assert not is_usage_error(info.value)


def test_dropped_paths_reduce_the_reported_sample_count():
    # radius crosses zero on some Euler steps when the noise is large near the origin
    model = ModelSpec(kind=ModelKind.STUART_LANDAU, params={"epsilon": 0.5})
    _, (estimate,) = ensemble_pair_estimates(
        model,
        [[0.05, 0.0], [0.7, 0.0]],
        LINEAR,
        [5],
        0.01,
        1000,
        RngStream(2),
        scheme=Scheme.EULER_MARUYAMA,
        on_divergence=DivergencePolicy.DROP,
    )
    assert 0 < estimate.n_samples < 1000


def test_argument_checks(ou_model):
    with pytest.raises(InvalidArgumentError):
        assemble_ensemble_pairs(ou_model, [[0.5], [1.0]], LINEAR, 0, 0.01, 1, RngStream(0))
    with pytest.raises(InvalidArgumentError):
        assemble_time_delayed(ou_model, [1.0], LINEAR, 1, 0.01, 1, RngStream(0))
