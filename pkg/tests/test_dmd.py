import numpy as np
import pytest

from koopman_rds.domain.enums import Layout
from koopman_rds.domain.models import DmdOptions
from koopman_rds.errors import DegenerateDataError, InvalidArgumentError, UnsupportedError
from koopman_rds.services.dmd import (
    SnapshotMatrices,
    SnapshotMoments,
    companion_dmd,
    dmd_rrr,
    dmd_rrr_moments,
    dmd_standard,
    eigenfunction_coefficients,
    evaluate_eigenfunctions,
)
from koopman_rds.services.matching import match_eigenvalues

EXPECTED = np.array([0.9, 0.5, 0.3 + 0.4j, 0.3 - 0.4j])


def _linear_map(rng):
    block = np.zeros((4, 4))
    block[0, 0], block[1, 1] = 0.9, 0.5
    block[2:, 2:] = [[0.3, 0.4], [-0.4, 0.3]]
    V = rng.standard_normal((4, 4)) + 3 * np.eye(4)
    return V @ block @ np.linalg.inv(V)


def _linear_data(rng, layout=Layout.TIME_DELAYED):
    A = _linear_map(rng)
    X = rng.standard_normal((4, 20))
    return A, SnapshotMatrices(X, A @ X, layout, 1.0)


def test_identity_and_doubling():
    X = np.random.default_rng(0).standard_normal((3, 10))
    ident = dmd_rrr(SnapshotMatrices(X, X, Layout.TIME_DELAYED, 1.0))
    np.testing.assert_allclose(ident.eigenvalues(), np.ones(3), atol=1e-12)
    double = dmd_rrr(SnapshotMatrices(X, 2 * X, Layout.TIME_DELAYED, 1.0))
    np.testing.assert_allclose(double.eigenvalues(), 2 * np.ones(3), atol=1e-12)


def test_exact_linear_data_recovers_spectrum(rng):
    _, data = _linear_data(rng)
    result = dmd_rrr(data)
    assert result.rank == 4
    assert len(result.pairs) == 4
    assert match_eigenvalues(result.eigenvalues(), EXPECTED).linf < 1e-8
    assert np.all(result.residuals() < 1e-10)


def test_left_coordinates_give_eigenfunctions(rng):
    A, data = _linear_data(rng)
    result = dmd_rrr(data)
    xi = eigenfunction_coefficients(result, data)
    for k, lam in enumerate(result.eigenvalues()):
        np.testing.assert_allclose(xi[:, k].conj() @ A, lam * xi[:, k].conj(), atol=1e-8)
    x = rng.standard_normal((4, 6))
    np.testing.assert_allclose(
        evaluate_eigenfunctions(xi, A @ x),
        result.eigenvalues()[:, None] * evaluate_eigenfunctions(xi, x),
        atol=1e-8,
    )


def test_residuals_match_their_definition(rng):
    X = rng.standard_normal((10, 6))
    Y = rng.standard_normal((10, 6))
    result = dmd_rrr(
        SnapshotMatrices(X, Y, Layout.TIME_DELAYED, 1.0),
        DmdOptions(residual_threshold=1e6),
    )
    assert result.rank == 6
    d = np.linalg.norm(X, axis=0)
    K = (Y / d) @ np.linalg.pinv(X / d)
    for pair in result.all_pairs:
        z = pair.ritz_vector
        assert np.linalg.norm(z) == pytest.approx(1.0)
        expected = np.linalg.norm(K @ z - pair.eigenvalue * z)
        assert pair.residual == pytest.approx(expected, abs=1e-10)


def test_pairs_are_ordered_by_residual(rng):
    X = rng.standard_normal((10, 6))
    Y = rng.standard_normal((10, 6))
    result = dmd_rrr(
        SnapshotMatrices(X, Y, Layout.TIME_DELAYED, 1.0), DmdOptions(residual_threshold=0.5)
    )
    residuals = [p.residual for p in result.all_pairs]
    assert all(p.residual <= 0.5 for p in result.pairs)
    assert all(p.residual > 0.5 for p in result.rejected)
    assert residuals[: len(result.pairs)] == sorted(residuals[: len(result.pairs)])


def test_column_scaling_invariance(rng):
    A, data = _linear_data(rng)
    d = rng.uniform(0.01, 100.0, size=data.m)
    scaled = SnapshotMatrices(data.X * d, data.Y * d, data.layout, data.dt)
    a = dmd_rrr(data).eigenvalues()
    b = dmd_rrr(scaled).eigenvalues()
    assert match_eigenvalues(b, a).linf < 1e-8


def test_rank_shrinks_with_eps(rng):
    U, _ = np.linalg.qr(rng.standard_normal((10, 6)))
    V, _ = np.linalg.qr(rng.standard_normal((6, 6)))
    X = U @ np.diag(10.0 ** -np.arange(0, 12, 2)) @ V.T
    data = SnapshotMatrices(X, rng.standard_normal((10, 6)), Layout.TIME_DELAYED, 1.0)
    ranks = [dmd_rrr(data, DmdOptions(eps=eps)).rank for eps in (1e-14, 1e-8, 1e-4, 1e-1)]
    assert ranks == sorted(ranks, reverse=True)
    assert ranks[-1] == 1
    assert dmd_rrr(data, DmdOptions(max_rank=2)).rank == 2


def test_single_row():
    X = np.array([[1.0, 2.0, -1.0, 0.5, 3.0]])
    result = dmd_rrr(SnapshotMatrices(X, 0.7 * X, Layout.TIME_DELAYED, 0.1))
    assert result.rank == 1
    assert result.eigenvalues()[0] == pytest.approx(0.7)
    assert result.continuous_eigenvalues()[0] == pytest.approx(np.log(0.7) / 0.1)


def test_degenerate_and_invalid_data():
    zeros = np.zeros((3, 4))
    with pytest.raises(DegenerateDataError):
        dmd_rrr(SnapshotMatrices(zeros, zeros, Layout.TIME_DELAYED, 1.0))
    with pytest.raises(InvalidArgumentError):
        SnapshotMatrices(np.ones((3, 4)), np.ones((3, 5)), Layout.TIME_DELAYED, 1.0)
    bad = np.ones((3, 4))
    bad[0, 0] = np.nan
    with pytest.raises(InvalidArgumentError):
        SnapshotMatrices(bad, np.ones((3, 4)), Layout.TIME_DELAYED, 1.0)


def _hankel_signal():
    k = np.arange(24)
    mu = 0.5 * np.exp(0.3j)
    s = 0.9**k + 2 * np.real(0.5 * mu**k)
    H = np.array([s[i : i + 4] for i in range(20)])
    return SnapshotMatrices(H[:, :3], H[:, 1:], Layout.HANKEL, 1.0)


def test_companion_recovers_krylov_spectrum():
    data = _hankel_signal()
    expected = [0.9, 0.5 * np.exp(0.3j), 0.5 * np.exp(-0.3j)]
    companion = companion_dmd(data)
    assert match_eigenvalues(companion.eigenvalues(), expected).linf < 1e-8
    rrr = dmd_rrr(data)
    assert match_eigenvalues(rrr.eigenvalues(), companion.eigenvalues()).linf < 1e-8


def test_companion_preconditions(rng):
    _, data = _linear_data(rng)
    with pytest.raises(UnsupportedError):
        companion_dmd(data)
    wide = SnapshotMatrices(np.ones((2, 3)), np.ones((2, 3)), Layout.HANKEL, 1.0)
    with pytest.raises(DegenerateDataError):
        companion_dmd(wide)


def test_hankel_eigenfunctions_are_ritz_vectors():
    data = _hankel_signal()
    result = dmd_rrr(data)
    coefficients = eigenfunction_coefficients(result, data)
    assert coefficients.shape == (20, len(result.pairs))
    np.testing.assert_allclose(np.linalg.norm(coefficients, axis=0), 1.0)


def test_standard_dmd_keeps_every_pair(rng):
    X = rng.standard_normal((10, 6))
    result = dmd_standard(SnapshotMatrices(X, rng.standard_normal((10, 6)), Layout.TIME_DELAYED, 1.0))
    assert len(result.pairs) == result.rank == 6
    assert result.rejected == []
    assert not result.scaling_applied


def _low_rank_data(rng):
    # X has rank 4 and span(X) is not invariant, so residuals are nonzero
    X = rng.standard_normal((10, 4)) @ rng.standard_normal((4, 60))
    Y = np.diag(np.linspace(0.3, 0.9, 10)) @ X + 1e-3 * rng.standard_normal((10, 60))
    return SnapshotMatrices(X, Y, Layout.TIME_DELAYED, 0.5)


def test_moments_reproduce_rrr_on_the_stacked_columns(rng):
    data = _low_rank_data(rng)
    opts = DmdOptions(residual_threshold=1e6)
    full = dmd_rrr(data, opts)
    moments = SnapshotMoments(n=10, layout=Layout.TIME_DELAYED, dt=0.5)
    for lo in range(0, 60, 25):
        moments.add(data.X[:, lo : lo + 25], data.Y[:, lo : lo + 25])
    assert moments.m == 60
    compressed = dmd_rrr_moments(moments, opts)
    assert compressed.rank == full.rank == 4
    np.testing.assert_allclose(compressed.singular_values[:4], full.singular_values[:4], rtol=1e-9)
    lam_full = [p.eigenvalue for p in full.all_pairs]
    lam_moments = [p.eigenvalue for p in compressed.all_pairs]
    assert match_eigenvalues(lam_moments, lam_full).linf < 1e-8
    res_full = np.sort([p.residual for p in full.all_pairs])
    res_moments = np.sort([p.residual for p in compressed.all_pairs])
    np.testing.assert_allclose(res_moments, res_full, atol=1e-8)
    assert res_full.max() > 1e-5


def test_moments_eigenfunctions_match_the_column_route(rng):
    A, data = _linear_data(rng)
    moments = SnapshotMoments.from_snapshots(data)
    result = dmd_rrr_moments(moments)
    assert match_eigenvalues(result.eigenvalues(), EXPECTED).linf < 1e-7
    xi = eigenfunction_coefficients(result, moments)
    for k, lam in enumerate(result.eigenvalues()):
        np.testing.assert_allclose(xi[:, k].conj() @ A, lam * xi[:, k].conj(), atol=1e-6)


def test_moments_argument_checks():
    moments = SnapshotMoments(n=3, layout=Layout.TIME_DELAYED, dt=1.0)
    with pytest.raises(InvalidArgumentError):
        moments.add(np.ones((2, 4)), np.ones((2, 4)))
    with pytest.raises(InvalidArgumentError):
        dmd_rrr_moments(moments)
    moments.add(np.zeros((3, 4)), np.zeros((3, 4)))
    assert moments.zero_norm_columns == 4
    with pytest.raises(DegenerateDataError):
        dmd_rrr_moments(moments)
