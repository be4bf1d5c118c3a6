import numpy as np
import pytest
from pydantic import ValidationError

from koopman_rds.domain.enums import ModelKind
from koopman_rds.domain.models import ModelSpec
from koopman_rds.errors import InvalidArgumentError
from koopman_rds.services.noise import DiscreteDistribution, SwitchingSignal
from koopman_rds.services.systems import (
    diffusion,
    drift,
    lotka_volterra_equilibrium,
    lotka_volterra_jacobian,
    state_is_valid,
    step_discrete,
)


def test_model_defaults_are_filled():
    model = ModelSpec(kind=ModelKind.OU_LINEAR_SDE)
    assert model["mu"] == -0.5
    assert model["sigma"] == 0.001
    assert model.dim == 1 and model.wiener_dim == 1


def test_model_rejects_unknown_and_negative_parameters():
    with pytest.raises(ValidationError):
        ModelSpec(kind=ModelKind.OU_LINEAR_SDE, params={"nu": 1.0})
    with pytest.raises(ValidationError):
        ModelSpec(kind=ModelKind.OU_LINEAR_SDE, params={"sigma": -0.1})
    with pytest.raises(ValidationError):
        ModelSpec(kind=ModelKind.DISCRETE_LINEAR, params={"p1": 1.5})


def test_deterministic_counterparts():
    sl = ModelSpec(kind=ModelKind.STUART_LANDAU)
    assert not sl.is_deterministic
    assert sl.deterministic()["epsilon"] == 0.0
    assert sl.deterministic().is_deterministic
    linear = ModelSpec(kind=ModelKind.DISCRETE_LINEAR)
    assert linear.deterministic()["p1"] == 1.0


def test_discrete_linear_step():
    model = ModelSpec(kind=ModelKind.DISCRETE_LINEAR)
    np.testing.assert_allclose(step_discrete(model, np.array([1.0, 0.0]), 2.0), [0.0, -2.0])


def test_rotation_step_wraps():
    model = ModelSpec(kind=ModelKind.NOISY_ROTATION, params={"theta": 0.02})
    np.testing.assert_allclose(step_discrete(model, np.array([0.99]), 0.0), [0.01], atol=1e-12)


def test_drifts_of_catalog_models():
    ou = ModelSpec(kind=ModelKind.OU_LINEAR_SDE)
    np.testing.assert_allclose(drift(ou, np.array([2.0])), [-1.0])
    pitchfork = ModelSpec(kind=ModelKind.SCALAR_PITCHFORK_SDE)
    np.testing.assert_allclose(drift(pitchfork, np.array([1.0])), [-1.5])
    vdp = ModelSpec(kind=ModelKind.VAN_DER_POL)
    np.testing.assert_allclose(drift(vdp, np.array([2.0, 0.0])), [0.0, -2.0])
    sl = ModelSpec(kind=ModelKind.STUART_LANDAU).deterministic()
    np.testing.assert_allclose(drift(sl, np.array([np.sqrt(0.5), 0.0])), [0.0, 0.5], atol=1e-15)


def test_switching_drift_needs_signal(switching_model):
    with pytest.raises(InvalidArgumentError):
        drift(switching_model, np.array([1.0, 0.0]))
    dist = DiscreteDistribution.two_point(-0.1, 0.1, 0.5)
    signal = SwitchingSignal(np.array([-0.1]), switching_model["switch_dt"], dist)
    np.testing.assert_allclose(
        drift(switching_model, np.array([1.0, 0.0]), 0.0, signal), [-0.1, -4.0]
    )


def test_diffusion_shapes():
    lv = ModelSpec(kind=ModelKind.LOTKA_VOLTERRA)
    g = diffusion(lv, np.ones((5, 2)))
    assert g.shape == (5, 2, 2)
    np.testing.assert_allclose(g[0], np.diag([0.05, 0.05]))
    sl = ModelSpec(kind=ModelKind.STUART_LANDAU)
    g = diffusion(sl, np.array([[0.5, 1.0]]))
    np.testing.assert_allclose(g[0], np.diag([0.03, 0.06]))


def test_state_dimension_is_checked():
    with pytest.raises(InvalidArgumentError):
        drift(ModelSpec(kind=ModelKind.VAN_DER_POL), np.array([1.0]))


def test_stuart_landau_radius_must_stay_positive():
    sl = ModelSpec(kind=ModelKind.STUART_LANDAU)
    valid = state_is_valid(sl, np.array([[0.5, 0.0], [-0.1, 0.0], [np.nan, 0.0]]))
    np.testing.assert_array_equal(valid, [True, False, False])


def test_lotka_volterra_fixed_points():
    lv = ModelSpec(kind=ModelKind.LOTKA_VOLTERRA)
    np.testing.assert_allclose(
        lotka_volterra_equilibrium(lv, ito_corrected=False), [3.07754, 1.93845], atol=1e-5
    )
    np.testing.assert_allclose(
        lotka_volterra_equilibrium(lv, ito_corrected=True), [3.08243, 1.93585], atol=1e-5
    )


def test_lotka_volterra_principal_eigenvalues():
    lv = ModelSpec(kind=ModelKind.LOTKA_VOLTERRA)
    point = lotka_volterra_equilibrium(lv, ito_corrected=False)
    lam = np.linalg.eigvals(lotka_volterra_jacobian(lv, point))
    lam = lam[np.argsort(-lam.imag)]
    assert lam[0].real == pytest.approx(-0.02507994, abs=1e-6)
    assert lam[0].imag == pytest.approx(0.863524, abs=1e-6)
    # the published value transposes two digits of the real part
    assert abs(lam[0] - (-0.02500799 + 0.863524j)) < 1e-4
