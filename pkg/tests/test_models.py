import math

import numpy as np
import orjson
import pytest

from invfilter.errors import DimensionError
from invfilter.lie import SE3_GROUP, SO3_GROUP, translation_group
from invfilter.models import (
    DiscreteModel,
    NoiseSpec,
    OutputKind,
    OutputMap,
    Scenario,
    discretize,
    propagate_truth,
    round_earth,
    sample_observation_noise,
    sample_process_noise,
    se3_velocity,
    simulate_trajectory,
    table3,
)


def test_two_vector_rejects_collinear_references():
    with pytest.raises(ValueError, match="collinear"):
        OutputMap.two_vector([1.0, 0.0, 0.0], [2.0, 0.0, 0.0])


def test_single_vector_rejects_zero_reference():
    with pytest.raises(DimensionError):
        OutputMap.single_vector([0.0, 0.0, 0.0])


def test_output_at_identity():
    output = OutputMap.two_vector([1.0, 0.0, 0.0], [0.0, 1.0, 0.0])
    assert output.obs_dim == 6
    assert np.array_equal(output.noiseless(np.eye(3)), output.h0)
    assert np.array_equal(OutputMap.velocity_se3().h0, np.zeros(3))


@pytest.mark.parametrize(
    "output",
    [
        OutputMap.two_vector([1.0, 0.0, 0.0], [0.0, 1.0, 0.0]),
        OutputMap.single_vector([0.0, 0.0, 1.0]),
        OutputMap.velocity_se3(),
        OutputMap.linear(np.arange(12.0).reshape(3, 4)),
    ],
    ids=lambda o: o.kind.value,
)
def test_output_is_left_right_equivariant(output, rng):
    """h(chi g, V) = g^-1 . h(chi, V)."""
    descriptor = output.descriptor
    chi = descriptor.exp(0.8 * rng.standard_normal(descriptor.algebra_dim))
    g = descriptor.exp(0.8 * rng.standard_normal(descriptor.algebra_dim))
    V = 0.1 * rng.standard_normal(output.obs_dim)
    lhs = output(descriptor.compose(chi, g), V)
    rhs = output.act(descriptor.inverse(g), output(chi, V))
    assert np.max(np.abs(lhs - rhs)) < 1e-12


def test_output_rejects_wrong_observation_size():
    output = OutputMap.single_vector([0.0, 0.0, 1.0])
    with pytest.raises(DimensionError, match="expects 3 entries"):
        output(np.eye(3), np.zeros(6))


def test_noise_spec_validation():
    with pytest.raises(ValueError, match="outlier probability"):
        NoiseSpec(np.eye(3), np.eye(3), outlier_prob=1.5)
    with pytest.raises(ValueError, match="not positive semi-definite"):
        NoiseSpec(-np.eye(3), np.eye(3))
    assert np.allclose(NoiseSpec(2.0 * np.eye(3), np.eye(3)).step_cov(0.5), np.eye(3))


def test_outliers_widen_observation_noise(rng):
    output = OutputMap.single_vector([0.0, 0.0, 1.0])
    clean = NoiseSpec(np.eye(3), 1e-6 * np.eye(3))
    dirty = NoiseSpec(np.eye(3), 1e-6 * np.eye(3), outlier_prob=1.0, outlier_std=1.0)
    assert np.std(sample_observation_noise(output, clean, rng, (5000,))) < 1e-2
    assert np.std(sample_observation_noise(output, dirty, rng, (5000,))) > 0.5


def test_outlier_fraction_matches_probability(rng):
    output = OutputMap.single_vector([0.0, 0.0, 1.0])
    spec = NoiseSpec(np.eye(3), 1e-12 * np.eye(3), outlier_prob=0.01, outlier_std=1.0)
    V = sample_observation_noise(output, spec, rng, (100_000,))
    fraction = np.mean(np.linalg.norm(V, axis=-1) > 1e-3)
    assert 0.008 <= fraction <= 0.012


def test_process_noise_is_concentrated_gaussian(rng):
    spec = NoiseSpec(0.01 * np.eye(3), np.eye(3))
    W = sample_process_noise(spec, 1.0, rng, SO3_GROUP, (100_000,))
    coords = SO3_GROUP.log(W)
    assert np.all(np.abs(np.cov(coords.T) - 0.01 * np.eye(3)) < 0.03 * 0.01)


def test_isotropic_process_noise_is_conjugation_invariant(rng):
    spec = NoiseSpec(0.01 * np.eye(3), np.eye(3))
    g = SO3_GROUP.exp(np.array([0.7, -1.1, 0.4]))
    W = sample_process_noise(spec, 1.0, rng, SO3_GROUP, (100_000,))
    conjugated = SO3_GROUP.log(SO3_GROUP.conjugate(g, W))
    plain = SO3_GROUP.log(sample_process_noise(spec, 1.0, rng, SO3_GROUP, (100_000,)))

    assert np.all(np.abs(conjugated.mean(axis=0)) < 2e-3)
    assert np.all(np.abs(np.cov(conjugated.T) - np.cov(plain.T)) < 0.03 * 0.01)
    fourth = [np.mean(c**4, axis=0) for c in (conjugated, plain)]
    assert np.allclose(fourth[0], fourth[1], rtol=0.06)


def test_process_noise_dimension_check(rng):
    spec = NoiseSpec(np.eye(6), np.eye(3))
    with pytest.raises(DimensionError):
        sample_process_noise(spec, 1.0, rng, SO3_GROUP)


def test_discretize_is_exact_flow():
    upsilon = np.array([0.0, 0.0, 1.0])
    left, right = discretize(upsilon, np.zeros(3), 0.5, SO3_GROUP)
    assert np.allclose(left, SO3_GROUP.exp(0.5 * upsilon))
    assert np.array_equal(right, np.eye(3))


def _rk4_flow(upsilon_hat, omega_hat, chi, dt, substeps):
    h = dt / substeps

    def rate(x):
        return upsilon_hat @ x + x @ omega_hat

    for _ in range(substeps):
        k1 = rate(chi)
        k2 = rate(chi + 0.5 * h * k1)
        k3 = rate(chi + 0.5 * h * k2)
        k4 = rate(chi + h * k3)
        chi = chi + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return chi


@pytest.mark.parametrize("descriptor", [SO3_GROUP, SE3_GROUP], ids=lambda d: d.group_id)
def test_discretize_matches_integrated_flow(descriptor, rng):
    """d chi/dt = upsilon chi + chi omega over one step, integrated with RK4."""
    for _ in range(5):
        upsilon = rng.standard_normal(descriptor.algebra_dim)
        omega = rng.standard_normal(descriptor.algebra_dim)
        chi0 = descriptor.exp(rng.standard_normal(descriptor.algebra_dim))
        left, right = discretize(upsilon, omega, 0.5, descriptor)
        integrated = _rk4_flow(descriptor.hat(upsilon), descriptor.hat(omega), chi0, 0.5, 1000)
        assert np.max(np.abs(left @ chi0 @ right - integrated)) < 1e-8


def test_model_checks_shapes():
    output = OutputMap.single_vector([0.0, 0.0, 1.0])
    noise = NoiseSpec(np.eye(3), np.eye(3))
    with pytest.raises(DimensionError, match="share length"):
        DiscreteModel(
            SO3_GROUP, SO3_GROUP.identity((3,)), SO3_GROUP.identity((4,)), noise, output
        )
    with pytest.raises(DimensionError, match="output map acts on"):
        DiscreteModel(SE3_GROUP, np.eye(4), np.eye(4), noise, output)
    model = DiscreteModel(SO3_GROUP, np.eye(3), SO3_GROUP.identity((5,)), noise, output)
    with pytest.raises(DimensionError, match="input steps"):
        Scenario("bad", model, horizon=7)


def test_model_copies_caller_inputs():
    right = SO3_GROUP.identity((4,))
    DiscreteModel(
        SO3_GROUP,
        np.eye(3),
        right,
        NoiseSpec(np.eye(3), np.eye(3)),
        OutputMap.single_vector([0.0, 0.0, 1.0]),
    )
    right[0] = np.eye(3)
    assert right.flags.writeable


def test_noiseless_truth_is_product_of_inputs():
    scenario = table3(horizon=10)
    zeros_w = SO3_GROUP.identity((10,))
    zeros_v = np.zeros((10, 6))
    trajectory = propagate_truth(scenario, np.eye(3), zeros_w, zeros_v)
    expected = np.eye(3)
    for n in range(10):
        expected = expected @ scenario.right(n)
    assert np.max(np.abs(trajectory.truth[-1] - expected)) < 1e-12
    expected_obs = np.concatenate([expected.T @ [1.0, 0.0, 0.0], expected.T @ [0.0, 1.0, 0.0]])
    assert np.max(np.abs(trajectory.observations[-1] - expected_obs)) < 1e-12


def test_simulation_is_reproducible():
    scenario = table3(horizon=20)
    a = simulate_trajectory(scenario, np.random.default_rng(7))
    b = simulate_trajectory(scenario, np.random.default_rng(7))
    c = simulate_trajectory(scenario, np.random.default_rng(8))
    assert np.array_equal(a.truth, b.truth)
    assert np.array_equal(a.observations, b.observations)
    assert not np.array_equal(a.observations, c.observations)
    assert a.horizon == 20


def test_initial_estimate_realizes_prior_error(rng):
    scenario = table3(horizon=5)
    xi0 = np.array([0.1, -0.2, 0.05])
    truth = SO3_GROUP.exp(rng.standard_normal(3))
    estimate = scenario.initial_estimate(truth, xi0)
    eta = truth @ estimate.T
    assert np.allclose(SO3_GROUP.log(eta), xi0, atol=1e-12)


def test_scenarios_serialize_with_orjson():
    for scenario in (table3(horizon=3), round_earth(horizon=3), se3_velocity(horizon=3)):
        payload = orjson.loads(orjson.dumps(scenario.to_dict()))
        assert payload["horizon"] == 3
        assert payload["model"]["group"] == scenario.descriptor.group_id


def test_round_earth_has_constant_left_input():
    scenario = round_earth(horizon=10)
    upsilon = scenario.model.constant_left
    assert upsilon is not None
    assert math.isclose(np.trace(upsilon), 3.0, abs_tol=1e-8)
    assert scenario.model.output.kind is OutputKind.SINGLE_VECTOR


def test_se3_velocity_scenario_shapes():
    scenario = se3_velocity(horizon=4)
    trajectory = simulate_trajectory(scenario, np.random.default_rng(0))
    assert trajectory.truth.shape == (5, 4, 4)
    assert trajectory.observations.shape == (4, 3)


def test_linear_output_on_translation_group():
    H = np.array([[1.0, 0.0], [0.0, 2.0]])
    output = OutputMap.linear(H)
    assert output.descriptor == translation_group(2)
    chi = translation_group(2).exp(np.array([1.0, 1.0]))
    assert np.allclose(output(chi, np.zeros(2)), [1.0, 2.0])
