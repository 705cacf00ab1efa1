import math

import numpy as np
import pytest

from invfilter.fixed_gain import (
    FixedGainRunner,
    GridResult,
    HorizonGain,
    HorizonGainParams,
    TwoVectorGain,
    TwoVectorGainParams,
    default_fixed_gain,
    estimate_stationary,
    grid_optimize_horizon,
    horizon_angle_sequence,
    horizon_gain,
    lyapunov_E,
    marginal_distance,
    noiseless_iterate,
    output_error,
    symmetry_diagnostic,
    tilt_coordinates,
    two_vector_gain,
    write_surface_csv,
)
from invfilter.lie import SO3_GROUP, rotation_angle
from invfilter.models import artificial_horizon, table3
from invfilter.utils import read_csv

B1 = (1.0, 0.0, 0.0)
B2 = (0.0, 1.0, 0.0)
G = np.array([0.0, 0.0, 1.0])


def uniform_rotations(rng, count):
    q = rng.standard_normal((count, 4))
    q /= np.linalg.norm(q, axis=-1, keepdims=True)
    w, x, y, z = q.T
    return np.stack(
        [
            np.stack([1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)], -1),
            np.stack([2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)], -1),
            np.stack([2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)], -1),
        ],
        axis=-2,
    )


def test_gain_params_validation():
    with pytest.raises(ValueError, match="k1 \\+ k2 <= 1"):
        TwoVectorGainParams(0.6, 0.6)
    with pytest.raises(ValueError, match="positive"):
        TwoVectorGainParams(0.0, 0.5)
    with pytest.raises(ValueError, match="\\(0, 1\\]"):
        HorizonGainParams(1.5, 0.1)
    with pytest.raises(ValueError, match="\\(0, pi\\]"):
        HorizonGainParams(0.5, 4.0)


def test_two_vector_gain_values():
    params = TwoVectorGainParams(0.3, 0.2)
    assert np.allclose(two_vector_gain(np.array(B1 + B2), params), np.eye(3))
    # y1 = b2: k1 (b2 x b1) = (0, 0, -k1)
    y = np.array(B2 + B2)
    assert np.allclose(two_vector_gain(y, params), SO3_GROUP.exp(np.array([0.0, 0.0, -0.3])))


def test_horizon_gain_degenerate_cases():
    params = HorizonGainParams(0.5, 0.2)
    assert np.allclose(horizon_gain(G, params), np.eye(3), atol=1e-15)
    assert np.allclose(horizon_gain(-G, params), np.eye(3), atol=1e-15)


def test_horizon_gain_threshold():
    params = HorizonGainParams(0.5, 0.2)
    y = np.array([math.sin(1.0), 0.0, math.cos(1.0)])
    assert rotation_angle(horizon_gain(y, params)) == pytest.approx(0.5 * 0.2, abs=1e-12)
    y_small = np.array([math.sin(0.1), 0.0, math.cos(0.1)])
    assert rotation_angle(horizon_gain(y_small, params)) == pytest.approx(0.05, abs=1e-12)


def test_lyapunov_values():
    params = TwoVectorGainParams(0.3, 0.2)
    assert lyapunov_E(np.eye(3), params) == 0.0
    half_turn = SO3_GROUP.exp(np.array([0.0, 0.0, math.pi]))
    assert lyapunov_E(half_turn, params) == pytest.approx(4 * (0.3 + 0.2))


def test_noiseless_identity_is_fixed():
    gain = TwoVectorGain(TwoVectorGainParams(0.3, 0.3))
    sequence = noiseless_iterate(np.eye(3), gain, np.eye(3), 5)
    assert np.allclose(sequence, np.eye(3))


def test_two_vector_noiseless_convergence(rng):
    params = TwoVectorGainParams(0.3, 0.3)
    gain = TwoVectorGain(params)
    gamma0 = uniform_rotations(rng, 1000)
    sequence = noiseless_iterate(gamma0, gain, np.eye(3), 200)

    assert np.max(rotation_angle(sequence[-1])) < 1e-6
    energy = lyapunov_E(sequence, params)
    assert np.all(np.diff(energy, axis=0) <= 1e-12)


def test_horizon_angle_recursion_matches_group_iteration():
    for k, lam in [(0.5, math.pi), (0.5, 0.1)]:
        gain = HorizonGain(HorizonGainParams(k, lam))
        phi0 = 1.2
        gamma0 = SO3_GROUP.exp(np.array([phi0, 0.0, 0.0]))
        sequence = noiseless_iterate(gamma0, gain, np.eye(3), 200)
        y = np.einsum("nji,j->ni", sequence, G)
        angles = np.arctan2(np.linalg.norm(np.cross(y, G), axis=-1), y @ G)
        expected = horizon_angle_sequence(phi0, k, lam, 200)
        # below the degeneracy threshold the gain stops turning
        resolved = expected > 1e-9
        assert np.max(np.abs(angles[resolved] - expected[resolved])) < 1e-12
        assert np.max(angles[~resolved]) < 1e-9
        # stays in the plane spanned by g and gamma_0^-1 g
        normal = np.cross(G, y[0]) / np.linalg.norm(np.cross(G, y[0]))
        assert np.max(np.abs(y @ normal)) < 1e-9

    assert horizon_angle_sequence(1.0, 0.5, math.pi, 2).tolist() == [1.0, 0.5, 0.25]


def test_horizon_output_error_vanishes():
    gain = HorizonGain(HorizonGainParams(0.5, math.pi))
    sequence = noiseless_iterate(SO3_GROUP.exp(np.array([0.0, 1.0, 0.0])), gain, np.eye(3), 200)
    assert output_error(sequence[-1], gain.output) < 1e-6


def test_tilt_ignores_rotation_about_reference():
    assert np.allclose(tilt_coordinates(SO3_GROUP.exp(0.7 * G), G), 0.0, atol=1e-12)
    tilt = tilt_coordinates(SO3_GROUP.exp(np.array([0.2, 0.0, 0.0])), G)
    assert np.linalg.norm(tilt) == pytest.approx(0.2, abs=1e-12)


def test_stationary_noise_off_converges():
    scenario = artificial_horizon(horizon=10, step_std=0.0, obs_std=0.0, outlier_prob=0.0)
    gain = HorizonGain(HorizonGainParams(0.5, math.pi))
    report = estimate_stationary(
        scenario, gain, burn_in=200, n_traj=20, rng=np.random.default_rng(0), retained=10
    )
    assert report.rmse < 1e-6
    assert report.n_samples == 20 * 10
    assert report.coordinates == "tilt"


def test_stationary_is_independent_of_prior():
    scenario = artificial_horizon(horizon=10)
    gain = HorizonGain(HorizonGainParams(0.5, 0.1))
    tight, wide = (
        estimate_stationary(
            scenario,
            gain,
            burn_in=500,
            n_traj=200,
            rng=np.random.default_rng(21),
            retained=100,
            prior_cov=std**2 * np.eye(3),
        )
        for std in (0.05, 1.5)
    )
    assert tight.rmse == pytest.approx(wide.rmse, rel=0.05)
    assert marginal_distance(tight, wide) < 0.02


def test_stationary_two_vector_uses_log_coordinates():
    scenario = table3(horizon=5)
    gain = default_fixed_gain(scenario)
    report = estimate_stationary(
        scenario, gain, burn_in=50, n_traj=30, rng=np.random.default_rng(1), retained=20
    )
    assert report.coordinates == "log"
    assert report.samples.shape == (600, 3)
    assert len(report.histograms) == 3


def test_stationary_argument_checks(horizon_scenario):
    gain = default_fixed_gain(horizon_scenario)
    with pytest.raises(ValueError, match="positive"):
        estimate_stationary(horizon_scenario, gain, n_traj=0)


def test_grid_single_point_and_surface(tmp_path):
    scenario = artificial_horizon(horizon=10)
    rng = np.random.default_rng(4)
    result = grid_optimize_horizon(scenario, [0.2], [0.05], burn_in=20, n_traj=10, rng=rng, retained=5)
    assert (result.k_star, result.lam_star) == (0.2, 0.05)

    result = grid_optimize_horizon(
        scenario, [0.1, 0.3], [0.01, 0.05, 0.1], burn_in=20, n_traj=10, rng=rng, retained=5
    )
    assert len(result.surface) == 6
    assert result.rmse_star == min(row[2] for row in result.surface)
    header, rows = read_csv(write_surface_csv(tmp_path / "surface.csv", result.surface))
    assert header == ["k", "lambda", "rmse", "n_samples"]
    assert len(rows) == 6
    assert result.k_grid == (0.1, 0.3)
    assert result.rmse_at(0.3, 0.1) == result.surface[5][2]


def test_grid_rejects_empty_grid(horizon_scenario):
    with pytest.raises(ValueError, match="non-empty"):
        grid_optimize_horizon(horizon_scenario, [], [0.1])


def test_symmetry_diagnostic():
    scenario = artificial_horizon(horizon=10)
    gain = HorizonGain(HorizonGainParams(0.5, 0.1))
    report = estimate_stationary(
        scenario, gain, burn_in=100, n_traj=200, rng=np.random.default_rng(2), retained=50
    )
    diagnostic = symmetry_diagnostic(report, G)
    assert diagnostic.distances.shape == (3,)
    # the vertical component is untouched by a rotation about g
    assert diagnostic.distances[2] == pytest.approx(0.0, abs=1e-12)
    assert diagnostic.max_distance < 1e-3


def test_fixed_gain_runner(table3_scenario):
    runner = FixedGainRunner(default_fixed_gain(table3_scenario))
    observations = np.zeros((2, table3_scenario.horizon, 6)) + np.array(B1 + B2)
    run = runner.run(table3_scenario, observations, SO3_GROUP.identity((2,)))
    assert run.name == "fixed-gain"
    assert run.estimates.shape == (2, table3_scenario.horizon + 1, 3, 3)
    assert run.wall_time >= 0.0


def test_grid_cell_offset_counts_nodes():
    k_grid = tuple(float(v) for v in np.geomspace(0.02, 0.5, 10))
    lam_grid = tuple(float(v) for v in np.geomspace(5e-4, 0.1, 10))
    surface = [(k, lam, 1.0, 1) for k in k_grid for lam in lam_grid]
    result = GridResult(k_grid[4], lam_grid[4], 1.0, surface, k_grid, lam_grid)

    # 0.1202 lies 0.4% off the k node, further than one cell from k_grid[4] in log
    assert abs(math.log(result.k_star / 0.1202)) > math.log(k_grid[1] / k_grid[0])
    assert result.nearest_node(0.1202, 0.0029) == (5, 3)
    assert result.cell_offset(0.1202, 0.0029) == (-1, 1)
    assert result.cell_offset(k_grid[7], lam_grid[4]) == (-3, 0)
