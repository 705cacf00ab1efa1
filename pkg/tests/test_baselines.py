import numpy as np
import pytest

from invfilter.baselines import (
    MekfRunner,
    MekfState,
    mekf_chain_rmse,
    run_mekf,
    tune_mekf_obs_noise,
)
from invfilter.errors import DimensionError
from invfilter.lie import SO3_GROUP
from invfilter.models import (
    artificial_horizon,
    propagate_truth,
    se3_velocity,
    simulate_trajectory,
)


def noiseless_trajectory(scenario, truth_init):
    N = scenario.horizon
    return propagate_truth(
        scenario,
        truth_init,
        SO3_GROUP.identity((N,)),
        np.zeros((N, scenario.model.output.obs_dim)),
    )


def test_mekf_stays_on_noiseless_truth(table3_scenario):
    truth_init = SO3_GROUP.exp(np.array([0.3, -0.2, 0.1]))
    trajectory = noiseless_trajectory(table3_scenario, truth_init)
    estimates, covariances, gains = run_mekf(
        table3_scenario, trajectory.observations[None], truth_init[None]
    )
    assert np.max(np.abs(estimates[0] - trajectory.truth)) < 1e-12
    assert covariances.shape == (1, table3_scenario.horizon + 1, 3, 3)
    assert gains.shape == (1, table3_scenario.horizon, 3, 6)


def test_mekf_converges_from_wrong_start(table3_scenario):
    trajectory = noiseless_trajectory(table3_scenario, SO3_GROUP.identity())
    start = SO3_GROUP.exp(np.array([0.4, 0.2, -0.3]))
    estimates, _, _ = run_mekf(table3_scenario, trajectory.observations[None], start[None])
    final = SO3_GROUP.compose(trajectory.truth[-1], SO3_GROUP.inverse(estimates[0, -1]))
    assert np.linalg.norm(SO3_GROUP.log(final)) < 1e-3


def test_mekf_rejects_velocity_outputs():
    scenario = se3_velocity(horizon=3)
    with pytest.raises(DimensionError, match="vector observations"):
        run_mekf(scenario, np.zeros((1, 3, 3)), scenario.descriptor.identity((1,)))


def test_mekf_state_covariance_mapping():
    rot = SO3_GROUP.exp(np.array([0.0, 0.0, 0.5]))
    P = np.diag([1.0, 2.0, 3.0])
    state = MekfState(rot, P)
    assert np.allclose(state.eta_covariance(), rot @ P @ rot.T)
    with pytest.raises(DimensionError):
        MekfState(rot, np.eye(2))


def test_batched_mekf_matches_single_runs(table3_scenario, rng):
    observations = np.stack(
        [simulate_trajectory(table3_scenario, rng).observations for _ in range(3)]
    )
    starts = SO3_GROUP.exp(0.3 * rng.standard_normal((3, 3)))
    batched, _, _ = run_mekf(table3_scenario, observations, starts)
    for i in range(3):
        single, _, _ = run_mekf(table3_scenario, observations[i : i + 1], starts[i : i + 1])
        assert np.max(np.abs(single[0] - batched[i])) < 1e-12


def test_mekf_runner(table3_scenario, rng):
    observations = simulate_trajectory(table3_scenario, rng).observations[None]
    run = MekfRunner(obs_inflation=2.0).run(
        table3_scenario, observations, SO3_GROUP.identity((1,))
    )
    assert run.name == "mekf"
    assert run.gains.shape == (table3_scenario.horizon, 3, 6)
    assert run.reported_std.shape == (1, table3_scenario.horizon + 1, 3)
    assert run.extras == {"obs_inflation": 2.0}


def test_tuning_needs_candidates(horizon_scenario):
    with pytest.raises(ValueError, match="at least one candidate"):
        tune_mekf_obs_noise(horizon_scenario, candidates=[])


def test_tuning_picks_smallest_rmse():
    scenario = artificial_horizon(horizon=10)
    tuning = tune_mekf_obs_noise(
        scenario,
        candidates=[1.0, 10.0, 100.0],
        rng=np.random.default_rng(6),
        n_traj=20,
        burn_in=30,
        retained=10,
    )
    assert [row[0] for row in tuning.table] == [1.0, 10.0, 100.0]
    assert tuning.best_rmse == min(row[1] for row in tuning.table)
    assert (tuning.best_inflation, tuning.best_rmse) in tuning.table


def test_chain_rmse_shares_noise_across_candidates():
    scenario = artificial_horizon(horizon=10)
    first = mekf_chain_rmse(scenario, 10.0, seed=4, n_traj=10, burn_in=10, retained=5)
    second = mekf_chain_rmse(scenario, 10.0, seed=4, n_traj=10, burn_in=10, retained=5)
    assert first == second
