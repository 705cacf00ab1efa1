import numpy as np
import orjson
import pytest

from invfilter.config import ExperimentConfig, FilterParams, ScenarioConfig, load_scenario_config
from invfilter.constants import HISTOGRAM_BINS
from invfilter.errors import ConfigError
from invfilter.harness import (
    Harness,
    build_runner,
    fixed_gain_for,
    log_errors,
    simulate_batch,
)
from invfilter.lie import SO3_GROUP
from invfilter.models import OutputKind, table3
from invfilter.utils import read_csv


def small(preset, **changes):
    return load_scenario_config(preset).model_copy(update=changes)


@pytest.fixture
def quiet_two_vector():
    return ScenarioConfig(name="quiet", N=20, num_trajectories=4)


def test_noise_off_fixed_gain_run_is_exact(tmp_path, quiet_two_vector):
    harness = Harness(tmp_path)
    report = harness.run_experiment(
        ExperimentConfig(scenario=quiet_two_vector, filter="fixed-gain")
    )
    assert np.max(np.abs(report.errors)) < 1e-9
    assert report.coverage is None

    header, rows = read_csv(tmp_path / "errors.csv")
    assert header == ["step", "traj_id", "e1", "e2", "e3"]
    assert len(rows) == 21 * 4
    header, rows = read_csv(tmp_path / "envelope.csv")
    assert header[:5] == ["step", "std1", "std2", "std3", "rmse"]
    assert len(rows) == 21
    assert rows[0][5] == ""
    assert not (tmp_path / "gains.csv").exists()


def test_iekf_experiment_artifacts(tmp_path):
    config = ExperimentConfig(scenario=small("exp-table3", N=10), n_trajectories=5, seed=3)
    report = Harness(tmp_path).run_experiment(config)

    assert report.errors.shape == (5, 11, 3)
    assert report.coverage.shape == (11, 3)
    assert report.seed == 3
    assert report.mean_coverage() == pytest.approx(float(np.mean(report.coverage[:, 0])))
    for name in ("errors.csv", "envelope.csv", "gains.csv", "covariance.csv", "summary.json"):
        assert (tmp_path / name).exists()

    summary = orjson.loads((tmp_path / "summary.json").read_bytes())
    assert summary["filter"] == "iekf"
    assert summary["n_trajectories"] == 5
    assert summary["config"]["scenario"]["N"] == 10
    assert "wall_time" not in summary


def test_reruns_are_byte_identical(tmp_path):
    config = ExperimentConfig(scenario=small("exp-table3", N=8), n_trajectories=3, seed=1)
    Harness(tmp_path / "a").run_experiment(config)
    Harness(tmp_path / "b").run_experiment(config)
    for name in ("errors.csv", "envelope.csv", "gains.csv", "summary.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_ienkf_experiment_writes_schedule(tmp_path):
    config = ExperimentConfig(
        scenario=small("exp-table3", N=5),
        filter="ienkf",
        params=FilterParams(particles=50),
        n_trajectories=2,
    )
    Harness(tmp_path).run_experiment(config)
    header, _ = read_csv(tmp_path / "schedule.csv")
    assert header[0] == "group_id"


def test_compare_shares_trajectories(tmp_path):
    scenario = small("exp-table3", N=6)
    configs = [ExperimentConfig(scenario=scenario, n_trajectories=3) for _ in range(2)]
    configs.append(ExperimentConfig(scenario=scenario, filter="mekf", n_trajectories=3))
    reports = Harness(tmp_path).compare_filters(configs)

    assert len({report.trajectory_hash for report in reports}) == 1
    header, rows = read_csv(tmp_path / "comparison.csv")
    assert header == [
        "step",
        "rmse_iekf",
        "coverage1_iekf",
        "rmse_iekf_2",
        "coverage1_iekf_2",
        "rmse_mekf",
        "coverage1_mekf",
    ]
    assert len(rows) == 7
    assert all(row[1] == row[3] for row in rows)
    summary = orjson.loads((tmp_path / "summary.json").read_bytes())
    assert set(summary) == {"iekf", "iekf_2", "mekf"}


def test_compare_rejects_different_scenarios(tmp_path):
    configs = [
        ExperimentConfig(scenario=small("exp-table3", N=6)),
        ExperimentConfig(scenario=small("exp-table3", N=7)),
    ]
    with pytest.raises(ConfigError, match="share one scenario"):
        Harness(tmp_path).compare_filters(configs)
    with pytest.raises(ConfigError):
        Harness(tmp_path).compare_filters([])


def test_optimize_single_point_grid(tmp_path):
    optimum = Harness(tmp_path).optimize_horizon_cmd(
        small("exp-horizon", N=10), [0.2], [0.05], burn_in=10, n_traj=5, retained=5, seed=2
    )
    assert (optimum["k"], optimum["lambda"], optimum["seed"]) == (0.2, 0.05, 2)

    _, rows = read_csv(tmp_path / "surface.csv")
    assert len(rows) == 1
    lines = (tmp_path / "optimum.txt").read_text().splitlines()
    assert [line.split(" = ")[0] for line in lines] == ["k", "lambda", "rmse", "seed"]
    assert orjson.loads((tmp_path / "optimum.json").read_bytes()) == optimum


def test_optimize_with_mekf_tuning(tmp_path):
    optimum = Harness(tmp_path).optimize_horizon_cmd(
        small("exp-horizon", N=10),
        [0.1, 0.3],
        [0.01, 0.1],
        burn_in=10,
        n_traj=5,
        retained=5,
        seed=2,
        tune_mekf=True,
        mekf_burn_in=10,
    )
    assert "mekf_inflation" in optimum and "mekf_rmse" in optimum
    _, rows = read_csv(tmp_path / "surface.csv")
    assert len(rows) == 4


def test_stationary_command(tmp_path):
    summary = Harness(tmp_path).stationary_cmd(
        small("exp-horizon", N=10),
        FilterParams(k=0.5, lam=0.1),
        burn_in=20,
        n_traj=10,
        retained=10,
        seed=0,
    )
    assert summary["coordinates"] == "tilt"
    assert len(summary["symmetry_distances"]) == 3
    _, rows = read_csv(tmp_path / "stationary.csv")
    assert len(rows) == 3 * HISTOGRAM_BINS


def test_simulate_command(tmp_path):
    batch = Harness(tmp_path).simulate_cmd(small("exp-table3", N=4), n_traj=2, seed=5)
    header, rows = read_csv(tmp_path / "truth.csv")
    assert header[:3] == ["traj_id", "step", "m11"]
    assert len(rows) == 2 * 5
    header, rows = read_csv(tmp_path / "observations.csv")
    assert header == ["traj_id", "step"] + [f"y{i}" for i in range(1, 7)]
    assert [row[1] for row in rows[:4]] == ["1", "2", "3", "4"]
    assert batch.size == 2


def test_batch_streams_are_per_trajectory():
    scenario = small("exp-table3", N=5).build_scenario()
    three = simulate_batch(scenario, 3, seed=9)
    five = simulate_batch(scenario, 5, seed=9)
    assert np.array_equal(three.observations, five.observations[:3])
    assert three.hash == simulate_batch(scenario, 3, seed=9).hash
    assert three.hash != simulate_batch(scenario, 3, seed=10).hash
    assert not three.truth.flags.writeable
    with pytest.raises(ValueError):
        simulate_batch(scenario, 0, seed=9)


def test_runner_lookup():
    scenario = small("exp-linear-equiv", N=5).build_scenario()
    with pytest.raises(ConfigError, match="unknown filter"):
        build_runner("ukf", scenario, FilterParams(), 0)
    with pytest.raises(ConfigError, match="no gain for linear"):
        fixed_gain_for(scenario, FilterParams())
    assert scenario.model.output.kind is OutputKind.LINEAR


def test_half_turn_errors_keep_their_size():
    truth = SO3_GROUP.exp(np.array([[[0.0, 0.0, np.pi - 1e-7], [0.0, 0.0, 0.1]]]))
    estimates = SO3_GROUP.identity((1, 2))
    errors, branch = log_errors(table3(horizon=1), truth, estimates)

    assert branch.tolist() == [[True, False]]
    assert np.linalg.norm(errors[0, 0]) == pytest.approx(np.pi, abs=1e-6)
    assert np.allclose(errors[0, 1], [0.0, 0.0, 0.1])
