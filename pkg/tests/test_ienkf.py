import numpy as np
import pytest

from invfilter.errors import DimensionError, FingerprintMismatchError
from invfilter.iekf import riccati_gains
from invfilter.ienkf import (
    EnsembleState,
    GainSchedule,
    IenkfRunner,
    apply_schedule,
    offline_gains,
    scenario_fingerprint,
)
from invfilter.lie import SO3_GROUP
from invfilter.models import (
    DiscreteModel,
    NoiseSpec,
    OutputMap,
    Scenario,
    linear_equivalence,
    simulate_trajectory,
    table3,
)


@pytest.fixture
def short_table3():
    return table3(horizon=5)


def test_schedule_save_and_load(tmp_path, short_table3):
    schedule = offline_gains(short_table3, M=200, rng=np.random.default_rng(3))
    path = schedule.save(tmp_path / "schedule.csv")

    loaded = GainSchedule.load(path)
    assert loaded.group_id == "SO3"
    assert loaded.fingerprint == scenario_fingerprint(short_table3)
    assert np.array_equal(loaded.gains, schedule.gains)
    assert np.array_equal(loaded.envelope, schedule.envelope)
    loaded.check(short_table3)


def test_schedule_load_rejects_other_files(tmp_path):
    path = tmp_path / "other.csv"
    path.write_text("a,b\n1,2\n")
    with pytest.raises(ValueError, match="not a gain schedule"):
        GainSchedule.load(path)


def test_schedule_rejects_other_scenario(short_table3):
    schedule = offline_gains(short_table3, M=50, rng=np.random.default_rng(0))
    with pytest.raises(FingerprintMismatchError):
        schedule.check(table3(horizon=5, obs_std=0.1))
    with pytest.raises(FingerprintMismatchError):
        apply_schedule(
            table3(horizon=6),
            np.zeros((1, 6, 6)),
            SO3_GROUP.identity((1,)),
            schedule,
        )


def test_schedule_shape_checks():
    with pytest.raises(DimensionError):
        GainSchedule("SO3", np.zeros((3, 6)), "abc")
    with pytest.raises(DimensionError, match="envelope"):
        GainSchedule("SO3", np.zeros((3, 3, 6)), "abc", envelope=np.zeros((3, 3)))


def test_offline_gains_argument_checks(short_table3):
    with pytest.raises(ValueError, match="at least two particles"):
        offline_gains(short_table3, M=1)

    output = OutputMap.two_vector([1.0, 0.0, 0.0], [0.0, 1.0, 0.0])
    left = SO3_GROUP.exp(np.outer(np.arange(3), [0.0, 0.0, 0.01]))
    model = DiscreteModel(
        SO3_GROUP,
        left,
        SO3_GROUP.identity(),
        NoiseSpec(process_cov=1e-4 * np.eye(3), obs_cov=1e-2 * np.eye(6)),
        output,
    )
    with pytest.raises(ValueError, match="constant left input"):
        offline_gains(Scenario("rotating", model, 3, prior_cov=0.01), M=10)


def test_ensemble_needs_two_particles():
    with pytest.raises(DimensionError):
        EnsembleState(SO3_GROUP, SO3_GROUP.identity((1,)))


def test_offline_gains_are_deterministic(short_table3):
    first = offline_gains(short_table3, M=300, rng=np.random.default_rng(11))
    second = offline_gains(short_table3, M=300, rng=np.random.default_rng(11))
    other = offline_gains(short_table3, M=300, rng=np.random.default_rng(12))
    assert np.array_equal(first.gains, second.gains)
    assert not np.array_equal(first.gains, other.gains)


def test_envelope_tracks_prior(short_table3):
    schedule = offline_gains(short_table3, M=4000, rng=np.random.default_rng(5))
    assert schedule.envelope.shape == (short_table3.horizon + 1, 3)
    assert np.allclose(schedule.envelope[0], 0.5236, rtol=0.05)
    assert np.all(schedule.envelope[-1] < schedule.envelope[0])


def test_centered_variant(short_table3):
    plain = offline_gains(short_table3, M=2000, rng=np.random.default_rng(8))
    centered = offline_gains(short_table3, M=2000, rng=np.random.default_rng(8), centered=True)
    assert centered.gains.shape == plain.gains.shape
    assert np.all(np.isfinite(centered.gains))
    assert np.max(np.abs(centered.gains - plain.gains)) < 0.1


def test_ensemble_gains_approach_kalman_gains_on_translation_group():
    scenario = linear_equivalence(horizon=10)
    schedule = offline_gains(scenario, M=50_000, rng=np.random.default_rng(9))
    gains, _ = riccati_gains(scenario)
    assert np.max(np.abs(schedule.gains - gains)) < 0.1 * np.max(np.abs(gains))


def test_ienkf_runner(short_table3, rng):
    scenario = short_table3
    observations = np.stack([simulate_trajectory(scenario, rng).observations for _ in range(4)])
    runner = IenkfRunner(particles=500, seed=2)
    run = runner.run(scenario, observations, SO3_GROUP.identity((4,)))

    assert run.estimates.shape == (4, scenario.horizon + 1, 3, 3)
    assert run.reported_std.shape == (scenario.horizon + 1, 3)
    assert run.gains.shape == (scenario.horizon, 3, 6)
    assert run.extras["fingerprint"] == scenario_fingerprint(scenario)
    # the schedule is computed once and reused
    assert runner.schedule_for(scenario) is runner.schedule
