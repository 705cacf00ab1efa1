"""
Harness module for invfilter

Monte-Carlo experiments over scenario presets: shared trajectory batches,
per-step error statistics, filter comparisons, the off-line horizon gain search
and stationary error reports, all written as CSV/JSON artifacts.
"""

import logging
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from invfilter.baselines import MekfRunner, tune_mekf_obs_noise
from invfilter.common import FilterRun, FilterRunner
from invfilter.config import ExperimentConfig, FilterParams, ScenarioConfig
from invfilter.constants import (
    APPLICATION_PREFIX,
    DEFAULT_BURN_IN,
    DEFAULT_RETAINED,
    MEKF_BURN_IN,
)
from invfilter.errors import ConfigError, DimensionError
from invfilter.filtering import GainFunction
from invfilter.fixed_gain import (
    FixedGainRunner,
    default_fixed_gain,
    estimate_stationary,
    grid_optimize_horizon,
    symmetry_diagnostic,
    write_surface_csv,
)
from invfilter.iekf import (
    AsymptoticIekfRunner,
    IekfRunner,
    write_covariance_trace,
    write_gain_trace,
)
from invfilter.ienkf import IenkfRunner, scenario_fingerprint
from invfilter.keys import ExperimentKeys
from invfilter.models import OutputKind, Scenario, simulate_trajectory
from invfilter.types import Array, BoolArray
from invfilter.utils import (
    format_float,
    sha256_of_arrays,
    trajectory_rng,
    write_csv,
    write_json,
)

logger = logging.getLogger(f"{APPLICATION_PREFIX}.harness")

DEFAULT_K_GRID = tuple(float(v) for v in np.geomspace(0.02, 0.5, 10))

DEFAULT_LAMBDA_GRID = tuple(float(v) for v in np.geomspace(5e-4, 0.1, 10))


@dataclass(frozen=True)
class TrajectoryBatch:
    """Simulated trajectories shared by every filter of one experiment."""

    truth: Array
    observations: Array
    estimate_init: Array
    seed: int

    def __post_init__(self) -> None:
        for name in ("truth", "observations", "estimate_init"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def size(self) -> int:
        return int(self.truth.shape[0])

    @property
    def hash(self) -> str:
        return sha256_of_arrays(self.truth, self.observations, self.estimate_init)


def simulate_batch(scenario: Scenario, n_traj: int, seed: int) -> TrajectoryBatch:
    """Trajectory ``i`` uses the stream (seed, i): prior draw first, then the noise."""
    if n_traj < 1:
        raise ValueError("a batch needs at least one trajectory")
    truth, observations, estimate_init = [], [], []
    for traj_id in range(n_traj):
        rng = trajectory_rng(seed, traj_id)
        xi0 = scenario.sample_prior(rng)
        trajectory = simulate_trajectory(scenario, rng)
        truth.append(trajectory.truth)
        observations.append(trajectory.observations)
        estimate_init.append(scenario.initial_estimate(trajectory.truth[0], xi0))
    return TrajectoryBatch(
        np.stack(truth), np.stack(observations), np.stack(estimate_init), seed
    )


def log_errors(
    scenario: Scenario, truth: Array, estimates: Array
) -> Tuple[Array, BoolArray]:
    """log(eta_n) with eta_n = chi_n chi_hat_n^-1, shape (B, N+1, d).

    Also returns the mask of errors within the log branch margin of a half turn.
    """
    descriptor = scenario.descriptor
    eta = descriptor.compose(truth, descriptor.inverse(estimates))
    return descriptor.log_masked(eta)


@dataclass
class MonteCarloReport:
    filter_name: str
    scenario_name: str
    fingerprint: str
    seed: int
    n_trajectories: int
    trajectory_hash: str
    errors: Array
    mean: Array
    std: Array
    rmse: Array
    coverage: Optional[Array]
    reported_3sigma: Optional[Array]
    final_rmse: float
    wall_time: float = 0.0
    branch_hits: int = 0

    @property
    def steps(self) -> int:
        return int(self.rmse.shape[0])

    def mean_coverage(self, axis: int = 0, start: int = 0) -> Optional[float]:
        if self.coverage is None:
            return None
        return float(np.mean(self.coverage[start:, axis]))

    def to_summary(self) -> Dict[str, Any]:
        """Byte-stable summary; wall time stays out of it."""
        return {
            "filter": self.filter_name,
            "scenario": self.scenario_name,
            "fingerprint": self.fingerprint,
            "seed": self.seed,
            "n_trajectories": self.n_trajectories,
            "trajectory_hash": self.trajectory_hash,
            "final_rmse": self.final_rmse,
            "mean_rmse": float(np.mean(self.rmse)),
            "branch_hits": self.branch_hits,
            "coverage": None if self.coverage is None else self.coverage.mean(axis=0),
        }


def aggregate(
    scenario: Scenario, batch: TrajectoryBatch, run: FilterRun
) -> MonteCarloReport:
    errors, branch = log_errors(scenario, batch.truth, run.estimates)
    branch_hits = int(np.count_nonzero(branch))
    if branch_hits:
        logger.warning(
            f"{run.name}: {branch_hits} errors within the log branch margin of a half turn"
        )
    squared = np.sum(errors * errors, axis=-1)
    rmse = np.sqrt(squared.mean(axis=0))

    coverage = reported = None
    std = run.reported_std_for(batch.size)
    if std is not None:
        if std.shape != errors.shape:
            raise DimensionError(
                f"{run.name} reports dispersion of shape {std.shape}, errors are {errors.shape}"
            )
        coverage = np.mean(np.abs(errors) <= 3.0 * std, axis=0)
        reported = 3.0 * std.mean(axis=0)

    return MonteCarloReport(
        filter_name=run.name,
        scenario_name=scenario.name,
        fingerprint=scenario_fingerprint(scenario),
        seed=batch.seed,
        n_trajectories=batch.size,
        trajectory_hash=batch.hash,
        errors=errors,
        mean=errors.mean(axis=0),
        std=errors.std(axis=0),
        rmse=rmse,
        coverage=coverage,
        reported_3sigma=reported,
        final_rmse=float(rmse[-1]),
        wall_time=run.wall_time,
        branch_hits=branch_hits,
    )


def fixed_gain_for(scenario: Scenario, params: FilterParams) -> GainFunction:
    kind = scenario.model.output.kind
    if kind is OutputKind.TWO_VECTOR:
        return default_fixed_gain(scenario, (params.k1, params.k2))
    if kind is OutputKind.SINGLE_VECTOR:
        return default_fixed_gain(scenario, (params.k, params.lam))
    raise ConfigError(f"fixed-gain filter has no gain for {kind.value} outputs")


def _fixed_gain_runner(
    scenario: Scenario, params: FilterParams, seed: int, debug: bool
) -> FilterRunner:
    return FixedGainRunner(fixed_gain_for(scenario, params), debug=debug)


RunnerFactory = Callable[[Scenario, FilterParams, int, bool], FilterRunner]

RUNNERS: Dict[str, RunnerFactory] = {
    "iekf": lambda scenario, params, seed, debug: IekfRunner(params.qw_form, debug=debug),
    "ienkf": lambda scenario, params, seed, debug: IenkfRunner(
        params.particles,
        seed if params.schedule_seed is None else params.schedule_seed,
        params.centered,
        debug=debug,
    ),
    "fixed-gain": _fixed_gain_runner,
    "mekf": lambda scenario, params, seed, debug: MekfRunner(params.obs_inflation, debug=debug),
    "asymptotic-iekf": lambda scenario, params, seed, debug: AsymptoticIekfRunner(
        tol=params.gain_tol, debug=debug
    ),
}


def build_runner(
    name: str, scenario: Scenario, params: FilterParams, seed: int, debug: bool = False
) -> FilterRunner:
    if name not in RUNNERS:
        raise ConfigError(f"unknown filter `{name}`, expected one of {sorted(RUNNERS)}")
    return RUNNERS[name](scenario, params, seed, debug)


def _envelope_rows(report: MonteCarloReport) -> Tuple[List[str], List[List[Any]]]:
    d = report.mean.shape[1]
    header = (
        ["step"]
        + [f"std{i + 1}" for i in range(d)]
        + ["rmse"]
        + [f"coverage{i + 1}" for i in range(d)]
        + [f"reported_3sigma{i + 1}" for i in range(d)]
    )
    empty = [""] * d
    rows = []
    for n in range(report.steps):
        rows.append(
            [n]
            + [float(v) for v in report.std[n]]
            + [float(report.rmse[n])]
            + (empty if report.coverage is None else [float(v) for v in report.coverage[n]])
            + (
                empty
                if report.reported_3sigma is None
                else [float(v) for v in report.reported_3sigma[n]]
            )
        )
    return header, rows


def _comparison_names(names: Sequence[str]) -> List[str]:
    seen: Dict[str, int] = {}
    unique = []
    for name in names:
        seen[name] = seen.get(name, 0) + 1
        unique.append(name if seen[name] == 1 else f"{name}_{seen[name]}")
    return unique


class Harness:
    """Runs experiments and writes their artifacts under one output directory."""

    def __init__(
        self,
        out_dir: Union[str, Path],
        debug: bool = False,
        logger: Optional[logging.Logger] = None,
    ):
        self.keys = ExperimentKeys(out_dir)
        self.debug = debug
        self.logger = logger or logging.getLogger(f"{APPLICATION_PREFIX}.harness")
        self.logger.setLevel(logging.DEBUG if debug else logging.INFO)

    def run_experiment(self, config: ExperimentConfig) -> MonteCarloReport:
        """Simulate, filter and aggregate one filter; writes the CSV artifacts."""
        scenario = config.scenario.build_scenario()
        seed = config.master_seed
        keys = self.keys.ensure()
        try:
            batch = simulate_batch(scenario, config.trajectories, seed)
            runner = build_runner(config.filter, scenario, config.params, seed, self.debug)
            run = runner.run(scenario, batch.observations, batch.estimate_init)
            report = aggregate(scenario, batch, run)
        except Exception as e:
            self.logger.error(f"Error running {config.filter} on {scenario.name}: {e}", exc_info=e)
            raise

        self._write_errors(keys, report)
        header, rows = _envelope_rows(report)
        write_csv(keys.envelope_csv, header, rows)
        if run.gains is not None:
            write_gain_trace(keys.gains_csv, run.gains)
        if run.covariances is not None and run.covariances.ndim == 3:
            write_covariance_trace(keys.covariance_csv, run.covariances)
        if isinstance(runner, IenkfRunner) and runner.schedule is not None:
            runner.schedule.save(keys.schedule_csv)

        summary = report.to_summary()
        summary["config"] = config.model_dump(mode="json")
        write_json(keys.summary_json, summary)
        self.logger.info(
            f"{config.filter} on {scenario.name}: {batch.size} trajectories, "
            f"final rmse {report.final_rmse:.6g}, wall time {report.wall_time:.3f}s"
        )
        return report

    def _write_errors(self, keys: ExperimentKeys, report: MonteCarloReport) -> None:
        d = report.errors.shape[-1]
        header = ["step", "traj_id"] + [f"e{i + 1}" for i in range(d)]
        rows = (
            [n, traj_id] + [float(v) for v in report.errors[traj_id, n]]
            for n in range(report.steps)
            for traj_id in range(report.n_trajectories)
        )
        write_csv(keys.errors_csv, header, rows)

    def compare_filters(self, configs: Sequence[ExperimentConfig]) -> List[MonteCarloReport]:
        """Every filter sees the trajectories of the first config's scenario and seed."""
        if not configs:
            raise ConfigError("compare_filters needs at least one filter")
        first = configs[0]
        scenario = first.scenario.build_scenario()
        fingerprint = scenario_fingerprint(scenario)
        for config in configs[1:]:
            if scenario_fingerprint(config.scenario.build_scenario()) != fingerprint:
                raise ConfigError("compared filters must share one scenario")

        seed = first.master_seed
        batch = simulate_batch(scenario, first.trajectories, seed)
        expected = batch.hash
        reports = []
        for config in configs:
            runner = build_runner(config.filter, scenario, config.params, seed, self.debug)
            run = runner.run(scenario, batch.observations, batch.estimate_init)
            report = aggregate(scenario, batch, run)
            if report.trajectory_hash != expected:
                raise RuntimeError(f"{config.filter} did not see the shared trajectories")
            reports.append(report)

        names = _comparison_names([r.filter_name for r in reports])
        header = ["step"]
        for name in names:
            header += [f"rmse_{name}", f"coverage1_{name}"]
        rows = []
        for n in range(reports[0].steps):
            row: List[Any] = [n]
            for report in reports:
                row.append(float(report.rmse[n]))
                row.append("" if report.coverage is None else float(report.coverage[n, 0]))
            rows.append(row)

        keys = self.keys.ensure()
        write_csv(keys.comparison_csv, header, rows)
        write_json(
            keys.summary_json,
            {name: report.to_summary() for name, report in zip(names, reports)},
        )
        self.logger.info(
            f"compared {', '.join(names)} on {scenario.name} over {batch.size} trajectories"
        )
        return reports

    def optimize_horizon_cmd(
        self,
        config: ScenarioConfig,
        k_grid: Sequence[float] = DEFAULT_K_GRID,
        lam_grid: Sequence[float] = DEFAULT_LAMBDA_GRID,
        burn_in: int = DEFAULT_BURN_IN,
        n_traj: int = 500,
        retained: int = DEFAULT_RETAINED,
        seed: Optional[int] = None,
        tune_mekf: bool = False,
        mekf_burn_in: int = MEKF_BURN_IN,
    ) -> Dict[str, Any]:
        scenario = config.build_scenario()
        seed = config.seed if seed is None else seed
        result = grid_optimize_horizon(
            scenario, k_grid, lam_grid, burn_in, n_traj, np.random.default_rng(seed), retained
        )
        keys = self.keys.ensure()
        write_surface_csv(keys.surface_csv, result.surface)

        optimum: Dict[str, Any] = {
            "k": result.k_star,
            "lambda": result.lam_star,
            "rmse": result.rmse_star,
            "seed": seed,
        }
        if tune_mekf:
            tuning = tune_mekf_obs_noise(
                scenario,
                rng=np.random.default_rng(seed),
                n_traj=n_traj,
                burn_in=mekf_burn_in,
                retained=retained,
            )
            optimum["mekf_inflation"] = tuning.best_inflation
            optimum["mekf_rmse"] = tuning.best_rmse

        lines = [f"{key} = {format_float(value)}" for key, value in optimum.items()]
        keys.optimum_txt.write_text("\n".join(lines) + "\n", encoding="utf-8")
        write_json(keys.optimum_json, optimum)
        return optimum

    def stationary_cmd(
        self,
        config: ScenarioConfig,
        params: Optional[FilterParams] = None,
        burn_in: int = DEFAULT_BURN_IN,
        n_traj: int = 1000,
        retained: int = DEFAULT_RETAINED,
        seed: Optional[int] = None,
        prior_std: Optional[float] = None,
    ) -> Dict[str, Any]:
        """Stationary error law of the fixed-gain filter: histograms plus a summary."""
        scenario = config.build_scenario()
        params = params or FilterParams()
        seed = config.seed if seed is None else seed
        gain = fixed_gain_for(scenario, params)
        prior_cov = None
        if prior_std is not None:
            prior_cov = prior_std**2 * np.eye(scenario.descriptor.algebra_dim)

        report = estimate_stationary(
            scenario,
            gain,
            burn_in,
            n_traj,
            np.random.default_rng(seed),
            retained,
            prior_cov,
        )
        rows = [
            [axis, float(left), float(right), int(count)]
            for axis, (counts, edges) in enumerate(report.histograms)
            for count, left, right in zip(counts, edges[:-1], edges[1:])
        ]
        keys = self.keys.ensure()
        write_csv(keys.stationary_csv, ["axis", "bin_left", "bin_right", "count"], rows)

        summary: Dict[str, Any] = {
            "scenario": scenario.name,
            "seed": seed,
            "burn_in": burn_in,
            "retained": retained,
            "n_chains": report.n_chains,
            "coordinates": report.coordinates,
            "rmse": report.rmse,
            "axis_std": report.axis_std,
        }
        if report.output_errors is not None:
            output = scenario.model.output
            assert output.refs is not None
            summary["symmetry_distances"] = symmetry_diagnostic(report, output.refs[0]).distances
        write_json(keys.summary_json, summary)
        return summary

    def simulate_cmd(
        self, config: ScenarioConfig, n_traj: Optional[int] = None, seed: Optional[int] = None
    ) -> TrajectoryBatch:
        scenario = config.build_scenario()
        seed = config.seed if seed is None else seed
        started = time.perf_counter()
        batch = simulate_batch(scenario, n_traj or config.num_trajectories, seed)

        m = batch.truth.shape[-1]
        p = batch.observations.shape[-1]
        keys = self.keys.ensure()
        write_csv(
            keys.truth_csv,
            ["traj_id", "step"] + [f"m{i + 1}{j + 1}" for i in range(m) for j in range(m)],
            (
                [traj_id, n] + [float(v) for v in chi.reshape(-1)]
                for traj_id, chain in enumerate(batch.truth)
                for n, chi in enumerate(chain)
            ),
        )
        write_csv(
            keys.observations_csv,
            ["traj_id", "step"] + [f"y{i + 1}" for i in range(p)],
            (
                [traj_id, n + 1] + [float(v) for v in y]
                for traj_id, ys in enumerate(batch.observations)
                for n, y in enumerate(ys)
            ),
        )
        self.logger.info(
            f"simulated {batch.size} trajectories of {scenario.name} "
            f"in {time.perf_counter() - started:.3f}s (hash {batch.hash[:12]})"
        )
        return batch
