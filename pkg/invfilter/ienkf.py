"""
IEnKF module for invfilter

Invariant Ensemble Kalman Filter: the error recursion does not depend on the
data, so the gains are computed off-line from a particle sampling of the error
density and stored as a schedule that the on-line filter simply applies.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, List, Optional, Union

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from invfilter.common import FilterRun, FilterRunner
from invfilter.constants import APPLICATION_PREFIX, DEFAULT_PARTICLES, S_REGULARIZATION
from invfilter.errors import DimensionError, FingerprintMismatchError
from invfilter.filtering import LinearExpGain, run_invariant_filter
from invfilter.iekf import Linearization, linearize
from invfilter.lie import GroupDescriptor
from invfilter.models import Scenario, sample_observation_noise, sample_process_noise
from invfilter.types import Array
from invfilter.utils import read_csv, sample_gaussian, sha256_of_payload, write_csv

logger = logging.getLogger(f"{APPLICATION_PREFIX}.ienkf")

SCHEDULE_HEADER = ["group_id", "N", "p", "algebra_dim", "fingerprint"]


def scenario_fingerprint(scenario: Scenario) -> str:
    """sha256 of the serialized scenario; seeds are not part of it."""
    return sha256_of_payload(scenario.to_dict())


@dataclass(frozen=True)
class EnsembleState:
    descriptor: GroupDescriptor
    particles: Array
    step: int = 0

    def __post_init__(self) -> None:
        particles = self.descriptor.check(self.particles)
        if particles.ndim != 3 or particles.shape[0] < 2:
            raise DimensionError("an ensemble needs at least two particles")
        object.__setattr__(self, "particles", particles)

    @property
    def size(self) -> int:
        return int(self.particles.shape[0])

    def dispersion(self) -> Array:
        """Root mean square of log(eta) per axis."""
        coords, _ = self.descriptor.log_masked(self.particles)
        return np.sqrt(np.mean(coords * coords, axis=0))  # type: ignore[no-any-return]


class GainSchedule:
    """Gains L_1..L_N for one scenario, plus the particle dispersion per step."""

    def __init__(
        self,
        group_id: str,
        gains: Array,
        fingerprint: str,
        envelope: Optional[Array] = None,
        resampled: int = 0,
    ):
        gains = np.array(gains, dtype=float)
        if gains.ndim != 3:
            raise DimensionError("gain schedule must be an (N, d, p) array")
        if envelope is not None:
            envelope = np.array(envelope, dtype=float)
            if envelope.shape != (gains.shape[0] + 1, gains.shape[1]):
                raise DimensionError("envelope must be (N+1, d)")
        self.group_id = group_id
        self.gains = gains
        self.fingerprint = fingerprint
        self.envelope = envelope
        self.resampled = resampled

    @property
    def horizon(self) -> int:
        return int(self.gains.shape[0])

    def check(self, scenario: Scenario) -> None:
        expected = scenario_fingerprint(scenario)
        if expected != self.fingerprint:
            raise FingerprintMismatchError(
                f"schedule was computed for scenario {self.fingerprint[:12]}, "
                f"not {expected[:12]}"
            )
        if self.horizon != scenario.horizon:
            raise DimensionError(
                f"schedule covers {self.horizon} steps, scenario has {scenario.horizon}"
            )

    def save(self, path: Union[str, Path]) -> Path:
        N, d, p = self.gains.shape
        rows: List[List[Any]] = [[self.group_id, N, p, d, self.fingerprint]]
        rows.extend(["L", n + 1] + [float(v) for v in L.reshape(-1)] for n, L in enumerate(self.gains))
        if self.envelope is not None:
            rows.extend(["std", n] + [float(v) for v in s] for n, s in enumerate(self.envelope))
        return write_csv(path, SCHEDULE_HEADER, rows)

    @classmethod
    def load(cls, path: Union[str, Path]) -> "GainSchedule":
        header, rows = read_csv(path)
        if header != SCHEDULE_HEADER or not rows:
            raise ValueError(f"{path} is not a gain schedule file")
        group_id, N, p, d, fingerprint = rows[0]
        N, p, d = int(N), int(p), int(d)
        gains = np.array([[float(v) for v in row[2:]] for row in rows[1:] if row[0] == "L"])
        std = [[float(v) for v in row[2:]] for row in rows[1:] if row[0] == "std"]
        if gains.shape != (N, d * p):
            raise DimensionError(f"{path} holds {gains.shape[0]} gains, header says {N}")
        return cls(
            group_id,
            gains.reshape(N, d, p),
            fingerprint,
            envelope=np.array(std) if std else None,
        )


def offline_gains(
    scenario: Scenario,
    M: int = DEFAULT_PARTICLES,
    rng: Optional[np.random.Generator] = None,
    centered: bool = False,
    lin: Optional[Linearization] = None,
) -> GainSchedule:
    """Sample the error density and store the gain of every step.

    By default P and S are plain second moments of log(eta') and of the
    innovations y - h(I_d, 0); ``centered=True`` subtracts the ensemble means
    first.
    """
    upsilon = scenario.model.constant_left
    if upsilon is None:
        raise ValueError("off-line gains require a constant left input")
    if M < 2:
        raise ValueError("offline_gains needs at least two particles")

    descriptor = scenario.descriptor
    model = scenario.model
    output = model.output
    lin = lin or linearize(output)
    H = lin.H_xi
    h0 = output.h0
    upsilon_inv = descriptor.inverse(upsilon)
    rng = rng or np.random.default_rng()
    prior_rng, noise_rng = rng.spawn(2)

    state = EnsembleState(
        descriptor, descriptor.exp(sample_gaussian(scenario.prior_cov, prior_rng, (M,)))
    )
    envelope = [state.dispersion()]
    gains: List[Array] = []
    resampled = 0
    for n in range(scenario.horizon):
        W = sample_process_noise(model.noise, model.dt, noise_rng, descriptor, (M,))
        V = sample_observation_noise(output, model.noise, noise_rng, (M,))
        eta_pred = descriptor.compose(
            descriptor.compose(descriptor.compose(upsilon, W), state.particles), upsilon_inv
        )
        xi, lost = descriptor.log_masked(eta_pred)
        if np.any(lost):
            count = int(np.count_nonzero(lost))
            resampled += count
            eta_pred[lost] = descriptor.exp(sample_gaussian(scenario.prior_cov, prior_rng, (count,)))
            xi, _ = descriptor.log_masked(eta_pred)
            logger.debug(f"step {n + 1}: resampled {count} particles off the log branch")

        z = output(eta_pred, V) - h0
        if centered:
            xi_c = xi - xi.mean(axis=0)
            z_c = z - z.mean(axis=0)
        else:
            xi_c, z_c = xi, z
        P = xi_c.T @ xi_c / M
        S = z_c.T @ z_c / M + S_REGULARIZATION * np.eye(output.obs_dim)
        L = cho_solve(cho_factor(S), H @ P).T
        gains.append(L)

        state = EnsembleState(
            descriptor, descriptor.compose(eta_pred, descriptor.exp(-(z @ L.T))), n + 1
        )
        envelope.append(state.dispersion())

    if resampled:
        logger.info(f"{resampled} particles resampled from the prior on {scenario.name}")
    logger.info(f"computed {scenario.horizon} ensemble gains with {M} particles")
    return GainSchedule(
        descriptor.group_id,
        np.stack(gains),
        scenario_fingerprint(scenario),
        envelope=np.stack(envelope),
        resampled=resampled,
    )


def apply_schedule(
    scenario: Scenario, observations: Array, estimate_init: Array, schedule: GainSchedule
) -> Array:
    """Plain invariant filter with the stored per-step linear gains."""
    schedule.check(scenario)
    output = scenario.model.output
    gains = [LinearExpGain(L, output) for L in schedule.gains]
    return run_invariant_filter(scenario, observations, estimate_init, gains)


class IenkfRunner(FilterRunner):
    name = "ienkf"

    def __init__(
        self,
        particles: int = DEFAULT_PARTICLES,
        seed: Optional[int] = None,
        centered: bool = False,
        schedule: Optional[GainSchedule] = None,
        debug: bool = False,
        logger: Optional[logging.Logger] = None,
    ):
        super().__init__(debug=debug, logger=logger)
        self.particles = particles
        self.seed = seed
        self.centered = centered
        self.schedule = schedule

    def schedule_for(self, scenario: Scenario) -> GainSchedule:
        if self.schedule is None:
            self.schedule = offline_gains(
                scenario, self.particles, np.random.default_rng(self.seed), self.centered
            )
        return self.schedule

    def _run(self, scenario: Scenario, observations: Array, estimate_init: Array) -> FilterRun:
        schedule = self.schedule_for(scenario)
        estimates = apply_schedule(scenario, observations, estimate_init, schedule)
        return FilterRun(
            name=self.name,
            estimates=estimates,
            reported_std=schedule.envelope,
            gains=schedule.gains,
            extras={"resampled": schedule.resampled, "fingerprint": schedule.fingerprint},
        )
