"""
Baselines module for invfilter

Multiplicative EKF on SO(3), matrix form. The error is taken in the body frame,
chi = chi_hat exp(xi), so the output Jacobian depends on the estimate and the
filter re-linearizes at every step.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from invfilter.common import FilterRun, FilterRunner
from invfilter.constants import (
    APPLICATION_PREFIX,
    DEFAULT_RETAINED,
    MEKF_BURN_IN,
    MEKF_INFLATION_GRID,
)
from invfilter.errors import DimensionError, SingularInnovationError
from invfilter.lie import SO3_GROUP, SO3Group, skew
from invfilter.models import (
    OutputKind,
    OutputMap,
    Scenario,
    sample_observation_noise,
    sample_process_noise,
)
from invfilter.types import Array
from invfilter.utils import symmetrize

logger = logging.getLogger(f"{APPLICATION_PREFIX}.baselines")


@dataclass(frozen=True)
class MekfState:
    """Estimate and covariance of the body-frame error, batched over trajectories."""

    estimate: Array
    P: Array
    step: int = 0
    gain: Optional[Array] = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "estimate", SO3_GROUP.check(self.estimate))
        P = np.asarray(self.P, dtype=float)
        if P.shape[-2:] != (3, 3):
            raise DimensionError("MEKF covariance must be 3x3")
        object.__setattr__(self, "P", P)

    def eta_covariance(self) -> Array:
        """Covariance mapped to the left-invariant error coordinates."""
        return self.estimate @ self.P @ np.swapaxes(self.estimate, -1, -2)  # type: ignore[no-any-return]


def _require_vector_output(output: OutputMap) -> Array:
    if not isinstance(output.descriptor, SO3Group) or output.refs is None:
        raise DimensionError("the MEKF baseline handles vector observations on SO(3)")
    return output.refs


def _block_rotation(rot: Array, blocks: int) -> Array:
    out = np.zeros(rot.shape[:-2] + (3 * blocks, 3 * blocks))
    for i in range(blocks):
        out[..., 3 * i : 3 * i + 3, 3 * i : 3 * i + 3] = rot
    return out


def mekf_step(
    state: MekfState,
    omega: Array,
    y: Array,
    Qw: Array,
    Qv: Array,
    output: OutputMap,
    upsilon: Optional[Array] = None,
) -> MekfState:
    """One predict/update cycle with the Jacobian taken at the current estimate."""
    refs = _require_vector_output(output)
    upsilon = SO3_GROUP.identity() if upsilon is None else upsilon

    predicted = SO3_GROUP.compose(SO3_GROUP.compose(upsilon, state.estimate), omega)
    Phi = np.swapaxes(omega, -1, -2)
    to_body = np.swapaxes(predicted, -1, -2) @ upsilon
    Q_body = to_body @ Qw @ np.swapaxes(to_body, -1, -2)
    P_pred = symmetrize(Phi @ state.P @ np.swapaxes(Phi, -1, -2) + Q_body)

    pred_t = np.swapaxes(predicted, -1, -2)
    body_refs = np.einsum("...ij,kj->...ki", pred_t, refs)
    H = np.concatenate([skew(body_refs[..., k, :]) for k in range(refs.shape[0])], axis=-2)
    rot_blocks = _block_rotation(pred_t, refs.shape[0])
    R_eff = rot_blocks @ Qv @ np.swapaxes(rot_blocks, -1, -2)
    S = symmetrize(H @ P_pred @ np.swapaxes(H, -1, -2) + R_eff)
    try:
        L = np.swapaxes(np.linalg.solve(S, H @ P_pred), -1, -2)
    except np.linalg.LinAlgError as e:
        raise SingularInnovationError(f"MEKF innovation covariance is singular: {e}") from e

    z = np.asarray(y, dtype=float) - body_refs.reshape(body_refs.shape[:-2] + (-1,))
    correction = np.einsum("...ij,...j->...i", L, z)
    estimate = SO3_GROUP.compose(predicted, SO3_GROUP.exp(correction))
    P = symmetrize((np.eye(3) - L @ H) @ P_pred)
    return MekfState(estimate, P, state.step + 1, gain=L)


def run_mekf(
    scenario: Scenario,
    observations: Array,
    estimate_init: Array,
    obs_inflation: float = 1.0,
    P0: Optional[Array] = None,
) -> Tuple[Array, Array, Array]:
    """Estimates (B, N+1, 3, 3), eta-coordinate covariances and gains (B, N, 3, p)."""
    output = scenario.model.output
    _require_vector_output(output)
    Qw = scenario.model.process_step_cov
    Qv = obs_inflation * scenario.model.noise.obs_cov
    batch = estimate_init.shape[:-2]
    P_init = scenario.prior_cov if P0 is None else np.asarray(P0, dtype=float)
    state = MekfState(estimate_init, np.broadcast_to(P_init, batch + (3, 3)).copy())

    horizon = scenario.horizon
    estimates = np.empty(batch + (horizon + 1, 3, 3))
    covariances = np.empty(batch + (horizon + 1, 3, 3))
    gains = np.empty(batch + (horizon, 3, output.obs_dim))
    estimates[..., 0, :, :] = state.estimate
    covariances[..., 0, :, :] = state.eta_covariance()
    for n in range(horizon):
        state = mekf_step(
            state,
            scenario.right(n),
            observations[..., n, :],
            Qw,
            Qv,
            output,
            upsilon=scenario.left(n),
        )
        assert state.gain is not None
        estimates[..., n + 1, :, :] = state.estimate
        covariances[..., n + 1, :, :] = state.eta_covariance()
        gains[..., n, :, :] = state.gain
    return estimates, covariances, gains


class MekfRunner(FilterRunner):
    """MEKF baseline; ``gains`` of the run holds the first trajectory's gain trace."""

    name = "mekf"

    def __init__(
        self,
        obs_inflation: float = 1.0,
        debug: bool = False,
        logger: Optional[logging.Logger] = None,
    ):
        super().__init__(debug=debug, logger=logger)
        self.obs_inflation = obs_inflation

    def _run(self, scenario: Scenario, observations: Array, estimate_init: Array) -> FilterRun:
        estimates, covariances, gains = run_mekf(
            scenario, observations, estimate_init, self.obs_inflation
        )
        std = np.sqrt(np.clip(np.diagonal(covariances, axis1=-2, axis2=-1), 0.0, None))
        return FilterRun(
            name=self.name,
            estimates=estimates,
            reported_std=std,
            gains=gains[0],
            extras={"obs_inflation": self.obs_inflation},
        )


@dataclass
class MekfTuning:
    best_inflation: float
    best_rmse: float
    table: List[Tuple[float, float]] = field(default_factory=list)


def _horizon_rmse(truth: Array, estimate: Array, g: Array) -> Array:
    eta = truth @ np.swapaxes(estimate, -1, -2)
    diff = eta @ g - g
    return np.sum(diff * diff, axis=-1)  # type: ignore[no-any-return]


def mekf_chain_rmse(
    scenario: Scenario,
    inflation: float,
    seed: int,
    n_traj: int = 500,
    burn_in: int = MEKF_BURN_IN,
    retained: int = DEFAULT_RETAINED,
) -> float:
    """Post-burn-in RMSE of the MEKF on freshly simulated truth chains.

    The chains start at the truth with a small prior covariance; every
    candidate sharing ``seed`` sees identical noise.
    """
    model = scenario.model
    output = model.output
    refs = _require_vector_output(output)
    rng = np.random.default_rng(seed)
    Qw = model.process_step_cov
    Qv = inflation * model.noise.obs_cov

    truth = SO3_GROUP.identity((n_traj,))
    state = MekfState(truth.copy(), np.broadcast_to(scenario.prior_cov, (n_traj, 3, 3)).copy())
    squared: List[Array] = []
    for n in range(burn_in + retained):
        W = sample_process_noise(model.noise, model.dt, rng, SO3_GROUP, (n_traj,))
        V = sample_observation_noise(output, model.noise, rng, (n_traj,))
        upsilon, omega = scenario.left(n), scenario.right(n)
        truth = SO3_GROUP.compose(SO3_GROUP.compose(SO3_GROUP.compose(upsilon, W), truth), omega)
        state = mekf_step(state, omega, output(truth, V), Qw, Qv, output, upsilon)
        if n >= burn_in:
            if output.kind is OutputKind.SINGLE_VECTOR:
                squared.append(_horizon_rmse(truth, state.estimate, refs[0]))
            else:
                coords, _ = SO3_GROUP.log_masked(truth @ np.swapaxes(state.estimate, -1, -2))
                squared.append(np.sum(coords * coords, axis=-1))
    return float(np.sqrt(np.mean(np.concatenate(squared))))


def tune_mekf_obs_noise(
    scenario: Scenario,
    candidates: Sequence[float] = MEKF_INFLATION_GRID,
    rng: Optional[np.random.Generator] = None,
    n_traj: int = 500,
    burn_in: int = MEKF_BURN_IN,
    retained: int = DEFAULT_RETAINED,
) -> MekfTuning:
    """Grid search over scalar inflation factors of the observation covariance."""
    if len(candidates) == 0:
        raise ValueError("tune_mekf_obs_noise needs at least one candidate")
    rng = rng or np.random.default_rng()
    seed = int(rng.integers(2**63 - 1))

    table: List[Tuple[float, float]] = []
    for inflation in candidates:
        rmse = mekf_chain_rmse(scenario, float(inflation), seed, n_traj, burn_in, retained)
        logger.debug(f"MEKF inflation {inflation:g}: rmse {rmse:.6g}")
        table.append((float(inflation), rmse))

    best_inflation, best_rmse = min(table, key=lambda row: row[1])
    logger.info(f"MEKF best inflation {best_inflation:g} with rmse {best_rmse:.6g}")
    return MekfTuning(best_inflation, best_rmse, table)
