"""
IEKF module for invfilter

Discrete-time Invariant EKF. The error is linearized once, at the identity,
so the linearized model is time-invariant: the Riccati recursion does not see
the data and its gains converge for constant left inputs.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from invfilter.common import FilterRun, FilterRunner
from invfilter.constants import (
    APPLICATION_PREFIX,
    CONVERGENCE_WINDOW,
    COVARIANCE_EIG_TOL,
    DEFAULT_GAIN_TOL,
    FD_EPSILON,
    FD_TOLERANCE,
    QW_SUBSTEPS,
    SINGULAR_S_TOL,
)
from invfilter.errors import (
    CovarianceDriftError,
    DimensionError,
    GainError,
    SingularInnovationError,
)
from invfilter.filtering import LinearExpGain, run_invariant_filter
from invfilter.lie import GroupDescriptor, TranslationGroup, skew
from invfilter.models import OutputKind, OutputMap, Scenario
from invfilter.types import Array
from invfilter.utils import symmetrize, write_csv

logger = logging.getLogger(f"{APPLICATION_PREFIX}.iekf")


@dataclass(frozen=True)
class Linearization:
    """h(exp(xi), V) = h0 + H_xi xi + H_V V to first order."""

    output: OutputMap
    H_xi: Array
    H_V: Array
    h0: Array

    def __post_init__(self) -> None:
        p, d = self.output.obs_dim, self.output.descriptor.algebra_dim
        if self.H_xi.shape != (p, d) or self.H_V.shape != (p, p):
            raise DimensionError(f"linearization must be ({p}x{d}, {p}x{p})")
        if not (np.all(np.isfinite(self.H_xi)) and np.all(np.isfinite(self.H_V))):
            raise ValueError("linearization has non-finite entries")

    def finite_difference_defect(self, eps: float = FD_EPSILON) -> float:
        return float(np.max(np.abs(finite_difference_jacobian(self.output, eps) - self.H_xi)))

    def check(self, eps: float = FD_EPSILON, tol: float = FD_TOLERANCE) -> "Linearization":
        defect = self.finite_difference_defect(eps)
        if defect > tol:
            raise GainError(f"H_xi disagrees with finite differences by {defect}")
        return self


def finite_difference_jacobian(output: OutputMap, eps: float = FD_EPSILON) -> Array:
    """Central differences of xi -> h(exp(xi), 0) at xi = 0."""
    descriptor = output.descriptor
    steps = eps * np.eye(descriptor.algebra_dim)
    plus = output.noiseless(descriptor.exp(steps))
    minus = output.noiseless(descriptor.exp(-steps))
    return ((plus - minus) / (2.0 * eps)).T  # type: ignore[no-any-return]


def linearize_two_vector(b1: Array, b2: Array) -> Linearization:
    output = OutputMap.two_vector(b1, b2)
    return Linearization(
        output=output,
        H_xi=np.vstack([skew(np.asarray(b1, dtype=float)), skew(np.asarray(b2, dtype=float))]),
        H_V=np.eye(6),
        h0=output.h0,
    )


def linearize(output: OutputMap) -> Linearization:
    """First-order output model at the identity for the built-in output kinds."""
    if output.kind is OutputKind.TWO_VECTOR:
        assert output.refs is not None
        return linearize_two_vector(output.refs[0], output.refs[1])
    if output.kind is OutputKind.SINGLE_VECTOR:
        assert output.refs is not None
        H_xi = skew(output.refs[0])
    elif output.kind is OutputKind.VELOCITY_SE3:
        H_xi = np.hstack([np.zeros((3, 3)), -np.eye(3)])
    else:
        assert output.H is not None
        H_xi = output.H.copy()
    return Linearization(output, H_xi, np.eye(output.obs_dim), output.h0)


def _is_isotropic(Q: Array) -> bool:
    scale = np.trace(Q) / Q.shape[0]
    return bool(np.all(Q == scale * np.eye(Q.shape[0])))


def compute_Qw(
    Q: Array,
    upsilon: Array,
    dt: float,
    descriptor: GroupDescriptor,
    form: str = "printed",
    substeps: int = QW_SUBSTEPS,
) -> Array:
    """Per-step process covariance from the diffusion Q and a constant left input.

    ``form="printed"`` integrates dM/dt = Q + ad M ad^T, ``form="adjoint"``
    integrates dM/dt = Q + ad M + M ad^T; both start from M = 0 and use RK4.
    """
    if form not in ("printed", "adjoint"):
        raise ValueError(f"unknown compute_Qw form `{form}`")
    Q = np.asarray(Q, dtype=float)
    upsilon = descriptor.check_coords(upsilon)
    if (
        not np.any(upsilon)
        or _is_isotropic(Q)
        or isinstance(descriptor, TranslationGroup)
    ):
        return Q * dt  # type: ignore[no-any-return]

    A = descriptor.ad(upsilon)
    if form == "printed":

        def rhs(M: Array) -> Array:
            return Q + A @ M @ A.T  # type: ignore[no-any-return]

    else:

        def rhs(M: Array) -> Array:
            return Q + A @ M + M @ A.T  # type: ignore[no-any-return]

    h = dt / substeps
    M = np.zeros_like(Q)
    for _ in range(substeps):
        k1 = rhs(M)
        k2 = rhs(M + 0.5 * h * k1)
        k3 = rhs(M + 0.5 * h * k2)
        k4 = rhs(M + h * k3)
        M = M + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return symmetrize(M)


def step_process_covariances(
    scenario: Scenario, form: str = "printed", steps: Optional[int] = None
) -> Array:
    """Q^w_n for the first ``steps`` steps (default: the horizon), shape (steps, d, d)."""
    model = scenario.model
    descriptor = scenario.descriptor
    steps = scenario.horizon if steps is None else steps
    cache: Dict[bytes, Array] = {}
    out = np.empty((steps, descriptor.algebra_dim, descriptor.algebra_dim))
    for n in range(steps):
        upsilon = scenario.left(n)
        key = upsilon.tobytes()
        if key not in cache:
            coords, _ = descriptor.log_masked(upsilon)
            cache[key] = compute_Qw(
                model.noise.process_cov, coords / model.dt, model.dt, descriptor, form
            )
        out[n] = cache[key]
    return out


def check_covariance_state(P: Array) -> Array:
    P = np.asarray(P, dtype=float)
    if np.max(np.abs(P - np.swapaxes(P, -1, -2)), initial=0.0) >= 1e-12:
        raise CovarianceDriftError("covariance is not symmetric")
    if P.size and np.min(np.linalg.eigvalsh(P)) < -COVARIANCE_EIG_TOL:
        raise CovarianceDriftError("covariance has negative eigenvalues")
    return P


@dataclass(frozen=True)
class IekfState:
    """Estimate chi_hat with chi ~ exp(xi) chi_hat and Var(xi) = P.

    The estimate may carry a batch of trajectories; P is shared because the
    Riccati recursion does not depend on the observations.
    """

    descriptor: GroupDescriptor
    estimate: Array
    P: Array
    step: int = 0
    gain: Optional[Array] = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "estimate", self.descriptor.check(self.estimate))
        object.__setattr__(self, "P", check_covariance_state(self.P))


def iekf_predict(state: IekfState, upsilon: Array, omega: Array, Qw: Array) -> IekfState:
    descriptor = state.descriptor
    predicted = descriptor.compose(descriptor.compose(upsilon, state.estimate), omega)
    Ad = descriptor.Ad(upsilon)
    P = symmetrize(Ad @ state.P @ Ad.T + Qw)
    return IekfState(descriptor, predicted, P, state.step + 1)


def kalman_gain(P_pred: Array, lin: Linearization, Qv: Array) -> Tuple[Array, Array]:
    """L = P H^T S^-1 through a Cholesky solve, and P = (I - L H) P."""
    H = lin.H_xi
    S = symmetrize(lin.H_V @ Qv @ lin.H_V.T + H @ P_pred @ H.T)
    if np.min(np.linalg.svd(S, compute_uv=False)) <= SINGULAR_S_TOL:
        raise SingularInnovationError("innovation covariance S is singular")
    try:
        factor = cho_factor(S)
    except LinAlgError as e:
        raise SingularInnovationError(f"innovation covariance S is not positive definite: {e}") from e
    L = cho_solve(factor, H @ P_pred).T
    P = symmetrize((np.eye(P_pred.shape[0]) - L @ H) @ P_pred)
    return L, P


def iekf_update(state: IekfState, y: Array, lin: Linearization, Qv: Array) -> IekfState:
    descriptor = state.descriptor
    L, P = kalman_gain(state.P, lin, Qv)
    z = lin.output.act(state.estimate, y) - lin.h0
    corrected = descriptor.compose(descriptor.exp(z @ L.T), state.estimate)
    return IekfState(descriptor, corrected, P, state.step, gain=L)


@dataclass
class IekfTrace:
    estimates: Array
    gains: Array
    covariances: Array


def _initial_covariance(scenario: Scenario, P0: Optional[Array]) -> Array:
    return scenario.prior_cov if P0 is None else np.asarray(P0, dtype=float)


def run_iekf(
    scenario: Scenario,
    observations: Array,
    estimate_init: Array,
    P0: Optional[Array] = None,
    lin: Optional[Linearization] = None,
    Qv: Optional[Array] = None,
    form: str = "printed",
) -> IekfTrace:
    """Algorithm loop over the horizon, batched over trajectories."""
    descriptor = scenario.descriptor
    lin = lin or linearize(scenario.model.output)
    Qv = scenario.model.noise.obs_cov if Qv is None else Qv
    Qw = step_process_covariances(scenario, form)

    state = IekfState(descriptor, estimate_init, _initial_covariance(scenario, P0))
    horizon = scenario.horizon
    estimates = np.empty(observations.shape[:-2] + (horizon + 1,) + estimate_init.shape[-2:])
    estimates[..., 0, :, :] = state.estimate
    gains: List[Array] = []
    covariances = [state.P]
    for n in range(horizon):
        state = iekf_predict(state, scenario.left(n), scenario.right(n), Qw[n])
        state = iekf_update(state, observations[..., n, :], lin, Qv)
        estimates[..., n + 1, :, :] = state.estimate
        assert state.gain is not None
        gains.append(state.gain)
        covariances.append(state.P)
        logger.debug(f"iekf step {n + 1}: trace(P)={np.trace(state.P):.6g}")

    return IekfTrace(estimates, np.stack(gains), np.stack(covariances))


def riccati_gains(
    scenario: Scenario,
    steps: Optional[int] = None,
    P0: Optional[Array] = None,
    lin: Optional[Linearization] = None,
    form: str = "printed",
) -> Tuple[Array, Array]:
    """Gains L_1..L_steps and covariances P_0..P_steps without any data."""
    descriptor = scenario.descriptor
    lin = lin or linearize(scenario.model.output)
    Qv = scenario.model.noise.obs_cov
    steps = scenario.horizon if steps is None else steps
    Qw = step_process_covariances(scenario, form, steps)

    P = _initial_covariance(scenario, P0)
    gains: List[Array] = []
    covariances = [P]
    for n in range(steps):
        Ad = descriptor.Ad(scenario.left(n))
        P_pred = symmetrize(Ad @ P @ Ad.T + Qw[n])
        L, P = kalman_gain(P_pred, lin, Qv)
        gains.append(L)
        covariances.append(P)
    return np.stack(gains), np.stack(covariances)


def asymptotic_gain(
    gains: Array, tol: float = DEFAULT_GAIN_TOL, window: int = CONVERGENCE_WINDOW
) -> Optional[Array]:
    """Final gain when successive gains differ by less than ``tol`` over ``window`` steps."""
    gains = np.asarray(gains, dtype=float)
    if gains.shape[0] < window + 1:
        return None
    tail = gains[-(window + 1) :]
    drift = np.max(np.abs(np.diff(tail, axis=0)))
    if drift >= tol:
        logger.debug(f"gain trace not converged: drift {drift:.3g} over {window} steps")
        return None
    return gains[-1].copy()


def write_gain_trace(path: Union[str, Path], gains: Array) -> Path:
    d, p = gains.shape[1:]
    header = ["step"] + [f"L_{i + 1}{j + 1}" for i in range(d) for j in range(p)]
    rows = ([n + 1] + [float(v) for v in L.reshape(-1)] for n, L in enumerate(gains))
    return write_csv(path, header, rows)


def write_covariance_trace(path: Union[str, Path], covariances: Array) -> Path:
    d = covariances.shape[1]
    upper = [(i, j) for i in range(d) for j in range(i, d)]
    header = ["step"] + [f"P_{i + 1}{j + 1}" for i, j in upper]
    rows = ([n] + [float(P[i, j]) for i, j in upper] for n, P in enumerate(covariances))
    return write_csv(path, header, rows)


def _std_from_covariances(covariances: Array) -> Array:
    return np.sqrt(np.clip(np.diagonal(covariances, axis1=-2, axis2=-1), 0.0, None))  # type: ignore[no-any-return]


class IekfRunner(FilterRunner):
    name = "iekf"

    def __init__(
        self,
        form: str = "printed",
        debug: bool = False,
        logger: Optional[logging.Logger] = None,
    ):
        super().__init__(debug=debug, logger=logger)
        self.form = form

    def _run(self, scenario: Scenario, observations: Array, estimate_init: Array) -> FilterRun:
        trace = run_iekf(scenario, observations, estimate_init, form=self.form)
        converged = asymptotic_gain(trace.gains)
        self.logger.debug(f"iekf gains converged: {converged is not None}")
        return FilterRun(
            name=self.name,
            estimates=trace.estimates,
            reported_std=_std_from_covariances(trace.covariances),
            gains=trace.gains,
            covariances=trace.covariances,
        )


class AsymptoticIekfRunner(FilterRunner):
    """Invariant filter with the constant limit gain of the Riccati recursion."""

    name = "asymptotic-iekf"

    def __init__(
        self,
        max_steps: int = 2000,
        tol: float = DEFAULT_GAIN_TOL,
        debug: bool = False,
        logger: Optional[logging.Logger] = None,
    ):
        super().__init__(debug=debug, logger=logger)
        self.max_steps = max_steps
        self.tol = tol

    def limit_gain(self, scenario: Scenario) -> Array:
        if scenario.model.constant_left is None:
            raise GainError("asymptotic gain needs a constant left input")
        gains, _ = riccati_gains(scenario, steps=max(self.max_steps, scenario.horizon))
        L = asymptotic_gain(gains, self.tol)
        if L is None:
            raise GainError(f"Riccati gains did not converge within {len(gains)} steps")
        return L

    def _run(self, scenario: Scenario, observations: Array, estimate_init: Array) -> FilterRun:
        L = self.limit_gain(scenario)
        gain = LinearExpGain(L, scenario.model.output)
        estimates = run_invariant_filter(scenario, observations, estimate_init, gain)
        return FilterRun(
            name=self.name,
            estimates=estimates,
            gains=np.broadcast_to(L, (scenario.horizon,) + L.shape).copy(),
        )
