"""
Filtering module for invfilter

The generic invariant filter: prediction chi_hat' = Upsilon chi_hat Omega, the
update chi_hat = K(chi_hat' . Y) chi_hat', invariant errors
eta = chi chi_hat^-1 and the input-free error recursion they obey.
"""

import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

from invfilter.constants import APPLICATION_PREFIX, GAIN_IDENTITY_TOL
from invfilter.errors import DimensionError, GainError
from invfilter.lie import GroupDescriptor
from invfilter.models import OutputMap, Scenario
from invfilter.types import Array

logger = logging.getLogger(f"{APPLICATION_PREFIX}.filtering")


class GainFunction(ABC):
    """y -> K(y) in G, with K(h(I_d, 0)) = I_d."""

    def __init__(self, output: OutputMap):
        self.output = output
        self.descriptor: GroupDescriptor = output.descriptor

    @abstractmethod
    def evaluate(self, y: Array) -> Array:
        """Batched over the leading dimensions of ``y``."""

    def __call__(self, y: Array) -> Array:
        return self.evaluate(y)

    def check_identity(self) -> None:
        value = self.evaluate(self.output.h0)
        defect = float(np.max(np.abs(value - self.descriptor.identity())))
        if defect > GAIN_IDENTITY_TOL:
            raise GainError(f"gain does not map h(I_d, 0) to the identity (defect {defect})")


class LinearExpGain(GainFunction):
    """K(y) = exp(L (y - h(I_d, 0)))."""

    def __init__(self, L: Array, output: OutputMap):
        super().__init__(output)
        L = np.array(L, dtype=float)
        if L.shape != (self.descriptor.algebra_dim, output.obs_dim):
            raise DimensionError(
                f"gain matrix must be {self.descriptor.algebra_dim}x{output.obs_dim}, "
                f"got shape {L.shape}"
            )
        L.flags.writeable = False
        self.L = L
        self.check_identity()

    def evaluate(self, y: Array) -> Array:
        z = np.asarray(y, dtype=float) - self.output.h0
        return self.descriptor.exp(z @ self.L.T)


@dataclass(frozen=True)
class FilterState:
    descriptor: GroupDescriptor
    estimate: Array
    step: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "estimate", self.descriptor.check(self.estimate))


@dataclass(frozen=True)
class ErrorSample:
    """Corrected error eta and, when known, the predicted error eta'."""

    eta: Array
    eta_pred: Optional[Array] = None


def predict(state: FilterState, upsilon: Array, omega: Array) -> FilterState:
    descriptor = state.descriptor
    predicted = descriptor.compose(descriptor.compose(upsilon, state.estimate), omega)
    return FilterState(descriptor, predicted, state.step + 1)


def update(state: FilterState, y: Array, gain: GainFunction) -> FilterState:
    """Left-multiply the prediction by K evaluated at the acted observation."""
    if gain.descriptor != state.descriptor:
        raise DimensionError("gain and state live on different groups")
    descriptor = state.descriptor
    innovation = gain.output.act(state.estimate, y)
    corrected = descriptor.compose(gain(innovation), state.estimate)
    return FilterState(descriptor, corrected, state.step)


def error_of(
    truth: Array, state: FilterState, predicted: Optional[FilterState] = None
) -> ErrorSample:
    descriptor = state.descriptor
    eta = descriptor.compose(truth, descriptor.inverse(state.estimate))
    eta_pred = None
    if predicted is not None:
        eta_pred = descriptor.compose(truth, descriptor.inverse(predicted.estimate))
    return ErrorSample(eta, eta_pred)


def propagate_error(
    eta: Array,
    W: Array,
    V: Array,
    upsilon: Array,
    gain: GainFunction,
) -> ErrorSample:
    """eta' = Upsilon W eta Upsilon^-1, then eta = eta' K(h(eta', V))^-1."""
    descriptor = gain.descriptor
    eta_pred = descriptor.compose(
        descriptor.compose(descriptor.compose(upsilon, W), eta), descriptor.inverse(upsilon)
    )
    correction = gain(gain.output(eta_pred, V))
    eta_next = descriptor.compose(eta_pred, descriptor.inverse(correction))
    return ErrorSample(eta_next, eta_pred)


GainArgument = Union[GainFunction, Sequence[GainFunction]]


def gain_at(gains: GainArgument, n: int) -> GainFunction:
    """Gain used by the update that produces step ``n + 1``."""
    if isinstance(gains, GainFunction):
        return gains
    return gains[n]


def run_invariant_filter(
    scenario: Scenario,
    observations: Array,
    estimate_init: Array,
    gains: GainArgument,
) -> Array:
    """Estimates chi_hat_0..chi_hat_N, batched over leading dimensions.

    ``observations`` has shape ``batch + (N, p)`` and ``estimate_init`` has
    shape ``batch + (m, m)``.
    """
    descriptor = scenario.descriptor
    horizon = scenario.horizon
    if observations.shape[-2] != horizon:
        raise DimensionError(
            f"expected {horizon} observations per trajectory, got {observations.shape[-2]}"
        )
    if not isinstance(gains, GainFunction) and len(gains) < horizon:
        raise DimensionError("gain sequence is shorter than the scenario horizon")

    estimates = np.empty(observations.shape[:-2] + (horizon + 1,) + estimate_init.shape[-2:])
    state = FilterState(descriptor, estimate_init)
    estimates[..., 0, :, :] = state.estimate
    for n in range(horizon):
        state = predict(state, scenario.left(n), scenario.right(n))
        state = update(state, observations[..., n, :], gain_at(gains, n))
        estimates[..., n + 1, :, :] = state.estimate
        logger.debug(f"invariant filter step {n + 1}/{horizon}")

    return estimates
