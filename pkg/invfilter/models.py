"""
Models module for invfilter

Discrete-time models chi_{n+1} = Upsilon_n W_n chi_n Omega_n with equivariant
outputs, their exact one-step discretization, noise sampling, trajectory
simulation and the benchmark scenarios.
"""

import enum
import math
from dataclasses import dataclass
from typing import Any, Callable, Dict, Optional, Tuple

import numpy as np

from invfilter.constants import DEFAULT_DT, DEGENERATE_CROSS_TOL
from invfilter.errors import DimensionError
from invfilter.lie import (
    SE3_GROUP,
    SO3_GROUP,
    GroupDescriptor,
    TranslationGroup,
    translation_group,
)
from invfilter.types import Array
from invfilter.utils import as_covariance, check_covariance, sample_gaussian


class OutputKind(str, enum.Enum):
    TWO_VECTOR = "two_vector"
    SINGLE_VECTOR = "single_vector"
    VELOCITY_SE3 = "velocity_se3"
    LINEAR = "linear"


class NoiseSpec:
    """Process diffusion (per unit time), observation covariance, outliers."""

    def __init__(
        self,
        process_cov: Any,
        obs_cov: Any,
        outlier_prob: float = 0.0,
        outlier_std: float = 0.0,
    ):
        process_cov = np.array(process_cov, dtype=float)
        obs_cov = np.array(obs_cov, dtype=float)
        self.process_cov = check_covariance(
            process_cov, process_cov.shape[0], "process covariance"
        )
        self.obs_cov = check_covariance(obs_cov, obs_cov.shape[0], "observation covariance")
        if not 0.0 <= outlier_prob <= 1.0:
            raise ValueError("outlier probability must lie in [0, 1]")
        if outlier_std < 0.0:
            raise ValueError("outlier std must be non-negative")
        self.outlier_prob = float(outlier_prob)
        self.outlier_std = float(outlier_std)

    def step_cov(self, dt: float) -> Array:
        return self.process_cov * dt  # type: ignore[no-any-return]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "process_cov": self.process_cov.tolist(),
            "obs_cov": self.obs_cov.tolist(),
            "outlier_prob": self.outlier_prob,
            "outlier_std": self.outlier_std,
        }


class OutputMap:
    """Equivariant output h(chi, V) together with its action g.y on outputs.

    Vector kinds observe chi^-1 (b_i + V_i) per reference vector, the velocity
    kind observes the first three entries of chi^-1 (V, 1) and the linear kind
    observes H x + V on T(N).
    """

    def __init__(
        self,
        kind: OutputKind,
        descriptor: GroupDescriptor,
        refs: Optional[Array] = None,
        H: Optional[Array] = None,
    ):
        self.kind = kind
        self.descriptor = descriptor
        self.refs = None if refs is None else np.array(refs, dtype=float).reshape(-1, 3)
        self.H = None if H is None else np.array(H, dtype=float)

    @classmethod
    def two_vector(cls, b1: Any, b2: Any) -> "OutputMap":
        b1 = np.asarray(b1, dtype=float)
        b2 = np.asarray(b2, dtype=float)
        if b1.shape != (3,) or b2.shape != (3,):
            raise DimensionError("reference vectors must be 3-vectors")
        if np.linalg.norm(np.cross(b1, b2)) < DEGENERATE_CROSS_TOL:
            raise ValueError("reference vectors b1, b2 must not be collinear")
        return cls(OutputKind.TWO_VECTOR, SO3_GROUP, refs=np.stack([b1, b2]))

    @classmethod
    def single_vector(cls, g_ref: Any) -> "OutputMap":
        g_ref = np.asarray(g_ref, dtype=float)
        if g_ref.shape != (3,) or not np.any(g_ref):
            raise DimensionError("reference vector must be a non-zero 3-vector")
        return cls(OutputKind.SINGLE_VECTOR, SO3_GROUP, refs=g_ref[None, :])

    @classmethod
    def velocity_se3(cls) -> "OutputMap":
        return cls(OutputKind.VELOCITY_SE3, SE3_GROUP)

    @classmethod
    def linear(cls, H: Any) -> "OutputMap":
        H = np.atleast_2d(np.asarray(H, dtype=float))
        return cls(OutputKind.LINEAR, translation_group(H.shape[1]), H=H)

    @property
    def obs_dim(self) -> int:
        if self.refs is not None:
            return 3 * self.refs.shape[0]
        if self.H is not None:
            return int(self.H.shape[0])
        return 3

    @property
    def h0(self) -> Array:
        """h(I_d, 0)."""
        if self.refs is not None:
            return self.refs.reshape(-1).copy()
        return np.zeros(self.obs_dim)

    def _check_obs(self, y: Array) -> Array:
        y = np.asarray(y, dtype=float)
        if y.ndim == 0 or y.shape[-1] != self.obs_dim:
            raise DimensionError(
                f"{self.kind.value} output expects {self.obs_dim} entries, got shape {y.shape}"
            )
        return y

    def _blocks(self, y: Array) -> Array:
        return y.reshape(y.shape[:-1] + (-1, 3))

    def __call__(self, chi: Array, V: Array) -> Array:
        """h(chi, V), batched over leading dimensions of ``chi`` and ``V``."""
        chi = self.descriptor.check_matrix_shape(chi)
        V = self._check_obs(V)
        if self.refs is not None:
            rot = chi[..., :3, :3]
            points = self.refs + self._blocks(V)
            out = np.einsum("...ji,...kj->...ki", rot, points)
            return out.reshape(out.shape[:-2] + (self.obs_dim,))  # type: ignore[no-any-return]
        if self.kind is OutputKind.VELOCITY_SE3:
            rot = chi[..., :3, :3]
            diff = V - chi[..., :3, 3]
            return np.einsum("...ji,...j->...i", rot, diff)  # type: ignore[no-any-return]
        assert self.H is not None and isinstance(self.descriptor, TranslationGroup)
        n = self.descriptor.n
        return chi[..., n, :n] @ self.H.T + V  # type: ignore[no-any-return]

    def noiseless(self, chi: Array) -> Array:
        chi = self.descriptor.check_matrix_shape(chi)
        return self(chi, np.zeros(chi.shape[:-2] + (self.obs_dim,)))

    def act(self, g: Array, y: Array) -> Array:
        """Left action g.y on the output space."""
        g = self.descriptor.check_matrix_shape(g)
        y = self._check_obs(y)
        if self.refs is not None:
            out = np.einsum("...ij,...kj->...ki", g[..., :3, :3], self._blocks(y))
            return out.reshape(out.shape[:-2] + (self.obs_dim,))  # type: ignore[no-any-return]
        if self.kind is OutputKind.VELOCITY_SE3:
            return np.einsum("...ij,...j->...i", g[..., :3, :3], y) + g[..., :3, 3]  # type: ignore[no-any-return]
        assert self.H is not None and isinstance(self.descriptor, TranslationGroup)
        n = self.descriptor.n
        return y - g[..., n, :n] @ self.H.T  # type: ignore[no-any-return]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "kind": self.kind.value,
            "group": self.descriptor.group_id,
            "refs": None if self.refs is None else self.refs.tolist(),
            "H": None if self.H is None else self.H.tolist(),
        }


class DiscreteModel:
    """Per-step inputs, noise laws and output map of a discrete model.

    ``left_inputs`` and ``right_inputs`` are ``(N, m, m)`` arrays of group
    elements; a single ``(m, m)`` matrix is broadcast over the horizon.
    """

    def __init__(
        self,
        descriptor: GroupDescriptor,
        left_inputs: Array,
        right_inputs: Array,
        noise: NoiseSpec,
        output: OutputMap,
        dt: float = DEFAULT_DT,
    ):
        left = np.array(descriptor.check(left_inputs))
        right = np.array(descriptor.check(right_inputs))
        if left.ndim == 2 and right.ndim == 3:
            left = np.broadcast_to(left, right.shape).copy()
        if right.ndim == 2 and left.ndim == 3:
            right = np.broadcast_to(right, left.shape).copy()
        if left.ndim == 2:
            left, right = left[None], right[None]
        if left.shape != right.shape:
            raise DimensionError("left and right input sequences must share length")
        if output.descriptor != descriptor:
            raise DimensionError(
                f"output map acts on {output.descriptor.group_id}, model is {descriptor.group_id}"
            )
        if noise.process_cov.shape[0] != descriptor.algebra_dim:
            raise DimensionError("process covariance does not match the algebra dimension")
        if noise.obs_cov.shape[0] != output.obs_dim:
            raise DimensionError("observation covariance does not match the output dimension")
        if dt <= 0:
            raise ValueError("dt must be positive")

        left.flags.writeable = False
        right.flags.writeable = False
        self.descriptor = descriptor
        self.left_inputs = left
        self.right_inputs = right
        self.noise = noise
        self.output = output
        self.dt = float(dt)

    @property
    def num_steps(self) -> int:
        return int(self.left_inputs.shape[0])

    @property
    def process_step_cov(self) -> Array:
        return self.noise.step_cov(self.dt)

    @property
    def constant_left(self) -> Optional[Array]:
        """The left input when it does not change along the horizon."""
        first = self.left_inputs[0]
        if np.all(self.left_inputs == first):
            return first.copy()
        return None

    def with_right_inputs(self, right_inputs: Array) -> "DiscreteModel":
        return DiscreteModel(
            self.descriptor, self.left_inputs, right_inputs, self.noise, self.output, self.dt
        )

    def to_dict(self) -> Dict[str, Any]:
        return {
            "group": self.descriptor.group_id,
            "left_inputs": self.left_inputs.tolist(),
            "right_inputs": self.right_inputs.tolist(),
            "noise": self.noise.to_dict(),
            "output": self.output.to_dict(),
            "dt": self.dt,
        }


class Scenario:
    def __init__(
        self,
        name: str,
        model: DiscreteModel,
        horizon: int,
        truth_init: Optional[Array] = None,
        prior_cov: Any = 0.0,
    ):
        if horizon < 1:
            raise ValueError("scenario horizon must be at least one step")
        if model.num_steps not in (1, horizon):
            raise DimensionError(
                f"model has {model.num_steps} input steps, horizon is {horizon}"
            )
        descriptor = model.descriptor
        self.name = name
        self.model = model
        self.horizon = int(horizon)
        self.truth_init = (
            descriptor.identity() if truth_init is None else descriptor.check(truth_init)
        )
        self.prior_cov = as_covariance(prior_cov, descriptor.algebra_dim, "prior covariance")

    @property
    def descriptor(self) -> GroupDescriptor:
        return self.model.descriptor

    def left(self, n: int) -> Array:
        return self.model.left_inputs[min(n, self.model.num_steps - 1)]  # type: ignore[no-any-return]

    def right(self, n: int) -> Array:
        return self.model.right_inputs[min(n, self.model.num_steps - 1)]  # type: ignore[no-any-return]

    def left_sequence(self) -> Array:
        return self._over_horizon(self.model.left_inputs)

    def right_sequence(self) -> Array:
        return self._over_horizon(self.model.right_inputs)

    def _over_horizon(self, inputs: Array) -> Array:
        if inputs.shape[0] == self.horizon:
            return inputs
        return np.broadcast_to(inputs, (self.horizon,) + inputs.shape[1:])

    def sample_prior(self, rng: np.random.Generator, size: Tuple[int, ...] = ()) -> Array:
        """Initial errors xi_0 ~ N(0, P0) in the algebra."""
        return sample_gaussian(self.prior_cov, rng, size)

    def initial_estimate(self, truth_init: Array, xi0: Array) -> Array:
        """chi_hat_0 = exp(-xi_0) chi_0, so that eta_0 = exp(xi_0)."""
        descriptor = self.descriptor
        return descriptor.compose(descriptor.exp(-np.asarray(xi0)), truth_init)

    def replace(self, **changes: Any) -> "Scenario":
        fields = {
            "name": self.name,
            "model": self.model,
            "horizon": self.horizon,
            "truth_init": self.truth_init,
            "prior_cov": self.prior_cov,
        }
        fields.update(changes)
        return Scenario(**fields)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "name": self.name,
            "model": self.model.to_dict(),
            "horizon": self.horizon,
            "truth_init": self.truth_init.tolist(),
            "prior_cov": self.prior_cov.tolist(),
        }


@dataclass(frozen=True)
class Trajectory:
    """Truth chi_0..chi_N, observations Y_1..Y_N and the noise that produced them."""

    truth: Array
    observations: Array
    process_noise: Array
    observation_noise: Array

    @property
    def horizon(self) -> int:
        return int(self.observations.shape[0])


def discretize(
    upsilon: Any, omega: Any, dt: float, descriptor: GroupDescriptor
) -> Tuple[Array, Array]:
    """Exact one-step flows of piecewise-constant left/right algebra inputs."""
    upsilon = descriptor.check_coords(upsilon)
    omega = descriptor.check_coords(omega)
    return descriptor.exp(dt * upsilon), descriptor.exp(dt * omega)


def sample_process_noise(
    spec: NoiseSpec,
    dt: float,
    rng: np.random.Generator,
    descriptor: GroupDescriptor,
    size: Tuple[int, ...] = (),
) -> Array:
    """W_n = exp(w) with w ~ N(0, Q^w dt) in the algebra."""
    if spec.process_cov.shape[0] != descriptor.algebra_dim:
        raise DimensionError("process covariance does not match the algebra dimension")
    w = sample_gaussian(spec.step_cov(dt), rng, size)
    return descriptor.exp(w)


def sample_observation_noise(
    output: OutputMap,
    spec: NoiseSpec,
    rng: np.random.Generator,
    size: Tuple[int, ...] = (),
) -> Array:
    """Gaussian observation noise plus the isotropic outlier mixture."""
    if spec.obs_cov.shape[0] != output.obs_dim:
        raise DimensionError("observation covariance does not match the output dimension")
    V = sample_gaussian(spec.obs_cov, rng, size)
    if spec.outlier_prob > 0.0:
        hit = rng.random(size) < spec.outlier_prob
        extra = spec.outlier_std * rng.standard_normal(size + (output.obs_dim,))
        V = V + np.where(np.asarray(hit)[..., None], extra, 0.0)
    return V


def observe(
    chi: Array, output: OutputMap, noise: NoiseSpec, rng: np.random.Generator
) -> Array:
    chi = output.descriptor.check_matrix_shape(chi)
    V = sample_observation_noise(output, noise, rng, chi.shape[:-2])
    return output(chi, V)


def propagate_truth(
    scenario: Scenario, truth_init: Array, process_noise: Array, observation_noise: Array
) -> Trajectory:
    """Run chi_{n+1} = Upsilon_n W_n chi_n Omega_n for given noise realizations."""
    descriptor = scenario.descriptor
    output = scenario.model.output
    horizon = scenario.horizon
    if process_noise.shape[0] != horizon or observation_noise.shape[0] != horizon:
        raise DimensionError("noise sequences must cover the scenario horizon")

    truth = np.empty((horizon + 1,) + truth_init.shape)
    truth[0] = truth_init
    chi = truth_init
    for n in range(horizon):
        step = descriptor.compose(scenario.left(n), process_noise[n])
        chi = descriptor.compose(descriptor.compose(step, chi), scenario.right(n))
        truth[n + 1] = chi

    return Trajectory(
        truth=truth,
        observations=output(truth[1:], observation_noise),
        process_noise=np.array(process_noise),
        observation_noise=np.array(observation_noise),
    )


def simulate_trajectory(
    scenario: Scenario,
    rng: np.random.Generator,
    truth_init: Optional[Array] = None,
) -> Trajectory:
    model = scenario.model
    horizon = scenario.horizon
    W = sample_process_noise(model.noise, model.dt, rng, scenario.descriptor, (horizon,))
    V = sample_observation_noise(model.output, model.noise, rng, (horizon,))
    chi0 = scenario.truth_init if truth_init is None else truth_init
    return propagate_truth(scenario, chi0, W, V)


def table3_rate(t: Array) -> Array:
    """Body rate profile driving the two-vector benchmark, rad/s."""
    t = np.asarray(t, dtype=float)
    return np.stack(
        [1.5 * np.sin(t), 1.0 * np.cos(0.7 * t), 0.5 * np.ones_like(t)], axis=-1
    )


def _right_inputs_from_rate(
    rate: Callable[[Array], Array], horizon: int, dt: float, descriptor: GroupDescriptor
) -> Array:
    times = dt * np.arange(horizon)
    return descriptor.exp(dt * rate(times))


def table3(
    horizon: int = 50,
    dt: float = DEFAULT_DT,
    b1: Any = (1.0, 0.0, 0.0),
    b2: Any = (0.0, 1.0, 0.0),
    obs_std: float = 0.0873,
    prior_std: float = 0.5236,
    step_std: float = 0.01745,
) -> Scenario:
    """Two observed vectors on SO(3), constant trivial left input."""
    output = OutputMap.two_vector(b1, b2)
    noise = NoiseSpec(
        process_cov=(step_std**2 / dt) * np.eye(3),
        obs_cov=obs_std**2 * np.eye(6),
    )
    model = DiscreteModel(
        SO3_GROUP,
        SO3_GROUP.identity(),
        _right_inputs_from_rate(table3_rate, horizon, dt, SO3_GROUP),
        noise,
        output,
        dt,
    )
    return Scenario("exp-table3", model, horizon, prior_cov=prior_std**2)


def artificial_horizon(
    horizon: int = 1000,
    dt: float = DEFAULT_DT,
    g_ref: Any = (0.0, 0.0, 1.0),
    step_std: float = 1.75e-4,
    obs_std: float = 1.75e-3,
    outlier_std: float = math.radians(30.0),
    outlier_prob: float = 0.01,
    prior_std: float = 0.05,
) -> Scenario:
    """Artificial horizon: one vertical direction with outlier-contaminated readings."""
    output = OutputMap.single_vector(g_ref)
    noise = NoiseSpec(
        process_cov=(step_std**2 / dt) * np.eye(3),
        obs_cov=obs_std**2 * np.eye(3),
        outlier_prob=outlier_prob,
        outlier_std=outlier_std,
    )
    model = DiscreteModel(
        SO3_GROUP,
        SO3_GROUP.identity(),
        _right_inputs_from_rate(table3_rate, horizon, dt, SO3_GROUP),
        noise,
        output,
        dt,
    )
    return Scenario("exp-horizon", model, horizon, prior_cov=prior_std**2)


def linear_equivalence_inputs(
    dim: int = 4, obs_dim: int = 3, seed: int = 2024
) -> Tuple[Array, Array]:
    """Fixed observation matrix H and drift rate of the linear benchmark."""
    rng = np.random.default_rng(seed)
    return rng.standard_normal((obs_dim, dim)), rng.standard_normal(dim)


def linear_equivalence(
    horizon: int = 100,
    dt: float = DEFAULT_DT,
    dim: int = 4,
    obs_dim: int = 3,
    step_var: float = 0.01,
    obs_var: float = 0.04,
    prior_var: float = 1.0,
    seed: int = 2024,
) -> Scenario:
    """Linear Gaussian model written on the translation group T(dim)."""
    H, drift = linear_equivalence_inputs(dim, obs_dim, seed)
    group = translation_group(dim)
    output = OutputMap.linear(H)
    noise = NoiseSpec(
        process_cov=(step_var / dt) * np.eye(dim),
        obs_cov=obs_var * np.eye(obs_dim),
    )
    model = DiscreteModel(
        group, group.identity(), group.exp(dt * drift), noise, output, dt
    )
    return Scenario("exp-linear-equiv", model, horizon, prior_cov=prior_var)


def earth_rate(latitude: float = math.radians(45.0)) -> Array:
    """Earth rotation vector in a north-west-up frame, rad/s."""
    return 7.292115e-5 * np.array([math.cos(latitude), 0.0, math.sin(latitude)])


def round_earth(
    horizon: int = 500,
    dt: float = DEFAULT_DT,
    latitude: float = math.radians(45.0),
    step_std: float = 1.0e-4,
    obs_std: float = 1.0e-3,
    prior_std: float = 0.1,
) -> Scenario:
    """Vertical observed on a rotating Earth; the Earth rate is the left input."""
    upsilon = SO3_GROUP.exp(dt * earth_rate(latitude))
    output = OutputMap.single_vector((0.0, 0.0, 1.0))
    noise = NoiseSpec(
        process_cov=(step_std**2 / dt) * np.eye(3),
        obs_cov=obs_std**2 * np.eye(3),
    )
    model = DiscreteModel(
        SO3_GROUP,
        upsilon,
        _right_inputs_from_rate(table3_rate, horizon, dt, SO3_GROUP),
        noise,
        output,
        dt,
    )
    return Scenario("exp-round-earth", model, horizon, prior_cov=prior_std**2)


GRAVITY = np.array([0.0, 0.0, -9.81])


def se3_velocity(
    horizon: int = 200,
    dt: float = DEFAULT_DT,
    gyro_rate: Any = (0.1, -0.05, 0.2),
    accel: Any = (0.3, 0.0, 9.81),
    gyro_std: float = 0.01,
    accel_std: float = 0.05,
    obs_std: float = 0.1,
    prior_std: float = 0.1,
) -> Scenario:
    """Attitude and velocity on SE(3) with velocity readings in the earth frame.

    The state is ((R^T, R^T v), (0, 1)); gyro and accelerometer increments
    enter on the left as (-psi, a), gravity enters on the right as (0, g).
    """
    upsilon = np.concatenate([-np.asarray(gyro_rate, dtype=float), np.asarray(accel, dtype=float)])
    omega = np.concatenate([np.zeros(3), GRAVITY])
    left, right = discretize(upsilon, omega, dt, SE3_GROUP)
    noise = NoiseSpec(
        process_cov=np.diag([gyro_std**2] * 3 + [accel_std**2] * 3),
        obs_cov=obs_std**2 * np.eye(3),
    )
    model = DiscreteModel(SE3_GROUP, left, right, noise, OutputMap.velocity_se3(), dt)
    return Scenario("exp-se3-velocity", model, horizon, prior_cov=prior_std**2)
