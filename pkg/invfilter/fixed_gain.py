"""
Fixed gain module for invfilter

Constant-gain invariant filters: the two-vector attitude filter, the
artificial-horizon filter with thresholded gain, their noiseless behaviour,
empirical stationary error laws and off-line optimization of the horizon gain.
"""

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.stats import wasserstein_distance

from invfilter.common import FilterRun, FilterRunner
from invfilter.constants import (
    APPLICATION_PREFIX,
    DEFAULT_BURN_IN,
    DEFAULT_RETAINED,
    DEGENERATE_CROSS_TOL,
    HISTOGRAM_BINS,
)
from invfilter.filtering import GainFunction, propagate_error, run_invariant_filter
from invfilter.lie import SO3_GROUP
from invfilter.models import (
    OutputKind,
    OutputMap,
    Scenario,
    sample_observation_noise,
    sample_process_noise,
)
from invfilter.types import Array
from invfilter.utils import sample_gaussian, write_csv

logger = logging.getLogger(f"{APPLICATION_PREFIX}.fixed_gain")


@dataclass(frozen=True)
class TwoVectorGainParams:
    k1: float
    k2: float
    b1: Tuple[float, float, float] = (1.0, 0.0, 0.0)
    b2: Tuple[float, float, float] = (0.0, 1.0, 0.0)

    def __post_init__(self) -> None:
        if self.k1 <= 0 or self.k2 <= 0:
            raise ValueError("gains k1 and k2 must be positive")
        if self.k1 + self.k2 > 1:
            raise ValueError("gains must satisfy k1 + k2 <= 1")
        object.__setattr__(self, "b1", tuple(float(v) for v in self.b1))
        object.__setattr__(self, "b2", tuple(float(v) for v in self.b2))


@dataclass(frozen=True)
class HorizonGainParams:
    k: float
    lam: float
    g_ref: Tuple[float, float, float] = (0.0, 0.0, 1.0)

    def __post_init__(self) -> None:
        if not 0 < self.k <= 1:
            raise ValueError("horizon gain k must lie in (0, 1]")
        if not 0 < self.lam <= math.pi:
            raise ValueError("horizon threshold lambda must lie in (0, pi]")
        object.__setattr__(self, "g_ref", tuple(float(v) for v in self.g_ref))


def two_vector_gain(y: Array, params: TwoVectorGainParams) -> Array:
    """exp(k1 (y1 x b1) + k2 (y2 x b2)), batched over leading dimensions."""
    y = np.asarray(y, dtype=float)
    v = params.k1 * np.cross(y[..., :3], params.b1) + params.k2 * np.cross(
        y[..., 3:6], params.b2
    )
    return SO3_GROUP.exp(v)


def horizon_gain(y: Array, params: HorizonGainParams) -> Array:
    """Rotation about y x g by k min(angle(y, g), lambda); identity when y x g vanishes."""
    y = np.asarray(y, dtype=float)
    g = np.asarray(params.g_ref)
    cross = np.cross(y, g)
    norm = np.linalg.norm(cross, axis=-1)
    angle = np.arctan2(norm, y @ g)
    degenerate = norm < DEGENERATE_CROSS_TOL
    scale = np.where(
        degenerate,
        0.0,
        params.k * np.minimum(angle, params.lam) / np.where(degenerate, 1.0, norm),
    )
    return SO3_GROUP.exp(scale[..., None] * cross)


class TwoVectorGain(GainFunction):
    def __init__(self, params: TwoVectorGainParams):
        super().__init__(OutputMap.two_vector(params.b1, params.b2))
        self.params = params
        self.check_identity()

    def evaluate(self, y: Array) -> Array:
        return two_vector_gain(y, self.params)


class HorizonGain(GainFunction):
    def __init__(self, params: HorizonGainParams):
        super().__init__(OutputMap.single_vector(params.g_ref))
        self.params = params
        self.check_identity()

    def evaluate(self, y: Array) -> Array:
        return horizon_gain(y, self.params)


def noiseless_iterate(gamma0: Array, gain: GainFunction, upsilon: Array, N: int) -> Array:
    """gamma_0..gamma_N of the error recursion with noise off."""
    descriptor = gain.descriptor
    gamma = descriptor.check(gamma0)
    batch = gamma.shape[:-2]
    W = descriptor.identity(batch)
    V = np.zeros(batch + (gain.output.obs_dim,))
    sequence = np.empty((N + 1,) + gamma.shape)
    sequence[0] = gamma
    for n in range(N):
        gamma = propagate_error(gamma, W, V, upsilon, gain).eta
        sequence[n + 1] = gamma
    return sequence


def lyapunov_E(gamma: Array, params: TwoVectorGainParams) -> Array:
    """k1 |gamma^T b1 - b1|^2 + k2 |gamma^T b2 - b2|^2."""
    gamma_t = np.swapaxes(np.asarray(gamma, dtype=float), -1, -2)
    b1 = np.asarray(params.b1)
    b2 = np.asarray(params.b2)
    d1 = gamma_t @ b1 - b1
    d2 = gamma_t @ b2 - b2
    return params.k1 * np.sum(d1 * d1, axis=-1) + params.k2 * np.sum(d2 * d2, axis=-1)  # type: ignore[no-any-return]


def output_error(gamma: Array, output: OutputMap) -> Array:
    """|h(gamma, 0) - h(I_d, 0)|."""
    return np.linalg.norm(output.noiseless(gamma) - output.h0, axis=-1)  # type: ignore[no-any-return]


def horizon_angle_sequence(phi0: float, k: float, lam: float, N: int) -> Array:
    """phi_{n+1} = phi_n - k min(lambda, phi_n)."""
    phi = np.empty(N + 1)
    phi[0] = phi0
    for n in range(N):
        phi[n + 1] = phi[n] - k * min(lam, phi[n])
    return phi


def tilt_coordinates(eta: Array, g_ref: Array) -> Array:
    """log of the smallest rotation taking g_ref to eta^-1 g_ref."""
    g = np.asarray(g_ref, dtype=float) / np.linalg.norm(g_ref)
    moved = np.einsum("...ji,j->...i", eta, g)
    axis = np.cross(g, moved)
    norm = np.linalg.norm(axis, axis=-1)
    angle = np.arctan2(norm, moved @ g)
    scale = np.where(norm < DEGENERATE_CROSS_TOL, 0.0, angle / np.where(norm > 0, norm, 1.0))
    return scale[..., None] * axis  # type: ignore[no-any-return]


@dataclass
class StationaryReport:
    """Post-burn-in error samples of independent error chains.

    ``samples`` holds tilt coordinates for single-vector outputs (rotations
    about the reference vector are unobservable and never mix) and log(eta)
    otherwise.
    """

    burn_in: int
    retained: int
    n_chains: int
    coordinates: str
    samples: Array
    rmse: float
    axis_std: Array
    histograms: List[Tuple[Array, Array]] = field(default_factory=list)
    output_errors: Optional[Array] = None
    branch_hits: int = 0

    @property
    def n_samples(self) -> int:
        return int(self.samples.shape[0])


def _stationary_rmse(eta: Array, output: OutputMap) -> Array:
    """Per-sample squared errors whose mean defines the RMSE."""
    if output.kind is OutputKind.SINGLE_VECTOR:
        assert output.refs is not None
        g = output.refs[0]
        diff = eta @ g - g
        return np.sum(diff * diff, axis=-1)  # type: ignore[no-any-return]
    coords, _ = output.descriptor.log_masked(eta)
    return np.sum(coords * coords, axis=-1)  # type: ignore[no-any-return]


def estimate_stationary(
    scenario: Scenario,
    gain: GainFunction,
    burn_in: int = DEFAULT_BURN_IN,
    n_traj: int = 1000,
    rng: Optional[np.random.Generator] = None,
    retained: int = DEFAULT_RETAINED,
    prior_cov: Optional[Array] = None,
) -> StationaryReport:
    """Run independent error chains and keep the post-burn-in samples.

    The prior draws and the noise draws come from separate child streams, so
    two priors run with the same generator state share their noise.
    """
    upsilon = scenario.model.constant_left
    if upsilon is None:
        raise ValueError("stationary estimation requires a constant left input")
    if n_traj < 1 or retained < 1 or burn_in < 0:
        raise ValueError("n_traj and retained must be positive, burn_in non-negative")

    descriptor = scenario.descriptor
    model = scenario.model
    output = model.output
    rng = rng or np.random.default_rng()
    prior_rng, noise_rng = rng.spawn(2)

    cov = scenario.prior_cov if prior_cov is None else np.asarray(prior_cov, dtype=float)
    eta = descriptor.exp(sample_gaussian(cov, prior_rng, (n_traj,)))

    kept: List[Array] = []
    for step in range(burn_in + retained):
        W = sample_process_noise(model.noise, model.dt, noise_rng, descriptor, (n_traj,))
        V = sample_observation_noise(output, model.noise, noise_rng, (n_traj,))
        eta = propagate_error(eta, W, V, upsilon, gain).eta
        if step >= burn_in:
            kept.append(eta)

    etas = np.concatenate(kept, axis=0)
    branch_hits = int(np.count_nonzero(descriptor.branch_mask(etas)))
    if branch_hits:
        logger.warning(f"{branch_hits} stationary samples lie near a half-turn error")
    rmse = float(np.sqrt(np.mean(_stationary_rmse(etas, output))))
    output_errors = None
    if output.kind is OutputKind.SINGLE_VECTOR:
        assert output.refs is not None
        samples = tilt_coordinates(etas, output.refs[0])
        coordinates = "tilt"
        output_errors = np.einsum("...ji,j->...i", etas, output.refs[0]) - output.refs[0]
    else:
        samples, _ = descriptor.log_masked(etas)
        coordinates = "log"

    histograms = [
        np.histogram(samples[:, axis], bins=HISTOGRAM_BINS) for axis in range(samples.shape[1])
    ]
    logger.info(
        f"stationary estimate on {scenario.name}: {n_traj} chains, burn-in {burn_in}, "
        f"{etas.shape[0]} samples, rmse {rmse:.6g}"
    )
    return StationaryReport(
        burn_in=burn_in,
        retained=retained,
        n_chains=n_traj,
        coordinates=coordinates,
        samples=samples,
        rmse=rmse,
        axis_std=samples.std(axis=0),
        histograms=histograms,
        output_errors=output_errors,
        branch_hits=branch_hits,
    )


def marginal_distance(a: StationaryReport, b: StationaryReport, axis: int = 0) -> float:
    """1-Wasserstein distance between one marginal of two stationary reports."""
    return float(wasserstein_distance(a.samples[:, axis], b.samples[:, axis]))


@dataclass
class GridResult:
    k_star: float
    lam_star: float
    rmse_star: float
    surface: List[Tuple[float, float, float, int]]
    k_grid: Tuple[float, ...] = ()
    lam_grid: Tuple[float, ...] = ()

    def nearest_node(self, k: float, lam: float) -> Tuple[int, int]:
        """Indices of the grid node closest to (k, lam) in log scale."""
        i = int(np.argmin(np.abs(np.log(np.asarray(self.k_grid) / k))))
        j = int(np.argmin(np.abs(np.log(np.asarray(self.lam_grid) / lam))))
        return i, j

    def cell_offset(self, k: float, lam: float) -> Tuple[int, int]:
        """Grid steps from the node nearest (k, lam) to the argmin."""
        i, j = self.nearest_node(k, lam)
        i_star, j_star = self.nearest_node(self.k_star, self.lam_star)
        return i_star - i, j_star - j

    def rmse_at(self, k: float, lam: float) -> float:
        i, j = self.nearest_node(k, lam)
        return self.surface[i * len(self.lam_grid) + j][2]


def grid_optimize_horizon(
    scenario: Scenario,
    k_grid: Sequence[float],
    lam_grid: Sequence[float],
    burn_in: int = DEFAULT_BURN_IN,
    n_traj: int = 500,
    rng: Optional[np.random.Generator] = None,
    retained: int = DEFAULT_RETAINED,
) -> GridResult:
    """Exhaustive RMSE evaluation; every grid point reuses the same noise seed."""
    if len(k_grid) == 0 or len(lam_grid) == 0:
        raise ValueError("grid_optimize_horizon needs non-empty k and lambda grids")
    output = scenario.model.output
    if output.kind is not OutputKind.SINGLE_VECTOR or output.refs is None:
        raise ValueError("horizon optimization needs a single-vector output")

    rng = rng or np.random.default_rng()
    seed = int(rng.integers(2**63 - 1))
    g_ref = tuple(float(v) for v in output.refs[0])

    surface: List[Tuple[float, float, float, int]] = []
    best: Optional[Tuple[float, float, float]] = None
    for k in k_grid:
        for lam in lam_grid:
            gain = HorizonGain(HorizonGainParams(float(k), float(lam), g_ref))  # type: ignore[arg-type]
            report = estimate_stationary(
                scenario, gain, burn_in, n_traj, np.random.default_rng(seed), retained
            )
            surface.append((float(k), float(lam), report.rmse, report.n_samples))
            logger.debug(f"grid point k={k:.6g} lambda={lam:.6g}: rmse {report.rmse:.6g}")
            if best is None or report.rmse < best[2]:
                best = (float(k), float(lam), report.rmse)

    assert best is not None
    logger.info(f"horizon optimum k={best[0]:.6g} lambda={best[1]:.6g} rmse={best[2]:.6g}")
    return GridResult(
        best[0],
        best[1],
        best[2],
        surface,
        tuple(float(k) for k in k_grid),
        tuple(float(lam) for lam in lam_grid),
    )


def write_surface_csv(
    path: Union[str, Path], surface: Iterable[Tuple[float, float, float, int]]
) -> Path:
    return write_csv(path, ["k", "lambda", "rmse", "n_samples"], surface)


@dataclass
class SymmetryDiagnostic:
    angle: float
    distances: Array

    @property
    def max_distance(self) -> float:
        return float(np.max(self.distances))


def symmetry_diagnostic(
    report: StationaryReport, g_ref: Any, angle: float = math.pi / 3
) -> SymmetryDiagnostic:
    """Compare the stationary output-error law with its image under a rotation about g.

    Conjugating eta by a rotation r about g maps the output error
    eta^-1 g - g to r (eta^-1 g - g); when the stationary law is invariant the
    per-axis marginals of both sample sets agree.
    """
    if report.output_errors is None:
        raise ValueError("symmetry diagnostic needs a single-vector stationary report")
    g = np.asarray(g_ref, dtype=float)
    r = SO3_GROUP.exp(angle * g / np.linalg.norm(g))
    errors = report.output_errors
    rotated = errors @ r.T
    distances = np.array(
        [wasserstein_distance(errors[:, i], rotated[:, i]) for i in range(errors.shape[1])]
    )
    return SymmetryDiagnostic(angle=float(angle), distances=distances)


class FixedGainRunner(FilterRunner):
    """Invariant filter with one constant gain function."""

    name = "fixed-gain"

    def __init__(
        self,
        gain: GainFunction,
        debug: bool = False,
        logger: Optional[logging.Logger] = None,
    ):
        super().__init__(debug=debug, logger=logger)
        self.gain = gain

    def _run(self, scenario: Scenario, observations: Array, estimate_init: Array) -> FilterRun:
        if self.gain.descriptor != scenario.descriptor:
            raise ValueError("gain and scenario live on different groups")
        estimates = run_invariant_filter(scenario, observations, estimate_init, self.gain)
        return FilterRun(name=self.name, estimates=estimates)


def default_fixed_gain(scenario: Scenario, params: Optional[Any] = None) -> GainFunction:
    """Two-vector or horizon gain matching the scenario output."""
    output = scenario.model.output
    if output.kind is OutputKind.TWO_VECTOR:
        assert output.refs is not None
        b1, b2 = (tuple(float(v) for v in ref) for ref in output.refs)
        k1, k2 = params if params is not None else (0.3, 0.3)
        return TwoVectorGain(TwoVectorGainParams(k1, k2, b1, b2))  # type: ignore[arg-type]
    if output.kind is OutputKind.SINGLE_VECTOR:
        assert output.refs is not None
        g_ref = tuple(float(v) for v in output.refs[0])
        k, lam = params if params is not None else (0.1202, 0.0029)
        return HorizonGain(HorizonGainParams(k, lam, g_ref))  # type: ignore[arg-type]
    raise ValueError(f"no built-in fixed gain for {output.kind.value} outputs")
