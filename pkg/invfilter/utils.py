import csv
import hashlib
from pathlib import Path
from typing import Any, Iterable, Sequence, Tuple, Union

import numpy as np
import orjson

from invfilter.constants import PSD_TOL
from invfilter.errors import CovarianceError
from invfilter.types import Array

SUMMARY_JSON_OPTIONS = orjson.OPT_SERIALIZE_NUMPY | orjson.OPT_SORT_KEYS | orjson.OPT_INDENT_2


def trajectory_rng(seed: int, traj_id: int) -> np.random.Generator:
    """Independent stream for one trajectory, derived from (seed, traj_id)."""
    return np.random.default_rng([seed, traj_id])


def check_covariance(cov: Any, dim: int, name: str = "covariance") -> Array:
    cov = np.array(cov, dtype=float)
    if cov.shape != (dim, dim):
        raise CovarianceError(f"{name} must be {dim}x{dim}, got shape {cov.shape}")
    if not np.all(np.isfinite(cov)):
        raise CovarianceError(f"{name} has non-finite entries")
    if np.max(np.abs(cov - cov.T), initial=0.0) > PSD_TOL:
        raise CovarianceError(f"{name} is not symmetric")
    if dim and np.min(np.linalg.eigvalsh(cov)) < -PSD_TOL:
        raise CovarianceError(f"{name} is not positive semi-definite")
    return cov


def as_covariance(value: Any, dim: int, name: str = "covariance") -> Array:
    """Scalar variance (times identity) or full matrix."""
    if np.ndim(value) == 0:
        return check_covariance(float(value) * np.eye(dim), dim, name)
    return check_covariance(value, dim, name)


def covariance_factor(cov: Array) -> Array:
    """F with F F^T = cov; works for singular covariances."""
    vals, vecs = np.linalg.eigh(cov)
    return vecs * np.sqrt(np.clip(vals, 0.0, None))  # type: ignore[no-any-return]


def sample_gaussian(
    cov: Array, rng: np.random.Generator, size: Tuple[int, ...] = ()
) -> Array:
    """Zero-mean Gaussian draws of shape ``size + (dim,)``."""
    dim = cov.shape[0]
    z = rng.standard_normal(size + (dim,))
    if not np.any(cov):
        return np.zeros(size + (dim,))
    return z @ covariance_factor(cov).T  # type: ignore[no-any-return]


def symmetrize(m: Array) -> Array:
    return 0.5 * (m + np.swapaxes(m, -1, -2))  # type: ignore[no-any-return]


def format_float(value: float) -> str:
    return format(float(value), ".17g")


def write_csv(
    path: Union[str, Path], header: Sequence[str], rows: Iterable[Sequence[Any]]
) -> Path:
    """Write a header plus rows; floats are written round-trip exact."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow(
                [format_float(v) if isinstance(v, (float, np.floating)) else v for v in row]
            )
    return path


def read_csv(path: Union[str, Path]) -> Tuple[list, list]:
    with Path(path).open("r", newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        return header, [row for row in reader]


def write_json(path: Union[str, Path], payload: Any) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(orjson.dumps(payload, option=SUMMARY_JSON_OPTIONS))
    return path


def sha256_of_arrays(*arrays: Array) -> str:
    digest = hashlib.sha256()
    for arr in arrays:
        digest.update(np.ascontiguousarray(arr, dtype=float).tobytes())
    return digest.hexdigest()


def sha256_of_payload(payload: Any) -> str:
    return hashlib.sha256(
        orjson.dumps(payload, option=orjson.OPT_SERIALIZE_NUMPY | orjson.OPT_SORT_KEYS)
    ).hexdigest()
