"""
Lie group module for invfilter

Matrix Lie group primitives (hat/vee, exp/log, adjoints, composition) for
SO(3), SE(3) and the translation group T(N) embedding R^N.

The group kernels on ``GroupDescriptor`` accept leading batch dimensions:
algebra coordinates are ``(..., algebra_dim)`` arrays and group elements are
``(..., matrix_size, matrix_size)`` arrays. ``GroupElement`` and
``AlgebraVector`` are the single-value API on top of them.
"""

import enum
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Any, Tuple

import numpy as np

from invfilter.constants import (
    ALGEBRA_PATTERN_TOL,
    LOG_BRANCH_MARGIN,
    MEMBERSHIP_TOL,
    REORTHONORMALIZE_TOL,
    SMALL_ANGLE,
)
from invfilter.errors import (
    AlgebraPatternError,
    DimensionError,
    LogBranchError,
    MembershipError,
)
from invfilter.types import Array, BoolArray


class GroupKind(str, enum.Enum):
    SO3 = "SO3"
    SE3 = "SE3"
    TN = "TN"


def skew(v: Array) -> Array:
    """Cross-product matrix (x)_x of a batch of 3-vectors."""
    v = np.asarray(v, dtype=float)
    out = np.zeros(v.shape[:-1] + (3, 3))
    out[..., 0, 1] = -v[..., 2]
    out[..., 0, 2] = v[..., 1]
    out[..., 1, 0] = v[..., 2]
    out[..., 1, 2] = -v[..., 0]
    out[..., 2, 0] = -v[..., 1]
    out[..., 2, 1] = v[..., 0]
    return out


def unskew(m: Array) -> Array:
    return np.stack([m[..., 2, 1], m[..., 0, 2], m[..., 1, 0]], axis=-1)


def rotation_coefficients(theta: Array) -> Tuple[Array, Array, Array]:
    """sin(t)/t, (1-cos(t))/t^2 and (t-sin(t))/t^3, Taylor-expanded near zero."""
    theta = np.asarray(theta, dtype=float)
    t2 = theta * theta
    small = theta < SMALL_ANGLE
    safe = np.where(small, 1.0, theta)
    half = np.sin(0.5 * safe) / safe
    a = np.where(small, 1.0 - t2 / 6.0 + t2 * t2 / 120.0, np.sin(safe) / safe)
    b = np.where(small, 0.5 - t2 / 24.0 + t2 * t2 / 720.0, 2.0 * half * half)
    c = np.where(
        small,
        1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0,
        (safe - np.sin(safe)) / safe**3,
    )
    return a, b, c


def rotation_angle(rot: Array) -> Array:
    """Angle of a batch of rotation matrices, in [0, pi]."""
    s = 0.5 * np.stack(
        [
            rot[..., 2, 1] - rot[..., 1, 2],
            rot[..., 0, 2] - rot[..., 2, 0],
            rot[..., 1, 0] - rot[..., 0, 1],
        ],
        axis=-1,
    )
    cos = 0.5 * (np.trace(rot, axis1=-2, axis2=-1) - 1.0)
    return np.arctan2(np.linalg.norm(s, axis=-1), cos)  # type: ignore[no-any-return]


def _so3_exp(v: Array) -> Array:
    theta = np.linalg.norm(v, axis=-1)
    a, b, _ = rotation_coefficients(theta)
    k = skew(v)
    return np.eye(3) + a[..., None, None] * k + b[..., None, None] * (k @ k)  # type: ignore[no-any-return]


def _so3_log(rot: Array, strict: bool) -> Tuple[Array, BoolArray]:
    s = 0.5 * np.stack(
        [
            rot[..., 2, 1] - rot[..., 1, 2],
            rot[..., 0, 2] - rot[..., 2, 0],
            rot[..., 1, 0] - rot[..., 0, 1],
        ],
        axis=-1,
    )
    sin = np.linalg.norm(s, axis=-1)
    cos = 0.5 * (np.trace(rot, axis1=-2, axis2=-1) - 1.0)
    theta = np.arctan2(sin, cos)
    beyond = theta > math.pi - LOG_BRANCH_MARGIN
    if strict and np.any(beyond):
        raise LogBranchError(
            f"rotation angle {float(np.max(theta))} is on the log branch cut"
        )

    t2 = theta * theta
    small = theta < SMALL_ANGLE
    safe_sin = np.where(small | beyond, 1.0, sin)
    coef = np.where(small, 1.0 + t2 / 6.0 + 7.0 * t2 * t2 / 360.0, theta / safe_sin)
    coords = coef[..., None] * s
    if np.any(beyond):
        flat = coords.reshape(-1, 3).copy()
        hit = np.reshape(beyond, -1)
        flat[hit] = _half_turn_coords(
            rot.reshape(-1, 3, 3)[hit], s.reshape(-1, 3)[hit], np.reshape(theta, -1)[hit]
        )
        coords = flat.reshape(coords.shape)
    return coords, beyond


def _half_turn_coords(rot: Array, s: Array, theta: Array) -> Array:
    """theta * axis near theta = pi, axis read from the symmetric part of rot."""
    cos = np.cos(theta)[..., None, None]
    outer = (0.5 * (rot + np.swapaxes(rot, -1, -2)) - cos * np.eye(3)) / (1.0 - cos)
    column = np.argmax(np.diagonal(outer, axis1=-2, axis2=-1), axis=-1)
    axis = np.take_along_axis(outer, column[..., None, None], axis=-1)[..., 0]
    axis = axis / np.linalg.norm(axis, axis=-1, keepdims=True)
    sign = np.where(np.sum(axis * s, axis=-1) < 0.0, -1.0, 1.0)
    return (sign * theta)[..., None] * axis  # type: ignore[no-any-return]


def _polar(rot: Array) -> Array:
    u, _, vt = np.linalg.svd(rot)
    return u @ vt  # type: ignore[no-any-return]


def orthogonality_defect(rot: Array) -> Array:
    gram = np.swapaxes(rot, -1, -2) @ rot
    return np.max(np.abs(gram - np.eye(3)), axis=(-2, -1))  # type: ignore[no-any-return]


def _reorthonormalize(rot: Array) -> Array:
    defect = orthogonality_defect(rot)
    if not np.any(defect > REORTHONORMALIZE_TOL):
        return rot

    flat = rot.reshape(-1, 3, 3).copy()
    drift = np.reshape(defect, -1) > REORTHONORMALIZE_TOL
    flat[drift] = _polar(flat[drift])
    return flat.reshape(rot.shape)


class GroupDescriptor(ABC):
    """A matrix Lie group: dimensions plus batch-aware group kernels."""

    kind: GroupKind
    algebra_dim: int
    matrix_size: int

    @property
    def group_id(self) -> str:
        return self.kind.value

    def __eq__(self, other: Any) -> bool:
        return isinstance(other, GroupDescriptor) and other.group_id == self.group_id

    def __hash__(self) -> int:
        return hash(self.group_id)

    def __repr__(self) -> str:
        return f"GroupDescriptor({self.group_id})"

    @classmethod
    def from_id(cls, group_id: str) -> "GroupDescriptor":
        """Parse ``SO3``, ``SE3`` or ``T<N>`` / ``TN(<N>)``."""
        key = group_id.strip().upper().replace("(", "").replace(")", "")
        if key == "SO3":
            return SO3_GROUP
        if key == "SE3":
            return SE3_GROUP
        if key.startswith("TN") and key[2:].isdigit():
            return translation_group(int(key[2:]))
        if key.startswith("T") and key[1:].isdigit():
            return translation_group(int(key[1:]))
        raise ValueError(f"unknown group id `{group_id}`")

    def check_coords(self, v: Array) -> Array:
        v = np.asarray(v, dtype=float)
        if v.ndim == 0 or v.shape[-1] != self.algebra_dim:
            raise DimensionError(
                f"{self.group_id} expects {self.algebra_dim} algebra coordinates, "
                f"got shape {v.shape}"
            )
        return v

    def check_matrix_shape(self, m: Array) -> Array:
        m = np.asarray(m, dtype=float)
        size = self.matrix_size
        if m.ndim < 2 or m.shape[-2:] != (size, size):
            raise DimensionError(
                f"{self.group_id} expects {size}x{size} matrices, got shape {m.shape}"
            )
        return m

    def identity(self, batch_shape: Tuple[int, ...] = ()) -> Array:
        size = self.matrix_size
        return np.broadcast_to(np.eye(size), batch_shape + (size, size)).copy()

    def compose(self, a: Array, b: Array) -> Array:
        """a b, re-projected onto the group except where a or b is exactly I."""
        a = np.asarray(a)
        b = np.asarray(b)
        product = a @ b
        projected = self.project(product)
        if projected is product:
            return product
        exact = self._is_identity(a) | self._is_identity(b)
        return np.where(exact[..., None, None], product, projected)  # type: ignore[no-any-return]

    def _is_identity(self, m: Array) -> BoolArray:
        return np.all(m == np.eye(self.matrix_size), axis=(-2, -1))  # type: ignore[no-any-return]

    def conjugate(self, g: Array, x: Array) -> Array:
        """g x g^-1."""
        return self.compose(self.compose(g, x), self.inverse(g))

    def branch_mask(self, m: Array) -> BoolArray:
        """Elements whose log is outside the principal branch."""
        return np.zeros(np.shape(m)[:-2], dtype=bool)

    def log_masked(self, m: Array) -> Tuple[Array, BoolArray]:
        """Log without raising; returns the coordinates and the branch mask."""
        return self.log(m), self.branch_mask(m)

    @abstractmethod
    def hat(self, v: Array) -> Array: ...

    @abstractmethod
    def vee(self, m: Array) -> Array: ...

    @abstractmethod
    def exp(self, v: Array) -> Array: ...

    @abstractmethod
    def log(self, m: Array) -> Array: ...

    @abstractmethod
    def Ad(self, m: Array) -> Array: ...

    @abstractmethod
    def ad(self, v: Array) -> Array: ...

    @abstractmethod
    def inverse(self, m: Array) -> Array: ...

    @abstractmethod
    def membership_defect(self, m: Array) -> Array:
        """Largest violation of the membership invariants (0 when exact)."""

    @abstractmethod
    def project(self, m: Array) -> Array:
        """Pull a product back onto the group when floating point drift shows."""

    def check(self, m: Array) -> Array:
        m = self.check_matrix_shape(m)
        defect = self.membership_defect(m)
        if np.any(defect > MEMBERSHIP_TOL):
            raise MembershipError(
                f"matrix is not a {self.group_id} element (defect {float(np.max(defect))})"
            )
        return m


class SO3Group(GroupDescriptor):
    kind = GroupKind.SO3
    algebra_dim = 3
    matrix_size = 3

    def hat(self, v: Array) -> Array:
        return skew(self.check_coords(v))

    def vee(self, m: Array) -> Array:
        m = self.check_matrix_shape(m)
        if np.any(np.abs(m + np.swapaxes(m, -1, -2)) > ALGEBRA_PATTERN_TOL):
            raise AlgebraPatternError("matrix is not skew-symmetric")
        return unskew(m)

    def exp(self, v: Array) -> Array:
        return _so3_exp(self.check_coords(v))

    def log(self, m: Array) -> Array:
        coords, _ = _so3_log(self.check_matrix_shape(m), strict=True)
        return coords

    def log_masked(self, m: Array) -> Tuple[Array, BoolArray]:
        return _so3_log(self.check_matrix_shape(m), strict=False)

    def branch_mask(self, m: Array) -> BoolArray:
        return rotation_angle(m) > math.pi - LOG_BRANCH_MARGIN  # type: ignore[no-any-return]

    def Ad(self, m: Array) -> Array:
        return np.array(m, dtype=float)

    def ad(self, v: Array) -> Array:
        return skew(self.check_coords(v))

    def inverse(self, m: Array) -> Array:
        return np.swapaxes(m, -1, -2).copy()

    def membership_defect(self, m: Array) -> Array:
        defect = orthogonality_defect(m)
        return np.where(np.linalg.det(m) > 0, defect, np.inf)  # type: ignore[no-any-return]

    def project(self, m: Array) -> Array:
        return _reorthonormalize(m)


class SE3Group(GroupDescriptor):
    kind = GroupKind.SE3
    algebra_dim = 6
    matrix_size = 4

    def hat(self, v: Array) -> Array:
        v = self.check_coords(v)
        out = np.zeros(v.shape[:-1] + (4, 4))
        out[..., :3, :3] = skew(v[..., :3])
        out[..., :3, 3] = v[..., 3:]
        return out

    def vee(self, m: Array) -> Array:
        m = self.check_matrix_shape(m)
        block = m[..., :3, :3]
        if np.any(np.abs(block + np.swapaxes(block, -1, -2)) > ALGEBRA_PATTERN_TOL):
            raise AlgebraPatternError("rotation block is not skew-symmetric")
        if np.any(np.abs(m[..., 3, :]) > ALGEBRA_PATTERN_TOL):
            raise AlgebraPatternError("bottom row of an se(3) matrix must vanish")
        return np.concatenate([unskew(block), m[..., :3, 3]], axis=-1)

    def _left_jacobian(self, xi: Array) -> Array:
        theta = np.linalg.norm(xi, axis=-1)
        _, b, c = rotation_coefficients(theta)
        k = skew(xi)
        return np.eye(3) + b[..., None, None] * k + c[..., None, None] * (k @ k)  # type: ignore[no-any-return]

    def exp(self, v: Array) -> Array:
        v = self.check_coords(v)
        out = self.identity(v.shape[:-1])
        out[..., :3, :3] = _so3_exp(v[..., :3])
        out[..., :3, 3] = (self._left_jacobian(v[..., :3]) @ v[..., 3:, None])[..., 0]
        return out

    def _log(self, m: Array, strict: bool) -> Tuple[Array, BoolArray]:
        m = self.check_matrix_shape(m)
        xi, beyond = _so3_log(m[..., :3, :3], strict=strict)
        u = np.linalg.solve(self._left_jacobian(xi), m[..., :3, 3:])[..., 0]
        return np.concatenate([xi, u], axis=-1), beyond

    def log(self, m: Array) -> Array:
        return self._log(m, strict=True)[0]

    def log_masked(self, m: Array) -> Tuple[Array, BoolArray]:
        return self._log(m, strict=False)

    def branch_mask(self, m: Array) -> BoolArray:
        return rotation_angle(m[..., :3, :3]) > math.pi - LOG_BRANCH_MARGIN  # type: ignore[no-any-return]

    def Ad(self, m: Array) -> Array:
        m = self.check_matrix_shape(m)
        rot = m[..., :3, :3]
        out = np.zeros(m.shape[:-2] + (6, 6))
        out[..., :3, :3] = rot
        out[..., 3:, 3:] = rot
        out[..., 3:, :3] = skew(m[..., :3, 3]) @ rot
        return out

    def ad(self, v: Array) -> Array:
        v = self.check_coords(v)
        out = np.zeros(v.shape[:-1] + (6, 6))
        k = skew(v[..., :3])
        out[..., :3, :3] = k
        out[..., 3:, 3:] = k
        out[..., 3:, :3] = skew(v[..., 3:])
        return out

    def inverse(self, m: Array) -> Array:
        m = self.check_matrix_shape(m)
        rot_t = np.swapaxes(m[..., :3, :3], -1, -2)
        out = self.identity(m.shape[:-2])
        out[..., :3, :3] = rot_t
        out[..., :3, 3] = -(rot_t @ m[..., :3, 3:])[..., 0]
        return out

    def membership_defect(self, m: Array) -> Array:
        rot = m[..., :3, :3]
        defect = np.where(np.linalg.det(rot) > 0, orthogonality_defect(rot), np.inf)
        bottom = np.any(m[..., 3, :] != np.array([0.0, 0.0, 0.0, 1.0]), axis=-1)
        return np.where(bottom, np.inf, defect)  # type: ignore[no-any-return]

    def project(self, m: Array) -> Array:
        out = np.array(m, dtype=float)
        out[..., :3, :3] = _reorthonormalize(out[..., :3, :3])
        out[..., 3, :] = np.array([0.0, 0.0, 0.0, 1.0])
        return out


class TranslationGroup(GroupDescriptor):
    """R^N embedded as the matrices ((I_N, 0), (X^T, 1))."""

    kind = GroupKind.TN

    def __init__(self, n: int):
        if n < 1:
            raise ValueError("translation group dimension must be positive")
        self.n = n
        self.algebra_dim = n
        self.matrix_size = n + 1

    @property
    def group_id(self) -> str:
        return f"T{self.n}"

    def hat(self, v: Array) -> Array:
        v = self.check_coords(v)
        out = np.zeros(v.shape[:-1] + (self.n + 1, self.n + 1))
        out[..., self.n, : self.n] = v
        return out

    def vee(self, m: Array) -> Array:
        m = self.check_matrix_shape(m)
        rest = np.array(m, dtype=float)
        rest[..., self.n, : self.n] = 0.0
        if np.any(np.abs(rest) > ALGEBRA_PATTERN_TOL):
            raise AlgebraPatternError("matrix is not in the translation algebra")
        return m[..., self.n, : self.n].copy()

    def exp(self, v: Array) -> Array:
        v = self.check_coords(v)
        out = self.identity(v.shape[:-1])
        out[..., self.n, : self.n] = v
        return out

    def log(self, m: Array) -> Array:
        m = self.check(m)
        return m[..., self.n, : self.n].copy()

    def Ad(self, m: Array) -> Array:
        m = self.check_matrix_shape(m)
        return np.broadcast_to(np.eye(self.n), m.shape[:-2] + (self.n, self.n)).copy()

    def ad(self, v: Array) -> Array:
        v = self.check_coords(v)
        return np.zeros(v.shape[:-1] + (self.n, self.n))

    def inverse(self, m: Array) -> Array:
        m = self.check_matrix_shape(m)
        out = self.identity(m.shape[:-2])
        out[..., self.n, : self.n] = -m[..., self.n, : self.n]
        return out

    def membership_defect(self, m: Array) -> Array:
        pattern = np.array(m, dtype=float)
        pattern[..., self.n, : self.n] = 0.0
        return np.max(np.abs(pattern - np.eye(self.n + 1)), axis=(-2, -1))  # type: ignore[no-any-return]

    def project(self, m: Array) -> Array:
        return m


SO3_GROUP = SO3Group()

SE3_GROUP = SE3Group()


def translation_group(n: int) -> TranslationGroup:
    return TranslationGroup(n)


@dataclass(frozen=True)
class AlgebraVector:
    descriptor: GroupDescriptor
    coords: Array

    def __post_init__(self) -> None:
        coords = np.array(self.coords, dtype=float)
        if coords.shape != (self.descriptor.algebra_dim,):
            raise DimensionError(
                f"{self.descriptor.group_id} expects {self.descriptor.algebra_dim} "
                f"coordinates, got shape {coords.shape}"
            )
        coords.flags.writeable = False
        object.__setattr__(self, "coords", coords)

    def __add__(self, other: "AlgebraVector") -> "AlgebraVector":
        _same_group(self.descriptor, other.descriptor)
        return AlgebraVector(self.descriptor, self.coords + other.coords)

    def __mul__(self, scalar: float) -> "AlgebraVector":
        return AlgebraVector(self.descriptor, scalar * self.coords)

    __rmul__ = __mul__


@dataclass(frozen=True)
class GroupElement:
    descriptor: GroupDescriptor
    mat: Array

    def __post_init__(self) -> None:
        mat = self.descriptor.check(np.array(self.mat, dtype=float))
        if mat.ndim != 2:
            raise DimensionError("GroupElement holds a single matrix")
        mat.flags.writeable = False
        object.__setattr__(self, "mat", mat)

    def __matmul__(self, other: "GroupElement") -> "GroupElement":
        return compose(self, other)

    def inverse(self) -> "GroupElement":
        return inverse(self)


def _same_group(a: GroupDescriptor, b: GroupDescriptor) -> None:
    if a != b:
        raise DimensionError(f"group mismatch: {a.group_id} vs {b.group_id}")


def hat(v: AlgebraVector) -> Array:
    """Embedded algebra matrix of ``v``."""
    return v.descriptor.hat(v.coords)


def vee(m: Array, descriptor: GroupDescriptor) -> AlgebraVector:
    """Inverse of ``hat``; rejects matrices off the algebra pattern."""
    m = np.asarray(m, dtype=float)
    if m.ndim != 2:
        raise DimensionError("vee expects a single matrix")
    return AlgebraVector(descriptor, descriptor.vee(m))


def exp_g(v: AlgebraVector) -> GroupElement:
    return GroupElement(v.descriptor, v.descriptor.exp(v.coords))


def log_g(g: GroupElement) -> AlgebraVector:
    """Principal-branch logarithm; raises ``LogBranchError`` at angle pi."""
    return AlgebraVector(g.descriptor, g.descriptor.log(g.mat))


def adjoint_Ad(g: GroupElement) -> Array:
    return g.descriptor.Ad(g.mat)


def adjoint_ad(v: AlgebraVector) -> Array:
    return v.descriptor.ad(v.coords)


def compose(a: GroupElement, b: GroupElement) -> GroupElement:
    _same_group(a.descriptor, b.descriptor)
    return GroupElement(a.descriptor, a.descriptor.compose(a.mat, b.mat))


def inverse(a: GroupElement) -> GroupElement:
    return GroupElement(a.descriptor, a.descriptor.inverse(a.mat))


def identity(descriptor: GroupDescriptor) -> GroupElement:
    return GroupElement(descriptor, descriptor.identity())


def embed_translation(x: Array) -> GroupElement:
    """The T(N) element ((I_N, 0), (x^T, 1))."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.size == 0:
        raise DimensionError("embed_translation expects a non-empty vector")
    group = translation_group(x.size)
    return GroupElement(group, group.exp(x))


def distance(a: GroupElement, b: GroupElement) -> float:
    """Right-invariant distance: angle of the rotation part of a b^-1.

    For T(N) this is the Euclidean distance of the translations.
    """
    diff = compose(a, inverse(b))
    if isinstance(diff.descriptor, TranslationGroup):
        return float(np.linalg.norm(diff.descriptor.log(diff.mat)))
    return float(rotation_angle(diff.mat[:3, :3]))
