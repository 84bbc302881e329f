"""Quaternion and SE(3) Lie-group arithmetic plus latent camera-trajectory interpolation.

Twists are ordered (rho, phi): translational part first, rotational part second.
All public operations return new values; nothing here mutates its inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import AngleAtCutLocus

# Below this rotation angle the closed-form Rodrigues coefficients switch to
# 4th-order Taylor series to avoid catastrophic cancellation.
SMALL_ANGLE = 1e-8

# Log map refuses rotations this close to the cut locus at pi.
CUT_LOCUS_TOL = 1e-6


def _skew(v: np.ndarray) -> np.ndarray:
    return np.array(
        [
            [0.0, -v[2], v[1]],
            [v[2], 0.0, -v[0]],
            [-v[1], v[0], 0.0],
        ]
    )


def _vee(m: np.ndarray) -> np.ndarray:
    return np.array([m[2, 1], m[0, 2], m[1, 0]])


@dataclass(frozen=True)
class Quaternion:
    """Unit quaternion (w, x, y, z). Public constructors normalize."""

    w: float
    x: float
    y: float
    z: float

    def normalized(self) -> "Quaternion":
        n = math.sqrt(self.w**2 + self.x**2 + self.y**2 + self.z**2)
        return Quaternion(self.w / n, self.x / n, self.y / n, self.z / n)

    @staticmethod
    def identity() -> "Quaternion":
        return Quaternion(1.0, 0.0, 0.0, 0.0)

    @staticmethod
    def from_axis_angle(axis: np.ndarray, angle: float) -> "Quaternion":
        axis = np.asarray(axis, dtype=float)
        axis = axis / np.linalg.norm(axis)
        h = 0.5 * angle
        s = math.sin(h)
        return Quaternion(math.cos(h), s * axis[0], s * axis[1], s * axis[2])

    @staticmethod
    def from_matrix(r: np.ndarray) -> "Quaternion":
        # Shepperd's method: pick the largest diagonal combination.
        t = np.trace(r)
        if t > 0:
            s = math.sqrt(t + 1.0) * 2.0
            return Quaternion(
                0.25 * s,
                (r[2, 1] - r[1, 2]) / s,
                (r[0, 2] - r[2, 0]) / s,
                (r[1, 0] - r[0, 1]) / s,
            ).normalized()
        i = int(np.argmax(np.diag(r)))
        if i == 0:
            s = math.sqrt(1.0 + r[0, 0] - r[1, 1] - r[2, 2]) * 2.0
            q = (
                (r[2, 1] - r[1, 2]) / s,
                0.25 * s,
                (r[0, 1] + r[1, 0]) / s,
                (r[0, 2] + r[2, 0]) / s,
            )
        elif i == 1:
            s = math.sqrt(1.0 + r[1, 1] - r[0, 0] - r[2, 2]) * 2.0
            q = (
                (r[0, 2] - r[2, 0]) / s,
                (r[0, 1] + r[1, 0]) / s,
                0.25 * s,
                (r[1, 2] + r[2, 1]) / s,
            )
        else:
            s = math.sqrt(1.0 + r[2, 2] - r[0, 0] - r[1, 1]) * 2.0
            q = (
                (r[1, 0] - r[0, 1]) / s,
                (r[0, 2] + r[2, 0]) / s,
                (r[1, 2] + r[2, 1]) / s,
                0.25 * s,
            )
        return Quaternion(*q).normalized()

    def to_matrix(self) -> np.ndarray:
        w, x, y, z = self.w, self.x, self.y, self.z
        return np.array(
            [
                [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
                [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
                [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
            ]
        )

    def conjugate(self) -> "Quaternion":
        return Quaternion(self.w, -self.x, -self.y, -self.z)

    def __mul__(self, other: "Quaternion") -> "Quaternion":
        w1, x1, y1, z1 = self.w, self.x, self.y, self.z
        w2, x2, y2, z2 = other.w, other.x, other.y, other.z
        return Quaternion(
            w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
            w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
            w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
            w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
        ).normalized()

    @staticmethod
    def slerp(a: "Quaternion", b: "Quaternion", t: float) -> "Quaternion":
        va = np.array([a.w, a.x, a.y, a.z])
        vb = np.array([b.w, b.x, b.y, b.z])
        dot = float(np.dot(va, vb))
        if dot < 0:
            vb = -vb
            dot = -dot
        if dot > 1.0 - 1e-12:
            v = va + t * (vb - va)
            v /= np.linalg.norm(v)
            return Quaternion(*v)
        omega = math.acos(min(dot, 1.0))
        s = math.sin(omega)
        v = (math.sin((1 - t) * omega) / s) * va + (math.sin(t * omega) / s) * vb
        return Quaternion(*v).normalized()


@dataclass(frozen=True)
class Twist:
    """se(3) coordinates: rho (translation part), phi (rotation part, radians)."""

    rho: np.ndarray
    phi: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "rho", np.asarray(self.rho, dtype=float).reshape(3))
        object.__setattr__(self, "phi", np.asarray(self.phi, dtype=float).reshape(3))

    @staticmethod
    def zero() -> "Twist":
        return Twist(np.zeros(3), np.zeros(3))

    @staticmethod
    def from_vector(v: np.ndarray) -> "Twist":
        v = np.asarray(v, dtype=float).reshape(6)
        return Twist(v[:3], v[3:])

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.rho, self.phi])

    def __mul__(self, s: float) -> "Twist":
        return Twist(self.rho * s, self.phi * s)

    __rmul__ = __mul__


@dataclass(frozen=True)
class RigidTransform:
    """SE(3) element: 3x3 rotation and 3-vector translation, p' = R p + t."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        object.__setattr__(
            self, "rotation", np.asarray(self.rotation, dtype=float).reshape(3, 3)
        )
        object.__setattr__(
            self, "translation", np.asarray(self.translation, dtype=float).reshape(3)
        )

    @staticmethod
    def identity() -> "RigidTransform":
        return RigidTransform(np.eye(3), np.zeros(3))

    @staticmethod
    def from_quaternion(q: Quaternion, t: np.ndarray) -> "RigidTransform":
        return RigidTransform(q.normalized().to_matrix(), t)

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        return RigidTransform(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def __matmul__(self, other: "RigidTransform") -> "RigidTransform":
        return self.compose(other)

    def inverse(self) -> "RigidTransform":
        rt = self.rotation.T
        return RigidTransform(rt, -rt @ self.translation)

    def apply(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        return points @ self.rotation.T + self.translation

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def quaternion(self) -> Quaternion:
        return Quaternion.from_matrix(self.rotation)


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics: square pixels, principal point at the image center."""

    focal: float
    width: int
    height: int
    cx: float = field(default=None)  # type: ignore[assignment]
    cy: float = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if self.focal <= 0:
            raise ValueError("focal must be positive")
        if self.width < 1 or self.height < 1:
            raise ValueError("image dimensions must be >= 1")
        if self.cx is None:
            object.__setattr__(self, "cx", self.width / 2.0)
        if self.cy is None:
            object.__setattr__(self, "cy", self.height / 2.0)


# ---------------------------------------------------------------------------
# Rodrigues coefficients with small-angle series
# ---------------------------------------------------------------------------


def _sin_coeffs(theta: float) -> tuple[float, float, float]:
    """(sin t/t, (1-cos t)/t^2, (t-sin t)/t^3) with 4th-order Taylor fallback."""
    t2 = theta * theta
    if theta < SMALL_ANGLE:
        a = 1.0 - t2 / 6.0 + t2 * t2 / 120.0
        b = 0.5 - t2 / 24.0 + t2 * t2 / 720.0
        c = 1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0
    else:
        a = math.sin(theta) / theta
        b = (1.0 - math.cos(theta)) / t2
        c = (theta - math.sin(theta)) / (t2 * theta)
    return a, b, c


def so3_exp(phi: np.ndarray) -> np.ndarray:
    phi = np.asarray(phi, dtype=float).reshape(3)
    theta = float(np.linalg.norm(phi))
    a, b, _ = _sin_coeffs(theta)
    k = _skew(phi)
    return np.eye(3) + a * k + b * (k @ k)


def so3_log(r: np.ndarray) -> np.ndarray:
    r = np.asarray(r, dtype=float)
    cos_theta = max(-1.0, min(1.0, (np.trace(r) - 1.0) / 2.0))
    theta = math.acos(cos_theta)
    if theta > math.pi - CUT_LOCUS_TOL:
        raise AngleAtCutLocus(f"rotation angle {theta} within tolerance of pi")
    if theta < SMALL_ANGLE:
        scale = 0.5 + theta * theta / 12.0
    else:
        scale = theta / (2.0 * math.sin(theta))
    return scale * _vee(r - r.T)


def so3_left_jacobian(phi: np.ndarray) -> np.ndarray:
    phi = np.asarray(phi, dtype=float).reshape(3)
    theta = float(np.linalg.norm(phi))
    _, b, c = _sin_coeffs(theta)
    k = _skew(phi)
    return np.eye(3) + b * k + c * (k @ k)


def so3_left_jacobian_inv(phi: np.ndarray) -> np.ndarray:
    phi = np.asarray(phi, dtype=float).reshape(3)
    theta = float(np.linalg.norm(phi))
    t2 = theta * theta
    if theta < SMALL_ANGLE:
        d = 1.0 / 12.0 + t2 / 720.0 + t2 * t2 / 30240.0
    else:
        half = 0.5 * theta
        d = (1.0 - half * math.cos(half) / math.sin(half)) / t2
    k = _skew(phi)
    return np.eye(3) - 0.5 * k + d * (k @ k)


def se3_exp(xi: Twist) -> RigidTransform:
    """Closed-form exponential: Rodrigues rotation plus V-matrix translation."""
    r = so3_exp(xi.phi)
    t = so3_left_jacobian(xi.phi) @ xi.rho
    return RigidTransform(r, t)


def se3_log(t: RigidTransform) -> Twist:
    """Principal-branch inverse of se3_exp; raises AngleAtCutLocus near pi."""
    phi = so3_log(t.rotation)
    rho = so3_left_jacobian_inv(phi) @ t.translation
    return Twist(rho, phi)


def se3_adjoint(t: RigidTransform) -> np.ndarray:
    """6x6 adjoint for twist ordering (rho, phi)."""
    ad = np.zeros((6, 6))
    ad[:3, :3] = t.rotation
    ad[3:, 3:] = t.rotation
    ad[:3, 3:] = _skew(t.translation) @ t.rotation
    return ad


def _se3_q_matrix(xi: Twist) -> np.ndarray:
    """Translation-rotation coupling block of the SE(3) left Jacobian."""
    rho, phi = xi.rho, xi.phi
    theta = float(np.linalg.norm(phi))
    t2 = theta * theta
    if theta < SMALL_ANGLE:
        c1 = 1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0
        c2 = 1.0 / 24.0 - t2 / 720.0 + t2 * t2 / 40320.0
        c3 = 1.0 / 120.0 - t2 / 2520.0 + t2 * t2 / 120960.0
    else:
        st, ct = math.sin(theta), math.cos(theta)
        c1 = (theta - st) / (t2 * theta)
        c2 = (t2 / 2.0 + ct - 1.0) / (t2 * t2)
        c3 = (theta - st - t2 * theta / 6.0) / (-(t2 * t2 * theta))
    rx = _skew(rho)
    px = _skew(phi)
    pxrx = px @ rx
    rxpx = rx @ px
    pxpx = px @ px
    q = (
        0.5 * rx
        + c1 * (pxrx + rxpx + px @ rxpx)
        + c2 * (px @ pxrx + rx @ pxpx - 3.0 * px @ rxpx)
        + 0.5 * (c2 - 3.0 * c3) * (pxrx @ pxpx + pxpx @ rxpx)
    )
    return q


def se3_left_jacobian(xi: Twist) -> np.ndarray:
    """6x6 left Jacobian: Exp(xi + d) ~ Exp(J d) Exp(xi)."""
    j = np.zeros((6, 6))
    jso3 = so3_left_jacobian(xi.phi)
    j[:3, :3] = jso3
    j[3:, 3:] = jso3
    j[:3, 3:] = _se3_q_matrix(xi)
    return j


def se3_left_jacobian_inv(xi: Twist) -> np.ndarray:
    j = np.zeros((6, 6))
    jinv = so3_left_jacobian_inv(xi.phi)
    j[:3, :3] = jinv
    j[3:, 3:] = jinv
    j[:3, 3:] = -jinv @ _se3_q_matrix(xi) @ jinv
    return j


def se3_right_jacobian(xi: Twist) -> np.ndarray:
    return se3_left_jacobian(Twist(-xi.rho, -xi.phi))


def se3_right_jacobian_inv(xi: Twist) -> np.ndarray:
    return se3_left_jacobian_inv(Twist(-xi.rho, -xi.phi))


# ---------------------------------------------------------------------------
# Latent camera-trajectory interpolation
# ---------------------------------------------------------------------------


def latent_pose(
    base: RigidTransform,
    delta_start: RigidTransform,
    delta_end: RigidTransform,
    s: float,
) -> RigidTransform:
    """Pose at normalized exposure time s in [0, 1].

    Interpolates between base*delta_start (s=0) and base*delta_end (s=1)
    linearly in the Lie algebra of the relative motion.
    """
    rel = se3_log(delta_start.inverse() @ delta_end)
    return base @ delta_start @ se3_exp(s * rel)


def interpolate_latent_poses(
    base: RigidTransform,
    delta_start: RigidTransform,
    delta_end: RigidTransform,
    u: int,
) -> list[RigidTransform]:
    """Poses at the u latent times k/u for k = 1..u; the last equals base*delta_end."""
    if u < 1:
        raise ValueError("u must be >= 1")
    rel = se3_log(delta_start.inverse() @ delta_end)
    head = base @ delta_start
    return [head @ se3_exp((k / u) * rel) for k in range(1, u + 1)]


def latent_pose_parameter_jacobians(
    base_twist: Twist,
    base_anchor: RigidTransform,
    delta_start_twist: Twist,
    delta_end_twist: Twist,
    s: float,
) -> tuple[RigidTransform, np.ndarray, np.ndarray, np.ndarray]:
    """Latent pose and its left-perturbation Jacobians w.r.t. the three twists.

    The pose is T(s) = Exp(b) * A * Exp(d1) * Exp(s * xi) with A the anchor,
    xi = Log(Exp(-d1) Exp(du)).  Returns (T, dT/db, dT/dd1, dT/ddu) where each
    Jacobian J maps a parameter increment delta to the left-perturbation twist
    eps with T' = Exp(eps) T, i.e. eps = J delta to first order.
    """
    b, d1, du = base_twist, delta_start_twist, delta_end_twist
    t_d1 = se3_exp(d1)
    t_du = se3_exp(du)
    xi = se3_log(t_d1.inverse() @ t_du)
    sxi = s * xi
    pose = se3_exp(b) @ base_anchor @ t_d1 @ se3_exp(sxi)

    ad_pose = se3_adjoint(pose)
    jr_sxi = se3_right_jacobian(sxi)
    jr_d1 = se3_right_jacobian(d1)
    jr_du = se3_right_jacobian(du)

    # Base: Exp(b + delta) ~ Exp(Jl(b) delta) Exp(b), already a left perturbation.
    j_b = se3_left_jacobian(b)

    # Start delta: perturbation enters both through Exp(d1) and through xi.
    ad_exp_neg_sxi = se3_adjoint(se3_exp(Twist(-sxi.rho, -sxi.phi)))
    dxi_dd1 = -se3_left_jacobian_inv(xi) @ jr_d1
    eta_d1 = ad_exp_neg_sxi @ jr_d1 + s * jr_sxi @ dxi_dd1
    j_d1 = ad_pose @ eta_d1

    # End delta: enters only through xi.
    dxi_ddu = se3_right_jacobian_inv(xi) @ jr_du
    j_du = ad_pose @ (s * jr_sxi @ dxi_ddu)

    return pose, j_b, j_d1, j_du
