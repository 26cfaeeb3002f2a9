"""Quaternions, rigid transforms, the thrust-aligned attitude map and the pinhole camera.

Quaternions are scalar-first, ``[w, x, y, z]``, Hamilton product.  A
quaternion ``q_b^a`` rotates vectors expressed in frame ``b`` into frame ``a``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

GRAVITY = 9.81
E_Z = np.array([0.0, 0.0, 1.0])

# 1 + xi_bar_z below this is treated as the inverted (singular) configuration
SINGULARITY_TOL = 1e-6
ZERO_ACCEL_TOL = 1e-9


class SingularityError(ValueError):
    """Thrust direction too close to -e_z for the single-chart attitude map."""


class ZeroAccelerationError(ValueError):
    """Relative acceleration is (numerically) zero, thrust direction undefined."""


class DegenerateInput(ValueError):
    pass


@dataclass(frozen=True)
class Quaternion:
    w: float = 1.0
    x: float = 0.0
    y: float = 0.0
    z: float = 0.0

    @classmethod
    def from_array(cls, a) -> "Quaternion":
        return cls(float(a[0]), float(a[1]), float(a[2]), float(a[3]))

    @classmethod
    def about_z(cls, angle: float) -> "Quaternion":
        return cls(math.cos(angle / 2.0), 0.0, 0.0, math.sin(angle / 2.0))

    def as_array(self) -> np.ndarray:
        return np.array([self.w, self.x, self.y, self.z])

    def __mul__(self, other: "Quaternion") -> "Quaternion":
        w1, x1, y1, z1 = self.w, self.x, self.y, self.z
        w2, x2, y2, z2 = other.w, other.x, other.y, other.z
        return Quaternion(
            w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
            w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
            w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
            w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
        )

    def norm(self) -> float:
        return math.sqrt(self.w ** 2 + self.x ** 2 + self.y ** 2 + self.z ** 2)

    def conjugate(self) -> "Quaternion":
        return Quaternion(self.w, -self.x, -self.y, -self.z)

    def normalized(self) -> "Quaternion":
        n = self.norm()
        return Quaternion(self.w / n, self.x / n, self.y / n, self.z / n)

    def rotation_matrix(self) -> np.ndarray:
        """``rot(q)``; assumes a unit quaternion."""
        w, x, y, z = self.w, self.x, self.y, self.z
        return np.array([
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ])

    def rotate(self, v) -> np.ndarray:
        return self.rotation_matrix() @ np.asarray(v, dtype=float)


@dataclass(frozen=True)
class Transform:
    """Rigid transform ``p^a = R p^b + t`` (maps frame ``b`` coordinates into frame ``a``)."""

    rotation: Quaternion = field(default_factory=Quaternion)
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=float).reshape(3))

    def apply(self, p) -> np.ndarray:
        return self.rotation.rotate(p) + self.translation

    def __matmul__(self, other: "Transform") -> "Transform":
        return Transform(self.rotation * other.rotation, self.apply(other.translation))

    def inverse(self) -> "Transform":
        qi = self.rotation.conjugate()
        return Transform(qi, -qi.rotate(self.translation))

    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.rotation.rotation_matrix()
        T[:3, 3] = self.translation
        return T


def _thrust_direction(xi) -> np.ndarray:
    xi = np.asarray(xi, dtype=float)
    n = float(np.linalg.norm(xi))
    if n < ZERO_ACCEL_TOL:
        raise ZeroAccelerationError(f"relative acceleration norm {n:.3e} is zero")
    xb = xi / n
    if 1.0 + xb[2] < SINGULARITY_TOL:
        raise SingularityError(f"1 + xi_bar_z = {1.0 + xb[2]:.3e} below {SINGULARITY_TOL}")
    return xb


def hopf_quaternion(xi) -> Quaternion:
    """Minimal rotation ``q_xi`` taking ``e_z`` onto the direction of ``xi``."""
    a, b, c = _thrust_direction(xi)
    x, y, z = np.asarray(xi, dtype=float)
    if z < 0.0:
        # 1 + c cancels near the pole; (x^2 + y^2) / (n (n - z)) is the same value without cancellation
        n = math.sqrt(x * x + y * y + z * z)
        w = (x * x + y * y) / (n * (n - z))
    else:
        w = 1.0 + c
    k = math.sqrt(2.0 * w)
    return Quaternion(w / k, -b / k, a / k, 0.0)


def body_attitude(xi, psi: float) -> Quaternion:
    """``q_b^w = q_xi o q_psi``: thrust axis along ``xi``, then rotation ``psi`` about it."""
    return hopf_quaternion(xi) * Quaternion.about_z(psi)


def relative_acceleration(accel) -> np.ndarray:
    a = np.asarray(accel, dtype=float)
    return np.array([a[0], a[1], a[2] + GRAVITY])


def body_pose(position, accel, psi: float) -> Transform:
    """Body-to-world transform ``T_b^w`` from flat outputs."""
    return Transform(body_attitude(relative_acceleration(accel), psi), position)


def forward_camera() -> Transform:
    """Body-to-camera transform of a forward-looking camera at the body origin.

    Optical axis (camera z) along body x, camera x along -body y, camera y along -body z.
    """
    R = np.array([[0.0, -1.0, 0.0], [0.0, 0.0, -1.0], [1.0, 0.0, 0.0]])
    return Transform(_quat_from_matrix(R), np.zeros(3))


def _quat_from_matrix(R) -> Quaternion:
    R = np.asarray(R, dtype=float)
    tr = np.trace(R)
    if tr > 0:
        s = 2.0 * math.sqrt(1.0 + tr)
        return Quaternion(0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s,
                          (R[1, 0] - R[0, 1]) / s).normalized()
    i = int(np.argmax(np.diag(R)))
    if i == 0:
        s = 2.0 * math.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2])
        q = Quaternion((R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s,
                       (R[0, 2] + R[2, 0]) / s)
    elif i == 1:
        s = 2.0 * math.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2])
        q = Quaternion((R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s,
                       (R[1, 2] + R[2, 1]) / s)
    else:
        s = 2.0 * math.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1])
        q = Quaternion((R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s,
                       (R[1, 2] + R[2, 1]) / s, 0.25 * s)
    return q.normalized()


class _Behind:
    """Marker returned by :func:`project_point` for points with camera-frame z <= 0."""

    _inst = None

    def __new__(cls):
        if cls._inst is None:
            cls._inst = super().__new__(cls)
        return cls._inst

    def __repr__(self):
        return "Behind"

    def __bool__(self):
        return False


Behind = _Behind()


@dataclass(frozen=True)
class CameraModel:
    """Pinhole camera with a cone-shaped field of view.

    ``f`` is in meters (image-plane coordinates are meters, not pixels);
    ``theta`` is the full opening angle of the FOV cone.
    """

    f: float = 0.01
    theta: float = math.radians(60.0)
    gamma_sig: float = 100.0
    body_to_camera: Transform = field(default_factory=forward_camera)

    def __post_init__(self):
        if not self.f > 0:
            raise ValueError("focal length must be positive")
        if not 0.0 < self.theta < math.pi:
            raise ValueError("theta must lie in (0, pi)")
        if not self.gamma_sig > 0:
            raise ValueError("gamma_sig must be positive")

    def to_camera(self, world_to_body: Transform, p_w) -> np.ndarray:
        return self.body_to_camera.apply(world_to_body.apply(p_w))


def project_point(cam: CameraModel, world_to_body: Transform, p_w):
    """Image-plane coordinates ``s`` (meters) of a world point, or ``Behind``."""
    pc = cam.to_camera(world_to_body, p_w)
    if pc[2] <= 0.0:
        return Behind
    return cam.f * pc[:2] / pc[2]


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=float)))


def in_fov_smooth(cam: CameraModel, world_to_body: Transform, p_w) -> float:
    """Sigmoid approximation of the indicator that ``p_w`` is inside the FOV cone."""
    pc = cam.to_camera(world_to_body, p_w)
    n = float(np.linalg.norm(pc))
    if n < 1e-9:
        raise DegenerateInput("point coincides with the camera center")
    return float(sigmoid(cam.gamma_sig * (-math.cos(cam.theta / 2.0) + pc[2] / n)))


def angle_to_axis(cam: CameraModel, world_to_body: Transform, p_w) -> float:
    pc = cam.to_camera(world_to_body, p_w)
    return math.acos(max(-1.0, min(1.0, pc[2] / float(np.linalg.norm(pc)))))


def projected_velocity(cam: CameraModel, agent, obstacle, t: float) -> np.ndarray:
    """Analytic image-plane velocity ``ds/dt`` of an obstacle seen from a moving agent.

    ``agent(t)`` returns ``(p, v, a, j, psi, psidot)``; ``obstacle(t)`` returns
    ``(p, v)``.  The obstacle must be in front of the camera at ``t``.
    """
    from .kernels import projection_state

    p, v, a, j, psi, psidot = agent(t)
    po, vo = obstacle(t)
    s, sdot, pc = projection_state(p, v, a, j, psi, psidot, po, vo, cam)
    if pc[2] <= 0.0:
        raise DegenerateInput("obstacle behind the camera; projected velocity undefined")
    return sdot


def projected_velocity_fd(cam: CameraModel, agent, obstacle, t: float, h: float = 1e-5) -> np.ndarray:
    """Central-difference image-plane velocity (test reference)."""

    def s_at(tt):
        p, _, a, _, psi, _ = agent(tt)
        po, _ = obstacle(tt)
        world_to_body = body_pose(p, a, psi).inverse()
        s = project_point(cam, world_to_body, po)
        if s is Behind:
            raise DegenerateInput("obstacle behind the camera")
        return s

    return (s_at(t + h) - s_at(t - h)) / (2.0 * h)
