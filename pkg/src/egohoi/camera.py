"""Pinhole cameras, rigid poses and world/pixel projection.

The world frame is the calibration cube centre with axes aligned to the cube
faces. Extrinsics map world -> camera: ``x_cam = R @ x_world + t``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import NonPositiveDepth, SchemaError

MIN_DEPTH = 1e-9
ORTHO_TOL = 1e-9


def _check_rotation(R: np.ndarray) -> None:
    if R.shape != (3, 3) or not np.all(np.isfinite(R)):
        raise ValueError("rotation must be a finite 3x3 matrix")
    if np.abs(R.T @ R - np.eye(3)).max() >= ORTHO_TOL or np.linalg.det(R) <= 0:
        raise ValueError("rotation must be orthonormal with det +1")


def skew(w: np.ndarray) -> np.ndarray:
    return np.array([[0.0, -w[2], w[1]], [w[2], 0.0, -w[0]], [-w[1], w[0], 0.0]])


def rodrigues(w) -> np.ndarray:
    """Axis-angle 3-vector to rotation matrix."""
    w = np.asarray(w, dtype=float)
    theta = float(np.linalg.norm(w))
    K = skew(w)
    if theta < 1e-8:
        # second-order series keeps the result orthonormal to ~1e-16
        return np.eye(3) + K + 0.5 * (K @ K)
    return np.eye(3) + np.sin(theta) / theta * K + (1 - np.cos(theta)) / theta**2 * (K @ K)


def rotation_log(R: np.ndarray) -> np.ndarray:
    """Rotation matrix to axis-angle 3-vector."""
    cos = np.clip((np.trace(R) - 1.0) / 2.0, -1.0, 1.0)
    theta = np.arccos(cos)
    v = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    if theta < 1e-8:
        return 0.5 * v
    if np.pi - theta < 1e-6:
        # near pi: axis from the symmetric part
        B = (R + np.eye(3)) / 2.0
        axis = np.sqrt(np.clip(np.diag(B), 0.0, None))
        i = int(np.argmax(axis))
        axis = B[i] / axis[i]
        axis /= np.linalg.norm(axis)
        if np.dot(axis, v) < 0:
            axis = -axis
        return theta * axis
    return theta / (2.0 * np.sin(theta)) * v


def orthonormalize(R: np.ndarray) -> np.ndarray:
    """Closest rotation matrix (polar decomposition via SVD)."""
    U, _, Vt = np.linalg.svd(R)
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(U @ Vt))])
    return U @ D @ Vt


def rotation_angle_between(Ra: np.ndarray, Rb: np.ndarray) -> float:
    return float(np.linalg.norm(rotation_log(Ra.T @ Rb)))


@dataclass(frozen=True)
class Pose6D:
    """Rigid transform; rotation orthonormal, translation in meters."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        R = np.array(self.rotation, dtype=float).reshape(3, 3)
        t = np.array(self.translation, dtype=float).reshape(3)
        _check_rotation(R)
        R.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    def apply(self, points) -> np.ndarray:
        return np.asarray(points, dtype=float) @ self.rotation.T + self.translation

    def inverse(self) -> "Pose6D":
        Rt = self.rotation.T
        return Pose6D(Rt, -Rt @ self.translation)

    def compose(self, other: "Pose6D") -> "Pose6D":
        """``self ∘ other``: apply ``other`` first."""
        return Pose6D(self.rotation @ other.rotation,
                      self.rotation @ other.translation + self.translation)


@dataclass(frozen=True)
class CameraModel:
    id: str
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")
        pose = Pose6D(self.rotation, self.translation)
        object.__setattr__(self, "rotation", pose.rotation)
        object.__setattr__(self, "translation", pose.translation)

    @property
    def pose(self) -> Pose6D:
        return Pose6D(self.rotation, self.translation)

    @property
    def center(self) -> np.ndarray:
        """Camera centre in world coordinates."""
        return -self.rotation.T @ self.translation

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def with_pose(self, pose: Pose6D) -> "CameraModel":
        return CameraModel(self.id, self.fx, self.fy, self.cx, self.cy, self.width,
                           self.height, pose.rotation, pose.translation)

    def in_bounds(self, u, v):
        return (u >= 0) & (u < self.width) & (v >= 0) & (v < self.height)

    def to_json(self) -> dict:
        return {
            "id": self.id, "fx": float(self.fx), "fy": float(self.fy),
            "cx": float(self.cx), "cy": float(self.cy),
            "width": int(self.width), "height": int(self.height),
            "rotation": [float(x) for x in self.rotation.ravel()],
            "translation": [float(x) for x in self.translation],
        }

    @classmethod
    def from_json(cls, d: dict) -> "CameraModel":
        try:
            return cls(str(d["id"]), float(d["fx"]), float(d["fy"]), float(d["cx"]),
                       float(d["cy"]), int(d["width"]), int(d["height"]),
                       np.array(d.get("rotation", np.eye(3).ravel()), dtype=float).reshape(3, 3),
                       np.array(d.get("translation", [0.0, 0.0, 0.0]), dtype=float))
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaError(f"camera entry {d.get('id', '?')!r}: {exc}") from exc


def project(camera: CameraModel, point) -> tuple[float, float, float]:
    """Project one world point; returns ``(u, v, depth)``.

    Out-of-image pixels are returned as is, visibility is the caller's call.
    """
    x, y, z = camera.rotation @ np.asarray(point, dtype=float) + camera.translation
    if not z > MIN_DEPTH:
        raise NonPositiveDepth(f"point at camera-frame depth {z:.3g} m for camera {camera.id}")
    return camera.fx * x / z + camera.cx, camera.fy * y / z + camera.cy, z


def project_points(camera: CameraModel, points) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized projection of ``(N, 3)`` points without depth checks.

    Returns ``(uv (N, 2), depth (N,))``; entries with non-positive depth are NaN.
    """
    pc = np.asarray(points, dtype=float) @ camera.rotation.T + camera.translation
    z = pc[:, 2]
    ok = z > MIN_DEPTH
    safe = np.where(ok, z, 1.0)
    uv = np.stack([camera.fx * pc[:, 0] / safe + camera.cx,
                   camera.fy * pc[:, 1] / safe + camera.cy], axis=1)
    uv[~ok] = np.nan
    return uv, z


def projection_jacobian(camera: CameraModel, point) -> np.ndarray:
    """d(u, v)/d(world point), a 2x3 matrix."""
    x, y, z = camera.rotation @ np.asarray(point, dtype=float) + camera.translation
    if not z > MIN_DEPTH:
        raise NonPositiveDepth(f"point at camera-frame depth {z:.3g} m for camera {camera.id}")
    dpi = np.array([[camera.fx / z, 0.0, -camera.fx * x / z**2],
                    [0.0, camera.fy / z, -camera.fy * y / z**2]])
    return dpi @ camera.rotation


def camera_from_cube_pose(pose: Pose6D) -> Pose6D:
    """Extrinsics (world -> camera) from the camera pose in the cube frame.

    ``pose`` maps camera coordinates into the cube frame, so the extrinsics
    are its inverse.
    """
    return pose.inverse()


def relative_pose(extr_a: Pose6D, extr_b: Pose6D) -> Pose6D:
    """Transform taking camera-a coordinates to camera-b coordinates."""
    return extr_b.compose(extr_a.inverse())


def load_cameras(path) -> list[CameraModel]:
    with open(path) as fh:
        doc = json.load(fh)
    if not isinstance(doc, dict) or "cameras" not in doc:
        raise SchemaError(f"{path}: missing 'cameras' list")
    return [CameraModel.from_json(c) for c in doc["cameras"]]


def save_cameras(path, cameras) -> None:
    Path(path).write_text(json.dumps({"cameras": [c.to_json() for c in cameras]}, indent=2) + "\n")
