"""Camera pose in the calibration-cube frame from detected cube corners."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .camera import (CameraModel, Pose6D, orthonormalize, project_points, rodrigues)
from .errors import (BehindCamera, InsufficientCorrespondences, NoConvergence,
                     NonFiniteResidual, SingularNormalEquations)
from .lm import LmOptions, LmProblem, LmReport, solve
from .synth import cube_corners, rng_stream

RECENTER_ROUNDS = 5


@dataclass(frozen=True)
class CubeSpec:
    edge: float

    @property
    def corners(self) -> np.ndarray:
        """Eight corners, index bits (x, y, z) -> sign (-, +)."""
        return cube_corners(self.edge)


@dataclass(frozen=True)
class CornerObservation:
    index: int
    u: float
    v: float
    confidence: float = 1.0

    def __post_init__(self):
        if not 0 <= self.index < 8:
            raise ValueError("corner index must be in 0..7")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError("confidence must lie in [0, 1]")


@dataclass
class CalibrationResult:
    pose: Pose6D  # camera pose in the cube frame (camera -> cube)
    extrinsics: Pose6D  # cube -> camera
    report: LmReport
    rms: float
    restart: int


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])


def _weighted_residual(camera, pts, uv, conf, R0):
    def residual(p):
        R = rodrigues(p[:3]) @ R0
        pc = pts @ R.T + p[3:]
        z = pc[:, 2]
        if np.any(z[conf > 0] <= 1e-9):
            return np.full(2 * len(pts), np.nan)
        proj = np.column_stack([camera.fx * pc[:, 0] / z + camera.cx,
                                camera.fy * pc[:, 1] / z + camera.cy])
        return (conf[:, None] * (uv - proj)).ravel()
    return residual


def _refine(camera, pts, uv, conf, R, t, opts):
    """LM with the rotation update re-centred on the current estimate each round."""
    total_iter = 0
    first = None
    rep = None
    for _ in range(RECENTER_ROUNDS):
        res = _weighted_residual(camera, pts, uv, conf, R)
        rep = solve(LmProblem(res), np.concatenate([np.zeros(3), t]), opts)
        first = rep.initial_cost if first is None else first
        total_iter += rep.iterations
        R = orthonormalize(rodrigues(rep.x[:3]) @ R)
        t = rep.x[3:]
        if np.linalg.norm(rep.x[:3]) < 1e-12:
            break
    rep.initial_cost = first
    rep.iterations = total_iter
    return R, t, rep


def estimate_camera_pose(camera: CameraModel, cube: CubeSpec, observations, restarts: int = 8,
                         seed: int = 0, opts: LmOptions | None = None) -> CalibrationResult:
    """Pose of ``camera`` relative to the cube centre from corner observations.

    Minimises ``sum conf**2 * |uv_obs - proj(corner)|**2`` from ``restarts``
    random initial rotations (restart ``i`` uses stream ``(seed, i)``); the
    lowest-cost solution wins, ties going to the lower restart index.
    Observation order does not matter: corners are sorted by index first.
    """
    opts = opts or LmOptions()
    obs = sorted(observations, key=lambda o: (o.index, o.u, o.v, o.confidence))
    if len({o.index for o in obs}) < 4:
        raise InsufficientCorrespondences(
            f"{len({o.index for o in obs})} distinct corners observed, need >= 4")
    conf = np.array([o.confidence for o in obs])
    if not np.any(conf > 0):
        raise InsufficientCorrespondences("all corner confidences are zero")
    pts = cube.corners[[o.index for o in obs]]
    uv = np.array([[o.u, o.v] for o in obs])

    # translation seed: observed centroid back-projected at a depth from the corner spread
    c = uv[conf > 0].mean(0)
    spread = np.mean(np.linalg.norm(uv[conf > 0] - c, axis=1))
    depth = cube.edge * camera.fx / max(spread, 1e-6)
    t0 = depth * np.array([(c[0] - camera.cx) / camera.fx, (c[1] - camera.cy) / camera.fy, 1.0])

    best = None
    behind = False
    for i in range(max(1, restarts)):
        R0 = random_rotation(rng_stream(seed, i))
        try:
            R, t, rep = _refine(camera, pts, uv, conf, R0, t0.copy(), opts)
        except (NonFiniteResidual, SingularNormalEquations):
            continue
        if not rep.converged:
            continue
        z = (pts @ R.T + t)[:, 2]
        if np.any(z[conf > 0] <= 0):
            behind = True
            continue
        if best is None or rep.cost < best[2].cost:
            best = (R, t, rep, i)
    if best is None and behind:
        raise BehindCamera("every converged restart places an observed corner behind the camera")
    if best is None:
        raise NoConvergence("no calibration restart converged")
    R, t, rep, i = best
    extr = Pose6D(R, t)
    cam = camera.with_pose(extr)
    proj, z = project_points(cam, pts)
    if np.any(z <= 0):
        raise BehindCamera("recovered pose places an observed corner behind the camera")
    rms = float(np.sqrt(np.mean(np.sum((proj - uv) ** 2, axis=1))))
    return CalibrationResult(extr.inverse(), extr, rep, rms, i)
