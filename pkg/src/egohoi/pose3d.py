"""Multi-view joint triangulation, validity gating and label transfer.

The reprojection objective is per joint, per view::

    loss = sum_views sum_joints w_vi**2 * |uv_vi - proj_v(X_i)|**2

with ``w_vi`` the 2D detector confidence. Residuals are ``w * (uv - proj)``
so the LM sum of squares is exactly this loss.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .camera import CameraModel, project_points
from .errors import (DegenerateRays, InsufficientViews, NoConvergence, SchemaError)
from .lm import LmOptions, LmProblem, solve

log = logging.getLogger(__name__)

DEFAULT_K = 21
GATE_RMS_PX = 3.0


@dataclass
class Detection2D:
    camera: str
    joints: np.ndarray  # (K, 3): u, v, confidence

    def __post_init__(self):
        self.joints = np.asarray(self.joints, dtype=float).reshape(-1, 3)
        c = self.joints[:, 2]
        if np.any(c < 0) or np.any(c > 1):
            raise ValueError(f"confidences for camera {self.camera} must lie in [0, 1]")

    @property
    def uv(self) -> np.ndarray:
        return self.joints[:, :2]

    @property
    def confidence(self) -> np.ndarray:
        return self.joints[:, 2]


@dataclass
class TriangulationResult:
    joints: np.ndarray  # (K, 3) meters
    observed: np.ndarray  # (K,) joint seen in >= 2 views
    joint_cost: np.ndarray  # (K,) weighted squared loss per joint
    iterations: np.ndarray
    converged: np.ndarray

    @property
    def loss(self) -> float:
        return float(self.joint_cost[self.observed].sum())


@dataclass
class AnnotationRecord:
    frame: int
    joints3d: np.ndarray
    loss: float
    valid: bool
    labels2d: dict = field(default_factory=dict)  # camera id -> (K, 3) u, v, visible

    def to_json(self) -> dict:
        return {
            "frame": int(self.frame),
            "valid": bool(self.valid),
            "loss": float(self.loss),
            "joints3d": [[float(x) for x in p] for p in self.joints3d],
            "labels2d": {cid: [[float(u), float(v), bool(vis)] for u, v, vis in lab]
                         for cid, lab in self.labels2d.items()},
        }


def camera_rows(cameras) -> np.ndarray:
    return np.array([[c.fx, c.fy, c.cx, c.cy, *c.rotation.ravel(), *c.translation]
                     for c in cameras], dtype=float)


def _stack(detections, cameras):
    by_id = {c.id: c for c in cameras}
    try:
        cams = [by_id[d.camera] for d in detections]
    except KeyError as exc:
        raise SchemaError(f"detection references unknown camera {exc.args[0]!r}") from None
    K = {d.joints.shape[0] for d in detections}
    if len(K) != 1:
        raise SchemaError("all views must carry the same joint count")
    uv = np.stack([d.uv for d in detections])
    w = np.stack([d.confidence for d in detections])
    return cams, uv, w


def _ray(camera: CameraModel, uv):
    d_cam = np.array([(uv[0] - camera.cx) / camera.fx, (uv[1] - camera.cy) / camera.fy, 1.0])
    d = camera.rotation.T @ d_cam
    return camera.center, d / np.linalg.norm(d)


def midpoint_triangulation(cam_a, uv_a, cam_b, uv_b) -> np.ndarray:
    """Midpoint of the shortest segment between two back-projected rays."""
    oa, da = _ray(cam_a, uv_a)
    ob, db = _ray(cam_b, uv_b)
    if np.linalg.norm(np.cross(da, db)) < 1e-9:
        raise DegenerateRays(f"rays from {cam_a.id} and {cam_b.id} are parallel")
    w0 = oa - ob
    b = da @ db
    d, e = da @ w0, db @ w0
    den = 1.0 - b * b
    s = (b * e - d) / den
    t = (e - b * d) / den
    return 0.5 * ((oa + s * da) + (ob + t * db))


def initial_joints(cams, uv, w, observed) -> np.ndarray:
    """Ray-midpoint seed from the two highest-confidence views of each joint.

    Ties in confidence go to the lower view index.
    """
    K = uv.shape[1]
    X0 = np.zeros((K, 3))
    idx = np.flatnonzero(observed)
    if idx.size == 0:
        return X0
    order = np.argsort(-w[:, idx], axis=0, kind="stable")
    a, b = order[0], order[1]
    centers = np.stack([c.center for c in cams])
    dirs = np.empty(uv.shape[:2] + (3,))
    for v, c in enumerate(cams):
        d_cam = np.column_stack([(uv[v, :, 0] - c.cx) / c.fx, (uv[v, :, 1] - c.cy) / c.fy,
                                 np.ones(K)])
        d = d_cam @ c.rotation
        dirs[v] = d / np.linalg.norm(d, axis=1, keepdims=True)
    da, db = dirs[a, idx], dirs[b, idx]
    oa, ob = centers[a], centers[b]
    cross = np.linalg.norm(np.cross(da, db), axis=1)
    if np.any(cross < 1e-9):
        j = idx[np.argmax(cross < 1e-9)]
        raise DegenerateRays(f"initializing rays for joint {j} are parallel")
    w0 = oa - ob
    bb = np.einsum("ij,ij->i", da, db)
    d = np.einsum("ij,ij->i", da, w0)
    e = np.einsum("ij,ij->i", db, w0)
    den = 1.0 - bb * bb
    s = (bb * e - d) / den
    t = (e - bb * d) / den
    X0[idx] = 0.5 * ((oa + s[:, None] * da) + (ob + t[:, None] * db))
    return X0


def triangulate(detections, cameras, init=None, opts: LmOptions | None = None,
                reference: bool = False) -> TriangulationResult:
    """Triangulate every joint independently under the weighted reprojection loss.

    Joints seen (confidence > 0) in fewer than two views are flagged
    unobserved and placed at the centroid of the observed joints.
    ``reference=True`` routes each joint through the generic solver in
    :mod:`egohoi.lm` instead of the batched kernel.
    """
    opts = opts or LmOptions()
    if len(detections) < 2:
        raise InsufficientViews(f"{len(detections)} view(s) given, need >= 2")
    cams, uv, w = _stack(detections, cameras)
    observed = (w > 0).sum(0) >= 2
    if not observed.any():
        raise InsufficientViews("no joint is visible in two or more views")
    X0 = np.asarray(init, dtype=float).copy() if init is not None \
        else initial_joints(cams, uv, w, observed)

    idx = np.flatnonzero(observed)
    if reference:
        X, cost, iters, status = _triangulate_reference(cams, uv[:, idx], w[:, idx], X0[idx], opts)
    else:
        X, cost, iters, status = _kernels.triangulate_points(
            uv[:, idx], w[:, idx], camera_rows(cams), X0[idx], opts.max_iter, opts.cost_tol,
            opts.step_tol, opts.lambda_init, opts.lambda_up, opts.lambda_down)
    return _assemble(idx, observed, X, cost, iters, status)


def _assemble(idx, observed, X, cost, iters, status):
    K = observed.size
    if np.any(status == _kernels.BAD_INIT):
        raise NoConvergence("initial estimate lies behind a weighted camera")
    if np.any(status != _kernels.CONVERGED):
        bad = idx[status != _kernels.CONVERGED]
        raise NoConvergence(f"joints {bad.tolist()} did not converge")
    joints = np.zeros((K, 3))
    joints[idx] = X
    joints[~observed] = X.mean(0)
    jc = np.zeros(K)
    jc[idx] = cost
    it = np.zeros(K, dtype=int)
    it[idx] = iters
    return TriangulationResult(joints, observed, jc, it, observed.copy())


def _triangulate_reference(cams, uv, w, X0, opts):
    n = X0.shape[0]
    X = np.zeros((n, 3))
    cost = np.zeros(n)
    iters = np.zeros(n, dtype=np.int32)
    status = np.zeros(n, dtype=np.int8)
    for i in range(n):
        views = np.flatnonzero(w[:, i] > 0)

        def residual(p, views=views, i=i):
            out = []
            for v in views:
                uvp, z = project_points(cams[v], p[None])
                if not z[0] > 1e-9:
                    return np.full(2 * len(views), np.nan)
                out.append(w[v, i] * (uv[v, i] - uvp[0]))
            return np.concatenate(out)

        rep = solve(LmProblem(residual), X0[i], opts)
        X[i], cost[i], iters[i] = rep.x, rep.cost, rep.iterations
        status[i] = _kernels.CONVERGED if rep.converged else _kernels.MAX_ITER
    return X, cost, iters, status


def triangulate_frames(frames, cameras, opts: LmOptions | None = None):
    """Triangulate many frames in one kernel call.

    ``frames`` is a list of detection lists over the same camera set. The
    per-point kernel makes each frame's result identical to a single-frame
    call, whatever the batch composition.
    """
    opts = opts or LmOptions()
    if not frames:
        return []
    stacks, X0s, idxs, obs = [], [], [], []
    for dets in frames:
        if len(dets) < 2:
            raise InsufficientViews(f"{len(dets)} view(s) given, need >= 2")
        cams, uv, w = _stack(dets, cameras)
        observed = (w > 0).sum(0) >= 2
        if not observed.any():
            raise InsufficientViews("no joint is visible in two or more views")
        idx = np.flatnonzero(observed)
        X0s.append(initial_joints(cams, uv, w, observed)[idx])
        stacks.append((cams, uv[:, idx], w[:, idx]))
        idxs.append(idx)
        obs.append(observed)
    ids = [[c.id for c in s[0]] for s in stacks]
    if any(i != ids[0] for i in ids):
        # mixed view orders: fall back to per-frame calls
        return [triangulate(d, cameras, opts=opts) for d in frames]
    uv = np.concatenate([s[1] for s in stacks], axis=1)
    w = np.concatenate([s[2] for s in stacks], axis=1)
    X, cost, iters, status = _kernels.triangulate_points(
        uv, w, camera_rows(stacks[0][0]), np.concatenate(X0s), opts.max_iter, opts.cost_tol,
        opts.step_tol, opts.lambda_init, opts.lambda_up, opts.lambda_down)
    out, start = [], 0
    for idx, observed in zip(idxs, obs):
        sl = slice(start, start + idx.size)
        out.append(_assemble(idx, observed, X[sl], cost[sl], iters[sl], status[sl]))
        start += idx.size
    return out


def default_gate_threshold(detections) -> float:
    """3 px weighted RMS per visible joint observation, in the squared-loss domain."""
    w = np.concatenate([d.confidence for d in detections])
    return GATE_RMS_PX**2 * float(np.sum(w[w > 0] ** 2))


def gate_annotation(loss: float, threshold: float) -> bool:
    if not threshold > 0:
        # a zero threshold admits nothing
        return False
    return bool(loss < threshold)


def transfer_labels(joints3d, cameras, observed=None) -> dict:
    """Project 3D joints into every camera: ``{camera id: (K, 3) [u, v, visible]}``.

    Points behind a camera get NaN coordinates and ``visible = 0``.
    """
    joints3d = np.asarray(joints3d, dtype=float)
    out = {}
    for c in cameras:
        uv, z = project_points(c, joints3d)
        vis = (z > 0) & c.in_bounds(uv[:, 0], uv[:, 1])
        if observed is not None:
            vis &= np.asarray(observed, bool)
        out[c.id] = np.column_stack([uv, vis.astype(float)])
    return out


def annotate(frame_id, detections, cameras, target_cameras=None, threshold=None,
             opts: LmOptions | None = None, result: TriangulationResult | None = None):
    """Triangulate one source frame, gate it and transfer labels to ``target_cameras``."""
    res = result or triangulate(detections, cameras, opts=opts)
    thr = default_gate_threshold(detections) if threshold is None else threshold
    valid = gate_annotation(res.loss, thr)
    labels = transfer_labels(res.joints, target_cameras or cameras, res.observed)
    return AnnotationRecord(frame_id, res.joints, res.loss, valid, labels)


def detections_from_json(frame: dict, K: int | None = None) -> list[Detection2D]:
    try:
        dets = [Detection2D(str(v["camera"]), v["joints"]) for v in frame["views"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"frame {frame.get('frame', '?')}: bad views entry ({exc})") from exc
    if K is not None and any(d.joints.shape[0] != K for d in dets):
        raise SchemaError(f"frame {frame.get('frame')}: expected {K} joints per view")
    return dets
