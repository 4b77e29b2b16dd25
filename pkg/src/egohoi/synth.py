"""Seeded synthetic multi-camera scenes and 2D mask/heatmap data.

Everything here is a pure function of its seed; per-frame randomness comes
from independent streams so frames can be rendered in any order.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .camera import CameraModel, Pose6D, project_points

IMAGE_W, IMAGE_H = 640, 480
FOCAL = 500.0
HAND_CUBE = 0.20
DEFAULT_CUBE_EDGE = 0.10


def rng_stream(seed: int, *keys: int) -> np.random.Generator:
    """Counter-based (Philox) stream keyed by ``(seed, *keys)``."""
    ss = np.random.SeedSequence([int(seed) & (2**64 - 1), *[int(k) for k in keys]])
    return np.random.Generator(np.random.Philox(ss))


def look_at(center, target, up=(0.0, 0.0, 1.0)) -> Pose6D:
    """Extrinsics for a camera at ``center`` looking at ``target`` (z forward, y down)."""
    center = np.asarray(center, float)
    z = np.asarray(target, float) - center
    z /= np.linalg.norm(z)
    up = np.asarray(up, float)
    if abs(np.dot(up, z)) > 0.99:
        up = np.array([0.0, 1.0, 0.0])
    x = np.cross(z, up)
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    R = np.stack([x, y, z])
    return Pose6D(R, -R @ center)


def random_chain(rng: np.random.Generator, K: int, extent: float = HAND_CUBE) -> np.ndarray:
    """Connected chain of ``K`` points inside a cube of side ``extent`` at the origin."""
    half = extent / 2.0
    pts = [rng.uniform(-0.3 * half, 0.3 * half, size=3)]
    while len(pts) < K:
        step = rng.normal(size=3)
        step *= rng.uniform(0.015, 0.03) / np.linalg.norm(step)
        nxt = pts[-1] + step
        if np.all(np.abs(nxt) <= half):
            pts.append(nxt)
    return np.array(pts)


def place_cameras(rng: np.random.Generator, n_cams: int, radius=(0.5, 0.8)) -> list[CameraModel]:
    cams = []
    for i in range(n_cams):
        # spread azimuths, upper hemisphere, mild jitter
        az = 2 * np.pi * i / n_cams + rng.uniform(-0.3, 0.3)
        el = rng.uniform(0.25, 0.9)
        r = rng.uniform(*radius)
        c = r * np.array([np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)])
        pose = look_at(c, rng.uniform(-0.01, 0.01, size=3))
        cams.append(CameraModel(f"cam{i}", FOCAL, FOCAL, IMAGE_W / 2, IMAGE_H / 2, IMAGE_W,
                                IMAGE_H, pose.rotation, pose.translation))
    return cams


@dataclass
class SynthScene:
    seed: int
    cameras: list
    joints: list  # per ground-truth pose, (K, 3) arrays
    boxes: list  # per pose, per camera (x0, y0, x1, y1)
    pairs: list = field(default_factory=list)  # (with_object_frame, without_object_frame)
    cube_edge: float = DEFAULT_CUBE_EDGE

    def to_gt_json(self) -> dict:
        return {
            "seed": self.seed,
            "frames": [{"pose": i, "joints3d": j.tolist()} for i, j in enumerate(self.joints)],
            "pairs": [{"with_object": a, "without_object": b} for a, b in self.pairs],
        }


def generate_scene(seed: int, n_cams: int = 3, n_frames: int = 200, K: int = 21) -> SynthScene:
    """Cameras around a hand at the cube origin plus ``n_frames`` hand poses.

    Pose ``i`` is captured twice: frame ``2i`` without object (annotation
    source) and frame ``2i + 1`` with object; both share identical joints.
    """
    if n_cams < 2:
        raise ValueError("need at least two cameras")
    cams = place_cameras(rng_stream(seed, 0), n_cams)
    joints, boxes, pairs = [], [], []
    for i in range(n_frames):
        j = random_chain(rng_stream(seed, 1, i), K)
        joints.append(j)
        per_cam = []
        for c in cams:
            uv, _ = project_points(c, j)
            per_cam.append(tuple(float(x) for x in (*uv.min(0), *uv.max(0))))
        boxes.append(per_cam)
        pairs.append((2 * i + 1, 2 * i))
    return SynthScene(seed, cams, joints, boxes, pairs)


def render_view(camera, joints, rng, sigma, dropout):
    uv, _ = project_points(camera, joints)
    noise = rng.normal(size=uv.shape) * sigma if sigma > 0 else np.zeros_like(uv)
    drop = rng.random(len(joints)) < dropout
    obs = uv + noise
    if sigma > 0:
        err2 = (noise**2).sum(1)
        with np.errstate(divide="ignore", invalid="ignore"):
            conf = np.where(err2 > 0, np.exp(-err2 / (2 * (3 * sigma) ** 2)), 1.0)
    else:
        conf = np.ones(len(joints))
    conf[drop] = 0.0
    return np.column_stack([obs, conf])


def render_detections(scene: SynthScene, sigma: float = 0.0, dropout: float = 0.0,
                      sigma_with: float | None = None, dropout_with: float | None = None,
                      include_cube: bool = True) -> list[dict]:
    """Per-frame detections in the ``detections.json`` frame layout.

    With-object frames default to twice the noise and a higher dropout than
    the without-object frames; callers may override both.
    """
    if sigma < 0 or not 0 <= dropout < 1:
        raise ValueError("sigma >= 0 and 0 <= dropout < 1 required")
    sigma_with = 2 * sigma if sigma_with is None else sigma_with
    if dropout_with is None:
        dropout_with = min(0.99, dropout + 0.1) if (sigma > 0 or dropout > 0) else 0.0
    if dropout_with < dropout:
        raise ValueError("with-object dropout must be >= without-object dropout")
    frames = []
    for i, j in enumerate(scene.joints):
        for with_obj in (False, True):
            fid = 2 * i + int(with_obj)
            rng = rng_stream(scene.seed, 2, fid)
            s, d = (sigma_with, dropout_with) if with_obj else (sigma, dropout)
            views = [{"camera": c.id, "joints": render_view(c, j, rng, s, d).tolist()}
                     for c in scene.cameras]
            frame = {"frame": fid, "set": "with_object" if with_obj else "without_object",
                     "views": views}
            if with_obj:
                frame["partner"] = 2 * i
            frames.append(frame)
    if include_cube and frames:
        frames[0]["cube_corners"] = cube_corner_observations(scene, sigma)
    return frames


def cube_corners(edge: float) -> np.ndarray:
    h = edge / 2.0
    return np.array([[sx * h, sy * h, sz * h]
                     for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)])


def cube_corner_observations(scene: SynthScene, sigma: float = 0.0) -> list[dict]:
    out = []
    corners = cube_corners(scene.cube_edge)
    for ci, c in enumerate(scene.cameras):
        rng = rng_stream(scene.seed, 3, ci)
        uv, _ = project_points(c, corners)
        if sigma > 0:
            uv = uv + rng.normal(size=uv.shape) * sigma
        out.append({"camera": c.id,
                    "corners": [[k, float(u), float(v), 1.0] for k, (u, v) in enumerate(uv)]})
    return out


# ---------------------------------------------------------------- 2D cue data

def ellipse_mask(shape, center, axes, angle=0.0) -> np.ndarray:
    H, W = shape
    yy, xx = np.mgrid[0:H, 0:W].astype(float)
    ca, sa = np.cos(angle), np.sin(angle)
    dx, dy = xx - center[0], yy - center[1]
    a = (ca * dx + sa * dy) / axes[0]
    b = (-sa * dx + ca * dy) / axes[1]
    return (a * a + b * b <= 1.0).astype(np.uint8)


def fusion_sample(rng: np.random.Generator, size: int = 64, K: int = 21, grid: int = 32):
    """One (pose stack, hand mask, object mask, label) sample.

    The label is 1 when the object touches the hand. Hand shape, object
    size and pose heatmaps are drawn from the same distribution for both
    classes, so only the joint hand/object geometry carries the signal.
    """
    from .heatmap import encode_gaussian

    label = int(rng.random() < 0.5)
    hc = rng.uniform(0.35, 0.65, size=2) * size
    ha = rng.uniform(0.12, 0.2, size=2) * size
    hand = ellipse_mask((size, size), hc, ha, rng.uniform(0, np.pi))
    oa = rng.uniform(0.06, 0.12, size=2) * size
    ang = rng.uniform(0, 2 * np.pi)
    reach = max(ha)
    if label:
        dist = rng.uniform(0.3, 0.8) * min(ha)
    else:
        dist = reach + max(oa) + rng.uniform(0.08, 0.2) * size
    oc = hc + dist * np.array([np.cos(ang), np.sin(ang)])
    obj = ellipse_mask((size, size), oc, oa, rng.uniform(0, np.pi))
    if label and not (obj & hand).any():
        obj = ellipse_mask((size, size), hc, oa)
    if not obj.any():
        # object pushed off-frame: place it in the far corner instead
        corner = np.where(hc < size / 2, size - 1 - oa, oa)
        obj = ellipse_mask((size, size), corner, oa)
        if (obj & hand).any():
            obj[:] = 0
    kp = hc * grid / size + rng.normal(size=(K, 2)) * ha.mean() * grid / size * 0.5
    kp = np.clip(kp, 0, grid - 1)
    pose = encode_gaussian(kp, (grid, grid), 1.5)
    if label != int((obj & hand).any()):
        label = int((obj & hand).any())
    return pose, hand, obj, label


def make_fusion_dataset(seed: int, n: int, size: int = 64):
    rng = rng_stream(seed, 10)
    return [fusion_sample(rng, size) for _ in range(n)]


def write_fusion_dataset(out_dir, samples, fps: float = 30.0) -> Path:
    """Write samples as HMAP + PGM files with a ``manifest.json`` index."""
    from .heatmap import write_hmap
    from .rasters import write_pgm

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    frames = []
    for i, (pose, hand, obj, label) in enumerate(samples):
        names = {"pose": f"{i:06d}_pose.hmap", "hand": f"{i:06d}_hand.pgm",
                 "object": f"{i:06d}_object.pgm"}
        write_hmap(out / names["pose"], pose)
        write_pgm(out / names["hand"], hand)
        write_pgm(out / names["object"], obj)
        frames.append({"frame": i, **names, "label": int(label)})
    manifest = out / "manifest.json"
    manifest.write_text(json.dumps({"fps": fps, "frames": frames}, indent=1) + "\n")
    return manifest
