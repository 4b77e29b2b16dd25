"""Training-image augmentation: green-screen replacement, synthetic occluders,
photometric jitter and affine warp.

Images are ``(H, W, 3)`` uint8 arrays. Every random draw comes from a
Philox stream keyed by ``(seed, frame, op)``, so each frame's output depends
only on its own inputs and the seed.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import _kernels
from .errors import DimensionMismatch, SchemaError
from .synth import rng_stream

OP_BACKGROUND, OP_OCCLUSION, OP_PHOTOMETRIC = 0, 1, 2


@dataclass(frozen=True)
class AugmentConfig:
    h_lo: float = 90.0
    h_hi: float = 150.0
    s_min: float = 0.35
    v_min: float = 0.2
    lines: int = 2
    circles: int = 2
    line_width: tuple = (3.0, 8.0)
    circle_radius: tuple = (4.0, 16.0)
    contrast: tuple = (0.8, 1.2)
    brightness: tuple = (-25.0, 25.0)
    max_rotation_deg: float = 15.0
    scale: tuple = (0.9, 1.1)
    max_translate: float = 0.05
    seed: int = 0

    def __post_init__(self):
        for name in ("line_width", "circle_radius", "contrast", "brightness", "scale"):
            lo, hi = getattr(self, name)
            object.__setattr__(self, name, (float(lo), float(hi)))
            if lo > hi:
                raise ValueError(f"{name} range is not ordered")
        if not self.h_lo <= self.h_hi:
            raise ValueError("hue range is not ordered")
        if self.lines < 0 or self.circles < 0:
            raise ValueError("occlusion counts must be non-negative")
        if self.line_width[0] <= 0 or self.circle_radius[0] < 0 or self.scale[0] <= 0:
            raise ValueError("sizes must be positive")

    @classmethod
    def from_json(cls, d: dict) -> "AugmentConfig":
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise SchemaError(f"aug config: unknown keys {sorted(extra)}")
        try:
            return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})
        except (TypeError, ValueError) as exc:
            raise SchemaError(f"aug config: {exc}") from None

    def to_json(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @classmethod
    def load(cls, path) -> "AugmentConfig":
        return cls.from_json(json.loads(Path(path).read_text()))


def chroma_key_mask(img: np.ndarray, cfg: AugmentConfig = AugmentConfig()) -> np.ndarray:
    """1 where the pixel's hexcone HSV falls inside the configured green band."""
    return _kernels.chroma_key(np.ascontiguousarray(img, dtype=np.uint8),
                               float(cfg.h_lo), float(cfg.h_hi), float(cfg.s_min), float(cfg.v_min))


def composite_background(img: np.ndarray, key: np.ndarray, background: np.ndarray) -> np.ndarray:
    if img.shape != background.shape or key.shape != img.shape[:2]:
        raise DimensionMismatch(
            f"image {img.shape}, key {key.shape}, background {background.shape} disagree")
    return np.where(key[..., None] != 0, background, img).astype(np.uint8)


def _paint(img, mask, color):
    img[mask] = color


def segment_distance(xx, yy, a, b):
    """Distance of pixel centres ``(xx, yy)`` to the segment ``a-b``."""
    ax, ay = a
    bx, by = b
    dx, dy = bx - ax, by - ay
    L2 = dx * dx + dy * dy
    if L2 == 0:
        return np.hypot(xx - ax, yy - ay)
    t = np.clip(((xx - ax) * dx + (yy - ay) * dy) / L2, 0.0, 1.0)
    return np.hypot(xx - (ax + t * dx), yy - (ay + t * dy))


def draw_occlusions(img: np.ndarray, joints2d, cfg: AugmentConfig, rng: np.random.Generator,
                    log: list | None = None) -> np.ndarray:
    """Paint random joint-to-joint bars and filled circles over the hand.

    Bars join ``cfg.lines`` distinct joint pairs; circles are centred
    uniformly in the joints' bounding box. Each primitive gets a uniform
    random colour. When ``log`` is a list, each primitive's geometry is
    appended to it.
    """
    out = np.array(img, dtype=np.uint8, copy=True)
    H, W = out.shape[:2]
    pts = np.asarray(joints2d, dtype=float).reshape(-1, 2)
    inside = (pts[:, 0] >= 0) & (pts[:, 0] < W) & (pts[:, 1] >= 0) & (pts[:, 1] < H)
    pts = pts[inside]
    if len(pts) == 0:
        return out
    yy, xx = np.mgrid[0:H, 0:W].astype(float)

    n = len(pts)
    pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
    k = min(cfg.lines, len(pairs))
    chosen = rng.choice(len(pairs), size=k, replace=False) if k else []
    for p in chosen:
        i, j = pairs[int(p)]
        width = rng.uniform(*cfg.line_width)
        color = rng.integers(0, 256, size=3, dtype=np.uint8)
        m = segment_distance(xx, yy, pts[i], pts[j]) <= width / 2
        _paint(out, m, color)
        if log is not None:
            log.append(("line", tuple(pts[i]), tuple(pts[j]), width))

    lo, hi = pts.min(0), pts.max(0)
    for _ in range(cfg.circles):
        c = rng.uniform(lo, hi)
        r = rng.uniform(*cfg.circle_radius)
        color = rng.integers(0, 256, size=3, dtype=np.uint8)
        m = np.hypot(xx - c[0], yy - c[1]) <= r
        _paint(out, m, color)
        if log is not None:
            log.append(("circle", tuple(c), r))
    return out


def warp_affine(src: np.ndarray, A: np.ndarray, out_shape=None) -> np.ndarray:
    """Bilinear warp with edge clamping; ``A`` (2x3) maps source to output pixels."""
    src = np.asarray(src)
    H, W = (out_shape or src.shape[:2])
    M = np.vstack([A, [0.0, 0.0, 1.0]])
    Minv = np.linalg.inv(M)
    yy, xx = np.mgrid[0:H, 0:W].astype(float)
    sx = Minv[0, 0] * xx + Minv[0, 1] * yy + Minv[0, 2]
    sy = Minv[1, 0] * xx + Minv[1, 1] * yy + Minv[1, 2]
    sh, sw = src.shape[:2]
    sx = np.clip(sx, 0.0, sw - 1.0)
    sy = np.clip(sy, 0.0, sh - 1.0)
    x0 = np.floor(sx).astype(int)
    y0 = np.floor(sy).astype(int)
    x1 = np.minimum(x0 + 1, sw - 1)
    y1 = np.minimum(y0 + 1, sh - 1)
    fx = sx - x0
    fy = sy - y0
    if src.ndim == 3:
        fx, fy = fx[..., None], fy[..., None]
    s = src.astype(np.float64)
    top = s[y0, x0] * (1 - fx) + s[y0, x1] * fx
    bot = s[y1, x0] * (1 - fx) + s[y1, x1] * fx
    return top * (1 - fy) + bot * fy


def random_affine(shape, cfg: AugmentConfig, rng: np.random.Generator) -> np.ndarray:
    H, W = shape[:2]
    theta = np.deg2rad(rng.uniform(-cfg.max_rotation_deg, cfg.max_rotation_deg))
    s = rng.uniform(*cfg.scale)
    t = rng.uniform(-cfg.max_translate, cfg.max_translate, size=2) * np.array([W, H])
    c = np.array([(W - 1) / 2.0, (H - 1) / 2.0])
    L = s * np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
    return np.column_stack([L, c + t - L @ c])


def photometric_warp(img: np.ndarray, cfg: AugmentConfig, rng: np.random.Generator):
    """``clamp(alpha * img + beta)`` then a random affine warp.

    Returns ``(image, A)`` where ``A`` (2x3) maps input pixel coordinates to
    output coordinates, so labels transform with ``apply_affine``.
    """
    alpha = rng.uniform(*cfg.contrast)
    beta = rng.uniform(*cfg.brightness)
    A = random_affine(img.shape, cfg, rng)
    jittered = np.clip(np.rint(alpha * img.astype(np.float64) + beta), 0, 255)
    warped = warp_affine(jittered, A)
    return np.clip(np.rint(warped), 0, 255).astype(np.uint8), A


def apply_affine(A: np.ndarray, points) -> np.ndarray:
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    return pts @ A[:, :2].T + A[:, 2]


def resize_to(img: np.ndarray, shape) -> np.ndarray:
    """Bilinear resize so pixel corners line up."""
    H, W = shape[:2]
    h, w = img.shape[:2]
    if (h, w) == (H, W):
        return img.copy()
    sx, sy = W / w, H / h
    A = np.array([[sx, 0.0, (sx - 1) / 2], [0.0, sy, (sy - 1) / 2]])
    return np.clip(np.rint(warp_affine(img, A, (H, W))), 0, 255).astype(np.uint8)


def augment_frame(img, joints2d, cfg: AugmentConfig, frame: int, backgrounds=()):
    """Full pipeline for one frame: ``(image, transformed joints, affine)``."""
    out = np.asarray(img, dtype=np.uint8)
    if len(backgrounds):
        rng = rng_stream(cfg.seed, frame, OP_BACKGROUND)
        bg = backgrounds[int(rng.integers(len(backgrounds)))]
        out = composite_background(out, chroma_key_mask(out, cfg), resize_to(bg, out.shape))
    out = draw_occlusions(out, joints2d, cfg, rng_stream(cfg.seed, frame, OP_OCCLUSION))
    out, A = photometric_warp(out, cfg, rng_stream(cfg.seed, frame, OP_PHOTOMETRIC))
    return out, apply_affine(A, joints2d), A
