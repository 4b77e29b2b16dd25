"""Gaussian keypoint heatmaps, peak decoding, ROI crops and the HMAP container.

Stacks are ``(C, H, W)`` float32 arrays: row-major within a channel,
channels consecutive, the same order as the HMAP file payload.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import EmptyHeatmap, SchemaError, SideExceedsFrame

POSE_GRID = (32, 32)
LOCATOR_GRID = (48, 28)  # (W, H)
LOCATOR_SIGMA = 1.5
HAND_CHANNELS = ("left", "right")
MAGIC = b"HMAP"


def encode_gaussian(keypoints, dims, sigma: float) -> np.ndarray:
    """One channel per keypoint: ``exp(-d**2 / (2 sigma**2))`` around ``(u, v)``.

    ``dims`` is ``(W, H)``. Off-grid keypoints give truncated Gaussians.
    """
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    W, H = dims
    kp = np.asarray(keypoints, dtype=float).reshape(-1, 2)
    xs = np.arange(W, dtype=float)
    ys = np.arange(H, dtype=float)
    gx = np.exp(-((xs[None, :] - kp[:, :1]) ** 2) / (2 * sigma**2))
    gy = np.exp(-((ys[None, :] - kp[:, 1:]) ** 2) / (2 * sigma**2))
    return (gy[:, :, None] * gx[:, None, :]).astype(np.float32)


def decode_peak(stack: np.ndarray, channel: int) -> tuple[int, int, float]:
    """``(u, v, confidence)`` of the channel maximum.

    Ties go to the smallest row, then the smallest column (first index in
    row-major order). Confidence is the peak clamped to [0, 1].
    """
    if not 0 <= channel < stack.shape[0]:
        raise IndexError(f"channel {channel} out of range for {stack.shape[0]} channels")
    ch = stack[channel]
    flat = int(np.argmax(ch))
    v, u = divmod(flat, ch.shape[1])
    peak = float(ch[v, u])
    if not peak > 0:
        raise EmptyHeatmap(f"channel {channel} has no positive value")
    return u, v, min(max(peak, 0.0), 1.0)


def decode_all(stack: np.ndarray):
    """Vectorized argmax over every channel: ``(uv (C, 2), peak (C,))``; peak 0 for empty."""
    C, H, W = stack.shape
    flat = stack.reshape(C, -1)
    idx = np.argmax(flat, axis=1)
    peak = np.clip(flat[np.arange(C), idx].astype(float), 0.0, 1.0)
    uv = np.column_stack([idx % W, idx // W]).astype(float)
    return uv, peak


def localization_target(hand_boxes, frame_dims, sigma: float = LOCATOR_SIGMA) -> np.ndarray:
    """48x28 target: a fixed-size Gaussian at each box centre, channel per hand id.

    ``hand_boxes`` holds ``((x0, y0, x1, y1), hand_id)`` with ``hand_id`` in
    ``{"left", "right"}``. Box centres map to ``(u * 48 / W, v * 28 / H)``;
    boxes of one class combine by pointwise max.
    """
    gw, gh = LOCATOR_GRID
    fw, fh = frame_dims
    out = np.zeros((len(HAND_CHANNELS), gh, gw), dtype=np.float32)
    for (x0, y0, x1, y1), hid in hand_boxes:
        c = HAND_CHANNELS.index(hid)
        center = ((x0 + x1) / 2 * gw / fw, (y0 + y1) / 2 * gh / fh)
        out[c] = np.maximum(out[c], encode_gaussian([center], (gw, gh), sigma)[0])
    return out


def grid_to_frame(u, v, frame_dims, grid=LOCATOR_GRID):
    """Grid cell centre to full-frame pixels."""
    return (u + 0.5) * frame_dims[0] / grid[0], (v + 0.5) * frame_dims[1] / grid[1]


@dataclass(frozen=True)
class RoiBox:
    x0: int
    y0: int
    side: int
    clamped: bool

    @property
    def center(self):
        return self.x0 + self.side / 2, self.y0 + self.side / 2

    @property
    def bounds(self):
        """Half-open ``(x0, y0, x1, y1)``."""
        return self.x0, self.y0, self.x0 + self.side, self.y0 + self.side


def roi_crop(frame_dims, center, side: int) -> RoiBox:
    """Square box on ``center``, shifted (never shrunk) to stay inside the frame."""
    if not side > 0:
        raise ValueError("side must be positive")
    W, H = frame_dims
    side = int(round(side))
    if side > min(W, H):
        raise SideExceedsFrame(f"crop side {side} exceeds frame {W}x{H}")
    x0 = int(np.floor(center[0] - side / 2 + 0.5))
    y0 = int(np.floor(center[1] - side / 2 + 0.5))
    cx0 = min(max(x0, 0), W - side)
    cy0 = min(max(y0, 0), H - side)
    return RoiBox(cx0, cy0, side, (cx0, cy0) != (x0, y0))


def write_hmap(path, stack: np.ndarray) -> None:
    stack = np.asarray(stack)
    if stack.ndim == 2:
        stack = stack[None]
    C, H, W = stack.shape
    data = np.ascontiguousarray(stack, dtype="<f4")
    Path(path).write_bytes(MAGIC + struct.pack("<III", W, H, C) + data.tobytes())


def read_hmap(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC or len(raw) < 16:
        raise SchemaError(f"{path}: not an HMAP file")
    W, H, C = struct.unpack("<III", raw[4:16])
    n = W * H * C
    if len(raw) != 16 + 4 * n:
        raise SchemaError(f"{path}: payload is {len(raw) - 16} bytes, expected {4 * n}")
    vals = np.frombuffer(raw, dtype="<f4", count=n, offset=16).reshape(C, H, W)
    if not np.all(np.isfinite(vals)) or np.any(vals < 0):
        raise SchemaError(f"{path}: heatmap values must be finite and non-negative")
    return vals.astype(np.float32)
