"""Decoding of the 48x28 hand localizer output and the right-hand rule."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .heatmap import HAND_CHANNELS, LOCATOR_GRID, decode_all, grid_to_frame

DEFAULT_CONF_THRESHOLD = 0.25


@dataclass
class LocatorOutput:
    heatmap: np.ndarray  # (2, 28, 48)
    hands: dict = field(default_factory=dict)  # hand id -> (u, v, confidence) in frame pixels
    classification: str = "none"  # left | right | two_hands | none


def decode_locator(stack: np.ndarray, frame_dims, conf_threshold: float = DEFAULT_CONF_THRESHOLD
                   ) -> LocatorOutput:
    gw, gh = LOCATOR_GRID
    if stack.shape != (len(HAND_CHANNELS), gh, gw):
        raise ValueError(f"locator stack must be (2, {gh}, {gw}), got {stack.shape}")
    uv, peak = decode_all(stack)
    hands = {}
    for c, name in enumerate(HAND_CHANNELS):
        if peak[c] > conf_threshold:
            u, v = grid_to_frame(uv[c, 0], uv[c, 1], frame_dims)
            hands[name] = (u, v, float(peak[c]))
    if len(hands) == 2:
        cls = "two_hands"
    elif hands:
        cls = next(iter(hands))
    else:
        cls = "none"
    return LocatorOutput(stack, hands, cls)


@dataclass
class HandObservation:
    frame: int
    hand_id: str  # left | right | two_hands
    keypoints: list  # one (u, v, conf) or two for two_hands

    def __post_init__(self):
        need = 2 if self.hand_id == "two_hands" else 1
        if self.hand_id not in ("left", "right", "two_hands") or len(self.keypoints) != need:
            raise ValueError(f"{self.hand_id} observation needs {need} keypoint(s)")


def select_right_hand(obs: HandObservation):
    """The right hand's keypoint; with two hands the one further right (larger u)."""
    if obs.hand_id == "right":
        return tuple(obs.keypoints[0])
    if obs.hand_id == "two_hands":
        a, b = obs.keypoints
        # ties keep the first listed hand
        return tuple(b) if b[0] > a[0] else tuple(a)
    return None


def observation_from_locator(frame: int, out: LocatorOutput):
    if out.classification == "none":
        return None
    if out.classification == "two_hands":
        return HandObservation(frame, "two_hands", [out.hands["left"], out.hands["right"]])
    return HandObservation(frame, out.classification, [out.hands[out.classification]])


def update_track(prev_center, joints2d):
    """Re-centre the tracking box on the mean of the hand joints."""
    pts = np.asarray(joints2d, dtype=float).reshape(-1, 2) if len(joints2d) else None
    if pts is None or pts.shape[0] == 0:
        return tuple(prev_center)
    m = pts.mean(0)
    return float(m[0]), float(m[1])
