"""Interaction probability from pose heatmaps, hand mask and object mask.

Cues are reduced to a fixed feature vector (8x8 mean-pooled grids plus a
few scalar descriptors) and scored by a one-hidden-layer tanh network with
a logistic output. Ablation flags zero every feature that depends on the
dropped cue.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import DimensionMismatch, SchemaError, SingleClassDataset
from .heatmap import decode_all

POOL = 8
CUES = ("pose", "hand", "object")
SCALAR_NAMES = ("pose_confidence", "pose_spread", "hand_area", "object_area",
                "overlap", "object_hand_distance")

# feature layout
_P = POOL * POOL
POSE_SLICE = slice(0, _P + 2)  # pooled pose, pose confidence, pose spread
HAND_SLICE = slice(_P + 2, 2 * _P + 3)  # pooled hand, hand area
OBJECT_SLICE = slice(2 * _P + 3, 3 * _P + 4)  # pooled object, object area
PAIR_SLICE = slice(3 * _P + 4, 3 * _P + 6)  # overlap, distance (need hand and object)
FEATURE_LEN = 3 * _P + 6


def _flags(ablate) -> dict:
    ablate = ablate or {}
    if isinstance(ablate, (set, list, tuple, frozenset)):
        ablate = {k: True for k in ablate}
    unknown = set(ablate) - set(CUES)
    if unknown:
        raise ValueError(f"unknown ablation cue(s) {sorted(unknown)}")
    return {c: bool(ablate.get(c, False)) for c in CUES}


@dataclass
class CueFeatures:
    values: np.ndarray
    ablate: dict = field(default_factory=lambda: _flags(None))

    def __len__(self):
        return self.values.size


def mean_pool(a: np.ndarray, out: int = POOL) -> np.ndarray:
    """Area-mean pooling of a 2D array onto an ``out x out`` grid."""
    H, W = a.shape
    if H < out or W < out:
        raise DimensionMismatch(f"raster {W}x{H} smaller than the {out}x{out} pool grid")
    ys = np.linspace(0, H, out + 1).round().astype(int)
    xs = np.linspace(0, W, out + 1).round().astype(int)
    s = np.add.reduceat(np.add.reduceat(a.astype(np.float64), ys[:-1], axis=0), xs[:-1], axis=1)
    return s / np.outer(np.diff(ys), np.diff(xs))


def extract_features(pose: np.ndarray, hand: np.ndarray, obj: np.ndarray, ablate=None
                     ) -> CueFeatures:
    """Feature vector for one crop; hand and object masks must share dimensions."""
    flags = _flags(ablate)
    hand = np.asarray(hand) != 0
    obj = np.asarray(obj) != 0
    if hand.shape != obj.shape:
        raise DimensionMismatch(f"hand mask {hand.shape} vs object mask {obj.shape}")
    pose = np.asarray(pose, dtype=np.float32)
    if pose.ndim == 2:
        pose = pose[None]
    x = np.zeros(FEATURE_LEN)

    if not flags["pose"]:
        C, gh, gw = pose.shape
        x[0:_P] = mean_pool(pose.max(axis=0)).ravel()
        uv, peak = decode_all(pose)
        x[_P] = peak.mean()
        spread = np.linalg.norm(uv - uv.mean(0), axis=1).mean()
        x[_P + 1] = spread / np.hypot(gw, gh)
    n = hand.size
    if not flags["hand"]:
        s = HAND_SLICE.start
        x[s:s + _P] = mean_pool(hand).ravel()
        x[s + _P] = np.count_nonzero(hand) / n
    if not flags["object"]:
        s = OBJECT_SLICE.start
        x[s:s + _P] = mean_pool(obj).ravel()
        x[s + _P] = np.count_nonzero(obj) / n
    if not (flags["hand"] or flags["object"]):
        s = PAIR_SLICE.start
        n_obj = np.count_nonzero(obj)
        x[s] = np.count_nonzero(hand & obj) / max(1, n_obj)
        x[s + 1] = object_hand_distance(hand, obj)
    return CueFeatures(x, flags)


def object_hand_distance(hand: np.ndarray, obj: np.ndarray) -> float:
    """Mean distance from object pixels to the nearest hand pixel over the diagonal.

    1.0 when either mask is empty.
    """
    if not hand.any() or not obj.any():
        return 1.0
    # crop to the joint bounding box: distances inside it are unaffected
    rows = np.flatnonzero((hand | obj).any(1))
    cols = np.flatnonzero((hand | obj).any(0))
    sub_h = hand[rows[0]:rows[-1] + 1, cols[0]:cols[-1] + 1]
    sub_o = obj[rows[0]:rows[-1] + 1, cols[0]:cols[-1] + 1]
    d = ndimage.distance_transform_edt(~sub_h)
    return float(d[sub_o].mean() / np.hypot(*hand.shape))


@dataclass
class FusionModel:
    w1: np.ndarray  # (hidden, feature_len)
    b1: np.ndarray  # (hidden,)
    w2: np.ndarray  # (hidden,)
    b2: float
    ablate: dict = field(default_factory=lambda: _flags(None))

    @property
    def hidden(self) -> int:
        return self.w1.shape[0]

    @property
    def feature_len(self) -> int:
        return self.w1.shape[1]

    @classmethod
    def init(cls, hidden: int = 16, feature_len: int = FEATURE_LEN, seed: int = 0, ablate=None):
        if hidden < 1:
            raise ValueError("hidden size must be >= 1")
        rng = np.random.default_rng(seed)
        w1 = rng.normal(size=(hidden, feature_len)) / np.sqrt(feature_len)
        w2 = rng.normal(size=hidden) / np.sqrt(hidden)
        return cls(w1, np.zeros(hidden), w2, 0.0, _flags(ablate))

    def params(self) -> dict:
        return {"w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": np.float64(self.b2)}

    def to_json(self) -> dict:
        return {
            "hidden": int(self.hidden),
            "w1": [float(v) for v in self.w1.ravel()],
            "b1": [float(v) for v in self.b1],
            "w2": [float(v) for v in self.w2],
            "b2": float(self.b2),
            "feature_len": int(self.feature_len),
            "ablate": dict(self.ablate),
        }

    @classmethod
    def from_json(cls, d: dict) -> "FusionModel":
        try:
            h, n = int(d["hidden"]), int(d["feature_len"])
            w1 = np.array(d["w1"], dtype=float).reshape(h, n)
            b1 = np.array(d["b1"], dtype=float).reshape(h)
            w2 = np.array(d["w2"], dtype=float).reshape(h)
            model = cls(w1, b1, w2, float(d["b2"]), _flags(d.get("ablate")))
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaError(f"model.json: {exc}") from None
        if not all(np.all(np.isfinite(p)) for p in model.params().values()):
            raise SchemaError("model.json: non-finite parameters")
        return model

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json()) + "\n")

    @classmethod
    def load(cls, path) -> "FusionModel":
        return cls.from_json(json.loads(Path(path).read_text()))


def _sigmoid(z):
    return np.where(z >= 0, 1.0 / (1.0 + np.exp(-np.abs(z))),
                    np.exp(-np.abs(z)) / (1.0 + np.exp(-np.abs(z))))


def _as_matrix(model, features) -> np.ndarray:
    X = np.atleast_2d(np.stack([f.values if isinstance(f, CueFeatures) else np.asarray(f, float)
                                for f in features]))
    if X.shape[1] != model.feature_len:
        raise DimensionMismatch(f"feature length {X.shape[1]} != model {model.feature_len}")
    return X


def logits(model: FusionModel, X: np.ndarray) -> np.ndarray:
    return np.tanh(X @ model.w1.T + model.b1) @ model.w2 + model.b2


def predict(model: FusionModel, features) -> float:
    """Interaction probability for one feature vector."""
    x = features.values if isinstance(features, CueFeatures) else np.asarray(features, float)
    if x.shape != (model.feature_len,):
        raise DimensionMismatch(f"feature length {x.size} != model {model.feature_len}")
    z = float(np.tanh(model.w1 @ x + model.b1) @ model.w2 + model.b2)
    return float(_sigmoid(np.float64(z)))


def predict_batch(model: FusionModel, features) -> np.ndarray:
    return _sigmoid(logits(model, _as_matrix(model, features)))


def decide(p: float, threshold: float = 0.5) -> bool:
    return p >= threshold


def loss_and_grad(model: FusionModel, batch):
    """Mean binary cross-entropy over ``batch`` and its gradient per parameter.

    ``batch`` is a sequence of ``(features, label)`` or a tuple ``(X, y)`` of arrays.
    """
    if isinstance(batch, tuple) and len(batch) == 2 and isinstance(batch[0], np.ndarray):
        X, y = batch
        X = np.atleast_2d(np.asarray(X, float))
        y = np.asarray(y, float)
    else:
        if len(batch) == 0:
            raise ValueError("empty batch")
        X = _as_matrix(model, [f for f, _ in batch])
        y = np.array([lab for _, lab in batch], dtype=float)
    n = X.shape[0]
    if n == 0:
        raise ValueError("empty batch")
    a = X @ model.w1.T + model.b1
    h = np.tanh(a)
    z = h @ model.w2 + model.b2
    # log(1 + e^z) - y z, evaluated stably
    loss = float(np.mean(np.logaddexp(0.0, z) - y * z))
    dz = (_sigmoid(z) - y) / n
    gw2 = h.T @ dz
    gb2 = float(dz.sum())
    da = np.outer(dz, model.w2) * (1.0 - h * h)
    gw1 = da.T @ X
    gb1 = da.sum(0)
    return loss, {"w1": gw1, "b1": gb1, "w2": gw2, "b2": gb2}


@dataclass
class TrainResult:
    model: FusionModel
    losses: list


def train(features, labels, lr: float = 1e-2, epochs: int = 500, hidden: int = 16, seed: int = 0,
          ablate=None) -> TrainResult:
    """Full-batch gradient descent from a seeded initialisation."""
    labels = np.asarray(labels, dtype=float)
    if len(np.unique(labels)) < 2:
        raise SingleClassDataset("training data must contain both classes")
    model = FusionModel.init(hidden, FEATURE_LEN, seed, ablate)
    X = _as_matrix(model, features)
    losses = []
    for _ in range(epochs):
        loss, g = loss_and_grad(model, (X, labels))
        losses.append(loss)
        model.w1 = model.w1 - lr * g["w1"]
        model.b1 = model.b1 - lr * g["b1"]
        model.w2 = model.w2 - lr * g["w2"]
        model.b2 = float(model.b2 - lr * g["b2"])
    losses.append(loss_and_grad(model, (X, labels))[0])
    return TrainResult(model, losses)


def accuracy(model: FusionModel, features, labels, threshold: float = 0.5) -> float:
    p = predict_batch(model, features)
    return float(np.mean((p >= threshold) == (np.asarray(labels) == 1)))
