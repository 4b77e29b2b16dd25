"""Per-frame HOI status timelines: half-second smoothing and segment extraction."""
from __future__ import annotations

import csv
import io
import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels
from .errors import SchemaError

HOI, IDLE, NO_HAND = "hoi", "idle", "no_hand"
STATUSES = (HOI, IDLE, NO_HAND)
SMOOTH_SECONDS = 0.5


@dataclass(frozen=True)
class Segment:
    start: int
    end: int  # inclusive
    label: str = HOI

    def __post_init__(self):
        if self.start > self.end:
            raise ValueError(f"segment start {self.start} after end {self.end}")

    def __len__(self):
        return self.end - self.start + 1

    def to_json(self) -> dict:
        return {"start": int(self.start), "end": int(self.end), "label": self.label}


@dataclass
class HoiTimeline:
    fps: float
    p_hoi: list  # float or None when no hand
    raw: list
    smoothed: list = field(default_factory=list)

    def __post_init__(self):
        if not self.fps > 0:
            raise ValueError("fps must be positive")
        if len(self.p_hoi) != len(self.raw) or (self.smoothed and len(self.smoothed) != len(self.raw)):
            raise ValueError("timeline arrays must have equal length")
        bad = set(self.raw) - set(STATUSES)
        if bad:
            raise ValueError(f"unknown status {sorted(bad)}")

    def __len__(self):
        return len(self.raw)


def smoothing_window(fps: float, seconds: float = SMOOTH_SECONDS) -> int:
    """Odd window of about ``seconds`` worth of frames (15 at 30 fps)."""
    w = max(1, int(np.floor(seconds * fps + 0.5)))
    return w + 1 if w % 2 == 0 else w


def smooth_statuses(raw, window: int) -> list:
    """Centred majority vote of hoi vs not-hoi; edge windows are truncated.

    A frame becomes hoi only on a strict hoi majority. Otherwise a non-hoi
    frame keeps its own label and a hoi frame takes the most frequent
    non-hoi label of its window (idle on ties).
    """
    n = len(raw)
    if n == 0:
        return []
    half = window // 2
    is_hoi = np.fromiter((s == HOI for s in raw), dtype=np.uint8, count=n)
    maj = _kernels.window_majority(is_hoi, half)
    out = []
    for i, s in enumerate(raw):
        if maj[i]:
            out.append(HOI)
        elif s != HOI:
            out.append(s)
        else:
            lo, hi = max(0, i - half), min(n, i + half + 1)
            c = Counter(x for x in raw[lo:hi] if x != HOI)
            out.append(NO_HAND if c[NO_HAND] > c[IDLE] else IDLE)
    return out


def smooth_timeline(tl: HoiTimeline) -> HoiTimeline:
    return HoiTimeline(tl.fps, list(tl.p_hoi), list(tl.raw),
                       smooth_statuses(tl.raw, smoothing_window(tl.fps)))


def extract_segments(statuses, label: str = HOI) -> list[Segment]:
    """Maximal runs of ``label`` as inclusive segments."""
    segs = []
    start = None
    for i, s in enumerate(statuses):
        if s == label and start is None:
            start = i
        elif s != label and start is not None:
            segs.append(Segment(start, i - 1, label))
            start = None
    if start is not None:
        segs.append(Segment(start, len(statuses) - 1, label))
    return segs


def paint_segments(segments, length: int, background: str = IDLE) -> list:
    out = [background] * length
    for s in segments:
        for i in range(s.start, min(s.end, length - 1) + 1):
            out[i] = s.label
    return out


def status_from_probability(p, threshold: float = 0.5) -> str:
    if p is None:
        return NO_HAND
    return HOI if p >= threshold else IDLE


def timeline_to_csv(tl: HoiTimeline) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["frame", "p_hoi", "raw", "smoothed"])
    sm = tl.smoothed or [""] * len(tl)
    for i, (p, r, s) in enumerate(zip(tl.p_hoi, tl.raw, sm)):
        w.writerow([i, "" if p is None else repr(float(p)), r, s])
    return buf.getvalue()


def read_timeline_csv(path, fps: float) -> HoiTimeline:
    p_hoi, raw, smoothed = [], [], []
    with open(path, newline="") as fh:
        rd = csv.DictReader(fh)
        if rd.fieldnames is None or not {"frame", "p_hoi", "raw"} <= set(rd.fieldnames):
            raise SchemaError(f"{path}: header must contain frame,p_hoi,raw")
        for ln, row in enumerate(rd, start=2):
            try:
                if int(row["frame"]) != len(raw):
                    raise ValueError(f"frame {row['frame']} out of sequence")
                p_hoi.append(float(row["p_hoi"]) if row["p_hoi"] else None)
            except ValueError as exc:
                raise SchemaError(f"{path}:{ln}: {exc}") from None
            if row["raw"] not in STATUSES:
                raise SchemaError(f"{path}:{ln}: unknown raw status {row['raw']!r}")
            raw.append(row["raw"])
            if row.get("smoothed"):
                smoothed.append(row["smoothed"])
    if smoothed and len(smoothed) != len(raw):
        smoothed = []
    return HoiTimeline(fps, p_hoi, raw, smoothed)


def segments_to_json(segments) -> str:
    return json.dumps([s.to_json() for s in segments], indent=1) + "\n"


def read_segments(path) -> list[Segment]:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}:{exc.lineno}: {exc.msg}") from None
    if not isinstance(doc, list):
        raise SchemaError(f"{path}: expected a list of segments")
    out = []
    for i, d in enumerate(doc):
        try:
            out.append(Segment(int(d["start"]), int(d["end"]), str(d.get("label", HOI))))
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaError(f"{path}: segment {i}: {exc}") from None
    return sorted(out, key=lambda s: (s.start, s.end))
