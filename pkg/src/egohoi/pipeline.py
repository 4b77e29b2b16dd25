"""File-level pipeline stages behind the CLI subcommands."""
from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from . import augment, fusion, metrics, pose3d, synth, timeline
from .calibration import CornerObservation, CubeSpec, estimate_camera_pose
from .camera import load_cameras, save_cameras
from .errors import ManifestGap, MissingPair, SchemaError
from .heatmap import read_hmap
from .rasters import read_pgm, read_ppm, write_ppm

log = logging.getLogger("egohoi")

DEFAULT_FPS = 30.0
SHIPPED_MODEL = Path(__file__).parent / "data" / "fusion_synth_model.json"


@dataclass
class PipelineConfig:
    cameras: str | None = None
    detections: str | None = None
    cube: str | None = None
    manifest: str | None = None
    model: str | None = None
    backgrounds: str | None = None
    images: str | None = None
    joints: int = pose3d.DEFAULT_K
    gate_threshold: float | None = None
    crop_side: int = 128
    fps: float | None = None  # None: take it from the manifest, else 30
    decision_threshold: float = 0.5
    seed: int = 0
    jobs: int = 1
    augment: dict | None = None  # AugmentConfig fields

    PATH_KEYS = ("cameras", "detections", "cube", "manifest", "model", "backgrounds", "images")

    def __post_init__(self):
        if self.joints < 1:
            raise SchemaError("joints must be >= 1")
        if self.gate_threshold is not None and self.gate_threshold < 0:
            raise SchemaError("gate_threshold must be >= 0")
        if self.crop_side <= 0:
            raise SchemaError("crop_side must be positive")
        if self.fps is not None and not self.fps > 0:
            raise SchemaError("fps must be positive")
        if not 0.0 <= self.decision_threshold <= 1.0:
            raise SchemaError("decision_threshold must lie in [0, 1]")
        if self.jobs < 1:
            raise SchemaError("jobs must be >= 1")

    @classmethod
    def load(cls, path=None, **overrides) -> "PipelineConfig":
        data = {}
        base = Path(".")
        if path is not None:
            try:
                data = json.loads(Path(path).read_text())
            except json.JSONDecodeError as exc:
                raise SchemaError(f"{path}:{exc.lineno}: {exc.msg}") from None
            base = Path(path).parent
            if not isinstance(data, dict):
                raise SchemaError(f"{path}: config must be a JSON object")
            aug_keys = {f.name for f in fields(augment.AugmentConfig)}
            if data and set(data) <= aug_keys:
                # a bare augmentation config, as passed to ``augment --config``
                data = {"augment": {k: v for k, v in data.items() if k != "seed"},
                        **({"seed": data["seed"]} if "seed" in data else {})}
            known = {f.name for f in fields(cls)}
            unknown = set(data) - known
            if unknown:
                raise SchemaError(f"{path}: unknown config keys {sorted(unknown)}")
            for k in cls.PATH_KEYS:
                if data.get(k) is not None:
                    data[k] = str(base / data[k])
        data.update({k: v for k, v in overrides.items() if v is not None})
        cfg = cls(**data)
        for k in cls.PATH_KEYS:
            p = getattr(cfg, k)
            if p is not None and not Path(p).exists():
                raise SchemaError(f"config path {k}={p} does not exist")
        return cfg


def _dump(path, doc) -> None:
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")


def _map(fn, items, jobs: int):
    if jobs <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(fn, items))


def _chunks(seq, n):
    n = max(1, n)
    size = -(-len(seq) // n) if seq else 1
    return [seq[i:i + size] for i in range(0, len(seq), size)]


# ------------------------------------------------------------------ simulate

def run_simulate(out_dir, seed=0, cams=3, frames=200, sigma=1.0, dropout=0.0, joints=21,
                 fusion_frames=0) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    scene = synth.generate_scene(seed, cams, frames, joints)
    dets = synth.render_detections(scene, sigma=sigma, dropout=dropout)
    save_cameras(out / "cameras.json", scene.cameras)
    _dump(out / "detections.json", {"frames": dets})
    _dump(out / "gt.json", scene.to_gt_json())
    _dump(out / "cube.json", {"edge_m": scene.cube_edge})
    written = {"cameras": out / "cameras.json", "detections": out / "detections.json",
               "gt": out / "gt.json", "cube": out / "cube.json"}
    if fusion_frames:
        samples = synth.make_fusion_dataset(seed, fusion_frames)
        written["fusion_manifest"] = synth.write_fusion_dataset(out / "fusion", samples)
    return written


# ----------------------------------------------------------------- detections

def load_detection_frames(path) -> list[dict]:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}:{exc.lineno}: {exc.msg}") from None
    if isinstance(doc, dict) and "frames" in doc:
        doc = doc["frames"]
    elif isinstance(doc, dict):
        doc = [doc]
    if not isinstance(doc, list):
        raise SchemaError(f"{path}: expected a frame object or list of frames")
    for i, f in enumerate(doc):
        if not isinstance(f, dict) or "frame" not in f or "views" not in f:
            raise SchemaError(f"{path}: frame entry {i} needs 'frame' and 'views'")
    return doc


# ----------------------------------------------------------------- calibrate

def run_calibrate(cfg: PipelineConfig, out_path, restarts: int = 8) -> dict:
    cameras = load_cameras(cfg.cameras)
    edge = json.loads(Path(cfg.cube).read_text()).get("edge_m")
    if not isinstance(edge, (int, float)) or edge <= 0:
        raise SchemaError(f"{cfg.cube}: edge_m must be a positive number")
    cube = CubeSpec(float(edge))
    frames = load_detection_frames(cfg.detections)
    corners = next((f["cube_corners"] for f in frames if f.get("cube_corners")), None)
    if corners is None:
        raise SchemaError(f"{cfg.detections}: no frame carries cube_corners")
    by_cam = {}
    for entry in corners:
        try:
            by_cam[str(entry["camera"])] = [CornerObservation(int(k), float(u), float(v), float(c))
                                            for k, u, v, c in entry["corners"]]
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaError(f"cube_corners for {entry.get('camera')!r}: {exc}") from None
    out, rms = [], {}
    for i, cam in enumerate(cameras):
        if cam.id not in by_cam:
            log.warning("camera %s has no cube corners; extrinsics kept", cam.id)
            out.append(cam)
            continue
        res = estimate_camera_pose(cam, cube, by_cam[cam.id], restarts=restarts,
                                   seed=cfg.seed + 1000 * i)
        out.append(cam.with_pose(res.extrinsics))
        rms[cam.id] = res.rms
        log.info("camera %s: rms %.4f px (restart %d)", cam.id, res.rms, res.restart)
    save_cameras(out_path, out)
    return rms


# ------------------------------------------------------------- annotate-pair

def run_annotate_pair(cfg: PipelineConfig, out_path) -> dict:
    """Annotate without-object frames and transfer labels to their with-object partners."""
    cameras = load_cameras(cfg.cameras)
    frames = load_detection_frames(cfg.detections)
    by_id = {int(f["frame"]): f for f in frames}
    targets = [f for f in frames if f.get("set") == "with_object" or "partner" in f]
    targets.sort(key=lambda f: int(f["frame"]))
    for f in targets:
        p = f.get("partner")
        if p is None or int(p) not in by_id:
            raise MissingPair(f"with-object frame {f['frame']} has no partner frame"
                              + ("" if p is None else f" ({p} not found)"))
    cam_ids = {c.id for c in cameras}

    def work(chunk):
        src = []
        for f in chunk:
            try:
                src.append(pose3d.detections_from_json(by_id[int(f["partner"])], cfg.joints))
            except SchemaError as exc:
                raise SchemaError(f"frame {f['partner']}: {exc}") from None
        results = pose3d.triangulate_frames(src, cameras)
        recs = []
        for f, dets, res in zip(chunk, src, results):
            tgt_ids = [str(v["camera"]) for v in f["views"]]
            missing = [c for c in tgt_ids if c not in cam_ids]
            if missing:
                raise SchemaError(f"frame {f['frame']}: unknown camera(s) {missing}")
            tgt = [c for c in cameras if c.id in tgt_ids]
            thr = cfg.gate_threshold if cfg.gate_threshold is not None \
                else pose3d.default_gate_threshold(dets)
            recs.append(pose3d.annotate(int(f["frame"]), dets, cameras, tgt, thr, result=res))
        return recs

    records = [r for chunk in _map(work, _chunks(targets, cfg.jobs), cfg.jobs) for r in chunk]
    _dump(out_path, [r.to_json() for r in records])
    n_valid = sum(r.valid for r in records)
    summary = {"frames": len(records), "valid": n_valid, "invalid": len(records) - n_valid}
    log.info("annotated %d frames: %d valid, %d invalid", *summary.values())
    return summary


# ------------------------------------------------------------------- augment

def run_augment(cfg: PipelineConfig, aug_cfg: augment.AugmentConfig, out_dir,
                labels_path=None) -> list[str]:
    images = sorted(Path(cfg.images).glob("*.ppm"))
    bgs = [read_ppm(p) for p in sorted(Path(cfg.backgrounds).glob("*.ppm"))] \
        if cfg.backgrounds else []
    labels = json.loads(Path(labels_path).read_text()) if labels_path else {}
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    def work(item):
        i, path = item
        joints = np.asarray(labels.get(path.name, []), dtype=float).reshape(-1, 2)
        img, new_joints, A = augment.augment_frame(read_ppm(path), joints, aug_cfg, i, bgs)
        write_ppm(out / path.name, img)
        return path.name, {"joints": new_joints.tolist(), "affine": A.tolist()}

    done = _map(work, list(enumerate(images)), cfg.jobs)
    _dump(out / "labels.json", {name: d for name, d in done})
    return [name for name, _ in done]


# -------------------------------------------------------------------- detect

def load_manifest(path) -> dict:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}:{exc.lineno}: {exc.msg}") from None
    if not isinstance(doc, dict) or not isinstance(doc.get("frames"), list):
        raise SchemaError(f"{path}: manifest needs a 'frames' list")
    for i, f in enumerate(doc["frames"]):
        if "frame" not in f:
            raise SchemaError(f"{path}: manifest entry {i} lacks 'frame'")
    return doc


def _load_frame(base: Path, entry: dict):
    paths = {k: base / entry[k] for k in ("pose", "hand", "object") if k in entry}
    missing = [k for k in ("pose", "hand", "object") if k not in paths or not paths[k].exists()]
    if missing:
        raise ManifestGap(f"frame {entry['frame']}: missing {', '.join(missing)}")
    return read_hmap(paths["pose"]), read_pgm(paths["hand"]), read_pgm(paths["object"])


def frame_probability(model: fusion.FusionModel, pose, hand, obj) -> float:
    return fusion.predict(model, fusion.extract_features(pose, hand, obj, model.ablate))


def run_detect(cfg: PipelineConfig, out_dir) -> timeline.HoiTimeline:
    manifest = load_manifest(cfg.manifest)
    base = Path(cfg.manifest).parent
    model = fusion.FusionModel.load(cfg.model or SHIPPED_MODEL)
    fps = float(manifest.get("fps", DEFAULT_FPS)) if cfg.fps is None else cfg.fps
    entries = {int(e["frame"]): e for e in manifest["frames"]}
    n = max(entries) + 1 if entries else 0

    def work(i):
        e = entries.get(i)
        if e is None:
            log.warning("frame %d: not listed in manifest; marked no_hand", i)
            return None
        try:
            return frame_probability(model, *_load_frame(base, e))
        except ManifestGap as exc:
            log.warning("%s; marked no_hand", exc)
            return None

    probs = _map(work, range(n), cfg.jobs)
    raw = [timeline.status_from_probability(p, cfg.decision_threshold) for p in probs]
    w = timeline.smoothing_window(fps)
    log.info("smoothing window %d frames at %.3g fps", w, fps)
    tl = timeline.smooth_timeline(timeline.HoiTimeline(fps, probs, raw))
    _write_timeline(out_dir, tl)
    return tl


def _write_timeline(out_dir, tl):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "timeline.csv").write_text(timeline.timeline_to_csv(tl))
    (out / "segments.json").write_text(
        timeline.segments_to_json(timeline.extract_segments(tl.smoothed)))


def run_segment(cfg: PipelineConfig, timeline_path, out_dir) -> timeline.HoiTimeline:
    fps = DEFAULT_FPS if cfg.fps is None else cfg.fps
    tl = timeline.read_timeline_csv(timeline_path, fps)
    log.info("smoothing window %d frames at %.3g fps", timeline.smoothing_window(fps), fps)
    tl = timeline.smooth_timeline(tl)
    _write_timeline(out_dir, tl)
    return tl


# ---------------------------------------------------------------------- eval

def _keypoint_doc(path):
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}:{exc.lineno}: {exc.msg}") from None
    vis = None
    if isinstance(doc, dict):
        if "keypoints" not in doc:
            raise SchemaError(f"{path}: expected 'keypoints'")
        vis = doc.get("visible")
        doc = doc["keypoints"]
    try:
        arr = np.asarray(doc, dtype=float)
    except ValueError as exc:
        raise SchemaError(f"{path}: keypoints are not a rectangular array ({exc})") from None
    if arr.ndim < 2 or arr.shape[-1] not in (2, 3):
        raise SchemaError(f"{path}: keypoints must end in [u, v] or [u, v, visible]")
    if arr.shape[-1] == 3:
        vis = arr[..., 2] > 0 if vis is None else vis
        arr = arr[..., :2]
    return arr, None if vis is None else np.asarray(vis, bool)


def run_eval_pck(pred_path, gt_path, max_threshold: float, out_dir, min_threshold: float = 0.0,
                 steps: int = 51) -> dict:
    pred, _ = _keypoint_doc(pred_path)
    gt, vis = _keypoint_doc(gt_path)
    t = np.linspace(min_threshold, max_threshold, steps)
    curve = metrics.pck_curve(pred, gt, vis, t)
    a = metrics.auc(curve, min_threshold, max_threshold)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    lines = ["threshold,pck"] + [f"{x!r},{y!r}" for x, y in zip(curve.thresholds.tolist(),
                                                                curve.pck.tolist())]
    (out / "pck_curve.csv").write_text("\n".join(lines) + "\n")
    report = {"auc": a, "min_threshold": min_threshold, "max_threshold": max_threshold}
    _dump(out / "pck_report.json", report)
    return report


def run_report(pred_path, gt_path, iou: float = 0.5, n_frames: int | None = None) -> dict:
    """Segmental P/R/F1 plus frame accuracy of the painted timelines."""
    pred = timeline.read_segments(pred_path)
    gt = timeline.read_segments(gt_path)
    p, r, f1 = metrics.f1_at_iou(pred, gt, iou)
    n = n_frames if n_frames is not None else max([s.end + 1 for s in pred + gt], default=0)
    if n > 0:
        acc = metrics.frame_accuracy(timeline.paint_segments(pred, n),
                                     timeline.paint_segments(gt, n))
    else:
        acc = 1.0
    return {"precision": p, "recall": r, "f1": f1, "frame_acc": acc}


# --------------------------------------------------------------- train-fusion

def load_training_set(manifest_path, ablate=None):
    manifest = load_manifest(manifest_path)
    base = Path(manifest_path).parent
    feats, labels = [], []
    for e in sorted(manifest["frames"], key=lambda e: int(e["frame"])):
        if "label" not in e:
            raise SchemaError(f"{manifest_path}: frame {e['frame']} lacks 'label'")
        pose, hand, obj = _load_frame(base, e)
        feats.append(fusion.extract_features(pose, hand, obj, ablate))
        labels.append(int(e["label"]))
    return feats, np.array(labels)


def run_train_fusion(cfg: PipelineConfig, out_path, lr=1e-2, epochs=500, hidden=16, ablate=None):
    feats, labels = load_training_set(cfg.manifest, ablate)
    res = fusion.train(feats, labels, lr=lr, epochs=epochs, hidden=hidden, seed=cfg.seed,
                       ablate=ablate)
    res.model.save(out_path)
    acc = fusion.accuracy(res.model, feats, labels)
    log.info("trained on %d samples: loss %.4f -> %.4f, accuracy %.3f", len(labels),
             res.losses[0], res.losses[-1], acc)
    return res, acc
