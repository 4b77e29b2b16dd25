import json
from pathlib import Path

import numpy as np
import pytest

from egohoi import fusion, metrics, pipeline, synth, timeline
from egohoi.cli import main
from egohoi.errors import MissingPair, SchemaError
from egohoi.heatmap import write_hmap
from egohoi.rasters import write_pgm, write_ppm


def tree_bytes(d):
    d = Path(d)
    return {str(p.relative_to(d)): p.read_bytes() for p in sorted(d.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def sim(tmp_path_factory):
    d = tmp_path_factory.mktemp("sim")
    assert main(["--seed", "0", "simulate", "--out", str(d), "--frames", "30", "--sigma", "0",
                 "--fusion", "60"]) == 0
    return d


def test_simulate_outputs(sim):
    for name in ("cameras.json", "detections.json", "gt.json", "cube.json",
                 "fusion/manifest.json"):
        assert (sim / name).exists()


def test_simulate_deterministic(tmp_path):
    for k in ("a", "b"):
        assert main(["simulate", "--seed", "3", "--out", str(tmp_path / k), "--frames", "5",
                     "--fusion", "4"]) == 0
    assert tree_bytes(tmp_path / "a") == tree_bytes(tmp_path / "b")


def test_annotate_pair_zero_noise(sim, tmp_path, capsys):
    out = tmp_path / "ann.json"
    assert main(["annotate-pair", "--cameras", str(sim / "cameras.json"), "--detections",
                 str(sim / "detections.json"), "--out", str(out)]) == 0
    assert "valid 30 invalid 0" in capsys.readouterr().out
    recs = json.loads(out.read_text())
    frames = {f["frame"]: f for f in json.loads((sim / "detections.json").read_text())["frames"]}
    for r in recs:
        assert r["valid"]
        for v in frames[r["frame"]]["views"]:
            lab = np.array(r["labels2d"][v["camera"]])[:, :2]
            np.testing.assert_allclose(lab, np.array(v["joints"])[:, :2], atol=1e-6)


def test_annotate_pair_jobs_identical(sim, tmp_path):
    outs = []
    for jobs in ("1", "4"):
        out = tmp_path / f"ann{jobs}.json"
        assert main(["--jobs", jobs, "annotate-pair", "--cameras", str(sim / "cameras.json"),
                     "--detections", str(sim / "detections.json"), "--out", str(out)]) == 0
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]


def test_gate_zero_invalidates_all(sim, tmp_path, capsys):
    assert main(["annotate-pair", "--cameras", str(sim / "cameras.json"), "--detections",
                 str(sim / "detections.json"), "--threshold", "0",
                 "--out", str(tmp_path / "a.json")]) == 0
    assert "valid 0 invalid 30" in capsys.readouterr().out


def test_missing_partner(sim, tmp_path, caplog):
    doc = json.loads((sim / "detections.json").read_text())
    doc["frames"] = [f for f in doc["frames"] if f["frame"] != 4]
    (tmp_path / "d.json").write_text(json.dumps(doc))
    cfg = pipeline.PipelineConfig(cameras=str(sim / "cameras.json"),
                                  detections=str(tmp_path / "d.json"))
    with pytest.raises(MissingPair, match="frame 5"):
        pipeline.run_annotate_pair(cfg, tmp_path / "x.json")
    rc = main(["annotate-pair", "--cameras", str(sim / "cameras.json"), "--detections",
               str(tmp_path / "d.json"), "--out", str(tmp_path / "x.json")])
    assert rc != 0 and "MissingPair" in caplog.text and "frame 5" in caplog.text


def test_calibrate_recovers_extrinsics(sim, tmp_path):
    out = tmp_path / "cal.json"
    assert main(["calibrate", "--cameras", str(sim / "cameras.json"), "--cube",
                 str(sim / "cube.json"), "--detections", str(sim / "detections.json"),
                 "--out", str(out)]) == 0
    a = json.loads((sim / "cameras.json").read_text())["cameras"]
    b = json.loads(out.read_text())["cameras"]
    for ca, cb in zip(a, b):
        np.testing.assert_allclose(cb["rotation"], ca["rotation"], atol=1e-6)
        np.testing.assert_allclose(cb["translation"], ca["translation"], atol=1e-6)


def test_detect_deterministic_across_jobs(sim, tmp_path, caplog):
    import logging
    caplog.set_level(logging.INFO, logger="egohoi")
    for jobs in ("1", "3"):
        assert main(["--jobs", jobs, "detect", "--manifest", str(sim / "fusion/manifest.json"),
                     "--out", str(tmp_path / jobs)]) == 0
    assert tree_bytes(tmp_path / "1") == tree_bytes(tmp_path / "3")
    assert "smoothing window 15" in caplog.text


def write_frames(d, frames):
    d.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, (pose, hand, obj) in enumerate(frames):
        write_hmap(d / f"{i}.hmap", pose)
        write_pgm(d / f"{i}_h.pgm", hand)
        write_pgm(d / f"{i}_o.pgm", obj)
        entries.append({"frame": i, "pose": f"{i}.hmap", "hand": f"{i}_h.pgm",
                        "object": f"{i}_o.pgm"})
    (d / "manifest.json").write_text(json.dumps({"fps": 30, "frames": entries}))
    return d / "manifest.json"


def test_detect_empty_objects_all_idle(tmp_path):
    rng = synth.rng_stream(11, 10)
    frames = []
    for _ in range(40):
        pose, hand, obj, _ = synth.fusion_sample(rng)
        frames.append((pose, hand, np.zeros_like(obj)))
    manifest = write_frames(tmp_path / "in", frames)
    tl = pipeline.run_detect(pipeline.PipelineConfig(manifest=str(manifest)), tmp_path / "out")
    assert tl.raw == ["idle"] * 40


def test_detect_duplicate_frame_identical_rows(tmp_path):
    pose, hand, obj, _ = synth.fusion_sample(synth.rng_stream(2, 10))
    manifest = write_frames(tmp_path / "in", [(pose, hand, obj)] * 2)
    pipeline.run_detect(pipeline.PipelineConfig(manifest=str(manifest)), tmp_path / "out")
    rows = (tmp_path / "out/timeline.csv").read_text().splitlines()[1:]
    assert rows[0].split(",")[1:3] == rows[1].split(",")[1:3]


def test_detect_manifest_gap(tmp_path, caplog):
    pose, hand, obj, _ = synth.fusion_sample(synth.rng_stream(2, 10))
    manifest = write_frames(tmp_path / "in", [(pose, hand, obj)] * 3)
    (tmp_path / "in/1_o.pgm").unlink()
    assert main(["detect", "--manifest", str(manifest), "--out", str(tmp_path / "out")]) == 0
    tl = timeline.read_timeline_csv(tmp_path / "out/timeline.csv", 30)
    assert tl.raw[1] == "no_hand" and tl.p_hoi[1] is None
    assert "frame 1" in caplog.text


def test_segment_matches_detect(sim, tmp_path):
    main(["detect", "--manifest", str(sim / "fusion/manifest.json"), "--out", str(tmp_path / "d")])
    assert main(["segment", "--timeline", str(tmp_path / "d/timeline.csv"),
                 "--out", str(tmp_path / "s")]) == 0
    assert tree_bytes(tmp_path / "d") == tree_bytes(tmp_path / "s")


def test_eval_seg_report(tmp_path):
    gt = [timeline.Segment(0, 9), timeline.Segment(20, 29)]
    pred = [timeline.Segment(1, 9), timeline.Segment(40, 45)]
    (tmp_path / "gt.json").write_text(timeline.segments_to_json(gt))
    (tmp_path / "pred.json").write_text(timeline.segments_to_json(pred))
    (tmp_path / "empty.json").write_text("[]")
    assert main(["eval-seg", "--pred", str(tmp_path / "gt.json"), "--gt", str(tmp_path / "gt.json"),
                 "--iou", "0.5", "--out", str(tmp_path / "same.json")]) == 0
    same = json.loads((tmp_path / "same.json").read_text())
    assert list(same) == ["precision", "recall", "f1", "frame_acc"]
    assert same["f1"] == 1.0 and same["frame_acc"] == 1.0
    main(["eval-seg", "--pred", str(tmp_path / "empty.json"), "--gt", str(tmp_path / "gt.json"),
          "--out", str(tmp_path / "e.json")])
    assert json.loads((tmp_path / "e.json").read_text())["recall"] == 0.0
    main(["eval-seg", "--pred", str(tmp_path / "pred.json"), "--gt", str(tmp_path / "gt.json"),
          "--frames", "50", "--out", str(tmp_path / "r.json")])
    r = json.loads((tmp_path / "r.json").read_text())
    p, rec, f1 = metrics.f1_at_iou(pred, gt, 0.5)
    acc = metrics.frame_accuracy(timeline.paint_segments(pred, 50), timeline.paint_segments(gt, 50))
    assert r == {"precision": p, "recall": rec, "f1": f1, "frame_acc": acc}


def test_eval_seg_schema_error(tmp_path, caplog):
    (tmp_path / "bad.json").write_text('[{"start": 1, "end": "x"}]')
    rc = main(["eval-seg", "--pred", str(tmp_path / "bad.json"), "--gt", str(tmp_path / "bad.json"),
               "--out", str(tmp_path / "r.json")])
    assert rc == 2 and "bad.json" in caplog.text


def test_eval_pck(tmp_path):
    gt = np.zeros((2, 3, 2))
    pred = gt + np.array([3.0, 4.0])
    (tmp_path / "gt.json").write_text(json.dumps({"keypoints": gt.tolist()}))
    (tmp_path / "pred.json").write_text(json.dumps(pred.tolist()))
    assert main(["eval-pck", "--pred", str(tmp_path / "pred.json"), "--gt",
                 str(tmp_path / "gt.json"), "--max-threshold", "10", "--steps", "11",
                 "--out", str(tmp_path / "o")]) == 0
    rep = json.loads((tmp_path / "o/pck_report.json").read_text())
    curve = metrics.pck_curve(pred, gt, None, np.linspace(0, 10, 11))
    assert rep["auc"] == metrics.auc(curve, 0, 10)
    lines = (tmp_path / "o/pck_curve.csv").read_text().splitlines()
    assert lines[0] == "threshold,pck" and len(lines) == 12


def test_augment_cli_deterministic(tmp_path):
    rng = np.random.default_rng(0)
    (tmp_path / "imgs").mkdir()
    (tmp_path / "bgs").mkdir()
    labels = {}
    for i in range(4):
        img = rng.integers(0, 256, (40, 50, 3), dtype=np.uint8)
        img[:, :15] = (0, 210, 0)
        write_ppm(tmp_path / f"imgs/f{i}.ppm", img)
        labels[f"f{i}.ppm"] = rng.uniform(10, 30, size=(5, 2)).tolist()
    write_ppm(tmp_path / "bgs/b.ppm", rng.integers(0, 256, (20, 20, 3), dtype=np.uint8))
    (tmp_path / "labels.json").write_text(json.dumps(labels))
    (tmp_path / "aug.json").write_text(json.dumps({"lines": 3, "circles": 1}))
    runs = []
    for jobs in ("1", "1", "3"):
        out = tmp_path / f"out{len(runs)}"
        assert main(["augment", "--seed", "5", "--jobs", jobs, "--config",
                     str(tmp_path / "aug.json"), "--images", str(tmp_path / "imgs"),
                     "--backgrounds", str(tmp_path / "bgs"), "--labels",
                     str(tmp_path / "labels.json"), "--out", str(out)]) == 0
        runs.append(tree_bytes(out))
    assert runs[0] == runs[1] == runs[2]
    main(["augment", "--seed", "6", "--config", str(tmp_path / "aug.json"), "--images",
          str(tmp_path / "imgs"), "--out", str(tmp_path / "other")])
    assert tree_bytes(tmp_path / "other") != runs[0]


def test_train_fusion_cli(sim, tmp_path):
    for k in ("a", "b"):
        assert main(["train-fusion", "--manifest", str(sim / "fusion/manifest.json"),
                     "--epochs", "50", "--out", str(tmp_path / f"{k}.json")]) == 0
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()
    main(["train-fusion", "--manifest", str(sim / "fusion/manifest.json"), "--epochs", "5",
          "--ablate", "object", "--out", str(tmp_path / "c.json")])
    assert fusion.FusionModel.load(tmp_path / "c.json").ablate["object"]


def test_shipped_model_regenerates(tmp_path):
    assert main(["simulate", "--seed", "0", "--out", str(tmp_path), "--frames", "1",
                 "--fusion", "400"]) == 0
    assert main(["train-fusion", "--manifest", str(tmp_path / "fusion/manifest.json"),
                 "--out", str(tmp_path / "m.json")]) == 0
    assert (tmp_path / "m.json").read_bytes() == pipeline.SHIPPED_MODEL.read_bytes()


def test_config_validation(tmp_path):
    with pytest.raises(SchemaError):
        pipeline.PipelineConfig.load(None, cameras=str(tmp_path / "nope.json"))
    (tmp_path / "c.json").write_text(json.dumps({"fps": -1}))
    with pytest.raises(SchemaError):
        pipeline.PipelineConfig.load(tmp_path / "c.json")
    (tmp_path / "u.json").write_text(json.dumps({"colour": "red"}))
    with pytest.raises(SchemaError):
        pipeline.PipelineConfig.load(tmp_path / "u.json")
    (tmp_path / "ok.json").write_text(json.dumps({"fps": 25, "cameras": "c.json"}))
    cfg = pipeline.PipelineConfig.load(tmp_path / "ok.json", seed=4)
    assert cfg.fps == 25 and cfg.seed == 4 and Path(cfg.cameras) == tmp_path / "c.json"
