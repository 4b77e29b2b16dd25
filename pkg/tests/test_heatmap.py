import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from egohoi import heatmap
from egohoi.errors import EmptyHeatmap, SchemaError, SideExceedsFrame
from egohoi.heatmap import (decode_all, decode_peak, encode_gaussian, localization_target,
                            read_hmap, roi_crop, write_hmap)


def brute_argmax(ch):
    best, pos = -np.inf, None
    for v in range(ch.shape[0]):
        for u in range(ch.shape[1]):
            if ch[v, u] > best:
                best, pos = ch[v, u], (u, v)
    return pos


def test_peak_at_keypoint():
    s = encode_gaussian([(16, 16)], (32, 32), 2.0)
    assert s.shape == (1, 32, 32) and s.dtype == np.float32
    assert decode_peak(s, 0) == (16, 16, 1.0)


def test_corner_keypoint():
    assert decode_peak(encode_gaussian([(0, 0)], (32, 32), 2.0), 0)[:2] == (0, 0)


def test_channel_independence():
    s = encode_gaussian([(3, 5), (20, 9)], (32, 32), 1.5)
    assert decode_peak(s, 0)[:2] == (3, 5)
    assert decode_peak(s, 1)[:2] == (20, 9)


def test_empty_channel():
    with pytest.raises(EmptyHeatmap):
        decode_peak(np.zeros((1, 4, 4), np.float32), 0)


def test_tie_break_row_major():
    s = np.zeros((1, 4, 4), np.float32)
    s[0, 2, 1] = s[0, 1, 3] = s[0, 2, 0] = 0.7
    assert decode_peak(s, 0)[:2] == (3, 1)


def test_thousand_random_encodes_match_brute_force(rng):
    for _ in range(1000):
        W, H = rng.integers(4, 40, size=2)
        u, v = rng.integers(0, W), rng.integers(0, H)
        s = encode_gaussian([(u, v)], (W, H), rng.uniform(0.5, 8))
        assert decode_peak(s, 0)[:2] == (u, v) == brute_argmax(s[0])


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 6), st.floats(0.5, 8.0), st.integers(0, 2**32 - 1))
def test_round_trip_any_sigma_and_channels(C, sigma, seed):
    r = np.random.default_rng(seed)
    W, H = int(r.integers(2, 48)), int(r.integers(2, 48))
    kp = np.column_stack([r.integers(0, W, C), r.integers(0, H, C)])
    uv, peak = decode_all(encode_gaussian(kp, (W, H), sigma))
    np.testing.assert_array_equal(uv, kp)
    np.testing.assert_array_equal(peak, 1.0)


@settings(max_examples=50, deadline=None)
@given(st.floats(1e-3, 1.0), st.floats(1e-3, 1e3), st.integers(0, 2**32 - 1))
def test_scaling_properties(lam, big, seed):
    r = np.random.default_rng(seed)
    ch = r.random((1, 10, 12)).astype(np.float32)
    u, v, c = decode_peak(ch, 0)
    u2, v2, c2 = decode_peak(ch * np.float32(lam), 0)
    assert c2 <= c and (u2, v2) == (u, v)
    assert decode_peak(ch * np.float32(big), 0)[:2] == (u, v)


def test_locator_target_centre():
    s = localization_target([((860, 440, 1060, 640), "right")], (1920, 1080))
    assert s.shape == (2, 28, 48)
    assert decode_peak(s, 1)[:2] == (24, 14)
    assert not s[0].any()


def test_locator_target_empty():
    assert not localization_target([], (640, 480)).any()


def test_locator_two_boxes_match_direct_max():
    boxes = [((100, 100, 200, 200), "left"), ((900, 500, 1000, 600), "left")]
    s = localization_target(boxes, (1280, 720))
    ys, xs = np.mgrid[0:28, 0:48]
    direct = np.zeros((28, 48))
    for (x0, y0, x1, y1), _ in boxes:
        cu, cv = (x0 + x1) / 2 * 48 / 1280, (y0 + y1) / 2 * 28 / 720
        direct = np.maximum(direct, np.exp(-((xs - cu) ** 2 + (ys - cv) ** 2) / (2 * 1.5**2)))
    np.testing.assert_allclose(s[0], direct, atol=1e-6)


def test_roi_interior():
    b = roi_crop((640, 480), (100, 100), 64)
    assert b.bounds == (68, 68, 132, 132) and not b.clamped


def test_roi_corner_shift():
    b = roi_crop((640, 480), (0, 0), 64)
    assert b.bounds == (0, 0, 64, 64) and b.clamped


def test_roi_too_large():
    with pytest.raises(SideExceedsFrame):
        roi_crop((640, 480), (320, 240), 10000)


@settings(max_examples=100, deadline=None)
@given(st.floats(-100, 800), st.floats(-100, 600), st.integers(1, 480))
def test_roi_always_inside(u, v, side):
    b = roi_crop((640, 480), (u, v), side)
    x0, y0, x1, y1 = b.bounds
    assert 0 <= x0 and 0 <= y0 and x1 <= 640 and y1 <= 480 and b.side == side


def test_hmap_round_trip(tmp_path, rng):
    s = rng.random((3, 7, 9)).astype(np.float32)
    write_hmap(tmp_path / "a.hmap", s)
    raw = (tmp_path / "a.hmap").read_bytes()
    assert raw[:4] == b"HMAP" and len(raw) == 16 + 4 * s.size
    back = read_hmap(tmp_path / "a.hmap")
    assert back.tobytes() == s.tobytes()


def test_hmap_rejects_garbage(tmp_path):
    (tmp_path / "b.hmap").write_bytes(b"NOPE" + bytes(20))
    with pytest.raises(SchemaError):
        read_hmap(tmp_path / "b.hmap")
    write_hmap(tmp_path / "c.hmap", np.ones((1, 2, 2), np.float32))
    (tmp_path / "c.hmap").write_bytes((tmp_path / "c.hmap").read_bytes()[:-4])
    with pytest.raises(SchemaError):
        read_hmap(tmp_path / "c.hmap")


def test_constants():
    assert heatmap.LOCATOR_GRID == (48, 28)
    assert heatmap.POSE_GRID == (32, 32)
