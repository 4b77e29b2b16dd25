import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from egohoi.heatmap import encode_gaussian, localization_target
from egohoi.locator import (HandObservation, decode_locator, observation_from_locator,
                            select_right_hand, update_track)


def stack_with(right=None, left=None):
    s = np.zeros((2, 28, 48), np.float32)
    for c, spec in ((0, left), (1, right)):
        if spec:
            (u, v), peak = spec
            s[c] = peak * encode_gaussian([(u, v)], (48, 28), 1.5)[0]
    return s


def test_right_hand_scaled_to_frame():
    out = decode_locator(stack_with(right=((24, 14), 0.9)), (1920, 1080))
    assert out.classification == "right"
    u, v, c = out.hands["right"]
    assert abs(u - 980) <= 20 and abs(v - 560) <= 1080 / 28 / 2
    assert c == pytest.approx(0.9)


def test_two_hands():
    out = decode_locator(stack_with(right=((30, 10), 0.9), left=((10, 10), 0.9)), (640, 480))
    assert out.classification == "two_hands"


def test_none_below_threshold():
    out = decode_locator(stack_with(right=((30, 10), 0.2), left=((10, 10), 0.1)), (640, 480))
    assert out.classification == "none" and out.hands == {}


def test_round_trip_within_one_cell(rng):
    W, H = 1280, 720
    for _ in range(200):
        x0, y0 = rng.uniform(0, W - 100), rng.uniform(0, H - 100)
        box = (x0, y0, x0 + rng.uniform(20, 100), y0 + rng.uniform(20, 100))
        out = decode_locator(localization_target([(box, "right")], (W, H)), (W, H))
        u, v, _ = out.hands["right"]
        assert abs(u - (box[0] + box[2]) / 2) <= W / 48
        assert abs(v - (box[1] + box[3]) / 2) <= H / 28


@settings(max_examples=80, deadline=None)
@given(st.floats(0.05, 1.0), st.floats(0, 1), st.floats(0, 1))
def test_classification_invariant_to_scaling(lam, a, b):
    # peak positions never move; with the cutoff scaled along, the class is unchanged
    s = stack_with(right=((30, 10), a), left=((10, 20), b))
    base = decode_locator(s, (640, 480))
    scaled = decode_locator(s * np.float32(lam), (640, 480), conf_threshold=0.25 * lam)
    for hand in set(base.hands) & set(scaled.hands):
        assert base.hands[hand][:2] == scaled.hands[hand][:2]
    if all(abs(x - 0.25) > 1e-4 for x in (a, b)):
        assert scaled.classification == base.classification


def test_select_right_hand():
    assert select_right_hand(HandObservation(0, "two_hands", [(100, 50, 1), (400, 60, 1)]))[:2] \
        == (400, 60)
    assert select_right_hand(HandObservation(0, "right", [(200, 100, 1)]))[:2] == (200, 100)
    assert select_right_hand(HandObservation(0, "left", [(200, 100, 1)])) is None


def test_observation_validation():
    with pytest.raises(ValueError):
        HandObservation(0, "two_hands", [(1, 2, 1)])
    with pytest.raises(ValueError):
        HandObservation(0, "both", [(1, 2, 1)])


def test_observation_from_locator():
    out = decode_locator(stack_with(right=((30, 10), 0.9), left=((10, 10), 0.9)), (640, 480))
    obs = observation_from_locator(3, out)
    assert obs.hand_id == "two_hands"
    assert select_right_hand(obs)[0] == out.hands["right"][0]
    assert observation_from_locator(3, decode_locator(stack_with(), (640, 480))) is None


def test_update_track():
    assert update_track((0, 0), [(50, 50)] * 21) == (50, 50)
    assert update_track((0, 0), [(0, 0), (100, 100)]) == (50, 50)
    assert update_track((7, 8), []) == (7, 8)
