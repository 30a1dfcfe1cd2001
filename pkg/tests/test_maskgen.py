import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from afprim.geom import Mask
from afprim.maskgen import WindowSpec, slide_window_masks, window_positions


def _brute(obj, spec):
    out = []
    H, W = obj.shape
    rows, cols = np.flatnonzero(obj.any(1)), np.flatnonzero(obj.any(0))
    if len(rows) == 0:
        return out
    for y in range(0, H - spec.height + 1, spec.stride_y):
        for x in range(0, W - spec.width + 1, spec.stride_x):
            win = np.zeros_like(obj)
            win[y:y + spec.height, x:x + spec.width] = True
            cx, cy = x + spec.width // 2, y + spec.height // 2
            if not (cols[0] <= cx <= cols[-1] and rows[0] <= cy <= rows[-1]):
                continue
            score = (win & obj).sum() / (win | obj).sum()
            if spec.iou_lo <= score <= spec.iou_hi:
                out.append(win)
    return out


def test_full_frame_keeps_every_window():
    spec = WindowSpec(20, 10, 5, 5, 0.0, 1.0)
    obj = Mask.from_array(np.ones((40, 60), bool))
    assert len(slide_window_masks(obj, spec)) == len(list(window_positions(60, 40, spec)))


def test_empty_object_gives_nothing():
    assert slide_window_masks(Mask(50, 50), WindowSpec(10, 10, 5, 5)) == []


def test_centered_square_matches_exhaustive_scan():
    obj = np.zeros((100, 100), bool)
    obj[25:75, 25:75] = True
    for stride, count in ((50, 0), (25, 3), (5, 95)):
        spec = WindowSpec(50, 50, stride, stride, 0.2, 1.0)
        got = [m.bits for m in slide_window_masks(Mask.from_array(obj), spec)]
        want = _brute(obj, spec)
        assert len(got) == len(want) == count
        for g, w in zip(got, want):
            assert np.array_equal(g, w)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0, 0.5), st.floats(0, 0.5))
def test_random_objects_match_oracle_and_are_monotone(seed, lo, width):
    rng = np.random.default_rng(seed)
    obj = np.zeros((48, 64), bool)
    y0, x0 = rng.integers(0, 30, 2)
    obj[y0:y0 + rng.integers(5, 18), x0:x0 + rng.integers(5, 30)] = True
    spec = WindowSpec(16, 12, 4, 3, lo, min(1.0, lo + width))
    got = slide_window_masks(Mask.from_array(obj), spec)
    want = _brute(obj, spec)
    assert len(got) == len(want)
    for g, w in zip(got, want):
        assert np.array_equal(g.bits, w)
        ys, xs = np.nonzero(g.bits)
        assert g.area == (np.ptp(ys) + 1) * (np.ptp(xs) + 1)
    wider = WindowSpec(16, 12, 4, 3, max(0.0, lo - 0.1), min(1.0, lo + width + 0.1))
    assert len(slide_window_masks(Mask.from_array(obj), wider)) >= len(got)


def test_object_overlap_mode():
    obj = np.zeros((20, 20), bool)
    obj[5:10, 5:10] = True
    spec = WindowSpec(10, 10, 10, 10, 1.0, 1.0, overlap="object")
    got = slide_window_masks(Mask.from_array(obj), spec)
    assert len(got) == 1 and got[0].bits[0:10, 0:10].all()


@pytest.mark.parametrize("kw", [dict(stride_x=0), dict(stride_x=11), dict(iou_lo=0.6, iou_hi=0.5),
                                dict(overlap="area")])
def test_window_spec_validation(kw):
    base = dict(width=10, height=10, stride_x=5, stride_y=5, iou_lo=0.0, iou_hi=1.0)
    base.update(kw)
    with pytest.raises(ValueError):
        WindowSpec(**base)
