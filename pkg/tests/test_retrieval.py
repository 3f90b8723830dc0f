import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from halfcnn import retrieval
from halfcnn.errors import DegenerateError, InputError, ShapeError
from halfcnn.groundtruth import Window, gaussian_map, renormalize_range
from halfcnn.tensor import block_downsample

from oracles import bfs_components, rect_iou


def ideal_map(win, canvas=256, factor=4):
    return renormalize_range(block_downsample(gaussian_map([win], canvas, canvas), factor))


def test_component_examples():
    m = np.full((1, 8, 8), 0.1)
    m[0, 2:4, 2:4] = 0.8
    assert len(retrieval.components(m)) == 1
    m[0, 5:7, 5:7] = 0.8
    assert len(retrieval.components(m)) == 2
    d = np.full((1, 4, 4), 0.1)
    d[0, 0, 0] = d[0, 1, 1] = 0.5
    assert len(retrieval.components(d)) == 1


def test_components_match_bfs_oracle():
    rng = np.random.default_rng(0)
    for _ in range(50):
        m = rng.uniform(size=(1, rng.integers(1, 15), rng.integers(1, 15)))
        got = [sorted((int(x), int(y)) for x, y, _ in c.cells) for c in retrieval.components(m, 0.6)]
        assert got == bfs_components(m[0] > 0.6)


def test_components_partition():
    m = np.random.default_rng(1).uniform(size=(1, 12, 12))
    comps = retrieval.components(m, 0.5)
    cells = [tuple(c[:2]) for comp in comps for c in comp.cells]
    assert len(cells) == len(set(cells)) == int((m > 0.5).sum())


def test_components_need_single_channel():
    with pytest.raises(ShapeError):
        retrieval.components(np.zeros((2, 3, 3)))


def test_fit_ideal_gaussian():
    found = retrieval.detect(ideal_map(Window(128, 128, 96, 96)), 4)
    assert len(found) == 1
    assert abs(found[0].w - 96) <= 9.6 and abs(found[0].h - 96) <= 9.6
    assert abs(found[0].cx - 128) < 0.5 and abs(found[0].cy - 128) < 0.5


def test_fit_single_cell_clamps_to_factor():
    comp = retrieval.Component(1, np.array([[3.0, 4.0, 0.7]]))
    win = retrieval.fit_window(comp, 4)
    assert win.w == win.h == 4
    assert (win.cx, win.cy) == (3.5 * 4 - 0.5, 4.5 * 4 - 0.5)


def test_fit_mirror_symmetric_center():
    cells = np.array([[2, 1, 0.5], [3, 1, 0.8], [4, 1, 0.5], [3, 2, 0.3]], dtype=float)
    win = retrieval.fit_window(retrieval.Component(1, cells), 1)
    assert win.cx == 3.0


def test_fit_degenerate():
    with pytest.raises(DegenerateError):
        retrieval.fit_window(retrieval.Component(1, np.array([[0.0, 0.0, 0.1]])), 4)
    with pytest.raises(DegenerateError):
        retrieval.fit_window(retrieval.Component(1, np.zeros((0, 3))), 4)


def test_round_trip_100_windows():
    rng = np.random.default_rng(2024)
    good = 0
    for _ in range(100):
        w, h = rng.uniform(32, 160, size=2)
        cx, cy = rng.uniform(w / 2, 256 - w / 2), rng.uniform(h / 2, 256 - h / 2)
        win = Window(cx, cy, w, h)
        found = retrieval.detect(ideal_map(win), 4)
        good += bool(found) and max(retrieval.iou(f, win) for f in found) >= 0.8
    assert good >= 98


def test_iou_examples():
    a = Window(0.5, 0.5, 1, 1)
    assert retrieval.iou(a, a) == 1.0
    assert retrieval.iou(a, Window(5, 5, 1, 1)) == 0.0
    assert retrieval.iou(a, Window(1.0, 0.5, 1, 1)) == pytest.approx(1 / 3, abs=1e-15)


windows = st.builds(Window, st.floats(-50, 50), st.floats(-50, 50), st.floats(0.5, 40), st.floats(0.5, 40))


@settings(max_examples=200, deadline=None)
@given(windows, windows)
def test_iou_properties(a, b):
    v = retrieval.iou(a, b)
    assert v == retrieval.iou(b, a)
    assert 0.0 <= v <= 1.0
    assert v == pytest.approx(rect_iou(a.bounds, b.bounds), abs=1e-12)


def test_matching_is_greedy_one_to_one():
    t = [Window(10, 10, 10, 10), Window(30, 10, 10, 10)]
    p = [Window(10, 10, 10, 10), Window(11, 10, 10, 10), Window(31, 10, 10, 10)]
    pairs = retrieval.match_windows(p, t)
    assert sorted((i, j) for i, j, _ in pairs) == [(0, 0), (2, 1)]


def test_retrieval_rate_examples():
    truth = [[Window(10, 10, 8, 8)], [Window(20, 20, 8, 8), Window(40, 40, 8, 8)]]
    assert retrieval.retrieval_rate(truth, truth) == 1.0
    assert retrieval.retrieval_rate([[], []], truth) == 0.0
    assert retrieval.retrieval_rate([[truth[0][0]], []], truth) == pytest.approx(1 / 3)
    assert retrieval.retrieval_rate([[]], [[]]) == 1.0
    with pytest.raises(ShapeError):
        retrieval.retrieval_rate([[]], truth)


def test_hold_one_is_default_and_bad_hold_rejected():
    comp = retrieval.components(ideal_map(Window(100, 90, 60, 80)))[0]
    assert retrieval.fit_window(comp, 4, 1) == retrieval.fit_window(comp, 4)
    with pytest.raises(InputError):
        retrieval.fit_window(comp, 4, 0)


def test_hold_correction_on_block_constant_maps():
    # a block-constant map is what a pool + up-sample output layer can produce
    from halfcnn.layers import upsample_forward

    rng = np.random.default_rng(8)
    plain, held = [], []
    for _ in range(40):
        w, h = rng.uniform(48, 128, size=2)
        win = Window(rng.uniform(w / 2, 256 - w / 2), rng.uniform(h / 2, 256 - h / 2), w, h)
        blocky = upsample_forward(block_downsample(ideal_map(win), 2), 2)
        for hold, acc in ((1, plain), (2, held)):
            found = retrieval.detect(blocky, 4, hold=hold)
            acc.append(max(retrieval.iou(f, win) for f in found))
    assert np.median(held) > np.median(plain)
    assert np.median(held) > 0.85
