import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hasaseg.prompts import (DONT_CARE, NEGATIVE, POSITIVE, BoundingBox, JitterSpec, SlicePrompt,
                             extract_prompt, read_prompts, sample_points, tight_box, write_prompts)
from oracles import min_distance_to, signed_distance_all_pairs


def rng(seed=0):
    return np.random.default_rng(seed)


def scan_extents(mask):
    xs, ys = [], []
    for x in range(mask.shape[0]):
        for y in range(mask.shape[1]):
            if mask[x, y]:
                xs.append(x)
                ys.append(y)
    return min(xs), min(ys), max(xs), max(ys)


def test_empty_slice_gives_no_prompt():
    assert extract_prompt(np.zeros((16, 16), np.uint8), JitterSpec(), rng()) is None


def test_single_voxel():
    m = np.zeros((32, 32), np.uint8)
    m[10, 12] = 1
    p = extract_prompt(m, JitterSpec(max_shift=0), rng(), z=4)
    assert p.z == 4
    assert p.box.as_list() == [10, 12, 10, 12]
    pos = [(q.x, q.y) for q in p.points if q.label == POSITIVE]
    assert pos == [(10, 12), (10, 12)]


def test_rectangle_box_matches_scan():
    m = np.zeros((64, 64), np.uint8)
    m[20:41, 30:51] = 1
    p = extract_prompt(m, JitterSpec(max_shift=0), rng())
    assert p.box.as_list() == [20, 30, 40, 50]
    assert p.box.as_list() == list(scan_extents(m))


def test_non_binary_rejected():
    with pytest.raises(ValueError):
        extract_prompt(np.full((4, 4), 2), JitterSpec(), rng())


def test_points_on_small_square():
    m = np.zeros((100, 100), bool)
    m[40:45, 60:65] = True
    box = tight_box(m)
    for seed in range(20):
        pts = sample_points(m, box, rng(seed))
        assert [p.label for p in pts] == [POSITIVE] * 2 + [NEGATIVE] * 2 + [DONT_CARE]
        for p in pts[:2]:
            assert m[p.x, p.y]
        # brute-force distance from each negative to the nearest foreground voxel
        for d in min_distance_to(m, [(p.x, p.y) for p in pts[2:4]]):
            assert d > 3
        dc = pts[4]
        assert abs(signed_distance_all_pairs(m)[dc.x, dc.y]) <= 2


def test_full_foreground_errors():
    m = np.ones((8, 8), bool)
    with pytest.raises(ValueError, match="no background"):
        sample_points(m, BoundingBox(0, 0, 7, 7), rng())


def test_negative_fallback_when_crowded():
    m = np.ones((8, 8), bool)
    m[0, 0] = False
    pts = sample_points(m, BoundingBox(0, 0, 7, 7), rng())
    assert all((p.x, p.y) == (0, 0) for p in pts if p.label == NEGATIVE)


def test_determinism():
    m = np.zeros((40, 40), bool)
    m[10:25, 12:30] = True
    a = extract_prompt(m, JitterSpec(3, 5), rng(7))
    b = extract_prompt(m, JitterSpec(3, 5), rng(7))
    assert a == b


def random_blob(seed, n=48):
    r = np.random.default_rng(seed)
    cx, cy = r.uniform(8, n - 8, 2)
    ax, ay = r.uniform(2, 7, 2)
    xx, yy = np.mgrid[:n, :n]
    return ((xx - cx) / ax) ** 2 + ((yy - cy) / ay) ** 2 <= 1


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000), st.integers(0, 6))
def test_prompt_geometry_invariants(seed, shift):
    m = random_blob(seed)
    tight = tight_box(m)
    p = extract_prompt(m, JitterSpec(shift), rng(seed))
    for edge, t in zip(p.box.as_list(), tight.as_list()):
        assert abs(edge - t) <= shift
    assert 0 <= p.box.x_min <= p.box.x_max < m.shape[0]
    assert 0 <= p.box.y_min <= p.box.y_max < m.shape[1]
    sd = signed_distance_all_pairs(m)
    for q in p.points:
        if q.label == POSITIVE:
            assert m[q.x, q.y]
        elif q.label == NEGATIVE:
            assert sd[q.x, q.y] < -3
        else:
            assert abs(sd[q.x, q.y]) <= 2


def test_slice_prompt_needs_five_points():
    with pytest.raises(ValueError):
        SlicePrompt(0, BoundingBox(0, 0, 1, 1), ())


def test_jsonl_round_trip(tmp_path):
    m = random_blob(3)
    prompts = [extract_prompt(m, JitterSpec(), rng(z), z=z) for z in range(3)]
    write_prompts(prompts, tmp_path / "p.jsonl")
    lines = (tmp_path / "p.jsonl").read_text().splitlines()
    assert len(lines) == 3
    import json
    first = json.loads(lines[0])
    assert set(first) == {"z", "box", "points"}
    assert set(first["points"][0]) == {"x", "y", "label"}
    back = read_prompts(tmp_path / "p.jsonl")
    assert [back[z] for z in range(3)] == prompts
