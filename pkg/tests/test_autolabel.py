import json
import os

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nesywarn import autolabel as al
from nesywarn.sensors import BACKGROUND, PEDESTRIAN, VEHICLE, SemanticGrid


def bare_grid(cls):
    cls = np.asarray(cls, dtype=np.uint8)
    return SemanticGrid(cls, np.full(cls.shape, 10.0), np.full(cls.shape, -1, dtype=np.int32), [], [], [])


def components_8(mask):
    """Brute-force 8-connected labeling; returns a list of cell sets."""
    seen = np.zeros_like(mask, dtype=bool)
    out = []
    H, W = mask.shape
    for v in range(H):
        for u in range(W):
            if not mask[v, u] or seen[v, u]:
                continue
            comp, stack = set(), [(v, u)]
            seen[v, u] = True
            while stack:
                a, b = stack.pop()
                comp.add((a, b))
                for da in (-1, 0, 1):
                    for db in (-1, 0, 1):
                        x, y = a + da, b + db
                        if 0 <= x < H and 0 <= y < W and mask[x, y] and not seen[x, y]:
                            seen[x, y] = True
                            stack.append((x, y))
            out.append(comp)
    return out


def partition(labels):
    groups = {}
    for i, l in enumerate(labels):
        groups.setdefault(int(l), set()).add(i)
    noise = frozenset(groups.pop(al.NOISE, ()))
    return noise, {frozenset(g) for g in groups.values()}


# -- dbscan ------------------------------------------------------------------

def test_dbscan_empty():
    assert len(al.dbscan([])) == 0


def test_dbscan_triangle_and_noise():
    p = al.DbscanParams(1.5, 2)
    labels = al.dbscan([(0, 0), (0, 1), (1, 0)], p)
    assert len(set(labels)) == 1 and labels[0] != al.NOISE
    labels = al.dbscan([(0, 0), (0, 1), (1, 0), (10, 10)], p)
    assert labels[3] == al.NOISE
    assert len(set(labels[:3])) == 1


def test_dbscan_params_validated():
    with pytest.raises(ValueError):
        al.DbscanParams(0.0, 3)
    with pytest.raises(ValueError):
        al.DbscanParams(1.0, 0)


def test_border_point_joins_cluster():
    # chain of three cores, plus one border point reachable only from the end
    pts = [(0, 0), (1, 0), (2, 0), (3.4, 0)]
    labels = al.dbscan(pts, al.DbscanParams(1.5, 3))
    assert labels[3] == labels[1] != al.NOISE


def brute_dbscan_partition(pts, eps, min_pts):
    """O(n^2) reference for core/noise status and core-point clusters."""
    pts = np.asarray(pts, float)
    n = len(pts)
    d = np.hypot(*(pts[:, None, :] - pts[None, :, :]).transpose(2, 0, 1))
    near = d <= eps
    core = near.sum(1) >= min_pts
    comp = -np.ones(n, int)
    c = 0
    for i in range(n):
        if core[i] and comp[i] < 0:
            stack = [i]
            comp[i] = c
            while stack:
                j = stack.pop()
                for k in np.flatnonzero(near[j] & core):
                    if comp[k] < 0:
                        comp[k] = c
                        stack.append(k)
            c += 1
    noise = {i for i in range(n) if not core[i] and not (near[i] & core).any()}
    clusters = {frozenset(np.flatnonzero(comp == k)) for k in range(c)}
    return core, noise, clusters


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 15), st.integers(0, 15)), max_size=60, unique=True),
       st.sampled_from([1.0, 1.5, 2.0, 3.0]), st.integers(1, 5))
def test_dbscan_matches_brute_force_reference(pts, eps, min_pts):
    labels = al.dbscan(pts, al.DbscanParams(eps, min_pts))
    core, noise, clusters = brute_dbscan_partition(pts, eps, min_pts) if pts else ([], set(), set())
    assert {i for i, l in enumerate(labels) if l == al.NOISE} == noise
    got = {frozenset(i for i in g if core[i]) for g in partition(labels)[1]}
    assert got == clusters


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 20), st.integers(0, 20)), max_size=80, unique=True), st.randoms())
def test_dbscan_partition_independent_of_order(pts, rnd):
    perm = list(range(len(pts)))
    rnd.shuffle(perm)
    a = al.dbscan(pts)
    b = al.dbscan([pts[i] for i in perm])
    remapped = np.empty_like(b)
    remapped[perm] = b
    na, pa = partition(a)
    nb, pb = partition(remapped)
    assert na == nb and pa == pb


# -- extract_boxes ------------------------------------------------------------------

def test_two_disjoint_blobs_two_boxes():
    g = np.zeros((20, 30), np.uint8)
    g[2:6, 3:8] = VEHICLE
    g[10:14, 20:25] = VEHICLE
    boxes = al.extract_boxes(bare_grid(g))
    assert sorted(b.box for b in boxes) == [(3, 2, 8, 6), (20, 10, 25, 14)]
    assert all(b.cls == "vehicle" for b in boxes)


def test_sparse_pedestrian_blob_dropped():
    g = np.zeros((10, 10), np.uint8)
    g[4, 4:6] = PEDESTRIAN  # min_pts - 1 cells
    assert al.extract_boxes(bare_grid(g)) == []


def test_all_background_empty():
    assert al.extract_boxes(bare_grid(np.zeros((8, 8)))) == []


def _random_grids(n, size=64, seed=0):
    rng = np.random.default_rng(seed)
    for _ in range(n):
        p = rng.uniform(0.05, 0.5)
        yield np.where(rng.random((size, size)) < p, VEHICLE, BACKGROUND).astype(np.uint8)


def oracle_boxes(mask):
    out = []
    for comp in components_8(mask):
        vs, us = zip(*comp)
        out.append((min(us), min(vs), max(us) + 1, max(vs) + 1))
    return sorted(out)


def test_extract_boxes_equals_8_connected_oracle_on_500_grids():
    params = al.DbscanParams(1.5, 1)
    for g in _random_grids(500):
        got = sorted(b.box for b in al.extract_boxes(bare_grid(g), params))
        assert got == oracle_boxes(g == VEHICLE)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 64), st.integers(1, 64), st.floats(0, 0.7), st.integers(0, 2**31))
def test_extract_boxes_oracle_any_shape(h, w, p, seed):
    g = np.where(np.random.default_rng(seed).random((h, w)) < p, VEHICLE, BACKGROUND)
    boxes = al.extract_boxes(bare_grid(g), al.DbscanParams(1.5, 1))
    assert sorted(b.box for b in boxes) == oracle_boxes(g == VEHICLE)
    for b in boxes:
        x0, y0, x1, y1 = b.box
        assert 0 <= x0 < x1 <= w and 0 <= y0 < y1 <= h and b.area >= 1


def test_per_class_params():
    g = np.zeros((10, 10), np.uint8)
    g[1, 1:3] = PEDESTRIAN
    boxes = al.extract_boxes(bare_grid(g), {"pedestrian": al.DbscanParams(1.5, 1)})
    assert [b.box for b in boxes] == [(1, 1, 3, 2)]


# -- filtering ------------------------------------------------------------------

def _box(iid, r):
    return al.LabeledBox("vehicle", (0, 0, 2, 2), iid, r)


def test_range_cutoff_at_200m():
    kept = al.filter_labels([_box("a", 199.9), _box("b", 200.0)])
    assert [b.instance for b in kept] == ["a"]


def test_visibility_threshold():
    kept = al.filter_labels([_box("a", 50.0), _box("b", 50.0)], visibility={"a": 0.3, "b": 1.0})
    assert [b.instance for b in kept] == ["b"]


def test_truth_ranges_take_precedence():
    from types import SimpleNamespace

    kept = al.filter_labels([_box("a", 10.0)], truth=[SimpleNamespace(id="a", range=250.0)])
    assert kept == []


@settings(max_examples=60)
@given(st.lists(st.tuples(st.sampled_from("abcdef"), st.floats(0, 400)), max_size=12),
       st.dictionaries(st.sampled_from("abcdef"), st.floats(0, 1)))
def test_filter_output_is_subset(items, vis):
    boxes = [_box(i, r) for i, r in items]
    kept = al.filter_labels(boxes, visibility=vis)
    assert all(k in boxes for k in kept)
    assert all(k.range < al.MAX_LABEL_RANGE for k in kept)


# -- iou ------------------------------------------------------------------

def test_iou_examples():
    assert al.iou((0, 0, 1, 1), (0, 0, 1, 1)) == 1.0
    assert al.iou((0, 0, 1, 1), (2, 2, 3, 3)) == 0.0
    assert al.iou((0, 0, 1, 1), (0.5, 0, 1.5, 1)) == pytest.approx(1 / 3)


box_st = st.tuples(st.floats(0, 100), st.floats(0, 100), st.floats(0.1, 50), st.floats(0.1, 50)).map(
    lambda t: (t[0], t[1], t[0] + t[2], t[1] + t[3]))


@given(box_st, box_st)
def test_iou_symmetric_and_bounded(a, b):
    assert al.iou(a, b) == al.iou(b, a)
    assert 0.0 <= al.iou(a, b) <= 1.0
    assert al.iou(a, a) == pytest.approx(1.0)


# -- dataset writing ------------------------------------------------------------------

def test_5600_frames_split_4480_1120(tmp_path):
    m = al.write_dataset(((None, []) for _ in range(5600)), tmp_path)
    assert m["counts"]["train"] == 4480 and m["counts"]["test"] == 1120
    assert not set(m["train"]) & set(m["test"])
    assert json.loads((tmp_path / "manifest.json").read_text()) == m
    assert len(os.listdir(tmp_path / "frames")) == 5600


def test_zero_frames(tmp_path):
    m = al.write_dataset([], tmp_path)
    assert m["counts"] == {"frames": 0, "train": 0, "test": 0, "boxes": 0}


def test_label_file_format(tmp_path):
    al.write_dataset([(None, [al.LabeledBox("vehicle", (3, 4, 10, 12), "x", 42.5)])], tmp_path)
    assert (tmp_path / "frames" / "000000.labels").read_text() == "vehicle 3 4 10 12 42.500\n"


def test_unwritable_directory_names_path(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    with pytest.raises(OSError) as e:
        al.write_dataset([], blocker / "sub")
    assert str(blocker / "sub") in str(e.value)


def test_split_is_deterministic():
    assert al.split_frames(100) == al.split_frames(100)
    train, test = al.split_frames(100)
    assert sorted(train + test) == list(range(100)) and len(test) == 20
