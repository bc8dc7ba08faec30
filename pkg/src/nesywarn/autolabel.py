"""Automatic bounding-box labels from semantic grids.

Cells of each object class are clustered with DBSCAN; every cluster becomes a
tight axis-aligned box in cell units (a cell ``(u, v)`` spans ``[u, u+1)``).
"""
from __future__ import annotations

import hashlib
import json
import os
from collections import deque
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from .sensors import CLASS_NAMES, SemanticGrid

NOISE = -1
LABEL_CLASSES = ("vehicle", "pedestrian", "traffic_light", "traffic_sign")
MAX_LABEL_RANGE = 200.0
VISIBILITY_THRESHOLD = 0.4
TEST_FRACTION = 0.2


@dataclass(frozen=True)
class DbscanParams:
    eps: float = 1.5
    min_pts: int = 3

    def __post_init__(self):
        if self.eps <= 0:
            raise ValueError("eps must be positive")
        if self.min_pts < 1:
            raise ValueError("min_pts must be at least 1")


@dataclass(frozen=True)
class LabeledBox:
    cls: str
    box: tuple
    instance: Optional[str] = None
    range: float = float("nan")

    @property
    def area(self) -> float:
        return (self.box[2] - self.box[0]) * (self.box[3] - self.box[1])


def dbscan(points, params: DbscanParams = DbscanParams()) -> np.ndarray:
    """Label each point with a cluster index, or ``NOISE``.

    A point is core when at least ``min_pts`` points (itself included) lie
    within ``eps``. Core points are grouped by density connectivity; a border
    point joins the cluster of its nearest core neighbor (ties go to the core
    point with the smallest coordinates), so the partition never depends on
    input order.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    n = len(pts)
    labels = np.full(n, NOISE, dtype=int)
    if n == 0:
        return labels
    if not np.isfinite(pts).all():
        raise ValueError("points must be finite")
    neighbors = cKDTree(pts).query_ball_point(pts, r=params.eps)
    core = np.fromiter((len(nb) >= params.min_pts for nb in neighbors), dtype=bool, count=n)
    cluster = 0
    for i in range(n):
        if not core[i] or labels[i] != NOISE:
            continue
        labels[i] = cluster
        queue = deque([i])
        while queue:
            j = queue.popleft()
            for k in neighbors[j]:
                if core[k] and labels[k] == NOISE:
                    labels[k] = cluster
                    queue.append(k)
        cluster += 1
    for i in np.flatnonzero(~core):
        cands = [k for k in neighbors[i] if core[k]]
        if cands:
            best = min(cands, key=lambda k: (np.hypot(*(pts[k] - pts[i])), pts[k][0], pts[k][1]))
            labels[i] = labels[best]
    return labels


def extract_boxes(grid: SemanticGrid, params=None) -> list:
    """One box per DBSCAN cluster of each labelled class; noise cells are dropped.

    ``params`` is a single :class:`DbscanParams` or a dict keyed by class name.
    """
    if params is None:
        params = DbscanParams()
    boxes = []
    vis_ranges = _instance_ranges(grid)
    for name in LABEL_CLASSES:
        p = params.get(name, DbscanParams()) if isinstance(params, dict) else params
        vs, us = np.nonzero(grid.cls == CLASS_NAMES.index(name))
        if len(us) == 0:
            continue
        labels = dbscan(np.column_stack([us, vs]), p)
        for c in range(labels.max() + 1):
            sel = labels == c
            cu, cv = us[sel], vs[sel]
            inst = grid.instance[cv, cu]
            inst = inst[inst >= 0]
            iid = grid.ids[np.bincount(inst).argmax()] if len(inst) else None
            rng = vis_ranges.get(iid, float(grid.depth[cv, cu].min()))
            boxes.append(LabeledBox(name, (int(cu.min()), int(cv.min()), int(cu.max()) + 1, int(cv.max()) + 1),
                                    iid, rng))
    return boxes


def _instance_ranges(grid: SemanticGrid) -> dict:
    out = {}
    for k, iid in enumerate(grid.ids):
        d = grid.depth[grid.instance == k]
        if d.size:
            out[iid] = float(d.min())
    return out


def filter_labels(boxes: list, truth=None, visibility: Optional[dict] = None,
                  max_range: float = MAX_LABEL_RANGE, threshold: float = VISIBILITY_THRESHOLD) -> list:
    """Drop far-away boxes (range >= ``max_range``) and heavily occluded instances.

    ``truth`` is a ``ground_truth`` list; when given, instance ranges come from
    it rather than from the box's own range field.
    """
    ranges = {t.id: t.range for t in truth} if truth is not None else {}
    kept = []
    for b in boxes:
        r = ranges.get(b.instance, b.range)
        if r >= max_range:
            continue
        if visibility is not None and b.instance is not None and visibility.get(b.instance, 1.0) < threshold:
            continue
        kept.append(b)
    return kept


def iou(a, b) -> float:
    """Intersection over union of two ``(x_min, y_min, x_max, y_max)`` boxes."""
    iw = min(a[2], b[2]) - max(a[0], b[0])
    ih = min(a[3], b[3]) - max(a[1], b[1])
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return inter / union if union > 0 else 0.0


def split_frames(n: int, test_fraction: float = TEST_FRACTION) -> tuple:
    """Deterministic train/test split: the frames whose index hashes lowest go to test."""
    order = sorted(range(n), key=lambda i: hashlib.sha256(f"frame-{i}".encode()).hexdigest())
    n_test = int(round(n * test_fraction))
    test = sorted(order[:n_test])
    train = sorted(order[n_test:])
    return train, test


def format_label(box: LabeledBox) -> str:
    return "{} {} {} {} {} {:.3f}".format(box.cls, *(_num(v) for v in box.box), box.range)


def _num(v):
    return int(v) if float(v).is_integer() else f"{v:.3f}"


def write_dataset(frames, out_dir) -> dict:
    """Write ``frames/NNNNNN.labels`` per frame plus ``manifest.json``.

    ``frames`` yields ``(grid, boxes)`` pairs; grids are not stored. Returns
    the manifest.
    """
    out = Path(out_dir)
    frame_dir = out / "frames"
    try:
        frame_dir.mkdir(parents=True, exist_ok=True)
        if not os.access(frame_dir, os.W_OK):
            raise PermissionError(f"not writable: {frame_dir}")
        names = []
        n_boxes = 0
        for i, (_grid, boxes) in enumerate(frames):
            name = f"{i:06d}.labels"
            (frame_dir / name).write_text("".join(format_label(b) + "\n" for b in boxes))
            names.append(f"frames/{name}")
            n_boxes += len(boxes)
        train, test = split_frames(len(names))
        manifest = {
            "train": [names[i] for i in train],
            "test": [names[i] for i in test],
            "counts": {"frames": len(names), "train": len(train), "test": len(test), "boxes": n_boxes},
        }
        (out / "manifest.json").write_text(json.dumps(manifest, indent=1))
    except OSError as e:
        raise OSError(e.errno, f"cannot write dataset to {out}: {e.strerror or e}", str(out)) from e
    return manifest
