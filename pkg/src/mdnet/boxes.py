"""Box geometry: conversions, IoU, offset encoding, NMS.

Boxes are normalised to the unit square.  Center form is (cx, cy, w, h);
corner form is (xmin, ymin, xmax, ymax).  Array arguments use float64 so the
encode/decode round trip holds to 1e-6.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ContractError


@dataclass
class GroundTruthBox:
    """Annotated object: class id >= 1 (0 is background), center-form box."""

    class_id: int
    cx: float
    cy: float
    w: float
    h: float

    def center_array(self):
        return np.array([self.cx, self.cy, self.w, self.h], dtype=np.float64)


@dataclass
class Detection:
    """Scored prediction with a corner-form box."""

    class_id: int
    score: float
    xmin: float
    ymin: float
    xmax: float
    ymax: float

    def corner_array(self):
        return np.array([self.xmin, self.ymin, self.xmax, self.ymax], dtype=np.float64)


def center_to_corner(boxes):
    boxes = np.asarray(boxes, dtype=np.float64)
    half = boxes[..., 2:] / 2.0
    return np.concatenate([boxes[..., :2] - half, boxes[..., :2] + half], axis=-1)


def corner_to_center(boxes):
    boxes = np.asarray(boxes, dtype=np.float64)
    wh = boxes[..., 2:] - boxes[..., :2]
    return np.concatenate([boxes[..., :2] + wh / 2.0, wh], axis=-1)


def iou(a, b):
    """Intersection over union of two corner-form boxes; 0 when degenerate."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    ix = min(a[2], b[2]) - max(a[0], b[0])
    iy = min(a[3], b[3]) - max(a[1], b[1])
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    area_a = max(a[2] - a[0], 0.0) * max(a[3] - a[1], 0.0)
    area_b = max(b[2] - b[0], 0.0) * max(b[3] - b[1], 0.0)
    union = area_a + area_b - inter
    if union <= 0:
        return 0.0
    return float(inter / union)


def iou_matrix(a, b):
    """Pairwise IoU between corner-form boxes (A, 4) and (B, 4) -> (A, B)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    ix = np.minimum(a[:, None, 2], b[None, :, 2]) - np.maximum(a[:, None, 0], b[None, :, 0])
    iy = np.minimum(a[:, None, 3], b[None, :, 3]) - np.maximum(a[:, None, 1], b[None, :, 1])
    inter = np.clip(ix, 0, None) * np.clip(iy, 0, None)
    area_a = np.clip(a[:, 2] - a[:, 0], 0, None) * np.clip(a[:, 3] - a[:, 1], 0, None)
    area_b = np.clip(b[:, 2] - b[:, 0], 0, None) * np.clip(b[:, 3] - b[:, 1], 0, None)
    union = area_a[:, None] + area_b[None, :] - inter
    out = np.zeros_like(inter)
    np.divide(inter, union, out=out, where=union > 0)
    return out


def encode(gt, anchor):
    """Offsets from an anchor to a target box (both center form).

    Returns (dcx, dcy, dw, dh) with the center deltas scaled by the anchor
    extent and the size ratios in log space.
    """
    gt = np.asarray(gt, dtype=np.float64)
    anchor = np.asarray(anchor, dtype=np.float64)
    if np.any(gt[..., 2:] <= 0) or np.any(anchor[..., 2:] <= 0):
        raise ContractError("encode requires positive box extents")
    dxy = (gt[..., :2] - anchor[..., :2]) / anchor[..., 2:]
    dwh = np.log(gt[..., 2:] / anchor[..., 2:])
    return np.concatenate([dxy, dwh], axis=-1)


def decode(offsets, anchor):
    """Exact inverse of :func:`encode`; returns a center-form box."""
    offsets = np.asarray(offsets, dtype=np.float64)
    anchor = np.asarray(anchor, dtype=np.float64)
    xy = offsets[..., :2] * anchor[..., 2:] + anchor[..., :2]
    wh = anchor[..., 2:] * np.exp(offsets[..., 2:])
    return np.concatenate([xy, wh], axis=-1)


def smooth_l1(x):
    """Robust loss 0.5*x^2 for |x| < 1, |x| - 0.5 otherwise (numpy)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.where(np.abs(x) < 1.0, 0.5 * x * x, np.abs(x) - 0.5)
    return float(y) if y.ndim == 0 else y


def nms(detections, iou_threshold):
    """Greedy per-class suppression, deterministic under score ties.

    Keeps the highest-scored box of each class and drops any same-class box
    whose IoU with an already-kept box exceeds the threshold.  Ties are broken
    by the original list index, so the result does not depend on input order
    when scores are distinct.
    """
    order = sorted(range(len(detections)), key=lambda i: (-detections[i].score, i))
    kept, kept_idx = [], []
    for i in order:
        det = detections[i]
        box = det.corner_array()
        suppressed = False
        for j, kept_det in zip(kept_idx, kept):
            if kept_det.class_id != det.class_id:
                continue
            if iou(box, kept_det.corner_array()) > iou_threshold:
                suppressed = True
                break
        if not suppressed:
            kept.append(det)
            kept_idx.append(i)
    return kept


def detection_row(image_id, det):
    """One line of the detection text format (normalised, 6 decimals)."""
    return (
        f"{image_id};{det.class_id};{det.score:.6f};"
        f"{det.xmin:.6f};{det.ymin:.6f};{det.xmax:.6f};{det.ymax:.6f}"
    )
