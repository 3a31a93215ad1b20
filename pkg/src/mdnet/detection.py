"""Multi-scale detection: default boxes, matching, losses, head, decoding.

The head consumes the five pyramid maps.  Each level passes through its own
stride-2 3x3 convolution (widths per the level plan) and two 3x3 predictor
convolutions emitting, per cell, K class-score vectors over
``num_classes + 1`` bins (bin 0 is background) and K offset quadruples
ordered (cx, cy, w, h).  Default boxes live on the predictor grids: one
scale per level, K aspect ratios per cell.
"""

from dataclasses import dataclass

import numpy as np

from . import boxes as B
from . import layers
from .errors import DimensionError
from .mfpn import NUM_LEVELS, MfpnModel, mfpn_forward
from .tensor import Tensor, concat, log_softmax, no_grad, smooth_l1, softmax


@dataclass
class LossConfig:
    alpha: float = 1.0
    negative_ratio: float = 3.0
    match_iou: float = 0.5

    def validate(self):
        if self.alpha < 0 or self.negative_ratio <= 0 or self.match_iou <= 0:
            raise ValueError("loss-config fields must be positive (alpha may be 0)")


DEFAULT_SCALES = (0.1, 0.3, 0.5, 0.7, 0.9)
DEFAULT_RATIOS = (1.0, 2.0, 0.5, 3.0, 1.0 / 3.0)


@dataclass
class HeadSpec:
    num_classes: int = 3
    head_channels: tuple = (256, 256, 512, 512, 512)
    scales: tuple = DEFAULT_SCALES
    ratios: tuple = DEFAULT_RATIOS

    @property
    def boxes_per_cell(self):
        return len(self.ratios)

    def validate(self):
        if self.num_classes < 1:
            raise ValueError("num_classes must be >= 1")
        if len(self.head_channels) != NUM_LEVELS or len(self.scales) != NUM_LEVELS:
            raise ValueError(f"head needs {NUM_LEVELS} channel widths and scales")


@dataclass
class DefaultBox:
    cx: float
    cy: float
    w: float
    h: float
    scale_index: int
    cell: tuple
    ratio_index: int


class AnchorSet:
    """All default boxes over the predictor grids, finest level first.

    ``boxes`` is (A, 4) center form; the remaining columns record which
    level, cell, and aspect ratio produced each box.
    """

    def __init__(self, boxes, scale_index, rows, cols, ratio_index, level_sizes):
        self.boxes = boxes
        self.corners = B.center_to_corner(boxes)
        self.scale_index = scale_index
        self.rows = rows
        self.cols = cols
        self.ratio_index = ratio_index
        self.level_sizes = list(level_sizes)

    def __len__(self):
        return len(self.boxes)

    def __getitem__(self, i):
        return DefaultBox(
            cx=float(self.boxes[i, 0]),
            cy=float(self.boxes[i, 1]),
            w=float(self.boxes[i, 2]),
            h=float(self.boxes[i, 3]),
            scale_index=int(self.scale_index[i]),
            cell=(int(self.rows[i]), int(self.cols[i])),
            ratio_index=int(self.ratio_index[i]),
        )


def generate_default_boxes(level_sizes, scales=DEFAULT_SCALES, ratios=DEFAULT_RATIOS):
    """Build K = len(ratios) boxes per cell for each (H, W) grid.

    Box order is level-major, then cells in row-major order, then ratio
    index; centers sit at cell centers, and a level's boxes all share its
    scale s with w = s * sqrt(r), h = s / sqrt(r), clamped to the unit square.
    """
    if len(level_sizes) != len(scales):
        raise ValueError(f"need one scale per level: {len(level_sizes)} vs {len(scales)}")
    k_ratios = len(ratios)
    parts = {k: [] for k in ("boxes", "scale", "rows", "cols", "ratio")}
    for lvl, (h, w) in enumerate(level_sizes):
        s = scales[lvl]
        rows, cols = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
        rows, cols = rows.reshape(-1), cols.reshape(-1)
        n = h * w
        bx = np.empty((n, k_ratios, 4), dtype=np.float64)
        bx[:, :, 0] = ((cols + 0.5) / w)[:, None]
        bx[:, :, 1] = ((rows + 0.5) / h)[:, None]
        for m, r in enumerate(ratios):
            bx[:, m, 2] = min(s * np.sqrt(r), 1.0)
            bx[:, m, 3] = min(s / np.sqrt(r), 1.0)
        parts["boxes"].append(bx.reshape(-1, 4))
        parts["scale"].append(np.full(n * k_ratios, lvl, dtype=np.int64))
        parts["rows"].append(np.repeat(rows, k_ratios))
        parts["cols"].append(np.repeat(cols, k_ratios))
        parts["ratio"].append(np.tile(np.arange(k_ratios, dtype=np.int64), n))
    return AnchorSet(
        boxes=np.concatenate(parts["boxes"]),
        scale_index=np.concatenate(parts["scale"]),
        rows=np.concatenate(parts["rows"]),
        cols=np.concatenate(parts["cols"]),
        ratio_index=np.concatenate(parts["ratio"]),
        level_sizes=level_sizes,
    )


@dataclass
class MatchAssignment:
    """Per-anchor assignment: ground-truth index (-1 = background) and class."""

    anchor_gt: np.ndarray
    anchor_class: np.ndarray

    @property
    def num_positives(self):
        return int((self.anchor_gt >= 0).sum())

    def positives(self):
        return np.flatnonzero(self.anchor_gt >= 0)


def match_anchors(anchors, gts, cfg):
    """Assign anchors to ground truths.

    Two phases: first every ground truth claims its best remaining anchor
    (highest IoU globally, ties by lowest gt index then lowest anchor index),
    so each gt ends up with at least one positive while anchors last.  Then
    any unclaimed anchor whose best IoU exceeds ``cfg.match_iou`` joins as a
    positive for its best gt (ties by lowest gt index).  Everything else is
    background.
    """
    a = len(anchors)
    if a == 0:
        raise ValueError("match_anchors needs a non-empty anchor set")
    anchor_gt = np.full(a, -1, dtype=np.int64)
    anchor_class = np.zeros(a, dtype=np.int64)
    if not gts:
        return MatchAssignment(anchor_gt, anchor_class)

    gt_centers = np.stack([g.center_array() for g in gts])
    gt_corners = B.center_to_corner(gt_centers)
    ious = B.iou_matrix(gt_corners, anchors.corners)  # (G, A)

    work = ious.copy()
    for _ in range(min(len(gts), a)):
        flat = int(np.argmax(work))  # row-major: lowest gt index wins ties
        g, i = divmod(flat, a)
        if work[g, i] < 0:
            break
        anchor_gt[i] = g
        anchor_class[i] = gts[g].class_id
        work[g, :] = -1.0
        work[:, i] = -1.0

    free = anchor_gt < 0
    if np.any(free):
        best_gt = np.argmax(ious[:, free], axis=0)  # argmax -> lowest gt on ties
        best_iou = ious[best_gt, np.flatnonzero(free)]
        take = best_iou > cfg.match_iou
        idx = np.flatnonzero(free)[take]
        anchor_gt[idx] = best_gt[take]
        anchor_class[idx] = np.array([gts[g].class_id for g in best_gt[take]], dtype=np.int64)
    return MatchAssignment(anchor_gt, anchor_class)


# ----------------------------------------------------------------------
# losses
# ----------------------------------------------------------------------
def confidence_loss(logits, assignment, cfg):
    """Classification part of the detection objective (one image).

    ``logits`` is (A, num_classes + 1).  Positives contribute their matched
    class's negative log-probability; background anchors are mined hard:
    sorted by descending background loss and truncated to
    ``negative_ratio * |Pos|`` (one negative is kept when there are no
    positives at all, so a background-only image still yields a signal).
    """
    a = logits.shape[0]
    lsm = log_softmax(logits, axis=1)
    pos = assignment.positives()
    neg_pool = np.flatnonzero(assignment.anchor_gt < 0)

    if len(pos):
        n_keep = int(cfg.negative_ratio * len(pos))
    else:
        n_keep = 1 if a > 0 else 0
    n_keep = min(n_keep, len(neg_pool))

    total = None
    if len(pos):
        cls = assignment.anchor_class[pos]
        total = -(lsm.gather((pos, cls)).sum())
    if n_keep > 0:
        bg_loss = -lsm.data[neg_pool, 0]
        order = np.argsort(-bg_loss, kind="stable")[:n_keep]
        keep = neg_pool[order]
        neg_term = -(lsm.gather((keep, np.zeros(n_keep, dtype=np.int64))).sum())
        total = neg_term if total is None else total + neg_term
    if total is None:
        total = Tensor(np.zeros((), dtype=logits.dtype))
    return total


def localization_loss(offsets, assignment, gts, anchors):
    """Robust-loss sum over positive anchors' offset residuals (one image)."""
    pos = assignment.positives()
    if len(pos) == 0:
        return Tensor(np.zeros((), dtype=offsets.dtype))
    gt_centers = np.stack([g.center_array() for g in gts])
    targets = B.encode(gt_centers[assignment.anchor_gt[pos]], anchors.boxes[pos])
    pred = offsets.gather((pos,))
    diff = pred - Tensor(targets.astype(offsets.dtype))
    return smooth_l1(diff).sum()


def total_loss(conf, loc, num_pos, cfg):
    """Combined objective (conf + alpha * loc) / max(num_pos, 1)."""
    n = max(int(num_pos), 1)
    return (conf + cfg.alpha * loc) * (1.0 / n)


# ----------------------------------------------------------------------
# detector model
# ----------------------------------------------------------------------
class MdnModel:
    """Trunk plus five-scale detection head and its default boxes."""

    def __init__(self, trunk_spec, head_spec, seed=0):
        head_spec.validate()
        self.trunk = MfpnModel(trunk_spec, seed)
        self.head_spec = head_spec
        rng = np.random.default_rng(seed + 1)
        fused = trunk_spec.fused_channels
        k = head_spec.boxes_per_cell
        c = head_spec.num_classes
        self.head_convs, self.head_bns, self.cls_preds, self.box_preds = [], [], [], []
        for ch in head_spec.head_channels:
            self.head_convs.append(layers.make_conv(fused, ch, 3, rng))
            self.head_bns.append(layers.make_batchnorm(ch))
            self.cls_preds.append(layers.make_conv(ch, k * (c + 1), 3, rng))
            self.box_preds.append(layers.make_conv(ch, k * 4, 3, rng))
        self.grid_sizes = [-(-s // 2) for s in trunk_spec.level_sizes()]
        self.anchors = generate_default_boxes(
            [(g, g) for g in self.grid_sizes], head_spec.scales, head_spec.ratios
        )

    @property
    def num_classes(self):
        return self.head_spec.num_classes

    @property
    def input_size(self):
        return self.trunk.spec.input_size

    def named_tensors(self):
        out = {}
        for name, t in self.trunk.named_tensors().items():
            out[f"trunk.{name}"] = t
        for i in range(NUM_LEVELS):
            cv, bn = self.head_convs[i], self.head_bns[i]
            out[f"head{i}.weight"] = cv.weight
            out[f"head{i}.bias"] = cv.bias
            out[f"head{i}.bn.gamma"] = bn.gamma
            out[f"head{i}.bn.beta"] = bn.beta
            out[f"head{i}.bn.running_mean"] = bn.running_mean
            out[f"head{i}.bn.running_var"] = bn.running_var
            out[f"head{i}.cls.weight"] = self.cls_preds[i].weight
            out[f"head{i}.cls.bias"] = self.cls_preds[i].bias
            out[f"head{i}.box.weight"] = self.box_preds[i].weight
            out[f"head{i}.box.bias"] = self.box_preds[i].bias
        return out

    def parameters(self):
        return [t for t in self.named_tensors().values() if t.requires_grad]


def mdn_build(trunk_spec, head_spec, seed=0):
    return MdnModel(trunk_spec, head_spec, seed)


@dataclass
class HeadOutput:
    """Per-level class and offset maps plus their grid sizes."""

    cls_maps: list
    box_maps: list

    def grid_sizes(self):
        return [m.shape[2] for m in self.cls_maps]


def head_forward(pyramid, model, mode="train"):
    """Apply the per-level head convs and predictors to the pyramid."""
    if len(pyramid.levels) != NUM_LEVELS:
        raise DimensionError(
            f"head expects {NUM_LEVELS} pyramid levels, got {len(pyramid.levels)}"
        )
    cls_maps, box_maps = [], []
    for i, level in enumerate(pyramid.levels):
        y = layers.conv2d(level, model.head_convs[i], stride=2, padding=1)
        y = layers.batchnorm(y, model.head_bns[i], mode=mode).relu()
        cls_maps.append(layers.conv2d(y, model.cls_preds[i], stride=1, padding=1))
        box_maps.append(layers.conv2d(y, model.box_preds[i], stride=1, padding=1))
    return HeadOutput(cls_maps=cls_maps, box_maps=box_maps)


def flatten_head_output(output, num_classes, boxes_per_cell):
    """Reorder head maps into (N, A, num_classes + 1) and (N, A, 4).

    Anchor order matches :func:`generate_default_boxes`: level-major, cells
    row-major, ratio index innermost.
    """
    k, c1 = boxes_per_cell, num_classes + 1
    cls_parts, box_parts = [], []
    for cls_map, box_map in zip(output.cls_maps, output.box_maps):
        n, _, h, w = cls_map.shape
        cls_parts.append(
            cls_map.reshape(n, k, c1, h, w).permute(0, 3, 4, 1, 2).reshape(n, h * w * k, c1)
        )
        box_parts.append(
            box_map.reshape(n, k, 4, h, w).permute(0, 3, 4, 1, 2).reshape(n, h * w * k, 4)
        )
    return concat(cls_parts, axis=1), concat(box_parts, axis=1)


def mdn_forward(model, images, mode="train"):
    """Full detector forward: images -> (logits (N,A,C+1), offsets (N,A,4))."""
    pyramid = mfpn_forward(model.trunk, images, mode=mode)
    output = head_forward(pyramid, model, mode=mode)
    return flatten_head_output(output, model.num_classes, model.head_spec.boxes_per_cell)


def detect(model, image, t=0.5, nms_iou=0.45):
    """Detections for one 3 x S x S image at confidence threshold ``t``.

    Scores are softmax probabilities; background and anything below ``t`` is
    dropped, boxes are decoded from their anchors, clipped to the unit
    square, and deduplicated with per-class NMS.
    """
    arr = image.data if isinstance(image, Tensor) else np.asarray(image, dtype=np.float32)
    if arr.ndim != 3:
        raise DimensionError(f"detect expects one 3 x S x S image, got {arr.shape}")
    with no_grad():
        logits, offsets = mdn_forward(model, Tensor(arr[None]), mode="eval")
        probs = softmax(logits, axis=2).data[0]
        offs = offsets.data[0].astype(np.float64)

    dets = []
    for c in range(1, model.num_classes + 1):
        keep = np.flatnonzero(probs[:, c] >= t)
        if len(keep) == 0:
            continue
        centers = B.decode(offs[keep], model.anchors.boxes[keep])
        corners = np.clip(B.center_to_corner(centers), 0.0, 1.0)
        for row, score in zip(corners, probs[keep, c]):
            if row[2] <= row[0] or row[3] <= row[1]:
                continue
            dets.append(B.Detection(c, float(score), *map(float, row)))
    dets = B.nms(dets, nms_iou)
    dets.sort(key=lambda d: (-d.score, d.class_id))
    return dets
