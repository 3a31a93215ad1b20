"""Deterministic SGD training loops, evaluation metrics, checkpoints."""

import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import boxes as B
from .archive import load_into, read_archive, write_archive
from .crn import CrnModel, CrnSpec, crn_forward
from .detection import (
    HeadSpec,
    LossConfig,
    MdnModel,
    confidence_loss,
    detect,
    localization_loss,
    match_anchors,
    mdn_forward,
    total_loss,
)
from .errors import CheckpointError, DataError, TrainingDiverged
from .layers import SgdOptimizer
from .mfpn import MfpnSpec
from .tensor import Tensor, log_softmax, no_grad


@dataclass
class TrainConfig:
    epochs: int = 200
    batch_size: int = 32
    lr: float = 0.001
    momentum: float = 0.9
    seed: int = 0
    loss: LossConfig = field(default_factory=LossConfig)
    checkpoint_every: int = 0
    eval_every: int = 1
    bn_momentum: float = 0.1
    target_accuracy: float = None  # stop classification early once reached
    augment: bool = False  # detector: mirror flips + brightness/contrast jitter

    def validate(self):
        if self.epochs <= 0 or self.batch_size <= 0:
            raise ValueError("epochs and batch_size must be positive")
        if self.lr < 0:
            raise ValueError("lr must be >= 0")
        self.loss.validate()


@dataclass
class MetricsRecord:
    epoch: int
    train_loss: float
    eval_accuracy: float = None
    conf_loss: float = None
    loc_loss: float = None
    map_score: float = None
    wall_time: float = 0.0


def _batches(n, batch_size, order):
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]


# ----------------------------------------------------------------------
# classification
# ----------------------------------------------------------------------
def train_classifier(model, dataset, cfg, progress=None):
    """SGD over softmax cross-entropy; returns (model, per-epoch history).

    Shuffling is driven by ``cfg.seed`` alone, so two runs with the same
    config and build seed produce bit-identical parameters and metrics.
    A zero learning rate leaves parameters untouched (updates are skipped).
    """
    cfg.validate()
    if len(dataset) == 0:
        raise DataError("cannot train on an empty dataset")
    rng = np.random.default_rng(cfg.seed)
    opt = SgdOptimizer(model.parameters(), max(cfg.lr, 1e-12), cfg.momentum)
    history = []
    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        order = rng.permutation(len(dataset))
        losses = []
        for batch_no, idx in enumerate(_batches(len(dataset), cfg.batch_size, order)):
            images = Tensor(dataset.images[idx])
            labels = dataset.labels[idx]
            logits = crn_forward(model, images, mode="train")
            lsm = log_softmax(logits, axis=1)
            loss = -(lsm.gather((np.arange(len(idx)), labels)).mean())
            value = loss.item()
            if not np.isfinite(value):
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch} batch {batch_no} (lr={cfg.lr})"
                )
            losses.append(value)
            if cfg.lr > 0:
                opt.zero_grad()
                loss.backward()
                opt.step()
        record = MetricsRecord(epoch=epoch, train_loss=float(np.mean(losses)))
        if cfg.eval_every and (epoch % cfg.eval_every == 0 or epoch == cfg.epochs):
            record.eval_accuracy = evaluate_classifier(model, dataset)
        record.wall_time = time.perf_counter() - t0
        history.append(record)
        if progress:
            progress(record)
        if (
            cfg.target_accuracy is not None
            and record.eval_accuracy is not None
            and record.eval_accuracy >= cfg.target_accuracy
        ):
            break
    return model, history


def evaluate_classifier(model, dataset, batch_size=256):
    """Fraction of samples whose argmax logit equals the label (eval mode)."""
    if len(dataset) == 0:
        raise DataError("cannot evaluate an empty dataset")
    correct = 0
    with no_grad():
        for start in range(0, len(dataset), batch_size):
            chunk = dataset.images[start : start + batch_size]
            logits = crn_forward(model, Tensor(chunk), mode="eval").data
            correct += int((logits.argmax(axis=1) == dataset.labels[start : start + len(chunk)]).sum())
    return correct / len(dataset)


# ----------------------------------------------------------------------
# detection
# ----------------------------------------------------------------------
def _flip_gts(gts, flip_h, flip_v):
    out = []
    for g in gts:
        cx = 1.0 - g.cx if flip_h else g.cx
        cy = 1.0 - g.cy if flip_v else g.cy
        out.append(type(g)(g.class_id, cx, cy, g.w, g.h))
    return out


def _prepare_assignments(model, dataset, cfg):
    """Match every scene once per mirror variant; matching depends only on
    anchors and boxes, never on parameters."""
    variants = (
        [(False, False), (True, False), (False, True), (True, True)]
        if cfg.augment
        else [(False, False)]
    )
    prepared = []
    for scene in dataset.scenes:
        base = scene.ground_truths()
        per_variant = []
        for flip_h, flip_v in variants:
            gts = _flip_gts(base, flip_h, flip_v)
            assignment = match_anchors(model.anchors, gts, cfg.loss) if gts else None
            per_variant.append((gts, assignment))
        prepared.append(per_variant)
    return prepared


def _augmented_image(image, variant, rng):
    flip_h, flip_v = variant == 1 or variant == 3, variant == 2 or variant == 3
    out = image
    if flip_h:
        out = out[:, :, ::-1]
    if flip_v:
        out = out[:, ::-1, :]
    contrast = rng.uniform(0.9, 1.1)
    brightness = rng.uniform(-0.08, 0.08)
    return np.clip(np.ascontiguousarray(out) * contrast + brightness, 0.0, 1.0).astype(
        np.float32
    )


def train_detector(model, dataset, cfg, progress=None):
    """Match -> encode -> weighted loss -> backward -> SGD, per batch.

    Batches whose scenes contain no positive matches contribute zero loss
    and trigger no parameter update.  With ``cfg.augment`` each scene is
    drawn in one of its four mirror variants with light photometric jitter,
    all from the seeded stream, so runs stay bit-deterministic.
    """
    cfg.validate()
    if len(dataset) == 0:
        raise DataError("cannot train on an empty dataset")
    rng = np.random.default_rng(cfg.seed)
    opt = SgdOptimizer(model.parameters(), max(cfg.lr, 1e-12), cfg.momentum)
    prepared = _prepare_assignments(model, dataset, cfg)
    history = []
    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        order = rng.permutation(len(dataset))
        totals, confs, locs = [], [], []
        for batch_no, idx in enumerate(_batches(len(dataset), cfg.batch_size, order)):
            if cfg.augment:
                picks = [int(rng.integers(0, 4)) for _ in idx]
                images_np = np.stack(
                    [
                        _augmented_image(dataset.scenes[i].image, v, rng)
                        for i, v in zip(idx, picks)
                    ]
                )
            else:
                picks = [0] * len(idx)
                images_np = np.stack([dataset.scenes[i].image for i in idx])
            chosen = [prepared[i][v] for i, v in zip(idx, picks)]
            num_pos = sum(c[1].num_positives for c in chosen if c[1] is not None)
            if num_pos == 0:
                totals.append(0.0)
                confs.append(0.0)
                locs.append(0.0)
                continue
            images = Tensor(images_np)
            logits, offsets = mdn_forward(model, images, mode="train")
            conf_sum, loc_sum = None, None
            for row, (gts, assignment) in enumerate(chosen):
                if assignment is None or assignment.num_positives == 0:
                    continue
                conf_i = confidence_loss(logits[row], assignment, cfg.loss)
                loc_i = localization_loss(offsets[row], assignment, gts, model.anchors)
                conf_sum = conf_i if conf_sum is None else conf_sum + conf_i
                loc_sum = loc_i if loc_sum is None else loc_sum + loc_i
            loss = total_loss(conf_sum, loc_sum, num_pos, cfg.loss)
            value = loss.item()
            if not np.isfinite(value):
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch} batch {batch_no} (lr={cfg.lr})"
                )
            totals.append(value)
            confs.append(conf_sum.item() / num_pos)
            locs.append(loc_sum.item() / num_pos)
            if cfg.lr > 0:
                opt.zero_grad()
                loss.backward()
                opt.step()
        record = MetricsRecord(
            epoch=epoch,
            train_loss=float(np.mean(totals)),
            conf_loss=float(np.mean(confs)),
            loc_loss=float(np.mean(locs)),
        )
        if cfg.eval_every and epoch % cfg.eval_every == 0:
            record.map_score = evaluate_detector(
                model, dataset, match_iou=cfg.loss.match_iou
            ).map_score
        record.wall_time = time.perf_counter() - t0
        history.append(record)
        if progress:
            progress(record)
    return model, history


@dataclass
class ClassMetrics:
    ap: float
    precision: float
    recall: float
    true_positives: int
    detections: int
    ground_truths: int


@dataclass
class DetectionMetrics:
    per_class: dict
    per_superclass: dict
    map_score: float


def average_precision_11pt(tp_flags, num_gt):
    """11-point interpolated AP from score-ordered true-positive flags."""
    if num_gt == 0:
        return 0.0
    flags = np.asarray(tp_flags, dtype=np.float64)
    if flags.size == 0:
        return 0.0
    tp = np.cumsum(flags)
    fp = np.cumsum(1.0 - flags)
    recall = tp / num_gt
    precision = tp / (tp + fp)
    ap = 0.0
    for r in np.linspace(0.0, 1.0, 11):
        mask = recall >= r - 1e-12
        ap += precision[mask].max() if mask.any() else 0.0
    return ap / 11.0


def evaluate_detector(model, dataset, t=0.5, match_iou=0.5, nms_iou=0.45):
    """Run detection over the dataset and score it (see compute_detection_metrics)."""
    if len(dataset) == 0:
        raise DataError("cannot evaluate an empty dataset")
    detections = []
    for s_idx, scene in enumerate(dataset.scenes):
        for det in detect(model, scene.image, t=t, nms_iou=nms_iou):
            detections.append((s_idx, det))
    return compute_detection_metrics(detections, dataset, match_iou=match_iou)


def compute_detection_metrics(detections, dataset, match_iou=0.5):
    """Greedy-by-score matching at IoU >= ``match_iou``; 11-point AP per class.

    ``detections`` is a list of (scene_index, Detection).  A detection is a
    true positive when its class matches and it claims a previously
    unclaimed ground truth.  mAP averages AP over classes that have at least
    one ground truth; superclass rows aggregate their classes.
    """
    gt_by_class = {}
    for s_idx, scene in enumerate(dataset.scenes):
        corners = B.center_to_corner(scene.boxes)
        for corner, cls in zip(corners, scene.classes):
            gt_by_class.setdefault(int(cls), []).append((s_idx, corner))
    det_by_class = {}
    for s_idx, det in detections:
        det_by_class.setdefault(det.class_id, []).append((s_idx, det))

    per_class = {}
    class_ids = sorted(set(gt_by_class) | set(det_by_class))
    for cls in class_ids:
        gts = gt_by_class.get(cls, [])
        dets = det_by_class.get(cls, [])
        dets = sorted(enumerate(dets), key=lambda kv: (-kv[1][1].score, kv[0]))
        claimed = [False] * len(gts)
        flags = []
        for _, (s_idx, det) in dets:
            best_iou, best_j = 0.0, -1
            for j, (gs_idx, corner) in enumerate(gts):
                if gs_idx != s_idx or claimed[j]:
                    continue
                v = B.iou(det.corner_array(), corner)
                if v > best_iou:
                    best_iou, best_j = v, j
            if best_j >= 0 and best_iou >= match_iou:
                claimed[best_j] = True
                flags.append(1.0)
            else:
                flags.append(0.0)
        tp = int(sum(flags))
        per_class[cls] = ClassMetrics(
            ap=average_precision_11pt(flags, len(gts)),
            precision=tp / len(flags) if flags else 0.0,
            recall=tp / len(gts) if gts else 0.0,
            true_positives=tp,
            detections=len(flags),
            ground_truths=len(gts),
        )

    per_superclass = {}
    for cls, metrics in per_class.items():
        name = dataset.superclass_of(cls)
        bucket = per_superclass.setdefault(
            name, {"tp": 0, "dets": 0, "gts": 0, "aps": []}
        )
        bucket["tp"] += metrics.true_positives
        bucket["dets"] += metrics.detections
        bucket["gts"] += metrics.ground_truths
        if metrics.ground_truths:
            bucket["aps"].append(metrics.ap)
    superclass_rows = {
        name: ClassMetrics(
            ap=float(np.mean(b["aps"])) if b["aps"] else 0.0,
            precision=b["tp"] / b["dets"] if b["dets"] else 0.0,
            recall=b["tp"] / b["gts"] if b["gts"] else 0.0,
            true_positives=b["tp"],
            detections=b["dets"],
            ground_truths=b["gts"],
        )
        for name, b in per_superclass.items()
    }
    aps = [m.ap for m in per_class.values() if m.ground_truths > 0]
    return DetectionMetrics(
        per_class=per_class,
        per_superclass=superclass_rows,
        map_score=float(np.mean(aps)) if aps else 0.0,
    )


# ----------------------------------------------------------------------
# checkpoints
# ----------------------------------------------------------------------
def save_checkpoint(model, path):
    """Archive all parameters, running statistics, and the model spec."""
    if isinstance(model, CrnModel):
        meta = {"kind": "crn", "spec": asdict(model.spec)}
    elif isinstance(model, MdnModel):
        meta = {
            "kind": "mdn",
            "trunk": asdict(model.trunk.spec),
            "head": asdict(model.head_spec),
        }
    else:
        raise TypeError(f"cannot checkpoint {type(model).__name__}")
    write_archive(path, {k: t.data for k, t in model.named_tensors().items()}, meta)


def load_checkpoint(path):
    """Rebuild the archived model; round trips are bit exact."""
    tensors, meta = read_archive(path)
    if meta is None or "kind" not in meta:
        raise CheckpointError(f"{path}: archive has no model metadata")
    if meta["kind"] == "crn":
        model = CrnModel(CrnSpec(**meta["spec"]))
    elif meta["kind"] == "mdn":
        trunk = MfpnSpec(**{k: _untuple(v) for k, v in meta["trunk"].items()})
        head = HeadSpec(**{k: _untuple(v) for k, v in meta["head"].items()})
        model = MdnModel(trunk, head)
    else:
        raise CheckpointError(f"{path}: unknown model kind {meta['kind']!r}")
    load_into(model.named_tensors(), tensors, context=f"{path}: ")
    return model


def load_checkpoint_into(model, path):
    """Load archived tensors into an existing model, verifying the layout."""
    tensors, _ = read_archive(path)
    load_into(model.named_tensors(), tensors, context=f"{path}: ")
    return model


def _untuple(value):
    return tuple(value) if isinstance(value, list) else value


# ----------------------------------------------------------------------
# metrics files
# ----------------------------------------------------------------------
def write_metrics(history, path, kind):
    """One semicolon-delimited row per epoch for external plotting."""
    if kind == "crn":
        header = "epoch;train_loss;eval_accuracy"
        rows = [
            f"{r.epoch};{r.train_loss:.6f};"
            + ("" if r.eval_accuracy is None else f"{r.eval_accuracy:.6f}")
            for r in history
        ]
    else:
        header = "epoch;train_loss;conf_loss;loc_loss;map"
        rows = [
            f"{r.epoch};{r.train_loss:.6f};{r.conf_loss:.6f};{r.loc_loss:.6f};"
            + ("" if r.map_score is None else f"{r.map_score:.6f}")
            for r in history
        ]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(header + "\n" + "\n".join(rows) + ("\n" if rows else ""))
