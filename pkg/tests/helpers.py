"""Shared test utilities: finite-difference harness and brute-force oracles.

Every oracle here is written as plain scalar loops, independent of the
vectorised implementations it checks.
"""

import math

import numpy as np

from mdnet.tensor import Tensor


# ----------------------------------------------------------------------
# finite differences (all checks run at float64)
# ----------------------------------------------------------------------
def numeric_gradient(build_loss, param, eps=1e-6):
    """Central finite differences of a scalar loss wrt one float64 tensor."""
    flat = param.data.reshape(-1)
    grad = np.zeros_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        plus = build_loss().item()
        flat[i] = orig - eps
        minus = build_loss().item()
        flat[i] = orig
        grad[i] = (plus - minus) / (2.0 * eps)
    return grad.reshape(param.data.shape)


def fd_max_rel_error(build_loss, params, eps=1e-6):
    """Max relative error between autodiff and numeric gradients."""
    loss = build_loss()
    for p in params:
        p.zero_grad()
    loss.backward()
    worst = 0.0
    for p in params:
        assert p.grad is not None, "parameter received no gradient"
        num = numeric_gradient(build_loss, p, eps)
        denom = np.maximum(np.abs(num), np.abs(p.grad))
        denom[denom < 1e-7] = 1.0
        worst = max(worst, float(np.max(np.abs(num - p.grad) / denom)))
    return worst


def fd_subset_check(build_loss, param, flat_indices, eps=1e-6):
    """Compare autodiff vs numeric gradients on selected entries only."""
    loss = build_loss()
    param.zero_grad()
    loss.backward()
    grad = param.grad.reshape(-1)
    flat = param.data.reshape(-1)
    worst = 0.0
    for i in flat_indices:
        orig = flat[i]
        flat[i] = orig + eps
        plus = build_loss().item()
        flat[i] = orig - eps
        minus = build_loss().item()
        flat[i] = orig
        num = (plus - minus) / (2.0 * eps)
        denom = max(abs(num), abs(grad[i]), 1e-7)
        worst = max(worst, abs(num - grad[i]) / denom)
    return worst


def float64_leaf(rng, shape, scale=1.0):
    return Tensor(rng.standard_normal(shape) * scale, requires_grad=True, dtype=np.float64)


def cast_model_float64(model):
    """Rebuild every tensor of a model as float64 (in place)."""
    for t in model.named_tensors().values():
        t.data = t.data.astype(np.float64)
    return model


# ----------------------------------------------------------------------
# layer oracles
# ----------------------------------------------------------------------
def conv2d_oracle(x, w, b, stride, padding):
    """Six nested loops over the cross-correlation definition."""
    n, c, h, wd = x.shape
    oc, ic, kh, kw = w.shape
    oh = (h + 2 * padding - kh) // stride + 1
    ow = (wd + 2 * padding - kw) // stride + 1
    out = np.zeros((n, oc, oh, ow), dtype=np.float64)
    for bi in range(n):
        for o in range(oc):
            for y in range(oh):
                for xo in range(ow):
                    acc = 0.0
                    for ci in range(ic):
                        for i in range(kh):
                            for j in range(kw):
                                yy = y * stride + i - padding
                                xx = xo * stride + j - padding
                                if 0 <= yy < h and 0 <= xx < wd:
                                    acc += float(x[bi, ci, yy, xx]) * float(w[o, ci, i, j])
                    out[bi, o, y, xo] = acc + float(b[o])
    return out


def transposed_conv2d_oracle(x, w, b, stride, padding, output_padding):
    """Scatter-accumulate over the transposed-convolution definition."""
    n, c, h, wd = x.shape
    ic, oc, kh, kw = w.shape
    oh = (h - 1) * stride - 2 * padding + kh + output_padding
    ow = (wd - 1) * stride - 2 * padding + kw + output_padding
    out = np.zeros((n, oc, oh, ow), dtype=np.float64)
    for bi in range(n):
        for ci in range(ic):
            for y in range(h):
                for xo in range(wd):
                    v = float(x[bi, ci, y, xo])
                    for o in range(oc):
                        for i in range(kh):
                            for j in range(kw):
                                yy = y * stride + i - padding
                                xx = xo * stride + j - padding
                                if 0 <= yy < oh and 0 <= xx < ow:
                                    out[bi, o, yy, xx] += v * float(w[ci, o, i, j])
    for o in range(oc):
        out[:, o] += float(b[o])
    return out


def maxpool_oracle(x):
    n, c, h, w = x.shape
    out = np.zeros((n, c, h // 2, w // 2), dtype=x.dtype)
    for bi in range(n):
        for ci in range(c):
            for y in range(h // 2):
                for xo in range(w // 2):
                    out[bi, ci, y, xo] = max(
                        x[bi, ci, 2 * y, 2 * xo],
                        x[bi, ci, 2 * y, 2 * xo + 1],
                        x[bi, ci, 2 * y + 1, 2 * xo],
                        x[bi, ci, 2 * y + 1, 2 * xo + 1],
                    )
    return out


# ----------------------------------------------------------------------
# geometry oracles
# ----------------------------------------------------------------------
def interval_overlap(a1, a2, b1, b2):
    lo = a1 if a1 > b1 else b1
    hi = a2 if a2 < b2 else b2
    return hi - lo if hi > lo else 0.0


def iou_oracle(a, b):
    """Scalar IoU from interval overlaps."""
    iw = interval_overlap(a[0], a[2], b[0], b[2])
    ih = interval_overlap(a[1], a[3], b[1], b[3])
    inter = iw * ih
    if inter <= 0:
        return 0.0
    area_a = max(a[2] - a[0], 0.0) * max(a[3] - a[1], 0.0)
    area_b = max(b[2] - b[0], 0.0) * max(b[3] - b[1], 0.0)
    union = area_a + area_b - inter
    return inter / union if union > 0 else 0.0


def matching_oracle(anchor_corners, gt_corners, gt_classes, match_iou):
    """Forced bipartite phase then per-anchor threshold phase, scalar loops."""
    a = len(anchor_corners)
    g = len(gt_corners)
    anchor_gt = [-1] * a
    anchor_class = [0] * a
    if g == 0:
        return anchor_gt, anchor_class
    ious = [[iou_oracle(anchor_corners[i], gt_corners[j]) for i in range(a)] for j in range(g)]
    gt_done = [False] * g
    anchor_done = [False] * a
    for _ in range(min(g, a)):
        best, bj, bi = -1.0, -1, -1
        for j in range(g):
            if gt_done[j]:
                continue
            for i in range(a):
                if anchor_done[i]:
                    continue
                if ious[j][i] > best:
                    best, bj, bi = ious[j][i], j, i
        anchor_gt[bi] = bj
        anchor_class[bi] = gt_classes[bj]
        gt_done[bj] = True
        anchor_done[bi] = True
    for i in range(a):
        if anchor_done[i]:
            continue
        best, bj = -1.0, -1
        for j in range(g):
            if ious[j][i] > best:
                best, bj = ious[j][i], j
        if best > match_iou:
            anchor_gt[i] = bj
            anchor_class[i] = gt_classes[bj]
    return anchor_gt, anchor_class


def nms_oracle(detections, iou_threshold):
    """Exhaustive greedy suppression with scalar loops."""
    order = sorted(range(len(detections)), key=lambda i: (-detections[i].score, i))
    kept = []
    for i in order:
        det = detections[i]
        ok = True
        for other in kept:
            if other.class_id != det.class_id:
                continue
            if iou_oracle(det.corner_array(), other.corner_array()) > iou_threshold:
                ok = False
                break
        if ok:
            kept.append(det)
    return kept


# ----------------------------------------------------------------------
# loss oracles (scalar loops, math.exp / math.log only)
# ----------------------------------------------------------------------
def softmax_row_oracle(row):
    m = max(row)
    exps = [math.exp(v - m) for v in row]
    s = sum(exps)
    return [e / s for e in exps]


def confidence_loss_oracle(logits, anchor_gt, anchor_class, negative_ratio):
    """Scalar hard-negative-mined cross entropy."""
    a = len(logits)
    probs = [softmax_row_oracle(list(map(float, logits[i]))) for i in range(a)]
    positives = [i for i in range(a) if anchor_gt[i] >= 0]
    loss = 0.0
    for i in positives:
        loss += -math.log(probs[i][anchor_class[i]])
    negatives = [i for i in range(a) if anchor_gt[i] < 0]
    if positives:
        keep = int(negative_ratio * len(positives))
    else:
        keep = 1 if a > 0 else 0
    keep = min(keep, len(negatives))
    bg_losses = sorted(
        ((-math.log(probs[i][0]), i) for i in negatives), key=lambda t: (-t[0], t[1])
    )
    for loss_i, _ in bg_losses[:keep]:
        loss += loss_i
    return loss


def smooth_l1_scalar(x):
    return 0.5 * x * x if abs(x) < 1.0 else abs(x) - 0.5


def encode_scalar(g, d):
    return (
        (g[0] - d[0]) / d[2],
        (g[1] - d[1]) / d[3],
        math.log(g[2] / d[2]),
        math.log(g[3] / d[3]),
    )


def localization_loss_oracle(offsets, anchor_gt, gt_centers, anchor_centers):
    loss = 0.0
    for i in range(len(offsets)):
        if anchor_gt[i] < 0:
            continue
        target = encode_scalar(gt_centers[anchor_gt[i]], anchor_centers[i])
        for m in range(4):
            loss += smooth_l1_scalar(float(offsets[i][m]) - target[m])
    return loss


# ----------------------------------------------------------------------
# average-precision oracle: sweep every threshold, interpolate by scanning
# ----------------------------------------------------------------------
def ap_oracle(scores, tp_flags, num_gt):
    """11-point AP computed by brute force over all score thresholds."""
    if num_gt == 0 or not scores:
        return 0.0
    pairs = sorted(zip(scores, tp_flags), key=lambda t: -t[0])
    points = []  # (recall, precision) at every cut-off depth
    tp = 0
    for depth, (_, flag) in enumerate(pairs, start=1):
        tp += int(flag)
        points.append((tp / num_gt, tp / depth))
    ap = 0.0
    for k in range(11):
        r = k / 10.0
        best = 0.0
        for recall, precision in points:
            if recall >= r - 1e-12 and precision > best:
                best = precision
        ap += best
    return ap / 11.0
