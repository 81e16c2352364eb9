"""Instance-segmentation average precision over point masks."""

from __future__ import annotations

import numpy as np

# written out so that e.g. an IoU of exactly 0.6 passes the 0.60 threshold
IOU_THRESHOLDS = (0.50, 0.55, 0.60, 0.65, 0.70, 0.75, 0.80, 0.85, 0.90, 0.95)


def mask_iou(pred, gt):
    """Pairwise IoU between boolean masks, P x K."""
    pred = np.atleast_2d(np.asarray(pred, dtype=np.float64))
    gt = np.atleast_2d(np.asarray(gt, dtype=np.float64))
    inter = pred @ gt.T
    union = pred.sum(1)[:, None] + gt.sum(1)[None, :] - inter
    return np.divide(inter, union, out=np.zeros_like(inter), where=union > 0)


def average_precision(tp, num_gt):
    """Area under the all-point interpolated precision/recall curve."""
    tp = np.asarray(tp, dtype=np.float64)
    if num_gt == 0:
        return float("nan")
    if tp.size == 0:
        return 0.0
    ctp = np.cumsum(tp)
    cfp = np.cumsum(1 - tp)
    recall = ctp / num_gt
    precision = ctp / (ctp + cfp)
    mrec = np.concatenate([[0.0], recall, [1.0]])
    mpre = np.concatenate([[0.0], precision, [0.0]])
    mpre = np.maximum.accumulate(mpre[::-1])[::-1]
    steps = np.flatnonzero(mrec[1:] != mrec[:-1])
    return float(np.sum((mrec[steps + 1] - mrec[steps]) * mpre[steps + 1]))


def greedy_match(iou, order, threshold):
    """Walk predictions in ``order``; each takes the best still-free GT with IoU >= threshold."""
    taken = np.zeros(iou.shape[1], dtype=bool)
    tp = np.zeros(len(order))
    for rank, i in enumerate(order):
        cand = np.where(~taken & (iou[i] >= threshold), iou[i], -1.0)
        if cand.size and cand.max() >= 0:
            j = int(np.argmax(cand))
            taken[j] = True
            tp[rank] = 1.0
    return tp


def pr_curve(tp, num_gt):
    ctp = np.cumsum(tp)
    recall = ctp / max(num_gt, 1)
    precision = ctp / np.arange(1, len(tp) + 1)
    return recall, precision


def evaluate_map(pred_masks, pred_classes, pred_scores, gt_masks, gt_classes, num_classes, thresholds=IOU_THRESHOLDS):
    """AP per class and threshold plus the mAP / mAP50 / mAP25 summary.

    Classes without ground truth are left out of the averages. With no
    ground truth at all every summary metric is 0.
    """
    gt_masks = np.asarray(gt_masks, dtype=bool)
    pred_masks = np.asarray(pred_masks, dtype=bool)
    N = gt_masks.shape[1] if gt_masks.ndim == 2 and gt_masks.size else pred_masks.reshape(len(pred_masks), -1).shape[1]
    pred_masks = pred_masks.reshape(-1, N)
    gt_masks = gt_masks.reshape(-1, N)
    pred_classes = np.asarray(pred_classes, dtype=np.int64)
    pred_scores = np.asarray(pred_scores, dtype=np.float64)
    gt_classes = np.asarray(gt_classes, dtype=np.int64)

    all_thr = tuple(sorted(set(thresholds) | {0.50, 0.25}))
    per_class = {}
    curves = {}
    for c in range(num_classes):
        g = np.flatnonzero(gt_classes == c)
        if g.size == 0:
            continue
        p = np.flatnonzero(pred_classes == c)
        iou = mask_iou(pred_masks[p], gt_masks[g]) if p.size else np.zeros((0, g.size))
        order = np.argsort(-pred_scores[p], kind="stable")
        aps = {}
        for t in all_thr:
            tp = greedy_match(iou, order, t)
            aps[t] = average_precision(tp, g.size)
            curves[(c, t)] = pr_curve(tp, g.size)
        per_class[c] = {
            "mAP": float(np.mean([aps[t] for t in thresholds])),
            "mAP50": aps[0.50],
            "mAP25": aps[0.25],
            "ap": {f"{t:.2f}": aps[t] for t in all_thr},
            "num_gt": int(g.size),
            "num_pred": int(p.size),
        }
    if per_class:
        summary = {k: float(np.mean([v[k] for v in per_class.values()])) for k in ("mAP", "mAP50", "mAP25")}
    else:
        summary = {"mAP": 0.0, "mAP50": 0.0, "mAP25": 0.0}
    return {"overall": summary, "per_class": per_class, "curves": curves}
