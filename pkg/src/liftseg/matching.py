"""Box labels, matching cost, Hungarian assignment and forward losses."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

PROB_EPS = 1e-7
BETA_CLS = 0.5
BETA_BOX = 0.5
LAMBDAS = (0.5, 0.5, 0.5)  # cls, sem, box


@dataclass
class InstancePrediction:
    sp_mask: np.ndarray  # S bool (thresholded)
    class_probs: np.ndarray  # num_classes + 1, last entry = no-object
    box: np.ndarray  # 6
    score: float
    mask_probs: np.ndarray | None = None  # S in [0, 1]

    def __post_init__(self):
        p = np.asarray(self.class_probs, dtype=np.float64)
        if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
            raise ValueError("class_probs must be non-negative and sum to 1")


@dataclass
class MatchResult:
    pairs: list  # (prediction index, gt index)
    total_cost: float


@dataclass
class LossBreakdown:
    l_cls: float
    l_bce: float
    l_dice: float
    l_sem: float
    l_box: float
    total: float


def gt_boxes_from_masks(gt_masks, points):
    """Axis-aligned (center, size) boxes of each instance's member points, K x 6."""
    points = np.asarray(points, dtype=np.float64)
    out = []
    for k, m in enumerate(np.asarray(gt_masks, dtype=bool).reshape(-1, len(points))):
        if not m.any():
            raise ValueError(f"ground-truth instance {k} has no points")
        lo = points[m].min(axis=0)
        hi = points[m].max(axis=0)
        out.append(np.concatenate([(lo + hi) / 2, hi - lo]))
    return np.array(out).reshape(-1, 6)


def superpoint_gt_masks(gt_masks, labels, num_superpoints):
    """Assign each superpoint to the instance owning the majority of its points."""
    labels = np.asarray(labels)
    gt_masks = np.asarray(gt_masks, dtype=bool)
    K = len(gt_masks)
    owner = np.full(len(labels), K)
    for k, m in enumerate(gt_masks):
        owner[m] = k
    votes = np.zeros((num_superpoints, K + 1), dtype=np.int64)
    np.add.at(votes, (labels, owner), 1)
    winner = votes.argmax(axis=1)
    return np.stack([winner == k for k in range(K)]) if K else np.zeros((0, num_superpoints), dtype=bool)


def _safe_log(x):
    # clamp only from below: log(1) stays exactly 0
    return np.log(np.maximum(x, PROB_EPS))


def bce(pred, target):
    """Mean binary cross-entropy over the last axis."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    pos = np.where(target > 0, target * _safe_log(pred), 0.0)
    neg = np.where(target < 1, (1 - target) * _safe_log(1 - pred), 0.0)
    return -(pos + neg).mean(axis=-1)


def dice_term(pred, target):
    """``1 - 2 (m . g + 1) / (|m| + |g| + 1)`` with |.| the entry sum."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    inter = (pred * target).sum(axis=-1)
    return 1.0 - 2.0 * (inter + 1.0) / (pred.sum(axis=-1) + target.sum(axis=-1) + 1.0)


def match_cost(mask_probs, class_probs, box, gt_mask, gt_class, gt_box, beta1=BETA_CLS, beta2=BETA_BOX):
    mask_probs = np.asarray(mask_probs, dtype=np.float64)
    gt = np.asarray(gt_mask, dtype=np.float64)
    c_mask = bce(mask_probs, gt) + dice_term(mask_probs, gt)
    c_box = np.abs(np.asarray(box, dtype=np.float64) - np.asarray(gt_box, dtype=np.float64)).sum()
    return float(-beta1 * class_probs[gt_class] + c_mask + beta2 * c_box)


def cost_matrix(mask_probs, class_probs, boxes, gt_masks, gt_classes, gt_boxes, beta1=BETA_CLS, beta2=BETA_BOX):
    """Vectorised ``match_cost`` over all prediction/ground-truth pairs (P x K)."""
    m = np.asarray(mask_probs, dtype=np.float64)
    g = np.asarray(gt_masks, dtype=np.float64)
    S = m.shape[1]
    log_p = _safe_log(m)
    log_n = _safe_log(1 - m)
    bce_pk = -(log_p @ g.T + log_n @ (1 - g).T) / S
    inter = m @ g.T
    dice = 1.0 - 2.0 * (inter + 1.0) / (m.sum(1)[:, None] + g.sum(1)[None, :] + 1.0)
    l1 = np.abs(np.asarray(boxes, float)[:, None, :] - np.asarray(gt_boxes, float)[None, :, :]).sum(-1)
    cls = np.asarray(class_probs, dtype=np.float64)[:, np.asarray(gt_classes, dtype=np.int64)]
    return -beta1 * cls + bce_pk + dice + beta2 * l1


def hungarian(cost):
    """Exact minimum-cost one-to-one assignment of ``min(M, K)`` pairs.

    Shortest augmenting path with row/column potentials, O(n^2 m).
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2:
        raise ValueError("cost must be a matrix")
    if not np.all(np.isfinite(cost)):
        raise ValueError("cost matrix contains non-finite entries")
    M, K = cost.shape
    if M == 0 or K == 0:
        return MatchResult([], 0.0)
    transposed = M > K
    a = cost.T if transposed else cost
    n, m = a.shape  # n <= m

    u = np.zeros(n + 1)
    v = np.zeros(m + 1)
    p = np.zeros(m + 1, dtype=np.int64)  # p[j]: row matched to column j (1-based, 0 = free)
    way = np.zeros(m + 1, dtype=np.int64)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(m + 1, np.inf)
        used = np.zeros(m + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = p[j0]
            free = ~used[1:]
            cur = a[i0 - 1] - u[i0] - v[1:]
            better = free & (cur < minv[1:])
            minv[1:][better] = cur[better]
            way[1:][better] = j0
            cand = np.where(free, minv[1:], np.inf)
            j1 = int(np.argmin(cand)) + 1
            delta = cand[j1 - 1]
            u[p[used]] += delta
            v[used] -= delta
            minv[1:][free] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1

    pairs = [(int(p[j]) - 1, j - 1) for j in range(1, m + 1) if p[j]]
    if transposed:
        pairs = [(c, r) for r, c in pairs]
    pairs.sort()
    total = float(sum(cost[r, c] for r, c in pairs))
    return MatchResult(pairs, total)


def compute_losses(
    class_probs,
    mask_probs,
    boxes,
    gt_masks,
    gt_classes,
    gt_boxes,
    match: MatchResult,
    sem_probs=None,
    sem_targets=None,
    lambdas=LAMBDAS,
):
    """Forward evaluation of the weighted training loss.

    ``boxes`` is P x 6 or a list of per-layer P x 6 arrays; with several
    layers the box loss is averaged over them. ``class_probs`` carries a
    trailing no-object column which unmatched predictions are pushed toward.
    """
    class_probs = np.asarray(class_probs, dtype=np.float64)
    P, ncls1 = class_probs.shape
    no_object = ncls1 - 1
    target = np.full(P, no_object)
    rows = np.array([r for r, _ in match.pairs], dtype=np.int64)
    cols = np.array([c for _, c in match.pairs], dtype=np.int64)
    if len(rows):
        target[rows] = np.asarray(gt_classes, dtype=np.int64)[cols]
    l_cls = float(-_safe_log(class_probs[np.arange(P), target]).mean()) if P else 0.0

    if len(rows):
        m = np.asarray(mask_probs, dtype=np.float64)[rows]
        g = np.asarray(gt_masks, dtype=np.float64)[cols]
        l_bce = float(bce(m, g).mean())
        l_dice = float(dice_term(m, g).mean())
        layers = [boxes] if np.ndim(boxes) == 2 else list(boxes)
        gb = np.asarray(gt_boxes, dtype=np.float64)[cols]
        l_box = float(np.mean([np.abs(np.asarray(b, float)[rows] - gb).sum(axis=1).mean() for b in layers]))
    else:
        l_bce = l_dice = l_box = 0.0

    l_sem = 0.0
    if sem_probs is not None:
        l_sem = float(bce(np.ravel(sem_probs), np.ravel(sem_targets)))

    l1, l2, l3 = lambdas
    total = l1 * l_cls + l_bce + l_dice + l2 * l_sem + l3 * l_box
    return LossBreakdown(l_cls, l_bce, l_dice, l_sem, l_box, total)


def semantic_targets(sp_gt_masks, gt_classes, num_classes):
    """S x num_classes occupancy: superpoint s is 1 for the class of the instance that owns it."""
    sp_gt_masks = np.asarray(sp_gt_masks, dtype=bool)
    S = sp_gt_masks.shape[1] if sp_gt_masks.ndim == 2 else 0
    out = np.zeros((S, num_classes))
    for m, c in zip(sp_gt_masks, gt_classes):
        out[m, c] = 1.0
    return out
