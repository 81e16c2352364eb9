"""Box-query transformer decoder over superpoints and 2D object queries.

One layer runs, in order:

1. box-modulated mask cross-attention to the superpoint features,
2. distance-gated cross-attention to the 2D object queries,
3. self-attention among the 3D queries, then a feed-forward block,
4. a residual box update,
5. a mask update from the new content.

All weights are seeded per layer, so a decoder with L layers shares its
first l layers with an l-layer decoder built from the same seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .numerics import NEG_INF, PEConfig, Perceptron, masked_softmax, sigmoid, sinusoidal_pe

MIN_BOX_SIZE = 0.01


@dataclass(frozen=True)
class DecoderConfig:
    num_layers: int = 3
    feature_dim: int = 32
    pe: PEConfig = PEConfig()
    tau_sim: float = 0.5
    tau_dist: float = 0.8
    size_init: tuple = (0.5, 0.5, 0.5)
    scene_extent: tuple | None = None  # ((xmin, ymin, zmin), (xmax, ymax, zmax))
    modulated: bool = True
    weights: str = "random"  # "random" | "oracle"
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.tau_sim < 1.0:
            raise ValueError("tau_sim must lie in (0, 1)")
        if self.tau_dist <= 0:
            raise ValueError("tau_dist must be positive")
        if self.num_layers < 1:
            raise ValueError("num_layers must be >= 1")
        if self.weights not in ("random", "oracle"):
            raise ValueError(f"unknown weights mode {self.weights!r}")


@dataclass
class LayerWeights:
    """Parameters of one decoder layer.

    ``ref`` predicts the per-axis reference size (before the sigmoid),
    ``box`` the residual box offset. Self-attention uses single-head
    query/key/value maps; ``ffn`` is the residual feed-forward block.
    """

    ref: Perceptron
    box: Perceptron
    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    ffn: Perceptron

    @classmethod
    def random(cls, C, seed):
        ss = np.random.SeedSequence(seed)
        s = [int(x) for x in ss.generate_state(6)]
        rng = np.random.default_rng(s[0])
        lim = 1.0 / np.sqrt(C)
        return cls(
            ref=Perceptron.init(C, 3, seed=s[1]),
            box=Perceptron.init(C, 6, seed=s[2]),
            wq=rng.uniform(-lim, lim, (C, C)),
            wk=rng.uniform(-lim, lim, (C, C)),
            wv=rng.uniform(-lim, lim, (C, C)),
            ffn=Perceptron.init(C, C, seed=s[3]),
        )

    @classmethod
    def zeros(cls, C):
        """Identity content path: no box motion, unit size ratio, no self/FFN mixing."""
        z = np.zeros((C, C))
        return cls(
            ref=Perceptron.zeros(C, 3),
            box=Perceptron.zeros(C, 6),
            wq=z,
            wk=z.copy(),
            wv=z.copy(),
            ffn=Perceptron.zeros(C, C),
        )


def build_weights(cfg: DecoderConfig, num_layers=None):
    n = cfg.num_layers if num_layers is None else num_layers
    C = cfg.feature_dim
    if cfg.weights == "oracle":
        return [LayerWeights.zeros(C) for _ in range(n)]
    return [LayerWeights.random(C, [cfg.seed, layer]) for layer in range(n)]


@dataclass
class LayerOutput:
    content: np.ndarray
    boxes: np.ndarray
    mask: np.ndarray
    mask_probs: np.ndarray
    daca_allowed: np.ndarray | None = None


@dataclass
class DecoderState:
    content: np.ndarray  # M x C
    boxes: np.ndarray  # M x 6 (x, y, z, l, w, h)
    ref_size: np.ndarray  # M x 3 in (0, 1)
    mask: np.ndarray  # M x S bool
    attn_mask: np.ndarray  # M x S, 0 / -inf
    mask_probs: np.ndarray  # M x S sigmoid similarities
    query_superpoints: np.ndarray  # M, initial superpoint of each query
    daca_allowed: np.ndarray | None = None
    history: list = field(default_factory=list)

    def copy(self):
        return replace(
            self,
            content=self.content.copy(),
            boxes=self.boxes.copy(),
            ref_size=self.ref_size.copy(),
            mask=self.mask.copy(),
            attn_mask=self.attn_mask.copy(),
            mask_probs=self.mask_probs.copy(),
            history=list(self.history),
        )


def to_attn_mask(mask):
    """Boolean keep-mask -> additive mask with 0 for kept and -inf for blocked entries."""
    return np.where(np.asarray(mask, dtype=bool), 0.0, NEG_INF)


def compute_mask(content, sp_features, tau_sim=0.5):
    """Threshold sigmoid(query . superpoint) similarities.

    Returns ``(mask, attn_mask, probs)``.
    """
    content = np.asarray(content, dtype=np.float64)
    sp_features = np.asarray(sp_features, dtype=np.float64)
    if content.shape[1] != sp_features.shape[1]:
        raise ValueError("content and superpoint features differ in width")
    probs = sigmoid(content @ sp_features.T)
    mask = probs > tau_sim
    return mask, to_attn_mask(mask), probs


def scene_extent_from_points(points):
    points = np.asarray(points, dtype=np.float64)
    return (tuple(points.min(axis=0).tolist()), tuple(points.max(axis=0).tolist()))


def _normalize(xyz, extent):
    lo = np.asarray(extent[0], dtype=np.float64)
    hi = np.asarray(extent[1], dtype=np.float64)
    span = hi - lo
    if np.any(span <= 0):
        raise ValueError(f"degenerate scene extent on axis {int(np.flatnonzero(span <= 0)[0])}")
    return (np.asarray(xyz, dtype=np.float64) - lo) / span


def axis_similarities(query_xyz, sp_xyz, extent, pe: PEConfig):
    """Per-axis PE dot products, shape 3 x M x S (not yet scaled)."""
    q = _normalize(query_xyz, extent)
    s = _normalize(sp_xyz, extent)
    return np.stack([sinusoidal_pe(q[:, a], pe) @ sinusoidal_pe(s[:, a], pe).T for a in range(3)])


def positional_terms(boxes, ref_size, sp_centers, cfg: DecoderConfig, modulated=True):
    """Per-axis positional similarity terms, 3 x M x S, before the 1/sqrt(C) scale.

    With ``modulated`` the axis-``a`` term of query i is scaled by
    ``ref_size[i, a] / box_size[i, a]``.
    """
    if cfg.scene_extent is None:
        raise ValueError("scene_extent must be set for positional similarity")
    boxes = np.asarray(boxes, dtype=np.float64)
    terms = axis_similarities(boxes[:, :3], sp_centers, cfg.scene_extent, cfg.pe)
    if modulated:
        ratio = np.asarray(ref_size, dtype=np.float64) / boxes[:, 3:6]
        terms = terms * ratio.T[:, :, None]
    return terms


def positional_similarity(boxes, ref_size, sp_centers, cfg: DecoderConfig, modulated=True):
    """Sum of the per-axis terms over sqrt(C)."""
    return positional_terms(boxes, ref_size, sp_centers, cfg, modulated).sum(axis=0) / np.sqrt(cfg.feature_dim)


def init_queries(sp, cfg: DecoderConfig, mode="eval", num_queries=None, seed=0):
    """Seed one query per superpoint (eval) or per randomly drawn superpoint (train)."""
    S = len(sp.features)
    if mode == "eval":
        idx = np.arange(S)
    elif mode == "train":
        if num_queries is None or num_queries > S:
            raise ValueError(f"train mode needs num_queries <= {S}, got {num_queries}")
        idx = np.sort(np.random.default_rng(seed).choice(S, size=num_queries, replace=False))
    else:
        raise ValueError(f"unknown mode {mode!r}")
    content = np.asarray(sp.features, dtype=np.float64)[idx].copy()
    boxes = np.concatenate(
        [np.asarray(sp.centers, dtype=np.float64)[idx], np.tile(np.asarray(cfg.size_init, float), (len(idx), 1))],
        axis=1,
    )
    mask, attn, probs = compute_mask(content, sp.features, cfg.tau_sim)
    return DecoderState(
        content=content,
        boxes=boxes,
        ref_size=np.full((len(idx), 3), 0.5),
        mask=mask,
        attn_mask=attn,
        mask_probs=probs,
        query_superpoints=idx,
    )


def bmca_layer(state: DecoderState, sp, cfg: DecoderConfig, weights: LayerWeights):
    """Box-modulated mask cross-attention from 3D queries to superpoints."""
    S3 = np.asarray(sp.features, dtype=np.float64)
    C = cfg.feature_dim
    state.ref_size = sigmoid(weights.ref(state.content))
    sim_cont = state.content @ S3.T / np.sqrt(C)
    sim_pos = positional_similarity(state.boxes, state.ref_size, sp.centers, cfg, modulated=cfg.modulated)
    A = masked_softmax(sim_cont + sim_pos, state.attn_mask)
    state.content = state.content + A @ S3
    return state


def daca_mask(mask, sp_centers, q2d_centers, tau_dist):
    """Gate 3D queries to 2D queries near any superpoint they currently own.

    Returns ``(allowed, attn_mask)`` with shape M x O.
    """
    mask = np.asarray(mask, dtype=bool)
    sp_centers = np.asarray(sp_centers, dtype=np.float64).reshape(-1, 3)
    q2d_centers = np.asarray(q2d_centers, dtype=np.float64).reshape(-1, 3)
    dist = np.linalg.norm(sp_centers[:, None, :] - q2d_centers[None, :, :], axis=-1)
    near = dist < tau_dist  # S x O
    allowed = (mask.astype(np.int64) @ near.astype(np.int64)) > 0
    return allowed, to_attn_mask(allowed)


def daca_layer(state: DecoderState, R, q2d_centers, sp_centers, cfg: DecoderConfig):
    """Cross-attention from 3D queries to the distance-gated 2D object queries."""
    R = np.asarray(R, dtype=np.float64).reshape(-1, cfg.feature_dim)
    if len(R) == 0:
        state.daca_allowed = np.zeros((len(state.content), 0), dtype=bool)
        return state
    allowed, attn = daca_mask(state.mask, sp_centers, q2d_centers, cfg.tau_dist)
    A = masked_softmax(state.content @ R.T / np.sqrt(cfg.feature_dim), attn)
    state.content = state.content + A @ R
    state.daca_allowed = allowed
    return state


def self_attn_ffn(state: DecoderState, cfg: DecoderConfig, weights: LayerWeights):
    X = state.content
    q, k, v = X @ weights.wq, X @ weights.wk, X @ weights.wv
    A = masked_softmax(q @ k.T / np.sqrt(cfg.feature_dim), np.zeros((len(X), len(X))))
    X = X + A @ v
    state.content = X + weights.ffn(X)
    return state


def update_box(state: DecoderState, weights: LayerWeights):
    boxes = state.boxes + weights.box(state.content)
    boxes[:, 3:6] = np.maximum(boxes[:, 3:6], MIN_BOX_SIZE)
    state.boxes = boxes
    return state


def decoder_layer(state, sp, R, q2d_centers, cfg, weights):
    state = bmca_layer(state, sp, cfg, weights)
    state = daca_layer(state, R, q2d_centers, sp.centers, cfg)
    state = self_attn_ffn(state, cfg, weights)
    state = update_box(state, weights)
    state.mask, state.attn_mask, state.mask_probs = compute_mask(state.content, sp.features, cfg.tau_sim)
    state.history.append(
        LayerOutput(
            content=state.content.copy(),
            boxes=state.boxes.copy(),
            mask=state.mask.copy(),
            mask_probs=state.mask_probs.copy(),
            daca_allowed=None if state.daca_allowed is None else state.daca_allowed.copy(),
        )
    )
    return state


def stack_queries(q2d, C):
    if not q2d:
        return np.zeros((0, C)), np.zeros((0, 3))
    return (
        np.stack([np.asarray(q.content, dtype=np.float64) for q in q2d]),
        np.stack([np.asarray(q.center, dtype=np.float64) for q in q2d]),
    )


def run_decoder(sp, q2d, cfg: DecoderConfig, mode="eval", num_queries=None, weights=None, seed=0):
    """Run all layers; the returned state carries the per-layer history."""
    if weights is None:
        weights = build_weights(cfg)
    R, centers = stack_queries(q2d, cfg.feature_dim)
    state = init_queries(sp, cfg, mode=mode, num_queries=num_queries, seed=seed)
    for w in weights[: cfg.num_layers]:
        state = decoder_layer(state, sp, R, centers, cfg, w)
    return state


def box_filter_masks(mask, boxes, sp_centers, margin):
    """Clear mask bits whose superpoint center falls outside the (expanded) query box."""
    mask = np.asarray(mask, dtype=bool)
    if margin is None or np.isinf(margin):
        return mask.copy()
    if margin < 0:
        raise ValueError("margin must be >= 0")
    boxes = np.asarray(boxes, dtype=np.float64)
    c = np.asarray(sp_centers, dtype=np.float64)
    half = boxes[:, None, 3:6] / 2 + margin
    inside = np.all(np.abs(c[None, :, :] - boxes[:, None, :3]) <= half, axis=-1)
    return mask & inside


def class_probabilities(content, R, q2d_classes, allowed, num_classes, tau_sim=0.5, background=1.0, eps=1e-3):
    """Transfer 2D detector classes onto 3D queries.

    Every gated 2D query whose content similarity passes the mask threshold
    votes for its class with weight sigmoid(q . r). A constant pseudo-count
    ``background`` goes to the trailing no-object entry; ``eps`` smooths all
    entries. Rows sum to 1.
    """
    M = len(content)
    votes = np.full((M, num_classes + 1), eps)
    votes[:, num_classes] += background
    R = np.asarray(R, dtype=np.float64)
    if len(R):
        w = sigmoid(np.asarray(content, dtype=np.float64) @ R.T)
        w = np.where(allowed & (w > tau_sim), w, 0.0)
        onehot = np.zeros((len(R), num_classes + 1))
        cls = np.asarray(q2d_classes, dtype=np.int64)
        valid = (cls >= 0) & (cls < num_classes)
        onehot[np.flatnonzero(valid), cls[valid]] = 1.0
        votes += w @ onehot
    return votes / votes.sum(axis=1, keepdims=True)
