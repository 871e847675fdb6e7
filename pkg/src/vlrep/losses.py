"""The training objective: time-contrastive + language-alignment + sparsity.

Batches arrive as pixel arrays with five frame roles per clip, ordered
[start, i, j, k, goal]. All frames are encoded exactly once per step; the
loss components index into that single embedding matrix.

Per clip the time-contrastive term scores the (i, j) pair against the
farther (i, k) pair and the i-role frames of the clip's cross negatives.
The language term scores three positive transitions (start->goal,
start->j, start->k), each against one matched within-video negative
(start->start, start->i, start->j respectively) plus role-matched
transitions from the cross-negative clips, all under the anchor clip's own
sentence.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops
from .data import BatchCompositionError
from .encoder import ModelConfig, alignment_score_rows, encode_images, encode_sentence
from .tensor import ParamSet, Tensor

ROLES = ("start", "i", "j", "k", "goal")
N_ROLES = len(ROLES)
# (positive partner role, matched within-video negative partner role),
# all anchored at the start frame
LANGUAGE_PAIRS = ((4, 0), (2, 1), (3, 2))


@dataclass(frozen=True)
class LossConfig:
    lambda1: float = 1.0
    lambda2: float = 1.0
    lambda3: float = 1e-5
    lambda4: float = 1e-5
    n_cross_negatives: int = 3
    reduce: str = "sum"  # "sum" | "mean" over the batch
    squared_l2: bool = False  # penalize ||z||_2^2 instead of ||z||_2
    penalize_roles: str = "all"  # "all" sampled frames or "anchor" (role i) only

    def __post_init__(self):
        for lam in (self.lambda1, self.lambda2, self.lambda3, self.lambda4):
            if lam < 0:
                raise ValueError("loss weights must be nonnegative")
        if self.n_cross_negatives < 1:
            raise ValueError("n_cross_negatives must be >= 1")
        if self.reduce not in ("sum", "mean"):
            raise ValueError(f"unknown reduce mode: {self.reduce!r}")
        if self.penalize_roles not in ("all", "anchor"):
            raise ValueError(f"unknown penalize_roles mode: {self.penalize_roles!r}")


@dataclass(frozen=True)
class LossBreakdown:
    """Unweighted component values plus the weighted total of one step."""

    tcn: float
    language: float
    l1: float
    l2: float
    total: float

    def weighted(self, config: LossConfig) -> tuple[float, float, float, float]:
        """Per-term contributions (lambda_i * component) to the total."""
        return (
            config.lambda1 * self.tcn,
            config.lambda2 * self.language,
            config.lambda3 * self.l1,
            config.lambda4 * self.l2,
        )


def _reduce(values: Tensor, mode: str) -> Tensor:
    return ops.sum_all(values) if mode == "sum" else ops.mean_all(values)


def _check_negatives(n_clips: int, neg_positions: np.ndarray, n_cross: int) -> np.ndarray:
    neg_positions = np.asarray(neg_positions, dtype=np.intp)
    if n_clips < 2:
        raise BatchCompositionError("need at least 2 clips for cross-video negatives")
    if neg_positions.shape != (n_clips, n_cross):
        raise BatchCompositionError(
            f"negative table must be ({n_clips}, {n_cross}), got {neg_positions.shape}"
        )
    anchors = np.arange(n_clips)[:, None]
    if (neg_positions == anchors).any():
        raise BatchCompositionError("a clip may not serve as its own negative")
    return neg_positions


def time_contrastive_loss(z_i, z_j, z_k, cross_negatives, reduce: str = "sum") -> Tensor:
    """InfoNCE over frame triplets: (i, j) close beats (i, k) and cross clips.

    ``z_i``, ``z_j``, ``z_k`` are (B, E); ``cross_negatives`` is (B, n, E)
    holding the anchor-role embeddings drawn from other clips.
    """
    zi = z_i if isinstance(z_i, Tensor) else Tensor(np.asarray(z_i))
    zj = z_j if isinstance(z_j, Tensor) else Tensor(np.asarray(z_j))
    zk = z_k if isinstance(z_k, Tensor) else Tensor(np.asarray(z_k))
    cross = (
        cross_negatives
        if isinstance(cross_negatives, Tensor)
        else Tensor(np.asarray(cross_negatives))
    )
    b = zi.shape[0]
    if b < 2:
        raise BatchCompositionError("time-contrastive loss needs a batch of >= 2 clips")
    pos = ops.neg_l2_sim_rows(zi, zj)
    neg_cols = [ops.neg_l2_sim_rows(zi, zk)]
    for c in range(cross.shape[1]):
        neg_cols.append(ops.neg_l2_sim_rows(zi, _slice_mid(cross, c)))
    negs = ops.stack_cols(neg_cols)
    return _reduce(ops.infonce_rows(pos, negs), reduce)


def _slice_mid(x: Tensor, c: int) -> Tensor:
    """Select x[:, c, :] from a (b, n, e) tensor."""
    from .tensor import make_node

    out = x.data[:, c, :]

    def backward(g: np.ndarray) -> None:
        acc = np.zeros_like(x.data)
        acc[:, c, :] = g
        x.accumulate(acc)

    return make_node(out, (x,), backward)


def video_language_loss(
    z_roles: Tensor,
    lang_embs: Tensor,
    neg_positions: np.ndarray,
    head_params: ParamSet,
    model_config: ModelConfig,
    reduce: str = "sum",
) -> Tensor:
    """Contrastive alignment of transition scores with the clip's sentence.

    ``z_roles`` is (B * 5, E) with roles [start, i, j, k, goal] per clip,
    ``lang_embs`` is (B, L). Scores for all positives and negatives are
    produced by a single batched head forward.
    """
    n_clips = z_roles.shape[0] // N_ROLES
    n_cross = neg_positions.shape[1] if np.asarray(neg_positions).ndim == 2 else 0
    neg_positions = _check_negatives(n_clips, neg_positions, n_cross)

    start_idx: list[int] = []
    partner_idx: list[int] = []
    lang_idx: list[int] = []
    for b in range(n_clips):
        for pos_role, neg_role in LANGUAGE_PAIRS:
            start_idx.append(b * N_ROLES)
            partner_idx.append(b * N_ROLES + pos_role)
            lang_idx.append(b)
            start_idx.append(b * N_ROLES)
            partner_idx.append(b * N_ROLES + neg_role)
            lang_idx.append(b)
            for c in neg_positions[b]:
                start_idx.append(int(c) * N_ROLES)
                partner_idx.append(int(c) * N_ROLES + pos_role)
                lang_idx.append(b)

    rows = ops.concat(
        [
            ops.gather_rows(z_roles, np.asarray(start_idx)),
            ops.gather_rows(z_roles, np.asarray(partner_idx)),
            ops.gather_rows(lang_embs, np.asarray(lang_idx)),
        ],
        axis=1,
    )
    scores = alignment_score_rows(model_config.head, head_params, rows)

    group = 2 + n_cross  # one positive, one within negative, n cross negatives
    base = np.arange(n_clips * len(LANGUAGE_PAIRS)) * group
    pos_scores = ops.gather_rows(scores, base)
    negs = ops.gather_rows(scores, base[:, None] + 1 + np.arange(1 + n_cross)[None, :])
    per_pair = ops.infonce_rows(pos_scores, negs)  # (B * 3,)
    per_clip = ops.sum_axis(ops.reshape(per_pair, (n_clips, len(LANGUAGE_PAIRS))), axis=1)
    return _reduce(per_clip, reduce)


def sparsity_penalty(z_batch, reduce: str = "sum", squared_l2: bool = False) -> tuple[Tensor, Tensor]:
    """Per-frame L1 and (optionally squared) L2 norms, reduced over frames."""
    z = z_batch if isinstance(z_batch, Tensor) else Tensor(np.asarray(z_batch))
    if z.ndim != 2 or z.shape[0] == 0:
        raise ValueError(f"expected a nonempty (n, e) embedding batch, got {z.shape}")
    l1 = _reduce(ops.rowwise_l1(z), reduce)
    if squared_l2:
        l2 = _reduce(ops.sum_axis(ops.square(z), axis=1), reduce)
    else:
        l2 = _reduce(ops.rowwise_l2(z), reduce)
    return l1, l2


def total_loss(
    params: ParamSet,
    images: np.ndarray,
    annotations: list[list[str]],
    neg_positions: np.ndarray,
    model_config: ModelConfig,
    config: LossConfig,
    include_language: bool = True,
    training: bool = True,
) -> tuple[LossBreakdown, Tensor]:
    """Weighted objective over one assembled batch.

    ``images`` is (B, 5, s, s, 3) with the role order [start, i, j, k, goal];
    every frame is encoded exactly once. Returns the component breakdown and
    the differentiable total.
    """
    images = np.asarray(images)
    if images.ndim != 5 or images.shape[1] != N_ROLES:
        raise BatchCompositionError(f"expected (B, {N_ROLES}, s, s, 3) images, got {images.shape}")
    n_clips = images.shape[0]
    neg_positions = _check_negatives(n_clips, neg_positions, config.n_cross_negatives)

    flat = images.reshape((-1,) + images.shape[2:])
    z = encode_images(model_config.encoder, params, flat, training=training)  # (B*5, E)

    idx = np.arange(n_clips) * N_ROLES
    z_i = ops.gather_rows(z, idx + 1)
    z_j = ops.gather_rows(z, idx + 2)
    z_k = ops.gather_rows(z, idx + 3)
    cross = ops.reshape(
        ops.gather_rows(z, (neg_positions * N_ROLES + 1).reshape(-1)),
        (n_clips, config.n_cross_negatives, model_config.encoder.embedding_dim),
    )
    tcn = time_contrastive_loss(z_i, z_j, z_k, cross, reduce=config.reduce)

    if include_language:
        lang_rows = ops.stack_rows(
            [encode_sentence(model_config.sentence, params, ann) for ann in annotations]
        )
        language = video_language_loss(
            z, lang_rows, neg_positions, params, model_config, reduce=config.reduce
        )
    else:
        language = Tensor(np.asarray(0.0, dtype=z.dtype))

    if config.penalize_roles == "all":
        z_pen = z
    else:
        z_pen = ops.gather_rows(z, idx + 1)
    l1, l2 = sparsity_penalty(z_pen, reduce=config.reduce, squared_l2=config.squared_l2)

    total = ops.add(
        ops.add(ops.scale(tcn, config.lambda1), ops.scale(language, config.lambda2)),
        ops.add(ops.scale(l1, config.lambda3), ops.scale(l2, config.lambda4)),
    )
    breakdown = LossBreakdown(
        tcn=float(tcn.data),
        language=float(language.data),
        l1=float(l1.data),
        l2=float(l2.data),
        total=float(total.data),
    )
    return breakdown, total
