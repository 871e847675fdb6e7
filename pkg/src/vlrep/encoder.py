"""Image encoder, bag-of-words sentence encoder, and the alignment head.

All three models are plain functions over a single flat ``ParamSet`` whose
names are prefixed ``enc.``, ``lang.`` and ``head.``. The image encoder is a
stack of stride-2 3x3 convolutions (optionally batch-normalized), mean-pooled
and projected to the embedding dimension. The sentence encoder is a learned
token-embedding table averaged over the annotation's tokens. The alignment
head is an MLP scoring the concatenation [z_start, z_now, sentence_embedding]
(the order is part of the contract); its final layer starts at zero so every
score is exactly 0 before training.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import ops
from .tensor import DimensionError, ParamSet, Tensor


class VocabularyError(KeyError):
    """Raised when a token is not part of the configured vocabulary."""


@dataclass(frozen=True)
class EncoderConfig:
    input_size: int = 64
    channel_widths: tuple[int, ...] = (16, 32, 64, 64)
    embedding_dim: int = 64
    normalization: str = "batchnorm"  # "none" | "batchnorm"

    def __post_init__(self):
        if self.embedding_dim < 1:
            raise ValueError("embedding_dim must be >= 1")
        if self.normalization not in ("none", "batchnorm"):
            raise ValueError(f"unknown normalization: {self.normalization!r}")
        size = self.input_size
        for _ in self.channel_widths:
            size = (size + 1) // 2  # stride-2, pad-1, k=3 halves (rounding up)
        if size < 1:
            raise ValueError("too many conv stages for this input size")

    @property
    def final_spatial(self) -> int:
        size = self.input_size
        for _ in self.channel_widths:
            size = (size + 1) // 2
        return size


@dataclass(frozen=True)
class SentenceEncoderConfig:
    vocabulary: tuple[str, ...]
    language_dim: int = 32

    def __post_init__(self):
        if not self.vocabulary:
            raise ValueError("vocabulary must be nonempty")
        if len(set(self.vocabulary)) != len(self.vocabulary):
            raise ValueError("vocabulary tokens must be unique")

    def token_id(self, token: str) -> int:
        try:
            return self.vocabulary.index(token)
        except ValueError:
            raise VocabularyError(f"unknown token {token!r}") from None


@dataclass(frozen=True)
class AlignmentHeadConfig:
    embedding_dim: int = 64
    language_dim: int = 32
    hidden_widths: tuple[int, ...] = (128, 128, 128, 128)

    @property
    def input_dim(self) -> int:
        return 2 * self.embedding_dim + self.language_dim


@dataclass(frozen=True)
class ModelConfig:
    """Bundle of the three model components trained jointly."""

    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    sentence: SentenceEncoderConfig = field(
        default_factory=lambda: SentenceEncoderConfig(vocabulary=("<pad>",))
    )
    head_hidden: tuple[int, ...] = (128, 128, 128, 128)
    dtype: str = "float32"

    @property
    def head(self) -> AlignmentHeadConfig:
        return AlignmentHeadConfig(
            embedding_dim=self.encoder.embedding_dim,
            language_dim=self.sentence.language_dim,
            hidden_widths=self.head_hidden,
        )

    @property
    def np_dtype(self):
        return np.dtype(self.dtype)


# -- initialization -----------------------------------------------------------
#
# Weights use a fan-in-scaled normal: std = sqrt(2 / fan_in) in front of ReLU,
# std = 1 / sqrt(fan_in) for output projections. Biases start at zero. The
# alignment head's final layer starts at exactly zero (weights and bias).


def _he(rng, shape, fan_in, dtype):
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape).astype(dtype)


def _proj(rng, shape, fan_in, dtype):
    return rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=shape).astype(dtype)


def init_params(config: ModelConfig, seed: int) -> ParamSet:
    """Deterministic joint initialization of encoder, sentence table, and head."""
    rng = np.random.default_rng(seed)
    dt = config.np_dtype
    params = ParamSet()

    enc = config.encoder
    cin = 3
    for s, cout in enumerate(enc.channel_widths):
        params.add(f"enc.conv{s}.w", _he(rng, (3, 3, cin, cout), 9 * cin, dt))
        if enc.normalization == "batchnorm":
            # normalization absorbs any conv bias, so none is allocated
            params.add(f"enc.bn{s}.gamma", np.ones(cout, dtype=dt))
            params.add(f"enc.bn{s}.beta", np.zeros(cout, dtype=dt))
            params.add(f"enc.bn{s}.rmean", np.zeros(cout, dtype=dt), trainable=False)
            params.add(f"enc.bn{s}.rvar", np.ones(cout, dtype=dt), trainable=False)
        else:
            params.add(f"enc.conv{s}.b", np.zeros(cout, dtype=dt))
        cin = cout
    params.add("enc.proj.w", _proj(rng, (cin, enc.embedding_dim), cin, dt))
    params.add("enc.proj.b", np.zeros(enc.embedding_dim, dtype=dt))

    sent = config.sentence
    params.add(
        "lang.table",
        rng.normal(0.0, 1.0 / np.sqrt(sent.language_dim),
                   size=(len(sent.vocabulary), sent.language_dim)).astype(dt),
    )

    head = config.head
    din = head.input_dim
    for i, width in enumerate(head.hidden_widths):
        params.add(f"head.fc{i}.w", _he(rng, (din, width), din, dt))
        params.add(f"head.fc{i}.b", np.zeros(width, dtype=dt))
        din = width
    # final layer: zero-initialized and bias-free. Zero init pins every score
    # to 0 at step 0; a bias would be a pure gauge freedom of the contrastive
    # objective (constant shifts of all scores cancel) and could never train.
    params.add("head.out.w", np.zeros((din, 1), dtype=dt))
    return params


# -- forward passes -----------------------------------------------------------


def encode_images(
    config: EncoderConfig, params: ParamSet, images, training: bool = False
) -> Tensor:
    """Encode a batch of images (n, s, s, 3) with values in [0, 1] -> (n, E)."""
    x = images if isinstance(images, Tensor) else Tensor(np.asarray(images))
    s = config.input_size
    if x.ndim != 4 or x.shape[1:] != (s, s, 3):
        raise DimensionError(f"expected images of shape (n, {s}, {s}, 3), got {x.shape}")
    for i in range(len(config.channel_widths)):
        if config.normalization == "batchnorm":
            x = ops.conv2d(x, params[f"enc.conv{i}.w"], None, stride=2, padding=1)
            x = ops.batchnorm(
                x,
                params[f"enc.bn{i}.gamma"],
                params[f"enc.bn{i}.beta"],
                params[f"enc.bn{i}.rmean"].data,
                params[f"enc.bn{i}.rvar"].data,
                training=training,
            )
        else:
            x = ops.conv2d(x, params[f"enc.conv{i}.w"], params[f"enc.conv{i}.b"], stride=2, padding=1)
        x = ops.relu(x)
    pooled = ops.mean_pool_spatial(x)
    return ops.affine(pooled, params["enc.proj.w"], params["enc.proj.b"])


def encode_image(config: EncoderConfig, params: ParamSet, image) -> Tensor:
    """Encode a single (s, s, 3) image -> (E,) in inference mode."""
    img = np.asarray(image)
    if img.ndim != 3:
        raise DimensionError(f"expected a single (s, s, 3) image, got {img.shape}")
    z = encode_images(config, params, img[None], training=False)
    return ops.reshape(z, (config.embedding_dim,))


def encode_sentence(config: SentenceEncoderConfig, params: ParamSet, tokens) -> Tensor:
    """Mean of the learned embedding rows of ``tokens`` -> (L,)."""
    if not tokens:
        raise ValueError("token list must be nonempty")
    ids = [config.token_id(t) for t in tokens]
    rows = ops.gather_rows(params["lang.table"], np.asarray(ids))
    return ops.mean_axis(rows, axis=0)


def alignment_score_rows(config: AlignmentHeadConfig, params: ParamSet, x) -> Tensor:
    """Score a batch of pre-concatenated rows (r, 2E+L) -> (r,)."""
    h = x if isinstance(x, Tensor) else Tensor(np.asarray(x))
    if h.ndim != 2 or h.shape[1] != config.input_dim:
        raise DimensionError(f"expected (r, {config.input_dim}) rows, got {h.shape}")
    for i in range(len(config.hidden_widths)):
        h = ops.relu(ops.affine(h, params[f"head.fc{i}.w"], params[f"head.fc{i}.b"]))
    out = ops.matmul(h, params["head.out.w"])
    return ops.reshape(out, (out.shape[0],))


def alignment_score(config: AlignmentHeadConfig, params: ParamSet, z0, zi, l_emb) -> Tensor:
    """Scalar score of the transition z0 -> zi under sentence embedding l_emb.

    The head input is laid out as [z0, zi, l_emb], in that order.
    """
    z0 = z0 if isinstance(z0, Tensor) else Tensor(np.asarray(z0))
    zi = zi if isinstance(zi, Tensor) else Tensor(np.asarray(zi))
    l_emb = l_emb if isinstance(l_emb, Tensor) else Tensor(np.asarray(l_emb))
    e, l = config.embedding_dim, config.language_dim
    if z0.shape != (e,) or zi.shape != (e,) or l_emb.shape != (l,):
        raise DimensionError(
            f"alignment_score expects z0/zi of shape ({e},) and l_emb of shape ({l},); "
            f"got {z0.shape}, {zi.shape}, {l_emb.shape}"
        )
    row = ops.reshape(ops.concat([z0, zi, l_emb]), (1, config.input_dim))
    return ops.reshape(alignment_score_rows(config, params, row), ())
