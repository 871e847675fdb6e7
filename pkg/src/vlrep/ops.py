"""Differentiable primitive operators with exact reverse-mode gradients.

Every function takes and returns ``Tensor`` and registers a backward closure
when gradients are enabled. Conventions:

* images are NHWC, weights for conv are (kh, kw, c_in, c_out)
* the L2 norm and L2 distance use the zero subgradient at the origin
* ``contrastive_nll`` is computed through a max-shifted log-sum-exp and never
  exponentiates large scores directly
"""

from __future__ import annotations

import numpy as np

from .tensor import DimensionError, Tensor, as_tensor, make_node

# Guard against division by exactly zero in norm/distance backward passes.
# The forward values are untouched; at the non-differentiable origin the
# subgradient is chosen as 0.
_NORM_EPS = 0.0


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


# -- elementwise --------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data + b.data

    def backward(g: np.ndarray) -> None:
        a.accumulate(_unbroadcast(g, a.shape))
        b.accumulate(_unbroadcast(g, b.shape))

    return make_node(out, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data - b.data

    def backward(g: np.ndarray) -> None:
        a.accumulate(_unbroadcast(g, a.shape))
        b.accumulate(_unbroadcast(-g, b.shape))

    return make_node(out, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data * b.data

    def backward(g: np.ndarray) -> None:
        a.accumulate(_unbroadcast(g * b.data, a.shape))
        b.accumulate(_unbroadcast(g * a.data, b.shape))

    return make_node(out, (a, b), backward)


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)
    c = float(c)
    out = a.data * c

    def backward(g: np.ndarray) -> None:
        a.accumulate(g * c)

    return make_node(out, (a,), backward)


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    out = np.where(mask, a.data, 0.0).astype(a.dtype, copy=False)

    def backward(g: np.ndarray) -> None:
        a.accumulate(g * mask)

    return make_node(out, (a,), backward)


def absval(a) -> Tensor:
    """Elementwise |x|; subgradient 0 at x == 0."""
    a = as_tensor(a)
    out = np.abs(a.data)

    def backward(g: np.ndarray) -> None:
        a.accumulate(g * np.sign(a.data))

    return make_node(out, (a,), backward)


def square(a) -> Tensor:
    a = as_tensor(a)
    out = a.data * a.data

    def backward(g: np.ndarray) -> None:
        a.accumulate(g * 2.0 * a.data)

    return make_node(out, (a,), backward)


def sqrt(a) -> Tensor:
    """Elementwise sqrt; gradient defined as 0 where x == 0."""
    a = as_tensor(a)
    out = np.sqrt(a.data)

    def backward(g: np.ndarray) -> None:
        denom = 2.0 * out
        grad = np.divide(g, denom, out=np.zeros_like(out), where=denom != 0)
        a.accumulate(grad)

    return make_node(out, (a,), backward)


# -- reductions ---------------------------------------------------------------


def sum_all(a) -> Tensor:
    a = as_tensor(a)
    out = np.asarray(a.data.sum())

    def backward(g: np.ndarray) -> None:
        a.accumulate(np.broadcast_to(g, a.shape).astype(a.dtype, copy=False))

    return make_node(out, (a,), backward)


def sum_axis(a, axis: int) -> Tensor:
    a = as_tensor(a)
    out = a.data.sum(axis=axis)

    def backward(g: np.ndarray) -> None:
        a.accumulate(np.expand_dims(g, axis) * np.ones_like(a.data))

    return make_node(out, (a,), backward)


def mean_all(a) -> Tensor:
    a = as_tensor(a)
    n = a.size
    out = np.asarray(a.data.mean())

    def backward(g: np.ndarray) -> None:
        a.accumulate(np.broadcast_to(g / n, a.shape).astype(a.dtype, copy=False))

    return make_node(out, (a,), backward)


def mean_axis(a, axis: int) -> Tensor:
    a = as_tensor(a)
    n = a.shape[axis]
    out = a.data.mean(axis=axis)

    def backward(g: np.ndarray) -> None:
        a.accumulate(np.expand_dims(g / n, axis) * np.ones_like(a.data))

    return make_node(out, (a,), backward)


# -- shaping ------------------------------------------------------------------


def reshape(a, shape: tuple[int, ...]) -> Tensor:
    a = as_tensor(a)
    out = a.data.reshape(shape)

    def backward(g: np.ndarray) -> None:
        a.accumulate(g.reshape(a.shape))

    return make_node(out, (a,), backward)


def concat(tensors: list[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g: np.ndarray) -> None:
        for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
            t.accumulate(piece)

    return make_node(out, tuple(tensors), backward)


def stack_rows(tensors: list[Tensor]) -> Tensor:
    """Stack equal-shape tensors along a new leading axis."""
    tensors = [as_tensor(t) for t in tensors]
    out = np.stack([t.data for t in tensors], axis=0)

    def backward(g: np.ndarray) -> None:
        for i, t in enumerate(tensors):
            t.accumulate(g[i])

    return make_node(out, tuple(tensors), backward)


def gather_rows(a, idx) -> Tensor:
    """Select rows ``a[idx]`` along the leading axis; scatter-add backward."""
    a = as_tensor(a)
    idx = np.asarray(idx, dtype=np.intp)
    out = a.data[idx]

    def backward(g: np.ndarray) -> None:
        acc = np.zeros_like(a.data)
        np.add.at(acc, idx, g)
        a.accumulate(acc)

    return make_node(out, (a,), backward)


def stack_cols(tensors: list[Tensor]) -> Tensor:
    """Stack k equal-length vectors into a (n, k) matrix."""
    tensors = [as_tensor(t) for t in tensors]
    out = np.stack([t.data for t in tensors], axis=1)

    def backward(g: np.ndarray) -> None:
        for i, t in enumerate(tensors):
            t.accumulate(g[:, i])

    return make_node(out, tuple(tensors), backward)


# -- linear algebra -----------------------------------------------------------


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shapes incompatible: {a.shape} @ {b.shape}")
    out = a.data @ b.data

    def backward(g: np.ndarray) -> None:
        a.accumulate(g @ b.data.T)
        b.accumulate(a.data.T @ g)

    return make_node(out, (a, b), backward)


def affine(x, w, b) -> Tensor:
    """x @ w + b for x of shape (n, d_in) or (d_in,)."""
    x = as_tensor(x)
    if x.ndim == 1:
        return _affine_vec(x, w, b)
    return add(matmul(x, w), b)


def _affine_vec(x, w, b) -> Tensor:
    w, b = as_tensor(w), as_tensor(b)
    if x.shape[0] != w.shape[0]:
        raise DimensionError(f"affine shapes incompatible: {x.shape} @ {w.shape}")
    out = x.data @ w.data + b.data

    def backward(g: np.ndarray) -> None:
        x.accumulate(g @ w.data.T)
        w.accumulate(np.outer(x.data, g))
        b.accumulate(g)

    return make_node(out, (x, w, b), backward)


# -- image operators ----------------------------------------------------------


def conv2d(x, w, b=None, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D convolution, NHWC input, (kh, kw, c_in, c_out) weights.

    Implemented as strided patch extraction + one GEMM; the input gradient is
    reconstructed with kh*kw slice additions rather than a scatter. ``b`` may
    be None (e.g. when a following normalization would absorb it anyway).
    """
    x, w = as_tensor(x), as_tensor(w)
    b = as_tensor(b) if b is not None else None
    if x.ndim != 4 or w.ndim != 4:
        raise DimensionError(f"conv2d expects NHWC input and 4-D weights, got {x.shape}, {w.shape}")
    n, h, wd, cin = x.shape
    kh, kw, wcin, cout = w.shape
    if cin != wcin:
        raise DimensionError(f"conv2d channel mismatch: input {cin} vs weights {wcin}")
    s, p = int(stride), int(padding)
    oh = (h + 2 * p - kh) // s + 1
    ow = (wd + 2 * p - kw) // s + 1
    if oh < 1 or ow < 1:
        raise DimensionError(f"conv2d output would be empty for input {x.shape}")

    if p > 0:
        xp = np.pad(x.data, ((0, 0), (p, p), (p, p), (0, 0)))
    else:
        xp = x.data
    # (n, oh, ow, kh, kw, cin) view, then one flat GEMM
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(1, 2))
    win = win[:, ::s, ::s]  # (n, oh, ow, cin, kh, kw)
    patches = win.transpose(0, 1, 2, 4, 5, 3).reshape(n * oh * ow, kh * kw * cin)
    wmat = w.data.reshape(kh * kw * cin, cout)
    out = (patches @ wmat).reshape(n, oh, ow, cout)
    if b is not None:
        out = out + b.data

    def backward(g: np.ndarray) -> None:
        gmat = g.reshape(n * oh * ow, cout)
        w.accumulate((patches.T @ gmat).reshape(w.shape))
        if b is not None:
            b.accumulate(g.sum(axis=(0, 1, 2)))
        gpatch = (gmat @ wmat.T).reshape(n, oh, ow, kh, kw, cin)
        gxp = np.zeros((n, h + 2 * p, wd + 2 * p, cin), dtype=g.dtype)
        for ki in range(kh):
            for kj in range(kw):
                gxp[:, ki : ki + s * oh : s, kj : kj + s * ow : s] += gpatch[:, :, :, ki, kj]
        if p > 0:
            x.accumulate(gxp[:, p : p + h, p : p + wd])
        else:
            x.accumulate(gxp)

    parents = (x, w) if b is None else (x, w, b)
    return make_node(out, parents, backward)


def mean_pool_spatial(x) -> Tensor:
    """Average over H and W: (n, h, w, c) -> (n, c)."""
    x = as_tensor(x)
    if x.ndim != 4:
        raise DimensionError(f"mean_pool_spatial expects NHWC, got {x.shape}")
    n, h, w, c = x.shape
    out = x.data.mean(axis=(1, 2))

    def backward(g: np.ndarray) -> None:
        x.accumulate(np.broadcast_to(g[:, None, None, :] / (h * w), x.shape).astype(g.dtype, copy=False))

    return make_node(out, (x,), backward)


def batchnorm(
    x,
    gamma,
    beta,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Batch normalization over all axes except the last (channels).

    In training mode the batch statistics enter the graph (full backward
    through mean and variance) and the running buffers are updated in place.
    In inference mode the frozen running statistics are used and the op is an
    elementwise affine map.
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    axes = tuple(range(x.ndim - 1))
    m = int(np.prod([x.shape[a] for a in axes])) if axes else 1

    if training:
        mean = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mean
        running_var *= 1.0 - momentum
        running_var += momentum * var
    else:
        mean = running_mean
        var = running_var

    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mean) * inv_std
    out = xhat * gamma.data + beta.data

    if training:

        def backward(g: np.ndarray) -> None:
            gamma.accumulate((g * xhat).sum(axis=axes))
            beta.accumulate(g.sum(axis=axes))
            gx_hat = g * gamma.data
            # standard batchnorm backward through batch mean/var
            gvar = (gx_hat * (x.data - mean)).sum(axis=axes) * (-0.5) * inv_std**3
            gmean = -(gx_hat.sum(axis=axes)) * inv_std + gvar * (-2.0 / m) * (
                x.data - mean
            ).sum(axis=axes)
            gx = gx_hat * inv_std + gvar * 2.0 * (x.data - mean) / m + gmean / m
            x.accumulate(gx.astype(g.dtype, copy=False))

    else:

        def backward(g: np.ndarray) -> None:
            gamma.accumulate((g * xhat).sum(axis=axes))
            beta.accumulate(g.sum(axis=axes))
            x.accumulate((g * gamma.data * inv_std).astype(g.dtype, copy=False))

    return make_node(out, (x, gamma, beta), backward)


# -- similarity, norms, contrastive kernel ------------------------------------


def neg_l2_sim(a, b) -> Tensor:
    """Similarity of two vectors as the negative euclidean distance."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 1 or a.shape != b.shape:
        raise DimensionError(f"neg_l2_sim expects matching vectors, got {a.shape}, {b.shape}")
    d = a.data - b.data
    dist = float(np.sqrt((d * d).sum()))
    out = np.asarray(-dist, dtype=a.dtype)

    def backward(g: np.ndarray) -> None:
        if dist > _NORM_EPS:
            gd = (-g * d / dist).astype(a.dtype, copy=False)
        else:
            gd = np.zeros_like(d)
        a.accumulate(gd)
        b.accumulate(-gd)

    return make_node(out, (a, b), backward)


def neg_l2_sim_rows(a, b) -> Tensor:
    """Row-wise negative L2 distance for (r, d) matrices -> (r,) scores."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or a.shape != b.shape:
        raise DimensionError(f"neg_l2_sim_rows expects matching (r, d) matrices, got {a.shape}, {b.shape}")
    d = a.data - b.data
    dist = np.sqrt((d * d).sum(axis=1))
    out = -dist

    def backward(g: np.ndarray) -> None:
        safe = np.where(dist > _NORM_EPS, dist, 1.0)
        gd = (-g / safe)[:, None] * d
        gd[dist <= _NORM_EPS] = 0.0
        a.accumulate(gd)
        b.accumulate(-gd)

    return make_node(out, (a, b), backward)


def l1_norm(v) -> Tensor:
    """Sum of absolute values over all elements."""
    v = as_tensor(v)
    out = np.asarray(np.abs(v.data).sum())

    def backward(g: np.ndarray) -> None:
        v.accumulate(g * np.sign(v.data))

    return make_node(out, (v,), backward)


def l2_norm(v) -> Tensor:
    """Unsquared euclidean norm; subgradient 0 at the origin."""
    v = as_tensor(v)
    norm = float(np.sqrt((v.data * v.data).sum()))
    out = np.asarray(norm, dtype=v.dtype)

    def backward(g: np.ndarray) -> None:
        if norm > _NORM_EPS:
            v.accumulate(g * v.data / norm)
        # at v == 0 the subgradient is 0: accumulate nothing

    return make_node(out, (v,), backward)


def rowwise_l1(z) -> Tensor:
    """Per-row L1 norm of a (r, d) matrix -> (r,)."""
    z = as_tensor(z)
    out = np.abs(z.data).sum(axis=1)

    def backward(g: np.ndarray) -> None:
        z.accumulate(g[:, None] * np.sign(z.data))

    return make_node(out, (z,), backward)


def rowwise_l2(z) -> Tensor:
    """Per-row unsquared L2 norm of a (r, d) matrix -> (r,)."""
    z = as_tensor(z)
    norms = np.sqrt((z.data * z.data).sum(axis=1))
    out = norms

    def backward(g: np.ndarray) -> None:
        safe = np.where(norms > _NORM_EPS, norms, 1.0)
        gz = (g / safe)[:, None] * z.data
        gz[norms <= _NORM_EPS] = 0.0
        z.accumulate(gz)

    return make_node(out, (z,), backward)


def infonce_rows(pos, negs) -> Tensor:
    """Row-batched contrastive NLL: pos (n,), negs (n, k) -> losses (n,).

    Same max-shifted log-sum-exp as ``contrastive_nll``, one row per anchor.
    """
    pos, negs = as_tensor(pos), as_tensor(negs)
    if pos.ndim != 1 or negs.ndim != 2 or negs.shape[0] != pos.shape[0] or negs.shape[1] == 0:
        raise DimensionError(f"infonce_rows expects (n,) and (n, k>=1), got {pos.shape}, {negs.shape}")
    m = np.maximum(pos.data, negs.data.max(axis=1))
    exp_p = np.exp(pos.data - m)
    exp_n = np.exp(negs.data - m[:, None])
    total = exp_p + exp_n.sum(axis=1)
    out = np.log(total) + m - pos.data

    def backward(g: np.ndarray) -> None:
        pos.accumulate(g * (exp_p / total - 1.0))
        negs.accumulate(g[:, None] * exp_n / total[:, None])

    return make_node(out, (pos, negs), backward)


def contrastive_nll(pos_score, neg_scores) -> Tensor:
    """-log(e^pos / (e^pos + sum_k e^neg_k)) via max-shifted log-sum-exp.

    ``pos_score`` is a scalar tensor, ``neg_scores`` a nonempty vector tensor.
    The gradient is the softmax over all scores (minus one on the positive).
    """
    pos, negs = as_tensor(pos_score), as_tensor(neg_scores)
    if pos.size != 1:
        raise DimensionError(f"pos_score must be scalar, got shape {pos.shape}")
    if negs.ndim != 1 or negs.size == 0:
        raise ValueError("neg_scores must be a nonempty vector")
    p = float(pos.data)
    nv = negs.data
    m = max(p, float(nv.max()))
    exp_p = np.exp(p - m)
    exp_n = np.exp(nv - m)
    total = exp_p + exp_n.sum()
    # loss = log(total) + m - pos
    out = np.asarray(np.log(total) + m - p, dtype=negs.dtype)

    def backward(g: np.ndarray) -> None:
        gs = float(g)
        pos.accumulate(np.asarray(gs * (exp_p / total - 1.0), dtype=pos.dtype).reshape(pos.shape))
        negs.accumulate((gs * exp_n / total).astype(negs.dtype, copy=False))

    return make_node(out, (pos, negs), backward)
