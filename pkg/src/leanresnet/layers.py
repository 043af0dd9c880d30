"""Non-convolutional layers and the pre-activation residual step.

Every layer is a pair of functions: a forward that returns its output and
whatever it needs to go backwards, and a backward that takes that cache and
the output gradient. Gradients of parameters come back as plain dicts keyed
by the same names used in ``named_parameters``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from leanresnet.conv import (
    DenseConvWeights,
    LeanConvWeights,
    conv1x1,
    conv1x1_backward,
    dense_conv2d,
    dense_conv2d_backward,
    lean_conv2d_backward,
    lean_conv2d_fused,
)

EPS = 1e-5
MOMENTUM = 0.1


def relu(x):
    return np.maximum(x, 0)


def relu_backward(x, dy):
    return np.where(x > 0, dy, 0).astype(dy.dtype, copy=False)


@dataclass
class BatchNormParams:
    scale: np.ndarray
    shift: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    eps: float = EPS
    momentum: float = MOMENTUM

    @classmethod
    def init(cls, channels, dtype=np.float32):
        return cls(np.ones(channels, dtype), np.zeros(channels, dtype),
                   np.zeros(channels, dtype), np.ones(channels, dtype))

    @property
    def parameter_count(self):
        return self.scale.size + self.shift.size


def batch_norm(x, p: BatchNormParams, mode="train", update_stats=True):
    """Per-channel normalisation over (batch, height, width).

    In train mode the batch statistics are used and, unless ``update_stats``
    is false, folded into the running statistics with ``p.momentum``.
    Returns ``(y, cache)``.
    """
    if mode == "train":
        m = x.shape[0] * x.shape[2] * x.shape[3]
        if m < 2:
            raise ValueError("batch norm in train mode needs at least 2 values per channel")
        mean = x.mean(axis=(0, 2, 3))
        var = x.var(axis=(0, 2, 3))
        if update_stats:
            p.running_mean[...] = (1 - p.momentum) * p.running_mean + p.momentum * mean
            p.running_var[...] = (1 - p.momentum) * p.running_var + p.momentum * var * m / (m - 1)
    elif mode == "eval":
        mean, var = p.running_mean, p.running_var
    else:
        raise ValueError(f"unknown mode {mode!r}")
    inv_std = (1.0 / np.sqrt(var + p.eps)).astype(x.dtype)
    xhat = (x - mean.astype(x.dtype)[:, None, None]) * inv_std[:, None, None]
    y = xhat * p.scale.astype(x.dtype)[:, None, None] + p.shift.astype(x.dtype)[:, None, None]
    return y, (xhat, inv_std, mode)


def batch_norm_backward(cache, p: BatchNormParams, dy):
    xhat, inv_std, mode = cache
    dscale = np.einsum("nchw,nchw->c", dy, xhat)
    dshift = dy.sum(axis=(0, 2, 3))
    g = (p.scale.astype(dy.dtype) * inv_std)[:, None, None]
    if mode == "eval":
        return dy * g, {"scale": dscale, "shift": dshift}
    m = dy.shape[0] * dy.shape[2] * dy.shape[3]
    dx = g * (dy - (dshift / m)[:, None, None] - xhat * (dscale / m)[:, None, None])
    return dx, {"scale": dscale, "shift": dshift}


# ---------------------------------------------------------------------------
# convolution dispatch on weight type


def conv_forward(x, w):
    if isinstance(w, LeanConvWeights):
        return lean_conv2d_fused(x, w)
    return dense_conv2d(x, w)


def conv_backward(x, w, dy):
    """Returns ``(dx, grads)`` where ``grads`` is keyed like ``conv_params``."""
    if isinstance(w, LeanConvWeights):
        dx, dalpha, dstencil = lean_conv2d_backward(x, w, dy)
        return dx, {"alpha": dalpha, "stencil": dstencil}
    dx, dkernel = dense_conv2d_backward(x, w, dy)
    return dx, {"kernel": dkernel}


def conv_params(w):
    if isinstance(w, LeanConvWeights):
        return {"alpha": w.alpha, "stencil": w.stencil}
    return {"kernel": w.kernel}


# ---------------------------------------------------------------------------
# residual step


@dataclass
class StepWeights:
    conv1: LeanConvWeights | DenseConvWeights
    conv2: LeanConvWeights | DenseConvWeights
    norm1: BatchNormParams
    norm2: BatchNormParams
    shortcut: np.ndarray | None = None  # (c_out, c_in) projection, strided like conv1
    shortcut_stride: int = 1

    def __post_init__(self):
        if self.conv1.c_out != self.conv2.c_in:
            raise ValueError("conv1 output channels must equal conv2 input channels")
        identity = self.conv1.c_in == self.conv2.c_out and self.conv1.stride == 1
        if self.shortcut is None and not identity:
            raise ValueError("dimension-changing step needs a shortcut projection")

    @property
    def c_in(self):
        return self.conv1.c_in

    @property
    def c_out(self):
        return self.conv2.c_out

    def named_parameters(self):
        yield "norm1.scale", self.norm1.scale
        yield "norm1.shift", self.norm1.shift
        for k, v in conv_params(self.conv1).items():
            yield f"conv1.{k}", v
        yield "norm2.scale", self.norm2.scale
        yield "norm2.shift", self.norm2.shift
        for k, v in conv_params(self.conv2).items():
            yield f"conv2.{k}", v
        if self.shortcut is not None:
            yield "shortcut", self.shortcut

    def named_buffers(self):
        yield "norm1.running_mean", self.norm1.running_mean
        yield "norm1.running_var", self.norm1.running_var
        yield "norm2.running_mean", self.norm2.running_mean
        yield "norm2.running_var", self.norm2.running_var


def resnet_step(y, step: StepWeights, mode="train", update_stats=True):
    """``shortcut(y) + conv2(relu(norm2(conv1(relu(norm1(y))))))``.

    Returns ``(y_next, cache)``; identity steps use ``y`` itself as shortcut.
    """
    if y.shape[1] != step.c_in:
        raise ValueError(f"step expects {step.c_in} channels, got {y.shape[1]}")
    a1, bn1 = batch_norm(y, step.norm1, mode, update_stats)
    r1 = relu(a1)
    z1 = conv_forward(r1, step.conv1)
    a2, bn2 = batch_norm(z1, step.norm2, mode, update_stats)
    r2 = relu(a2)
    f = conv_forward(r2, step.conv2)
    if step.shortcut is None:
        out = y + f
    else:
        out = conv1x1(y, step.shortcut, step.shortcut_stride) + f
    return out, (y, a1, bn1, r1, z1, a2, bn2, r2)


def resnet_step_backward(cache, step: StepWeights, dout):
    y, a1, bn1, r1, z1, a2, bn2, r2 = cache
    grads = {}
    dr2, g = conv_backward(r2, step.conv2, dout)
    grads.update({f"conv2.{k}": v for k, v in g.items()})
    dz1, g = batch_norm_backward(bn2, step.norm2, relu_backward(a2, dr2))
    grads.update({f"norm2.{k}": v for k, v in g.items()})
    dr1, g = conv_backward(r1, step.conv1, dz1)
    grads.update({f"conv1.{k}": v for k, v in g.items()})
    dy, g = batch_norm_backward(bn1, step.norm1, relu_backward(a1, dr1))
    grads.update({f"norm1.{k}": v for k, v in g.items()})
    if step.shortcut is None:
        dy = dy + dout
    else:
        dys, dproj = conv1x1_backward(y, step.shortcut, dout, step.shortcut_stride)
        dy = dy + dys
        grads["shortcut"] = dproj
    return dy, grads


# ---------------------------------------------------------------------------
# pooling and classifier


def global_avg_pool(x):
    return x.mean(axis=(2, 3))


def global_avg_pool_backward(x_shape, dfeat):
    n, c, h, w = x_shape
    return np.broadcast_to((dfeat / (h * w))[:, :, None, None], x_shape).copy()


@dataclass
class LinearParams:
    weight: np.ndarray  # (classes, features)
    bias: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.bias is None:
            self.bias = np.zeros(self.weight.shape[0], self.weight.dtype)

    @property
    def parameter_count(self):
        return self.weight.size + self.bias.size


def _check_labels(labels, classes):
    labels = np.asarray(labels)
    if labels.size and (labels.min() < 0 or labels.max() >= classes):
        raise ValueError(f"labels must lie in [0, {classes})")
    return labels


def logits_forward(features, p: LinearParams):
    return features @ p.weight.T.astype(features.dtype, copy=False) + p.bias.astype(features.dtype)


def softmax_ce(logits, labels):
    """Mean cross-entropy and accuracy; also returns the logit gradient."""
    labels = _check_labels(labels, logits.shape[1])
    n = logits.shape[0]
    z = logits - logits.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - logsum
    loss = float(-logp[np.arange(n), labels].mean())
    acc = float((logits.argmax(axis=1) == labels).mean())
    dlogits = np.exp(logp)
    dlogits[np.arange(n), labels] -= 1
    dlogits /= n
    return loss, acc, dlogits


def linear_softmax_ce(features, labels, p: LinearParams):
    """Returns ``(loss, accuracy, cache)``."""
    logits = logits_forward(features, p)
    loss, acc, dlogits = softmax_ce(logits, labels)
    return loss, acc, (features, dlogits)


def linear_softmax_ce_backward(cache, p: LinearParams):
    features, dlogits = cache
    dfeat = dlogits @ p.weight.astype(dlogits.dtype, copy=False)
    return dfeat, {"weight": dlogits.T @ features, "bias": dlogits.sum(axis=0)}
