"""Convolution kernels: lean (1x1 + 4-point stencil), dense 3x3, and helpers.

All convolutions are cross-correlations with zero padding and no bias.
Stride 2 samples the output at even input coordinates, so an axis of
length ``n`` maps to ``ceil(n / 2)``.

The fused lean forward runs on the compiled extension when it is importable
and on a tiled numpy implementation otherwise; set ``LEANRESNET_BACKEND`` to
``python`` to force the fallback.
"""
from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from leanresnet import _fallback
from leanresnet.tensor import check_tensor

try:
    if os.environ.get("LEANRESNET_BACKEND", "").lower() == "python":
        raise ImportError("fallback forced")
    from leanresnet import _kernels
except ImportError:
    _kernels = None

BACKEND = "compiled" if _kernels is not None else "python"
_IMPLS = {"python": _fallback.lean_forward}
if _kernels is not None:
    _IMPLS["compiled"] = _kernels.lean_forward

# stencil column order: up, left, right, down
STENCIL_OFFSETS = ((-1, 0), (0, -1), (0, 1), (1, 0))


_num_threads = 1


def available_backends() -> list[str]:
    return list(_IMPLS)


def set_num_threads(n: int) -> None:
    """Threads used by the fused kernel when a call does not say otherwise."""
    global _num_threads
    _num_threads = max(1, int(n))


@dataclass
class LeanConvWeights:
    alpha: np.ndarray    # (c_out, c_in); diagonal entries are the stencil centres
    stencil: np.ndarray  # (min(c_in, c_out), 4)
    stride: int = 1

    def __post_init__(self):
        if self.alpha.ndim != 2:
            raise ValueError("alpha must be a matrix")
        d = min(self.alpha.shape)
        if self.stencil.shape != (d, 4):
            raise ValueError(f"stencil must have shape ({d}, 4), got {self.stencil.shape}")
        if self.stride not in (1, 2):
            raise ValueError("stride must be 1 or 2")

    @property
    def c_out(self) -> int:
        return self.alpha.shape[0]

    @property
    def c_in(self) -> int:
        return self.alpha.shape[1]

    @property
    def parameter_count(self) -> int:
        return self.alpha.size + self.stencil.size

    @classmethod
    def zeros(cls, c_in, c_out, stride=1, dtype=np.float64):
        return cls(np.zeros((c_out, c_in), dtype), np.zeros((min(c_in, c_out), 4), dtype), stride)


@dataclass
class DenseConvWeights:
    kernel: np.ndarray  # (c_out, c_in, kh, kw)
    stride: int = 1

    def __post_init__(self):
        if self.kernel.ndim != 4 or self.kernel.shape[2] % 2 == 0 or self.kernel.shape[3] % 2 == 0:
            raise ValueError("kernel must be (c_out, c_in, kh, kw) with odd kh, kw")
        if self.stride not in (1, 2):
            raise ValueError("stride must be 1 or 2")

    @property
    def c_out(self) -> int:
        return self.kernel.shape[0]

    @property
    def c_in(self) -> int:
        return self.kernel.shape[1]

    @property
    def parameter_count(self) -> int:
        return self.kernel.size


@dataclass
class LeanConv3dWeights:
    alpha: np.ndarray    # (c_out, c_in)
    stencil: np.ndarray  # (min(c_in, c_out), 6): -z, +z, -y, +y, -x, +x

    def __post_init__(self):
        d = min(self.alpha.shape)
        if self.stencil.shape != (d, 6):
            raise ValueError(f"stencil must have shape ({d}, 6), got {self.stencil.shape}")

    @property
    def parameter_count(self) -> int:
        return self.alpha.size + self.stencil.size


def out_size(n: int, stride: int) -> int:
    return (n + stride - 1) // stride


def _check_input(x, c_in):
    check_tensor(x)
    if x.shape[1] != c_in:
        raise ValueError(f"input has {x.shape[1]} channels, weights expect {c_in}")


# ---------------------------------------------------------------------------
# lean convolution


def lean_conv2d_fused(x: np.ndarray, w: LeanConvWeights, backend: str | None = None,
                      num_threads: int | None = None) -> np.ndarray:
    """Single-pass lean convolution (channel mixing and stencil in one sweep)."""
    _check_input(x, w.c_in)
    impl = _IMPLS[backend or BACKEND]
    dtype = x.dtype
    x = np.ascontiguousarray(x)
    alpha = np.ascontiguousarray(w.alpha, dtype=dtype)
    stencil = np.ascontiguousarray(w.stencil, dtype=dtype)
    n, _, h, wd = x.shape
    out = np.empty((n, w.c_out, out_size(h, w.stride), out_size(wd, w.stride)), dtype=dtype)
    impl(x, alpha, stencil, w.stride, out, num_threads or _num_threads)
    return out


def conv1x1(x: np.ndarray, alpha: np.ndarray, stride: int = 1) -> np.ndarray:
    """Per-pixel channel mixing ``out_o(p) = sum_i alpha[o, i] x_i(p)``."""
    check_tensor(x)
    if alpha.ndim != 2 or alpha.shape[1] != x.shape[1]:
        raise ValueError(f"alpha shape {alpha.shape} does not match {x.shape[1]} input channels")
    if stride != 1:
        x = x[:, :, ::stride, ::stride]
    n, c, h, w = x.shape
    xm = np.ascontiguousarray(x).reshape(n, c, h * w)
    return np.matmul(alpha.astype(x.dtype, copy=False), xm).reshape(n, alpha.shape[0], h, w)


def depthwise4(x: np.ndarray, stencil: np.ndarray) -> np.ndarray:
    """Per-channel 4-neighbour stencil with zero padding and no centre term."""
    check_tensor(x)
    if stencil.shape != (x.shape[1], 4):
        raise ValueError(f"stencil shape {stencil.shape} does not match {x.shape[1]} channels")
    st = stencil.astype(x.dtype, copy=False)
    up, left, right, down = (st[:, k, None, None] for k in range(4))
    out = np.empty_like(x)
    # one image at a time keeps temporaries bounded
    for b in range(x.shape[0]):
        xp = np.pad(x[b], ((0, 0), (1, 1), (1, 1)))
        o = up * xp[:, :-2, 1:-1]
        o += left * xp[:, 1:-1, :-2]
        o += right * xp[:, 1:-1, 2:]
        o += down * xp[:, 2:, 1:-1]
        out[b] = o
    return out


def lean_conv2d_reference(x: np.ndarray, w: LeanConvWeights) -> np.ndarray:
    """Unfused lean convolution: full 1x1 pass, full depth-wise pass, add, sample."""
    _check_input(x, w.c_in)
    d = w.stencil.shape[0]
    y = conv1x1(x, w.alpha)
    y[:, :d] += depthwise4(x[:, :d], w.stencil)
    if w.stride != 1:
        y = np.ascontiguousarray(y[:, :, ::w.stride, ::w.stride])
    return y


def _stencil_views(p: np.ndarray, ho: int, wo: int, s: int):
    """Views of a 1-padded array at the four neighbours of each sampled pixel."""
    rows = slice(1, 2 + (ho - 1) * s, s)
    cols = slice(1, 2 + (wo - 1) * s, s)
    return (
        p[..., 0:1 + (ho - 1) * s:s, cols],
        p[..., rows, 0:1 + (wo - 1) * s:s],
        p[..., rows, 2:3 + (wo - 1) * s:s],
        p[..., 2:3 + (ho - 1) * s:s, cols],
    )


def lean_conv2d_backward(x: np.ndarray, w: LeanConvWeights, dy: np.ndarray):
    """Gradients of the lean convolution: returns ``(dx, dalpha, dstencil)``."""
    _check_input(x, w.c_in)
    n, _, h, wd = x.shape
    s = w.stride
    ho, wo = out_size(h, s), out_size(wd, s)
    if dy.shape != (n, w.c_out, ho, wo):
        raise ValueError(f"dy shape {dy.shape} does not match output {(n, w.c_out, ho, wo)}")
    d = w.stencil.shape[0]
    alpha = w.alpha.astype(x.dtype, copy=False)
    st = w.stencil.astype(x.dtype, copy=False)

    xs = x[:, :, ::s, ::s]
    dalpha = np.tensordot(dy, xs, axes=([0, 2, 3], [0, 2, 3]))
    dx = np.zeros_like(x)
    dx[:, :, ::s, ::s] = np.einsum("oi,nohw->nihw", alpha, dy, optimize=True)

    xp = np.pad(x[:, :d], ((0, 0), (0, 0), (1, 1), (1, 1)))
    dyd = dy[:, :d]
    dstencil = np.empty((d, 4), dtype=x.dtype)
    dxp = np.zeros_like(xp)
    for k, (xv, dv) in enumerate(zip(_stencil_views(xp, ho, wo, s), _stencil_views(dxp, ho, wo, s))):
        dstencil[:, k] = np.einsum("nchw,nchw->c", dyd, xv)
        dv += st[:, k, None, None] * dyd
    dx[:, :d] += dxp[:, :, 1:-1, 1:-1]
    return dx, dalpha, dstencil


def conv1x1_backward(x: np.ndarray, alpha: np.ndarray, dy: np.ndarray, stride: int = 1):
    xs = x[:, :, ::stride, ::stride]
    dalpha = np.tensordot(dy, xs, axes=([0, 2, 3], [0, 2, 3]))
    dx = np.zeros_like(x)
    dx[:, :, ::stride, ::stride] = np.einsum("oi,nohw->nihw", alpha.astype(x.dtype, copy=False), dy,
                                             optimize=True)
    return dx, dalpha


def lean_to_dense(w: LeanConvWeights) -> DenseConvWeights:
    """Embed lean weights as the equivalent (sparse) 3x3 dense kernel."""
    kernel = np.zeros((w.c_out, w.c_in, 3, 3), dtype=w.alpha.dtype)
    kernel[:, :, 1, 1] = w.alpha
    idx = np.arange(w.stencil.shape[0])
    for k, (dr, dc) in enumerate(STENCIL_OFFSETS):
        kernel[idx, idx, 1 + dr, 1 + dc] = w.stencil[:, k]
    return DenseConvWeights(kernel, w.stride)


# ---------------------------------------------------------------------------
# dense convolution

_COLS_BUDGET = 1 << 24  # elements of im2col scratch per chunk


def _im2col(xp, kh, kw, ho, wo, s):
    n, c = xp.shape[:2]
    cols = np.empty((n, c, kh, kw, ho, wo), dtype=xp.dtype)
    for ky in range(kh):
        for kx in range(kw):
            cols[:, :, ky, kx] = xp[:, :, ky:ky + (ho - 1) * s + 1:s, kx:kx + (wo - 1) * s + 1:s]
    return cols.reshape(n, c * kh * kw, ho * wo)


def _chunks(n, per_item):
    step = max(1, _COLS_BUDGET // max(per_item, 1))
    for b0 in range(0, n, step):
        yield slice(b0, min(n, b0 + step))


def dense_conv2d(x: np.ndarray, w: DenseConvWeights) -> np.ndarray:
    """Fully coupled convolution via im2col and one matmul per batch chunk."""
    _check_input(x, w.c_in)
    c_out, c_in, kh, kw = w.kernel.shape
    n, _, h, wd = x.shape
    s = w.stride
    ho, wo = out_size(h, s), out_size(wd, s)
    kmat = w.kernel.reshape(c_out, -1).astype(x.dtype, copy=False)
    out = np.empty((n, c_out, ho, wo), dtype=x.dtype)
    ph, pw = kh // 2, kw // 2
    for sl in _chunks(n, c_in * kh * kw * ho * wo):
        xp = np.pad(x[sl], ((0, 0), (0, 0), (ph, ph), (pw, pw)))
        cols = _im2col(xp, kh, kw, ho, wo, s)
        out[sl] = np.matmul(kmat, cols).reshape(-1, c_out, ho, wo)
    return out


def dense_conv2d_backward(x: np.ndarray, w: DenseConvWeights, dy: np.ndarray):
    """Returns ``(dx, dkernel)``."""
    _check_input(x, w.c_in)
    c_out, c_in, kh, kw = w.kernel.shape
    n, _, h, wd = x.shape
    s = w.stride
    ho, wo = out_size(h, s), out_size(wd, s)
    if dy.shape != (n, c_out, ho, wo):
        raise ValueError(f"dy shape {dy.shape} does not match output {(n, c_out, ho, wo)}")
    kmat = w.kernel.reshape(c_out, -1).astype(x.dtype, copy=False)
    ph, pw = kh // 2, kw // 2
    dkernel = np.zeros((c_out, c_in * kh * kw), dtype=x.dtype)
    dx = np.empty_like(x)
    for sl in _chunks(n, c_in * kh * kw * ho * wo):
        xp = np.pad(x[sl], ((0, 0), (0, 0), (ph, ph), (pw, pw)))
        cols = _im2col(xp, kh, kw, ho, wo, s)
        dym = dy[sl].reshape(-1, c_out, ho * wo)
        dkernel += np.tensordot(dym, cols, axes=([0, 2], [0, 2]))
        dcols = np.matmul(kmat.T, dym).reshape(-1, c_in, kh, kw, ho, wo)
        dxp = np.zeros_like(xp)
        for ky in range(kh):
            for kx in range(kw):
                dxp[:, :, ky:ky + (ho - 1) * s + 1:s, kx:kx + (wo - 1) * s + 1:s] += dcols[:, :, ky, kx]
        dx[sl] = dxp[:, :, ph:ph + h, pw:pw + wd]
    return dx, dkernel.reshape(w.kernel.shape)


# ---------------------------------------------------------------------------
# 3-D lean convolution (7-point stencil), stride 1

_FACE_OFFSETS = ((-1, 0, 0), (1, 0, 0), (0, -1, 0), (0, 1, 0), (0, 0, -1), (0, 0, 1))


def _face_views(p, dd, h, w):
    views = []
    for dz, dy_, dx_ in _FACE_OFFSETS:
        views.append(p[..., 1 + dz:1 + dz + dd, 1 + dy_:1 + dy_ + h, 1 + dx_:1 + dx_ + w])
    return views


def lean_conv3d(x: np.ndarray, w: LeanConv3dWeights) -> np.ndarray:
    check_tensor(x, ndim=5)
    if x.shape[1] != w.alpha.shape[1]:
        raise ValueError(f"input has {x.shape[1]} channels, weights expect {w.alpha.shape[1]}")
    n, c, dd, h, wd = x.shape
    d = w.stencil.shape[0]
    st = w.stencil.astype(x.dtype, copy=False)
    y = np.einsum("oi,nidhw->nodhw", w.alpha.astype(x.dtype, copy=False), x, optimize=True)
    xp = np.pad(x[:, :d], ((0, 0), (0, 0), (1, 1), (1, 1), (1, 1)))
    for k, v in enumerate(_face_views(xp, dd, h, wd)):
        y[:, :d] += st[:, k, None, None, None] * v
    return y


def lean_conv3d_backward(x: np.ndarray, w: LeanConv3dWeights, dy: np.ndarray):
    """Returns ``(dx, dalpha, dstencil)``."""
    n, c, dd, h, wd = x.shape
    if dy.shape != (n, w.alpha.shape[0], dd, h, wd):
        raise ValueError("dy shape does not match output")
    d = w.stencil.shape[0]
    st = w.stencil.astype(x.dtype, copy=False)
    dalpha = np.tensordot(dy, x, axes=([0, 2, 3, 4], [0, 2, 3, 4]))
    dx = np.einsum("oi,nodhw->nidhw", w.alpha.astype(x.dtype, copy=False), dy, optimize=True)
    xp = np.pad(x[:, :d], ((0, 0), (0, 0), (1, 1), (1, 1), (1, 1)))
    dxp = np.zeros_like(xp)
    dstencil = np.empty((d, 6), dtype=x.dtype)
    dyd = dy[:, :d]
    for k, (xv, dv) in enumerate(zip(_face_views(xp, dd, h, wd), _face_views(dxp, dd, h, wd))):
        dstencil[:, k] = np.einsum("ncdhw,ncdhw->c", dyd, xv)
        dv += st[:, k, None, None, None] * dyd
    dx[:, :d] += dxp[:, :, 1:-1, 1:-1, 1:-1]
    return dx, dalpha, dstencil


# ---------------------------------------------------------------------------
# FLOP accounting

LAYER_KINDS = ("lean", "dense3x3", "conv1x1", "depthwise4")


def layer_flops(kind: str, c_in: int, c_out: int, h: int, w: int) -> int:
    """FLOPs of one layer on one image at output resolution ``h x w``.

    A multiply-accumulate counts as two FLOPs.
    """
    if min(c_in, c_out, h, w) < 1:
        raise ValueError("dimensions must be positive")
    hw = h * w
    if kind == "lean":
        return (2 * c_in * c_out + 8 * min(c_in, c_out)) * hw
    if kind == "dense3x3":
        return 18 * c_in * c_out * hw
    if kind == "conv1x1":
        return 2 * c_in * c_out * hw
    if kind == "depthwise4":
        return 8 * min(c_in, c_out) * hw
    raise ValueError(f"unknown layer kind {kind!r}")
