"""Rank-4/rank-5 array helpers shared by every module.

Feature maps are plain ``numpy.ndarray`` objects in NCHW (or NCDHW) order,
C-contiguous, with dtype ``float32`` or ``float64``.
"""
from __future__ import annotations

import numpy as np

DTYPES = {"single": np.float32, "double": np.float64}


def as_dtype(precision) -> np.dtype:
    if isinstance(precision, str):
        try:
            return np.dtype(DTYPES[precision])
        except KeyError:
            raise ValueError(f"unknown precision {precision!r}") from None
    dt = np.dtype(precision)
    if dt not in (np.float32, np.float64):
        raise ValueError(f"unsupported dtype {dt}")
    return dt


def check_tensor(x: np.ndarray, ndim: int = 4, name: str = "x") -> None:
    if x.ndim != ndim:
        raise ValueError(f"{name}: expected rank {ndim}, got shape {x.shape}")
    if min(x.shape) < 1:
        raise ValueError(f"{name}: all dimensions must be >= 1, got {x.shape}")


def pad2d(x: np.ndarray, pad: int) -> np.ndarray:
    """Zero-pad the two trailing (spatial) axes by ``pad`` on every side."""
    if pad < 0:
        raise ValueError("pad must be >= 0")
    if pad == 0:
        return x
    n, c, h, w = x.shape
    out = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=x.dtype)
    out[:, :, pad:pad + h, pad:pad + w] = x
    return out


def crop2d(x: np.ndarray, pad: int) -> np.ndarray:
    if pad == 0:
        return x
    return x[:, :, pad:-pad, pad:-pad]


def max_abs_diff(a: np.ndarray, b: np.ndarray) -> float:
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if a.size == 0:
        return 0.0
    return float(np.max(np.abs(np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64))))


def seeded_fill(shape, seed: int, distribution: str = "uniform", scale: float = 1.0,
                precision="single") -> np.ndarray:
    """Deterministic random tensor.

    ``distribution`` is ``"uniform"`` (on ``[-scale, scale)``) or ``"normal"``
    (standard deviation ``scale``). The result depends only on the arguments.
    """
    if scale <= 0:
        raise ValueError("scale must be positive")
    rng = np.random.default_rng(seed)
    if distribution == "uniform":
        data = rng.uniform(-scale, scale, size=shape)
    elif distribution == "normal":
        data = rng.normal(0.0, scale, size=shape)
    else:
        raise ValueError(f"unknown distribution {distribution!r}")
    return data.astype(as_dtype(precision))
