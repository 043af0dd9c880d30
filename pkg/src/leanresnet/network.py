"""Residual networks built from the six preset layouts (A to F) or a custom layout.

A network is an opening dense 3x3 convolution, a sequence of blocks of
pre-activation residual steps, global average pooling and a linear
classifier. The first step of every block after the first doubles the width
(per the configured widths) and halves the resolution; it carries a strided
1x1 projection shortcut.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from leanresnet.conv import (
    DenseConvWeights,
    LeanConvWeights,
    dense_conv2d,
    dense_conv2d_backward,
    layer_flops,
    out_size,
)
from leanresnet.layers import (
    BatchNormParams,
    LinearParams,
    StepWeights,
    global_avg_pool,
    global_avg_pool_backward,
    linear_softmax_ce,
    linear_softmax_ce_backward,
    logits_forward,
    resnet_step,
    resnet_step_backward,
)

PRESETS = {
    "A": ((32, 64, 128, 256), (2, 3, 3, 3)),
    "B": ((12, 24, 48, 96), (2, 3, 3, 3)),
    "C": ((64, 128, 256, 512), (3, 5, 7, 4)),
    "D": ((24, 48, 96, 192), (3, 5, 7, 4)),
    "E": ((32, 64, 128, 256, 512), (2, 3, 3, 3, 3)),
    "F": ((12, 24, 48, 96, 192), (2, 3, 3, 3, 3)),
}

CONV_KINDS = ("lean", "dense")


@dataclass(frozen=True)
class NetworkConfig:
    widths: tuple[int, ...]
    steps: tuple[int, ...]
    conv_kind: str = "lean"
    num_classes: int = 10
    in_channels: int = 3
    early_dense_blocks: int = 0
    kind: str = "custom"

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(v) for v in self.widths))
        object.__setattr__(self, "steps", tuple(int(v) for v in self.steps))
        if len(self.widths) != len(self.steps):
            raise ValueError("widths and steps must have the same length")
        if self.conv_kind not in CONV_KINDS:
            raise ValueError(f"conv_kind must be one of {CONV_KINDS}, got {self.conv_kind!r}")
        if any(v < 1 for v in self.widths) or any(v < 0 for v in self.steps):
            raise ValueError("widths must be positive and steps non-negative")
        if self.num_classes < 1 or self.in_channels < 1 or self.early_dense_blocks < 0:
            raise ValueError("num_classes and in_channels must be positive")

    @classmethod
    def preset(cls, kind: str, conv_kind: str = "lean", num_classes: int = 10, **kw):
        try:
            widths, steps = PRESETS[kind.upper()]
        except KeyError:
            raise ValueError(f"unknown network type {kind!r}; expected one of {sorted(PRESETS)}") from None
        return cls(widths, steps, conv_kind, num_classes, kind=kind.upper(), **kw)

    def block_conv_kind(self, block: int) -> str:
        return "dense" if block < self.early_dense_blocks else self.conv_kind


@dataclass
class NetworkWeights:
    config: NetworkConfig
    opening: DenseConvWeights
    blocks: list[list[StepWeights]]
    classifier: LinearParams

    def named_parameters(self):
        yield "opening.kernel", self.opening.kernel
        for b, block in enumerate(self.blocks):
            for s, step in enumerate(block):
                for name, arr in step.named_parameters():
                    yield f"block{b}.step{s}.{name}", arr
        yield "classifier.weight", self.classifier.weight
        yield "classifier.bias", self.classifier.bias

    def named_buffers(self):
        for b, block in enumerate(self.blocks):
            for s, step in enumerate(block):
                for name, arr in step.named_buffers():
                    yield f"block{b}.step{s}.{name}", arr

    def named_arrays(self):
        yield from self.named_parameters()
        yield from self.named_buffers()

    @property
    def dtype(self):
        return self.opening.kernel.dtype


def _normal(rng, shape, fan_in, dtype):
    return (rng.standard_normal(shape) / np.sqrt(fan_in)).astype(dtype)


def _make_conv(rng, kind, c_in, c_out, stride, dtype):
    if kind == "lean":
        alpha = _normal(rng, (c_out, c_in), c_in, dtype)
        stencil = _normal(rng, (min(c_in, c_out), 4), 4, dtype)
        return LeanConvWeights(alpha, stencil, stride)
    return DenseConvWeights(_normal(rng, (c_out, c_in, 3, 3), 9 * c_in, dtype), stride)


def build_network(config: NetworkConfig, seed: int = 0, dtype=np.float32) -> NetworkWeights:
    """Deterministically initialise a network for ``config``."""
    if not config.widths:
        raise ValueError("config has no blocks (empty widths)")
    rng = np.random.default_rng(seed)
    c = config.widths[0]
    opening = DenseConvWeights(_normal(rng, (c, config.in_channels, 3, 3), 9 * config.in_channels, dtype))
    blocks = []
    for b, (width, nsteps) in enumerate(zip(config.widths, config.steps)):
        kind = config.block_conv_kind(b)
        block = []
        for s in range(nsteps):
            stride = 2 if (b > 0 and s == 0) else 1
            conv1 = _make_conv(rng, kind, c, width, stride, dtype)
            conv2 = _make_conv(rng, kind, width, width, 1, dtype)
            shortcut = None
            if stride != 1 or c != width:
                shortcut = _normal(rng, (width, c), c, dtype)
            block.append(StepWeights(conv1, conv2, BatchNormParams.init(c, dtype),
                                     BatchNormParams.init(width, dtype), shortcut, stride))
            c = width
        blocks.append(block)
    classifier = LinearParams(_normal(rng, (config.num_classes, c), c, dtype))
    return NetworkWeights(config, opening, blocks, classifier)


def net_forward(weights: NetworkWeights, x: np.ndarray, mode: str = "train", update_stats=True):
    """Logits for a batch; returns ``(logits, cache)``."""
    if x.ndim != 4 or x.shape[1] != weights.config.in_channels:
        raise ValueError(f"expected (N, {weights.config.in_channels}, H, W) input, got {x.shape}")
    x = x.astype(weights.dtype, copy=False)
    y = dense_conv2d(x, weights.opening)
    step_caches = []
    for block in weights.blocks:
        for step in block:
            y, cache = resnet_step(y, step, mode, update_stats)
            step_caches.append(cache)
    feats = global_avg_pool(y)
    logits = logits_forward(feats, weights.classifier)
    return logits, (x, y.shape, feats, step_caches)


def net_loss(weights, x, labels, mode="train", update_stats=True):
    """Returns ``(loss, accuracy, cache)`` for use with ``net_backward``."""
    logits, cache = net_forward(weights, x, mode, update_stats)
    feats = cache[2]
    loss, acc, ce_cache = linear_softmax_ce(feats, labels, weights.classifier)
    return loss, acc, (cache, ce_cache)


def net_backward(weights: NetworkWeights, cache) -> dict[str, np.ndarray]:
    """Gradients of the mean loss, keyed like ``weights.named_parameters()``."""
    (x, yshape, feats, step_caches), ce_cache = cache
    grads = {}
    dfeat, g = linear_softmax_ce_backward(ce_cache, weights.classifier)
    grads["classifier.weight"], grads["classifier.bias"] = g["weight"], g["bias"]
    dy = global_avg_pool_backward(yshape, dfeat)
    steps = [(b, s, step) for b, block in enumerate(weights.blocks) for s, step in enumerate(block)]
    for (b, s, step), sc in zip(reversed(steps), reversed(step_caches)):
        dy, g = resnet_step_backward(sc, step, dy)
        for k, v in g.items():
            grads[f"block{b}.step{s}.{k}"] = v
    _, grads["opening.kernel"] = dense_conv2d_backward(x, weights.opening, dy)
    return {name: grads[name] for name, _ in weights.named_parameters()}


# ---------------------------------------------------------------------------
# accounting


def count_params(weights: NetworkWeights) -> int:
    return sum(arr.size for _, arr in weights.named_parameters())


def param_breakdown(weights: NetworkWeights) -> dict[str, int]:
    out: dict[str, int] = {}
    for name, arr in weights.named_parameters():
        group = name.split(".")[0]
        out[group] = out.get(group, 0) + arr.size
    return out


def network_layers(config: NetworkConfig, input_hw):
    """Yield ``(kind, c_in, c_out, h_out, w_out)`` for every convolution."""
    h, w = (input_hw, input_hw) if np.isscalar(input_hw) else input_hw
    c = config.widths[0]
    yield ("dense3x3", config.in_channels, c, h, w)
    for b, (width, nsteps) in enumerate(zip(config.widths, config.steps)):
        kind = "lean" if config.block_conv_kind(b) == "lean" else "dense3x3"
        for s in range(nsteps):
            stride = 2 if (b > 0 and s == 0) else 1
            h, w = out_size(h, stride), out_size(w, stride)
            yield (kind, c, width, h, w)
            yield (kind, width, width, h, w)
            if stride != 1 or c != width:
                yield ("conv1x1", c, width, h, w)
            c = width


def count_flops(config_or_layers, input_hw=None) -> int:
    """Per-image convolution FLOPs of a network config or an explicit layer list.

    Normalisation, activations, pooling and the classifier are not counted.
    """
    if isinstance(config_or_layers, NetworkConfig):
        layers = network_layers(config_or_layers, input_hw)
    else:
        layers = config_or_layers
    return sum(layer_flops(*layer) for layer in layers)


# ---------------------------------------------------------------------------
# checkpoints
#
# "LRN1" | u32 field count | (u32 len, utf-8 key, u32 len, utf-8 value)* |
# per array in named_arrays() order: u64 element count, float32 LE data

MAGIC = b"LRN1"


def _config_fields(config: NetworkConfig) -> list[tuple[str, str]]:
    return [
        ("kind", config.kind),
        ("widths", ",".join(map(str, config.widths))),
        ("steps", ",".join(map(str, config.steps))),
        ("conv_kind", config.conv_kind),
        ("num_classes", str(config.num_classes)),
        ("in_channels", str(config.in_channels)),
        ("early_dense_blocks", str(config.early_dense_blocks)),
    ]


def _ints(text):
    return tuple(int(v) for v in text.split(",")) if text else ()


def save_checkpoint(path, weights: NetworkWeights) -> None:
    fields = _config_fields(weights.config)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(fields)))
        for key, value in fields:
            for text in (key, value):
                raw = text.encode("utf-8")
                fh.write(struct.pack("<I", len(raw)))
                fh.write(raw)
        for _, arr in weights.named_arrays():
            fh.write(struct.pack("<Q", arr.size))
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_checkpoint(path, dtype=np.float32) -> NetworkWeights:
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise ValueError(f"{path}: not a checkpoint (bad magic)")
    pos = 4

    def take(n):
        nonlocal pos
        if pos + n > len(data):
            raise ValueError(f"{path}: truncated checkpoint")
        chunk = data[pos:pos + n]
        pos += n
        return chunk

    (nfields,) = struct.unpack("<I", take(4))
    fields = {}
    for _ in range(nfields):
        key = take(struct.unpack("<I", take(4))[0]).decode("utf-8")
        fields[key] = take(struct.unpack("<I", take(4))[0]).decode("utf-8")
    config = NetworkConfig(
        widths=_ints(fields["widths"]),
        steps=_ints(fields["steps"]),
        conv_kind=fields["conv_kind"],
        num_classes=int(fields["num_classes"]),
        in_channels=int(fields["in_channels"]),
        early_dense_blocks=int(fields["early_dense_blocks"]),
        kind=fields["kind"],
    )
    weights = build_network(config, seed=0, dtype=dtype)
    for name, arr in weights.named_arrays():
        (count,) = struct.unpack("<Q", take(8))
        if count != arr.size:
            raise ValueError(f"{path}: array {name} has {count} elements, expected {arr.size}")
        arr[...] = np.frombuffer(take(4 * count), dtype="<f4").reshape(arr.shape)
    if pos != len(data):
        raise ValueError(f"{path}: {len(data) - pos} trailing bytes")
    return weights
