"""Dataset readers (CIFAR-10/100, STL-10 binary formats), augmentation,
and a small synthetic classification task."""
from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

CIFAR_PIXELS = 3 * 32 * 32
STL_PIXELS = 3 * 96 * 96


class DatasetFormatError(ValueError):
    pass


@dataclass
class LabeledImages:
    images: np.ndarray  # (N, 3, H, W) float32
    labels: np.ndarray  # (N,) int64
    class_count: int

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.labels) != len(self.images):
            raise ValueError("images and labels differ in length")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.class_count):
            raise ValueError("label out of range")

    def __len__(self):
        return len(self.labels)

    def subset(self, index):
        return LabeledImages(self.images[index], self.labels[index], self.class_count)


def _read_exact(path, record_bytes, expected_records=None):
    path = Path(path)
    size = path.stat().st_size
    if expected_records is not None and size != expected_records * record_bytes:
        raise DatasetFormatError(
            f"{path}: size {size} bytes, expected {expected_records * record_bytes} "
            f"({expected_records} records of {record_bytes} bytes)")
    if size % record_bytes:
        raise DatasetFormatError(
            f"{path}: size {size} bytes is not a multiple of the {record_bytes}-byte record size")
    return np.fromfile(path, dtype=np.uint8).reshape(-1, record_bytes)


def read_cifar_file(path, label_bytes: int = 1, label_index: int = 0, expected_records=None):
    """Parse one CIFAR binary batch into ``(uint8 images (N,3,32,32), labels)``.

    Each record is ``label_bytes`` label bytes followed by the R, G and B
    32x32 planes. ``label_index`` picks which label byte to keep (CIFAR-100
    stores coarse then fine).
    """
    raw = _read_exact(path, label_bytes + CIFAR_PIXELS, expected_records)
    labels = raw[:, label_index].astype(np.int64)
    images = raw[:, label_bytes:].reshape(-1, 3, 32, 32)
    return images, labels


def to_float(images_u8):
    return images_u8.astype(np.float32) / np.float32(255)


def channel_stats(images):
    mean = images.mean(axis=(0, 2, 3), dtype=np.float64)
    std = images.std(axis=(0, 2, 3), dtype=np.float64)
    return mean, std


def standardize(images, mean, std):
    out = (images.astype(np.float64) - mean[:, None, None]) / std[:, None, None]
    return out.astype(np.float32)


def _finish(train_u8, train_labels, test_u8, test_labels, classes, standardize_=True):
    train, test = to_float(train_u8), to_float(test_u8)
    if standardize_:
        mean, std = channel_stats(train)
        train, test = standardize(train, mean, std), standardize(test, mean, std)
    return LabeledImages(train, train_labels, classes), LabeledImages(test, test_labels, classes)


def load_cifar10(directory, standardize=True, strict=True):
    """Read ``data_batch_1..5.bin`` and ``test_batch.bin``.

    With ``strict`` every file must hold exactly 10000 records; otherwise any
    whole number of records is accepted.
    """
    d = Path(directory)
    expected = 10000 if strict else None
    parts = [read_cifar_file(d / f"data_batch_{i}.bin", 1, 0, expected) for i in range(1, 6)]
    test_x, test_y = read_cifar_file(d / "test_batch.bin", 1, 0, expected)
    train_x = np.concatenate([p[0] for p in parts])
    train_y = np.concatenate([p[1] for p in parts])
    return _finish(train_x, train_y, test_x, test_y, 10, standardize)


def load_cifar100(directory, standardize=True, strict=True):
    """Read ``train.bin`` / ``test.bin``; the fine label is kept."""
    d = Path(directory)
    train_x, train_y = read_cifar_file(d / "train.bin", 2, 1, 50000 if strict else None)
    test_x, test_y = read_cifar_file(d / "test.bin", 2, 1, 10000 if strict else None)
    return _finish(train_x, train_y, test_x, test_y, 100, standardize)


def read_stl10_split(x_path, y_path, expected_records=None):
    raw = _read_exact(x_path, STL_PIXELS, expected_records)
    # each plane is stored column-major
    images = raw.reshape(-1, 3, 96, 96).transpose(0, 1, 3, 2)
    labels = _read_exact(y_path, 1, len(images))[:, 0].astype(np.int64)
    if labels.size and labels.min() < 1:
        raise DatasetFormatError(f"{y_path}: STL-10 labels are 1-based, found 0")
    return np.ascontiguousarray(images), labels - 1


def load_stl10(directory, standardize=True, strict=True):
    """Read the labelled STL-10 splits (``train_X.bin`` etc.); unlabelled data is ignored."""
    d = Path(directory)
    train_x, train_y = read_stl10_split(d / "train_X.bin", d / "train_y.bin", 5000 if strict else None)
    test_x, test_y = read_stl10_split(d / "test_X.bin", d / "test_y.bin", 8000 if strict else None)
    return _finish(train_x, train_y, test_x, test_y, 10, standardize)


LOADERS = {"cifar10": load_cifar10, "cifar100": load_cifar100, "stl10": load_stl10}


# ---------------------------------------------------------------------------
# augmentation


def flip(image):
    return image[:, :, ::-1]


def _resize_nearest(image, scale):
    c, h, w = image.shape
    nh, nw = max(1, int(round(h * scale))), max(1, int(round(w * scale)))
    rows = np.minimum((np.arange(nh) + 0.5) * h / nh, h - 1).astype(np.intp)
    cols = np.minimum((np.arange(nw) + 0.5) * w / nw, w - 1).astype(np.intp)
    return image[:, rows[:, None], cols[None, :]]


def augment(images, rng, enabled=True, pad=4, scale_range=(0.9, 1.1)):
    """Random horizontal flip, scale jitter, then a random crop from a zero-padded canvas.

    Output shape always equals input shape.
    """
    if not enabled:
        return images
    n, c, h, w = images.shape
    out = np.empty_like(images)
    for i in range(n):
        img = images[i]
        if rng.random() < 0.5:
            img = flip(img)
        if scale_range is not None:
            img = _resize_nearest(img, rng.uniform(*scale_range))
        ih, iw = img.shape[1:]
        ph, pw = max(h, ih) + 2 * pad, max(w, iw) + 2 * pad
        canvas = np.zeros((c, ph, pw), dtype=images.dtype)
        oy, ox = (ph - ih) // 2, (pw - iw) // 2
        canvas[:, oy:oy + ih, ox:ox + iw] = img
        y0 = (ph - h) // 2 + int(rng.integers(-pad, pad + 1))
        x0 = (pw - w) // 2 + int(rng.integers(-pad, pad + 1))
        out[i] = canvas[:, y0:y0 + h, x0:x0 + w]
    return out


# ---------------------------------------------------------------------------
# synthetic task

GRID = (2, 5)


def grid_cells(hw):
    """Row and column boundaries of the 2x5 grid on an ``hw x hw`` image."""
    rb = np.linspace(0, hw, GRID[0] + 1).round().astype(int)
    cb = np.linspace(0, hw, GRID[1] + 1).round().astype(int)
    return rb, cb


def synthetic_quadrants(n, hw=16, seed=0, noise=0.5, amplitude=1.5):
    """Ten classes; class ``k`` brightens grid cell ``k`` (row-major in a 2x5 grid).

    Each sample is Gaussian noise plus a raised patch filling its class's cell,
    identical across the three channels. Classes are balanced.
    """
    if hw < 8:
        raise ValueError("hw must be at least 8")
    rng = np.random.default_rng(seed)
    labels = np.arange(n) % 10
    rng.shuffle(labels)
    images = rng.normal(0.0, noise, size=(n, 3, hw, hw)).astype(np.float32)
    rb, cb = grid_cells(hw)
    for i, k in enumerate(labels):
        r, c = divmod(int(k), GRID[1])
        images[i, :, rb[r]:rb[r + 1], cb[c]:cb[c + 1]] += np.float32(amplitude)
    return LabeledImages(images, labels, 10)


def dataset_root(name, directory=None):
    return Path(directory or os.environ.get("LEANRESNET_DATA", "data")) / name
