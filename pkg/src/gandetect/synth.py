"""Synthetic desk-scale datasets written in the real on-disk formats.

Generates 10-class digit images (28x28 grayscale, IDX files) and 10-class
colored-shape images (32x32 RGB, CIFAR binary batches). They stand in for
the public datasets when experiments must run fully offline; the loaders in
:mod:`gandetect.data` treat the output exactly like the real files.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
from scipy import ndimage

from .data import CIFAR_RECORD_BYTES, IDX_IMAGE_MAGIC, IDX_LABEL_MAGIC

_DIGIT_ROWS = {
    0: (".###.", "#...#", "#..##", "#.#.#", "##..#", "#...#", ".###."),
    1: ("..#..", ".##..", "..#..", "..#..", "..#..", "..#..", ".###."),
    2: (".###.", "#...#", "....#", "...#.", "..#..", ".#...", "#####"),
    3: (".###.", "#...#", "....#", "..##.", "....#", "#...#", ".###."),
    4: ("...#.", "..##.", ".#.#.", "#..#.", "#####", "...#.", "...#."),
    5: ("#####", "#....", "####.", "....#", "....#", "#...#", ".###."),
    6: ("..##.", ".#...", "#....", "####.", "#...#", "#...#", ".###."),
    7: ("#####", "....#", "...#.", "...#.", "..#..", "..#..", "..#.."),
    8: (".###.", "#...#", "#...#", ".###.", "#...#", "#...#", ".###."),
    9: (".###.", "#...#", "#...#", ".####", "....#", "...#.", ".##.."),
}

_GLYPHS = {
    d: np.array([[1.0 if ch == "#" else 0.0 for ch in row] for row in rows])
    for d, rows in _DIGIT_ROWS.items()
}


def render_digit(digit: int, rng: np.random.Generator) -> np.ndarray:
    """One 28x28 grayscale digit with random pose, stroke, and noise."""
    glyph = _GLYPHS[digit]
    scale = rng.uniform(2.7, 3.4)
    stamp = ndimage.zoom(glyph, scale, order=1)
    angle = rng.uniform(-12.0, 12.0)
    stamp = ndimage.rotate(stamp, angle, order=1, reshape=True)
    stamp = ndimage.gaussian_filter(stamp, rng.uniform(0.4, 0.8))
    peak = stamp.max()
    if peak > 0:
        stamp = stamp / peak * rng.uniform(0.75, 1.0)

    img = np.zeros((28, 28))
    sh, sw = stamp.shape
    sh, sw = min(sh, 28), min(sw, 28)
    top = rng.integers(0, 28 - sh + 1)
    left = rng.integers(0, 28 - sw + 1)
    img[top : top + sh, left : left + sw] = stamp[:sh, :sw]
    img += rng.normal(0.0, 0.04, size=img.shape)
    return np.clip(img, 0.0, 1.0)


def _digit_batch(n: int, rng: np.random.Generator):
    labels = rng.integers(0, 10, size=n).astype(np.uint8)
    images = np.stack([render_digit(int(c), rng) for c in labels])
    return (images * 255.0).round().astype(np.uint8), labels


def write_idx_images(path, images: np.ndarray):
    n, rows, cols = images.shape
    with open(path, "wb") as f:
        f.write(struct.pack(">iiii", IDX_IMAGE_MAGIC, n, rows, cols))
        f.write(images.astype(np.uint8).tobytes())


def write_idx_labels(path, labels: np.ndarray):
    with open(path, "wb") as f:
        f.write(struct.pack(">ii", IDX_LABEL_MAGIC, len(labels)))
        f.write(labels.astype(np.uint8).tobytes())


def write_mnist_style(out_dir, n_train: int, n_test: int, seed: int) -> dict:
    """Write train/test IDX file pairs of synthetic digits; returns the paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    paths = {}
    for prefix, n in (("train", n_train), ("t10k", n_test)):
        images, labels = _digit_batch(n, rng)
        img_path = out_dir / f"{prefix}-images-idx3-ubyte"
        lbl_path = out_dir / f"{prefix}-labels-idx1-ubyte"
        write_idx_images(img_path, images)
        write_idx_labels(lbl_path, labels)
        paths[prefix] = (img_path, lbl_path)
    return paths


def _shape_mask(shape_id: int, rng: np.random.Generator) -> np.ndarray:
    yy, xx = np.mgrid[0:32, 0:32]
    cy = rng.uniform(12, 20)
    cx = rng.uniform(12, 20)
    r = rng.uniform(6, 10)
    if shape_id == 0:  # disk
        return ((yy - cy) ** 2 + (xx - cx) ** 2 <= r**2).astype(float)
    if shape_id == 1:  # square
        return ((np.abs(yy - cy) <= r * 0.8) & (np.abs(xx - cx) <= r * 0.8)).astype(float)
    if shape_id == 2:  # ring
        d2 = (yy - cy) ** 2 + (xx - cx) ** 2
        return ((d2 <= r**2) & (d2 >= (0.55 * r) ** 2)).astype(float)
    if shape_id == 3:  # horizontal stripes
        period = rng.uniform(5, 8)
        return ((np.sin((yy - cy) * 2 * np.pi / period) > 0.2) & (np.abs(xx - cx) <= 12)).astype(float)
    # diagonal cross
    w = rng.uniform(1.5, 3.0)
    d1 = np.abs((yy - cy) - (xx - cx)) <= w
    d2 = np.abs((yy - cy) + (xx - cx)) <= w
    return (d1 | d2).astype(float)


_PALETTES = (
    ((0.9, 0.25, 0.15), (0.95, 0.6, 0.1)),  # warm
    ((0.15, 0.35, 0.9), (0.1, 0.8, 0.5)),  # cool
)


def render_shape(class_id: int, rng: np.random.Generator) -> np.ndarray:
    """One 32x32 RGB image; class determines shape family and palette."""
    shape_id = class_id % 5
    lo, hi = _PALETTES[class_id // 5]
    t = rng.uniform(0.0, 1.0)
    color = np.array([l + t * (h - l) for l, h in zip(lo, hi)])
    mask = _shape_mask(shape_id, rng)
    mask = ndimage.gaussian_filter(mask, rng.uniform(0.3, 0.8))
    bg = rng.uniform(0.05, 0.25)
    img = np.full((3, 32, 32), bg)
    img += color[:, None, None] * mask[None, :, :] * rng.uniform(0.8, 1.0)
    img += rng.normal(0.0, 0.035, size=img.shape)
    return np.clip(img, 0.0, 1.0)


def _shape_records(n: int, rng: np.random.Generator) -> bytes:
    out = bytearray()
    labels = rng.integers(0, 10, size=n)
    for c in labels:
        img = (render_shape(int(c), rng) * 255.0).round().astype(np.uint8)
        out.append(int(c))
        out.extend(img.tobytes())
    assert len(out) == n * CIFAR_RECORD_BYTES
    return bytes(out)


def write_cifar_style(out_dir, n_train: int, n_test: int, seed: int) -> dict:
    """Write synthetic colored-shape batches in the CIFAR binary layout."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    train_dir = out_dir / "train"
    train_dir.mkdir(exist_ok=True)
    train_path = train_dir / "data_batch_1.bin"
    train_path.write_bytes(_shape_records(n_train, rng))
    test_path = out_dir / "test_batch.bin"
    test_path.write_bytes(_shape_records(n_test, rng))
    return {"train": train_dir, "test": test_path}
