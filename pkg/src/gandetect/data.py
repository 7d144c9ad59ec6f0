"""Dataset ingestion, normalization, and reproducible stratified splits.

Two on-disk formats are supported: the IDX format used by MNIST-style
datasets (big-endian magic 2051 for images / 2049 for labels) and the
CIFAR-10 binary batch format (1 label byte + 3072 pixel bytes per record).
Pixels are normalized to [0, 1] by division by 255 everywhere.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError, ValidationError

IDX_IMAGE_MAGIC = 2051
IDX_LABEL_MAGIC = 2049
CIFAR_RECORD_BYTES = 1 + 3 * 32 * 32

SPLIT_FORMAT_VERSION = 1


@dataclass(frozen=True)
class LabeledImage:
    """A pixel tensor of shape (channels, height, width) in [0, 1] plus its class."""

    pixels: np.ndarray
    label: int

    def __post_init__(self):
        if self.pixels.ndim != 3 or self.pixels.shape[0] not in (1, 3):
            raise ValidationError(f"expected (channels, h, w) with 1 or 3 channels, got {self.pixels.shape}")
        if self.pixels.min() < 0.0 or self.pixels.max() > 1.0:
            raise ValidationError("pixel values must lie in [0, 1]")
        if self.label < 0:
            raise ValidationError(f"negative class label {self.label}")


@dataclass
class DatasetSplit:
    """Disjoint train/val/test lists produced deterministically from a seed."""

    train: list[LabeledImage]
    val: list[LabeledImage]
    test: list[LabeledImage]
    class_count: int
    seed: int

    def parts(self):
        return {"train": self.train, "val": self.val, "test": self.test}


def _read_exact(f, n: int, what: str) -> bytes:
    buf = f.read(n)
    if len(buf) != n:
        raise FormatError(f"truncated file while reading {what}: wanted {n} bytes, got {len(buf)}")
    return buf


def load_idx_images(path) -> np.ndarray:
    """Read an IDX image file into a uint8 array of shape (n, rows, cols)."""
    path = Path(path)
    with open(path, "rb") as f:
        magic, count = struct.unpack(">ii", _read_exact(f, 8, "header"))
        if magic != IDX_IMAGE_MAGIC:
            raise FormatError(f"{path}: bad image magic {magic}, expected {IDX_IMAGE_MAGIC}")
        rows, cols = struct.unpack(">ii", _read_exact(f, 8, "dimensions"))
        if count < 0 or rows <= 0 or cols <= 0:
            raise FormatError(f"{path}: invalid dimensions count={count} rows={rows} cols={cols}")
        raw = _read_exact(f, count * rows * cols, "pixel payload")
        if f.read(1):
            raise FormatError(f"{path}: trailing bytes after {count} images")
    return np.frombuffer(raw, dtype=np.uint8).reshape(count, rows, cols)


def load_idx_labels(path) -> np.ndarray:
    """Read an IDX label file into a uint8 array of shape (n,)."""
    path = Path(path)
    with open(path, "rb") as f:
        magic, count = struct.unpack(">ii", _read_exact(f, 8, "header"))
        if magic != IDX_LABEL_MAGIC:
            raise FormatError(f"{path}: bad label magic {magic}, expected {IDX_LABEL_MAGIC}")
        raw = _read_exact(f, count, "label payload")
        if f.read(1):
            raise FormatError(f"{path}: trailing bytes after {count} labels")
    return np.frombuffer(raw, dtype=np.uint8)


def _labels_path_for(images_path: Path) -> Path:
    name = images_path.name
    if "images-idx3" in name:
        return images_path.with_name(name.replace("images-idx3", "labels-idx1"))
    if "images" in name:
        return images_path.with_name(name.replace("images", "labels"))
    raise ValidationError(
        f"cannot derive a labels filename from {images_path}; pass labels_path explicitly"
    )


def _load_mnist_style(path: Path, labels_path=None) -> list[LabeledImage]:
    labels_path = Path(labels_path) if labels_path else _labels_path_for(path)
    images = load_idx_images(path)
    labels = load_idx_labels(labels_path)
    if len(images) != len(labels):
        raise FormatError(
            f"image count {len(images)} ({path.name}) does not match "
            f"label count {len(labels)} ({labels_path.name})"
        )
    pixels = images.astype(np.float32) / 255.0
    return [LabeledImage(pixels[i][None, :, :], int(labels[i])) for i in range(len(labels))]


def _load_cifar_binary(path: Path) -> list[LabeledImage]:
    if path.is_dir():
        files = sorted(p for p in path.iterdir() if p.suffix == ".bin")
        if not files:
            raise ValidationError(f"no .bin batch files found in {path}")
        out: list[LabeledImage] = []
        for f in files:
            out.extend(_load_cifar_binary(f))
        return out
    raw = path.read_bytes()
    if len(raw) == 0 or len(raw) % CIFAR_RECORD_BYTES != 0:
        raise FormatError(
            f"{path}: payload size {len(raw)} is not a multiple of the "
            f"{CIFAR_RECORD_BYTES}-byte record size"
        )
    records = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD_BYTES)
    labels = records[:, 0]
    if labels.max() > 9:
        raise FormatError(f"{path}: label byte {int(labels.max())} out of range 0..9")
    pixels = records[:, 1:].reshape(-1, 3, 32, 32).astype(np.float32) / 255.0
    return [LabeledImage(pixels[i], int(labels[i])) for i in range(len(labels))]


def load_dataset(path, format: str, labels_path=None) -> list[LabeledImage]:
    """Load all images under ``path`` for the declared format.

    For ``idx-mnist`` the path is the images file; the matching labels file
    is found by the standard ``images-idx3`` -> ``labels-idx1`` name
    substitution unless ``labels_path`` is given. For ``cifar-binary`` the
    path may be a single batch file or a directory of ``.bin`` batches.
    """
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"dataset path does not exist: {path}")
    if format == "idx-mnist":
        return _load_mnist_style(path, labels_path)
    if format == "cifar-binary":
        return _load_cifar_binary(path)
    raise ValidationError(f"unknown dataset format {format!r}")


def _apportion(total: int, fractions) -> list[int]:
    """Largest-remainder allocation of ``total`` items across fractions."""
    ideal = [total * f for f in fractions]
    counts = [int(np.floor(v)) for v in ideal]
    remainders = [v - c for v, c in zip(ideal, counts)]
    short = total - sum(counts)
    for idx in sorted(range(len(fractions)), key=lambda i: (-remainders[i], i))[:short]:
        counts[idx] += 1
    return counts


def _stratified_allocation(labels: np.ndarray, fractions, seed: int):
    """Per-class index lists per split, globally exact and seed-deterministic."""
    n = len(labels)
    targets = _apportion(n, fractions)
    rng = np.random.default_rng(seed)
    classes = sorted(int(c) for c in np.unique(labels))
    order = {}
    counts = {}
    for c in classes:
        idx = np.flatnonzero(labels == c)
        order[c] = idx[rng.permutation(len(idx))]
        counts[c] = _apportion(len(idx), fractions)

    # Largest-remainder per class can leave split totals off target by a
    # few items; shuffle single items between splits until exact.
    def totals():
        return [sum(counts[c][s] for c in classes) for s in range(len(fractions))]

    cur = totals()
    while cur != targets:
        over = max(range(len(cur)), key=lambda s: cur[s] - targets[s])
        under = min(range(len(cur)), key=lambda s: cur[s] - targets[s])
        donor = max(classes, key=lambda c: (counts[c][over], -c))
        counts[donor][over] -= 1
        counts[donor][under] += 1
        cur = totals()

    assignment = [[] for _ in fractions]
    for c in classes:
        start = 0
        for s in range(len(fractions)):
            take = counts[c][s]
            assignment[s].extend(int(i) for i in order[c][start : start + take])
            start += take
    return [sorted(part) for part in assignment]


def make_splits(images: list[LabeledImage], fractions, seed: int) -> DatasetSplit:
    """Split into stratified train/val/test parts, deterministic in ``seed``.

    Fractions must be positive and sum to 1; global split sizes are exact
    (largest-remainder), and per-class proportions are preserved as closely
    as integer counts allow.
    """
    if len(fractions) != 3:
        raise ValidationError("fractions must be a (train, val, test) triple")
    if any(f <= 0 for f in fractions):
        raise ValidationError(f"fractions must be positive, got {tuple(fractions)}")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValidationError(f"fractions must sum to 1, got {sum(fractions)!r}")
    if not images:
        raise ValidationError("cannot split an empty image list")

    labels = np.array([im.label for im in images])
    parts = _stratified_allocation(labels, fractions, seed)
    class_count = int(labels.max()) + 1
    train, val, test = ([images[i] for i in part] for part in parts)
    return DatasetSplit(train=train, val=val, test=test, class_count=class_count, seed=seed)


def split_train_holdout(images: list[LabeledImage], holdout_fraction: float, seed: int):
    """Stratified two-way split used when the dataset ships its own test set."""
    if not 0.0 < holdout_fraction < 1.0:
        raise ValidationError(f"holdout fraction must be in (0, 1), got {holdout_fraction}")
    labels = np.array([im.label for im in images])
    keep, hold = _stratified_allocation(labels, (1.0 - holdout_fraction, holdout_fraction), seed)
    return [images[i] for i in keep], [images[i] for i in hold]


def _stack(part: list[LabeledImage]):
    if not part:
        return np.zeros((0,), dtype=np.float32), np.zeros((0,), dtype=np.int64)
    pixels = np.stack([im.pixels for im in part]).astype(np.float32)
    labels = np.array([im.label for im in part], dtype=np.int64)
    return pixels, labels


def split_arrays(split: DatasetSplit):
    """Dense (pixels, labels) arrays per part, in split order."""
    return {name: _stack(part) for name, part in split.parts().items()}


def dataset_hash(split: DatasetSplit) -> str:
    """Stable content hash of all tensors in a split."""
    import hashlib

    h = hashlib.sha256()
    for name in ("train", "val", "test"):
        pixels, labels = _stack(split.parts()[name])
        h.update(name.encode())
        h.update(np.ascontiguousarray(pixels).tobytes())
        h.update(np.ascontiguousarray(labels).tobytes())
    return h.hexdigest()


def save_split(split: DatasetSplit, path, meta: dict | None = None):
    """Serialize a split to ``.npz``; reloading reproduces tensors bit for bit."""
    payload = {
        "format_version": np.array(SPLIT_FORMAT_VERSION),
        "class_count": np.array(split.class_count),
        "seed": np.array(split.seed),
        "meta": np.frombuffer(json.dumps(meta or {}, sort_keys=True).encode(), dtype=np.uint8),
    }
    for name, part in split.parts().items():
        pixels, labels = _stack(part)
        payload[f"{name}_pixels"] = pixels
        payload[f"{name}_labels"] = labels
    with open(path, "wb") as f:
        np.savez(f, **payload)


def load_split(path) -> tuple[DatasetSplit, dict]:
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"split file does not exist: {path}")
    with np.load(path) as data:
        version = int(data["format_version"])
        if version != SPLIT_FORMAT_VERSION:
            from .errors import CheckpointVersionError

            raise CheckpointVersionError(path, version, SPLIT_FORMAT_VERSION)
        meta = json.loads(bytes(data["meta"]).decode() or "{}")
        parts = {}
        for name in ("train", "val", "test"):
            pixels = data[f"{name}_pixels"]
            labels = data[f"{name}_labels"]
            parts[name] = [LabeledImage(pixels[i], int(labels[i])) for i in range(len(labels))]
        split = DatasetSplit(
            train=parts["train"],
            val=parts["val"],
            test=parts["test"],
            class_count=int(data["class_count"]),
            seed=int(data["seed"]),
        )
    return split, meta
