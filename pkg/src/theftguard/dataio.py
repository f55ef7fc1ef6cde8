"""Dataset ingestion: IDX files (MNIST's format), splits, synthetic blobs.

IDX is big-endian: a 4-byte magic (0x00000803 for images, 0x00000801 for
labels), one 4-byte size per dimension, then raw unsigned bytes. Pixels are
scaled to [0,1]; re-serializing a loaded dataset reproduces the original
byte stream exactly. Gzipped files (as vendored under data/) are inflated
transparently.
"""

from __future__ import annotations

import gzip
import os
import struct
from dataclasses import dataclass, field

import numpy as np

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801


class IdxFormatError(ValueError):
    pass


class IdxLengthError(ValueError):
    pass


@dataclass
class Dataset:
    inputs: np.ndarray        # (N, H, W, 1) images or (N, D) vectors, float64 in [0,1]
    labels: np.ndarray        # (N,) int class indices
    name: str = "dataset"
    n_classes: int = 10
    image_dims: tuple = field(default=None)  # raw IDX dims, kept for re-serialization

    def __post_init__(self):
        if len(self.inputs) != len(self.labels):
            raise ValueError("inputs and labels must have equal length")

    def __len__(self):
        return len(self.inputs)

    def subset(self, idx, name=None):
        return Dataset(
            self.inputs[idx], self.labels[idx],
            name or self.name, self.n_classes, self.image_dims,
        )

    def one_hot(self):
        out = np.zeros((len(self), self.n_classes))
        out[np.arange(len(self)), self.labels] = 1.0
        return out


def _read_bytes(path):
    with open(path, "rb") as fh:
        head = fh.read(2)
        fh.seek(0)
        if head == b"\x1f\x8b":
            with gzip.open(fh) as gz:
                return gz.read()
        return fh.read()


def _parse_idx(raw, path, want_magic, what):
    if len(raw) < 4:
        raise IdxLengthError(f"{path}: file too short to hold an IDX header")
    (magic,) = struct.unpack_from(">I", raw, 0)
    if magic != want_magic:
        raise IdxFormatError(
            f"{path}: expected {what} magic 0x{want_magic:08x}, found 0x{magic:08x}"
        )
    ndim = magic & 0xFF
    if len(raw) < 4 + 4 * ndim:
        raise IdxLengthError(f"{path}: truncated dimension table")
    dims = struct.unpack_from(f">{ndim}I", raw, 4)
    payload = int(np.prod(dims))
    off = 4 + 4 * ndim
    if len(raw) != off + payload:
        raise IdxLengthError(
            f"{path}: expected {off + payload} bytes for dims {dims}, found {len(raw)}"
        )
    data = np.frombuffer(raw, dtype=np.uint8, count=payload, offset=off)
    return data.reshape(dims), dims


def load_idx(images_path, labels_path, name="idx"):
    images, img_dims = _parse_idx(_read_bytes(images_path), images_path, IMAGE_MAGIC, "image")
    labels, _ = _parse_idx(_read_bytes(labels_path), labels_path, LABEL_MAGIC, "label")
    if images.shape[0] != labels.shape[0]:
        raise IdxLengthError(
            f"image/label count mismatch: {images.shape[0]} vs {labels.shape[0]}"
        )
    inputs = images.astype(np.float64) / 255.0
    inputs = inputs.reshape(images.shape[0], *img_dims[1:], 1)
    labels = labels.astype(np.int64)
    k = int(labels.max()) + 1 if labels.size else 0
    return Dataset(inputs, labels, name=name, n_classes=max(k, 10), image_dims=img_dims)


def to_idx_bytes(ds):
    """Serialize a dataset back to (image bytes, label bytes)."""
    if ds.image_dims is None:
        raise ValueError("dataset was not loaded from IDX files")
    dims = ds.image_dims
    pixels = np.rint(ds.inputs.reshape(dims) * 255.0).astype(np.uint8)
    img = struct.pack(f">{len(dims) + 1}I", IMAGE_MAGIC, *dims) + pixels.tobytes()
    lab = struct.pack(">II", LABEL_MAGIC, len(ds)) + ds.labels.astype(np.uint8).tobytes()
    return img, lab


def load_mnist(dataset_dir, which="train"):
    prefix = "train" if which == "train" else "t10k"

    def find(stem):
        for candidate in (stem, stem + ".gz"):
            path = os.path.join(dataset_dir, candidate)
            if os.path.exists(path):
                return path
        raise FileNotFoundError(f"no {stem}[.gz] under {dataset_dir}")

    return load_idx(
        find(f"{prefix}-images-idx3-ubyte"),
        find(f"{prefix}-labels-idx1-ubyte"),
        name=f"mnist-{which}",
    )


def synthetic(k_classes, dim, n_per_class, separation, seed):
    """Gaussian blobs with class means `separation` apart (pairwise when
    dim >= k_classes, via scaled orthonormal directions; otherwise the
    minimum pairwise distance is rescaled to `separation`)."""
    if min(k_classes, dim, n_per_class) <= 0:
        raise ValueError("k_classes, dim and n_per_class must be positive")
    rng = np.random.default_rng(seed)
    if dim >= k_classes:
        q, _ = np.linalg.qr(rng.standard_normal((dim, k_classes)))
        means = (separation / np.sqrt(2.0)) * q.T
    else:
        means = rng.standard_normal((k_classes, dim))
        if k_classes > 1 and separation > 0:
            dmin = min(
                np.linalg.norm(means[i] - means[j])
                for i in range(k_classes)
                for j in range(i + 1, k_classes)
            )
            means *= separation / dmin
        elif separation == 0:
            means[:] = 0.0
    xs = []
    ys = []
    for c in range(k_classes):
        xs.append(means[c] + rng.standard_normal((n_per_class, dim)))
        ys.append(np.full(n_per_class, c, dtype=np.int64))
    inputs = np.concatenate(xs)
    labels = np.concatenate(ys)
    order = rng.permutation(len(labels))
    return Dataset(inputs[order], labels[order], name="synthetic", n_classes=k_classes)


def split(ds, fractions, seed):
    """Deterministic label-stratified partition into len(fractions) datasets."""
    fractions = list(fractions)
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"fractions must sum to 1, got {sum(fractions)}")
    rng = np.random.default_rng(seed)
    buckets = [[] for _ in fractions]
    for c in np.unique(ds.labels):
        idx = np.flatnonzero(ds.labels == c)
        rng.shuffle(idx)
        bounds = np.rint(np.cumsum(fractions) * len(idx)).astype(int)
        start = 0
        for b, stop in enumerate(bounds):
            buckets[b].append(idx[start:stop])
            start = stop
    out = []
    for b, parts in enumerate(buckets):
        sel = np.sort(np.concatenate(parts)) if parts else np.zeros(0, dtype=int)
        out.append(ds.subset(sel, name=f"{ds.name}[{b}]"))
    return out
