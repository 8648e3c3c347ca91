"""Toy blob-image datasets and lossless 8-bit image files.

Images on disk are binary PGM (P5, one channel) or PPM (P6, three
channels) with maxval 255. A dataset directory holds the image files plus a
``manifest.csv`` with columns ``filename,label``.
"""

from __future__ import annotations

import csv
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .engine import LabeledBatch
from .errors import InputError, ParseError

MANIFEST = "manifest.csv"


@dataclass(frozen=True)
class ToyDatasetSpec:
    num_classes: int = 4
    per_class: int = 100
    test_per_class: int = 60
    shape: tuple = (3, 12, 12)
    amplitude: float = 4.0  # peak deviation of a class mean from mid-grey
    noise: float = 8.0  # half-width of the uniform pixel noise
    seed: int = 0


def class_means(spec: ToyDatasetSpec) -> np.ndarray:
    """Smooth per-class patterns, shape (num_classes, C, H, W)."""
    c, h, w = spec.shape
    rng = np.random.default_rng([spec.seed, 0])
    yy, xx = np.meshgrid(np.linspace(0, 1, h), np.linspace(0, 1, w), indexing="ij")
    means = np.empty((spec.num_classes, c, h, w))
    for k in range(spec.num_classes):
        for ch in range(c):
            field = np.zeros((h, w))
            for _ in range(3):
                fy, fx = rng.uniform(0.5, 2.0, size=2)
                phase = rng.uniform(0, 2 * np.pi)
                field += np.cos(2 * np.pi * (fy * yy + fx * xx) + phase)
            field /= np.max(np.abs(field))
            means[k, ch] = 127.5 + spec.amplitude * field
    return means


def _draw(means: np.ndarray, per_class: int, noise: float, rng) -> LabeledBatch:
    labels = np.repeat(np.arange(len(means)), per_class)
    imgs = means[labels] + rng.uniform(-noise, noise, size=(len(labels),) + means.shape[1:])
    imgs = np.clip(np.floor(imgs + 0.5), 0, 255)
    return LabeledBatch(imgs, labels)


def generate_toy_dataset(spec: ToyDatasetSpec) -> tuple[LabeledBatch, LabeledBatch]:
    """Balanced train and held-out splits of 8-bit blob images."""
    if spec.num_classes < 2 or spec.per_class < 1 or spec.test_per_class < 0:
        raise InputError("toy dataset needs >= 2 classes and >= 1 image per class")
    if len(spec.shape) != 3 or spec.shape[0] not in (1, 3) or min(spec.shape) < 1:
        raise InputError(f"toy image shape must be (1 or 3, H, W), got {spec.shape}")
    if spec.noise < 0:
        raise InputError("noise must be non-negative")
    means = class_means(spec)
    flat = np.round(means.reshape(len(means), -1), 9)
    if len(np.unique(flat, axis=0)) < len(means) or spec.amplitude == 0:
        raise InputError("class means are not pairwise distinct")
    train = _draw(means, spec.per_class, spec.noise, np.random.default_rng([spec.seed, 1]))
    test = _draw(means, spec.test_per_class, spec.noise, np.random.default_rng([spec.seed, 2]))
    return train, test


# ----------------------------------------------------------------------------
# PGM / PPM
# ----------------------------------------------------------------------------


def save_image(path, image) -> None:
    """Write a (C, H, W) 8-bit image, C in {1, 3}."""
    img = np.asarray(image)
    if img.ndim != 3 or img.shape[0] not in (1, 3):
        raise InputError(f"can only save (1|3, H, W) images, got {img.shape}")
    if img.min(initial=0) < 0 or img.max(initial=0) > 255 or np.any(img != np.round(img)):
        raise InputError("image is not 8-bit")
    c, h, w = img.shape
    magic = b"P5" if c == 1 else b"P6"
    raster = np.ascontiguousarray(img.transpose(1, 2, 0)).astype(np.uint8).tobytes()
    with open(path, "wb") as fh:
        fh.write(magic + f"\n{w} {h}\n255\n".encode())
        fh.write(raster)


_TOKEN = re.compile(rb"\s*(?:#[^\n]*\n\s*)*(\S+)")


def load_image(path) -> np.ndarray:
    """Read P5/P6 into a uint8 (C, H, W) array."""
    data = Path(path).read_bytes()
    if data[:2] == b"P5":
        c = 1
    elif data[:2] == b"P6":
        c = 3
    else:
        raise ParseError(f"{path}: bad magic {data[:2]!r}")
    pos = 2
    vals = []
    for name in ("width", "height", "maxval"):
        m = _TOKEN.match(data, pos)
        if not m or not m.group(1).isdigit():
            raise ParseError(f"{path}: malformed header field {name}")
        vals.append(int(m.group(1)))
        pos = m.end()
    w, h, maxval = vals
    if maxval != 255:
        raise ParseError(f"{path}: maxval must be 255, got {maxval}")
    if w < 1 or h < 1:
        raise ParseError(f"{path}: empty image")
    if pos >= len(data) or not data[pos : pos + 1].isspace():
        raise ParseError(f"{path}: missing separator after header")
    raster = data[pos + 1 :]
    need = w * h * c
    if len(raster) != need:
        raise ParseError(f"{path}: raster has {len(raster)} bytes, expected {need}")
    return np.frombuffer(raster, dtype=np.uint8).reshape(h, w, c).transpose(2, 0, 1).copy()


def image_suffix(channels: int) -> str:
    return ".pgm" if channels == 1 else ".ppm"


def save_dataset(directory, batch: LabeledBatch, prefix: str = "img") -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    suffix = image_suffix(batch.images.shape[1])
    width = max(4, len(str(len(batch))))
    with open(d / MANIFEST, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["filename", "label"])
        for i, (img, label) in enumerate(zip(batch.images, batch.labels)):
            name = f"{prefix}{i:0{width}d}{suffix}"
            save_image(d / name, img)
            writer.writerow([name, int(label)])


def load_dataset(directory) -> tuple[LabeledBatch, list[str]]:
    """Load a dataset directory; returns the batch and the filenames."""
    d = Path(directory)
    path = d / MANIFEST
    if not path.is_file():
        raise InputError(f"no {MANIFEST} in {d}")
    names, labels, images = [], [], []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["filename", "label"]:
            raise ParseError(f"{path}: header must be 'filename,label'")
        for row in reader:
            try:
                labels.append(int(row["label"]))
            except (TypeError, ValueError):
                raise ParseError(f"{path}: bad label for {row.get('filename')!r}") from None
            names.append(row["filename"])
            images.append(load_image(d / row["filename"]))
    if not images:
        raise InputError(f"dataset {d} is empty")
    if len({im.shape for im in images}) != 1:
        raise ParseError(f"{path}: images have differing shapes")
    return LabeledBatch(np.stack(images).astype(np.float64), np.array(labels)), names
