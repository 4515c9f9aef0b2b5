"""Dataset ingestion and experiment splits.

Targets are grayscale images in [0, 1]. Two sources are supported: IDX image
files (the MNIST container format) and a built-in synthetic handwritten-digit
corpus derived from scikit-learn's 8x8 digits (upscaled and augmented), which
keeps experiments self-contained when no IDX file is available.
"""

from __future__ import annotations

import gzip
import hashlib
import struct
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from sklearn.datasets import load_digits

from .degradations import DegradationSpec, apply_lowfid
from .errors import ConfigurationError, InvalidInputError
from .rng import RngStream

IDX_IMAGE_MAGIC = 0x00000803


@dataclass
class DatasetHandle:
    """An in-memory image set plus provenance for reproducibility manifests."""

    images: np.ndarray  # (n, H, W) in [0, 1]
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        if self.images.ndim != 3:
            raise InvalidInputError("images must be (n, H, W)")

    @property
    def n(self) -> int:
        return self.images.shape[0]

    @property
    def image_shape(self) -> tuple:
        return self.images.shape[1:]


@dataclass
class PairedDataset:
    """Ground-truth targets with their recorded measurements."""

    images: np.ndarray  # (K, H, W)
    measurements: np.ndarray  # (K, M), rows flat
    measurement_shape: tuple  # (frames, h, w)
    indices: np.ndarray = None  # source indices within the parent dataset

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        self.measurements = np.asarray(self.measurements, dtype=np.float64)
        self.measurement_shape = tuple(int(s) for s in self.measurement_shape)
        if self.images.shape[0] != self.measurements.shape[0]:
            raise InvalidInputError("images and measurements differ in length")
        if self.measurements.ndim != 2 or self.measurements.shape[1] != int(
            np.prod(self.measurement_shape)
        ):
            raise InvalidInputError("measurement rows inconsistent with shape")
        if self.indices is not None:
            self.indices = np.asarray(self.indices, dtype=np.int64)

    @property
    def n(self) -> int:
        return self.images.shape[0]


def load_idx_dataset(path) -> DatasetHandle:
    """Parse an IDX image file (optionally gzipped) into [0, 1] images."""
    opener = gzip.open if str(path).endswith(".gz") else open
    try:
        with opener(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise InvalidInputError(f"cannot read IDX file {path}: {exc}") from exc
    if len(raw) < 4:
        raise InvalidInputError(f"{path}: truncated IDX header at offset 0")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic != IDX_IMAGE_MAGIC:
        raise InvalidInputError(
            f"{path}: bad magic 0x{magic:08x} at offset 0 "
            f"(expected 0x{IDX_IMAGE_MAGIC:08x})"
        )
    if len(raw) < 16:
        raise InvalidInputError(f"{path}: truncated IDX dims at offset 4")
    n, rows, cols = struct.unpack(">III", raw[4:16])
    expected = 16 + n * rows * cols
    if len(raw) < expected:
        raise InvalidInputError(
            f"{path}: truncated pixel data at offset {len(raw)} (need {expected})"
        )
    pixels = np.frombuffer(raw[16:expected], dtype=np.uint8)
    images = pixels.reshape(n, rows, cols).astype(np.float64) / 255.0
    checksum = hashlib.sha256(raw[:expected]).hexdigest()
    return DatasetHandle(images, {"file": str(path), "sha256": checksum})


_BASE_DIGITS_CACHE = {}


def _base_digits(size: int) -> np.ndarray:
    if size not in _BASE_DIGITS_CACHE:
        raw = load_digits().images / 16.0  # (1797, 8, 8)
        if size == 8:
            base = raw.copy()
        else:
            base = np.stack(
                [
                    np.clip(ndimage.zoom(img, size / 8.0, order=1), 0.0, 1.0)
                    for img in raw
                ]
            )
        _BASE_DIGITS_CACHE[size] = base
    return _BASE_DIGITS_CACHE[size]


def _shifted(img: np.ndarray, dy: int, dx: int) -> np.ndarray:
    out = np.zeros_like(img)
    h, w = img.shape
    ys = slice(max(dy, 0), h + min(dy, 0))
    xs = slice(max(dx, 0), w + min(dx, 0))
    ys_src = slice(max(-dy, 0), h + min(-dy, 0))
    xs_src = slice(max(-dx, 0), w + min(-dx, 0))
    out[ys, xs] = img[ys_src, xs_src]
    return out


def _augment(img: np.ndarray, gen: np.random.Generator) -> np.ndarray:
    """Random rotation, zoom, shift, and intensity scaling of one glyph."""
    out = ndimage.rotate(img, gen.uniform(-25.0, 25.0), reshape=False, order=1)
    zoom = gen.uniform(0.8, 1.2)
    out = ndimage.zoom(out, zoom, order=1)
    size = img.shape[0]
    if out.shape[0] >= size:
        lo = (out.shape[0] - size) // 2
        out = out[lo : lo + size, lo : lo + size]
    else:
        pad = size - out.shape[0]
        lo = pad // 2
        out = np.pad(out, ((lo, pad - lo), (lo, pad - lo)))
    dy, dx = gen.integers(-3, 4, size=2)
    out = _shifted(out, int(dy), int(dx)) * gen.uniform(0.6, 1.0)
    return np.clip(out, 0.0, 1.0)


def synthetic_digits(n: int, size: int = 28, seed: int = 0) -> DatasetHandle:
    """Deterministic handwritten-digit-like corpus of n images.

    Each entry is an upscaled scikit-learn digit passed through a random
    rotation / zoom / shift / intensity transform fully determined by
    (seed, index), giving the corpus enough variability that small subsets
    do not cover it.
    """
    if n < 1:
        raise InvalidInputError("n must be >= 1")
    base = _base_digits(size)
    nb = base.shape[0]
    images = np.empty((n, size, size))
    for i in range(n):
        gen = RngStream(seed, 0).derive("aug", i).generator()
        images[i] = _augment(base[i % nb], gen)
    return DatasetHandle(
        images, {"source": "synthetic_digits", "seed": int(seed), "n": int(n)}
    )


@dataclass
class ExperimentSplits:
    """Disjoint paired / unpaired / test partition of a target dataset."""

    paired: PairedDataset
    unpaired: np.ndarray  # (L, H, W) targets without measurements
    test: PairedDataset
    unpaired_indices: np.ndarray


def make_splits(
    data,
    K: int,
    L: int,
    test_n: int,
    true_spec: DegradationSpec,
    rng: RngStream,
) -> ExperimentSplits:
    """Partition targets and record true-process measurements.

    Paired and test measurements are drawn from the TRUE observation spec;
    unpaired targets carry no measurements. The three index sets are
    disjoint by construction.
    """
    images = data.images if isinstance(data, DatasetHandle) else np.asarray(data)
    n = images.shape[0]
    if K < 0 or L < 0 or test_n < 0 or K + L + test_n > n:
        raise ConfigurationError(
            f"splits K={K} L={L} test={test_n} exceed dataset size {n}"
        )
    order = rng.derive("split").permutation(n)
    k_idx = order[:K]
    l_idx = order[K : K + L]
    t_idx = order[K + L : K + L + test_n]

    m_shape = true_spec.output_shape(images.shape[1:])

    def measure(indices, tag):
        out = np.zeros((len(indices), int(np.prod(m_shape))))
        for row, i in enumerate(indices):
            out[row] = apply_lowfid(true_spec, images[i], rng.derive(tag, int(i))).data
        return out

    paired = PairedDataset(images[k_idx], measure(k_idx, "paired"), m_shape, k_idx)
    test = PairedDataset(images[t_idx], measure(t_idx, "test"), m_shape, t_idx)
    return ExperimentSplits(paired, images[l_idx], test, l_idx)
