"""MNIST-family datasets: IDX and amat readers, variation generators, subsampling.

Images are ``float64`` arrays of shape ``(N, 28, 28, 1)`` with values in
``[0, 1]``; labels are ``int64`` in ``[0, 9]``.
"""

import gzip
import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801
DATA_DIR_ENV = "SFNET_DATA_DIR"
SPLIT_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}
BACKGROUND_WEIGHT = 0.8


class DataError(ValueError):
    """Malformed, missing or insufficient data."""


@dataclass
class LabeledImageSet:
    images: np.ndarray
    labels: np.ndarray
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim == 3:
            self.images = self.images[..., None]
        if len(self.images) != len(self.labels):
            raise DataError(f"{len(self.images)} images but {len(self.labels)} labels")
        if self.images.size and (self.images.min() < 0 or self.images.max() > 1):
            raise DataError("pixel values must lie in [0, 1]")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() > 9):
            raise DataError("labels must lie in [0, 9]")

    def __len__(self):
        return len(self.labels)

    def take(self, index, **provenance):
        return LabeledImageSet(self.images[index], self.labels[index], {**self.provenance, **provenance})


# IDX ----------------------------------------------------------------------

def _open(path, mode="rb"):
    path = str(path)
    return gzip.open(path, mode) if path.endswith(".gz") else open(path, mode)


def read_idx(path, expected_magic=None):
    """Read an unsigned-byte IDX file into a uint8 array."""
    with _open(path) as f:
        raw = f.read()
    if len(raw) < 4:
        raise DataError(f"{path}: truncated header")
    magic = struct.unpack(">I", raw[:4])[0]
    if expected_magic is not None and magic != expected_magic:
        raise DataError(f"{path}: bad magic 0x{magic:08x}, expected 0x{expected_magic:08x}")
    if magic >> 8 != 0x08:
        raise DataError(f"{path}: bad magic 0x{magic:08x}, only unsigned-byte IDX is supported")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise DataError(f"{path}: truncated header")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    count = int(np.prod(dims))
    if len(raw) - header < count:
        raise DataError(f"{path}: truncated data, expected {count} bytes, found {len(raw) - header}")
    return np.frombuffer(raw, dtype=np.uint8, count=count, offset=header).reshape(dims)


def write_idx(path, array):
    array = np.ascontiguousarray(array, dtype=np.uint8)
    with _open(path, "wb") as f:
        f.write(struct.pack(">I", 0x0800 | array.ndim))
        f.write(struct.pack(f">{array.ndim}I", *array.shape))
        f.write(array.tobytes())


def load_idx(images_path, labels_path):
    """Load an IDX image/label file pair, scaling pixels to ``[0, 1]``."""
    images = read_idx(images_path, IMAGE_MAGIC)
    labels = read_idx(labels_path, LABEL_MAGIC)
    if len(images) != len(labels):
        raise DataError(f"{images_path} holds {len(images)} images but {labels_path} holds {len(labels)} labels")
    return LabeledImageSet(images.astype(np.float64) / 255.0, labels.astype(np.int64),
                           {"source": str(images_path)})


def to_bytes(images):
    return np.clip(np.rint(np.asarray(images) * 255.0), 0, 255).astype(np.uint8)


def save_idx(dataset, images_path, labels_path):
    write_idx(images_path, to_bytes(dataset.images[..., 0]))
    write_idx(labels_path, dataset.labels.astype(np.uint8))


def data_dir(path=None):
    path = path or os.environ.get(DATA_DIR_ENV)
    if not path:
        raise DataError(f"no data directory given and ${DATA_DIR_ENV} is unset")
    return Path(path)


def load_split(directory, split="train", prefix=""):
    """Load ``train`` or ``test`` IDX files (optionally gzipped) from a directory.

    ``prefix`` selects generated variations, e.g. ``"rot-"``.
    """
    directory = Path(directory)
    if split not in SPLIT_FILES:
        raise DataError(f"unknown split {split!r}")
    found = []
    for name in SPLIT_FILES[split]:
        for candidate in (directory / (prefix + name), directory / (prefix + name + ".gz")):
            if candidate.exists():
                found.append(candidate)
                break
        else:
            raise DataError(f"{directory}: no {prefix + name}[.gz]")
    return load_idx(*found)


def save_split(dataset, directory, split="train", prefix=""):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    img, lab = (directory / (prefix + n) for n in SPLIT_FILES[split])
    save_idx(dataset, img, lab)
    write_provenance(img, dataset.provenance)
    return img, lab


def write_provenance(path, provenance):
    sidecar = Path(str(path) + ".meta.json")
    sidecar.write_text(json.dumps(provenance, indent=2, sort_keys=True, default=str) + "\n")
    return sidecar


# amat -----------------------------------------------------------------------

def load_amat(path, transpose=False):
    """Read the MNIST-variations text format: 784 pixel columns then the label.

    The original rotated set stores images column-major; pass
    ``transpose=True`` for it.
    """
    try:
        table = np.loadtxt(path, ndmin=2)
    except ValueError as err:
        raise DataError(f"{path}: {err}") from None
    if table.shape[1] != 785:
        raise DataError(f"{path}: expected 785 columns, found {table.shape[1]}")
    images = table[:, :784].reshape(-1, 28, 28)
    if transpose:
        images = images.transpose(0, 2, 1)
    return LabeledImageSet(np.clip(images, 0, 1), table[:, 784].astype(np.int64), {"source": str(path)})


# variations -------------------------------------------------------------------

def rotate(image, angle):
    """Rotate a ``(28, 28)`` image about its centre by ``angle`` radians, bilinearly."""
    return np.clip(ndimage.rotate(image, np.degrees(angle), reshape=False, order=1, mode="constant"), 0, 1)


def default_background_pool():
    """Grayscale photographs bundled with scikit-image, scaled to ``[0, 1]``."""
    from skimage import data as skdata

    names = ("camera", "coins", "moon", "page", "text", "brick", "grass", "gravel", "clock", "cell")
    return [getattr(skdata, n)().astype(np.float64) / 255.0 for n in names]


def make_variation(dataset, kind, seed, background_pool=None, angle=None, amplitude=1.0):
    """Synthetic MNIST variation.

    rot
        Each image rotated by an angle drawn uniformly from ``[0, 2 pi)``
        (or by ``angle`` when given).
    rand
        Uniform noise in ``[0, amplitude)`` composited behind the digit.
    img
        A random crop from ``background_pool`` composited behind the digit.

    Compositing keeps ``max(digit, 0.8 * background)``.
    """
    rng = np.random.default_rng(seed)
    images = dataset.images[..., 0]
    n, h, w = images.shape
    if kind == "rot":
        angles = rng.uniform(0, 2 * np.pi, n) if angle is None else np.full(n, float(angle))
        out = np.stack([rotate(img, a) for img, a in zip(images, angles)])
        extra = {"angle": "uniform[0, 2pi)" if angle is None else float(angle)}
    elif kind == "rand":
        noise = rng.uniform(0.0, 1.0, images.shape) * amplitude
        out = np.maximum(images, BACKGROUND_WEIGHT * noise)
        extra = {"noise": f"uniform[0, {amplitude})"}
    elif kind == "img":
        if not background_pool:
            raise DataError("the img variation needs a background image pool")
        out = np.empty_like(images)
        for i, img in enumerate(images):
            src = background_pool[rng.integers(len(background_pool))]
            if src.shape[0] < h or src.shape[1] < w:
                raise DataError(f"background image of shape {src.shape} is smaller than {h}x{w}")
            r = rng.integers(src.shape[0] - h + 1)
            c = rng.integers(src.shape[1] - w + 1)
            out[i] = np.maximum(img, BACKGROUND_WEIGHT * src[r:r + h, c:c + w])
        extra = {"backgrounds": len(background_pool)}
    else:
        raise DataError(f"unknown variation {kind!r}; expected rot, rand or img")
    prov = {**dataset.provenance, "variation": kind, "variation_seed": seed, **extra,
            "note": "synthetic approximation, not the published MNIST-variations data"}
    return LabeledImageSet(out[..., None], dataset.labels.copy(), prov)


# subsampling -----------------------------------------------------------------

@dataclass(frozen=True)
class SubsampleSpec:
    per_class: int
    trial_seed: int = 0

    def __post_init__(self):
        if self.per_class < 1:
            raise ValueError(f"per_class must be positive, got {self.per_class}")


def subsample(dataset, spec, classes=10):
    """Stratified subset with exactly ``spec.per_class`` samples of every class."""
    rng = np.random.default_rng(spec.trial_seed)
    chosen = []
    for k in range(classes):
        members = np.flatnonzero(dataset.labels == k)
        if len(members) < spec.per_class:
            raise DataError(f"class {k} has {len(members)} samples, {spec.per_class} requested")
        chosen.append(rng.permutation(members)[:spec.per_class])
    index = np.sort(np.concatenate(chosen))
    return dataset.take(index, subsample_per_class=spec.per_class, subsample_seed=spec.trial_seed,
                        subsample_indices=index.tolist())


def mlxtend_subset():
    """The 5000-image MNIST training subset bundled with ``mlxtend``.

    Used when the full MNIST files are unavailable; needs the optional
    ``mlxtend`` package.
    """
    try:
        from mlxtend.data import mnist_data
    except ImportError as err:
        raise DataError("mlxtend is not installed; pip install mlxtend or provide MNIST IDX files") from err
    X, y = mnist_data()
    return LabeledImageSet(X.reshape(-1, 28, 28) / 255.0, y, {"source": "mlxtend mnist_5k"})


def mlxtend_split(test_per_class=200, seed=0):
    """Deterministic (train pool, test) split of :func:`mlxtend_subset`."""
    full = mlxtend_subset()
    test = subsample(full, SubsampleSpec(test_per_class, seed))
    held = np.zeros(len(full), dtype=bool)
    held[test.provenance["subsample_indices"]] = True
    pool = full.take(np.flatnonzero(~held), split="train")
    test = full.take(np.flatnonzero(held), split="test")
    return pool, test
