"""Dataset containers, loaders, normalisation and synthetic generators.

Images and signals are min-max normalised per sample onto [-1, 1].  The
synthetic 2-feature sets use a fixed box normaliser instead (per-sample
min-max would collapse a 2-vector to +-1) so that in-distribution and
out-of-distribution samples share one coordinate system.
"""

import gzip
import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError, FormatError, InvalidInputError

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

SIGNAL_MAGIC = b"IQSG"
_SIGNAL_HEADER = struct.Struct("<4sIIII")


@dataclass
class Dataset:
    samples: np.ndarray
    labels: np.ndarray | None = None
    n_classes: int | None = None
    name: str = "dataset"
    class_names: list | None = None

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if len(self.labels) != len(self.samples):
                raise InvalidInputError(
                    f"{len(self.samples)} samples but {len(self.labels)} labels")
            if self.n_classes is None:
                self.n_classes = int(self.labels.max()) + 1 if self.labels.size else 0
            if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
                raise InvalidInputError(f"labels outside [0, {self.n_classes})")

    def __len__(self):
        return len(self.samples)

    @property
    def sample_shape(self):
        return self.samples.shape[1:]

    @property
    def labeled(self):
        return self.labels is not None

    def subset(self, index, name=None):
        return replace(self, samples=self.samples[index],
                       labels=None if self.labels is None else self.labels[index],
                       name=name or self.name)


@dataclass
class SplitSpec:
    train: float = 0.8
    validation: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if self.train <= 0 or self.validation <= 0 or self.train + self.validation > 1 + 1e-12:
            raise ConfigError(
                f"split fractions must be positive and sum to <= 1, got "
                f"{self.train} + {self.validation}")

    @classmethod
    def from_dict(cls, d):
        """Build from a config section; ``val`` is accepted for ``validation``."""
        d = dict(d)
        if "val" in d:
            d["validation"] = d.pop("val")
        unknown = set(d) - {"train", "validation", "seed"}
        if unknown:
            raise ConfigError(f"unknown split keys: {sorted(unknown)}")
        return cls(**d)


def split_dataset(dataset, spec):
    """Deterministic shuffled train/validation split."""
    order = np.random.default_rng(spec.seed).permutation(len(dataset))
    n_train = int(round(spec.train * len(dataset)))
    n_val = int(round(spec.validation * len(dataset)))
    n_val = min(n_val, len(dataset) - n_train)
    return (dataset.subset(np.sort(order[:n_train]), f"{dataset.name}-train"),
            dataset.subset(np.sort(order[n_train:n_train + n_val]), f"{dataset.name}-val"))


# ----------------------------------------------------------------------
# normalisation


def normalize_minmax(samples):
    """Per-sample min-max over all channels jointly, rescaled to [-1, 1].

    A constant sample maps to all zeros.
    """
    x = np.asarray(samples, dtype=np.float64)
    if len(x) == 0:
        return x.copy()
    if not np.all(np.isfinite(x)):
        raise InvalidInputError("cannot normalise non-finite samples")
    axes = tuple(range(1, x.ndim))
    lo = x.min(axis=axes, keepdims=True)
    hi = x.max(axis=axes, keepdims=True)
    span = hi - lo
    safe = np.where(span > 0, span, 1.0)
    return np.where(span > 0, 2.0 * (x - lo) / safe - 1.0, 0.0)


def normalize_box(samples, extent):
    """Map the box [-extent, extent]^d onto [-1, 1]^d, clipping the tails."""
    return np.clip(np.asarray(samples, dtype=np.float64) / extent, -1.0, 1.0)


def first_channel(samples):
    x = np.asarray(samples)
    if x.ndim < 2 or x.shape[1] < 1:
        raise InvalidInputError(f"expected [count, channels, ...], got {x.shape}")
    return x[:, :1].copy()


# ----------------------------------------------------------------------
# IDX


def _read_bytes(path):
    path = Path(path)
    raw = path.read_bytes()
    if path.suffix == ".gz":
        raw = gzip.decompress(raw)
    return raw


def _parse_idx(raw, magic, ndims, what):
    if len(raw) < 4:
        raise FormatError(f"{what}: file too short for a magic number", offset=len(raw))
    (found,) = struct.unpack_from(">I", raw, 0)
    if found != magic:
        raise FormatError(f"{what}: bad magic 0x{found:08x}, expected 0x{magic:08x}", offset=0)
    header = 4 + 4 * ndims
    if len(raw) < header:
        raise FormatError(f"{what}: truncated dimension header", offset=len(raw))
    dims = struct.unpack_from(">" + "I" * ndims, raw, 4)
    expected = int(np.prod(dims, dtype=np.int64))
    available = len(raw) - header
    if available < expected:
        raise FormatError(f"{what}: payload truncated, {available} of {expected} bytes",
                          offset=len(raw))
    if available > expected:
        raise FormatError(f"{what}: {available - expected} trailing bytes",
                          offset=header + expected)
    return np.frombuffer(raw, dtype=np.uint8, count=expected, offset=header).reshape(dims)


def read_idx_images(path):
    """Raw uint8 images [count, H, W]."""
    return _parse_idx(_read_bytes(path), IDX_IMAGES_MAGIC, 3, f"{path}")


def read_idx_labels(path):
    return _parse_idx(_read_bytes(path), IDX_LABELS_MAGIC, 1, f"{path}")


def load_idx(images_path, labels_path=None, name=None, n_classes=None, limit=None):
    """Load an IDX image file (and optional label file) as a normalised Dataset."""
    images = read_idx_images(images_path)
    labels = None
    if labels_path is not None:
        labels = read_idx_labels(labels_path)
        if len(labels) != len(images):
            raise FormatError(
                f"count mismatch: {len(images)} images but {len(labels)} labels", offset=4)
    if limit is not None:
        images = images[:limit]
        labels = None if labels is None else labels[:limit]
    samples = normalize_minmax(images[:, None].astype(np.float64))
    return Dataset(samples, labels, n_classes if labels is not None else None,
                   name or Path(images_path).name)


def write_idx_images(path, images):
    images = np.asarray(images, dtype=np.uint8)
    header = struct.pack(">IIII", IDX_IMAGES_MAGIC, *images.shape)
    Path(path).write_bytes(header + images.tobytes())


def write_idx_labels(path, labels):
    labels = np.asarray(labels, dtype=np.uint8)
    Path(path).write_bytes(struct.pack(">II", IDX_LABELS_MAGIC, len(labels)) + labels.tobytes())


# ----------------------------------------------------------------------
# raw 1D signal container
#
#   4s magic b"IQSG" | u32 count | u32 channels | u32 length | u32 float64 flag
#   followed by count records of channels*length little-endian floats
#   (float64 when the flag is 1, float32 when 0).  A zero-byte file is an
#   empty dataset.


def write_raw_signals(path, signals, float64=True):
    signals = np.asarray(signals)
    if signals.ndim != 3:
        raise InvalidInputError(f"signals must be [count, channels, length], got {signals.shape}")
    dtype = "<f8" if float64 else "<f4"
    count, channels, length = signals.shape
    header = _SIGNAL_HEADER.pack(SIGNAL_MAGIC, count, channels, length, int(float64))
    Path(path).write_bytes(header + np.ascontiguousarray(signals, dtype=dtype).tobytes())


def read_raw_signals(path, channels=2):
    """Un-normalised float64 signals [count, channels, length]."""
    raw = Path(path).read_bytes()
    if not raw:
        return np.zeros((0, channels, 0))
    if len(raw) < _SIGNAL_HEADER.size:
        raise FormatError("signal file truncated inside header", offset=len(raw))
    magic, count, n_ch, length, is_f64 = _SIGNAL_HEADER.unpack_from(raw, 0)
    if magic != SIGNAL_MAGIC:
        raise FormatError(f"bad signal magic {magic!r}", offset=0)
    if n_ch != channels:
        raise FormatError(f"file holds {n_ch} channels, expected {channels}", offset=8)
    if is_f64 not in (0, 1):
        raise FormatError(f"bad float-width flag {is_f64}", offset=16)
    itemsize = 8 if is_f64 else 4
    record = n_ch * length * itemsize
    payload = len(raw) - _SIGNAL_HEADER.size
    if record == 0:
        if payload:
            raise FormatError("zero-length records with a non-empty payload",
                              offset=_SIGNAL_HEADER.size)
        return np.zeros((count, n_ch, length))
    if payload % record:
        good = payload - payload % record
        raise FormatError(f"payload of {payload} bytes is not a multiple of the "
                          f"{record}-byte record", offset=_SIGNAL_HEADER.size + good)
    if payload // record != count:
        raise FormatError(f"header declares {count} records, payload holds {payload // record}",
                          offset=4)
    dtype = "<f8" if is_f64 else "<f4"
    arr = np.frombuffer(raw, dtype=dtype, offset=_SIGNAL_HEADER.size)
    return arr.astype(np.float64).reshape(count, n_ch, length)


def load_raw_signals(path, channels=2, labels_path=None, name=None, n_classes=None,
                     class_names=None):
    signals = read_raw_signals(path, channels)
    labels = None
    if labels_path is not None:
        labels = read_idx_labels(labels_path)
        if len(labels) != len(signals):
            raise FormatError(
                f"count mismatch: {len(signals)} signals but {len(labels)} labels", offset=4)
    return Dataset(normalize_minmax(signals), labels, n_classes if labels is not None else None,
                   name or Path(path).name, class_names)


def exclude_classes(dataset, names):
    """Drop samples whose class name is listed in ``names``.

    Used to trim an out-of-distribution corpus of classes the classifier was
    trained on.  The result keeps its labels for inspection.
    """
    if not names:
        return dataset
    if dataset.labels is None or dataset.class_names is None:
        raise ConfigError(f"{dataset.name}: class exclusion needs labels and class names")
    unknown = set(names) - set(dataset.class_names)
    if unknown:
        raise ConfigError(f"{dataset.name}: unknown classes {sorted(unknown)}")
    drop = [dataset.class_names.index(n) for n in names]
    return dataset.subset(~np.isin(dataset.labels, drop))


# ----------------------------------------------------------------------
# synthetic desk-scale sets


def blob_region_radius(spread):
    """Radius enclosing the blobs out to four standard deviations."""
    return 1.0 + 4.0 * spread


def blob_centers(n_classes):
    angles = 2.0 * np.pi * np.arange(n_classes) / n_classes
    return np.stack([np.cos(angles), np.sin(angles)], axis=1)


def synth_blobs(n_classes=3, per_class=100, spread=0.1, seed=0, extent=2.0):
    """Isotropic Gaussian clusters centred on the unit circle, box-normalised."""
    if n_classes < 2:
        raise ConfigError(f"need at least 2 classes, got {n_classes}")
    rng = np.random.default_rng(seed)
    centers = blob_centers(n_classes)
    labels = np.repeat(np.arange(n_classes), per_class)
    points = centers[labels] + spread * rng.standard_normal((len(labels), 2))
    return Dataset(normalize_box(points, extent), labels, n_classes, "blobs",
                   [f"blob{i}" for i in range(n_classes)])


def synth_ood_ring(count=200, radius_range=(1.5, 1.9), seed=0, extent=2.0,
                   blob_radius=blob_region_radius(0.1)):
    """Points uniform (by area) on an annulus outside the blob region."""
    lo, hi = radius_range
    if not lo < hi:
        raise ConfigError(f"radius range must be increasing, got {radius_range}")
    if lo <= blob_radius:
        raise ConfigError(f"annulus inner radius {lo} overlaps the blob region "
                          f"(radius {blob_radius})")
    if hi > extent:
        raise ConfigError(f"annulus outer radius {hi} exceeds the normalisation box {extent}")
    rng = np.random.default_rng(seed)
    radius = np.sqrt(rng.uniform(lo * lo, hi * hi, size=count))
    angle = rng.uniform(0.0, 2.0 * np.pi, size=count)
    points = np.stack([radius * np.cos(angle), radius * np.sin(angle)], axis=1)
    return Dataset(normalize_box(points, extent), name="ring")
