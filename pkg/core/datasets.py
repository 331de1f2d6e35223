"""
MNIST (IDX) and CIFAR-10 (binary batch) loaders, CIFAR preprocessing and
validation splits.

Every sample keeps a ``sample_id`` so teacher logits can be matched to it
after splitting and augmentation.
"""

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from core.errors import CountMismatchError, FormatError, LabelRangeError, RecordSizeError, ShapeError, TruncationError

IDX_IMAGES_MAGIC = 2051
IDX_LABELS_MAGIC = 2049
CIFAR_RECORD_BYTES = 3073
N_CLASSES = 10

MNIST_FILES = {
    'train': ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    'test': ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}
CIFAR_TRAIN_FILES = [f"data_batch_{i}.bin" for i in range(1, 6)]
CIFAR_TEST_FILES = ["test_batch.bin"]

PathLike = Union[str, Path]


@dataclass
class LabeledSet:
    images: np.ndarray
    labels: np.ndarray
    name: str
    sample_ids: Optional[np.ndarray] = None

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.sample_ids is None:
            self.sample_ids = np.arange(len(self.labels), dtype=np.int64)
        if len(self.images) != len(self.labels) or len(self.sample_ids) != len(self.labels):
            raise CountMismatchError(
                f"{self.name}: {len(self.images)} images, {len(self.labels)} labels, {len(self.sample_ids)} ids")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= N_CLASSES):
            raise LabelRangeError(f"{self.name}: labels must lie in [0, {N_CLASSES})")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def image_shape(self) -> Tuple[int, ...]:
        return tuple(self.images.shape[1:])

    def subset(self, indices: Sequence[int], name: Optional[str] = None) -> "LabeledSet":
        indices = np.asarray(indices, dtype=np.int64)
        return LabeledSet(self.images[indices], self.labels[indices], name or self.name, self.sample_ids[indices])


@dataclass
class SplitConfig:
    validation_count: int = 0
    split_seed: int = 0


def _read_bytes(path: PathLike) -> bytes:
    path = Path(path)
    if not path.exists():
        gz = path.with_name(path.name + ".gz")
        if gz.exists():
            path = gz
        else:
            raise FileNotFoundError(f"Dataset file not found: {path}")
    if path.suffix == ".gz":
        with gzip.open(path, "rb") as f:
            return f.read()
    return path.read_bytes()


def _idx_header(data: bytes, magic: int, dims: int, what: str) -> Tuple[int, ...]:
    size = 4 * (1 + dims)
    if len(data) < size:
        raise TruncationError(f"{what}: file shorter than its {size}-byte header")
    values = struct.unpack(f">{1 + dims}I", data[:size])
    if values[0] != magic:
        raise FormatError(f"{what}: bad magic {values[0]} (expected {magic})")
    return values[1:]


def load_mnist_idx(images_path: PathLike, labels_path: PathLike, name: str = "mnist") -> LabeledSet:
    image_bytes = _read_bytes(images_path)
    label_bytes = _read_bytes(labels_path)
    count, rows, cols = _idx_header(image_bytes, IDX_IMAGES_MAGIC, 3, "images")
    (label_count,) = _idx_header(label_bytes, IDX_LABELS_MAGIC, 1, "labels")
    if count != label_count:
        raise CountMismatchError(f"{count} images but {label_count} labels")

    pixels = image_bytes[16:]
    if len(pixels) < count * rows * cols:
        raise TruncationError(f"images: expected {count * rows * cols} pixel bytes, found {len(pixels)}")
    labels = label_bytes[8:]
    if len(labels) < count:
        raise TruncationError(f"labels: expected {count} label bytes, found {len(labels)}")

    images = np.frombuffer(pixels, dtype=np.uint8, count=count * rows * cols)
    images = images.reshape(count, 1, rows, cols).astype(np.float64) / 255.0
    label_array = np.frombuffer(labels, dtype=np.uint8, count=count).astype(np.int64)
    if count and label_array.max() >= N_CLASSES:
        raise LabelRangeError(f"labels: found label {label_array.max()}")
    print(f"{count} images loaded from {Path(images_path).name}")
    return LabeledSet(images, label_array, name)


def load_cifar10_bin(batch_paths: Sequence[PathLike], name: str = "cifar10") -> LabeledSet:
    images: List[np.ndarray] = []
    labels: List[np.ndarray] = []
    for path in batch_paths:
        data = _read_bytes(path)
        if len(data) % CIFAR_RECORD_BYTES:
            raise RecordSizeError(f"{Path(path).name}: length {len(data)} is not a multiple of {CIFAR_RECORD_BYTES}")
        records = np.frombuffer(data, dtype=np.uint8).reshape(-1, CIFAR_RECORD_BYTES)
        if len(records) and records[:, 0].max() > N_CLASSES - 1:
            raise LabelRangeError(f"{Path(path).name}: label byte {records[:, 0].max()} > {N_CLASSES - 1}")
        labels.append(records[:, 0].astype(np.int64))
        images.append(records[:, 1:].reshape(-1, 3, 32, 32).astype(np.float64) / 255.0)
    if not images:
        return LabeledSet(np.zeros((0, 3, 32, 32)), np.zeros(0, dtype=np.int64), name)
    merged = LabeledSet(np.concatenate(images), np.concatenate(labels), name)
    print(f"{len(merged)} images loaded from {len(batch_paths)} CIFAR-10 batch file(s)")
    return merged


def mirror(images: np.ndarray) -> np.ndarray:
    """Horizontal flip of an (N, C, H, W) array."""
    return images[..., ::-1]


def preprocess_cifar(train: LabeledSet, others: Sequence[LabeledSet]) -> Tuple[LabeledSet, List[LabeledSet], np.ndarray]:
    """
    Subtract the per-pixel training mean from every set and append horizontal
    mirrors to the training set. The mean is taken over the unaugmented
    training images only.
    """
    for other in others:
        if other.image_shape != train.image_shape:
            raise ShapeError(f"{other.name} images {other.image_shape} differ from {train.name} {train.image_shape}")
    mean_image = train.images.mean(axis=0) if len(train) else np.zeros(train.image_shape)
    centered = train.images - mean_image
    offset = int(train.sample_ids.max()) + 1 if len(train) else 0
    augmented = LabeledSet(
        np.concatenate([centered, mirror(centered)]),
        np.concatenate([train.labels, train.labels]),
        train.name,
        np.concatenate([train.sample_ids, train.sample_ids + offset]),
    )
    processed = [LabeledSet(o.images - mean_image, o.labels.copy(), o.name, o.sample_ids.copy()) for o in others]
    return augmented, processed, mean_image


def split_validation(labeled: LabeledSet, cfg: SplitConfig) -> Tuple[LabeledSet, LabeledSet]:
    """Seeded disjoint split; both parts keep the original sample order."""
    if cfg.validation_count < 0 or (cfg.validation_count and cfg.validation_count >= len(labeled)):
        raise ValueError(f"validation_count {cfg.validation_count} must be smaller than {len(labeled)} samples")
    order = np.random.default_rng(cfg.split_seed).permutation(len(labeled))
    val_idx = np.sort(order[:cfg.validation_count])
    train_idx = np.sort(order[cfg.validation_count:])
    return (labeled.subset(train_idx, f"{labeled.name}-train"),
            labeled.subset(val_idx, f"{labeled.name}-validation"))


def load_dataset(name: str, data_dir: PathLike, split: SplitConfig,
                 train_limit: int = 0, test_limit: int = 0) -> Dict[str, LabeledSet]:
    """
    Load a dataset by name into 'train', 'validation' and 'test' sets.

    CIFAR-10 is split before preprocessing so the mean and the mirrors come
    from the remaining training images only.
    """
    data_dir = Path(data_dir)
    if name == "mnist":
        full = load_mnist_idx(*(data_dir / f for f in MNIST_FILES['train']), name="mnist")
        test = load_mnist_idx(*(data_dir / f for f in MNIST_FILES['test']), name="mnist-test")
        train, validation = split_validation(full, split)
    elif name == "cifar10":
        full = load_cifar10_bin([data_dir / f for f in CIFAR_TRAIN_FILES], name="cifar10")
        test = load_cifar10_bin([data_dir / f for f in CIFAR_TEST_FILES], name="cifar10-test")
        train, validation = split_validation(full, split)
        if train_limit:
            train = train.subset(np.arange(min(train_limit, len(train))))
            train_limit = 0
        train, (validation, test), _ = preprocess_cifar(train, [validation, test])
    else:
        raise ValueError(f"unknown dataset '{name}' (expected mnist or cifar10)")
    if train_limit:
        train = train.subset(np.arange(min(train_limit, len(train))))
    if test_limit:
        test = test.subset(np.arange(min(test_limit, len(test))))
    return {'train': train, 'validation': validation, 'test': test}
