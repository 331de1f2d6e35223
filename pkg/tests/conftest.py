"""
Shared fixtures: handcrafted IDX and CIFAR-10 files and tiny architectures.
"""

import struct
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from core.datasets import LabeledSet  # noqa: E402

TINY_TEACHER = "C3(S1P0)@4-MP2(S2)-FC10"
TINY_STUDENT = "FC16-FC10"


def write_idx_images(path: Path, images: np.ndarray) -> Path:
    count, rows, cols = images.shape
    path.write_bytes(struct.pack(">IIII", 2051, count, rows, cols) + images.astype(np.uint8).tobytes())
    return path


def write_idx_labels(path: Path, labels: np.ndarray) -> Path:
    path.write_bytes(struct.pack(">II", 2049, len(labels)) + np.asarray(labels, dtype=np.uint8).tobytes())
    return path


def write_cifar_batch(path: Path, images: np.ndarray, labels: np.ndarray) -> Path:
    records = np.concatenate([np.asarray(labels, dtype=np.uint8)[:, None],
                              images.reshape(len(labels), -1).astype(np.uint8)], axis=1)
    path.write_bytes(records.tobytes())
    return path


def class_images(labels: np.ndarray, size: int, rng: np.random.Generator) -> np.ndarray:
    """Noisy images with a bright block whose position encodes the class."""
    images = rng.integers(0, 60, size=(len(labels), size, size))
    for i, label in enumerate(labels):
        row, col = divmod(int(label), 4)
        r0, c0 = row * (size // 4), col * (size // 4)
        images[i, r0:r0 + size // 4, c0:c0 + size // 4] = 255
    return images


@pytest.fixture
def mnist_dir(tmp_path):
    """A miniature MNIST directory: 80 training and 30 test images of 8x8 pixels."""
    rng = np.random.default_rng(7)
    train_labels = np.arange(80) % 10
    test_labels = np.arange(30) % 10
    write_idx_images(tmp_path / "train-images-idx3-ubyte", class_images(train_labels, 8, rng))
    write_idx_labels(tmp_path / "train-labels-idx1-ubyte", train_labels)
    write_idx_images(tmp_path / "t10k-images-idx3-ubyte", class_images(test_labels, 8, rng))
    write_idx_labels(tmp_path / "t10k-labels-idx1-ubyte", test_labels)
    return tmp_path


@pytest.fixture
def cifar_dir(tmp_path):
    """Five 4-record training batches and a 6-record test batch."""
    rng = np.random.default_rng(11)
    for i in range(1, 6):
        labels = rng.integers(0, 10, size=4)
        write_cifar_batch(tmp_path / f"data_batch_{i}.bin", rng.integers(0, 256, size=(4, 3, 32, 32)), labels)
    write_cifar_batch(tmp_path / "test_batch.bin", rng.integers(0, 256, size=(6, 3, 32, 32)),
                      rng.integers(0, 10, size=6))
    return tmp_path


@pytest.fixture
def tiny_set():
    rng = np.random.default_rng(3)
    labels = np.arange(40) % 10
    images = class_images(labels, 8, rng)[:, None].astype(np.float64) / 255.0
    return LabeledSet(images, labels, "tiny")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: full-dataset runs, skipped unless the data directory is configured")
