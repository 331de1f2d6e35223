"""
Teacher training on hard labels and the NLGT logit cache.

Logit cache layout (little-endian):
    b"NLGT" | u16 version | u32 n_classes | u64 record count | 32-byte teacher tag
    then per record: u64 sample_index | n_classes x f64 logits | u8 hard label
"""

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np

from core.arch_dsl import ArchSpec
from core.datasets import LabeledSet
from core.errors import CountMismatchError, FormatError, MissingLogitsError, ShapeError, TruncationError
from core.metrics import RunMetrics
from core.tensor_engine import (TRAIN, NetworkParams, backward, forward, image_shape_to_arch, init_params,
                                predict_logits, softmax_cross_entropy)
from core.training import TrainConfig, fit, make_streams

MAGIC = b"NLGT"
VERSION = 1
TAG_BYTES = 32
HEADER = struct.Struct("<4sHIQ32s")


def _record_dtype(n_classes: int) -> np.dtype:
    return np.dtype([('sample_index', '<u8'), ('logits', '<f8', (n_classes,)), ('hard_label', 'u1')])


def _tag_bytes(tag: Union[str, bytes]) -> bytes:
    raw = tag.encode("utf-8") if isinstance(tag, str) else bytes(tag)
    return raw[:TAG_BYTES].ljust(TAG_BYTES, b"\0")


@dataclass
class LogitRecordSet:
    n_classes: int
    sample_ids: np.ndarray
    logits: np.ndarray
    hard_labels: np.ndarray
    teacher_tag: bytes = b"\0" * TAG_BYTES

    def __post_init__(self):
        self.sample_ids = np.asarray(self.sample_ids, dtype=np.int64)
        self.logits = np.asarray(self.logits, dtype=np.float64).reshape(len(self.sample_ids), self.n_classes)
        self.hard_labels = np.asarray(self.hard_labels, dtype=np.int64)
        self.teacher_tag = _tag_bytes(self.teacher_tag)
        if len(self.hard_labels) != len(self.sample_ids):
            raise CountMismatchError("one hard label is needed per logit record")
        if len(np.unique(self.sample_ids)) != len(self.sample_ids):
            raise FormatError("duplicate sample_index in logit records")

    def __len__(self) -> int:
        return len(self.sample_ids)

    @property
    def tag(self) -> str:
        return self.teacher_tag.rstrip(b"\0").decode("utf-8", errors="replace")

    def logits_for(self, sample_ids: np.ndarray) -> np.ndarray:
        """Teacher logits aligned with ``sample_ids``."""
        position = {int(s): i for i, s in enumerate(self.sample_ids)}
        try:
            rows = [position[int(s)] for s in sample_ids]
        except KeyError as exc:
            raise MissingLogitsError(f"no teacher logits for sample {exc.args[0]}") from None
        return self.logits[rows]


def train_teacher(spec: ArchSpec, train: LabeledSet, validation: LabeledSet, cfg: TrainConfig,
                  seed: int, progress: bool = True) -> Tuple[NetworkParams, RunMetrics]:
    """Softmax cross-entropy on hard labels; returns the best-validation parameters."""
    streams = make_streams(seed)
    params = init_params(spec, image_shape_to_arch(train.image_shape), streams.init)
    classes = params.weights[spec.logit_layer_index()].shape[0]
    if len(train) and train.labels.max() >= classes:
        raise ShapeError(f"architecture emits {classes} classes but labels reach {train.labels.max()}")

    def batch_step(current: NetworkParams, indices: np.ndarray):
        logits, cache = forward(spec, current, train.images[indices], TRAIN, streams.dropout)
        loss, dlogits = softmax_cross_entropy(logits, train.labels[indices])
        return loss, backward(cache, dlogits)

    metrics = RunMetrics(tag="teacher", seed=seed)
    best = fit(spec, params, train, validation, cfg, streams, batch_step, metrics, progress)
    return best, metrics


def compute_logits(params: NetworkParams, spec: ArchSpec, labeled: LabeledSet,
                   teacher_tag: Union[str, bytes] = "") -> LogitRecordSet:
    logits = predict_logits(spec, params, labeled.images)
    return LogitRecordSet(logits.shape[1], labeled.sample_ids.copy(), logits, labeled.labels.copy(), teacher_tag)


def encode_logits(records: LogitRecordSet) -> bytes:
    header = HEADER.pack(MAGIC, VERSION, records.n_classes, len(records), records.teacher_tag)
    body = np.empty(len(records), dtype=_record_dtype(records.n_classes))
    body['sample_index'] = records.sample_ids
    body['logits'] = records.logits
    body['hard_label'] = records.hard_labels
    return header + body.tobytes()


def write_logits(records: LogitRecordSet, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_logits(records))
    return path


def export_logits(params: NetworkParams, spec: ArchSpec, labeled: LabeledSet, path: Union[str, Path],
                  teacher_tag: Union[str, bytes] = "") -> LogitRecordSet:
    """Eval-mode logits of every sample in ``labeled``, written to ``path``."""
    records = compute_logits(params, spec, labeled, teacher_tag)
    write_logits(records, path)
    print(f"Exported {len(records)} logit records to {path}")
    return records


def decode_logits(data: bytes) -> LogitRecordSet:
    if len(data) < HEADER.size:
        raise TruncationError(f"logit cache shorter than its {HEADER.size}-byte header")
    magic, version, n_classes, count, tag = HEADER.unpack_from(data)
    if magic != MAGIC:
        raise FormatError("not a logit cache (bad magic)")
    if version != VERSION:
        raise FormatError(f"unsupported logit cache version {version}")
    if n_classes < 1:
        raise FormatError("logit cache declares zero classes")
    dtype = _record_dtype(n_classes)
    expected = HEADER.size + count * dtype.itemsize
    if len(data) < expected:
        raise TruncationError(f"logit cache truncated: {count} records need {expected} bytes, found {len(data)}")
    if len(data) > expected:
        raise FormatError(f"{len(data) - expected} trailing bytes after {count} records")
    if count == 0:
        body = np.zeros(0, dtype=dtype)
    else:
        body = np.frombuffer(data, dtype=dtype, count=count, offset=HEADER.size)
    return LogitRecordSet(n_classes, body['sample_index'].astype(np.int64), body['logits'].copy(),
                          body['hard_label'].astype(np.int64), tag)


def load_logits(path: Union[str, Path]) -> LogitRecordSet:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Logit cache not found: {path}")
    return decode_logits(path.read_bytes())


def teacher_tag_for(spec: ArchSpec, seed: Optional[int]) -> str:
    return f"{len(spec.layers)}L-seed{seed}"
