"""
NTCK checkpoint files.

Layout (little-endian):
    b"NTCK" | u16 version | u32 arch length | arch (UTF-8, canonical form)
    then per tensor: u8 rank | u32 dims... | f64 values, row-major
Tensors are the weight then the bias of every Conv/FullyConnected layer, in order.
"""

import struct
from pathlib import Path
from typing import List, Tuple, Union

import numpy as np

from core.arch_dsl import LayerKind, parse_arch, render_arch
from core.errors import FormatError, ShapeError, TruncationError
from core.tensor_engine import NetworkParams

MAGIC = b"NTCK"
VERSION = 1


def encode_checkpoint(params: NetworkParams) -> bytes:
    arch = render_arch(params.spec).encode("utf-8")
    parts = [MAGIC, struct.pack("<HI", VERSION, len(arch)), arch]
    for tensor in params.tensors():
        parts.append(struct.pack("<B", tensor.ndim))
        parts.append(struct.pack(f"<{tensor.ndim}I", *tensor.shape))
        parts.append(np.ascontiguousarray(tensor, dtype="<f8").tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, size: int, what: str) -> bytes:
        if self.pos + size > len(self.data):
            raise TruncationError(f"checkpoint truncated while reading {what} at byte {self.pos}")
        chunk = self.data[self.pos:self.pos + size]
        self.pos += size
        return chunk


def decode_checkpoint(data: bytes) -> NetworkParams:
    reader = _Reader(data)
    if reader.take(4, "magic") != MAGIC:
        raise FormatError("not a checkpoint file (bad magic)")
    version, arch_len = struct.unpack("<HI", reader.take(6, "header"))
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    spec = parse_arch(reader.take(arch_len, "architecture").decode("utf-8"))
    spec.logit_layer_index()

    tensors: List[np.ndarray] = []
    expected = 2 * sum(1 for layer in spec.layers if layer.is_parametric)
    for i in range(expected):
        (rank,) = struct.unpack("<B", reader.take(1, f"tensor {i} rank"))
        dims: Tuple[int, ...] = struct.unpack(f"<{rank}I", reader.take(4 * rank, f"tensor {i} dims"))
        count = int(np.prod(dims)) if rank else 1
        values = np.frombuffer(reader.take(8 * count, f"tensor {i} values"), dtype="<f8")
        tensors.append(values.astype(np.float64).reshape(dims))
    if reader.pos != len(data):
        raise FormatError(f"{len(data) - reader.pos} trailing bytes after the last tensor")

    weights, biases = [], []
    it = iter(tensors)
    for index, layer in enumerate(spec.layers):
        if not layer.is_parametric:
            weights.append(None)
            biases.append(None)
            continue
        w, b = next(it), next(it)
        if layer.kind == LayerKind.CONV:
            ok = w.ndim == 4 and w.shape[0] == layer.out_channels and w.shape[2:] == (layer.kernel, layer.kernel)
            width = layer.out_channels
        else:
            ok = w.ndim == 2 and w.shape[0] == layer.out_units
            width = layer.out_units
        if not ok or b.shape != (width,):
            raise ShapeError(f"checkpoint tensors for layer {index} ({layer.render()}) have shapes {w.shape}, {b.shape}")
        weights.append(w)
        biases.append(b)
    return NetworkParams(spec, weights, biases)


def save_checkpoint(params: NetworkParams, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_checkpoint(params))
    return path


def load_checkpoint(path: Union[str, Path]) -> NetworkParams:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Checkpoint not found: {path}")
    return decode_checkpoint(path.read_bytes())
