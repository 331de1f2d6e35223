"""
Tests for NTCK checkpoint encoding.
"""

import struct

import numpy as np
import pytest

from core.arch_dsl import parse_arch
from core.checkpoint import MAGIC, decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint
from core.errors import FormatError, ShapeError, TruncationError
from core.tensor_engine import init_params

from tests.conftest import TINY_TEACHER


@pytest.fixture
def params():
    return init_params(parse_arch(TINY_TEACHER), (8, 8, 1), np.random.default_rng(0))


class TestCheckpoint:
    """Tests for checkpoint save and load."""

    def test_round_trip_is_byte_identical(self, params, tmp_path):
        path = save_checkpoint(params, tmp_path / "nested" / "model.ntck")
        loaded = load_checkpoint(path)
        assert encode_checkpoint(loaded) == path.read_bytes()
        for original, restored in zip(params.tensors(), loaded.tensors()):
            np.testing.assert_array_equal(original, restored)

    def test_stores_canonical_architecture(self, params):
        data = encode_checkpoint(params)
        assert data.startswith(MAGIC)
        assert b"C3(S1P0)@4-MP2(S2)-FC10" in data
        assert decode_checkpoint(data).spec == params.spec

    def test_pooling_layers_have_no_tensors(self, params):
        loaded = decode_checkpoint(encode_checkpoint(params))
        assert loaded.weights[1] is None and loaded.biases[1] is None

    def test_bad_magic(self, params):
        with pytest.raises(FormatError):
            decode_checkpoint(b"XXXX" + encode_checkpoint(params)[4:])

    def test_unsupported_version(self, params):
        data = encode_checkpoint(params)
        with pytest.raises(FormatError):
            decode_checkpoint(data[:4] + struct.pack("<H", 9) + data[6:])

    @pytest.mark.parametrize("cut", [2, 8, 40, -1])
    def test_truncated(self, params, cut):
        data = encode_checkpoint(params)
        with pytest.raises(TruncationError):
            decode_checkpoint(data[:cut])

    def test_trailing_bytes(self, params):
        with pytest.raises(FormatError):
            decode_checkpoint(encode_checkpoint(params) + b"\x00")

    def test_tensor_shape_does_not_fit_arch(self, params):
        params.biases[2] = np.zeros(9)
        with pytest.raises(ShapeError):
            decode_checkpoint(encode_checkpoint(params))

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_checkpoint(tmp_path / "absent.ntck")
