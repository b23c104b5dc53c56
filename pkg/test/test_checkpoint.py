import struct

import numpy as np
import pytest

from mixflow.checkpoint import MAGIC, decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint
from mixflow.errors import CheckpointFormatError, UnsupportedVersionError
from mixflow.sac import SacParams
from mixflow.utils import rng_stream


@pytest.fixture
def params():
    p = SacParams.init(10, [6, 4], rng_stream(5, "init"))
    p.log_alpha = -1.25
    return p


def test_round_trip_within_float32(params):
    back = decode_checkpoint(encode_checkpoint(params))
    for a, b in zip(params.networks(), back.networks()):
        assert a.sizes == b.sizes
        for pa, pb in zip(a.params(), b.params()):
            np.testing.assert_allclose(pa, pb, rtol=1e-6, atol=1e-7)
    assert back.log_alpha == -1.25
    print("[SUCCESS] checkpoint round trip")


def test_save_and_load(tmp_path, params):
    path = tmp_path / "ckpt" / "update_000010.mxfw"
    save_checkpoint(str(path), params)
    assert path.read_bytes()[:4] == MAGIC
    back = load_checkpoint(str(path))
    assert back.actor.sizes == [10, 6, 4, 2]


def test_bad_magic(params):
    data = b"NOPE" + encode_checkpoint(params)[4:]
    with pytest.raises(CheckpointFormatError):
        decode_checkpoint(data)


def test_unsupported_version(params):
    data = bytearray(encode_checkpoint(params))
    struct.pack_into("<H", data, 4, 9)
    with pytest.raises(UnsupportedVersionError):
        decode_checkpoint(bytes(data))


@pytest.mark.parametrize("cut", [2, 10, 40, 1])
def test_truncated(params, cut):
    data = encode_checkpoint(params)
    with pytest.raises(CheckpointFormatError):
        decode_checkpoint(data[: len(data) - cut] if cut != 1 else data[:6])


def test_trailing_bytes(params):
    with pytest.raises(CheckpointFormatError) as info:
        decode_checkpoint(encode_checkpoint(params) + b"\x00\x00\x00\x00")
    assert "trailing" in str(info.value)


def test_layer_count_must_split_into_networks(params):
    data = bytearray(encode_checkpoint(params))
    struct.pack_into("<H", data, 6, 7)
    with pytest.raises(CheckpointFormatError):
        decode_checkpoint(bytes(data))
