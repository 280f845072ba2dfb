import numpy as np
import pytest

from ccmotion.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from ccmotion.network import CCNetConfig, init


@pytest.fixture()
def cfg():
    return CCNetConfig(d_motion=6, residual_channels=4, skip_channels=8,
                       n_blocks=2, dilations=(1, 2), skeleton_dim=5,
                       direction_dim=4, type_dim=3)


def test_round_trip_bit_identical(cfg, tmp_path):
    params = init(cfg, 7)
    path = str(tmp_path / "model.ccn")
    save_checkpoint(params, cfg, path)
    loaded, cfg2 = load_checkpoint(path)
    assert cfg2 == cfg
    assert loaded.keys() == params.keys()
    for k in params:
        assert np.array_equal(loaded[k], params[k])
        assert loaded[k].dtype == np.float64


def test_corrupted_byte_rejected(cfg, tmp_path):
    params = init(cfg, 7)
    path = str(tmp_path / "model.ccn")
    save_checkpoint(params, cfg, path)
    raw = bytearray(open(path, "rb").read())
    raw[len(raw) // 2] ^= 0xFF
    open(path, "wb").write(bytes(raw))
    with pytest.raises(CheckpointError, match="checksum"):
        load_checkpoint(path)


def test_truncated_file_rejected(cfg, tmp_path):
    params = init(cfg, 7)
    path = str(tmp_path / "model.ccn")
    save_checkpoint(params, cfg, path)
    raw = open(path, "rb").read()
    open(path, "wb").write(raw[: len(raw) // 3])
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def test_bad_magic_rejected(tmp_path):
    path = str(tmp_path / "junk.ccn")
    open(path, "wb").write(b"\x00" * 64)
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def test_trailing_garbage_rejected(cfg, tmp_path):
    import struct
    import zlib
    params = init(cfg, 7)
    path = str(tmp_path / "model.ccn")
    save_checkpoint(params, cfg, path)
    raw = open(path, "rb").read()
    body = raw[:-4] + b"EXTRA"
    open(path, "wb").write(body + struct.pack("<I", zlib.crc32(body)))
    with pytest.raises(CheckpointError, match="trailing|truncated"):
        load_checkpoint(path)
