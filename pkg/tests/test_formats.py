"""Binary containers: volumes and weight stores."""

import struct

import numpy as np
import pytest

from voxplan.errors import FormatError
from voxplan.formats import (
    WeightStore,
    dump_weights,
    parse_weights,
    read_volume,
    read_weights,
    write_volume,
    write_weights,
)


def test_volume_roundtrip(tmp_path, rng):
    vol = rng.standard_normal((2, 3, 4, 5, 6)).astype(np.float32)
    path = tmp_path / "vol.pznv"
    write_volume(path, vol)
    back = read_volume(path)
    assert back.dtype == np.float32
    assert np.array_equal(back, vol)


def test_volume_header_layout(tmp_path):
    vol = np.zeros((1, 1, 2, 2, 2), dtype=np.float32)
    path = tmp_path / "vol.pznv"
    write_volume(path, vol)
    raw = path.read_bytes()
    assert raw[:4] == b"PZNV"
    version, rank = struct.unpack_from("<IB", raw, 4)
    assert (version, rank) == (1, 5)
    assert struct.unpack_from("<5I", raw, 9) == (1, 1, 2, 2, 2)
    assert len(raw) == 4 + 5 + 20 + 8 * 4


def test_volume_bad_magic(tmp_path):
    path = tmp_path / "bad.pznv"
    path.write_bytes(b"NOPE" + b"\0" * 40)
    with pytest.raises(FormatError, match="magic"):
        read_volume(path)


def test_volume_truncation(tmp_path):
    vol = np.zeros((1, 1, 2, 2, 2), dtype=np.float32)
    path = tmp_path / "vol.pznv"
    write_volume(path, vol)
    raw = path.read_bytes()
    path.write_bytes(raw[:-5])
    with pytest.raises(FormatError, match="truncated"):
        read_volume(path)


def test_volume_wrong_rank():
    with pytest.raises(FormatError, match="rank"):
        write_volume("/dev/null", np.zeros((2, 2, 2), dtype=np.float32))


def test_empty_store_is_twelve_bytes():
    # magic + version + count and nothing else
    blob = dump_weights(WeightStore())
    assert len(blob) == 12
    assert blob[:4] == b"PZNW"
    assert struct.unpack("<II", blob[4:]) == (1, 0)


def test_store_roundtrip(tmp_path, rng):
    store = WeightStore()
    store.put("conv1.kernel", rng.standard_normal((4, 2, 3, 3, 3)).astype(np.float32))
    store.put("conv1.bias", np.zeros(4, dtype=np.float32))
    store.put("bn1.bn_eps", np.float32(1e-4))
    path = tmp_path / "w.pznw"
    write_weights(path, store)
    back = read_weights(path)
    assert back.names() == ["conv1.kernel", "conv1.bias", "bn1.bn_eps"]
    for name in back.names():
        assert np.array_equal(back.get(name), store.get(name))
    assert back.get("bn1.bn_eps").shape == ()


def test_store_preserves_order(rng):
    store = WeightStore()
    names = ["z.kernel", "a.bias", "m.bn_mean"]
    for n in names:
        store.put(n, np.zeros(2, dtype=np.float32))
    assert parse_weights(dump_weights(store)).names() == names


def test_store_truncation_names_entry(rng):
    store = WeightStore()
    store.put("conv1.kernel", rng.standard_normal((2, 2, 1, 1, 1)).astype(np.float32))
    blob = dump_weights(store)
    with pytest.raises(FormatError, match="conv1.kernel"):
        parse_weights(blob[:-3])


def test_store_bad_magic():
    with pytest.raises(FormatError, match="magic"):
        parse_weights(b"WXYZ" + b"\0" * 8)


def test_store_duplicate_name():
    store = WeightStore()
    store.put("a.bias", np.zeros(2, dtype=np.float32))
    blob = bytearray(dump_weights(store))
    # double the single entry and patch the count
    entry = blob[12:]
    blob += entry
    struct.pack_into("<I", blob, 8, 2)
    with pytest.raises(FormatError, match="duplicate"):
        parse_weights(bytes(blob))


def test_store_trailing_bytes():
    blob = dump_weights(WeightStore()) + b"\0"
    with pytest.raises(FormatError, match="trailing"):
        parse_weights(blob)


def test_store_helpers():
    store = WeightStore()
    store.set_tensor("bn1", "bn_mean", np.zeros(3, dtype=np.float32))
    assert store.has("bn1", "bn_mean")
    assert not store.has("bn1", "bn_var")
    assert store.bn_eps("bn1") == pytest.approx(1e-5)
    store.set_tensor("bn1", "bn_eps", np.float32(1e-3))
    assert store.bn_eps("bn1") == pytest.approx(1e-3)
    with pytest.raises(FormatError, match="no entry"):
        store.tensor("bn1", "bn_var")


def test_store_copy_is_deep(rng):
    store = WeightStore()
    store.put("c.kernel", np.ones((1, 1, 1, 1, 1), dtype=np.float32))
    dup = store.copy()
    dup.get("c.kernel")[...] = 5
    assert store.get("c.kernel")[0, 0, 0, 0, 0] == 1
