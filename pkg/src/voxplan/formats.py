"""Binary containers: PZNV volumes and PZNW weight stores.

Both formats are little-endian throughout.  A volume file is a single
rank-5 float32 image; a weight store maps ``layer.role`` names to float32
tensors of rank 0 to 5.
"""

from __future__ import annotations

import io
import struct
from typing import Iterator

import numpy as np

from .errors import FormatError

VOLUME_MAGIC = b"PZNV"
WEIGHTS_MAGIC = b"PZNW"
FORMAT_VERSION = 1

DTYPE_F32 = 0

ROLE_KERNEL = "kernel"
ROLE_BIAS = "bias"
ROLE_BN_MEAN = "bn_mean"
ROLE_BN_VAR = "bn_var"
ROLE_BN_EPS = "bn_eps"
ROLE_SCALE_GAMMA = "scale_gamma"
ROLE_SCALE_BETA = "scale_beta"

DEFAULT_BN_EPS = 1e-5

_MAX_NAME = 4096
_MAX_RANK = 5


def _read_exact(fh, n: int, what: str) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise FormatError("truncated while reading %s" % what)
    return buf


def write_volume(path, image: np.ndarray) -> None:
    """Write a rank-5 (batch, fmap, x, y, z) float32 image."""
    image = np.asarray(image)
    if image.ndim != 5:
        raise FormatError("volumes are rank 5, got rank %d" % image.ndim)
    image = np.ascontiguousarray(image, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(VOLUME_MAGIC)
        fh.write(struct.pack("<IB", FORMAT_VERSION, 5))
        fh.write(struct.pack("<5I", *image.shape))
        fh.write(image.tobytes())


def read_volume(path) -> np.ndarray:
    with open(path, "rb") as fh:
        magic = _read_exact(fh, 4, "volume magic")
        if magic != VOLUME_MAGIC:
            raise FormatError("bad volume magic %r" % magic)
        version, rank = struct.unpack("<IB", _read_exact(fh, 5, "volume header"))
        if version != FORMAT_VERSION:
            raise FormatError("unsupported volume version %d" % version)
        if rank != 5:
            raise FormatError("volumes are rank 5, file declares %d" % rank)
        dims = struct.unpack("<5I", _read_exact(fh, 20, "volume dims"))
        count = int(np.prod(dims))
        payload = _read_exact(fh, count * 4, "volume payload")
        extra = fh.read(1)
    if extra:
        raise FormatError("trailing bytes after volume payload")
    return np.frombuffer(payload, dtype="<f4").reshape(dims).copy()


class WeightStore:
    """Named float32 tensors, ordered, addressed as ``layer.role``."""

    def __init__(self):
        self._entries: dict[str, np.ndarray] = {}

    def __contains__(self, name: str) -> bool:
        return name in self._entries

    def __len__(self) -> int:
        return len(self._entries)

    def __iter__(self) -> Iterator[str]:
        return iter(self._entries)

    def names(self) -> list[str]:
        return list(self._entries)

    def put(self, name: str, tensor: np.ndarray) -> None:
        tensor = np.asarray(tensor, dtype=np.float32)
        if tensor.ndim > _MAX_RANK:
            raise FormatError("entry %r has rank %d, limit is %d" % (name, tensor.ndim, _MAX_RANK))
        if not name or len(name.encode()) > _MAX_NAME:
            raise FormatError("bad entry name %r" % name)
        self._entries[name] = tensor

    def get(self, name: str) -> np.ndarray:
        try:
            return self._entries[name]
        except KeyError:
            raise FormatError("weight store has no entry %r" % name) from None

    def remove(self, name: str) -> None:
        self._entries.pop(name, None)

    def tensor(self, layer: str, role: str) -> np.ndarray:
        return self.get("%s.%s" % (layer, role))

    def has(self, layer: str, role: str) -> bool:
        return "%s.%s" % (layer, role) in self._entries

    def set_tensor(self, layer: str, role: str, tensor: np.ndarray) -> None:
        self.put("%s.%s" % (layer, role), tensor)

    def bn_eps(self, layer: str) -> float:
        """Stored epsilon for a batch norm layer, or the default when absent."""
        name = "%s.%s" % (layer, ROLE_BN_EPS)
        if name in self._entries:
            return float(self._entries[name])
        return DEFAULT_BN_EPS

    def copy(self) -> "WeightStore":
        out = WeightStore()
        for name, tensor in self._entries.items():
            out._entries[name] = tensor.copy()
        return out


def dump_weights(store: WeightStore) -> bytes:
    out = io.BytesIO()
    out.write(WEIGHTS_MAGIC)
    out.write(struct.pack("<II", FORMAT_VERSION, len(store)))
    for name in store:
        tensor = store.get(name)
        encoded = name.encode()
        out.write(struct.pack("<I", len(encoded)))
        out.write(encoded)
        out.write(struct.pack("<BB", DTYPE_F32, tensor.ndim))
        out.write(struct.pack("<%dI" % tensor.ndim, *tensor.shape))
        out.write(np.ascontiguousarray(tensor, dtype="<f4").tobytes())
    return out.getvalue()


def parse_weights(blob: bytes) -> WeightStore:
    fh = io.BytesIO(blob)
    magic = _read_exact(fh, 4, "weight store magic")
    if magic != WEIGHTS_MAGIC:
        raise FormatError("bad weight store magic %r" % magic)
    version, count = struct.unpack("<II", _read_exact(fh, 8, "weight store header"))
    if version != FORMAT_VERSION:
        raise FormatError("unsupported weight store version %d" % version)
    store = WeightStore()
    for i in range(count):
        label = "entry %d" % i
        (name_len,) = struct.unpack("<I", _read_exact(fh, 4, "%s name length" % label))
        if name_len == 0 or name_len > _MAX_NAME:
            raise FormatError("%s has invalid name length %d" % (label, name_len))
        name = _read_exact(fh, name_len, "%s name" % label).decode()
        label = "entry %r" % name
        dtype, rank = struct.unpack("<BB", _read_exact(fh, 2, "%s header" % label))
        if dtype != DTYPE_F32:
            raise FormatError("%s has unsupported dtype code %d" % (label, dtype))
        if rank > _MAX_RANK:
            raise FormatError("%s has rank %d, limit is %d" % (label, rank, _MAX_RANK))
        dims = struct.unpack("<%dI" % rank, _read_exact(fh, 4 * rank, "%s dims" % label))
        n = int(np.prod(dims)) if rank else 1
        payload = _read_exact(fh, n * 4, "%s payload" % label)
        if name in store:
            raise FormatError("duplicate entry name %r" % name)
        store.put(name, np.frombuffer(payload, dtype="<f4").reshape(dims).copy())
    if fh.read(1):
        raise FormatError("trailing bytes after weight store payload")
    return store


def write_weights(path, store: WeightStore) -> None:
    with open(path, "wb") as fh:
        fh.write(dump_weights(store))


def read_weights(path) -> WeightStore:
    with open(path, "rb") as fh:
        return parse_weights(fh.read())
