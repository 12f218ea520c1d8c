"""Self-describing little-endian tensor container.

Layout::

    b"SVT1"            magic
    u32                version (1)
    u32                ndims
    u64 * ndims        dims
    u8                 dtype code (0 = f32, 1 = c64 as interleaved f32 pairs)
    u64                metadata byte length
    bytes              UTF-8 JSON metadata
    bytes              payload
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"SVT1"
VERSION = 1
DTYPES = {"f32": (0, np.dtype("<f4"), 4), "c64": (1, np.dtype("<c8"), 8)}
_CODES = {code: name for name, (code, _, _) in DTYPES.items()}


class TensorFileError(ValueError):
    pass


@dataclass
class TensorFile:
    data: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim == 0:
            raise TensorFileError("TensorFile needs at least one dimension")
        if any(d <= 0 for d in arr.shape):
            raise TensorFileError(f"all dims must be positive, got {arr.shape}")
        if np.iscomplexobj(arr):
            arr = arr.astype("<c8", copy=False)
        else:
            arr = arr.astype("<f4", copy=False)
        self.data = arr

    @property
    def dims(self) -> list[int]:
        return list(self.data.shape)

    @property
    def dtype(self) -> str:
        return "c64" if np.iscomplexobj(self.data) else "f32"

    def payload_size(self) -> int:
        return int(np.prod(self.dims)) * DTYPES[self.dtype][2]

    def to_bytes(self) -> bytes:
        meta = json.dumps(self.metadata, sort_keys=True).encode("utf-8")
        code = DTYPES[self.dtype][0]
        head = MAGIC + struct.pack("<II", VERSION, self.data.ndim)
        head += struct.pack(f"<{self.data.ndim}Q", *self.dims)
        head += struct.pack("<BQ", code, len(meta))
        return head + meta + np.ascontiguousarray(self.data).tobytes()

    @classmethod
    def from_bytes(cls, buf: bytes) -> "TensorFile":
        if len(buf) < 12 or buf[:4] != MAGIC:
            raise TensorFileError("bad magic: not a TensorFile")
        version, ndims = struct.unpack_from("<II", buf, 4)
        if version != VERSION:
            raise TensorFileError(f"unsupported TensorFile version {version}")
        if ndims == 0:
            raise TensorFileError("TensorFile with empty dims")
        off = 12
        need = off + 8 * ndims + 9
        if len(buf) < need:
            raise TensorFileError("truncated header")
        dims = struct.unpack_from(f"<{ndims}Q", buf, off)
        off += 8 * ndims
        code, meta_len = struct.unpack_from("<BQ", buf, off)
        off += 9
        if code not in _CODES:
            raise TensorFileError(f"unknown dtype code {code}")
        _, np_dtype, size = DTYPES[_CODES[code]]
        n_payload = int(np.prod(dims)) * size
        if len(buf) != off + meta_len + n_payload:
            raise TensorFileError(
                f"truncated or oversized file: expected {off + meta_len + n_payload} bytes, got {len(buf)}")
        meta = json.loads(buf[off:off + meta_len].decode("utf-8")) if meta_len else {}
        off += meta_len
        data = np.frombuffer(buf, dtype=np_dtype, count=int(np.prod(dims)), offset=off)
        return cls(data.reshape(dims).copy(), meta)


def write_tensor(t: TensorFile, path) -> None:
    Path(path).write_bytes(t.to_bytes())


def read_tensor(path) -> TensorFile:
    path = Path(path)
    try:
        return TensorFile.from_bytes(path.read_bytes())
    except TensorFileError as exc:
        raise TensorFileError(f"{path}: {exc}") from exc
