import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sirup.tensorfile import TensorFile, TensorFileError, read_tensor, write_tensor


def test_f32_roundtrip_bit_exact(tmp_path, rng):
    x = rng.standard_normal((2, 257, 16)).astype(np.float32)
    write_tensor(TensorFile(x, {"kind": "svtensor"}), tmp_path / "t.svt")
    t = read_tensor(tmp_path / "t.svt")
    assert t.dims == [2, 257, 16]
    assert t.dtype == "f32"
    assert t.metadata == {"kind": "svtensor"}
    assert t.data.tobytes() == x.tobytes()


def test_c64_payload_size():
    t = TensorFile(np.ones((257, 4), dtype=np.complex64))
    assert t.payload_size() == 257 * 4 * 8
    assert len(t.to_bytes()) > t.payload_size()


def test_empty_dims_rejected():
    with pytest.raises(TensorFileError):
        TensorFile(np.float32(1.0))


def test_bad_magic_version_truncation():
    buf = TensorFile(np.arange(6, dtype=np.float32).reshape(2, 3)).to_bytes()
    with pytest.raises(TensorFileError, match="magic"):
        TensorFile.from_bytes(b"XXXX" + buf[4:])
    with pytest.raises(TensorFileError, match="version"):
        TensorFile.from_bytes(buf[:4] + (99).to_bytes(4, "little") + buf[8:])
    with pytest.raises(TensorFileError):
        TensorFile.from_bytes(buf[:-3])
    with pytest.raises(TensorFileError):
        TensorFile.from_bytes(buf[:10])


@settings(max_examples=40, deadline=None)
@given(dims=st.lists(st.integers(1, 6), min_size=1, max_size=4), complex_=st.booleans(),
       seed=st.integers(0, 2 ** 31))
def test_roundtrip_property(dims, complex_, seed):
    r = np.random.default_rng(seed)
    x = r.standard_normal(dims)
    if complex_:
        x = (x + 1j * r.standard_normal(dims)).astype(np.complex64)
    else:
        x = x.astype(np.float32)
    t = TensorFile.from_bytes(TensorFile(x, {"seed": seed}).to_bytes())
    assert t.data.dtype == x.dtype
    assert t.data.tobytes() == x.tobytes()
    assert t.metadata == {"seed": seed}
