import json
import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp

from mrfdiff.tensorio import (BadMagicError, TensorFormatError, TruncatedPayloadError, VersionMismatchError,
                              expected_file_size, read_meta, read_tensor, write_tensor)


def test_roundtrip_real64(tmp_path):
    a = np.arange(1, 7, dtype=np.float64).reshape(2, 3)
    p = tmp_path / "a.qmrf"
    write_tensor(p, a, kind="test")
    b = read_tensor(p)
    assert b.dtype == np.float64 and b.shape == (2, 3)
    np.testing.assert_array_equal(a, b)
    meta = read_meta(p)
    assert meta["kind"] == "test" and meta["dims"] == [2, 3] and meta["dtype"] == "real64"


def test_complex_payload_is_le_f32_pair(tmp_path):
    p = tmp_path / "c.qmrf"
    write_tensor(p, np.array([1 + 2j], dtype=np.complex64))
    raw = p.read_bytes()
    assert raw[:4] == b"QMRF"
    assert struct.unpack("<ff", raw[-8:]) == (1.0, 2.0)


def test_zero_dim_rejected(tmp_path):
    with pytest.raises(TensorFormatError):
        write_tensor(tmp_path / "z.qmrf", np.zeros((0,)))


def test_bad_magic(tmp_path):
    p = tmp_path / "a.qmrf"
    write_tensor(p, np.ones(3))
    p.write_bytes(b"XXXX" + p.read_bytes()[4:])
    with pytest.raises(BadMagicError):
        read_tensor(p)


def test_version_mismatch(tmp_path):
    p = tmp_path / "a.qmrf"
    write_tensor(p, np.ones(3))
    raw = bytearray(p.read_bytes())
    raw[4:8] = struct.pack("<I", 99)
    p.write_bytes(bytes(raw))
    with pytest.raises(VersionMismatchError):
        read_tensor(p)


def test_truncated_payload(tmp_path):
    p = tmp_path / "a.qmrf"
    write_tensor(p, np.ones((4, 4)))
    p.write_bytes(p.read_bytes()[:-8])
    with pytest.raises(TruncatedPayloadError):
        read_tensor(p)


def test_errors_are_distinct():
    assert len({BadMagicError, VersionMismatchError, TruncatedPayloadError}) == 3
    assert not issubclass(BadMagicError, TruncatedPayloadError)


def test_bool_and_int_restored(tmp_path):
    m = np.array([[True, False], [False, True]])
    write_tensor(tmp_path / "m.qmrf", m)
    out = read_tensor(tmp_path / "m.qmrf")
    assert out.dtype == bool
    np.testing.assert_array_equal(out, m)


def test_extra_meta_roundtrip(tmp_path):
    write_tensor(tmp_path / "a.qmrf", np.ones(2), kind="k", source_l=200, tags=["x", 1.5])
    meta = read_meta(tmp_path / "a.qmrf")
    assert meta["source_l"] == 200 and meta["tags"] == ["x", 1.5]
    json.dumps(meta)


dims = st.lists(st.integers(1, 5), min_size=1, max_size=4)


@settings(max_examples=40, deadline=None)
@given(data=st.data(), shape=dims, dt=st.sampled_from([np.float64, np.float32, np.complex64]))
def test_roundtrip_bit_exact_and_size(tmp_path_factory, data, shape, dt):
    arr = data.draw(hnp.arrays(dt, shape, elements=st.floats(-1e6, 1e6, width=32)))
    p = tmp_path_factory.mktemp("h") / "t.qmrf"
    write_tensor(p, arr)
    back = read_tensor(p)
    assert back.dtype == arr.dtype
    assert back.tobytes() == arr.tobytes()
    name = {np.float64: "real64", np.float32: "real32", np.complex64: "complex64"}[dt]
    assert p.stat().st_size == expected_file_size(shape, name)
