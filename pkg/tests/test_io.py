import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lowrank_ci import io as lio
from lowrank_ci.errors import FormatError
from lowrank_ci.model import Dataset


def make_dataset(seed=0, total=6, m1=3, m2=2):
    g = np.random.default_rng(seed)
    return Dataset(g.standard_normal((total, m1, m2)), g.standard_normal(total))


def test_trds_roundtrip_bit_exact(tmp_path):
    d = make_dataset()
    p = tmp_path / "d.trds"
    lio.write_dataset(d, p)
    back = lio.read_dataset(p)
    assert back.x.tobytes() == d.x.tobytes() and back.y.tobytes() == d.y.tobytes()


def test_trds_layout():
    d = make_dataset(total=2, m1=1, m2=2)
    buf = lio.dataset_to_bytes(d)
    assert buf[:4] == b"TRDS" and buf[4] == 1
    assert struct.unpack_from("<III", buf, 5) == (1, 2, 2)
    first = struct.unpack_from("<3d", buf, 17)
    assert first == (d.y[0], d.x[0, 0, 0], d.x[0, 0, 1])
    assert len(buf) == 17 + 2 * 3 * 8


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 4), st.integers(1, 4), st.integers(1, 5), st.integers(0, 10**6))
def test_trds_roundtrip_property(m1, m2, half, seed):
    d = make_dataset(seed, 2 * half, m1, m2)
    back = lio.dataset_from_bytes(lio.dataset_to_bytes(d))
    assert back.x.tobytes() == d.x.tobytes() and back.y.tobytes() == d.y.tobytes()


def test_trds_errors():
    buf = lio.dataset_to_bytes(make_dataset())
    cases = [
        (buf[:10], 10),
        (b"XXXX" + buf[4:], 0),
        (buf[:4] + b"\x02" + buf[5:], 4),
        (buf[:-3], 17 + 5 * 7 * 8),
        (buf + b"\x00", len(buf)),
        (buf[:5] + struct.pack("<III", 0, 2, 6) + buf[17:], 5),
        (buf[:5] + struct.pack("<III", 3, 2, 0), 13),
        (buf[:5] + struct.pack("<III", 3, 2, 5) + buf[17:], 13),
    ]
    for bad, offset in cases:
        with pytest.raises(FormatError) as info:
            lio.dataset_from_bytes(bad)
        assert info.value.offset == offset
        assert f"offset {offset}" in str(info.value)


def test_trds_rejects_non_finite():
    d = make_dataset()
    buf = bytearray(lio.dataset_to_bytes(d))
    width = 8 * 7
    struct.pack_into("<d", buf, 17 + 2 * width + 8, float("nan"))
    with pytest.raises(FormatError) as info:
        lio.dataset_from_bytes(bytes(buf))
    assert info.value.offset == 17 + 2 * width


def test_csv_roundtrip(tmp_path):
    d = make_dataset(3)
    p = tmp_path / "d.csv"
    lio.write_dataset_csv(d, p)
    assert p.read_text().splitlines()[0] == "y,x_0_0,x_0_1,x_1_0,x_1_1,x_2_0,x_2_1"
    back = lio.read_dataset(p)
    assert back.x.tobytes() == d.x.tobytes() and back.y.tobytes() == d.y.tobytes()


def test_csv_errors(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("y,x_0_0\n1,2\n3\n")
    with pytest.raises(FormatError):
        lio.read_dataset_csv(p)
    p.write_text("z,x_0_0\n1,2\n3,4\n")
    with pytest.raises(FormatError):
        lio.read_dataset_csv(p)
    p.write_text("y,x_0_0\n1,2\n")
    with pytest.raises(FormatError):
        lio.read_dataset_csv(p)
    p.write_text("")
    with pytest.raises(FormatError):
        lio.read_dataset_csv(p)


def test_trmx_roundtrip_and_errors(tmp_path):
    a = np.random.default_rng(1).standard_normal((4, 3))
    p = tmp_path / "a.trmx"
    lio.write_matrix(a, p)
    assert lio.read_matrix(p).tobytes() == a.tobytes()
    buf = lio.matrix_to_bytes(a)
    assert buf[:4] == b"TRMX" and buf[4] == 1
    with pytest.raises(FormatError):
        lio.matrix_from_bytes(buf[:-1])
    with pytest.raises(FormatError):
        lio.matrix_from_bytes(b"TRDS" + buf[4:])
    with pytest.raises(ValueError):
        lio.matrix_to_bytes(np.zeros(3))


def test_json_handles_numpy(tmp_path):
    p = tmp_path / "s.json"
    lio.write_json({"a": np.float64(1.5), "b": np.arange(3), "c": np.bool_(True), "d": float("nan")}, p)
    assert lio.read_json(p) == {"a": 1.5, "b": [0, 1, 2], "c": True, "d": None}
