import struct

import numpy as np
import pytest

from mrxi.fileio import (
    ContainerError,
    decode_container,
    encode_container,
    encode_pgm,
    read_grid_csv,
    read_vector_csv,
    write_grid_csv,
    write_json,
    write_vector_csv,
)


def test_container_layout():
    m = np.arange(6, dtype=float).reshape(2, 3)
    buf = encode_container(m, [{"a": 1}])
    assert buf[:4] == b"MRXK"
    version, rows, cols, nrec = struct.unpack_from("<IQQI", buf, 4)
    assert (version, rows, cols, nrec) == (1, 2, 3, 1)
    assert buf[-48:] == m.astype("<f8").tobytes()
    back, recs = decode_container(buf)
    np.testing.assert_array_equal(back, m)
    assert recs == [{"a": 1}]


def test_container_rejects_corruption():
    buf = encode_container(np.ones((2, 2)))
    with pytest.raises(ContainerError):
        decode_container(b"XXXX" + buf[4:])
    with pytest.raises(ContainerError):
        decode_container(buf[:-8])


def test_vector_csv_is_lossless(tmp_path):
    v = np.random.default_rng(0).normal(size=50) * 1e-7
    write_vector_csv(tmp_path / "v.csv", v)
    assert read_vector_csv(tmp_path / "v.csv").tobytes() == v.tobytes()
    img = v[:48].reshape(6, 8)
    write_grid_csv(tmp_path / "g.csv", img)
    assert read_grid_csv(tmp_path / "g.csv").tobytes() == img.tobytes()


def test_pgm_header_and_depth():
    data, scaling = encode_pgm(np.array([[0.0, 1.0], [0.5, 2.0]]), bits=16)
    assert data.startswith(b"P5\n2 2\n65535\n")
    assert scaling["vmax"] == 2.0 and scaling["vmin"] == 0.0
    data8, _ = encode_pgm(np.ones((3, 3)), bits=8)
    assert data8.endswith(b"\x00" * 9)
    with pytest.raises(ValueError):
        encode_pgm(np.ones((2, 2)), bits=12)


def test_json_is_sorted_and_strict(tmp_path):
    write_json(tmp_path / "a.json", {"b": 1, "a": 2})
    assert (tmp_path / "a.json").read_text().index('"a"') < (tmp_path / "a.json").read_text().index('"b"')
    with pytest.raises(ValueError):
        write_json(tmp_path / "n.json", {"x": float("nan")})
    assert not (tmp_path / "n.json").exists()
