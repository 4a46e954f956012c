import gzip
import os
import struct

import numpy as np
import pytest

from defreg import io
from defreg.errors import BadMagic, IoFailure, NonPositivePixdim, ParseError, Truncated, UnsupportedDatatype
from defreg.grid import VectorField, Volume

DATA = os.path.join(os.path.dirname(__file__), "data")


def test_reference_int16_scaled():
    vol = io.read_volume(os.path.join(DATA, "ref_int16_scaled.nii"))
    expected = 2.0 * np.arange(24).reshape((4, 3, 2), order="F") + 1.0
    assert vol.dims == (4, 3, 2)
    assert vol.spacing == (1.5, 2.0, 2.5)
    np.testing.assert_array_equal(vol.data, expected)
    assert vol.data[3, 2, 1] == 47.0 and vol.data[1, 0, 0] == 3.0


def test_reference_float32_gzip():
    vol = io.read_volume(os.path.join(DATA, "ref_float32.nii.gz"))
    expected = (np.arange(60).reshape((5, 4, 3), order="F") - 30.0) / 8.0
    assert vol.spacing == (0.5, 0.5, 1.0)
    np.testing.assert_array_equal(vol.data, expected)
    assert vol.data[0, 0, 0] == -3.75 and vol.data[1, 0, 0] == -3.625


def test_reference_uint8_4d():
    vol = io.read_volume(os.path.join(DATA, "ref_uint8_4d.nii"))
    assert vol.dims == (3, 3, 3)
    assert vol.data.sum() == 2.0 and vol.data[1, 1, 1] == 1.0 and vol.data[0, 2, 1] == 1.0


@pytest.mark.parametrize("suffix", [".nii", ".nii.gz"])
def test_volume_round_trip_byte_identical(tmp_path, rng, suffix):
    vol = Volume(rng.standard_normal((5, 6, 7)).astype(np.float32), (0.8, 1.0, 2.5))
    first = tmp_path / f"a{suffix}"
    second = tmp_path / f"b{suffix}"
    io.write_volume(vol, first)
    back = io.read_volume(first)
    assert back.spacing == pytest.approx(vol.spacing) and back.dims == vol.dims
    np.testing.assert_array_equal(back.data, vol.data)
    io.write_volume(back, second)
    assert first.read_bytes() == second.read_bytes()


def test_field_round_trip_5d(tmp_path, rng):
    u = VectorField(rng.standard_normal((4, 5, 6, 3)).astype(np.float32))
    path = tmp_path / "u.nii.gz"
    io.write_field(u, path)
    raw = gzip.decompress(path.read_bytes())
    assert struct.unpack_from("<8h", raw, 40)[:6] == (5, 4, 5, 6, 1, 3)
    assert struct.unpack_from("<h", raw, 68)[0] == 1007
    back = io.read_field(path)
    np.testing.assert_array_equal(back.data, u.data)
    io.write_field(back, tmp_path / "v.nii.gz")
    assert (tmp_path / "v.nii.gz").read_bytes() == path.read_bytes()


def test_gzip_plain_parity(tmp_path, rng):
    vol = Volume(rng.uniform(size=(3, 4, 5)))
    io.write_volume(vol, tmp_path / "p.nii")
    io.write_volume(vol, tmp_path / "z.nii.gz")
    assert gzip.decompress((tmp_path / "z.nii.gz").read_bytes()) == (tmp_path / "p.nii").read_bytes()
    np.testing.assert_array_equal(io.read_volume(tmp_path / "p.nii").data,
                                  io.read_volume(tmp_path / "z.nii.gz").data)


def test_values_stored_as_float32(tmp_path):
    vol = Volume(np.full((2, 2, 2), 0.1))
    io.write_volume(vol, tmp_path / "a.nii")
    assert io.read_volume(tmp_path / "a.nii").data[0, 0, 0] == np.float32(0.1)


def _header_bytes(tmp_path):
    io.write_volume(Volume(np.zeros((2, 2, 2))), tmp_path / "a.nii")
    return bytearray((tmp_path / "a.nii").read_bytes())


def test_bad_magic(tmp_path):
    raw = _header_bytes(tmp_path)
    raw[344:348] = b"ni1\x00"
    (tmp_path / "bad.nii").write_bytes(bytes(raw))
    with pytest.raises(BadMagic):
        io.read_volume(tmp_path / "bad.nii")


def test_big_endian_rejected(tmp_path):
    raw = _header_bytes(tmp_path)
    raw[0:4] = struct.pack(">i", 348)
    (tmp_path / "be.nii").write_bytes(bytes(raw))
    with pytest.raises(UnsupportedDatatype, match="big-endian"):
        io.read_volume(tmp_path / "be.nii")


def test_unsupported_datatype(tmp_path):
    raw = _header_bytes(tmp_path)
    struct.pack_into("<h", raw, 70, 32)
    (tmp_path / "c.nii").write_bytes(bytes(raw))
    with pytest.raises(UnsupportedDatatype):
        io.read_volume(tmp_path / "c.nii")


def test_truncated(tmp_path):
    raw = _header_bytes(tmp_path)
    (tmp_path / "t.nii").write_bytes(bytes(raw[:-4]))
    with pytest.raises(Truncated):
        io.read_volume(tmp_path / "t.nii")
    (tmp_path / "short.nii").write_bytes(b"\x00" * 100)
    with pytest.raises(Truncated):
        io.read_volume(tmp_path / "short.nii")


def test_nonpositive_pixdim(tmp_path):
    raw = _header_bytes(tmp_path)
    struct.pack_into("<f", raw, 80, 0.0)
    (tmp_path / "p.nii").write_bytes(bytes(raw))
    with pytest.raises(NonPositivePixdim):
        io.read_volume(tmp_path / "p.nii")


def test_missing_file():
    with pytest.raises(IoFailure):
        io.read_volume("/nonexistent/x.nii")


def test_atomic_write_leaves_no_temp(tmp_path):
    io.atomic_write(tmp_path / "x.bin", b"abc")
    assert os.listdir(tmp_path) == ["x.bin"]


def test_landmarks_round_trip(tmp_path):
    pts = np.array([[1.0, 2.5, 3.0], [0.0, -1.25, 7.0]])
    io.write_landmarks(pts, tmp_path / "l.csv")
    np.testing.assert_array_equal(io.read_landmarks(tmp_path / "l.csv"), pts)
    (tmp_path / "n.csv").write_text("1,2,3\n4,5,6\n")
    assert io.read_landmarks(tmp_path / "n.csv").shape == (2, 3)


@pytest.mark.parametrize("text,line", [("x,y,z\n1,2\n", 2), ("1,2,3\n1,b,3\n", 2)])
def test_landmark_parse_errors(tmp_path, text, line):
    (tmp_path / "l.csv").write_text(text)
    with pytest.raises(ParseError, match=f"line {line}"):
        io.read_landmarks(tmp_path / "l.csv")


def test_json_sorted(tmp_path):
    io.write_json({"b": 1, "a": {"d": 2, "c": 3}}, tmp_path / "m.json")
    text = (tmp_path / "m.json").read_text()
    assert text.index('"a"') < text.index('"b"') and text.index('"c"') < text.index('"d"')
