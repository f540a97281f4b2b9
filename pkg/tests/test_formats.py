import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from splatstereo.errors import MalformedHeader, TruncatedBody
from splatstereo.formats import (
    decode_disparity_png16,
    decode_pfm,
    encode_disparity_png16,
    encode_pfm,
    read_color_png,
    read_mask_png,
    read_pfm,
    write_color_png,
    write_mask_png,
    write_pfm,
)


def test_pfm_layout_by_hand():
    a = np.array([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]], dtype=np.float32)
    data = encode_pfm(a)
    header = b"Pf\n2 3\n-1.0\n"
    assert data.startswith(header)
    body = struct.unpack("<6f", data[len(header):])
    # bottom row first
    assert body == (5.0, 6.0, 3.0, 4.0, 1.0, 2.0)


def test_pfm_reads_big_endian_and_color():
    body = struct.pack(">4f", 1, 2, 3, 4)
    arr, scale = decode_pfm(b"Pf\n2 2\n1.0\n" + body)
    assert scale == 1.0
    np.testing.assert_array_equal(arr, [[3, 4], [1, 2]])
    rgb = np.arange(12, dtype=np.float32).reshape(2, 2, 3)
    back, _ = decode_pfm(encode_pfm(rgb))
    np.testing.assert_array_equal(back, rgb)


finite32 = st.floats(width=32, allow_nan=False)


@given(hnp.arrays(np.float32, hnp.array_shapes(min_dims=2, max_dims=2, min_side=1, max_side=12), elements=finite32))
def test_pfm_round_trip_is_byte_identical(a):
    data = encode_pfm(a)
    back, _ = decode_pfm(data)
    np.testing.assert_array_equal(back, a)
    assert encode_pfm(back) == data


def test_pfm_file_round_trip(tmp_path, rng):
    a = rng.normal(size=(17, 23)).astype(np.float32)
    write_pfm(tmp_path / "x.pfm", a)
    data = (tmp_path / "x.pfm").read_bytes()
    back = read_pfm(tmp_path / "x.pfm")
    np.testing.assert_array_equal(back, a)
    write_pfm(tmp_path / "y.pfm", back)
    assert (tmp_path / "y.pfm").read_bytes() == data


def test_pfm_errors():
    with pytest.raises(MalformedHeader):
        decode_pfm(b"P6\n2 2\n-1.0\n")
    with pytest.raises(MalformedHeader):
        decode_pfm(b"Pf\n2 x\n-1.0\n")
    with pytest.raises(TruncatedBody):
        decode_pfm(b"Pf\n2 2\n-1.0\n" + b"\0" * 12)


def test_png16_within_one_256th(rng):
    d = rng.uniform(0.01, 250, (30, 40))
    valid = rng.random(d.shape) > 0.2
    back, bvalid = decode_disparity_png16(encode_disparity_png16(d, valid))
    np.testing.assert_array_equal(bvalid, valid)
    assert np.max(np.abs(back[valid] - d[valid])) <= 0.5 / 256 + 1e-12
    assert np.all(back[~valid] == 0)


def test_png16_raw_values():
    d = np.array([[1.0, 0.0, 2.5]])
    back, valid = decode_disparity_png16(encode_disparity_png16(d))
    np.testing.assert_array_equal(valid, [[True, False, True]])
    np.testing.assert_array_equal(back, [[1.0, 0.0, 2.5]])


def test_masks_and_colors(tmp_path, rng):
    m = rng.random((9, 7)) > 0.5
    write_mask_png(tmp_path / "m.png", m)
    np.testing.assert_array_equal(read_mask_png(tmp_path / "m.png"), m)
    from PIL import Image

    raw = np.array(Image.open(tmp_path / "m.png"))
    assert set(np.unique(raw)) <= {0, 255}
    img = rng.random((5, 6, 3))
    write_color_png(tmp_path / "c.png", img)
    back = read_color_png(tmp_path / "c.png")
    assert np.max(np.abs(back - img)) <= 0.5 / 255 + 1e-12
