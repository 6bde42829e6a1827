import math
import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp
from scipy.integrate import quad

from sarflood.raster import (
    CRSMismatchError,
    GeoTransform,
    GridMismatchError,
    Raster,
    RasterFormatError,
    RasterTruncatedError,
    TileWindow,
    decode_raster,
    encode_raster,
    from_lonlat,
    pixel_area_hectares,
    points_in_polygon,
    read_raster,
    require_same_grid,
    resample_nearest,
    tile,
    to_lonlat,
    write_raster,
)

from conftest import UTM, grid


def read_flr1_by_hand(data: bytes):
    """Field-by-field reader written against the documented byte offsets."""
    def u32(off):
        return int.from_bytes(data[off:off + 4], "little")

    def f64(off):
        return struct.unpack("<d", data[off:off + 8])[0]

    assert data[0:4] == b"FLR1"
    w, h = u32(4), u32(8)
    hdr = dict(width=w, height=h, x0=f64(12), y0=f64(20), pw=f64(28), ph=f64(36),
               crs=u32(44), dtype=data[48], flag=data[49], nodata=f64(50))
    fmt = {0: "<u1", 1: "<i2", 2: "<f4"}[hdr["dtype"]]
    pixels = np.frombuffer(data[58:], dtype=fmt).reshape(h, w)
    return hdr, pixels


def test_one_by_one_byte_raster_is_59_bytes():
    data = encode_raster(grid(np.array([[7]], np.uint8)))
    assert len(data) == 59
    hdr, px = read_flr1_by_hand(data)
    assert (hdr["width"], hdr["height"], hdr["dtype"], hdr["flag"], hdr["nodata"]) == (1, 1, 0, 0, 0.0)
    assert px[0, 0] == 7


def test_header_fields_match_hand_reader():
    t = GeoTransform(-12.5, 44.25, 0.5, 0.25, 4326)
    r = Raster(np.arange(6, dtype=np.int16).reshape(2, 3) - 3, t, -32768)
    hdr, px = read_flr1_by_hand(encode_raster(r))
    assert hdr == dict(width=3, height=2, x0=-12.5, y0=44.25, pw=0.5, ph=0.25, crs=4326,
                       dtype=1, flag=1, nodata=-32768.0)
    np.testing.assert_array_equal(px, r.pixels)


dtypes = st.sampled_from([np.uint8, np.int16, np.float32])


@st.composite
def rasters(draw):
    dtype = draw(dtypes)
    shape = draw(st.tuples(st.integers(1, 7), st.integers(1, 7)))
    if dtype is np.float32:
        elems = st.floats(-1e6, 1e6, width=32)
    else:
        info = np.iinfo(dtype)
        elems = st.integers(int(info.min), int(info.max))
    px = draw(hnp.arrays(dtype, shape, elements=elems))
    nodata = draw(st.sampled_from([None, "nan", "value"]))
    if nodata == "nan":
        nodata = float("nan") if dtype is np.float32 else None
        if nodata is not None:
            px = px.copy()
            px[0, 0] = np.nan
    elif nodata == "value":
        nodata = int(px.flat[0]) if dtype is not np.float32 else float(px.flat[0])
    t = GeoTransform(draw(st.floats(-1e6, 1e6)), draw(st.floats(-1e6, 1e6)),
                     draw(st.floats(0.01, 1e3)), draw(st.floats(0.01, 1e3)),
                     draw(st.sampled_from([4326, 3857, 32637, 32737])))
    return Raster(px, t, nodata)


@given(rasters())
@settings(max_examples=200)
def test_round_trip_is_byte_exact(r):
    data = encode_raster(r)
    back = decode_raster(data)
    assert back == r
    assert encode_raster(back) == data
    hdr, px = read_flr1_by_hand(data)
    assert px.tobytes() == r.pixels.tobytes()
    assert len(data) == 58 + r.pixels.nbytes


def test_file_io(tmp_path):
    r = grid(np.eye(3, dtype=np.uint8), 255)
    write_raster(r, tmp_path / "a.flr")
    assert read_raster(tmp_path / "a.flr") == r


@pytest.mark.parametrize(
    "mutate, offset",
    [
        (lambda d: b"FLR2" + d[4:], 0),
        (lambda d: d[:48] + bytes([3]) + d[49:], 48),
        (lambda d: d[:49] + bytes([2]) + d[50:], 49),
        (lambda d: d[:50] + struct.pack("<d", 1.0) + d[58:], 50),  # flag 0 but value set
        (lambda d: d[:28] + struct.pack("<d", -1.0) + d[36:], 12),
        (lambda d: d + b"\0", 58 + 4),
    ],
)
def test_malformed_files_report_offset(mutate, offset):
    data = encode_raster(grid(np.zeros((2, 2), np.uint8)))
    with pytest.raises(RasterFormatError) as exc:
        decode_raster(mutate(data))
    assert exc.value.offset == offset


@pytest.mark.parametrize("cut", [0, 3, 30, 57, 59, 61])
def test_truncation(cut):
    data = encode_raster(grid(np.zeros((2, 2), np.uint8)))
    with pytest.raises(RasterFormatError) as exc:
        decode_raster(data[:cut])
    if cut >= 4:
        assert isinstance(exc.value, RasterTruncatedError)


def test_raster_is_immutable_and_validates():
    r = grid(np.zeros((2, 2), np.uint8))
    with pytest.raises(ValueError):
        r.pixels[0, 0] = 1
    with pytest.raises(ValueError):
        grid(np.array([[np.inf]], np.float32))
    with pytest.raises(ValueError):
        grid(np.zeros((2, 2), np.uint8), nodata=300)
    with pytest.raises(TypeError):
        grid(np.zeros((2, 2), np.float64))
    with pytest.raises(ValueError):
        GeoTransform(0, 0, 0, 1, 4326)


def test_same_grid_checks():
    a = grid(np.zeros((2, 2), np.uint8))
    with pytest.raises(GridMismatchError):
        require_same_grid(a, grid(np.zeros((2, 3), np.uint8)))
    other = GeoTransform(UTM.x_origin, UTM.y_origin, 20, 20, 32636)
    with pytest.raises(CRSMismatchError):
        require_same_grid(a, Raster(np.zeros((2, 2), np.uint8), other))


@given(st.integers(1, 40), st.integers(1, 40), st.integers(1, 17))
def test_tiles_partition_the_raster(w, h, size):
    r = grid(np.zeros((h, w), np.uint8))
    cover = np.zeros((h, w), int)
    for win in tile(r, size):
        assert 1 <= win.width <= size and 1 <= win.height <= size
        cover[win.slices] += 1
    assert (cover == 1).all()


def test_tiles_clip_at_the_edges():
    r = grid(np.zeros((600, 1000), np.uint8))
    wins = list(tile(r, 512))
    assert len(wins) == 4
    assert sorted({w.width for w in wins}) == [488, 512]
    assert sorted({w.height for w in wins}) == [88, 512]


def test_window_keeps_georeference():
    r = grid(np.arange(20, dtype=np.int16).reshape(4, 5))
    sub = r.window(TileWindow(2, 1, 2, 2))
    assert sub.transform.x_origin == UTM.x_origin + 40
    assert sub.transform.y_origin == UTM.y_origin - 20
    np.testing.assert_array_equal(sub.pixels, [[7, 8], [12, 13]])


def test_resample_identity_and_shift():
    r = grid(np.arange(12, dtype=np.int16).reshape(3, 4))
    assert resample_nearest(r, UTM, 4, 3) is r
    # 40 m target centres sit on source corners; floor picks the lower-right pixel
    coarse = GeoTransform(UTM.x_origin, UTM.y_origin, 40, 40, UTM.crs_code)
    out = resample_nearest(r, coarse, 2, 2)
    np.testing.assert_array_equal(out.pixels, [[5, 7], [-32768, -32768]])
    assert out.nodata == -32768
    # target reaching beyond the source gets nodata
    shifted = GeoTransform(UTM.x_origin + 60, UTM.y_origin, 20, 20, UTM.crs_code)
    out = resample_nearest(r, shifted, 2, 1)
    assert out.pixels[0, 0] == 3 and out.nodata_mask()[0, 1]
    with pytest.raises(CRSMismatchError):
        resample_nearest(r, GeoTransform(0, 0, 1, 1, 4326), 1, 1)


def test_resample_upsamples_into_blocks():
    src = Raster(np.array([[1, 2], [3, 4]], np.int16),
                 GeoTransform(UTM.x_origin, UTM.y_origin, 40, 40, UTM.crs_code))
    out = resample_nearest(src, UTM, 4, 4)
    np.testing.assert_array_equal(out.pixels, np.kron([[1, 2], [3, 4]], np.ones((2, 2), int)))


def test_pixel_area():
    assert pixel_area_hectares(UTM) == 0.04
    with pytest.raises(ValueError):
        pixel_area_hectares(GeoTransform(0, 0, 0.1, 0.1, 4326))


def test_utm_known_points():
    lon, lat = to_lonlat(500_000.0, 0.0, 32637)
    assert lon == pytest.approx(39.0, abs=1e-12) and lat == pytest.approx(0.0, abs=1e-12)
    # on the central meridian northing is the scaled meridian arc; integrate it
    a, f = 6378137.0, 1 / 298.257223563
    e2 = f * (2 - f)
    arc = quad(lambda p: a * (1 - e2) / (1 - e2 * math.sin(p) ** 2) ** 1.5, 0, math.radians(40))[0]
    x, y = from_lonlat(45.0, 40.0, 32638)
    assert x == pytest.approx(500_000.0, abs=1e-6)
    assert y == pytest.approx(0.9996 * arc, abs=1e-3)


@given(st.floats(-2.9, 2.9), st.floats(-79, 83), st.sampled_from([32637, 32737, 3857]))
def test_projection_round_trip(dlon, lat, crs):
    lon = 39.0 + dlon
    x, y = from_lonlat(lon, lat, crs)
    lon2, lat2 = to_lonlat(x, y, crs)
    # series truncation keeps the round trip well under a millimetre (1e-8 deg)
    assert lon2 == pytest.approx(lon, abs=1e-8)
    assert lat2 == pytest.approx(lat, abs=1e-8)


def test_points_in_polygon_even_odd():
    outer = [(0, 0), (10, 0), (10, 10), (0, 10)]
    hole = [(4, 4), (6, 4), (6, 6), (4, 6)]
    lon = np.array([1.0, 5.0, 11.0, 9.5])
    lat = np.array([1.0, 5.0, 5.0, 9.5])
    np.testing.assert_array_equal(points_in_polygon(lon, lat, [outer]), [True, True, False, True])
    np.testing.assert_array_equal(points_in_polygon(lon, lat, [outer, hole]), [True, False, False, True])


def test_nan_nodata_equality():
    a = grid(np.array([[np.nan, 1.0]], np.float32), float("nan"))
    b = grid(np.array([[np.nan, 1.0]], np.float32), float("nan"))
    assert a == b
    assert a.nodata_mask().tolist() == [[True, False]]
    assert math.isnan(a.as_float()[0, 0])
