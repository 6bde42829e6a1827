"""
Georeferenced single-band rasters, the FLR1 file format, tiling and
nearest-neighbour resampling.

FLR1 layout (little-endian, 58-byte header followed by the payload)::

    offset  size  field
    0       4     magic b"FLR1"
    4       4     u32 width
    8       4     u32 height
    12      8     f64 x_origin       (upper-left corner)
    20      8     f64 y_origin
    28      8     f64 pixel_width    (> 0)
    36      8     f64 pixel_height   (> 0, rows advance downward)
    44      4     u32 crs_code       (EPSG)
    48      1     u8  dtype          (0=byte, 1=int16, 2=float32)
    49      1     u8  nodata_flag    (0 or 1)
    50      8     f64 nodata_value   (0.0 when the flag is 0)
    58      ...   row-major pixels
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

MAGIC = b"FLR1"
HEADER = struct.Struct("<4sIIddddIBBd")
HEADER_SIZE = HEADER.size  # 58

DTYPES = {
    "byte": np.dtype("u1"),
    "int16": np.dtype("<i2"),
    "float32": np.dtype("<f4"),
}
DTYPE_CODES = {"byte": 0, "int16": 1, "float32": 2}
_CODE_NAMES = {code: name for name, code in DTYPE_CODES.items()}

# Default nodata used when an operation has to invent one
DEFAULT_NODATA = {"byte": 255, "int16": -32768, "float32": math.nan}

# EPSG codes whose units are degrees
GEOGRAPHIC_CRS = frozenset({4326, 4269, 4258, 4283, 4617, 4674, 4019, 4030})

WGS84_A = 6378137.0
WGS84_F = 1 / 298.257223563


class RasterFormatError(ValueError):
    """A file is not a well-formed FLR1 raster."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class RasterTruncatedError(RasterFormatError):
    """The FLR1 payload is shorter than the header promises."""


class CRSMismatchError(ValueError):
    pass


class GridMismatchError(ValueError):
    """Rasters that must share a grid do not."""


@dataclass(frozen=True)
class GeoTransform:
    """Affine north-up grid: upper-left corner, pixel size and EPSG code."""

    x_origin: float
    y_origin: float
    pixel_width: float
    pixel_height: float
    crs_code: int

    def __post_init__(self):
        if not (self.pixel_width > 0 and self.pixel_height > 0):
            raise ValueError(
                f"pixel size must be positive, got {self.pixel_width} x {self.pixel_height}"
            )
        if not all(
            math.isfinite(v)
            for v in (self.x_origin, self.y_origin, self.pixel_width, self.pixel_height)
        ):
            raise ValueError("geotransform values must be finite")

    def pixel_to_world(self, col, row):
        """Map fractional pixel coordinates to CRS coordinates.

        ``(col + 0.5, row + 0.5)`` is the centre of pixel ``(col, row)``.
        Works elementwise on arrays.
        """
        x = self.x_origin + np.asarray(col, dtype=float) * self.pixel_width
        y = self.y_origin - np.asarray(row, dtype=float) * self.pixel_height
        return x, y

    def world_to_pixel(self, x, y):
        col = (np.asarray(x, dtype=float) - self.x_origin) / self.pixel_width
        row = (self.y_origin - np.asarray(y, dtype=float)) / self.pixel_height
        return col, row

    def pixel_centers(self, width: int, height: int):
        """World coordinates of every pixel centre as two (height, width) arrays."""
        cols = np.arange(width) + 0.5
        rows = np.arange(height) + 0.5
        x, _ = self.pixel_to_world(cols, 0)
        _, y = self.pixel_to_world(0, rows)
        return np.broadcast_to(x, (height, width)), np.broadcast_to(y[:, None], (height, width))

    @property
    def is_geographic(self) -> bool:
        return self.crs_code in GEOGRAPHIC_CRS


@dataclass(frozen=True)
class TileWindow:
    col_off: int
    row_off: int
    width: int
    height: int

    @property
    def slices(self) -> tuple[slice, slice]:
        return (
            slice(self.row_off, self.row_off + self.height),
            slice(self.col_off, self.col_off + self.width),
        )


@dataclass(frozen=True, eq=False)
class Raster:
    """Immutable single-band raster.

    ``pixels`` is a read-only (height, width) array of dtype uint8, int16 or
    float32. ``nodata`` marks missing pixels; NaN is allowed for float32.
    """

    pixels: np.ndarray
    transform: GeoTransform
    nodata: float | int | None = None

    def __post_init__(self):
        arr = np.asarray(self.pixels)
        if arr.ndim != 2:
            raise ValueError(f"raster pixels must be 2-D, got shape {arr.shape}")
        name = _dtype_name(arr.dtype)
        arr = np.array(arr, dtype=DTYPES[name], order="C", copy=True)
        arr.flags.writeable = False
        object.__setattr__(self, "pixels", arr)

        nodata = self.nodata
        if nodata is not None:
            nodata = float(nodata)
            if name != "float32":
                if not nodata.is_integer():
                    raise ValueError(f"nodata {nodata} is not an integer for {name} raster")
                info = np.iinfo(DTYPES[name])
                if not info.min <= nodata <= info.max:
                    raise ValueError(f"nodata {nodata} outside the {name} range")
                nodata = int(nodata)
            object.__setattr__(self, "nodata", nodata)

        if name == "float32":
            bad = ~np.isfinite(arr)
            if bad.any():
                if nodata is None or not math.isnan(nodata) or not np.isnan(arr[bad]).all():
                    raise ValueError("non-finite pixel values are only allowed as NaN nodata")

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.pixels.shape

    @property
    def dtype(self) -> str:
        return _dtype_name(self.pixels.dtype)

    def nodata_mask(self) -> np.ndarray:
        if self.nodata is None:
            return np.zeros(self.shape, dtype=bool)
        if isinstance(self.nodata, float) and math.isnan(self.nodata):
            return np.isnan(self.pixels)
        return self.pixels == self.nodata

    def valid_mask(self) -> np.ndarray:
        return ~self.nodata_mask()

    def as_float(self) -> np.ndarray:
        """Pixels as float64 with nodata replaced by NaN."""
        out = self.pixels.astype(np.float64)
        out[self.nodata_mask()] = np.nan
        return out

    def replace(self, pixels: np.ndarray, nodata="keep") -> "Raster":
        """New raster on the same grid."""
        return Raster(pixels, self.transform, self.nodata if nodata == "keep" else nodata)

    def window(self, win: TileWindow) -> "Raster":
        x, y = self.transform.pixel_to_world(win.col_off, win.row_off)
        t = GeoTransform(
            float(x), float(y), self.transform.pixel_width,
            self.transform.pixel_height, self.transform.crs_code,
        )
        return Raster(self.pixels[win.slices], t, self.nodata)

    def same_grid(self, other: "Raster") -> bool:
        return self.shape == other.shape and self.transform == other.transform

    def __eq__(self, other):
        if not isinstance(other, Raster):
            return NotImplemented
        return (
            self.transform == other.transform
            and self.dtype == other.dtype
            and _same_nodata(self.nodata, other.nodata)
            and self.shape == other.shape
            and self.pixels.tobytes() == other.pixels.tobytes()
        )

    __hash__ = None

    def __repr__(self):
        return (
            f"Raster({self.width}x{self.height} {self.dtype}, nodata={self.nodata}, "
            f"transform={self.transform})"
        )


def _dtype_name(dtype: np.dtype) -> str:
    dtype = np.dtype(dtype)
    for name, dt in DTYPES.items():
        if dtype.kind == dt.kind and dtype.itemsize == dt.itemsize:
            return name
    if dtype == np.bool_:
        return "byte"
    raise TypeError(f"unsupported raster dtype {dtype}; use uint8, int16 or float32")


def _same_nodata(a, b) -> bool:
    if a is None or b is None:
        return a is b
    if math.isnan(a) or math.isnan(b):
        return math.isnan(a) and math.isnan(b)
    return a == b


def require_same_grid(*rasters: Raster) -> None:
    first = rasters[0]
    for r in rasters[1:]:
        if r.transform.crs_code != first.transform.crs_code:
            raise CRSMismatchError(
                f"EPSG:{r.transform.crs_code} differs from EPSG:{first.transform.crs_code}"
            )
        if not first.same_grid(r):
            raise GridMismatchError(
                f"grid mismatch: {first.width}x{first.height} {first.transform} vs "
                f"{r.width}x{r.height} {r.transform}"
            )


# --------------------------------------------------------------------- I/O


def encode_raster(r: Raster) -> bytes:
    flag = 0 if r.nodata is None else 1
    header = HEADER.pack(
        MAGIC, r.width, r.height,
        r.transform.x_origin, r.transform.y_origin,
        r.transform.pixel_width, r.transform.pixel_height,
        r.transform.crs_code, DTYPE_CODES[r.dtype], flag,
        0.0 if r.nodata is None else float(r.nodata),
    )
    return header + r.pixels.tobytes()


def decode_raster(data: bytes) -> Raster:
    if len(data) < 4 or data[:4] != MAGIC:
        raise RasterFormatError("missing FLR1 magic", 0)
    if len(data) < HEADER_SIZE:
        raise RasterTruncatedError(f"header needs {HEADER_SIZE} bytes, file has {len(data)}", len(data))
    (_, width, height, x0, y0, pw, ph, crs, code, flag, nodata_value) = HEADER.unpack_from(data)
    if code not in _CODE_NAMES:
        raise RasterFormatError(f"unknown dtype code {code}", 48)
    if flag not in (0, 1):
        raise RasterFormatError(f"nodata flag must be 0 or 1, got {flag}", 49)
    if flag == 0 and data[50:58] != bytes(8):
        raise RasterFormatError("nodata value must be zero when the flag is unset", 50)
    try:
        transform = GeoTransform(x0, y0, pw, ph, crs)
    except ValueError as exc:
        raise RasterFormatError(str(exc), 12) from None
    name = _CODE_NAMES[code]
    dtype = DTYPES[name]
    expected = width * height * dtype.itemsize
    payload = data[HEADER_SIZE:]
    if len(payload) < expected:
        raise RasterTruncatedError(
            f"payload has {len(payload)} bytes, expected {expected}", len(data)
        )
    if len(payload) > expected:
        raise RasterFormatError(
            f"{len(payload) - expected} trailing bytes after payload", HEADER_SIZE + expected
        )
    pixels = np.frombuffer(payload, dtype=dtype).reshape(height, width)
    nodata = nodata_value if flag else None
    try:
        raster = Raster(pixels, transform, nodata)
    except ValueError as exc:
        raise RasterFormatError(str(exc), 50 if flag else HEADER_SIZE) from None
    if flag and encode_raster(raster)[50:58] != data[50:58]:
        # e.g. a NaN with a non-canonical payload, or -0.0 on an integer raster
        raise RasterFormatError("nodata value does not round-trip", 50)
    return raster


def read_raster(path) -> Raster:
    return decode_raster(Path(path).read_bytes())


def write_raster(r: Raster, path) -> None:
    Path(path).write_bytes(encode_raster(r))


# ----------------------------------------------------------------- tiling


def tile(r: Raster, tile_size: int) -> list[TileWindow]:
    """Partition ``r`` into row-major windows of at most ``tile_size`` pixels a side."""
    if tile_size < 1:
        raise ValueError("tile_size must be >= 1")
    return list(iter_windows(r.width, r.height, tile_size))


def iter_windows(width: int, height: int, tile_size: int) -> Iterator[TileWindow]:
    for row in range(0, height, tile_size):
        for col in range(0, width, tile_size):
            yield TileWindow(
                col, row, min(tile_size, width - col), min(tile_size, height - row)
            )


# ------------------------------------------------------------- resampling


def resample_nearest(
    r: Raster, target: GeoTransform, target_width: int, target_height: int
) -> Raster:
    """Sample ``r`` at the centres of the target grid.

    Target pixels whose centre falls outside the source take the source
    nodata value (or the dtype default, which then becomes the output nodata).
    """
    if target.crs_code != r.transform.crs_code:
        raise CRSMismatchError(
            f"cannot resample EPSG:{r.transform.crs_code} onto EPSG:{target.crs_code}"
        )
    if target == r.transform and (target_width, target_height) == (r.width, r.height):
        return r
    x, y = target.pixel_centers(target_width, target_height)
    col, row = r.transform.world_to_pixel(x, y)
    col = np.floor(col)
    row = np.floor(row)
    inside = (col >= 0) & (col < r.width) & (row >= 0) & (row < r.height)
    nodata = r.nodata
    if not inside.all() and nodata is None:
        nodata = DEFAULT_NODATA[r.dtype]
    out = np.full((target_height, target_width), 0 if nodata is None else nodata, dtype=r.pixels.dtype)
    out[inside] = r.pixels[row[inside].astype(np.intp), col[inside].astype(np.intp)]
    return Raster(out, target, nodata)


def pixel_area_hectares(t: GeoTransform) -> float:
    if t.is_geographic:
        raise ValueError(
            f"EPSG:{t.crs_code} is in degrees; reproject to a metric grid before computing areas"
        )
    return t.pixel_width * t.pixel_height / 10000.0


# ------------------------------------------------------ point projections
# Only points are projected (record coordinates, polygon tests); rasters are
# never reprojected.

_N = WGS84_F / (2 - WGS84_F)
_A = WGS84_A / (1 + _N) * (1 + _N**2 / 4 + _N**4 / 64)
_ALPHA = (
    _N / 2 - 2 * _N**2 / 3 + 5 * _N**3 / 16,
    13 * _N**2 / 48 - 3 * _N**3 / 5,
    61 * _N**3 / 240,
)
_BETA = (
    _N / 2 - 2 * _N**2 / 3 + 37 * _N**3 / 96,
    _N**2 / 48 + _N**3 / 15,
    17 * _N**3 / 480,
)
_DELTA = (
    2 * _N - 2 * _N**2 / 3 - 2 * _N**3,
    7 * _N**2 / 3 - 8 * _N**3 / 5,
    56 * _N**3 / 15,
)
_K0 = 0.9996


def _utm_zone(crs_code: int):
    if 32601 <= crs_code <= 32660:
        return crs_code - 32600, False
    if 32701 <= crs_code <= 32760:
        return crs_code - 32700, True
    return None


def to_lonlat(x, y, crs_code: int):
    """Convert CRS coordinates to WGS84 lon/lat degrees.

    Supports geographic codes, EPSG:3857 and the WGS84 UTM zones.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if crs_code in GEOGRAPHIC_CRS:
        return x, y
    if crs_code == 3857:
        lon = np.degrees(x / WGS84_A)
        lat = np.degrees(2 * np.arctan(np.exp(y / WGS84_A)) - np.pi / 2)
        return lon, lat
    zone = _utm_zone(crs_code)
    if zone is None:
        raise ValueError(f"no lon/lat conversion for EPSG:{crs_code}")
    number, south = zone
    xi = (y - (10_000_000.0 if south else 0.0)) / (_K0 * _A)
    eta = (x - 500_000.0) / (_K0 * _A)
    xi_p, eta_p = xi.copy(), eta.copy()
    for j, b in enumerate(_BETA, start=1):
        xi_p -= b * np.sin(2 * j * xi) * np.cosh(2 * j * eta)
        eta_p -= b * np.cos(2 * j * xi) * np.sinh(2 * j * eta)
    chi = np.arcsin(np.sin(xi_p) / np.cosh(eta_p))
    lat = chi.copy()
    for j, d in enumerate(_DELTA, start=1):
        lat += d * np.sin(2 * j * chi)
    lon0 = math.radians((number - 1) * 6 - 180 + 3)
    lon = lon0 + np.arctan2(np.sinh(eta_p), np.cos(xi_p))
    return np.degrees(lon), np.degrees(lat)


def from_lonlat(lon, lat, crs_code: int):
    """Inverse of :func:`to_lonlat`."""
    lon = np.asarray(lon, dtype=float)
    lat = np.asarray(lat, dtype=float)
    if crs_code in GEOGRAPHIC_CRS:
        return lon, lat
    if crs_code == 3857:
        x = WGS84_A * np.radians(lon)
        y = WGS84_A * np.log(np.tan(np.pi / 4 + np.radians(lat) / 2))
        return x, y
    zone = _utm_zone(crs_code)
    if zone is None:
        raise ValueError(f"no lon/lat conversion for EPSG:{crs_code}")
    number, south = zone
    phi = np.radians(lat)
    dlon = np.radians(lon) - math.radians((number - 1) * 6 - 180 + 3)
    c = 2 * math.sqrt(_N) / (1 + _N)
    t = np.sinh(np.arctanh(np.sin(phi)) - c * np.arctanh(c * np.sin(phi)))
    xi_p = np.arctan2(t, np.cos(dlon))
    eta_p = np.arctanh(np.sin(dlon) / np.sqrt(1 + t * t))
    xi, eta = xi_p.copy(), eta_p.copy()
    for j, a in enumerate(_ALPHA, start=1):
        xi += a * np.sin(2 * j * xi_p) * np.cosh(2 * j * eta_p)
        eta += a * np.cos(2 * j * xi_p) * np.sinh(2 * j * eta_p)
    x = 500_000.0 + _K0 * _A * eta
    y = _K0 * _A * xi + (10_000_000.0 if south else 0.0)
    return x, y


def pixel_center_lonlat(r: Raster):
    """Lon/lat of every pixel centre as (height, width) arrays."""
    x, y = r.transform.pixel_centers(r.width, r.height)
    return to_lonlat(x, y, r.transform.crs_code)


def points_in_polygon(lon, lat, rings) -> np.ndarray:
    """Even-odd containment of points in a set of rings.

    ``rings`` is a sequence of (k, 2) vertex sequences in lon/lat; holes are
    simply additional rings. Returns a boolean array shaped like ``lon``.
    """
    lon = np.asarray(lon, dtype=float)
    lat = np.asarray(lat, dtype=float)
    inside = np.zeros(lon.shape, dtype=bool)
    for ring in rings:
        pts = np.asarray(ring, dtype=float)
        if len(pts) < 3:
            continue
        xj, yj = pts[-1]
        for xi, yi in pts:
            crosses = (yi > lat) != (yj > lat)
            if crosses.any():
                with np.errstate(divide="ignore", invalid="ignore"):
                    x_int = (xj - xi) * (lat - yi) / (yj - yi) + xi
                inside ^= crosses & (lon < x_int)
            xj, yj = xi, yi
    return inside
