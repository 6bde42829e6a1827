"""Detection records, multi-scene composites, coarsening and land-cover overlays."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from datetime import date
from functools import reduce
from pathlib import Path

import numpy as np

from .classifier import FloodCandidateMask
from .features import SceneMeta
from .postproc import LAND_COVER_CLASSES, AuxStack, buffer_mask
from .raster import (
    GeoTransform,
    Raster,
    from_lonlat,
    pixel_area_hectares,
    pixel_center_lonlat,
    points_in_polygon,
    require_same_grid,
    resample_nearest,
    to_lonlat,
)

RECORD_COLUMNS = [
    "lon", "lat", "date", "scene_id", "delta_vv", "delta_vh", "soil_moisture",
    "elevation", "slope", "temperature", "land_cover", "filtered", "removal_reason",
]
IMPACT_COLUMNS = ["zone_id", "class", "class_px", "flooded_px", "fraction", "hectares"]


@dataclass(frozen=True)
class DetectionRecord:
    lon: float
    lat: float
    date: date
    scene_id: str
    delta_vv: float
    delta_vh: float | None
    soil_moisture: float
    elevation: float
    slope: float
    temperature: float
    land_cover: int
    filtered: bool
    removal_reason: int

    def __post_init__(self):
        if not -90 <= self.lat <= 90:
            raise ValueError(f"latitude {self.lat} out of range")
        if not -180 <= self.lon <= 180:
            raise ValueError(f"longitude {self.lon} out of range")
        if self.filtered != (self.removal_reason != 0):
            raise ValueError("filtered must be true exactly when removal_reason is nonzero")


def _aux_values(r: Raster | None, rows, cols) -> np.ndarray:
    if r is None:
        return np.full(len(rows), np.nan)
    return r.as_float()[rows, cols]


def emit_records(
    filtered: FloodCandidateMask,
    removal_reason: Raster,
    aux: AuxStack,
    meta: SceneMeta,
    delta_vv: Raster | None = None,
    delta_vh: Raster | None = None,
) -> list[DetectionRecord]:
    """One record per candidate pixel, retained or filtered, in row-major order.

    Candidates are pixels that are positive in ``filtered`` or carry a
    nonzero removal reason.
    """
    mask = filtered.mask
    require_same_grid(mask, removal_reason)
    reason = removal_reason.pixels
    cand = ((mask.pixels == 1) & mask.valid_mask()) | (reason != 0)
    rows, cols = np.nonzero(cand)
    if rows.size == 0:
        return []
    x, y = mask.transform.pixel_to_world(cols + 0.5, rows + 0.5)
    lon, lat = to_lonlat(x, y, mask.transform.crs_code)
    dvv = _aux_values(delta_vv, rows, cols)
    dvh = _aux_values(delta_vh, rows, cols)
    sm = _aux_values(aux.soil_moisture, rows, cols)
    elev = _aux_values(aux.elevation, rows, cols)
    slope = _aux_values(aux.slope, rows, cols)
    temp = _aux_values(aux.temperature, rows, cols)
    lc = aux.land_cover.pixels[rows, cols] if aux.land_cover is not None else np.zeros(rows.size, int)
    day = meta.acquisition_time.date()
    records = []
    for i in range(rows.size):
        rr = int(reason[rows[i], cols[i]])
        records.append(DetectionRecord(
            lon=float(lon[i]), lat=float(lat[i]), date=day, scene_id=meta.scene_id,
            delta_vv=float(dvv[i]),
            delta_vh=None if math.isnan(dvh[i]) else float(dvh[i]),
            soil_moisture=float(sm[i]), elevation=float(elev[i]), slope=float(slope[i]),
            temperature=float(temp[i]), land_cover=int(lc[i]),
            filtered=rr != 0, removal_reason=rr,
        ))
    return records


def _fmt_float(v: float | None) -> str:
    if v is None:
        return ""
    return repr(float(v))


def records_to_csv(records) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(RECORD_COLUMNS)
    for r in records:
        writer.writerow([
            _fmt_float(r.lon), _fmt_float(r.lat), r.date.isoformat(), r.scene_id,
            _fmt_float(r.delta_vv), _fmt_float(r.delta_vh), _fmt_float(r.soil_moisture),
            _fmt_float(r.elevation), _fmt_float(r.slope), _fmt_float(r.temperature),
            r.land_cover, "true" if r.filtered else "false", r.removal_reason,
        ])
    return buf.getvalue()


def records_from_csv(text: str) -> list[DetectionRecord]:
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header != RECORD_COLUMNS:
        raise ValueError(f"expected detections header {','.join(RECORD_COLUMNS)}")
    out = []
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != len(RECORD_COLUMNS):
            raise ValueError(f"line {lineno}: expected {len(RECORD_COLUMNS)} fields")
        d = dict(zip(RECORD_COLUMNS, row))
        if d["filtered"] not in ("true", "false"):
            raise ValueError(f"line {lineno}: filtered must be true or false")
        out.append(DetectionRecord(
            lon=float(d["lon"]), lat=float(d["lat"]), date=date.fromisoformat(d["date"]),
            scene_id=d["scene_id"], delta_vv=float(d["delta_vv"]),
            delta_vh=float(d["delta_vh"]) if d["delta_vh"] else None,
            soil_moisture=float(d["soil_moisture"]), elevation=float(d["elevation"]),
            slope=float(d["slope"]), temperature=float(d["temperature"]),
            land_cover=int(d["land_cover"]), filtered=d["filtered"] == "true",
            removal_reason=int(d["removal_reason"]),
        ))
    return out


def write_records(records, path) -> None:
    Path(path).write_text(records_to_csv(records), encoding="utf-8")


def read_records(path) -> list[DetectionRecord]:
    return records_from_csv(Path(path).read_text(encoding="utf-8"))


# ------------------------------------------------------------- composites


@dataclass(frozen=True)
class CompositeMap:
    extent: Raster
    period: tuple[date, date] | None = None
    buffer_radius_px: int = 0
    observation_count: Raster | None = None


def rasterize_records(records, target: GeoTransform, width: int, height: int) -> np.ndarray:
    """Boolean grid of pixels containing at least one unfiltered record."""
    out = np.zeros((height, width), dtype=bool)
    kept = [r for r in records if not r.filtered]
    if not kept:
        return out
    lon = np.array([r.lon for r in kept])
    lat = np.array([r.lat for r in kept])
    x, y = from_lonlat(lon, lat, target.crs_code)
    col, row = target.world_to_pixel(x, y)
    col = np.floor(col).astype(np.int64)
    row = np.floor(row).astype(np.int64)
    inside = (col >= 0) & (col < width) & (row >= 0) & (row < height)
    out[row[inside], col[inside]] = True
    return out


def compose(
    inputs,
    target: GeoTransform,
    width: int,
    height: int,
    buffer_radius_px: int = 0,
    period: tuple[date, date] | None = None,
) -> CompositeMap:
    """OR-accumulate detections onto a target grid, then buffer.

    ``inputs`` mixes binary rasters (resampled to the target when their grid
    differs) and iterables of :class:`DetectionRecord`. Records outside
    ``period`` are skipped. Buffering after the union equals buffering each
    input first, since dilation distributes over union.
    """
    acc = np.zeros((height, width), dtype=bool)
    counts = np.zeros((height, width), dtype=np.int32)
    for item in inputs:
        if isinstance(item, FloodCandidateMask):
            item = item.mask
        if isinstance(item, Raster):
            r = item
            if r.transform != target or r.shape != (height, width):
                r = resample_nearest(r, target, width, height)
            valid = r.valid_mask()
            acc |= (r.pixels == 1) & valid
            counts += valid
        else:
            recs = list(item)
            if period is not None:
                recs = [rec for rec in recs if period[0] <= rec.date <= period[1]]
            acc |= rasterize_records(recs, target, width, height)
    extent = Raster(acc.astype(np.uint8), target, None)
    extent = buffer_mask(extent, buffer_radius_px)
    count_raster = Raster(np.minimum(counts, np.iinfo(np.int16).max).astype(np.int16), target, None) if counts.any() else None
    return CompositeMap(extent, period, buffer_radius_px, count_raster)


def merge(a: CompositeMap, b: CompositeMap) -> CompositeMap:
    """Union of two composites on the same grid with the same buffer radius."""
    require_same_grid(a.extent, b.extent)
    if a.buffer_radius_px != b.buffer_radius_px:
        raise ValueError("cannot merge composites buffered with different radii")
    ext = a.extent.replace(((a.extent.pixels == 1) | (b.extent.pixels == 1)).astype(np.uint8))
    period = None
    if a.period and b.period:
        period = (min(a.period[0], b.period[0]), max(a.period[1], b.period[1]))
    counts = None
    if a.observation_count is not None and b.observation_count is not None:
        total = a.observation_count.pixels.astype(np.int32) + b.observation_count.pixels
        counts = a.observation_count.replace(np.minimum(total, np.iinfo(np.int16).max).astype(np.int16))
    return CompositeMap(ext, period, a.buffer_radius_px, counts)


def compose_all(composites) -> CompositeMap:
    return reduce(merge, composites)


def coarsen(
    fine: CompositeMap | Raster, coarse_pixel: float = 250.0, min_fraction: float | None = None
) -> CompositeMap:
    """Aggregate a fine binary map onto a coarser grid with the same origin.

    Default is any-touch: a coarse cell is positive when at least one fine
    positive pixel centre lies inside it. With ``min_fraction`` the cell is
    positive when that fraction of the fine centres it holds are positive.
    """
    src = fine.extent if isinstance(fine, CompositeMap) else fine
    t = src.transform
    if not (coarse_pixel > t.pixel_width and coarse_pixel > t.pixel_height):
        raise ValueError("coarse pixel must be larger than the fine pixel")
    cw = math.ceil(src.width * t.pixel_width / coarse_pixel - 1e-9)
    ch = math.ceil(src.height * t.pixel_height / coarse_pixel - 1e-9)
    target = GeoTransform(t.x_origin, t.y_origin, coarse_pixel, coarse_pixel, t.crs_code)
    # coarse index of each fine centre
    ci = np.floor((np.arange(src.width) + 0.5) * t.pixel_width / coarse_pixel).astype(np.intp)
    ri = np.floor((np.arange(src.height) + 0.5) * t.pixel_height / coarse_pixel).astype(np.intp)
    pos = ((src.pixels == 1) & src.valid_mask()).astype(np.int64)
    hits = np.zeros((ch, cw), dtype=np.int64)
    np.add.at(hits, (ri[:, None], ci[None, :]), pos)
    if min_fraction is None:
        out = hits > 0
    else:
        totals = np.zeros((ch, cw), dtype=np.int64)
        np.add.at(totals, (ri[:, None], ci[None, :]), 1)
        out = (totals > 0) & (hits >= min_fraction * totals)
    extent = Raster(out.astype(np.uint8), target, None)
    if isinstance(fine, CompositeMap):
        return CompositeMap(extent, fine.period, fine.buffer_radius_px)
    return CompositeMap(extent)


# ---------------------------------------------------------------- overlay


@dataclass(frozen=True)
class ImpactRow:
    zone_id: str
    class_code: int
    class_px: int
    flooded_px: int
    fraction: float
    hectares: float


def overlay_impact(
    extent: CompositeMap | Raster, land_cover: Raster, class_code: int, admin_zones=None
) -> list[ImpactRow]:
    """Share of a land-cover class inside the flood extent, per zone.

    ``admin_zones`` maps zone ids to lon/lat rings (even-odd rule on pixel
    centres); without zones one row covers the whole grid with zone id
    ``all``. A zone with no pixels of the class reports fraction 0.
    """
    ext = extent.extent if isinstance(extent, CompositeMap) else extent
    if class_code not in LAND_COVER_CLASSES:
        raise ValueError(f"unknown land-cover class code {class_code}")
    require_same_grid(ext, land_cover)
    area = pixel_area_hectares(ext.transform)
    cls = (land_cover.pixels == class_code) & land_cover.valid_mask()
    flooded = cls & (ext.pixels == 1) & ext.valid_mask()
    if admin_zones is None:
        zones = {"all": None}
    else:
        zones = dict(admin_zones)
        lon, lat = pixel_center_lonlat(ext)
    rows = []
    for zone_id, rings in zones.items():
        if rings is None:
            inside = np.ones(ext.shape, dtype=bool)
        else:
            inside = points_in_polygon(lon, lat, rings)
        n_cls = int(np.count_nonzero(cls & inside))
        n_fl = int(np.count_nonzero(flooded & inside))
        rows.append(ImpactRow(
            str(zone_id), class_code, n_cls, n_fl,
            n_fl / n_cls if n_cls else 0.0, n_fl * area,
        ))
    return rows


def impact_to_csv(rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(IMPACT_COLUMNS)
    for r in rows:
        writer.writerow([r.zone_id, r.class_code, r.class_px, r.flooded_px, repr(r.fraction), repr(r.hectares)])
    return buf.getvalue()


def impact_from_csv(text: str) -> list[ImpactRow]:
    reader = csv.reader(io.StringIO(text))
    if next(reader, None) != IMPACT_COLUMNS:
        raise ValueError(f"expected impact header {','.join(IMPACT_COLUMNS)}")
    return [
        ImpactRow(z, int(c), int(cp), int(fp), float(fr), float(ha))
        for z, c, cp, fp, fr, ha in (row for row in reader if row)
    ]


def read_zones(path) -> dict[str, list]:
    """Zones CSV with header zone_id,ring,lon,lat; one vertex per row."""
    zones: dict[str, dict[int, list]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["zone_id", "ring", "lon", "lat"]:
            raise ValueError("zones file needs header zone_id,ring,lon,lat")
        for row in reader:
            zones.setdefault(row["zone_id"], {}).setdefault(int(row["ring"]), []).append(
                (float(row["lon"]), float(row["lat"]))
            )
    return {z: [rings[k] for k in sorted(rings)] for z, rings in zones.items()}
