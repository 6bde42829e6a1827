"""
Deterministic synthetic scenes with planted floods.

A scenario describes a grid, backscatter levels for land and open water,
flood polygons in lon/lat and additive Gaussian dB noise. ``generate_pair``
returns a dry pre-scene, a post-scene flooded inside the polygons and the
rasterised truth. ``generate_decade`` plans a monthly archive of such pairs
whose flooded area follows a requested trend, seasonality, outlier year and
single-polarization era.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from datetime import date, datetime, timedelta, timezone
from pathlib import Path

import numpy as np

from .features import (
    VH_WATER_DB,
    VV_WATER_DB,
    ManifestEntry,
    PassDirection,
    Scene,
    SceneMeta,
    ScenePair,
    parse_time,
    write_manifest,
)
from .postproc import CROPLAND, AuxStack
from .raster import GeoTransform, Raster, pixel_center_lonlat, points_in_polygon, to_lonlat, write_raster
from .trend import Month, month_range


@dataclass(frozen=True)
class SynthScenario:
    seed: int = 0
    width: int = 256
    height: int = 256
    x_origin: float = 500_000.0
    y_origin: float = 1_000_000.0
    pixel_size: float = 20.0
    crs_code: int = 32637
    land_amplitude_vv: float = -11.0
    land_amplitude_vh: float = -11.0
    water_amplitude_vv: float = -21.0
    water_amplitude_vh: float = -25.0
    speckle_sigma: float = 0.0
    flood_polygons: tuple = ()
    dual_pol: bool = True
    pre_time: datetime = datetime(2024, 4, 1, 3, 0, tzinfo=timezone.utc)
    gap_days: int = 12
    pass_direction: str = "ascending"
    relative_orbit: int = 1
    # auxiliary field generators
    slope_max_deg: float = 5.0
    land_cover: int = CROPLAND
    soil_moisture: float = 0.3
    temperature_k: float = 295.0
    elevation_m: float = 500.0

    def __post_init__(self):
        if not (self.water_amplitude_vv < VV_WATER_DB <= self.land_amplitude_vv):
            raise ValueError("VV amplitudes must straddle the water threshold")
        if not (self.water_amplitude_vh < VH_WATER_DB <= self.land_amplitude_vh):
            raise ValueError("VH amplitudes must straddle the water threshold")
        if self.speckle_sigma < 0:
            raise ValueError("speckle_sigma must be >= 0")
        object.__setattr__(
            self, "flood_polygons",
            tuple(tuple((float(x), float(y)) for x, y in ring) for ring in self.flood_polygons),
        )

    @property
    def transform(self) -> GeoTransform:
        return GeoTransform(self.x_origin, self.y_origin, self.pixel_size, self.pixel_size, self.crs_code)

    # key=value scenario files; flood_polygon may repeat, vertices "lon lat; lon lat; ..."

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            value = getattr(self, f.name)
            if f.name == "flood_polygons":
                for ring in value:
                    lines.append("flood_polygon=" + "; ".join(f"{x!r} {y!r}" for x, y in ring))
            elif isinstance(value, datetime):
                lines.append(f"{f.name}={value.strftime('%Y-%m-%dT%H:%M:%SZ')}")
            else:
                lines.append(f"{f.name}={value!r}" if isinstance(value, float) else f"{f.name}={value}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "SynthScenario":
        types = {f.name: f.type for f in fields(cls)}
        kwargs: dict = {}
        polygons = []
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"line {lineno}: expected key=value")
            key, value = (s.strip() for s in line.split("=", 1))
            if key == "flood_polygon":
                ring = [tuple(float(v) for v in pt.split()) for pt in value.split(";") if pt.strip()]
                if any(len(pt) != 2 for pt in ring):
                    raise ValueError(f"line {lineno}: vertices must be 'lon lat'")
                polygons.append(ring)
            elif key not in types or key == "flood_polygons":
                raise ValueError(f"line {lineno}: unknown scenario key {key!r}")
            elif types[key] == "datetime":
                kwargs[key] = parse_time(value)
            elif types[key] == "bool":
                kwargs[key] = value.lower() in ("true", "1", "yes")
            elif types[key] == "int":
                kwargs[key] = int(value)
            elif types[key] == "str":
                kwargs[key] = value
            else:
                kwargs[key] = float(value)
        return cls(**kwargs, flood_polygons=tuple(polygons))


def pixel_box_ring(t: GeoTransform, col0: int, row0: int, col1: int, row1: int, per_edge: int = 8):
    """Lon/lat ring tracing the outline of pixels [col0, col1) x [row0, row1)."""
    cols = np.r_[
        np.linspace(col0, col1, per_edge, endpoint=False),
        np.full(per_edge, col1),
        np.linspace(col1, col0, per_edge, endpoint=False),
        np.full(per_edge, col0),
    ]
    rows = np.r_[
        np.full(per_edge, row0),
        np.linspace(row0, row1, per_edge, endpoint=False),
        np.full(per_edge, row1),
        np.linspace(row1, row0, per_edge, endpoint=False),
    ]
    x, y = t.pixel_to_world(cols, rows)
    lon, lat = to_lonlat(x, y, t.crs_code)
    return [(float(a), float(b)) for a, b in zip(lon, lat)]


def rasterize_polygons(sc: SynthScenario) -> np.ndarray:
    shape = (sc.height, sc.width)
    if not sc.flood_polygons:
        return np.zeros(shape, dtype=bool)
    grid = Raster(np.zeros(shape, np.uint8), sc.transform)
    lon, lat = pixel_center_lonlat(grid)
    return points_in_polygon(lon, lat, sc.flood_polygons)


def _scene_rasters(
    t: GeoTransform, water_vv: np.ndarray, water_vh: np.ndarray, sc: SynthScenario,
    rng_vv: np.random.Generator, rng_vh: np.random.Generator, dual_pol: bool,
):
    shape = water_vv.shape
    vv = np.where(water_vv, sc.water_amplitude_vv, sc.land_amplitude_vv)
    if sc.speckle_sigma > 0:
        vv = vv + rng_vv.normal(0.0, sc.speckle_sigma, shape)
    vv_r = Raster(vv.astype(np.float32), t, None)
    vh_r = None
    if dual_pol:
        vh = np.where(water_vh, sc.water_amplitude_vh, sc.land_amplitude_vh)
        if sc.speckle_sigma > 0:
            vh = vh + rng_vh.normal(0.0, sc.speckle_sigma, shape)
        vh_r = Raster(vh.astype(np.float32), t, None)
    return vv_r, vh_r


def _meta(scene_id: str, when: datetime, sc: SynthScenario, dual_pol: bool, orbit=None, direction=None):
    return SceneMeta(
        scene_id, when, PassDirection(direction or sc.pass_direction),
        sc.relative_orbit if orbit is None else orbit,
        frozenset({"VV", "VH"} if dual_pol else {"VV"}),
    )


def _pair_from_masks(
    sc: SynthScenario, flood: np.ndarray, vh_only: np.ndarray, seed, pre_meta: SceneMeta,
    post_meta: SceneMeta, dual_pol: bool,
) -> tuple[ScenePair, Raster]:
    t = sc.transform
    rngs = [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(4)]
    dry = np.zeros(flood.shape, dtype=bool)
    pre_vv, pre_vh = _scene_rasters(t, dry, dry, sc, rngs[0], rngs[1], dual_pol)
    post_vv, post_vh = _scene_rasters(t, flood & ~vh_only, flood, sc, rngs[2], rngs[3], dual_pol)
    pair = ScenePair(Scene(pre_meta, pre_vv, pre_vh), Scene(post_meta, post_vv, post_vh))
    return pair, Raster(flood.astype(np.uint8), t, None)


def generate_pair(sc: SynthScenario) -> tuple[ScenePair, Raster]:
    flood = rasterize_polygons(sc)
    post_time = sc.pre_time + timedelta(days=sc.gap_days)
    pre = _meta(f"synth-{sc.seed}-pre", sc.pre_time, sc, sc.dual_pol)
    post = _meta(f"synth-{sc.seed}-post", post_time, sc, sc.dual_pol)
    return _pair_from_masks(sc, flood, np.zeros_like(flood), sc.seed, pre, post, sc.dual_pol)


def _smooth_field(rng: np.random.Generator, shape, passes: int = 3) -> np.ndarray:
    """Unit-range smooth random field from repeated box blurs of white noise."""
    f = rng.random(shape)
    for _ in range(passes):
        p = np.pad(f, 2, mode="edge")
        f = sum(p[dy:dy + shape[0], dx:dx + shape[1]] for dy in range(5) for dx in range(5)) / 25.0
    lo, hi = f.min(), f.max()
    return (f - lo) / (hi - lo) if hi > lo else np.zeros(shape)


def generate_aux(sc: SynthScenario) -> AuxStack:
    shape = (sc.height, sc.width)
    t = sc.transform
    rng = np.random.default_rng(np.random.SeedSequence([sc.seed, 1]))
    slope = _smooth_field(rng, shape) * sc.slope_max_deg
    elevation = sc.elevation_m + _smooth_field(rng, shape) * 50.0
    return AuxStack(
        slope=Raster(slope.astype(np.float32), t),
        land_cover=Raster(np.full(shape, sc.land_cover, np.uint8), t),
        soil_moisture=Raster(np.full(shape, sc.soil_moisture, np.float32), t),
        temperature=Raster(np.full(shape, sc.temperature_k, np.float32), t),
        elevation=Raster(elevation.astype(np.float32), t),
    )


# ------------------------------------------------------------------ decade


@dataclass(frozen=True)
class DecadeModel:
    """Planted monthly flood model.

    Planted area per observation, as a fraction of the grid, is
    ``base_fraction * (1 + trend/100 * years_from_mid + amplitude * sin(...))``
    so that the sample mean stays at ``base_fraction`` and the relative
    trend matches ``trend_pct_per_year``. Outlier-year months are multiplied
    by ``outlier_factor``.
    """

    trend_pct_per_year: float = 5.0
    seasonal_amplitude: float = 0.3
    base_fraction: float = 0.1
    outlier_year: int | None = 2022
    outlier_factor: float = 1.0
    single_pol_before: date = date(2017, 6, 1)
    single_pol_share: float = 0.5
    vh_only_fraction: float = 0.0
    obs_per_month: int = 4
    reduced_from: Month | None = (2021, 12)
    reduced_obs_per_month: int = 2
    area_noise: float = 0.0  # relative sd of month-to-month noise on planted area
    start: Month = (2014, 10)
    end: Month = (2024, 9)

    def __post_init__(self):
        for name in ("trend_pct_per_year", "seasonal_amplitude", "base_fraction", "outlier_factor",
                     "single_pol_share", "vh_only_fraction", "area_noise"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        if not 0 <= self.vh_only_fraction <= 1 or not 0 <= self.single_pol_share <= 1:
            raise ValueError("fractions must lie in [0, 1]")


@dataclass(frozen=True)
class PlannedPair:
    index: int
    pre: SceneMeta
    post: SceneMeta
    planted_px: int
    vh_only_px: int
    seed: tuple

    @property
    def single_pol(self) -> bool:
        return self.post.single_pol


@dataclass
class DecadeArchive:
    scenario: SynthScenario
    model: DecadeModel
    plan: list
    months: list
    planted_fraction: np.ndarray  # per month, before rounding to pixels
    _rank: np.ndarray = field(repr=False, default=None)
    _vh_key: np.ndarray = field(repr=False, default=None)

    def masks(self, p: PlannedPair) -> tuple[np.ndarray, np.ndarray]:
        """Flood and VH-only masks for a planned pair."""
        flat = np.zeros(self._rank.size, dtype=bool)
        flat[self._rank[: p.planted_px]] = True
        flood = flat.reshape(self.scenario.height, self.scenario.width)
        vh_only = np.zeros(flat.size, dtype=bool)
        chosen = self._rank[: p.planted_px]
        order = chosen[np.argsort(self._vh_key[chosen], kind="stable")]
        vh_only[order[: p.vh_only_px]] = True
        return flood, vh_only.reshape(flood.shape)

    def materialize(self, p: PlannedPair) -> tuple[ScenePair, Raster]:
        flood, vh_only = self.masks(p)
        return _pair_from_masks(self.scenario, flood, vh_only, p.seed, p.pre, p.post, not p.single_pol)

    def __iter__(self):
        for p in self.plan:
            yield (p, *self.materialize(p))

    def write(self, out_dir) -> Path:
        """Write every scene as FLR1 rasters plus ``manifest.csv``; returns the manifest path."""
        out_dir = Path(out_dir)
        scenes_dir = out_dir / "scenes"
        scenes_dir.mkdir(parents=True, exist_ok=True)
        entries = []
        for p, pair, truth in self:
            for scene in (pair.pre, pair.post):
                sid = scene.meta.scene_id
                vv = scenes_dir / f"{sid}_vv.flr"
                write_raster(scene.vv, vv)
                vh = None
                if scene.vh is not None:
                    vh = scenes_dir / f"{sid}_vh.flr"
                    write_raster(scene.vh, vh)
                entries.append(ManifestEntry(scene.meta, vv, vh))
            write_raster(truth, scenes_dir / f"{p.post.scene_id}_truth.flr")
        manifest = out_dir / "manifest.csv"
        write_manifest(entries, manifest, relative_to=out_dir)
        return manifest


def _month_value(model: DecadeModel, t: int, t_mid: float, month: int, year: int) -> float:
    years = (t - t_mid) / 12.0
    v = 1.0 + model.trend_pct_per_year / 100.0 * years + model.seasonal_amplitude * math.sin(
        2 * math.pi * (month - 1) / 12.0
    )
    if model.outlier_year is not None and year == model.outlier_year:
        v *= model.outlier_factor
    return model.base_fraction * v


def generate_decade(sc: SynthScenario, model: DecadeModel = DecadeModel()) -> DecadeArchive:
    """Plan a monthly archive of dated scene pairs.

    Every observation in a month plants the same flooded-pixel count. Pixels
    flood in a fixed susceptibility order (distance from a diagonal channel
    plus seeded jitter), so larger floods contain smaller ones.
    """
    months = month_range(model.start, model.end)
    t_mid = (len(months) - 1) / 2.0
    n_px = sc.width * sc.height
    master = np.random.SeedSequence([sc.seed, 2])
    rng = np.random.default_rng(master.spawn(1)[0])
    rows, cols = np.mgrid[0:sc.height, 0:sc.width]
    channel = np.abs(rows - cols * sc.height / max(sc.width, 1)) / max(sc.height, 1)
    jitter = rng.random((sc.height, sc.width)) * 0.05
    rank = np.argsort((channel + jitter).ravel(), kind="stable")
    vh_key = rng.random(n_px)
    noise = rng.normal(0.0, model.area_noise, len(months)) if model.area_noise > 0 else np.zeros(len(months))

    cutoff = datetime(model.single_pol_before.year, model.single_pol_before.month,
                      model.single_pol_before.day, tzinfo=timezone.utc)
    plan = []
    fractions = np.zeros(len(months))
    k = 0
    for t, (year, month) in enumerate(months):
        frac = max(_month_value(model, t, t_mid, month, year) * (1.0 + noise[t]), 0.0)
        fractions[t] = frac
        planted = min(int(round(frac * n_px)), n_px)
        n_obs = model.obs_per_month
        if model.reduced_from is not None and (year, month) >= model.reduced_from:
            n_obs = model.reduced_obs_per_month
        for j in range(n_obs):
            post_time = datetime(year, month, 1 + 7 * (j % 4), 3 + j // 4, 0, tzinfo=timezone.utc)
            single = post_time < cutoff and j < round(model.single_pol_share * n_obs)
            orbit = k % 175 + 1
            direction = "ascending" if k % 2 == 0 else "descending"
            pre_time = post_time - timedelta(days=sc.gap_days)
            pre = _meta(f"d{k:05d}a", pre_time, sc, not single, orbit, direction)
            post = _meta(f"d{k:05d}b", post_time, sc, not single, orbit, direction)
            vh_only = int(round(model.vh_only_fraction * planted))
            plan.append(PlannedPair(k, pre, post, planted, vh_only, (sc.seed, 3, k)))
            k += 1
    return DecadeArchive(sc, model, plan, months, fractions, rank, vh_key)


def decade_scenario(seed: int = 0, size: int = 48, speckle_sigma: float = 0.0) -> SynthScenario:
    """Small-grid scenario used for decade archives."""
    return SynthScenario(seed=seed, width=size, height=size, speckle_sigma=speckle_sigma)
