"""False-positive filtering, the static exclusion mask, buffering and smoothing."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, fields

import numpy as np

from .classifier import FloodCandidateMask
from .raster import Raster, require_same_grid

# ESA WorldCover class codes
TREE_COVER = 10
SHRUBLAND = 20
GRASSLAND = 30
CROPLAND = 40
BUILT_UP = 50
BARE_GROUND = 60
SNOW_ICE = 70
PERMANENT_WATER = 80
HERBACEOUS_WETLAND = 90
MANGROVES = 95
MOSS_LICHEN = 100

LAND_COVER_CLASSES = {
    TREE_COVER: "tree_cover",
    SHRUBLAND: "shrubland",
    GRASSLAND: "grassland",
    CROPLAND: "cropland",
    BUILT_UP: "built_up",
    BARE_GROUND: "bare_ground",
    SNOW_ICE: "snow_ice",
    PERMANENT_WATER: "permanent_water",
    HERBACEOUS_WETLAND: "herbaceous_wetland",
    MANGROVES: "mangroves",
    MOSS_LICHEN: "moss_lichen",
}
LAND_COVER_CODES = {name: code for code, name in LAND_COVER_CLASSES.items()}


class Reason(enum.IntFlag):
    """Bit flags shared by removal reasons and exclusion reasons."""

    STEEP_TERRAIN = 1
    BARE_GROUND = 2
    BUILT_UP = 4
    PERMANENT_WATER = 8
    LOW_SOIL_MOISTURE = 16
    LOW_TEMPERATURE = 32
    EXCLUDED_LAND_COVER = 64  # any other class in the exclude set


_CLASS_FLAGS = {
    BARE_GROUND: Reason.BARE_GROUND,
    BUILT_UP: Reason.BUILT_UP,
    PERMANENT_WATER: Reason.PERMANENT_WATER,
}


class MissingAuxPlaneError(ValueError):
    def __init__(self, plane: str):
        super().__init__(f"auxiliary plane {plane!r} is required but missing")
        self.plane = plane


@dataclass(frozen=True)
class AuxStack:
    slope: Raster | None = None          # degrees
    land_cover: Raster | None = None     # WorldCover codes
    soil_moisture: Raster | None = None  # m3/m3
    temperature: Raster | None = None    # kelvin
    elevation: Raster | None = None      # metres

    PLANES = ("slope", "land_cover", "soil_moisture", "temperature", "elevation")

    def __post_init__(self):
        present = [getattr(self, p) for p in self.PLANES if getattr(self, p) is not None]
        if len(present) > 1:
            require_same_grid(*present)
        if self.slope is not None and np.nanmin(self.slope.as_float(), initial=0.0) < 0:
            raise ValueError("slope must be >= 0")
        if self.soil_moisture is not None:
            sm = self.soil_moisture.as_float()
            if np.nanmin(sm, initial=0.0) < 0 or np.nanmax(sm, initial=0.0) > 1:
                raise ValueError("soil moisture must lie in [0, 1]")
        if self.temperature is not None and np.nanmin(self.temperature.as_float(), initial=1.0) <= 0:
            raise ValueError("temperature must be > 0 K")

    def require(self, *planes: str) -> None:
        for p in planes:
            if getattr(self, p) is None:
                raise MissingAuxPlaneError(p)

    def resampled(self, like: Raster) -> "AuxStack":
        from .raster import resample_nearest

        planes = {}
        for p in self.PLANES:
            r = getattr(self, p)
            if r is not None and not r.same_grid(like):
                r = resample_nearest(r, like.transform, like.width, like.height)
            planes[p] = r
        return AuxStack(**planes)


@dataclass(frozen=True)
class FilterConfig:
    max_slope_deg: float = 10.0
    min_soil_moisture: float = 0.10
    min_temperature_k: float = 275.15
    exclude_land_cover: frozenset = frozenset({BARE_GROUND, PERMANENT_WATER})
    slope_neighborhood_px: int = 2

    def __post_init__(self):
        object.__setattr__(self, "exclude_land_cover", frozenset(int(c) for c in self.exclude_land_cover))
        for name in ("max_slope_deg", "min_soil_moisture", "min_temperature_k"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        if self.slope_neighborhood_px < 0:
            raise ValueError("slope_neighborhood_px must be >= 0")

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, frozenset):
                value = ",".join(str(v) for v in sorted(value))
            lines.append(f"{f.name}={value}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "FilterConfig":
        return cls.from_mapping(parse_key_values(text))

    @classmethod
    def from_mapping(cls, values: dict) -> "FilterConfig":
        kwargs = {}
        names = {f.name for f in fields(cls)}
        for key, value in values.items():
            if key not in names:
                raise KeyError(f"unknown filter setting {key!r}")
            if key == "exclude_land_cover":
                if isinstance(value, str):
                    value = [_class_code(v) for v in value.split(",") if v.strip()]
                kwargs[key] = frozenset(value)
            elif key == "slope_neighborhood_px":
                kwargs[key] = int(value)
            else:
                kwargs[key] = float(value)
        return cls(**kwargs)


def _class_code(text: str) -> int:
    text = text.strip()
    if text in LAND_COVER_CODES:
        return LAND_COVER_CODES[text]
    return int(text)


def parse_key_values(text: str) -> dict[str, str]:
    """Flat ``key=value`` text; blank lines and ``#`` comments are skipped."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key=value, got {raw!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


@dataclass(frozen=True)
class ExclusionMask:
    mask: Raster
    reason: Raster


def _binary_positive(mask: Raster) -> np.ndarray:
    return (mask.pixels == 1) & mask.valid_mask()


def _compare(plane: Raster, threshold: float, op) -> np.ndarray:
    # Round the threshold to the plane's storage precision so a pixel stored
    # at exactly the threshold (e.g. float32 275.15) counts as equal to it.
    px = plane.pixels
    thr = np.float32(threshold) if px.dtype == np.float32 else threshold
    with np.errstate(invalid="ignore"):
        return op(px, thr) & plane.valid_mask()


def filter_false_positives(
    cand: FloodCandidateMask, aux: AuxStack, cfg: FilterConfig = FilterConfig()
) -> tuple[FloodCandidateMask, Raster]:
    """Drop candidates that fail any auxiliary rule.

    Returns the filtered mask and a byte raster of :class:`Reason` flags
    (zero for retained candidates and for non-candidates).
    """
    aux.require("slope", "land_cover", "soil_moisture", "temperature")
    require_same_grid(cand.mask, aux.slope)
    candidate = _binary_positive(cand.mask)

    reason = np.zeros(cand.mask.shape, dtype=np.uint8)
    reason |= np.where(_compare(aux.slope, cfg.max_slope_deg, np.greater), Reason.STEEP_TERRAIN, 0).astype(np.uint8)
    reason |= np.where(
        _compare(aux.soil_moisture, cfg.min_soil_moisture, np.less), Reason.LOW_SOIL_MOISTURE, 0
    ).astype(np.uint8)
    reason |= np.where(
        _compare(aux.temperature, cfg.min_temperature_k, np.less), Reason.LOW_TEMPERATURE, 0
    ).astype(np.uint8)
    lc = aux.land_cover.pixels
    lc_valid = aux.land_cover.valid_mask()
    for code in cfg.exclude_land_cover:
        flag = _CLASS_FLAGS.get(code, Reason.EXCLUDED_LAND_COVER)
        reason |= np.where((lc == code) & lc_valid, flag, 0).astype(np.uint8)
    reason[~candidate] = 0

    removed = reason != 0
    out = cand.mask.pixels.copy()
    out[removed] = 0
    filtered = FloodCandidateMask(cand.mask.replace(out), cand.probability, cand.threshold)
    return filtered, Raster(reason, cand.mask.transform, None)


def build_exclusion_mask(aux: AuxStack, cfg: FilterConfig = FilterConfig()) -> ExclusionMask:
    aux.require("slope", "land_cover")
    steep = dilate(_compare(aux.slope, cfg.max_slope_deg, np.greater), cfg.slope_neighborhood_px)
    lc = aux.land_cover.pixels
    lc_valid = aux.land_cover.valid_mask()
    reason = np.where(steep, Reason.STEEP_TERRAIN, 0).astype(np.uint8)
    reason |= np.where((lc == BARE_GROUND) & lc_valid, Reason.BARE_GROUND, 0).astype(np.uint8)
    reason |= np.where((lc == BUILT_UP) & lc_valid, Reason.BUILT_UP, 0).astype(np.uint8)
    t = aux.slope.transform
    return ExclusionMask(
        Raster((reason != 0).astype(np.uint8), t, None), Raster(reason, t, None)
    )


# -------------------------------------------------------------- morphology


def _window_count(a: np.ndarray, radius: int) -> np.ndarray:
    """Count of true values in the (2r+1)^2 window around each pixel, in-image only."""
    s = np.pad(np.cumsum(np.cumsum(a.astype(np.int64), axis=0), axis=1), ((1, 0), (1, 0)))
    h, w = a.shape
    r0 = np.clip(np.arange(h) - radius, 0, h)
    r1 = np.clip(np.arange(h) + radius + 1, 0, h)
    c0 = np.clip(np.arange(w) - radius, 0, w)
    c1 = np.clip(np.arange(w) + radius + 1, 0, w)
    return (
        s[r1][:, c1] - s[r0][:, c1] - s[r1][:, c0] + s[r0][:, c0]
    )


def dilate(a: np.ndarray, radius: int) -> np.ndarray:
    """Binary dilation of a boolean array by a (2r+1)x(2r+1) square."""
    a = np.asarray(a, dtype=bool)
    if radius < 0:
        raise ValueError("radius must be >= 0")
    if radius == 0 or not a.any():
        return a.copy()
    # separable running max: rows then columns
    out = a.copy()
    for axis in (0, 1):
        src = out
        out = src.copy()
        n = src.shape[axis]
        for shift in range(1, min(radius, n - 1) + 1):
            if axis == 0:
                out[shift:] |= src[:-shift]
                out[:-shift] |= src[shift:]
            else:
                out[:, shift:] |= src[:, :-shift]
                out[:, :-shift] |= src[:, shift:]
    return out


def buffer_mask(mask: Raster, radius_px: int) -> Raster:
    """Square-element dilation of the positive pixels of a binary raster.

    Nodata pixels stay nodata unless the buffer reaches them.
    """
    if radius_px < 0:
        raise ValueError("radius_px must be >= 0")
    pos = _binary_positive(mask)
    grown = dilate(pos, radius_px)
    out = mask.pixels.copy()
    out[grown] = 1
    return mask.replace(out)


def majority_smooth(mask: Raster, window: int) -> Raster:
    """Majority vote over a ``window`` x ``window`` neighbourhood.

    Only valid in-image pixels vote; an exact tie keeps the pixel's value.
    """
    if window < 1 or window % 2 == 0:
        raise ValueError("window must be odd and >= 1")
    if window == 1:
        return mask
    r = window // 2
    valid = mask.valid_mask()
    pos = _binary_positive(mask)
    n_pos = _window_count(pos, r)
    n_valid = _window_count(valid, r)
    twice = 2 * n_pos
    result = np.where(twice > n_valid, True, np.where(twice < n_valid, False, pos))
    out = mask.pixels.copy()
    out[valid] = result[valid].astype(out.dtype)
    return mask.replace(out)
