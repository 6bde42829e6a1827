"""Scene pairing rules and the four change-detection input features."""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from pathlib import Path

import numpy as np

from .raster import Raster, require_same_grid

# Backscatter below these levels (dB) is in the typical water range
VV_WATER_DB = -17.5
VH_WATER_DB = -22.5
WATER_THRESHOLDS_DB = {"VV": VV_WATER_DB, "VH": VH_WATER_DB}

MAX_PAIR_GAP = timedelta(days=30)

BINARY_NODATA = 255

MANIFEST_COLUMNS = ["scene_id", "acquisition_time", "pass_direction", "relative_orbit", "vv_path", "vh_path"]


class PassDirection(str, enum.Enum):
    ASCENDING = "ascending"
    DESCENDING = "descending"


@dataclass(frozen=True)
class SceneMeta:
    scene_id: str
    acquisition_time: datetime
    pass_direction: PassDirection
    relative_orbit: int
    polarizations: frozenset = frozenset({"VV", "VH"})

    def __post_init__(self):
        pols = frozenset(self.polarizations)
        if not pols:
            raise ValueError(f"scene {self.scene_id}: polarizations must be non-empty")
        unknown = pols - {"VV", "VH"}
        if unknown:
            raise ValueError(f"scene {self.scene_id}: unknown polarizations {sorted(unknown)}")
        object.__setattr__(self, "polarizations", pols)
        object.__setattr__(self, "pass_direction", PassDirection(self.pass_direction))
        t = self.acquisition_time
        if t.tzinfo is None:
            t = t.replace(tzinfo=timezone.utc)
        object.__setattr__(self, "acquisition_time", t.astimezone(timezone.utc))

    @property
    def single_pol(self) -> bool:
        return "VH" not in self.polarizations


@dataclass(frozen=True)
class PairingVerdict:
    accepted: bool
    rule: str | None = None  # "geometry" or "temporal" when rejected
    reason: str = ""

    def __bool__(self):
        return self.accepted


def validate_pair(pre: SceneMeta, post: SceneMeta) -> PairingVerdict:
    if pre.pass_direction != post.pass_direction:
        return PairingVerdict(
            False, "geometry",
            f"pass direction {pre.pass_direction.value} != {post.pass_direction.value}",
        )
    if pre.relative_orbit != post.relative_orbit:
        return PairingVerdict(
            False, "geometry", f"relative orbit {pre.relative_orbit} != {post.relative_orbit}"
        )
    gap = post.acquisition_time - pre.acquisition_time
    if gap <= timedelta(0):
        return PairingVerdict(False, "temporal", f"post scene is not after pre scene (gap {gap})")
    if gap > MAX_PAIR_GAP:
        return PairingVerdict(False, "temporal", f"gap {gap} exceeds {MAX_PAIR_GAP.days} days")
    return PairingVerdict(True)


def select_pairs(scenes) -> list[tuple[SceneMeta, SceneMeta]]:
    """Pair every scene with its nearest admissible predecessor.

    Scenes without an admissible predecessor are not used as post scenes.
    Output is ordered by post acquisition time, then scene id.
    """
    ordered = sorted(scenes, key=lambda s: (s.acquisition_time, s.scene_id))
    pairs = []
    for i, post in enumerate(ordered):
        best = None
        for pre in ordered[:i]:
            if validate_pair(pre, post) and (
                best is None or pre.acquisition_time >= best.acquisition_time
            ):
                best = pre
        if best is not None:
            pairs.append((best, post))
    return pairs


def is_water_db(amplitude, pol: str):
    """True where backscatter is strictly below the water threshold for ``pol``.

    Accepts scalars or arrays; NaN is never water.
    """
    threshold = WATER_THRESHOLDS_DB[pol.upper()]
    with np.errstate(invalid="ignore"):
        result = np.asarray(amplitude) < threshold
    return bool(result) if result.ndim == 0 else result


@dataclass(frozen=True)
class Scene:
    meta: SceneMeta
    vv: Raster
    vh: Raster | None = None


@dataclass(frozen=True)
class ScenePair:
    pre: Scene
    post: Scene

    def __post_init__(self):
        verdict = validate_pair(self.pre.meta, self.post.meta)
        if not verdict:
            raise ValueError(f"invalid scene pair: {verdict.reason}")
        rasters = [r for s in (self.pre, self.post) for r in (s.vv, s.vh) if r is not None]
        require_same_grid(*rasters)

    @property
    def dual_pol(self) -> bool:
        return self.pre.vh is not None and self.post.vh is not None


@dataclass(frozen=True)
class FeatureStack:
    """Input planes, ordered as the network expects them."""

    change_to_water_vv: Raster
    change_to_water_vh: Raster
    delta_vv: Raster
    delta_vh: Raster

    def planes(self) -> list[Raster]:
        return [self.change_to_water_vv, self.change_to_water_vh, self.delta_vv, self.delta_vh]

    def as_array(self) -> np.ndarray:
        """(4, height, width) float64 array with nodata set to zero."""
        out = np.zeros((4,) + self.change_to_water_vv.shape)
        for i, plane in enumerate(self.planes()):
            out[i] = np.where(plane.valid_mask(), plane.pixels, 0.0)
        return out

    @property
    def has_vh(self) -> bool:
        return bool(self.change_to_water_vh.valid_mask().any())


def _polarization_features(pre: Raster, post: Raster, pol: str):
    a = pre.as_float()
    b = post.as_float()
    valid = ~(np.isnan(a) | np.isnan(b))
    change = (~is_water_db(a, pol)) & is_water_db(b, pol)
    binary = np.where(valid, change.astype(np.uint8), BINARY_NODATA).astype(np.uint8)
    delta = np.where(valid, b - a, np.nan).astype(np.float32)
    return (
        Raster(binary, pre.transform, BINARY_NODATA),
        Raster(delta, pre.transform, float("nan")),
    )


def compute_features(p: ScenePair) -> FeatureStack:
    """Per-polarization change-to-water indicators and post - pre deltas.

    Missing VH data yields VH planes that are entirely nodata.
    """
    change_vv, delta_vv = _polarization_features(p.pre.vv, p.post.vv, "VV")
    if p.dual_pol:
        change_vh, delta_vh = _polarization_features(p.pre.vh, p.post.vh, "VH")
    else:
        t = p.pre.vv.transform
        shape = p.pre.vv.shape
        change_vh = Raster(np.full(shape, BINARY_NODATA, np.uint8), t, BINARY_NODATA)
        delta_vh = Raster(np.full(shape, np.nan, np.float32), t, float("nan"))
    return FeatureStack(change_vv, change_vh, delta_vv, delta_vh)


# ----------------------------------------------------------------- manifests


class ManifestError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        super().__init__(f"line {line}: {message}" if line is not None else message)
        self.line = line


@dataclass(frozen=True)
class ManifestEntry:
    meta: SceneMeta
    vv_path: Path
    vh_path: Path | None = None
    line: int | None = field(default=None, compare=False)


def parse_time(text: str) -> datetime:
    text = text.strip()
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    t = datetime.fromisoformat(text)
    if t.tzinfo is None:
        t = t.replace(tzinfo=timezone.utc)
    return t.astimezone(timezone.utc)


def format_time(t: datetime) -> str:
    return t.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def read_manifest(path) -> list[ManifestEntry]:
    """Read a scene manifest; relative raster paths resolve against its directory."""
    path = Path(path)
    base = path.parent
    entries = []
    seen = set()
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ManifestError("empty manifest", 1)
        if [h.strip() for h in header] != MANIFEST_COLUMNS:
            raise ManifestError(f"expected header {','.join(MANIFEST_COLUMNS)}", 1)
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(MANIFEST_COLUMNS):
                raise ManifestError(f"expected {len(MANIFEST_COLUMNS)} fields, got {len(row)}", lineno)
            scene_id, when, direction, orbit, vv, vh = (c.strip() for c in row)
            if not scene_id:
                raise ManifestError("empty scene_id", lineno)
            if scene_id in seen:
                raise ManifestError(f"duplicate scene_id {scene_id!r}", lineno)
            seen.add(scene_id)
            try:
                t = parse_time(when)
            except ValueError:
                raise ManifestError(f"bad acquisition_time {when!r}", lineno) from None
            try:
                direction = PassDirection(direction.lower())
            except ValueError:
                raise ManifestError(f"bad pass_direction {direction!r}", lineno) from None
            try:
                orbit = int(orbit)
            except ValueError:
                raise ManifestError(f"bad relative_orbit {orbit!r}", lineno) from None
            if not vv:
                raise ManifestError("vv_path is required", lineno)
            pols = {"VV", "VH"} if vh else {"VV"}
            meta = SceneMeta(scene_id, t, direction, orbit, frozenset(pols))
            entries.append(
                ManifestEntry(meta, base / vv, base / vh if vh else None, lineno)
            )
    return entries


def write_manifest(entries, path, relative_to=None) -> None:
    """Write manifest rows; paths are made relative to ``relative_to`` when given."""

    def rel(p):
        if p is None:
            return ""
        p = Path(p)
        if relative_to is not None:
            try:
                return p.relative_to(relative_to).as_posix()
            except ValueError:
                pass
        return p.as_posix()

    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(MANIFEST_COLUMNS)
        for e in entries:
            writer.writerow([
                e.meta.scene_id, format_time(e.meta.acquisition_time),
                e.meta.pass_direction.value, e.meta.relative_orbit,
                rel(e.vv_path), rel(e.vh_path),
            ])
