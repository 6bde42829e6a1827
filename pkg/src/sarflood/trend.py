"""
Monthly flood-extent series and their trends.

Series are built from per-observation flooded areas, normalised by the
number of scene-pair evaluations in each month. The trend is an OLS fit of
the normalised series on an intercept, a linear month index and eleven
month-of-year dummies (January is the base level).
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace
from datetime import date
from pathlib import Path

import numpy as np
from scipy.special import betainc

from .postproc import PERMANENT_WATER
from .raster import Raster, pixel_center_lonlat

SCENARIOS = ("all", "drop_2022", "drop_2022_and_pre_jun2017")
N_DESIGN = 13  # intercept, slope, 11 month dummies
EARTH_RADIUS_M = 6371008.8

OBSERVATION_COLUMNS = [
    "date", "scene_id", "single_pol", "flooded_ha", "lon_min", "lat_min", "lon_max", "lat_max",
]
TREND_COLUMNS = ["scenario", "slope", "stderr", "p_value", "annual_pct", "n_months"]
TILE_COLUMNS = ["tile_lon", "tile_lat", "slope", "p_value", "class"]
DECOMPOSITION_COLUMNS = ["year", "month", "observed", "trend", "seasonal", "residual"]


class InsufficientDataError(ValueError):
    pass


class RankDeficientError(ValueError):
    pass


Month = tuple[int, int]


def month_range(start: Month, end: Month) -> list[Month]:
    out = []
    y, m = start
    while (y, m) <= end:
        out.append((y, m))
        y, m = (y + 1, 1) if m == 12 else (y, m + 1)
    return out


@dataclass(frozen=True)
class Observation:
    """One scene-pair evaluation: its date, polarization mode and detected area."""

    date: date
    scene_id: str
    single_pol: bool
    flooded_ha: float
    footprint: tuple[float, float, float, float] | None = None  # lon/lat bbox

    @property
    def month(self) -> Month:
        return (self.date.year, self.date.month)


def observations_from_records(records, scenes, pixel_area_ha: float, footprints=None) -> list[Observation]:
    """Turn detection records into per-observation flooded areas.

    ``scenes`` lists the post-scene metadata of every evaluated pair, so
    pairs without any detection still count as observations.
    """
    counts: dict[str, int] = {}
    for r in records:
        if not r.filtered:
            counts[r.scene_id] = counts.get(r.scene_id, 0) + 1
    footprints = footprints or {}
    return [
        Observation(
            s.acquisition_time.date(), s.scene_id, s.single_pol,
            counts.get(s.scene_id, 0) * pixel_area_ha, footprints.get(s.scene_id),
        )
        for s in scenes
    ]


@dataclass(frozen=True)
class MonthlySeries:
    months: list
    flooded_area: np.ndarray
    observation_count: np.ndarray
    single_pol_count: np.ndarray
    single_pol_area: np.ndarray
    correction_factor: float = 1.0
    interpolated: np.ndarray | None = None

    @property
    def normalized(self) -> np.ndarray:
        """Hectares per observation; NaN marks months without observations."""
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(
                self.observation_count > 0, self.flooded_area / self.observation_count, np.nan
            )

    @property
    def single_pol_fraction(self) -> np.ndarray:
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(
                self.observation_count > 0, self.single_pol_count / self.observation_count, np.nan
            )

    @property
    def missing(self) -> np.ndarray:
        return self.observation_count == 0

    def __len__(self):
        return len(self.months)


def build_series(observations, start: Month | None = None, end: Month | None = None) -> MonthlySeries:
    observations = list(observations)
    if start is None or end is None:
        if not observations:
            raise InsufficientDataError("no observations and no calendar given")
        months_seen = sorted(o.month for o in observations)
        start = start or months_seen[0]
        end = end or months_seen[-1]
    months = month_range(start, end)
    index = {m: i for i, m in enumerate(months)}
    n = len(months)
    area = np.zeros(n)
    count = np.zeros(n, dtype=np.int64)
    single_count = np.zeros(n, dtype=np.int64)
    single_area = np.zeros(n)
    for o in observations:
        i = index.get(o.month)
        if i is None:
            continue
        area[i] += o.flooded_ha
        count[i] += 1
        if o.single_pol:
            single_count[i] += 1
            single_area[i] += o.flooded_ha
    return MonthlySeries(months, area, count, single_count, single_area)


def polarization_correction(s: MonthlySeries, calibration_window: tuple[Month, Month]) -> MonthlySeries:
    """Rescale single-polarization contributions to the dual-polarization detection rate.

    The factor is the ratio of mean per-observation area of dual-pol to
    single-pol evaluations inside the calibration window (inclusive months).
    """
    if not s.single_pol_count.any():
        return s
    lo, hi = calibration_window
    in_win = np.array([lo <= m <= hi for m in s.months])
    single_n = s.single_pol_count[in_win].sum()
    dual_n = (s.observation_count - s.single_pol_count)[in_win].sum()
    if single_n == 0 or dual_n == 0:
        raise InsufficientDataError(
            "calibration window must contain both single- and dual-polarization observations"
        )
    single_rate = s.single_pol_area[in_win].sum() / single_n
    dual_rate = (s.flooded_area - s.single_pol_area)[in_win].sum() / dual_n
    if single_rate == 0:
        raise InsufficientDataError("single-polarization observations detected nothing in the window")
    factor = float(dual_rate / single_rate)
    dual_area = s.flooded_area - s.single_pol_area
    corrected_single = s.single_pol_area * factor
    return replace(
        s,
        flooded_area=dual_area + corrected_single,
        single_pol_area=corrected_single,
        correction_factor=s.correction_factor * factor,
    )


# ---------------------------------------------------------- decomposition


@dataclass(frozen=True)
class Decomposition:
    months: list
    observed: np.ndarray
    trend: np.ndarray      # NaN where the centred average is undefined
    seasonal: np.ndarray
    residual: np.ndarray
    interpolated: np.ndarray
    pattern: np.ndarray    # one value per position in the period


def _interpolate_missing(y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    missing = np.isnan(y)
    if missing.all():
        raise InsufficientDataError("series has no observed months")
    if missing.any():
        idx = np.arange(y.size)
        y = y.copy()
        y[missing] = np.interp(idx[missing], idx[~missing], y[~missing])
    return y, missing


def _zero_sum(pattern: np.ndarray) -> np.ndarray:
    # Quantise onto a grid fine enough to be invisible but coarse enough that
    # every partial sum is exact, then close the cycle with the last entry.
    p = pattern - pattern.mean()
    peak = np.abs(p).max()
    if peak == 0:
        return np.zeros_like(p)
    quantum = 2.0 ** (math.frexp(peak)[1] - 40)
    p = np.round(p / quantum) * quantum
    p[-1] = -p[:-1].sum()
    return p


def seasonal_decompose(s: MonthlySeries | np.ndarray, period: int = 12, months=None) -> Decomposition:
    """Classical additive decomposition with a centred moving-average trend.

    Missing months are linearly interpolated first and flagged.
    """
    if isinstance(s, MonthlySeries):
        y = s.normalized
        months = s.months
    else:
        y = np.asarray(s, dtype=float)
        months = months or [(i // 12, i % 12 + 1) for i in range(y.size)]
    n = y.size
    if n < 2 * period:
        raise InsufficientDataError(f"need at least {2 * period} months, got {n}")
    y, interpolated = _interpolate_missing(y)

    if period % 2 == 0:
        weights = np.r_[0.5, np.ones(period - 1), 0.5] / period
    else:
        weights = np.ones(period) / period
    half = len(weights) // 2
    trend = np.full(n, np.nan)
    trend[half:n - half] = np.convolve(y, weights, mode="valid")

    detrended = y - trend
    pos = np.arange(n) % period
    pattern = np.array([np.nanmean(detrended[pos == k]) for k in range(period)])
    pattern = _zero_sum(pattern)
    seasonal = pattern[pos]
    residual = y - (trend + seasonal)
    return Decomposition(list(months), y, trend, seasonal, residual, interpolated, pattern)


# -------------------------------------------------------------- OLS trend


def student_t_sf(t: float, df: float) -> float:
    """Upper tail P(T > t) of Student's t via the regularized incomplete beta."""
    if math.isinf(t):
        return 0.0 if t > 0 else 1.0
    tail = 0.5 * float(betainc(df / 2.0, 0.5, df / (df + t * t)))
    return tail if t >= 0 else 1.0 - tail


@dataclass(frozen=True)
class TrendResult:
    slope: float
    intercept: float
    monthly_coefficients: np.ndarray
    slope_stderr: float
    p_value: float
    annual_pct: float
    scenario: str
    n_months: int
    coefficients: np.ndarray = field(repr=False, default=None)
    residuals: np.ndarray = field(repr=False, default=None)
    design: np.ndarray = field(repr=False, default=None)


def scenario_mask(months, scenario: str) -> np.ndarray:
    if scenario not in SCENARIOS:
        raise ValueError(f"unknown scenario {scenario!r}; choose from {', '.join(SCENARIOS)}")
    keep = np.ones(len(months), dtype=bool)
    if scenario in ("drop_2022", "drop_2022_and_pre_jun2017"):
        keep &= np.array([y != 2022 for y, _ in months])
    if scenario == "drop_2022_and_pre_jun2017":
        keep &= np.array([(y, m) >= (2017, 6) for y, m in months])
    return keep


def design_matrix(months, t: np.ndarray) -> np.ndarray:
    X = np.zeros((len(months), N_DESIGN))
    X[:, 0] = 1.0
    X[:, 1] = t
    for i, (_, m) in enumerate(months):
        if m > 1:
            X[i, m] = 1.0  # columns 2..12 hold February..December
    return X


def ols(X: np.ndarray, y: np.ndarray):
    """Coefficients, residuals and coefficient covariance for a full-rank design."""
    n, k = X.shape
    if n <= k:
        raise InsufficientDataError(f"need more than {k} observations, got {n}")
    if np.linalg.matrix_rank(X) < k:
        raise RankDeficientError("design matrix is rank deficient")
    q, r = np.linalg.qr(X)
    beta = np.linalg.solve(r, q.T @ y)
    resid = y - X @ beta
    sigma2 = float(resid @ resid) / (n - k)
    r_inv = np.linalg.inv(r)
    cov = (r_inv @ r_inv.T) * sigma2
    return beta, resid, cov


def fit_trend(s: MonthlySeries, scenario: str = "all") -> TrendResult:
    """Fit normalised area ~ 1 + month index + month-of-year dummies.

    Months without observations and months excluded by ``scenario`` are
    left out; the month index keeps its position in the full series.
    """
    y_all = s.normalized
    keep = scenario_mask(s.months, scenario) & ~np.isnan(y_all)
    months = [m for m, k in zip(s.months, keep) if k]
    t = np.arange(len(s.months), dtype=float)[keep]
    y = y_all[keep]
    X = design_matrix(months, t)
    beta, resid, cov = ols(X, y)
    n = len(y)
    df = n - N_DESIGN
    slope = float(beta[1])
    stderr = float(math.sqrt(max(cov[1, 1], 0.0)))
    if stderr > 0:
        p = 2.0 * student_t_sf(abs(slope) / stderr, df)
    else:
        p = 0.0 if slope != 0 else 1.0
    mean = float(y.mean())
    annual = 100.0 * 12.0 * slope / mean if mean != 0 else math.nan
    return TrendResult(
        slope=slope, intercept=float(beta[0]), monthly_coefficients=beta[2:].copy(),
        slope_stderr=stderr, p_value=min(max(p, 0.0), 1.0), annual_pct=annual,
        scenario=scenario, n_months=n, coefficients=beta, residuals=resid, design=X,
    )


# ------------------------------------------------------------ tile trends


@dataclass(frozen=True)
class TileTrend:
    tile: tuple[int, int]
    tile_lon: float
    tile_lat: float
    slope: float
    p_value: float
    net_change_pct: float
    magnitude_class: str
    land_area_estimated: bool = False


def tile_index(lon, lat, tile_deg: float = 3.0):
    return (
        np.floor((np.asarray(lon) + 180.0) / tile_deg).astype(int),
        np.floor((np.asarray(lat) + 90.0) / tile_deg).astype(int),
    )


def tile_area_ha(ix: int, iy: int, tile_deg: float = 3.0) -> float:
    """Area of a lon/lat cell on the authalic sphere, in hectares."""
    lat0 = math.radians(iy * tile_deg - 90.0)
    lat1 = math.radians(min((iy + 1) * tile_deg - 90.0, 90.0))
    dlon = math.radians(tile_deg)
    return EARTH_RADIUS_M**2 * dlon * (math.sin(lat1) - math.sin(lat0)) / 1e4


def _land_fractions(land_cover: Raster, tile_deg: float) -> dict:
    lon, lat = pixel_center_lonlat(land_cover)
    ix, iy = tile_index(lon, lat, tile_deg)
    valid = land_cover.valid_mask()
    land = (land_cover.pixels != PERMANENT_WATER) & valid
    out = {}
    for key in set(zip(ix[valid].ravel().tolist(), iy[valid].ravel().tolist())):
        sel = (ix == key[0]) & (iy == key[1]) & valid
        out[key] = np.count_nonzero(land & sel) / np.count_nonzero(sel)
    return out


def _observes(o: Observation, key, tile_deg: float) -> bool:
    if o.footprint is None:
        return True
    lon0 = key[0] * tile_deg - 180.0
    lat0 = key[1] * tile_deg - 90.0
    x0, y0, x1, y1 = o.footprint
    return x0 < lon0 + tile_deg and x1 >= lon0 and y0 < lat0 + tile_deg and y1 >= lat0


def classify_magnitude(slope: float, net_pct: float, p_value: float, p_cutoff: float,
                       moderate_band: float, large_band: float) -> str:
    if not math.isfinite(net_pct) or p_value > p_cutoff or net_pct < moderate_band:
        return "filtered"
    size = "large" if net_pct >= large_band else "moderate"
    return f"{size}_{'increase' if slope > 0 else 'decrease'}"


def tile_trends(
    records,
    observations,
    pixel_area_ha: float,
    tile_deg: float = 3.0,
    p_cutoff: float = 0.2,
    moderate_band: float = 1.0,
    large_band: float = 2.0,
    scenario: str = "all",
    basis: str = "period",
    land_area_ha: dict | None = None,
    land_cover: Raster | None = None,
    start: Month | None = None,
    end: Month | None = None,
) -> list[TileTrend]:
    """Trend per lon/lat tile, classified by net change relative to tile land area.

    Net change is |slope| times the number of fitted months (``basis="period"``)
    or |slope| alone (``basis="monthly"``), as a percent of the tile's land
    area. Tiles with too little data come back as ``filtered``.
    """
    if basis not in ("period", "monthly"):
        raise ValueError("basis must be 'period' or 'monthly'")
    observations = list(observations)
    obs_by_id = {o.scene_id: o for o in observations}
    kept = [r for r in records if not r.filtered]
    per_tile: dict[tuple[int, int], dict[str, int]] = {}
    if kept:
        ix, iy = tile_index([r.lon for r in kept], [r.lat for r in kept], tile_deg)
        for r, a, b in zip(kept, ix.tolist(), iy.tolist()):
            d = per_tile.setdefault((a, b), {})
            d[r.scene_id] = d.get(r.scene_id, 0) + 1
    if start is None or end is None:
        months = sorted(o.month for o in observations)
        if months:
            start = start or months[0]
            end = end or months[-1]
    fractions = _land_fractions(land_cover, tile_deg) if land_cover is not None else {}
    tiles = set(per_tile) | set(land_area_ha or {})

    out = []
    for key in sorted(tiles):
        counts = per_tile.get(key, {})
        tile_obs = [
            replace(o, flooded_ha=counts.get(o.scene_id, 0) * pixel_area_ha)
            for o in observations
            if _observes(o, key, tile_deg) or o.scene_id in counts
        ]
        missing_ids = set(counts) - set(obs_by_id)
        if missing_ids:
            raise ValueError(f"records reference unknown observations: {sorted(missing_ids)[:3]}")
        estimated = False
        if land_area_ha and key in land_area_ha:
            area = float(land_area_ha[key])
        elif key in fractions:
            area = tile_area_ha(*key, tile_deg) * fractions[key]
        else:
            area = tile_area_ha(*key, tile_deg)
            estimated = True
        lon0 = key[0] * tile_deg - 180.0
        lat0 = key[1] * tile_deg - 90.0
        try:
            if start is None:
                raise InsufficientDataError("no observations")
            res = fit_trend(build_series(tile_obs, start, end), scenario)
        except (InsufficientDataError, RankDeficientError):
            out.append(TileTrend(key, lon0, lat0, math.nan, math.nan, math.nan, "filtered", estimated))
            continue
        span = res.n_months if basis == "period" else 1
        net = 100.0 * abs(res.slope) * span / area if area > 0 else math.nan
        cls = classify_magnitude(res.slope, net, res.p_value, p_cutoff, moderate_band, large_band)
        out.append(TileTrend(key, lon0, lat0, res.slope, res.p_value, net, cls, estimated))
    return out


# ------------------------------------------------------------------- CSV


def _f(v: float) -> str:
    return repr(float(v))


def observations_to_csv(observations) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(OBSERVATION_COLUMNS)
    for o in observations:
        fp = o.footprint if o.footprint is not None else ("", "", "", "")
        w.writerow([
            o.date.isoformat(), o.scene_id, "true" if o.single_pol else "false", _f(o.flooded_ha),
            *(v if v == "" else _f(v) for v in fp),
        ])
    return buf.getvalue()


def observations_from_csv(text: str) -> list[Observation]:
    reader = csv.reader(io.StringIO(text))
    if next(reader, None) != OBSERVATION_COLUMNS:
        raise ValueError(f"expected observations header {','.join(OBSERVATION_COLUMNS)}")
    out = []
    for row in reader:
        if not row:
            continue
        d, sid, sp, ha, *fp = row
        footprint = None if all(v == "" for v in fp) else tuple(float(v) for v in fp)
        out.append(Observation(date.fromisoformat(d), sid, sp == "true", float(ha), footprint))
    return out


def write_observations(observations, path) -> None:
    Path(path).write_text(observations_to_csv(observations), encoding="utf-8")


def read_observations(path) -> list[Observation]:
    return observations_from_csv(Path(path).read_text(encoding="utf-8"))


def trend_report_csv(results) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TREND_COLUMNS)
    for r in results:
        w.writerow([r.scenario, _f(r.slope), _f(r.slope_stderr), _f(r.p_value), _f(r.annual_pct), r.n_months])
    return buf.getvalue()


def parse_trend_report(text: str) -> list[dict]:
    reader = csv.DictReader(io.StringIO(text))
    if reader.fieldnames != TREND_COLUMNS:
        raise ValueError(f"expected trend header {','.join(TREND_COLUMNS)}")
    return [
        {"scenario": row["scenario"], **{k: float(row[k]) for k in TREND_COLUMNS[1:5]},
         "n_months": int(row["n_months"])}
        for row in reader
    ]


def tile_trends_csv(tiles) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TILE_COLUMNS)
    for t in tiles:
        w.writerow([_f(t.tile_lon), _f(t.tile_lat), _f(t.slope), _f(t.p_value), t.magnitude_class])
    return buf.getvalue()


def decomposition_csv(d: Decomposition) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(DECOMPOSITION_COLUMNS)
    for (y, m), o, t, s, r in zip(d.months, d.observed, d.trend, d.seasonal, d.residual):
        w.writerow([y, m, _f(o), "" if math.isnan(t) else _f(t), _f(s), "" if math.isnan(r) else _f(r)])
    return buf.getvalue()
