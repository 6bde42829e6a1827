"""
Command-line pipeline.

Every subcommand reads and writes plain files and leaves a
``run_manifest.txt`` (flat key=value with sha-256 digests) in its output
directory.

Exit codes:
    0  success
    1  unexpected error
    2  invalid arguments, manifest or config
    3  grid or CRS mismatch between inputs
    4  malformed raster file
    5  insufficient data or undefined statistic
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import logging
import sys
import time
from dataclasses import asdict
from datetime import date, datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .aggregate import (
    coarsen,
    compose,
    impact_from_csv,
    impact_to_csv,
    overlay_impact,
    read_records,
    read_zones,
    records_from_csv,
    records_to_csv,
    emit_records,
)
from .classifier import RuleConfig, classify_rule, decision_threshold_sweep, infer, load_weights
from .features import (
    ManifestError,
    Scene,
    ScenePair,
    compute_features,
    read_manifest,
    select_pairs,
)
from .metrics import UndefinedRateError, confusion, gsw_flood_prone, metrics_from_counts, new_area_pct, overlap_stats
from .postproc import (
    LAND_COVER_CODES,
    AuxStack,
    FilterConfig,
    build_exclusion_mask,
    buffer_mask,
    filter_false_positives,
    majority_smooth,
    parse_key_values,
)
from .raster import (
    CRSMismatchError,
    GridMismatchError,
    Raster,
    RasterFormatError,
    decode_raster,
    encode_raster,
    pixel_area_hectares,
    read_raster,
    to_lonlat,
    write_raster,
)
from .trend import (
    SCENARIOS,
    InsufficientDataError,
    Observation,
    RankDeficientError,
    build_series,
    decomposition_csv,
    fit_trend,
    observations_from_csv,
    observations_to_csv,
    parse_trend_report,
    polarization_correction,
    read_observations,
    seasonal_decompose,
    tile_trends,
    tile_trends_csv,
    trend_report_csv,
)

log = logging.getLogger("sarflood")

EXIT_OK, EXIT_ERROR, EXIT_USAGE, EXIT_GRID, EXIT_FORMAT, EXIT_DATA = 0, 1, 2, 3, 4, 5
AUX_FILES = {p: f"{p}.flr" for p in AuxStack.PLANES}
MANIFEST_NAME = "run_manifest.txt"
VOLATILE_KEYS = ("started_utc", "wall_time_s")


class UsageError(Exception):
    pass


# ---------------------------------------------------------------- helpers


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _verify_output(path: Path) -> None:
    """Re-parse an output file and check it re-serializes to the same bytes."""
    data = path.read_bytes()
    if path.suffix == ".flr":
        ok = encode_raster(decode_raster(data)) == data
    elif path.name == "detections.csv":
        ok = records_to_csv(records_from_csv(data.decode())) == data.decode()
    elif path.name == "observations.csv":
        ok = observations_to_csv(observations_from_csv(data.decode())) == data.decode()
    elif path.name == "impact.csv":
        ok = impact_to_csv(impact_from_csv(data.decode())) == data.decode()
    elif path.suffix == ".csv":
        rows = list(csv.reader(io.StringIO(data.decode())))
        buf = io.StringIO()
        csv.writer(buf, lineterminator="\n").writerows(rows)
        ok = buf.getvalue() == data.decode()
        if ok and path.name == "trend_report.csv":
            parse_trend_report(data.decode())
    else:
        ok = True
    if not ok:
        raise RuntimeError(f"output {path} does not round-trip")


class Run:
    """Collects config, inputs and outputs of one subcommand for its manifest."""

    def __init__(self, command: str, out_dir: Path):
        self.command = command
        self.out_dir = out_dir
        self.config: dict[str, object] = {}
        self.inputs: list[Path] = []
        self.outputs: list[Path] = []
        self.started = time.time()
        out_dir.mkdir(parents=True, exist_ok=True)

    def input(self, path) -> Path:
        path = Path(path)
        if not path.exists():
            raise UsageError(f"input not found: {path}")
        self.inputs.append(path)
        return path

    def output(self, name: str) -> Path:
        path = self.out_dir / name
        path.parent.mkdir(parents=True, exist_ok=True)
        self.outputs.append(path)
        return path

    def write_raster(self, r: Raster, name: str) -> Path:
        path = self.output(name)
        write_raster(r, path)
        return path

    def write_text(self, text: str, name: str) -> Path:
        path = self.output(name)
        path.write_text(text, encoding="utf-8")
        return path

    def finish(self) -> Path:
        for p in self.outputs:
            _verify_output(p)
        lines = [
            f"command={self.command}",
            f"tool_version={__version__}",
            f"started_utc={datetime.fromtimestamp(self.started, timezone.utc).strftime('%Y-%m-%dT%H:%M:%SZ')}",
            f"wall_time_s={time.time() - self.started:.3f}",
        ]
        for key in sorted(self.config):
            lines.append(f"config.{key}={self.config[key]}")
        for i, p in enumerate(self.inputs):
            lines.append(f"input.{i}.path={p.as_posix()}")
            lines.append(f"input.{i}.sha256={sha256_file(p)}")
        for i, p in enumerate(self.outputs):
            lines.append(f"output.{i}.path={p.relative_to(self.out_dir).as_posix()}")
            lines.append(f"output.{i}.sha256={sha256_file(p)}")
        path = self.out_dir / MANIFEST_NAME
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        return path


def read_run_manifest(path) -> dict[str, str]:
    return parse_key_values(Path(path).read_text(encoding="utf-8"))


def load_config(path) -> dict[str, str]:
    if path is None:
        return {}
    try:
        return parse_key_values(Path(path).read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise UsageError(f"bad config {path}: {exc}") from None


def _setting(args, cfg: dict, name: str, default, cast=str):
    """Flag value if given, else config file, else default."""
    value = getattr(args, name, None)
    if value is not None:
        return value
    if name in cfg:
        try:
            return cast(cfg[name])
        except ValueError:
            raise UsageError(f"bad config value {name}={cfg[name]!r}") from None
    return default


def _bool(text: str) -> bool:
    if text.lower() in ("true", "1", "yes"):
        return True
    if text.lower() in ("false", "0", "no"):
        return False
    raise ValueError(text)


def _filter_config(cfg: dict) -> FilterConfig:
    keys = {"max_slope_deg", "min_soil_moisture", "min_temperature_k", "exclude_land_cover", "slope_neighborhood_px"}
    try:
        return FilterConfig.from_mapping({k: v for k, v in cfg.items() if k in keys})
    except (KeyError, ValueError) as exc:
        raise UsageError(f"bad filter config: {exc}") from None


def _record_filter_config(run: Run, fc: FilterConfig) -> None:
    for k, v in parse_key_values(fc.to_text()).items():
        run.config[k] = v


def load_aux(run: Run, aux_dir, like: Raster | None = None, required=()) -> AuxStack:
    aux_dir = Path(aux_dir)
    planes = {}
    for plane, fname in AUX_FILES.items():
        path = aux_dir / fname
        if path.exists():
            planes[plane] = read_raster(run.input(path))
        elif plane in required:
            raise UsageError(f"auxiliary plane {plane!r} missing: expected {path}")
    aux = AuxStack(**planes)
    return aux.resampled(like) if like is not None else aux


def _parse_month(text: str):
    y, m = text.split("-")
    return int(y), int(m)


def _footprint(r: Raster):
    t = r.transform
    xs, ys = t.pixel_to_world(np.array([0, r.width, 0, r.width]), np.array([0, 0, r.height, r.height]))
    lon, lat = to_lonlat(xs, ys, t.crs_code)
    return (float(lon.min()), float(lat.min()), float(lon.max()), float(lat.max()))


# ------------------------------------------------------------ subcommands


def cmd_synth(args, cfg, run: Run) -> None:
    from .synth import DecadeModel, SynthScenario, decade_scenario, generate_aux, generate_decade, generate_pair, pixel_box_ring

    seed = args.seed if args.seed is not None else 0
    if args.scenario:
        try:
            sc = SynthScenario.from_text(run.input(args.scenario).read_text())
        except ValueError as exc:
            raise UsageError(f"bad scenario: {exc}") from None
        if args.seed is not None:
            sc = SynthScenario.from_text(sc.to_text().replace(f"seed={sc.seed}\n", f"seed={seed}\n", 1))
    elif args.decade:
        sc = decade_scenario(seed, args.size or 48, args.speckle_sigma or 0.0)
    else:
        size = args.size or 256
        base = SynthScenario(seed=seed, width=size, height=size, speckle_sigma=args.speckle_sigma or 0.0)
        q = size // 4
        sc = SynthScenario.from_text(base.to_text() + "flood_polygon=" + "; ".join(
            f"{x!r} {y!r}" for x, y in pixel_box_ring(base.transform, q, q, 3 * q, 2 * q)
        ) + "\n")
    run.config["seed"] = sc.seed
    run.write_text(sc.to_text(), "scenario.txt")
    aux = generate_aux(sc)
    for plane in AuxStack.PLANES:
        run.write_raster(getattr(aux, plane), f"aux/{AUX_FILES[plane]}")

    if args.decade:
        model = DecadeModel(
            trend_pct_per_year=args.trend_pct,
            outlier_factor=args.outlier_factor,
            vh_only_fraction=args.vh_only_fraction,
        )
        for k, v in asdict(model).items():
            run.config[f"decade.{k}"] = v
        archive = generate_decade(sc, model)
        manifest = archive.write(run.out_dir)
        run.outputs.append(manifest)
        for p in archive.plan:
            for sid in (p.pre.scene_id, p.post.scene_id):
                run.outputs.append(run.out_dir / "scenes" / f"{sid}_vv.flr")
                if not p.single_pol:
                    run.outputs.append(run.out_dir / "scenes" / f"{sid}_vh.flr")
            run.outputs.append(run.out_dir / "scenes" / f"{p.post.scene_id}_truth.flr")
        return

    pair, truth = generate_pair(sc)
    from .features import ManifestEntry, write_manifest

    entries = []
    for tag, scene in (("pre", pair.pre), ("post", pair.post)):
        vv = run.write_raster(scene.vv, f"scenes/{tag}_vv.flr")
        vh = run.write_raster(scene.vh, f"scenes/{tag}_vh.flr") if scene.vh is not None else None
        entries.append(ManifestEntry(scene.meta, vv, vh))
    run.write_raster(truth, "truth.flr")
    write_manifest(entries, run.output("manifest.csv"), relative_to=run.out_dir)


def cmd_detect(args, cfg, run: Run) -> None:
    try:
        entries = read_manifest(run.input(args.manifest))
    except ManifestError:
        raise
    except (OSError, UnicodeDecodeError) as exc:
        raise ManifestError(str(exc)) from None
    by_id = {e.meta.scene_id: e for e in entries}
    pairs = select_pairs([e.meta for e in entries])
    rule_cfg = RuleConfig(
        min_delta_db=_setting(args, cfg, "min_delta_db", 3.0, float),
        require_both_polarizations=_setting(args, cfg, "require_both_polarizations", False, _bool),
    )
    fc = _filter_config(cfg)
    threshold = _setting(args, cfg, "threshold", 0.5, float)
    smooth = _setting(args, cfg, "smooth_window", 1, int)
    tile_size = _setting(args, cfg, "tile_size", 512, int)
    run.config.update(
        min_delta_db=rule_cfg.min_delta_db,
        require_both_polarizations=rule_cfg.require_both_polarizations,
        classifier="conv" if args.weights else "rule",
        threshold=threshold, smooth_window=smooth, tile_size=tile_size,
        filters="off" if args.no_filter else "on", pairs=len(pairs),
    )
    _record_filter_config(run, fc)
    net = None
    if args.weights:
        if not args.network:
            raise UsageError("--weights requires --network")
        net = load_weights(run.input(args.network), run.input(args.weights))

    records, observations = [], []
    aux_cache = None
    for pre_meta, post_meta in pairs:
        pre_e, post_e = by_id[pre_meta.scene_id], by_id[post_meta.scene_id]
        pre = Scene(pre_meta, read_raster(run.input(pre_e.vv_path)),
                    read_raster(run.input(pre_e.vh_path)) if pre_e.vh_path else None)
        post = Scene(post_meta, read_raster(run.input(post_e.vv_path)),
                     read_raster(run.input(post_e.vh_path)) if post_e.vh_path else None)
        pair = ScenePair(pre, post)
        if not pair.dual_pol:
            log.warning("pair %s -> %s lacks VH; running single-polarization", pre_meta.scene_id, post_meta.scene_id)
        feats = compute_features(pair)
        if net is not None:
            cand = infer(net, feats, threshold, tile=tile_size, jobs=args.jobs)
        else:
            cand = classify_rule(feats, rule_cfg)
        if smooth > 1:
            cand = type(cand)(majority_smooth(cand.mask, smooth), cand.probability, cand.threshold)

        if aux_cache is None or not aux_cache[0].same_grid(pre.vv):
            if args.aux:
                aux = load_aux(run, args.aux, like=pre.vv,
                               required=() if args.no_filter else ("slope", "land_cover", "soil_moisture", "temperature"))
            elif args.no_filter:
                aux = AuxStack()
            else:
                raise UsageError("--aux is required unless --no-filter is given")
            aux_cache = (pre.vv, aux)
        aux = aux_cache[1]
        if args.no_filter:
            filtered = cand
            reason = Raster(np.zeros(cand.mask.shape, np.uint8), cand.mask.transform)
        else:
            filtered, reason = filter_false_positives(cand, aux, fc)

        sid = post_meta.scene_id
        run.write_raster(cand.mask, f"masks/{sid}_candidates.flr")
        run.write_raster(filtered.mask, f"masks/{sid}_filtered.flr")
        run.write_raster(reason, f"masks/{sid}_reason.flr")
        if cand.probability is not None:
            run.write_raster(cand.probability, f"masks/{sid}_probability.flr")
        recs = emit_records(filtered, reason, aux, post_meta, feats.delta_vv,
                            feats.delta_vh if pair.dual_pol else None)
        records.extend(recs)
        kept = sum(not r.filtered for r in recs)
        area = pixel_area_hectares(pre.vv.transform) if not pre.vv.transform.is_geographic else 0.0
        observations.append(Observation(
            post_meta.acquisition_time.date(), sid, post_meta.single_pol, kept * area, _footprint(pre.vv),
        ))
    run.write_text(records_to_csv(records), "detections.csv")
    run.write_text(observations_to_csv(observations), "observations.csv")


def cmd_aggregate(args, cfg, run: Run) -> None:
    inputs = [read_raster(run.input(p)) for p in args.masks or []]
    if args.records:
        if not args.like:
            raise UsageError("--records requires --like to define the target grid")
        inputs.append(read_records(run.input(args.records)))
    if args.like:
        grid = read_raster(run.input(args.like))
    elif inputs:
        grid = inputs[0]
    else:
        raise UsageError("nothing to aggregate: give --masks and/or --records")
    radius = _setting(args, cfg, "buffer_radius_px", 0, int)
    period = None
    if args.start or args.end:
        period = (date.fromisoformat(args.start or "0001-01-01"), date.fromisoformat(args.end or "9999-12-31"))
    run.config.update(buffer_radius_px=radius, period=period, coarse_pixel=args.coarse_pixel)
    comp = compose(inputs, grid.transform, grid.width, grid.height, radius, period)
    run.write_raster(comp.extent, "composite.flr")
    if comp.observation_count is not None:
        run.write_raster(comp.observation_count, "observation_count.flr")
    if args.coarse_pixel:
        run.write_raster(coarsen(comp, args.coarse_pixel, args.min_fraction).extent, "composite_coarse.flr")


def cmd_mask(args, cfg, run: Run) -> None:
    fc = _filter_config(cfg)
    _record_filter_config(run, fc)
    aux = load_aux(run, args.aux, required=("slope", "land_cover"))
    ex = build_exclusion_mask(aux, fc)
    run.write_raster(ex.mask, "exclusion_mask.flr")
    run.write_raster(ex.reason, "exclusion_reason.flr")


def cmd_buffer(args, cfg, run: Run) -> None:
    radius = _setting(args, cfg, "buffer_radius_px", None, int) if args.radius_px is None else args.radius_px
    if radius is None:
        raise UsageError("--radius-px is required")
    run.config["radius_px"] = radius
    r = read_raster(run.input(args.input))
    run.write_raster(buffer_mask(r, radius), "buffered.flr")


def cmd_overlay(args, cfg, run: Run) -> None:
    extent = read_raster(run.input(args.extent))
    lc = read_raster(run.input(args.land_cover))
    code = LAND_COVER_CODES.get(args.class_, None)
    if code is None:
        try:
            code = int(args.class_)
        except ValueError:
            raise UsageError(f"unknown land-cover class {args.class_!r}") from None
    radius = args.buffer_radius_px
    run.config.update(class_code=code, buffer_radius_px=radius)
    zones = read_zones(run.input(args.zones)) if args.zones else None
    try:
        rows = overlay_impact(buffer_mask(extent, radius), lc, code, zones)
    except ValueError as exc:
        if isinstance(exc, (GridMismatchError, CRSMismatchError)):
            raise
        raise UsageError(str(exc)) from None
    run.write_text(impact_to_csv(rows), "impact.csv")


COMPARISON_COLUMNS = ["region_id", "new_area_pct", "rate_gsw", "rate_gsw_unmasked", "rate_modis", "rate_modis_unmasked"]


def cmd_compare(args, cfg, run: Run) -> None:
    ours = read_raster(run.input(args.ours))
    refs = [read_raster(run.input(p)) for p in args.refs or []]
    exclusion = read_raster(run.input(args.exclusion)) if args.exclusion else None
    gsw = modis = None
    if args.gsw:
        gsw = read_raster(run.input(args.gsw))
        if args.gsw_occurrence:
            gsw = gsw_flood_prone(gsw, args.gsw_threshold)
    if args.modis:
        modis = read_raster(run.input(args.modis))
    union = refs + [r for r in (gsw, modis) if r is not None]
    if not union:
        raise UsageError("give at least one of --refs, --gsw, --modis")
    run.config.update(region_id=args.region_id, gsw_occurrence=args.gsw_occurrence,
                      gsw_threshold=args.gsw_threshold)
    row = [args.region_id, repr(new_area_pct(ours, union))]
    for ref in (gsw, modis):
        if ref is None:
            row += ["", ""]
            continue
        stats = overlap_stats(ours, ref, exclusion)
        row += [repr(stats.detection_rate),
                "" if stats.detection_rate_outside_mask is None else repr(stats.detection_rate_outside_mask)]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COMPARISON_COLUMNS)
    w.writerow(row)
    run.write_text(buf.getvalue(), "comparison_report.csv")


def cmd_trend(args, cfg, run: Run) -> None:
    obs = read_observations(run.input(args.observations))
    series = build_series(obs)
    scenarios = args.scenario or list(SCENARIOS)
    run.config.update(scenarios=",".join(scenarios))
    if args.correct_polarization:
        lo, hi = (_parse_month(x) for x in args.correct_polarization.split(":"))
        series = polarization_correction(series, (lo, hi))
        run.config["polarization_window"] = args.correct_polarization
        run.config["polarization_factor"] = repr(series.correction_factor)
    results = [fit_trend(series, s) for s in scenarios]
    run.write_text(trend_report_csv(results), "trend_report.csv")
    if len(series) >= 24:
        run.write_text(decomposition_csv(seasonal_decompose(series)), "decomposition.csv")
    if args.detections:
        records = read_records(run.input(args.detections))
        run.config.update(tile_deg=args.tile_deg, pixel_area_ha=args.pixel_area_ha)
        tiles = tile_trends(records, obs, args.pixel_area_ha, tile_deg=args.tile_deg,
                            scenario=scenarios[0], basis=args.basis)
        run.write_text(tile_trends_csv(tiles), "tile_trends.csv")


METRIC_COLUMNS = ["precision", "recall", "f1", "iou", "tp", "fp", "fn", "tn"]


def cmd_metrics(args, cfg, run: Run) -> None:
    truth = read_raster(run.input(args.truth))
    ignore = read_raster(run.input(args.ignore)) if args.ignore else None
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRIC_COLUMNS)
    if args.pred:
        c = confusion(read_raster(run.input(args.pred)), truth, ignore)
        m = metrics_from_counts(c)
        w.writerow([repr(m.precision), repr(m.recall), repr(m.f1), repr(m.iou), c.tp, c.fp, c.fn, c.tn])
    run.write_text(buf.getvalue(), "metrics.csv")
    if args.probability:
        thresholds = [float(t) for t in args.thresholds.split(",")] if args.thresholds else [0.5]
        rows = decision_threshold_sweep(read_raster(run.input(args.probability)), truth, thresholds)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["threshold", "precision", "recall", "f1", "positives"])
        for r in rows:
            w.writerow([repr(r.threshold), repr(r.precision), repr(r.recall), repr(r.f1), r.positives])
        run.write_text(buf.getvalue(), "sweep.csv")


# ----------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key=value config file (flags take precedence)")
    common.add_argument("--jobs", type=int, default=1, help="tile-level worker threads")
    common.add_argument("--seed", type=int, help="random seed for synthetic generation")
    common.add_argument("--out", required=True, help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="sarflood", description="SAR flood-mapping pipeline")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("detect", parents=[common], help="pair scenes, classify and filter")
    p.add_argument("--manifest", required=True)
    p.add_argument("--aux", help="directory with slope/land_cover/soil_moisture/temperature/elevation .flr")
    p.add_argument("--weights", help="raw float32 weights; switches to convolutional inference")
    p.add_argument("--network", help="network spec file for --weights")
    p.add_argument("--threshold", type=float)
    p.add_argument("--min-delta-db", dest="min_delta_db", type=float)
    p.add_argument("--require-both-polarizations", dest="require_both_polarizations",
                   action="store_const", const=True)
    p.add_argument("--smooth-window", dest="smooth_window", type=int)
    p.add_argument("--tile-size", dest="tile_size", type=int)
    p.add_argument("--no-filter", action="store_true", help="skip false-positive filters")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("aggregate", parents=[common], help="compose masks/records into an extent map")
    p.add_argument("--masks", nargs="*")
    p.add_argument("--records")
    p.add_argument("--like", help="raster defining the target grid")
    p.add_argument("--buffer-radius-px", dest="buffer_radius_px", type=int)
    p.add_argument("--coarse-pixel", type=float)
    p.add_argument("--min-fraction", type=float)
    p.add_argument("--start")
    p.add_argument("--end")
    p.set_defaults(func=cmd_aggregate)

    p = sub.add_parser("mask", parents=[common], help="build the static exclusion mask")
    p.add_argument("--aux", required=True)
    p.set_defaults(func=cmd_mask)

    p = sub.add_parser("buffer", parents=[common], help="square dilation of a binary raster")
    p.add_argument("--input", required=True)
    p.add_argument("--radius-px", type=int)
    p.set_defaults(func=cmd_buffer)

    p = sub.add_parser("overlay", parents=[common], help="land-cover impact of a flood extent")
    p.add_argument("--extent", required=True)
    p.add_argument("--land-cover", required=True)
    p.add_argument("--class", dest="class_", default="cropland")
    p.add_argument("--zones", help="CSV zone_id,ring,lon,lat")
    p.add_argument("--buffer-radius-px", type=int, default=4,
                   help="buffer applied to the extent before overlay (default 4 px = 80 m at 20 m)")
    p.set_defaults(func=cmd_overlay)

    p = sub.add_parser("compare", parents=[common], help="overlap with reference water layers")
    p.add_argument("--ours", required=True)
    p.add_argument("--refs", nargs="*")
    p.add_argument("--gsw")
    p.add_argument("--gsw-occurrence", action="store_true", help="--gsw holds occurrence percent")
    p.add_argument("--gsw-threshold", type=float, default=50.0)
    p.add_argument("--modis")
    p.add_argument("--exclusion")
    p.add_argument("--region-id", default="region")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("trend", parents=[common], help="monthly series, decomposition and OLS trends")
    p.add_argument("--observations", required=True)
    p.add_argument("--scenario", action="append", choices=SCENARIOS)
    p.add_argument("--correct-polarization", metavar="YYYY-MM:YYYY-MM")
    p.add_argument("--detections", help="detections.csv; enables per-tile trends")
    p.add_argument("--tile-deg", type=float, default=3.0)
    p.add_argument("--pixel-area-ha", type=float, default=0.04)
    p.add_argument("--basis", choices=("period", "monthly"), default="period")
    p.set_defaults(func=cmd_trend)

    p = sub.add_parser("synth", parents=[common], help="generate synthetic scenes")
    p.add_argument("--scenario", help="key=value scenario file")
    p.add_argument("--decade", action="store_true", help="generate a monthly archive")
    p.add_argument("--size", type=int)
    p.add_argument("--speckle-sigma", type=float)
    p.add_argument("--trend-pct", type=float, default=5.0)
    p.add_argument("--outlier-factor", type=float, default=1.0)
    p.add_argument("--vh-only-fraction", type=float, default=0.0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("metrics", parents=[common], help="precision/recall/F1/IoU against truth")
    p.add_argument("--truth", required=True)
    p.add_argument("--pred")
    p.add_argument("--ignore")
    p.add_argument("--probability")
    p.add_argument("--thresholds", help="comma-separated thresholds for a sweep")
    p.set_defaults(func=cmd_metrics)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        cfg = load_config(args.config)
        run = Run(args.command, Path(args.out))
        if args.config:
            run.input(args.config)
        args.func(args, cfg, run)
        run.finish()
    except (UsageError, ManifestError) as exc:
        print(f"sarflood {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (GridMismatchError, CRSMismatchError) as exc:
        print(f"sarflood {args.command}: {exc}", file=sys.stderr)
        return EXIT_GRID
    except RasterFormatError as exc:
        print(f"sarflood {args.command}: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except (InsufficientDataError, RankDeficientError, UndefinedRateError) as exc:
        print(f"sarflood {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001
        log.debug("unexpected failure", exc_info=True)
        print(f"sarflood {args.command}: unexpected error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
