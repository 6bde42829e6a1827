import numpy as np
import pytest

from sarflood.cli import VOLATILE_KEYS, main, read_run_manifest
from sarflood.features import ManifestEntry, write_manifest
from sarflood.raster import GeoTransform, Raster, read_raster, write_raster
from sarflood.trend import read_observations

from conftest import meta


@pytest.fixture
def synth_dir(tmp_path):
    assert main(["synth", "--out", str(tmp_path / "s"), "--seed", "4", "--size", "64", "--speckle-sigma", "1"]) == 0
    return tmp_path / "s"


def _digests(out):
    m = read_run_manifest(out / "run_manifest.txt")
    return {k: v for k, v in m.items() if k not in VOLATILE_KEYS and not k.startswith("input.")}


def test_pipeline(tmp_path, synth_dir):
    s, d = synth_dir, tmp_path / "d"
    assert main(["detect", "--manifest", str(s / "manifest.csv"), "--aux", str(s / "aux"), "--out", str(d)]) == 0
    (cand,) = (d / "masks").glob("*_candidates.flr")
    assert main(["metrics", "--truth", str(s / "truth.flr"), "--pred", str(cand), "--out", str(tmp_path / "m")]) == 0
    header, row = (tmp_path / "m" / "metrics.csv").read_text().splitlines()
    assert header == "precision,recall,f1,iou,tp,fp,fn,tn"
    assert float(row.split(",")[3]) > 0.95
    (obs,) = read_observations(d / "observations.csv")
    assert obs.flooded_ha > 0 and not obs.single_pol

    (filt,) = (d / "masks").glob("*_filtered.flr")
    assert main(["aggregate", "--masks", str(filt), "--buffer-radius-px", "2", "--coarse-pixel", "250",
                 "--out", str(tmp_path / "a")]) == 0
    assert main(["aggregate", "--records", str(d / "detections.csv"), "--like", str(filt),
                 "--out", str(tmp_path / "a2")]) == 0
    assert read_raster(tmp_path / "a2" / "composite.flr") == read_raster(tmp_path / "a" / "composite.flr").replace(
        (read_raster(filt).pixels == 1).astype(np.uint8)
    )
    assert main(["mask", "--aux", str(s / "aux"), "--out", str(tmp_path / "k")]) == 0
    assert main(["overlay", "--extent", str(tmp_path / "a" / "composite.flr"), "--land-cover",
                 str(s / "aux" / "land_cover.flr"), "--out", str(tmp_path / "o")]) == 0
    assert (tmp_path / "o" / "impact.csv").read_text().startswith("zone_id,class,class_px")
    assert main(["compare", "--ours", str(tmp_path / "a" / "composite.flr"), "--refs", str(s / "truth.flr"),
                 "--exclusion", str(tmp_path / "k" / "exclusion_mask.flr"), "--out", str(tmp_path / "c")]) == 0
    lines = (tmp_path / "c" / "comparison_report.csv").read_text().splitlines()
    assert lines[0] == "region_id,new_area_pct,rate_gsw,rate_gsw_unmasked,rate_modis,rate_modis_unmasked"
    m = read_run_manifest(tmp_path / "a" / "run_manifest.txt")
    assert m["config.buffer_radius_px"] == "2" and m["command"] == "aggregate"
    assert "output.0.sha256" in m and "input.0.sha256" in m


def test_detect_is_deterministic(tmp_path, synth_dir):
    args = ["detect", "--manifest", str(synth_dir / "manifest.csv"), "--aux", str(synth_dir / "aux")]
    assert main(args + ["--out", str(tmp_path / "r1")]) == 0
    assert main(args + ["--out", str(tmp_path / "r2"), "--jobs", "2"]) == 0
    assert _digests(tmp_path / "r1") == _digests(tmp_path / "r2")


def test_config_precedence(tmp_path, synth_dir):
    px = np.zeros((9, 9), np.uint8)
    px[4, 4] = 1
    write_raster(Raster(px, GeoTransform(0, 0, 20, 20, 32637)), tmp_path / "m.flr")
    (tmp_path / "cfg.txt").write_text("buffer_radius_px=2\n")
    assert main(["buffer", "--input", str(tmp_path / "m.flr"), "--config", str(tmp_path / "cfg.txt"),
                 "--out", str(tmp_path / "b1")]) == 0
    assert read_raster(tmp_path / "b1" / "buffered.flr").pixels.sum() == 25
    assert main(["buffer", "--input", str(tmp_path / "m.flr"), "--config", str(tmp_path / "cfg.txt"),
                 "--radius-px", "1", "--out", str(tmp_path / "b2")]) == 0
    assert read_raster(tmp_path / "b2" / "buffered.flr").pixels.sum() == 9
    assert read_run_manifest(tmp_path / "b2" / "run_manifest.txt")["config.radius_px"] == "1"
    assert main(["buffer", "--input", str(tmp_path / "m.flr"), "--out", str(tmp_path / "b3")]) == 2


def test_detect_single_pol_warns(tmp_path, caplog):
    t = GeoTransform(500_000, 1_000_000, 20, 20, 32637)
    pre = Raster(np.full((4, 4), -11, np.float32), t, float("nan"))
    post = Raster(np.full((4, 4), -21, np.float32), t, float("nan"))
    write_raster(pre, tmp_path / "pre.flr")
    write_raster(post, tmp_path / "post.flr")
    write_manifest([ManifestEntry(meta("a", 0, dual=False), tmp_path / "pre.flr"),
                    ManifestEntry(meta("b", 12, dual=False), tmp_path / "post.flr")],
                   tmp_path / "m.csv", relative_to=tmp_path)
    assert main(["detect", "--manifest", str(tmp_path / "m.csv"), "--no-filter", "--out", str(tmp_path / "o")]) == 0
    assert "single-polarization" in caplog.text
    (obs,) = read_observations(tmp_path / "o" / "observations.csv")
    assert obs.single_pol and obs.flooded_ha == pytest.approx(16 * 0.04)


def test_exit_codes(tmp_path, synth_dir):
    out = str(tmp_path / "x")
    # invalid manifest
    (tmp_path / "bad.csv").write_text("nope\n")
    assert main(["detect", "--manifest", str(tmp_path / "bad.csv"), "--out", out]) == 2
    # grid mismatch between pre and post
    t = GeoTransform(500_000, 1_000_000, 20, 20, 32637)
    write_raster(Raster(np.zeros((4, 4), np.float32), t), tmp_path / "p.flr")
    write_raster(Raster(np.zeros((4, 5), np.float32), t), tmp_path / "q.flr")
    write_manifest([ManifestEntry(meta("a", 0, dual=False), tmp_path / "p.flr"),
                    ManifestEntry(meta("b", 12, dual=False), tmp_path / "q.flr")], tmp_path / "g.csv")
    assert main(["detect", "--manifest", str(tmp_path / "g.csv"), "--no-filter", "--out", out]) == 3
    # malformed raster
    (tmp_path / "junk.flr").write_bytes(b"FLR1" + b"\0" * 10)
    assert main(["buffer", "--input", str(tmp_path / "junk.flr"), "--radius-px", "1", "--out", out]) == 4
    # too few months for a trend
    (tmp_path / "obs.csv").write_text(
        "date,scene_id,single_pol,flooded_ha,lon_min,lat_min,lon_max,lat_max\n2020-01-01,a,false,1.0,,,,\n"
    )
    assert main(["trend", "--observations", str(tmp_path / "obs.csv"), "--out", out]) == 5
    # missing aux plane
    assert main(["detect", "--manifest", str(synth_dir / "manifest.csv"), "--aux", str(tmp_path), "--out", out]) == 2
    with pytest.raises(SystemExit) as exc:
        main(["detect"])
    assert exc.value.code == 2


def test_decade_trend_cli(tmp_path):
    assert main(["synth", "--decade", "--size", "16", "--seed", "2", "--vh-only-fraction", "0.5",
                 "--out", str(tmp_path / "s")]) == 0
    assert main(["detect", "--manifest", str(tmp_path / "s" / "manifest.csv"), "--no-filter",
                 "--out", str(tmp_path / "d")]) == 0
    assert main(["trend", "--observations", str(tmp_path / "d" / "observations.csv"),
                 "--correct-polarization", "2014-10:2017-05", "--detections", str(tmp_path / "d" / "detections.csv"),
                 "--out", str(tmp_path / "t")]) == 0
    report = (tmp_path / "t" / "trend_report.csv").read_text().splitlines()
    assert [r.split(",")[0] for r in report[1:]] == ["all", "drop_2022", "drop_2022_and_pre_jun2017"]
    factor = float(read_run_manifest(tmp_path / "t" / "run_manifest.txt")["config.polarization_factor"])
    assert factor == pytest.approx(2.0, rel=0.05)
    assert (tmp_path / "t" / "decomposition.csv").exists() and (tmp_path / "t" / "tile_trends.csv").exists()
