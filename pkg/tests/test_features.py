import numpy as np
import pytest
from hypothesis import given, strategies as st

from sarflood.features import (
    BINARY_NODATA,
    ManifestEntry,
    ManifestError,
    Scene,
    ScenePair,
    compute_features,
    is_water_db,
    read_manifest,
    select_pairs,
    validate_pair,
    write_manifest,
)
from sarflood.raster import GridMismatchError, write_raster

from conftest import grid, meta, pair_from_db


@pytest.mark.parametrize("pol, thr", [("VV", -17.5), ("VH", -22.5), ("vv", -17.5)])
def test_threshold_is_strict(pol, thr):
    assert is_water_db(thr - 1e-6, pol)
    assert not is_water_db(thr, pol)
    assert not is_water_db(thr + 1e-6, pol)
    assert not is_water_db(float("nan"), pol)
    np.testing.assert_array_equal(is_water_db(np.array([thr - 1, thr, thr + 1]), pol), [True, False, False])


def test_pairing_rules():
    pre = meta("a", 0)
    assert validate_pair(pre, meta("b", 12))
    assert validate_pair(pre, meta("b", 30))
    v = validate_pair(pre, meta("b", 31))
    assert not v and v.rule == "temporal"
    v = validate_pair(pre, meta("b", 0))
    assert not v and v.rule == "temporal"
    v = validate_pair(meta("b", 12), pre)
    assert not v and v.rule == "temporal"
    v = validate_pair(pre, meta("b", 12, direction="descending"))
    assert not v and v.rule == "geometry"
    v = validate_pair(pre, meta("b", 12, orbit=2))
    assert not v and v.rule == "geometry"


def test_select_pairs_nearest_predecessor():
    scenes = [meta("a", 0), meta("b", 12), meta("c", 24), meta("x", 20, orbit=9), meta("d", 100)]
    pairs = [(p.scene_id, q.scene_id) for p, q in select_pairs(scenes)]
    assert pairs == [("a", "b"), ("b", "c")]


@given(st.lists(st.tuples(st.integers(0, 90), st.integers(1, 3), st.booleans()), max_size=12))
def test_selected_pairs_are_always_valid(specs):
    scenes = [meta(f"s{i}", d, "ascending" if asc else "descending", o) for i, (d, o, asc) in enumerate(specs)]
    for pre, post in select_pairs(scenes):
        assert validate_pair(pre, post)
        # no admissible scene sits strictly between pre and post
        for s in scenes:
            if pre.acquisition_time < s.acquisition_time < post.acquisition_time:
                assert not validate_pair(s, post)


def test_scene_pair_checks_grid_and_rules():
    a = grid(np.zeros((2, 2), np.float32), float("nan"))
    b = grid(np.zeros((2, 3), np.float32), float("nan"))
    with pytest.raises(GridMismatchError):
        ScenePair(Scene(meta("p", 0, dual=False), a), Scene(meta("q", 12, dual=False), b))
    with pytest.raises(ValueError):
        ScenePair(Scene(meta("p", 0, dual=False), a), Scene(meta("q", 40, dual=False), a))


def test_features_against_counting():
    pre_vv = [[-11.0, -11.0, -20.0, -11.0]]
    post_vv = [[-21.0, -17.5, -21.0, np.nan]]
    pre_vh = [[-11.0, -11.0, -11.0, -30.0]]
    post_vh = [[-25.0, -22.5, -23.0, -30.0]]
    f = compute_features(pair_from_db(pre_vv, post_vv, pre_vh, post_vh))
    np.testing.assert_array_equal(f.change_to_water_vv.pixels, [[1, 0, 0, BINARY_NODATA]])
    np.testing.assert_array_equal(f.change_to_water_vh.pixels, [[1, 0, 1, 0]])
    np.testing.assert_allclose(f.delta_vv.as_float(), [[-10.0, -6.5, -1.0, np.nan]])
    np.testing.assert_allclose(f.delta_vh.pixels, [[-14.0, -11.5, -12.0, 0.0]])
    assert f.has_vh
    arr = f.as_array()
    assert arr.shape == (4, 1, 4) and arr[0, 0, 3] == 0 and arr[2, 0, 3] == 0


def test_single_pol_gives_nodata_vh():
    f = compute_features(pair_from_db([[-11.0]], [[-21.0]]))
    assert not f.has_vh
    assert f.change_to_water_vh.pixels[0, 0] == BINARY_NODATA
    assert np.isnan(f.delta_vh.pixels[0, 0])
    assert f.change_to_water_vv.pixels[0, 0] == 1


def _entries(tmp_path):
    r = grid(np.zeros((2, 2), np.float32), float("nan"))
    write_raster(r, tmp_path / "a_vv.flr")
    return [
        ManifestEntry(meta("a", 0), tmp_path / "a_vv.flr", tmp_path / "a_vh.flr"),
        ManifestEntry(meta("b", 12, dual=False), tmp_path / "b_vv.flr"),
    ]


def test_manifest_round_trip(tmp_path):
    entries = _entries(tmp_path)
    path = tmp_path / "manifest.csv"
    write_manifest(entries, path, relative_to=tmp_path)
    text = path.read_text()
    assert text.splitlines()[1] == "a,2024-04-01T03:00:00Z,ascending,1,a_vv.flr,a_vh.flr"
    back = read_manifest(path)
    assert [e.meta for e in back] == [e.meta for e in entries]
    assert back[1].vh_path is None and back[1].meta.single_pol
    write_manifest(back, tmp_path / "m2.csv", relative_to=tmp_path)
    assert (tmp_path / "m2.csv").read_text() == text


@pytest.mark.parametrize(
    "body, line",
    [
        ("scene,time\n", 1),
        ("", 1),
        ("a,2024-01-01T00:00:00Z,ascending,1,a.flr,\na,2024-01-02T00:00:00Z,ascending,1,a.flr,\n", 3),
        ("a,yesterday,ascending,1,a.flr,\n", 2),
        ("a,2024-01-01T00:00:00Z,sideways,1,a.flr,\n", 2),
        ("a,2024-01-01T00:00:00Z,ascending,one,a.flr,\n", 2),
        ("a,2024-01-01T00:00:00Z,ascending,1,,\n", 2),
        ("a,2024-01-01T00:00:00Z,ascending,1\n", 2),
    ],
)
def test_manifest_errors_name_the_line(tmp_path, body, line):
    header = "scene_id,acquisition_time,pass_direction,relative_orbit,vv_path,vh_path\n"
    if body.startswith("scene,time") or body == "":
        text = body
    else:
        text = header + body
    path = tmp_path / "m.csv"
    path.write_text(text)
    with pytest.raises(ManifestError) as exc:
        read_manifest(path)
    assert exc.value.line == line
