import pytest

from sarflood.features import read_manifest, select_pairs, validate_pair
from sarflood.raster import read_raster
from sarflood.synth import (
    DecadeModel,
    SynthScenario,
    decade_scenario,
    generate_aux,
    generate_decade,
    generate_pair,
    pixel_box_ring,
    rasterize_polygons,
)


def _scenario(**kw):
    base = SynthScenario(width=40, height=30, **kw)
    ring = pixel_box_ring(base.transform, 5, 4, 20, 16)
    return SynthScenario(width=40, height=30, flood_polygons=(ring,), **kw)


def test_box_polygon_rasterizes_to_its_pixels():
    truth = rasterize_polygons(_scenario())
    assert truth.sum() == 15 * 12
    assert truth[4:16, 5:20].all()


def test_pair_is_deterministic_and_planted():
    sc = _scenario(seed=7, speckle_sigma=1.0)
    (p1, t1), (p2, t2) = generate_pair(sc), generate_pair(sc)
    assert p1.post.vv == p2.post.vv and t1 == t2
    assert generate_pair(_scenario(seed=8, speckle_sigma=1.0))[0].post.vv != p1.post.vv
    clean, truth = generate_pair(_scenario())
    post = clean.post.vv.pixels
    assert (post[truth.pixels == 1] == -21.0).all() and (post[truth.pixels == 0] == -11.0).all()
    assert (clean.pre.vh.pixels == -11.0).all()
    assert validate_pair(clean.pre.meta, clean.post.meta)


def test_single_pol_scenario():
    pair, _ = generate_pair(_scenario(dual_pol=False))
    assert pair.pre.vh is None and pair.post.meta.single_pol


def test_scenario_text_round_trip():
    sc = _scenario(seed=3, speckle_sigma=0.5)
    assert SynthScenario.from_text(sc.to_text()) == sc
    with pytest.raises(ValueError):
        SynthScenario.from_text("bogus=1\n")
    with pytest.raises(ValueError):
        SynthScenario(water_amplitude_vv=-15.0)


def test_aux_planes_share_the_grid():
    aux = generate_aux(_scenario(seed=2))
    assert aux.slope.same_grid(aux.land_cover)
    assert aux.slope.as_float().max() <= 5.0


def test_decade_plan():
    model = DecadeModel(outlier_factor=3.0, vh_only_fraction=0.5)
    arch = generate_decade(decade_scenario(1, 24), model)
    assert len(arch.months) == 120
    # 86 months with 4 observations, 34 months from Dec 2021 with 2
    assert len(arch.plan) == 86 * 4 + 34 * 2
    metas = [m for p in arch.plan for m in (p.pre, p.post)]
    pairs = {(a.scene_id, b.scene_id) for a, b in select_pairs(metas)}
    assert pairs == {(p.pre.scene_id, p.post.scene_id) for p in arch.plan}
    singles = [p for p in arch.plan if p.single_pol]
    assert singles and all(p.post.acquisition_time.date() < model.single_pol_before for p in singles)
    p = arch.plan[0]
    flood, vh_only = arch.masks(p)
    assert flood.sum() == p.planted_px and vh_only.sum() == p.vh_only_px and (vh_only <= flood).all()
    pair, truth = arch.materialize(p)
    assert (truth.pixels == 1).sum() == p.planted_px
    # 2022 months carry the outlier factor
    i22 = arch.months.index((2022, 3))
    i21 = arch.months.index((2021, 3))
    assert arch.planted_fraction[i22] / arch.planted_fraction[i21] > 2.5


def test_decade_write(tmp_path):
    model = DecadeModel(start=(2016, 1), end=(2016, 2))
    arch = generate_decade(decade_scenario(0, 8), model)
    manifest = arch.write(tmp_path)
    entries = read_manifest(manifest)
    assert len(entries) == 2 * len(arch.plan)
    r = read_raster(entries[0].vv_path)
    assert r.shape == (8, 8)
