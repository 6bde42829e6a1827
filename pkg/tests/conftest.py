from datetime import datetime, timedelta, timezone

import numpy as np
import pytest

from sarflood.features import Scene, SceneMeta, ScenePair
from sarflood.raster import GeoTransform, Raster

UTM = GeoTransform(500_000.0, 1_000_000.0, 20.0, 20.0, 32637)
T0 = datetime(2024, 4, 1, 3, 0, tzinfo=timezone.utc)


def grid(pixels, nodata=None, transform=UTM):
    return Raster(np.asarray(pixels), transform, nodata)


def meta(scene_id, days=0, direction="ascending", orbit=1, dual=True):
    pols = frozenset({"VV", "VH"}) if dual else frozenset({"VV"})
    return SceneMeta(scene_id, T0 + timedelta(days=days), direction, orbit, pols)


def pair_from_db(pre_vv, post_vv, pre_vh=None, post_vh=None, gap=12):
    f32 = lambda a: None if a is None else grid(np.asarray(a, dtype=np.float32), float("nan"))
    dual = pre_vh is not None
    pre = Scene(meta("pre", 0, dual=dual), f32(pre_vv), f32(pre_vh))
    post = Scene(meta("post", gap, dual=dual), f32(post_vv), f32(post_vh))
    return ScenePair(pre, post)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def verdict():
    """Record a criterion's PASS/FAIL line, then assert it."""

    def record(number: int, ok: bool, detail: str):
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {number:2d}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
