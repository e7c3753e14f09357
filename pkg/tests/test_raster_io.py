import datetime as dt

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from clvae.raster_io import (Bounds, GroundTruthMask, RasterError, SarTile, clip_and_normalize,
                             denormalize, load_mask, load_raster, load_tile, save_mask,
                             save_raster, save_tile, to_db)


def test_to_db_examples():
    assert to_db(1.0) == 0.0
    assert to_db(10.0) == pytest.approx(10.0)
    assert to_db(0.001) == pytest.approx(-30.0)


def test_to_db_names_bad_pixel():
    grid = np.ones((3, 4))
    grid[2, 1] = 0.0
    with pytest.raises(RasterError, match=r"\(2, 1\)"):
        to_db(grid)
    grid[2, 1] = np.nan
    with pytest.raises(RasterError):
        to_db(grid)


@pytest.mark.parametrize("channel, db, expected", [
    ("VV", -23.0, 0.0), ("VV", 0.0, 1.0), ("VH", -16.5, 0.5), ("VV", 7.0, 1.0), ("VH", -40.0, 0.0),
])
def test_clip_and_normalize_examples(channel, db, expected):
    assert clip_and_normalize(db, channel) == pytest.approx(expected)


def test_clip_rejects_unknown_channel():
    with pytest.raises(ValueError):
        clip_and_normalize(0.0, "HH")


db_grids = arrays(np.float64, (6, 5), elements=st.floats(-60, 30, allow_nan=False))


@given(db_grids, st.sampled_from(["VV", "VH"]))
def test_normalized_range_and_order(grid, channel):
    out = clip_and_normalize(grid, channel)
    assert out.min() >= 0.0 and out.max() <= 1.0
    flat, res = grid.ravel(), out.ravel()
    order = np.argsort(flat, kind="stable")
    assert np.all(np.diff(res[order]) >= 0)


@given(db_grids, st.sampled_from(["VV", "VH"]))
def test_normalize_idempotent_after_roundtrip(grid, channel):
    once = clip_and_normalize(grid, channel)
    twice = clip_and_normalize(denormalize(once, channel), channel)
    np.testing.assert_allclose(twice, once, atol=1e-12)


def test_fixture_roundtrip_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    grid = rng.random((32, 32)).astype(np.float32)
    save_raster(grid, tmp_path / "g.grid")
    back, meta, bounds = load_raster(tmp_path / "g.grid")
    assert back.shape == (1, 32, 32) and back.dtype == np.float32
    assert np.array_equal(back[0], grid)
    assert bounds is None and meta == {}


def test_fixture_zero_tile(tmp_path):
    save_raster(np.zeros((2, 64, 64), np.float32), tmp_path / "z.grid", meta={"scale": "normalized"})
    tile = load_tile(tmp_path / "z.grid")
    assert tile.shape == (64, 64)
    assert not tile.vv.any() and not tile.vh.any()


def test_geotiff_roundtrip_and_bounds(tmp_path):
    rng = np.random.default_rng(1)
    grid = rng.random((2, 20, 30)).astype(np.float32)
    b = Bounds(10.0, 45.0, 10.3, 45.2, 4326)
    save_raster(grid, tmp_path / "x.tif", bounds=b, meta={"date": "2021-03-04"})
    back, meta, bounds = load_raster(tmp_path / "x.tif")
    assert np.array_equal(back, grid)
    assert meta["date"] == "2021-03-04"
    assert bounds.epsg == 4326
    assert bounds.west == pytest.approx(10.0) and bounds.north == pytest.approx(45.2)
    assert bounds.east == pytest.approx(10.3) and bounds.south == pytest.approx(45.0)


def test_geotiff_single_band_is_channel_count_error(tmp_path):
    save_raster(np.full((16, 16), -10.0, np.float32), tmp_path / "one.tif")
    with pytest.raises(RasterError, match="bands"):
        load_tile(tmp_path / "one.tif")


def test_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_tile(tmp_path / "nope.tif")


def test_nan_rejected(tmp_path):
    grid = np.full((2, 8, 8), -10.0, np.float32)
    grid[1, 3, 3] = np.nan
    save_raster(grid, tmp_path / "nan.grid")
    with pytest.raises(RasterError, match="NaN"):
        load_tile(tmp_path / "nan.grid")


def test_load_tile_scales(tmp_path):
    db = np.stack([np.full((4, 4), -11.5), np.full((4, 4), -16.5)]).astype(np.float32)
    save_raster(db, tmp_path / "a_20210105.tif")
    tile = load_tile(tmp_path / "a_20210105.tif")
    assert tile.acquisition_date == dt.date(2021, 1, 5)
    np.testing.assert_allclose(tile.vv, 0.5)
    np.testing.assert_allclose(tile.vh, 0.5)
    save_raster((10 ** (db / 10)).astype(np.float64), tmp_path / "lin.grid")
    lin = load_tile(tmp_path / "lin.grid", scale="linear")
    np.testing.assert_allclose(lin.vv, 0.5, atol=1e-6)


def test_tile_roundtrip(tmp_path):
    rng = np.random.default_rng(2)
    t = SarTile(rng.random((9, 7)), rng.random((9, 7)), acquisition_date=dt.date(2020, 5, 1),
                orbit_pass="ascending", relative_orbit=15)
    save_tile(t, tmp_path / "t.grid")
    back = load_tile(tmp_path / "t.grid")
    assert np.array_equal(back.vv, t.vv) and np.array_equal(back.vh, t.vh)
    assert back.acquisition_date == t.acquisition_date
    assert back.orbit_pass.value == "ascending" and back.relative_orbit == 15


def test_sartile_invariants():
    with pytest.raises(RasterError):
        SarTile(np.zeros((4, 4)), np.zeros((4, 5)))
    with pytest.raises(RasterError):
        SarTile(np.full((4, 4), 1.5), np.zeros((4, 4)))
    with pytest.raises(RasterError):
        SarTile(np.full((4, 4), np.inf), np.zeros((4, 4)))


def test_mask_roundtrip_and_values(tmp_path):
    labels = np.array([[0, 1], [-1, 1]])
    save_mask(GroundTruthMask(labels), tmp_path / "m.tif")
    assert np.array_equal(load_mask(tmp_path / "m.tif").labels, labels)
    with pytest.raises(RasterError):
        GroundTruthMask(np.array([[0, 2]]))


@settings(max_examples=25)
@given(arrays(np.float32, st.tuples(st.integers(1, 5), st.integers(1, 9), st.integers(1, 9)),
              elements=st.floats(-1e6, 1e6, width=32)))
def test_fixture_roundtrip_property(tmp_path_factory, grid):
    path = tmp_path_factory.mktemp("rt") / "r.grid"
    save_raster(grid, path)
    back, _, _ = load_raster(path)
    assert np.array_equal(back, grid)
