"""Deterministic synthetic SAR flood scenes.

Each pixel has a mean backscatter in dB (land or water, plus an optional
time-invariant smooth texture). Every acquisition draws independent gamma
speckle (shape = looks, mean 1) in linear power, converts to dB, clips and
normalizes. Pixels inside a flood polygon switch to water statistics from
that polygon's onset date; a polygon whose onset is on or before the first
date is permanent water.
"""
from __future__ import annotations

import datetime as dt
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from matplotlib.path import Path as PolyPath
from scipy import ndimage

from .raster_io import (CLIP_RANGES_DB, GroundTruthMask, SarTile, clip_and_normalize,
                        save_mask, save_tile, to_db)


@dataclass
class FloodPolygon:
    vertices: list[tuple[float, float]]  # (row, col) pixel coordinates
    onset: dt.date


@dataclass
class SceneSpec:
    H: int = 64
    W: int = 64
    dates: list[dt.date] = field(default_factory=list)
    flood_polygons: list[FloodPolygon] = field(default_factory=list)
    land_db_mean: tuple[float, float] = (-10.0, -14.0)  # (VV, VH)
    water_db_mean: tuple[float, float] = (-20.0, -24.0)
    speckle_looks: int = 4
    texture_db: float = 0.0
    texture_scale: float = 6.0
    seed: int = 0

    def __post_init__(self):
        self.dates = [_as_date(d) for d in self.dates]
        self.flood_polygons = [
            p if isinstance(p, FloodPolygon) else FloodPolygon(
                [tuple(v) for v in p["vertices"]], _as_date(p["onset"]))
            for p in self.flood_polygons]
        self.land_db_mean = tuple(self.land_db_mean)
        self.water_db_mean = tuple(self.water_db_mean)
        for name, land, water in zip(("VV", "VH"), self.land_db_mean, self.water_db_mean):
            lo, hi = CLIP_RANGES_DB[name]
            if not water < land:
                raise ValueError(f"{name}: water mean must be below land mean")
            if not (lo <= water <= hi and lo <= land <= hi):
                raise ValueError(f"{name}: means must lie inside the clip range {lo}..{hi} dB")
        if self.speckle_looks < 1:
            raise ValueError("speckle_looks must be >= 1")
        if self.H < 1 or self.W < 1:
            raise ValueError("scene dims must be positive")

    @classmethod
    def from_json(cls, path) -> "SceneSpec":
        with open(path) as fh:
            return cls(**json.load(fh))


@dataclass
class Scene:
    spec: SceneSpec
    tiles: list[SarTile]
    masks: list[GroundTruthMask]

    def change_mask(self, before: int, after: int) -> GroundTruthMask:
        """Pixels that are water at index ``after`` but not at ``before``."""
        a = self.masks[before].labels == 1
        b = self.masks[after].labels == 1
        return GroundTruthMask((b & ~a).astype(np.int8), date=self.masks[after].date)


def _as_date(d) -> dt.date:
    return d if isinstance(d, dt.date) else dt.date.fromisoformat(str(d))


def rasterize(vertices, H: int, W: int) -> np.ndarray:
    """Boolean mask of pixels whose centre lies inside the polygon."""
    rr, cc = np.mgrid[0:H, 0:W]
    centres = np.column_stack([rr.ravel() + 0.5, cc.ravel() + 0.5])
    return PolyPath(np.asarray(vertices, dtype=float)).contains_points(centres).reshape(H, W)


def water_masks(spec: SceneSpec) -> list[np.ndarray]:
    regions = [(rasterize(p.vertices, spec.H, spec.W), p.onset) for p in spec.flood_polygons]
    out = []
    for d in spec.dates:
        m = np.zeros((spec.H, spec.W), dtype=bool)
        for region, onset in regions:
            if d >= onset:
                m |= region
        out.append(m)
    return out


def generate(spec: SceneSpec) -> Scene:
    if not spec.dates:
        raise ValueError("scene spec has no dates")
    rng = np.random.default_rng(spec.seed)
    texture = np.zeros((spec.H, spec.W))
    if spec.texture_db > 0:
        field_ = ndimage.gaussian_filter(rng.standard_normal((spec.H, spec.W)),
                                         spec.texture_scale, mode="wrap")
        texture = spec.texture_db * field_ / (field_.std() or 1.0)
    tiles, masks = [], []
    for date, water in zip(spec.dates, water_masks(spec)):
        channels = []
        for ci, name in enumerate(("VV", "VH")):
            mean_db = np.where(water, spec.water_db_mean[ci], spec.land_db_mean[ci] + texture)
            speckle = rng.gamma(spec.speckle_looks, 1.0 / spec.speckle_looks, size=water.shape)
            power = 10.0 ** (mean_db / 10.0) * speckle
            channels.append(clip_and_normalize(to_db(power), name))
        tiles.append(SarTile(channels[0], channels[1], acquisition_date=date))
        masks.append(GroundTruthMask(water.astype(np.int8), date=date))
    return Scene(spec, tiles, masks)


def write_scene(scene: Scene, out_dir, suffix: str = ".grid") -> list[Path]:
    """Write ``tile_<date>`` and ``gt_<date>`` rasters; returns the paths written."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for tile, mask in zip(scene.tiles, scene.masks):
        stamp = tile.acquisition_date.isoformat()
        tp, mp = out / f"tile_{stamp}{suffix}", out / f"gt_{stamp}{suffix}"
        save_tile(tile, tp)
        save_mask(mask, mp)
        written += [tp, mp]
    return written


def revisit_dates(start: dt.date, n: int, step_days: int = 6) -> list[dt.date]:
    """``n`` acquisition dates spaced like a 6-day revisit."""
    return [start + dt.timedelta(days=step_days * i) for i in range(n)]
