"""Reading, writing and radiometric preprocessing of SAR rasters.

Two on-disk formats are supported:

* GeoTIFF (``.tif``/``.tiff``), one band per channel, georeferenced through
  the standard ModelPixelScale / ModelTiepoint / GeoKeyDirectory tags.
  Free-form metadata (acquisition date, value scale) travels as JSON in the
  ImageDescription tag.
* A flat little-endian fixture format (any other suffix, ``.grid`` by
  convention) used for hermetic tests::

      offset  size  field
      0       8     magic  b"CLVGRID1"
      8       1     dtype code (1=float32, 2=float64, 3=uint8, 4=int8, 5=int16, 6=int32)
      9       3     reserved, zero
      12      4     H   (uint32)
      16      4     W   (uint32)
      20      4     C   (uint32)
      24      4     M   (uint32) length of the JSON metadata block
      28      M     metadata, UTF-8 JSON object
      28+M    ...   C*H*W values, band-sequential, each band row-major

All grids handed to and returned from this module are ``(C, H, W)`` or
``(H, W)`` numpy arrays.
"""
from __future__ import annotations

import datetime as dt
import json
import re
import struct
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np
import tifffile

CLIP_RANGES_DB = {"VV": (-23.0, 0.0), "VH": (-28.0, -5.0)}

FIXTURE_MAGIC = b"CLVGRID1"
_HEADER = struct.Struct("<8sB3xIIII")
_DTYPE_CODES = {
    1: np.dtype("<f4"), 2: np.dtype("<f8"), 3: np.dtype("u1"),
    4: np.dtype("i1"), 5: np.dtype("<i2"), 6: np.dtype("<i4"),
}
_CODE_FOR_KIND = {(v.kind, v.itemsize): k for k, v in _DTYPE_CODES.items()}

# GeoTIFF tag ids
_PIXEL_SCALE = 33550
_TIEPOINT = 33922
_GEOKEYS = 34735


class RasterError(ValueError):
    """Malformed, missing or inconsistent raster data."""


class OrbitPass(str, Enum):
    ASCENDING = "ascending"
    DESCENDING = "descending"


@dataclass(frozen=True)
class Bounds:
    west: float
    south: float
    east: float
    north: float
    epsg: int | None = None


@dataclass
class SarTile:
    """One preprocessed dual-polarisation acquisition, values in [0, 1]."""

    vv: np.ndarray
    vh: np.ndarray
    acquisition_date: dt.date | None = None
    bounds: Bounds | None = None
    orbit_pass: OrbitPass | None = None
    relative_orbit: int | None = None

    def __post_init__(self):
        self.vv = np.asarray(self.vv, dtype=np.float32)
        self.vh = np.asarray(self.vh, dtype=np.float32)
        if self.vv.ndim != 2 or self.vv.shape != self.vh.shape:
            raise RasterError(
                f"vv and vh must be 2-D grids of equal shape, got {self.vv.shape} and {self.vh.shape}")
        for name, grid in (("vv", self.vv), ("vh", self.vh)):
            if not np.all(np.isfinite(grid)):
                raise RasterError(f"{name} contains non-finite values")
            if grid.size and (grid.min() < 0.0 or grid.max() > 1.0):
                raise RasterError(f"{name} values outside [0, 1]; preprocess first")
        if self.orbit_pass is not None:
            self.orbit_pass = OrbitPass(self.orbit_pass)

    @property
    def shape(self) -> tuple[int, int]:
        return self.vv.shape


@dataclass
class GroundTruthMask:
    """Labels 1 (water/change), 0 (background) and -1 (missing, not scored)."""

    labels: np.ndarray
    date: dt.date | None = field(default=None)

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.ndim != 2:
            raise RasterError(f"mask must be 2-D, got shape {labels.shape}")
        if not np.all(np.isin(labels, (-1, 0, 1))):
            raise RasterError("mask values must be in {-1, 0, 1}")
        self.labels = labels.astype(np.int8)

    @property
    def shape(self) -> tuple[int, int]:
        return self.labels.shape


# -- radiometry -------------------------------------------------------------

def to_db(linear_backscatter) -> np.ndarray:
    """Convert linear backscatter power to decibels."""
    x = np.asarray(linear_backscatter, dtype=np.float64)
    bad = ~(x > 0)  # catches NaN as well
    if bad.any():
        idx = tuple(int(i) for i in np.argwhere(bad)[0])
        raise RasterError(f"backscatter must be positive; got {x[idx]!r} at pixel {idx}")
    return 10.0 * np.log10(x)


def clip_and_normalize(db_grid, channel: str) -> np.ndarray:
    """Clamp dB values to the channel's range (inclusive) and rescale to [0, 1]."""
    try:
        lo, hi = CLIP_RANGES_DB[channel.upper()]
    except KeyError:
        raise ValueError(f"channel must be VV or VH, got {channel!r}") from None
    db = np.asarray(db_grid, dtype=np.float64)
    return (np.clip(db, lo, hi) - lo) / (hi - lo)


def denormalize(values, channel: str) -> np.ndarray:
    """Map normalized values back to dB (inverse of the in-range part of the clamp)."""
    lo, hi = CLIP_RANGES_DB[channel.upper()]
    return lo + np.asarray(values, dtype=np.float64) * (hi - lo)


# -- fixture format ---------------------------------------------------------

def write_fixture(path, grid, meta: dict | None = None) -> None:
    arr = _as_chw(grid)
    code = _CODE_FOR_KIND.get((arr.dtype.kind, arr.dtype.itemsize))
    if code is None:
        raise RasterError(f"dtype {arr.dtype} not supported by the fixture format")
    blob = json.dumps(meta or {}, default=str).encode()
    c, h, w = arr.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(FIXTURE_MAGIC, code, h, w, c, len(blob)))
        fh.write(blob)
        fh.write(np.ascontiguousarray(arr, dtype=_DTYPE_CODES[code]).tobytes())


def read_fixture(path) -> tuple[np.ndarray, dict]:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise RasterError(f"{path}: truncated header")
    magic, code, h, w, c, m = _HEADER.unpack_from(raw)
    if magic != FIXTURE_MAGIC:
        raise RasterError(f"{path}: bad magic {magic!r}")
    if code not in _DTYPE_CODES:
        raise RasterError(f"{path}: unknown dtype code {code}")
    dtype = _DTYPE_CODES[code]
    start = _HEADER.size + m
    expected = c * h * w * dtype.itemsize
    if len(raw) - start != expected:
        raise RasterError(f"{path}: expected {expected} data bytes for {c}x{h}x{w}, "
                          f"found {len(raw) - start}")
    meta = json.loads(raw[_HEADER.size:start] or b"{}")
    data = np.frombuffer(raw, dtype=dtype, offset=start).reshape(c, h, w).copy()
    return data, meta


# -- GeoTIFF ------------------------------------------------------------------

def write_geotiff(path, grid, bounds: Bounds | None = None, meta: dict | None = None) -> None:
    arr = _as_chw(grid)
    c, h, w = arr.shape
    extratags = []
    if bounds is not None:
        xres = (bounds.east - bounds.west) / w
        yres = (bounds.north - bounds.south) / h
        extratags.append((_PIXEL_SCALE, "d", 3, (xres, yres, 0.0), True))
        extratags.append((_TIEPOINT, "d", 6, (0.0, 0.0, 0.0, bounds.west, bounds.north, 0.0), True))
        geokeys = _geokeys(bounds.epsg)
        extratags.append((_GEOKEYS, "H", len(geokeys), geokeys, True))
    data = arr[0] if c == 1 else arr
    tifffile.imwrite(
        path, data, photometric="minisblack",
        planarconfig="separate" if c > 1 else None,
        description=json.dumps(meta or {}, default=str), metadata=None,
        extratags=extratags,
    )


def _geokeys(epsg: int | None) -> tuple[int, ...]:
    keys = [(1025, 0, 1, 1)]  # RasterPixelIsArea
    if epsg is not None:
        geographic = epsg == 4326 or 4000 <= epsg < 5000
        keys.insert(0, (1024, 0, 1, 2 if geographic else 1))
        keys.append((2048 if geographic else 3072, 0, 1, epsg))
    flat = [1, 1, 0, len(keys)]
    for k in keys:
        flat.extend(k)
    return tuple(flat)


def read_geotiff(path) -> tuple[np.ndarray, dict, Bounds | None]:
    with tifffile.TiffFile(path) as tif:
        page = tif.pages[0]
        data = tif.asarray()
        tags = {t.code: t.value for t in page.tags.values()}
        description = page.description or ""
    if data.ndim == 2:
        data = data[None]
    elif data.ndim == 3 and page.planarconfig == 2:
        pass
    elif data.ndim == 3:
        data = np.moveaxis(data, -1, 0)
    else:
        raise RasterError(f"{path}: unsupported raster shape {data.shape}")
    try:
        meta = json.loads(description) if description.strip().startswith("{") else {}
    except json.JSONDecodeError:
        meta = {}
    bounds = None
    if _PIXEL_SCALE in tags and _TIEPOINT in tags:
        sx, sy = tags[_PIXEL_SCALE][:2]
        tp = tags[_TIEPOINT]
        west = tp[3] - tp[0] * sx
        north = tp[4] + tp[1] * sy
        epsg = None
        keys = tags.get(_GEOKEYS)
        if keys is not None:
            for i in range(4, len(keys), 4):
                if keys[i] in (2048, 3072):
                    epsg = int(keys[i + 3])
        _, h, w = data.shape
        bounds = Bounds(west, north - sy * h, west + sx * w, north, epsg)
    return data, meta, bounds


# -- generic entry points -------------------------------------------------------

def _is_geotiff(path) -> bool:
    return Path(path).suffix.lower() in (".tif", ".tiff")


def _as_chw(grid) -> np.ndarray:
    arr = np.asarray(grid)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3:
        raise RasterError(f"expected a (H, W) or (C, H, W) grid, got shape {arr.shape}")
    return arr


def save_raster(grid, path, bounds: Bounds | None = None, meta: dict | None = None) -> None:
    """Write ``grid`` to ``path``; the format follows the file suffix."""
    path = Path(path)
    if not path.parent.is_dir():
        raise FileNotFoundError(f"output directory does not exist: {path.parent}")
    meta = dict(meta or {})
    if _is_geotiff(path):
        write_geotiff(path, grid, bounds, meta)
    else:
        if bounds is not None:
            meta["bounds"] = [bounds.west, bounds.south, bounds.east, bounds.north, bounds.epsg]
        write_fixture(path, grid, meta)


def load_raster(path) -> tuple[np.ndarray, dict, Bounds | None]:
    """Read a raster as ``(C, H, W)`` plus its metadata dict and bounds."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such raster: {path}")
    if _is_geotiff(path):
        return read_geotiff(path)
    data, meta = read_fixture(path)
    bounds = None
    if meta.get("bounds"):
        bounds = Bounds(*meta["bounds"])
    return data, meta, bounds


_DATE_IN_NAME = re.compile(r"(\d{4})-?(\d{2})-?(\d{2})")


def _parse_date(value) -> dt.date | None:
    if value is None or isinstance(value, dt.date):
        return value
    return dt.date.fromisoformat(str(value)[:10])


def date_from_name(path) -> dt.date | None:
    m = _DATE_IN_NAME.search(Path(path).stem)
    if not m:
        return None
    try:
        return dt.date(*map(int, m.groups()))
    except ValueError:
        return None


def load_tile(path, channel_mapping: dict[str, int] | None = None, scale: str | None = None,
              acquisition_date: dt.date | None = None) -> SarTile:
    """Load a dual-polarisation tile and bring it into normalized form.

    ``channel_mapping`` maps ``"vv"``/``"vh"`` to band indices (default 0, 1).
    ``scale`` says what the stored values are: ``"linear"`` power, ``"db"``,
    or already ``"normalized"``. When omitted it is taken from the file
    metadata, falling back to ``"db"``.
    """
    mapping = channel_mapping or {"vv": 0, "vh": 1}
    data, meta, bounds = load_raster(path)
    needed = max(mapping["vv"], mapping["vh"]) + 1
    if data.shape[0] < needed:
        raise RasterError(f"{path}: expected at least {needed} bands (VV, VH), found {data.shape[0]}")
    scale = (scale or meta.get("scale") or "db").lower()
    grids = {}
    for name in ("vv", "vh"):
        band = data[mapping[name]].astype(np.float64)
        if not np.all(np.isfinite(band)):
            raise RasterError(f"{path}: band {name.upper()} contains NaN or Inf")
        if scale == "linear":
            band = clip_and_normalize(to_db(band), name)
        elif scale == "db":
            band = clip_and_normalize(band, name)
        elif scale != "normalized":
            raise ValueError(f"unknown scale {scale!r}")
        grids[name] = band
    date = acquisition_date or _parse_date(meta.get("date")) or date_from_name(path)
    return SarTile(grids["vv"], grids["vh"], acquisition_date=date, bounds=bounds,
                   orbit_pass=meta.get("orbit_pass"), relative_orbit=meta.get("relative_orbit"))


def save_tile(tile: SarTile, path) -> None:
    """Write a tile as a two-band normalized raster (VV, VH)."""
    meta = {"scale": "normalized", "date": tile.acquisition_date,
            "orbit_pass": tile.orbit_pass.value if tile.orbit_pass else None,
            "relative_orbit": tile.relative_orbit}
    save_raster(np.stack([tile.vv, tile.vh]).astype(np.float32), path, bounds=tile.bounds, meta=meta)


def load_mask(path) -> GroundTruthMask:
    data, meta, _ = load_raster(path)
    if data.shape[0] != 1:
        raise RasterError(f"{path}: a mask must have exactly one band, found {data.shape[0]}")
    return GroundTruthMask(data[0], date=_parse_date(meta.get("date")))


def save_mask(mask: GroundTruthMask, path, bounds: Bounds | None = None) -> None:
    save_raster(mask.labels.astype(np.int8), path, bounds=bounds, meta={"date": mask.date})
