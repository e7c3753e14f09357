"""Time-series stacks, reflect padding, stride-1 patches and augmentation."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import ndimage

from .raster_io import SarTile

N_CHANNELS = 3


@dataclass
class TimeSeriesStack:
    """``values`` is a (T, H, W, 3) float32 grid; channel 2 is all zeros."""

    values: np.ndarray
    dates: tuple

    def __post_init__(self):
        if self.values.ndim != 4 or self.values.shape[-1] != N_CHANNELS:
            raise ValueError(f"stack must be (T, H, W, 3), got {self.values.shape}")
        if self.values.shape[0] < 1:
            raise ValueError("stack needs at least one timestep")
        self.dates = tuple(self.dates)

    @property
    def timesteps(self) -> int:
        return self.values.shape[0]

    @property
    def spatial_shape(self) -> tuple[int, int]:
        return self.values.shape[1:3]


@dataclass
class PatchBatch:
    """``patches`` is (N, T, p, p, 3); ``anchors`` is (N, 2) of (row, col)."""

    patches: np.ndarray
    anchors: np.ndarray

    def __len__(self):
        return len(self.patches)


def _tile_grid(tile: SarTile) -> np.ndarray:
    h, w = tile.shape
    grid = np.zeros((h, w, N_CHANNELS), dtype=np.float32)
    grid[..., 0] = tile.vv
    grid[..., 1] = tile.vh
    return grid


def stack_pre_series(tiles: list[SarTile], T: int) -> TimeSeriesStack:
    if len(tiles) != T:
        raise ValueError(f"expected {T} tiles, got {len(tiles)}")
    shapes = {t.shape for t in tiles}
    if len(shapes) != 1:
        raise ValueError(f"tiles differ in size: {sorted(shapes)}")
    dates = [t.acquisition_date for t in tiles]
    if all(d is not None for d in dates):
        if any(b <= a for a, b in zip(dates, dates[1:])):
            raise ValueError(f"tile dates must be strictly increasing, got {dates}")
    return TimeSeriesStack(np.stack([_tile_grid(t) for t in tiles]), dates)


def replicate_post(tile: SarTile, T: int) -> TimeSeriesStack:
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    grid = _tile_grid(tile)
    return TimeSeriesStack(np.repeat(grid[None], T, axis=0), [tile.acquisition_date] * T)


def default_padding(patch_size: int) -> tuple[int, int]:
    """Padding that yields exactly one stride-1 patch per pixel (8/7 for p=16)."""
    return patch_size // 2, patch_size // 2 - 1


def pad_reflect(stack: TimeSeriesStack, top_left: int = 8, bottom_right: int = 7) -> TimeSeriesStack:
    h, w = stack.spatial_shape
    if top_left < 0 or bottom_right < 0:
        raise ValueError("padding must be non-negative")
    if max(top_left, bottom_right) >= min(h, w):
        raise ValueError(f"padding {top_left}/{bottom_right} too large for a {h}x{w} image")
    spec = ((0, 0), (top_left, bottom_right), (top_left, bottom_right), (0, 0))
    return TimeSeriesStack(np.pad(stack.values, spec, mode="reflect"), stack.dates)


def crop(stack: TimeSeriesStack, top_left: int, bottom_right: int) -> TimeSeriesStack:
    h, w = stack.spatial_shape
    v = stack.values[:, top_left:h - bottom_right, top_left:w - bottom_right]
    return TimeSeriesStack(v, stack.dates)


def patch_anchors(padded_shape: tuple[int, int], p: int, stride: int = 1) -> np.ndarray:
    """Top-left indices of every patch, row-major, as an (N, 2) int array."""
    hp, wp = padded_shape
    if p > hp or p > wp:
        raise ValueError(f"patch size {p} exceeds padded dims {hp}x{wp}")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    rows = np.arange(0, hp - p + 1, stride)
    cols = np.arange(0, wp - p + 1, stride)
    rr, cc = np.meshgrid(rows, cols, indexing="ij")
    return np.stack([rr.ravel(), cc.ravel()], axis=1)


def gather_patches(values: np.ndarray, anchors: np.ndarray, p: int) -> np.ndarray:
    """Cut (N, T, p, p, 3) patches from a padded (T, H, W, 3) grid."""
    windows = sliding_window_view(values, (p, p), axis=(1, 2))  # (T, H', W', 3, p, p)
    out = windows[:, anchors[:, 0], anchors[:, 1]]  # (T, N, 3, p, p)
    return np.ascontiguousarray(out.transpose(1, 0, 3, 4, 2))


def extract_patches(stack: TimeSeriesStack, p: int = 16, stride: int = 1) -> PatchBatch:
    """All p x p patches of an (already padded) stack at the given stride."""
    anchors = patch_anchors(stack.spatial_shape, p, stride)
    return PatchBatch(gather_patches(stack.values, anchors, p), anchors)


# -- augmentation -------------------------------------------------------------

GAMMA_RANGE = (0.25, 2.0)
BLUR_SIGMA_RANGE = (0.0, 1.0)
P_LR_FLIP = 0.5
P_UD_FLIP = 0.2
ROTATION_RANGE = (-90.0, 90.0)


def gaussian_blur3(patch: np.ndarray, sigma: float) -> np.ndarray:
    """3x3 Gaussian blur of every (timestep, channel) plane, reflect boundary."""
    if sigma <= 0:
        return patch
    ax = np.array([-1.0, 0.0, 1.0])
    k = np.exp(-ax**2 / (2 * sigma**2))
    k /= k.sum()
    out = ndimage.correlate1d(patch, k, axis=1, mode="reflect")
    return ndimage.correlate1d(out, k, axis=2, mode="reflect")


def gamma_contrast(patch: np.ndarray, gamma: float) -> np.ndarray:
    return np.power(patch, gamma)


def rotate(patch: np.ndarray, degrees: float) -> np.ndarray:
    """Bilinear rotation of the spatial axes about the patch centre."""
    out = ndimage.rotate(patch, degrees, axes=(2, 1), reshape=False, order=1, mode="reflect")
    return np.clip(out, 0.0, 1.0)


def augment(patch: np.ndarray, seed) -> np.ndarray:
    """Random blur / gamma / flip / rotation of one (T, p, p, 3) patch.

    Every timestep receives the same transform. Each of blur, gamma and
    rotation is applied with probability 1/2; flips use their own rates.
    """
    rng = np.random.default_rng(seed)
    out = np.asarray(patch, dtype=np.float32)
    # draw all decisions up front so the random stream does not depend on the path taken
    do_blur, do_gamma, do_rot = rng.random(3) < 0.5
    sigma = rng.uniform(*BLUR_SIGMA_RANGE)
    gamma = rng.uniform(*GAMMA_RANGE)
    flip_lr = rng.random() < P_LR_FLIP
    flip_ud = rng.random() < P_UD_FLIP
    angle = rng.uniform(*ROTATION_RANGE)
    if do_blur:
        out = gaussian_blur3(out, sigma)
    if do_gamma:
        out = gamma_contrast(out, gamma)
    if flip_lr:
        out = out[:, :, ::-1]
    if flip_ud:
        out = out[:, ::-1]
    if do_rot:
        out = rotate(out, angle)
    return np.ascontiguousarray(out, dtype=np.float32)


def augment_batch(patches: np.ndarray, seed) -> np.ndarray:
    """Augment each patch with a seed derived from ``(*seed, index)``."""
    base = [int(s) for s in np.atleast_1d(seed)]
    return np.stack([augment(p, [*base, i]) for i, p in enumerate(patches)])

