"""Change maps from latent-distribution differences of pre/post stacks."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from . import divergence as dv
from .model import CLVAE
from .patching import (TimeSeriesStack, default_padding, gather_patches, pad_reflect,
                       patch_anchors, replicate_post, stack_pre_series)
from .raster_io import Bounds, SarTile, save_raster

# GEMMs with one or two rows take a different kernel path and round differently
_MIN_ROWS = 4


@dataclass
class ChangeMap:
    values: np.ndarray
    kind: dv.DivergenceKind


@dataclass
class BinaryChangeMap:
    mask: np.ndarray
    threshold: float


@torch.no_grad()
def encode_patches(model: CLVAE, patches: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Means and log-variances for one chunk of patches (eval mode)."""
    n = len(patches)
    x = torch.from_numpy(np.ascontiguousarray(patches, dtype=np.float32))
    if n < _MIN_ROWS:
        x = torch.cat([x, x[-1:].expand(_MIN_ROWS - n, *x.shape[1:])])
    dist, _ = model.encode(x)
    return dist.mean[:n].double().numpy(), dist.log_variance[:n].double().numpy()


def encode_stack(model: CLVAE, stack: TimeSeriesStack,
                 batch_size: int = 512) -> tuple[np.ndarray, np.ndarray]:
    """Per-pixel latent parameters of an unpadded stack, shaped (H*W, D)."""
    cfg = model.config
    if stack.timesteps != cfg.timesteps:
        raise ValueError(f"model expects {cfg.timesteps} timesteps, got {stack.timesteps}")
    p = cfg.patch_size
    padded = pad_reflect(stack, *default_padding(p)).values
    anchors = patch_anchors(padded.shape[1:3], p, 1)
    was_training = model.training
    model.eval()
    try:
        parts = [encode_patches(model, gather_patches(padded, anchors[s:s + batch_size], p))
                 for s in range(0, len(anchors), batch_size)]
    finally:
        model.train(was_training)
    return np.concatenate([m for m, _ in parts]), np.concatenate([v for _, v in parts])


def stack_divergence(model: CLVAE, pre: TimeSeriesStack, post: TimeSeriesStack,
                     kind: dv.DivergenceKind | str = "cosd", batch_size: int = 512) -> ChangeMap:
    """Per-pixel divergence between two equally sized (unpadded) stacks."""
    kind = dv.DivergenceKind(kind)
    cfg = model.config
    if pre.values.shape != post.values.shape:
        raise ValueError(f"pre {pre.values.shape} and post {post.values.shape} stacks differ")
    if pre.timesteps != cfg.timesteps:
        raise ValueError(f"model expects {cfg.timesteps} timesteps, got {pre.timesteps}")
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    h, w = pre.spatial_shape
    p = cfg.patch_size
    top, bottom = default_padding(p)
    pre_p = pad_reflect(pre, top, bottom).values
    post_p = pad_reflect(post, top, bottom).values
    anchors = patch_anchors(pre_p.shape[1:3], p, 1)
    assert len(anchors) == h * w
    was_training = model.training
    model.eval()
    values = np.empty(h * w, dtype=np.float64)
    try:
        for start in range(0, len(anchors), batch_size):
            a = anchors[start:start + batch_size]
            d1 = encode_patches(model, gather_patches(pre_p, a, p))
            d2 = encode_patches(model, gather_patches(post_p, a, p))
            values[start:start + len(a)] = dv.divergence(kind, d1, d2)
    finally:
        model.train(was_training)
    return ChangeMap(values.reshape(h, w), kind)


def change_map(pre: list[SarTile], post: SarTile, model: CLVAE,
               kind: dv.DivergenceKind | str = "cosd", batch_size: int = 512) -> ChangeMap:
    """Pre-event series vs the post image replicated to the model's length."""
    T = model.config.timesteps
    if len(pre) != T:
        raise ValueError(f"model expects {T} pre-event images, got {len(pre)}")
    if any(t.shape != post.shape for t in pre):
        raise ValueError("pre and post images must share the same dimensions")
    return stack_divergence(model, stack_pre_series(pre, T), replicate_post(post, T), kind, batch_size)


def binarize(cmap: ChangeMap, threshold: float | None = None) -> BinaryChangeMap:
    if threshold is None:
        threshold = cmap.kind.default_threshold
    return BinaryChangeMap(cmap.values > threshold, float(threshold))


def export_change_products(cmap: ChangeMap, mask: BinaryChangeMap, out_dir,
                           bounds: Bounds | None = None, fmt: str = ".tif",
                           png: bool = True) -> dict[str, Path]:
    """Write the real-valued map, the binary mask raster and a mask PNG."""
    out = Path(out_dir)
    if not out.is_dir():
        raise FileNotFoundError(f"output directory does not exist: {out}")
    paths = {
        "change_map": out / f"change_map{fmt}",
        "change_mask": out / f"change_mask{fmt}",
    }
    meta = {"kind": cmap.kind.value, "threshold": mask.threshold}
    save_raster(cmap.values.astype(np.float32), paths["change_map"], bounds, meta)
    save_raster(mask.mask.astype(np.uint8), paths["change_mask"], bounds, meta)
    if png:
        from .plotting import save_mask_png
        paths["png"] = out / "change_mask.png"
        save_mask_png(mask.mask, paths["png"])
    return paths
