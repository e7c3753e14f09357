"""Classical change-detection baselines: Lee-filtered log-ratio and CVA."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .raster_io import SarTile, denormalize


@dataclass
class Threshold:
    value: float
    degenerate: bool = False

    def __float__(self):
        return self.value


def lee_filter(db_grid, window: int = 5, noise_var: float | None = None) -> np.ndarray:
    """Adaptive Lee (local MMSE) filter for dB grids.

    ``x_hat = m + k (x - m)`` with ``k = max(0, 1 - noise_var / local_var)``,
    m and local_var taken over a ``window`` x ``window`` neighbourhood. In dB
    the multiplicative speckle is additive, so the coefficients of variation
    of the linear-domain filter become plain variances here. ``noise_var``
    defaults to the median of the positive local variances.
    """
    if window < 3 or window % 2 == 0:
        raise ValueError(f"window must be an odd integer >= 3, got {window}")
    x = np.asarray(db_grid, dtype=np.float64)
    mean = ndimage.uniform_filter(x, window, mode="reflect")
    sq_mean = ndimage.uniform_filter(x * x, window, mode="reflect")
    var = sq_mean - mean * mean
    # cancellation noise on flat regions
    var[var < 1e-12 * np.maximum(1.0, mean * mean)] = 0.0
    if noise_var is None:
        positive = var[var > 0]
        noise_var = float(np.median(positive)) if positive.size else 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        k = np.where(var > 0, np.maximum(0.0, 1.0 - noise_var / var), 0.0)
    return mean + k * (x - mean)


def _db(tile: SarTile, channel: str) -> np.ndarray:
    return denormalize(getattr(tile, channel.lower()), channel)


def log_ratio(s_t1: SarTile, s_tn: SarTile, channel_policy: str = "mean_abs",
              window: int | None = 5) -> np.ndarray:
    """dB difference ``dB(s_tn) - dB(s_t1)`` on Lee-filtered grids.

    ``channel_policy``: ``"vv"``, ``"vh"`` or ``"mean_abs"`` (mean of the
    absolute per-channel differences). ``window=None`` skips filtering.
    """
    if s_t1.shape != s_tn.shape:
        raise ValueError(f"tiles differ in shape: {s_t1.shape} vs {s_tn.shape}")
    diffs = {}
    for ch in ("VV", "VH"):
        a, b = _db(s_t1, ch), _db(s_tn, ch)
        if window is not None:
            a, b = lee_filter(a, window), lee_filter(b, window)
        diffs[ch] = b - a
    policy = channel_policy.lower()
    if policy == "vv":
        return diffs["VV"]
    if policy == "vh":
        return diffs["VH"]
    if policy == "mean_abs":
        return 0.5 * (np.abs(diffs["VV"]) + np.abs(diffs["VH"]))
    raise ValueError(f"unknown channel policy {channel_policy!r}")


def cva_magnitude(pre: SarTile, post: SarTile) -> np.ndarray:
    if pre.shape != post.shape:
        raise ValueError(f"tiles differ in shape: {pre.shape} vs {post.shape}")
    return cva_from_deltas(post.vv.astype(np.float64) - pre.vv, post.vh.astype(np.float64) - pre.vh)


def cva_from_deltas(d_vv, d_vh) -> np.ndarray:
    return np.hypot(d_vv, d_vh)


# -- histogram thresholds ------------------------------------------------------

def histogram(values, bins: int = 256) -> tuple[np.ndarray, np.ndarray]:
    """Counts and bin edges over the data's min-max range."""
    v = np.asarray(values, dtype=np.float64).ravel()
    v = v[np.isfinite(v)]
    if v.size == 0:
        raise ValueError("no finite values to threshold")
    counts, edges = np.histogram(v, bins=bins, range=(v.min(), v.max()) if v.min() < v.max()
                                 else (v.min(), v.min() + 1.0))
    return counts, edges


def otsu_bin(counts) -> int | None:
    """Index k maximising between-class variance of {bins <= k} vs {bins > k}.

    Ties go to the lowest k. Returns None when no split has both classes
    populated.
    """
    c = np.asarray(counts, dtype=np.float64)
    idx = np.arange(c.size, dtype=np.float64)
    w0 = np.cumsum(c)[:-1]
    s0 = np.cumsum(c * idx)[:-1]
    total, s_total = c.sum(), (c * idx).sum()
    w1 = total - w0
    valid = (w0 > 0) & (w1 > 0)
    if not valid.any():
        return None
    with np.errstate(divide="ignore", invalid="ignore"):
        m0 = s0 / w0
        m1 = (s_total - s0) / w1
        between = np.where(valid, w0 * w1 * (m0 - m1) ** 2, -np.inf)
    return int(np.argmax(between))


def yen_bin(counts) -> int | None:
    """Index k maximising Yen's maximum-correlation criterion; ties to lowest k."""
    c = np.asarray(counts, dtype=np.float64)
    p = c / c.sum()
    P = np.cumsum(p)[:-1]
    sq = p * p
    S0 = np.cumsum(sq)[:-1]
    S1 = sq.sum() - S0
    valid = (P > 0) & (P < 1) & (S0 > 0) & (S1 > 0)
    if not valid.any():
        return None
    with np.errstate(divide="ignore", invalid="ignore"):
        crit = np.where(valid, -np.log(S0 * S1) + 2 * np.log(P * (1 - P)), -np.inf)
    return int(np.argmax(crit))


def _threshold(values, bins, chooser) -> Threshold:
    counts, edges = histogram(values, bins)
    k = chooser(counts)
    if k is None:
        return Threshold(float(edges[0]), degenerate=True)
    # upper edge of bin k: values above it are "change"
    return Threshold(float(edges[k + 1]))


def otsu_threshold(values, bins: int = 256) -> Threshold:
    return _threshold(values, bins, otsu_bin)


def yen_threshold(values, bins: int = 256) -> Threshold:
    return _threshold(values, bins, yen_bin)


def binarize_map(values, method: str = "otsu", bins: int = 256) -> tuple[np.ndarray, Threshold]:
    t = (otsu_threshold if method == "otsu" else yen_threshold)(values, bins)
    return np.asarray(values) > t.value, t


def run_baseline(method: str, pre: SarTile, post: SarTile, window: int = 5,
                 channel_policy: str = "mean_abs", bins: int = 256):
    """Return ``(real_map, binary_map, threshold)`` for a named baseline.

    ``method`` is one of ``logratio-otsu``, ``logratio-yen`` or ``cva``.
    """
    if method in ("logratio-otsu", "logratio-yen"):
        values = log_ratio(pre, post, channel_policy, window)
        mask, t = binarize_map(values, method.split("-")[1], bins)
    elif method == "cva":
        values = cva_magnitude(pre, post)
        mask, t = binarize_map(values, "otsu", bins)
    else:
        raise ValueError(f"unknown baseline {method!r}")
    return values, mask, t
