"""Differences between pre- and post-event latent Gaussians.

All functions take ``(mean, log_variance)`` pairs as arrays whose last axis
is the latent dimension and reduce over it, so a batch of N patches gives
N values. Standard deviations are ``exp(0.5 * log_variance)``.
"""
from __future__ import annotations

from enum import Enum

import numpy as np


class DivergenceKind(str, Enum):
    KLD = "kld"
    JSD = "jsd"
    ED = "ed"
    COSD = "cosd"

    @property
    def default_threshold(self) -> float:
        return -0.9 if self is DivergenceKind.COSD else 0.0


def _params(d):
    mean = getattr(d, "mean", None)
    if mean is None:
        mean, log_var = d
    else:
        log_var = d.log_variance
    mean = np.asarray(_numpy(mean), dtype=np.float64)
    log_var = np.asarray(_numpy(log_var), dtype=np.float64)
    return mean, log_var


def _numpy(x):
    return x.detach().cpu().numpy() if hasattr(x, "detach") else x


def _kld_std(mu1, s1, mu2, s2):
    return np.sum(np.log(s2 / s1) + (s1**2 + (mu1 - mu2) ** 2) / (2 * s2**2) - 0.5, axis=-1)


def kld(d1, d2) -> np.ndarray:
    """KL(N1 || N2) for diagonal Gaussians."""
    mu1, lv1 = _params(d1)
    mu2, lv2 = _params(d2)
    return _kld_std(mu1, np.exp(0.5 * lv1), mu2, np.exp(0.5 * lv2))


def jsd(d1, d2) -> np.ndarray:
    """Average KL of each Gaussian to the moment-averaged midpoint Gaussian.

    The midpoint has mean (mu1 + mu2) / 2 and standard deviation
    (s1 + s2) / 2, not the true mixture.
    """
    mu1, lv1 = _params(d1)
    mu2, lv2 = _params(d2)
    s1, s2 = np.exp(0.5 * lv1), np.exp(0.5 * lv2)
    mum, sm = 0.5 * (mu1 + mu2), 0.5 * (s1 + s2)
    return 0.5 * _kld_std(mu1, s1, mum, sm) + 0.5 * _kld_std(mu2, s2, mum, sm)


def ed(d1, d2) -> np.ndarray:
    """Euclidean distance between the means."""
    mu1, _ = _params(d1)
    mu2, _ = _params(d2)
    return np.sqrt(np.sum((mu1 - mu2) ** 2, axis=-1))


def cosd(d1, d2) -> np.ndarray:
    """Negative cosine similarity of the means, in [-1, 1]."""
    mu1, _ = _params(d1)
    mu2, _ = _params(d2)
    n1 = np.linalg.norm(mu1, axis=-1)
    n2 = np.linalg.norm(mu2, axis=-1)
    if np.any(n1 == 0) or np.any(n2 == 0):
        raise ValueError("cosine difference is undefined for a zero-norm mean")
    value = -np.sum(mu1 * mu2, axis=-1) / (n1 * n2)
    return np.clip(value, -1.0, 1.0)


_FUNCS = {DivergenceKind.KLD: kld, DivergenceKind.JSD: jsd,
          DivergenceKind.ED: ed, DivergenceKind.COSD: cosd}


def divergence(kind: DivergenceKind | str, d1, d2) -> np.ndarray:
    return _FUNCS[DivergenceKind(kind)](d1, d2)
