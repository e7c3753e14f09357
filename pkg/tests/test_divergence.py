import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays
from scipy import integrate, stats

from clvae.divergence import DivergenceKind, cosd, divergence, ed, jsd, kld


def dist(mu, sigma):
    mu = np.atleast_1d(np.asarray(mu, float))
    return mu, 2 * np.log(np.broadcast_to(np.asarray(sigma, float), mu.shape))


def kl_quadrature(mu1, s1, mu2, s2):
    """KL of 1-D Gaussians by numerical integration of p log(p/q)."""
    p, q = stats.norm(mu1, s1), stats.norm(mu2, s2)
    f = lambda x: p.pdf(x) * (p.logpdf(x) - q.logpdf(x))
    lo, hi = min(mu1, mu2) - 12 * max(s1, s2), max(mu1, mu2) + 12 * max(s1, s2)
    return integrate.quad(f, lo, hi, limit=200, epsabs=1e-13)[0]


def test_kld_identical_is_zero():
    d = dist([0.3, -1.2], [0.5, 2.0])
    assert kld(d, d) == pytest.approx(0.0, abs=1e-15)


def test_kld_unit_variance_reduction():
    d1, d2 = dist([1.0, 2.0, -1.0], 1.0), dist([0.0, 0.5, 1.0], 1.0)
    assert kld(d1, d2) == pytest.approx(0.5 * (1 + 2.25 + 4))


def test_kld_asymmetric_matches_quadrature():
    # mu = 0 vs 1, sigma = 1 vs 2
    d1, d2 = dist([0.0], 1.0), dist([1.0], 2.0)
    forward, backward = kld(d1, d2), kld(d2, d1)
    assert forward == pytest.approx(kl_quadrature(0, 1, 1, 2), abs=1e-9)
    assert backward == pytest.approx(kl_quadrature(1, 2, 0, 1), abs=1e-9)
    assert forward == pytest.approx(np.log(2) + 2 / 8 - 0.5)
    assert forward != pytest.approx(backward)


def test_jsd_examples():
    d = dist([0.2, 0.1], [1.0, 3.0])
    assert jsd(d, d) == pytest.approx(0.0, abs=1e-15)
    # sigma 1, mean gap 1 on one axis: midpoint N(0.5, 1), each KL = 0.5 * 0.25
    a, b = dist([0.0, 0.0], 1.0), dist([1.0, 0.0], 1.0)
    assert abs(jsd(a, b) - 0.125) < 1e-12
    assert jsd(a, b) == pytest.approx(
        0.5 * kl_quadrature(0, 1, 0.5, 1) + 0.5 * kl_quadrature(1, 1, 0.5, 1), abs=1e-9)


def test_ed_examples():
    assert ed(dist([1.0, 2.0], 1), dist([1.0, 2.0], 3)) == 0.0
    assert ed(dist([1.0, 0.0], 1), dist([0.0, 0.0], 1)) == 1.0


def test_cosd_examples():
    a = dist([1.0, 2.0], 1)
    assert cosd(a, a) == pytest.approx(-1.0)
    assert cosd(dist([1.0, 0.0], 1), dist([0.0, 3.0], 1)) == pytest.approx(0.0)
    assert cosd(a, dist([-1.0, -2.0], 1)) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        cosd(a, dist([0.0, 0.0], 1))


vectors = arrays(np.float64, 6, elements=st.floats(-5, 5))


@given(vectors, vectors, vectors)
def test_ed_triangle_inequality(x, y, z):
    dx, dy, dz = dist(x, 1), dist(y, 1), dist(z, 1)
    assert ed(dx, dz) <= ed(dx, dy) + ed(dy, dz) + 1e-9


@given(vectors, vectors, arrays(np.float64, 6, elements=st.floats(-2, 2)),
       arrays(np.float64, 6, elements=st.floats(-2, 2)))
def test_nonnegativity_and_jsd_symmetry(m1, m2, lv1, lv2):
    d1, d2 = (m1, lv1), (m2, lv2)
    assert kld(d1, d2) >= -1e-12
    assert jsd(d1, d2) >= -1e-12
    assert jsd(d1, d2) == pytest.approx(jsd(d2, d1), rel=1e-12, abs=1e-12)


def test_batched_reduction_over_last_axis():
    rng = np.random.default_rng(0)
    mu1, mu2 = rng.normal(size=(5, 8)), rng.normal(size=(5, 8))
    lv = np.zeros((5, 8))
    out = kld((mu1, lv), (mu2, lv))
    assert out.shape == (5,)
    assert out[2] == pytest.approx(kld((mu1[2], lv[2]), (mu2[2], lv[2])))


def test_kind_thresholds_and_dispatch():
    assert DivergenceKind("cosd").default_threshold == -0.9
    assert all(DivergenceKind(k).default_threshold == 0.0 for k in ("kld", "jsd", "ed"))
    d = dist([1.0, 1.0], 1)
    assert divergence("ed", d, d) == 0.0
