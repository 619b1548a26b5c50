"""Numba and numpy kernel variants must agree."""
import math

import numpy as np
import pytest

from navsafe import _kernels as K


@pytest.mark.parametrize("relu", [True, False])
def test_dense_variants_agree(relu):
    rng = np.random.default_rng(1)
    x = rng.normal(size=(37, 13))
    w = rng.normal(size=(13, 9))
    b = rng.normal(size=9)
    a = K.dense_nb(x, w, b, relu)
    c = K.dense_np(x, w, b, relu)
    np.testing.assert_allclose(a, c, rtol=0, atol=1e-12)
    ref = x @ w + b
    np.testing.assert_allclose(a, np.maximum(ref, 0) if relu else ref, atol=1e-12)


@pytest.mark.parametrize("kernel", [K.dense_nb, K.dense_np])
def test_dense_is_row_exact(kernel):
    rng = np.random.default_rng(2)
    x = rng.normal(size=(50, 13))
    w = rng.normal(size=(13, 64))
    b = rng.normal(size=64)
    full = kernel(x, w, b, True)
    for i in range(len(x)):
        assert np.array_equal(kernel(x[i:i + 1], w, b, True)[0], full[i])


@pytest.mark.parametrize("relu", [True, False])
def test_interval_variants_agree_and_enclose(relu):
    rng = np.random.default_rng(3)
    c = rng.normal(size=(20, 7))
    r = rng.uniform(0, 0.5, size=(20, 7))
    lo, hi = c - r, c + r
    w = rng.normal(size=(7, 4))
    b = rng.normal(size=4)
    l1, h1 = K.interval_dense_nb(lo, hi, w, b, relu)
    l2, h2 = K.interval_dense_np(lo, hi, w, b, relu)
    np.testing.assert_allclose(l1, l2, atol=1e-12)
    np.testing.assert_allclose(h1, h2, atol=1e-12)
    pts = lo[:, None, :] + (hi - lo)[:, None, :] * rng.random((20, 200, 7))
    y = np.einsum("npk,km->npm", pts, w) + b
    if relu:
        y = np.maximum(y, 0)
    assert np.all(y >= l1[:, None, :]) and np.all(y <= h1[:, None, :])


def test_gae_variants_agree():
    rng = np.random.default_rng(4)
    for _ in range(20):
        n = int(rng.integers(1, 80))
        r, v = rng.normal(size=n), rng.normal(size=n)
        d = (rng.random(n) < 0.1).astype(float)
        a1, g1 = K.gae_nb(r, v, d, 0.7, 0.9, 0.95)
        a2, g2 = K.gae_np(r, v, d, 0.7, 0.9, 0.95)
        np.testing.assert_allclose(a1, a2, atol=1e-12)
        np.testing.assert_allclose(g1, g2, atol=1e-12)


def test_lidar_variants_agree():
    rng = np.random.default_rng(5)
    for _ in range(200):
        rects = np.column_stack([rng.uniform(0.5, 3.5, (3, 2)), rng.uniform(0.05, 0.4, (3, 2))])
        discs = np.column_stack([rng.uniform(0.5, 3.5, (2, 2)), rng.uniform(0.05, 0.3, 2)])
        x, y = rng.uniform(0.1, 3.9, 2)
        th = rng.uniform(-math.pi, math.pi)
        a = K.lidar_nb(x, y, th, rects, discs, 4.0, 4.0, 11, math.pi, 3.5)
        b = K.lidar_np(x, y, th, rects, discs, 4.0, 4.0, 11, math.pi, 3.5)
        np.testing.assert_allclose(a, b, atol=1e-12)


def test_backend_flag_names_a_known_backend():
    assert K.BACKEND in {"numba", "numpy"}
    assert (K.dense is K.dense_nb) == K.USE_NUMBA


def test_disable_flag_selects_numpy(monkeypatch):
    import importlib

    monkeypatch.setenv("NAVSAFE_DISABLE_NUMBA", "1")
    mod = importlib.reload(K)
    try:
        assert mod.BACKEND == "numpy" and mod.dense is mod.dense_np
    finally:
        monkeypatch.delenv("NAVSAFE_DISABLE_NUMBA")
        importlib.reload(K)
