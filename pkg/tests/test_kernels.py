"""Backend parity: every numba kernel must agree with its numpy reference."""

import os
import subprocess
import sys

import numpy as np
import pytest

from adapterbot import kernels

needs_numba = pytest.mark.skipif(
    not kernels.NUMBA_AVAILABLE, reason="numba not importable"
)


def _pair(name):
    entry = kernels.KERNELS[name]
    if entry["numba"] is None:
        pytest.skip("numba path missing")
    return entry["numpy"], entry["numba"]


@needs_numba
@pytest.mark.parametrize("rows,cols", [(1, 1), (3, 7), (64, 270)])
def test_softmax_parity(rows, cols, rng):
    np_fn, nb_fn = _pair("softmax_fwd")
    x = rng.normal(size=(rows, cols)).astype(np.float32)
    a, b = np_fn(x), nb_fn(x)
    np.testing.assert_allclose(a, b, rtol=1e-6, atol=1e-7)
    assert np.allclose(a.sum(axis=1), 1.0, atol=1e-5)

    gy = rng.normal(size=(rows, cols)).astype(np.float32)
    np_b, nb_b = _pair("softmax_bwd")
    np.testing.assert_allclose(np_b(a, gy), nb_b(b, gy), rtol=1e-5, atol=1e-6)


@needs_numba
def test_layer_norm_parity(rng):
    np_f, nb_f = _pair("layer_norm_fwd")
    np_b, nb_b = _pair("layer_norm_bwd")
    x = rng.normal(size=(9, 16)).astype(np.float32) * 3
    gamma = rng.normal(size=16).astype(np.float32)
    beta = rng.normal(size=16).astype(np.float32)
    ya, xha, ra = np_f(x, gamma, beta, 1e-5)
    yb, xhb, rb = nb_f(x, gamma, beta, 1e-5)
    np.testing.assert_allclose(ya, yb, rtol=1e-5, atol=1e-6)
    np.testing.assert_allclose(ra, rb, rtol=1e-5, atol=1e-6)
    gy = rng.normal(size=(9, 16)).astype(np.float32)
    for u, v in zip(np_b(gy, xha, ra, gamma), nb_b(gy, xhb, rb, gamma)):
        np.testing.assert_allclose(u, v, rtol=1e-4, atol=1e-5)


@needs_numba
def test_cross_entropy_parity(rng):
    np_f, nb_f = _pair("cross_entropy_fwd")
    np_b, nb_b = _pair("cross_entropy_bwd")
    logits = rng.normal(size=(20, 50)).astype(np.float32)
    targets = rng.integers(0, 50, size=20).astype(np.int64)
    weights = (rng.random(20) > 0.3).astype(np.float32)
    weights[0] = 1.0  # at least one active row
    la, pa = np_f(logits, targets, weights)
    lb, pb = nb_f(logits, targets, weights)
    assert abs(float(la) - float(lb)) < 1e-5
    np.testing.assert_allclose(
        np_b(pa, targets, weights, 1.0), nb_b(pb, targets, weights, 1.0),
        rtol=1e-5, atol=1e-7)


@needs_numba
def test_nll_rows_parity(rng):
    np_f, nb_f = _pair("nll_rows")
    logits = (rng.normal(size=(33, 27)) * 4).astype(np.float32)
    targets = rng.integers(0, 27, size=33).astype(np.int64)
    np.testing.assert_allclose(np_f(logits, targets), nb_f(logits, targets),
                               rtol=1e-5, atol=1e-6)


@needs_numba
def test_adam_parity(rng):
    np_f, nb_f = _pair("adam_step")
    def run(fn):
        p = rng2.normal(size=100).astype(np.float32)
        m = np.zeros(100, np.float32); v = np.zeros(100, np.float32)
        for t in range(1, 6):
            g = (p * 0.1 + 0.01 * t).astype(np.float32)
            fn(p, g, m, v, t, 1e-3, 0.9, 0.999, 1e-8)
        return p, m, v
    rng2 = np.random.default_rng(7)
    a = run(np_f)
    rng2 = np.random.default_rng(7)
    b = run(nb_f)
    for u, v_ in zip(a, b):
        np.testing.assert_allclose(u, v_, rtol=1e-5, atol=1e-7)


@needs_numba
def test_embedding_grad_parity(rng):
    np_f, nb_f = _pair("embedding_grad")
    ids = rng.integers(0, 11, size=40).astype(np.int64)  # repeats guaranteed
    gout = rng.normal(size=(40, 8)).astype(np.float32)
    ga = np.zeros((11, 8), np.float32)
    gb = np.zeros((11, 8), np.float32)
    np_f(ga, ids, gout)
    nb_f(gb, ids, gout)
    np.testing.assert_allclose(ga, gb, rtol=1e-5, atol=1e-6)


def test_registry_covers_all_aliases():
    for name in ("softmax_fwd", "layer_norm_fwd", "cross_entropy_fwd",
                 "nll_rows", "adam_step", "embedding_grad"):
        assert name in kernels.KERNELS
        assert callable(kernels.KERNELS[name]["numpy"])


def _import_with_backend(value):
    env = dict(os.environ, ADAPTERBOT_BACKEND=value)
    return subprocess.run(
        [sys.executable, "-c",
         "import adapterbot.kernels as k; print(k.ACTIVE_BACKEND)"],
        capture_output=True, text=True, env=env)


def test_backend_env_numpy_forces_fallback():
    out = _import_with_backend("numpy")
    assert out.returncode == 0
    assert out.stdout.strip() == "numpy"


def test_backend_env_rejects_unknown():
    out = _import_with_backend("cuda")
    assert out.returncode != 0
    assert "ADAPTERBOT_BACKEND" in out.stderr


@needs_numba
def test_backend_env_numba_selects_numba():
    out = _import_with_backend("numba")
    assert out.returncode == 0
    assert out.stdout.strip() == "numba"
