"""Hot numeric kernels with numba-jitted and pure-numpy implementations.

Every kernel exists twice: a ``*_np`` reference written in vectorized numpy
and (when numba imports) an ``@njit`` version of the same math. The active
path is chosen once at import from ``ADAPTERBOT_BACKEND``:

    ADAPTERBOT_BACKEND=numba   force numba (raises if unavailable)
    ADAPTERBOT_BACKEND=numpy   force the pure-numpy fallback
    unset                      numba when importable, else numpy

Both paths are deterministic run-to-run; they are not bit-identical to each
other (different accumulation order), so bit-exactness guarantees hold
within one backend. Matrix products stay on BLAS in both paths.
Internal accumulation is float64; array storage is float32 throughout.
"""

import os

import numpy as np

_BACKEND_ENV = os.environ.get("ADAPTERBOT_BACKEND", "").strip().lower()
if _BACKEND_ENV not in ("", "numba", "numpy"):
    raise RuntimeError(
        f"ADAPTERBOT_BACKEND must be 'numba' or 'numpy', got {_BACKEND_ENV!r}"
    )

NUMBA_AVAILABLE = False
if _BACKEND_ENV != "numpy":
    try:
        import numba

        NUMBA_AVAILABLE = True
    except ImportError:
        if _BACKEND_ENV == "numba":
            raise


# ---------------------------------------------------------------------------
# pure-numpy reference path
# ---------------------------------------------------------------------------

def softmax_fwd_np(x):
    """Row softmax of a 2D float32 array; float64 accumulation."""
    x64 = x.astype(np.float64)
    x64 -= x64.max(axis=1, keepdims=True)
    e = np.exp(x64)
    e /= e.sum(axis=1, keepdims=True)
    return e.astype(np.float32)


def softmax_bwd_np(y, gy):
    """Backward of row softmax given its output y and upstream grad gy."""
    y64 = y.astype(np.float64)
    gy64 = gy.astype(np.float64)
    dot = (y64 * gy64).sum(axis=1, keepdims=True)
    return (y64 * (gy64 - dot)).astype(np.float32)


def layer_norm_fwd_np(x, gamma, beta, eps):
    """Row layer-norm of 2D x; returns (y, xhat, rstd) for the backward."""
    x64 = x.astype(np.float64)
    mu = x64.mean(axis=1, keepdims=True)
    var = ((x64 - mu) ** 2).mean(axis=1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = (x64 - mu) * rstd
    y = xhat * gamma.astype(np.float64) + beta.astype(np.float64)
    return (
        y.astype(np.float32),
        xhat.astype(np.float32),
        rstd[:, 0].astype(np.float32),
    )


def layer_norm_bwd_np(gy, xhat, rstd, gamma):
    """Backward of row layer-norm; returns (gx, ggamma, gbeta)."""
    gy64 = gy.astype(np.float64)
    xhat64 = xhat.astype(np.float64)
    ggamma = (gy64 * xhat64).sum(axis=0)
    gbeta = gy64.sum(axis=0)
    gxhat = gy64 * gamma.astype(np.float64)
    m1 = gxhat.mean(axis=1, keepdims=True)
    m2 = (gxhat * xhat64).mean(axis=1, keepdims=True)
    gx = (gxhat - m1 - xhat64 * m2) * rstd.astype(np.float64)[:, None]
    return gx.astype(np.float32), ggamma.astype(np.float32), gbeta.astype(np.float32)


def cross_entropy_fwd_np(logits, targets, weights):
    """Weighted mean NLL over rows; returns (loss, probs) with probs cached."""
    probs = softmax_fwd_np(logits)
    idx = np.arange(logits.shape[0])
    p = np.maximum(probs[idx, targets].astype(np.float64), 1e-30)
    w = weights.astype(np.float64)
    wsum = w.sum()
    loss = -(np.log(p) * w).sum() / wsum
    return np.float32(loss), probs


def cross_entropy_bwd_np(probs, targets, weights, gloss):
    """Gradient of the weighted-mean NLL w.r.t. logits."""
    w = weights.astype(np.float64)
    g = probs.astype(np.float64)
    idx = np.arange(probs.shape[0])
    g[idx, targets] -= 1.0
    g *= (w / w.sum())[:, None] * np.float64(gloss)
    return g.astype(np.float32)


def nll_rows_np(logits, targets):
    """Per-row negative log prob of targets (eval path, no graph)."""
    x64 = logits.astype(np.float64)
    x64 -= x64.max(axis=1, keepdims=True)
    lse = np.log(np.exp(x64).sum(axis=1))
    idx = np.arange(logits.shape[0])
    return (lse - x64[idx, targets]).astype(np.float32)


def adam_step_np(p, g, m, v, t, lr, beta1, beta2, eps):
    """One in-place adaptive-moment update on flat float32 arrays."""
    g64 = g.astype(np.float64)
    m64 = beta1 * m.astype(np.float64) + (1.0 - beta1) * g64
    v64 = beta2 * v.astype(np.float64) + (1.0 - beta2) * g64 * g64
    mhat = m64 / (1.0 - beta1 ** t)
    vhat = v64 / (1.0 - beta2 ** t)
    p64 = p.astype(np.float64) - lr * mhat / (np.sqrt(vhat) + eps)
    m[:] = m64.astype(np.float32)
    v[:] = v64.astype(np.float32)
    p[:] = p64.astype(np.float32)


def embedding_grad_np(gtable, ids, gout):
    """Scatter-add rows of gout into gtable at ids (in place)."""
    np.add.at(gtable, ids, gout)


# ---------------------------------------------------------------------------
# numba path
# ---------------------------------------------------------------------------

if NUMBA_AVAILABLE:

    @numba.njit(cache=True)
    def softmax_fwd_nb(x):
        n, d = x.shape
        out = np.empty((n, d), dtype=np.float32)
        for i in range(n):
            m = np.float64(x[i, 0])
            for j in range(1, d):
                if x[i, j] > m:
                    m = np.float64(x[i, j])
            s = 0.0
            for j in range(d):
                e = np.exp(np.float64(x[i, j]) - m)
                out[i, j] = np.float32(e)
                s += e
            inv = 1.0 / s
            for j in range(d):
                out[i, j] = np.float32(np.float64(out[i, j]) * inv)
        return out

    @numba.njit(cache=True)
    def softmax_bwd_nb(y, gy):
        n, d = y.shape
        gx = np.empty((n, d), dtype=np.float32)
        for i in range(n):
            dot = 0.0
            for j in range(d):
                dot += np.float64(y[i, j]) * np.float64(gy[i, j])
            for j in range(d):
                gx[i, j] = np.float32(
                    np.float64(y[i, j]) * (np.float64(gy[i, j]) - dot)
                )
        return gx

    @numba.njit(cache=True)
    def layer_norm_fwd_nb(x, gamma, beta, eps):
        n, d = x.shape
        y = np.empty((n, d), dtype=np.float32)
        xhat = np.empty((n, d), dtype=np.float32)
        rstd = np.empty(n, dtype=np.float32)
        for i in range(n):
            mu = 0.0
            for j in range(d):
                mu += np.float64(x[i, j])
            mu /= d
            var = 0.0
            for j in range(d):
                diff = np.float64(x[i, j]) - mu
                var += diff * diff
            var /= d
            r = 1.0 / np.sqrt(var + eps)
            rstd[i] = np.float32(r)
            for j in range(d):
                h = (np.float64(x[i, j]) - mu) * r
                xhat[i, j] = np.float32(h)
                y[i, j] = np.float32(h * np.float64(gamma[j]) + np.float64(beta[j]))
        return y, xhat, rstd

    @numba.njit(cache=True)
    def layer_norm_bwd_nb(gy, xhat, rstd, gamma):
        n, d = gy.shape
        gx = np.empty((n, d), dtype=np.float32)
        ggamma64 = np.zeros(d, dtype=np.float64)
        gbeta64 = np.zeros(d, dtype=np.float64)
        for i in range(n):
            m1 = 0.0
            m2 = 0.0
            for j in range(d):
                gyij = np.float64(gy[i, j])
                xh = np.float64(xhat[i, j])
                ggamma64[j] += gyij * xh
                gbeta64[j] += gyij
                gxhat = gyij * np.float64(gamma[j])
                m1 += gxhat
                m2 += gxhat * xh
            m1 /= d
            m2 /= d
            r = np.float64(rstd[i])
            for j in range(d):
                gxhat = np.float64(gy[i, j]) * np.float64(gamma[j])
                gx[i, j] = np.float32((gxhat - m1 - np.float64(xhat[i, j]) * m2) * r)
        return gx, ggamma64.astype(np.float32), gbeta64.astype(np.float32)

    @numba.njit(cache=True)
    def cross_entropy_fwd_nb(logits, targets, weights):
        n, d = logits.shape
        probs = softmax_fwd_nb(logits)
        total = 0.0
        wsum = 0.0
        for i in range(n):
            p = np.float64(probs[i, targets[i]])
            if p < 1e-30:
                p = 1e-30
            w = np.float64(weights[i])
            total -= np.log(p) * w
            wsum += w
        return np.float32(total / wsum), probs

    @numba.njit(cache=True)
    def cross_entropy_bwd_nb(probs, targets, weights, gloss):
        n, d = probs.shape
        g = np.empty((n, d), dtype=np.float32)
        wsum = 0.0
        for i in range(n):
            wsum += np.float64(weights[i])
        for i in range(n):
            scale = np.float64(weights[i]) / wsum * np.float64(gloss)
            for j in range(d):
                val = np.float64(probs[i, j])
                if j == targets[i]:
                    val -= 1.0
                g[i, j] = np.float32(val * scale)
        return g

    @numba.njit(cache=True)
    def nll_rows_nb(logits, targets):
        n, d = logits.shape
        out = np.empty(n, dtype=np.float32)
        for i in range(n):
            m = np.float64(logits[i, 0])
            for j in range(1, d):
                if logits[i, j] > m:
                    m = np.float64(logits[i, j])
            s = 0.0
            for j in range(d):
                s += np.exp(np.float64(logits[i, j]) - m)
            out[i] = np.float32(np.log(s) - (np.float64(logits[i, targets[i]]) - m))
        return out

    @numba.njit(cache=True)
    def adam_step_nb(p, g, m, v, t, lr, beta1, beta2, eps):
        n = p.shape[0]
        c1 = 1.0 - beta1 ** t
        c2 = 1.0 - beta2 ** t
        for i in range(n):
            gi = np.float64(g[i])
            mi = beta1 * np.float64(m[i]) + (1.0 - beta1) * gi
            vi = beta2 * np.float64(v[i]) + (1.0 - beta2) * gi * gi
            m[i] = np.float32(mi)
            v[i] = np.float32(vi)
            p[i] = np.float32(
                np.float64(p[i]) - lr * (mi / c1) / (np.sqrt(vi / c2) + eps)
            )

    @numba.njit(cache=True)
    def embedding_grad_nb(gtable, ids, gout):
        n = ids.shape[0]
        d = gout.shape[1]
        for i in range(n):
            row = ids[i]
            for j in range(d):
                gtable[row, j] += gout[i, j]


# ---------------------------------------------------------------------------
# backend selection
# ---------------------------------------------------------------------------

# name -> {"numpy": fn, "numba": fn or None}; consumed by benchmarks too
KERNELS = {
    "softmax_fwd": {"numpy": softmax_fwd_np, "numba": None},
    "softmax_bwd": {"numpy": softmax_bwd_np, "numba": None},
    "layer_norm_fwd": {"numpy": layer_norm_fwd_np, "numba": None},
    "layer_norm_bwd": {"numpy": layer_norm_bwd_np, "numba": None},
    "cross_entropy_fwd": {"numpy": cross_entropy_fwd_np, "numba": None},
    "cross_entropy_bwd": {"numpy": cross_entropy_bwd_np, "numba": None},
    "nll_rows": {"numpy": nll_rows_np, "numba": None},
    "adam_step": {"numpy": adam_step_np, "numba": None},
    "embedding_grad": {"numpy": embedding_grad_np, "numba": None},
}

if NUMBA_AVAILABLE:
    KERNELS["softmax_fwd"]["numba"] = softmax_fwd_nb
    KERNELS["softmax_bwd"]["numba"] = softmax_bwd_nb
    KERNELS["layer_norm_fwd"]["numba"] = layer_norm_fwd_nb
    KERNELS["layer_norm_bwd"]["numba"] = layer_norm_bwd_nb
    KERNELS["cross_entropy_fwd"]["numba"] = cross_entropy_fwd_nb
    KERNELS["cross_entropy_bwd"]["numba"] = cross_entropy_bwd_nb
    KERNELS["nll_rows"]["numba"] = nll_rows_nb
    KERNELS["adam_step"]["numba"] = adam_step_nb
    KERNELS["embedding_grad"]["numba"] = embedding_grad_nb

ACTIVE_BACKEND = "numba" if NUMBA_AVAILABLE else "numpy"

softmax_fwd = KERNELS["softmax_fwd"][ACTIVE_BACKEND]
softmax_bwd = KERNELS["softmax_bwd"][ACTIVE_BACKEND]
layer_norm_fwd = KERNELS["layer_norm_fwd"][ACTIVE_BACKEND]
layer_norm_bwd = KERNELS["layer_norm_bwd"][ACTIVE_BACKEND]
cross_entropy_fwd = KERNELS["cross_entropy_fwd"][ACTIVE_BACKEND]
cross_entropy_bwd = KERNELS["cross_entropy_bwd"][ACTIVE_BACKEND]
nll_rows = KERNELS["nll_rows"][ACTIVE_BACKEND]
adam_step_flat = KERNELS["adam_step"][ACTIVE_BACKEND]
embedding_grad = KERNELS["embedding_grad"][ACTIVE_BACKEND]
