"""Reverse-mode autodiff over float32 numpy arrays.

Small closure-style tape: each op returns a new Tensor whose ``_backward``
closure scatters the upstream gradient into its parents. ``backward()``
topologically sorts the graph and runs the closures in reverse. Tensors
with ``requires_grad=False`` never allocate gradients, so frozen weights
cost nothing during training.

Heavy elementwise math routes through :mod:`adapterbot.kernels`; matrix
products use ``np.matmul`` directly.
"""

import numpy as np

from . import kernels


def _sum_to(g, shape):
    """Reduce a broadcast gradient back down to ``shape``."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_backward", "_parents")

    def __init__(self, data, requires_grad=False):
        self.data = np.ascontiguousarray(data, dtype=np.float32)
        self.grad = None
        self.requires_grad = requires_grad
        self._backward = None
        self._parents = ()

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def _ensure_grad(self):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        return self.grad

    def accumulate(self, g):
        if self.requires_grad:
            self._ensure_grad()
            self.grad += g

    def zero_grad(self):
        self.grad = None

    def item(self):
        return float(self.data.reshape(-1)[0])

    def backward(self, grad=None):
        """Run reverse-mode accumulation from this node."""
        topo = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        if grad is None:
            grad = np.ones_like(self.data)
        self._ensure_grad()
        self.grad += np.asarray(grad, dtype=np.float32)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward()

    # -- ops ---------------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __matmul__(self, other):
        return matmul(self, other)


def _make(data, parents):
    out = Tensor(data)
    out.requires_grad = any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = tuple(parents)
    return out


def add(a, b):
    out = _make(a.data + b.data, (a, b))
    if out.requires_grad:
        def _bwd():
            g = out.grad
            if a.requires_grad:
                a.accumulate(_sum_to(g, a.data.shape))
            if b.requires_grad:
                b.accumulate(_sum_to(g, b.data.shape))
        out._backward = _bwd
    return out


def mul(a, b):
    out = _make(a.data * b.data, (a, b))
    if out.requires_grad:
        def _bwd():
            g = out.grad
            if a.requires_grad:
                a.accumulate(_sum_to(g * b.data, a.data.shape))
            if b.requires_grad:
                b.accumulate(_sum_to(g * a.data, b.data.shape))
        out._backward = _bwd
    return out


def scale(a, s):
    s = np.float32(s)
    out = _make(a.data * s, (a,))
    if out.requires_grad:
        def _bwd():
            a.accumulate(out.grad * s)
        out._backward = _bwd
    return out


def matmul(a, b):
    out = _make(np.matmul(a.data, b.data), (a, b))
    if out.requires_grad:
        def _bwd():
            g = out.grad
            if a.requires_grad:
                ga = np.matmul(g, b.data.swapaxes(-1, -2))
                a.accumulate(_sum_to(ga, a.data.shape))
            if b.requires_grad:
                gb = np.matmul(a.data.swapaxes(-1, -2), g)
                b.accumulate(_sum_to(gb, b.data.shape))
        out._backward = _bwd
    return out


def relu(a):
    out = _make(np.maximum(a.data, 0), (a,))
    if out.requires_grad:
        def _bwd():
            a.accumulate(out.grad * (a.data > 0))
        out._backward = _bwd
    return out


def reshape(a, shape):
    out = _make(a.data.reshape(shape), (a,))
    if out.requires_grad:
        def _bwd():
            a.accumulate(out.grad.reshape(a.data.shape))
        out._backward = _bwd
    return out


def transpose(a, axes):
    out = _make(np.ascontiguousarray(a.data.transpose(axes)), (a,))
    if out.requires_grad:
        inv = np.argsort(axes)
        def _bwd():
            a.accumulate(np.ascontiguousarray(out.grad.transpose(inv)))
        out._backward = _bwd
    return out


def mean_axis(a, axis):
    out = _make(a.data.mean(axis=axis), (a,))
    if out.requires_grad:
        n = a.data.shape[axis]
        def _bwd():
            g = np.expand_dims(out.grad, axis) / np.float32(n)
            a.accumulate(np.broadcast_to(g, a.data.shape))
        out._backward = _bwd
    return out


def softmax_rows(a):
    """Softmax over the last axis (any leading shape)."""
    flat = a.data.reshape(-1, a.data.shape[-1])
    y = kernels.softmax_fwd(flat).reshape(a.data.shape)
    out = _make(y, (a,))
    if out.requires_grad:
        def _bwd():
            gy = out.grad.reshape(-1, a.data.shape[-1])
            yf = np.ascontiguousarray(y.reshape(-1, a.data.shape[-1]))
            a.accumulate(kernels.softmax_bwd(yf, np.ascontiguousarray(gy)).reshape(a.data.shape))
        out._backward = _bwd
    return out


def layer_norm(x, gamma, beta, eps=1e-5):
    """Normalize over the last axis, then scale and shift."""
    shp = x.data.shape
    flat = np.ascontiguousarray(x.data.reshape(-1, shp[-1]))
    y, xhat, rstd = kernels.layer_norm_fwd(flat, gamma.data, beta.data, eps)
    out = _make(y.reshape(shp), (x, gamma, beta))
    if out.requires_grad:
        def _bwd():
            gy = np.ascontiguousarray(out.grad.reshape(-1, shp[-1]))
            gx, ggamma, gbeta = kernels.layer_norm_bwd(gy, xhat, rstd, gamma.data)
            if x.requires_grad:
                x.accumulate(gx.reshape(shp))
            if gamma.requires_grad:
                gamma.accumulate(ggamma)
            if beta.requires_grad:
                beta.accumulate(gbeta)
        out._backward = _bwd
    return out


def cross_entropy(logits, targets, weights=None):
    """Weighted mean NLL of ``targets`` under row-softmax of 2D ``logits``.

    ``weights`` masks rows (e.g. score only response tokens); defaults to
    all-ones. Returns a scalar Tensor.
    """
    targets = np.asarray(targets, dtype=np.int64)
    if weights is None:
        weights = np.ones(logits.data.shape[0], dtype=np.float32)
    else:
        weights = np.asarray(weights, dtype=np.float32)
    if float(weights.sum()) <= 0.0:
        raise ValueError("cross_entropy needs at least one positive weight")
    loss, probs = kernels.cross_entropy_fwd(
        np.ascontiguousarray(logits.data), targets, weights
    )
    out = _make(np.float32(loss), (logits,))
    if out.requires_grad:
        def _bwd():
            gloss = float(out.grad.reshape(-1)[0])
            g = kernels.cross_entropy_bwd(probs, targets, weights, gloss)
            logits.accumulate(g)
        out._backward = _bwd
    return out


def embedding_lookup(table, ids):
    """Gather rows of a (V, d) table; ids is any-shape int array."""
    ids = np.asarray(ids, dtype=np.int64)
    out = _make(table.data[ids], (table,))
    if out.requires_grad:
        def _bwd():
            table._ensure_grad()
            gout = np.ascontiguousarray(
                out.grad.reshape(-1, table.data.shape[1])
            )
            kernels.embedding_grad(table.grad, ids.reshape(-1), gout)
        out._backward = _bwd
    return out


class Adam:
    """Adaptive-moment optimizer over trainable tensors (in-place updates)."""

    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = [p for p in params if p.requires_grad]
        self.lr = float(lr)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._m = [np.zeros(p.data.size, dtype=np.float32) for p in self.params]
        self._v = [np.zeros(p.data.size, dtype=np.float32) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        self.t += 1
        for p, m, v in zip(self.params, self._m, self._v):
            if p.grad is None:
                continue
            flat = p.data.reshape(-1)
            g = np.ascontiguousarray(p.grad.reshape(-1))
            kernels.adam_step_flat(
                flat, g, m, v, self.t, self.lr, self.beta1, self.beta2, self.eps
            )
