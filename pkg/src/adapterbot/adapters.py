"""Residual adapters: the only trainable parameters when learning a skill.

Each layer computes ``relu(LN(H) @ W_E) @ W_D + H`` with its own layer-norm
affine. W_D starts at zero, so a fresh stack is an exact identity over the
backbone. A stack is sealed after training and then immutable; an
AdapterSet assigns contiguous skill ids and never touches existing stacks.
"""

import numpy as np

from . import checkpoint
from .tensor import Tensor, add, matmul, relu, layer_norm


class AdapterConfigError(ValueError):
    pass


class AdapterLayer:
    def __init__(self, w_e, w_d, ln_gamma, ln_beta):
        self.w_e = w_e
        self.w_d = w_d
        self.ln_gamma = ln_gamma
        self.ln_beta = ln_beta

    def forward(self, h):
        if h.data.shape[-1] != self.w_e.data.shape[0]:
            raise AdapterConfigError("hidden width does not match adapter")
        z = matmul(relu(matmul(layer_norm(h, self.ln_gamma, self.ln_beta), self.w_e)), self.w_d)
        return add(z, h)

    def tensors(self):
        return {
            "w_e": self.w_e, "w_d": self.w_d,
            "ln_gamma": self.ln_gamma, "ln_beta": self.ln_beta,
        }


class AdapterStack:
    def __init__(self, layers, h, name="", provenance=None):
        self.layers = layers
        self.h = h
        self.d = layers[0].w_e.data.shape[0]
        self.name = name
        self.provenance = dict(provenance or {})
        self.skill_id = None
        self.sealed = False

    def named_tensors(self):
        out = {}
        for i, layer in enumerate(self.layers):
            for k, t in layer.tensors().items():
                out[f"layer{i}.{k}"] = t
        return out

    def parameters(self):
        return list(self.named_tensors().values())

    def content_hash(self):
        return checkpoint.content_hash(
            {k: t.data for k, t in self.named_tensors().items()}
        )

    def seal(self):
        for t in self.parameters():
            t.requires_grad = False
            t.grad = None
        self.sealed = True
        return self

    def save(self, path):
        cfg = {
            "h": self.h, "d": self.d, "n_layers": len(self.layers),
            "skill_id": self.skill_id, "name": self.name,
            "sealed": self.sealed, "provenance": self.provenance,
        }
        checkpoint.save_tensors(
            path, cfg, {k: t.data for k, t in self.named_tensors().items()}
        )

    @classmethod
    def load(cls, path):
        cfg, tensors = checkpoint.load_tensors(path)
        layers = []
        for i in range(cfg["n_layers"]):
            layers.append(AdapterLayer(
                Tensor(tensors[f"layer{i}.w_e"]),
                Tensor(tensors[f"layer{i}.w_d"]),
                Tensor(tensors[f"layer{i}.ln_gamma"]),
                Tensor(tensors[f"layer{i}.ln_beta"]),
            ))
        stack = cls(layers, cfg["h"], cfg["name"], cfg.get("provenance"))
        stack.skill_id = cfg.get("skill_id")
        if cfg.get("sealed"):
            stack.seal()
        return stack


def adapter_init(config, h=None, seed=0, name="", provenance=None):
    """Fresh trainable stack: W_E ~ normal(0, 0.02), W_D = 0 (exact identity)."""
    h = config.bottleneck_default if h is None else h
    d = config.hidden_dim
    if not 1 <= h < d:
        raise AdapterConfigError(f"bottleneck {h} must satisfy 1 <= h < {d}")
    rng = np.random.default_rng(seed)
    layers = []
    for _ in range(config.n_layers):
        layers.append(AdapterLayer(
            Tensor(rng.normal(0.0, 0.02, (d, h)), requires_grad=True),
            Tensor(np.zeros((h, d)), requires_grad=True),
            Tensor(np.ones(d), requires_grad=True),
            Tensor(np.zeros(d), requires_grad=True),
        ))
    prov = {"seed": seed}
    prov.update(provenance or {})
    return AdapterStack(layers, h, name=name, provenance=prov)


def adapter_param_count(n_layers, d, h):
    """Projection parameters only (W_E + W_D per layer)."""
    if min(n_layers, d, h) < 1:
        raise AdapterConfigError("arguments must be positive")
    return 2 * n_layers * d * h


def aux_param_count(n_layers, d):
    """Adapter layer-norm affine parameters, reported separately."""
    return 2 * n_layers * d


class AdapterSet:
    """skill_id -> sealed AdapterStack, ids contiguous from 1."""

    def __init__(self):
        self._stacks = {}

    @property
    def p(self):
        return len(self._stacks)

    def register(self, stack):
        if not stack.sealed:
            raise AdapterConfigError("only sealed stacks can be registered")
        skill_id = self.p + 1
        stack.skill_id = skill_id
        self._stacks[skill_id] = stack
        return skill_id

    def get(self, skill_id):
        if skill_id not in self._stacks:
            raise KeyError(f"unknown skill_id {skill_id}")
        return self._stacks[skill_id]

    def __contains__(self, skill_id):
        return skill_id in self._stacks

    def items(self):
        return sorted(self._stacks.items())
