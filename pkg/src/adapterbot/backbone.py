"""Decoder-only transformer language model with per-layer adapter hooks.

Pre-layer-norm blocks, tied input/output embeddings, fixed sinusoidal
position table, causal masking. After ``freeze()`` the weights are
immutable and content-hashed; the hash is the reference for the
frozen-backbone guarantee during adapter training.
"""

from dataclasses import dataclass, asdict

import numpy as np

from . import checkpoint, kernels
from .tensor import (
    Tensor, add, matmul, relu, layer_norm, softmax_rows, reshape, transpose,
    scale, embedding_lookup,
)


class SequenceTooLongError(ValueError):
    pass


class FrozenBackboneError(RuntimeError):
    pass


@dataclass
class ModelConfig:
    vocab_size: int
    n_layers: int = 2
    hidden_dim: int = 64
    n_heads: int = 4
    max_seq_len: int = 128
    bottleneck_default: int = 16

    def __post_init__(self):
        if min(self.vocab_size, self.n_layers, self.hidden_dim,
               self.n_heads, self.max_seq_len, self.bottleneck_default) < 1:
            raise ValueError("all config fields must be >= 1")
        if self.hidden_dim % self.n_heads != 0:
            raise ValueError("hidden_dim must be divisible by n_heads")
        if self.bottleneck_default >= self.hidden_dim:
            raise ValueError("bottleneck must be smaller than hidden_dim")


def sinusoid_table(n_max, d, scale_factor=0.05):
    """Fixed position features; scaled to sit near the embedding scale."""
    pos = np.arange(n_max, dtype=np.float64)[:, None]
    i = np.arange(d, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / d)
    table = np.where(i % 2 == 0, np.sin(angle), np.cos(angle))
    return (table * scale_factor).astype(np.float32)


class Backbone:
    def __init__(self, config, seed):
        self.config = config
        self.seed = seed
        self.frozen = False
        self.hash = None
        rng = np.random.default_rng(seed)
        d, V = config.hidden_dim, config.vocab_size

        def w(*shape):
            return Tensor(rng.normal(0.0, 0.02, shape), requires_grad=True)

        self.tok_emb = w(V, d)
        self.pos = Tensor(sinusoid_table(config.max_seq_len, d))
        self.layers = []
        for _ in range(config.n_layers):
            self.layers.append({
                "ln1_gamma": Tensor(np.ones(d), requires_grad=True),
                "ln1_beta": Tensor(np.zeros(d), requires_grad=True),
                "wq": w(d, d), "wk": w(d, d), "wv": w(d, d), "wo": w(d, d),
                "ln2_gamma": Tensor(np.ones(d), requires_grad=True),
                "ln2_beta": Tensor(np.zeros(d), requires_grad=True),
                "w1": w(d, 4 * d), "b1": Tensor(np.zeros(4 * d), requires_grad=True),
                "w2": w(4 * d, d), "b2": Tensor(np.zeros(d), requires_grad=True),
            })
        self.lnf_gamma = Tensor(np.ones(d), requires_grad=True)
        self.lnf_beta = Tensor(np.zeros(d), requires_grad=True)
        self._masks = {}

    # -- parameter plumbing --------------------------------------------------

    def named_tensors(self):
        out = {"tok_emb": self.tok_emb, "pos": self.pos}
        for i, layer in enumerate(self.layers):
            for k, t in layer.items():
                out[f"layer{i}.{k}"] = t
        out["lnf_gamma"] = self.lnf_gamma
        out["lnf_beta"] = self.lnf_beta
        return out

    def parameters(self):
        return [t for name, t in self.named_tensors().items() if name != "pos"]

    def content_hash(self):
        return checkpoint.content_hash(
            {k: t.data for k, t in self.named_tensors().items()}
        )

    def freeze(self):
        for t in self.named_tensors().values():
            t.requires_grad = False
            t.grad = None
        self.frozen = True
        self.hash = self.content_hash()
        return self.hash

    # -- forward -------------------------------------------------------------

    def _causal_mask(self, T):
        if T not in self._masks:
            m = np.triu(np.full((T, T), -1e9, dtype=np.float32), k=1)
            self._masks[T] = Tensor(m)
        return self._masks[T]

    def forward(self, tokens, adapter=None):
        """tokens: int array (B, T) or (T,); returns logits Tensor (B, T, V)."""
        ids = np.asarray(tokens, dtype=np.int64)
        if ids.ndim == 1:
            ids = ids[None, :]
        B, T = ids.shape
        if T > self.config.max_seq_len:
            raise SequenceTooLongError(
                f"sequence length {T} exceeds max {self.config.max_seq_len}"
            )
        if T == 0:
            raise ValueError("empty token sequence")
        if adapter is not None and adapter.d != self.config.hidden_dim:
            raise ValueError("adapter width does not match model")

        d = self.config.hidden_dim
        H = self.config.n_heads
        hd = d // H
        x = add(embedding_lookup(self.tok_emb, ids), Tensor(self.pos.data[:T]))
        mask = self._causal_mask(T)
        for i, layer in enumerate(self.layers):
            hn = layer_norm(x, layer["ln1_gamma"], layer["ln1_beta"])
            q = transpose(reshape(matmul(hn, layer["wq"]), (B, T, H, hd)), (0, 2, 1, 3))
            k = transpose(reshape(matmul(hn, layer["wk"]), (B, T, H, hd)), (0, 2, 1, 3))
            v = transpose(reshape(matmul(hn, layer["wv"]), (B, T, H, hd)), (0, 2, 1, 3))
            scores = add(scale(matmul(q, transpose(k, (0, 1, 3, 2))), 1.0 / np.sqrt(hd)), mask)
            probs = softmax_rows(scores)
            ctx = reshape(transpose(matmul(probs, v), (0, 2, 1, 3)), (B, T, d))
            x = add(x, matmul(ctx, layer["wo"]))
            hn2 = layer_norm(x, layer["ln2_gamma"], layer["ln2_beta"])
            ff = matmul(relu(add(matmul(hn2, layer["w1"]), layer["b1"])), layer["w2"])
            x = add(x, add(ff, layer["b2"]))
            if adapter is not None:
                x = adapter.layers[i].forward(x)
        x = layer_norm(x, self.lnf_gamma, self.lnf_beta)
        return matmul(x, transpose(self.tok_emb, (1, 0)))

    # -- decoding ------------------------------------------------------------

    def generate(self, context, adapter, decode, eos_id):
        """Extend ``context`` token ids until eos or max_new_tokens."""
        if len(context) == 0:
            raise ValueError("generate requires a nonempty context")
        rng = np.random.default_rng(decode.seed)
        ids = list(context)
        out = []
        for _ in range(decode.max_new_tokens):
            window = ids[-self.config.max_seq_len:]
            logits = self.forward(np.asarray(window), adapter).data[0, -1]
            if decode.mode == "greedy" or decode.k == 1:
                nxt = int(np.argmax(logits))
            else:
                order = np.argsort(-logits, kind="stable")[: decode.k]
                z = logits[order].astype(np.float64) / decode.temperature
                z -= z.max()
                p = np.exp(z)
                p /= p.sum()
                nxt = int(order[rng.choice(len(order), p=p)])
            ids.append(nxt)
            if nxt == eos_id:
                break
            out.append(nxt)
        return out

    # -- evaluation ----------------------------------------------------------

    def perplexity(self, seqs, adapter=None, batch_size=16, pad_id=0):
        """exp(mean NLL) over scored positions.

        ``seqs``: list of (token ids, score mask) where mask[j] = 1 scores the
        prediction of ids[j] from ids[:j] (mask[0] ignored).
        """
        if not seqs:
            raise ValueError("perplexity needs a nonempty corpus")
        total = 0.0
        count = 0
        for start in range(0, len(seqs), batch_size):
            chunk = seqs[start:start + batch_size]
            T = max(len(ids) for ids, _ in chunk)
            batch = np.full((len(chunk), T), pad_id, dtype=np.int64)
            for r, (ids, _) in enumerate(chunk):
                batch[r, : len(ids)] = ids
            logits = self.forward(batch, adapter).data
            for r, (ids, m) in enumerate(chunk):
                n = len(ids)
                nll = kernels.nll_rows(
                    np.ascontiguousarray(logits[r, : n - 1]),
                    np.asarray(ids[1:], dtype=np.int64),
                )
                keep = np.asarray(m[1:n], dtype=bool)
                total += float(nll.astype(np.float64)[keep].sum())
                count += int(keep.sum())
        if count == 0:
            raise ValueError("no scored positions in corpus")
        return float(np.exp(total / count))

    # -- persistence ---------------------------------------------------------

    def save(self, path):
        cfg = asdict(self.config)
        cfg["seed"] = self.seed
        cfg["frozen"] = self.frozen
        cfg["hash"] = self.hash
        checkpoint.save_tensors(
            path, cfg, {k: t.data for k, t in self.named_tensors().items()}
        )

    @classmethod
    def load(cls, path):
        cfg, tensors = checkpoint.load_tensors(path)
        fields = {k: cfg[k] for k in (
            "vocab_size", "n_layers", "hidden_dim", "n_heads",
            "max_seq_len", "bottleneck_default",
        )}
        model = cls(ModelConfig(**fields), seed=cfg["seed"])
        for name, t in model.named_tensors().items():
            if t.data.shape != tensors[name].shape:
                raise checkpoint.CheckpointError(f"shape mismatch for {name}")
            t.data = tensors[name]
        if cfg.get("frozen"):
            model.freeze()
            if cfg.get("hash") and model.hash != cfg["hash"]:
                raise checkpoint.CheckpointError("backbone hash mismatch on load")
        return model
