"""The masked-transformer network for tabular rows.

Each field has its own embedding table: ordered (two endpoint vectors
interpolated by the quantizer's min-max ratios, plus a zero-initialized
residual matrix) for continuous fields, a standard normal-initialized
matrix for categorical fields. Output heads tie their weights to the
field embeddings and divide logits by a sigmoid-bounded learned
temperature.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor
from .codec import CategoricalCodec, ContinuousCodec, FieldCodec


@dataclass(frozen=True)
class ModelConfig:
    width: int = 64
    depth: int = 4
    heads: int = 4
    dropout: float = 0.0
    drop_path: float = 0.0
    dtype: str = "float32"

    def __post_init__(self):
        if self.width % self.heads != 0:
            raise ValueError(f"width {self.width} not divisible by heads {self.heads}")

    @property
    def np_dtype(self):
        return np.dtype(self.dtype)


class OrderedEmbedding:
    """Continuous-field embedding interpolated between two endpoints.

    Effective row i is ``E_i + r_i * l_vec + (1 - r_i) * h_vec``; the
    residual E starts at zero so the initial embedding is a pure path
    between the endpoints.
    """

    def __init__(self, ratios: np.ndarray, dim: int, rng: np.random.Generator, dtype):
        k = len(ratios)
        self.ratios = np.asarray(ratios, dtype=dtype)
        self.E = Parameter(np.zeros((k, dim), dtype=dtype))
        self.l_vec = Parameter((rng.normal(0, 0.05, dim)).astype(dtype))
        self.h_vec = Parameter((rng.normal(0, 0.05, dim)).astype(dtype))

    @property
    def cardinality(self) -> int:
        return self.E.data.shape[0]

    def weight(self) -> Tensor:
        r = self.ratios[:, None]
        lo = ad.mul(Tensor(r), ad.reshape(self.l_vec, (1, -1)))
        hi = ad.mul(Tensor(1.0 - r), ad.reshape(self.h_vec, (1, -1)))
        return ad.add(self.E, ad.add(lo, hi))

    def parameters(self):
        return [("E", self.E), ("l_vec", self.l_vec), ("h_vec", self.h_vec)]


class CategoricalEmbedding:
    def __init__(self, cardinality: int, dim: int, rng: np.random.Generator, dtype):
        self.E = Parameter(rng.normal(0, 0.05, (cardinality, dim)).astype(dtype))

    @property
    def cardinality(self) -> int:
        return self.E.data.shape[0]

    def weight(self) -> Tensor:
        return self.E

    def parameters(self):
        return [("E", self.E)]


class DynamicLinear:
    """Output head tied to its field embedding, with learned temperature."""

    def __init__(self, embedding, dtype):
        self.embedding = embedding
        k = embedding.cardinality
        self.bias = Parameter(np.zeros(k, dtype=dtype))
        self.temp = Parameter(np.ones(1, dtype=dtype))

    def forward(self, x: Tensor) -> Tensor:
        w = self.embedding.weight()
        raw = ad.add(ad.matmul(x, ad.transpose(w, (1, 0))), self.bias)
        return ad.mul(raw, ad.reciprocal(ad.sigmoid(self.temp)))

    def parameters(self):
        return [("bias", self.bias), ("temp", self.temp)]


class _EncoderBlock:
    """Pre-norm self-attention + feed-forward residual block."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        d = cfg.width
        dt = cfg.np_dtype
        init = lambda *shape: rng.normal(0, 0.02, shape).astype(dt)
        self.ln1_g = Parameter(np.ones(d, dtype=dt))
        self.ln1_b = Parameter(np.zeros(d, dtype=dt))
        self.wq = Parameter(init(d, d))
        self.bq = Parameter(np.zeros(d, dtype=dt))
        self.wk = Parameter(init(d, d))
        self.bk = Parameter(np.zeros(d, dtype=dt))
        self.wv = Parameter(init(d, d))
        self.bv = Parameter(np.zeros(d, dtype=dt))
        self.wo = Parameter(init(d, d))
        self.bo = Parameter(np.zeros(d, dtype=dt))
        self.ln2_g = Parameter(np.ones(d, dtype=dt))
        self.ln2_b = Parameter(np.zeros(d, dtype=dt))
        self.w1 = Parameter(init(d, 4 * d))
        self.b1 = Parameter(np.zeros(4 * d, dtype=dt))
        self.w2 = Parameter(init(4 * d, d))
        self.b2 = Parameter(np.zeros(d, dtype=dt))
        self.heads = cfg.heads
        self.dropout = cfg.dropout
        self.drop_path = cfg.drop_path

    def _attention(self, x: Tensor, rng, training) -> Tensor:
        n, l, d = x.shape
        h = self.heads
        dh = d // h
        flat = ad.reshape(x, (n * l, d))
        q = ad.add(ad.matmul(flat, self.wq), self.bq)
        k = ad.add(ad.matmul(flat, self.wk), self.bk)
        v = ad.add(ad.matmul(flat, self.wv), self.bv)

        def split_heads(t):
            t = ad.reshape(t, (n, l, h, dh))
            t = ad.transpose(t, (0, 2, 1, 3))
            return ad.reshape(t, (n * h, l, dh))

        q, k, v = split_heads(q), split_heads(k), split_heads(v)
        scores = ad.scale(ad.matmul(q, ad.transpose(k, (0, 2, 1))), 1.0 / np.sqrt(dh))
        attn = ad.softmax(scores)
        attn = ad.dropout(attn, self.dropout, rng, training)
        ctx = ad.matmul(attn, v)
        ctx = ad.reshape(ctx, (n, h, l, dh))
        ctx = ad.transpose(ctx, (0, 2, 1, 3))
        ctx = ad.reshape(ctx, (n * l, d))
        out = ad.add(ad.matmul(ctx, self.wo), self.bo)
        return ad.reshape(out, (n, l, d))

    def forward(self, x: Tensor, rng, training) -> Tensor:
        a = ad.layer_norm(x, self.ln1_g, self.ln1_b)
        a = self._attention(a, rng, training)
        x = ad.add(x, ad.drop_path(a, self.drop_path, rng, training))
        f = ad.layer_norm(x, self.ln2_g, self.ln2_b)
        n, l, d = f.shape
        f = ad.reshape(f, (n * l, d))
        f = ad.gelu(ad.add(ad.matmul(f, self.w1), self.b1))
        f = ad.dropout(f, self.dropout, rng, training)
        f = ad.add(ad.matmul(f, self.w2), self.b2)
        f = ad.reshape(f, (n, l, d))
        return ad.add(x, ad.drop_path(f, self.drop_path, rng, training))

    def parameters(self):
        names = ["ln1_g", "ln1_b", "wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo",
                 "ln2_g", "ln2_b", "w1", "b1", "w2", "b2"]
        return [(n, getattr(self, n)) for n in names]


class TabMTModel:
    """Per-field embeddings, mask token, encoder stack, tied output heads."""

    def __init__(self, codecs: list[FieldCodec], cfg: ModelConfig, seed: int = 0):
        self.cfg = cfg
        self.codecs = codecs
        dt = cfg.np_dtype
        rng = np.random.default_rng(seed)
        self.embeddings = []
        for codec in codecs:
            if isinstance(codec, ContinuousCodec):
                self.embeddings.append(OrderedEmbedding(codec.ratios, cfg.width, rng, dt))
            elif isinstance(codec, CategoricalCodec):
                self.embeddings.append(CategoricalEmbedding(codec.cardinality, cfg.width, rng, dt))
            else:
                raise TypeError(f"unsupported codec type {type(codec)!r}")
        l = len(codecs)
        self.mask_token = Parameter(rng.normal(0, 0.05, cfg.width).astype(dt))
        self.positional = Parameter(rng.normal(0, 0.01, (l, cfg.width)).astype(dt))
        self.blocks = [_EncoderBlock(cfg, rng) for _ in range(cfg.depth)]
        self.ln_f_g = Parameter(np.ones(cfg.width, dtype=dt))
        self.ln_f_b = Parameter(np.zeros(cfg.width, dtype=dt))
        self.heads = [DynamicLinear(emb, dt) for emb in self.embeddings]
        self.training = False

    @property
    def n_fields(self) -> int:
        return len(self.codecs)

    @property
    def cardinalities(self) -> list[int]:
        return [c.cardinality for c in self.codecs]

    def named_parameters(self) -> list[tuple[str, Parameter]]:
        out = []
        for j, emb in enumerate(self.embeddings):
            out += [(f"emb{j}.{n}", p) for n, p in emb.parameters()]
        out.append(("mask_token", self.mask_token))
        out.append(("positional", self.positional))
        for i, blk in enumerate(self.blocks):
            out += [(f"block{i}.{n}", p) for n, p in blk.parameters()]
        out += [("ln_f_g", self.ln_f_g), ("ln_f_b", self.ln_f_b)]
        for j, head in enumerate(self.heads):
            out += [(f"head{j}.{n}", p) for n, p in head.parameters()]
        return out

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def _hidden(self, tokens: np.ndarray, mask: np.ndarray,
                rng: np.random.Generator | None) -> Tensor:
        """Final encoder hidden states after the pre-head layer norm."""
        tokens = np.asarray(tokens)
        mask = np.asarray(mask, dtype=bool)
        n, l = tokens.shape
        if l != self.n_fields:
            raise ValueError(f"expected {self.n_fields} fields, got {l}")
        dt = self.cfg.np_dtype
        rng = rng or np.random.default_rng(0)
        cols = []
        for j in range(l):
            m = mask[:, j]
            # Masked positions read the mask token; their token value is
            # irrelevant, so clamp it into range before the lookup.
            idx = np.where(m, 0, tokens[:, j])
            if np.any((idx < 0) | (idx >= self.codecs[j].cardinality)):
                raise ValueError(f"token out of range at unmasked position, field {j}")
            emb = ad.gather_rows(self.embeddings[j].weight(), idx)
            mcol = m.astype(dt)[:, None]
            col = ad.add(ad.mul(emb, Tensor(1.0 - mcol)),
                         ad.mul(ad.reshape(self.mask_token, (1, -1)), Tensor(mcol)))
            cols.append(col)
        x = ad.stack(cols, axis=1)
        x = ad.add(x, ad.reshape(self.positional, (1, l, self.cfg.width)))
        for blk in self.blocks:
            x = blk.forward(x, rng, self.training)
        return ad.layer_norm(x, self.ln_f_g, self.ln_f_b)

    def forward(self, tokens: np.ndarray, mask: np.ndarray,
                rng: np.random.Generator | None = None) -> list[Tensor]:
        """Per-field logits, each of shape (n, cardinality_j)."""
        h = self._hidden(tokens, mask, rng)
        return [head.forward(ad.select(h, 1, j)) for j, head in enumerate(self.heads)]

    def embed_rows(self, tokens: np.ndarray) -> np.ndarray:
        """Mean over field positions of the final hidden states (no masking)."""
        was_training = self.training
        self.training = False
        try:
            mask = np.zeros(np.asarray(tokens).shape, dtype=bool)
            h = self._hidden(tokens, mask, None)
            return h.data.mean(axis=1)
        finally:
            self.training = was_training
