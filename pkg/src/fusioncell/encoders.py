"""Layout (DeiT-style) and graph transformer encoders."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import patchify
from .netlist import (EDGE_SELF, FEATURE_DIM, NUM_EDGE_TYPES, AdjacencyMask,
                      CellGraph, build_mask)
from .numcore import (LayerNorm, Linear, ParamStore, Tensor, concat, dropout,
                      gelu, masked_fill, matmul, permute, softmax, transpose)


@dataclass(frozen=True)
class LayoutEncoderConfig:
    d: int = 64
    heads: int = 4
    layers: int = 2
    ffn_mult: int = 4
    patch_size: int = 8
    H: int = 64
    W: int = 64
    dropout: float = 0.1

    def __post_init__(self):
        if self.d % self.heads:
            raise ValueError(f"d={self.d} not divisible by heads={self.heads}")
        if self.layers < 1:
            raise ValueError("layers must be >= 1")

    @property
    def num_patches(self) -> int:
        return (self.H // self.patch_size) * (self.W // self.patch_size)


@dataclass(frozen=True)
class GraphEncoderConfig:
    d: int = 64
    heads: int = 4
    layers: int = 2
    ffn_mult: int = 4
    dropout: float = 0.1
    feature_dim: int = FEATURE_DIM
    num_edge_types: int = NUM_EDGE_TYPES

    def __post_init__(self):
        if self.d % self.heads:
            raise ValueError(f"d={self.d} not divisible by heads={self.heads}")


@dataclass
class GraphBatch:
    """Padded batch of graphs; padded nodes only see themselves."""
    features: np.ndarray   # (B, N, F)
    edge_type: np.ndarray  # (B, N, N) int
    allowed: np.ndarray    # (B, N, N) bool
    valid: np.ndarray      # (B, N) bool
    node_names: list[list[str]]
    node_types: list[list[str]]

    @property
    def edge_onehot(self) -> np.ndarray:
        return np.eye(NUM_EDGE_TYPES)[self.edge_type]


def collate_graphs(graphs: list[CellGraph], masks: list[AdjacencyMask] | None = None) -> GraphBatch:
    if masks is None:
        masks = [build_mask(g) for g in graphs]
    B = len(graphs)
    N = max(g.num_nodes for g in graphs)
    F = graphs[0].node_features.shape[1]
    feats = np.zeros((B, N, F))
    et = np.zeros((B, N, N), dtype=np.int64)
    valid = np.zeros((B, N), dtype=bool)
    for b, (g, m) in enumerate(zip(graphs, masks)):
        n = g.num_nodes
        feats[b, :n] = g.node_features
        et[b, :n, :n] = m.edge_type
        valid[b, :n] = True
        idx = np.arange(n, N)
        et[b, idx, idx] = EDGE_SELF
    return GraphBatch(feats, et, et != 0, valid,
                      [g.node_names for g in graphs], [g.node_type_mask for g in graphs])


@dataclass
class LayoutTokens:
    tokens: Tensor  # (B, P+2, d): [cls, dist, patch_1..patch_P]


@dataclass
class GraphTokens:
    tokens: Tensor  # (B, N, d)
    valid: np.ndarray
    node_types: list[list[str]]
    attention: list[np.ndarray]  # per layer, (B, heads, N, N)


class MultiHeadAttention:
    """Scaled dot-product attention with optional key mask and edge-type bias.

    The bias is one learned scalar per (head, edge type), zero-initialized,
    added to the logits before masking.
    """

    def __init__(self, store: ParamStore, name: str, d: int, heads: int,
                 num_edge_types: int = 0):
        self.d, self.heads, self.dh = d, heads, d // heads
        self.q = Linear(store, f"{name}.q", d, d)
        self.k = Linear(store, f"{name}.k", d, d)
        self.v = Linear(store, f"{name}.v", d, d)
        self.o = Linear(store, f"{name}.o", d, d)
        self.edge_bias = (store.add(f"{name}.edge_bias", np.zeros((heads, num_edge_types)))
                          if num_edge_types else None)

    def _split(self, x: Tensor) -> Tensor:
        B, N, _ = x.shape
        return permute(x.reshape(B, N, self.heads, self.dh), (0, 2, 1, 3))

    def __call__(self, xq: Tensor, xkv: Tensor, allowed: np.ndarray | None = None,
                 edge_onehot: np.ndarray | None = None) -> tuple[Tensor, np.ndarray]:
        if xq.shape[-1] != self.d or xkv.shape[-1] != self.d:
            raise ValueError(f"attention dim mismatch: {xq.shape} / {xkv.shape} vs d={self.d}")
        B, Nq, _ = xq.shape
        q, k, v = self._split(self.q(xq)), self._split(self.k(xkv)), self._split(self.v(xkv))
        logits = matmul(q, transpose(k)) * (1.0 / np.sqrt(self.dh))
        if self.edge_bias is not None:
            bias = matmul(Tensor(edge_onehot), transpose(self.edge_bias))  # (B, Nq, Nk, heads)
            logits = logits + permute(bias, (0, 3, 1, 2))
        if allowed is not None:
            logits = masked_fill(logits, ~allowed[:, None, :, :])
        w = softmax(logits)
        out = permute(matmul(w, v), (0, 2, 1, 3)).reshape(B, Nq, self.d)
        return self.o(out), w.data


class FeedForward:
    def __init__(self, store: ParamStore, name: str, d: int, mult: int):
        self.fc1 = Linear(store, f"{name}.fc1", d, mult * d)
        self.fc2 = Linear(store, f"{name}.fc2", mult * d, d)

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(gelu(self.fc1(x)))


class TransformerBlock:
    """Pre-norm block: x + MSA(LN(x)), then x + FFN(LN(x))."""

    def __init__(self, store: ParamStore, name: str, d: int, heads: int, ffn_mult: int,
                 p_drop: float, num_edge_types: int = 0):
        self.ln1 = LayerNorm(store, f"{name}.ln1", d)
        self.attn = MultiHeadAttention(store, f"{name}.attn", d, heads, num_edge_types)
        self.ln2 = LayerNorm(store, f"{name}.ln2", d)
        self.ffn = FeedForward(store, f"{name}.ffn", d, ffn_mult)
        self.p_drop = p_drop

    def __call__(self, x: Tensor, allowed=None, edge_onehot=None, train: bool = False,
                 rng=None) -> tuple[Tensor, np.ndarray]:
        h = self.ln1(x)
        a, w = self.attn(h, h, allowed, edge_onehot)
        x = x + dropout(a, self.p_drop, train, rng)
        x = x + dropout(self.ffn(self.ln2(x)), self.p_drop, train, rng)
        return x, w


class LayoutEncoder:
    def __init__(self, store: ParamStore, cfg: LayoutEncoderConfig, name: str = "layout"):
        self.cfg = cfg
        rng = store.rng
        d, P = cfg.d, cfg.num_patches
        self.proj = Linear(store, f"{name}.patch_proj", 3 * cfg.patch_size ** 2, d)
        self.cls = store.add(f"{name}.cls", _trunc_normal(rng, (1, 1, d)))
        self.dist = store.add(f"{name}.dist", _trunc_normal(rng, (1, 1, d)))
        self.pos = store.add(f"{name}.pos", _trunc_normal(rng, (1, P + 2, d)))
        self.blocks = [TransformerBlock(store, f"{name}.block{i}", d, cfg.heads, cfg.ffn_mult, cfg.dropout)
                       for i in range(cfg.layers)]
        self.norm = LayerNorm(store, f"{name}.norm", d)

    def __call__(self, images: np.ndarray, train: bool = False, rng=None) -> LayoutTokens:
        images = np.asarray(images)
        if images.ndim == 3:
            images = images[None]
        if images.shape[1:] != (3, self.cfg.H, self.cfg.W):
            raise ValueError(f"layout canvas {images.shape[1:]} does not match encoder "
                             f"(3, {self.cfg.H}, {self.cfg.W})")
        B = images.shape[0]
        patches = np.stack([patchify(im, self.cfg.patch_size) for im in images])
        x = self.proj(Tensor(patches))
        zeros = Tensor(np.zeros((B, 1, self.cfg.d)))
        x = concat([zeros + self.cls, zeros + self.dist, x], axis=1) + self.pos
        x = dropout(x, self.cfg.dropout, train, rng)
        for blk in self.blocks:
            x, _ = blk(x, train=train, rng=rng)
        return LayoutTokens(self.norm(x))


class GraphEncoder:
    def __init__(self, store: ParamStore, cfg: GraphEncoderConfig, name: str = "graph"):
        self.cfg = cfg
        self.proj = Linear(store, f"{name}.in_proj", cfg.feature_dim, cfg.d)
        self.blocks = [TransformerBlock(store, f"{name}.block{i}", cfg.d, cfg.heads, cfg.ffn_mult,
                                        cfg.dropout, num_edge_types=cfg.num_edge_types)
                       for i in range(cfg.layers)]
        self.norm = LayerNorm(store, f"{name}.norm", cfg.d)

    def __call__(self, batch: GraphBatch, train: bool = False, rng=None) -> GraphTokens:
        if batch.features.shape[-1] != self.cfg.feature_dim:
            raise ValueError(f"node features have width {batch.features.shape[-1]}, "
                             f"expected {self.cfg.feature_dim}")
        if not batch.allowed.any(axis=-1).all():
            raise ValueError("graph node with no allowed attention keys")
        onehot = batch.edge_onehot
        x = self.proj(Tensor(batch.features))
        attn = []
        for blk in self.blocks:
            x, w = blk(x, batch.allowed, onehot, train, rng)
            attn.append(w)
        return GraphTokens(self.norm(x), batch.valid, batch.node_types, attn)


def _trunc_normal(rng: np.random.Generator, shape, std: float = 0.02) -> np.ndarray:
    return np.clip(rng.normal(0.0, std, size=shape), -2 * std, 2 * std)


def encode_layout(images: np.ndarray, encoder: LayoutEncoder) -> LayoutTokens:
    return encoder(images)


def encode_graph(graph: CellGraph, mask: AdjacencyMask, encoder: GraphEncoder) -> GraphTokens:
    return encoder(collate_graphs([graph], [mask]))
