"""Cross-attention fusion, pooling, regression head and the model variants."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .encoders import (GraphBatch, GraphEncoder, GraphEncoderConfig, GraphTokens,
                       LayoutEncoder, LayoutEncoderConfig, LayoutTokens,
                       MultiHeadAttention)
from .netlist import FEATURE_DIM
from .numcore import (LayerNorm, Linear, ParamStore, Tensor, concat, dropout,
                      gelu, mul, tsum)

TARGETS = ("rise_delay", "fall_delay", "rise_trans", "fall_trans", "rise_power", "fall_power")
VARIANTS = ("fusioncell", "fusioncell_no_corr", "vision_only", "late_fusion", "symmetrical")


def uses_graph(variant: str) -> bool:
    return variant != "vision_only"


@dataclass(frozen=True)
class FusionConfig:
    d: int = 64
    heads: int = 4
    head_hidden: int = 64
    dropout: float = 0.1


@dataclass(frozen=True)
class ModelConfig:
    variant: str = "fusioncell"
    d: int = 64
    heads: int = 4
    layout_layers: int = 2
    graph_layers: int = 2
    ffn_mult: int = 4
    patch_size: int = 8
    H: int = 64
    W: int = 64
    dropout: float = 0.1
    head_hidden: int | None = None  # None -> d
    feature_dim: int = FEATURE_DIM

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown model variant {self.variant!r}; choose from {VARIANTS}")

    @property
    def layout(self) -> LayoutEncoderConfig:
        return LayoutEncoderConfig(self.d, self.heads, self.layout_layers, self.ffn_mult,
                                   self.patch_size, self.H, self.W, self.dropout)

    @property
    def graph(self) -> GraphEncoderConfig:
        return GraphEncoderConfig(self.d, self.heads, self.graph_layers, self.ffn_mult,
                                  self.dropout, self.feature_dim)

    @property
    def fusion(self) -> FusionConfig:
        return FusionConfig(self.d, self.heads, self.head_hidden or self.d, self.dropout)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class FusedTokens:
    tokens: Tensor
    valid: np.ndarray
    attention: np.ndarray  # (B, heads, Nq, Nk)


class CrossAttention:
    """One multi-head cross-attention layer with residual + LayerNorm.

    Query rows flagged invalid pass through unchanged.
    """

    def __init__(self, store: ParamStore, name: str, cfg: FusionConfig):
        self.cfg = cfg
        self.attn = MultiHeadAttention(store, f"{name}.attn", cfg.d, cfg.heads)
        self.norm = LayerNorm(store, f"{name}.norm", cfg.d)

    def __call__(self, queries: Tensor, keys: Tensor, query_valid: np.ndarray,
                 key_valid: np.ndarray | None = None, train: bool = False, rng=None) -> FusedTokens:
        if queries.shape[-1] != keys.shape[-1]:
            raise ValueError(f"cross-attention dim mismatch {queries.shape} vs {keys.shape}")
        allowed = None
        if key_valid is not None:
            allowed = np.broadcast_to(key_valid[:, None, :],
                                      (keys.shape[0], queries.shape[1], keys.shape[1]))
        a, w = self.attn(queries, keys, allowed)
        out = self.norm(queries + dropout(a, self.cfg.dropout, train, rng))
        keep = query_valid[..., None].astype(float)
        if not keep.all():
            out = mul(out, keep) + mul(queries, 1.0 - keep)
        return FusedTokens(out, query_valid, w)


def cross_attend(zg: GraphTokens, zl: LayoutTokens, layer: CrossAttention) -> FusedTokens:
    return layer(zg.tokens, zl.tokens, zg.valid)


def pool(tokens: Tensor, valid: np.ndarray | None = None) -> Tensor:
    """Mean over valid rows: (B, N, d) -> (B, d)."""
    if valid is None:
        return tokens.mean(axis=1)
    counts = valid.sum(axis=1)
    if (counts == 0).any():
        raise ValueError("pooling over zero valid rows")
    s = tsum(mul(tokens, valid[..., None].astype(float)), axis=1)
    return mul(s, (1.0 / counts)[:, None])


class RegressionHead:
    """LayerNorm -> Linear -> GeLU -> dropout -> Linear(6)."""

    def __init__(self, store: ParamStore, name: str, d_in: int, hidden: int, p_drop: float):
        self.norm = LayerNorm(store, f"{name}.norm", d_in)
        self.fc1 = Linear(store, f"{name}.fc1", d_in, hidden)
        self.fc2 = Linear(store, f"{name}.fc2", hidden, len(TARGETS))
        self.p_drop = p_drop

    def __call__(self, z: Tensor, train: bool = False, rng=None) -> Tensor:
        h = dropout(gelu(self.fc1(self.norm(z))), self.p_drop, train, rng)
        return self.fc2(h)


@dataclass
class Batch:
    layouts: np.ndarray | None          # (B, 3, H, W)
    graphs: GraphBatch | None
    targets: np.ndarray | None = None   # (B, 6) standardized
    ids: list[str] = field(default_factory=list)

    def __len__(self):
        if self.layouts is not None:
            return len(self.layouts)
        return len(self.graphs.valid)


class FusionModel:
    """Base: owns the parameter store and the dropout stream.

    Subclasses implement ``_forward``; ``trace`` holds the attention maps of
    the most recent call.
    """

    def __init__(self, cfg: ModelConfig, seed: int = 0):
        self.cfg = cfg
        self.seed = seed
        self.store = ParamStore(np.random.default_rng(seed))
        self.dropout_rng = np.random.Generator(np.random.Philox(key=seed))
        self.trace: dict[str, object] = {}
        self._build()

    @property
    def params(self) -> dict[str, Tensor]:
        return self.store.params

    def _build(self):
        raise NotImplementedError

    def __call__(self, batch: Batch, train: bool = False) -> Tensor:
        rng = self.dropout_rng if train else None
        return self._forward(batch, train, rng)

    def predict(self, batch: Batch) -> np.ndarray:
        return self(batch, train=False).data.copy()


class FusionCell(FusionModel):
    """Graph tokens query layout tokens; pooled fused graph tokens feed the head."""

    def _build(self):
        c = self.cfg
        self.layout_enc = LayoutEncoder(self.store, c.layout)
        self.graph_enc = GraphEncoder(self.store, c.graph)
        self.cross = CrossAttention(self.store, "fusion", c.fusion)
        self.head = RegressionHead(self.store, "head", c.d, c.fusion.head_hidden, c.dropout)

    def _forward(self, batch, train, rng):
        zl = self.layout_enc(batch.layouts, train, rng)
        zg = self.graph_enc(batch.graphs, train, rng)
        fused = self.cross(zg.tokens, zl.tokens, zg.valid, train=train, rng=rng)
        self.trace = {"graph_attention": zg.attention, "cross_attention": fused.attention}
        return self.head(pool(fused.tokens, fused.valid), train, rng)


class VisionOnly(FusionModel):
    def _build(self):
        c = self.cfg
        self.layout_enc = LayoutEncoder(self.store, c.layout)
        self.head = RegressionHead(self.store, "head", c.d, c.fusion.head_hidden, c.dropout)

    def _forward(self, batch, train, rng):
        zl = self.layout_enc(batch.layouts, train, rng)
        self.trace = {}
        return self.head(pool(zl.tokens), train, rng)


class LateFusion(FusionModel):
    """Mean-pool each encoder, concatenate [layout, graph], regress."""

    def _build(self):
        c = self.cfg
        self.layout_enc = LayoutEncoder(self.store, c.layout)
        self.graph_enc = GraphEncoder(self.store, c.graph)
        self.head = RegressionHead(self.store, "head", 2 * c.d, c.fusion.head_hidden, c.dropout)

    def _forward(self, batch, train, rng):
        zl = self.layout_enc(batch.layouts, train, rng)
        zg = self.graph_enc(batch.graphs, train, rng)
        self.trace = {"graph_attention": zg.attention}
        z = concat([pool(zl.tokens), pool(zg.tokens, zg.valid)], axis=-1)
        return self.head(z, train, rng)


class Symmetrical(FusionModel):
    """Bidirectional cross-attention; pooled streams concatenated [layout, graph]."""

    def _build(self):
        c = self.cfg
        self.layout_enc = LayoutEncoder(self.store, c.layout)
        self.graph_enc = GraphEncoder(self.store, c.graph)
        self.g2l = CrossAttention(self.store, "fusion_g2l", c.fusion)
        self.l2g = CrossAttention(self.store, "fusion_l2g", c.fusion)
        self.head = RegressionHead(self.store, "head", 2 * c.d, c.fusion.head_hidden, c.dropout)

    def _forward(self, batch, train, rng):
        zl = self.layout_enc(batch.layouts, train, rng)
        zg = self.graph_enc(batch.graphs, train, rng)
        g_stream = self.g2l(zg.tokens, zl.tokens, zg.valid, train=train, rng=rng)
        l_valid = np.ones(zl.tokens.shape[:2], dtype=bool)
        l_stream = self.l2g(zl.tokens, zg.tokens, l_valid, key_valid=zg.valid, train=train, rng=rng)
        self.trace = {"graph_attention": zg.attention, "cross_attention": g_stream.attention,
                      "reverse_attention": l_stream.attention}
        z = concat([pool(l_stream.tokens), pool(g_stream.tokens, g_stream.valid)], axis=-1)
        return self.head(z, train, rng)


_CLASSES = {
    "fusioncell": FusionCell,
    "fusioncell_no_corr": FusionCell,
    "vision_only": VisionOnly,
    "late_fusion": LateFusion,
    "symmetrical": Symmetrical,
}


def build_model(cfg: ModelConfig, seed: int = 0) -> FusionModel:
    return _CLASSES[cfg.variant](cfg, seed)


def attention_dump(model: FusionModel, batch: Batch, path=None) -> dict:
    """Head-averaged graph-query -> layout-key weights for the first cell in ``batch``.

    Returns ``{node_name: [[token_label, weight], ...]}`` with token labels
    ``cls``, ``dist`` and ``p_<row>_<col>`` in key order.
    """
    if not isinstance(model, FusionCell):
        raise ValueError(f"variant {model.cfg.variant!r} has no graph-query cross-attention to dump")
    model(batch, train=False)
    w = model.trace["cross_attention"][0].mean(axis=0)  # (N, P+2)
    side_h = model.cfg.H // model.cfg.patch_size
    side_w = model.cfg.W // model.cfg.patch_size
    labels = ["cls", "dist"] + [f"p_{r}_{c}" for r in range(side_h) for c in range(side_w)]
    names = batch.graphs.node_names[0]
    out = {name: [[lab, float(x)] for lab, x in zip(labels, w[i])] for i, name in enumerate(names)}
    if path is not None:
        Path(path).write_text(json.dumps(out, indent=1) + "\n")
    return out
