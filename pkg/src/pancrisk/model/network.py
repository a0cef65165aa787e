"""Prognostic network: texture encoders, cross-phase fusion, structure and distance branches."""
from __future__ import annotations

import numpy as np

from ..geometry import VESSELS
from ..tensorcore import (BatchNorm3d, ConfigurationError, Conv3d, DimensionError, Linear,
                          MultiHeadAttention, ParamStore, TransformerLayer, avg_pool3d, concat,
                          leaky_relu, sigmoid, tensor)
from .config import ModelConfig


def phase_mask(c):
    """Additive (3c, 3c) mask: -inf within a phase block, 0 across phases."""
    block = np.arange(3 * c) // c
    return np.where(block[:, None] == block[None, :], -np.inf, 0.0)


def partition(x, patch):
    """(B, C, H, W, D) -> (B, V, N, C): V positions within a patch, N patches."""
    B, C, H, W, D = x.shape
    h, w, d = patch
    y = x.reshape(B, C, H // h, h, W // w, w, D // d, d)
    y = y.transpose(0, 3, 5, 7, 2, 4, 6, 1)
    return y.reshape(B, h * w * d, (H // h) * (W // w) * (D // d), C)


def unpartition(t, patch, dims):
    B, _, _, C = t.shape
    h, w, d = patch
    H, W, D = dims
    y = t.reshape(B, h, w, d, H // h, W // w, D // d, C)
    y = y.transpose(0, 7, 4, 1, 5, 2, 6, 3)
    return y.reshape(B, C, H, W, D)


class TextureBlock:
    """3x3x3 conv, 2x pooling, 1x1x1 channel lift, then attention across patches."""

    def __init__(self, store, prefix, c_in, c, c_lift, patch, heads, ff_hidden):
        self.patch = patch
        self.conv = Conv3d(store, f"{prefix}.conv", c_in, c, 3, padding=1)
        self.bn1 = BatchNorm3d(store, f"{prefix}.bn1", c)
        self.lift = Conv3d(store, f"{prefix}.lift", c, c_lift, 1)
        self.bn2 = BatchNorm3d(store, f"{prefix}.bn2", c_lift)
        self.attn = TransformerLayer(store, f"{prefix}.attn", c_lift, heads, ff_hidden)

    @property
    def norms(self):
        return [self.bn1, self.bn2]

    def cnn(self, x):
        x = avg_pool3d(leaky_relu(self.bn1(self.conv(x))), 2)
        return leaky_relu(self.bn2(self.lift(x)))

    def __call__(self, x):
        x = self.cnn(x)
        dims = x.shape[2:]
        if any(n % p for n, p in zip(dims, self.patch)):
            raise ConfigurationError(f"feature dims {dims} are not divisible by patch {self.patch}")
        return unpartition(self.attn(partition(x, self.patch)), self.patch, dims)


class PhaseEncoder:
    """Stacked texture blocks; output tokens along depth with height and width averaged."""

    def __init__(self, store, prefix, cfg):
        c_in, self.blocks = 1, []
        for b, (c, cl, patch) in enumerate(zip(cfg.block_channels, cfg.lift_channels, cfg.block_patches())):
            self.blocks.append(TextureBlock(store, f"{prefix}.block{b}", c_in, c, cl, patch,
                                            cfg.heads, cfg.ff_hidden))
            c_in = cl

    @property
    def norms(self):
        return [n for b in self.blocks for n in b.norms]

    def __call__(self, x):
        """(B, 1, H, W, D) -> (B, D_tok, C)."""
        for block in self.blocks:
            x = block(x)
        return x.mean(axis=(2, 3)).swapaxes(1, 2)


class CrossPhaseFusion:
    """Attention across the 3C channel-tokens of the concatenated phase features.

    The block-diagonal mask stops a channel from attending to channels of its
    own phase, itself included.
    """

    def __init__(self, store, prefix, c, d_tok, c_t, mode="cross", heads=1):
        self.mode, self.c = mode, c
        if mode == "cross":
            self.attn = MultiHeadAttention(store, f"{prefix}.attn", d_tok, heads)
            self.mask = phase_mask(c)
            self.proj = Linear(store, f"{prefix}.proj", 6 * c, c_t)
        else:
            self.proj = Linear(store, f"{prefix}.proj", 3 * c, c_t)
        self.last_cross = None

    def __call__(self, f1, f2, f3):
        if not (f1.shape == f2.shape == f3.shape):
            raise DimensionError(f"phase features differ in shape: {f1.shape}, {f2.shape}, {f3.shape}")
        f = concat([f1, f2, f3], axis=-1)  # (B, D_tok, 3C)
        if self.mode == "early":
            return self.proj(f.mean(axis=1))
        ft = f.swapaxes(-1, -2)  # (B, 3C, D_tok): channels become tokens
        cross = self.attn(ft, ft, self.mask)
        self.last_cross = cross.data
        pooled = concat([cross, ft], axis=-2).mean(axis=-1)  # (B, 6C)
        return self.proj(pooled)

    @property
    def last_weights(self):
        return self.attn.last_weights if self.mode == "cross" else None


class TextureBranch:
    def __init__(self, store, prefix, cfg):
        self.encoder = PhaseEncoder(store, f"{prefix}.encoder", cfg)
        self.fusion = CrossPhaseFusion(store, f"{prefix}.fusion", cfg.token_channels, cfg.token_length,
                                       cfg.c_t, cfg.fusion_mode, cfg.fusion_heads)

    @property
    def norms(self):
        return self.encoder.norms

    def __call__(self, phases):
        """(B, 3, H, W, D) -> (B, C_t); the encoder is shared across phases."""
        B = phases.shape[0]
        spatial = phases.shape[2:]
        stacked = phases.swapaxes(0, 1).reshape((3 * B, 1) + tuple(spatial))
        tokens = self.encoder(stacked)
        f = [tokens[i * B:(i + 1) * B] for i in range(3)]
        return self.fusion(*f)


class StructureBranch:
    """Shared small CNN over each PDAC/vessel mask pair, concatenated and projected."""

    def __init__(self, store, prefix, cfg):
        self.convs, self.bns = [], []
        c_in = 2
        for i, c in enumerate(cfg.structure_channels):
            self.convs.append(Conv3d(store, f"{prefix}.conv{i}", c_in, c, 3, padding=1))
            self.bns.append(BatchNorm3d(store, f"{prefix}.bn{i}", c))
            c_in = c
        self.width = c_in
        self.proj = Linear(store, f"{prefix}.proj", len(VESSELS) * c_in, cfg.c_s)

    @property
    def norms(self):
        return self.bns

    def embed(self, pairs):
        """(B, 4, 2, H, W, D) -> per-pair embeddings (B, 4, width)."""
        if pairs.ndim != 6 or pairs.shape[1] != len(VESSELS) or pairs.shape[2] != 2:
            raise DimensionError(f"expected (B, {len(VESSELS)}, 2, H, W, D) mask pairs, got {pairs.shape}")
        B = pairs.shape[0]
        x = pairs.reshape((B * len(VESSELS),) + tuple(pairs.shape[2:]))
        for conv, bn in zip(self.convs, self.bns):
            x = avg_pool3d(leaky_relu(bn(conv(x))), 2)
        return x.mean(axis=(2, 3, 4)).reshape(B, len(VESSELS), self.width)

    def __call__(self, pairs):
        e = self.embed(pairs)
        return self.proj(e.reshape(e.shape[0], -1))


class NeuralDistance:
    """Two-way cross-attention between the K closest vessel and PDAC points."""

    def __init__(self, store, prefix, cfg):
        self.k = cfg.k
        self.embed = Linear(store, f"{prefix}.embed", 3, cfg.embed_dim)
        self.attn = MultiHeadAttention(store, f"{prefix}.attn", cfg.embed_dim, cfg.distance_heads)
        self.proj = Linear(store, f"{prefix}.proj", len(VESSELS) * 2 * cfg.embed_dim, cfg.c_d)

    def pair_embedding(self, v_pts, p_pts):
        """(..., K, 3) coordinate sets -> (..., 2 * embed_dim)."""
        if v_pts.shape[-2] != self.k or p_pts.shape[-2] != self.k:
            raise DimensionError(f"expected {self.k} points per set, got {v_pts.shape[-2]} and {p_pts.shape[-2]}")
        ev, ep = self.embed(v_pts), self.embed(p_pts)
        v_to_p = self.attn(ev, ep).mean(axis=-2)
        p_to_v = self.attn(ep, ev).mean(axis=-2)
        return concat([v_to_p, p_to_v], axis=-1)

    def __call__(self, points):
        """(B, 4, 2, K, 3) -> (B, C_d)."""
        if points.ndim != 5 or points.shape[1] != len(VESSELS):
            raise DimensionError(f"expected (B, {len(VESSELS)}, 2, K, 3) points, got {points.shape}")
        e = self.pair_embedding(points[:, :, 0], points[:, :, 1])
        return self.proj(e.reshape(e.shape[0], -1))


class PrognosticNet:
    """Full network. ``log_hazard`` feeds the Cox loss; ``predict`` returns O_OS in (0, 1)."""

    def __init__(self, config=None, seed=0, dtype=np.float64):
        self.config = config or ModelConfig()
        cfg = self.config
        self.store = ParamStore(rng_seed=seed, dtype=dtype)
        self.texture = TextureBranch(self.store, "texture", cfg)
        self.structure = StructureBranch(self.store, "structure", cfg) if cfg.use_structure else None
        self.distance = NeuralDistance(self.store, "distance", cfg) if cfg.distance_mode == "neural" else None
        width = cfg.c_t + (cfg.c_s if cfg.use_structure else 0)
        width += {"none": 0, "chamfer": len(VESSELS), "neural": cfg.c_d}[cfg.distance_mode]
        self.head = Linear(self.store, "head", width, 1)

    @property
    def seed(self):
        return self.store.rng_seed

    @property
    def dtype(self):
        return self.store.dtype

    def train(self, mode=True):
        norms = self.texture.norms + (self.structure.norms if self.structure else [])
        for n in norms:
            n.training = mode
        return self

    def eval(self):
        return self.train(False)

    def features(self, batch):
        dt = self.store.dtype
        parts = [self.texture(tensor(batch.phases, dtype=dt))]
        if self.structure is not None:
            parts.append(self.structure(tensor(batch.pairs, dtype=dt)))
        if self.config.distance_mode == "neural":
            parts.append(self.distance(tensor(batch.points, dtype=dt)))
        elif self.config.distance_mode == "chamfer":
            parts.append(tensor(np.log1p(batch.chamfer), dtype=dt))
        return concat(parts, axis=-1) if len(parts) > 1 else parts[0]

    def log_hazard(self, batch):
        return self.head(self.features(batch)).reshape(-1)

    def predict(self, batch):
        return sigmoid(self.log_hazard(batch))

    def risk_scores(self, features, batch_size=32):
        """Inference-mode log-hazards for a list of SubjectFeatures."""
        from .features import collate
        was = [n.training for n in self.texture.norms]
        self.eval()
        out = [self.log_hazard(collate(features[i:i + batch_size])).data
               for i in range(0, len(features), batch_size)]
        self.train(any(was))
        return np.concatenate(out).astype(np.float64)
