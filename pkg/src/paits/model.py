"""Triplet encoder (continuous value embeddings + transformer + fusion attention)
and the forecast / reconstruction / supervised heads built on it."""
from __future__ import annotations

import io
import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import NamedTuple

import torch
import torch.nn.functional as F
from torch import nn

CKPT_MAGIC = b"PAITSCKPT1\n"


@dataclass
class EncoderConfig:
    n_features: int = 10
    static_dim: int = 0
    seqlen: int = 64
    embed_dim: int = 50
    blocks: int = 2
    heads: int = 4
    dropout: float = 0.2
    ff_dim: int = 100
    static_embed_dim: int = 50
    task: str = "binary"  # or "multilabel"
    reconstruct_target: str = "value"  # or "feature" (retail)

    def __post_init__(self):
        if self.heads > self.embed_dim:
            raise ValueError("heads cannot exceed embed_dim")
        for name in ("n_features", "seqlen", "embed_dim", "blocks", "heads", "ff_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.task not in ("binary", "multilabel"):
            raise ValueError(f"unknown task {self.task!r}")
        if self.reconstruct_target not in ("value", "feature"):
            raise ValueError(f"unknown reconstruct_target {self.reconstruct_target!r}")

    @property
    def encoding_dim(self) -> int:
        return self.embed_dim + (self.static_embed_dim if self.static_dim else 0)

    @property
    def n_outputs(self) -> int:
        return 1 if self.task == "binary" else self.n_features


class EncoderOutput(NamedTuple):
    embedding: torch.Tensor  # (B, encoding_dim)
    contextual: torch.Tensor  # (B, L, embed_dim), per-position transformer output
    weights: torch.Tensor  # (B, L) fusion weights, zero at padding


class ContinuousValueEmbedding(nn.Module):
    def __init__(self, dim: int, hidden: int):
        super().__init__()
        self.inner = nn.Linear(1, hidden)
        self.outer = nn.Linear(hidden, dim)

    def forward(self, x):
        return self.outer(torch.tanh(self.inner(x.unsqueeze(-1))))


class TransformerBlock(nn.Module):
    """Post-norm multi-head self-attention block with a key padding mask.

    Each head has width ``dim // heads``; the concatenated heads are projected
    back to ``dim`` (so ``dim`` need not be a multiple of ``heads``).
    """

    def __init__(self, dim: int, heads: int, ff_dim: int, dropout: float):
        super().__init__()
        self.heads = heads
        self.head_dim = dim // heads
        inner = self.head_dim * heads
        self.qkv = nn.Linear(dim, 3 * inner)
        self.proj = nn.Linear(inner, dim)
        self.norm1 = nn.LayerNorm(dim)
        self.norm2 = nn.LayerNorm(dim)
        self.ff = nn.Sequential(nn.Linear(dim, ff_dim), nn.GELU(), nn.Linear(ff_dim, dim))
        self.drop = nn.Dropout(dropout)

    def forward(self, x, keep):
        b, n, _ = x.shape
        dh = self.head_dim
        q, k, v = self.qkv(x).view(b, n, 3, self.heads, dh).permute(2, 0, 3, 1, 4)
        # dropout acts on the residual branches only, not on attention weights
        h = F.scaled_dot_product_attention(q, k, v, attn_mask=keep[:, None, None, :])
        h = h.transpose(1, 2).reshape(b, n, self.heads * dh)
        x = self.norm1(x + self.drop(self.proj(h)))
        return self.norm2(x + self.drop(self.ff(x)))


class TripletEncoder(nn.Module):
    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.cfg = cfg
        d = cfg.embed_dim
        self.time_emb = ContinuousValueEmbedding(d, d)
        self.value_emb = ContinuousValueEmbedding(d, d)
        # row 0 = padding (kept at zero), row V+1 = mask token
        self.feature_emb = nn.Embedding(cfg.n_features + 2, d, padding_idx=0)
        self.blocks = nn.ModuleList(
            TransformerBlock(d, cfg.heads, cfg.ff_dim, cfg.dropout) for _ in range(cfg.blocks)
        )
        self.fusion = nn.Sequential(nn.Linear(d, d), nn.Tanh(), nn.Linear(d, 1, bias=False))
        if cfg.static_dim:
            s = cfg.static_embed_dim
            self.static = nn.Sequential(nn.Linear(cfg.static_dim, s), nn.Tanh(), nn.Linear(s, s), nn.Tanh())
        else:
            self.static = None

    def embed(self, times, values, features):
        if features.numel() and (int(features.min()) < 0 or int(features.max()) > self.cfg.n_features + 1):
            raise ValueError(f"feature index outside [0, {self.cfg.n_features + 1}]")
        return self.time_emb(times) + self.value_emb(values) + self.feature_emb(features)

    def forward(self, times, values, features, padding, statics=None) -> EncoderOutput:
        keep = padding > 0
        if not bool(keep.any(dim=1).all()):
            raise ValueError("sample with no observations (all padding)")
        h = self.embed(times, values, features)
        for block in self.blocks:
            h = block(h, keep)
        scores = self.fusion(h).squeeze(-1).masked_fill(~keep, float("-inf"))
        w = torch.softmax(scores, dim=-1)
        emb = (w.unsqueeze(-1) * h).sum(dim=1)
        if self.static is not None:
            if statics is None:
                raise ValueError("model expects static features")
            emb = torch.cat([emb, self.static(statics)], dim=-1)
        return EncoderOutput(emb, h, w)


class PaitsModel(nn.Module):
    """Encoder plus the three task heads. Parameter groups: ``encoder``,
    ``forecast_head``, ``reconstruct_head``, ``predict_head``."""

    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.cfg = cfg
        d = cfg.embed_dim
        self.encoder = TripletEncoder(cfg)
        self.forecast_head = nn.Linear(cfg.encoding_dim, cfg.n_features)
        rec_out = 1 if cfg.reconstruct_target == "value" else cfg.n_features
        self.reconstruct_head = nn.Sequential(
            nn.Linear(d, d), nn.Tanh(), nn.Linear(d, d), nn.Tanh(), nn.Linear(d, rec_out)
        )
        self.predict_head = nn.Sequential(
            nn.Linear(cfg.encoding_dim, d), nn.Tanh(), nn.Linear(d, cfg.n_outputs)
        )

    def encode(self, times, values, features, padding, statics=None) -> EncoderOutput:
        return self.encoder(times, values, features, padding, statics)

    def forecast(self, enc: EncoderOutput):
        return self.forecast_head(enc.embedding)

    def reconstruct(self, enc: EncoderOutput):
        out = self.reconstruct_head(enc.contextual)
        return out.squeeze(-1) if self.cfg.reconstruct_target == "value" else out

    def predict(self, enc: EncoderOutput):
        out = self.predict_head(enc.embedding)
        return out.squeeze(-1) if self.cfg.task == "binary" else out

    def reset_predict_head(self):
        for layer in self.predict_head:
            if isinstance(layer, nn.Linear):
                layer.reset_parameters()

    def group_state(self, group: str) -> dict:
        prefix = group + "."
        return {k[len(prefix):]: v.clone() for k, v in self.state_dict().items() if k.startswith(prefix)}


def build_model(cfg: EncoderConfig, seed: int) -> PaitsModel:
    """Fresh model with seeded initialization."""
    gen_state = torch.random.get_rng_state()
    torch.manual_seed(seed)
    model = PaitsModel(cfg)
    torch.random.set_rng_state(gen_state)
    return model


def gradients(loss: torch.Tensor, model: nn.Module) -> dict[str, torch.Tensor]:
    """Gradient of ``loss`` for every named parameter (zeros where unused)."""
    names, params = zip(*[(n, p) for n, p in model.named_parameters() if p.requires_grad])
    grads = torch.autograd.grad(loss, params, allow_unused=True, retain_graph=True)
    out = {}
    for name, p, g in zip(names, params, grads):
        g = torch.zeros_like(p) if g is None else g
        if not torch.isfinite(g).all():
            raise FloatingPointError(f"non-finite gradient for parameter {name}")
        out[name] = g
    return out


# --------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path, state_dict: dict, metadata: dict) -> None:
    """Magic line, little-endian uint64 metadata length, JSON metadata, then
    the torch-serialized parameter blob."""
    buf = io.BytesIO()
    torch.save({k: v.detach().cpu() for k, v in state_dict.items()}, buf)
    meta = json.dumps(metadata, sort_keys=True).encode("utf-8")
    path = Path(path)
    if path.exists():
        raise FileExistsError(f"refusing to overwrite {path}")
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<Q", len(meta)))
        fh.write(meta)
        fh.write(buf.getvalue())


def load_checkpoint(path) -> tuple[dict, dict]:
    raw = Path(path).read_bytes()
    if not raw.startswith(CKPT_MAGIC):
        raise ValueError(f"{path} is not a checkpoint")
    off = len(CKPT_MAGIC)
    (n,) = struct.unpack("<Q", raw[off:off + 8])
    meta = json.loads(raw[off + 8:off + 8 + n].decode("utf-8"))
    state = torch.load(io.BytesIO(raw[off + 8 + n:]), weights_only=True)
    return meta, state


def config_from_dict(d: dict) -> EncoderConfig:
    return EncoderConfig(**d)


def config_to_dict(cfg: EncoderConfig) -> dict:
    return asdict(cfg)
