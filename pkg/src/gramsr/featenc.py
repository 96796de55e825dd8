"""Frozen patch-feature encoders, the trainable MLP adapter, and Gram statistics.

Two seeded-random frozen ViT-style encoders stand in for pre-trained
backbones: a conditioning encoder and a (smaller) texture encoder for Gram
alignment. What the downstream machinery needs from them is that they are
fixed, deterministic, spatially aligned, and deep; pre-trained weights are
not required at this scale.

Feature maps are (N, d) matrices, one row per patch in row-major grid order.
All ops accept numpy arrays or torch tensors and return the matching kind;
torch inputs keep their autograd graph.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import torch
import torch.nn.functional as F

from .errors import DegenerateInputError, ShapeError, SizeError

NORM_MODES = ("global_frobenius", "per_row")


@dataclass(frozen=True)
class EncoderSpec:
    role: str  # "conditioning" or "gram"
    patch_size: int
    depth: int
    dim: int
    seed: int
    frozen: bool = True

    def __post_init__(self):
        if self.role not in ("conditioning", "gram"):
            raise ValueError(f"unknown encoder role {self.role!r}")
        if self.patch_size < 1 or self.depth < 1 or self.dim < 2:
            raise ValueError("patch_size/depth must be >= 1 and dim >= 2")
        if not self.frozen:
            raise ValueError("encoders are always frozen")

    def to_dict(self) -> dict:
        return {
            "role": self.role,
            "patch_size": self.patch_size,
            "depth": self.depth,
            "dim": self.dim,
            "seed": self.seed,
            "frozen": self.frozen,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EncoderSpec":
        return cls(
            role=d["role"],
            patch_size=int(d["patch_size"]),
            depth=int(d["depth"]),
            dim=int(d["dim"]),
            seed=int(d["seed"]),
            frozen=bool(d.get("frozen", True)),
        )


def _sinusoidal_positions(n: int, dim: int, dtype) -> torch.Tensor:
    pos = torch.arange(n, dtype=dtype)[:, None]
    idx = torch.arange(0, dim, 2, dtype=dtype)[None, :]
    angle = pos / torch.pow(torch.tensor(10000.0, dtype=dtype), idx / dim)
    pe = torch.zeros(n, dim, dtype=dtype)
    pe[:, 0::2] = torch.sin(angle)
    pe[:, 1::2] = torch.cos(angle[:, : pe[:, 1::2].shape[1]])
    return pe


class FrozenEncoder:
    """Deterministic seeded ViT: patch embed, sinusoidal positions, attention+MLP blocks."""

    IN_CHANNELS = 3

    def __init__(self, spec: EncoderSpec, dtype=torch.float64):
        self.spec = spec
        self.dtype = dtype
        self.num_heads = 4 if spec.dim % 4 == 0 else 1
        g = torch.Generator().manual_seed(spec.seed)
        d = spec.dim
        pdim = spec.patch_size * spec.patch_size * self.IN_CHANNELS

        def mat(rows, cols, std):
            return torch.empty(rows, cols, dtype=dtype).normal_(0.0, std, generator=g)

        p = {"embed.w": mat(pdim, d, pdim**-0.5), "embed.b": torch.zeros(d, dtype=dtype)}
        for i in range(spec.depth):
            p[f"blk{i}.ln1.g"] = torch.ones(d, dtype=dtype)
            p[f"blk{i}.ln1.b"] = torch.zeros(d, dtype=dtype)
            p[f"blk{i}.qkv.w"] = mat(d, 3 * d, d**-0.5)
            p[f"blk{i}.qkv.b"] = torch.zeros(3 * d, dtype=dtype)
            p[f"blk{i}.proj.w"] = mat(d, d, d**-0.5)
            p[f"blk{i}.proj.b"] = torch.zeros(d, dtype=dtype)
            p[f"blk{i}.ln2.g"] = torch.ones(d, dtype=dtype)
            p[f"blk{i}.ln2.b"] = torch.zeros(d, dtype=dtype)
            p[f"blk{i}.fc1.w"] = mat(d, 2 * d, d**-0.5)
            p[f"blk{i}.fc1.b"] = torch.zeros(2 * d, dtype=dtype)
            p[f"blk{i}.fc2.w"] = mat(2 * d, d, (2 * d) ** -0.5)
            p[f"blk{i}.fc2.b"] = torch.zeros(d, dtype=dtype)
        p["ln_f.g"] = torch.ones(d, dtype=dtype)
        p["ln_f.b"] = torch.zeros(d, dtype=dtype)
        for t in p.values():
            t.requires_grad_(False)
        self.params = p

    def _ln(self, x, g, b):
        return F.layer_norm(x, (x.shape[-1],), self.params[g], self.params[b])

    def _attend(self, x, i):
        b, n, d = x.shape
        h = self.num_heads
        qkv = x @ self.params[f"blk{i}.qkv.w"] + self.params[f"blk{i}.qkv.b"]
        q, k, v = qkv.reshape(b, n, 3, h, d // h).permute(2, 0, 3, 1, 4)
        att = torch.softmax(q @ k.transpose(-2, -1) / math.sqrt(d // h), dim=-1)
        out = (att @ v).permute(0, 2, 1, 3).reshape(b, n, d)
        return out @ self.params[f"blk{i}.proj.w"] + self.params[f"blk{i}.proj.b"]

    def patchify(self, x: torch.Tensor) -> torch.Tensor:
        """(B, H, W, C) -> (B, N, p*p*C), rows in row-major patch-grid order."""
        p = self.spec.patch_size
        b, h, w, c = x.shape
        if h % p or w % p:
            raise SizeError(f"image dimensions {(h, w)} not divisible by patch size {p}")
        if c == 1:
            x = x.expand(b, h, w, self.IN_CHANNELS)
        elif c != self.IN_CHANNELS:
            raise ShapeError(f"expected 1 or {self.IN_CHANNELS} channels, got {c}")
        x = x.reshape(b, h // p, p, w // p, p, self.IN_CHANNELS)
        x = x.permute(0, 1, 3, 2, 4, 5).reshape(b, (h // p) * (w // p), -1)
        return x

    def forward(self, x: torch.Tensor, collect_layers: bool = False):
        """x: (B, H, W, C) -> (B, N, d); optionally also per-block outputs."""
        tokens = self.patchify(x.to(self.dtype))
        f = tokens @ self.params["embed.w"] + self.params["embed.b"]
        f = f + _sinusoidal_positions(f.shape[1], self.spec.dim, self.dtype)
        layers = []
        for i in range(self.spec.depth):
            f = f + self._attend(self._ln(f, f"blk{i}.ln1.g", f"blk{i}.ln1.b"), i)
            m = self._ln(f, f"blk{i}.ln2.g", f"blk{i}.ln2.b")
            m = F.gelu(m @ self.params[f"blk{i}.fc1.w"] + self.params[f"blk{i}.fc1.b"])
            f = f + m @ self.params[f"blk{i}.fc2.w"] + self.params[f"blk{i}.fc2.b"]
            if collect_layers:
                layers.append(f)
        f = self._ln(f, "ln_f.g", "ln_f.b")
        return (f, layers) if collect_layers else f


@lru_cache(maxsize=16)
def get_encoder(spec: EncoderSpec, dtype=torch.float64) -> FrozenEncoder:
    return FrozenEncoder(spec, dtype=dtype)


def _as_batched_torch(x, dtype=torch.float64):
    is_numpy = isinstance(x, np.ndarray)
    t = torch.from_numpy(np.ascontiguousarray(x)) if is_numpy else x
    t = t.to(dtype)
    squeeze = t.ndim == 3
    if squeeze:
        t = t[None]
    if t.ndim != 4:
        raise ShapeError(f"expected (H, W, C) or (B, H, W, C), got {tuple(x.shape)}")
    return t, is_numpy, squeeze


def extract_features(x, spec: EncoderSpec):
    """Frozen deterministic forward pass -> (N, d) features (batched if x is)."""
    t, is_numpy, squeeze = _as_batched_torch(x)
    enc = get_encoder(spec)
    f = enc.forward(t)
    if squeeze:
        f = f[0]
    return f.numpy() if is_numpy else f


@dataclass
class AdapterParams:
    """Two-linear-layer MLP with ReLU, projecting encoder features into conditioning space."""

    w1: torch.Tensor
    b1: torch.Tensor
    w2: torch.Tensor
    b2: torch.Tensor
    trainable: bool = True

    @classmethod
    def initialize(cls, in_dim: int, cond_dim: int, seed: int, dtype=torch.float64) -> "AdapterParams":
        # Hidden width equals the conditioning width.
        g = torch.Generator().manual_seed(seed)
        w1 = torch.empty(in_dim, cond_dim, dtype=dtype).normal_(0.0, in_dim**-0.5, generator=g)
        w2 = torch.empty(cond_dim, cond_dim, dtype=dtype).normal_(0.0, cond_dim**-0.5, generator=g)
        return cls(w1=w1, b1=torch.zeros(cond_dim, dtype=dtype), w2=w2, b2=torch.zeros(cond_dim, dtype=dtype))

    def tensors(self) -> dict[str, torch.Tensor]:
        return {"adapter.w1": self.w1, "adapter.b1": self.b1, "adapter.w2": self.w2, "adapter.b2": self.b2}

    def set_trainable(self, flag: bool) -> None:
        self.trainable = flag
        for t in self.tensors().values():
            t.requires_grad_(flag)


def adapt(f, params: AdapterParams):
    """Rowwise ReLU(f @ w1 + b1) @ w2 + b2."""
    is_numpy = isinstance(f, np.ndarray)
    t = torch.from_numpy(np.ascontiguousarray(f)) if is_numpy else f
    if t.shape[-1] != params.w1.shape[0]:
        raise ShapeError(f"feature dim {t.shape[-1]} != adapter input dim {params.w1.shape[0]}")
    t = t.to(params.w1.dtype)
    out = torch.relu(t @ params.w1 + params.b1) @ params.w2 + params.b2
    return out.numpy() if is_numpy else out


def gram(f, norm_mode: str = "global_frobenius"):
    """Normalized second-order patch statistics: G = F_hat @ F_hat^T.

    global_frobenius divides F by its matrix Frobenius norm (so trace(G) = 1);
    per_row normalizes each row to unit length (so diag(G) = 1).
    """
    if norm_mode not in NORM_MODES:
        raise ValueError(f"unknown norm_mode {norm_mode!r}")
    is_numpy = isinstance(f, np.ndarray)
    t = torch.from_numpy(np.ascontiguousarray(f)) if is_numpy else f
    if t.ndim != 2 or t.shape[0] < 1 or t.shape[1] < 1:
        raise ShapeError(f"feature map must be (N, d), got {tuple(t.shape)}")
    if norm_mode == "global_frobenius":
        norm = torch.linalg.norm(t)
        if float(norm.detach()) == 0.0:
            raise DegenerateInputError("all-zero feature map has no Gram matrix")
        fhat = t / norm
    else:
        norms = torch.linalg.norm(t, dim=1, keepdim=True)
        if float(norms.detach().min()) == 0.0:
            raise DegenerateInputError("zero feature row under per_row normalization")
        fhat = t / norms
    g = fhat @ fhat.T
    return g.numpy() if is_numpy else g


def gram_distance(ga, gb):
    """(1/N^2) * squared Frobenius norm of (ga - gb). Zero iff equal."""
    if ga.shape != gb.shape:
        raise ShapeError(f"gram size mismatch {ga.shape} vs {gb.shape}")
    n = ga.shape[0]
    diff = ga - gb
    if isinstance(diff, np.ndarray):
        return float(np.sum(diff * diff)) / (n * n)
    return (diff * diff).sum() / (n * n)


def default_conditioning_spec(seed: int = 101) -> EncoderSpec:
    return EncoderSpec(role="conditioning", patch_size=4, depth=2, dim=64, seed=seed)


def default_gram_spec(seed: int = 202) -> EncoderSpec:
    return EncoderSpec(role="gram", patch_size=8, depth=2, dim=32, seed=seed)
