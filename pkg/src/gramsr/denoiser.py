"""Toy conditioned denoising network with injectable low-rank adapter sets.

A 3-level encoder/decoder over latent maps with one cross-attention block at
the bottleneck (latent cells attend to conditioning tokens). Every conv and
MLP linear layer is registered as a low-rank adaptation target; attention
projections are deliberately not. Adapter sets are named (pix / sem / gram),
independently activatable, and zero-initialized on their B factor so a fresh
injection never changes the forward pass.

Tensors use (H, W, C) layout at the API boundary, NCHW internally.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from .errors import ConfigurationError, ShapeError

LORA_SET_NAMES = ("pix", "sem", "gram")
CONDITIONING_MODES = ("visual", "fixed_tensor", "learnable_tensor")


@dataclass
class LoRAActivation:
    pix: bool = False
    sem: bool = False
    gram: bool = False

    @classmethod
    def none(cls) -> "LoRAActivation":
        return cls()

    @classmethod
    def up_to(cls, name: str | None) -> "LoRAActivation":
        """Monotone prefix activation in the order pix -> sem -> gram."""
        if name is None:
            return cls()
        if name not in LORA_SET_NAMES:
            raise ConfigurationError(f"unknown adapter set {name!r}")
        idx = LORA_SET_NAMES.index(name)
        return cls(pix=idx >= 0, sem=idx >= 1, gram=idx >= 2)

    def active_names(self) -> tuple[str, ...]:
        return tuple(n for n in LORA_SET_NAMES if getattr(self, n))


def _coerce_activation(act) -> LoRAActivation:
    if isinstance(act, LoRAActivation):
        return act
    if act is None:
        return LoRAActivation()
    names = list(act)
    for n in names:
        if n not in LORA_SET_NAMES:
            raise ConfigurationError(f"unknown adapter set {n!r}")
    return LoRAActivation(**{n: True for n in names})


@dataclass
class LoRAParamSet:
    """One named adapter bundle: per-target (A, B) pairs over flattened weights."""

    name: str
    rank: int
    scaling: float
    pairs: dict[str, tuple[torch.Tensor, torch.Tensor]]  # target -> (A: r x in, B: out x r)
    trainable: bool = False
    active: bool = False

    def tensors(self) -> dict[str, torch.Tensor]:
        out = {}
        for target in sorted(self.pairs):
            a, b = self.pairs[target]
            out[f"lora.{self.name}.{target}.A"] = a
            out[f"lora.{self.name}.{target}.B"] = b
        return out

    def set_trainable(self, flag: bool) -> None:
        self.trainable = flag
        for a, b in self.pairs.values():
            a.requires_grad_(flag)
            b.requires_grad_(flag)


class AdaptedLayer:
    """A conv or linear layer whose weight can carry summed low-rank deltas."""

    def __init__(self, name: str, kind: str, weight: torch.Tensor, bias: torch.Tensor, stride: int = 1, padding: int = 0):
        assert kind in ("conv", "linear")
        self.name = name
        self.kind = kind
        self.weight = weight
        self.bias = bias
        self.stride = stride
        self.padding = padding

    @property
    def flat_in(self) -> int:
        return int(np.prod(self.weight.shape[1:]))

    @property
    def out_features(self) -> int:
        return self.weight.shape[0]

    def effective_weight(self, deltas) -> torch.Tensor:
        """deltas: iterable of (scaling, A, B); empty -> base weight untouched."""
        w = self.weight
        for scaling, a, b in deltas:
            w = w + scaling * (b @ a).reshape(self.weight.shape)
        return w

    def forward(self, x: torch.Tensor, deltas=()) -> torch.Tensor:
        w = self.effective_weight(deltas)
        if self.kind == "conv":
            return F.conv2d(x, w, self.bias, stride=self.stride, padding=self.padding)
        return x @ w.reshape(self.out_features, self.flat_in).T + self.bias


@dataclass
class DenoiserConfig:
    in_channels: int = 48
    widths: tuple[int, int, int] = (32, 48, 64)
    cond_dim: int = 64
    num_tokens: int = 16
    t_embed_dim: int = 32
    conditioning_mode: str = "visual"
    sr_timestep: int = 0
    seed: int = 0
    dtype: str = "float32"

    def __post_init__(self):
        if self.conditioning_mode not in CONDITIONING_MODES:
            raise ConfigurationError(f"unknown conditioning mode {self.conditioning_mode!r}")
        if len(self.widths) != 3:
            raise ConfigurationError("denoiser uses exactly 3 levels")

    def torch_dtype(self):
        return {"float32": torch.float32, "float64": torch.float64}[self.dtype]

    def to_dict(self) -> dict:
        return {
            "in_channels": self.in_channels,
            "widths": list(self.widths),
            "cond_dim": self.cond_dim,
            "num_tokens": self.num_tokens,
            "t_embed_dim": self.t_embed_dim,
            "conditioning_mode": self.conditioning_mode,
            "sr_timestep": self.sr_timestep,
            "seed": self.seed,
            "dtype": self.dtype,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DenoiserConfig":
        return cls(
            in_channels=int(d["in_channels"]),
            widths=tuple(d["widths"]),
            cond_dim=int(d["cond_dim"]),
            num_tokens=int(d["num_tokens"]),
            t_embed_dim=int(d["t_embed_dim"]),
            conditioning_mode=d["conditioning_mode"],
            sr_timestep=int(d["sr_timestep"]),
            seed=int(d["seed"]),
            dtype=d.get("dtype", "float32"),
        )


def _timestep_embedding(t: torch.Tensor, dim: int, dtype) -> torch.Tensor:
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=dtype) / half)
    args = t.to(dtype)[:, None] * freqs[None, :]
    return torch.cat([torch.sin(args), torch.cos(args)], dim=-1)


class Denoiser:
    """Encoder-bottleneck-decoder epsilon predictor with LoRA-adaptable layers."""

    def __init__(self, config: DenoiserConfig):
        self.config = config
        self.base_frozen = False
        self.lora_sets: dict[str, LoRAParamSet] = {}
        dtype = config.torch_dtype()
        g = torch.Generator().manual_seed(config.seed)
        w0, w1, w2 = config.widths
        cin, td, cd = config.in_channels, config.t_embed_dim, config.cond_dim

        self._norms: dict[str, tuple[torch.Tensor, torch.Tensor]] = {}
        self._attn: dict[str, torch.Tensor] = {}
        self.registry: dict[str, AdaptedLayer] = {}

        def conv(name, ci, co, stride=1):
            k = torch.empty(co, ci, 3, 3, dtype=dtype).normal_(0.0, (ci * 9) ** -0.5, generator=g)
            self.registry[name] = AdaptedLayer(name, "conv", k, torch.zeros(co, dtype=dtype), stride=stride, padding=1)

        def linear(name, ci, co):
            k = torch.empty(co, ci, dtype=dtype).normal_(0.0, ci**-0.5, generator=g)
            self.registry[name] = AdaptedLayer(name, "linear", k, torch.zeros(co, dtype=dtype))

        def norm(name, c):
            self._norms[name] = (torch.ones(c, dtype=dtype), torch.zeros(c, dtype=dtype))

        linear("temb.fc1", td, td)
        linear("temb.fc2", td, td)
        conv("stem", cin, w0)
        for tag, c in (("enc0", w0), ("enc1", w1), ("mid1", w2), ("mid2", w2), ("dec1", w1), ("dec0", w0)):
            norm(f"{tag}.gn1", c)
            conv(f"{tag}.conv1", c, c)
            linear(f"{tag}.temb", td, c)
            norm(f"{tag}.gn2", c)
            conv(f"{tag}.conv2", c, c)
        conv("down0", w0, w1, stride=2)
        conv("down1", w1, w2, stride=2)
        conv("up1", w2, w1)
        conv("up0", w1, w0)
        norm("attn.gn", w2)
        norm("out.gn", w0)
        conv("out", w0, cin)

        def attn_mat(name, ci, co):
            self._attn[name] = torch.empty(ci, co, dtype=dtype).normal_(0.0, ci**-0.5, generator=g)

        attn_mat("attn.wq", w2, w2)
        attn_mat("attn.wk", cd, w2)
        attn_mat("attn.wv", cd, w2)
        attn_mat("attn.wo", w2, w2)
        self._attn["attn.ln.g"] = torch.ones(cd, dtype=dtype)
        self._attn["attn.ln.b"] = torch.zeros(cd, dtype=dtype)

        self.cond_tensor = None
        if config.conditioning_mode == "learnable_tensor":
            self.cond_tensor = torch.zeros(config.num_tokens, cd, dtype=dtype)

    # --- parameter bookkeeping -------------------------------------------

    def base_tensors(self) -> dict[str, torch.Tensor]:
        out = {}
        for name in sorted(self.registry):
            out[f"base.{name}.weight"] = self.registry[name].weight
            out[f"base.{name}.bias"] = self.registry[name].bias
        for name in sorted(self._norms):
            gamma, beta = self._norms[name]
            out[f"base.{name}.g"] = gamma
            out[f"base.{name}.b"] = beta
        for name in sorted(self._attn):
            out[f"base.{name}"] = self._attn[name]
        return out

    def conditioning_tensors(self) -> dict[str, torch.Tensor]:
        if self.cond_tensor is None:
            return {}
        return {"cond_tensor": self.cond_tensor}

    def set_base_trainable(self, flag: bool) -> None:
        for t in self.base_tensors().values():
            t.requires_grad_(flag)

    def freeze_base(self) -> None:
        self.set_base_trainable(False)
        self.base_frozen = True

    def layer_manifest(self) -> dict[str, list[int]]:
        return {name: list(t.shape) for name, t in self.base_tensors().items()}

    # --- LoRA ---------------------------------------------------------------

    def inject_lora(self, name: str, rank: int = 4, targets=None, seed: int | None = None) -> LoRAParamSet:
        """Register a zero-initialized-B adapter set over conv/MLP targets."""
        if name in self.lora_sets:
            raise ConfigurationError(f"adapter set {name!r} already injected")
        if name not in LORA_SET_NAMES:
            raise ConfigurationError(f"adapter set name must be one of {LORA_SET_NAMES}, got {name!r}")
        if rank < 1:
            raise ConfigurationError(f"rank must be >= 1, got {rank}")
        targets = list(self.registry) if targets is None else list(targets)
        for t in targets:
            if t not in self.registry:
                raise ConfigurationError(f"unknown adapter target {t!r}")
        dtype = self.config.torch_dtype()
        g = torch.Generator().manual_seed(self.config.seed + 7919 * (1 + LORA_SET_NAMES.index(name)) if seed is None else seed)
        pairs = {}
        for t in sorted(targets):
            layer = self.registry[t]
            a = torch.empty(rank, layer.flat_in, dtype=dtype).normal_(0.0, layer.flat_in**-0.5, generator=g)
            b = torch.zeros(layer.out_features, rank, dtype=dtype)
            pairs[t] = (a, b)
        ps = LoRAParamSet(name=name, rank=rank, scaling=1.0 / rank, pairs=pairs)
        self.lora_sets[name] = ps
        return ps

    def _deltas_for(self, layer_name: str, act: LoRAActivation):
        deltas = []
        for set_name in LORA_SET_NAMES:
            if getattr(act, set_name) and set_name in self.lora_sets:
                ps = self.lora_sets[set_name]
                if layer_name in ps.pairs:
                    a, b = ps.pairs[layer_name]
                    deltas.append((ps.scaling, a, b))
        return deltas

    # --- trainability schedule ----------------------------------------------

    def set_stage_trainability(self, stage: int, adapter=None) -> None:
        """Stage 0: base only. 1: pix + conditioning. 2: sem + conditioning. 3: gram only."""
        if stage not in (0, 1, 2, 3):
            raise ConfigurationError(f"unknown stage {stage}")
        if stage >= 1:
            for name in LORA_SET_NAMES:
                if name not in self.lora_sets:
                    raise ConfigurationError(f"stage {stage} requires adapter set {name!r} to be injected")
        self.set_base_trainable(stage == 0)
        for name, ps in self.lora_sets.items():
            ps.set_trainable((stage == 1 and name == "pix") or (stage == 2 and name == "sem") or (stage == 3 and name == "gram"))
        cond_trainable = stage in (1, 2)
        if adapter is not None:
            adapter.set_trainable(cond_trainable)
        if self.cond_tensor is not None:
            self.cond_tensor.requires_grad_(cond_trainable)

    # --- forward --------------------------------------------------------------

    def _norm(self, name: str, x: torch.Tensor) -> torch.Tensor:
        gamma, beta = self._norms[name]
        groups = 4 if x.shape[1] % 4 == 0 else 1
        return F.group_norm(x, groups, gamma, beta)

    def _resblock(self, tag: str, x: torch.Tensor, temb: torch.Tensor, act: LoRAActivation) -> torch.Tensor:
        reg = self.registry
        h = reg[f"{tag}.conv1"].forward(F.silu(self._norm(f"{tag}.gn1", x)), self._deltas_for(f"{tag}.conv1", act))
        h = h + reg[f"{tag}.temb"].forward(temb, self._deltas_for(f"{tag}.temb", act))[:, :, None, None]
        h = reg[f"{tag}.conv2"].forward(F.silu(self._norm(f"{tag}.gn2", h)), self._deltas_for(f"{tag}.conv2", act))
        return x + h

    def _cross_attention(self, m: torch.Tensor, tokens: torch.Tensor) -> torch.Tensor:
        b, c, h, w = m.shape
        cells = self._norm("attn.gn", m).reshape(b, c, h * w).transpose(1, 2)
        tok = F.layer_norm(tokens, (tokens.shape[-1],), self._attn["attn.ln.g"], self._attn["attn.ln.b"])
        q = cells @ self._attn["attn.wq"]
        k = tok @ self._attn["attn.wk"]
        v = tok @ self._attn["attn.wv"]
        att = torch.softmax(q @ k.transpose(-2, -1) / math.sqrt(q.shape[-1]), dim=-1)
        out = (att @ v) @ self._attn["attn.wo"]
        return m + out.transpose(1, 2).reshape(b, c, h, w)

    def _tokens(self, cond, batch: int, dtype) -> torch.Tensor:
        cfg = self.config
        if cfg.conditioning_mode == "fixed_tensor":
            return torch.zeros(batch, cfg.num_tokens, cfg.cond_dim, dtype=dtype)
        if cfg.conditioning_mode == "learnable_tensor":
            return self.cond_tensor[None].expand(batch, -1, -1).to(dtype)
        if cond is None:
            return torch.zeros(batch, cfg.num_tokens, cfg.cond_dim, dtype=dtype)
        t = torch.from_numpy(np.ascontiguousarray(cond)) if isinstance(cond, np.ndarray) else cond
        if t.ndim == 2:
            t = t[None]
        if t.shape[-1] != cfg.cond_dim:
            raise ShapeError(f"conditioning dim {t.shape[-1]} != {cfg.cond_dim}")
        if t.shape[-2] != cfg.num_tokens:
            raise ShapeError(f"conditioning rows {t.shape[-2]} != expected {cfg.num_tokens}")
        if t.shape[0] == 1 and batch > 1:
            t = t.expand(batch, -1, -1)
        return t.to(dtype)

    def predict(self, z, cond=None, act=None, t=None):
        """One forward pass; returns epsilon with the same shape and kind as z.

        act: LoRAActivation (or iterable of set names); None uses each
        injected set's own `active` flag. t: per-sample timestep indices for
        the teacher pathway; None uses the fixed single-step SR timestep.
        """
        activation = self._resolve_activation(act)
        is_numpy = isinstance(z, np.ndarray)
        zt = torch.from_numpy(np.ascontiguousarray(z)) if is_numpy else z
        squeeze = zt.ndim == 3
        if squeeze:
            zt = zt[None]
        if zt.ndim != 4:
            raise ShapeError(f"latent must be (H', W', C') or batched, got {tuple(zt.shape)}")
        if zt.shape[-1] != self.config.in_channels:
            raise ShapeError(f"latent channels {zt.shape[-1]} != {self.config.in_channels}")
        if zt.shape[1] % 4 or zt.shape[2] % 4:
            raise ShapeError(f"latent spatial dims {tuple(zt.shape[1:3])} must be divisible by 4")
        dtype = self.config.torch_dtype()
        x = zt.to(dtype).permute(0, 3, 1, 2)
        batch = x.shape[0]

        if t is None:
            t = torch.full((batch,), self.config.sr_timestep, dtype=torch.long)
        elif not isinstance(t, torch.Tensor):
            t = torch.full((batch,), int(t), dtype=torch.long)
        temb = _timestep_embedding(t, self.config.t_embed_dim, dtype)
        reg = self.registry
        temb = reg["temb.fc2"].forward(F.silu(reg["temb.fc1"].forward(temb, self._deltas_for("temb.fc1", activation))), self._deltas_for("temb.fc2", activation))

        tokens = self._tokens(cond, batch, dtype)

        d0 = reg["stem"].forward(x, self._deltas_for("stem", activation))
        d0 = self._resblock("enc0", d0, temb, activation)
        d1 = reg["down0"].forward(d0, self._deltas_for("down0", activation))
        d1 = self._resblock("enc1", d1, temb, activation)
        m = reg["down1"].forward(d1, self._deltas_for("down1", activation))
        m = self._resblock("mid1", m, temb, activation)
        m = self._cross_attention(m, tokens)
        m = self._resblock("mid2", m, temb, activation)
        u1 = reg["up1"].forward(F.interpolate(m, scale_factor=2, mode="nearest"), self._deltas_for("up1", activation))
        u1 = self._resblock("dec1", u1 + d1, temb, activation)
        u0 = reg["up0"].forward(F.interpolate(u1, scale_factor=2, mode="nearest"), self._deltas_for("up0", activation))
        u0 = self._resblock("dec0", u0 + d0, temb, activation)
        eps = reg["out"].forward(F.silu(self._norm("out.gn", u0)), self._deltas_for("out", activation))

        eps = eps.permute(0, 2, 3, 1)
        if squeeze:
            eps = eps[0]
        return eps.detach().numpy() if is_numpy else eps

    def _resolve_activation(self, act) -> LoRAActivation:
        if act is None:
            return LoRAActivation(**{n: ps.active for n, ps in self.lora_sets.items() if ps.active})
        return _coerce_activation(act)
