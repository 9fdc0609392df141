"""Conditional U-Net denoiser, gradient plumbing, ADAM and EMA.

Reverse-mode differentiation is delegated to torch autograd; the optimizer,
parameter averaging and dropout mask streams are implemented here so that every
step is reproducible from an explicit seed.
"""

import json
import math
import os
from dataclasses import dataclass, field, asdict

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
from torch.func import functional_call

from .tensorio import read_tensor, write_tensor


@dataclass
class DenoiserConfig:
    s: int = 5  # complex subspace channels; the net sees 2s real channels per input
    base_channels: int = 16
    depth: int = 3
    channel_mult: tuple = (1, 2, 2, 2)
    res_blocks: int = 1
    attention_levels: tuple = (3,)
    dropout: float = 0.3
    groups: int = 8
    scale_shift: bool = False  # FiLM-style time conditioning inside ResBlocks

    def __post_init__(self):
        self.channel_mult = tuple(self.channel_mult)
        self.attention_levels = tuple(self.attention_levels)
        if self.depth < 1:
            raise ValueError("depth must be >= 1")
        if len(self.channel_mult) != self.depth + 1:
            raise ValueError(f"channel_mult needs depth + 1 = {self.depth + 1} entries")
        for m in self.channel_mult:
            if (self.base_channels * m) % self.groups:
                raise ValueError("channel counts must be divisible by the group-norm group count")

    @property
    def data_channels(self):
        return 2 * self.s

    @property
    def in_channels(self):
        return 4 * self.s

    @property
    def time_embed_dim(self):
        return 4 * self.base_channels

    @classmethod
    def full_size(cls, s=5):
        """Full-size network: four down/up levels from 128 channels, attention at 16x16 for 64x64 patches."""
        return cls(s=s, base_channels=128, depth=4, channel_mult=(1, 1, 2, 3, 4), res_blocks=2,
                   attention_levels=(2,), dropout=0.3, groups=32)


def timestep_embedding(t, dim, max_period=10000.0):
    """Sinusoidal embedding of (possibly fractional) timesteps, shape (B, dim)."""
    half = dim // 2
    freqs = torch.exp(-math.log(max_period) * torch.arange(half, dtype=torch.float64) / half)
    args = t.to(torch.float64)[:, None] * freqs[None]
    emb = torch.cat([torch.cos(args), torch.sin(args)], dim=1)
    if dim % 2:
        emb = torch.cat([emb, torch.zeros_like(emb[:, :1])], dim=1)
    return emb


def dropout(x, p, generator, training):
    if not training or p == 0:
        return x
    keep = torch.rand(x.shape, generator=generator, dtype=x.dtype) >= p
    return x * keep / (1.0 - p)


class ResBlock(nn.Module):
    def __init__(self, cin, cout, emb_dim, p_drop, groups, scale_shift=False):
        super().__init__()
        self.norm1 = nn.GroupNorm(groups, cin)
        self.conv1 = nn.Conv2d(cin, cout, 3, padding=1)
        self.emb = nn.Linear(emb_dim, 2 * cout if scale_shift else cout)
        self.norm2 = nn.GroupNorm(groups, cout)
        self.conv2 = nn.Conv2d(cout, cout, 3, padding=1)
        self.skip = nn.Conv2d(cin, cout, 1) if cin != cout else nn.Identity()
        self.p_drop = p_drop
        self.scale_shift = scale_shift

    def forward(self, x, emb, gen=None):
        h = self.conv1(F.silu(self.norm1(x)))
        e = self.emb(F.silu(emb))[:, :, None, None]
        if self.scale_shift:
            scale, shift = e.chunk(2, dim=1)
            h = self.norm2(h) * (1 + scale) + shift
        else:
            h = self.norm2(h + e)
        h = dropout(F.silu(h), self.p_drop, gen, self.training)
        return self.skip(x) + self.conv2(h)


class AttentionBlock(nn.Module):
    """Single-head scaled dot-product self-attention over spatial positions."""

    def __init__(self, ch, groups):
        super().__init__()
        self.norm = nn.GroupNorm(groups, ch)
        self.qkv = nn.Conv2d(ch, 3 * ch, 1)
        self.proj = nn.Conv2d(ch, ch, 1)

    def forward(self, x, emb=None, gen=None):
        b, c, h, w = x.shape
        q, k, v = self.qkv(self.norm(x)).reshape(b, 3, c, h * w).unbind(1)
        att = torch.softmax(torch.einsum("bci,bcj->bij", q, k) / math.sqrt(c), dim=-1)
        out = torch.einsum("bij,bcj->bci", att, v).reshape(b, c, h, w)
        return x + self.proj(out)


class Downsample(nn.Module):
    def __init__(self, ch):
        super().__init__()
        self.conv = nn.Conv2d(ch, ch, 3, stride=2, padding=1)

    def forward(self, x, emb=None, gen=None):
        return self.conv(x)


class Upsample(nn.Module):
    def __init__(self, ch):
        super().__init__()
        self.conv = nn.ConvTranspose2d(ch, ch, 4, stride=2, padding=1)

    def forward(self, x, emb=None, gen=None):
        return self.conv(x)


class Denoiser(nn.Module):
    """U-Net predicting noise and a variance interpolation coefficient.

    Input is the noisy patch and the condition patch concatenated on channels;
    output is (eps_hat, v_hat), each with 2s channels, v_hat squashed by a sigmoid.
    """

    def __init__(self, cfg):
        super().__init__()
        self.cfg = cfg
        b, ed, g = cfg.base_channels, cfg.time_embed_dim, cfg.groups
        self.time_mlp = nn.Sequential(nn.Linear(b, ed), nn.SiLU(), nn.Linear(ed, ed))
        self.conv_in = nn.Conv2d(cfg.in_channels, b, 3, padding=1)
        self.down = nn.ModuleList()
        skip_ch = [b]
        ch = b
        for lvl, mult in enumerate(cfg.channel_mult):
            for _ in range(cfg.res_blocks):
                blocks = [ResBlock(ch, b * mult, ed, cfg.dropout, g, cfg.scale_shift)]
                ch = b * mult
                if lvl in cfg.attention_levels:
                    blocks.append(AttentionBlock(ch, g))
                self.down.append(nn.ModuleList(blocks))
                skip_ch.append(ch)
            if lvl < cfg.depth:
                self.down.append(nn.ModuleList([Downsample(ch)]))
                skip_ch.append(ch)
        self.mid = nn.ModuleList([ResBlock(ch, ch, ed, cfg.dropout, g, cfg.scale_shift), AttentionBlock(ch, g),
                                  ResBlock(ch, ch, ed, cfg.dropout, g, cfg.scale_shift)])
        self.up = nn.ModuleList()
        for lvl, mult in reversed(list(enumerate(cfg.channel_mult))):
            for i in range(cfg.res_blocks + 1):
                blocks = [ResBlock(ch + skip_ch.pop(), b * mult, ed, cfg.dropout, g, cfg.scale_shift)]
                ch = b * mult
                if lvl in cfg.attention_levels:
                    blocks.append(AttentionBlock(ch, g))
                if lvl and i == cfg.res_blocks:
                    blocks.append(Upsample(ch))
                self.up.append(nn.ModuleList(blocks))
        self.norm_out = nn.GroupNorm(g, ch)
        self.conv_out = nn.Conv2d(ch, 2 * cfg.data_channels, 3, padding=1)
        nn.init.zeros_(self.conv_out.weight)
        nn.init.zeros_(self.conv_out.bias)

    def forward(self, x_t, x_c, t, gen=None):
        cfg = self.cfg
        if x_t.shape != x_c.shape or x_t.shape[1] != cfg.data_channels:
            raise ValueError(f"x_t {tuple(x_t.shape)} and x_c {tuple(x_c.shape)} need {cfg.data_channels} channels each")
        size = 2 ** cfg.depth
        if x_t.shape[-1] % size or x_t.shape[-2] % size:
            raise ValueError(f"patch size {tuple(x_t.shape[-2:])} not divisible by {size}")
        t = torch.as_tensor(t).reshape(-1).expand(x_t.shape[0])
        emb = self.time_mlp(timestep_embedding(t, cfg.base_channels).to(x_t.dtype))
        h = self.conv_in(torch.cat([x_t, x_c], dim=1))
        skips = [h]
        for blocks in self.down:
            for m in blocks:
                h = m(h, emb, gen)
            skips.append(h)
        for m in self.mid:
            h = m(h, emb, gen)
        for blocks in self.up:
            h = torch.cat([h, skips.pop()], dim=1)
            for m in blocks:
                h = m(h, emb, gen)
        out = self.conv_out(F.silu(self.norm_out(h)))
        c = cfg.data_channels
        return out[:, :c], torch.sigmoid(out[:, c:])


def build_denoiser(cfg, seed=0, dtype=torch.float32):
    torch.manual_seed(seed)
    return Denoiser(cfg).to(dtype)


def denoiser_forward(model, x_t, x_c, t, train_mode=False, generator=None, params=None):
    """Evaluate the network; ``params`` (name -> tensor) overrides the module's own weights."""
    model.train(train_mode)
    if params is None:
        return model(x_t, x_c, t, generator)
    return functional_call(model, params, (x_t, x_c, t, generator))


def backward(loss, params):
    """Gradients of a scalar loss for every named parameter (zeros where unused)."""
    if loss.numel() != 1:
        raise ValueError("backward needs a scalar loss")
    names = list(params)
    grads = torch.autograd.grad(loss.reshape(()), [params[n] for n in names], allow_unused=True)
    return {n: torch.zeros_like(params[n]) if g is None else g for n, g in zip(names, grads)}


@dataclass
class AdamState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


@torch.no_grad()
def adam_step(params, grads, state, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
    """In-place bias-corrected ADAM update of ``params`` (name -> tensor)."""
    state.step += 1
    bc1 = 1.0 - beta1 ** state.step
    bc2 = 1.0 - beta2 ** state.step
    for n, p in params.items():
        g = grads[n]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {tuple(g.shape)} != parameter {n} {tuple(p.shape)}")
        if n not in state.m:
            state.m[n] = torch.zeros_like(p)
            state.v[n] = torch.zeros_like(p)
        m, v = state.m[n], state.v[n]
        m.mul_(beta1).add_(g, alpha=1 - beta1)
        v.mul_(beta2).addcmul_(g, g, value=1 - beta2)
        p.sub_(lr * (m / bc1) / (torch.sqrt(v / bc2) + eps))
    return params, state


@torch.no_grad()
def ema_update(shadow, params, rate):
    """shadow <- rate * shadow + (1 - rate) * params, in place."""
    if not 0 <= rate < 1:
        raise ValueError("EMA rate must lie in [0, 1)")
    for n, p in params.items():
        s = shadow[n]
        if s.shape != p.shape:
            raise ValueError(f"shadow/parameter shape mismatch for {n}")
        s.mul_(rate).add_(p, alpha=1 - rate)
    return shadow


def named_params(model):
    return dict(model.named_parameters())


@dataclass
class Checkpoint:
    params: dict  # name -> float32 numpy array
    ema: dict
    config: DenoiserConfig
    schedule: dict  # T, beta_start, beta_end
    norm: tuple  # (c_cond, c_ref)
    iteration: int
    seed: int
    extra: dict = field(default_factory=dict)
    loss_trace: np.ndarray = None
    debug_triples: list = None

    def model(self, use_ema=True, dtype=torch.float32):
        net = Denoiser(self.config).to(dtype)
        src = self.ema if use_ema else self.params
        net.load_state_dict({k: torch.as_tensor(v, dtype=dtype) for k, v in src.items()})
        net.eval()
        return net


def make_checkpoint(model, shadow, schedule, norm, iteration, seed, extra=None):
    to_np = lambda d: {k: v.detach().cpu().numpy().astype(np.float32) for k, v in d.items()}
    return Checkpoint(to_np(named_params(model)), to_np(shadow), model.cfg, schedule.to_meta(),
                      tuple(float(c) for c in norm), int(iteration), int(seed), dict(extra or {}))


def save_checkpoint(directory, ckpt):
    os.makedirs(directory, exist_ok=True)
    for prefix, group in (("param", ckpt.params), ("ema", ckpt.ema)):
        for name, arr in group.items():
            write_tensor(os.path.join(directory, f"{prefix}__{name}.qmrf"), arr, kind=f"checkpoint_{prefix}", name=name)
    meta = {"config": asdict(ckpt.config), "schedule": ckpt.schedule, "norm": list(ckpt.norm),
            "iteration": ckpt.iteration, "seed": ckpt.seed, "extra": ckpt.extra,
            "names": sorted(ckpt.params)}
    with open(os.path.join(directory, "checkpoint.json"), "w") as f:
        json.dump(meta, f, indent=1, sort_keys=True)


def load_checkpoint(directory):
    path = os.path.join(directory, "checkpoint.json")
    if not os.path.exists(path):
        raise FileNotFoundError(f"no checkpoint at {directory}")
    with open(path) as f:
        meta = json.load(f)
    params = {n: read_tensor(os.path.join(directory, f"param__{n}.qmrf")) for n in meta["names"]}
    ema = {n: read_tensor(os.path.join(directory, f"ema__{n}.qmrf")) for n in meta["names"]}
    return Checkpoint(params, ema, DenoiserConfig(**meta["config"]), meta["schedule"], tuple(meta["norm"]),
                      meta["iteration"], meta["seed"], meta.get("extra", {}))
