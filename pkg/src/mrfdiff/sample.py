"""Patch-tiled reverse diffusion with overlap averaging, sample averaging and uncertainty."""

from dataclasses import dataclass

import numpy as np
import torch

from .diffusion import linear_schedule, p_step, spaced_timesteps
from .train import denormalize, normalize


@dataclass(frozen=True)
class TilePlan:
    p: int
    stride: int
    offsets: tuple  # ((row, col), ...)
    counts: np.ndarray  # per-pixel patch coverage M


def _axis_offsets(n, p, stride):
    offs = list(range(0, n - p + 1, stride))
    if offs[-1] != n - p:
        offs.append(n - p)
    return offs


def plan_tiles(height, width, p, stride):
    """Offsets at multiples of ``stride`` with the last patch snapped to the border."""
    if not p <= min(height, width):
        raise ValueError(f"patch {p} larger than image {height}x{width}")
    if not 1 <= stride <= p:
        raise ValueError(f"stride must lie in [1, {p}]")
    offsets = tuple((i, j) for i in _axis_offsets(height, p, stride) for j in _axis_offsets(width, p, stride))
    counts = np.zeros((height, width))
    for i, j in offsets:
        counts[i:i + p, j:j + p] += 1
    return TilePlan(p, stride, offsets, counts)


class NetworkDenoiser:
    """Wraps a checkpoint's (EMA) network as a numpy callable."""

    def __init__(self, ckpt, use_ema=True, batch=64):
        self.net = ckpt.model(use_ema)
        self.schedule = linear_schedule(ckpt.schedule["T"], ckpt.schedule["beta_start"], ckpt.schedule["beta_end"])
        self.norm = tuple(ckpt.norm)
        self.learn_sigma = ckpt.extra.get("learn_sigma", True)
        self.predict = ckpt.extra.get("predict", "eps")
        w = ckpt.extra.get("channel_weights")
        self.channel_weights = None if w is None else np.asarray(w, dtype=float)
        self.batch = batch

    @torch.no_grad()
    def __call__(self, x_t, x_c, t):
        outs_e, outs_v = [], []
        for a in range(0, x_t.shape[0], self.batch):
            xt = torch.as_tensor(x_t[a:a + self.batch], dtype=torch.float32)
            xc = torch.as_tensor(x_c[a:a + self.batch], dtype=torch.float32)
            e, v = self.net(xt, xc, torch.tensor([t]))
            outs_e.append(e.double().numpy())
            outs_v.append(v.double().numpy())
        out = np.concatenate(outs_e)
        if self.predict == "x0":
            ab = self.schedule.alpha_bar[t - 1]
            out = (x_t - np.sqrt(ab) * out) / np.sqrt(1 - ab)
        return out, np.concatenate(outs_v)


class OracleDenoiser:
    """Test double: treats the condition as the clean image and returns the exact noise."""

    learn_sigma = True

    def __init__(self, schedule, norm=(1.0, 1.0)):
        self.schedule = schedule
        self.norm = norm

    def __call__(self, x_t, x_c, t):
        ab = self.schedule.alpha_bar[t - 1]
        return (x_t - np.sqrt(ab) * x_c) / np.sqrt(1 - ab), np.zeros_like(x_t)


def sample_channels(x_c, denoiser, K, plan, seed, sample_index=0, clip=1.0):
    """Algorithm-level sampler on normalized real channels (C, H, W).

    ``clip`` bounds the per-step x0 estimate to the normalized data range; None
    runs the plain epsilon-form chain.
    """
    sched = denoiser.schedule
    pairs = spaced_timesteps(sched.T, K)
    c, h, w = x_c.shape
    if plan.counts.shape != (h, w):
        raise ValueError("tile plan does not match the image size")
    p = plan.p
    x_T = np.random.default_rng([seed, sample_index]).standard_normal(x_c.shape)
    offs = plan.offsets
    xs = np.stack([x_T[:, i:i + p, j:j + p] for i, j in offs])
    conds = np.stack([x_c[:, i:i + p, j:j + p] for i, j in offs])
    rngs = [np.random.default_rng([seed, sample_index, i, j]) for i, j in offs]
    for t, t_next in pairs:
        eps, v = denoiser(xs, conds, t)
        if t_next > 0:
            z = np.stack([r.standard_normal((c, p, p)) for r in rngs])
        else:
            z = np.zeros_like(xs)
        xs = p_step(xs, eps, v, t, t_next, z, sched, getattr(denoiser, "learn_sigma", True), clip)
    acc = np.zeros_like(x_c, dtype=np.float64)
    for (i, j), patch in zip(offs, xs):
        acc[:, i:i + p, j:j + p] += patch
    return acc / plan.counts


def reconstruct(x_c, denoiser, K, plan, seed=0, sample_index=0):
    """Restore a complex (H, W, s) gridding image; normalization uses the denoiser's constants."""
    c_cond, c_ref = denoiser.norm
    w = getattr(denoiser, "channel_weights", None)
    w = np.ones(x_c.shape[-1]) if w is None else w
    out = sample_channels(normalize(x_c * w, c_cond), denoiser, K, plan, seed, sample_index)
    return denormalize(out, c_ref) / w


@dataclass
class ReconResult:
    x_hat: np.ndarray
    stack: np.ndarray
    sample_count: int


def reconstruct_many(x_c, denoiser, K, plan, n_samples=10, seed=0, keep_stack=True):
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    stack = np.stack([reconstruct(x_c, denoiser, K, plan, seed, j) for j in range(n_samples)])
    return ReconResult(stack.mean(axis=0), stack if keep_stack else None, n_samples)


def uncertainty(stack):
    """Unbiased per-pixel standard deviation over the leading sample axis (complex: over both parts)."""
    stack = np.asarray(stack)
    if stack.shape[0] < 2:
        raise ValueError("need at least two samples")
    if np.iscomplexobj(stack):
        return np.sqrt(np.var(stack.real, axis=0, ddof=1) + np.var(stack.imag, axis=0, ddof=1))
    return np.std(stack, axis=0, ddof=1)
