"""Patch-based conditional diffusion training."""

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np
import torch

from .diffusion import hybrid_loss, linear_schedule
from .neural import (AdamState, DenoiserConfig, adam_step, backward, build_denoiser, denoiser_forward,
                     ema_update, make_checkpoint, named_params, save_checkpoint)

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    T: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.02
    patch_size: int = 64
    batch_size: int = 8
    accumulation_steps: int = 1
    iterations: int = 5000
    lr: float = 1e-4
    dropout: float = 0.3
    ema_rate: float = 0.9999
    ema_warmup: bool = True
    lam: float = 1e-3
    learn_sigma: bool = True
    predict: str = "eps"  # network output: noise ("eps") or clean image ("x0")
    channel_weighting: bool = False  # equalize subspace-channel RMS before the global normalization
    seed: int = 0
    target_length_mode: str = "same-l"
    checkpoint_every: int = 0
    net: DenoiserConfig = field(default_factory=DenoiserConfig)

    def validate(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.patch_size % (2 ** self.net.depth):
            raise ValueError(f"patch size {self.patch_size} not divisible by 2^depth")
        if self.target_length_mode not in ("same-l", "long-l"):
            raise ValueError(f"unknown target_length_mode {self.target_length_mode!r}")
        if self.predict not in ("eps", "x0"):
            raise ValueError(f"predict must be 'eps' or 'x0', got {self.predict!r}")
        if self.batch_size < 1 or self.accumulation_steps < 1:
            raise ValueError("batch size and accumulation steps must be >= 1")


@dataclass
class TrainPair:
    x_c: np.ndarray  # (2s, H, W) normalized real channels
    x_0: np.ndarray
    head_mask: np.ndarray = None


def to_channels(x):
    """Complex (H, W, s) -> real (2s, H, W): real parts then imaginary parts."""
    x = np.moveaxis(np.asarray(x), -1, 0)
    return np.concatenate([x.real, x.imag], axis=0)


def from_channels(c):
    s = c.shape[0] // 2
    return np.moveaxis(c[:s] + 1j * c[s:], 0, -1)


def _round_up_2sig(v):
    e = math.floor(math.log10(v)) - 1
    q = round(v / 10.0 ** e, 9)
    return math.ceil(q) * 10.0 ** e


def norm_constant(images, q=99.9):
    """Percentile of |real/imag components| over a set of complex images, rounded up to 2 significant figures."""
    if len(images) == 0:
        raise ValueError("empty dataset")
    comps = np.concatenate([np.abs(to_channels(x)).ravel() for x in images])
    v = float(np.percentile(comps, q))
    if not v > 0:
        raise ValueError("degenerate dataset: percentile of component magnitudes is zero")
    return _round_up_2sig(v)


def compute_norm_constants(cond_images, ref_images, q=99.9):
    return norm_constant(cond_images, q), norm_constant(ref_images, q)


def channel_weights(ref_images, masks=None):
    """Per-subspace-channel gains 1 / RMS over the (masked) references, scaled so the first is 1."""
    if len(ref_images) == 0:
        raise ValueError("empty dataset")
    masks = masks if masks is not None else [None] * len(ref_images)
    power = []
    for x, m in zip(ref_images, masks):
        v = np.asarray(x)[m] if m is not None else np.asarray(x).reshape(-1, x.shape[-1])
        power.append(np.mean(np.abs(v) ** 2, axis=0))
    rms = np.sqrt(np.mean(power, axis=0))
    if not np.all(rms > 0):
        raise ValueError("degenerate dataset: a subspace channel is identically zero")
    return rms[0] / rms


def normalize(x, c):
    """Complex image -> real channels divided by c and clamped to [-1, 1]."""
    return np.clip(to_channels(x) / c, -1.0, 1.0)


def denormalize(ch, c):
    return from_channels(np.asarray(ch) * c)


def random_patch(x, p, rng):
    """Uniformly placed p x p crop of a (C, H, W) image; returns ((row, col), crop)."""
    h, w = x.shape[-2:]
    if p > h or p > w:
        raise ValueError(f"patch {p} larger than image {h}x{w}")
    i = int(rng.integers(0, h - p + 1))
    j = int(rng.integers(0, w - p + 1))
    return (i, j), x[..., i:i + p, j:j + p]


def uncrop(patch, offset, shape):
    out = np.zeros(shape, dtype=patch.dtype)
    i, j = offset
    p = patch.shape[-1]
    out[..., i:i + p, j:j + p] = patch
    return out


def augment(pair, rng):
    """Random horizontal and vertical flips, applied identically to both images."""
    x_c, x_0, m = pair.x_c, pair.x_0, pair.head_mask
    for axis in (-1, -2):
        if rng.random() < 0.5:
            x_c, x_0 = np.flip(x_c, axis), np.flip(x_0, axis)
            m = None if m is None else np.flip(m, axis)
    return TrainPair(np.ascontiguousarray(x_c), np.ascontiguousarray(x_0), m)


def _batch(pairs, cfg, rng):
    xc, x0 = [], []
    for _ in range(cfg.batch_size):
        pair = pairs[int(rng.integers(len(pairs)))]
        (i, j), _ = random_patch(pair.x_c, cfg.patch_size, rng)
        p = cfg.patch_size
        crop = TrainPair(pair.x_c[:, i:i + p, j:j + p], pair.x_0[:, i:i + p, j:j + p])
        crop = augment(crop, rng)
        xc.append(crop.x_c)
        x0.append(crop.x_0)
    return np.stack(xc), np.stack(x0)


def _extra(cfg, weights=None):
    extra = {"target_length_mode": cfg.target_length_mode, "learn_sigma": cfg.learn_sigma, "predict": cfg.predict}
    if weights is not None:
        extra["channel_weights"] = [float(w) for w in weights]
    return extra


def train_loop(pairs, cfg, norm=(1.0, 1.0), out_dir=None, log_path=None, debug=False, weights=None):
    """Train the conditional denoiser on (x_c, x_0) pairs; returns a Checkpoint.

    Each iteration: random patches, flips, t ~ U{1..T}, eps ~ N(0, I), x_t from the
    closed-form forward process, hybrid loss, ADAM step, EMA update.
    """
    cfg.validate()
    if not pairs:
        raise ValueError("need at least one training pair")
    cfg.net.dropout = cfg.dropout
    sched = linear_schedule(cfg.T, cfg.beta_start, cfg.beta_end)
    model = build_denoiser(cfg.net, seed=cfg.seed)
    params = named_params(model)
    shadow = {k: v.detach().clone() for k, v in params.items()}
    state = AdamState()
    rng = np.random.default_rng([cfg.seed, 1])
    gen = torch.Generator().manual_seed(cfg.seed + 7)
    trace = []
    debug_triples = []
    writer = None
    fh = None
    if log_path:
        fh = open(log_path, "w", newline="")
        writer = csv.writer(fh)
        writer.writerow(["iteration", "l_eps", "l_sigma", "total"])
    try:
        for it in range(1, cfg.iterations + 1):
            grads = None
            rec = np.zeros(3)
            for _ in range(cfg.accumulation_steps):
                xc, x0 = _batch(pairs, cfg, rng)
                t = rng.integers(1, cfg.T + 1, size=cfg.batch_size)
                eps = rng.standard_normal(x0.shape)
                ab = sched.alpha_bar[t - 1][:, None, None, None]
                xt = np.sqrt(ab) * x0 + np.sqrt(1 - ab) * eps
                if debug:
                    debug_triples.append((x0, t, eps, xt))
                f = lambda a: torch.as_tensor(a, dtype=torch.float32)
                out, v_hat = denoiser_forward(model, f(xt), f(xc), torch.as_tensor(t), True, gen)
                if cfg.predict == "x0":
                    # x0 regression loss; the variance term sees the implied noise estimate
                    eps_hat = (f(xt) - f(np.sqrt(ab)) * out) / f(np.sqrt(1 - ab))
                    _, _, l_sig = hybrid_loss(f(eps), eps_hat, v_hat, f(x0), f(xt), t, cfg.lam, sched,
                                              cfg.learn_sigma)
                    l_eps = torch.mean((out - f(x0)) ** 2)
                    total = l_eps + cfg.lam * l_sig if cfg.learn_sigma else l_eps
                else:
                    total, l_eps, l_sig = hybrid_loss(f(eps), out, v_hat, f(x0), f(xt), t, cfg.lam, sched,
                                                      cfg.learn_sigma)
                g = backward(total / cfg.accumulation_steps, params)
                grads = g if grads is None else {k: grads[k] + g[k] for k in g}
                rec += np.array([l_eps.item(), l_sig.item(), total.item()]) / cfg.accumulation_steps
            adam_step(params, grads, state, lr=cfg.lr)
            rate = min(cfg.ema_rate, (1 + it) / (10 + it)) if cfg.ema_warmup else cfg.ema_rate
            ema_update(shadow, params, rate)
            trace.append(rec)
            if writer:
                writer.writerow([it] + [f"{v:.9g}" for v in rec])
            if it % 500 == 0:
                log.info("iter %d  loss %.5f (eps %.5f, sigma %.5f)", it, rec[2], rec[0], rec[1])
            if out_dir and cfg.checkpoint_every and it % cfg.checkpoint_every == 0 and it < cfg.iterations:
                save_checkpoint(out_dir, make_checkpoint(model, shadow, sched, norm, it, cfg.seed,
                                                         _extra(cfg, weights)))
    finally:
        if fh:
            fh.close()
    ckpt = make_checkpoint(model, shadow, sched, norm, cfg.iterations, cfg.seed, _extra(cfg, weights))
    ckpt.loss_trace = np.array(trace)
    if debug:
        ckpt.debug_triples = debug_triples
    if out_dir:
        save_checkpoint(out_dir, ckpt)
    return ckpt
