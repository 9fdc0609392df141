"""Central-difference directional derivative checks against reverse-mode gradients."""

import numpy as np
import torch
from torch import nn

from mrfdiff.neural import AttentionBlock, Downsample, ResBlock, Upsample, backward, named_params, timestep_embedding


def directional_check(fn, params, n_dirs=3, h=1e-6, seed=0):
    """Max relative error between grad . d and (f(p + h d) - f(p - h d)) / 2h over random directions."""
    g = backward(fn(), params)
    gen = torch.Generator().manual_seed(seed)
    worst = 0.0
    for _ in range(n_dirs):
        d = {k: torch.randn(p.shape, generator=gen, dtype=p.dtype) for k, p in params.items()}
        analytic = sum(float(torch.sum(g[k] * d[k])) for k in params)
        with torch.no_grad():
            for k, p in params.items():
                p.add_(h * d[k])
            fp = float(fn())
            for k, p in params.items():
                p.sub_(2 * h * d[k])
            fm = float(fn())
            for k, p in params.items():
                p.add_(h * d[k])
        fd = (fp - fm) / (2 * h)
        worst = max(worst, abs(fd - analytic) / max(abs(analytic), 1e-8))
    return worst


def randomize(module, scale=0.2, seed=0):
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for p in module.parameters():
            p.copy_(scale * torch.randn(p.shape, generator=gen, dtype=p.dtype))
    return module


def probe(shape, seed=1):
    return torch.as_tensor(np.random.default_rng(seed).standard_normal(shape))


LAYER_CASES = ("conv", "linear", "groupnorm", "silu_conv", "resblock", "resblock_scale_shift", "resblock_dropout",
               "attention", "downsample", "upsample", "time_mlp")


def layer_gradient_error(name, dtype=torch.float64):
    """Worst directional-derivative error for one layer type, inputs included as parameters."""
    torch.manual_seed(0)
    ed = 8
    x = probe((2, 8, 4, 4)).requires_grad_(True)
    emb = probe((2, ed), seed=2).requires_grad_(True)
    gen_seed = None
    if name == "conv":
        mod, inputs = nn.Conv2d(8, 8, 3, padding=1), (x,)
    elif name == "linear":
        mod, inputs = nn.Linear(ed, 6), (emb,)
    elif name == "groupnorm":
        mod, inputs = nn.GroupNorm(4, 8), (x,)
    elif name == "silu_conv":
        mod, inputs = nn.Sequential(nn.SiLU(), nn.Conv2d(8, 8, 1)), (x,)
    elif name == "resblock":
        mod, inputs = ResBlock(8, 16, ed, 0.0, 4), (x, emb)
    elif name == "resblock_scale_shift":
        mod, inputs = ResBlock(8, 16, ed, 0.0, 4, scale_shift=True), (x, emb)
    elif name == "resblock_dropout":
        mod, inputs, gen_seed = ResBlock(8, 8, ed, 0.3, 4).train(), (x, emb), 5
    elif name == "attention":
        mod, inputs = AttentionBlock(8, 4), (x,)
    elif name == "downsample":
        mod, inputs = Downsample(8), (x,)
    elif name == "upsample":
        mod, inputs = Upsample(8), (x,)
    elif name == "time_mlp":
        mod = nn.Sequential(nn.Linear(4, ed), nn.SiLU(), nn.Linear(ed, ed))
        inputs = (timestep_embedding(torch.tensor([3, 700]), 4).requires_grad_(True),)
    else:
        raise ValueError(name)
    mod = randomize(mod.to(dtype))

    def run():
        if gen_seed is None:
            return mod(*inputs)
        return mod(*inputs, torch.Generator().manual_seed(gen_seed))

    weight = probe(run().shape, seed=9)
    params = dict(named_params(mod))
    for i, t in enumerate(inputs):
        params[f"input{i}"] = t
    return directional_check(lambda: torch.sum(run() * weight), params)
