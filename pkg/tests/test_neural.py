import numpy as np
import pytest
import torch

from gradcheck import LAYER_CASES, directional_check, layer_gradient_error, probe, randomize
from mrfdiff.diffusion import linear_schedule
from mrfdiff.neural import (AdamState, Denoiser, DenoiserConfig, adam_step, backward, build_denoiser, denoiser_forward,
                            dropout, ema_update, load_checkpoint, make_checkpoint, named_params, save_checkpoint,
                            timestep_embedding)

D = torch.float64


def _conv(ci, co, k):
    return ci * co * k * k + co


def _res(ci, co, ed):
    return 2 * ci + _conv(ci, co, 3) + ed * co + co + 2 * co + _conv(co, co, 3) + (_conv(ci, co, 1) if ci != co else 0)


def _attn(c):
    return 2 * c + _conv(c, 3 * c, 1) + _conv(c, c, 1)


def count_params(cfg):
    """Parameter count from the U-Net layout, written out independently of the module code."""
    b, ed = cfg.base_channels, 4 * cfg.base_channels
    total = b * ed + ed + ed * ed + ed + _conv(4 * cfg.s, b, 3)
    chans, ch = [b], b
    for lvl, m in enumerate(cfg.channel_mult):
        for _ in range(cfg.res_blocks):
            total += _res(ch, b * m, ed) + (_attn(b * m) if lvl in cfg.attention_levels else 0)
            ch = b * m
            chans.append(ch)
        if lvl < cfg.depth:
            total += _conv(ch, ch, 3)
            chans.append(ch)
    total += 2 * _res(ch, ch, ed) + _attn(ch)
    for lvl, m in reversed(list(enumerate(cfg.channel_mult))):
        for i in range(cfg.res_blocks + 1):
            total += _res(ch + chans.pop(), b * m, ed) + (_attn(b * m) if lvl in cfg.attention_levels else 0)
            ch = b * m
            if lvl and i == cfg.res_blocks:
                total += ch * ch * 16 + ch
    return total + 2 * ch + _conv(ch, 4 * cfg.s, 3)


def _n(model):
    return sum(p.numel() for p in model.parameters())


def test_param_count_desk():
    cfg = DenoiserConfig()
    model = Denoiser(cfg)
    assert _n(model) == count_params(cfg) == 410_500


def test_param_count_full_size():
    cfg = DenoiserConfig.full_size()
    assert _n(Denoiser(cfg)) == count_params(cfg)


def test_config_validation():
    with pytest.raises(ValueError):
        DenoiserConfig(depth=2, channel_mult=(1, 2))
    with pytest.raises(ValueError):
        DenoiserConfig(base_channels=12, groups=8)


def test_output_shapes_and_zero_init():
    cfg = DenoiserConfig()
    m = build_denoiser(cfg)
    x = torch.randn(2, 10, 16, 16)
    e, v = denoiser_forward(m, x, x, torch.tensor([5, 900]))
    assert e.shape == v.shape == (2, 10, 16, 16)
    assert torch.all(e == 0) and torch.allclose(v, torch.full_like(v, 0.5))


def test_forward_rejects_bad_shapes():
    m = build_denoiser(DenoiserConfig())
    with pytest.raises(ValueError):
        m(torch.randn(1, 10, 12, 12), torch.randn(1, 10, 12, 12), torch.tensor([1]))
    with pytest.raises(ValueError):
        m(torch.randn(1, 8, 16, 16), torch.randn(1, 8, 16, 16), torch.tensor([1]))


def test_timestep_embedding():
    e = timestep_embedding(torch.tensor([0, 10]), 8)
    np.testing.assert_allclose(e[0].numpy(), [1, 1, 1, 1, 0, 0, 0, 0])
    assert e.shape == (2, 8)
    assert timestep_embedding(torch.tensor([3]), 7).shape == (1, 7)


def test_dropout_seeded_and_scaled():
    x = torch.ones(10_000, dtype=D)
    a = dropout(x, 0.3, torch.Generator().manual_seed(1), True)
    b = dropout(x, 0.3, torch.Generator().manual_seed(1), True)
    assert torch.equal(a, b)
    assert float(a.mean()) == pytest.approx(1.0, abs=0.03)
    assert set(np.unique(a.numpy()).round(6)) == {0.0, round(1 / 0.7, 6)}
    assert torch.equal(dropout(x, 0.3, None, False), x)


# finite-difference gradient checks, one per layer type


@pytest.mark.parametrize("name", LAYER_CASES)
def test_layer_gradients(name):
    assert layer_gradient_error(name) < 1e-4


def test_full_denoiser_gradient_8x8():
    cfg = DenoiserConfig()
    model = randomize(build_denoiser(cfg, dtype=D), scale=0.1)
    x_t = probe((2, 10, 8, 8)).requires_grad_(True)
    x_c = probe((2, 10, 8, 8), seed=3).requires_grad_(True)
    t = torch.tensor([4, 600])
    w_e, w_v = probe((2, 10, 8, 8), seed=4), probe((2, 10, 8, 8), seed=5)

    def f():
        e, v = denoiser_forward(model, x_t, x_c, t, train_mode=True, generator=torch.Generator().manual_seed(11))
        return torch.sum(e * w_e) + torch.sum(v * w_v)

    params = dict(named_params(model), x_t=x_t, x_c=x_c)
    assert directional_check(f, params, n_dirs=2) < 1e-4


def test_backward_zero_for_unused_and_scalar_only():
    a = torch.ones(2, requires_grad=True)
    b = torch.ones(3, requires_grad=True)
    g = backward((a * 2).sum(), {"a": a, "b": b})
    assert torch.equal(g["b"], torch.zeros(3)) and torch.equal(g["a"], torch.full((2,), 2.0))
    with pytest.raises(ValueError):
        backward(a * 2, {"a": a})


def test_adam_matches_closed_form():
    p = {"w": torch.tensor([1.0, -2.0], dtype=D)}
    st = AdamState()
    grads = [torch.tensor([0.5, 0.1], dtype=D), torch.tensor([-0.2, 0.3], dtype=D)]
    w = np.array([1.0, -2.0])
    m = np.zeros(2)
    v = np.zeros(2)
    for k, g in enumerate(grads, 1):
        adam_step(p, {"w": g}, st, lr=0.01)
        gn = g.numpy()
        m = 0.9 * m + 0.1 * gn
        v = 0.999 * v + 0.001 * gn ** 2
        w = w - 0.01 * (m / (1 - 0.9 ** k)) / (np.sqrt(v / (1 - 0.999 ** k)) + 1e-8)
    np.testing.assert_allclose(p["w"].numpy(), w, rtol=1e-12)
    # first bias-corrected step has magnitude lr in every coordinate
    q = {"w": torch.zeros(3, dtype=D)}
    adam_step(q, {"w": torch.tensor([1e-3, -5.0, 2.0], dtype=D)}, AdamState(), lr=0.1)
    np.testing.assert_allclose(np.abs(q["w"].numpy()), 0.1, rtol=1e-4)


def test_adam_shape_mismatch():
    with pytest.raises(ValueError):
        adam_step({"w": torch.zeros(2)}, {"w": torch.zeros(3)}, AdamState())


def test_ema():
    shadow = {"w": torch.tensor([0.0])}
    ema_update(shadow, {"w": torch.tensor([1.0])}, 0.9)
    assert shadow["w"].item() == pytest.approx(0.1)
    ema_update(shadow, {"w": torch.tensor([1.0])}, 0.0)
    assert shadow["w"].item() == 1.0
    with pytest.raises(ValueError):
        ema_update(shadow, {"w": torch.tensor([1.0])}, 1.0)


def test_checkpoint_roundtrip(tmp_path):
    cfg = DenoiserConfig()
    model = randomize(build_denoiser(cfg), scale=0.05)
    shadow = {k: v.detach().clone() * 0.5 for k, v in named_params(model).items()}
    ck = make_checkpoint(model, shadow, linear_schedule(), (0.5, 2.0), 42, 3, {"learn_sigma": True})
    save_checkpoint(tmp_path / "ck", ck)
    back = load_checkpoint(tmp_path / "ck")
    assert back.iteration == 42 and back.norm == (0.5, 2.0) and back.schedule["T"] == 1000
    x = torch.randn(1, 10, 8, 8)
    for ema in (True, False):
        a = ck.model(ema)(x, x, torch.tensor([10]))[0]
        b = back.model(ema)(x, x, torch.tensor([10]))[0]
        assert torch.equal(a, b)
    with pytest.raises(FileNotFoundError):
        load_checkpoint(tmp_path / "missing")
