"""End-to-end desk-scale run: phantoms -> k-space -> gridding -> training -> sampling -> matching -> metrics."""

import csv
import logging
import os
import time
from dataclasses import dataclass, replace

import numpy as np
import torch

from . import acquire, epg, phantom
from .baselines import lrtv, svdmrf
from .config import dump_config
from .match import dict_match, save_match
from .metrics import error_report, nrmse, write_reports
from .neural import load_checkpoint
from .sample import NetworkDenoiser, plan_tiles, reconstruct_many, uncertainty
from .subspace import compress, compute_basis, save_basis
from .tensorio import write_tensor
from .train import TrainPair, channel_weights, compute_norm_constants, normalize, train_loop

log = logging.getLogger(__name__)


@dataclass
class Setup:
    seq_full: epg.SequenceParams
    seq_short: epg.SequenceParams
    dict_full: epg.Dictionary
    dict_short: epg.Dictionary
    basis_full: object
    basis_short: object
    coils: acquire.CoilSet
    pattern: acquire.SamplingPattern  # full-length


@dataclass
class Scene:
    qmaps: phantom.QMaps
    y: acquire.KSpace  # truncated acquisition
    x_c: np.ndarray  # gridding image in the short basis
    x_ref: np.ndarray  # reference in the target basis
    x_ref_short: np.ndarray


def make_sequence(cfg):
    sc = cfg.sequence
    flips = epg.load_flip_schedule(sc.flip_file) if sc.flip_file else epg.default_flip_schedule(sc.l_full)
    if flips.size != sc.l_full:
        raise ValueError(f"flip schedule has {flips.size} entries, expected {sc.l_full}")
    return epg.SequenceParams(flips, sc.tr, sc.te, sc.ti, sc.inversion)


def setup(cfg):
    seq_full = make_sequence(cfg)
    seq_short = epg.truncate_sequence(seq_full, cfg.sequence.l_short)
    dc = cfg.dictionary
    d_full = epg.build_dictionary(tuple(dc.t1_range), tuple(dc.t2_range), dc.n_t1, dc.n_t2, seq_full,
                                  dc.filter_t2_gt_t1, cfg.sequence.max_order)
    d_short = epg.truncate_sequence(d_full, cfg.sequence.l_short)
    ac = cfg.acquisition
    n = cfg.phantom.size
    coils = acquire.make_coils(n, ac.coils, seed=cfg.seed)
    pattern = acquire.make_sampling(ac.kind, n, cfg.sequence.l_full, ac.accel, seed=cfg.seed)
    return Setup(seq_full, seq_short, d_full, d_short, compute_basis(d_full, dc.s), compute_basis(d_short, dc.s),
                 coils, pattern)


def simulate_scene(st, cfg, spec, noise_seed, chunk=100):
    q = phantom.make_phantom(spec)
    x_full = phantom.qmaps_to_tsmi(q, st.seq_full, cfg.sequence.max_order)
    l_full = st.pattern.n_frames
    parts = []
    for a in range(0, l_full, chunk):
        sub = acquire.SamplingPattern(st.pattern.masks[a:a + chunk], st.pattern.kind, st.pattern.R, st.pattern.seed)
        parts.append(acquire.forward_full(x_full[..., a:a + chunk], st.coils, sub).data)
    y_full = acquire.KSpace(np.concatenate(parts, axis=1), st.pattern, st.coils)
    rms = np.sqrt(np.mean(np.abs(y_full.data) ** 2))
    y_full = acquire.add_noise(y_full, cfg.acquisition.noise_rel * rms, seed=noise_seed)
    y = acquire.truncate_kspace(y_full, cfg.sequence.l_short)
    x_c = acquire.adjoint(y, st.basis_short)
    x_short = compress(x_full[..., :cfg.sequence.l_short], st.basis_short)
    if cfg.train.target_length_mode == "long-l":
        x_ref = compress(x_full, st.basis_full)
    else:
        x_ref = x_short
    return Scene(q, y, x_c, x_ref, x_short)


def scene_seeds(cfg):
    """Phantom and noise seeds: n_train training scenes then one test scene."""
    ss = np.random.SeedSequence([cfg.seed, 20241])
    return [int(v) for v in ss.generate_state(2 * (cfg.phantom.n_train + 1))]


def build_scenes(st, cfg):
    seeds = scene_seeds(cfg)
    scenes = []
    for i in range(cfg.phantom.n_train + 1):
        spec = phantom.random_spec(cfg.phantom.size, seeds[2 * i], jitter=cfg.phantom.jitter)
        scenes.append(simulate_scene(st, cfg, spec, seeds[2 * i + 1]))
    return scenes[:-1], scenes[-1]


def target_basis_and_dict(st, cfg):
    if cfg.train.target_length_mode == "long-l":
        return st.basis_full, st.dict_full
    return st.basis_short, st.dict_short


def tune_tv_weight(st, cfg, scene):
    """Pick the TV weight with the lowest TSMI NRMSE on a training scene."""
    best = None
    for w in cfg.lrtv.tune_grid:
        x = lrtv(scene.y, st.basis_short, cfg.lrtv.lrtv_config(w))
        err = nrmse(x, scene.x_ref_short, scene.qmaps.brain_mask)
        log.info("tv weight %.3g -> NRMSE %.4f", w, err)
        if best is None or err < best[1]:
            best = (w, err)
    return best[0]


def evaluate(name, x, scene, d, basis, tau, mask_kinds=("brain", "head")):
    m = dict_match(x, d, basis, tau=tau, mask=scene.qmaps.head_mask)
    q = scene.qmaps
    reps = []
    for kind in mask_kinds:
        mask = q.brain_mask if kind == "brain" else q.head_mask
        reps.append(error_report(name, m.t1, m.t2, x, q.t1, q.t2, scene.x_ref, mask, kind))
    return m, reps


def make_training_pairs(train_scenes, norm):
    return [TrainPair(normalize(s.x_c, norm[0]), normalize(s.x_ref, norm[1]), s.qmaps.head_mask)
            for s in train_scenes]


def train_model(cfg, train_scenes, out_dir=None):
    w = None
    if cfg.train.channel_weighting:
        w = channel_weights([s.x_ref for s in train_scenes], [s.qmaps.head_mask for s in train_scenes])
        train_scenes = [replace(s, x_c=s.x_c * w, x_ref=s.x_ref * w) for s in train_scenes]
    norm = compute_norm_constants([s.x_c for s in train_scenes], [s.x_ref for s in train_scenes])
    pairs = make_training_pairs(train_scenes, norm)
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
    ckpt_dir = os.path.join(out_dir, "checkpoint") if out_dir else None
    log_path = os.path.join(out_dir, "train_log.csv") if out_dir else None
    return train_loop(pairs, cfg.train, norm=norm, out_dir=ckpt_dir, log_path=log_path, weights=w)


def pearson(a, b):
    a = a - a.mean()
    b = b - b.mean()
    return float(np.sum(a * b) / np.sqrt(np.sum(a * a) * np.sum(b * b)))


def uncertainty_correlation(stack, x_hat, x_ref, mask):
    """Pearson r between the per-plane sample std and the absolute error of the sample mean, within mask."""
    from .train import to_channels
    std = np.stack([uncertainty(np.stack([to_channels(s)[c] for s in stack])) for c in range(2 * stack.shape[-1])])
    err = np.abs(to_channels(x_hat) - to_channels(x_ref))
    return pearson(std[:, mask].ravel(), err[:, mask].ravel())


def run_pipeline(cfg, out_dir=None, checkpoint=None, reconstruct_only=False):
    """Full run; returns a dict with reports, timings and summary statistics."""
    torch.use_deterministic_algorithms(True)
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        dump_config(cfg, os.path.join(out_dir, "config_resolved.yaml"))
    timings = {}
    t0 = time.perf_counter()
    st = setup(cfg)
    train_scenes, test = build_scenes(st, cfg)
    timings["simulate_s"] = time.perf_counter() - t0
    basis, d = target_basis_and_dict(st, cfg)

    t0 = time.perf_counter()
    if reconstruct_only or checkpoint:
        path = checkpoint or (os.path.join(out_dir, "checkpoint") if out_dir else None)
        if not path or not os.path.exists(os.path.join(path, "checkpoint.json")):
            raise FileNotFoundError(f"reconstruct-only mode needs a checkpoint; none found at {path}")
        ckpt = load_checkpoint(path)
    else:
        ckpt = train_model(cfg, train_scenes, out_dir)
    timings["train_s"] = time.perf_counter() - t0

    den = NetworkDenoiser(ckpt)
    sc = cfg.sample
    plan = plan_tiles(cfg.phantom.size, cfg.phantom.size, sc.patch, sc.stride)
    t0 = time.perf_counter()
    res = reconstruct_many(test.x_c, den, sc.steps, plan, sc.samples, seed=cfg.seed)
    timings["sample_s"] = time.perf_counter() - t0

    tau = 1e-3 * den.norm[1]
    reports = []
    m_dm, r = evaluate("MRF-IDDPM", res.x_hat, test, d, basis, tau)
    reports += r
    # baselines reconstruct in the short basis; matched with the short dictionary
    short = Scene(test.qmaps, test.y, test.x_c, test.x_ref_short, test.x_ref_short)
    m_grid, r = evaluate("SVDMRF", svdmrf(test.y, st.basis_short), short, st.dict_short, st.basis_short,
                         1e-3 * den.norm[0])
    reports += r
    t0 = time.perf_counter()
    w = cfg.lrtv.tv_weight if cfg.lrtv.tv_weight >= 0 else tune_tv_weight(st, cfg, train_scenes[0])
    x_lrtv = lrtv(test.y, st.basis_short, cfg.lrtv.lrtv_config(w))
    timings["lrtv_s"] = time.perf_counter() - t0
    m_lrtv, r = evaluate("LRTV", x_lrtv, short, st.dict_short, st.basis_short, 1e-3 * den.norm[0])
    reports += r

    r_unc = uncertainty_correlation(res.stack, res.x_hat, test.x_ref, test.qmaps.brain_mask) \
        if res.sample_count > 1 else float("nan")
    summary = {"tv_weight": w, "uncertainty_pearson_r": r_unc, "norm_cond": den.norm[0], "norm_ref": den.norm[1]}
    if out_dir:
        write_reports(os.path.join(out_dir, "metrics.csv"), reports)
        with open(os.path.join(out_dir, "summary.csv"), "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(list(summary))
            wr.writerow([f"{v:.6g}" for v in summary.values()])
        save_basis(os.path.join(out_dir, "basis_short.qmrf"), st.basis_short)
        write_tensor(os.path.join(out_dir, "x_c.qmrf"), test.x_c.astype(np.complex64), kind="tsmi_condition")
        write_tensor(os.path.join(out_dir, "x_ref.qmrf"), test.x_ref.astype(np.complex64), kind="tsmi_reference")
        write_tensor(os.path.join(out_dir, "x_hat.qmrf"), res.x_hat.astype(np.complex64), kind="tsmi_restored",
                     samples=res.sample_count, steps=sc.steps, patch=sc.patch, stride=sc.stride)
        if res.sample_count > 1:
            write_tensor(os.path.join(out_dir, "x_hat_stack.qmrf"), res.stack.astype(np.complex64), kind="tsmi_samples")
            write_tensor(os.path.join(out_dir, "x_hat_std.qmrf"), uncertainty(res.stack), kind="tsmi_std")
        write_tensor(os.path.join(out_dir, "x_lrtv.qmrf"), x_lrtv.astype(np.complex64), kind="tsmi_lrtv")
        phantom.save_qmaps(os.path.join(out_dir, "reference"), test.qmaps)
        for name, m in (("iddpm", m_dm), ("svdmrf", m_grid), ("lrtv", m_lrtv)):
            save_match(os.path.join(out_dir, f"maps_{name}"), m)
    return {"reports": reports, "timings": timings, "summary": summary, "setup": st, "test": test,
            "train_scenes": train_scenes, "checkpoint": ckpt, "result": res, "x_lrtv": x_lrtv}


AXES = ("patch", "stride", "steps")


def run_ablation(cfg, axis, values, out_dir=None, checkpoint=None):
    """Sweep one sampling/training knob; one CSV row per value with a wall-time column."""
    if axis not in AXES:
        raise ValueError(f"unknown ablation axis {axis!r}; choose from {AXES}")
    torch.use_deterministic_algorithms(True)
    st = setup(cfg)
    train_scenes, test = build_scenes(st, cfg)
    basis, d = target_basis_and_dict(st, cfg)
    base = None
    if axis != "patch":
        base = load_checkpoint(checkpoint) if checkpoint else train_model(cfg, train_scenes)
    rows = []
    for v in values:
        v = int(v)
        sc = cfg.sample
        patch, stride, steps = sc.patch, sc.stride, sc.steps
        ckpt = base
        if axis == "patch":
            cfg.train.patch_size = patch = v
            stride = min(stride, v)
            ckpt = train_model(cfg, train_scenes)
        elif axis == "stride":
            stride = v
        else:
            steps = v
        plan = plan_tiles(cfg.phantom.size, cfg.phantom.size, patch, stride)
        den = NetworkDenoiser(ckpt)
        t0 = time.perf_counter()
        res = reconstruct_many(test.x_c, den, steps, plan, 1, seed=cfg.seed, keep_stack=False)
        wall = time.perf_counter() - t0
        _, reps = evaluate("MRF-IDDPM", res.x_hat, test, d, basis, 1e-3 * den.norm[1], ("brain",))
        rows.append((v, wall, reps[0]))
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, f"ablate_{axis}.csv"), "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow([axis, "wall_time_s", "mape_t1", "mape_t2", "nrmse_t1", "nrmse_t2", "nrmse_tsmi",
                         "ssim_t1", "ssim_t2", "ssim_tsmi"])
            for v, wall, r in rows:
                wr.writerow([v, f"{wall:.3f}"] + [f"{x:.6g}" for x in (r.mape_t1, r.mape_t2, r.nrmse_t1, r.nrmse_t2,
                                                                      r.nrmse_tsmi, r.ssim_t1, r.ssim_t2, r.ssim_tsmi)])
    return rows
