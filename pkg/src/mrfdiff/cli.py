"""Command-line entry point: simulate-dict, pipeline, ablate, baseline, match.

Exit codes: 0 success, 2 configuration or input error, 3 numerical failure.
MRFDIFF_THREADS caps the torch intra-op thread count.
"""

import argparse
import csv
import logging
import os
import sys

import numpy as np

from . import epg, pipeline
from .baselines import lrtv, svdmrf
from .config import ConfigError, RunConfig, dump_config, load_config
from .match import dict_match, save_match
from .metrics import write_reports
from .subspace import compute_basis, load_basis, save_basis
from .tensorio import TensorFormatError, read_tensor, write_tensor

log = logging.getLogger("mrfdiff")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


def _common(p):
    p.add_argument("--config", help="YAML run configuration")
    p.add_argument("--out", help="output directory (overrides config 'out')")
    p.add_argument("--seed", type=int, help="global seed")


def _sampling(p):
    p.add_argument("--steps", type=int, help="reverse-diffusion steps K")
    p.add_argument("--patch", type=int, help="patch size (training and inference)")
    p.add_argument("--stride", type=int, help="inference patch stride")
    p.add_argument("--samples", type=int, help="reverse-diffusion samples to average")
    p.add_argument("--iterations", type=int, help="training iterations")
    p.add_argument("--checkpoint", help="checkpoint directory to load instead of training")


def build_parser():
    ap = argparse.ArgumentParser(prog="mrfdiff", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate-dict", help="simulate the dictionary and its subspace bases")
    _common(p)
    p.add_argument("--s", type=int, help="subspace rank")

    p = sub.add_parser("pipeline", help="simulate, train, reconstruct, match and evaluate")
    _common(p)
    _sampling(p)
    p.add_argument("--reconstruct-only", action="store_true", help="skip training; needs a checkpoint")

    p = sub.add_parser("ablate", help="sweep patch size, stride or step count")
    _common(p)
    _sampling(p)
    p.add_argument("--axis", required=True, choices=pipeline.AXES)
    p.add_argument("--values", required=True, help="comma-separated integers")

    p = sub.add_parser("baseline", help="run a baseline reconstruction on the test phantom")
    _common(p)
    p.add_argument("--method", required=True, choices=("svdmrf", "lrtv"))
    p.add_argument("--tv-weight", type=float, help="LRTV weight (default: config or tuned)")

    p = sub.add_parser("match", help="dictionary-match a compressed TSMI tensor")
    p.add_argument("--tsmi", required=True, help="(H, W, s) complex tensor file")
    p.add_argument("--dictionary", required=True, help="dictionary prefix written by simulate-dict")
    p.add_argument("--basis", required=True, help="basis tensor file")
    p.add_argument("--out", required=True, help="output prefix")
    p.add_argument("--tau", type=float, default=0.0, help="background magnitude threshold")
    return ap


def resolve_config(args):
    cfg = load_config(args.config) if getattr(args, "config", None) else RunConfig()
    if getattr(args, "out", None):
        cfg.out = args.out
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
        cfg.train.seed = args.seed
    for flag, section, key in (("steps", "sample", "steps"), ("patch", "sample", "patch"),
                               ("stride", "sample", "stride"), ("samples", "sample", "samples"),
                               ("iterations", "train", "iterations")):
        v = getattr(args, flag, None)
        if v is not None:
            setattr(getattr(cfg, section), key, v)
    if getattr(args, "patch", None) is not None:
        cfg.train.patch_size = args.patch
    if getattr(args, "s", None) is not None:
        cfg.dictionary.s = args.s
    return cfg


def cmd_simulate_dict(cfg):
    os.makedirs(cfg.out, exist_ok=True)
    dump_config(cfg, os.path.join(cfg.out, "config_resolved.yaml"))
    seq = pipeline.make_sequence(cfg)
    dc = cfg.dictionary
    d = epg.build_dictionary(tuple(dc.t1_range), tuple(dc.t2_range), dc.n_t1, dc.n_t2, seq,
                             dc.filter_t2_gt_t1, cfg.sequence.max_order)
    for tag, dd in (("full", d), ("short", epg.truncate_sequence(d, cfg.sequence.l_short))):
        epg.save_dictionary(os.path.join(cfg.out, f"dict_{tag}"), dd)
        b = compute_basis(dd, dc.s)
        save_basis(os.path.join(cfg.out, f"basis_{tag}.qmrf"), b)
        log.info("%s dictionary: %d atoms x %d frames, s=%d energy %.6f", tag, len(dd), dd.length, dc.s,
                 b.energy_fraction())
    epg.save_flip_schedule(os.path.join(cfg.out, "flip_angles.txt"), seq.flip_angles)


def cmd_pipeline(cfg, args):
    out = pipeline.run_pipeline(cfg, cfg.out, checkpoint=args.checkpoint, reconstruct_only=args.reconstruct_only)
    for r in out["reports"]:
        if r.mask_kind == "brain":
            log.info("%-10s T1 MAPE %6.2f%%  T2 MAPE %6.2f%%  TSMI NRMSE %.4f", r.method, r.mape_t1, r.mape_t2,
                     r.nrmse_tsmi)


def cmd_ablate(cfg, args):
    try:
        values = [int(v) for v in args.values.split(",") if v.strip()]
    except ValueError as e:
        raise ConfigError(f"--values must be comma-separated integers: {e}") from e
    if not values:
        raise ConfigError("--values is empty")
    os.makedirs(cfg.out, exist_ok=True)
    dump_config(cfg, os.path.join(cfg.out, "config_resolved.yaml"))
    pipeline.run_ablation(cfg, args.axis, values, cfg.out, checkpoint=args.checkpoint)


def cmd_baseline(cfg, args):
    os.makedirs(cfg.out, exist_ok=True)
    dump_config(cfg, os.path.join(cfg.out, "config_resolved.yaml"))
    st = pipeline.setup(cfg)
    train_scenes, test = pipeline.build_scenes(st, cfg)
    short = pipeline.Scene(test.qmaps, test.y, test.x_c, test.x_ref_short, test.x_ref_short)
    extra = {}
    if args.method == "svdmrf":
        x = svdmrf(test.y, st.basis_short)
    else:
        w = args.tv_weight if args.tv_weight is not None else cfg.lrtv.tv_weight
        if w < 0:
            w = pipeline.tune_tv_weight(st, cfg, train_scenes[0])
        x = lrtv(test.y, st.basis_short, cfg.lrtv.lrtv_config(w))
        extra["tv_weight"] = f"{w:.6g}"
    tau = 1e-3 * float(np.percentile(np.abs(x), 99.9))
    m, reps = pipeline.evaluate(args.method.upper(), x, short, st.dict_short, st.basis_short, tau)
    write_reports(os.path.join(cfg.out, f"metrics_{args.method}.csv"), reps, extra)
    write_tensor(os.path.join(cfg.out, f"x_{args.method}.qmrf"), x.astype(np.complex64), kind=f"tsmi_{args.method}")
    save_match(os.path.join(cfg.out, f"maps_{args.method}"), m)
    for r in reps:
        log.info("%s [%s] T1 MAPE %.2f%%  T2 MAPE %.2f%%", r.method, r.mask_kind, r.mape_t1, r.mape_t2)


def cmd_match(args):
    x = read_tensor(args.tsmi)
    d = epg.load_dictionary(args.dictionary)
    b = load_basis(args.basis)
    if x.ndim != 3:
        raise ConfigError(f"TSMI tensor must be (H, W, s); got shape {x.shape}")
    m = dict_match(x.astype(complex), d, b, tau=args.tau)
    out_dir = os.path.dirname(args.out)
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
    save_match(args.out, m)
    with open(args.out + "_summary.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["voxels", "matched", "mean_correlation"])
        fg = m.index >= 0
        w.writerow([m.index.size, int(fg.sum()), f"{float(m.correlation[fg].mean()) if fg.any() else 0.0:.6g}"])


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    threads = os.environ.get("MRFDIFF_THREADS")
    try:
        if threads:
            import torch
            torch.set_num_threads(int(threads))
        if args.command == "match":
            cmd_match(args)
            return EXIT_OK
        cfg = resolve_config(args)
        if args.command == "simulate-dict":
            cmd_simulate_dict(cfg)
        elif args.command == "pipeline":
            cmd_pipeline(cfg, args)
        elif args.command == "ablate":
            cmd_ablate(cfg, args)
        else:
            cmd_baseline(cfg, args)
    except (FloatingPointError, np.linalg.LinAlgError) as e:
        log.error("numerical failure: %s", e)
        return EXIT_NUMERIC
    except (ConfigError, ValueError, FileNotFoundError, TensorFormatError, OSError) as e:
        log.error("%s", e)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
