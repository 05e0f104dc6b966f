"""Command-line entry point.

Subcommands: gen-dataset, simulate, train, predict, eval, bench,
ablate. Every command takes --config JSON plus flag overrides (flags
win), echoes the effective configuration into its output directory,
and maps error classes to exit codes: 2 configuration, 3 data/format,
4 numeric.
"""

import argparse
import os
import sys
import time

import numpy as np

from . import formats
from .config import (load_run_config, override, override_section,
                     run_config_to_json)
from .datagen import DatasetManifest, build_dataset, render_truth
from .errors import ConfigError, DataError, DimensionError, NumericError
from .metrics import evaluate, psnr
from .optics import (abbe_image, build_pupil, build_source, oracle_kernels,
                     resist_image, socs_image)
from .training import build_encoder, kernel_dims, train

_ENGINES = ("socs", "abbe")
_ENCODERS = ("rff", "nerf", "none")


def build_parser():
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("--config", help="JSON run configuration")
    shared.add_argument("--threads", type=int, help="worker thread count")
    shared.add_argument("--seed", type=int, help="training seed override")
    shared.add_argument("--out", help="output directory")

    parser = argparse.ArgumentParser(
        prog="lithokit",
        description="Partially coherent imaging oracle and learned kernel regression",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-dataset", parents=[shared],
                       help="generate masks and oracle ground truth")
    p.add_argument("--n-train", type=int, default=64)
    p.add_argument("--n-test", type=int, default=16)
    p.add_argument("--style", choices=("via", "metal"))

    p = sub.add_parser("simulate", parents=[shared],
                       help="render one mask through the oracle")
    p.add_argument("--mask", required=True)
    p.add_argument("--engine", choices=_ENGINES, default="socs")
    p.add_argument("--r", type=int, help="kernel order (default: coverage rank)")

    p = sub.add_parser("train", parents=[shared],
                       help="fit the kernel network on a dataset")
    p.add_argument("--manifest", required=True)
    p.add_argument("--pe", choices=_ENCODERS)
    p.add_argument("--r", type=int)
    p.add_argument("--kernel-dim", type=int, help="odd kernel dims override")
    p.add_argument("--epochs", type=int)
    p.add_argument("--checkpoint-every", type=int, default=0)

    p = sub.add_parser("predict", parents=[shared],
                       help="apply a kernel stack to a mask")
    p.add_argument("--kernels", required=True)
    p.add_argument("--mask", required=True)

    p = sub.add_parser("eval", parents=[shared],
                       help="score a kernel stack against a dataset split")
    p.add_argument("--manifest", required=True)
    p.add_argument("--kernels", required=True)
    p.add_argument("--split", default="test")

    p = sub.add_parser("bench", parents=[shared],
                       help="throughput of truncated vs near-full-rank stacks")
    p.add_argument("--manifest", required=True)
    p.add_argument("--kernels", help="truncated stack (default: oracle at --r)")
    p.add_argument("--r", type=int)
    p.add_argument("--max-threads", type=int, default=4)
    p.add_argument("--limit", type=int, default=4, help="masks per timing")

    p = sub.add_parser("ablate", parents=[shared],
                       help="kernel-dimension or positional-encoding sweep")
    p.add_argument("--manifest", required=True)
    p.add_argument("--which", choices=("kernel-dim", "pe"), required=True)
    p.add_argument("--epochs", type=int)
    return parser


def _configured(args):
    cfg = load_run_config(args.config)
    if args.threads is not None:
        cfg = override(cfg, threads=args.threads)
        cfg = override_section(cfg, "train", threads=args.threads)
    if args.out is not None:
        cfg = override(cfg, out_dir=args.out)
    if args.seed is not None:
        cfg = override_section(cfg, "train", seed=args.seed)
    if getattr(args, "pe", None):
        cfg = override_section(cfg, "network", encoder=args.pe)
    if getattr(args, "r", None):
        cfg = override_section(cfg, "train", r=args.r)
    if getattr(args, "kernel_dim", None):
        cfg = override_section(cfg, "train", kernel_n=args.kernel_dim,
                               kernel_m=args.kernel_dim)
    if getattr(args, "epochs", None) is not None:
        cfg = override_section(cfg, "train", epochs=args.epochs)
    if getattr(args, "style", None):
        cfg = override_section(cfg, "mask", style=args.style)
    return cfg


def _prepare_out(cfg):
    os.makedirs(cfg.out_dir, exist_ok=True)
    formats.write_json(os.path.join(cfg.out_dir, "run_config.json"),
                       run_config_to_json(cfg))
    return cfg.out_dir


def _oracle_dims(cfg, size):
    m, n = kernel_dims(size, size, cfg.imaging.wavelength_nm,
                       cfg.imaging.numerical_aperture,
                       cfg.imaging.pixel_size_nm)
    return n, m


def cmd_gen_dataset(cfg, args):
    out = _prepare_out(cfg)
    manifest = build_dataset(args.n_train, args.n_test, cfg.mask, cfg.imaging,
                             out, threshold=cfg.threshold,
                             coverage=cfg.coverage, threads=cfg.threads)
    print(f"wrote {len(manifest.records)} records to "
          f"{os.path.join(out, 'manifest.json')} "
          f"(r_full={manifest.metadata['r_full']})")
    return 0


def cmd_simulate(cfg, args):
    mask = formats.read_pgm(args.mask)
    out = _prepare_out(cfg)
    t0 = time.time()
    if args.engine == "socs":
        aerial, resist = render_truth(
            mask, cfg.imaging, r_full=args.r,
            coverage=None if args.r else cfg.coverage,
            threshold=cfg.threshold, threads=cfg.threads)
    else:
        src = build_source(cfg.imaging)
        pupil = build_pupil(cfg.imaging)
        aerial = abbe_image(src, pupil, mask,
                            pixel_size_nm=cfg.imaging.pixel_size_nm,
                            threads=cfg.threads)
        resist = resist_image(aerial, cfg.threshold)
    dt = time.time() - t0
    formats.write_pfm(os.path.join(out, "aerial.pfm"), aerial)
    formats.write_pgm(os.path.join(out, "resist.pgm"), resist)
    print(f"{args.engine}: peak {aerial.max():.6f}, "
          f"resist fraction {resist.mean():.4f}, {dt:.2f} s")
    return 0


def cmd_train(cfg, args):
    manifest = DatasetManifest.load(args.manifest)
    out = _prepare_out(cfg)
    encoder_spec = build_encoder(cfg.network).spec()

    on_epoch = None
    if args.checkpoint_every > 0:
        def on_epoch(epoch, params):
            if (epoch + 1) % args.checkpoint_every == 0:
                formats.write_nmlp(
                    os.path.join(out, f"model_ep{epoch + 1:04d}.nmlp"),
                    params, encoder_spec)

    params, stack, log_rows = train(manifest, cfg.train, cfg.network,
                                    on_epoch=on_epoch)
    formats.write_nmlp(os.path.join(out, "model.nmlp"), params, encoder_spec)
    formats.write_nkrn(os.path.join(out, "kernels.nkrn"), stack)
    rows = [["epoch", "mean_loss", "val_psnr_db", "wall_seconds"]]
    rows += [[e, repr(l), repr(p), f"{w:.3f}"] for e, l, p, w in log_rows]
    formats.write_csv(os.path.join(out, "train_log.csv"), rows)
    if log_rows:
        e, l, p, w = log_rows[-1]
        print(f"epoch {e}: loss {l:.3e}, val PSNR {p:.2f} dB, {w:.1f} s")
    print(f"wrote {os.path.join(out, 'kernels.nkrn')} (r={stack.r}, "
          f"{stack.n}x{stack.m})")
    return 0


def cmd_predict(cfg, args):
    stack = formats.read_nkrn(args.kernels)
    mask = formats.read_pgm(args.mask)
    out = _prepare_out(cfg)
    t0 = time.time()
    aerial = socs_image(stack, mask, threads=cfg.threads)
    dt = time.time() - t0
    resist = resist_image(aerial, cfg.threshold)
    formats.write_pfm(os.path.join(out, "aerial.pfm"), aerial)
    formats.write_pgm(os.path.join(out, "resist.pgm"), resist)
    px = stack.pixel_size_nm
    if not np.isfinite(px):
        px = cfg.imaging.pixel_size_nm
    area_um2 = mask.shape[0] * mask.shape[1] * px * px / 1e6
    print(f"predicted {mask.shape[0]}x{mask.shape[1]} mask in {dt:.4f} s: "
          f"{area_um2 / dt:.2f} um^2/s")
    return 0


def cmd_eval(cfg, args):
    manifest = DatasetManifest.load(args.manifest)
    stack = formats.read_nkrn(args.kernels)
    threshold = float(manifest.metadata.get("threshold", cfg.threshold))
    masks, aerials, resists = manifest.load_split(args.split)
    if not masks:
        raise DataError(f"manifest has no records in split {args.split!r}")
    out = _prepare_out(cfg)
    samples = []
    for mask, aerial_t, resist_t in zip(masks, aerials, resists):
        aerial_p = socs_image(stack, mask, threads=cfg.threads)
        samples.append((aerial_t, aerial_p, resist_t,
                        resist_image(aerial_p, threshold)))
    report = evaluate(samples)
    formats.write_csv(os.path.join(out, "report.csv"), report.to_csv_rows())
    formats.write_json(os.path.join(out, "report.json"), report.to_json_obj())
    m = report.means
    print(f"{report.count} samples: MSE {m['mse']:.3e}, "
          f"PSNR {m['psnr_db']:.2f} dB, ME {m['max_error']:.3e}, "
          f"mIOU {m['miou']:.4f}, mPA {m['mpa']:.4f}")
    return 0


def cmd_bench(cfg, args):
    manifest = DatasetManifest.load(args.manifest)
    masks, _, _ = manifest.load_split("test")
    if not masks:
        masks, _, _ = manifest.load_split("train")
    if not masks:
        raise DataError("manifest has no records to benchmark")
    masks = masks[:max(1, args.limit)]
    size = masks[0].shape[0]
    n, m = _oracle_dims(cfg, size)
    full_stack, _ = oracle_kernels(cfg.imaging, size, n, m,
                                   coverage=cfg.coverage)
    if args.kernels:
        trunc_stack = formats.read_nkrn(args.kernels)
    else:
        trunc_stack, _ = oracle_kernels(cfg.imaging, size, n, m,
                                        r=cfg.train.r)
    out = _prepare_out(cfg)
    px = cfg.imaging.pixel_size_nm
    area_um2 = size * size * px * px / 1e6

    def throughput(stack, threads):
        socs_image(stack, masks[0], threads=threads)  # warm up
        t0 = time.time()
        for mk in masks:
            socs_image(stack, mk, threads=threads)
        dt = time.time() - t0
        return len(masks) * area_um2 / dt, dt / len(masks)

    rows = [["threads", "engine", "r", "masks", "seconds_per_mask",
             "um2_per_s", "speedup_vs_full"]]
    summary = []
    for t in range(1, max(1, args.max_threads) + 1):
        thr_full, sec_full = throughput(full_stack, t)
        thr_trunc, sec_trunc = throughput(trunc_stack, t)
        rows.append([t, "full", full_stack.r, len(masks),
                     f"{sec_full:.6f}", f"{thr_full:.3f}", ""])
        rows.append([t, "truncated", trunc_stack.r, len(masks),
                     f"{sec_trunc:.6f}", f"{thr_trunc:.3f}",
                     f"{thr_trunc / thr_full:.3f}"])
        summary.append((t, thr_trunc / thr_full))
    formats.write_csv(os.path.join(out, "bench.csv"), rows)
    for t, speedup in summary:
        print(f"threads {t}: truncated r={trunc_stack.r} vs full "
              f"r={full_stack.r} speedup {speedup:.2f}x")
    return 0


def _test_psnr(stack, manifest, threads):
    masks, aerials, _ = manifest.load_split("test")
    if not masks:
        raise DataError("ablation needs a test split")
    scores = [psnr(truth, socs_image(stack, mk, threads=threads))
              for mk, truth in zip(masks, aerials)]
    return float(np.mean(scores))


def cmd_ablate(cfg, args):
    manifest = DatasetManifest.load(args.manifest)
    out = _prepare_out(cfg)
    rows = [["sweep", "setting", "kernel_n", "kernel_m", "val_psnr_db"]]
    if args.which == "pe":
        for enc in _ENCODERS:
            run_cfg = override_section(cfg, "network", encoder=enc)
            _, stack, _ = train(manifest, run_cfg.train, run_cfg.network)
            score = _test_psnr(stack, manifest, cfg.threads)
            rows.append(["pe", enc, stack.n, stack.m, f"{score:.3f}"])
            print(f"pe={enc}: {score:.2f} dB")
    else:
        size = int(manifest.metadata["image_px"])
        n, m = _oracle_dims(cfg, size)
        half = m // 2 + (1 if (m // 2) % 2 == 0 else 0)  # nearest odd half
        for dim in (half, m, m + 8):
            run_cfg = override_section(cfg, "train", kernel_n=dim, kernel_m=dim)
            _, stack, _ = train(manifest, run_cfg.train, run_cfg.network)
            score = _test_psnr(stack, manifest, cfg.threads)
            rows.append(["kernel-dim", dim, dim, dim, f"{score:.3f}"])
            print(f"kernel dim {dim}: {score:.2f} dB")
    formats.write_csv(os.path.join(out, f"ablate_{args.which}.csv"), rows)
    return 0


_DISPATCH = {
    "gen-dataset": cmd_gen_dataset,
    "simulate": cmd_simulate,
    "train": cmd_train,
    "predict": cmd_predict,
    "eval": cmd_eval,
    "bench": cmd_bench,
    "ablate": cmd_ablate,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = _configured(args)
        return _DISPATCH[args.command](cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (DataError, DimensionError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
