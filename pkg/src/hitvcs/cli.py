"""Command-line surface: train, compress, decompress, eval.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 training
aborted on non-finite loss.
"""
from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from . import container, report
from .config import RunConfig, parse_run_config, write_run_config
from .data import GopDataset, load_sequence, partition_gops
from .errors import ConfigError, DataError, NanLossError
from .metrics import MetricReport, FrameRecord, clip_frame, evaluate, psnr, ssim
from .network import build_model, count_parameters, reconstruct_gop
from .sampling import sample_gop
from .training import load_checkpoint, train

DATA_ROOT_ENV = "HITVCS_DATA_ROOT"


def resolve_data_path(raw: str | Path) -> Path:
    """Resolve a data path, falling back to $HITVCS_DATA_ROOT for relative
    paths that do not exist from the working directory."""
    path = Path(raw)
    if path.exists() or path.is_absolute():
        return path
    root = os.environ.get(DATA_ROOT_ENV)
    if root:
        candidate = Path(root) / path
        if candidate.exists():
            return candidate
    return path


def _load_sequences_arg(paths, width, height, limit=None):
    out = {}
    for raw in paths:
        path = resolve_data_path(raw)
        out[Path(raw).stem or str(raw)] = load_sequence(path, width, height, limit=limit)
    return out


def _apply_overrides(cfg: RunConfig, args) -> RunConfig:
    model, trainc, data, paths = cfg.model, cfg.train, cfg.data, cfg.paths
    if args.alpha_k is not None:
        model.alpha_k = args.alpha_k
    if args.alpha_n is not None:
        model.alpha_n = args.alpha_n
    if args.gop is not None:
        model.gop_size = args.gop
    if args.block is not None:
        model.block_size = args.block
    if args.scales is not None:
        model.scales = args.scales
    if args.channels is not None:
        model.channels = args.channels
    if args.blocks is not None:
        model.blocks_per_scale = args.blocks
    if args.no_hfim:
        model.use_hfim = False
    if args.no_hffm:
        model.use_hffm = False
    if args.epochs is not None:
        trainc.epochs = args.epochs
    if args.batch_gops is not None:
        trainc.batch_gops = args.batch_gops
    if args.lr is not None:
        trainc.lr0 = args.lr
    if args.seed is not None:
        trainc.seed = args.seed
    if args.data is not None:
        data.train_path = args.data
    if args.crop is not None:
        data.crop_size = args.crop
    if args.width is not None:
        data.width = args.width
    if args.height is not None:
        data.height = args.height
    if args.out is not None:
        paths.out_dir = args.out
    return cfg


def _train_sequences(data_cfg):
    if not data_cfg.train_path:
        raise ConfigError("no training data configured (set data.train_path or --data)")
    path = resolve_data_path(data_cfg.train_path)
    if path.is_dir():
        subdirs = sorted(p for p in path.iterdir() if p.is_dir())
        if subdirs:
            return [load_sequence(p, data_cfg.width, data_cfg.height) for p in subdirs]
        return [load_sequence(path, data_cfg.width, data_cfg.height)]
    return [load_sequence(path, data_cfg.width, data_cfg.height)]


def cmd_train(args) -> int:
    cfg = parse_run_config(args.config) if args.config else RunConfig()
    cfg = _apply_overrides(cfg, args)
    cfg.validate()
    out_dir = Path(cfg.paths.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    sequences = _train_sequences(cfg.data)
    dataset = GopDataset(
        sequences,
        gop_size=cfg.model.gop_size,
        crop_size=cfg.data.crop_size,
        block_size=cfg.model.block_size,
        scales=cfg.model.scales,
        seed=cfg.train.seed,
    )
    model = build_model(cfg.model, cfg.train.seed)
    print(f"model parameters: {count_parameters(model)}")
    checkpoint_path = Path(cfg.paths.checkpoint) if cfg.paths.checkpoint else out_dir / "checkpoint.pt"
    log_path = out_dir / "training_log.csv"
    write_run_config(cfg, out_dir / "run_config.ini")
    summary = train(
        model, dataset, cfg.train, checkpoint_path, log_path, config_echo=cfg.echo()
    )
    curve = report.render_training_curve(summary["log_rows"], out_dir / "training_curve.png")
    print(f"checkpoint: {checkpoint_path}")
    print(f"training log: {log_path}")
    print(f"training curve: {curve}")
    print(f"final epoch mean loss: {summary['epoch_mean_loss'][-1]:.6g}")
    return 0


def cmd_compress(args) -> int:
    model, _ = load_checkpoint(args.checkpoint)
    frames = load_sequence(
        resolve_data_path(args.frames_in), args.width or 0, args.height or 0
    )
    b = model.cfg.block_size
    h, w = frames[0].shape
    if h % b or w % b:
        raise DataError(f"frames are {h}x{w}, not divisible by block_size {b}")
    g = model.cfg.gop_size
    gops = partition_gops(frames, g)
    if args.gops is not None:
        gops = gops[: args.gops]
    key_op = model.key_sampler.to_operator()
    nonkey_op = model.nonkey_sampler.to_operator()
    measurements = []
    total_meas = 0
    total_px = 0
    for gop in gops:
        for meas, frame in zip(sample_gop(gop, key_op, nonkey_op), gop.all_frames()):
            measurements.append(meas)
            total_meas += meas.values.size
            total_px += frame.size
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    container.write_archive(out, measurements)
    print(f"wrote {len(measurements)} frame containers ({len(gops)} GOPs) to {out}")
    print(f"achieved rate: {total_meas / total_px:.6f} measurements/pixel")
    return 0


def _group_archive(measurements, model):
    g = model.cfg.gop_size
    per_gop = g + 1
    if len(measurements) % per_gop:
        raise ConfigError(
            f"archive holds {len(measurements)} containers, not a multiple of "
            f"GOP size + bounding key = {per_gop}"
        )
    m_k, m_n = model.key_sampler.m, model.nonkey_sampler.m
    for idx, meas in enumerate(measurements):
        offset = idx % per_gop
        expected_m = m_k if offset in (0, g) else m_n
        expected_ratio = (
            model.key_sampler.ratio if offset in (0, g) else model.nonkey_sampler.ratio
        )
        if meas.channels != expected_m or abs(meas.ratio - expected_ratio) > 1e-6:
            raise ConfigError(
                f"container {idx}: ratio {meas.ratio:.4f} with {meas.channels} channels "
                f"does not match checkpoint ratio {expected_ratio:.4f} ({expected_m} channels)"
            )
    return [measurements[i : i + per_gop] for i in range(0, len(measurements), per_gop)]


def cmd_decompress(args) -> int:
    model, _ = load_checkpoint(args.checkpoint)
    measurements = container.read_archive(args.archive)
    gop_groups = _group_archive(measurements, model)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    reference = None
    if args.reference:
        reference = load_sequence(
            resolve_data_path(args.reference), args.width or 0, args.height or 0
        )
    g = model.cfg.gop_size
    rows = []
    for gop_idx, group in enumerate(gop_groups):
        initial, deep = reconstruct_gop(group, model)
        for offset in range(g + 1):
            stem = f"gop{gop_idx:02d}_frame{offset:02d}"
            init_frame = clip_frame(initial[offset])
            deep_frame = clip_frame(deep[offset])
            report.save_frame_png(init_frame, out_dir / f"{stem}_initial.png")
            report.save_frame_png(deep_frame, out_dir / f"{stem}_deep.png")
            if reference is not None:
                src_index = gop_idx * g + offset
                if src_index >= len(reference):
                    raise DataError(
                        f"reference sequence too short: frame {src_index} missing"
                    )
                target = reference[src_index]
                rows.append(
                    FrameRecord(
                        sequence=Path(args.archive).stem,
                        frame_index=src_index,
                        frame_type="key" if offset in (0, g) else "nonkey",
                        psnr_db=psnr(deep_frame, target),
                        ssim=ssim(deep_frame, target),
                    )
                )
    print(f"decoded {len(gop_groups)} GOPs into {out_dir}")
    if reference is not None:
        metric_report = MetricReport(rows=rows, metadata={"archive": str(args.archive)})
        csv_path = report.write_metric_csv(metric_report, out_dir / "metrics.csv")
        report.write_metric_json(metric_report, out_dir / "metrics.json")
        report.render_eval_figures(metric_report, out_dir)
        agg = metric_report.aggregate("all")
        print(f"metrics: {csv_path}")
        print(f"mean PSNR {agg['psnr_db']:.2f} dB, mean SSIM {agg['ssim']:.4f}")
    return 0


def cmd_eval(args) -> int:
    sequences = _load_sequences_arg(args.sequences, args.width or 0, args.height or 0)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    frame_sink = None
    if args.dump_frames:
        dump_dir = out_dir / "frames"

        def frame_sink(name, index, initial, deep):
            report.save_frame_png(deep, dump_dir / f"{name}_frame{index:02d}_deep.png")

    metric_report = evaluate(args.checkpoint, sequences, gops=args.gops, frame_sink=frame_sink)
    metric_report.metadata["frames_mode"] = args.frames
    csv_path = report.write_metric_csv(metric_report, out_dir / "report.csv")
    json_path = report.write_metric_json(metric_report, out_dir / "report.json")
    figures = report.render_eval_figures(metric_report, out_dir)

    mode = args.frames
    print(f"{'sequence':<20}{'psnr_db':>10}{'ssim':>10}")
    for name, agg in metric_report.per_sequence(mode).items():
        print(f"{name:<20}{agg['psnr_db']:>10.2f}{agg['ssim']:>10.4f}")
    agg = metric_report.aggregate(mode)
    print(f"{'average':<20}{agg['psnr_db']:>10.2f}{agg['ssim']:>10.4f}")
    print(f"report: {csv_path}, {json_path}")
    print("figures: " + ", ".join(str(p) for p in figures))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hitvcs",
        description="Learned block-based video compressive sensing codec",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train a model end to end")
    p_train.add_argument("--config", help="INI run config; flags override it")
    p_train.add_argument("--data", help="training sequence dir/.yuv, or dir of sequence dirs")
    p_train.add_argument("--out", help="output directory")
    p_train.add_argument("--epochs", type=int)
    p_train.add_argument("--batch-gops", type=int, dest="batch_gops")
    p_train.add_argument("--lr", type=float)
    p_train.add_argument("--seed", type=int)
    p_train.add_argument("--alpha-k", type=float, dest="alpha_k")
    p_train.add_argument("--alpha-n", type=float, dest="alpha_n")
    p_train.add_argument("--gop", type=int)
    p_train.add_argument("--block", type=int)
    p_train.add_argument("--scales", type=int)
    p_train.add_argument("--channels", type=int)
    p_train.add_argument("--blocks", type=int, help="residual blocks per scale")
    p_train.add_argument("--crop", type=int)
    p_train.add_argument("--width", type=int, help="frame width for .yuv input")
    p_train.add_argument("--height", type=int, help="frame height for .yuv input")
    p_train.add_argument("--no-hfim", action="store_true", dest="no_hfim")
    p_train.add_argument("--no-hffm", action="store_true", dest="no_hffm")
    p_train.set_defaults(func=cmd_train)

    p_comp = sub.add_parser("compress", help="sample frames into a measurement archive")
    p_comp.add_argument("--checkpoint", required=True)
    p_comp.add_argument("--frames-in", required=True, dest="frames_in")
    p_comp.add_argument("--out", required=True)
    p_comp.add_argument("--gops", type=int, help="compress only the first N GOPs")
    p_comp.add_argument("--width", type=int)
    p_comp.add_argument("--height", type=int)
    p_comp.set_defaults(func=cmd_compress)

    p_dec = sub.add_parser("decompress", help="reconstruct frames from an archive")
    p_dec.add_argument("--checkpoint", required=True)
    p_dec.add_argument("--archive", required=True)
    p_dec.add_argument("--out", required=True)
    p_dec.add_argument("--reference", help="ground-truth sequence for metrics")
    p_dec.add_argument("--width", type=int)
    p_dec.add_argument("--height", type=int)
    p_dec.set_defaults(func=cmd_decompress)

    p_eval = sub.add_parser("eval", help="run the two-GOP evaluation protocol")
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("sequences", nargs="+", help="sequence dirs or .yuv files")
    p_eval.add_argument("--out", default="eval_out")
    p_eval.add_argument("--frames", choices=("all", "nonkey"), default="all")
    p_eval.add_argument("--gops", type=int, default=2)
    p_eval.add_argument("--width", type=int)
    p_eval.add_argument("--height", type=int)
    p_eval.add_argument("--dump-frames", action="store_true", dest="dump_frames")
    p_eval.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except NanLossError as exc:
        print(f"training aborted: {exc}", file=sys.stderr)
        return 4
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


def entrypoint():
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
