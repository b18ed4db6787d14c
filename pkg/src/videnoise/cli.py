"""Command-line entry points.

Sigma is quoted on the 8-bit scale (as in the benchmark tables) and converted
internally; values above the trained range [0, 55] up to 75 are accepted with
a warning. Every run prints its resolved configuration to stderr before any
work starts. Exit codes: 0 ok, 2 usage, 3 data, 4 config, 5 training,
1 other package error.
"""

import argparse
import json
import os
import sys
from dataclasses import asdict

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .datasets import (
    SpatialDataset,
    TemporalDataset,
    build_temporal_samples,
    dataset_from_manifest,
    extract_spatial_samples,
)
from .errors import (
    ConfigError,
    DataError,
    StateError,
    TrainingError,
    VidenoiseError,
)
from .evaluation import run_benchmark
from .frameio import load_frame_dir, load_sequence_corpus, save_frame_dir
from .noise import add_awgn, sigma_from_8bit
from .pipeline import PipelineConfig, run_pipeline
from .training import TrainConfig, train_spatial, train_temporal

ENV_CKPT_DIR = "VIDENOISE_CKPT_DIR"
SIGMA_MAX = 75.0
SIGMA_TRAINED_MAX = 55.0


def _sigma8(text):
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"sigma must be a number, got {text!r}")
    if not 0.0 <= value <= SIGMA_MAX:
        raise argparse.ArgumentTypeError(
            f"sigma must be in [0, {SIGMA_MAX:g}] (8-bit scale), got {value:g}"
        )
    return value


def _sigma_list(text):
    return [_sigma8(part) for part in text.split(",") if part.strip()]


def _default_checkpoint(args_value, name):
    if args_value:
        return args_value
    env = os.environ.get(ENV_CKPT_DIR)
    if env:
        return os.path.join(env, f"{name}.npz")
    raise ConfigError(
        f"no --{name} checkpoint given and {ENV_CKPT_DIR} is not set"
    )


def _warn_sigma(sigma):
    if sigma > SIGMA_TRAINED_MAX:
        print(
            f"warning: sigma {sigma:g} is above the trained range "
            f"[0, {SIGMA_TRAINED_MAX:g}]; quality is not guaranteed",
            file=sys.stderr,
        )


def _print_config(args):
    resolved = {k: v for k, v in vars(args).items() if k != "func"}
    print("config: " + json.dumps(resolved, sort_keys=True, default=str),
          file=sys.stderr)


def _train_config(args):
    return TrainConfig(
        epochs=args.epochs,
        batch_size=args.batch,
        orthogonalize_until_epoch=args.ortho_until,
        sigma_range=tuple(args.sigma_range),
        seed=args.seed,
        per_pixel_loss=args.per_pixel_loss,
        checkpoint_dir=args.checkpoint_dir,
        log_path=args.log,
    )


def _cmd_add_noise(args):
    sequence = load_frame_dir(args.input)
    _warn_sigma(args.sigma)
    rng = np.random.default_rng(args.seed)
    noisy = add_awgn(sequence.frames, sigma_from_8bit(args.sigma), rng=rng)
    save_frame_dir(noisy, args.output)
    print(f"wrote {len(sequence)} noisy frames to {args.output}", file=sys.stderr)
    return 0


def _cmd_denoise(args):
    sequence = load_frame_dir(args.input)
    _warn_sigma(args.sigma)
    config = PipelineConfig(
        sigma=sigma_from_8bit(args.sigma),
        spatial=_default_checkpoint(args.spatial, "spatial"),
        temporal=_default_checkpoint(args.temporal, "temporal"),
        temporal_radius=args.temporal_radius,
        flow_backend=args.flow,
        workers=args.workers,
    )
    result = run_pipeline(sequence, config, progress=not args.quiet)
    save_frame_dir(result.sequence, args.output)
    stats = result.stats
    print(
        f"denoised {stats.frames} frames in {stats.total_seconds:.1f}s "
        f"(spatial {stats.spatial_seconds:.1f}s, flow {stats.flow_seconds:.1f}s, "
        f"temporal {stats.temporal_seconds:.1f}s)",
        file=sys.stderr,
    )
    return 0


def _cmd_train_spatial(args):
    if args.manifest:
        dataset = dataset_from_manifest(args.manifest)
        if not isinstance(dataset, SpatialDataset):
            raise ConfigError("train-spatial needs a spatial manifest")
    else:
        if not args.images:
            raise ConfigError("train-spatial needs --images or --manifest")
        dataset = SpatialDataset.from_samples(extract_spatial_samples(
            args.images, args.samples, sigma_range=tuple(args.sigma_range),
            seed=args.seed,
        ))
    config = _train_config(args)
    block, state = train_spatial(dataset, config, return_state=True)
    save_checkpoint(block, args.out, train_config=asdict(config),
                    extra={"steps": state.step, "final": True})
    print(
        f"trained spatial block for {state.step} steps; "
        f"final loss {state.loss_history[-1]:.6g}; saved to {args.out}",
        file=sys.stderr,
    )
    return 0


def _cmd_train_temporal(args):
    spatial = load_checkpoint(args.spatial)
    if args.manifest:
        dataset = dataset_from_manifest(args.manifest, spatial_params=spatial)
        if not isinstance(dataset, TemporalDataset):
            raise ConfigError("train-temporal needs a temporal manifest")
    else:
        if not args.sequences:
            raise ConfigError("train-temporal needs --sequences or --manifest")
        dataset = TemporalDataset.from_samples(build_temporal_samples(
            args.sequences, args.samples, sigma_range=tuple(args.sigma_range),
            spatial_params=spatial, backend=args.flow, seed=args.seed,
            temporal_radius=args.temporal_radius,
            crops_per_window=args.crops_per_window,
        ))
    config = _train_config(args)
    block, state = train_temporal(dataset, spatial, config, return_state=True)
    save_checkpoint(block, args.out, train_config=asdict(config),
                    extra={"steps": state.step, "final": True})
    print(
        f"trained temporal block for {state.step} steps; "
        f"final loss {state.loss_history[-1]:.6g}; saved to {args.out}",
        file=sys.stderr,
    )
    return 0


def _cmd_benchmark(args):
    testset = load_sequence_corpus(args.testset)
    for sigma in args.sigmas:
        _warn_sigma(sigma)
    config = PipelineConfig(
        sigma=0.0,
        spatial=_default_checkpoint(args.spatial, "spatial"),
        temporal=_default_checkpoint(args.temporal, "temporal"),
        temporal_radius=args.temporal_radius,
        flow_backend=args.flow,
        workers=args.workers,
    )
    report = run_benchmark(
        testset, args.sigmas, config, seed=args.seed,
        max_frames=args.max_frames, progress=not args.quiet,
        per_frame_mean=args.per_frame_mean,
    )
    text = report.render_text()
    print(text, end="")
    if args.out:
        report.to_json(args.out)
    if args.text:
        with open(args.text, "w") as f:
            f.write(text)
    return 0


def _add_common(parser):
    parser.add_argument("--seed", type=int, default=0, help="RNG seed")
    parser.add_argument("--quiet", action="store_true",
                        help="suppress progress reporting")


def _add_train_common(parser):
    parser.add_argument("--out", required=True, help="output checkpoint path")
    parser.add_argument("--samples", type=int, default=2000,
                        help="number of training samples to generate")
    parser.add_argument("--epochs", type=int, default=2)
    parser.add_argument("--batch", type=int, default=32)
    parser.add_argument("--sigma-range", type=float, nargs=2, default=(0.0, 55.0),
                        metavar=("LO", "HI"), help="training sigma range, 8-bit scale")
    parser.add_argument("--ortho-until", type=int, default=60,
                        help="apply kernel orthogonalization while epoch < N")
    parser.add_argument("--per-pixel-loss", action="store_true",
                        help="normalize the loss per pixel instead of per patch")
    parser.add_argument("--checkpoint-dir", default=None,
                        help="directory for per-epoch checkpoints")
    parser.add_argument("--log", default=None, help="JSONL training log path")
    parser.add_argument("--manifest", default=None,
                        help="dataset manifest file (overrides corpus flags)")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="videnoise",
        description="Two-stage video denoiser: spatial CNN, motion compensation, "
                    "temporal fusion.",
    )
    parser.add_argument("--config", default=None,
                        help="JSON file with default values for any flag")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("add-noise", help="corrupt a frame directory with AWGN")
    p.add_argument("--in", dest="input", required=True, help="input frame dir")
    p.add_argument("--out", dest="output", required=True, help="output frame dir")
    p.add_argument("--sigma", type=_sigma8, required=True,
                   help="noise std on the 8-bit scale")
    _add_common(p)
    p.set_defaults(func=_cmd_add_noise)

    p = sub.add_parser("denoise", help="denoise a frame directory")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", dest="output", required=True)
    p.add_argument("--sigma", type=_sigma8, required=True,
                   help="noise std of the input, 8-bit scale")
    p.add_argument("--spatial", default=None, help="spatial checkpoint "
                   f"(default ${ENV_CKPT_DIR}/spatial.npz)")
    p.add_argument("--temporal", default=None, help="temporal checkpoint "
                   f"(default ${ENV_CKPT_DIR}/temporal.npz)")
    p.add_argument("--flow", default="block", help="flow backend id")
    p.add_argument("--temporal-radius", "-T", type=int, default=2)
    p.add_argument("--workers", type=int, default=1)
    _add_common(p)
    p.set_defaults(func=_cmd_denoise)

    p = sub.add_parser("train-spatial", help="train the spatial block")
    p.add_argument("--images", default=None, help="directory of clean PNG images")
    _add_train_common(p)
    _add_common(p)
    p.set_defaults(func=_cmd_train_spatial)

    p = sub.add_parser("train-temporal", help="train the temporal block")
    p.add_argument("--sequences", default=None,
                   help="directory of clean frame directories")
    p.add_argument("--spatial", required=True, help="trained spatial checkpoint")
    p.add_argument("--flow", default="block")
    p.add_argument("--temporal-radius", "-T", type=int, default=2)
    p.add_argument("--crops-per-window", type=int, default=8,
                   help="co-located crops cut from each prepared window")
    _add_train_common(p)
    _add_common(p)
    p.set_defaults(func=_cmd_train_temporal)

    p = sub.add_parser("benchmark", help="corrupt/denoise/score a testset")
    p.add_argument("--testset", required=True,
                   help="directory of clean frame directories")
    p.add_argument("--sigmas", type=_sigma_list, required=True,
                   help="comma-separated sigmas, 8-bit scale")
    p.add_argument("--spatial", default=None)
    p.add_argument("--temporal", default=None)
    p.add_argument("--flow", default="block")
    p.add_argument("--temporal-radius", "-T", type=int, default=2)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--max-frames", type=int, default=85)
    p.add_argument("--per-frame-mean", action="store_true",
                   help="aggregate PSNR_seq as the mean of per-frame PSNRs")
    p.add_argument("--out", default=None, help="write JSON report here")
    p.add_argument("--text", default=None, help="write the text table here")
    _add_common(p)
    p.set_defaults(func=_cmd_benchmark)

    parser.command_parsers = dict(sub.choices)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        pre, _ = parser.parse_known_args(argv)
        if getattr(pre, "config", None):
            with open(pre.config) as f:
                defaults = {k.replace("-", "_"): v
                            for k, v in json.load(f).items()}
            parser.set_defaults(**defaults)
            for sub in parser.command_parsers.values():
                known = {a.dest for a in sub._actions}
                sub.set_defaults(**{k: v for k, v in defaults.items()
                                    if k in known})
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    _print_config(args)
    try:
        return args.func(args)
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except (ConfigError, StateError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 4
    except TrainingError as exc:
        print(f"training error: {exc}", file=sys.stderr)
        return 5
    except VidenoiseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
