"""Command-line entry point for the full training and authoring pipeline.

Subcommands mirror the pipeline stages: parse and cache motion data,
train the periodic autoencoder, export per-clip phase series, build the
training dataset, train the in-betweening network, generate transitions,
run the benchmark, and serve the authoring API.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np


def _load_clips(data_dir: str):
    from .data import load_clips

    clips = load_clips(data_dir)
    if not clips:
        sys.exit(f"no .bvh files found under {data_dir}")
    return clips


def _clip_features(clips, pae_path: str):
    from .features import assemble_features
    from .phase import export_phase_series, load_pae

    pae = load_pae(pae_path)
    out = {}
    for clip in clips:
        series = export_phase_series(pae, clip)
        out[clip.sequence] = assemble_features(
            clip, series.manifold, series.frequency, series.amplitude)
    return out


def cmd_train_pae(args):
    from .phase import PAEConfig, save_pae, train_pae, velocity_windows

    clips = _load_clips(args.data_dir)
    windows = np.concatenate(
        [velocity_windows(c, stride=args.stride) for c in clips])
    print(f"training on {windows.shape[0]} windows from {len(clips)} clips")
    model, history = train_pae(windows, epochs=args.epochs,
                               config=PAEConfig(), seed=args.seed, verbose=True)
    save_pae(model, args.out)
    print(f"saved {args.out} (final loss {history[-1]:.6f})")


def cmd_extract_phases(args):
    from .phase import export_phase_series, load_pae, save_phase_series

    pae = load_pae(args.pae)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    for clip in _load_clips(args.data_dir):
        series = export_phase_series(pae, clip)
        path = out_dir / f"{clip.sequence}.phase"
        save_phase_series(series, path)
        print(f"{clip.sequence}: {series.frame_count} frames -> {path}")


def cmd_extract_features(args):
    from .features import build_dataset, save_dataset

    feats = _clip_features(_load_clips(args.data_dir), args.pae)
    ds = build_dataset(list(feats.values()),
                       samples_per_frame=args.samples_per_frame,
                       rng=np.random.default_rng(args.seed))
    save_dataset(ds, args.out)
    print(f"dataset x {ds.x.shape} y {ds.y.shape} -> {args.out}")


def cmd_train(args):
    from .features import load_dataset
    from .network import MoEConfig, save_checkpoint, train

    ds = load_dataset(args.dataset)
    phase = ds.x_layout.slice("phase")
    gating_width = phase.stop - phase.start
    cfg = MoEConfig(input_width=ds.x_layout.width - gating_width,
                    output_width=ds.y_layout.width, gating_width=gating_width,
                    epochs=args.epochs, seed=args.seed, experts=args.experts,
                    hidden=args.hidden, gating_hidden=args.gating_hidden,
                    dropout=args.dropout)
    predictor, history = train(ds, cfg, verbose=True)
    save_checkpoint(predictor, args.out)
    print(f"saved {args.out} (final train loss {history['train_loss'][-1]:.6f})")


def _parse_keyframe(text: str):
    clip, _, frame = text.rpartition(":")
    if not clip:
        sys.exit(f"keyframe must be clip:frame, got {text!r}")
    return clip, int(frame)


def cmd_generate(args):
    from .data import write_bvh
    from .network import load_checkpoint
    from .runtime import Controls, generate_transition, state_from_clip, transition_to_clip

    predictor = load_checkpoint(args.checkpoint)
    feats = _clip_features(_load_clips(args.data_dir), args.pae)
    start_clip, start_frame = _parse_keyframe(args.start)
    target_clip, target_frame = _parse_keyframe(args.target)
    if start_clip not in feats or target_clip not in feats:
        sys.exit(f"unknown clip; have {sorted(feats)}")
    target = feats[target_clip].clip.pose(target_frame)
    state = state_from_clip(feats[start_clip], start_frame, target, args.duration)
    gen = generate_transition(predictor, state, Controls(tau=args.tau))
    for w in gen.warnings:
        print(f"warning: {w}")
    clip = transition_to_clip(gen, feats[start_clip].clip.skeleton)
    write_bvh(clip, args.out)
    print(f"{gen.frame_count} frames -> {args.out} "
          f"(end error {gen.end_position_error_cm:.2f} cm / "
          f"{gen.end_rotation_error_deg:.2f} deg)")


def cmd_bench(args):
    from .evalbench import position_stats, run_benchmark

    clips = _load_clips(args.data_dir)
    mean, std = position_stats(clips)
    lengths = tuple(int(v) for v in args.lengths.split(","))

    model_generate = None
    if args.checkpoint:
        if not args.pae:
            sys.exit("--pae is required when benchmarking a checkpoint")
        from .network import load_checkpoint
        from .runtime import generate_transition, state_from_clip

        predictor = load_checkpoint(args.checkpoint)
        feats = _clip_features(clips, args.pae)
        by_index = [feats[c.sequence] for c in clips]

        def model_generate(ci, start, length):
            cf = by_index[ci]
            target = cf.clip.pose(start + 1 + length)
            state = state_from_clip(cf, start, target, length / cf.clip.fps)
            gen = generate_transition(predictor, state)
            p = np.stack([f.positions for f in gen.frames])
            q = np.stack([f.rotations for f in gen.frames])
            return p, q

    report = run_benchmark(clips, lengths=lengths, pos_mean=mean, pos_std=std,
                           model_generate=model_generate, stride=args.stride,
                           seed=args.seed,
                           max_windows_per_length=args.max_windows)
    print(report.format_table())
    if args.out:
        Path(args.out).write_text(report.to_json())
        print(f"report -> {args.out}")


def cmd_serve(args):
    import uvicorn

    from .network import load_checkpoint
    from .service import AuthoringEngine, Store, create_app

    predictor = load_checkpoint(args.checkpoint)
    clips = _clip_features(_load_clips(args.data_dir), args.pae)
    engine = AuthoringEngine(predictor=predictor, clips=clips,
                             store=Store(args.store))
    uvicorn.run(create_app(engine), host=args.host, port=args.port)


def main(argv=None) -> None:
    parser = argparse.ArgumentParser(
        prog="inbetween",
        description="phase-manifold motion in-betweening pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    def common_data(p, pae=True):
        p.add_argument("--data-dir", required=True, help="directory of .bvh files")
        if pae:
            p.add_argument("--pae", required=True, help="trained phase model (.pt)")

    p = sub.add_parser("train-pae", help="train the periodic autoencoder")
    common_data(p, pae=False)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--stride", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="pae.pt")
    p.set_defaults(func=cmd_train_pae)

    p = sub.add_parser("extract-phases", help="export per-clip phase series")
    common_data(p)
    p.add_argument("--out", default="phases")
    p.set_defaults(func=cmd_extract_phases)

    p = sub.add_parser("extract-features", help="build the training dataset")
    common_data(p)
    p.add_argument("--samples-per-frame", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="dataset")
    p.set_defaults(func=cmd_extract_features)

    p = sub.add_parser("train", help="train the in-betweening network")
    p.add_argument("--dataset", required=True)
    p.add_argument("--epochs", type=int, default=150)
    p.add_argument("--experts", type=int, default=8)
    p.add_argument("--hidden", type=int, default=512)
    p.add_argument("--gating-hidden", type=int, default=128)
    p.add_argument("--dropout", type=float, default=0.3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="checkpoint.pt")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("generate", help="generate one transition to a BVH file")
    common_data(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--start", required=True, help="clip:frame")
    p.add_argument("--target", required=True, help="clip:frame")
    p.add_argument("--duration", type=float, default=1.0, help="seconds")
    p.add_argument("--tau", type=float, default=0.0)
    p.add_argument("--out", default="transition.bvh")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("bench", help="run the evaluation benchmark")
    common_data(p, pae=False)
    p.add_argument("--pae", default=None,
                   help="phase model, required with --checkpoint")
    p.add_argument("--checkpoint", default=None,
                   help="optional model; interpolation always runs")
    p.add_argument("--lengths", default="30,45,60,75,90,105,120")
    p.add_argument("--stride", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-windows", type=int, default=None)
    p.add_argument("--out", default=None, help="write JSON report here")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("serve", help="run the authoring service")
    common_data(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--store", default="authoring_store.json")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.set_defaults(func=cmd_serve)

    args = parser.parse_args(argv)
    args.func(args)


if __name__ == "__main__":
    main()
