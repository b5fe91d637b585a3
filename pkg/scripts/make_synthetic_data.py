#!/usr/bin/env python3
"""Write a small synthetic motion dataset (BVH) for pipeline demos."""

import argparse
from pathlib import Path

from inbetween import data, synth


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="data/synthetic", help="output directory")
    ap.add_argument("--frames", type=int, default=600, help="frames per clip")
    args = ap.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    clips = {
        "subject1_walk": synth.make_walk_clip(n_frames=args.frames),
        "subject1_walk_fast": synth.make_walk_clip(n_frames=args.frames, speed=1.4),
        "subject2_turn": synth.make_turn_clip(n_frames=max(120, args.frames // 4)),
        "subject5_walk": synth.make_walk_clip(n_frames=args.frames, heading=0.7),
    }
    for name, clip in clips.items():
        path = out / f"{name}.bvh"
        data.write_bvh(clip, path)
        print(f"{path}: {clip.frame_count} frames")


if __name__ == "__main__":
    main()
