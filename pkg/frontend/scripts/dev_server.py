"""Start the authoring service on a quickly-trained tiny model so the UI
and its integration tests have a real backend to talk to.

Usage: python3 dev_server.py [--port 8090] [--store PATH]
Prints "READY <port>" on stdout once the model is built and serving.
"""

import argparse
import sys
import tempfile
from pathlib import Path

import numpy as np
import uvicorn

sys.path.insert(0, str(Path(__file__).resolve().parents[2] / "src"))

from inbetween import features, network, service, synth  # noqa: E402


def analytic_phase(n_frames, channels=5, freq=1.25):
    """One sinusoid per channel: a stand-in for trained phase curves."""
    t = np.arange(n_frames) / 30.0
    theta = 2 * np.pi * freq * t[:, None] + np.linspace(0, np.pi, channels)[None, :]
    theta = np.arctan2(np.sin(theta), np.cos(theta))
    amp = np.full((n_frames, channels), 0.5)
    p = np.stack([amp * np.sin(theta), amp * np.cos(theta)], axis=-1).reshape(n_frames, -1)
    return p, np.full((n_frames, channels), freq), amp


def build_engine(store_path: Path) -> service.AuthoringEngine:
    clip = synth.make_walk_clip(n_frames=150)
    p, f, a = analytic_phase(clip.frame_count)
    feats = features.assemble_features(clip, p, f, a)
    ds = features.build_dataset([feats], rng=np.random.default_rng(3))
    cfg = network.MoEConfig(experts=2, hidden=32, gating_hidden=8,
                            dropout=0.0, epochs=2, seed=3)
    pred, _ = network.train(ds, cfg, validation_fraction=0.0)
    return service.AuthoringEngine(
        predictor=pred, clips={"walk": feats},
        store=service.Store(store_path))


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--port", type=int, default=8090)
    ap.add_argument("--store", type=Path,
                    default=Path(tempfile.mkdtemp()) / "store.json")
    args = ap.parse_args()

    app = service.create_app(build_engine(args.store))

    class Announce(uvicorn.Server):
        async def startup(self, sockets=None):
            await super().startup(sockets)
            print(f"READY {args.port}", flush=True)

    config = uvicorn.Config(app, host="127.0.0.1", port=args.port,
                            log_level="warning")
    Announce(config).run()


if __name__ == "__main__":
    main()
