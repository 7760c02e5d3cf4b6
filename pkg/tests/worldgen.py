"""Shared builders for small end-to-end fixtures."""

import json
from pathlib import Path

import numpy as np

from voxelworld.conditions import BoxTrack, HDMap, save_box_tracks


def write_tiny_inputs(root: Path) -> None:
    """A small closed road loop plus one vehicle track."""
    half = 4.0
    loop = [[-half, -half, 0.0], [half, -half, 0.0], [half, half, 0.0], [-half, half, 0.0], [-half, -half, 0.0]]
    line = [[-half, 0.0, 0.0], [half, 0.0, 0.0]]
    hd = HDMap((np.asarray(loop),), (np.asarray(line),))
    hd.save(root / "map.json")
    track = BoxTrack(
        instance_id=1,
        size=np.array([3.6, 1.8, 1.5]),
        times=np.array([0.0, 5.0]),
        centers=np.array([[-3.0, 0.9, 0.7], [3.0, 0.9, 0.7]]),
        headings=np.array([0.0, 0.0]),
    )
    save_box_tracks([track], root / "tracks.json")


def tiny_config(chunks=((0, 0),), seed=7, speed_cap=10.0) -> dict:
    return {
        "seed": seed,
        "hd_map": "map.json",
        "box_tracks": "tracks.json",
        "chunks": [list(c) for c in chunks],
        "frame": {"origin": [-6.4, -6.4, -6.4], "n": 8, "cell_size": 1.6},
        "stride_m": 6.4,
        "latent_channels": 4,
        "steps": 8,
        "denoiser": {"kind": "toy", "mu": 0.2, "sigma": 1.0},
        "decoder": {"kind": "toy", "upsample_factor": 2},
        "ego": {"position": [0.0, 0.0, 1.0], "heading": 0.0},
        "viewer": {
            "speed_cap_mps": speed_cap,
            "preview_width": 32,
            "preview_height": 24,
            "export_width": 64,
            "export_height": 48,
            "export_fx": 50.0,
            "export_fy": 50.0,
        },
    }


def build_tiny_bundle(root: Path, out_name="bundle", **kwargs) -> Path:
    from voxelworld.bundle import cli_generate

    root.mkdir(parents=True, exist_ok=True)
    write_tiny_inputs(root)
    cfg = tiny_config(**kwargs)
    (root / "config.json").write_text(json.dumps(cfg))
    return cli_generate(cfg, root / out_name, base_dir=root)
