"""Command-line pipeline driver.

Verbs: generate, outpaint, render-buffers, compose, lidar-sim, serve,
export-ply. Relative input paths resolve against $VOXELWORLD_DATA_ROOT when
it is set, else the current directory.

Exit codes: 0 success, 1 runtime failure, 2 bad configuration or usage.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from importlib import resources
from pathlib import Path

import numpy as np


def data_root() -> Path:
    return Path(os.environ.get("VOXELWORLD_DATA_ROOT", "."))


def _resolve(path: str) -> Path:
    p = Path(path)
    return p if p.is_absolute() else data_root() / p


def _parse_size(text: str) -> tuple[int, int]:
    w, h = text.lower().split("x")
    return int(w), int(h)


def cmd_generate(args) -> int:
    from .bundle import cli_generate

    config_path = _resolve(args.config)
    config = json.loads(config_path.read_text())
    if args.seed is not None:
        config["seed"] = args.seed
    out = cli_generate(config, _resolve(args.out), base_dir=config_path.parent)
    manifest = json.loads((out / "manifest.json").read_text())
    print(f"bundle written to {out} ({manifest['world_voxels']} voxels)")
    return 0


def cmd_outpaint(args) -> int:
    from .bundle import extend_bundle

    chunks = []
    for pair in args.chunks.split(";"):
        i, j = pair.split(",")
        chunks.append((int(i), int(j)))
    extend_bundle(_resolve(args.bundle), chunks)
    print(f"bundle {args.bundle} extended by {len(chunks)} chunk request(s)")
    return 0


def cmd_render_buffers(args) -> int:
    from .buffers import Trajectory, render_buffers, save_buffer_set
    from .bundle import canonical_grids_from_tracks, load_tracks, load_world

    bundle = _resolve(args.scene)
    world = load_world(bundle)
    tracks = load_tracks(bundle)
    dynamic = canonical_grids_from_tracks(tracks, world.voxel_size)
    trajectory = Trajectory.load(_resolve(args.trajectory))
    if args.size:
        w, h = _parse_size(args.size)
        cam0 = trajectory.cameras[0]
        sx, sy = w / cam0.width, h / cam0.height
        trajectory = trajectory.with_intrinsics(cam0.fx * sx, cam0.fy * sy, cam0.cx * sx, cam0.cy * sy, w, h)
    sets = render_buffers(
        world, dynamic, trajectory, window=args.frames, k_norm=args.k_norm, max_range=args.max_range
    )
    out = _resolve(args.out)
    for f, bufs in enumerate(sets):
        save_buffer_set(
            bufs,
            out,
            f,
            camera=trajectory.cameras[f],
            time=float(trajectory.times[f]),
            window_index=f // args.frames,
            k_norm=args.k_norm,
        )
    print(f"{len(sets)} buffer frames written to {out}")
    return 0


def cmd_compose(args) -> int:
    from . import imageio
    from .buffers import Camera, Trajectory, buffer_frame_count, load_buffer_set
    from .bundle import load_tracks, load_world
    from .gaussians import (
        ExternalFilePredictor,
        SkyModelParams,
        composite_scene,
        heuristic_attribute_predictor,
        save_scene,
    )

    bundle = _resolve(args.scene)
    world = load_world(bundle)
    tracks = load_tracks(bundle)
    buffers_dir = _resolve(args.buffers)
    count = buffer_frame_count(buffers_dir)
    if count == 0:
        raise ValueError(f"no buffer frames in {buffers_dir}")
    sets, cams, times = [], [], []
    for f in range(count):
        bufs, meta = load_buffer_set(buffers_dir, f)
        sets.append(bufs)
        cams.append(Camera.from_json(meta["camera"]))
        times.append(meta["time"])
    trajectory = Trajectory(tuple(cams), np.asarray(times))

    images_dir = _resolve(args.images)
    images = []
    for f in range(count):
        raw = imageio.read_png(images_dir / f"frame_{f:04d}.png")
        images.append(raw.astype(np.float64) / np.iinfo(raw.dtype).max)

    if args.predictor == "heuristic":
        predictor = heuristic_attribute_predictor
    elif args.predictor.startswith("external:"):
        predictor = ExternalFilePredictor(Path(args.predictor.split(":", 1)[1]))
    else:
        raise ValueError("predictor must be 'heuristic' or 'external:PATH'")

    sky = SkyModelParams.random(args.sky_seed) if args.sky_seed is not None else None
    scene = composite_scene(
        world, sets, images, trajectory, predictor, tracks,
        sky_params=sky, pixel_frame_stride=args.stride,
    )
    out = _resolve(args.out)
    save_scene(scene, out)
    n_obj = sum(len(o.canonical) for o in scene.objects)
    print(f"scene written to {out} ({len(scene.static)} static + {n_obj} object gaussians)")
    return 0


def _parse_pose(text: str):
    from .geometry import RigidPose, rot_z

    x, y, z, heading = (float(v) for v in text.split(","))
    return RigidPose(rot_z(heading), np.array([x, y, z]))


def cmd_lidar_sim(args) -> int:
    from .gaussians import load_scene
    from .lidar import LidarPattern, cast_lidar, save_point_cloud

    scene = load_scene(_resolve(args.scene))
    if args.pattern:
        pattern = LidarPattern.load(_resolve(args.pattern))
    else:
        with resources.as_file(resources.files("voxelworld.data") / "lidar_64beam.json") as p:
            pattern = LidarPattern.load(p)
    returns = cast_lidar(scene, _parse_pose(args.pose), args.time, pattern)
    save_point_cloud(returns, _resolve(args.out))
    print(f"{len(returns)} returns written to {args.out}")
    return 0


def cmd_export_ply(args) -> int:
    from .gaussians import load_scene, write_gaussian_ply

    scene = load_scene(_resolve(args.scene))
    posed, _ = scene.posed_at(args.time)
    write_gaussian_ply(posed, _resolve(args.out))
    print(f"{len(posed)} gaussians written to {args.out}")
    return 0


def cmd_serve(args) -> int:
    from .server import serve

    preview = _parse_size(args.preview_size) if args.preview_size else None
    server = serve(_resolve(args.bundle), args.host, args.port, preview_size=preview)
    host, port = server.address
    print(f"session service on {host}:{port}", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.shutdown()
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="voxelworld", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="run conditions -> outpaint -> decode into a bundle")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(fn=cmd_generate)

    p = sub.add_parser("outpaint", help="grow an existing bundle by more chunks")
    p.add_argument("--bundle", required=True)
    p.add_argument("--chunks", required=True, help="semicolon-separated i,j pairs, e.g. '1,0;1,1'")
    p.set_defaults(fn=cmd_outpaint)

    p = sub.add_parser("render-buffers", help="render guidance buffers along a trajectory")
    p.add_argument("--scene", required=True, help="bundle directory")
    p.add_argument("--trajectory", required=True)
    p.add_argument("--frames", type=int, default=25, help="window length")
    p.add_argument("--out", required=True)
    p.add_argument("--size", default=None, help="render size WxH (rescales intrinsics)")
    p.add_argument("--max-range", type=float, default=300.0)
    p.add_argument("--k-norm", type=float, default=100.0)
    p.set_defaults(fn=cmd_render_buffers)

    p = sub.add_parser("compose", help="compose a gaussian scene from buffers and images")
    p.add_argument("--scene", required=True, help="bundle directory")
    p.add_argument("--buffers", required=True)
    p.add_argument("--images", required=True)
    p.add_argument("--predictor", default="heuristic", help="heuristic | external:PATH")
    p.add_argument("--out", required=True)
    p.add_argument("--stride", type=int, default=4)
    p.add_argument("--sky-seed", type=int, default=None)
    p.set_defaults(fn=cmd_compose)

    p = sub.add_parser("lidar-sim", help="cast a lidar pattern against a gaussian scene")
    p.add_argument("--scene", required=True, help="gaussian scene directory")
    p.add_argument("--pose", required=True, help="x,y,z,heading")
    p.add_argument("--pattern", default=None)
    p.add_argument("--time", type=float, default=0.0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_lidar_sim)

    p = sub.add_parser("export-ply", help="flatten a posed scene into one ply")
    p.add_argument("--scene", required=True)
    p.add_argument("--time", type=float, default=0.0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_export_ply)

    p = sub.add_parser("serve", help="run the drive-session service on a bundle")
    p.add_argument("--bundle", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=0)
    p.add_argument("--preview-size", default=None, help="WxH, overrides bundle config")
    p.set_defaults(fn=cmd_serve)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    from .bundle import ConfigError

    try:
        return args.fn(args)
    except (ConfigError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
