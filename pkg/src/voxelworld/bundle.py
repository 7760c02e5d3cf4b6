"""Scene bundles: a manifest plus the blobs one pipeline run produces, written
so that a rerun with the same config is byte-identical.

Layout of a bundle directory:
    manifest.json            chunk layout, seeds, palette hash, blob hashes
    config.json              the exact (defaulted) generate config
    map.json / tracks.json   inputs copied into the bundle
    latents/chunk_<i>_<j>.f32(.json)   per-chunk latents
    world.ivxw               fused, decoded voxel world
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Sequence

import numpy as np

from .conditions import (
    BoxTrack,
    ChunkFrame,
    HDMap,
    build_conditions,
    load_box_tracks,
    save_box_tracks,
)
from .grid import SparseVoxelGrid, voxelize_box
from .geometry import OrientedBox
from .labels import DEFAULT_PALETTE, SemanticLabel
from .outpaint import (
    ChunkLayout,
    ExternalDenoiser,
    NoiseSchedule,
    ToyLinearGaussianDenoiser,
    decode_dense,
    load_latent,
    outpaint_scene,
    save_latent,
)

MANIFEST_VERSION = 1


class ConfigError(ValueError):
    pass


# preview defaults picked so one CPU core sustains ~10 preview frames/s
_VIEWER_DEFAULTS = {
    "wheelbase_m": 2.8,
    "speed_cap_mps": 20.0,
    "steer_cap_rad": 0.5,
    "tick_rate_hz": 10.0,
    "preview_width": 256,
    "preview_height": 144,
    "preview_max_range_m": 120.0,
    "export_width": 1024,
    "export_height": 576,
    "export_fx": 820.0,
    "export_fy": 820.0,
}

_DEFAULTS = {
    "seed": 0,
    "hd_map": None,
    "box_tracks": None,
    "box_time": 0.0,
    "chunks": [[0, 0]],
    "frame": {"origin": [-25.6, -25.6, -25.6], "n": 32, "cell_size": 1.6},
    "stride_m": 25.6,
    "latent_channels": 8,
    "steps": 100,
    "guidance_weight": 2.0,
    "denoiser": {"kind": "toy", "mu": 0.0, "sigma": 1.0},
    "decoder": {"kind": "toy", "upsample_factor": 8},
    "ego": {"position": [0.0, 0.0, 1.6], "heading": 0.0},
    "viewer": dict(_VIEWER_DEFAULTS),
}


def _merge_defaults(cfg: dict, defaults: dict, path: str) -> dict:
    out = dict(defaults)
    for key, value in cfg.items():
        if key not in defaults:
            raise ConfigError(f"unknown config key {path}{key}")
        if isinstance(defaults[key], dict) and defaults[key]:
            if not isinstance(value, dict):
                raise ConfigError(f"{path}{key} must be an object")
            out[key] = _merge_defaults(value, defaults[key], f"{path}{key}.")
        else:
            out[key] = value
    return out


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise ConfigError(msg)


def validate_config(cfg: dict) -> dict:
    """Apply defaults and check every numeric field; raises ConfigError."""
    _require(isinstance(cfg, dict), "config must be a JSON object")
    full = _merge_defaults(cfg, _DEFAULTS, "")
    _require(isinstance(full["seed"], int) and full["seed"] >= 0, "seed must be a non-negative integer")
    _require(isinstance(full["hd_map"], str), "hd_map must be a path string")
    _require(full["box_tracks"] is None or isinstance(full["box_tracks"], str), "box_tracks must be a path or null")
    chunks = full["chunks"]
    _require(
        isinstance(chunks, list)
        and len(chunks) > 0
        and all(isinstance(c, list) and len(c) == 2 and all(isinstance(v, int) for v in c) for c in chunks),
        "chunks must be a non-empty list of [i, j] integer pairs",
    )
    frame = full["frame"]
    _require(isinstance(frame["n"], int) and frame["n"] > 0, "frame.n must be a positive integer")
    _require(frame["cell_size"] > 0, "frame.cell_size must be positive")
    _require(len(frame["origin"]) == 3, "frame.origin must have 3 entries")
    _require(full["stride_m"] > 0, "stride_m must be positive")
    _require(isinstance(full["latent_channels"], int) and full["latent_channels"] >= 2, "latent_channels must be >= 2")
    _require(isinstance(full["steps"], int) and full["steps"] >= 1, "steps must be a positive integer")
    den = full["denoiser"]
    _require(den.get("kind") in ("toy", "external"), "denoiser.kind must be 'toy' or 'external'")
    if den["kind"] == "toy":
        den.setdefault("mu", 0.0)
        den.setdefault("sigma", 1.0)
        _require(den["sigma"] > 0, "denoiser.sigma must be positive")
    else:
        _require(
            isinstance(den.get("cmd"), list) and all(isinstance(s, str) for s in den["cmd"]),
            "denoiser.cmd must be a list of strings",
        )
    dec = full["decoder"]
    _require(dec.get("kind") == "toy", "decoder.kind must be 'toy'")
    dec.setdefault("upsample_factor", 8)
    _require(isinstance(dec["upsample_factor"], int) and dec["upsample_factor"] >= 1, "decoder.upsample_factor must be >= 1")
    _require(len(full["ego"]["position"]) == 3, "ego.position must have 3 entries")
    for key in ("wheelbase_m", "speed_cap_mps", "tick_rate_hz", "preview_width", "preview_height"):
        _require(full["viewer"][key] > 0, f"viewer.{key} must be positive")
    return full


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    h.update(path.read_bytes())
    return h.hexdigest()


def canonical_grids_from_tracks(
    tracks: Sequence[BoxTrack], voxel_size: float
) -> list[tuple[BoxTrack, SparseVoxelGrid]]:
    """Solid box stand-in geometry for each track, in its canonical frame."""
    out = []
    for track in tracks:
        grid = SparseVoxelGrid.empty((0.0, 0.0, 0.0), voxel_size)
        box = OrientedBox(np.zeros(3), track.size / 2.0, 0.0)
        grid = voxelize_box(grid, box, SemanticLabel.CAR, track.instance_id, min_fraction=0.25)
        out.append((track, grid))
    return out


def _make_denoiser(cfg: dict, schedule: NoiseSchedule):
    if cfg["kind"] == "toy":
        return ToyLinearGaussianDenoiser(schedule, mu=float(cfg["mu"]), sigma=float(cfg["sigma"]))
    return ExternalDenoiser(list(cfg["cmd"]))


def fuse_layout(layout: ChunkLayout, base_frame: ChunkFrame) -> tuple[np.ndarray, np.ndarray]:
    """Union of all chunk latents on one global lattice.

    Overlapping cells are written in placement order; outpainting guarantees
    they agree. Returns (values, world_origin).
    """
    stride_cells = int(round(layout.stride_m / base_frame.cell_size))
    n = base_frame.n
    indices = np.array(list(layout.chunks.keys()))
    lo = indices.min(axis=0)
    hi = indices.max(axis=0)
    gx = (hi[0] - lo[0]) * stride_cells + n
    gy = (hi[1] - lo[1]) * stride_cells + n
    channels = next(iter(layout.chunks.values())).channels
    fused = np.zeros((gx, gy, n, channels), dtype=np.float32)
    for index in layout.order:
        cube = layout.chunks[index]
        i0 = (index[0] - lo[0]) * stride_cells
        j0 = (index[1] - lo[1]) * stride_cells
        fused[i0 : i0 + n, j0 : j0 + n, :, :] = cube.values
    origin = base_frame.origin_array() + np.array(
        [lo[0] * layout.stride_m, lo[1] * layout.stride_m, 0.0]
    )
    return fused, origin


def cli_generate(config: dict, out_dir, base_dir=None) -> Path:
    """Run conditions -> outpaint -> decode and write the bundle. Deterministic:
    the same config produces byte-identical output."""
    cfg = validate_config(config)
    base = Path(base_dir) if base_dir else Path.cwd()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    hd_map = HDMap.load(base / cfg["hd_map"])
    tracks = load_box_tracks(base / cfg["box_tracks"]) if cfg["box_tracks"] else []

    schedule = NoiseSchedule.cosine()
    denoiser = _make_denoiser(cfg["denoiser"], schedule)
    base_frame = ChunkFrame(tuple(cfg["frame"]["origin"]), cfg["frame"]["n"], cfg["frame"]["cell_size"])

    def conditions_for(index, frame):
        return build_conditions(hd_map, tracks, cfg["box_time"], frame)

    layout = outpaint_scene(
        [tuple(c) for c in cfg["chunks"]],
        conditions_for,
        denoiser,
        schedule,
        base_frame=base_frame,
        stride_m=cfg["stride_m"],
        channels=cfg["latent_channels"],
        steps=cfg["steps"],
        guidance_weight=cfg["guidance_weight"],
        seed=cfg["seed"],
    )
    if isinstance(denoiser, ExternalDenoiser):
        denoiser.close()

    fused, world_origin = fuse_layout(layout, base_frame)
    world = decode_dense(fused, world_origin, base_frame.cell_size, cfg["decoder"]["upsample_factor"])

    (out / "latents").mkdir(exist_ok=True)
    blobs: dict[str, dict] = {}
    for index in layout.order:
        name = f"latents/chunk_{index[0]}_{index[1]}.f32"
        save_latent(layout.chunks[index], out / name, chunk_index=index, seed=cfg["seed"])
        blobs[name] = {"kind": "latent"}
        blobs[name + ".json"] = {"kind": "sidecar"}
    world.save(out / "world.ivxw")
    blobs["world.ivxw"] = {"kind": "grid"}
    hd_map.save(out / "map.json")
    blobs["map.json"] = {"kind": "hd_map"}
    save_box_tracks(tracks, out / "tracks.json")
    blobs["tracks.json"] = {"kind": "tracks"}
    (out / "config.json").write_text(json.dumps(cfg, sort_keys=True, indent=1))
    blobs["config.json"] = {"kind": "config"}

    for name, info in blobs.items():
        info["sha256"] = _sha256(out / name)
    manifest = {
        "version": MANIFEST_VERSION,
        "seed": cfg["seed"],
        "chunk_layout": {
            "indices": [list(i) for i in layout.order],
            "stride_m": layout.stride_m,
            "base_frame": base_frame.to_json(),
        },
        "frames": 0,
        "palette_hash": DEFAULT_PALETTE.digest(),
        "ego": cfg["ego"],
        "world_voxels": len(world),
        "blobs": blobs,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=1))
    return out


def load_layout(bundle_dir) -> tuple[ChunkLayout, ChunkFrame]:
    bundle = Path(bundle_dir)
    manifest = load_manifest(bundle)
    chunk_layout = manifest["chunk_layout"]
    base_frame = ChunkFrame.from_json(chunk_layout["base_frame"])
    order = tuple(tuple(i) for i in chunk_layout["indices"])
    chunks = {
        index: load_latent(bundle / f"latents/chunk_{index[0]}_{index[1]}.f32") for index in order
    }
    return (
        ChunkLayout(chunks, order, float(chunk_layout["stride_m"]), manifest["seed"]),
        base_frame,
    )


def extend_bundle(bundle_dir, extra_chunks: Sequence[tuple[int, int]]) -> Path:
    """Outpaint additional chunks into an existing bundle.

    Existing latents stay fixed on disk and constrain the new chunks; the
    fused world, manifest, and config are rewritten.
    """
    bundle = Path(bundle_dir)
    cfg = json.loads((bundle / "config.json").read_text())
    existing_layout, base_frame = load_layout(bundle)

    hd_map = HDMap.load(bundle / "map.json")
    tracks = load_box_tracks(bundle / "tracks.json")
    schedule = NoiseSchedule.cosine()
    denoiser = _make_denoiser(cfg["denoiser"], schedule)

    layout = outpaint_scene(
        [(int(i), int(j)) for i, j in extra_chunks],
        lambda index, frame: build_conditions(hd_map, tracks, cfg["box_time"], frame),
        denoiser,
        schedule,
        base_frame=base_frame,
        stride_m=existing_layout.stride_m,
        channels=cfg["latent_channels"],
        steps=cfg["steps"],
        guidance_weight=cfg["guidance_weight"],
        seed=cfg["seed"],
        preplaced=existing_layout,
    )
    if isinstance(denoiser, ExternalDenoiser):
        denoiser.close()

    manifest = load_manifest(bundle)
    blobs = manifest["blobs"]
    for index in layout.order:
        name = f"latents/chunk_{index[0]}_{index[1]}.f32"
        if not (bundle / name).exists():
            save_latent(layout.chunks[index], bundle / name, chunk_index=index, seed=cfg["seed"])
        blobs.setdefault(name, {"kind": "latent"})
        blobs.setdefault(name + ".json", {"kind": "sidecar"})
    fused, world_origin = fuse_layout(layout, base_frame)
    world = decode_dense(fused, world_origin, base_frame.cell_size, cfg["decoder"]["upsample_factor"])
    world.save(bundle / "world.ivxw")
    cfg["chunks"] = [list(i) for i in layout.order]
    (bundle / "config.json").write_text(json.dumps(cfg, sort_keys=True, indent=1))

    for name, info in blobs.items():
        info["sha256"] = _sha256(bundle / name)
    manifest["chunk_layout"]["indices"] = [list(i) for i in layout.order]
    manifest["world_voxels"] = len(world)
    (bundle / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=1))
    return bundle


def load_manifest(bundle_dir) -> dict:
    return json.loads((Path(bundle_dir) / "manifest.json").read_text())


def verify_bundle(bundle_dir) -> list[str]:
    """Names of blobs that are missing or fail their recorded hash."""
    bundle = Path(bundle_dir)
    manifest = load_manifest(bundle)
    bad = []
    for name, info in manifest["blobs"].items():
        path = bundle / name
        if not path.exists() or _sha256(path) != info["sha256"]:
            bad.append(name)
    return bad


def load_world(bundle_dir) -> SparseVoxelGrid:
    return SparseVoxelGrid.load(Path(bundle_dir) / "world.ivxw")


def load_tracks(bundle_dir) -> list[BoxTrack]:
    return load_box_tracks(Path(bundle_dir) / "tracks.json")
