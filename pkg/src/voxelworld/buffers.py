"""Guidance buffers: render the voxel world along a camera trajectory into
per-frame semantic, coordinate, depth, instance-id, and mid-ground images.

Rays traverse the sparse grid with an Amanatides-Woo style DDA, run in
lockstep over all pixels. Dynamic objects are stored as canonical grids and
raycast in their own frame (rays are rigidly transformed), so no resampling
of rotated voxels ever happens; the nearest hit across all sources wins.

Coordinate buffer: hit voxel world centers are expressed relative to the
centroid of the window's camera positions, divided by a fixed normalization
length, and clamped to [-1, 1]. A static voxel seen from any frame of the
window therefore maps to the same buffer value.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import imageio
from .geometry import RigidPose
from .grid import SparseVoxelGrid, VoxelCoord, pack_coords
from .labels import DEFAULT_PALETTE, VEHICLE_LABELS, Palette, SemanticLabel

COORD_NORM_M = 100.0
DEFAULT_WINDOW = 25


@dataclass(frozen=True)
class Camera:
    """Pinhole camera: x right, y down, z forward; pose maps camera to world."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    rotation: np.ndarray
    position: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=np.float64))
        object.__setattr__(self, "position", np.asarray(self.position, dtype=np.float64))
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise ValueError("principal point must lie inside the image")
        if np.max(np.abs(self.rotation @ self.rotation.T - np.eye(3))) > 1e-6:
            raise ValueError("camera rotation must be orthonormal")

    def ray_directions(self) -> np.ndarray:
        """(h, w, 3) unit world directions through pixel centers."""
        u = (np.arange(self.width) + 0.5 - self.cx) / self.fx
        v = (np.arange(self.height) + 0.5 - self.cy) / self.fy
        uu, vv = np.meshgrid(u, v)
        d = np.stack([uu, vv, np.ones_like(uu)], axis=-1)
        d /= np.linalg.norm(d, axis=-1, keepdims=True)
        return d @ self.rotation.T

    def look_at(self) -> np.ndarray:
        return self.rotation[:, 2]

    def world_to_camera(self, points: np.ndarray) -> np.ndarray:
        return (np.asarray(points) - self.position) @ self.rotation

    def to_json(self) -> dict:
        return {
            "fx": self.fx,
            "fy": self.fy,
            "cx": self.cx,
            "cy": self.cy,
            "width": self.width,
            "height": self.height,
            "rotation": self.rotation.tolist(),
            "position": self.position.tolist(),
        }

    @classmethod
    def from_json(cls, d: dict) -> "Camera":
        return cls(
            float(d["fx"]),
            float(d["fy"]),
            float(d["cx"]),
            float(d["cy"]),
            int(d["width"]),
            int(d["height"]),
            np.asarray(d["rotation"], dtype=np.float64),
            np.asarray(d["position"], dtype=np.float64),
        )


@dataclass(frozen=True)
class Trajectory:
    cameras: tuple[Camera, ...]
    times: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "cameras", tuple(self.cameras))
        object.__setattr__(self, "times", np.asarray(self.times, dtype=np.float64))
        if len(self.cameras) < 1 or len(self.cameras) != len(self.times):
            raise ValueError("trajectory needs one camera per timestamp")
        if len(self.times) > 1 and not np.all(np.diff(self.times) > 0):
            raise ValueError("timestamps must strictly increase")

    def __len__(self) -> int:
        return len(self.cameras)

    def save(self, path) -> None:
        Path(path).write_text(self.to_json_str())

    def to_json_str(self) -> str:
        cam0 = self.cameras[0]
        doc = {
            "version": 1,
            "camera": {
                "fx": cam0.fx,
                "fy": cam0.fy,
                "cx": cam0.cx,
                "cy": cam0.cy,
                "width": cam0.width,
                "height": cam0.height,
            },
            "frames": [
                {
                    "time": float(t),
                    "position": cam.position.tolist(),
                    "rotation": cam.rotation.tolist(),
                }
                for t, cam in zip(self.times, self.cameras)
            ],
        }
        return json.dumps(doc, sort_keys=True, indent=1)

    @classmethod
    def load(cls, path) -> "Trajectory":
        return cls.from_json_str(Path(path).read_text())

    @classmethod
    def from_json_str(cls, text: str) -> "Trajectory":
        doc = json.loads(text)
        intr = doc["camera"]
        cams = []
        times = []
        for fr in doc["frames"]:
            cams.append(
                Camera(
                    fx=float(intr["fx"]),
                    fy=float(intr["fy"]),
                    cx=float(intr["cx"]),
                    cy=float(intr["cy"]),
                    width=int(intr["width"]),
                    height=int(intr["height"]),
                    rotation=np.asarray(fr["rotation"], dtype=np.float64),
                    position=np.asarray(fr["position"], dtype=np.float64),
                )
            )
            times.append(float(fr["time"]))
        return cls(tuple(cams), np.asarray(times))

    def with_intrinsics(self, fx, fy, cx, cy, width, height) -> "Trajectory":
        cams = tuple(
            Camera(fx, fy, cx, cy, width, height, c.rotation, c.position) for c in self.cameras
        )
        return Trajectory(cams, self.times)


@dataclass(frozen=True)
class GuidanceBufferSet:
    semantic: np.ndarray  # (h, w, 3) float32 in [-1, 1]
    coordinate: np.ndarray  # (h, w, 3) float32 in [-1, 1]
    depth: np.ndarray  # (h, w) float32 camera-z meters, 0 = no hit
    instance: np.ndarray  # (h, w) int32, -1 = none
    midground: np.ndarray  # (h, w) bool


# -- DDA raycasting --------------------------------------------------------------


MACRO_FACTOR = 8
_KEY_UNIT = np.array([1 << 42, 1 << 21, 1], dtype=np.int64)


def _clip_rays_to_box(o, d, lo, hi, max_range):
    """Slab clip; returns (active, t_enter, t_hi)."""
    with np.errstate(divide="ignore", invalid="ignore"):
        ta = (lo - o) / d
        tb = (hi - o) / d
    moving = d != 0
    t_lo = np.where(moving, np.minimum(ta, tb), -np.inf).max(axis=1)
    t_hi = np.where(moving, np.maximum(ta, tb), np.inf).min(axis=1)
    parallel_ok = np.all(moving | ((o >= lo) & (o <= hi)), axis=1)
    t_enter = np.maximum(t_lo, 0.0)
    active = parallel_ok & (t_hi >= t_enter) & (t_enter <= max_range)
    return active, t_enter, t_hi


def _init_stepping(o, d, t_start, origin, size, box_lo, box_hi):
    """DDA state at the points o + t_start*d, clamped into [box_lo, box_hi]."""
    p = o + t_start[:, None] * d
    cell = np.clip(np.floor((p - origin) / size).astype(np.int64), box_lo, box_hi)
    step = np.sign(d).astype(np.int64)
    moving = d != 0
    with np.errstate(divide="ignore", invalid="ignore"):
        t_delta = np.where(moving, size / np.abs(d), np.inf)
        bound = origin + (cell + (step > 0)) * size
        t_next = np.where(moving, (bound - o) / d, np.inf)
    return cell, step, t_next, t_delta


def _exact_entry(grid, o, d, ray_ids, cell_ids):
    """Slab-test entry distance of rays against the given cells, clamped >= 0."""
    lows = grid.origin + cell_ids * grid.voxel_size
    with np.errstate(divide="ignore", invalid="ignore"):
        u = (lows - o[ray_ids]) / d[ray_ids]
        v = (lows + grid.voxel_size - o[ray_ids]) / d[ray_ids]
    tmin = np.where(d[ray_ids] != 0, np.minimum(u, v), -np.inf).max(axis=1)
    return np.maximum(tmin, 0.0)


def _raycast_single_level(grid, o, d, max_range, hit, t_out):
    cmin, cmax = grid.index_bounds()
    s = grid.voxel_size
    active, t_enter, t_hi = _clip_rays_to_box(
        o, d, grid.origin + cmin * s, grid.origin + (cmax + 1) * s, max_range
    )
    if not active.any():
        return
    limit = np.minimum(t_hi, max_range)

    # compacted per-ray working state; keys advance incrementally as cells step
    ids = np.flatnonzero(active)
    w_cell, w_step, w_tnext, w_tdelta = (
        a[ids] for a in _init_stepping(o, d, t_enter, grid.origin, s, cmin, cmax)
    )
    w_key = pack_coords(w_cell)
    w_key_step = w_step * _KEY_UNIT
    w_limit = limit[ids]
    w_done = np.zeros(len(ids), dtype=bool)

    def record_hits(mask, found):
        hit[ids[mask]] = found[mask]
        t_out[ids[mask]] = _exact_entry(grid, o, d, ids[mask], w_cell[mask])

    found = grid.lookup_keys(w_key)
    got = found >= 0
    if got.any():
        record_hits(got, found)
        w_done |= got

    n_active = int((~w_done).sum())
    max_iters = int(np.sum(cmax - cmin + 1)) + 3
    for _ in range(max_iters):
        if n_active == 0:
            break
        axis = np.argmin(w_tnext, axis=1)
        r = np.arange(len(ids))
        newly_dead = ~w_done & (w_tnext[r, axis] > w_limit)
        if newly_dead.any():
            w_done |= newly_dead
            n_active -= int(newly_dead.sum())
            if n_active == 0:
                break
        w_cell[r, axis] += w_step[r, axis]
        w_key += w_key_step[r, axis]
        exited = ~w_done & ((w_cell[r, axis] < cmin[axis]) | (w_cell[r, axis] > cmax[axis]))
        w_tnext[r, axis] += w_tdelta[r, axis]
        if exited.any():
            w_done |= exited
            n_active -= int(exited.sum())
            if n_active == 0:
                break
        found = grid.lookup_keys(w_key)
        got = (found >= 0) & ~w_done
        if got.any():
            record_hits(got, found)
            w_done |= got
            n_active -= int(got.sum())
        if n_active < 0.75 * len(ids):
            keep = ~w_done
            ids, w_cell, w_step, w_key, w_key_step, w_tnext, w_tdelta, w_limit, w_done = (
                a[keep]
                for a in (ids, w_cell, w_step, w_key, w_key_step, w_tnext, w_tdelta, w_limit, w_done)
            )


def _fine_march_within(grid, o, d, ray_ids, t_start, t_end, macro_cell):
    """Contiguous fine march from t_start until past t_end; first hit wins.

    The march is only ever launched where a macro cell was entered, so it
    terminates within ~3 * MACRO_FACTOR crossings. The start cell is clamped
    into the entered macro cell's fine range, so edge macro cells that stick
    out past the grid bounds cannot shift rays onto cells they never cross.
    Returns (found_mask, found_idx, entry_t) aligned with ray_ids.
    """
    n = len(ray_ids)
    found_idx = np.full(n, -1, dtype=np.int64)
    entry_t = np.zeros(n)
    if n == 0:
        return found_idx >= 0, found_idx, entry_t
    s = grid.voxel_size
    box_lo = macro_cell * MACRO_FACTOR
    box_hi = box_lo + (MACRO_FACTOR - 1)
    cell, step, t_next, t_delta = _init_stepping(
        o[ray_ids], d[ray_ids], t_start, grid.origin, s, box_lo, box_hi
    )
    key = pack_coords(cell)
    key_step = step * _KEY_UNIT
    done = np.zeros(n, dtype=bool)

    found = grid.lookup_keys(key)
    got = found >= 0
    if got.any():
        found_idx[got] = found[got]
        entry_t[got] = _exact_entry(grid, o, d, ray_ids[got], cell[got])
        done |= got

    for _ in range(3 * MACRO_FACTOR + 2):
        if done.all():
            break
        axis = np.argmin(t_next, axis=1)
        r = np.arange(n)
        done |= t_next[r, axis] > t_end
        cell[r, axis] += step[r, axis]
        key += key_step[r, axis]
        t_next[r, axis] += t_delta[r, axis]
        found = grid.lookup_keys(key)
        got = (found >= 0) & ~done
        if got.any():
            found_idx[got] = found[got]
            entry_t[got] = _exact_entry(grid, o, d, ray_ids[got], cell[got])
            done |= got
    return found_idx >= 0, found_idx, entry_t


def _raycast_two_level(grid, o, d, max_range, hit, t_out):
    """Macro-cell DDA with empty-space skipping; occupied macro cells trigger
    a bounded fine march. Hit results are identical to the single-level path."""
    m = MACRO_FACTOR
    macro_keys = grid.macro_keys(m)
    cmin, cmax = grid.index_bounds()
    mmin = np.floor_divide(cmin, m)
    mmax = np.floor_divide(cmax, m)
    ms = grid.voxel_size * m
    active, t_enter, t_hi = _clip_rays_to_box(
        o, d, grid.origin + mmin * ms, grid.origin + (mmax + 1) * ms, max_range
    )
    if not active.any():
        return
    limit = np.minimum(t_hi, max_range)

    ids = np.flatnonzero(active)
    w_cell, w_step, w_tnext, w_tdelta = (
        a[ids] for a in _init_stepping(o, d, t_enter, grid.origin, ms, mmin, mmax)
    )
    w_key = pack_coords(w_cell)
    w_key_step = w_step * _KEY_UNIT
    w_limit = limit[ids]
    w_entry = t_enter[ids]
    w_done = np.zeros(len(ids), dtype=bool)

    def lookup_macro(keys):
        pos = np.searchsorted(macro_keys, keys)
        ok = pos < len(macro_keys)
        out = np.zeros(len(keys), dtype=bool)
        out[ok] = macro_keys[pos[ok]] == keys[ok]
        return out

    def fine_resolve(mask):
        """Fine-march rays that just entered an occupied macro cell."""
        nonlocal w_done
        t_end = np.minimum(w_tnext[mask].min(axis=1), w_limit[mask])
        got, idx, ts = _fine_march_within(grid, o, d, ids[mask], w_entry[mask], t_end, w_cell[mask])
        if got.any():
            sub = np.flatnonzero(mask)[got]
            hit[ids[sub]] = idx[got]
            t_out[ids[sub]] = ts[got]
            w_done[sub] = True

    occupied = lookup_macro(w_key) & ~w_done
    if occupied.any():
        fine_resolve(occupied)

    n_active = int((~w_done).sum())
    max_iters = int(np.sum(mmax - mmin + 1)) + 3
    for _ in range(max_iters):
        if n_active == 0:
            break
        axis = np.argmin(w_tnext, axis=1)
        r = np.arange(len(ids))
        newly_dead = ~w_done & (w_tnext[r, axis] > w_limit)
        if newly_dead.any():
            w_done |= newly_dead
            n_active -= int(newly_dead.sum())
            if n_active == 0:
                break
        w_entry = np.where(w_done, w_entry, w_tnext[r, axis])
        w_cell[r, axis] += w_step[r, axis]
        w_key += w_key_step[r, axis]
        exited = ~w_done & ((w_cell[r, axis] < mmin[axis]) | (w_cell[r, axis] > mmax[axis]))
        w_tnext[r, axis] += w_tdelta[r, axis]
        if exited.any():
            w_done |= exited
            n_active -= int(exited.sum())
            if n_active == 0:
                break
        occupied = lookup_macro(w_key) & ~w_done
        if occupied.any():
            fine_resolve(occupied)
            n_active = int((~w_done).sum())
        if n_active < 0.75 * len(ids):
            keep = ~w_done
            ids, w_cell, w_step, w_key, w_key_step, w_tnext, w_tdelta, w_limit, w_entry, w_done = (
                a[keep]
                for a in (
                    ids, w_cell, w_step, w_key, w_key_step, w_tnext, w_tdelta, w_limit, w_entry, w_done,
                )
            )


def raycast_batch(
    grid: SparseVoxelGrid,
    origins: np.ndarray,
    directions: np.ndarray,
    max_range: float,
    accel: str = "auto",
) -> tuple[np.ndarray, np.ndarray]:
    """First occupied cell per ray.

    Returns (cell_index, t_entry): `cell_index` indexes the grid's cell
    arrays (-1 = miss) and `t_entry` is the distance to the entry face along
    the normalized direction. Entry distances of hits are recomputed with an
    exact slab test against the hit cell, so they do not accumulate stepping
    error.

    `accel` picks the traversal: "none" marches fine cells only, "macro"
    skips empty space via the 8^3 super-cell index, "auto" chooses by grid
    size. Both produce identical results.
    """
    origins = np.asarray(origins, dtype=np.float64).reshape(-1, 3)
    directions = np.asarray(directions, dtype=np.float64).reshape(-1, 3)
    r = len(origins)
    hit = np.full(r, -1, dtype=np.int64)
    t_out = np.zeros(r, dtype=np.float64)
    if max_range <= 0:
        raise ValueError("max_range must be positive")
    if len(grid) == 0:
        return hit, t_out
    norms = np.linalg.norm(directions, axis=1)
    if np.any(norms == 0):
        raise ValueError("ray directions must be nonzero")
    d = directions / norms[:, None]
    o = origins

    if accel not in ("auto", "none", "macro"):
        raise ValueError("accel must be 'auto', 'none' or 'macro'")
    use_macro = accel == "macro" or (accel == "auto" and len(grid) >= 4096)
    if use_macro:
        _raycast_two_level(grid, o, d, max_range, hit, t_out)
    else:
        _raycast_single_level(grid, o, d, max_range, hit, t_out)
    return hit, t_out


def raycast_dda(
    grid: SparseVoxelGrid, origin, direction, max_range: float
) -> Optional[tuple[VoxelCoord, float]]:
    """Single-ray convenience wrapper; None on miss."""
    hit, t = raycast_batch(grid, np.asarray(origin)[None], np.asarray(direction)[None], max_range)
    if hit[0] < 0:
        return None
    coord = grid.coords()[hit[0]]
    return VoxelCoord(*map(int, coord)), float(t[0])


# -- rendering --------------------------------------------------------------------


def _cast_scene(
    world: SparseVoxelGrid,
    dynamic: Sequence[tuple[object, SparseVoxelGrid]],
    time: float,
    origins: np.ndarray,
    dirs: np.ndarray,
    max_range: float,
):
    """Nearest hit across the static world and every posed dynamic grid.

    Returns (labels, instances, centers, t) flat arrays; labels < 0 mark misses.
    """
    r = len(origins)
    best_t = np.full(r, np.inf)
    labels = np.full(r, -1, dtype=np.int32)
    instances = np.full(r, -1, dtype=np.int32)
    centers = np.zeros((r, 3), dtype=np.float64)

    def absorb(grid: SparseVoxelGrid, pose: RigidPose | None):
        nonlocal best_t, labels, instances, centers
        if pose is None:
            os_, ds_ = origins, dirs
        else:
            inv = pose.inverse()
            os_ = inv.apply(origins)
            ds_ = dirs @ inv.rotation.T
        idx, t = raycast_batch(grid, os_, ds_, max_range)
        got = (idx >= 0) & (t < best_t)
        if not got.any():
            return
        sel = idx[got]
        best_t[got] = t[got]
        labels[got] = grid.label_values[sel]
        instances[got] = grid.instance_values[sel]
        c = grid.centers_at(sel)
        centers[got] = c if pose is None else pose.apply(c)

    absorb(world, None)
    for track, canonical in dynamic:
        center, heading = track.pose_at(time)
        absorb(canonical, RigidPose.from_heading(center, heading))
    return labels, instances, centers, np.where(np.isfinite(best_t), best_t, 0.0)


def render_buffers(
    world: SparseVoxelGrid,
    dynamic: Sequence[tuple[object, SparseVoxelGrid]],
    trajectory: Trajectory,
    window: int = DEFAULT_WINDOW,
    *,
    k_norm: float = COORD_NORM_M,
    max_range: float = 300.0,
    palette: Palette = DEFAULT_PALETTE,
    sky_masks: Optional[Sequence[np.ndarray]] = None,
) -> list[GuidanceBufferSet]:
    """One GuidanceBufferSet per trajectory frame.

    Without explicit `sky_masks`, a miss whose ray points at or above the
    horizon counts as sky; mid-ground is every other miss.
    """
    label_colors = palette.label_table()
    vehicle_mask = np.zeros(len(label_colors), dtype=bool)
    for lab in VEHICLE_LABELS:
        vehicle_mask[lab.value] = True

    out = []
    for start in range(0, len(trajectory), window):
        frame_ids = range(start, min(start + window, len(trajectory)))
        centroid = np.mean([trajectory.cameras[f].position for f in frame_ids], axis=0)
        for f in frame_ids:
            cam = trajectory.cameras[f]
            h, w = cam.height, cam.width
            dirs = cam.ray_directions().reshape(-1, 3)
            origins = np.broadcast_to(cam.position, dirs.shape)
            labels, instances, centers, t = _cast_scene(
                world, dynamic, float(trajectory.times[f]), origins, dirs, max_range
            )
            hit = labels >= 0

            semantic = np.empty((h * w, 3), dtype=np.float64)
            semantic[:] = label_colors[SemanticLabel.UNDEFINED.value]
            semantic[hit] = label_colors[labels[hit]]
            inst_px = hit & (instances >= 0) & vehicle_mask[np.clip(labels, 0, None)]
            if inst_px.any():
                semantic[inst_px] = np.stack(
                    [palette.instance_color(i) for i in instances[inst_px]]
                )
            semantic = (semantic * 2.0 - 1.0).astype(np.float32).reshape(h, w, 3)

            coordinate = np.zeros((h * w, 3), dtype=np.float64)
            coordinate[hit] = np.clip((centers[hit] - centroid) / k_norm, -1.0, 1.0)
            coordinate = coordinate.astype(np.float32).reshape(h, w, 3)

            depth = np.zeros(h * w, dtype=np.float64)
            depth[hit] = t[hit] * (dirs[hit] @ cam.look_at())
            depth = depth.astype(np.float32).reshape(h, w)

            instance = np.where(hit, instances, -1).astype(np.int32).reshape(h, w)

            miss = ~hit.reshape(h, w)
            if sky_masks is not None:
                sky = np.asarray(sky_masks[f], dtype=bool)
            else:
                up = dirs[:, 2].reshape(h, w) >= 0.0
                sky = miss & up
            midground = miss & ~sky

            out.append(GuidanceBufferSet(semantic, coordinate, depth, instance, midground))
    return out


def mid_ground_mask(buffers: GuidanceBufferSet, sky_mask: np.ndarray) -> np.ndarray:
    """Pixels covered by no voxel and not sky."""
    sky = np.asarray(sky_mask, dtype=bool)
    if sky.shape != buffers.depth.shape:
        raise ValueError("sky mask shape mismatch")
    return (buffers.depth == 0) & ~sky


def mask_depth_patches(
    depth: np.ndarray, patch: int = 16, p: float = 0.5, seed: int = 0
) -> np.ndarray:
    """Zero out non-overlapping patch x patch tiles independently with probability p."""
    if not (0.0 <= p <= 1.0):
        raise ValueError("p must lie in [0, 1]")
    z = np.array(depth, copy=True)
    h, w = z.shape
    ph = (h + patch - 1) // patch
    pw = (w + patch - 1) // patch
    rng = np.random.default_rng(seed)
    kill = rng.random((ph, pw)) < p
    for i, j in zip(*np.nonzero(kill)):
        z[i * patch : (i + 1) * patch, j * patch : (j + 1) * patch] = 0.0
    return z


# -- buffer file IO ----------------------------------------------------------------


def _to_u16(values: np.ndarray) -> np.ndarray:
    return np.round((np.clip(values, -1.0, 1.0) + 1.0) / 2.0 * 65535.0).astype(np.uint16)


def _from_u16(raw: np.ndarray) -> np.ndarray:
    return (raw.astype(np.float32) / 65535.0) * 2.0 - 1.0


def save_buffer_set(
    buffers: GuidanceBufferSet,
    out_dir,
    index: int,
    *,
    camera: Camera,
    time: float,
    window_index: int,
    k_norm: float = COORD_NORM_M,
    seed: int | None = None,
) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tag = f"{index:04d}"
    imageio.write_png(out / f"semantic_{tag}.png", _to_u16(buffers.semantic))
    imageio.write_png(out / f"coordinate_{tag}.png", _to_u16(buffers.coordinate))
    imageio.write_pfm(out / f"depth_{tag}.pfm", buffers.depth)
    if np.any(buffers.instance >= 65535):
        raise ValueError("instance ids above 65534 cannot be stored")
    imageio.write_png(out / f"instance_{tag}.png", (buffers.instance + 1).astype(np.uint16))
    imageio.write_png(out / f"midground_{tag}.png", buffers.midground.astype(np.uint8) * 255)
    meta = {
        "index": index,
        "time": time,
        "window": window_index,
        "k_norm": k_norm,
        "seed": seed,
        "camera": camera.to_json(),
        "encoding": {
            "semantic": "u16 png, value = round((x + 1) / 2 * 65535)",
            "coordinate": "u16 png, value = round((x + 1) / 2 * 65535)",
            "depth": "f32 pfm, meters, 0 = miss",
            "instance": "u16 png, value = instance_id + 1, 0 = none",
            "midground": "u8 png, 255 = mid-ground",
        },
    }
    (out / f"meta_{tag}.json").write_text(json.dumps(meta, sort_keys=True, indent=1))


def load_buffer_set(in_dir, index: int) -> tuple[GuidanceBufferSet, dict]:
    src = Path(in_dir)
    tag = f"{index:04d}"
    semantic = _from_u16(imageio.read_png(src / f"semantic_{tag}.png"))
    coordinate = _from_u16(imageio.read_png(src / f"coordinate_{tag}.png"))
    depth = imageio.read_pfm(src / f"depth_{tag}.pfm")
    instance = imageio.read_png(src / f"instance_{tag}.png").astype(np.int32) - 1
    midground = imageio.read_png(src / f"midground_{tag}.png") > 0
    meta = json.loads((src / f"meta_{tag}.json").read_text())
    return GuidanceBufferSet(semantic, coordinate, depth, instance, midground), meta


def buffer_frame_count(in_dir) -> int:
    return len(list(Path(in_dir).glob("meta_*.json")))
