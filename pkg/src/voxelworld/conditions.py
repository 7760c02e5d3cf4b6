"""Dense condition volumes for chunk generation, built from HD maps and
vehicle box tracks.

Five channels on an n^3 lattice:
    0  road edges   (binary; cell intersects any edge polyline segment)
    1  road lines   (binary; same for lane-line polylines)
    2  road surface (binary; fitted road plane passes through the cell and
                     the cell center lies in the 2D road region)
    3  sin(heading) |  of the box occupying more than half the cell;
    4  cos(heading) |  both zero where no box does

The heading pair is unit-norm wherever it is set. Overlapping boxes are
resolved by the larger occupied fraction, ties by the smaller instance id.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .geometry import OrientedBox, interpolate_pose
from .grid import box_cell_fractions, segment_cells

CHANNEL_NAMES = ("hd_edge", "hd_line", "road", "box_sin", "box_cos")

ROAD_DILATION_M = 3.5  # half of a two-lane width; used when edges do not close
PLANE_TILES = 4


class DegenerateGeometry(ValueError):
    """Not enough non-collinear geometry in the chunk to fit a road surface."""


@dataclass(frozen=True)
class ChunkFrame:
    """Placement of a dense n^3 lattice in the world: corner origin + cell size (m)."""

    origin: tuple[float, float, float] = (0.0, 0.0, 0.0)
    n: int = 32
    cell_size: float = 1.6

    @property
    def extent(self) -> float:
        return self.n * self.cell_size

    def origin_array(self) -> np.ndarray:
        return np.asarray(self.origin, dtype=np.float64)

    def shifted(self, dx: float, dy: float) -> "ChunkFrame":
        ox, oy, oz = self.origin
        return ChunkFrame((ox + dx, oy + dy, oz), self.n, self.cell_size)

    def cell_centers_2d(self) -> tuple[np.ndarray, np.ndarray]:
        ox, oy, _ = self.origin
        xs = ox + (np.arange(self.n) + 0.5) * self.cell_size
        ys = oy + (np.arange(self.n) + 0.5) * self.cell_size
        return xs, ys

    def to_json(self) -> dict:
        return {"origin": list(self.origin), "n": self.n, "cell_size": self.cell_size}

    @classmethod
    def from_json(cls, d: Mapping) -> "ChunkFrame":
        return cls(tuple(float(v) for v in d["origin"]), int(d["n"]), float(d["cell_size"]))


@dataclass(frozen=True)
class HDMap:
    """Road-boundary and lane-line polylines, each an (m, 3) vertex array."""

    road_edges: tuple[np.ndarray, ...]
    road_lines: tuple[np.ndarray, ...]

    def __post_init__(self):
        edges = tuple(np.asarray(p, dtype=np.float64) for p in self.road_edges)
        lines = tuple(np.asarray(p, dtype=np.float64) for p in self.road_lines)
        for poly in edges + lines:
            if poly.ndim != 2 or poly.shape[1] != 3 or len(poly) < 2:
                raise ValueError("polylines need at least 2 vertices of 3 coordinates")
            if not np.all(np.isfinite(poly)):
                raise ValueError("polyline vertices must be finite")
        object.__setattr__(self, "road_edges", edges)
        object.__setattr__(self, "road_lines", lines)

    def all_polylines(self) -> tuple[np.ndarray, ...]:
        return self.road_edges + self.road_lines

    @classmethod
    def load(cls, path) -> "HDMap":
        doc = json.loads(Path(path).read_text())
        edges, lines = [], []
        for poly in doc["polylines"]:
            target = edges if poly["kind"] == "edge" else lines
            target.append(np.asarray(poly["vertices"], dtype=np.float64))
        return cls(tuple(edges), tuple(lines))

    def save(self, path) -> None:
        doc = {
            "polylines": [
                {"kind": "edge", "vertices": p.tolist()} for p in self.road_edges
            ]
            + [{"kind": "line", "vertices": p.tolist()} for p in self.road_lines]
        }
        Path(path).write_text(json.dumps(doc, sort_keys=True, indent=1))


@dataclass(frozen=True)
class BoxTrack:
    """One vehicle: footprint size plus a time-indexed pose track."""

    instance_id: int
    size: np.ndarray  # (length, width, height) meters
    times: np.ndarray
    centers: np.ndarray
    headings: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "size", np.asarray(self.size, dtype=np.float64))
        object.__setattr__(self, "times", np.asarray(self.times, dtype=np.float64))
        object.__setattr__(self, "centers", np.asarray(self.centers, dtype=np.float64).reshape(-1, 3))
        object.__setattr__(self, "headings", np.asarray(self.headings, dtype=np.float64))
        if self.instance_id < 0:
            raise ValueError("instance_id must be non-negative")
        if not np.all(self.size > 0):
            raise ValueError("box size must be positive")
        if len(self.times) == 0:
            raise ValueError("track needs at least one pose")
        if len(self.times) > 1 and not np.all(np.diff(self.times) > 0):
            raise ValueError("pose timestamps must strictly increase")

    def pose_at(self, t: float) -> tuple[np.ndarray, float]:
        return interpolate_pose(self.times, self.centers, self.headings, t)

    def box_at(self, t: float) -> OrientedBox:
        center, heading = self.pose_at(t)
        return OrientedBox(center, self.size / 2.0, heading)


def load_box_tracks(path) -> list[BoxTrack]:
    doc = json.loads(Path(path).read_text())
    tracks = []
    for rec in doc["tracks"]:
        poses = np.asarray(rec["poses"], dtype=np.float64).reshape(-1, 5)
        tracks.append(
            BoxTrack(
                instance_id=int(rec["id"]),
                size=np.asarray(rec["size"], dtype=np.float64),
                times=poses[:, 0],
                centers=poses[:, 1:4],
                headings=poses[:, 4],
            )
        )
    return tracks


def save_box_tracks(tracks: Sequence[BoxTrack], path) -> None:
    doc = {
        "tracks": [
            {
                "id": t.instance_id,
                "size": t.size.tolist(),
                "poses": np.column_stack([t.times, t.centers, t.headings]).tolist(),
            }
            for t in tracks
        ]
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True, indent=1))


@dataclass(frozen=True)
class ChannelVolume:
    """A few condition channels on a chunk lattice: values (n, n, n, c)."""

    values: np.ndarray
    frame: ChunkFrame

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        n = self.frame.n
        if v.shape[:3] != (n, n, n) or v.ndim != 4:
            raise ValueError("channel volume must be (n, n, n, c) on its frame")
        object.__setattr__(self, "values", v)


@dataclass(frozen=True)
class ConditionVolume:
    """The stacked five-channel condition cube."""

    values: np.ndarray
    frame: ChunkFrame

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        n = self.frame.n
        if v.shape != (n, n, n, len(CHANNEL_NAMES)):
            raise ValueError("condition volume must be (n, n, n, 5)")
        object.__setattr__(self, "values", v)

    def split(self) -> tuple[ChannelVolume, ChannelVolume, ChannelVolume]:
        return (
            ChannelVolume(self.values[..., 0:2], self.frame),
            ChannelVolume(self.values[..., 2:3], self.frame),
            ChannelVolume(self.values[..., 3:5], self.frame),
        )


def _rasterize_polylines(polylines, frame: ChunkFrame) -> np.ndarray:
    n = frame.n
    vol = np.zeros((n, n, n), dtype=np.float64)
    origin = frame.origin_array()
    for poly in polylines:
        for p0, p1 in zip(poly[:-1], poly[1:]):
            cells = segment_cells(p0, p1, origin, frame.cell_size)
            keep = np.all((cells >= 0) & (cells < n), axis=1)
            c = cells[keep]
            vol[c[:, 0], c[:, 1], c[:, 2]] = 1.0
    return vol


def build_hd_condition(hd_map: HDMap, frame: ChunkFrame) -> ChannelVolume:
    """Channel 0: road edges, channel 1: road lines; 1 where a segment
    intersects the cell box."""
    edges = _rasterize_polylines(hd_map.road_edges, frame)
    lines = _rasterize_polylines(hd_map.road_lines, frame)
    return ChannelVolume(np.stack([edges, lines], axis=-1), frame)


def fit_plane(points: np.ndarray) -> np.ndarray:
    """Least-squares plane z = a*x + b*y + c through (m, 3) points."""
    pts = np.asarray(points, dtype=np.float64)
    a = np.column_stack([pts[:, 0], pts[:, 1], np.ones(len(pts))])
    coeffs, *_ = np.linalg.lstsq(a, pts[:, 2], rcond=None)
    return coeffs


def _chunk_vertices(hd_map: HDMap, frame: ChunkFrame) -> np.ndarray:
    lo = frame.origin_array()
    hi = lo + frame.extent
    verts = [p[np.all((p >= lo) & (p <= hi), axis=1)] for p in hd_map.all_polylines()]
    verts = [v for v in verts if len(v)]
    return np.concatenate(verts, axis=0) if verts else np.empty((0, 3))


def _chain_edge_rings(edges: Sequence[np.ndarray], tol: float = 1e-6) -> list[np.ndarray]:
    """Close edge polylines into 2D rings: individually closed ones directly,
    the rest by greedy endpoint chaining. Unclosed leftovers yield no ring."""
    rings = []
    open_polys = []
    for poly in edges:
        p2 = poly[:, :2]
        if len(p2) >= 4 and np.linalg.norm(p2[0] - p2[-1]) <= tol:
            rings.append(p2[:-1])
        else:
            open_polys.append(p2)
    while open_polys:
        chain = [open_polys.pop(0)]
        extended = True
        while extended:
            extended = False
            tail = chain[-1][-1]
            for i, cand in enumerate(open_polys):
                if np.linalg.norm(cand[0] - tail) <= tol:
                    chain.append(open_polys.pop(i)[1:])
                    extended = True
                    break
                if np.linalg.norm(cand[-1] - tail) <= tol:
                    chain.append(open_polys.pop(i)[::-1][1:])
                    extended = True
                    break
        merged = np.concatenate(chain, axis=0)
        if len(merged) >= 4 and np.linalg.norm(merged[0] - merged[-1]) <= tol:
            rings.append(merged[:-1])
    return rings


def _points_in_rings(px: np.ndarray, py: np.ndarray, rings: list[np.ndarray]) -> np.ndarray:
    """Even-odd rule over the union of ring boundaries."""
    inside = np.zeros(px.shape, dtype=bool)
    for ring in rings:
        x0, y0 = ring[:, 0], ring[:, 1]
        x1, y1 = np.roll(x0, -1), np.roll(y0, -1)
        for ex0, ey0, ex1, ey1 in zip(x0, y0, x1, y1):
            crosses = (ey0 > py) != (ey1 > py)
            with np.errstate(divide="ignore", invalid="ignore"):
                xi = ex0 + (py - ey0) / (ey1 - ey0) * (ex1 - ex0)
            inside ^= crosses & (px < xi)
    return inside


def _distance_to_segments_2d(px, py, polylines) -> np.ndarray:
    best = np.full(px.shape, np.inf)
    p = np.stack([px, py], axis=-1)
    for poly in polylines:
        q = poly[:, :2]
        for a, b in zip(q[:-1], q[1:]):
            ab = b - a
            denom = float(ab @ ab)
            if denom == 0.0:
                t = np.zeros(px.shape)
            else:
                t = np.clip(((p - a) @ ab) / denom, 0.0, 1.0)
            closest = a + t[..., None] * ab
            best = np.minimum(best, np.linalg.norm(p - closest, axis=-1))
    return best


def fit_road_surface(hd_map: HDMap, frame: ChunkFrame) -> ChannelVolume:
    """Road-surface occupancy from piecewise plane fits.

    The chunk footprint is divided into PLANE_TILES^2 tiles; each tile with at
    least 3 vertices gets its own least-squares plane, others fall back to the
    chunk-global plane. A cell is marked when its center's (x, y) lies in the
    road region and the tile plane passes through the cell's z-span.
    """
    verts = _chunk_vertices(hd_map, frame)
    if len(verts) < 3:
        raise DegenerateGeometry("need at least 3 polyline vertices inside the chunk")
    centered = verts - verts.mean(axis=0)
    svals = np.linalg.svd(centered, compute_uv=False)
    if svals[1] <= 1e-9 * max(svals[0], 1.0):
        raise DegenerateGeometry("all polyline vertices are collinear")

    global_plane = fit_plane(verts)
    tile_size = frame.extent / PLANE_TILES
    ox, oy, oz = frame.origin
    tile_planes = np.tile(global_plane, (PLANE_TILES, PLANE_TILES, 1))
    ti = np.clip(((verts[:, 0] - ox) // tile_size).astype(int), 0, PLANE_TILES - 1)
    tj = np.clip(((verts[:, 1] - oy) // tile_size).astype(int), 0, PLANE_TILES - 1)
    for i in range(PLANE_TILES):
        for j in range(PLANE_TILES):
            sel = (ti == i) & (tj == j)
            if np.count_nonzero(sel) >= 3:
                tile_planes[i, j] = fit_plane(verts[sel])

    n = frame.n
    xs, ys = frame.cell_centers_2d()
    px, py = np.meshgrid(xs, ys, indexing="ij")

    rings = _chain_edge_rings(hd_map.road_edges)
    if rings:
        region = _points_in_rings(px, py, rings)
    else:
        region = _distance_to_segments_2d(px, py, hd_map.all_polylines()) <= ROAD_DILATION_M

    ci = np.clip(((px - ox) // tile_size).astype(int), 0, PLANE_TILES - 1)
    cj = np.clip(((py - oy) // tile_size).astype(int), 0, PLANE_TILES - 1)
    planes = tile_planes[ci, cj]
    zp = planes[..., 0] * px + planes[..., 1] * py + planes[..., 2]
    k = np.floor((zp - oz) / frame.cell_size).astype(np.int64)

    vol = np.zeros((n, n, n), dtype=np.float64)
    ok = region & (k >= 0) & (k < n)
    ii, jj = np.nonzero(ok)
    vol[ii, jj, k[ok]] = 1.0
    return ChannelVolume(vol[..., None], frame)


def build_box_condition(tracks: Sequence[BoxTrack], t: float, frame: ChunkFrame) -> ChannelVolume:
    """[sin, cos] of each vehicle's heading on latent cells it fills more than half."""
    n = frame.n
    values = np.zeros((n, n, n, 2), dtype=np.float64)
    best_fraction = np.zeros((n, n, n), dtype=np.float64)
    best_instance = np.full((n, n, n), np.iinfo(np.int64).max, dtype=np.int64)
    origin = frame.origin_array()
    for track in sorted(tracks, key=lambda tr: tr.instance_id):
        center, heading = track.pose_at(t)
        box = OrientedBox(center, track.size / 2.0, heading)
        coords, fractions = box_cell_fractions(box, origin, frame.cell_size)
        keep = fractions > 0.5
        coords, fractions = coords[keep], fractions[keep]
        inside = np.all((coords >= 0) & (coords < n), axis=1)
        coords, fractions = coords[inside], fractions[inside]
        for (i, j, k), frac in zip(coords, fractions):
            if frac > best_fraction[i, j, k] or (
                frac == best_fraction[i, j, k] and track.instance_id < best_instance[i, j, k]
            ):
                best_fraction[i, j, k] = frac
                best_instance[i, j, k] = track.instance_id
                values[i, j, k] = (np.sin(heading), np.cos(heading))
    return ChannelVolume(values, frame)


def assemble_conditions(
    hd: ChannelVolume, road: ChannelVolume, box: ChannelVolume
) -> ConditionVolume:
    for part in (road, box):
        if part.frame != hd.frame:
            raise ValueError("condition channels disagree on the chunk frame")
    if hd.values.shape[-1] != 2 or road.values.shape[-1] != 1 or box.values.shape[-1] != 2:
        raise ValueError("expected channel widths 2 (hd), 1 (road), 2 (box)")
    return ConditionVolume(np.concatenate([hd.values, road.values, box.values], axis=-1), hd.frame)


def build_conditions(
    hd_map: HDMap, tracks: Sequence[BoxTrack], t: float, frame: ChunkFrame
) -> ConditionVolume:
    """Full five-channel condition volume for one chunk.

    The road channel degrades to all-zero when the chunk holds no usable
    geometry instead of failing, so outpainting can march into empty land.
    """
    hd = build_hd_condition(hd_map, frame)
    try:
        road = fit_road_surface(hd_map, frame)
    except DegenerateGeometry:
        road = ChannelVolume(np.zeros((frame.n, frame.n, frame.n, 1)), frame)
    box = build_box_condition(tracks, t, frame)
    return assemble_conditions(hd, road, box)


def save_condition_volume(cv: ConditionVolume, path) -> None:
    path = Path(path)
    path.write_bytes(cv.values.astype("<f4").tobytes())
    sidecar = {
        "n": cv.frame.n,
        "channels": len(CHANNEL_NAMES),
        "channel_names": list(CHANNEL_NAMES),
        "frame": cv.frame.to_json(),
        "dtype": "<f4",
        "layout": "row-major (i, j, k, c)",
    }
    path.with_suffix(path.suffix + ".json").write_text(json.dumps(sidecar, sort_keys=True, indent=1))


def load_condition_volume(path) -> ConditionVolume:
    path = Path(path)
    sidecar = json.loads(path.with_suffix(path.suffix + ".json").read_text())
    frame = ChunkFrame.from_json(sidecar["frame"])
    values = np.frombuffer(path.read_bytes(), dtype="<f4").reshape(
        frame.n, frame.n, frame.n, int(sidecar["channels"])
    )
    return ConditionVolume(values.copy(), frame)
