"""Sparse semantic voxel grid: storage, queries, voxelization primitives, subdivision.

Grids are immutable after construction. Cells live on an unbounded signed
lattice; cell (i, j, k) spans the half-open world box
[origin + i*s, origin + (i+1)*s) per axis, with s = voxel_size. Coordinates
are packed into a single int64 key (three 21-bit offset-signed fields), and
all per-cell arrays are kept sorted by key, which makes iteration order (and
therefore serialization) deterministic and equal to lexicographic (i, j, k).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Iterator, NamedTuple, Optional

import numpy as np

from .geometry import OrientedBox
from .labels import VEHICLE_LABELS, SemanticLabel

COORD_BITS = 21
COORD_OFFSET = 1 << (COORD_BITS - 1)
COORD_MIN = -COORD_OFFSET
COORD_MAX = COORD_OFFSET - 1

BLOB_MAGIC = b"IVXW"
BLOB_VERSION = 1
_HEADER = struct.Struct("<4sId3dQ")
_RECORD_DTYPE = np.dtype([("i", "<i4"), ("j", "<i4"), ("k", "<i4"), ("label", "u1"), ("instance", "<i4")])

NO_INSTANCE = -1


class GridError(ValueError):
    """Raised for incommensurate grids and malformed grid blobs."""


class VoxelCoord(NamedTuple):
    i: int
    j: int
    k: int


@dataclass(frozen=True)
class SemanticVoxel:
    label: SemanticLabel
    instance_id: Optional[int] = None

    def __post_init__(self):
        has_id = self.instance_id is not None
        if has_id and self.instance_id < 0:
            raise ValueError("instance_id must be non-negative")
        if has_id != (self.label in VEHICLE_LABELS):
            raise ValueError("instance_id is carried by vehicle labels, and only by them")


def pack_coords(coords: np.ndarray) -> np.ndarray:
    """Pack (n, 3) lattice coords into sortable int64 keys."""
    c = np.asarray(coords, dtype=np.int64)
    if c.size and (c.min() < COORD_MIN or c.max() > COORD_MAX):
        raise GridError(f"coordinates outside the +-2^{COORD_BITS - 1} lattice range")
    off = c + COORD_OFFSET
    return (off[:, 0] << (2 * COORD_BITS)) | (off[:, 1] << COORD_BITS) | off[:, 2]


def unpack_coords(keys: np.ndarray) -> np.ndarray:
    k = np.asarray(keys, dtype=np.int64)
    mask = (1 << COORD_BITS) - 1
    out = np.empty((len(k), 3), dtype=np.int64)
    out[:, 0] = (k >> (2 * COORD_BITS)) & mask
    out[:, 1] = (k >> COORD_BITS) & mask
    out[:, 2] = k & mask
    return out - COORD_OFFSET


class SparseVoxelGrid:
    """Immutable map from lattice coordinates to (label, optional instance id)."""

    __slots__ = ("origin", "voxel_size", "_keys", "_labels", "_instances", "_bounds", "_macro")

    def __init__(
        self,
        origin: np.ndarray,
        voxel_size: float,
        keys: np.ndarray,
        labels: np.ndarray,
        instances: np.ndarray,
    ):
        if voxel_size <= 0:
            raise GridError("voxel_size must be positive")
        order = np.argsort(keys, kind="stable")
        keys = np.asarray(keys, dtype=np.int64)[order]
        if len(keys) > 1 and np.any(np.diff(keys) == 0):
            raise GridError("duplicate coordinates")
        self.origin = np.asarray(origin, dtype=np.float64).copy()
        self.origin.flags.writeable = False
        self.voxel_size = float(voxel_size)
        self._keys = keys
        self._labels = np.asarray(labels, dtype=np.uint8)[order]
        self._instances = np.asarray(instances, dtype=np.int32)[order]
        vehicle = np.isin(self._labels, [l.value for l in VEHICLE_LABELS])
        if np.any((self._instances >= 0) != vehicle):
            raise GridError("instance ids must be present exactly on vehicle-labeled voxels")
        for a in (self._keys, self._labels, self._instances):
            a.flags.writeable = False
        self._bounds = None
        self._macro = {}

    @classmethod
    def empty(cls, origin=(0.0, 0.0, 0.0), voxel_size: float = 0.2) -> "SparseVoxelGrid":
        return cls(
            np.asarray(origin, dtype=np.float64),
            voxel_size,
            np.empty(0, dtype=np.int64),
            np.empty(0, dtype=np.uint8),
            np.empty(0, dtype=np.int32),
        )

    @classmethod
    def from_cells(
        cls,
        origin,
        voxel_size: float,
        coords: np.ndarray,
        labels: np.ndarray,
        instances: np.ndarray | None = None,
    ) -> "SparseVoxelGrid":
        coords = np.asarray(coords, dtype=np.int64).reshape(-1, 3)
        labels = np.asarray(labels, dtype=np.uint8).reshape(-1)
        if instances is None:
            instances = np.full(len(coords), NO_INSTANCE, dtype=np.int32)
        return cls(origin, voxel_size, pack_coords(coords), labels, np.asarray(instances))

    def __len__(self) -> int:
        return len(self._keys)

    @property
    def keys(self) -> np.ndarray:
        return self._keys

    @property
    def label_values(self) -> np.ndarray:
        return self._labels

    @property
    def instance_values(self) -> np.ndarray:
        return self._instances

    def coords(self) -> np.ndarray:
        return unpack_coords(self._keys)

    def centers(self) -> np.ndarray:
        """World centers of all cells, in iteration order."""
        return self.origin + (self.coords() + 0.5) * self.voxel_size

    def centers_at(self, idx: np.ndarray) -> np.ndarray:
        coords = unpack_coords(self._keys[idx])
        return self.origin + (coords + 0.5) * self.voxel_size

    def index_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        if len(self) == 0:
            raise GridError("empty grid has no bounds")
        if self._bounds is None:
            c = self.coords()
            self._bounds = (c.min(axis=0), c.max(axis=0))
        return self._bounds

    def macro_keys(self, factor: int) -> np.ndarray:
        """Sorted packed keys of the occupied factor^3 super-cells (cached)."""
        if factor not in self._macro:
            coarse = np.floor_divide(self.coords(), factor)
            self._macro[factor] = np.unique(pack_coords(coarse))
        return self._macro[factor]

    def lookup(self, coords: np.ndarray) -> np.ndarray:
        """Indices into the cell arrays for (n, 3) coords; -1 where absent."""
        coords = np.asarray(coords, dtype=np.int64).reshape(-1, 3)
        ok = np.all((coords >= COORD_MIN) & (coords <= COORD_MAX), axis=1)
        out = np.full(len(coords), -1, dtype=np.int64)
        if not ok.any() or len(self._keys) == 0:
            return out
        keys = pack_coords(coords[ok])
        pos = np.searchsorted(self._keys, keys)
        pos_ok = pos < len(self._keys)
        found = np.zeros(len(keys), dtype=bool)
        found[pos_ok] = self._keys[pos[pos_ok]] == keys[pos_ok]
        res = np.where(found, pos, -1)
        out[np.flatnonzero(ok)] = res
        return out

    def lookup_keys(self, keys: np.ndarray) -> np.ndarray:
        """Like lookup() but on pre-packed keys."""
        out = np.full(len(keys), -1, dtype=np.int64)
        if len(self._keys) == 0:
            return out
        pos = np.searchsorted(self._keys, keys)
        pos_ok = pos < len(self._keys)
        hit = np.zeros(len(keys), dtype=bool)
        hit[pos_ok] = self._keys[pos[pos_ok]] == keys[pos_ok]
        out[hit] = pos[hit]
        return out

    def __iter__(self) -> Iterator[tuple[VoxelCoord, SemanticVoxel]]:
        coords = self.coords()
        for n in range(len(self)):
            inst = int(self._instances[n])
            yield (
                VoxelCoord(*map(int, coords[n])),
                SemanticVoxel(SemanticLabel(int(self._labels[n])), None if inst < 0 else inst),
            )

    def with_cells(self, coords, labels, instances=None) -> "SparseVoxelGrid":
        """New grid with extra cells; existing cells win on conflict."""
        extra = SparseVoxelGrid.from_cells(self.origin, self.voxel_size, coords, labels, instances)
        return union(self, extra)

    def filtered(self, keep: np.ndarray) -> "SparseVoxelGrid":
        return SparseVoxelGrid(
            self.origin, self.voxel_size, self._keys[keep], self._labels[keep], self._instances[keep]
        )

    # -- serialization -------------------------------------------------------

    def to_bytes(self) -> bytes:
        header = _HEADER.pack(BLOB_MAGIC, BLOB_VERSION, self.voxel_size, *self.origin, len(self))
        records = np.empty(len(self), dtype=_RECORD_DTYPE)
        coords = self.coords()
        records["i"], records["j"], records["k"] = coords[:, 0], coords[:, 1], coords[:, 2]
        records["label"] = self._labels
        records["instance"] = self._instances
        return header + records.tobytes()

    @classmethod
    def from_bytes(cls, blob: bytes) -> "SparseVoxelGrid":
        if len(blob) < _HEADER.size:
            raise GridError("truncated grid blob")
        magic, version, voxel_size, ox, oy, oz, count = _HEADER.unpack_from(blob)
        if magic != BLOB_MAGIC:
            raise GridError("bad magic; not a voxel grid blob")
        if version != BLOB_VERSION:
            raise GridError(f"unsupported blob version {version}")
        records = np.frombuffer(blob, dtype=_RECORD_DTYPE, count=count, offset=_HEADER.size)
        coords = np.stack([records["i"], records["j"], records["k"]], axis=1).astype(np.int64)
        return cls((ox, oy, oz), voxel_size, pack_coords(coords), records["label"], records["instance"])

    def save(self, path) -> None:
        with open(path, "wb") as f:
            f.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> "SparseVoxelGrid":
        with open(path, "rb") as f:
            return cls.from_bytes(f.read())


# -- queries ------------------------------------------------------------------


def query(grid: SparseVoxelGrid, coord) -> Optional[SemanticVoxel]:
    """Stored voxel at `coord`, or None."""
    idx = grid.lookup(np.asarray(coord, dtype=np.int64).reshape(1, 3))[0]
    if idx < 0:
        return None
    inst = int(grid.instance_values[idx])
    return SemanticVoxel(SemanticLabel(int(grid.label_values[idx])), None if inst < 0 else inst)


# -- segment rasterization ----------------------------------------------------


def _segment_hits_cells(p0: np.ndarray, p1: np.ndarray, lows: np.ndarray, size: float) -> np.ndarray:
    """Which of the cells with low corners `lows` (n, 3) a segment intersects.

    A cell owns the half-open box [low, low + size). The closed-box slab
    interval is computed first; the midpoint of the clipped sub-segment then
    decides half-open ownership, so geometry lying exactly on a shared face
    marks only the cell that owns that face.
    """
    d = p1 - p0
    n = len(lows)
    t0 = np.zeros(n)
    t1 = np.ones(n)
    ok = np.ones(n, dtype=bool)
    for a in range(3):
        lo = lows[:, a]
        hi = lo + size
        if abs(d[a]) < 1e-300:
            ok &= (p0[a] >= lo) & (p0[a] <= hi)
        else:
            ta = (lo - p0[a]) / d[a]
            tb = (hi - p0[a]) / d[a]
            t0 = np.maximum(t0, np.minimum(ta, tb))
            t1 = np.minimum(t1, np.maximum(ta, tb))
    ok &= t0 <= t1
    tm = 0.5 * (np.clip(t0, 0.0, 1.0) + np.clip(t1, 0.0, 1.0))
    q = p0 + tm[:, None] * d
    ok &= np.all((q >= lows) & (q < lows + size), axis=1)
    return ok


def segment_cells(p0, p1, origin, voxel_size: float) -> np.ndarray:
    """(n, 3) lattice coords of every cell whose box intersects segment [p0, p1]."""
    p0 = np.asarray(p0, dtype=np.float64)
    p1 = np.asarray(p1, dtype=np.float64)
    if not (np.all(np.isfinite(p0)) and np.all(np.isfinite(p1))):
        raise ValueError("segment endpoints must be finite")
    origin = np.asarray(origin, dtype=np.float64)
    s = float(voxel_size)
    length = float(np.linalg.norm(p1 - p0))
    if length == 0.0:
        return np.floor((p0 - origin) / s).astype(np.int64).reshape(1, 3)

    # Split into sub-spans shorter than one cell so candidate boxes stay tiny.
    pieces = max(1, int(np.ceil(length / (0.9 * s))))
    ts = np.linspace(0.0, 1.0, pieces + 1)
    points = p0 + ts[:, None] * (p1 - p0)
    found: set[int] = set()
    out_coords = []
    for a0, a1 in zip(points[:-1], points[1:]):
        lo_idx = np.floor((np.minimum(a0, a1) - origin) / s).astype(np.int64) - 1
        hi_idx = np.floor((np.maximum(a0, a1) - origin) / s).astype(np.int64) + 1
        ranges = [np.arange(lo_idx[a], hi_idx[a] + 1) for a in range(3)]
        cand = np.stack(np.meshgrid(*ranges, indexing="ij"), axis=-1).reshape(-1, 3)
        lows = origin + cand * s
        hit = _segment_hits_cells(a0, a1, lows, s)
        for coord, key in zip(cand[hit], pack_coords(cand[hit])):
            if int(key) not in found:
                found.add(int(key))
                out_coords.append(coord)
    if not out_coords:
        return np.empty((0, 3), dtype=np.int64)
    return np.asarray(out_coords, dtype=np.int64)


def voxelize_segment(grid: SparseVoxelGrid, p0, p1, label: SemanticLabel) -> SparseVoxelGrid:
    """Mark every cell whose box intersects the segment. Existing cells win."""
    cells = segment_cells(p0, p1, grid.origin, grid.voxel_size)
    return grid.with_cells(cells, np.full(len(cells), label.value, dtype=np.uint8))


# -- oriented-box rasterization -----------------------------------------------


def _clip_quad_to_rect(poly: list[np.ndarray], hx: float, hy: float) -> list[np.ndarray]:
    """Sutherland-Hodgman clip of a 2D polygon against |x| <= hx, |y| <= hy."""
    for axis, sign, bound in ((0, 1.0, hx), (0, -1.0, hx), (1, 1.0, hy), (1, -1.0, hy)):
        if not poly:
            return []
        out = []
        prev = poly[-1]
        f_prev = sign * prev[axis] - bound
        for cur in poly:
            f_cur = sign * cur[axis] - bound
            if f_cur <= 0.0:
                if f_prev > 0.0:
                    out.append(prev + (f_prev / (f_prev - f_cur)) * (cur - prev))
                out.append(cur)
            elif f_prev <= 0.0:
                out.append(prev + (f_prev / (f_prev - f_cur)) * (cur - prev))
            prev, f_prev = cur, f_cur
        poly = out
    return poly


def _polygon_area(poly: list[np.ndarray]) -> float:
    if len(poly) < 3:
        return 0.0
    pts = np.asarray(poly)
    x, y = pts[:, 0], pts[:, 1]
    return 0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def box_cell_fractions(box: OrientedBox, origin, voxel_size: float) -> tuple[np.ndarray, np.ndarray]:
    """Occupied volume fraction per candidate cell, computed exactly.

    The box is yawed about +z only, so box-cell intersections are vertical
    prisms: the volume is the z-overlap times the area of the cell footprint
    clipped to the box footprint in the box frame. Returns (coords (n, 3),
    fractions (n,)) for cells with positive fraction.
    """
    origin = np.asarray(origin, dtype=np.float64)
    s = float(voxel_size)
    corners = box.corners()
    lo_idx = np.floor((corners.min(axis=0) - origin) / s).astype(np.int64)
    hi_idx = np.floor((corners.max(axis=0) - origin) / s).astype(np.int64)
    hx, hy, hz = box.half_extents
    c, sn = np.cos(box.heading), np.sin(box.heading)
    inv_rot2 = np.array([[c, sn], [-sn, c]])  # world -> box frame, xy block

    bz0, bz1 = box.center[2] - hz, box.center[2] + hz
    coords, fractions = [], []
    square = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]) * s
    for k in range(lo_idx[2], hi_idx[2] + 1):
        z0 = origin[2] + k * s
        overlap_z = min(z0 + s, bz1) - max(z0, bz0)
        if overlap_z <= 0.0:
            continue
        for i in range(lo_idx[0], hi_idx[0] + 1):
            for j in range(lo_idx[1], hi_idx[1] + 1):
                low_xy = origin[:2] + np.array([i, j]) * s
                poly = [inv_rot2 @ (low_xy + q - box.center[:2]) for q in square]
                area = _polygon_area(_clip_quad_to_rect(poly, hx, hy))
                if area <= 0.0:
                    continue
                coords.append((i, j, k))
                fractions.append(area * overlap_z / s**3)
    if not coords:
        return np.empty((0, 3), dtype=np.int64), np.empty(0)
    return np.asarray(coords, dtype=np.int64), np.asarray(fractions)


def voxelize_box(
    grid: SparseVoxelGrid,
    box: OrientedBox,
    label: SemanticLabel,
    instance_id: int | None = None,
    min_fraction: float = 0.5,
) -> SparseVoxelGrid:
    """Mark cells whose estimated occupied fraction is >= min_fraction."""
    if not (0.0 < min_fraction <= 1.0):
        raise ValueError("min_fraction must lie in (0, 1]")
    coords, fractions = box_cell_fractions(box, grid.origin, grid.voxel_size)
    keep = fractions >= min_fraction
    coords = coords[keep]
    instances = None
    if instance_id is not None:
        instances = np.full(len(coords), int(instance_id), dtype=np.int32)
    return grid.with_cells(coords, np.full(len(coords), label.value, dtype=np.uint8), instances)


# -- structural ops -----------------------------------------------------------

_CHILD_OFFSETS = np.stack(
    np.meshgrid([0, 1], [0, 1], [0, 1], indexing="ij"), axis=-1
).reshape(-1, 3).astype(np.int64)


def subdivide(grid: SparseVoxelGrid) -> SparseVoxelGrid:
    """Split every cell into its 8 children at half the voxel size."""
    coords = grid.coords()
    children = (coords[:, None, :] * 2 + _CHILD_OFFSETS[None, :, :]).reshape(-1, 3)
    labels = np.repeat(grid.label_values, 8)
    instances = np.repeat(grid.instance_values, 8)
    return SparseVoxelGrid.from_cells(grid.origin, grid.voxel_size / 2.0, children, labels, instances)


def crop(grid: SparseVoxelGrid, aabb_low, aabb_high) -> SparseVoxelGrid:
    """Keep cells whose centers lie inside the closed world box [low, high]."""
    lo = np.asarray(aabb_low, dtype=np.float64)
    hi = np.asarray(aabb_high, dtype=np.float64)
    centers = grid.centers()
    keep = np.all((centers >= lo) & (centers <= hi), axis=1)
    return grid.filtered(keep)


def union(a: SparseVoxelGrid, b: SparseVoxelGrid, conflict: str = "first") -> SparseVoxelGrid:
    """Merge two grids on a common lattice.

    Grids must share the voxel size and have origins an integer number of
    cells apart; b is reindexed into a's frame. On coordinate conflicts the
    `conflict` policy picks the survivor ("first" keeps a's cell).
    """
    if conflict not in ("first", "second"):
        raise ValueError("conflict policy must be 'first' or 'second'")
    if abs(a.voxel_size - b.voxel_size) > 1e-12 * max(a.voxel_size, b.voxel_size):
        raise GridError("voxel sizes differ")
    shift_f = (b.origin - a.origin) / a.voxel_size
    shift = np.round(shift_f).astype(np.int64)
    if np.max(np.abs(shift_f - shift)) > 1e-6:
        raise GridError("origins are not an integer number of cells apart")
    b_keys = pack_coords(unpack_coords(b.keys) + shift) if len(b) else b.keys
    first, second = (a, b) if conflict == "first" else (b, a)
    keys = np.concatenate([(b_keys if first is b else a.keys), (a.keys if first is b else b_keys)])
    labels = np.concatenate([first.label_values, second.label_values])
    instances = np.concatenate([first.instance_values, second.instance_values])
    _, unique_idx = np.unique(keys, return_index=True)
    return SparseVoxelGrid(a.origin, a.voxel_size, keys[unique_idx], labels[unique_idx], instances[unique_idx])
