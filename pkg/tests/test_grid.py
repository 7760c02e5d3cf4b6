import numpy as np
import pytest

from voxelworld.geometry import OrientedBox
from voxelworld.grid import (
    GridError,
    SemanticVoxel,
    SparseVoxelGrid,
    box_cell_fractions,
    crop,
    pack_coords,
    query,
    segment_cells,
    subdivide,
    union,
    unpack_coords,
    voxelize_box,
    voxelize_segment,
)
from voxelworld.labels import SemanticLabel

from oracles import box_fraction_dense, segment_cells_dense


def grid_of(cells, labels=None, origin=(0, 0, 0), size=0.2, instances=None):
    cells = np.asarray(cells).reshape(-1, 3)
    if labels is None:
        labels = np.full(len(cells), SemanticLabel.ROAD.value)
    return SparseVoxelGrid.from_cells(origin, size, cells, labels, instances)


class TestQuery:
    def test_empty_grid(self):
        assert query(SparseVoxelGrid.empty(), (0, 0, 0)) is None

    def test_direct_lookup(self):
        g = grid_of([[1, 2, 3]])
        assert query(g, (1, 2, 3)) == SemanticVoxel(SemanticLabel.ROAD)

    def test_neighbor_miss(self):
        g = grid_of([[1, 2, 3]])
        assert query(g, (1, 2, 4)) is None

    def test_instance_round_trip(self):
        g = grid_of([[0, 0, 0]], [SemanticLabel.CAR.value], instances=[7])
        assert query(g, (0, 0, 0)) == SemanticVoxel(SemanticLabel.CAR, 7)


class TestSemanticVoxelInvariant:
    def test_vehicle_requires_instance(self):
        with pytest.raises(ValueError):
            SemanticVoxel(SemanticLabel.CAR)

    def test_non_vehicle_rejects_instance(self):
        with pytest.raises(ValueError):
            SemanticVoxel(SemanticLabel.ROAD, 3)

    def test_grid_checks_instances(self):
        with pytest.raises(GridError):
            grid_of([[0, 0, 0]], [SemanticLabel.ROAD.value], instances=[5])


class TestPackedCoords:
    def test_round_trip(self):
        rng = np.random.default_rng(0)
        coords = rng.integers(-(2**19), 2**19, size=(500, 3))
        assert np.array_equal(unpack_coords(pack_coords(coords)), coords)

    def test_sorted_keys_are_lexicographic(self):
        rng = np.random.default_rng(1)
        coords = rng.integers(-50, 50, size=(200, 3))
        keys = pack_coords(coords)
        by_key = unpack_coords(np.sort(keys))
        by_lex = coords[np.lexsort((coords[:, 2], coords[:, 1], coords[:, 0]))]
        assert np.array_equal(by_key, by_lex)

    def test_out_of_range_rejected(self):
        with pytest.raises(GridError):
            pack_coords(np.array([[2**21, 0, 0]]))


class TestVoxelizeSegment:
    def test_axis_aligned_unit_segment(self):
        g = voxelize_segment(SparseVoxelGrid.empty(), (0, 0, 0), (1.0, 0, 0), SemanticLabel.ROAD)
        got = {tuple(c) for c in g.coords()}
        # endpoint x=1.0 sits exactly on the low face of cell 5, which owns it
        assert got == {(i, 0, 0) for i in range(6)}

    def test_point_segment(self):
        g = voxelize_segment(SparseVoxelGrid.empty(), (0.1, 0.1, 0.1), (0.1, 0.1, 0.1), SemanticLabel.ROAD)
        assert {tuple(c) for c in g.coords()} == {(0, 0, 0)}

    def test_diagonal_matches_dense_oracle(self):
        p0 = np.array([0.03, 0.11, 0.07])
        p1 = np.array([2.41, 1.13, 0.97])
        got = {tuple(c) for c in segment_cells(p0, p1, (0, 0, 0), 0.2)}
        want = segment_cells_dense(p0, p1, (0, 0, 0), 0.2, (-1, -1, -1), (14, 14, 14))
        assert got == want

    def test_random_segments_match_dense_oracle(self):
        rng = np.random.default_rng(42)
        for _ in range(60):
            p0 = rng.uniform(-1.0, 1.0, 3)
            p1 = rng.uniform(-1.0, 1.0, 3)
            got = {tuple(c) for c in segment_cells(p0, p1, (0, 0, 0), 0.25)}
            want = segment_cells_dense(p0, p1, (0, 0, 0), 0.25, (-6, -6, -6), (6, 6, 6))
            assert got == want

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError):
            segment_cells((0, 0, np.nan), (1, 0, 0), (0, 0, 0), 0.2)


class TestVoxelizeBox:
    def test_box_containing_voxel_marked(self):
        box = OrientedBox((0.5, 0.5, 0.5), (1.0, 1.0, 1.0), 0.3)
        g = voxelize_box(SparseVoxelGrid.empty(voxel_size=0.2), box, SemanticLabel.BUILDING)
        assert query(g, (2, 2, 2)) is not None  # cell fully inside

    def test_box_under_half_not_marked(self):
        # box covers only a quarter of cell (0, 0, 0)
        box = OrientedBox((0.05, 0.05, 0.1), (0.05, 0.05, 0.1), 0.0)
        g = voxelize_box(SparseVoxelGrid.empty(voxel_size=0.2), box, SemanticLabel.BUILDING, min_fraction=0.5)
        assert query(g, (0, 0, 0)) is None

    def test_min_fraction_validated(self):
        box = OrientedBox((0, 0, 0), (1, 1, 1), 0.0)
        with pytest.raises(ValueError):
            voxelize_box(SparseVoxelGrid.empty(), box, SemanticLabel.ROAD, min_fraction=0.0)

    def test_fractions_match_dense_oracle(self):
        rng = np.random.default_rng(7)
        for _ in range(25):
            box = OrientedBox(rng.uniform(-0.5, 0.5, 3), rng.uniform(0.2, 1.2, 3), rng.uniform(0, np.pi))
            coords, fracs = box_cell_fractions(box, (0, 0, 0), 0.4)
            for c, f in zip(coords, fracs):
                dense = box_fraction_dense(box, np.asarray(c) * 0.4, 0.4)
                assert abs(f - dense) <= 0.1
                if abs(dense - 0.5) > 0.1:
                    assert (f >= 0.5) == (dense >= 0.5)


class TestSubdivide:
    def test_single_voxel_becomes_eight(self):
        g = subdivide(grid_of([[0, 0, 0]], size=0.2))
        assert len(g) == 8
        assert g.voxel_size == pytest.approx(0.1)
        assert {tuple(c) for c in g.coords()} == {(i, j, k) for i in (0, 1) for j in (0, 1) for k in (0, 1)}

    def test_empty(self):
        assert len(subdivide(SparseVoxelGrid.empty())) == 0

    def test_counts_and_labels_preserved(self):
        rng = np.random.default_rng(3)
        coords = rng.integers(-10, 10, (50, 3))
        coords = np.unique(coords, axis=0)
        labels = rng.integers(12, 23, len(coords)).astype(np.uint8)  # non-vehicle labels
        g = grid_of(coords, labels)
        sub = subdivide(g)
        assert len(sub) == 8 * len(g)
        for coord, vox in g:
            child = query(sub, (2 * coord.i, 2 * coord.j, 2 * coord.k + 1))
            assert child is not None and child.label == vox.label

    def test_occupied_volume_preserved(self):
        g = grid_of([[1, 2, 3], [4, 5, 6]], size=0.4)
        sub = subdivide(g)
        assert len(sub) * sub.voxel_size**3 == pytest.approx(len(g) * g.voxel_size**3)


class TestCropUnion:
    def test_union_with_empty_is_identity(self):
        g = grid_of([[0, 0, 0], [1, 1, 1]])
        merged = union(g, SparseVoxelGrid.empty(voxel_size=0.2))
        assert merged.to_bytes() == g.to_bytes()

    def test_crop_to_empty_box(self):
        g = grid_of([[0, 0, 0], [5, 5, 5]])
        assert len(crop(g, (10, 10, 10), (-10, -10, -10))) == 0

    def test_crop_keeps_centers_inside(self):
        g = grid_of([[0, 0, 0], [5, 0, 0]])
        kept = crop(g, (0, 0, 0), (0.5, 0.5, 0.5))
        assert {tuple(c) for c in kept.coords()} == {(0, 0, 0)}

    def test_union_disjoint_counts_add(self):
        a = grid_of([[0, 0, 0], [1, 0, 0]])
        b = grid_of([[5, 5, 5], [6, 5, 5], [7, 5, 5]])
        assert len(union(a, b)) == 5

    def test_union_first_wins(self):
        a = grid_of([[0, 0, 0]], [SemanticLabel.ROAD.value])
        b = grid_of([[0, 0, 0]], [SemanticLabel.BUILDING.value])
        assert query(union(a, b), (0, 0, 0)).label == SemanticLabel.ROAD
        assert query(union(a, b, conflict="second"), (0, 0, 0)).label == SemanticLabel.BUILDING

    def test_union_reindexes_shifted_origin(self):
        a = grid_of([[0, 0, 0]])
        b = grid_of([[0, 0, 0]], origin=(0.4, 0.0, 0.0))  # two cells along x
        merged = union(a, b)
        assert {tuple(c) for c in merged.coords()} == {(0, 0, 0), (2, 0, 0)}

    def test_crop_commutes_with_union_over_disjoint_regions(self):
        rng = np.random.default_rng(6)
        a = grid_of(np.unique(rng.integers(0, 5, (10, 3)), axis=0))
        b = grid_of(np.unique(rng.integers(10, 15, (10, 3)), axis=0))
        lo, hi = (0.0, 0.0, 0.0), (0.9, 0.9, 0.9)
        direct = crop(union(a, b), lo, hi)
        swapped = union(crop(a, lo, hi), crop(b, lo, hi))
        assert direct.to_bytes() == swapped.to_bytes()

    def test_union_incommensurate_rejected(self):
        a = grid_of([[0, 0, 0]])
        with pytest.raises(GridError):
            union(a, grid_of([[0, 0, 0]], size=0.3))
        with pytest.raises(GridError):
            union(a, grid_of([[0, 0, 0]], origin=(0.1, 0, 0)))

    def test_union_left_to_right_associative(self):
        rng = np.random.default_rng(5)

        def random_grid():
            coords = np.unique(rng.integers(0, 4, (8, 3)), axis=0)
            labels = rng.integers(12, 23, len(coords)).astype(np.uint8)
            return grid_of(coords, labels)

        a, b, c = random_grid(), random_grid(), random_grid()
        left = union(union(a, b), c)
        right = union(a, union(b, c))
        assert left.to_bytes() == right.to_bytes()


class TestSerialization:
    def test_round_trip(self):
        g = grid_of([[1, 2, 3], [-4, 5, -6]], [SemanticLabel.CAR.value, SemanticLabel.ROAD.value],
                    instances=[9, -1], origin=(0.5, -1.0, 2.0), size=0.25)
        again = SparseVoxelGrid.from_bytes(g.to_bytes())
        assert again.to_bytes() == g.to_bytes()
        assert query(again, (1, 2, 3)) == SemanticVoxel(SemanticLabel.CAR, 9)

    def test_deterministic_bytes(self):
        coords = [[3, 1, 2], [0, 0, 0], [-1, 4, 2]]
        g1 = grid_of(coords)
        g2 = grid_of(list(reversed(coords)))
        assert g1.to_bytes() == g2.to_bytes()

    def test_header_layout(self):
        g = grid_of([[1, 0, 0]], size=0.5, origin=(1.0, 2.0, 3.0))
        blob = g.to_bytes()
        assert blob[:4] == b"IVXW"
        assert len(blob) == 4 + 4 + 8 + 24 + 8 + 17

    def test_bad_magic_rejected(self):
        with pytest.raises(GridError):
            SparseVoxelGrid.from_bytes(b"NOPE" + b"\x00" * 60)

    def test_duplicate_coordinates_rejected(self):
        with pytest.raises(GridError):
            grid_of([[0, 0, 0], [0, 0, 0]])
