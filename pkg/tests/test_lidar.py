import numpy as np
import pytest

from voxelworld.conditions import BoxTrack
from voxelworld.gaussians import GaussianScene, GaussianSet, SceneObject
from voxelworld.geometry import RigidPose, quats_to_matrices, rot_z
from voxelworld.lidar import LidarPattern, cast_lidar, load_point_cloud, save_point_cloud

from oracles import ellipsoid_ray_range


def scene_of(gset, objects=()):
    return GaussianScene(gset, tuple(objects))


def one_gaussian(position, scale, opacity=1.0, quat=(1.0, 0.0, 0.0, 0.0)):
    scale = np.broadcast_to(np.asarray(scale, dtype=float), (3,))
    return GaussianSet([position], [quat], [scale], [opacity], [[0.5, 0.5, 0.5]])


def single_beam(max_range=100.0, k_sigma=2.0, threshold=0.5):
    return LidarPattern(np.array([0.0]), np.array([0.0]), max_range=max_range,
                        opacity_threshold=threshold, k_sigma=k_sigma)


class TestCastLidar:
    def test_empty_scene_no_returns(self):
        assert cast_lidar(scene_of(GaussianSet.empty()), RigidPose.identity(), 0.0, single_beam()) == []

    def test_isotropic_gaussian_range(self):
        s = 0.3
        scene = scene_of(one_gaussian([10.0, 0.0, 0.0], s))
        (ret,) = cast_lidar(scene, RigidPose.identity(), 0.0, single_beam(k_sigma=2.0))
        assert ret.range == pytest.approx(10.0 - 2.0 * s, abs=1e-12)
        assert np.allclose(ret.position, [10.0 - 2.0 * s, 0.0, 0.0], atol=1e-12)
        assert ret.instance_id is None
        assert ret.beam == 0

    def test_low_opacity_ignored(self):
        scene = scene_of(one_gaussian([10.0, 0.0, 0.0], 0.3, opacity=0.4))
        assert cast_lidar(scene, RigidPose.identity(), 0.0, single_beam(threshold=0.5)) == []

    def test_nearest_of_many_wins(self):
        far = one_gaussian([20.0, 0.0, 0.0], 0.5)
        near = one_gaussian([8.0, 0.0, 0.0], 0.25)
        from voxelworld.gaussians import concat_gaussians

        scene = scene_of(concat_gaussians([far, near]))
        (ret,) = cast_lidar(scene, RigidPose.identity(), 0.0, single_beam())
        assert ret.range == pytest.approx(8.0 - 0.5, abs=1e-12)

    def test_max_range_monotonicity(self):
        rng = np.random.default_rng(2)
        n = 30
        quats = rng.standard_normal((n, 4))
        quats /= np.linalg.norm(quats, axis=1, keepdims=True)
        gset = GaussianSet(rng.uniform(-20, 20, (n, 3)), quats, rng.uniform(0.2, 1.0, (n, 3)),
                           np.ones(n), rng.random((n, 3)))
        pattern_far = LidarPattern.rotating(beams=8, azimuth_step_deg=30.0, max_range=50.0)
        pattern_near = LidarPattern.rotating(beams=8, azimuth_step_deg=30.0, max_range=10.0)
        far = cast_lidar(scene_of(gset), RigidPose.identity(), 0.0, pattern_far)
        near = cast_lidar(scene_of(gset), RigidPose.identity(), 0.0, pattern_near)
        far_by_beam = {r.beam: r.range for r in far}
        for r in near:
            assert far_by_beam[r.beam] == pytest.approx(r.range, abs=1e-12)
        assert {r.beam for r in near} <= {r.beam for r in far}

    def test_random_ellipsoids_match_analytic(self):
        rng = np.random.default_rng(3)
        n = 40
        quats = rng.standard_normal((n, 4))
        quats /= np.linalg.norm(quats, axis=1, keepdims=True)
        gset = GaussianSet(rng.uniform(-15, 15, (n, 3)), quats, rng.uniform(0.3, 2.0, (n, 3)),
                           np.ones(n), rng.random((n, 3)))
        pattern = LidarPattern.rotating(beams=6, azimuth_step_deg=20.0, max_range=60.0, k_sigma=2.0)
        dirs = pattern.directions()
        returns = {r.beam: r for r in cast_lidar(scene_of(gset), RigidPose.identity(), 0.0, pattern)}
        rots = quats_to_matrices(gset.rotations)
        for b, d in enumerate(dirs):
            best = None
            for g in range(n):
                r = ellipsoid_ray_range(np.zeros(3), d, gset.positions[g], rots[g], 2.0 * gset.scales[g])
                if r is not None and r <= 60.0 and (best is None or r < best):
                    best = r
            if best is None:
                assert b not in returns
            else:
                assert abs(returns[b].range - best) < 1e-9

    def test_rigid_equivariance(self):
        rng = np.random.default_rng(4)
        n = 25
        quats = rng.standard_normal((n, 4))
        quats /= np.linalg.norm(quats, axis=1, keepdims=True)
        gset = GaussianSet(rng.uniform(-10, 10, (n, 3)), quats, rng.uniform(0.3, 1.5, (n, 3)),
                           np.ones(n), rng.random((n, 3)))
        pattern = LidarPattern.rotating(beams=8, azimuth_step_deg=15.0, max_range=80.0)
        pose = RigidPose(rot_z(0.0), np.array([1.0, -2.0, 0.5]))
        base = cast_lidar(scene_of(gset), pose, 0.0, pattern)

        move = RigidPose.from_heading(np.array([7.0, -3.0, 2.0]), 1.1)
        moved_set = gset.transformed(move)
        moved_pose = move.compose(pose)
        moved = cast_lidar(scene_of(moved_set), moved_pose, 0.0, pattern)
        assert len(base) == len(moved)
        for a, b in zip(base, moved):
            assert a.beam == b.beam
            assert abs(a.range - b.range) < 1e-9

    def test_dynamic_object_carries_instance_id(self):
        rng = np.random.default_rng(5)
        canonical = one_gaussian([0.0, 0.0, 0.0], 0.4)
        track = BoxTrack(6, np.array([2.0, 2.0, 2.0]), np.array([0.0]),
                         np.array([[12.0, 0.0, 0.0]]), np.array([0.0]))
        scene = scene_of(GaussianSet.empty(), [SceneObject(6, canonical, track)])
        (ret,) = cast_lidar(scene, RigidPose.identity(), 0.0, single_beam())
        assert ret.instance_id == 6
        assert ret.range == pytest.approx(12.0 - 0.8, abs=1e-12)


class TestPatternIO:
    def test_round_trip(self, tmp_path):
        pattern = LidarPattern.rotating(beams=4, azimuth_step_deg=90.0, max_range=55.0, k_sigma=1.5)
        pattern.save(tmp_path / "p.json")
        again = LidarPattern.load(tmp_path / "p.json")
        assert np.allclose(again.azimuths, pattern.azimuths)
        assert again.max_range == 55.0 and again.k_sigma == 1.5

    def test_packaged_default_pattern_loads(self):
        from importlib import resources

        with resources.as_file(resources.files("voxelworld.data") / "lidar_64beam.json") as p:
            pattern = LidarPattern.load(p)
        assert len(pattern.azimuths) == 64 * 360

    def test_validation(self):
        with pytest.raises(ValueError):
            LidarPattern(np.array([0.0]), np.array([0.0, 1.0]))
        with pytest.raises(ValueError):
            LidarPattern(np.array([0.0]), np.array([0.0]), max_range=-1.0)
        with pytest.raises(ValueError):
            LidarPattern(np.array([0.0]), np.array([0.0]), opacity_threshold=1.5)


class TestPointCloudIO:
    def test_round_trip(self, tmp_path):
        scene = scene_of(one_gaussian([10.0, 0.0, 0.0], 0.3))
        returns = cast_lidar(scene, RigidPose.identity(), 0.0, single_beam())
        save_point_cloud(returns, tmp_path / "pts.csv")
        again = load_point_cloud(tmp_path / "pts.csv")
        assert len(again) == 1
        assert again[0].range == returns[0].range
        assert np.array_equal(again[0].position, returns[0].position)
        assert again[0].instance_id is None
