"""Dual-branch Gaussian scene composition.

Two raw parameterizations feed the scene: a voxel branch emitting 4 Gaussians
per fine (subdivided) voxel from 56 raw channels, and a pixel branch emitting
2 Gaussians per pixel from 24 raw channels. Raw channels decode through fixed
activations:

    color    sigmoid            opacity  sigmoid
    scale    exp, clamped to [1e-4, 50] m
    rotation raw 4-vector, normalized (zero-norm -> identity)
    voxel position offset: tanh(raw) * voxel_size around the voxel center
    pixel depth: w = sigmoid(raw); z = (1-w)*z_near + w*z_far;
                 t = z / cos(ray, look-at); position = ray_o + t * ray_d

At inference the voxel branch covers only the static world; the pixel branch
runs every few frames and only its mid-ground and dynamic-object Gaussians
are kept. Per-object Gaussians are pulled into the object's box frame via the
pose track, aggregated over frames, and clipped to the (slightly dilated)
box, which keeps each vehicle re-posable by editing its trajectory alone.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .buffers import Camera, GuidanceBufferSet, Trajectory
from .conditions import BoxTrack, load_box_tracks, save_box_tracks
from .geometry import RigidPose, normalize_quats, quat_multiply, quats_to_matrices
from .grid import SparseVoxelGrid, subdivide
from .labels import VEHICLE_LABELS

Z_NEAR = 0.5
Z_FAR = 300.0
SCALE_MIN = 1e-4
SCALE_MAX = 50.0
PIXEL_CHANNELS = 12  # rgb 3, rotation 4, scale 3, opacity 1, depth 1
PIXEL_GAUSSIANS = 2
VOXEL_CHANNELS = 14  # rgb 3, rotation 4, scale 3, opacity 1, offset 3
VOXEL_GAUSSIANS = 4
BOX_KEEP_DILATION = 1.05
MAHA_CUTOFF = 9.0  # 3-sigma support; contributions beyond are defined as zero
SKY_DIM = 192
SKY_PATCH = 8
SH_C0 = 0.28209479177387814

HORIZON_RGB = np.array([0.82, 0.88, 0.95])
ZENITH_RGB = np.array([0.35, 0.55, 0.85])


def sigmoid(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def logit(p: np.ndarray) -> np.ndarray:
    p = np.clip(np.asarray(p, dtype=np.float64), 1e-12, 1.0 - 1e-12)
    return np.log(p) - np.log1p(-p)


@dataclass(frozen=True)
class GaussianSet:
    """Structure-of-arrays collection of anisotropic 3D Gaussians."""

    positions: np.ndarray  # (n, 3) m
    rotations: np.ndarray  # (n, 4) unit quaternions (w, x, y, z)
    scales: np.ndarray  # (n, 3) m, positive
    opacities: np.ndarray  # (n,) in [0, 1]
    colors: np.ndarray  # (n, 3) in [0, 1]

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=np.float64).reshape(-1, 3)
        rot = np.asarray(self.rotations, dtype=np.float64).reshape(-1, 4)
        sc = np.asarray(self.scales, dtype=np.float64).reshape(-1, 3)
        op = np.asarray(self.opacities, dtype=np.float64).reshape(-1)
        col = np.asarray(self.colors, dtype=np.float64).reshape(-1, 3)
        n = len(pos)
        if not (len(rot) == len(sc) == len(op) == len(col) == n):
            raise ValueError("field lengths disagree")
        if n:
            if np.max(np.abs(np.linalg.norm(rot, axis=1) - 1.0)) > 1e-6:
                raise ValueError("rotations must be unit quaternions")
            if np.min(sc) <= 0:
                raise ValueError("scales must be positive")
        for name, arr in (("positions", pos), ("rotations", rot), ("scales", sc), ("opacities", op), ("colors", col)):
            object.__setattr__(self, name, arr)

    def __len__(self) -> int:
        return len(self.positions)

    @classmethod
    def empty(cls) -> "GaussianSet":
        return cls(np.zeros((0, 3)), np.zeros((0, 4)), np.ones((0, 3)), np.zeros(0), np.zeros((0, 3)))

    def select(self, mask_or_idx) -> "GaussianSet":
        return GaussianSet(
            self.positions[mask_or_idx],
            self.rotations[mask_or_idx],
            self.scales[mask_or_idx],
            self.opacities[mask_or_idx],
            self.colors[mask_or_idx],
        )

    def transformed(self, pose: RigidPose) -> "GaussianSet":
        q_pose = pose.quaternion()
        rot = quat_multiply(np.broadcast_to(q_pose, self.rotations.shape), self.rotations)
        return GaussianSet(pose.apply(self.positions), normalize_quats(rot), self.scales, self.opacities, self.colors)


def concat_gaussians(parts: Sequence[GaussianSet]) -> GaussianSet:
    parts = [p for p in parts if len(p)]
    if not parts:
        return GaussianSet.empty()
    return GaussianSet(
        np.concatenate([p.positions for p in parts]),
        np.concatenate([p.rotations for p in parts]),
        np.concatenate([p.scales for p in parts]),
        np.concatenate([p.opacities for p in parts]),
        np.concatenate([p.colors for p in parts]),
    )


def _decode_common(raw: np.ndarray):
    """(n, >=11) raw rows -> color, rotation, scale, opacity."""
    colors = sigmoid(raw[:, 0:3])
    rotations = normalize_quats(raw[:, 3:7], eps=1e-8)
    scales = np.clip(np.exp(np.clip(raw[:, 7:10], -700, 700)), SCALE_MIN, SCALE_MAX)
    opacities = sigmoid(raw[:, 10])
    return colors, rotations, scales, opacities


def decode_pixel_gaussians(
    raw: np.ndarray, camera: Camera, z_near: float = Z_NEAR, z_far: float = Z_FAR
) -> GaussianSet:
    """(h, w, 24) raw image -> 2 Gaussians per pixel, ordered row-major, pixel-major."""
    raw = np.asarray(raw, dtype=np.float64)
    h, w = camera.height, camera.width
    if raw.shape != (h, w, PIXEL_GAUSSIANS * PIXEL_CHANNELS):
        raise ValueError(f"pixel params must be ({h}, {w}, {PIXEL_GAUSSIANS * PIXEL_CHANNELS})")
    rows = raw.reshape(h * w, PIXEL_GAUSSIANS, PIXEL_CHANNELS).reshape(-1, PIXEL_CHANNELS)
    colors, rotations, scales, opacities = _decode_common(rows)

    dirs = camera.ray_directions().reshape(-1, 3)
    cos = dirs @ camera.look_at()
    omega = sigmoid(rows[:, 11])
    z = (1.0 - omega) * z_near + omega * z_far
    t = z / np.repeat(cos, PIXEL_GAUSSIANS)
    positions = camera.position + t[:, None] * np.repeat(dirs, PIXEL_GAUSSIANS, axis=0)
    return GaussianSet(positions, rotations, scales, opacities, colors)


def decode_voxel_gaussians(raw: np.ndarray, grid: SparseVoxelGrid) -> GaussianSet:
    """(m, 56) raw rows aligned with grid iteration order -> 4 Gaussians per voxel."""
    raw = np.asarray(raw, dtype=np.float64)
    if raw.shape != (len(grid), VOXEL_GAUSSIANS * VOXEL_CHANNELS):
        raise ValueError(f"voxel params must be ({len(grid)}, {VOXEL_GAUSSIANS * VOXEL_CHANNELS})")
    rows = raw.reshape(-1, VOXEL_CHANNELS)
    colors, rotations, scales, opacities = _decode_common(rows)
    offsets = np.tanh(rows[:, 11:14]) * grid.voxel_size
    positions = np.repeat(grid.centers(), VOXEL_GAUSSIANS, axis=0) + offsets
    return GaussianSet(positions, rotations, scales, opacities, colors)


# -- sky model ---------------------------------------------------------------------


@dataclass(frozen=True)
class SkyModelParams:
    """Weights of the direction-conditioned sky head.

    eval path: x = LayerNorm_noaffine(sin(d @ dir_freq.T + dir_phase));
    x = x * (1 + scale(c)) + shift(c); rgb = x @ w_rgb + b_rgb.
    encode path: one attention block pooling 8x8 sky patches into c.
    """

    dir_freq: np.ndarray  # (192, 3)
    dir_phase: np.ndarray  # (192,)
    query: np.ndarray  # (192,)
    w_patch: np.ndarray  # (192, 192)
    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray
    w_o: np.ndarray
    w_mod: np.ndarray  # (192, 384) -> scale, shift
    b_mod: np.ndarray  # (384,)
    w_rgb: np.ndarray  # (192, 3)
    b_rgb: np.ndarray  # (3,)

    @classmethod
    def random(cls, seed: int = 0) -> "SkyModelParams":
        rng = np.random.default_rng(seed)
        d = SKY_DIM
        std = 1.0 / np.sqrt(d)
        return cls(
            dir_freq=rng.normal(0.0, 2.0, (d, 3)),
            dir_phase=rng.uniform(0.0, 2.0 * np.pi, d),
            query=rng.normal(0.0, std, d),
            w_patch=rng.normal(0.0, std, (d, d)),
            w_q=rng.normal(0.0, std, (d, d)),
            w_k=rng.normal(0.0, std, (d, d)),
            w_v=rng.normal(0.0, std, (d, d)),
            w_o=rng.normal(0.0, std, (d, d)),
            w_mod=rng.normal(0.0, std, (d, 2 * d)),
            b_mod=np.zeros(2 * d),
            w_rgb=rng.normal(0.0, std, (d, 3)),
            b_rgb=np.full(3, 0.5),
        )

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: np.asarray(getattr(self, k)) for k in self.__dataclass_fields__}


def _layer_norm(x: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    mean = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    return (x - mean) / np.sqrt(var + eps)


def sky_embed_direction(params: SkyModelParams, directions: np.ndarray) -> np.ndarray:
    return np.sin(np.asarray(directions, dtype=np.float64) @ params.dir_freq.T + params.dir_phase)


def sky_eval(params: SkyModelParams, c: np.ndarray, directions: np.ndarray) -> np.ndarray:
    """RGB for unit view directions (..., 3), modulated by the sky latent c."""
    x = _layer_norm(sky_embed_direction(params, directions))
    mod = np.asarray(c, dtype=np.float64) @ params.w_mod + params.b_mod
    scale, shift = mod[:SKY_DIM], mod[SKY_DIM:]
    x = x * (1.0 + scale) + shift
    return x @ params.w_rgb + params.b_rgb


def sky_attention_pool(params: SkyModelParams, embeds: np.ndarray) -> np.ndarray:
    """Single attention block: the query token attends over the patch embeds
    and passes through a residual connection. Zero patches return the query."""
    if len(embeds) == 0:
        return params.query.copy()
    e = np.asarray(embeds, dtype=np.float64)
    q = params.query @ params.w_q
    k = e @ params.w_k
    v = e @ params.w_v
    logits = k @ q / np.sqrt(SKY_DIM)
    weights = np.exp(logits - logits.max())
    weights /= weights.sum()
    return params.query + (weights @ v) @ params.w_o


def sky_patch_embeddings(
    params: SkyModelParams, image: np.ndarray, sky_mask: np.ndarray, camera: Camera
) -> np.ndarray:
    """Embeddings of all full 8x8 patches whose pixels are entirely sky.

    Each embedding is the flattened patch through the patch projection plus
    the direction embedding of the patch's central ray.
    """
    image = np.asarray(image, dtype=np.float64)
    mask = np.asarray(sky_mask, dtype=bool)
    h, w = mask.shape
    dirs = camera.ray_directions()
    embeds = []
    for i in range(h // SKY_PATCH):
        for j in range(w // SKY_PATCH):
            ys = slice(i * SKY_PATCH, (i + 1) * SKY_PATCH)
            xs = slice(j * SKY_PATCH, (j + 1) * SKY_PATCH)
            if not mask[ys, xs].all():
                continue
            flat = image[ys, xs].reshape(-1)
            center_dir = dirs[i * SKY_PATCH + SKY_PATCH // 2, j * SKY_PATCH + SKY_PATCH // 2]
            embeds.append(flat @ params.w_patch + sky_embed_direction(params, center_dir))
    return np.asarray(embeds).reshape(-1, SKY_DIM)


def sky_encode(
    params: SkyModelParams, image: np.ndarray, sky_mask: np.ndarray, camera: Camera
) -> np.ndarray:
    """Pool the sky patches of one frame into the latent c."""
    return sky_attention_pool(params, sky_patch_embeddings(params, image, sky_mask, camera))


# -- attribute prediction -----------------------------------------------------------

Predictor = Callable[[GuidanceBufferSet, np.ndarray, Camera, SparseVoxelGrid], tuple[np.ndarray, np.ndarray]]


def heuristic_attribute_predictor(
    buffers: GuidanceBufferSet,
    image: np.ndarray,
    camera: Camera,
    grid: SparseVoxelGrid,
) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic attribute stand-in so composition runs without any network.

    Pixel branch: depth raws invert the depth parameterization of the
    rendered voxel depth (logit(0.5) where it is missing), colors copy the
    image, opacity 0.9, isotropic scale proportional to depth / fx. Voxel
    branch: colors sampled from the projecting pixel (mid-gray fallback),
    opacity 0.9, zero offsets, scale 0.7 * voxel_size.
    """
    image = np.asarray(image, dtype=np.float64)
    h, w = camera.height, camera.width
    if image.shape != (h, w, 3):
        raise ValueError("image size must match the camera")
    z = np.asarray(buffers.depth, dtype=np.float64)
    known = z > 0
    omega = np.where(known, (z - Z_NEAR) / (Z_FAR - Z_NEAR), 0.5)
    depth_raw = logit(np.clip(omega, 1e-7, 1.0 - 1e-7))
    z_eff = np.where(known, z, (1.0 - 0.5) * Z_NEAR + 0.5 * Z_FAR)
    scale_raw = np.log(np.clip(z_eff / camera.fx, SCALE_MIN, SCALE_MAX))

    per_gauss = np.zeros((h, w, PIXEL_CHANNELS))
    per_gauss[..., 0:3] = logit(image)
    per_gauss[..., 3] = 1.0  # identity quaternion raw
    per_gauss[..., 7:10] = scale_raw[..., None]
    per_gauss[..., 10] = logit(0.9)
    per_gauss[..., 11] = depth_raw
    pixel_raw = np.concatenate([per_gauss, per_gauss], axis=-1)

    m = len(grid)
    voxel_raw = np.zeros((m, VOXEL_GAUSSIANS * VOXEL_CHANNELS))
    if m:
        cam_pts = camera.world_to_camera(grid.centers())
        zs = cam_pts[:, 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            us = np.where(zs > 1e-9, camera.fx * cam_pts[:, 0] / zs + camera.cx, -1.0)
            vs = np.where(zs > 1e-9, camera.fy * cam_pts[:, 1] / zs + camera.cy, -1.0)
        visible = (zs > 1e-9) & (us >= 0) & (us < w) & (vs >= 0) & (vs < h)
        colors = np.full((m, 3), 0.5)
        colors[visible] = image[vs[visible].astype(int), us[visible].astype(int)]
        one = np.zeros((m, VOXEL_CHANNELS))
        one[:, 0:3] = logit(colors)
        one[:, 3] = 1.0
        one[:, 7:10] = np.log(np.clip(0.7 * grid.voxel_size, SCALE_MIN, SCALE_MAX))
        one[:, 10] = logit(0.9)
        voxel_raw = np.tile(one, (1, VOXEL_GAUSSIANS))
    return voxel_raw, pixel_raw


@dataclass
class ExternalFilePredictor:
    """Raw attribute maps produced elsewhere, read from a directory.

    Expects pixel_<frame:04d>.npy of shape (h, w, 24) and voxel.npy of shape
    (n_voxels, 56) aligned with the fine grid's iteration order.
    """

    root: Path
    frame: int = 0

    def __call__(self, buffers, image, camera, grid):
        root = Path(self.root)
        pixel_raw = np.load(root / f"pixel_{self.frame:04d}.npy")
        voxel_raw = np.load(root / "voxel.npy")
        return voxel_raw, pixel_raw


# -- scene composition ---------------------------------------------------------------


@dataclass(frozen=True)
class SceneObject:
    instance_id: int
    canonical: GaussianSet
    track: BoxTrack


@dataclass(frozen=True)
class GaussianScene:
    static: GaussianSet
    objects: tuple[SceneObject, ...]
    sky_params: Optional[SkyModelParams] = None
    sky_latent: Optional[np.ndarray] = None

    def posed_at(self, t: float) -> tuple[GaussianSet, np.ndarray]:
        """All Gaussians at time t plus per-Gaussian instance ids (-1 static)."""
        parts = [self.static]
        ids = [np.full(len(self.static), -1, dtype=np.int32)]
        for obj in self.objects:
            center, heading = obj.track.pose_at(t)
            posed = obj.canonical.transformed(RigidPose.from_heading(center, heading))
            parts.append(posed)
            ids.append(np.full(len(posed), obj.instance_id, dtype=np.int32))
        return concat_gaussians(parts), np.concatenate(ids)

    def sky_rgb(self, directions: np.ndarray) -> np.ndarray:
        if self.sky_params is not None and self.sky_latent is not None:
            return sky_eval(self.sky_params, self.sky_latent, directions)
        up = np.clip(np.asarray(directions)[..., 2], 0.0, 1.0)
        return HORIZON_RGB + up[..., None] * (ZENITH_RGB - HORIZON_RGB)


def extract_dynamic_object(
    pixel_sets: Sequence[GaussianSet],
    instance_buffers: Sequence[np.ndarray],
    times: Sequence[float],
    track: BoxTrack,
    dilation: float = BOX_KEEP_DILATION,
) -> GaussianSet:
    """Aggregate one object's pixel-branch Gaussians in its canonical box frame.

    Per frame, Gaussians whose source pixel carries the track's instance id
    are mapped through the inverse frame pose; the union is clipped to the
    dilated canonical box.
    """
    parts = []
    for gset, inst, t in zip(pixel_sets, instance_buffers, times):
        ids = np.repeat(np.asarray(inst, dtype=np.int32).reshape(-1), PIXEL_GAUSSIANS)
        if len(ids) != len(gset):
            raise ValueError("instance buffer does not match the pixel gaussian count")
        sel = ids == track.instance_id
        if not sel.any():
            continue
        center, heading = track.pose_at(float(t))
        inv = RigidPose.from_heading(center, heading).inverse()
        parts.append(gset.select(sel).transformed(inv))
    merged = concat_gaussians(parts)
    if len(merged) == 0:
        return merged
    half = dilation * track.size / 2.0
    keep = np.all(np.abs(merged.positions) <= half, axis=1)
    return merged.select(keep)


def split_static_world(world: SparseVoxelGrid) -> SparseVoxelGrid:
    """Drop vehicle-labeled voxels (those carry instance ids) from the grid."""
    vehicle = np.isin(world.label_values, [l.value for l in VEHICLE_LABELS])
    return world.filtered(~vehicle)


def composite_scene(
    world: SparseVoxelGrid,
    buffers: Sequence[GuidanceBufferSet],
    images: Sequence[np.ndarray],
    trajectory: Trajectory,
    predictor: Predictor,
    tracks: Sequence[BoxTrack],
    *,
    sky_params: Optional[SkyModelParams] = None,
    pixel_frame_stride: int = 4,
) -> GaussianScene:
    """Compose static voxel-branch, mid-ground pixel-branch, and per-object
    dynamic Gaussians into one scene.

    The voxel branch runs once over the subdivided static world; the pixel
    branch runs on every pixel_frame_stride-th frame.
    """
    if not (len(buffers) == len(images) == len(trajectory)):
        raise ValueError("buffers, images and trajectory must align")
    static_grid = split_static_world(world)
    fine = subdivide(static_grid)

    static_parts = []
    pixel_sets, instance_bufs, pixel_times = [], [], []
    voxel_done = False
    for f in range(0, len(buffers), pixel_frame_stride):
        cam = trajectory.cameras[f]
        voxel_raw, pixel_raw = predictor(buffers[f], images[f], cam, fine)
        if not voxel_done:
            static_parts.append(decode_voxel_gaussians(voxel_raw, fine))
            voxel_done = True
        pix = decode_pixel_gaussians(pixel_raw, cam)
        mid = np.repeat(buffers[f].midground.reshape(-1), PIXEL_GAUSSIANS)
        static_parts.append(pix.select(mid))
        pixel_sets.append(pix)
        instance_bufs.append(buffers[f].instance)
        pixel_times.append(float(trajectory.times[f]))

    objects = []
    for track in tracks:
        canonical = extract_dynamic_object(pixel_sets, instance_bufs, pixel_times, track)
        objects.append(SceneObject(track.instance_id, canonical, track))

    sky_latent = None
    if sky_params is not None and buffers:
        sky_mask = (buffers[0].depth == 0) & ~buffers[0].midground
        sky_latent = sky_encode(sky_params, images[0], sky_mask, trajectory.cameras[0])
    return GaussianScene(concat_gaussians(static_parts), tuple(objects), sky_params, sky_latent)


def transform_dynamic(scene: GaussianScene, instance_id: int, new_track: BoxTrack) -> GaussianScene:
    """Re-pose one object by swapping its trajectory; canonical Gaussians untouched."""
    hit = False
    objects = []
    for obj in scene.objects:
        if obj.instance_id == instance_id:
            objects.append(replace(obj, track=new_track))
            hit = True
        else:
            objects.append(obj)
    if not hit:
        raise KeyError(f"no dynamic object with instance id {instance_id}")
    return replace(scene, objects=tuple(objects))


# -- reference splat renderer ---------------------------------------------------------


def screen_projection(gaussians: GaussianSet, camera: Camera):
    """Means, 2x2 covariances and camera depths of all Gaussians with z > 0."""
    p_cam = camera.world_to_camera(gaussians.positions)
    z = p_cam[:, 2]
    keep = z > 1e-4
    idx = np.flatnonzero(keep)
    p_cam = p_cam[keep]
    z = z[keep]
    rot = quats_to_matrices(gaussians.rotations[keep])
    s2 = gaussians.scales[keep] ** 2
    cov_world = rot * s2[:, None, :] @ np.swapaxes(rot, 1, 2)
    a = camera.rotation.T
    cov_cam = a @ cov_world @ a.T

    fx, fy = camera.fx, camera.fy
    x, y = p_cam[:, 0], p_cam[:, 1]
    jac = np.zeros((len(z), 2, 3))
    jac[:, 0, 0] = fx / z
    jac[:, 0, 2] = -fx * x / z**2
    jac[:, 1, 1] = fy / z
    jac[:, 1, 2] = -fy * y / z**2
    cov2 = jac @ cov_cam @ np.swapaxes(jac, 1, 2)
    means = np.stack([fx * x / z + camera.cx, fy * y / z + camera.cy], axis=1)
    return idx, means, cov2, z


def render_splats(
    scene: GaussianScene, camera: Camera, t: float = 0.0
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Alpha-composite the posed scene front-to-back; the sky fills leftover
    transmittance. Returns (rgb, alpha, depth).

    Footprints use the perspective-affine 2D covariance, truncated at
    Mahalanobis^2 = 9; Gaussians whose projected covariance is not positive
    definite are skipped. Depth is the alpha-weighted mean camera z.
    """
    h, w = camera.height, camera.width
    posed, _ = scene.posed_at(t)
    rgb = np.zeros((h, w, 3))
    transmittance = np.ones((h, w))
    z_accum = np.zeros((h, w))
    w_accum = np.zeros((h, w))

    if len(posed):
        idx, means, cov2, z = screen_projection(posed, camera)
        order = np.argsort(z, kind="stable")
        for n in order:
            a_, b_, c_, d_ = cov2[n, 0, 0], cov2[n, 0, 1], cov2[n, 1, 0], cov2[n, 1, 1]
            det = a_ * d_ - b_ * c_
            if det <= 0 or a_ <= 0:
                continue
            rx = 3.0 * np.sqrt(a_)
            ry = 3.0 * np.sqrt(d_)
            u0 = max(0, int(np.ceil(means[n, 0] - rx - 0.5)))
            u1 = min(w - 1, int(np.floor(means[n, 0] + rx - 0.5)))
            v0 = max(0, int(np.ceil(means[n, 1] - ry - 0.5)))
            v1 = min(h - 1, int(np.floor(means[n, 1] + ry - 0.5)))
            if u0 > u1 or v0 > v1:
                continue
            us = np.arange(u0, u1 + 1) + 0.5 - means[n, 0]
            vs = np.arange(v0, v1 + 1) + 0.5 - means[n, 1]
            uu, vv = np.meshgrid(us, vs)
            maha = (d_ * uu * uu - (b_ + c_) * uu * vv + a_ * vv * vv) / det
            weight = np.where(maha <= MAHA_CUTOFF, np.exp(-0.5 * maha), 0.0)
            alpha = posed.opacities[idx[n]] * weight
            tile = transmittance[v0 : v1 + 1, u0 : u1 + 1]
            contrib = tile * alpha
            rgb[v0 : v1 + 1, u0 : u1 + 1] += contrib[..., None] * posed.colors[idx[n]]
            z_accum[v0 : v1 + 1, u0 : u1 + 1] += contrib * z[n]
            w_accum[v0 : v1 + 1, u0 : u1 + 1] += contrib
            transmittance[v0 : v1 + 1, u0 : u1 + 1] = tile * (1.0 - alpha)

    rgb += transmittance[..., None] * scene.sky_rgb(camera.ray_directions())
    alpha = 1.0 - transmittance
    depth = np.where(w_accum > 0, z_accum / np.maximum(w_accum, 1e-300), 0.0)
    return rgb, alpha, depth


# -- scene persistence ----------------------------------------------------------------

_PLY_PROPS = (
    ["x", "y", "z", "nx", "ny", "nz"]
    + [f"f_dc_{i}" for i in range(3)]
    + ["opacity"]
    + [f"scale_{i}" for i in range(3)]
    + [f"rot_{i}" for i in range(4)]
)


def write_gaussian_ply(gaussians: GaussianSet, path) -> None:
    """Point-list layout: positions, zero normals, SH DC color, opacity logit,
    log scales, quaternion; float32 little-endian."""
    n = len(gaussians)
    header = "ply\nformat binary_little_endian 1.0\n" + f"element vertex {n}\n"
    header += "".join(f"property float {p}\n" for p in _PLY_PROPS) + "end_header\n"
    data = np.zeros((n, len(_PLY_PROPS)), dtype="<f4")
    data[:, 0:3] = gaussians.positions
    data[:, 6:9] = (gaussians.colors - 0.5) / SH_C0
    data[:, 9] = logit(gaussians.opacities)
    data[:, 10:13] = np.log(gaussians.scales)
    data[:, 13:17] = gaussians.rotations
    Path(path).write_bytes(header.encode() + data.tobytes())


def read_gaussian_ply(path) -> GaussianSet:
    blob = Path(path).read_bytes()
    end = blob.index(b"end_header\n") + len(b"end_header\n")
    header = blob[:end].decode()
    lines = header.strip().split("\n")
    if "format binary_little_endian 1.0" not in lines[1]:
        raise ValueError("expected binary little-endian ply")
    count = int(next(l for l in lines if l.startswith("element vertex")).split()[-1])
    props = [l.split()[-1] for l in lines if l.startswith("property")]
    data = np.frombuffer(blob, dtype="<f4", count=count * len(props), offset=end)
    data = data.reshape(count, len(props)).astype(np.float64)
    col = {p: data[:, i] for i, p in enumerate(props)}
    colors = np.clip(np.stack([col[f"f_dc_{i}"] for i in range(3)], axis=1) * SH_C0 + 0.5, 0.0, 1.0)
    return GaussianSet(
        np.stack([col["x"], col["y"], col["z"]], axis=1),
        normalize_quats(np.stack([col[f"rot_{i}"] for i in range(4)], axis=1)),
        np.exp(np.stack([col[f"scale_{i}"] for i in range(3)], axis=1)),
        sigmoid(col["opacity"]),
        colors,
    )


def save_scene(scene: GaussianScene, out_dir) -> None:
    out = Path(out_dir)
    (out / "objects").mkdir(parents=True, exist_ok=True)
    write_gaussian_ply(scene.static, out / "static.ply")
    manifest = {"version": 1, "static": "static.ply", "objects": [], "sky": None}
    for obj in scene.objects:
        name = f"objects/obj_{obj.instance_id}.ply"
        write_gaussian_ply(obj.canonical, out / name)
        manifest["objects"].append({"id": obj.instance_id, "ply": name})
    save_box_tracks([obj.track for obj in scene.objects], out / "tracks.json")
    if scene.sky_params is not None:
        arrays = scene.sky_params.arrays()
        if scene.sky_latent is not None:
            arrays["latent"] = scene.sky_latent
        np.savez(out / "sky.npz", **arrays)
        manifest["sky"] = "sky.npz"
    (out / "scene.json").write_text(json.dumps(manifest, sort_keys=True, indent=1))


def load_scene(in_dir) -> GaussianScene:
    src = Path(in_dir)
    manifest = json.loads((src / "scene.json").read_text())
    static = read_gaussian_ply(src / manifest["static"])
    tracks = {t.instance_id: t for t in load_box_tracks(src / "tracks.json")}
    objects = tuple(
        SceneObject(rec["id"], read_gaussian_ply(src / rec["ply"]), tracks[rec["id"]])
        for rec in manifest["objects"]
    )
    sky_params, sky_latent = None, None
    if manifest.get("sky"):
        with np.load(src / manifest["sky"]) as arrs:
            fields = {k: arrs[k] for k in arrs.files if k != "latent"}
            sky_params = SkyModelParams(**fields)
            if "latent" in arrs.files:
                sky_latent = arrs["latent"]
    return GaussianScene(static, objects, sky_params, sky_latent)
