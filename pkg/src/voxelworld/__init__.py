"""Semantic voxel worlds: chunked latent-diffusion outpainting, guidance-buffer
rendering, dual-branch Gaussian scene composition, and LiDAR simulation, with
every learned component behind a pluggable contract."""

from .labels import DEFAULT_PALETTE, Palette, SemanticLabel
from .grid import (
    SemanticVoxel,
    SparseVoxelGrid,
    VoxelCoord,
    crop,
    query,
    subdivide,
    union,
    voxelize_box,
    voxelize_segment,
)
from .conditions import (
    BoxTrack,
    ChunkFrame,
    ConditionVolume,
    HDMap,
    assemble_conditions,
    build_box_condition,
    build_conditions,
    build_hd_condition,
    fit_road_surface,
)
from .outpaint import (
    ChunkLayout,
    LatentCube,
    NoiseSchedule,
    SamplerDiverged,
    ToyLinearGaussianDenoiser,
    cfg_combine,
    ddim_step,
    outpaint_scene,
    repaint_blend,
    sample_chunk,
    toy_decoder,
    toy_encode,
    v_to_eps,
    v_to_x0,
)
from .buffers import (
    Camera,
    GuidanceBufferSet,
    Trajectory,
    mask_depth_patches,
    mid_ground_mask,
    raycast_dda,
    render_buffers,
)
from .gaussians import (
    GaussianScene,
    GaussianSet,
    SkyModelParams,
    composite_scene,
    decode_pixel_gaussians,
    decode_voxel_gaussians,
    extract_dynamic_object,
    heuristic_attribute_predictor,
    render_splats,
    sky_encode,
    sky_eval,
    transform_dynamic,
)
from .lidar import LidarPattern, LidarReturn, cast_lidar

__version__ = "0.1.0"
