"""Chunked latent diffusion: DDIM sampling with v-parameterization, classifier-free
guidance, and per-step overlap blending that grows an unbounded latent world.

The denoiser is a pluggable contract: any callable
``denoiser(x_t, t, conditions, uncond) -> v`` of matching shape works. The
built-in toy denoiser returns the exact posterior-mean v for elementwise
Gaussian data, which makes the whole sampling loop verifiable in closed form
without any trained weights. A subprocess protocol (see `plugin`) attaches
real models through the same contract.

v-parameterization conventions, with a = abar_t:
    x_t   = sqrt(a) * x0 + sqrt(1 - a) * eps
    v     = sqrt(a) * eps - sqrt(1 - a) * x0
    x0^   = sqrt(a) * x_t - sqrt(1 - a) * v
    eps^  = sqrt(1 - a) * x_t + sqrt(a) * v
"""

from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .conditions import ChunkFrame
from .grid import SparseVoxelGrid
from .labels import SemanticLabel

Denoiser = Callable[..., np.ndarray]


class SamplerDiverged(RuntimeError):
    """The denoiser produced non-finite values; the trajectory is aborted."""


@dataclass(frozen=True)
class NoiseSchedule:
    """Cumulative scheduling factors abar[0..T], strictly decreasing, abar[0] = 1."""

    abar: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.abar, dtype=np.float64)
        if a[0] != 1.0 or np.any(a <= 0) or np.any(a > 1) or np.any(np.diff(a) >= 0):
            raise ValueError("abar must start at 1, stay in (0, 1], and strictly decrease")
        object.__setattr__(self, "abar", a)

    @property
    def t_steps(self) -> int:
        return len(self.abar) - 1

    @classmethod
    def cosine(cls, t_steps: int = 1000, s: float = 0.008, floor: float = 1e-8) -> "NoiseSchedule":
        t = np.arange(t_steps + 1, dtype=np.float64)
        f = np.cos(((t / t_steps) + s) / (1 + s) * np.pi / 2.0) ** 2
        abar = np.clip(f / f[0], floor, 1.0)
        abar[0] = 1.0
        # the clip floor can flatten the tail; force strict decrease there
        for i in range(1, len(abar)):
            if abar[i] >= abar[i - 1]:
                abar[i] = np.nextafter(abar[i - 1], 0.0)
        return cls(abar)

    def ddim_timesteps(self, n_steps: int = 100) -> np.ndarray:
        """Uniform stride from T down to 0 inclusive (n_steps + 1 entries)."""
        if not (1 <= n_steps <= self.t_steps):
            raise ValueError("n_steps must be in [1, T]")
        return np.linspace(self.t_steps, 0, n_steps + 1).round().astype(np.int64)


@dataclass(frozen=True)
class LatentCube:
    """Dense latent block (n, n, n, c) float32 placed by a chunk frame."""

    values: np.ndarray
    frame: ChunkFrame

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float32)
        if v.ndim != 4 or v.shape[0] != v.shape[1] or v.shape[1] != v.shape[2]:
            raise ValueError("latent values must have shape (n, n, n, c)")
        if v.shape[0] != self.frame.n:
            raise ValueError("latent extent does not match its frame")
        if not np.all(np.isfinite(v)):
            raise ValueError("latent values must be finite")
        object.__setattr__(self, "values", v)

    @property
    def channels(self) -> int:
        return self.values.shape[-1]


@dataclass(frozen=True)
class ChunkLayout:
    """Placed chunks of one outpainted scene, keyed by 2D chunk index."""

    chunks: dict[tuple[int, int], LatentCube]
    order: tuple[tuple[int, int], ...]
    stride_m: float
    seed: int = 0


# -- v-parameterization algebra ------------------------------------------------


def _check_abar(abar_t: float) -> float:
    a = float(abar_t)
    if not (0.0 < a <= 1.0):
        raise ValueError("abar_t must lie in (0, 1]")
    return a


def v_to_x0(x_t: np.ndarray, v: np.ndarray, abar_t: float) -> np.ndarray:
    a = _check_abar(abar_t)
    return math.sqrt(a) * x_t - math.sqrt(1.0 - a) * v


def v_to_eps(x_t: np.ndarray, v: np.ndarray, abar_t: float) -> np.ndarray:
    a = _check_abar(abar_t)
    return math.sqrt(1.0 - a) * x_t + math.sqrt(a) * v


def v_target(x0: np.ndarray, eps: np.ndarray, abar_t: float) -> np.ndarray:
    """Training-target v for known clean data and noise."""
    a = _check_abar(abar_t)
    return math.sqrt(a) * eps - math.sqrt(1.0 - a) * x0


def noise_to(x0: np.ndarray, eps: np.ndarray, abar_t: float) -> np.ndarray:
    """Forward-noised sample x_t."""
    a = _check_abar(abar_t)
    return math.sqrt(a) * x0 + math.sqrt(1.0 - a) * eps


def cfg_combine(v_cond: np.ndarray, v_uncond: np.ndarray, w: float) -> np.ndarray:
    """Classifier-free guidance: v_uncond + w * (v_cond - v_uncond)."""
    if np.shape(v_cond) != np.shape(v_uncond):
        raise ValueError("guidance branches must have equal shapes")
    return v_uncond + w * (v_cond - v_uncond)


def _predict_v(x, t, denoiser, conditions, w):
    v_cond = denoiser(x, t, conditions, False)
    if w == 1.0:
        v = np.asarray(v_cond)
    else:
        v_uncond = denoiser(x, t, conditions, True)
        v = cfg_combine(np.asarray(v_cond), np.asarray(v_uncond), w)
    if not np.all(np.isfinite(v)):
        raise SamplerDiverged(f"non-finite v prediction at t={t}")
    return v


def ddim_step(
    x_t: np.ndarray,
    t: int,
    t_next: int,
    denoiser: Denoiser,
    conditions,
    schedule: NoiseSchedule,
    w: float = 1.0,
) -> np.ndarray:
    """One deterministic DDIM update from timestep t to t_next (t_next <= t)."""
    if t_next > t:
        raise ValueError("t_next must not exceed t")
    v = _predict_v(x_t, t, denoiser, conditions, w)
    a, a_next = float(schedule.abar[t]), float(schedule.abar[t_next])
    x0_hat = v_to_x0(x_t, v, a)
    eps_hat = v_to_eps(x_t, v, a)
    return math.sqrt(a_next) * x0_hat + math.sqrt(1.0 - a_next) * eps_hat


def repaint_blend(
    x_new_hat: np.ndarray,
    x_exist: np.ndarray,
    mask: np.ndarray,
    abar_t: float,
    eps: np.ndarray,
) -> np.ndarray:
    """Blend freshly denoised values with the noised fixed region.

    x_exist_hat = sqrt(a) * x_exist + sqrt(1 - a) * eps
    out         = (1 - M) * x_new_hat + M * x_exist_hat

    At a = 1 the masked region equals x_exist bit-exactly.
    """
    a = _check_abar(abar_t)
    m = np.asarray(mask, dtype=x_new_hat.dtype)
    if m.ndim == x_new_hat.ndim - 1:
        m = m[..., None]
    x_exist_hat = math.sqrt(a) * x_exist + math.sqrt(1.0 - a) * eps
    return (1.0 - m) * x_new_hat + m * x_exist_hat


def sample_chunk(
    conditions,
    denoiser: Denoiser,
    schedule: NoiseSchedule,
    *,
    frame: ChunkFrame,
    channels: int = 8,
    steps: int = 100,
    guidance_weight: float = 2.0,
    mask: Optional[np.ndarray] = None,
    x_exist: Optional[np.ndarray] = None,
    seed: int = 0,
    rng: Optional[np.random.Generator] = None,
) -> LatentCube:
    """Full DDIM loop for one chunk, blending the fixed region after every step."""
    if (mask is None) != (x_exist is None):
        raise ValueError("mask and x_exist must be supplied together")
    n = frame.n
    shape = (n, n, n, channels)
    if rng is None:
        rng = np.random.default_rng(seed)
    x = rng.standard_normal(shape, dtype=np.float32)
    if mask is not None:
        mask = np.asarray(mask)
        if mask.shape != (n, n, n):
            raise ValueError("mask must have shape (n, n, n)")
        if not np.all((mask == 0) | (mask == 1)):
            raise ValueError("mask must be binary")
        x_exist = np.asarray(x_exist, dtype=np.float32)
        if x_exist.shape != shape:
            raise ValueError("x_exist shape mismatch")
    timesteps = schedule.ddim_timesteps(steps)
    for t, t_next in zip(timesteps[:-1], timesteps[1:]):
        x = ddim_step(x, int(t), int(t_next), denoiser, conditions, schedule, guidance_weight)
        if mask is not None:
            eps = rng.standard_normal(shape, dtype=np.float32)
            x = repaint_blend(x, x_exist, mask, float(schedule.abar[t_next]), eps)
    return LatentCube(x.astype(np.float32), frame)


def chunk_rng_seed(seed: int, index: tuple[int, int]) -> list[int]:
    """Seed material for one chunk; independent of generation order."""
    return [int(seed), int(index[0]) + 2**31, int(index[1]) + 2**31]


def outpaint_scene(
    chunk_indices,
    conditions,
    denoiser: Denoiser,
    schedule: NoiseSchedule,
    *,
    base_frame: ChunkFrame = ChunkFrame(),
    stride_m: float = 25.6,
    channels: int = 8,
    steps: int = 100,
    guidance_weight: float = 2.0,
    seed: int = 0,
    preplaced: Optional[ChunkLayout] = None,
) -> ChunkLayout:
    """Generate a set of chunks breadth-first, constraining each new chunk's
    overlap with everything already placed so seams are bit-identical.

    `conditions` is either a mapping from chunk index to a condition volume or
    a callable (index, frame) -> condition volume. Passing `preplaced` keeps
    those latents fixed and grows the requested chunks off them.
    """
    requested = {(int(i), int(j)) for i, j in chunk_indices}
    fixed_order = list(preplaced.order) if preplaced is not None else []
    requested |= set(fixed_order)
    if not requested:
        raise ValueError("empty chunk request")
    stride_cells = stride_m / base_frame.cell_size
    if abs(stride_cells - round(stride_cells)) > 1e-9:
        raise ValueError("stride must be an integer number of latent cells")
    stride_cells = int(round(stride_cells))
    if not (0 < stride_cells <= base_frame.n):
        raise ValueError("stride must lie in (0, chunk extent]")

    if fixed_order:
        order = list(fixed_order)
        seen = set(order)
        queue = deque(order)
    else:
        start = (0, 0) if (0, 0) in requested else min(sorted(requested))
        order = []
        seen = {start}
        queue = deque([start])
    while queue:
        cur = queue.popleft()
        if cur not in order:
            order.append(cur)
        for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            nxt = (cur[0] + di, cur[1] + dj)
            if nxt in requested and nxt not in seen:
                seen.add(nxt)
                queue.append(nxt)
    if seen != requested:
        missing = sorted(requested - seen)
        raise ValueError(f"chunk request is not 4-connected to {order[0]}: unreachable {missing}")

    def cond_for(index, frame):
        if callable(conditions):
            return conditions(index, frame)
        return conditions[index]

    n = base_frame.n
    placed: dict[tuple[int, int], LatentCube] = dict(preplaced.chunks) if preplaced else {}
    for pos, index in enumerate(order):
        if index in placed:
            continue
        ci, cj = index
        frame = base_frame.shifted(ci * stride_m, cj * stride_m)
        mask = np.zeros((n, n, n), dtype=np.float32)
        x_exist = np.zeros((n, n, n, channels), dtype=np.float32)
        for prev in order[:pos]:
            di = (prev[0] - ci) * stride_cells
            dj = (prev[1] - cj) * stride_cells
            i0, i1 = max(0, di), min(n, di + n)
            j0, j1 = max(0, dj), min(n, dj + n)
            if i0 >= i1 or j0 >= j1:
                continue
            region = mask[i0:i1, j0:j1, :]
            fresh = region == 0
            src = placed[prev].values[i0 - di : i1 - di, j0 - dj : j1 - dj, :]
            x_exist[i0:i1, j0:j1, :][fresh] = src[fresh]
            region[fresh] = 1.0
        has_overlap = bool(mask.any())
        rng = np.random.default_rng(chunk_rng_seed(seed, index))
        placed[index] = sample_chunk(
            cond_for(index, frame),
            denoiser,
            schedule,
            frame=frame,
            channels=channels,
            steps=steps,
            guidance_weight=guidance_weight,
            mask=mask if has_overlap else None,
            x_exist=x_exist if has_overlap else None,
            rng=rng,
        )
    return ChunkLayout(placed, tuple(order), stride_m, seed)


# -- toy denoiser / encoder / decoder -------------------------------------------


@dataclass(frozen=True)
class ToyLinearGaussianDenoiser:
    """Exact posterior-mean v for elementwise-Gaussian data x0 ~ N(mu, sigma^2).

    With x_t = sqrt(a) x0 + sqrt(1-a) eps the conditional means are closed
    form, so every DDIM claim about this denoiser can be checked analytically.
    Conditions are ignored; the unconditional branch coincides with the
    conditional one.
    """

    schedule: NoiseSchedule
    mu: float = 0.0
    sigma: float = 1.0

    def __call__(self, x_t: np.ndarray, t: int, conditions=None, uncond: bool = False) -> np.ndarray:
        a = float(self.schedule.abar[t])
        var_t = a * self.sigma**2 + (1.0 - a)
        x0_mean = self.mu + (math.sqrt(a) * self.sigma**2 / var_t) * (x_t - math.sqrt(a) * self.mu)
        if a == 1.0:
            eps_mean = np.zeros_like(x_t)
        else:
            eps_mean = (x_t - math.sqrt(a) * x0_mean) / math.sqrt(1.0 - a)
        return (math.sqrt(a) * eps_mean - math.sqrt(1.0 - a) * x0_mean).astype(x_t.dtype)


_LABEL_ORDER = list(SemanticLabel)


def decode_dense(values: np.ndarray, origin, cell_size: float, upsample_factor: int = 8) -> SparseVoxelGrid:
    """Nearest-neighbor decode of any dense latent block into a voxel grid.

    Occupancy is channel 0 > 0; the semantic label is the argmax over the
    remaining channels, mapped into the label enumeration.
    """
    values = np.asarray(values)
    occupied = np.argwhere(values[..., 0] > 0)
    voxel_size = cell_size / upsample_factor
    if len(occupied) == 0:
        return SparseVoxelGrid.empty(origin, voxel_size)
    label_idx = np.argmax(values[..., 1:], axis=-1)[tuple(occupied.T)]
    labels = np.array([_LABEL_ORDER[i % len(_LABEL_ORDER)].value for i in label_idx], dtype=np.uint8)

    f = upsample_factor
    offs = np.stack(np.meshgrid(*(np.arange(f),) * 3, indexing="ij"), axis=-1).reshape(-1, 3)
    coords = (occupied[:, None, :] * f + offs[None, :, :]).reshape(-1, 3)
    labels = np.repeat(labels, f**3)
    return SparseVoxelGrid.from_cells(origin, voxel_size, coords, labels)


def toy_decoder(latent: LatentCube, upsample_factor: int = 8) -> SparseVoxelGrid:
    """Decoder stand-in: latent cube -> semantic voxel grid at cell_size/factor."""
    return decode_dense(latent.values, latent.frame.origin_array(), latent.frame.cell_size, upsample_factor)


def toy_encode(grid: SparseVoxelGrid, frame: ChunkFrame, channels: int = 8) -> LatentCube:
    """Inverse stand-in for toy_decoder: occupancy sign + label histogram pooling."""
    factor = frame.cell_size / grid.voxel_size
    if abs(factor - round(factor)) > 1e-9:
        raise ValueError("frame cell size must be an integer multiple of the voxel size")
    factor = int(round(factor))
    n = frame.n
    values = np.zeros((n, n, n, channels), dtype=np.float32)
    values[..., 0] = -1.0
    rel = grid.coords() - np.round(
        (frame.origin_array() - grid.origin) / grid.voxel_size
    ).astype(np.int64)
    cells = np.floor_divide(rel, factor)
    inside = np.all((cells >= 0) & (cells < n), axis=1)
    cells = cells[inside]
    labels = grid.label_values[inside]
    if len(cells):
        ci, cj, ck = cells[:, 0], cells[:, 1], cells[:, 2]
        values[ci, cj, ck, 0] = 1.0
        chan = 1 + (labels.astype(np.int64) % (channels - 1))
        np.add.at(values, (ci, cj, ck, chan), 1.0 / factor**3)
    return LatentCube(values, frame)


# -- external denoiser plug-in ---------------------------------------------------


def save_latent(
    cube: LatentCube, path, *, chunk_index: tuple[int, int] | None = None, seed: int | None = None
) -> None:
    """Raw little-endian f32 blob plus a JSON sidecar describing it."""
    path = Path(path)
    path.write_bytes(cube.values.astype("<f4").tobytes())
    sidecar = {
        "n": cube.frame.n,
        "channels": cube.channels,
        "frame": cube.frame.to_json(),
        "chunk_index": list(chunk_index) if chunk_index is not None else None,
        "seed": seed,
        "dtype": "<f4",
        "layout": "row-major (i, j, k, c)",
    }
    path.with_suffix(path.suffix + ".json").write_text(json.dumps(sidecar, sort_keys=True, indent=1))


def load_latent(path) -> LatentCube:
    path = Path(path)
    sidecar = json.loads(path.with_suffix(path.suffix + ".json").read_text())
    frame = ChunkFrame.from_json(sidecar["frame"])
    n, c = int(sidecar["n"]), int(sidecar["channels"])
    values = np.frombuffer(path.read_bytes(), dtype="<f4").reshape(n, n, n, c)
    return LatentCube(values.copy(), frame)


@dataclass
class ExternalDenoiser:
    """Denoiser served by a child process over the plug-in protocol.

    Each request is three length-prefixed frames on the child's stdin: a JSON
    header {t, uncond, shape, cond_shape}, the latent as little-endian f32,
    and the condition volume as little-endian f32. The child answers with one
    frame holding the v prediction as little-endian f32 of the same shape.
    See `plugin.serve_denoiser` for the reference loop.
    """

    command: list[str]
    _proc: object = field(default=None, repr=False)

    def _ensure(self):
        if self._proc is None or self._proc.poll() is not None:
            import subprocess

            self._proc = subprocess.Popen(
                self.command, stdin=subprocess.PIPE, stdout=subprocess.PIPE
            )
        return self._proc

    def __call__(self, x_t: np.ndarray, t: int, conditions=None, uncond: bool = False) -> np.ndarray:
        from .netframe import read_frame, write_frame

        proc = self._ensure()
        cond_values = getattr(conditions, "values", conditions)
        cond_arr = (
            np.zeros((0,), dtype=np.float32)
            if cond_values is None
            else np.asarray(cond_values, dtype=np.float32)
        )
        header = {
            "t": int(t),
            "uncond": bool(uncond),
            "shape": list(x_t.shape),
            "cond_shape": list(cond_arr.shape),
        }
        write_frame(proc.stdin, json.dumps(header, sort_keys=True).encode())
        write_frame(proc.stdin, np.asarray(x_t, dtype="<f4").tobytes())
        write_frame(proc.stdin, cond_arr.astype("<f4").tobytes())
        proc.stdin.flush()
        payload = read_frame(proc.stdout)
        if payload is None:
            raise SamplerDiverged("external denoiser closed its stream")
        v = np.frombuffer(payload, dtype="<f4").reshape(x_t.shape)
        return v.copy()

    def close(self):
        if self._proc is not None and self._proc.poll() is None:
            self._proc.stdin.close()
            self._proc.wait(timeout=10)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
