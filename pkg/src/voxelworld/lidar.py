"""LiDAR simulation against a Gaussian scene.

Each beam is intersected with the k-sigma ellipsoid of every posed Gaussian
whose opacity clears the threshold (a hard-surface model: the quadratic
||diag(1/(k*s)) R^T (o + t*d - mu)|| = 1 is solved per Gaussian, and the
nearest positive root within range is the return).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .gaussians import GaussianScene
from .geometry import RigidPose, quats_to_matrices


@dataclass(frozen=True)
class LidarPattern:
    """Beam table in the sensor frame plus intersection-model parameters."""

    azimuths: np.ndarray  # radians
    elevations: np.ndarray  # radians
    max_range: float = 120.0
    opacity_threshold: float = 0.5
    k_sigma: float = 2.0

    def __post_init__(self):
        az = np.asarray(self.azimuths, dtype=np.float64).reshape(-1)
        el = np.asarray(self.elevations, dtype=np.float64).reshape(-1)
        if len(az) != len(el) or len(az) == 0:
            raise ValueError("need matching, non-empty azimuth/elevation tables")
        if not (np.all(np.isfinite(az)) and np.all(np.isfinite(el))):
            raise ValueError("beam angles must be finite")
        if self.max_range <= 0:
            raise ValueError("max_range must be positive")
        if not (0.0 < self.opacity_threshold < 1.0):
            raise ValueError("opacity_threshold must lie in (0, 1)")
        if self.k_sigma <= 0:
            raise ValueError("k_sigma must be positive")
        object.__setattr__(self, "azimuths", az)
        object.__setattr__(self, "elevations", el)

    def directions(self) -> np.ndarray:
        """(b, 3) unit directions in the sensor frame (x forward, z up)."""
        ca, sa = np.cos(self.azimuths), np.sin(self.azimuths)
        ce, se = np.cos(self.elevations), np.sin(self.elevations)
        return np.stack([ce * ca, ce * sa, se], axis=1)

    @classmethod
    def rotating(
        cls,
        beams: int = 64,
        azimuth_step_deg: float = 1.0,
        elevation_range_deg: tuple[float, float] = (-24.0, 4.0),
        **kwargs,
    ) -> "LidarPattern":
        az = np.deg2rad(np.arange(0.0, 360.0, azimuth_step_deg))
        el = np.deg2rad(np.linspace(elevation_range_deg[0], elevation_range_deg[1], beams))
        azg, elg = np.meshgrid(az, el)
        return cls(azg.reshape(-1), elg.reshape(-1), **kwargs)

    @classmethod
    def load(cls, path) -> "LidarPattern":
        doc = json.loads(Path(path).read_text())
        return cls(
            np.asarray(doc["azimuths_rad"], dtype=np.float64),
            np.asarray(doc["elevations_rad"], dtype=np.float64),
            max_range=float(doc.get("max_range", 120.0)),
            opacity_threshold=float(doc.get("opacity_threshold", 0.5)),
            k_sigma=float(doc.get("k_sigma", 2.0)),
        )

    def save(self, path) -> None:
        doc = {
            "azimuths_rad": self.azimuths.tolist(),
            "elevations_rad": self.elevations.tolist(),
            "max_range": self.max_range,
            "opacity_threshold": self.opacity_threshold,
            "k_sigma": self.k_sigma,
        }
        Path(path).write_text(json.dumps(doc, sort_keys=True))


@dataclass(frozen=True)
class LidarReturn:
    beam: int
    range: float
    position: np.ndarray
    instance_id: Optional[int] = None


def cast_lidar(
    scene: GaussianScene, sensor_pose: RigidPose, t: float, pattern: LidarPattern
) -> list[LidarReturn]:
    """Nearest ellipsoid intersection per beam; beams without one give no return."""
    posed, instance_ids = scene.posed_at(t)
    keep = posed.opacities >= pattern.opacity_threshold
    posed = posed.select(keep)
    instance_ids = instance_ids[keep]
    dirs = pattern.directions() @ sensor_pose.rotation.T
    origin = sensor_pose.translation
    if len(posed) == 0:
        return []

    # A maps world offsets into the unit-sphere frame of each ellipsoid
    rot = quats_to_matrices(posed.rotations)
    inv_radii = 1.0 / (pattern.k_sigma * posed.scales)
    a_mats = inv_radii[:, :, None] * np.swapaxes(rot, 1, 2)
    u = np.einsum("gij,gj->gi", a_mats, origin - posed.positions)
    cc = np.einsum("gi,gi->g", u, u) - 1.0

    returns: list[LidarReturn] = []
    for b, d in enumerate(dirs):
        w = np.einsum("gij,j->gi", a_mats, d)
        aa = np.einsum("gi,gi->g", w, w)
        bb = 2.0 * np.einsum("gi,gi->g", u, w)
        disc = bb * bb - 4.0 * aa * cc
        ok = disc >= 0
        if not ok.any():
            continue
        sq = np.sqrt(disc[ok])
        t1 = (-bb[ok] - sq) / (2.0 * aa[ok])
        t2 = (-bb[ok] + sq) / (2.0 * aa[ok])
        # smallest positive root; from inside an ellipsoid that is the exit
        tt = np.where(t1 > 0, t1, np.where(t2 > 0, t2, np.inf))
        best = np.argmin(tt)
        r = float(tt[best])
        if not (0.0 < r <= pattern.max_range):
            continue
        gid = np.flatnonzero(ok)[best]
        inst = int(instance_ids[gid])
        returns.append(
            LidarReturn(b, r, origin + r * d, None if inst < 0 else inst)
        )
    return returns


def save_point_cloud(returns: list[LidarReturn], path) -> None:
    """Plain CSV point list: x, y, z, beam, range, instance (-1 = none)."""
    lines = ["x,y,z,beam,range,instance"]
    for r in returns:
        inst = -1 if r.instance_id is None else r.instance_id
        x, y, z = (float(v) for v in r.position)
        lines.append(f"{x!r},{y!r},{z!r},{r.beam},{float(r.range)!r},{inst}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_point_cloud(path) -> list[LidarReturn]:
    lines = Path(path).read_text().strip().split("\n")
    out = []
    for line in lines[1:]:
        x, y, z, beam, rng, inst = line.split(",")
        inst_i = int(inst)
        out.append(
            LidarReturn(
                int(beam),
                float(rng),
                np.array([float(x), float(y), float(z)]),
                None if inst_i < 0 else inst_i,
            )
        )
    return out
