"""Semantic categories and the fixed color palette used by the guidance buffers.

The palette maps every category to an RGB triple in [0, 1]. The four vehicle
categories are special-cased: each vehicle *instance* is colored from a
256-entry sequential purple-red ramp so that overlapping vehicles stay
distinguishable. Instance colors are assigned by a deterministic integer hash
rather than a random draw, so renders are reproducible.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np


class SemanticLabel(IntEnum):
    SIGN = 0
    TRAFFIC_LIGHT = 1
    CONSTRUCTION_CONE = 2
    MOTORCYCLIST = 3
    BICYCLIST = 4
    PEDESTRIAN = 5
    BICYCLE = 6
    MOTORCYCLE = 7
    CAR = 8
    TRUCK = 9
    BUS = 10
    OTHER_VEHICLE = 11
    CURB = 12
    LANE_MARKER = 13
    VEGETATION = 14
    TREE_TRUNK = 15
    WALKABLE = 16
    SIDEWALK = 17
    BUILDING = 18
    ROAD = 19
    OTHER_GROUND = 20
    UNDEFINED = 21
    POLE = 22


VEHICLE_LABELS = frozenset(
    {SemanticLabel.CAR, SemanticLabel.TRUCK, SemanticLabel.BUS, SemanticLabel.OTHER_VEHICLE}
)

_GROUP_COLORS: dict[SemanticLabel, tuple[float, float, float]] = {
    SemanticLabel.SIGN: (0.4, 0.7608, 0.6471),
    SemanticLabel.TRAFFIC_LIGHT: (0.4, 0.7608, 0.6471),
    SemanticLabel.CONSTRUCTION_CONE: (0.4, 0.7608, 0.6471),
    SemanticLabel.MOTORCYCLIST: (0.9882, 0.5529, 0.3843),
    SemanticLabel.BICYCLIST: (0.9882, 0.5529, 0.3843),
    SemanticLabel.PEDESTRIAN: (0.9882, 0.5529, 0.3843),
    SemanticLabel.BICYCLE: (0.9882, 0.5529, 0.3843),
    SemanticLabel.MOTORCYCLE: (0.9882, 0.5529, 0.3843),
    SemanticLabel.CAR: (0.7373, 0.5020, 0.7412),
    SemanticLabel.TRUCK: (0.7373, 0.5020, 0.7412),
    SemanticLabel.BUS: (0.7373, 0.5020, 0.7412),
    SemanticLabel.OTHER_VEHICLE: (0.7373, 0.5020, 0.7412),
    SemanticLabel.CURB: (1.0, 0.8510, 0.1843),
    SemanticLabel.LANE_MARKER: (1.0, 0.8510, 0.1843),
    SemanticLabel.VEGETATION: (0.3020, 0.6863, 0.2902),
    SemanticLabel.TREE_TRUNK: (0.3020, 0.6863, 0.2902),
    SemanticLabel.WALKABLE: (0.5529, 0.6275, 0.7961),
    SemanticLabel.SIDEWALK: (0.5529, 0.6275, 0.7961),
    SemanticLabel.BUILDING: (0.8980, 0.7686, 0.5804),
    SemanticLabel.ROAD: (0.7020, 0.7020, 0.7020),
    SemanticLabel.OTHER_GROUND: (0.7020, 0.7020, 0.7020),
    SemanticLabel.UNDEFINED: (0.1216, 0.4706, 0.7059),
    SemanticLabel.POLE: (0.8000, 0.9216, 0.7725),
}

# Sequential purple-red ramp anchors (light to dark); interpolated to 256 entries.
_PURD_ANCHORS = np.array(
    [
        [247, 244, 249],
        [231, 225, 239],
        [212, 185, 218],
        [201, 148, 199],
        [223, 101, 176],
        [231, 41, 138],
        [206, 18, 86],
        [152, 0, 67],
        [103, 0, 31],
    ],
    dtype=np.float64,
) / 255.0


def _build_ramp(anchors: np.ndarray, n: int = 256) -> np.ndarray:
    x = np.linspace(0.0, 1.0, len(anchors))
    xi = np.linspace(0.0, 1.0, n)
    return np.stack([np.interp(xi, x, anchors[:, c]) for c in range(3)], axis=1)


def instance_hash(instance_id: int) -> int:
    """Process-stable 64-bit mix of an instance id (splitmix64 finalizer)."""
    x = (instance_id + 0x9E3779B97F4A7C15) & 0xFFFFFFFFFFFFFFFF
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & 0xFFFFFFFFFFFFFFFF
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & 0xFFFFFFFFFFFFFFFF
    return (x ^ (x >> 31)) & 0xFFFFFFFFFFFFFFFF


@dataclass(frozen=True)
class Palette:
    """Category colors plus the instance ramp for vehicles.

    Colors are RGB in [0, 1]. Buffers rescale them to [-1, 1] at render time.
    """

    colors: dict[SemanticLabel, tuple[float, float, float]] = field(
        default_factory=lambda: dict(_GROUP_COLORS)
    )
    ramp: np.ndarray = field(default_factory=lambda: _build_ramp(_PURD_ANCHORS))

    def color_of(self, label: SemanticLabel, instance_id: int | None = None) -> np.ndarray:
        if label in VEHICLE_LABELS and instance_id is not None:
            return self.instance_color(instance_id)
        return np.asarray(self.colors[label], dtype=np.float64)

    def instance_color(self, instance_id: int) -> np.ndarray:
        return self.ramp[instance_hash(int(instance_id)) % len(self.ramp)]

    def label_table(self) -> np.ndarray:
        """(n_labels, 3) array indexed by SemanticLabel value."""
        table = np.zeros((len(SemanticLabel), 3), dtype=np.float64)
        for label in SemanticLabel:
            table[label.value] = self.colors[label]
        return table

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(self.label_table().astype("<f8").tobytes())
        h.update(self.ramp.astype("<f8").tobytes())
        return h.hexdigest()


DEFAULT_PALETTE = Palette()
