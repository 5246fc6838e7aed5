"""Synthetic road network: segment geometry, direction tags and the sensorized subset."""
from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from .errors import ConfigError, SegmentLookupError
from .seeding import rng_for

DEFAULT_ACCESS_NAMES = ("west", "north", "south")


class Direction(enum.Enum):
    INCOMING = "in"
    OUTGOING = "out"
    INTERNAL = "internal"


@dataclass(frozen=True)
class RoadSegment:
    id: int
    x1: float
    y1: float
    x2: float
    y2: float
    direction: Direction
    sensorized: bool
    mean_scale: float

    @property
    def length(self) -> float:
        return math.hypot(self.x2 - self.x1, self.y2 - self.y1)

    @property
    def midpoint(self) -> tuple[float, float]:
        return (0.5 * (self.x1 + self.x2), 0.5 * (self.y1 + self.y2))

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "x1": self.x1,
            "y1": self.y1,
            "x2": self.x2,
            "y2": self.y2,
            "direction": self.direction.value,
            "sensorized": self.sensorized,
            "mean_scale": self.mean_scale,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RoadSegment":
        return cls(
            id=int(d["id"]),
            x1=float(d["x1"]),
            y1=float(d["y1"]),
            x2=float(d["x2"]),
            y2=float(d["y2"]),
            direction=Direction(d["direction"]),
            sensorized=bool(d["sensorized"]),
            mean_scale=float(d["mean_scale"]),
        )


@dataclass(frozen=True)
class NetworkConfig:
    n_segments: int = 50
    sensorized_fraction: float = 0.18
    side_m: float = 3000.0
    n_access_roads: int = 3
    access_mean_scale: float = 2200.0
    internal_median_scale: float = 600.0
    internal_scale_sigma: float = 0.5
    min_length_m: float = 50.0
    max_length_m: float = 400.0

    def validate(self):
        if int(self.n_segments) < 1:
            raise ConfigError("network.n_segments must be >= 1")
        if not 0.0 < self.sensorized_fraction <= 1.0:
            raise ConfigError("network.sensorized_fraction must lie in (0, 1]")
        if self.side_m <= 0:
            raise ConfigError("network.side_m must be positive")
        if self.n_access_roads < 0:
            raise ConfigError("network.n_access_roads must be >= 0")
        if not 0 < self.min_length_m <= self.max_length_m:
            raise ConfigError("network segment length bounds are invalid")
        if self.access_mean_scale <= 0 or self.internal_median_scale <= 0:
            raise ConfigError("network mean scales must be positive")


@dataclass(frozen=True)
class Network:
    segments: tuple[RoadSegment, ...]
    access_roads: dict[str, tuple[int, ...]] = field(default_factory=dict)

    def __post_init__(self):
        ids = [s.id for s in self.segments]
        if len(set(ids)) != len(ids):
            raise ConfigError("segment ids must be unique")

    @cached_property
    def _by_id(self) -> dict[int, RoadSegment]:
        return {s.id: s for s in self.segments}

    def __len__(self):
        return len(self.segments)

    def segment(self, seg_id: int) -> RoadSegment:
        try:
            return self._by_id[int(seg_id)]
        except KeyError:
            raise SegmentLookupError(f"unknown segment id {seg_id}") from None

    def __contains__(self, seg_id) -> bool:
        return int(seg_id) in self._by_id

    @cached_property
    def sensorized_ids(self) -> tuple[int, ...]:
        return tuple(sorted(s.id for s in self.segments if s.sensorized))

    @cached_property
    def access_segment_ids(self) -> tuple[int, ...]:
        return tuple(sorted(i for ids in self.access_roads.values() for i in ids))

    def ids_with_direction(self, direction: Direction) -> tuple[int, ...]:
        return tuple(
            s.id for s in self.segments if s.sensorized and s.direction is direction
        )

    @cached_property
    def _sensorized_midpoints(self) -> np.ndarray:
        return np.array(
            [self._by_id[i].midpoint for i in self.sensorized_ids], dtype=float
        ).reshape(-1, 2)

    def busiest_segment(self, direction: Direction | None = None) -> int:
        """Sensorized segment with the largest mean_scale, optionally restricted by direction."""
        cands = [
            s
            for s in self.segments
            if s.sensorized and (direction is None or s.direction is direction)
        ]
        if not cands:
            raise SegmentLookupError(f"no sensorized segment with direction {direction}")
        return max(cands, key=lambda s: (s.mean_scale, -s.id)).id

    def to_dict(self) -> dict:
        return {
            "segments": [s.to_dict() for s in self.segments],
            "access_roads": {k: list(v) for k, v in self.access_roads.items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Network":
        return cls(
            segments=tuple(RoadSegment.from_dict(s) for s in d["segments"]),
            access_roads={k: tuple(int(i) for i in v) for k, v in d["access_roads"].items()},
        )

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    @classmethod
    def load(cls, path) -> "Network":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def build_synthetic_network(config: NetworkConfig, seed: int) -> Network:
    """Scatter ``n_segments`` straight segments uniformly over a square city.

    The busiest sensorized segments are paired into ``n_access_roads`` access
    avenues, each with one incoming and one outgoing segment sharing the same
    base scale. Every other segment is Internal.
    """
    config.validate()
    n = int(config.n_segments)
    rng = rng_for(seed, "network", "geometry")

    mid = rng.uniform(0.0, config.side_m, size=(n, 2))
    theta = rng.uniform(0.0, math.pi, size=n)
    length = rng.uniform(config.min_length_m, config.max_length_m, size=n)
    half = 0.5 * length[:, None] * np.column_stack([np.cos(theta), np.sin(theta)])
    p1, p2 = mid - half, mid + half

    n_sens = _round_half_up(n * config.sensorized_fraction)
    sensorized = np.zeros(n, dtype=bool)
    sensorized[rng.choice(n, size=n_sens, replace=False)] = True

    scales = config.internal_median_scale * np.exp(
        config.internal_scale_sigma * rng.standard_normal(n)
    )

    n_roads = min(config.n_access_roads, n_sens // 2)
    direction = [Direction.INTERNAL] * n
    access: dict[str, tuple[int, ...]] = {}
    if n_roads:
        sens_idx = np.flatnonzero(sensorized)
        picked = rng.choice(sens_idx, size=2 * n_roads, replace=False)
        road_scale = config.access_mean_scale * rng.uniform(0.9, 1.1, size=n_roads)
        # keep every internal segment strictly below the quietest access road
        scales = np.minimum(scales, 0.8 * road_scale.min())
        for r in range(n_roads):
            i_in, i_out = int(picked[2 * r]), int(picked[2 * r + 1])
            direction[i_in] = Direction.INCOMING
            direction[i_out] = Direction.OUTGOING
            scales[i_in] = scales[i_out] = road_scale[r]
            name = DEFAULT_ACCESS_NAMES[r] if r < len(DEFAULT_ACCESS_NAMES) else f"access_{r}"
            access[name] = (i_in, i_out)

    segments = []
    for i in range(n):
        a, b = tuple(p1[i]), tuple(p2[i])
        if b < a:
            a, b = b, a
        segments.append(
            RoadSegment(
                id=i,
                x1=float(a[0]),
                y1=float(a[1]),
                x2=float(b[0]),
                y2=float(b[1]),
                direction=direction[i],
                sensorized=bool(sensorized[i]),
                mean_scale=float(scales[i]),
            )
        )
    return Network(segments=tuple(segments), access_roads=access)


def segments_within(net: Network, center: int, radius: float) -> list[int]:
    """Sensorized segments whose midpoint lies within ``radius`` metres of ``center``'s midpoint."""
    if radius < 0:
        raise ConfigError("radius must be non-negative")
    cx, cy = net.segment(center).midpoint
    ids = net.sensorized_ids
    if not ids:
        return []
    pts = net._sensorized_midpoints
    d2 = (pts[:, 0] - cx) ** 2 + (pts[:, 1] - cy) ** 2
    with np.errstate(over="ignore"):
        inside = d2 <= np.float64(radius) ** 2
    return [ids[k] for k in np.flatnonzero(inside)]
