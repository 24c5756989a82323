"""Synthetic spinning-LiDAR simulator and geometric occupancy oracle.

Scenes are collections of yaw-oriented boxes, optionally moving at constant
velocity, plus an optional ground plane at z=0.  Returns are ray-cast on
beam centerlines against the scene advected to the scan time; misses emit
no point.  The same scene geometry also answers "what is the true occupancy
state of this point, seen from this sensor position, at this time", which
is what extraction labels are checked against.
"""

from dataclasses import dataclass, field

import numpy as np

from ._boxes import points_in_box, ray_box_crossings
from .errors import SceneMismatch
from .sensor_model import RigidTransform, Scan, SensorConfig

# Surface crossings closer than this are ignored (a scan range must be > 0). [m]
MIN_HIT_RANGE = 1e-6


@dataclass(frozen=True)
class SceneBox:
    """One box of the scene.  ``velocity`` advects the center linearly in
    time; static boxes use the zero vector."""

    center: tuple
    size: tuple
    yaw: float = 0.0
    velocity: tuple = (0.0, 0.0, 0.0)
    category: str = "VEHICLE"
    instance_id: str = ""

    def __post_init__(self):
        size = np.asarray(self.size, dtype=float)
        if np.any(size <= 0.0) or size.shape != (3,):
            raise ValueError(f"box size must be 3 positive extents: {self.size}")
        if not np.all(np.isfinite(np.asarray(self.velocity, dtype=float))):
            raise ValueError(f"box velocity not finite: {self.velocity}")

    def center_at(self, time: float) -> np.ndarray:
        return np.asarray(self.center, dtype=float) + np.asarray(self.velocity, dtype=float) * time

    @property
    def is_moving(self) -> bool:
        return bool(np.linalg.norm(np.asarray(self.velocity, dtype=float)) > 1e-9)


@dataclass
class SceneSpec:
    static_boxes: list = field(default_factory=list)
    moving_boxes: list = field(default_factory=list)
    ground_plane: bool = False
    world_bounds: tuple = (-200.0, 200.0, -200.0, 200.0, -50.0, 50.0)

    def all_boxes(self) -> list:
        return list(self.static_boxes) + list(self.moving_boxes)


@dataclass(frozen=True)
class SpinningLidarSpec:
    """Scan pattern: one beam per (elevation channel, azimuth step)."""

    elevation_angles_rad: tuple
    azimuth_step_rad: float
    max_range_m: float = 120.0
    divergence_angle_rad: float = 0.003
    range_noise_std_m: float = 0.0

    def __post_init__(self):
        if len(self.elevation_angles_rad) < 1:
            raise ValueError("at least one elevation channel required")
        if self.azimuth_step_rad <= 0.0:
            raise ValueError(f"azimuth step must be > 0: {self.azimuth_step_rad}")

    @property
    def n_azimuths(self) -> int:
        return int(round(2.0 * np.pi / self.azimuth_step_rad))

    def ray_directions(self) -> np.ndarray:
        """Unit directions in the sensor frame, channel-major then azimuth."""
        az = np.arange(self.n_azimuths) * self.azimuth_step_rad
        el = np.asarray(self.elevation_angles_rad, dtype=float)
        cos_el = np.cos(el)[:, None]
        d = np.empty((len(el), len(az), 3))
        d[:, :, 0] = cos_el * np.cos(az)[None, :]
        d[:, :, 1] = cos_el * np.sin(az)[None, :]
        d[:, :, 2] = np.sin(el)[:, None]
        return d.reshape(-1, 3)


def _scene_crossings(origins, dirs_unit, scene: SceneSpec, time: float) -> np.ndarray:
    """Nearest positive surface-crossing distance per ray; inf for misses.

    ``dirs_unit`` must be unit-norm so distances come out in meters.
    """
    n = dirs_unit.shape[0]
    nearest = np.full(n, np.inf)
    for box in scene.all_boxes():
        t, valid = ray_box_crossings(origins, dirs_unit, box.center_at(time), box.size, box.yaw)
        t = np.where(valid & (t > MIN_HIT_RANGE), t, np.inf)
        np.minimum(nearest, t, out=nearest)
    if scene.ground_plane:
        oz = origins[:, 2] if origins.ndim == 2 else np.full(n, origins[2])
        dz = dirs_unit[:, 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            t = -oz / dz
        t = np.where((dz != 0.0) & (t > MIN_HIT_RANGE), t, np.inf)
        np.minimum(nearest, t, out=nearest)
    return nearest


def simulate_scan(
    scene: SceneSpec,
    lidar: SpinningLidarSpec,
    sensor_pose: RigidTransform,
    time: float,
    noise_seed: int = 0,
) -> Scan:
    """Simulate one revolution.  Points come back in the sensor frame with
    the pose attached; rays that hit nothing are omitted."""
    scan, _ = simulate_scan_with_hits(scene, lidar, sensor_pose, time, noise_seed)
    return scan


def simulate_scan_with_hits(
    scene: SceneSpec,
    lidar: SpinningLidarSpec,
    sensor_pose: RigidTransform,
    time: float,
    noise_seed: int = 0,
):
    """Like :func:`simulate_scan` but also returns, per returned point, the
    index into ``scene.all_boxes()`` that produced it (-1 for the ground)."""
    d_sensor = lidar.ray_directions()
    d_world = d_sensor @ sensor_pose.rotation.T
    origin = sensor_pose.translation

    n = d_world.shape[0]
    nearest = np.full(n, np.inf)
    hit_box = np.full(n, -1, dtype=np.int64)
    for b_idx, box in enumerate(scene.all_boxes()):
        t, valid = ray_box_crossings(origin[None, :], d_world, box.center_at(time), box.size, box.yaw)
        t = np.where(valid & (t > MIN_HIT_RANGE), t, np.inf)
        closer = t < nearest
        nearest[closer] = t[closer]
        hit_box[closer] = b_idx
    if scene.ground_plane:
        dz = d_world[:, 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            t = -origin[2] / dz
        t = np.where((dz != 0.0) & (t > MIN_HIT_RANGE), t, np.inf)
        closer = t < nearest
        nearest[closer] = t[closer]
        hit_box[closer] = -1

    ranges = nearest
    if lidar.range_noise_std_m > 0.0:
        rng = np.random.default_rng(noise_seed)
        noise = rng.normal(0.0, lidar.range_noise_std_m, size=n)
        ranges = np.where(np.isfinite(ranges), np.maximum(ranges + noise, 1e-3), ranges)

    keep = np.isfinite(ranges) & (ranges <= lidar.max_range_m)
    points = ranges[keep, None] * d_sensor[keep]
    scan = Scan(
        points=points,
        sensor_origin=np.zeros(3),
        time=time,
        pose=sensor_pose,
        intensities=np.zeros(points.shape[0], dtype=np.float32),
    )
    return scan, hit_box[keep]


def ground_truth_states(
    points_world: np.ndarray,
    time: float,
    sensor_origin_world: np.ndarray,
    scene: SceneSpec,
    sensor: SensorConfig,
):
    """Geometric occupancy of points seen from a sensor position at a time.

    Returns (states, boundary_margin): states as uint8 (FREE 0, OCCUPIED 1,
    UNKNOWN 2) and the distance of each point's range from the nearest
    state boundary along its own viewing ray (inf when the ray crosses no
    surface).  A point is OCCUPIED when inside a box or within the decay
    band behind the first surface; FREE when the segment back to the sensor
    is unobstructed; UNKNOWN when occluded deeper than the band.
    """
    pts = np.atleast_2d(np.asarray(points_world, dtype=float))
    origin = np.asarray(sensor_origin_world, dtype=float).reshape(3)
    delta = pts - origin
    dist = np.linalg.norm(delta, axis=1)
    safe = np.maximum(dist, 1e-12)
    dirs = delta / safe[:, None]

    nearest = _scene_crossings(np.broadcast_to(origin, pts.shape), dirs, scene, time)

    inside = np.zeros(pts.shape[0], dtype=bool)
    for box in scene.all_boxes():
        inside |= points_in_box(pts, box.center_at(time), box.size, box.yaw)

    band = sensor.occupied_band_m
    occupied = inside | ((dist >= nearest) & (dist <= nearest + band))
    free = (~inside) & (dist < nearest)
    states = np.full(pts.shape[0], 2, dtype=np.uint8)
    states[occupied] = 1
    states[free] = 0

    with np.errstate(invalid="ignore"):
        margin = np.minimum(np.abs(dist - nearest), np.abs(dist - nearest - band))
    margin = np.where(np.isfinite(nearest), margin, np.inf)
    return states, margin


def ground_truth_state(point, time, sensor_origin_world, scene, sensor: SensorConfig) -> int:
    """Scalar convenience wrapper around :func:`ground_truth_states`."""
    states, _ = ground_truth_states(np.asarray(point, dtype=float)[None, :], time, sensor_origin_world, scene, sensor)
    return int(states[0])


@dataclass
class OracleComparison:
    """Agreement between extracted labels and the geometric oracle."""

    confusion: np.ndarray  # (3,3), rows = extracted state, cols = oracle state
    compared: int
    excluded: int
    empty_comparison: bool

    @property
    def agreement(self) -> float:
        if self.compared == 0:
            return float("nan")
        return float(np.trace(self.confusion)) / self.compared

    def to_dict(self) -> dict:
        return {
            "confusion": self.confusion.tolist(),
            "compared": self.compared,
            "excluded": self.excluded,
            "empty_comparison": self.empty_comparison,
            "agreement": None if self.compared == 0 else self.agreement,
        }


def oracle_compare(
    overlaps,
    scene: SceneSpec,
    scan_poses: dict,
    epsilon_boundary: float,
    sensor: SensorConfig,
) -> OracleComparison:
    """Check extracted overlap labels against scene geometry.

    ``scan_poses`` maps scan offsets to (pose, time), and must cover offset
    0 (the current scan, whose pose converts stored positions to world
    coordinates) plus every offset present in ``overlaps``.  Points whose
    range along their viewing ray is within ``epsilon_boundary`` of a state
    boundary are excluded from the tally.
    """
    if 0 not in scan_poses:
        raise SceneMismatch("scan_poses lacks the current scan (offset 0)")
    records = overlaps.records
    current_pose, _ = scan_poses[0]
    confusion = np.zeros((3, 3), dtype=np.int64)
    compared = 0
    excluded = 0

    for offset in np.unique(records["scan_offset"]):
        off = int(offset)
        if off not in scan_poses:
            raise SceneMismatch(f"scan_poses lacks offset {off}")
        pose_t, time_t = scan_poses[off]
        sel = records["scan_offset"] == offset
        pts_world = current_pose.apply(records["position"][sel])
        gt, margin = ground_truth_states(pts_world, time_t, pose_t.translation, scene, sensor)
        ok = margin >= epsilon_boundary
        excluded += int((~ok).sum())
        ext = records["state"][sel][ok]
        oracle = gt[ok]
        np.add.at(confusion, (ext.astype(np.int64), oracle.astype(np.int64)), 1)
        compared += int(ok.sum())

    return OracleComparison(
        confusion=confusion,
        compared=compared,
        excluded=excluded,
        empty_comparison=compared == 0,
    )
