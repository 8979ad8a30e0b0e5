"""Deterministic synthetic road scenes for desk-scale runs.

World frame = velodyne frame (x forward, y left, z up, sensor at the
origin).  The scene is a textured ground plane holding a quadratic road
corridor plus box obstacles placed off the corridor.  The same analytic
geometry produces, per frame:

* an RGB rendering by per-pixel ray casting,
* an exact ground-truth mask (sky pixels are Invalid),
* a relative depth map derived from the renderer's depth buffer
  (normalized inverse depth, 1 = near),
* a LiDAR cloud by casting a slope-grid of rays from the origin,
* the camera calibration used by both samplers.

All randomness comes from a counter-based Philox stream keyed on the
seed, and the geometry math sticks to IEEE-exact operations (+,-,*,/ and
sqrt), so a (seed, config) pair reproduces byte-identical bundles across
platforms.
"""

from dataclasses import dataclass

import numpy as np

from udeer.errors import DegenerateConfig
from udeer.kitti_io.formats import (
    CameraCalibration,
    FrameBundle,
    GroundTruthMask,
    Label,
    PointCloud,
    RelativeDepthMap,
)

VELODYNE_HEIGHT = 1.73   # sensor height above ground, meters
CAMERA_OFFSET = np.array([0.27, 0.0, -0.08])  # camera position in the velodyne frame

# world -> camera axes: x_cam = -y_w, y_cam = -z_w, z_cam = x_w
_R_WORLD_TO_CAM = np.array([[0.0, -1.0, 0.0], [0.0, 0.0, -1.0], [1.0, 0.0, 0.0]])

_BOX_PALETTE = np.array(
    [(170, 60, 50), (60, 90, 170), (185, 150, 60), (120, 70, 150), (200, 120, 40), (90, 160, 160)],
    dtype=np.float64,
)
_ROAD_COLOR = np.array([95.0, 95.0, 102.0])
_OFFROAD_COLOR = np.array([72.0, 105.0, 58.0])
_SKY_COLOR = np.array([135.0, 170.0, 220.0])

_LIDAR_RINGS = 40
_LIDAR_STEPS = 360
_LIDAR_MAX_RANGE = 70.0


@dataclass
class SynthConfig:
    height: int = 96
    width: int = 320
    obstacle_count: int = 6
    noise_level: float = 0.3


@dataclass
class SceneGeometry:
    """Analytic scene description; also used by tests to re-cast rays."""

    ground_z: float
    road_c0: float
    road_c1: float
    road_c2: float
    road_half_width: float
    boxes: np.ndarray  # (n, 6): xmin, ymin, zmin, xmax, ymax, zmax

    def road_at(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        center = self.road_c0 + self.road_c1 * x + self.road_c2 * x * x
        return np.abs(y - center) <= self.road_half_width

    def cast(self, origin: np.ndarray, dirs: np.ndarray):
        """First hit along ``origin + t * dirs``.

        Returns (t, surface) where surface is 0 for a miss, 1 for the
        ground plane and 2 + k for box k.
        """
        n = dirs.shape[0]
        t_best = np.full(n, np.inf)
        surface = np.zeros(n, dtype=np.int32)

        dz = dirs[:, 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            t_ground = (self.ground_z - origin[2]) / dz
        ok = (dz != 0.0) & (t_ground > 1e-9)
        t_best = np.where(ok, t_ground, np.inf)
        surface[ok] = 1

        for k in range(self.boxes.shape[0]):
            lo = self.boxes[k, :3]
            hi = self.boxes[k, 3:]
            with np.errstate(divide="ignore", invalid="ignore"):
                t1 = (lo[None, :] - origin[None, :]) / dirs
                t2 = (hi[None, :] - origin[None, :]) / dirs
            tmin = np.minimum(t1, t2)
            tmax = np.maximum(t1, t2)
            parallel = dirs == 0.0
            inside = (origin[None, :] >= lo[None, :]) & (origin[None, :] <= hi[None, :])
            tmin = np.where(parallel, np.where(inside, -np.inf, np.inf), tmin)
            tmax = np.where(parallel, np.where(inside, np.inf, -np.inf), tmax)
            t_enter = tmin.max(axis=1)
            t_exit = tmax.min(axis=1)
            hit = (t_exit >= t_enter) & (t_exit > 1e-9)
            t_hit = np.where(t_enter > 1e-9, t_enter, t_exit)
            closer = hit & (t_hit < t_best)
            t_best = np.where(closer, t_hit, t_best)
            surface[closer] = 2 + k
        return t_best, surface


def make_calibration(height: int, width: int) -> CameraCalibration:
    fx = 0.58 * width
    cx = width / 2.0
    cy = 0.35 * height
    p = np.array([[fx, 0.0, cx, 0.0], [0.0, fx, cy, 0.0], [0.0, 0.0, 1.0, 0.0]])
    t = np.eye(4)
    t[:3, :3] = _R_WORLD_TO_CAM
    t[:3, 3] = -_R_WORLD_TO_CAM @ CAMERA_OFFSET
    calib = CameraCalibration(P=p, R_rect=np.eye(4), T_velo_to_cam=t)
    calib.validate()
    return calib


def _draw_geometry(rng: np.random.Generator, cfg: SynthConfig) -> SceneGeometry:
    ground_z = -VELODYNE_HEIGHT
    c0 = rng.uniform(-1.0, 1.0)
    c1 = rng.uniform(-0.06, 0.06)
    c2 = rng.uniform(-0.0022, 0.0022)
    half_width = rng.uniform(3.0, 4.5)

    boxes = np.zeros((cfg.obstacle_count, 6))
    for k in range(cfg.obstacle_count):
        bx = rng.uniform(6.0, 45.0)
        side = 1.0 if rng.uniform(0.0, 1.0) < 0.5 else -1.0
        clearance = rng.uniform(1.0, 8.0)
        sx = rng.uniform(0.8, 2.6)
        sy = rng.uniform(0.8, 2.6)
        sz = rng.uniform(0.8, 2.2)
        center = c0 + c1 * bx + c2 * bx * bx
        by = center + side * (half_width + clearance + sy / 2.0)
        boxes[k] = (bx - sx / 2.0, by - sy / 2.0, ground_z, bx + sx / 2.0, by + sy / 2.0, ground_z + sz)
    return SceneGeometry(
        ground_z=ground_z,
        road_c0=c0,
        road_c1=c1,
        road_c2=c2,
        road_half_width=half_width,
        boxes=boxes,
    )


def _labels_for_hits(geom: SceneGeometry, surface: np.ndarray, hits: np.ndarray) -> np.ndarray:
    labels = np.full(surface.shape, int(Label.INVALID), dtype=np.uint8)
    ground = surface == 1
    road = np.zeros(surface.shape, dtype=bool)
    road[ground] = geom.road_at(hits[ground, 0], hits[ground, 1])
    labels[ground & road] = int(Label.ROAD)
    labels[(ground & ~road) | (surface >= 2)] = int(Label.NON_ROAD)
    return labels


def _render(geom: SceneGeometry, calib: CameraCalibration, cfg: SynthConfig, rng: np.random.Generator):
    h, w = cfg.height, cfg.width
    fx = calib.P[0, 0]
    cx = calib.P[0, 2]
    cy = calib.P[1, 2]

    us, vs = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
    dir_cam = np.stack(
        [(us + 0.5 - cx) / fx, (vs + 0.5 - cy) / fx, np.ones_like(us)], axis=-1
    ).reshape(-1, 3)
    dir_world = dir_cam @ _R_WORLD_TO_CAM  # == R^T @ d per ray
    depth, surface = geom.cast(CAMERA_OFFSET, dir_world)
    hits = CAMERA_OFFSET[None, :] + depth[:, None] * dir_world
    hits = np.where(np.isfinite(depth)[:, None], hits, 0.0)

    labels = _labels_for_hits(geom, surface, hits).reshape(h, w)

    color = np.empty((h * w, 3))
    color[:] = _SKY_COLOR
    ground = surface == 1
    road = labels.reshape(-1) == int(Label.ROAD)
    shade = np.clip(1.0 - np.where(np.isfinite(depth), depth, 0.0) / 160.0, 0.3, 1.0)
    color[ground & road] = _ROAD_COLOR * shade[ground & road, None]
    color[ground & ~road] = _OFFROAD_COLOR * shade[ground & ~road, None]
    for k in range(geom.boxes.shape[0]):
        sel = surface == 2 + k
        color[sel] = _BOX_PALETTE[k % len(_BOX_PALETTE)] * shade[sel, None]

    noise = rng.uniform(-1.0, 1.0, size=(h * w, 1)) * (40.0 * cfg.noise_level)
    image = np.clip(color + noise, 0.0, 255.0).astype(np.uint8).reshape(h, w, 3)

    disparity = np.zeros(h * w)
    finite = np.isfinite(depth)
    disparity[finite] = 1.0 / depth[finite]
    lo, hi = disparity.min(), disparity.max()
    if hi > lo:
        disparity = (disparity - lo) / (hi - lo)
    else:
        disparity = np.zeros_like(disparity)
    return image, GroundTruthMask(grid=labels), RelativeDepthMap(grid=disparity.reshape(h, w))


def _sample_lidar(geom: SceneGeometry, rng: np.random.Generator) -> PointCloud:
    sz = np.linspace(-0.32, 0.04, _LIDAR_RINGS)
    sy = np.linspace(-1.0, 1.0, _LIDAR_STEPS)
    szg, syg = np.meshgrid(sz, sy, indexing="ij")
    dirs = np.stack([np.ones_like(syg), syg, szg], axis=-1).reshape(-1, 3)
    dirs = dirs / np.sqrt((dirs * dirs).sum(axis=1))[:, None]

    origin = np.zeros(3)
    dist, surface = geom.cast(origin, dirs)
    jitter = rng.uniform(0.0, 1.0, size=dirs.shape[0])

    keep = (surface > 0) & (dist <= _LIDAR_MAX_RANGE)
    pts = dist[keep, None] * dirs[keep]
    surf = surface[keep]
    road = np.zeros(surf.shape, dtype=bool)
    ground = surf == 1
    road[ground] = geom.road_at(pts[ground, 0], pts[ground, 1])
    reflect = np.where(surf >= 2, 0.65, np.where(road, 0.45, 0.25))
    reflect = np.clip(reflect + (jitter[keep] - 0.5) * 0.1, 0.0, 1.0)
    cloud = np.concatenate([pts, reflect[:, None]], axis=1).astype(np.float32)
    return PointCloud(points=cloud)


def synth_scene_with_geometry(seed: int, cfg: SynthConfig | None = None):
    """Generate one frame plus the analytic geometry it was sampled from."""
    cfg = cfg or SynthConfig()
    if cfg.height < 32 or cfg.width < 32:
        raise DegenerateConfig(f"scene resolution must be at least 32x32, got {cfg.height}x{cfg.width}")
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    geom = _draw_geometry(rng, cfg)
    calib = make_calibration(cfg.height, cfg.width)
    image, gt, depth = _render(geom, calib, cfg, rng)
    cloud = _sample_lidar(geom, rng)
    bundle = FrameBundle(
        image=image,
        cloud=cloud,
        calib=calib,
        depth=depth,
        gt=gt,
        frame_id=f"synth_{seed:06d}",
    )
    bundle.validate()
    return bundle, geom


def synth_scene(seed: int, cfg: SynthConfig | None = None) -> FrameBundle:
    bundle, _ = synth_scene_with_geometry(seed, cfg)
    return bundle
