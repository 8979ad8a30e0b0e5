"""LiDAR data-space adaptation: point clouds into the image plane.

Pipeline: z-buffered perspective projection -> altitude-difference map
(mean of |dZ| / pixel distance over a Chebyshev neighbourhood; flat
surfaces respond low, curbs and obstacles high) -> ring densification of
the sparse grid -> robust percentile normalization.  The altitude kept
per pixel is the velodyne z coordinate, which is gravity-aligned in the
KITTI mounting.
"""

from dataclasses import dataclass

import numpy as np

from udeer import _kernels
from udeer.errors import EmptyValidSet, InvalidRadius
from udeer.kitti_io.formats import CameraCalibration, PointCloud


@dataclass
class ProjectedLidarImage:
    """Per-pixel survivor of the z-buffer: defined only where hit is true."""

    altitude: np.ndarray  # H x W float64, velodyne z of the winning point
    hit: np.ndarray       # H x W bool
    range: np.ndarray     # H x W float64, camera-frame depth of the winner


@dataclass
class AltitudeDifferenceMap:
    grid: np.ndarray   # H x W float64, >= 0 where valid
    valid: np.ndarray  # H x W bool


@dataclass
class AdaptConfig:
    radius: int = 2
    max_ring: int = 8
    lo_pct: float = 2.0
    hi_pct: float = 98.0


def project_points(pc: PointCloud, calib: CameraCalibration, height: int, width: int) -> ProjectedLidarImage:
    """Project a cloud onto an H x W grid, nearest camera depth winning.

    Points behind the camera (rectified depth <= 1e-6) and points whose
    pixel lands outside the grid are discarded.  Depth ties keep the
    lowest point index, so the result does not depend on traversal order.
    """
    altitude = np.zeros((height, width))
    rng_img = np.zeros((height, width))
    hit = np.zeros((height, width), dtype=bool)
    pts = pc.points
    if pts.shape[0] == 0:
        return ProjectedLidarImage(altitude=altitude, hit=hit, range=rng_img)

    xyz1 = np.concatenate(
        [pts[:, :3].astype(np.float64), np.ones((pts.shape[0], 1))], axis=1
    )
    rect = xyz1 @ calib.velo_to_rect().T
    depth = rect[:, 2]
    uvw = rect @ calib.P.T
    keep = (depth > 1e-6) & (uvw[:, 2] > 1e-6)

    u = np.floor(uvw[keep, 0] / uvw[keep, 2]).astype(np.int64)
    v = np.floor(uvw[keep, 1] / uvw[keep, 2]).astype(np.int64)
    depth = depth[keep]
    alt = pts[keep, 2].astype(np.float64)
    idx = np.nonzero(keep)[0]

    inside = (u >= 0) & (u < width) & (v >= 0) & (v < height)
    u, v, depth, alt, idx = u[inside], v[inside], depth[inside], alt[inside], idx[inside]
    if u.size == 0:
        return ProjectedLidarImage(altitude=altitude, hit=hit, range=rng_img)

    # stable z-buffer: order by (pixel, depth, point index), keep the first
    flat = v * width + u
    order = np.lexsort((idx, depth, flat))
    flat, depth, alt = flat[order], depth[order], alt[order]
    first = np.ones(flat.shape[0], dtype=bool)
    first[1:] = flat[1:] != flat[:-1]

    win = flat[first]
    altitude.reshape(-1)[win] = alt[first]
    rng_img.reshape(-1)[win] = depth[first]
    hit.reshape(-1)[win] = True
    return ProjectedLidarImage(altitude=altitude, hit=hit, range=rng_img)


def altitude_difference(proj: ProjectedLidarImage, radius: int = 2) -> AltitudeDifferenceMap:
    """Mean |dZ| / distance to hit neighbours within a Chebyshev radius."""
    if radius < 1:
        raise InvalidRadius(f"radius must be >= 1, got {radius}")
    hit8 = np.ascontiguousarray(proj.hit.astype(np.uint8))
    grid = _kernels.altitude_difference_grid(
        np.ascontiguousarray(proj.altitude), hit8, int(radius)
    )
    return AltitudeDifferenceMap(grid=grid, valid=proj.hit.copy())


def densify(adm: AltitudeDifferenceMap, max_ring: int = 8) -> AltitudeDifferenceMap:
    """Fill invalid pixels from the nearest valid pixel within max_ring.

    Nearest means smallest Chebyshev distance; ties go to the first
    candidate in row-major order.  Uncovered pixels stay invalid with
    value 0; valid pixels pass through unchanged.
    """
    if max_ring < 0:
        raise ValueError(f"max_ring must be >= 0, got {max_ring}")
    if max_ring == 0:
        return AltitudeDifferenceMap(grid=adm.grid.copy(), valid=adm.valid.copy())
    vals, mask = _kernels.densify_fill(
        np.ascontiguousarray(adm.grid.astype(np.float64)),
        np.ascontiguousarray(adm.valid.astype(np.uint8)),
        int(max_ring),
    )
    return AltitudeDifferenceMap(grid=vals, valid=mask.astype(bool))


def normalize_adm(adm: AltitudeDifferenceMap, lo_pct: float = 2.0, hi_pct: float = 98.0) -> AltitudeDifferenceMap:
    """Clip to the [lo_pct, hi_pct] percentiles of valid entries, map to [0, 1]."""
    if not (0.0 <= lo_pct < hi_pct <= 100.0):
        raise ValueError(f"need 0 <= lo < hi <= 100, got ({lo_pct}, {hi_pct})")
    vals = adm.grid[adm.valid]
    if vals.size == 0:
        raise EmptyValidSet("no valid pixels to normalize")
    lo, hi = np.percentile(vals, [lo_pct, hi_pct])
    out = np.zeros_like(adm.grid)
    if hi > lo:
        out[adm.valid] = (np.clip(adm.grid[adm.valid], lo, hi) - lo) / (hi - lo)
    return AltitudeDifferenceMap(grid=out, valid=adm.valid.copy())


def lidar_channels(
    pc: PointCloud,
    calib: CameraCalibration,
    height: int,
    width: int,
    cfg: AdaptConfig | None = None,
) -> np.ndarray:
    """H x W x 3 network input: normalized ADM, normalized range, hit mask.

    An empty (or fully out-of-view) cloud yields all-zero channels.
    """
    cfg = cfg or AdaptConfig()
    proj = project_points(pc, calib, height, width)
    if not proj.hit.any():
        return np.zeros((height, width, 3))
    adm = normalize_adm(
        densify(altitude_difference(proj, cfg.radius), cfg.max_ring),
        cfg.lo_pct,
        cfg.hi_pct,
    )
    rng_ch = np.zeros((height, width))
    r = proj.range[proj.hit]
    lo, hi = r.min(), r.max()
    if hi > lo:
        rng_ch[proj.hit] = (proj.range[proj.hit] - lo) / (hi - lo)
    return np.stack([adm.grid, rng_ch, proj.hit.astype(np.float64)], axis=-1)
