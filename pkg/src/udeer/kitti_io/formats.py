"""KITTI-format parsing, domain types, and on-disk frame layout.

External formats handled here:

* calibration: UTF-8 text, one ``key: f1 f2 ...`` entry per line; keys
  ``P2`` (3x4), ``R0_rect`` (3x3) and ``Tr_velo_to_cam`` (3x4) are
  required, row-major;
* velodyne clouds: raw little-endian float32 quads (x, y, z, reflectance),
  no header;
* images and ground-truth masks: 8-bit RGB PNG (road encoded in the blue
  channel, valid in the red channel, devkit convention);
* relative depth: 16-bit grayscale PNG scaled by 1/65535 (8-bit accepted,
  scaled by 1/255).

A dataset directory mirrors KITTI road training layout::

    root/image_2/<frame>.png      root/calib/<frame>.txt
    root/velodyne/<frame>.bin     root/gt_image_2/<frame>.png   (optional)
    root/depth/<frame>.png
"""

import enum
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from udeer.errors import (
    MissingKey,
    NonFiniteInput,
    ShapeMismatch,
    TruncatedRecord,
    UdeerError,
    UnparsableNumber,
    WrongValueCount,
)

_CALIB_KEYS = {"P2": 12, "R0_rect": 9, "Tr_velo_to_cam": 12}


class Label(enum.IntEnum):
    NON_ROAD = 0
    ROAD = 1
    INVALID = 2


@dataclass
class CameraCalibration:
    """Projection matrix plus rectification and velodyne-to-camera extrinsics."""

    P: np.ndarray            # 3x4, pixels
    R_rect: np.ndarray       # 4x4 homogeneous
    T_velo_to_cam: np.ndarray  # 4x4 homogeneous, meters

    def validate(self) -> None:
        if self.P.shape != (3, 4) or self.R_rect.shape != (4, 4) or self.T_velo_to_cam.shape != (4, 4):
            raise ShapeMismatch("calibration matrices have wrong shapes")
        if not np.all(np.isfinite(self.P)):
            raise UdeerError("projection matrix contains non-finite entries")
        rot = self.R_rect[:3, :3]
        if np.max(np.abs(rot @ rot.T - np.eye(3))) > 1e-6:
            raise UdeerError("R_rect upper 3x3 block is not orthonormal")
        bottom = np.array([0.0, 0.0, 0.0, 1.0])
        if not (np.array_equal(self.R_rect[3], bottom) and np.array_equal(self.T_velo_to_cam[3], bottom)):
            raise UdeerError("homogeneous matrices must end with row (0, 0, 0, 1)")

    def velo_to_rect(self) -> np.ndarray:
        """Combined 4x4 transform: velodyne frame -> rectified camera frame."""
        return self.R_rect @ self.T_velo_to_cam


@dataclass
class PointCloud:
    """N x 4 float32 array of (x, y, z, reflectance)."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float32)
        if pts.ndim != 2 or pts.shape[1] != 4:
            raise ShapeMismatch(f"point cloud must be Nx4, got {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise NonFiniteInput("point cloud contains NaN or Inf")
        self.points = pts

    def __len__(self) -> int:
        return self.points.shape[0]


@dataclass
class GroundTruthMask:
    """H x W grid of Label codes."""

    grid: np.ndarray

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=np.uint8)

    @property
    def road(self) -> np.ndarray:
        return self.grid == Label.ROAD

    @property
    def valid(self) -> np.ndarray:
        return self.grid != Label.INVALID


@dataclass
class RelativeDepthMap:
    """H x W relative depth in [0, 1] (1 = near, unitless)."""

    grid: np.ndarray

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=np.float64)


@dataclass
class FrameBundle:
    """One scene's aligned inputs."""

    image: np.ndarray          # H x W x 3 uint8
    cloud: PointCloud
    calib: CameraCalibration
    depth: RelativeDepthMap
    gt: GroundTruthMask | None
    frame_id: str

    def validate(self) -> None:
        h, w = self.image.shape[:2]
        if self.image.ndim != 3 or self.image.shape[2] != 3:
            raise ShapeMismatch(f"image must be HxWx3, got {self.image.shape}")
        if self.depth.grid.shape != (h, w):
            raise ShapeMismatch("depth resolution differs from image")
        if self.gt is not None and self.gt.grid.shape != (h, w):
            raise ShapeMismatch("ground truth resolution differs from image")

    @property
    def has_usable_gt(self) -> bool:
        return self.gt is not None and bool(np.any(self.gt.road & self.gt.valid))


# --- calibration text --------------------------------------------------------

def parse_calibration(text: str) -> CameraCalibration:
    """Parse `key: v1 v2 ...` lines into a CameraCalibration."""
    values: dict[str, list[float]] = {}
    for line in text.splitlines():
        line = line.strip()
        if not line or ":" not in line:
            continue
        key, _, rest = line.partition(":")
        key = key.strip()
        toks = rest.split()
        try:
            values[key] = [float(t) for t in toks]
        except ValueError as exc:
            raise UnparsableNumber(line) from exc

    for key, expected in _CALIB_KEYS.items():
        if key not in values:
            raise MissingKey(key)
        if len(values[key]) != expected:
            raise WrongValueCount(key, expected, len(values[key]))

    p = np.array(values["P2"], dtype=np.float64).reshape(3, 4)
    r_rect = np.eye(4)
    r_rect[:3, :3] = np.array(values["R0_rect"], dtype=np.float64).reshape(3, 3)
    t = np.eye(4)
    t[:3, :] = np.array(values["Tr_velo_to_cam"], dtype=np.float64).reshape(3, 4)
    calib = CameraCalibration(P=p, R_rect=r_rect, T_velo_to_cam=t)
    calib.validate()
    return calib


def format_calibration(calib: CameraCalibration) -> str:
    """Inverse of parse_calibration; floats are emitted with repr precision."""

    def row(vals):
        return " ".join(repr(float(v)) for v in vals)

    return (
        f"P2: {row(calib.P.reshape(-1))}\n"
        f"R0_rect: {row(calib.R_rect[:3, :3].reshape(-1))}\n"
        f"Tr_velo_to_cam: {row(calib.T_velo_to_cam[:3, :].reshape(-1))}\n"
    )


# --- velodyne binary ----------------------------------------------------------

def read_point_cloud(data: bytes) -> PointCloud:
    if len(data) % 16 != 0:
        raise TruncatedRecord(len(data))
    pts = np.frombuffer(data, dtype="<f4").reshape(-1, 4)
    return PointCloud(points=pts.copy())


def write_point_cloud(pc: PointCloud) -> bytes:
    return pc.points.astype("<f4").tobytes(order="C")


# --- ground-truth masks ---------------------------------------------------------

def decode_gt_mask(rgb: np.ndarray) -> GroundTruthMask:
    """Blue channel marks road, red marks valid; everything else is invalid."""
    rgb = np.asarray(rgb)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ShapeMismatch(f"ground-truth image must be HxWx3, got {rgb.shape}")
    blue = rgb[:, :, 2].astype(np.int32)
    red = rgb[:, :, 0].astype(np.int32)
    grid = np.full(rgb.shape[:2], int(Label.INVALID), dtype=np.uint8)
    grid[(blue <= 127) & (red > 127)] = int(Label.NON_ROAD)
    grid[blue > 127] = int(Label.ROAD)
    return GroundTruthMask(grid=grid)


def encode_gt_mask(mask: GroundTruthMask) -> np.ndarray:
    rgb = np.zeros(mask.grid.shape + (3,), dtype=np.uint8)
    rgb[mask.grid == Label.ROAD] = (255, 0, 255)
    rgb[mask.grid == Label.NON_ROAD] = (255, 0, 0)
    return rgb


# --- relative depth -------------------------------------------------------------

def load_relative_depth(grid: np.ndarray) -> RelativeDepthMap:
    """Min-max normalize an arbitrary finite grid into [0, 1]."""
    grid = np.asarray(grid, dtype=np.float64)
    if not np.all(np.isfinite(grid)):
        raise NonFiniteInput("depth grid contains NaN or Inf")
    lo = grid.min() if grid.size else 0.0
    hi = grid.max() if grid.size else 0.0
    if hi <= lo:
        return RelativeDepthMap(grid=np.zeros_like(grid))
    return RelativeDepthMap(grid=(grid - lo) / (hi - lo))


# --- PNG helpers ------------------------------------------------------------------

def write_png_rgb(path, rgb: np.ndarray) -> None:
    Image.fromarray(np.asarray(rgb, dtype=np.uint8), mode="RGB").save(path, format="PNG")


def read_png_rgb(path) -> np.ndarray:
    with Image.open(path) as img:
        return np.asarray(img.convert("RGB"), dtype=np.uint8)


def write_png_gray16(path, values01: np.ndarray) -> None:
    """Store a [0, 1] grid as 16-bit grayscale (quantized by 1/65535)."""
    q = np.clip(np.round(np.asarray(values01, dtype=np.float64) * 65535.0), 0, 65535)
    Image.fromarray(q.astype(np.uint16)).save(path, format="PNG")


def read_png_gray(path) -> np.ndarray:
    """Read 16-bit (or 8-bit) grayscale PNG back into a [0, 1] grid."""
    with Image.open(path) as img:
        arr = np.asarray(img)
    if arr.dtype == np.uint8:
        return arr.astype(np.float64) / 255.0
    return arr.astype(np.float64) / 65535.0


def write_png_gray8(path, mask: np.ndarray) -> None:
    """Store a boolean (or 0/1) grid as an 8-bit 0/255 PNG."""
    arr = (np.asarray(mask) != 0).astype(np.uint8) * 255
    Image.fromarray(arr, mode="L").save(path, format="PNG")


# --- dataset directories ------------------------------------------------------------

_SUBDIRS = ("image_2", "velodyne", "calib", "depth", "gt_image_2")


def init_dataset_dirs(root) -> None:
    root = Path(root)
    for sub in _SUBDIRS:
        (root / sub).mkdir(parents=True, exist_ok=True)


def list_frame_ids(root) -> list[str]:
    image_dir = Path(root) / "image_2"
    if not image_dir.is_dir():
        return []
    return sorted(p.stem for p in image_dir.glob("*.png"))


def _gt_path(root: Path, frame_id: str) -> Path | None:
    direct = root / "gt_image_2" / f"{frame_id}.png"
    if direct.exists():
        return direct
    # KITTI road devkit names: um_000042 -> um_road_000042.png
    if "_" in frame_id:
        cat, _, num = frame_id.partition("_")
        devkit = root / "gt_image_2" / f"{cat}_road_{num}.png"
        if devkit.exists():
            return devkit
    return None


def save_frame(root, bundle: FrameBundle) -> None:
    root = Path(root)
    init_dataset_dirs(root)
    fid = bundle.frame_id
    write_png_rgb(root / "image_2" / f"{fid}.png", bundle.image)
    (root / "velodyne" / f"{fid}.bin").write_bytes(write_point_cloud(bundle.cloud))
    (root / "calib" / f"{fid}.txt").write_text(format_calibration(bundle.calib), encoding="utf-8")
    write_png_gray16(root / "depth" / f"{fid}.png", bundle.depth.grid)
    if bundle.gt is not None:
        write_png_rgb(root / "gt_image_2" / f"{fid}.png", encode_gt_mask(bundle.gt))


def load_frame(root, frame_id: str) -> FrameBundle:
    root = Path(root)
    image = read_png_rgb(root / "image_2" / f"{frame_id}.png")
    cloud = read_point_cloud((root / "velodyne" / f"{frame_id}.bin").read_bytes())
    calib = parse_calibration((root / "calib" / f"{frame_id}.txt").read_text(encoding="utf-8"))
    depth = load_relative_depth(read_png_gray(root / "depth" / f"{frame_id}.png"))
    gt_path = _gt_path(root, frame_id)
    gt = decode_gt_mask(read_png_rgb(gt_path)) if gt_path else None
    bundle = FrameBundle(image=image, cloud=cloud, calib=calib, depth=depth, gt=gt, frame_id=frame_id)
    bundle.validate()
    return bundle


def load_dataset(root) -> list[FrameBundle]:
    return [load_frame(root, fid) for fid in list_frame_ids(root)]
