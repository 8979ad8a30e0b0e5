"""KITTI-format ingestion and the synthetic scene generator."""

from udeer.kitti_io.formats import (
    CameraCalibration,
    FrameBundle,
    GroundTruthMask,
    Label,
    PointCloud,
    RelativeDepthMap,
    decode_gt_mask,
    encode_gt_mask,
    format_calibration,
    init_dataset_dirs,
    list_frame_ids,
    load_dataset,
    load_frame,
    load_relative_depth,
    parse_calibration,
    read_png_gray,
    read_png_rgb,
    read_point_cloud,
    save_frame,
    write_png_gray8,
    write_png_gray16,
    write_png_rgb,
    write_point_cloud,
)
from udeer.kitti_io.synth import (
    SceneGeometry,
    SynthConfig,
    make_calibration,
    synth_scene,
    synth_scene_with_geometry,
)

__all__ = [
    "CameraCalibration",
    "FrameBundle",
    "GroundTruthMask",
    "Label",
    "PointCloud",
    "RelativeDepthMap",
    "SceneGeometry",
    "SynthConfig",
    "decode_gt_mask",
    "encode_gt_mask",
    "format_calibration",
    "init_dataset_dirs",
    "list_frame_ids",
    "load_dataset",
    "load_frame",
    "load_relative_depth",
    "make_calibration",
    "parse_calibration",
    "read_png_gray",
    "read_png_rgb",
    "read_point_cloud",
    "save_frame",
    "synth_scene",
    "synth_scene_with_geometry",
    "write_png_gray8",
    "write_png_gray16",
    "write_png_rgb",
    "write_point_cloud",
]
