"""udeer: multi-modal road segmentation at desk scale.

Subpackages and modules follow the pipeline order: `kitti_io` (formats
and synthetic scenes), `lidar_adaptation` (point clouds into the image
plane), `diff_engine` (reverse-mode autodiff), `model` (three-stream
encoder-decoder and supervised training), `semi_supervised`
(confidence-gated self-training), `evaluation` (MaxF scoring), `cli`
(batch entry points).
"""

__version__ = "0.1.0"
