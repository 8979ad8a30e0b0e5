"""Three-stream encoder-decoder for pixel-wise road probability.

Each modality (RGB image, adapted LiDAR channels, relative depth) runs
through its own small convolutional encoder (three stride-2 stages).  The
decoder is image-centric: starting from the deepest image feature it
upsamples three times; at each stage the running feature is concatenated
with the matching-resolution image skip (where one exists) and with
bilinearly upsampled LiDAR and depth features, then mixed by a 1x1
convolution.  Whether LiDAR/depth join at every level or only the deepest
is a config switch (`fuse_levels`).

Four sigmoid heads emit full-resolution probability maps: the fine head
from the decoder output, and one auxiliary head per encoder (predicting
from that encoder's final feature, upsampled x8) so every stream is
supervised to solve the task alone.  The training loss is

    total = fine + alpha * image_aux + beta * lidar_aux + gamma * depth_aux

with every term a validity-masked binary cross entropy.
"""

import hashlib
import json
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np

from udeer.diff_engine import (
    SGD,
    Tape,
    Tensor,
    add,
    bce_masked,
    bilinear_upsample,
    concat_channels,
    conv2d,
    load_checkpoint,
    relu,
    save_checkpoint,
    scale,
    sigmoid,
)
from udeer.errors import (
    CheckpointError,
    EmptyDataset,
    NonDivisibleResolution,
    ShapeMismatch,
    UdeerError,
)
from udeer.kitti_io.formats import FrameBundle, GroundTruthMask
from udeer.lidar_adaptation import AdaptConfig, lidar_channels

_ENCODER_WIDTHS = {"image": (3, 16, 32, 64), "lidar": (3, 8, 16, 32), "depth": (1, 8, 16, 32)}
_DECODER_WIDTHS = (32, 16, 16)
FUSE_MODES = ("all", "deepest")


@dataclass
class LossWeights:
    alpha: float = 0.4
    beta: float = 0.4
    gamma: float = 0.4

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma"):
            v = float(getattr(self, name))
            if not np.isfinite(v) or v < 0:
                raise UdeerError(f"loss weight {name} must be finite and >= 0, got {v}")
            setattr(self, name, v)


class ModelParams:
    """All trainable tensors plus the architecture they belong to."""

    def __init__(self, tensors: "OrderedDict[str, Tensor]", fuse_levels: str):
        self.tensors = tensors
        self.fuse_levels = fuse_levels

    def arch_hash(self) -> str:
        desc = {
            "fuse_levels": self.fuse_levels,
            "tensors": [[name, list(t.shape)] for name, t in self.tensors.items()],
        }
        return hashlib.sha256(json.dumps(desc, sort_keys=True).encode()).hexdigest()

    def copy(self) -> "ModelParams":
        cloned = OrderedDict(
            (name, Tensor(t.data.copy(), requires_grad=True)) for name, t in self.tensors.items()
        )
        return ModelParams(cloned, self.fuse_levels)

    def save(self, path) -> None:
        arrays = OrderedDict((name, t.data) for name, t in self.tensors.items())
        save_checkpoint(path, arrays, meta={"arch_hash": self.arch_hash(), "fuse_levels": self.fuse_levels})

    @staticmethod
    def load(path) -> "ModelParams":
        arrays, meta = load_checkpoint(path)
        fuse_levels = meta.get("fuse_levels", "all")
        tensors = OrderedDict((name, Tensor(arr, requires_grad=True)) for name, arr in arrays.items())
        params = ModelParams(tensors, fuse_levels)
        expected = init_model_params(seed=0, fuse_levels=fuse_levels)
        if [(n, t.shape) for n, t in params.tensors.items()] != [
            (n, t.shape) for n, t in expected.tensors.items()
        ]:
            raise CheckpointError(f"{path}: tensor layout does not match this architecture")
        if meta.get("arch_hash") != params.arch_hash():
            raise CheckpointError(f"{path}: architecture hash mismatch")
        return params


def _decoder_in_channels(fuse_levels: str) -> tuple[int, int, int]:
    iw, lw, dw = _ENCODER_WIDTHS["image"], _ENCODER_WIDTHS["lidar"], _ENCODER_WIDTHS["depth"]
    if fuse_levels == "all":
        return (
            iw[3] + iw[2] + lw[3] + dw[3],
            _DECODER_WIDTHS[0] + iw[1] + lw[2] + dw[2],
            _DECODER_WIDTHS[1] + lw[1] + dw[1],
        )
    return (
        iw[3] + iw[2] + lw[3] + dw[3],
        _DECODER_WIDTHS[0] + iw[1],
        _DECODER_WIDTHS[1],
    )


def _layer_specs(fuse_levels: str) -> "OrderedDict[str, tuple[int, int, int]]":
    """name -> (out_channels, in_channels, kernel) for every conv layer."""
    specs: "OrderedDict[str, tuple[int, int, int]]" = OrderedDict()
    for stream, widths in _ENCODER_WIDTHS.items():
        for stage in range(3):
            specs[f"enc_{stream}.{stage + 1}"] = (widths[stage + 1], widths[stage], 3)
    dec_in = _decoder_in_channels(fuse_levels)
    for stage in range(3):
        specs[f"dec.{stage + 1}"] = (_DECODER_WIDTHS[stage], dec_in[stage], 1)
    specs["head_fine"] = (1, _DECODER_WIDTHS[2], 1)
    specs["head_image"] = (1, _ENCODER_WIDTHS["image"][3], 1)
    specs["head_lidar"] = (1, _ENCODER_WIDTHS["lidar"][3], 1)
    specs["head_depth"] = (1, _ENCODER_WIDTHS["depth"][3], 1)
    return specs


def init_model_params(seed: int, fuse_levels: str = "all", weight_scale: float = 1.0) -> ModelParams:
    """Seeded uniform init in +-weight_scale/sqrt(fan_in), Philox stream."""
    if fuse_levels not in FUSE_MODES:
        raise UdeerError(f"fuse_levels must be one of {FUSE_MODES}, got {fuse_levels!r}")
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy=seed, spawn_key=(0,))))
    tensors: "OrderedDict[str, Tensor]" = OrderedDict()
    for name, (out_c, in_c, k) in _layer_specs(fuse_levels).items():
        bound = weight_scale / np.sqrt(in_c * k * k)
        w = rng.uniform(-bound, bound, size=(out_c, in_c, k, k))
        b = rng.uniform(-bound, bound, size=(out_c,))
        tensors[f"{name}.weight"] = Tensor(w, requires_grad=True)
        tensors[f"{name}.bias"] = Tensor(b, requires_grad=True)
    return ModelParams(tensors, fuse_levels)


@dataclass
class ModelOutputs:
    """Four full-resolution probability maps kept as graph tensors."""

    fine: Tensor
    image_aux: Tensor
    lidar_aux: Tensor
    depth_aux: Tensor

    def _grid(self, t: Tensor) -> np.ndarray:
        return t.data[0, 0]

    @property
    def fine_prob(self) -> np.ndarray:
        return self._grid(self.fine)

    @property
    def image_aux_prob(self) -> np.ndarray:
        return self._grid(self.image_aux)

    @property
    def lidar_aux_prob(self) -> np.ndarray:
        return self._grid(self.lidar_aux)

    @property
    def depth_aux_prob(self) -> np.ndarray:
        return self._grid(self.depth_aux)


def _conv_block(params: ModelParams, name: str, x: Tensor, stride: int, pad: int) -> Tensor:
    return relu(
        conv2d(x, params.tensors[f"{name}.weight"], params.tensors[f"{name}.bias"], stride=stride, pad=pad)
    )


def _encode(params: ModelParams, stream: str, x: Tensor) -> list[Tensor]:
    feats = []
    for stage in range(3):
        x = _conv_block(params, f"enc_{stream}.{stage + 1}", x, stride=2, pad=1)
        feats.append(x)
    return feats


def _head(params: ModelParams, name: str, x: Tensor, up_factor: int) -> Tensor:
    logits = conv2d(x, params.tensors[f"{name}.weight"], params.tensors[f"{name}.bias"])
    if up_factor > 1:
        logits = bilinear_upsample(logits, up_factor)
    return sigmoid(logits)


def _to_nchw(grid: np.ndarray) -> Tensor:
    if grid.ndim == 2:
        grid = grid[:, :, None]
    # recenter [0, 1] inputs; symmetric activations train much faster
    return Tensor(np.ascontiguousarray(grid.transpose(2, 0, 1))[None] - 0.5)


def forward(params: ModelParams, image: np.ndarray, lidar: np.ndarray, depth: np.ndarray) -> ModelOutputs:
    """Run the three streams and the fusing decoder on one frame.

    `image` is H x W x 3 in [0, 1], `lidar` the H x W x 3 adapted channels,
    `depth` H x W (x 1) relative depth; H and W must be divisible by 8.
    """
    image = np.asarray(image, dtype=np.float64)
    lidar = np.asarray(lidar, dtype=np.float64)
    depth = np.asarray(depth, dtype=np.float64)
    h, w = image.shape[:2]
    if image.ndim != 3 or image.shape[2] != 3:
        raise ShapeMismatch(f"image must be HxWx3, got {image.shape}")
    if lidar.shape != (h, w, 3):
        raise ShapeMismatch(f"lidar channels must be {(h, w, 3)}, got {lidar.shape}")
    if depth.shape not in ((h, w), (h, w, 1)):
        raise ShapeMismatch(f"depth must be {(h, w)} or {(h, w, 1)}, got {depth.shape}")
    if h % 8 or w % 8:
        raise NonDivisibleResolution(f"resolution {h}x{w} is not divisible by 8")

    img_feats = _encode(params, "image", _to_nchw(image))
    lid_feats = _encode(params, "lidar", _to_nchw(lidar))
    dep_feats = _encode(params, "depth", _to_nchw(depth))

    fuse_all = params.fuse_levels == "all"
    d = img_feats[2]
    parts = [bilinear_upsample(d, 2), img_feats[1], bilinear_upsample(lid_feats[2], 2), bilinear_upsample(dep_feats[2], 2)]
    d = relu(conv2d(concat_channels(parts), params.tensors["dec.1.weight"], params.tensors["dec.1.bias"]))

    parts = [bilinear_upsample(d, 2), img_feats[0]]
    if fuse_all:
        parts += [bilinear_upsample(lid_feats[1], 2), bilinear_upsample(dep_feats[1], 2)]
    d = relu(conv2d(concat_channels(parts), params.tensors["dec.2.weight"], params.tensors["dec.2.bias"]))

    parts = [bilinear_upsample(d, 2)]
    if fuse_all:
        parts += [bilinear_upsample(lid_feats[0], 2), bilinear_upsample(dep_feats[0], 2)]
    d = relu(conv2d(concat_channels(parts), params.tensors["dec.3.weight"], params.tensors["dec.3.bias"]))

    return ModelOutputs(
        fine=_head(params, "head_fine", d, 1),
        image_aux=_head(params, "head_image", img_feats[2], 8),
        lidar_aux=_head(params, "head_lidar", lid_feats[2], 8),
        depth_aux=_head(params, "head_depth", dep_feats[2], 8),
    )


def masked_bce_terms(out: ModelOutputs, target: np.ndarray, mask: np.ndarray) -> dict[str, Tensor]:
    """One masked BCE per head against a shared 0/1 target grid."""
    t4 = np.asarray(target, dtype=np.float64)[None, None]
    m4 = np.asarray(mask, dtype=np.float64)[None, None]
    return {
        "fine": bce_masked(out.fine, t4, m4),
        "image": bce_masked(out.image_aux, t4, m4),
        "lidar": bce_masked(out.lidar_aux, t4, m4),
        "depth": bce_masked(out.depth_aux, t4, m4),
    }


def combine_terms(terms: dict[str, Tensor], w: LossWeights) -> Tensor:
    total = add(terms["fine"], scale(terms["image"], w.alpha))
    total = add(total, scale(terms["lidar"], w.beta))
    return add(total, scale(terms["depth"], w.gamma))


def total_loss(out: ModelOutputs, gt: GroundTruthMask, w: LossWeights) -> Tensor:
    """fine + alpha*image + beta*lidar + gamma*depth, invalid pixels masked out."""
    target = gt.road.astype(np.float64)
    mask = gt.valid.astype(np.float64)
    return combine_terms(masked_bce_terms(out, target, mask), w)


# --- training -----------------------------------------------------------------

@dataclass
class TrainConfig:
    steps: int = 200
    lr: float = 0.1
    momentum: float = 0.9
    seed: int = 0
    loss_weights: LossWeights = field(default_factory=LossWeights)
    fuse_levels: str = "all"
    adapt: AdaptConfig = field(default_factory=AdaptConfig)


@dataclass
class PreparedFrame:
    """Model-ready arrays for one frame."""

    image: np.ndarray   # H x W x 3 in [0, 1]
    lidar: np.ndarray   # H x W x 3 adapted channels
    depth: np.ndarray   # H x W x 1
    target: np.ndarray | None  # 0/1 road grid
    mask: np.ndarray | None    # 0/1 validity grid
    frame_id: str


def prepare_frame(frame: FrameBundle, adapt: AdaptConfig | None = None) -> PreparedFrame:
    h, w = frame.image.shape[:2]
    return PreparedFrame(
        image=frame.image.astype(np.float64) / 255.0,
        lidar=lidar_channels(frame.cloud, frame.calib, h, w, adapt),
        depth=frame.depth.grid[:, :, None],
        target=frame.gt.road.astype(np.float64) if frame.gt is not None else None,
        mask=frame.gt.valid.astype(np.float64) if frame.gt is not None else None,
        frame_id=frame.frame_id,
    )


@dataclass
class TrainResult:
    params: ModelParams
    log: list[dict]  # per step: step, loss_fine, loss_image, loss_lidar, loss_depth, total


def train_supervised(train_set: list[FrameBundle], cfg: TrainConfig) -> TrainResult:
    """Seeded single-frame SGD; bitwise deterministic for a given seed."""
    if not train_set:
        raise EmptyDataset("training set is empty")
    for frame in train_set:
        if not frame.has_usable_gt:
            raise EmptyDataset(f"frame {frame.frame_id!r} lacks a usable ground-truth mask")
    prepared = [prepare_frame(f, cfg.adapt) for f in train_set]
    params = init_model_params(cfg.seed, cfg.fuse_levels)
    log = train_steps(params, prepared, cfg.steps, cfg)
    return TrainResult(params=params, log=log)


def train_steps(params: ModelParams, prepared: list[PreparedFrame], steps: int, cfg: TrainConfig,
                stream_key: int = 1) -> list[dict]:
    """Run `steps` gradient steps over prepared frames, in place."""
    opt = SGD(params.tensors.values(), lr=cfg.lr, momentum=cfg.momentum)
    rng = np.random.Generator(
        np.random.Philox(np.random.SeedSequence(entropy=cfg.seed, spawn_key=(stream_key,)))
    )
    log = []
    for step in range(steps):
        pick = prepared[int(rng.integers(len(prepared)))]
        with Tape() as tape:
            out = forward(params, pick.image, pick.lidar, pick.depth)
            terms = masked_bce_terms(out, pick.target, pick.mask)
            total = combine_terms(terms, cfg.loss_weights)
            tape.backward(total)
        opt.step()
        log.append(
            {
                "step": step,
                "loss_fine": terms["fine"].item(),
                "loss_image": terms["image"].item(),
                "loss_lidar": terms["lidar"].item(),
                "loss_depth": terms["depth"].item(),
                "total": total.item(),
            }
        )
    return log
