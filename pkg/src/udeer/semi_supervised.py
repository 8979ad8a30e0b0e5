"""Confidence-gated self-training on unlabeled frames.

Starting from a supervised model, each round regenerates pixel pseudo
labels for every unlabeled frame with the current parameters, keeps the
subset S of pixels whose confidence max(p, 1-p) reaches the threshold
tau, and runs gradient steps that mix labeled frames (true masks) with
unlabeled frames (pseudo labels masked to S).  Pixels outside S
contribute exactly nothing to the loss or its gradients.
"""

from dataclasses import dataclass, field

import numpy as np

from udeer.diff_engine import SGD, Tape
from udeer.errors import EmptyDataset, EmptyLabeledSet, UdeerError
from udeer.kitti_io.formats import FrameBundle
from udeer.lidar_adaptation import AdaptConfig
from udeer.model import (
    LossWeights,
    ModelOutputs,
    ModelParams,
    combine_terms,
    forward,
    masked_bce_terms,
    prepare_frame,
)


@dataclass
class PseudoLabelSet:
    """Per-pixel labels, confidences and the inclusion set S."""

    labels: np.ndarray      # H x W uint8 in {0, 1}
    confidence: np.ndarray  # H x W float64 in [0.5, 1]
    included: np.ndarray    # H x W bool
    tau: float


@dataclass
class SemiConfig:
    tau: float = 0.9
    rounds: int = 3
    steps_per_round: int = 100
    labeled_mix: float = 0.5
    seed: int = 0
    lr: float = 0.1
    momentum: float = 0.9
    loss_weights: LossWeights = field(default_factory=LossWeights)
    adapt: AdaptConfig = field(default_factory=AdaptConfig)

    def __post_init__(self):
        if not (0.0 <= self.tau <= 1.0):
            raise UdeerError(f"tau must lie in [0, 1], got {self.tau}")
        if self.rounds < 0:
            raise UdeerError(f"rounds must be >= 0, got {self.rounds}")
        if self.steps_per_round < 1:
            raise UdeerError(f"steps_per_round must be >= 1, got {self.steps_per_round}")
        if not (0.0 < self.labeled_mix <= 1.0):
            raise UdeerError(f"labeled_mix must lie in (0, 1], got {self.labeled_mix}")


def pseudo_from_probs(prob: np.ndarray, tau: float) -> PseudoLabelSet:
    """Threshold rule: label 1 iff p >= 0.5; include iff max(p, 1-p) >= tau."""
    prob = np.asarray(prob, dtype=np.float64)
    labels = (prob >= 0.5).astype(np.uint8)
    confidence = np.maximum(prob, 1.0 - prob)
    return PseudoLabelSet(
        labels=labels,
        confidence=confidence,
        included=confidence >= tau,
        tau=float(tau),
    )


def generate_pseudo_labels(
    params: ModelParams,
    frame: FrameBundle,
    tau: float,
    adapt: AdaptConfig | None = None,
) -> PseudoLabelSet:
    prep = prepare_frame(frame, adapt)
    out = forward(params, prep.image, prep.lidar, prep.depth)
    return pseudo_from_probs(out.fine_prob, tau)


def pseudo_loss(out: ModelOutputs, pseudo: PseudoLabelSet, w: LossWeights):
    """Same weighted four-term loss, with S as the mask; empty S gives 0."""
    target = pseudo.labels.astype(np.float64)
    mask = pseudo.included.astype(np.float64)
    return combine_terms(masked_bce_terms(out, target, mask), w)


@dataclass
class RoundReport:
    round: int
    mean_confidence: float
    included_fraction: float
    labeled_loss: float | None
    pseudo_loss: float | None
    heldout_maxf: float | None

    def as_dict(self) -> dict:
        return {
            "round": self.round,
            "mean_confidence": self.mean_confidence,
            "included_fraction": self.included_fraction,
            "labeled_loss": self.labeled_loss,
            "pseudo_loss": self.pseudo_loss,
            "heldout_maxf": self.heldout_maxf,
        }


def semi_supervised_rounds(
    init: ModelParams,
    labeled: list[FrameBundle],
    unlabeled: list[FrameBundle],
    cfg: SemiConfig,
    heldout: list[FrameBundle] | None = None,
) -> tuple[ModelParams, list[RoundReport]]:
    """Iterate pseudo-label regeneration and mixed gradient steps.

    Returns fresh parameters (the initial model is left untouched) plus
    one report per round.  Deterministic for a given seed.
    """
    if not labeled:
        raise EmptyLabeledSet("need at least one labeled frame")
    for frame in labeled:
        if not frame.has_usable_gt:
            raise EmptyDataset(f"labeled frame {frame.frame_id!r} lacks usable ground truth")

    params = init.copy()
    prep_l = [prepare_frame(f, cfg.adapt) for f in labeled]
    prep_u = [prepare_frame(f, cfg.adapt) for f in unlabeled]
    opt = SGD(params.tensors.values(), lr=cfg.lr, momentum=cfg.momentum)
    rng = np.random.Generator(
        np.random.Philox(np.random.SeedSequence(entropy=cfg.seed, spawn_key=(2,)))
    )

    reports: list[RoundReport] = []
    for rnd in range(cfg.rounds):
        pseudos = []
        for prep in prep_u:
            out = forward(params, prep.image, prep.lidar, prep.depth)
            pseudos.append(pseudo_from_probs(out.fine_prob, cfg.tau))
        if pseudos:
            mean_conf = float(np.mean([p.confidence.mean() for p in pseudos]))
            frac = float(np.mean([p.included.mean() for p in pseudos]))
        else:
            mean_conf, frac = 0.0, 0.0

        labeled_losses: list[float] = []
        pseudo_losses: list[float] = []
        for _ in range(cfg.steps_per_round):
            take_labeled = (rng.random() < cfg.labeled_mix) or not prep_u
            if take_labeled:
                prep = prep_l[int(rng.integers(len(prep_l)))]
                target, mask = prep.target, prep.mask
            else:
                j = int(rng.integers(len(prep_u)))
                prep = prep_u[j]
                target = pseudos[j].labels.astype(np.float64)
                mask = pseudos[j].included.astype(np.float64)
            with Tape() as tape:
                out = forward(params, prep.image, prep.lidar, prep.depth)
                total = combine_terms(masked_bce_terms(out, target, mask), cfg.loss_weights)
                tape.backward(total)
            opt.step()
            (labeled_losses if take_labeled else pseudo_losses).append(total.item())

        heldout_maxf = None
        if heldout:
            from udeer.evaluation import evaluate_set

            heldout_maxf = evaluate_set(params, heldout, cfg.adapt).max_f
        reports.append(
            RoundReport(
                round=rnd,
                mean_confidence=mean_conf,
                included_fraction=frac,
                labeled_loss=float(np.mean(labeled_losses)) if labeled_losses else None,
                pseudo_loss=float(np.mean(pseudo_losses)) if pseudo_losses else None,
                heldout_maxf=heldout_maxf,
            )
        )
    return params, reports
