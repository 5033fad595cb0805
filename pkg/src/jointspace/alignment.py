"""Contrastive alignment of the point branch to the frozen anchor space."""

from __future__ import annotations

import dataclasses
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import numcore as nc
from .dataset import PairedCorpus, build_pairs
from .encoders import (
    AlignmentModel,
    AnchorEncoder,
    ModelConfig,
    PointEncoderParams,
    ProjectionParams,
    anchor_encode,
    encode_text_templates,
)
from .errors import ConfigInvalid, DimMismatch, FormatError, NonFiniteLoss, NotNormalized, ShapeError
from .numcore import Tensor
from .numcore.io import read_container, tensor_digest, write_container

log = logging.getLogger(__name__)

NORM_TOL = 1e-6
TERMS = ("image", "text", "audio")


@dataclass
class ContrastiveConfig:
    temperature: float = 0.07
    batch_size: int = 64
    epochs: int = 200
    lr: float = 0.003
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    weight_decay: float = 0.01
    image_weight: float = 1.0
    text_weight: float = 1.0
    audio_weight: float = 1.0
    symmetric: bool = True
    learnable_tau: bool = False

    def validate(self) -> "ContrastiveConfig":
        if not self.temperature > 0:
            raise ConfigInvalid("train.temperature", "must be positive")
        if self.batch_size < 2:
            raise ConfigInvalid("train.batch_size", "must be at least 2")
        if self.epochs < 0:
            raise ConfigInvalid("train.epochs", "must be non-negative")
        if not self.lr > 0:
            raise ConfigInvalid("train.lr", "must be positive")
        if self.learnable_tau:
            raise ConfigInvalid("train.learnable_tau", "reserved; only a fixed temperature is supported")
        return self

    def weights(self) -> dict[str, float]:
        return {"image": self.image_weight, "text": self.text_weight, "audio": self.audio_weight}


@dataclass
class TrainReport:
    seed: int
    epochs: int
    initial_loss: float
    initial_terms: dict[str, float]
    loss_trace: list[float] = field(default_factory=list)
    term_trace: dict[str, list[float]] = field(default_factory=lambda: {t: [] for t in TERMS})
    wall_clock: float = 0.0
    checkpoint_sha256: str = ""

    @property
    def final_loss(self) -> float:
        return self.loss_trace[-1] if self.loss_trace else self.initial_loss

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["final_loss"] = self.final_loss
        return out


def _check_unit_rows(x: np.ndarray, what: str) -> None:
    norms = np.linalg.norm(x, axis=-1)
    if np.any(np.abs(norms - 1.0) > NORM_TOL):
        raise NotNormalized(f"{what}: row norms deviate from 1 by up to {np.max(np.abs(norms - 1.0)):.2e}")


def info_nce(a, b, temperature: float, symmetric: bool = True) -> Tensor:
    """Contrastive cross-entropy where row i of ``a`` is the positive for row i of ``b``.

    With ``symmetric`` the a->b and b->a directions are averaged.
    """
    a, b = nc.as_tensor(a), nc.as_tensor(b)
    if a.ndim != 2 or a.shape != b.shape:
        raise DimMismatch(f"info_nce needs matching (n, C) inputs, got {a.shape} and {b.shape}")
    _check_unit_rows(a.data, "info_nce A")
    _check_unit_rows(b.data, "info_nce B")
    logits = nc.scale(nc.matmul(a, nc.transpose(b)), 1.0 / temperature)
    loss = nc.neg(nc.mean(nc.diagonal(nc.log_softmax(logits, axis=1))))
    if not symmetric:
        return loss
    other = nc.neg(nc.mean(nc.diagonal(nc.log_softmax(nc.transpose(logits), axis=1))))
    return nc.scale(nc.add(loss, other), 0.5)


def total_loss(f3d: Tensor, f2d, ft, fa, audio_mask, cfg: ContrastiveConfig) -> tuple[Tensor, dict[str, float]]:
    """Weighted sum of the image, text and audio contrastive terms.

    ``fa`` may hold any values in rows whose ``audio_mask`` is false; those rows
    are dropped from the audio term, which is exactly zero when no row has audio.
    """
    mask = np.asarray(audio_mask, dtype=bool)
    weights = cfg.weights()
    image = info_nce(f3d, f2d, cfg.temperature, cfg.symmetric)
    text = info_nce(f3d, ft, cfg.temperature, cfg.symmetric)
    total = nc.add(nc.scale(image, weights["image"]), nc.scale(text, weights["text"]))
    terms = {"image": image.item(), "text": text.item(), "audio": 0.0}
    if mask.any():
        rows = np.flatnonzero(mask)
        audio = info_nce(nc.take_rows(f3d, rows), np.asarray(fa)[rows], cfg.temperature, cfg.symmetric)
        total = nc.add(total, nc.scale(audio, weights["audio"]))
        terms["audio"] = audio.item()
    return total, terms


@dataclass
class FrozenTargets:
    """Anchor embeddings of every sample, computed once since anchors never change."""

    image: np.ndarray
    text: np.ndarray
    audio: np.ndarray

    @classmethod
    def compute(cls, corpus: PairedCorpus, anchors: dict[str, AnchorEncoder]) -> "FrozenTargets":
        audio = np.zeros((len(corpus), anchors["audio"].joint_dim))
        if corpus.audio_mask.any():
            audio[corpus.audio_mask] = anchor_encode(anchors["audio"], corpus.audio[corpus.audio_mask])
        return cls(anchor_encode(anchors["image"], corpus.image),
                   encode_text_templates(anchors["text"], corpus.text), audio)


def batch_loss(model: AlignmentModel, corpus: PairedCorpus, targets: FrozenTargets, indices,
               cfg: ContrastiveConfig) -> tuple[Tensor, dict[str, float]]:
    f3d = model.embed_points(corpus.points[indices])
    return total_loss(f3d, targets.image[indices], targets.text[indices], targets.audio[indices],
                      corpus.audio_mask[indices], cfg)


def _check_dims(model: AlignmentModel, corpus: PairedCorpus) -> None:
    cfg = corpus.config
    if model.config.joint_dim != cfg.joint_dim:
        raise ShapeError(f"model joint_dim {model.config.joint_dim} but corpus joint_dim {cfg.joint_dim}")
    for modality, dim in cfg.raw_dims().items():
        have = model.anchors[modality].raw_dim
        if have != dim:
            raise ShapeError(f"model {modality} anchor width {have} but corpus {modality}_dim {dim}")


def train(corpus: PairedCorpus, model: AlignmentModel, cfg: ContrastiveConfig, seed: int) -> TrainReport:
    """Train the point encoder and projection in place; anchors stay frozen."""
    cfg.validate()
    _check_dims(model, corpus)
    start = time.perf_counter()
    targets = FrozenTargets.compute(corpus, model.anchors)
    params = model.parameters()
    state = nc.AdamWState(lr=cfg.lr, betas=(cfg.beta1, cfg.beta2), eps=cfg.adam_eps,
                          weight_decay=cfg.weight_decay)

    def epoch_batches(epoch):
        return list(build_pairs(corpus, cfg.batch_size, seed, epoch))

    init_total, init_terms, count = 0.0, dict.fromkeys(TERMS, 0.0), 0
    for batch in epoch_batches(0):
        loss, terms = batch_loss(model, corpus, targets, batch.indices, cfg)
        init_total += loss.item()
        for k in TERMS:
            init_terms[k] += terms[k]
        count += 1
    count = max(count, 1)
    report = TrainReport(seed, cfg.epochs, init_total / count, {k: v / count for k, v in init_terms.items()})

    for epoch in range(cfg.epochs):
        ep_total, ep_terms, n_batches = 0.0, dict.fromkeys(TERMS, 0.0), 0
        for b, batch in enumerate(epoch_batches(epoch)):
            loss, terms = batch_loss(model, corpus, targets, batch.indices, cfg)
            value = loss.item()
            if not np.isfinite(value):
                raise NonFiniteLoss(epoch, b, value)
            grads = nc.backward(loss, params)
            nc.adamw_step([p.data for p in params], grads, state)
            ep_total += value
            for k in TERMS:
                ep_terms[k] += terms[k]
            n_batches += 1
        report.loss_trace.append(ep_total / n_batches)
        for k in TERMS:
            report.term_trace[k].append(ep_terms[k] / n_batches)
        log.info("epoch %d/%d loss %.4f", epoch + 1, cfg.epochs, report.loss_trace[-1])
    for p in params:
        if not p.is_finite():
            raise NonFiniteLoss(cfg.epochs, -1, float("nan"))
    report.wall_clock = time.perf_counter() - start
    report.checkpoint_sha256 = checkpoint_digest(model)
    return report


# ---------------------------------------------------------------- checkpoints

def save_checkpoint(model: AlignmentModel, path) -> None:
    meta = {"model": dataclasses.asdict(model.config)}
    write_container(path, "checkpoint", meta, model.state_tensors())


def load_checkpoint(path) -> AlignmentModel:
    meta, t = read_container(path, kind="checkpoint")
    try:
        cfg = ModelConfig(**meta["model"]).validate()
    except (KeyError, TypeError) as exc:
        raise FormatError(f"{path}: bad model config in manifest ({exc!r})") from None
    template = AlignmentModel(
        cfg,
        PointEncoderParams.init(cfg.hidden, cfg.raw_dim, np.random.default_rng(0)),
        ProjectionParams.init(cfg.raw_dim, cfg.joint_dim, cfg.proj_depth, np.random.default_rng(0), cfg.ln_eps),
    )
    for name, tensor in template.named_parameters():
        if name not in t:
            raise FormatError(f"{path}: missing tensor {name!r}")
        if t[name].shape != tensor.shape:
            raise ShapeError(f"{path}: tensor {name!r} has dims {list(t[name].shape)}, "
                             f"model config implies {list(tensor.shape)}")
        tensor.data = t[name].copy()
    anchors = {}
    for name in t:
        if name.startswith("anchor.") and name.endswith(".w"):
            modality = name.split(".")[1]
            anchors[modality] = AnchorEncoder(modality, t[name], t[f"anchor.{modality}.b"])
    template.anchors = anchors
    return template


def anchor_digest(model: AlignmentModel) -> str:
    return tensor_digest(model.anchor_tensors())


def checkpoint_digest(model: AlignmentModel) -> str:
    return tensor_digest(model.state_tensors())
