"""Trainable point-cloud encoder, projection head and frozen anchor encoders."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from . import numcore as nc
from .errors import ConfigInvalid, DimMismatch, EmptyTemplateSet, ShapeError, TooFewPoints
from .numcore import Tensor

MIN_POINTS = 8
MODALITIES = ("image", "text", "audio")


@dataclass
class ModelConfig:
    hidden: int = 64
    raw_dim: int = 64
    joint_dim: int = 32
    proj_depth: int = 2
    ln_eps: float = 1e-5

    def validate(self) -> "ModelConfig":
        for name in ("hidden", "raw_dim", "joint_dim"):
            if getattr(self, name) < 1:
                raise ConfigInvalid(f"model.{name}", "must be a positive integer")
        if self.proj_depth not in (1, 2, 3):
            raise ConfigInvalid("model.proj_depth", "must be 1, 2 or 3")
        if self.ln_eps <= 0:
            raise ConfigInvalid("model.ln_eps", "must be positive")
        return self


def _uniform_linear(rng: np.random.Generator, fan_in: int, fan_out: int, name: str) -> tuple[Tensor, Tensor]:
    bound = 1.0 / np.sqrt(fan_in)
    w = Tensor(rng.uniform(-bound, bound, size=(fan_in, fan_out)), requires_grad=True, name=f"{name}.w")
    b = Tensor(rng.uniform(-bound, bound, size=fan_out), requires_grad=True, name=f"{name}.b")
    return w, b


@dataclass
class PointEncoderParams:
    """Shared per-point MLP (3 -> h -> h), max pool, post-pool MLP (h -> h -> raw)."""

    mlp1: tuple[Tensor, Tensor]
    mlp2: tuple[Tensor, Tensor]
    post1: tuple[Tensor, Tensor]
    post2: tuple[Tensor, Tensor]

    @classmethod
    def init(cls, hidden: int, raw_dim: int, rng: np.random.Generator) -> "PointEncoderParams":
        return cls(
            mlp1=_uniform_linear(rng, 3, hidden, "point_encoder.mlp1"),
            mlp2=_uniform_linear(rng, hidden, hidden, "point_encoder.mlp2"),
            post1=_uniform_linear(rng, hidden, hidden, "point_encoder.post1"),
            post2=_uniform_linear(rng, hidden, raw_dim, "point_encoder.post2"),
        )

    def named(self) -> Iterator[tuple[str, Tensor]]:
        for layer in ("mlp1", "mlp2", "post1", "post2"):
            w, b = getattr(self, layer)
            yield f"point_encoder.{layer}.w", w
            yield f"point_encoder.{layer}.b", b


@dataclass
class ProjectionParams:
    """``depth`` linear layers with a LayerNorm between consecutive ones."""

    linears: list[tuple[Tensor, Tensor]]
    norms: list[tuple[Tensor, Tensor]]
    eps: float = 1e-5

    @property
    def depth(self) -> int:
        return len(self.linears)

    @classmethod
    def init(cls, raw_dim: int, joint_dim: int, depth: int, rng: np.random.Generator,
             eps: float = 1e-5) -> "ProjectionParams":
        linears, norms = [], []
        fan_in = raw_dim
        for i in range(depth):
            linears.append(_uniform_linear(rng, fan_in, joint_dim, f"proj.linear{i + 1}"))
            fan_in = joint_dim
            if i < depth - 1:
                norms.append((Tensor(np.ones(joint_dim), requires_grad=True, name=f"proj.norm{i + 1}.gamma"),
                              Tensor(np.zeros(joint_dim), requires_grad=True, name=f"proj.norm{i + 1}.beta")))
        return cls(linears, norms, eps)

    def named(self) -> Iterator[tuple[str, Tensor]]:
        for i, (w, b) in enumerate(self.linears):
            yield f"proj.linear{i + 1}.w", w
            yield f"proj.linear{i + 1}.b", b
            if i < len(self.norms):
                gamma, beta = self.norms[i]
                yield f"proj.norm{i + 1}.gamma", gamma
                yield f"proj.norm{i + 1}.beta", beta


@dataclass(frozen=True)
class AnchorEncoder:
    """Frozen affine map from one modality's raw space into the joint space."""

    modality: str
    weight: np.ndarray  # (joint_dim, raw_dim), orthonormal columns
    bias: np.ndarray  # (joint_dim,)

    def __post_init__(self):
        self.weight.setflags(write=False)
        self.bias.setflags(write=False)

    @property
    def raw_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def joint_dim(self) -> int:
        return self.weight.shape[0]


def encode_points(params: PointEncoderParams, points) -> Tensor:
    """Encode an (N, 3) cloud or a (B, N, 3) batch into raw features.

    Max pooling over the point axis makes the result independent of point order.
    """
    pts = nc.as_tensor(points)
    if pts.ndim not in (2, 3) or pts.shape[-1] != 3:
        raise DimMismatch(f"point cloud must be (N, 3) or (B, N, 3), got {pts.shape}")
    if pts.shape[-2] < MIN_POINTS:
        raise TooFewPoints(f"need at least {MIN_POINTS} points, got {pts.shape[-2]}")
    x = nc.relu(nc.linear(pts, *params.mlp1))
    x = nc.relu(nc.linear(x, *params.mlp2))
    x = nc.max_(x, axis=-2)
    x = nc.relu(nc.linear(x, *params.post1))
    return nc.linear(x, *params.post2)


def project(params: ProjectionParams, feat) -> Tensor:
    feat = nc.as_tensor(feat)
    if feat.shape[-1] != params.linears[0][0].shape[0]:
        raise DimMismatch(f"projection expects width {params.linears[0][0].shape[0]}, got {feat.shape[-1]}")
    x = feat
    for i, (w, b) in enumerate(params.linears):
        x = nc.linear(x, w, b)
        if i < len(params.norms):
            x = nc.layer_norm(x, *params.norms[i], eps=params.eps)
    return x


def anchor_encode(enc: AnchorEncoder, raw) -> np.ndarray:
    """Frozen encode + L2 normalize; accepts (D,) or (..., D) inputs."""
    raw = np.asarray(raw, dtype=np.float64)
    if raw.shape[-1] != enc.raw_dim:
        raise DimMismatch(f"{enc.modality} anchor expects width {enc.raw_dim}, got {raw.shape[-1]}")
    return nc.normalize_rows(raw @ enc.weight.T + enc.bias)


def encode_text_templates(enc: AnchorEncoder, templates) -> np.ndarray:
    """Average the embeddings of S templates, then renormalize.

    ``templates`` is (S, D) for one class or (M, S, D) for a batch of classes.
    """
    templates = np.asarray(templates, dtype=np.float64)
    if templates.ndim < 2 or templates.shape[-2] == 0:
        raise EmptyTemplateSet("at least one template is required")
    return nc.normalize_rows(anchor_encode(enc, templates).mean(axis=-2))


def build_anchor_encoders(joint_dim: int, shared_basis: np.ndarray, raw_dims: dict[str, int],
                          rng: np.random.Generator) -> dict[str, AnchorEncoder]:
    """Build one frozen anchor per modality, all consistent on ``shared_basis``.

    Every anchor's column space contains the span of ``shared_basis`` (C x L),
    so a raw vector of the form ``W_m.T @ U @ z`` maps back to exactly ``U @ z``
    in every modality.  The remaining columns are modality-specific directions
    orthogonal to the shared span, and a random rotation mixes the raw axes.
    """
    latent = shared_basis.shape[1]
    complement = np.linalg.svd(shared_basis, full_matrices=True)[0][:, latent:]
    anchors = {}
    for modality in MODALITIES:
        dim = raw_dims[modality]
        if not latent <= dim <= joint_dim:
            raise ConfigInvalid(f"corpus.{modality}_dim", f"must lie in [{latent}, {joint_dim}]")
        extra = complement @ _random_orthogonal(rng, complement.shape[1])[:, :dim - latent]
        cols = np.concatenate([shared_basis, extra], axis=1) @ _random_orthogonal(rng, dim)
        anchors[modality] = AnchorEncoder(modality, cols, np.zeros(joint_dim))
    return anchors


def _random_orthogonal(rng: np.random.Generator, n: int) -> np.ndarray:
    if n == 0:
        return np.zeros((0, 0))
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    return q * np.sign(np.diag(r))


@dataclass
class AlignmentModel:
    """Trainable point branch plus the frozen anchors it is aligned to."""

    config: ModelConfig
    encoder: PointEncoderParams
    projection: ProjectionParams
    anchors: dict[str, AnchorEncoder] = field(default_factory=dict)

    @classmethod
    def init(cls, config: ModelConfig, anchors: dict[str, AnchorEncoder], seed: int) -> "AlignmentModel":
        config.validate()
        for enc in anchors.values():
            if enc.joint_dim != config.joint_dim:
                raise ShapeError(f"model joint_dim {config.joint_dim} but {enc.modality} "
                                 f"anchor joint_dim {enc.joint_dim}")
        rng = nc.derive(seed, "model.init")
        encoder = PointEncoderParams.init(config.hidden, config.raw_dim, rng)
        projection = ProjectionParams.init(config.raw_dim, config.joint_dim, config.proj_depth, rng,
                                           config.ln_eps)
        return cls(config, encoder, projection, dict(anchors))

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        return [*self.encoder.named(), *self.projection.named()]

    def parameters(self) -> list[Tensor]:
        return [t for _, t in self.named_parameters()]

    def anchor_tensors(self) -> dict[str, np.ndarray]:
        out = {}
        for modality, enc in sorted(self.anchors.items()):
            out[f"anchor.{modality}.w"] = enc.weight
            out[f"anchor.{modality}.b"] = enc.bias
        return out

    def state_tensors(self) -> dict[str, np.ndarray]:
        out = {name: t.data for name, t in self.named_parameters()}
        out.update(self.anchor_tensors())
        return out

    def embed_points(self, points) -> Tensor:
        return nc.l2_normalize(project(self.projection, encode_points(self.encoder, points)))

    def embed_points_array(self, points, chunk: int = 256) -> np.ndarray:
        """Graph-free embedding of a (M, N, 3) stack, processed in chunks."""
        points = np.asarray(points)
        out = [self.embed_points(points[i:i + chunk]).data for i in range(0, len(points), chunk)]
        return np.concatenate(out, axis=0) if out else np.zeros((0, self.config.joint_dim))
