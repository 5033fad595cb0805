"""Synthetic 3D/image/text/audio corpus and training-pair construction.

Each category owns a latent prototype ``z_c``.  A shared orthonormal basis
``U`` places prototypes in the joint space, and each modality observes them
through a fixed linear view ``V_m = W_m.T @ U`` chosen so that the frozen
anchor of that modality maps the noiseless view back onto ``U @ z_c``.  Point
clouds come from parametric surfaces deformed per category, so only the
geometry tells the trainable encoder which category it is looking at.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

from . import numcore as nc
from .encoders import MODALITIES, AnchorEncoder, build_anchor_encoders
from .errors import ConfigInvalid, FormatError, ShapeError, UnknownSample
from .numcore.io import read_container, write_container

SHAPE_FAMILIES = ("sphere", "box", "torus", "cylinder", "cone")
TORUS_MAJOR, TORUS_MINOR = 0.7, 0.25
MAX_PROTOTYPE_COS = 0.5


@dataclass
class CorpusConfig:
    categories: int = 10
    audio_categories: int = 6
    train_per_category: int = 100
    test_per_category: int = 20
    num_points: int = 256
    latent_dim: int = 16
    joint_dim: int = 32
    image_dim: int = 24
    text_dim: int = 24
    audio_dim: int = 24
    num_templates: int = 64
    noise: float = 0.05
    point_jitter: float = 0.01
    template_spread: float = 0.1

    def validate(self) -> "CorpusConfig":
        if self.categories < 2:
            raise ConfigInvalid("corpus.categories", "at least 2 categories are required")
        if not 0 <= self.audio_categories <= self.categories:
            raise ConfigInvalid("corpus.audio_categories", "must lie between 0 and the category count")
        for name in ("train_per_category", "test_per_category"):
            if getattr(self, name) < 2:
                raise ConfigInvalid(f"corpus.{name}", "must be at least 2")
        if self.num_points < 8:
            raise ConfigInvalid("corpus.num_points", "must be at least 8")
        for name in ("latent_dim", "joint_dim", "image_dim", "text_dim", "audio_dim", "num_templates"):
            if getattr(self, name) < 1:
                raise ConfigInvalid(f"corpus.{name}", "must be a positive integer")
        if self.latent_dim > self.joint_dim:
            raise ConfigInvalid("corpus.latent_dim", "cannot exceed joint_dim")
        for name in ("noise", "point_jitter", "template_spread"):
            if getattr(self, name) < 0 or not np.isfinite(getattr(self, name)):
                raise ConfigInvalid(f"corpus.{name}", "must be a finite non-negative number")
        return self

    def raw_dims(self) -> dict[str, int]:
        return {"image": self.image_dim, "text": self.text_dim, "audio": self.audio_dim}


@dataclass
class CategorySpec:
    id: int
    prototype: np.ndarray
    family: str
    scale: np.ndarray
    shear: float
    audio_capable: bool


@dataclass
class PairedSample:
    id: int
    category: int
    points: np.ndarray
    image: np.ndarray
    text: np.ndarray
    audio: np.ndarray | None


@dataclass
class PairBatch:
    indices: np.ndarray
    audio_mask: np.ndarray


@dataclass
class PairedCorpus:
    config: CorpusConfig
    seed: int
    categories: list[CategorySpec]
    anchors: dict[str, AnchorEncoder]
    views: dict[str, np.ndarray]
    template_offsets: np.ndarray
    points: np.ndarray
    image: np.ndarray
    text: np.ndarray
    audio: np.ndarray
    audio_mask: np.ndarray
    labels: np.ndarray
    train_idx: np.ndarray
    test_idx: np.ndarray

    def __len__(self):
        return len(self.labels)

    def sample(self, i: int) -> PairedSample:
        if not 0 <= i < len(self):
            raise UnknownSample(f"sample {i} is outside 0..{len(self) - 1}")
        return PairedSample(i, int(self.labels[i]), self.points[i], self.image[i], self.text[i],
                            self.audio[i] if self.audio_mask[i] else None)

    def split(self, name: str) -> np.ndarray:
        if name == "train":
            return self.train_idx
        if name == "test":
            return self.test_idx
        raise ValueError(f"unknown split {name!r}")

    def expand_templates(self, category: int, count: int | None = None) -> np.ndarray:
        return expand_templates(self, category, count)


# ---------------------------------------------------------------- shapes

def _unit_surface(family: str, n: int, rng: np.random.Generator) -> np.ndarray:
    if family == "sphere":
        v = rng.standard_normal((n, 3))
        return v / np.linalg.norm(v, axis=1, keepdims=True)
    if family == "box":
        pts = rng.uniform(-1.0, 1.0, size=(n, 3))
        axis = rng.integers(0, 3, size=n)
        pts[np.arange(n), axis] = rng.choice([-1.0, 1.0], size=n)
        return 0.8 * pts
    if family == "torus":
        u, v = rng.uniform(0, 2 * np.pi, size=(2, n))
        ring = TORUS_MAJOR + TORUS_MINOR * np.cos(v)
        return np.stack([ring * np.cos(u), ring * np.sin(u), TORUS_MINOR * np.sin(v)], axis=1)
    if family == "cylinder":
        radius = 0.6
        side_area, cap_area = 2 * np.pi * radius * 2.0, 2 * np.pi * radius ** 2
        theta = rng.uniform(0, 2 * np.pi, size=n)
        on_side = rng.uniform(size=n) < side_area / (side_area + cap_area)
        rad = np.where(on_side, radius, radius * np.sqrt(rng.uniform(size=n)))
        z = np.where(on_side, rng.uniform(-1.0, 1.0, size=n), rng.choice([-1.0, 1.0], size=n))
        return np.stack([rad * np.cos(theta), rad * np.sin(theta), z], axis=1)
    if family == "cone":
        base = 0.8
        lateral, disk = np.pi * base * np.hypot(base, 2.0), np.pi * base ** 2
        theta = rng.uniform(0, 2 * np.pi, size=n)
        on_side = rng.uniform(size=n) < lateral / (lateral + disk)
        t = np.sqrt(rng.uniform(size=n))
        rad = base * t
        z = np.where(on_side, 1.0 - 2.0 * t, -1.0)
        return np.stack([rad * np.cos(theta), rad * np.sin(theta), z], axis=1)
    raise ValueError(f"unknown shape family {family!r}")


def sample_cloud(spec: CategorySpec, n: int, jitter: float, rng: np.random.Generator) -> np.ndarray:
    pts = _unit_surface(spec.family, n, rng)
    pts = pts * (spec.scale * (1.0 + 0.05 * rng.standard_normal(3)))
    pts[:, 0] += spec.shear * pts[:, 2]
    return pts + jitter * rng.standard_normal(pts.shape)


# ---------------------------------------------------------------- generation

def _draw_prototypes(cfg: CorpusConfig, rng: np.random.Generator) -> np.ndarray:
    protos: list[np.ndarray] = []
    attempts = 0
    while len(protos) < cfg.categories:
        attempts += 1
        if attempts > 1000 * cfg.categories:
            raise ConfigInvalid("corpus.categories", f"cannot draw {cfg.categories} prototypes with pairwise "
                                f"cosine below {MAX_PROTOTYPE_COS} in {cfg.latent_dim} dims")
        z = rng.standard_normal(cfg.latent_dim) / np.sqrt(cfg.latent_dim)
        unit = z / np.linalg.norm(z)
        if all(unit @ p / np.linalg.norm(p) < MAX_PROTOTYPE_COS for p in protos):
            protos.append(z)
    return np.stack(protos)


def _draw_deformations(cfg: CorpusConfig, rng: np.random.Generator):
    out: list[tuple[str, np.ndarray, float]] = []
    for c in range(cfg.categories):
        family = SHAPE_FAMILIES[c % len(SHAPE_FAMILIES)]
        siblings = [s for f, s, _ in out if f == family]
        for _ in range(1000):
            scale = rng.uniform(0.55, 1.25, size=3)
            if all(np.max(np.abs(scale - s)) >= 0.25 for s in siblings):
                break
        out.append((family, scale, float(rng.uniform(-0.3, 0.3))))
    return out


def generate_corpus(config: CorpusConfig | None = None, seed: int = 0) -> PairedCorpus:
    """Build the full corpus deterministically from ``(config, seed)``."""
    cfg = (config or CorpusConfig()).validate()
    protos = _draw_prototypes(cfg, nc.derive(seed, "corpus.prototypes"))
    deform = _draw_deformations(cfg, nc.derive(seed, "corpus.shapes"))
    audio_ids = set(nc.derive(seed, "corpus.audio").permutation(cfg.categories)[:cfg.audio_categories].tolist())
    categories = [CategorySpec(c, protos[c], *deform[c], audio_capable=c in audio_ids)
                  for c in range(cfg.categories)]

    arng = nc.derive(seed, "corpus.anchors")
    q = np.linalg.qr(arng.standard_normal((cfg.joint_dim, cfg.latent_dim)))[0]
    anchors = build_anchor_encoders(cfg.joint_dim, q, cfg.raw_dims(), arng)
    views = {m: anchors[m].weight.T @ q for m in MODALITIES}

    trng = nc.derive(seed, "corpus.templates")
    offsets = cfg.template_spread / np.sqrt(cfg.text_dim) * trng.standard_normal((cfg.num_templates, cfg.text_dim))
    offsets[0] = 0.0

    per_cat = cfg.train_per_category + cfg.test_per_category
    total = cfg.categories * per_cat
    labels = np.repeat(np.arange(cfg.categories), per_cat)
    points = np.empty((total, cfg.num_points, 3))
    image = np.empty((total, cfg.image_dim))
    text = np.empty((total, cfg.num_templates, cfg.text_dim))
    audio = np.zeros((total, cfg.audio_dim))
    mask = np.zeros(total, dtype=bool)
    srng = nc.derive(seed, "corpus.samples")
    for i, c in enumerate(labels):
        spec = categories[c]
        points[i] = sample_cloud(spec, cfg.num_points, cfg.point_jitter, srng)
        image[i] = views["image"] @ spec.prototype + cfg.noise * srng.standard_normal(cfg.image_dim)
        text[i] = (views["text"] @ spec.prototype + offsets
                   + cfg.noise * srng.standard_normal((cfg.num_templates, cfg.text_dim)))
        aud = views["audio"] @ spec.prototype + cfg.noise * srng.standard_normal(cfg.audio_dim)
        if spec.audio_capable:
            audio[i] = aud
            mask[i] = True

    within = np.tile(np.arange(per_cat), cfg.categories)
    train_idx = np.flatnonzero(within < cfg.train_per_category)
    test_idx = np.flatnonzero(within >= cfg.train_per_category)
    return PairedCorpus(cfg, seed, categories, anchors, views, offsets, points, image, text, audio,
                        mask, labels, train_idx, test_idx)


def expand_templates(corpus: PairedCorpus, category: int, count: int | None = None) -> np.ndarray:
    """The category's noiseless text view plus the first ``count`` shared offsets."""
    count = corpus.config.num_templates if count is None else count
    if not 1 <= count <= corpus.config.num_templates:
        raise ConfigInvalid("eval.head_templates", f"must lie in [1, {corpus.config.num_templates}]")
    if not 0 <= category < len(corpus.categories):
        raise UnknownSample(f"unknown category {category}")
    proto = corpus.views["text"] @ corpus.categories[category].prototype
    return proto + corpus.template_offsets[:count]


def build_pairs(corpus: PairedCorpus, batch_size: int, seed: int, epoch: int,
                split: str = "train") -> Iterator[PairBatch]:
    """Yield category-balanced shuffled batches with their audio masks.

    Samples are shuffled within each category, then interleaved by their
    jittered fractional position, so every batch sees the categories in
    close to corpus proportions.
    """
    idx = corpus.split(split)
    rng = nc.derive(seed, f"pairs.{split}.epoch{epoch}")
    keys = np.empty(len(idx))
    labels = corpus.labels[idx]
    for c in np.unique(labels):
        members = np.flatnonzero(labels == c)
        order = rng.permutation(len(members))
        keys[members[order]] = (np.arange(len(members)) + rng.uniform(size=len(members))) / len(members)
    ordered = idx[np.argsort(keys, kind="stable")]
    for start in range(0, len(ordered), batch_size):
        chunk = ordered[start:start + batch_size]
        yield PairBatch(chunk, corpus.audio_mask[chunk].copy())


# ---------------------------------------------------------------- persistence

def save_corpus(corpus: PairedCorpus, path) -> None:
    meta = {
        "config": dataclasses.asdict(corpus.config),
        "seed": corpus.seed,
        "categories": [
            {"id": c.id, "family": c.family, "audio_capable": c.audio_capable,
             "scale": [float(s) for s in c.scale], "shear": c.shear}
            for c in corpus.categories
        ],
        "splits": {"train": len(corpus.train_idx), "test": len(corpus.test_idx)},
    }
    tensors = {
        "points": corpus.points, "image": corpus.image, "text": corpus.text, "audio": corpus.audio,
        "audio_mask": corpus.audio_mask.astype(np.float64), "labels": corpus.labels.astype(np.float64),
        "train_idx": corpus.train_idx.astype(np.float64), "test_idx": corpus.test_idx.astype(np.float64),
        "prototypes": np.stack([c.prototype for c in corpus.categories]),
        "template_offsets": corpus.template_offsets,
    }
    for m in MODALITIES:
        tensors[f"view.{m}"] = corpus.views[m]
        tensors[f"anchor.{m}.w"] = corpus.anchors[m].weight
        tensors[f"anchor.{m}.b"] = corpus.anchors[m].bias
    write_container(path, "corpus", meta, tensors)


def load_corpus(path) -> PairedCorpus:
    meta, t = read_container(Path(path), kind="corpus")
    try:
        cfg = CorpusConfig(**meta["config"]).validate()
        cats = [CategorySpec(e["id"], t["prototypes"][i], e["family"], np.asarray(e["scale"]),
                             float(e["shear"]), bool(e["audio_capable"]))
                for i, e in enumerate(meta["categories"])]
        anchors = {m: AnchorEncoder(m, t[f"anchor.{m}.w"], t[f"anchor.{m}.b"]) for m in MODALITIES}
        corpus = PairedCorpus(
            cfg, int(meta["seed"]), cats, anchors, {m: t[f"view.{m}"] for m in MODALITIES},
            t["template_offsets"], t["points"], t["image"], t["text"], t["audio"],
            t["audio_mask"] > 0.5, t["labels"].astype(np.int64),
            t["train_idx"].astype(np.int64), t["test_idx"].astype(np.int64))
    except (KeyError, TypeError, IndexError) as exc:
        raise FormatError(f"{path}: incomplete corpus ({exc!r})") from None
    per_cat = cfg.train_per_category + cfg.test_per_category
    expected = {
        "points": (cfg.categories * per_cat, cfg.num_points, 3),
        "text": (cfg.categories * per_cat, cfg.num_templates, cfg.text_dim),
        "prototypes": (cfg.categories, cfg.latent_dim),
    }
    for name, shape in expected.items():
        if t[name].shape != shape:
            raise ShapeError(f"{path}: tensor {name!r} has dims {list(t[name].shape)}, config implies {list(shape)}")
    return corpus
