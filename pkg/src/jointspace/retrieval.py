"""Cross-modal retrieval, zero-shot classification and embedding arithmetic."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numcore as nc
from .alignment import FrozenTargets, checkpoint_digest
from .dataset import PairedCorpus
from .encoders import AlignmentModel, anchor_encode, encode_text_templates
from .errors import DimMismatch, EmptySplit, NoRelevantItems, NotNormalized

UNIT_TOL = 1e-10
DIRECTIONS = ("3d-3d", "2d-3d", "3d-2d", "text-3d")


def _check_unit(x: np.ndarray, what: str, tol: float = UNIT_TOL) -> None:
    dev = np.abs(np.linalg.norm(x, axis=-1) - 1.0)
    if dev.size and dev.max() > tol:
        raise NotNormalized(f"{what}: row norm off by {dev.max():.2e}")


def cosine_sim_matrix(queries, gallery) -> np.ndarray:
    q, g = np.atleast_2d(np.asarray(queries, float)), np.atleast_2d(np.asarray(gallery, float))
    if q.shape[1] != g.shape[1]:
        raise DimMismatch(f"query width {q.shape[1]} vs gallery width {g.shape[1]}")
    _check_unit(q, "queries")
    _check_unit(g, "gallery")
    # elementwise product-sum rather than BLAS: blocked kernels can round identical
    # gallery rows differently, which would break index-order tie breaking
    out = np.empty((len(q), len(g)))
    step = max(1, 2_000_000 // max(1, g.size))
    for i in range(0, len(q), step):
        out[i:i + step] = (q[i:i + step, None, :] * g[None, :, :]).sum(axis=-1)
    return out


def rank(scores) -> np.ndarray:
    """Gallery indices by descending score, ties broken by ascending index."""
    return np.argsort(-np.asarray(scores, float), kind="stable")


def average_precision(relevance) -> float:
    rel = np.asarray(relevance, dtype=float)
    hits = rel.sum()
    if hits == 0:
        raise NoRelevantItems("average precision needs at least one relevant item")
    precision = np.cumsum(rel) / np.arange(1, len(rel) + 1)
    return float((precision * rel).sum() / hits)


@dataclass
class RetrievalResult:
    direction: str
    rankings: np.ndarray
    scores: np.ndarray
    ap: np.ndarray

    @property
    def mAP(self) -> float:
        return float(self.ap.mean())


def retrieve(queries, q_labels, gallery, g_labels, direction: str = "", exclude_self: bool = False) -> RetrievalResult:
    """Rank ``gallery`` for every query; relevance means equal labels.

    With ``exclude_self`` the query and gallery are the same set and each query's
    own item is removed from its ranking.
    """
    sims = cosine_sim_matrix(queries, gallery)
    q_labels, g_labels = np.asarray(q_labels), np.asarray(g_labels)
    rankings, scores, aps = [], [], []
    for i, row in enumerate(sims):
        order = rank(row)
        if exclude_self:
            order = order[order != i]
        rankings.append(order)
        scores.append(row[order])
        aps.append(average_precision(g_labels[order] == q_labels[i]))
    return RetrievalResult(direction, np.array(rankings), np.array(scores), np.array(aps))


def expected_random_ap(gallery_size: int, relevant: int) -> float:
    """Expected AP of a uniformly random ranking.

    Position k holds a relevant item with probability R/M, and given that, the
    expected precision there is (1 + (k-1)(R-1)/(M-1)) / k.
    """
    m, r = gallery_size, relevant
    if m == 1:
        return 1.0
    harmonic = np.sum(1.0 / np.arange(1, m + 1))
    return float((harmonic + (r - 1) / (m - 1) * (m - harmonic)) / m)


def chance_map(labels, exclude_self: bool = False) -> float:
    labels = np.asarray(labels)
    m = len(labels) - int(exclude_self)
    return float(np.mean([expected_random_ap(m, int((labels == y).sum()) - int(exclude_self)) for y in labels]))


def split_embeddings(model: AlignmentModel, corpus: PairedCorpus, split: str = "test") -> dict[str, np.ndarray]:
    idx = corpus.split(split)
    if len(idx) == 0:
        raise EmptySplit(f"{split} split is empty")
    targets = FrozenTargets.compute(corpus, model.anchors)
    return {
        "3d": model.embed_points_array(corpus.points[idx]),
        "image": targets.image[idx],
        "text": targets.text[idx],
        "audio": targets.audio[idx],
        "labels": corpus.labels[idx],
        "audio_mask": corpus.audio_mask[idx],
    }


def eval_retrieval(model: AlignmentModel, corpus: PairedCorpus, direction: str,
                   embeddings: dict[str, np.ndarray] | None = None) -> RetrievalResult:
    emb = embeddings if embeddings is not None else split_embeddings(model, corpus)
    y = emb["labels"]
    if direction == "3d-3d":
        return retrieve(emb["3d"], y, emb["3d"], y, direction, exclude_self=True)
    if direction == "2d-3d":
        return retrieve(emb["image"], y, emb["3d"], y, direction)
    if direction == "3d-2d":
        return retrieve(emb["3d"], y, emb["image"], y, direction)
    if direction == "text-3d":
        return retrieve(emb["text"], y, emb["3d"], y, direction)
    raise ValueError(f"unknown direction {direction!r}; expected one of {DIRECTIONS}")


# ---------------------------------------------------------------- zero-shot

def class_heads(model: AlignmentModel, corpus: PairedCorpus, templates: int | None = None) -> np.ndarray:
    """One text head per category from its noiseless, template-averaged embedding."""
    return np.stack([
        encode_text_templates(model.anchors["text"], corpus.expand_templates(c, templates))
        for c in range(len(corpus.categories))
    ])


def zero_shot_classify(f3d, heads) -> np.ndarray | int:
    """Index of the most similar head; ties resolve to the lowest index."""
    f3d = np.asarray(f3d, float)
    heads = np.asarray(heads, float)
    if len(heads) < 2:
        raise DimMismatch("zero-shot classification needs at least two class heads")
    sims = cosine_sim_matrix(f3d, heads)
    pred = np.argmax(sims, axis=1)
    return int(pred[0]) if f3d.ndim == 1 else pred


def zero_shot_accuracy(model: AlignmentModel, corpus: PairedCorpus, templates: int | None = None,
                       embeddings: dict[str, np.ndarray] | None = None) -> tuple[float, dict[int, float]]:
    emb = embeddings if embeddings is not None else split_embeddings(model, corpus)
    pred = zero_shot_classify(emb["3d"], class_heads(model, corpus, templates))
    correct = pred == emb["labels"]
    per_cat = {int(c): float(correct[emb["labels"] == c].mean()) for c in np.unique(emb["labels"])}
    return float(correct.mean()), per_cat


# ---------------------------------------------------------------- arithmetic

def compose_embeddings(fa, fb) -> np.ndarray:
    fa, fb = np.asarray(fa, float), np.asarray(fb, float)
    if fa.shape != fb.shape:
        raise DimMismatch(f"cannot compose {fa.shape} with {fb.shape}")
    return nc.normalize_rows(fa + fb)


@dataclass
class JointGallery:
    """Images of category pairs (the composed targets) plus single-category distractors."""

    embeddings: np.ndarray
    pairs: list[tuple[int, int] | tuple[int]]

    def index_of(self, key) -> int:
        return self.pairs.index(key)


def build_joint_gallery(model: AlignmentModel, corpus: PairedCorpus, rng: np.random.Generator) -> JointGallery:
    """Each item's image parts are drawn from test-split images of its categories."""
    idx = corpus.test_idx
    image = anchor_encode(model.anchors["image"], corpus.image[idx])
    labels = corpus.labels[idx]
    n_cat = len(corpus.categories)

    def pick(c):
        return image[rng.choice(np.flatnonzero(labels == c))]

    keys: list = [(a, b) for a in range(n_cat) for b in range(a + 1, n_cat)]
    rows = [compose_embeddings(pick(a), pick(b)) for a, b in keys]
    for c in range(n_cat):
        keys.append((c,))
        rows.append(pick(c))
    return JointGallery(np.stack(rows), keys)


def composition_trial(model: AlignmentModel, corpus: PairedCorpus, seed: int) -> bool:
    """Compose a test cloud of one category with test audio of another audio-capable category.

    Succeeds when the joint image of exactly those two categories ranks first.
    """
    rng = nc.derive(seed, "compose.trial")
    gallery = build_joint_gallery(model, corpus, rng)
    idx, labels = corpus.test_idx, corpus.labels[corpus.test_idx]
    audio_cats = [c.id for c in corpus.categories if c.audio_capable]
    if not audio_cats:
        raise EmptySplit("composition needs at least one audio-capable category")
    c_audio = int(rng.choice(audio_cats))
    c_shape = int(rng.choice([c for c in range(len(corpus.categories)) if c != c_audio]))
    shape_i = idx[rng.choice(np.flatnonzero(labels == c_shape))]
    audio_i = idx[rng.choice(np.flatnonzero(labels == c_audio))]
    f3d = model.embed_points(corpus.points[shape_i]).data
    fa = anchor_encode(model.anchors["audio"], corpus.audio[audio_i])
    query = compose_embeddings(f3d, fa)
    top = int(rank(cosine_sim_matrix(query, gallery.embeddings)[0])[0])
    return gallery.pairs[top] == tuple(sorted((c_shape, c_audio)))


def composition_success_rate(model: AlignmentModel, corpus: PairedCorpus, trials: int = 100, seed: int = 0) -> float:
    hits = [composition_trial(model, corpus, seed * 100_003 + t) for t in range(trials)]
    return float(np.mean(hits))


def evaluation_report(model: AlignmentModel, corpus: PairedCorpus, directions=DIRECTIONS,
                      head_templates: int | None = None, config: dict | None = None) -> dict:
    """Per-direction mAP and zero-shot accuracy on the test split, with stable keys."""
    emb = split_embeddings(model, corpus)
    maps = {d: eval_retrieval(model, corpus, d, emb).mAP for d in directions}
    acc, per_cat = zero_shot_accuracy(model, corpus, head_templates, emb)
    return {
        "checkpoint_sha256": checkpoint_digest(model),
        "corpus_seed": corpus.seed,
        "config": config or {},
        "map": maps,
        "chance_map": {d: chance_map(emb["labels"], exclude_self=d == "3d-3d") for d in directions},
        "zero_shot": {"accuracy": acc, "per_category": {str(c): v for c, v in per_cat.items()}},
        "test_size": int(len(emb["labels"])),
    }
