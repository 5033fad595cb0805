"""Training-free key/value feature cache used to pull 3D queries toward image features."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numcore as nc
from .errors import BadK, DimMismatch, EmptyBank, FormatError, NotNormalized
from .numcore.io import read_container, write_container

UNIT_TOL = 1e-10


@dataclass(frozen=True)
class CacheModel:
    keys: np.ndarray
    values: np.ndarray
    k: int = 3
    beta: float = 5.0
    gamma: float = 0.5

    def __post_init__(self):
        self.keys.setflags(write=False)
        self.values.setflags(write=False)

    @property
    def size(self) -> int:
        return len(self.keys)


def build_cache(features, k: int = 3, beta: float = 5.0, gamma: float = 0.5, values=None) -> CacheModel:
    """Keys are the normalized features; values default to the same features."""
    feats = np.asarray(features, dtype=np.float64)
    if feats.ndim != 2 or len(feats) == 0:
        raise EmptyBank("cache needs a non-empty (M, C) feature bank")
    if not np.all(np.isfinite(feats)):
        raise EmptyBank("cache features must be finite")
    if not 1 <= k <= len(feats):
        raise BadK(f"k={k} must lie in [1, {len(feats)}]")
    if not beta > 0 or gamma < 0:
        raise ValueError("need beta > 0 and gamma >= 0")
    vals = feats if values is None else np.asarray(values, dtype=np.float64)
    if vals.shape != feats.shape:
        raise DimMismatch(f"values {vals.shape} do not match keys {feats.shape}")
    return CacheModel(nc.normalize_rows(feats), vals.copy(), int(k), float(beta), float(gamma))


def retrieve_topk(cache: CacheModel, query) -> tuple[np.ndarray, np.ndarray]:
    """Top-k key indices (ties to lower index) and their softmax weights."""
    q = np.asarray(query, dtype=np.float64)
    if q.shape != (cache.keys.shape[1],):
        raise DimMismatch(f"query shape {q.shape}, cache width {cache.keys.shape[1]}")
    if abs(np.linalg.norm(q) - 1.0) > UNIT_TOL:
        raise NotNormalized("cache query must be unit-norm")
    sims = cache.keys @ q
    top = np.argsort(-sims, kind="stable")[:cache.k]
    logits = cache.beta * sims[top]
    w = np.exp(logits - logits.max())
    return top, w / w.sum()


def enhance(cache: CacheModel, query) -> np.ndarray:
    """Residual blend of the query with its similarity-weighted top-k values, renormalized."""
    q = np.asarray(query, dtype=np.float64)
    if q.ndim == 2:
        return np.stack([enhance(cache, row) for row in q])
    top, w = retrieve_topk(cache, q)
    if cache.gamma == 0:
        return q.copy()
    return nc.normalize_rows(q + cache.gamma * (w @ cache.values[top]))


def save_cache(cache: CacheModel, path) -> None:
    meta = {"k": cache.k, "beta": cache.beta, "gamma": cache.gamma}
    write_container(path, "cache", meta, {"keys": cache.keys, "values": cache.values})


def load_cache(path) -> CacheModel:
    meta, t = read_container(path, kind="cache")
    try:
        return CacheModel(t["keys"], t["values"], int(meta["k"]), float(meta["beta"]), float(meta["gamma"]))
    except KeyError as exc:
        raise FormatError(f"{path}: incomplete cache ({exc})") from None
