"""Align a trainable point-cloud encoder to a frozen multi-modal embedding space."""

from .alignment import ContrastiveConfig, TrainReport, info_nce, load_checkpoint, save_checkpoint, total_loss, train
from .cache import CacheModel, build_cache, enhance
from .dataset import CorpusConfig, PairedCorpus, build_pairs, generate_corpus, load_corpus, save_corpus
from .encoders import AlignmentModel, ModelConfig, anchor_encode, encode_points, encode_text_templates, project
from .retrieval import (
    average_precision,
    compose_embeddings,
    cosine_sim_matrix,
    eval_retrieval,
    rank,
    zero_shot_classify,
)

__version__ = "0.1.0"
