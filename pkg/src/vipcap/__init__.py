"""Retrieval-text visual prompts for lightweight image captioning."""

__version__ = "0.1.0"

from .datastore import (
    CaptionEntry,
    EmbeddingIndex,
    PromptTemplate,
    RetrievalConfig,
    build_index,
    format_prompt,
    retrieve_topk,
)
from .encoders import EncoderConfig, encode_image, encode_text, patch_grid_size
from .errors import ConfigError, DataError, InputError, NumericError, VipcapError
from .metrics import EvalCorpus, bleu4, cider
from .training import CaptionExample, ModelGeometry, TrainConfig, ablate, count_trainable, train
from .vip import (
    FFNConfig,
    GaussianHead,
    GaussianParams,
    VipModule,
    estimate_gaussian,
    fuse,
    make_fusion,
    patch_retrieve,
    refine,
    sample_semantics,
    vip_forward,
)

__all__ = [
    "CaptionEntry",
    "CaptionExample",
    "ConfigError",
    "DataError",
    "EmbeddingIndex",
    "EncoderConfig",
    "EvalCorpus",
    "FFNConfig",
    "GaussianHead",
    "GaussianParams",
    "InputError",
    "ModelGeometry",
    "NumericError",
    "PromptTemplate",
    "RetrievalConfig",
    "TrainConfig",
    "VipModule",
    "VipcapError",
    "ablate",
    "bleu4",
    "build_index",
    "cider",
    "count_trainable",
    "encode_image",
    "encode_text",
    "estimate_gaussian",
    "format_prompt",
    "fuse",
    "make_fusion",
    "patch_grid_size",
    "patch_retrieve",
    "refine",
    "retrieve_topk",
    "sample_semantics",
    "train",
    "vip_forward",
]
