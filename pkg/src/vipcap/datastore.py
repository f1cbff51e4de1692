"""Caption datastore: exact top-k cosine retrieval and hard-prompt rendering.

The index is a flat in-memory scan (no approximation), so retrieval equals
an exhaustive search on every instance. Stores live on disk as a
``captions.jsonl`` / ``embeddings.bin`` pair with aligned row order.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from .constants import DEFAULT_TOPK
from .errors import ConfigError, DataError, InputError
from .tokenization import whitespace_tokenize
from .vipc_io import read_jsonl, read_vipc, write_jsonl, write_vipc

log = logging.getLogger("vipcap.datastore")

CAPTIONS_FILE = "captions.jsonl"
EMBEDDINGS_FILE = "embeddings.bin"


@dataclass(frozen=True)
class CaptionEntry:
    id: str
    text: str
    embedding: np.ndarray


@dataclass
class RetrievalConfig:
    k: int = DEFAULT_TOPK
    similarity: str = "cosine"

    def __post_init__(self):
        if self.k < 0:
            raise ConfigError(f"k must be nonnegative, got {self.k}")
        if self.similarity != "cosine":
            raise ConfigError(f"only cosine similarity is supported, got {self.similarity!r}")


@dataclass
class PromptTemplate:
    prefix: str = "Similar images show"
    separator: str = ", "
    suffix: str = ". This image shows"

    def empty_render(self) -> str:
        """Zero-caption rendering: the suffix without its leading '. '."""
        return self.suffix.lstrip(". ")


class EmbeddingIndex:
    """Immutable exact-search index over caption embeddings."""

    def __init__(self, entries):
        entries = list(entries)
        if not entries:
            raise DataError("cannot build an index from zero entries")
        seen = set()
        dims = set()
        for entry in entries:
            if entry.id in seen:
                raise DataError(f"duplicate caption id {entry.id!r}")
            seen.add(entry.id)
            if not entry.text:
                raise DataError(f"caption {entry.id!r} has empty text")
            emb = np.asarray(entry.embedding)
            if emb.ndim != 1:
                raise DataError(f"caption {entry.id!r} embedding is not a vector")
            dims.add(emb.shape[0])
        if len(dims) != 1:
            raise DataError(f"inconsistent embedding dims in store: {sorted(dims)}")
        self._entries = entries
        self._ids = np.array([e.id for e in entries])
        self._matrix = np.ascontiguousarray(
            np.stack([np.asarray(e.embedding, dtype=np.float64) for e in entries])
        )

    def __len__(self) -> int:
        return len(self._entries)

    @property
    def dim(self) -> int:
        return self._matrix.shape[1]

    @property
    def entries(self) -> list[CaptionEntry]:
        return list(self._entries)


def build_index(entries) -> EmbeddingIndex:
    return EmbeddingIndex(entries)


def retrieve_topk(index: EmbeddingIndex, query, cfg: RetrievalConfig | None = None):
    """Top-k entries by cosine similarity: descending sim, ties by ascending id."""
    cfg = cfg or RetrievalConfig()
    if cfg.k > len(index):
        raise InputError(f"k={cfg.k} exceeds store size {len(index)}")
    if cfg.k == 0:
        return []
    query = np.asarray(query, dtype=np.float64)
    if query.ndim != 1 or query.shape[0] != index.dim:
        raise ConfigError(
            f"query must be a {index.dim}-vector, got shape {query.shape}"
        )
    sims = kernels.cosine_scores(index._matrix, query)
    order = np.lexsort((index._ids, -sims))[: cfg.k]
    return [(index._entries[i], float(sims[i])) for i in order]


def format_prompt(
    captions,
    tmpl: PromptTemplate | None = None,
    token_budget: int = 77,
) -> str:
    """Render the hard prompt, dropping captions from the end to fit the budget.

    Captions are assumed ordered best-first, so budget pressure discards the
    lowest-similarity ones. If even the zero-caption rendering is over
    budget, the token sequence is hard-truncated.
    """
    if token_budget < 1:
        raise InputError(f"token_budget must be >= 1, got {token_budget}")
    tmpl = tmpl or PromptTemplate()
    kept = list(captions)
    while True:
        if kept:
            rendered = tmpl.prefix + " " + tmpl.separator.join(kept) + tmpl.suffix
        else:
            rendered = tmpl.empty_render()
        tokens = whitespace_tokenize(rendered)
        if len(tokens) <= token_budget:
            return rendered
        if kept:
            kept.pop()
        else:
            return " ".join(tokens[:token_budget])


def save_datastore(out_dir, entries) -> None:
    """Write a store directory; row order of embeddings matches the jsonl."""
    index = build_index(entries)  # validate before touching disk
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_jsonl(
        out_dir / CAPTIONS_FILE,
        [{"id": e.id, "text": e.text} for e in index.entries],
    )
    write_vipc(out_dir / EMBEDDINGS_FILE, index._matrix.astype(np.float32))
    log.info("wrote datastore with %d entries to %s", len(index), out_dir)


def load_datastore(store_dir) -> EmbeddingIndex:
    store_dir = Path(store_dir)
    records = read_jsonl(store_dir / CAPTIONS_FILE)
    matrix = read_vipc(store_dir / EMBEDDINGS_FILE)
    return load_entries(records, matrix)


def load_entries(records, matrix) -> EmbeddingIndex:
    """Pair caption records with embedding rows by position."""
    if len(records) != matrix.shape[0]:
        raise DataError(
            f"{len(records)} captions but {matrix.shape[0]} embedding rows"
        )
    entries = []
    for record, row in zip(records, matrix):
        if "id" not in record or "text" not in record:
            raise DataError(f"caption record missing id/text: {record!r}")
        entries.append(CaptionEntry(str(record["id"]), str(record["text"]), row))
    return build_index(entries)
