"""Frozen autoregressive decoder plus trainable cross-attention adapters.

The decoder is a small GPT-style stack used both as the test-scale decoder
(2 layers, width 128, vocab 512) and, at GPT-2-base geometry, for parameter
accounting. Adapters insert one cross-attention sub-layer after each frozen
self-attention block; their output projections start at zero so the bridged
model initially reproduces the frozen decoder's text-only behavior.
"""

from collections import Counter
from dataclasses import dataclass

import torch
from torch import nn

from .errors import ConfigError, InputError
from .tokenization import whitespace_tokenize
from .vip import MultiheadAttention


@dataclass
class ToyDecoderConfig:
    vocab_size: int = 512
    width: int = 128
    num_layers: int = 2
    num_heads: int = 4
    max_positions: int = 128
    mlp_mult: int = 4

    def __post_init__(self):
        if self.width % self.num_heads != 0:
            raise ConfigError(
                f"width {self.width} not divisible by {self.num_heads} heads"
            )
        for field in ("vocab_size", "width", "num_layers", "num_heads", "max_positions"):
            if getattr(self, field) < 1:
                raise ConfigError(f"{field} must be positive")


@dataclass
class AdapterConfig:
    num_heads: int = 12
    head_dim: int = 16

    def __post_init__(self):
        if self.num_heads < 1 or self.head_dim < 1:
            raise ConfigError("num_heads and head_dim must be positive")


class DecoderBlock(nn.Module):
    def __init__(self, cfg: ToyDecoderConfig):
        super().__init__()
        head_dim = cfg.width // cfg.num_heads
        self.ln1 = nn.LayerNorm(cfg.width)
        self.attn = MultiheadAttention(
            cfg.width, cfg.width, cfg.width, cfg.num_heads, head_dim, causal=True
        )
        self.ln2 = nn.LayerNorm(cfg.width)
        hidden = cfg.width * cfg.mlp_mult
        self.mlp = nn.Sequential(
            nn.Linear(cfg.width, hidden), nn.GELU(), nn.Linear(hidden, cfg.width)
        )

    def forward(self, x, adapter=None, memory=None):
        normed = self.ln1(x)
        x = x + self.attn(normed, normed)
        if adapter is not None:
            x = x + adapter(x, memory)
        x = x + self.mlp(self.ln2(x))
        return x


class ToyDecoder(nn.Module):
    """Minimal GPT-style causal decoder over a single token sequence."""

    def __init__(self, cfg: ToyDecoderConfig | None = None):
        super().__init__()
        cfg = cfg or ToyDecoderConfig()
        self.cfg = cfg
        self.tok_emb = nn.Embedding(cfg.vocab_size, cfg.width)
        self.pos_emb = nn.Embedding(cfg.max_positions, cfg.width)
        self.blocks = nn.ModuleList(DecoderBlock(cfg) for _ in range(cfg.num_layers))
        self.ln_f = nn.LayerNorm(cfg.width)
        self.lm_head = nn.Linear(cfg.width, cfg.vocab_size, bias=False)

    def forward(self, token_ids, adapters=None, memory=None) -> torch.Tensor:
        ids = torch.as_tensor(token_ids, dtype=torch.int64)
        if ids.ndim != 1 or ids.shape[0] < 1:
            raise InputError(f"token_ids must be a non-empty 1-D sequence, got {tuple(ids.shape)}")
        if ids.shape[0] > self.cfg.max_positions:
            raise InputError(
                f"sequence length {ids.shape[0]} exceeds context limit {self.cfg.max_positions}"
            )
        x = self.tok_emb(ids) + self.pos_emb(torch.arange(ids.shape[0]))
        for i, block in enumerate(self.blocks):
            adapter = adapters[i] if adapters is not None else None
            x = block(x, adapter=adapter, memory=memory)
        return self.lm_head(self.ln_f(x))


class AdapterLayer(nn.Module):
    """One trainable cross-attention sub-layer; output projection starts at 0."""

    def __init__(self, width: int, kv_dim: int, cfg: AdapterConfig):
        super().__init__()
        inner = cfg.num_heads * cfg.head_dim
        self.num_heads = cfg.num_heads
        self.head_dim = cfg.head_dim
        self.q = nn.Linear(width, inner)
        self.k = nn.Linear(kv_dim, inner)
        self.v = nn.Linear(kv_dim, inner)
        self.o = nn.Linear(inner, width)
        nn.init.zeros_(self.o.weight)
        nn.init.zeros_(self.o.bias)

    def forward(self, x: torch.Tensor, memory: torch.Tensor) -> torch.Tensor:
        t, s = x.shape[0], memory.shape[0]
        q = self.q(x).view(t, self.num_heads, self.head_dim).transpose(0, 1)
        k = self.k(memory).view(s, self.num_heads, self.head_dim).transpose(0, 1)
        v = self.v(memory).view(s, self.num_heads, self.head_dim).transpose(0, 1)
        attn = torch.softmax(q @ k.transpose(-1, -2) / self.head_dim**0.5, dim=-1)
        out = (attn @ v).transpose(0, 1).reshape(t, -1)
        return self.o(out)


class CrossAttentionAdapter(nn.Module):
    """Per-decoder-layer adapters, the only trainable decoder-side parameters.

    Layers are attributes named layer0, layer1, ... so checkpoint parameter
    names come out as layer{i}.{q|k|v|o}.{weight|bias}.
    """

    def __init__(self, num_layers: int, width: int, kv_dim: int, cfg: AdapterConfig | None = None):
        super().__init__()
        cfg = cfg or AdapterConfig()
        self.cfg = cfg
        self.num_layers = num_layers
        for i in range(num_layers):
            setattr(self, f"layer{i}", AdapterLayer(width, kv_dim, cfg))

    def layers(self) -> list[AdapterLayer]:
        return [getattr(self, f"layer{i}") for i in range(self.num_layers)]


class BridgedDecoder(nn.Module):
    """Frozen decoder with adapters attending over refined visual features."""

    def __init__(self, decoder: ToyDecoder, adapter: CrossAttentionAdapter):
        super().__init__()
        if adapter.num_layers != decoder.cfg.num_layers:
            raise ConfigError(
                f"adapter has {adapter.num_layers} layers, decoder has {decoder.cfg.num_layers}"
            )
        self.decoder = decoder
        self.adapter = adapter
        for param in self.decoder.parameters():
            param.requires_grad_(False)

    def forward(self, token_ids, v_refined) -> torch.Tensor:
        memory = torch.as_tensor(v_refined)
        if memory.ndim != 2:
            raise ConfigError(f"refined features must be 2-D, got {tuple(memory.shape)}")
        return self.decoder(token_ids, adapters=self.adapter.layers(), memory=memory)

    def text_only(self, token_ids) -> torch.Tensor:
        return self.decoder(token_ids)


@dataclass
class CaptionBatch:
    """One tokenized example: [BOS, prompt..., reference..., EOS].

    ``prefix_len`` counts BOS plus prompt tokens; everything after it is the
    reference span the loss is computed on.
    """

    token_ids: torch.Tensor
    prefix_len: int
    attention_mask: torch.Tensor | None = None


def caption_loss(logits: torch.Tensor, batch: CaptionBatch) -> torch.Tensor:
    """Mean negative log-likelihood over the reference tokens only."""
    ids = torch.as_tensor(batch.token_ids, dtype=torch.int64)
    total = ids.shape[0]
    if batch.prefix_len < 1 or batch.prefix_len >= total:
        raise InputError(
            f"prefix_len {batch.prefix_len} leaves no reference span in {total} tokens"
        )
    if logits.shape[0] != total:
        raise InputError(f"{logits.shape[0]} logit rows for {total} tokens")
    log_probs = torch.log_softmax(logits, dim=-1)
    # position t predicts token t+1; reference tokens start at prefix_len
    targets = ids[batch.prefix_len :]
    rows = log_probs[batch.prefix_len - 1 : total - 1]
    nll = -rows.gather(1, targets.unsqueeze(1)).squeeze(1)
    return nll.mean()


class CaptionVocab:
    """Word-level vocabulary with BOS/EOS/UNK specials at fixed positions."""

    BOS, EOS, UNK = "<bos>", "<eos>", "<unk>"

    def __init__(self, words: list[str]):
        specials = [self.BOS, self.EOS, self.UNK]
        self._tokens = specials + [w for w in words if w not in specials]
        self._index = {tok: i for i, tok in enumerate(self._tokens)}
        if len(self._index) != len(self._tokens):
            raise ConfigError("vocabulary contains duplicate words")

    @classmethod
    def build(cls, texts, max_size: int = 512) -> "CaptionVocab":
        """Most frequent words first, ties alphabetical, truncated to fit."""
        counts = Counter()
        for text in texts:
            counts.update(whitespace_tokenize(text))
        ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
        return cls([w for w, _ in ranked[: max_size - 3]])

    def __len__(self) -> int:
        return len(self._tokens)

    @property
    def bos_id(self) -> int:
        return 0

    @property
    def eos_id(self) -> int:
        return 1

    @property
    def unk_id(self) -> int:
        return 2

    def encode(self, text: str) -> list[int]:
        return [self._index.get(w, self.unk_id) for w in whitespace_tokenize(text)]

    def decode(self, ids) -> str:
        words = []
        for i in ids:
            if i in (self.bos_id, self.eos_id):
                continue
            # decoder logits may cover more ids than the vocab holds words
            words.append(self._tokens[i] if 0 <= i < len(self._tokens) else self.UNK)
        return " ".join(words)

    def to_list(self) -> list[str]:
        return list(self._tokens[3:])

    @classmethod
    def from_list(cls, words) -> "CaptionVocab":
        return cls(list(words))
