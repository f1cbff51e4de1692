"""Training loop, ablation grids, and parameter accounting.

Only the ViP module and the cross-attention adapters train; encoder and
decoder stay frozen. All randomness is derived from the config seed, so a
run is a pure function of (config, data, seed).
"""

import dataclasses
import hashlib
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .checkpoint import Checkpoint
from .constants import DEFAULT_ALPHA, DEFAULT_M, DEFAULT_TOPK
from .datastore import EmbeddingIndex, PromptTemplate, RetrievalConfig, format_prompt, retrieve_topk
from .decoder import (
    AdapterConfig,
    BridgedDecoder,
    CaptionBatch,
    CaptionVocab,
    CrossAttentionAdapter,
    ToyDecoder,
    ToyDecoderConfig,
    caption_loss,
)
from .encoders import EncoderConfig, encode_image, encode_text, global_image_embedding
from .errors import ConfigError, DataError, InputError, NumericError
from .seeding import derive_seed
from .vip import FFNConfig, FFN_VARIANTS, GaussianHead, NOISE_VARIANTS, VipModule, make_fusion
from .vipc_io import read_jsonl, read_vipc

log = logging.getLogger("vipcap.training")

ABLATION_AXES = ("components", "ffn", "M", "noise")

# Table rows: (patch retrieval, learnable vector, scale factor)
COMPONENT_GRID = (
    (False, True, False),
    (False, True, True),
    (True, False, False),
    (True, True, False),
    (True, True, True),
)
M_GRID = (100, 150, 200, 250, 300, 400, 500)


@dataclass
class TrainConfig:
    batch_size: int = 128
    M: int = DEFAULT_M
    alpha: float = DEFAULT_ALPHA
    k: int = DEFAULT_TOPK
    noise_variant: str = "learnable_scaled"
    use_patch_retrieval: bool = True
    use_omega: bool = True
    use_alpha: bool = True
    ffn_variant: str = "attention"
    learning_rate: float = 1e-4
    epochs: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1 or self.M < 1 or self.epochs < 1:
            raise ConfigError("batch_size, M, and epochs must be positive")
        if self.k < 0:
            raise ConfigError(f"k must be nonnegative, got {self.k}")
        if self.alpha < 0:
            raise ConfigError(f"alpha must be nonnegative, got {self.alpha}")
        if self.learning_rate < 0:
            raise ConfigError("learning_rate must be nonnegative")
        if self.noise_variant not in NOISE_VARIANTS:
            raise ConfigError(f"unknown noise variant {self.noise_variant!r}")
        if self.ffn_variant not in FFN_VARIANTS:
            raise ConfigError(f"unknown ffn variant {self.ffn_variant!r}")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, raw: dict) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise DataError(f"unknown config fields: {sorted(unknown)}")
        try:
            return cls(**raw)
        except TypeError as exc:
            raise DataError(f"bad config: {exc}") from exc


@dataclass
class CaptionExample:
    id: str
    features: np.ndarray
    caption: str


@dataclass
class ModelGeometry:
    """Everything frozen: encoder dims, decoder stack, adapter/fusion shapes."""

    encoder: EncoderConfig
    decoder: ToyDecoderConfig = field(default_factory=ToyDecoderConfig)
    adapter: AdapterConfig = field(default_factory=AdapterConfig)
    ffn: FFNConfig = field(default_factory=FFNConfig)

    def to_dict(self) -> dict:
        return {
            "encoder": dataclasses.asdict(self.encoder),
            "decoder": dataclasses.asdict(self.decoder),
            "adapter": dataclasses.asdict(self.adapter),
            "ffn": dataclasses.asdict(self.ffn),
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "ModelGeometry":
        return cls(
            encoder=EncoderConfig(**raw["encoder"]),
            decoder=ToyDecoderConfig(**raw["decoder"]),
            adapter=AdapterConfig(**raw["adapter"]),
            ffn=FFNConfig(**raw["ffn"]),
        )


class VipCaptioner(torch.nn.Module):
    """ViP module plus bridged decoder; the trainable surface of the system."""

    def __init__(self, vip: VipModule, bridge: BridgedDecoder):
        super().__init__()
        self.vip = vip
        self.bridge = bridge

    def example_logits(self, text_feature, patches, token_ids, rng=None, noise=None):
        refined = self.vip(text_feature, patches, rng=rng, noise=noise)
        return self.bridge(token_ids, refined)


def build_captioner(cfg: TrainConfig, geometry: ModelGeometry) -> VipCaptioner:
    """Construct the model deterministically from (config, geometry, seed)."""
    torch.manual_seed(derive_seed(cfg.seed, "model-init"))
    enc = geometry.encoder
    head = GaussianHead(
        text_dim=enc.text_dim,
        image_dim=enc.image_dim,
        alpha=cfg.alpha,
        noise_variant=cfg.noise_variant,
        use_omega=cfg.use_omega,
        use_alpha=cfg.use_alpha,
    )
    fusion = make_fusion(cfg.ffn_variant, enc.image_dim, geometry.ffn)
    vip = VipModule(head, fusion, m=cfg.M, use_patch_retrieval=cfg.use_patch_retrieval)
    decoder = ToyDecoder(geometry.decoder)
    adapter = CrossAttentionAdapter(
        geometry.decoder.num_layers, geometry.decoder.width, enc.image_dim, geometry.adapter
    )
    return VipCaptioner(vip, BridgedDecoder(decoder, adapter))


def count_trainable(model: torch.nn.Module) -> int:
    """Exact number of parameters that receive gradients."""
    return sum(p.numel() for p in model.parameters() if p.requires_grad)


def pretrain_decoder(decoder, vocab: CaptionVocab, texts, epochs: int = 100, lr: float = 3e-3) -> list:
    """Train the toy decoder from scratch as a text-only language model.

    This is the synthetic stand-in for a pretrained decoder: it learns the
    caption corpus before the captioning run freezes it. Returns the
    per-epoch loss history.
    """
    sequences = [
        torch.tensor([vocab.bos_id] + vocab.encode(t) + [vocab.eos_id], dtype=torch.int64)
        for t in texts
    ]
    params = list(decoder.parameters())
    for p in params:
        p.requires_grad_(True)
    optimizer = torch.optim.Adam(params, lr=lr)
    history = []
    for _ in range(epochs):
        losses = []
        for ids in sequences:
            log_probs = torch.log_softmax(decoder(ids)[:-1], dim=-1)
            losses.append(-log_probs.gather(1, ids[1:].unsqueeze(1)).mean())
        loss = torch.stack(losses).mean()
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
        history.append(loss.detach().item())
    for p in params:
        p.requires_grad_(False)
        p.grad = None
    return history


def named_param_arrays(captioner: VipCaptioner) -> dict:
    """All parameters as float32 arrays under the checkpoint naming contract.

    vip.h_mu.* / vip.h_sigma.* / vip.omega_add / vip.ffn.* for the ViP
    module, xattn.layer{i}.* for the adapters, decoder.* for the frozen
    decoder.
    """
    out = {}
    for name, param in captioner.vip.named_parameters():
        if name.startswith("head."):
            name = name[len("head.") :]
        elif name.startswith("fusion."):
            name = "ffn." + name[len("fusion.") :]
        out["vip." + name] = param.detach().numpy().astype(np.float32)
    for name, param in captioner.bridge.adapter.named_parameters():
        out["xattn." + name] = param.detach().numpy().astype(np.float32)
    for name, param in captioner.bridge.decoder.named_parameters():
        out["decoder." + name] = param.detach().numpy().astype(np.float32)
    return out


def load_param_arrays(captioner: VipCaptioner, params: dict) -> None:
    """Inverse of named_param_arrays; shapes must match exactly."""
    targets = {}
    for name, param in captioner.vip.named_parameters():
        if name.startswith("head."):
            canonical = "vip." + name[len("head.") :]
        elif name.startswith("fusion."):
            canonical = "vip.ffn." + name[len("fusion.") :]
        else:
            canonical = "vip." + name
        targets[canonical] = param
    for name, param in captioner.bridge.adapter.named_parameters():
        targets["xattn." + name] = param
    for name, param in captioner.bridge.decoder.named_parameters():
        targets["decoder." + name] = param
    missing = set(targets) - set(params)
    surplus = set(params) - set(targets)
    if missing or surplus:
        raise DataError(
            f"checkpoint/model mismatch: missing {sorted(missing)}, surplus {sorted(surplus)}"
        )
    with torch.no_grad():
        for name, param in targets.items():
            arr = np.asarray(params[name], dtype=np.float32)
            if tuple(arr.shape) != tuple(param.shape):
                raise DataError(
                    f"{name}: checkpoint shape {arr.shape} vs model {tuple(param.shape)}"
                )
            param.copy_(torch.from_numpy(arr.copy()))


def fingerprint_params(captioner: VipCaptioner) -> dict:
    """sha256 of each parameter's raw bytes, keyed by canonical name."""
    return {
        name: hashlib.sha256(arr.tobytes()).hexdigest()
        for name, arr in named_param_arrays(captioner).items()
    }


@dataclass
class PreparedExample:
    id: str
    patches: torch.Tensor
    text_feature: np.ndarray
    prompt: str
    batch: CaptionBatch


def prepare_examples(
    dataset,
    index: EmbeddingIndex,
    enc_cfg: EncoderConfig,
    vocab: CaptionVocab,
    k: int = DEFAULT_TOPK,
    max_positions: int = 128,
    template: PromptTemplate | None = None,
) -> list:
    """Retrieve, render, encode, and tokenize every example once.

    Retrieval is deterministic, so prompts are fixed across epochs.
    """
    template = template or PromptTemplate()
    rc = RetrievalConfig(k=min(k, len(index)))
    prepared = []
    for ex in dataset:
        query = global_image_embedding(ex.features)
        hits = retrieve_topk(index, query, rc)
        prompt = format_prompt([e.text for e, _ in hits], template, enc_cfg.max_text_tokens)
        text_feature = encode_text(prompt, enc_cfg)
        prompt_ids = [vocab.bos_id] + vocab.encode(prompt)
        reference_ids = vocab.encode(ex.caption) + [vocab.eos_id]
        token_ids = torch.tensor(prompt_ids + reference_ids, dtype=torch.int64)
        if token_ids.shape[0] > max_positions:
            raise InputError(
                f"example {ex.id!r}: {token_ids.shape[0]} tokens exceed context {max_positions}"
            )
        prepared.append(
            PreparedExample(
                id=ex.id,
                patches=torch.from_numpy(np.ascontiguousarray(ex.features, dtype=np.float32)),
                text_feature=text_feature,
                prompt=prompt,
                batch=CaptionBatch(token_ids=token_ids, prefix_len=len(prompt_ids)),
            )
        )
    return prepared


@dataclass
class TrainResult:
    captioner: VipCaptioner
    vocab: CaptionVocab
    geometry: ModelGeometry
    checkpoint: Checkpoint
    loss_history: list
    prepared: list


def make_checkpoint(
    captioner: VipCaptioner,
    cfg: TrainConfig,
    geometry: ModelGeometry,
    vocab: CaptionVocab,
    step: int,
) -> Checkpoint:
    return Checkpoint(
        params=named_param_arrays(captioner),
        config=cfg.to_dict(),
        step=step,
        rng_state={"seed": cfg.seed, "next_step": step},
        extra={"geometry": geometry.to_dict(), "vocab": vocab.to_list()},
    )


def restore_captioner(ckpt: Checkpoint) -> tuple:
    """Rebuild (captioner, config, geometry, vocab) from a checkpoint."""
    cfg = TrainConfig.from_dict(ckpt.config)
    geometry = ModelGeometry.from_dict(ckpt.extra["geometry"])
    vocab = CaptionVocab.from_list(ckpt.extra["vocab"])
    captioner = build_captioner(cfg, geometry)
    load_param_arrays(captioner, ckpt.params)
    return captioner, cfg, geometry, vocab


def train(
    cfg: TrainConfig,
    dataset,
    index: EmbeddingIndex,
    geometry: ModelGeometry,
    vocab: CaptionVocab | None = None,
    captioner: VipCaptioner | None = None,
    pretrain_epochs: int = 0,
    pretrain_lr: float = 3e-3,
) -> TrainResult:
    """Run the training loop; only vip.* and xattn.* parameters change.

    A pre-built captioner (e.g. with an already-pretrained decoder) may be
    injected; otherwise one is constructed from the config seed, with
    ``pretrain_epochs`` of text-only decoder pretraining before the freeze.
    """
    dataset = list(dataset)
    if not dataset:
        raise InputError("dataset is empty")
    if vocab is None:
        vocab = CaptionVocab.build(
            [ex.caption for ex in dataset], geometry.decoder.vocab_size
        )
    if captioner is None:
        captioner = build_captioner(cfg, geometry)
        if pretrain_epochs > 0:
            history = pretrain_decoder(
                captioner.bridge.decoder,
                vocab,
                [ex.caption for ex in dataset],
                epochs=pretrain_epochs,
                lr=pretrain_lr,
            )
            log.info("decoder pretraining: final LM loss %.4f", history[-1])
    prepared = prepare_examples(
        dataset,
        index,
        geometry.encoder,
        vocab,
        k=cfg.k,
        max_positions=geometry.decoder.max_positions,
    )
    trainable = [p for p in captioner.parameters() if p.requires_grad]
    optimizer = torch.optim.Adam(trainable, lr=cfg.learning_rate)

    loss_history = []
    step = 0
    for epoch in range(cfg.epochs):
        order_rng = np.random.Generator(
            np.random.PCG64(derive_seed(cfg.seed, f"shuffle:{epoch}"))
        )
        order = order_rng.permutation(len(prepared))
        for start in range(0, len(prepared), cfg.batch_size):
            chunk = [prepared[i] for i in order[start : start + cfg.batch_size]]
            rng = torch.Generator().manual_seed(derive_seed(cfg.seed, f"step:{step}"))
            losses = []
            for ex in chunk:
                logits = captioner.example_logits(
                    ex.text_feature, ex.patches, ex.batch.token_ids, rng=rng
                )
                losses.append(caption_loss(logits, ex.batch))
            loss = torch.stack(losses).mean()
            if not torch.isfinite(loss):
                raise NumericError(
                    f"non-finite loss at step {step} (epoch {epoch}); aborting"
                )
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            loss_history.append(loss.detach().item())
            step += 1
        log.debug("epoch %d done, last loss %.4f", epoch, loss_history[-1])

    ckpt = make_checkpoint(captioner, cfg, geometry, vocab, step)
    return TrainResult(
        captioner=captioner,
        vocab=vocab,
        geometry=geometry,
        checkpoint=ckpt,
        loss_history=loss_history,
        prepared=prepared,
    )


def ablate(base_cfg: TrainConfig, axis: str) -> list:
    """Expand one ablation axis into its full configuration grid."""
    if axis == "components":
        return [
            dataclasses.replace(
                base_cfg, use_patch_retrieval=pr, use_omega=omega, use_alpha=alpha
            )
            for pr, omega, alpha in COMPONENT_GRID
        ]
    if axis == "ffn":
        return [dataclasses.replace(base_cfg, ffn_variant=v) for v in FFN_VARIANTS]
    if axis == "M":
        return [dataclasses.replace(base_cfg, M=m) for m in M_GRID]
    if axis == "noise":
        return [dataclasses.replace(base_cfg, noise_variant=v) for v in NOISE_VARIANTS]
    raise InputError(f"unknown ablation axis {axis!r}; choose from {ABLATION_AXES}")


def load_dataset_dir(data_dir, enc_cfg: EncoderConfig) -> list:
    """Load (features, caption) pairs from a data directory.

    Expects ``pairs.jsonl`` with {"id", "caption"} records. Patch features
    come from ``features/<id>.bin`` (VIPC) when present, otherwise from the
    synthetic encoder applied to the id bytes.
    """
    data_dir = Path(data_dir)
    records = read_jsonl(data_dir / "pairs.jsonl")
    features_dir = data_dir / "features"
    examples = []
    for rec in records:
        if "id" not in rec or "caption" not in rec:
            raise DataError(f"pair record missing id/caption: {rec!r}")
        ex_id = str(rec["id"])
        feat_path = features_dir / f"{ex_id}.bin"
        if feat_path.is_file():
            feats = read_vipc(feat_path)
            if feats.shape != (enc_cfg.num_patches, enc_cfg.image_dim):
                raise ConfigError(
                    f"{feat_path}: shape {feats.shape} does not match encoder config"
                )
        else:
            feats = encode_image(ex_id.encode("utf-8"), enc_cfg)
        examples.append(CaptionExample(id=ex_id, features=feats, caption=str(rec["caption"])))
    return examples
