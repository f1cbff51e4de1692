"""The ViP module: Gaussian head, reparameterized sampling, patch retrieval,
feature fusion, and the final refinement sum.

Pipeline per example: a text feature is mapped to (mu, sigma), M semantic
vectors are sampled as mu + sigma * eps, each image patch selects its
best-matching sample by cosine similarity, the selected rows are fused with
the patches by a single pre-norm attention block, and the resulting visual
prompt is added back onto the patches.
"""

from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from . import kernels
from .constants import DEFAULT_ALPHA, DEFAULT_M, SIGMA_FLOOR
from .errors import ConfigError, InputError, NumericError

NOISE_VARIANTS = ("none", "gauss", "unif_sym", "unif_gauss", "learnable_scaled")
FFN_VARIANTS = ("sum", "concat", "mlp_sum", "mlp_concat", "attention")


@dataclass
class GaussianParams:
    """Mean and strictly positive std of the per-example sampling Gaussian."""

    mu: torch.Tensor
    sigma: torch.Tensor


@dataclass
class SemanticSamples:
    """M x K reparameterized draws plus the noise that produced them."""

    data: torch.Tensor
    noise: torch.Tensor


@dataclass
class RetrievedSemantics:
    """N x K gathered samples; indices[j] is the sample row chosen by patch j."""

    data: torch.Tensor
    indices: torch.Tensor


def _mlp(in_dim: int, out_dim: int) -> nn.Sequential:
    # minimal nontrivial head: two linear layers with a GELU between
    return nn.Sequential(nn.Linear(in_dim, out_dim), nn.GELU(), nn.Linear(out_dim, out_dim))


class GaussianHead(nn.Module):
    """Maps a D-dim text feature to the K-dim sampling distribution.

    mu = h_mu(text) + additive term, sigma = softplus(h_sigma(text)) + floor.
    The additive term is pluggable: the learnable alpha * omega_add used by
    default, or a fixed-distribution draw for the noise ablation.
    """

    def __init__(
        self,
        text_dim: int,
        image_dim: int,
        alpha: float = DEFAULT_ALPHA,
        noise_variant: str = "learnable_scaled",
        use_omega: bool = True,
        use_alpha: bool = True,
        h_mu: nn.Module | None = None,
        h_sigma: nn.Module | None = None,
    ):
        super().__init__()
        if alpha < 0:
            raise ConfigError(f"alpha must be nonnegative, got {alpha}")
        if noise_variant not in NOISE_VARIANTS:
            raise ConfigError(f"unknown noise variant {noise_variant!r}")
        self.text_dim = text_dim
        self.image_dim = image_dim
        self.alpha = float(alpha)
        self.noise_variant = noise_variant
        self.use_omega = use_omega
        self.use_alpha = use_alpha
        self.h_mu = h_mu if h_mu is not None else _mlp(text_dim, image_dim)
        if h_sigma is not None:
            self.h_sigma = h_sigma
        else:
            self.h_sigma = _mlp(text_dim, image_dim)
            # start with small noise (softplus(-3) ~ 0.05); sigma stays learnable
            nn.init.constant_(self.h_sigma[-1].bias, -3.0)
        self.omega_add = nn.Parameter(torch.randn(image_dim) * 0.02)

    def additive_term(self, like: torch.Tensor, rng=None) -> torch.Tensor:
        variant = self.noise_variant
        if variant == "learnable_scaled":
            if not self.use_omega:
                return torch.zeros_like(like)
            scale = self.alpha if self.use_alpha else 1.0
            return scale * self.omega_add.to(like.dtype)
        if variant == "none":
            return torch.zeros_like(like)
        if rng is None:
            raise InputError(f"noise variant {variant!r} needs a seeded generator")
        shape, dtype = like.shape, like.dtype
        if variant == "gauss":
            return torch.randn(shape, generator=rng, dtype=dtype)
        if variant == "unif_sym":
            return torch.rand(shape, generator=rng, dtype=dtype) * 2.0 - 1.0
        # unif_gauss: the product construction Unif(0,1) * N(0,1)
        uniform = torch.rand(shape, generator=rng, dtype=dtype)
        return uniform * torch.randn(shape, generator=rng, dtype=dtype)


def sigma_from_pre(pre: torch.Tensor) -> torch.Tensor:
    """Positivity map for the sigma head output: softplus plus a small floor."""
    return F.softplus(pre) + SIGMA_FLOOR


def estimate_gaussian(head: GaussianHead, text, rng=None) -> GaussianParams:
    """Run the Gaussian head on one text feature."""
    dtype = head.omega_add.dtype
    text_t = torch.as_tensor(text, dtype=dtype)
    if text_t.shape != (head.text_dim,):
        raise ConfigError(
            f"text feature has shape {tuple(text_t.shape)}, head expects ({head.text_dim},)"
        )
    base_mu = head.h_mu(text_t)
    mu = base_mu + head.additive_term(base_mu, rng=rng)
    sigma = sigma_from_pre(head.h_sigma(text_t))
    if not (torch.isfinite(mu).all() and torch.isfinite(sigma).all()):
        raise NumericError("Gaussian head produced non-finite mu/sigma")
    return GaussianParams(mu=mu, sigma=sigma)


def sample_semantics(params: GaussianParams, m: int, rng=None, noise=None) -> SemanticSamples:
    """Draw M reparameterized samples: data = mu + sigma * noise, exactly.

    ``noise`` overrides the generator draw when a fixed epsilon is needed
    (gradient checks, the eps = 0 identity).
    """
    if not isinstance(m, int) or m < 1:
        raise InputError(f"sample count must be a positive integer, got {m!r}")
    k = params.mu.shape[0]
    if noise is None:
        noise = torch.randn(m, k, generator=rng, dtype=params.mu.dtype)
    else:
        noise = torch.as_tensor(noise, dtype=params.mu.dtype)
        if noise.shape != (m, k):
            raise InputError(f"noise must have shape ({m}, {k}), got {tuple(noise.shape)}")
    data = params.mu.unsqueeze(0) + params.sigma.unsqueeze(0) * noise
    return SemanticSamples(data=data, noise=noise)


def patch_retrieve(samples, patches) -> RetrievedSemantics:
    """Per-patch argmax-cosine selection from the sample pool.

    The selection itself is piecewise constant (no gradient); gradients flow
    into the gathered rows of the sample matrix.
    """
    g = samples.data if isinstance(samples, SemanticSamples) else torch.as_tensor(samples)
    v = torch.as_tensor(patches)
    if g.ndim != 2 or v.ndim != 2 or g.shape[1] != v.shape[1]:
        raise ConfigError(
            f"width mismatch: samples {tuple(g.shape)} vs patches {tuple(v.shape)}"
        )
    idx = kernels.argmax_cosine(g.detach().cpu().numpy(), v.detach().cpu().numpy())
    indices = torch.from_numpy(idx)
    return RetrievedSemantics(data=g[indices], indices=indices)


def cycle_select(samples, num_patches: int) -> RetrievedSemantics:
    """Retrieval-free fallback: patch j takes sample row j mod M."""
    g = samples.data if isinstance(samples, SemanticSamples) else torch.as_tensor(samples)
    indices = torch.arange(num_patches, dtype=torch.int64) % g.shape[0]
    return RetrievedSemantics(data=g[indices], indices=indices)


@dataclass
class FFNConfig:
    """Geometry of the fusion block: one layer, multi-head attention."""

    num_layers: int = 1
    num_heads: int = 12
    head_dim: int = 16
    hidden_mult: float = 4.0

    def __post_init__(self):
        if self.num_layers != 1:
            raise ConfigError("the fusion network is a single-layer block")
        if self.num_heads < 1 or self.head_dim < 1:
            raise ConfigError("num_heads and head_dim must be positive")
        if self.hidden_mult <= 0:
            raise ConfigError("hidden_mult must be positive")

    @property
    def inner_dim(self) -> int:
        return self.num_heads * self.head_dim


class MultiheadAttention(nn.Module):
    """Multi-head scaled dot-product attention over unbatched sequences."""

    def __init__(self, q_dim, kv_dim, out_dim, num_heads, head_dim, causal=False):
        super().__init__()
        inner = num_heads * head_dim
        self.num_heads = num_heads
        self.head_dim = head_dim
        self.causal = causal
        self.q = nn.Linear(q_dim, inner)
        self.k = nn.Linear(kv_dim, inner)
        self.v = nn.Linear(kv_dim, inner)
        self.o = nn.Linear(inner, out_dim)

    def forward(self, query_in: torch.Tensor, kv_in: torch.Tensor) -> torch.Tensor:
        tq, tk = query_in.shape[0], kv_in.shape[0]
        q = self.q(query_in).view(tq, self.num_heads, self.head_dim).transpose(0, 1)
        k = self.k(kv_in).view(tk, self.num_heads, self.head_dim).transpose(0, 1)
        v = self.v(kv_in).view(tk, self.num_heads, self.head_dim).transpose(0, 1)
        scores = q @ k.transpose(-1, -2) / self.head_dim**0.5
        if self.causal:
            mask = torch.triu(torch.ones(tq, tk, dtype=torch.bool), diagonal=1)
            scores = scores.masked_fill(mask, float("-inf"))
        attn = torch.softmax(scores, dim=-1)
        out = (attn @ v).transpose(0, 1).reshape(tq, -1)
        return self.o(out)


class AttentionFusion(nn.Module):
    """Single pre-norm block: self-attention on V, cross-attention into R, MLP.

    Queries for the cross-attention come from the residual stream after the
    self-attention sub-block; keys and values are the retrieved rows, with
    no positional encodings, so the block is invariant to their order.
    """

    def __init__(self, dim: int, cfg: FFNConfig | None = None):
        super().__init__()
        cfg = cfg or FFNConfig()
        self.ln_self = nn.LayerNorm(dim)
        self.self_attn = MultiheadAttention(dim, dim, dim, cfg.num_heads, cfg.head_dim)
        self.ln_cross = nn.LayerNorm(dim)
        self.cross_attn = MultiheadAttention(dim, dim, dim, cfg.num_heads, cfg.head_dim)
        self.ln_mlp = nn.LayerNorm(dim)
        hidden = int(dim * cfg.hidden_mult)
        self.mlp = nn.Sequential(nn.Linear(dim, hidden), nn.GELU(), nn.Linear(hidden, dim))

    def forward(self, patches: torch.Tensor, retrieved: torch.Tensor) -> torch.Tensor:
        x = patches
        normed = self.ln_self(x)
        x = x + self.self_attn(normed, normed)
        x = x + self.cross_attn(self.ln_cross(x), retrieved)
        x = x + self.mlp(self.ln_mlp(x))
        return x


class SumFusion(nn.Module):
    def __init__(self, dim: int):
        super().__init__()

    def forward(self, patches, retrieved):
        return patches + retrieved


class ConcatFusion(nn.Module):
    def __init__(self, dim: int):
        super().__init__()
        self.proj = nn.Linear(2 * dim, dim)

    def forward(self, patches, retrieved):
        return self.proj(torch.cat([patches, retrieved], dim=-1))


class MlpSumFusion(nn.Module):
    def __init__(self, dim: int):
        super().__init__()
        self.pre = _mlp(dim, dim)

    def forward(self, patches, retrieved):
        return patches + self.pre(retrieved)


class MlpConcatFusion(nn.Module):
    def __init__(self, dim: int):
        super().__init__()
        self.pre = _mlp(dim, dim)
        self.proj = nn.Linear(2 * dim, dim)

    def forward(self, patches, retrieved):
        return self.proj(torch.cat([patches, self.pre(retrieved)], dim=-1))


def make_fusion(variant: str, dim: int, cfg: FFNConfig | None = None) -> nn.Module:
    if variant == "attention":
        return AttentionFusion(dim, cfg)
    if variant == "sum":
        return SumFusion(dim)
    if variant == "concat":
        return ConcatFusion(dim)
    if variant == "mlp_sum":
        return MlpSumFusion(dim)
    if variant == "mlp_concat":
        return MlpConcatFusion(dim)
    raise ConfigError(f"unknown fusion variant {variant!r}")


def fuse(patches, retrieved, block: nn.Module) -> torch.Tensor:
    """Apply a fusion block; both inputs must be N x K."""
    v = torch.as_tensor(patches)
    r = retrieved.data if isinstance(retrieved, RetrievedSemantics) else torch.as_tensor(retrieved)
    if v.shape != r.shape:
        raise ConfigError(f"shape mismatch: patches {tuple(v.shape)} vs retrieved {tuple(r.shape)}")
    r = r.to(v.dtype)
    prompt = block(v, r)
    if prompt.shape != v.shape:
        raise ConfigError(f"fusion produced shape {tuple(prompt.shape)}, expected {tuple(v.shape)}")
    return prompt


def refine(patches, prompt) -> torch.Tensor:
    """Refined features: elementwise sum of patches and visual prompt."""
    v = torch.as_tensor(patches)
    z = torch.as_tensor(prompt)
    if v.shape != z.shape:
        raise ConfigError(f"shape mismatch: {tuple(v.shape)} vs {tuple(z.shape)}")
    return v + z.to(v.dtype)


def vip_forward(
    head: GaussianHead,
    fusion: nn.Module,
    text,
    patches,
    m: int = DEFAULT_M,
    rng=None,
    noise=None,
    use_patch_retrieval: bool = True,
) -> torch.Tensor:
    """Full composition: estimate, sample, retrieve, fuse, refine."""
    dtype = head.omega_add.dtype
    v = torch.as_tensor(patches, dtype=dtype)
    params = estimate_gaussian(head, text, rng=rng)
    samples = sample_semantics(params, m, rng=rng, noise=noise)
    if use_patch_retrieval:
        retrieved = patch_retrieve(samples, v)
    else:
        retrieved = cycle_select(samples, v.shape[0])
    prompt = fuse(v, retrieved, fusion)
    return refine(v, prompt)


class VipModule(nn.Module):
    """Bundles the Gaussian head and fusion block with sampling settings."""

    def __init__(
        self,
        head: GaussianHead,
        fusion: nn.Module,
        m: int = DEFAULT_M,
        use_patch_retrieval: bool = True,
    ):
        super().__init__()
        if m < 1:
            raise ConfigError(f"sample count must be positive, got {m}")
        self.head = head
        self.fusion = fusion
        self.m = m
        self.use_patch_retrieval = use_patch_retrieval

    def forward(self, text, patches, rng=None, noise=None) -> torch.Tensor:
        return vip_forward(
            self.head,
            self.fusion,
            text,
            patches,
            m=self.m,
            rng=rng,
            noise=noise,
            use_patch_retrieval=self.use_patch_retrieval,
        )
