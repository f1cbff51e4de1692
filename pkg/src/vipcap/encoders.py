"""Image and text encoders.

Two modes share one contract. The synthetic mode hashes input bytes to a
seed and draws unit-normalized gaussian features, which keeps every
downstream similarity well conditioned and makes all tests deterministic.
The pretrained-adapter mode delegates to a user-supplied backend (bytes in,
array out) so real CLIP-class encoders stay optional plug-ins. Precomputed
features in a VIPC container are accepted in either mode.
"""

import os
from dataclasses import dataclass

import numpy as np

from .constants import MAX_TEXT_TOKENS
from .errors import ConfigError, DataError, InputError
from .seeding import stable_hash64
from .tokenization import whitespace_tokenize
from .vipc_io import decode_vipc, looks_like_vipc, read_vipc

MODES = ("synthetic", "pretrained-adapter")


@dataclass
class EncoderConfig:
    """Dimensions of the encoder pair: K-wide patches, D-wide text."""

    image_dim: int
    text_dim: int
    num_patches: int
    max_text_tokens: int = MAX_TEXT_TOKENS
    mode: str = "synthetic"

    def __post_init__(self):
        for field in ("image_dim", "text_dim", "num_patches", "max_text_tokens"):
            value = getattr(self, field)
            if not isinstance(value, int) or value < 1:
                raise ConfigError(f"{field} must be a positive integer, got {value!r}")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")


def patch_grid_size(image_size: int, patch_size: int) -> int:
    """Number of grid patches a ViT-style encoder produces (no class token)."""
    if image_size < 1 or patch_size < 1:
        raise ConfigError("image_size and patch_size must be positive")
    return (image_size // patch_size) ** 2


def _unit_normal_matrix(seed: int, rows: int, dim: int) -> np.ndarray:
    rng = np.random.Generator(np.random.PCG64(seed))
    mat = rng.standard_normal((rows, dim))
    mat /= np.linalg.norm(mat, axis=1, keepdims=True)
    return mat.astype(np.float32)


def _coerce_bytes(image_ref) -> bytes:
    if isinstance(image_ref, bytes):
        return image_ref
    if isinstance(image_ref, str):
        return image_ref.encode("utf-8")
    raise InputError(f"image reference must be bytes or str, got {type(image_ref)}")


def encode_image(image_ref, cfg: EncoderConfig, backend=None) -> np.ndarray:
    """Encode an image reference into N x K patch features.

    ``image_ref`` may be a path to a VIPC feature file, raw VIPC bytes, or
    (in synthetic mode) any byte string, which is hashed to a seed. In
    pretrained-adapter mode non-VIPC bytes go to ``backend.encode_image``.
    """
    if isinstance(image_ref, (str, os.PathLike)) and os.path.isfile(image_ref):
        return _check_patch_shape(read_vipc(image_ref), cfg)

    data = _coerce_bytes(image_ref)
    if looks_like_vipc(data):
        return _check_patch_shape(decode_vipc(data), cfg)

    if cfg.mode == "synthetic":
        seed = stable_hash64(b"image:" + data)
        return _unit_normal_matrix(seed, cfg.num_patches, cfg.image_dim)

    if backend is None:
        raise ConfigError("pretrained-adapter mode needs an image backend")
    try:
        feats = np.asarray(backend.encode_image(data), dtype=np.float32)
    except (ValueError, TypeError, OSError) as exc:
        raise DataError(f"image backend failed to decode input: {exc}") from exc
    return _check_patch_shape(feats, cfg)


def _check_patch_shape(feats: np.ndarray, cfg: EncoderConfig) -> np.ndarray:
    if feats.ndim != 2 or feats.shape != (cfg.num_patches, cfg.image_dim):
        raise ConfigError(
            f"patch features have shape {feats.shape}, config expects "
            f"({cfg.num_patches}, {cfg.image_dim})"
        )
    if not np.isfinite(feats).all():
        raise DataError("patch features contain non-finite entries")
    return feats


def truncate_prompt(prompt: str, max_tokens: int) -> str:
    """Canonical truncated form of a prompt: first max_tokens words."""
    return " ".join(whitespace_tokenize(prompt)[:max_tokens])


def encode_text(prompt: str, cfg: EncoderConfig, backend=None) -> np.ndarray:
    """Encode a prompt into a D-dim feature vector.

    The prompt is tokenized and truncated to ``cfg.max_text_tokens`` first,
    so encoding is idempotent under truncation.
    """
    if not isinstance(prompt, str) or not prompt.strip():
        raise InputError("prompt must be a non-empty string")
    canonical = truncate_prompt(prompt, cfg.max_text_tokens)

    if cfg.mode == "synthetic":
        seed = stable_hash64(b"text:" + canonical.encode("utf-8"))
        return _unit_normal_matrix(seed, 1, cfg.text_dim)[0]

    if backend is None:
        raise ConfigError("pretrained-adapter mode needs a text backend")
    try:
        vec = np.asarray(backend.encode_text(canonical), dtype=np.float32)
    except (ValueError, TypeError, OSError) as exc:
        raise DataError(f"text backend failed on prompt: {exc}") from exc
    if vec.ndim != 1 or vec.shape[0] != cfg.text_dim:
        raise ConfigError(
            f"text feature has shape {vec.shape}, config expects ({cfg.text_dim},)"
        )
    return vec


def global_image_embedding(patch_features: np.ndarray) -> np.ndarray:
    """Mean patch vector, the synthetic stand-in for a global image embedding."""
    feats = np.asarray(patch_features)
    if feats.ndim != 2:
        raise ConfigError(f"patch features must be 2-D, got shape {feats.shape}")
    return feats.mean(axis=0)
