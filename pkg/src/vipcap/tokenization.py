"""Tokenizers.

Two distinct conventions live here on purpose: the prompt tokenizer splits
on whitespace and preserves case (it stands in for a CLIP-style context
budget), while the metric tokenizer lowercases and strips punctuation so
caption scores are reproducible.
"""

import string

_PUNCT_TABLE = str.maketrans({ch: " " for ch in string.punctuation})


def whitespace_tokenize(text: str) -> list[str]:
    """Split on runs of whitespace; used for prompt budgets and vocab."""
    return text.split()


def metric_tokenize(text: str) -> list[str]:
    """Lowercase, replace punctuation with spaces, split on whitespace."""
    return text.lower().translate(_PUNCT_TABLE).split()
