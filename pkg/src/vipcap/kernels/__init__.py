"""Similarity kernels with a compiled core and a numpy fallback.

At import time the Cython extension ``vipcap.kernels._fast`` is preferred;
if it is missing (source install without a compiler) or the environment
variable ``VIPCAP_NO_EXT`` is set, the numpy implementation is used. Both
backends implement identical selection semantics; ``BACKEND`` reports which
one is active.
"""

import os

import numpy as np

from . import _numpy

_IMPL = _numpy
BACKEND = "numpy"

if not os.environ.get("VIPCAP_NO_EXT"):
    try:
        from . import _fast

        _IMPL = _fast
        BACKEND = "cython"
    except ImportError:
        pass


def _as_matrix(x, name: str) -> np.ndarray:
    arr = np.ascontiguousarray(np.asarray(x, dtype=np.float64))
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {arr.shape}")
    return arr


def argmax_cosine(cand, patches) -> np.ndarray:
    """For each patch row, the lowest index of the max-cosine candidate.

    Zero-norm candidates score -inf and are never selected over a finite
    score; zero-norm patches score everything 0 and resolve to index 0.
    """
    cand = _as_matrix(cand, "cand")
    patches = _as_matrix(patches, "patches")
    if cand.shape[1] != patches.shape[1]:
        raise ValueError(
            f"width mismatch: candidates are {cand.shape[1]}-d, "
            f"patches are {patches.shape[1]}-d"
        )
    if cand.shape[0] == 0:
        raise ValueError("need at least one candidate row")
    return np.asarray(_IMPL.argmax_cosine(cand, patches))


def cosine_scores(rows, query) -> np.ndarray:
    """Cosine similarity of every row against a query vector."""
    rows = _as_matrix(rows, "rows")
    query = np.ascontiguousarray(np.asarray(query, dtype=np.float64))
    if query.ndim != 1 or query.shape[0] != rows.shape[1]:
        raise ValueError(
            f"query must be a {rows.shape[1]}-vector, got shape {query.shape}"
        )
    return np.asarray(_IMPL.cosine_scores(rows, query))
