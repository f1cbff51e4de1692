"""Brute-force reference implementations used as ground truth in tests.

Everything here is deliberately naive: explicit scans in double precision,
no shared code with the fast paths. Tie rules and degenerate-case
conventions come from :mod:`vipcap.constants` so both routes agree by
construction.
"""

import math

import numpy as np

from .constants import ZERO_NORM_CANDIDATE_SIM, ZERO_NORM_PATCH_SIM
from .errors import InputError, NumericError


def _cosine(u: np.ndarray, v: np.ndarray) -> float:
    nu = math.sqrt(float(np.dot(u, u)))
    nv = math.sqrt(float(np.dot(v, v)))
    if nu == 0.0 or nv == 0.0:
        return 0.0
    return float(np.dot(u, v)) / (nu * nv)


def brute_force_knn(entries, query, k: int) -> list[str]:
    """Top-k entry ids by cosine similarity via a full scan.

    ``entries`` is a sequence of (id, vector) pairs. Ordering is by
    descending similarity, ties by ascending id; zero-norm vectors (or a
    zero-norm query) score 0.
    """
    query = np.asarray(query, dtype=np.float64)
    scored = []
    for entry_id, vec in entries:
        vec = np.asarray(vec, dtype=np.float64)
        scored.append((entry_id, _cosine(vec, query)))
    scored.sort(key=lambda pair: (-pair[1], pair[0]))
    return [entry_id for entry_id, _ in scored[:k]]


def brute_force_patch_retrieve(cand, patches) -> np.ndarray:
    """Exhaustive argmax-cosine selection, one candidate index per patch.

    Double loop over (patch, candidate); strictly-greater comparison keeps
    the lowest index on ties. Zero-norm candidates score -inf, zero-norm
    patches score every candidate 0.
    """
    cand = np.asarray(cand, dtype=np.float64)
    patches = np.asarray(patches, dtype=np.float64)
    cand_norms = [math.sqrt(float(np.dot(g, g))) for g in cand]
    out = np.zeros(patches.shape[0], dtype=np.int64)
    for j, v in enumerate(patches):
        vnorm = math.sqrt(float(np.dot(v, v)))
        best = -math.inf
        best_i = 0
        for i, g in enumerate(cand):
            if vnorm == 0.0:
                sim = ZERO_NORM_PATCH_SIM
            elif cand_norms[i] == 0.0:
                sim = ZERO_NORM_CANDIDATE_SIM
            else:
                sim = float(np.dot(g, v)) / (cand_norms[i] * vnorm)
            if sim > best:
                best = sim
                best_i = i
        out[j] = best_i
    return out


def finite_diff_grad(f, params, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient estimate of a scalar function.

    ``f`` maps a flat float64 array to a scalar; every coordinate is
    perturbed by +/-h. Non-finite function values raise NumericError.
    """
    params = np.asarray(params, dtype=np.float64)
    grad = np.zeros_like(params)
    for idx in range(params.size):
        bumped = params.copy()
        bumped.flat[idx] = params.flat[idx] + h
        f_plus = float(f(bumped))
        bumped.flat[idx] = params.flat[idx] - h
        f_minus = float(f(bumped))
        if not (math.isfinite(f_plus) and math.isfinite(f_minus)):
            raise NumericError(
                f"non-finite function value at coordinate {idx}: "
                f"f(+h)={f_plus}, f(-h)={f_minus}"
            )
        grad.flat[idx] = (f_plus - f_minus) / (2.0 * h)
    return grad


def empirical_moments(samples) -> tuple[np.ndarray, np.ndarray]:
    """Per-coordinate sample mean and unbiased standard deviation."""
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 2:
        raise InputError(f"samples must be 2-D, got shape {samples.shape}")
    if samples.shape[0] < 2:
        raise InputError("need at least two samples for an unbiased std")
    return samples.mean(axis=0), samples.std(axis=0, ddof=1)
