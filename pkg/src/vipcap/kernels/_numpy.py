"""Pure-numpy similarity kernels (fallback backend).

Inputs are assumed to be C-contiguous float64; the dispatching wrapper in
``vipcap.kernels`` takes care of coercion.
"""

import numpy as np

from ..constants import ZERO_NORM_CANDIDATE_SIM, ZERO_NORM_PATCH_SIM


def argmax_cosine(cand: np.ndarray, patches: np.ndarray) -> np.ndarray:
    """Index of the max-cosine candidate for every patch row.

    Ties resolve to the lowest candidate index. Zero-norm candidates score
    -inf; a zero-norm patch scores every candidate 0 and so picks index 0.
    """
    cnorm = np.linalg.norm(cand, axis=1)
    pnorm = np.linalg.norm(patches, axis=1)
    czero = cnorm == 0.0
    pzero = pnorm == 0.0
    cunit = cand / np.where(czero, 1.0, cnorm)[:, None]
    punit = patches / np.where(pzero, 1.0, pnorm)[:, None]
    sims = cunit @ punit.T
    sims[czero, :] = ZERO_NORM_CANDIDATE_SIM
    sims[:, pzero] = ZERO_NORM_PATCH_SIM
    # np.argmax keeps the first maximum, which is the lowest-index tie rule.
    return np.argmax(sims, axis=0).astype(np.int64)


def cosine_scores(rows: np.ndarray, query: np.ndarray) -> np.ndarray:
    """Cosine similarity of every row against the query vector.

    Zero-norm rows and a zero-norm query both score 0.
    """
    qnorm = np.linalg.norm(query)
    if qnorm == 0.0:
        return np.zeros(rows.shape[0], dtype=np.float64)
    rnorm = np.linalg.norm(rows, axis=1)
    rzero = rnorm == 0.0
    scores = (rows @ (query / qnorm)) / np.where(rzero, 1.0, rnorm)
    scores[rzero] = 0.0
    return scores
